//! Dense single-image feature maps and the N-d weight arrays that feed them.
//!
//! Feature maps are always `channels × height × width` in row-major order, so
//! element `(c, y, x)` lives at flat index `c·H·W + y·W + x`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        let shape = Shape {
            channels,
            height,
            width,
        };
        shape.check()?;
        Ok(shape)
    }

    /// Checks the dimension and element-count invariants.
    pub fn check(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::InvalidShape(format!("zero dimension in {self}")));
        }
        self.channels
            .checked_mul(self.height)
            .and_then(|n| n.checked_mul(self.width))
            .and_then(|n| n.checked_mul(std::mem::size_of::<f32>()))
            .filter(|&bytes| bytes <= isize::MAX as usize)
            .map(|_| ())
            .ok_or_else(|| Error::InvalidShape(format!("element count of {self} overflows")))
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn bytes(&self) -> usize {
        self.numel() * std::mem::size_of::<f32>()
    }

    pub fn with_channels(self, channels: usize) -> Self {
        Shape { channels, ..self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}×{}×{}", self.channels, self.height, self.width)
    }
}

/// Element type of stored weights. Arithmetic is always `F32`; `F16` only
/// describes how a weight file lays out its payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F16,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn create(shape: Shape, fill: f32) -> Result<Self> {
        shape.check()?;
        Ok(Tensor {
            shape,
            data: vec![fill; shape.numel()],
        })
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::create(shape, 0.0)
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        shape.check()?;
        if data.len() != shape.numel() {
            return Err(Error::shape(format!(
                "{} values supplied for shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn offset(&self, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(c < self.shape.channels && y < self.shape.height && x < self.shape.width);
        (c * self.shape.height + y) * self.shape.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.offset(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f32) {
        let i = self.offset(c, y, x);
        self.data[i] = value;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.shape.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `true` iff shapes match and `|a_i − b_i| ≤ atol + rtol·|b_i|` everywhere.
pub fn approx_eq(a: &Tensor, b: &Tensor, atol: f32, rtol: f32) -> bool {
    a.shape == b.shape
        && a
            .data
            .iter()
            .zip(&b.data)
            .all(|(&x, &y)| (x - y).abs() <= atol + rtol * y.abs())
}

/// Largest element-wise absolute difference, or `None` on shape mismatch.
pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> Option<f32> {
    (a.shape == b.shape).then(|| {
        a.data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f32::max)
    })
}

/// Arbitrary-rank weight array (convolution kernels are rank 4, per-channel
/// vectors rank 1).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl WeightTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidShape(format!("element count of {dims:?} overflows")))?;
        if numel != data.len() {
            return Err(Error::shape(format!(
                "{} values supplied for dims {dims:?}",
                data.len()
            )));
        }
        Ok(WeightTensor { dims, data })
    }

    pub fn filled(dims: Vec<usize>, fill: f32) -> Self {
        let n = dims.iter().product();
        WeightTensor {
            dims,
            data: vec![fill; n],
        }
    }

    pub fn vector(data: Vec<f32>) -> Self {
        WeightTensor {
            dims: vec![data.len()],
            data,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Dims as `(d0, d1, d2, d3)`, failing unless the array is rank 4.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.dims[..] {
            [a, b, c, d] => Ok((a, b, c, d)),
            _ => Err(Error::shape(format!(
                "expected a rank-4 kernel, got dims {:?}",
                self.dims
            ))),
        }
    }
}

/// Integer companion of a feature map, holding max-pool argmax positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexTensor {
    shape: Shape,
    data: Vec<u32>,
}

impl IndexTensor {
    pub fn from_vec(shape: Shape, data: Vec<u32>) -> Result<Self> {
        shape.check()?;
        if data.len() != shape.numel() {
            return Err(Error::shape(format!(
                "{} indices supplied for shape {shape}",
                data.len()
            )));
        }
        Ok(IndexTensor { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<u32> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> u32 {
        self.data[(c * self.shape.height + y) * self.shape.width + x]
    }
}
