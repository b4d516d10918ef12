//! Numeric primitives for every layer type the network uses.
//!
//! Each operation comes in two forms: an allocating one returning a fresh
//! [`Tensor`], and an `_into` form writing into a caller-owned buffer, which
//! the planned executor uses to recycle scratch memory. The `_into` forms
//! overwrite every element of `out`.
//!
//! Convolution accumulation order is fixed per output element: input channel,
//! then kernel row, then kernel column, starting from `0.0`, with the bias
//! added last. Output channels are computed in parallel, which leaves that
//! order intact, so results are bitwise reproducible.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{IndexTensor, Shape, Tensor, WeightTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvParams {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub dilation: usize,
    pub out_channels: usize,
    pub has_bias: bool,
}

impl ConvParams {
    /// Square kernel, stride 1, no padding, no dilation, no bias.
    pub fn square(kernel: usize, out_channels: usize) -> Self {
        ConvParams {
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            pad_h: 0,
            pad_w: 0,
            dilation: 1,
            out_channels,
            has_bias: false,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_pad(mut self, pad_h: usize, pad_w: usize) -> Self {
        self.pad_h = pad_h;
        self.pad_w = pad_w;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.out_channels == 0 {
            return Err(Error::shape("convolution with a zero-sized kernel"));
        }
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::shape("stride and dilation must be positive"));
        }
        if self.dilation > 1 && self.stride != 1 {
            return Err(Error::shape("dilated convolutions must use stride 1"));
        }
        let extent = |size: usize, pad: usize, k: usize| -> Option<usize> {
            let span = self.dilation * (k - 1) + 1;
            (size + 2 * pad)
                .checked_sub(span)
                .map(|rem| rem / self.stride + 1)
        };
        match (
            extent(input.height, self.pad_h, self.kernel_h),
            extent(input.width, self.pad_w, self.kernel_w),
        ) {
            (Some(h), Some(w)) => Ok(Shape {
                channels: self.out_channels,
                height: h,
                width: w,
            }),
            _ => Err(Error::shape(format!(
                "{}×{} kernel (dilation {}) does not fit input {input} with padding ({}, {})",
                self.kernel_h, self.kernel_w, self.dilation, self.pad_h, self.pad_w
            ))),
        }
    }

    pub fn weight_dims(&self, in_channels: usize) -> [usize; 4] {
        [self.out_channels, in_channels, self.kernel_h, self.kernel_w]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvTransposeParams {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    /// Extra rows/columns appended at the bottom/right so a 3×3 stride-2
    /// transposed convolution can exactly double its input.
    pub output_pad: usize,
    pub out_channels: usize,
    pub has_bias: bool,
}

impl ConvTransposeParams {
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.out_channels == 0 || self.stride == 0 {
            return Err(Error::shape("transposed convolution with a zero-sized parameter"));
        }
        if self.output_pad >= self.stride {
            return Err(Error::shape("output padding must be smaller than the stride"));
        }
        let extent = |size: usize, k: usize| -> Option<usize> {
            ((size - 1) * self.stride + k + self.output_pad)
                .checked_sub(2 * self.pad)
                .filter(|&n| n >= 1)
        };
        match (
            extent(input.height, self.kernel_h),
            extent(input.width, self.kernel_w),
        ) {
            (Some(h), Some(w)) => Ok(Shape {
                channels: self.out_channels,
                height: h,
                width: w,
            }),
            _ => Err(Error::shape(format!(
                "transposed convolution output of input {input} is empty"
            ))),
        }
    }

    pub fn weight_dims(&self, in_channels: usize) -> [usize; 4] {
        [in_channels, self.out_channels, self.kernel_h, self.kernel_w]
    }

    /// The strided forward convolution this operator is the adjoint of.
    pub fn forward_equivalent(&self, in_channels: usize) -> ConvParams {
        ConvParams {
            kernel_h: self.kernel_h,
            kernel_w: self.kernel_w,
            stride: self.stride,
            pad_h: self.pad,
            pad_w: self.pad,
            dilation: 1,
            out_channels: in_channels,
            has_bias: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub epsilon: f32,
}

impl BnParams {
    pub fn identity(channels: usize, epsilon: f32) -> Self {
        BnParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.gamma.len();
        if self.beta.len() != n || self.running_mean.len() != n || self.running_var.len() != n {
            return Err(Error::shape("batch norm parameter vectors differ in length"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::shape("batch norm epsilon must be non-negative"));
        }
        if let Some(c) = self
            .running_var
            .iter()
            .position(|&v| !(v >= 0.0) || v + self.epsilon <= 0.0)
        {
            return Err(Error::shape(format!(
                "batch norm variance of channel {c} must be non-negative and var + eps positive"
            )));
        }
        Ok(())
    }

    /// Per-channel `(scale, shift)` such that `bn(x) = x·scale + shift`.
    pub fn affine(&self) -> (Vec<f32>, Vec<f32>) {
        let scale: Vec<f32> = self
            .gamma
            .iter()
            .zip(&self.running_var)
            .map(|(g, v)| g / (v + self.epsilon).sqrt())
            .collect();
        let shift = scale
            .iter()
            .zip(self.beta.iter().zip(&self.running_mean))
            .map(|(s, (b, m))| b - m * s)
            .collect();
        (scale, shift)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolResult {
    pub values: Tensor,
    pub indices: IndexTensor,
}

fn check_conv_inputs(
    input: Shape,
    weights: &WeightTensor,
    bias: Option<&[f32]>,
    p: &ConvParams,
) -> Result<Shape> {
    let out = p.output_shape(input)?;
    let expected = p.weight_dims(input.channels);
    if weights.dims() != expected {
        return Err(Error::shape(format!(
            "convolution weights {:?} do not match expected {:?} for input {input}",
            weights.dims(),
            expected
        )));
    }
    match (bias, p.has_bias) {
        (Some(b), true) if b.len() == p.out_channels => {}
        (None, false) => {}
        (Some(b), true) => {
            return Err(Error::shape(format!(
                "bias has {} entries for {} output channels",
                b.len(),
                p.out_channels
            )))
        }
        (Some(_), false) => return Err(Error::shape("bias supplied to a bias-free convolution")),
        (None, true) => return Err(Error::shape("convolution expects a bias")),
    }
    Ok(out)
}

/// Direct 2-D convolution with zero padding.
pub fn conv2d(
    input: &Tensor,
    weights: &WeightTensor,
    bias: Option<&[f32]>,
    p: &ConvParams,
) -> Result<Tensor> {
    let out_shape = check_conv_inputs(input.shape(), weights, bias, p)?;
    let mut out = vec![0.0; out_shape.numel()];
    conv2d_raw(input.data(), input.shape(), weights.data(), bias, p, out_shape, &mut out);
    Tensor::from_vec(out_shape, out)
}

pub fn conv2d_into(
    input: &Tensor,
    weights: &WeightTensor,
    bias: Option<&[f32]>,
    p: &ConvParams,
    out: &mut [f32],
) -> Result<Shape> {
    let out_shape = check_conv_inputs(input.shape(), weights, bias, p)?;
    if out.len() != out_shape.numel() {
        return Err(Error::shape("output buffer has the wrong length"));
    }
    conv2d_raw(input.data(), input.shape(), weights.data(), bias, p, out_shape, out);
    Ok(out_shape)
}

fn conv2d_raw(
    input: &[f32],
    in_shape: Shape,
    weights: &[f32],
    bias: Option<&[f32]>,
    p: &ConvParams,
    out_shape: Shape,
    out: &mut [f32],
) {
    let kernel_len = in_shape.channels * p.kernel_h * p.kernel_w;
    out.par_chunks_mut(out_shape.plane())
        .enumerate()
        .for_each(|(o, plane)| {
            let w = &weights[o * kernel_len..(o + 1) * kernel_len];
            if p.stride == 1 && p.dilation == 1 {
                accumulate_unit(input, in_shape, w, p, out_shape, plane);
            } else {
                accumulate_general(input, in_shape, w, p, out_shape, plane);
            }
            if let Some(b) = bias {
                let b = b[o];
                plane.iter_mut().for_each(|v| *v += b);
            }
        });
}

/// Valid output range `[lo, hi)` along one axis for kernel tap offset `tap`
/// (already multiplied by the dilation): those `o` with
/// `0 ≤ o·stride + tap − pad < size`.
#[inline]
fn valid_range(out_len: usize, size: usize, stride: usize, tap: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > tap {
        (pad - tap).div_ceil(stride)
    } else {
        0
    };
    let hi = if size + pad > tap {
        ((size + pad - tap - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn accumulate_general(
    input: &[f32],
    in_shape: Shape,
    w: &[f32],
    p: &ConvParams,
    out_shape: Shape,
    plane: &mut [f32],
) {
    let (ih, iw) = (in_shape.height, in_shape.width);
    let (oh, ow) = (out_shape.height, out_shape.width);
    let (s, d) = (p.stride, p.dilation);
    plane.fill(0.0);
    for c in 0..in_shape.channels {
        let src = &input[c * ih * iw..(c + 1) * ih * iw];
        for i in 0..p.kernel_h {
            let (y_lo, y_hi) = valid_range(oh, ih, s, i * d, p.pad_h);
            for j in 0..p.kernel_w {
                let wv = w[(c * p.kernel_h + i) * p.kernel_w + j];
                let (x_lo, x_hi) = valid_range(ow, iw, s, j * d, p.pad_w);
                for oy in y_lo..y_hi {
                    let iy = oy * s + i * d - p.pad_h;
                    let src_row = &src[iy * iw..(iy + 1) * iw];
                    let dst_row = &mut plane[oy * ow..(oy + 1) * ow];
                    #[allow(clippy::needless_range_loop)]
                    for ox in x_lo..x_hi {
                        let ix = ox * s + j * d - p.pad_w;
                        dst_row[ox] += wv * src_row[ix];
                    }
                }
            }
        }
    }
}

fn accumulate_unit(
    input: &[f32],
    in_shape: Shape,
    w: &[f32],
    p: &ConvParams,
    out_shape: Shape,
    plane: &mut [f32],
) {
    let (ih, iw) = (in_shape.height, in_shape.width);
    let (oh, ow) = (out_shape.height, out_shape.width);
    plane.fill(0.0);
    for c in 0..in_shape.channels {
        let src = &input[c * ih * iw..(c + 1) * ih * iw];
        for i in 0..p.kernel_h {
            let (y_lo, y_hi) = valid_range(oh, ih, 1, i, p.pad_h);
            for j in 0..p.kernel_w {
                let wv = w[(c * p.kernel_h + i) * p.kernel_w + j];
                let (x_lo, x_hi) = valid_range(ow, iw, 1, j, p.pad_w);
                if x_lo >= x_hi {
                    continue;
                }
                let ix_lo = x_lo + j - p.pad_w;
                let n = x_hi - x_lo;
                for oy in y_lo..y_hi {
                    let iy = oy + i - p.pad_h;
                    let src_row = &src[iy * iw + ix_lo..iy * iw + ix_lo + n];
                    let dst_row = &mut plane[oy * ow + x_lo..oy * ow + x_hi];
                    for (dst, &x) in dst_row.iter_mut().zip(src_row) {
                        *dst += wv * x;
                    }
                }
            }
        }
    }
}

fn check_transpose_inputs(
    input: Shape,
    weights: &WeightTensor,
    bias: Option<&[f32]>,
    p: &ConvTransposeParams,
) -> Result<Shape> {
    let out = p.output_shape(input)?;
    let expected = p.weight_dims(input.channels);
    if weights.dims() != expected {
        return Err(Error::shape(format!(
            "transposed convolution weights {:?} do not match expected {:?}",
            weights.dims(),
            expected
        )));
    }
    match (bias, p.has_bias) {
        (Some(b), true) if b.len() == p.out_channels => Ok(out),
        (None, false) => Ok(out),
        _ => Err(Error::shape("transposed convolution bias does not match its parameters")),
    }
}

/// Transposed ("full") convolution: the adjoint of the strided forward
/// convolution, computed by scatter-accumulating every input element times
/// the kernel into the output grid.
pub fn conv_transpose2d(
    input: &Tensor,
    weights: &WeightTensor,
    bias: Option<&[f32]>,
    p: &ConvTransposeParams,
) -> Result<Tensor> {
    let out_shape = check_transpose_inputs(input.shape(), weights, bias, p)?;
    let mut out = vec![0.0; out_shape.numel()];
    conv_transpose2d_raw(input, weights.data(), bias, p, out_shape, &mut out);
    Tensor::from_vec(out_shape, out)
}

pub fn conv_transpose2d_into(
    input: &Tensor,
    weights: &WeightTensor,
    bias: Option<&[f32]>,
    p: &ConvTransposeParams,
    out: &mut [f32],
) -> Result<Shape> {
    let out_shape = check_transpose_inputs(input.shape(), weights, bias, p)?;
    if out.len() != out_shape.numel() {
        return Err(Error::shape("output buffer has the wrong length"));
    }
    conv_transpose2d_raw(input, weights.data(), bias, p, out_shape, out);
    Ok(out_shape)
}

fn conv_transpose2d_raw(
    input: &Tensor,
    weights: &[f32],
    bias: Option<&[f32]>,
    p: &ConvTransposeParams,
    out_shape: Shape,
    out: &mut [f32],
) {
    let in_shape = input.shape();
    let (ih, iw) = (in_shape.height, in_shape.width);
    let (oh, ow) = (out_shape.height, out_shape.width);
    let (kh, kw, s) = (p.kernel_h, p.kernel_w, p.stride);
    let out_ch = p.out_channels;
    out.par_chunks_mut(out_shape.plane())
        .enumerate()
        .for_each(|(o, plane)| {
            plane.fill(0.0);
            for c in 0..in_shape.channels {
                let src = input.channel(c);
                let k = &weights[(c * out_ch + o) * kh * kw..(c * out_ch + o + 1) * kh * kw];
                for y in 0..ih {
                    for x in 0..iw {
                        let v = src[y * iw + x];
                        for i in 0..kh {
                            let Some(oy) = (y * s + i).checked_sub(p.pad).filter(|&r| r < oh) else {
                                continue;
                            };
                            for j in 0..kw {
                                let Some(ox) = (x * s + j).checked_sub(p.pad).filter(|&r| r < ow)
                                else {
                                    continue;
                                };
                                plane[oy * ow + ox] += v * k[i * kw + j];
                            }
                        }
                    }
                }
            }
            if let Some(b) = bias {
                let b = b[o];
                plane.iter_mut().for_each(|v| *v += b);
            }
        });
}

/// Stride-1 asymmetric 5×5 factorization: a 5×1 convolution (padded 2 rows)
/// followed by a 1×5 convolution (padded 2 columns). Spatial size is
/// preserved. The bias, if any, belongs to the second convolution.
pub fn conv_asymmetric5(
    input: &Tensor,
    w_5x1: &WeightTensor,
    w_1x5: &WeightTensor,
    bias: Option<&[f32]>,
) -> Result<Tensor> {
    let (first, second) = asymmetric_params(w_5x1, w_1x5, bias.is_some())?;
    let mid = conv2d(input, w_5x1, None, &first)?;
    conv2d(&mid, w_1x5, bias, &second)
}

pub fn asymmetric_params(
    w_5x1: &WeightTensor,
    w_1x5: &WeightTensor,
    has_bias: bool,
) -> Result<(ConvParams, ConvParams)> {
    let (mid_ch, _, kh, kw) = w_5x1.dims4()?;
    let (out_ch, _, kh2, kw2) = w_1x5.dims4()?;
    if (kh, kw, kh2, kw2) != (5, 1, 1, 5) {
        return Err(Error::shape(format!(
            "asymmetric kernels must be 5×1 and 1×5, got {kh}×{kw} and {kh2}×{kw2}"
        )));
    }
    let first = ConvParams {
        kernel_h: 5,
        kernel_w: 1,
        pad_h: 2,
        pad_w: 0,
        ..ConvParams::square(1, mid_ch)
    };
    let second = ConvParams {
        kernel_h: 1,
        kernel_w: 5,
        pad_h: 0,
        pad_w: 2,
        has_bias,
        ..ConvParams::square(1, out_ch)
    };
    Ok((first, second))
}

/// Non-overlapping 2×2 max pooling recording the argmax of every window as a
/// flat row-major index into the source channel plane. Ties go to the
/// smallest index.
pub fn maxpool2x2(input: &Tensor) -> Result<PoolResult> {
    let out_shape = pool_output_shape(input.shape())?;
    let mut values = vec![0.0; out_shape.numel()];
    let mut indices = vec![0; out_shape.numel()];
    maxpool2x2_into(input, &mut values, &mut indices)?;
    Ok(PoolResult {
        values: Tensor::from_vec(out_shape, values)?,
        indices: IndexTensor::from_vec(out_shape, indices)?,
    })
}

pub fn pool_output_shape(input: Shape) -> Result<Shape> {
    if !input.height.is_multiple_of(2) || !input.width.is_multiple_of(2) {
        return Err(Error::shape(format!(
            "2×2 max pooling needs even spatial dims, got {input}"
        )));
    }
    Shape::new(input.channels, input.height / 2, input.width / 2)
}

pub fn maxpool2x2_into(input: &Tensor, values: &mut [f32], indices: &mut [u32]) -> Result<Shape> {
    let in_shape = input.shape();
    let out_shape = pool_output_shape(in_shape)?;
    if values.len() != out_shape.numel() || indices.len() != out_shape.numel() {
        return Err(Error::shape("pool output buffers have the wrong length"));
    }
    let (iw, oh, ow) = (in_shape.width, out_shape.height, out_shape.width);
    for c in 0..in_shape.channels {
        let src = input.channel(c);
        for y in 0..oh {
            for x in 0..ow {
                let top = 2 * y * iw + 2 * x;
                let mut best = top;
                for cand in [top + 1, top + iw, top + iw + 1] {
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                let o = (c * oh + y) * ow + x;
                values[o] = src[best];
                indices[o] = best as u32;
            }
        }
    }
    Ok(out_shape)
}

/// Scatters pooled values back to their recorded positions in a zeroed
/// `C × out_h × out_w` map.
pub fn max_unpool2x2(
    values: &Tensor,
    indices: &IndexTensor,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor> {
    let out_shape = Shape::new(values.shape().channels, out_h, out_w)?;
    let mut out = vec![0.0; out_shape.numel()];
    max_unpool2x2_into(values, indices, out_shape, &mut out)?;
    Tensor::from_vec(out_shape, out)
}

pub fn max_unpool2x2_into(
    values: &Tensor,
    indices: &IndexTensor,
    out_shape: Shape,
    out: &mut [f32],
) -> Result<()> {
    let in_shape = values.shape();
    if indices.shape() != in_shape {
        return Err(Error::shape(format!(
            "unpool indices {} do not match values {in_shape}",
            indices.shape()
        )));
    }
    if out_shape.channels != in_shape.channels
        || out_shape.height != 2 * in_shape.height
        || out_shape.width != 2 * in_shape.width
    {
        return Err(Error::shape(format!(
            "unpool output {out_shape} is not twice the input {in_shape}"
        )));
    }
    if out.len() != out_shape.numel() {
        return Err(Error::shape("output buffer has the wrong length"));
    }
    out.fill(0.0);
    let plane = out_shape.plane();
    let n = in_shape.plane();
    for c in 0..in_shape.channels {
        let dst = &mut out[c * plane..(c + 1) * plane];
        let vals = values.channel(c);
        let idx = &indices.data()[c * n..(c + 1) * n];
        for (&v, &i) in vals.iter().zip(idx) {
            let i = i as usize;
            if i >= plane {
                return Err(Error::CorruptIndices(format!(
                    "index {i} in channel {c} is outside the {}×{} plane",
                    out_shape.height, out_shape.width
                )));
            }
            dst[i] = v;
        }
    }
    Ok(())
}

pub fn batchnorm_infer(input: &Tensor, p: &BnParams) -> Result<Tensor> {
    let mut out = vec![0.0; input.shape().numel()];
    batchnorm_infer_into(input, p, &mut out)?;
    Tensor::from_vec(input.shape(), out)
}

pub fn batchnorm_infer_into(input: &Tensor, p: &BnParams, out: &mut [f32]) -> Result<()> {
    p.check()?;
    let shape = input.shape();
    if p.channels() != shape.channels {
        return Err(Error::shape(format!(
            "batch norm over {} channels applied to {shape}",
            p.channels()
        )));
    }
    check_out_len(out, shape)?;
    for c in 0..shape.channels {
        let denom = (p.running_var[c] + p.epsilon).sqrt();
        let (g, b, m) = (p.gamma[c], p.beta[c], p.running_mean[c]);
        for (o, &x) in out[c * shape.plane()..(c + 1) * shape.plane()]
            .iter_mut()
            .zip(input.channel(c))
        {
            *o = g * (x - m) / denom + b;
        }
    }
    Ok(())
}

pub fn prelu(input: &Tensor, slopes: &[f32]) -> Result<Tensor> {
    let mut out = vec![0.0; input.shape().numel()];
    prelu_into(input, slopes, &mut out)?;
    Tensor::from_vec(input.shape(), out)
}

pub fn prelu_into(input: &Tensor, slopes: &[f32], out: &mut [f32]) -> Result<()> {
    let shape = input.shape();
    if slopes.len() != shape.channels {
        return Err(Error::shape(format!(
            "{} PReLU slopes for {} channels",
            slopes.len(),
            shape.channels
        )));
    }
    check_out_len(out, shape)?;
    for (c, &a) in slopes.iter().enumerate() {
        for (o, &x) in out[c * shape.plane()..(c + 1) * shape.plane()]
            .iter_mut()
            .zip(input.channel(c))
        {
            *o = if x >= 0.0 { x } else { a * x };
        }
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut out = vec![0.0; a.shape().numel()];
    add_into(a, b, &mut out)?;
    Tensor::from_vec(a.shape(), out)
}

pub fn add_into(a: &Tensor, b: &Tensor, out: &mut [f32]) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "cannot add {} and {}",
            a.shape(),
            b.shape()
        )));
    }
    check_out_len(out, a.shape())?;
    for ((o, &x), &y) in out.iter_mut().zip(a.data()).zip(b.data()) {
        *o = x + y;
    }
    Ok(())
}

pub fn concat_output_shape(a: Shape, b: Shape) -> Result<Shape> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::shape(format!(
            "cannot concatenate {a} and {b}: spatial dims differ"
        )));
    }
    Shape::new(a.channels + b.channels, a.height, a.width)
}

/// Channel concatenation: `a`'s channels first, then `b`'s.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let shape = concat_output_shape(a.shape(), b.shape())?;
    let mut out = vec![0.0; shape.numel()];
    concat_channels_into(a, b, &mut out)?;
    Tensor::from_vec(shape, out)
}

pub fn concat_channels_into(a: &Tensor, b: &Tensor, out: &mut [f32]) -> Result<()> {
    let shape = concat_output_shape(a.shape(), b.shape())?;
    check_out_len(out, shape)?;
    let split = a.data().len();
    out[..split].copy_from_slice(a.data());
    out[split..].copy_from_slice(b.data());
    Ok(())
}

/// Appends zero channels up to `target_channels`.
pub fn pad_channels(input: &Tensor, target_channels: usize) -> Result<Tensor> {
    let shape = input.shape().with_channels(target_channels);
    let mut out = vec![0.0; shape.numel()];
    pad_channels_into(input, target_channels, &mut out)?;
    Tensor::from_vec(shape, out)
}

pub fn pad_channels_into(input: &Tensor, target_channels: usize, out: &mut [f32]) -> Result<()> {
    let shape = input.shape();
    if target_channels < shape.channels {
        return Err(Error::shape(format!(
            "cannot pad {shape} down to {target_channels} channels"
        )));
    }
    check_out_len(out, shape.with_channels(target_channels))?;
    let split = input.data().len();
    out[..split].copy_from_slice(input.data());
    out[split..].fill(0.0);
    Ok(())
}

/// Spatial dropout at inference time: the identity (inverted dropout scales
/// activations during training instead).
pub fn spatial_dropout_infer(input: &Tensor) -> Tensor {
    input.clone()
}

fn check_out_len(out: &[f32], shape: Shape) -> Result<()> {
    if out.len() != shape.numel() {
        return Err(Error::shape(format!(
            "output buffer holds {} values, {shape} needs {}",
            out.len(),
            shape.numel()
        )));
    }
    Ok(())
}
