//! Naive reference implementations and the randomized kernel-vs-oracle sweep
//! shared by the integration test targets. Oracles are written from the
//! operator definitions as plain nested loops accumulating in f64; they share
//! no code with `enet::kernels`.
#![allow(dead_code)]

use enet::kernels::{
    batchnorm_infer, conv2d, conv_asymmetric5, conv_transpose2d, max_unpool2x2, maxpool2x2, prelu,
    BnParams, ConvParams, ConvTransposeParams,
};
use enet::tensor::WeightTensor;
use enet::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng8 = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng8 {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(r: &mut Rng8, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| r.gen_range(-scale..=scale)).collect()
}

pub fn rand_tensor(r: &mut Rng8, c: usize, h: usize, w: usize) -> Tensor {
    Tensor::from_vec(Shape::new(c, h, w).unwrap(), rand_vec(r, c * h * w, 1.0)).unwrap()
}

/// Kernel weights scaled like a fan-in initialization.
pub fn rand_weights(r: &mut Rng8, dims: [usize; 4], fan_in: usize) -> WeightTensor {
    let scale = 1.0 / (fan_in as f32).sqrt();
    WeightTensor::new(dims.to_vec(), rand_vec(r, dims.iter().product(), scale)).unwrap()
}

pub fn max_abs(a: &[f32], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).abs()).fold(0.0, f64::max)
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

// ---- oracles -------------------------------------------------------------

pub struct Oracle {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

/// out[o,y,x] = b[o] + Σ_{i,ky,kx} in[i, y·s − ph + ky·d, x·s − pw + kx·d] · W[o,i,ky,kx]
#[allow(clippy::too_many_arguments)]
pub fn conv_oracle(
    x: &Tensor,
    w: &[f32],
    bias: Option<&[f32]>,
    (kh, kw): (usize, usize),
    stride: usize,
    (ph, pw): (usize, usize),
    dil: usize,
    out_c: usize,
) -> Oracle {
    let s = x.shape();
    let span_h = dil * (kh - 1) + 1;
    let span_w = dil * (kw - 1) + 1;
    let oh = (s.height + 2 * ph - span_h) / stride + 1;
    let ow = (s.width + 2 * pw - span_w) / stride + 1;
    let mut data = vec![0.0; out_c * oh * ow];
    for o in 0..out_c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = bias.map_or(0.0, |b| b[o] as f64);
                for i in 0..s.channels {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (y * stride + ky * dil) as isize - ph as isize;
                            let ix = (xx * stride + kx * dil) as isize - pw as isize;
                            if iy < 0 || ix < 0 || iy >= s.height as isize || ix >= s.width as isize {
                                continue;
                            }
                            let wv = w[((o * s.channels + i) * kh + ky) * kw + kx] as f64;
                            acc += wv * x.get(i, iy as usize, ix as usize) as f64;
                        }
                    }
                }
                data[(o * oh + y) * ow + xx] = acc;
            }
        }
    }
    Oracle { c: out_c, h: oh, w: ow, data }
}

/// Transposed convolution written as a gather: output (y, x) collects every
/// input (iy, ix) and tap (ky, kx) with iy·s − p + ky = y.
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose_oracle(
    x: &Tensor,
    w: &[f32],
    bias: Option<&[f32]>,
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
    output_pad: usize,
    out_c: usize,
) -> Oracle {
    let s = x.shape();
    let oh = (s.height - 1) * stride + kh + output_pad - 2 * pad;
    let ow = (s.width - 1) * stride + kw + output_pad - 2 * pad;
    let mut data = vec![0.0; out_c * oh * ow];
    for o in 0..out_c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = bias.map_or(0.0, |b| b[o] as f64);
                for i in 0..s.channels {
                    for ky in 0..kh {
                        let num = y as isize + pad as isize - ky as isize;
                        if num < 0 || num % stride as isize != 0 {
                            continue;
                        }
                        let iy = (num / stride as isize) as usize;
                        if iy >= s.height {
                            continue;
                        }
                        for kx in 0..kw {
                            let num = xx as isize + pad as isize - kx as isize;
                            if num < 0 || num % stride as isize != 0 {
                                continue;
                            }
                            let ix = (num / stride as isize) as usize;
                            if ix >= s.width {
                                continue;
                            }
                            let wv = w[((i * out_c + o) * kh + ky) * kw + kx] as f64;
                            acc += wv * x.get(i, iy, ix) as f64;
                        }
                    }
                }
                data[(o * oh + y) * ow + xx] = acc;
            }
        }
    }
    Oracle { c: out_c, h: oh, w: ow, data }
}

/// (values, flat source indices); the first maximum in row-major window
/// order wins.
pub fn maxpool_oracle(x: &Tensor) -> (Vec<f32>, Vec<u32>) {
    let s = x.shape();
    let (oh, ow) = (s.height / 2, s.width / 2);
    let mut vals = Vec::new();
    let mut idx = Vec::new();
    for c in 0..s.channels {
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = (f32::NEG_INFINITY, u32::MAX);
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let (sy, sx) = (2 * y + dy, 2 * xx + dx);
                    let v = x.get(c, sy, sx);
                    if best.1 == u32::MAX || v > best.0 {
                        best = (v, (sy * s.width + sx) as u32);
                    }
                }
                vals.push(best.0);
                idx.push(best.1);
            }
        }
    }
    (vals, idx)
}

pub fn unpool_oracle(vals: &[f32], idx: &[u32], c: usize, oh: usize, ow: usize) -> Vec<f32> {
    let per = vals.len() / c;
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for k in 0..per {
            out[ch * oh * ow + idx[ch * per + k] as usize] = vals[ch * per + k];
        }
    }
    out
}

pub fn bn_oracle(x: &Tensor, p: &BnParams) -> Vec<f64> {
    let plane = x.shape().plane();
    x.data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / plane;
            p.gamma[c] as f64 * (v as f64 - p.running_mean[c] as f64)
                / (p.running_var[c] as f64 + p.epsilon as f64).sqrt()
                + p.beta[c] as f64
        })
        .collect()
}

pub fn prelu_oracle(x: &Tensor, slopes: &[f32]) -> Vec<f64> {
    let plane = x.shape().plane();
    x.data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if v >= 0.0 { v as f64 } else { slopes[i / plane] as f64 * v as f64 })
        .collect()
}

// ---- sweep ---------------------------------------------------------------

#[derive(Debug, Default, Clone)]
pub struct CheckStats {
    pub name: &'static str,
    pub instances: usize,
    pub max_err: f64,
}

impl CheckStats {
    fn new(name: &'static str) -> Self {
        CheckStats { name, ..Default::default() }
    }

    fn record(&mut self, err: f64) {
        self.instances += 1;
        self.max_err = self.max_err.max(err);
    }
}

fn random_conv_case(r: &mut Rng8, dilation: Option<usize>) -> (Tensor, ConvParams, WeightTensor, Option<Vec<f32>>) {
    loop {
        let c = r.gen_range(1..=4);
        let oc = r.gen_range(1..=4);
        let (h, w) = match dilation {
            Some(_) => (r.gen_range(1..=20), r.gen_range(1..=20)),
            None => (r.gen_range(1..=8), r.gen_range(1..=8)),
        };
        let (kh, kw, stride, d, ph, pw) = match dilation {
            Some(d) => (3, 3, 1, d, d, d),
            None => (
                r.gen_range(1..=5),
                r.gen_range(1..=5),
                r.gen_range(1..=3),
                r.gen_range(1..=3),
                r.gen_range(0..=2),
                r.gen_range(0..=2),
            ),
        };
        let d = if stride > 1 { 1 } else { d };
        if h + 2 * ph < d * (kh - 1) + 1 || w + 2 * pw < d * (kw - 1) + 1 {
            continue;
        }
        let has_bias = r.gen_bool(0.5);
        let p = ConvParams {
            kernel_h: kh,
            kernel_w: kw,
            stride,
            pad_h: ph,
            pad_w: pw,
            dilation: d,
            out_channels: oc,
            has_bias,
        };
        let x = rand_tensor(r, c, h, w);
        let wt = rand_weights(r, p.weight_dims(c), c * kh * kw);
        let b = has_bias.then(|| rand_vec(r, oc, 0.5));
        return (x, p, wt, b);
    }
}

/// Runs every kernel against its oracle on `n` random instances (each) and
/// checks the linear-algebra identities. Returns per-check statistics:
/// absolute error for oracle checks, relative error for identities.
pub fn kernel_sweep(seed: u64, n: usize) -> Vec<CheckStats> {
    let mut r = rng(seed);
    let mut conv = CheckStats::new("conv2d vs oracle");
    let mut strided = CheckStats::new("conv2d stride 2 vs oracle");
    let mut dilated = CheckStats::new("conv2d dilation 2/4/8/16 vs oracle");
    let mut convt = CheckStats::new("conv_transpose2d vs oracle");
    let mut asym = CheckStats::new("asymmetric-5 vs oracle");
    let mut pool = CheckStats::new("maxpool2x2 vs oracle");
    let mut unpool = CheckStats::new("max_unpool2x2 vs oracle");
    let mut bn = CheckStats::new("batchnorm vs oracle");
    let mut pr = CheckStats::new("prelu vs oracle");
    let mut adjoint = CheckStats::new("adjoint <conv x, y> = <x, convT y> (rel)");
    let mut rank1 = CheckStats::new("rank-1 5×1·1×5 = 5×5 (abs)");
    let mut linear = CheckStats::new("linearity conv / convT (rel)");

    for k in 0..n {
        // generic conv
        let (x, p, wt, b) = random_conv_case(&mut r, None);
        let y = conv2d(&x, &wt, b.as_deref(), &p).unwrap();
        let o = conv_oracle(&x, wt.data(), b.as_deref(), (p.kernel_h, p.kernel_w), p.stride, (p.pad_h, p.pad_w), p.dilation, p.out_channels);
        assert_eq!((y.shape().height, y.shape().width), (o.h, o.w));
        conv.record(max_abs(y.data(), &o.data));

        // stride 2
        let (x, mut p, _, _) = random_conv_case(&mut r, None);
        p.stride = 2;
        p.dilation = 1;
        if x.shape().height + 2 * p.pad_h >= p.kernel_h && x.shape().width + 2 * p.pad_w >= p.kernel_w {
            let c = x.shape().channels;
            let wt = rand_weights(&mut r, p.weight_dims(c), c * p.kernel_h * p.kernel_w);
            let b = p.has_bias.then(|| rand_vec(&mut r, p.out_channels, 0.5));
            let y = conv2d(&x, &wt, b.as_deref(), &p).unwrap();
            let o = conv_oracle(&x, wt.data(), b.as_deref(), (p.kernel_h, p.kernel_w), 2, (p.pad_h, p.pad_w), 1, p.out_channels);
            strided.record(max_abs(y.data(), &o.data));
        }

        // dilated, cycling the rates used by the network
        let d = [2, 4, 8, 16][k % 4];
        let (x, p, wt, b) = random_conv_case(&mut r, Some(d));
        let y = conv2d(&x, &wt, b.as_deref(), &p).unwrap();
        let o = conv_oracle(&x, wt.data(), b.as_deref(), (3, 3), 1, (d, d), d, p.out_channels);
        dilated.record(max_abs(y.data(), &o.data));

        // transposed
        let (c, oc) = (r.gen_range(1..=4), r.gen_range(1..=4));
        let (h, w) = (r.gen_range(1..=8), r.gen_range(1..=8));
        let (kh, kw) = (r.gen_range(1..=4), r.gen_range(1..=4));
        let stride = r.gen_range(1..=3);
        let pad = r.gen_range(0..=1);
        let output_pad = r.gen_range(0..stride);
        let tp = ConvTransposeParams {
            kernel_h: kh,
            kernel_w: kw,
            stride,
            pad,
            output_pad,
            out_channels: oc,
            has_bias: r.gen_bool(0.5),
        };
        if tp.output_shape(Shape::new(c, h, w).unwrap()).is_ok() {
            let x = rand_tensor(&mut r, c, h, w);
            let wt = rand_weights(&mut r, tp.weight_dims(c), c * kh * kw);
            let b = tp.has_bias.then(|| rand_vec(&mut r, oc, 0.5));
            let y = conv_transpose2d(&x, &wt, b.as_deref(), &tp).unwrap();
            let o = conv_transpose_oracle(&x, wt.data(), b.as_deref(), (kh, kw), stride, pad, output_pad, oc);
            assert_eq!((y.shape().height, y.shape().width), (o.h, o.w));
            convt.record(max_abs(y.data(), &o.data));
        }

        // asymmetric 5×1 → 1×5 against its own composition of conv oracles,
        // and against the equivalent 5×5 kernel Σ_m w2[o,m,b]·w1[m,i,a]
        let (c, mid, oc) = (r.gen_range(1..=4), r.gen_range(1..=4), r.gen_range(1..=4));
        let (h, w) = (r.gen_range(1..=8), r.gen_range(1..=8));
        let x = rand_tensor(&mut r, c, h, w);
        let w1 = rand_weights(&mut r, [mid, c, 5, 1], 5 * c);
        let w2 = rand_weights(&mut r, [oc, mid, 1, 5], 5 * mid);
        let b = r.gen_bool(0.5).then(|| rand_vec(&mut r, oc, 0.5));
        let y = conv_asymmetric5(&x, &w1, &w2, b.as_deref()).unwrap();
        let mut k55 = vec![0f32; oc * c * 25];
        for o in 0..oc {
            for i in 0..c {
                for a in 0..5 {
                    for bb in 0..5 {
                        let mut s = 0f64;
                        for m in 0..mid {
                            s += w2.data()[(o * mid + m) * 5 + bb] as f64 * w1.data()[(m * c + i) * 5 + a] as f64;
                        }
                        k55[((o * c + i) * 5 + a) * 5 + bb] = s as f32;
                    }
                }
            }
        }
        let o55 = conv_oracle(&x, &k55, b.as_deref(), (5, 5), 1, (2, 2), 1, oc);
        rank1.record(max_abs(y.data(), &o55.data));
        let mid_o = conv_oracle(&x, w1.data(), None, (5, 1), 1, (2, 0), 1, mid);
        let mid_t = Tensor::from_vec(
            Shape::new(mid, mid_o.h, mid_o.w).unwrap(),
            mid_o.data.iter().map(|&v| v as f32).collect(),
        )
        .unwrap();
        let o = conv_oracle(&mid_t, w2.data(), b.as_deref(), (1, 5), 1, (0, 2), 1, oc);
        asym.record(max_abs(y.data(), &o.data));

        // pool / unpool; every fourth instance uses coarsely quantized values
        // so windows contain ties
        let (c, h, w) = (r.gen_range(1..=4), 2 * r.gen_range(1..=4), 2 * r.gen_range(1..=4));
        let mut x = rand_tensor(&mut r, c, h, w);
        if k % 4 == 0 {
            x.data_mut().iter_mut().for_each(|v| *v = (*v * 2.0).round());
        }
        let pr_ = maxpool2x2(&x).unwrap();
        let (ov, oi) = maxpool_oracle(&x);
        let pool_ok = pr_.indices.data() == oi.as_slice();
        pool.record(if pool_ok { max_abs(pr_.values.data(), &ov.iter().map(|&v| v as f64).collect::<Vec<_>>()) } else { f64::INFINITY });
        let up = max_unpool2x2(&pr_.values, &pr_.indices, h, w).unwrap();
        let uo = unpool_oracle(&ov, &oi, c, h, w);
        unpool.record(max_abs(up.data(), &uo.iter().map(|&v| v as f64).collect::<Vec<_>>()));

        // batch norm and PReLU
        let (c, h, w) = (r.gen_range(1..=4), r.gen_range(1..=8), r.gen_range(1..=8));
        let x = rand_tensor(&mut r, c, h, w);
        let p = BnParams {
            gamma: rand_vec(&mut r, c, 1.0),
            beta: rand_vec(&mut r, c, 1.0),
            running_mean: rand_vec(&mut r, c, 1.0),
            running_var: (0..c).map(|_| r.gen_range(0.25..4.0)).collect(),
            epsilon: 1e-5,
        };
        bn.record(max_abs(batchnorm_infer(&x, &p).unwrap().data(), &bn_oracle(&x, &p)));
        let slopes = rand_vec(&mut r, c, 1.0);
        pr.record(max_abs(prelu(&x, &slopes).unwrap().data(), &prelu_oracle(&x, &slopes)));

        // adjointness: conv2d and conv_transpose2d share one weight array
        let (c, oc) = (r.gen_range(1..=4), r.gen_range(1..=4));
        let (k_, stride, pad) = (r.gen_range(1..=4), r.gen_range(1..=3), r.gen_range(0..=1));
        // one output_pad serves both axes, so both need the same residue
        let (h, w) = loop {
            let (h, w) = (r.gen_range(k_.max(2)..=8), r.gen_range(k_.max(2)..=8));
            if (h + 2 * pad - k_) % stride == (w + 2 * pad - k_) % stride {
                break (h, w);
            }
        };
        let fp = ConvParams::square(k_, oc).with_stride(stride).with_pad(pad, pad);
        if let Ok(os) = fp.output_shape(Shape::new(c, h, w).unwrap()) {
            let x = rand_tensor(&mut r, c, h, w);
            let wt = rand_weights(&mut r, fp.weight_dims(c), c * k_ * k_);
            let yv = rand_tensor(&mut r, oc, os.height, os.width);
            let tp = ConvTransposeParams {
                kernel_h: k_,
                kernel_w: k_,
                stride,
                pad,
                output_pad: (h + 2 * pad - k_) % stride,
                out_channels: c,
                has_bias: false,
            };
            let xt = conv_transpose2d(&yv, &wt, None, &tp).unwrap();
            assert_eq!(xt.shape(), x.shape());
            let fx = conv2d(&x, &wt, None, &fp).unwrap();
            let lhs = dot(fx.data(), yv.data());
            let rhs = dot(x.data(), xt.data());
            // relative to the Cauchy–Schwarz bound on |lhs|, so near-zero
            // inner products from cancellation do not inflate the ratio
            let scale = (dot(fx.data(), fx.data()) * dot(yv.data(), yv.data())).sqrt().max(1e-30);
            adjoint.record((lhs - rhs).abs() / scale);
        }

        // linearity, bias-free
        let (x1, mut p, wt, _) = random_conv_case(&mut r, None);
        p.has_bias = false;
        let s = x1.shape();
        let x2 = rand_tensor(&mut r, s.channels, s.height, s.width);
        let (a, bcoef) = (r.gen_range(-2.0f32..2.0), r.gen_range(-2.0f32..2.0));
        let mix = Tensor::from_vec(s, x1.data().iter().zip(x2.data()).map(|(u, v)| a * u + bcoef * v).collect()).unwrap();
        let lhs = conv2d(&mix, &wt, None, &p).unwrap();
        let (y1, y2) = (conv2d(&x1, &wt, None, &p).unwrap(), conv2d(&x2, &wt, None, &p).unwrap());
        let rhs: Vec<f64> = y1.data().iter().zip(y2.data()).map(|(&u, &v)| a as f64 * u as f64 + bcoef as f64 * v as f64).collect();
        let norm = rhs.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
        linear.record(max_abs(lhs.data(), &rhs) / norm);

        let (c, oc) = (r.gen_range(1..=4), r.gen_range(1..=4));
        let (h, w, k_, stride) = (r.gen_range(1..=8), r.gen_range(1..=8), r.gen_range(1..=4), r.gen_range(1..=3));
        let tp = ConvTransposeParams {
            kernel_h: k_,
            kernel_w: k_,
            stride,
            pad: 0,
            output_pad: 0,
            out_channels: oc,
            has_bias: false,
        };
        let wt = rand_weights(&mut r, tp.weight_dims(c), c * k_ * k_);
        let (x1, x2) = (rand_tensor(&mut r, c, h, w), rand_tensor(&mut r, c, h, w));
        let mix = Tensor::from_vec(x1.shape(), x1.data().iter().zip(x2.data()).map(|(u, v)| a * u + bcoef * v).collect()).unwrap();
        let lhs = conv_transpose2d(&mix, &wt, None, &tp).unwrap();
        let (y1, y2) = (conv_transpose2d(&x1, &wt, None, &tp).unwrap(), conv_transpose2d(&x2, &wt, None, &tp).unwrap());
        let rhs: Vec<f64> = y1.data().iter().zip(y2.data()).map(|(&u, &v)| a as f64 * u as f64 + bcoef as f64 * v as f64).collect();
        let norm = rhs.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
        linear.record(max_abs(lhs.data(), &rhs) / norm);
    }
    vec![conv, strided, dilated, convt, asym, pool, unpool, bn, pr, adjoint, rank1, linear]
}

// ---- command line ----------------------------------------------------------

pub struct CliRun {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn enet_cli(args: &[&str]) -> CliRun {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_enet"))
        .args(args)
        .output()
        .expect("spawn enet binary");
    CliRun {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Writes a deterministic noise image as binary PPM.
pub fn write_ppm(path: &std::path::Path, width: usize, height: usize, seed: u64) {
    let mut r = rng(seed);
    let mut bytes = format!("P6\n{width} {height}\n255\n").into_bytes();
    bytes.extend((0..3 * width * height).map(|_| r.gen::<u8>()));
    std::fs::write(path, bytes).unwrap();
}

pub fn read_pgm_labels(path: &std::path::Path, width: usize, height: usize) -> Vec<u8> {
    let bytes = std::fs::read(path).unwrap();
    let header = format!("P5\n{width} {height}\n255\n");
    assert!(bytes.starts_with(header.as_bytes()), "unexpected PGM header");
    bytes[header.len()..].to_vec()
}

// ---- weights ---------------------------------------------------------------

/// Replaces identity batch-norm statistics with random ones so folding has
/// something to fold: γ ∈ [0.5, 1.5], β ∈ [−0.2, 0.2], μ ∈ [−0.2, 0.2],
/// σ² ∈ [0.5, 2].
pub fn perturb_batchnorm(w: &mut enet::WeightStore, seed: u64) {
    let mut r = rng(seed);
    for (name, t) in w.iter_mut() {
        let range = match name.rsplit('.').next().unwrap() {
            "gamma" => 0.5..=1.5,
            "beta" | "running_mean" => -0.2..=0.2,
            "running_var" => 0.5..=2.0,
            _ => continue,
        };
        t.data_mut().iter_mut().for_each(|v| *v = r.gen_range(range.clone()));
    }
}
