//! Forward and backward kernels on raw tensors. The tape in `tape.rs` wires
//! these into a differentiable graph; they are also usable on their own.

use std::sync::atomic::{AtomicU64, Ordering};

use super::Tensor;
use crate::error::{ensure, Error, Result};
use crate::exec::Exec;

/// Row-major `c = alpha * a·b + beta * c` for `a: [m,k]`, `b: [k,n]`.
/// `trans_a`/`trans_b` read the stored matrix transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    alpha: f64,
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe the row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output extent of a convolution along one axis. Must divide exactly.
pub fn conv_out_size(size: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    ensure!(stride > 0, Config, "stride must be positive");
    let span = size + 2 * pad;
    ensure!(
        span >= kernel,
        Config,
        "kernel {kernel} larger than padded input {span}"
    );
    ensure!(
        (span - kernel) % stride == 0,
        Config,
        "input {size} with kernel {kernel}, stride {stride}, pad {pad} gives a non-integer output size"
    );
    Ok((span - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    r: usize,
    s: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn new(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<(usize, Self)> {
        let (n, c, h, w) = input.dims4()?;
        let (k, kc, r, s) = kernel.dims4()?;
        ensure!(
            c == kc,
            Dimension,
            "input has {c} channels but kernel expects {kc}"
        );
        let ho = conv_out_size(h, r, stride, pad)?;
        let wo = conv_out_size(w, s, stride, pad)?;
        Ok((
            n,
            ConvGeom {
                c,
                h,
                w,
                k,
                r,
                s,
                ho,
                wo,
                stride,
                pad,
            },
        ))
    }

    fn crs(&self) -> usize {
        self.c * self.r * self.s
    }

    fn hw_out(&self) -> usize {
        self.ho * self.wo
    }

    fn in_len(&self) -> usize {
        self.c * self.h * self.w
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let hw = self.hw_out();
        for ci in 0..self.c {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ri in 0..self.r {
                for si in 0..self.s {
                    let row = ((ci * self.r + ri) * self.s + si) * hw;
                    let dst = &mut cols[row..row + hw];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ri) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + si) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let hw = self.hw_out();
        for ci in 0..self.c {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ri in 0..self.r {
                for si in 0..self.s {
                    let row = ((ci * self.r + ri) * self.s + si) * hw;
                    let src = &cols[row..row + hw];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ri) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let line = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + si) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                line[ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input: [N,C,H,W]` with `kernel: [K,C,R,S]`.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    pad: usize,
    exec: Exec,
) -> Result<Tensor> {
    let (n, g) = ConvGeom::new(input, kernel, stride, pad)?;
    let out_len = g.k * g.hw_out();
    let mut out = vec![0.0; n * out_len];
    let x = input.data();
    let wk = kernel.data();
    exec.for_each_chunk(&mut out, out_len, |i, dst| {
        let mut cols = vec![0.0; g.crs() * g.hw_out()];
        g.im2col(&x[i * g.in_len()..(i + 1) * g.in_len()], &mut cols);
        gemm(g.k, g.crs(), g.hw_out(), wk, false, &cols, false, dst, 1.0, 0.0);
    });
    Ok(Tensor::from_parts(vec![n, g.k, g.ho, g.wo], out))
}

/// Gradients of [`conv2d`] w.r.t. input (if requested) and kernel.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &[f64],
    stride: usize,
    pad: usize,
    need_input_grad: bool,
    exec: Exec,
) -> Result<(Option<Vec<f64>>, Vec<f64>)> {
    let (n, g) = ConvGeom::new(input, kernel, stride, pad)?;
    let out_len = g.k * g.hw_out();
    ensure!(
        grad_out.len() == n * out_len,
        Dimension,
        "conv2d upstream gradient has length {}, expected {}",
        grad_out.len(),
        n * out_len
    );
    let x = input.data();
    let wk = kernel.data();
    let partials: Vec<(Vec<f64>, Option<Vec<f64>>)> = exec.map(n, |i| {
        let mut cols = vec![0.0; g.crs() * g.hw_out()];
        g.im2col(&x[i * g.in_len()..(i + 1) * g.in_len()], &mut cols);
        let dy = &grad_out[i * out_len..(i + 1) * out_len];
        let mut dw = vec![0.0; g.k * g.crs()];
        gemm(g.k, g.hw_out(), g.crs(), dy, false, &cols, true, &mut dw, 1.0, 0.0);
        let dx = need_input_grad.then(|| {
            gemm(g.crs(), g.k, g.hw_out(), wk, true, dy, false, &mut cols, 1.0, 0.0);
            let mut dx = vec![0.0; g.in_len()];
            g.col2im(&cols, &mut dx);
            dx
        });
        (dw, dx)
    });
    let mut dw = vec![0.0; g.k * g.crs()];
    let mut dx = need_input_grad.then(|| Vec::with_capacity(n * g.in_len()));
    for (pw, px) in partials {
        dw.iter_mut().zip(&pw).for_each(|(a, b)| *a += b);
        if let (Some(acc), Some(px)) = (dx.as_mut(), px) {
            acc.extend_from_slice(&px);
        }
    }
    Ok((dx, dw))
}

/// Row-wise softmax of a `[N, C]` matrix, max-shifted.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (_, c) = logits.dims2()?;
    ensure!(c >= 2, Contract, "softmax needs at least 2 classes, got {c}");
    if logits.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN in softmax input".into()));
    }
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

pub(crate) fn softmax_backward(probs: &[f64], dy: &[f64], c: usize) -> Vec<f64> {
    let mut dx = vec![0.0; probs.len()];
    for ((p, g), d) in probs.chunks(c).zip(dy.chunks(c)).zip(dx.chunks_mut(c)) {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for j in 0..c {
            d[j] = p[j] * (g[j] - dot);
        }
    }
    dx
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::from_parts(
        x.shape().to_vec(),
        x.data().iter().map(|&v| v.max(0.0)).collect(),
    )
}

/// `[N,C,H,W] -> [N,C]` spatial mean.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let out = x
        .data()
        .chunks(hw)
        .map(|p| p.iter().sum::<f64>() / hw as f64)
        .collect();
    Ok(Tensor::from_parts(vec![n, c], out))
}

/// Non-overlapping 2x2 mean pooling. H and W must be even.
pub fn avg_pool2(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    ensure!(
        h % 2 == 0 && w % 2 == 0,
        Config,
        "2x2 pooling needs even spatial dims, got {h}x{w}"
    );
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; n * c * ho * wo];
    for (src, dst) in x.data().chunks(h * w).zip(out.chunks_mut(ho * wo)) {
        for oy in 0..ho {
            for ox in 0..wo {
                let i = 2 * oy * w + 2 * ox;
                dst[oy * wo + ox] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, ho, wo], out))
}

pub(crate) fn avg_pool2_backward(dy: &[f64], shape: &[usize]) -> Vec<f64> {
    let (h, w) = (shape[2], shape[3]);
    let (ho, wo) = (h / 2, w / 2);
    let mut dx = vec![0.0; shape.iter().product()];
    for (g, d) in dy.chunks(ho * wo).zip(dx.chunks_mut(h * w)) {
        for oy in 0..ho {
            for ox in 0..wo {
                let v = 0.25 * g[oy * wo + ox];
                let i = 2 * oy * w + 2 * ox;
                d[i] = v;
                d[i + 1] = v;
                d[i + w] = v;
                d[i + w + 1] = v;
            }
        }
    }
    dx
}

/// `x: [N,I]`, `weight: [O,I]`, `bias: [O]` -> `x·weightᵀ + bias`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, i) = x.dims2()?;
    let (o, wi) = weight.dims2()?;
    ensure!(i == wi, Dimension, "linear: input width {i}, weight expects {wi}");
    ensure!(
        bias.shape() == [o],
        Dimension,
        "linear: bias shape {:?}, expected [{o}]",
        bias.shape()
    );
    let mut out = Vec::with_capacity(n * o);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    gemm(n, i, o, x.data(), false, weight.data(), true, &mut out, 1.0, 1.0);
    Ok(Tensor::from_parts(vec![n, o], out))
}

/// Per-channel batch statistics and normalized activations from a training-mode batchnorm.
pub struct BatchNormForward {
    pub output: Tensor,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Biased (population) variance of the batch.
    pub var: Vec<f64>,
}

/// Training-mode batchnorm over `(N, H, W)` for each channel.
pub fn batchnorm_train(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<BatchNormForward> {
    let (n, c, h, w) = x.dims4()?;
    ensure!(
        gamma.shape() == [c] && beta.shape() == [c],
        Dimension,
        "batchnorm affine parameters must have shape [{c}]"
    );
    let hw = h * w;
    let count = (n * hw) as f64;
    let data = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for (idx, plane) in data.chunks(hw).enumerate() {
        mean[idx % c] += plane.iter().sum::<f64>();
    }
    mean.iter_mut().for_each(|m| *m /= count);
    for (idx, plane) in data.chunks(hw).enumerate() {
        let m = mean[idx % c];
        var[idx % c] += plane.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    var.iter_mut().for_each(|v| *v /= count);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; data.len()];
    let mut out = vec![0.0; data.len()];
    for (idx, (src, (xh, o))) in data
        .chunks(hw)
        .zip(xhat.chunks_mut(hw).zip(out.chunks_mut(hw)))
        .enumerate()
    {
        let ch = idx % c;
        let (m, s, g, b) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
        for j in 0..hw {
            xh[j] = (src[j] - m) * s;
            o[j] = g * xh[j] + b;
        }
    }
    Ok(BatchNormForward {
        output: Tensor::from_parts(x.shape().to_vec(), out),
        xhat,
        inv_std,
        mean,
        var,
    })
}

/// Returns `(dx, dgamma, dbeta)` for [`batchnorm_train`].
pub(crate) fn batchnorm_train_backward(
    dy: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    shape: &[usize],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c = shape[1];
    let hw = shape[2] * shape[3];
    let count = (shape[0] * hw) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (idx, (g, xh)) in dy.chunks(hw).zip(xhat.chunks(hw)).enumerate() {
        let ch = idx % c;
        dbeta[ch] += g.iter().sum::<f64>();
        dgamma[ch] += g.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
    }
    let mut dx = vec![0.0; dy.len()];
    for (idx, ((g, xh), d)) in dy
        .chunks(hw)
        .zip(xhat.chunks(hw))
        .zip(dx.chunks_mut(hw))
        .enumerate()
    {
        let ch = idx % c;
        let scale = gamma[ch] * inv_std[ch] / count;
        for j in 0..hw {
            d[j] = scale * (count * g[j] - dbeta[ch] - xh[j] * dgamma[ch]);
        }
    }
    (dx, dgamma, dbeta)
}

/// Inference-mode batchnorm with fixed statistics.
pub fn batchnorm_eval(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    ensure!(
        gamma.numel() == c && beta.numel() == c && mean.len() == c && var.len() == c,
        Dimension,
        "batchnorm statistics must have {c} entries"
    );
    let hw = h * w;
    let mut out = x.data().to_vec();
    for (idx, plane) in out.chunks_mut(hw).enumerate() {
        let ch = idx % c;
        let s = gamma.data()[ch] / (var[ch] + eps).sqrt();
        let b = beta.data()[ch] - mean[ch] * s;
        plane.iter_mut().for_each(|v| *v = *v * s + b);
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Probabilities below this are clamped before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

static CLAMPED_LOGS: AtomicU64 = AtomicU64::new(0);

/// Process-wide count of log clamps applied by [`weighted_nll`].
pub fn clamped_log_count() -> u64 {
    CLAMPED_LOGS.load(Ordering::Relaxed)
}

/// Mean over rows of `-w_i * ln(p[i, t_i])` for a row-stochastic `probs: [N, C]`.
pub fn weighted_nll(probs: &Tensor, targets: &[usize], weights: &[f64]) -> Result<f64> {
    let (n, c) = probs.dims2()?;
    ensure!(
        targets.len() == n && weights.len() == n,
        Dimension,
        "{n} rows but {} targets and {} weights",
        targets.len(),
        weights.len()
    );
    let mut total = 0.0;
    for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
        ensure!(t < c, Contract, "target class {t} out of range for {c} classes");
        let p = probs.data()[i * c + t];
        if p < LOG_CLAMP {
            CLAMPED_LOGS.fetch_add(1, Ordering::Relaxed);
            log::warn!("clamped log at row {i}: p(true) = {p:e}");
        }
        total -= w * p.max(LOG_CLAMP).ln();
    }
    Ok(total / n as f64)
}

pub(crate) fn weighted_nll_backward(
    probs: &[f64],
    c: usize,
    targets: &[usize],
    weights: &[f64],
    upstream: f64,
) -> Vec<f64> {
    let n = targets.len();
    let mut dp = vec![0.0; probs.len()];
    for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
        let p = probs[i * c + t];
        if p >= LOG_CLAMP {
            dp[i * c + t] = -upstream * w / (n as f64 * p);
        }
    }
    dp
}
