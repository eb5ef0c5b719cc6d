//! Forward kernels for the non-convolution layers, plus the backward helpers
//! the autograd tape calls into.

use super::gemm::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

pub fn activation(input: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Relu => input.map(|v| v.max(0.0)),
        Activation::Tanh => input.map(f32::tanh),
    }
}

/// Split a channel-last shape into (leading batch dims, H, W, C); rank 3 gets batch 1.
fn spatial_dims(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [h, w, c] => Ok((1, h, w, c)),
        [n, h, w, c] => Ok((n, h, w, c)),
        _ => Err(Error::invalid(format!(
            "expected [H,W,C] or [N,H,W,C], got {shape:?}"
        ))),
    }
}

/// Source coordinate and blend weights for align-corners resampling of one axis.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    (0..dst)
        .map(|i| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            let pos = (i * (src - 1)) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, (pos - lo as f64) as f32)
        })
        .collect()
}

/// Bilinear resize with align-corners sampling over a channel-last tensor.
pub fn resize_bilinear(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, h, w, c) = spatial_dims(input.shape())?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("empty resize target"));
    }
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let src = input.data();
    let mut out = vec![0.0f32; n * out_h * out_w * c];
    for b in 0..n {
        let base_in = b * h * w * c;
        let base_out = b * out_h * out_w * c;
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let o = base_out + (oy * out_w + ox) * c;
                let p00 = base_in + (y0 * w + x0) * c;
                let p01 = base_in + (y0 * w + x1) * c;
                let p10 = base_in + (y1 * w + x0) * c;
                let p11 = base_in + (y1 * w + x1) * c;
                for ch in 0..c {
                    let top = src[p00 + ch] * (1.0 - wx) + src[p01 + ch] * wx;
                    let bot = src[p10 + ch] * (1.0 - wx) + src[p11 + ch] * wx;
                    out[o + ch] = top * (1.0 - wy) + bot * wy;
                }
            }
        }
    }
    let mut shape = input.shape().to_vec();
    let r = shape.len();
    shape[r - 3] = out_h;
    shape[r - 2] = out_w;
    Tensor::new(shape, out)
}

pub(crate) fn resize_bilinear_backward(in_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let (n, h, w, c) = spatial_dims(in_shape)?;
    let (_, out_h, out_w, _) = spatial_dims(grad_out.shape())?;
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let g = grad_out.data();
    let mut gi = vec![0.0f32; n * h * w * c];
    for b in 0..n {
        let base_in = b * h * w * c;
        let base_out = b * out_h * out_w * c;
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let o = base_out + (oy * out_w + ox) * c;
                let taps = [
                    (base_in + (y0 * w + x0) * c, (1.0 - wy) * (1.0 - wx)),
                    (base_in + (y0 * w + x1) * c, (1.0 - wy) * wx),
                    (base_in + (y1 * w + x0) * c, wy * (1.0 - wx)),
                    (base_in + (y1 * w + x1) * c, wy * wx),
                ];
                for (p, k) in taps {
                    for ch in 0..c {
                        gi[p + ch] += g[o + ch] * k;
                    }
                }
            }
        }
    }
    Tensor::new(in_shape.to_vec(), gi)
}

/// Doubles both spatial dimensions with align-corners bilinear interpolation.
pub fn bilinear_upsample2x(input: &Tensor) -> Result<Tensor> {
    let (_, h, w, _) = spatial_dims(input.shape())?;
    resize_bilinear(input, 2 * h, 2 * w)
}

/// Per-channel statistics of a channel-last tensor, accumulated in `f64`.
pub(crate) fn channel_stats(input: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let c = input.channels();
    let count = (input.len() / c) as f64;
    let mut mean = vec![0.0f64; c];
    for row in input.data().chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0f64; c];
    for row in input.data().chunks_exact(c) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v as f64 - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= count);
    (mean, var)
}

/// Intermediate results of a batch-norm forward pass needed for backward.
#[derive(Clone, Debug)]
pub(crate) struct BnCache {
    pub xhat: Vec<f32>,
    pub inv_std: Vec<f32>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

/// Batch normalization over every axis except the trailing channel axis.
///
/// In `Infer` mode `running` must hold the (mean, variance) to normalize with.
pub fn batch_norm(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mode: BnMode,
    eps: f32,
    running: Option<(&Tensor, &Tensor)>,
) -> Result<Tensor> {
    Ok(batch_norm_cached(input, gamma, beta, mode, eps, running)?.0)
}

pub(crate) fn batch_norm_cached(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mode: BnMode,
    eps: f32,
    running: Option<(&Tensor, &Tensor)>,
) -> Result<(Tensor, BnCache)> {
    let c = input.channels();
    gamma.expect_shape(&[c])?;
    beta.expect_shape(&[c])?;
    let (mean, var) = match mode {
        BnMode::Train => channel_stats(input),
        BnMode::Infer => {
            let (rm, rv) = running
                .ok_or_else(|| Error::invalid("inference batch norm needs running statistics"))?;
            rm.expect_shape(&[c])?;
            rv.expect_shape(&[c])?;
            (
                rm.data().iter().map(|&v| v as f64).collect(),
                rv.data().iter().map(|&v| v as f64).collect(),
            )
        }
    };
    let inv_std: Vec<f32> = var
        .iter()
        .map(|&v| (1.0 / (v + eps as f64).sqrt()) as f32)
        .collect();
    let mut xhat = vec![0.0f32; input.len()];
    let mut out = vec![0.0f32; input.len()];
    for ((row, xr), orow) in input
        .data()
        .chunks_exact(c)
        .zip(xhat.chunks_exact_mut(c))
        .zip(out.chunks_exact_mut(c))
    {
        for ch in 0..c {
            let xh = ((row[ch] as f64 - mean[ch]) as f32) * inv_std[ch];
            xr[ch] = xh;
            orow[ch] = gamma.data()[ch] * xh + beta.data()[ch];
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), out)?,
        BnCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    ))
}

/// Returns (grad_input, grad_gamma, grad_beta).
pub(crate) fn batch_norm_backward(
    cache: &BnCache,
    gamma: &[f32],
    grad_out: &[f32],
    mode: BnMode,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let c = gamma.len();
    let count = (grad_out.len() / c) as f64;
    let mut sum_dy = vec![0.0f64; c];
    let mut sum_dy_xhat = vec![0.0f64; c];
    for (dy, xh) in grad_out.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
        for ch in 0..c {
            sum_dy[ch] += dy[ch] as f64;
            sum_dy_xhat[ch] += (dy[ch] * xh[ch]) as f64;
        }
    }
    let mut gx = vec![0.0f32; grad_out.len()];
    for ((g, dy), xh) in gx
        .chunks_exact_mut(c)
        .zip(grad_out.chunks_exact(c))
        .zip(cache.xhat.chunks_exact(c))
    {
        for ch in 0..c {
            let scale = gamma[ch] * cache.inv_std[ch];
            g[ch] = match mode {
                BnMode::Train => {
                    let centered = dy[ch] as f64
                        - sum_dy[ch] / count
                        - xh[ch] as f64 * sum_dy_xhat[ch] / count;
                    (scale as f64 * centered) as f32
                }
                BnMode::Infer => scale * dy[ch],
            };
        }
    }
    (
        gx,
        sum_dy_xhat.iter().map(|&v| v as f32).collect(),
        sum_dy.iter().map(|&v| v as f32).collect(),
    )
}

/// Per-location maximum over the trailing channel axis; result keeps a unit channel.
pub fn channel_max(input: &Tensor) -> Tensor {
    channel_max_indexed(input).0
}

pub(crate) fn channel_max_indexed(input: &Tensor) -> (Tensor, Vec<u32>) {
    let c = input.channels();
    let mut out = Vec::with_capacity(input.len() / c);
    let mut arg = Vec::with_capacity(input.len() / c);
    for row in input.data().chunks_exact(c) {
        let (mut best, mut bi) = (row[0], 0u32);
        for (i, &v) in row.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                bi = i as u32;
            }
        }
        out.push(best);
        arg.push(bi);
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = 1;
    (Tensor::new(shape, out).expect("shape matches"), arg)
}

fn dense_dims(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    let [n, m] = *weights.shape() else {
        return Err(Error::invalid(format!(
            "dense weights must be [n,m], got {:?}",
            weights.shape()
        )));
    };
    bias.expect_shape(&[m])?;
    let rows = match *input.shape() {
        [k] if k == n => 1,
        [b, k] if k == n => b,
        _ => {
            return Err(Error::ShapeMismatch {
                expected: vec![n],
                actual: input.shape().to_vec(),
            })
        }
    };
    Ok((rows, n, m))
}

/// Affine map `x·W + b`. Input `[n]` or batched `[B,n]`, weights `[n,m]`.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (rows, n, m) = dense_dims(input, weights, bias)?;
    let mut out: Vec<f32> = bias.data().iter().copied().cycle().take(rows * m).collect();
    gemm(
        rows,
        n,
        m,
        input.data(),
        false,
        weights.data(),
        false,
        1.0,
        &mut out,
    );
    let shape = if input.rank() == 1 {
        vec![m]
    } else {
        vec![rows, m]
    };
    Tensor::new(shape, out)
}

/// Returns (grad_input, grad_weights, grad_bias).
pub(crate) fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    want_input: bool,
) -> (Option<Vec<f32>>, Vec<f32>, Vec<f32>) {
    let [n, m] = *weights.shape() else {
        unreachable!()
    };
    let rows = input.len() / n;
    let mut gw = vec![0.0f32; n * m];
    gemm(
        n,
        rows,
        m,
        input.data(),
        true,
        grad_out.data(),
        false,
        0.0,
        &mut gw,
    );
    let mut gb = vec![0.0f32; m];
    for row in grad_out.data().chunks_exact(m) {
        for (g, v) in gb.iter_mut().zip(row) {
            *g += v;
        }
    }
    let gx = want_input.then(|| {
        let mut gx = vec![0.0f32; rows * n];
        gemm(
            rows,
            m,
            n,
            grad_out.data(),
            false,
            weights.data(),
            true,
            0.0,
            &mut gx,
        );
        gx
    });
    (gx, gw, gb)
}
