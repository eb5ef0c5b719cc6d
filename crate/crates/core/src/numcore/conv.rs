//! Convolution kernels (cross-correlation, no kernel flip) lowered to GEMM via im2col.
//!
//! Activations are channel-last. A 2D convolution over `[N, H, W, C]` is the
//! 3D case with a unit time axis, so one geometry type serves both.

use super::gemm::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kt: usize,
    pub kh: usize,
    pub kw: usize,
    pub out_c: usize,
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

fn out_dim(dim: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    if k > dim + 2 * pad {
        return Err(Error::invalid(format!(
            "kernel extent {k} exceeds padded input {}",
            dim + 2 * pad
        )));
    }
    Ok((dim + 2 * pad - k) / stride + 1)
}

impl ConvGeom {
    pub fn out_t(&self) -> usize {
        (self.t + 2 * self.pad[0] - self.kt) / self.stride[0] + 1
    }
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad[1] - self.kh) / self.stride[1] + 1
    }
    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad[2] - self.kw) / self.stride[2] + 1
    }
    fn rows(&self) -> usize {
        self.out_t() * self.out_h() * self.out_w()
    }
    fn cols(&self) -> usize {
        self.kt * self.kh * self.kw * self.c
    }
    fn in_len(&self) -> usize {
        self.t * self.h * self.w * self.c
    }
    fn out_len(&self) -> usize {
        self.rows() * self.out_c
    }

    fn validate(&self) -> Result<()> {
        out_dim(self.t, self.kt, self.stride[0], self.pad[0])?;
        out_dim(self.h, self.kh, self.stride[1], self.pad[1])?;
        out_dim(self.w, self.kw, self.stride[2], self.pad[2])?;
        Ok(())
    }

    /// Geometry of a batched 2D convolution: input `[N,H,W,C]` or `[H,W,C]`,
    /// kernel `[k,k,C,O]`. Returns (batch, geometry).
    pub fn conv2d(
        input: &[usize],
        kernel: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<(usize, Self)> {
        let (n, h, w, c) = match *input {
            [h, w, c] => (1, h, w, c),
            [n, h, w, c] => (n, h, w, c),
            _ => {
                return Err(Error::invalid(format!(
                    "conv2d input must be rank 3 or 4, got {input:?}"
                )))
            }
        };
        let [kh, kw, kc, o] = *kernel else {
            return Err(Error::invalid(format!(
                "conv2d kernel must be rank 4, got {kernel:?}"
            )));
        };
        if kc != c {
            return Err(Error::invalid(format!(
                "conv2d input has {c} channels but kernel expects {kc}"
            )));
        }
        let g = ConvGeom {
            t: 1,
            h,
            w,
            c,
            kt: 1,
            kh,
            kw,
            out_c: o,
            stride: [1, stride, stride],
            pad: [0, pad, pad],
        };
        g.validate()?;
        Ok((n, g))
    }

    /// Geometry of a 3D convolution: input `[T,H,W,C]`, kernel `[kt,k,k,C,O]`.
    pub fn conv3d(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        Self::conv3d_padded(input, kernel, stride, [pad; 3])
    }

    /// Per-axis `(time, row, column)` zero padding.
    pub fn conv3d_padded(
        input: &[usize],
        kernel: &[usize],
        stride: usize,
        pad: [usize; 3],
    ) -> Result<Self> {
        let [t, h, w, c] = *input else {
            return Err(Error::invalid(format!(
                "conv3d input must be rank 4, got {input:?}"
            )));
        };
        let [kt, kh, kw, kc, o] = *kernel else {
            return Err(Error::invalid(format!(
                "conv3d kernel must be rank 5, got {kernel:?}"
            )));
        };
        if kc != c {
            return Err(Error::invalid(format!(
                "conv3d input has {c} channels but kernel expects {kc}"
            )));
        }
        let g = ConvGeom {
            t,
            h,
            w,
            c,
            kt,
            kh,
            kw,
            out_c: o,
            stride: [stride; 3],
            pad,
        };
        g.validate()?;
        Ok(g)
    }

    /// Visit every (row, column-block, input offset) triple of the im2col matrix.
    /// `f(col_offset, Some(input_offset))` for in-bounds taps, `None` for padding.
    fn for_each_tap(&self, mut f: impl FnMut(usize, Option<usize>)) {
        let (ot, oh, ow) = (self.out_t(), self.out_h(), self.out_w());
        let cols = self.cols();
        let mut row = 0;
        for zt in 0..ot {
            for zh in 0..oh {
                for zw in 0..ow {
                    let base = row * cols;
                    let mut tap = 0;
                    for dt in 0..self.kt {
                        let it = (zt * self.stride[0] + dt) as isize - self.pad[0] as isize;
                        for dh in 0..self.kh {
                            let ih = (zh * self.stride[1] + dh) as isize - self.pad[1] as isize;
                            for dw in 0..self.kw {
                                let iw = (zw * self.stride[2] + dw) as isize - self.pad[2] as isize;
                                let inside = it >= 0
                                    && ih >= 0
                                    && iw >= 0
                                    && (it as usize) < self.t
                                    && (ih as usize) < self.h
                                    && (iw as usize) < self.w;
                                let src = inside.then(|| {
                                    ((it as usize * self.h + ih as usize) * self.w + iw as usize)
                                        * self.c
                                });
                                f(base + tap * self.c, src);
                                tap += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn im2col(&self, input: &[f32], cols: &mut [f32]) {
        let c = self.c;
        self.for_each_tap(|dst, src| match src {
            Some(s) => cols[dst..dst + c].copy_from_slice(&input[s..s + c]),
            None => cols[dst..dst + c].fill(0.0),
        });
    }

    fn col2im(&self, cols: &[f32], grad_input: &mut [f32]) {
        let c = self.c;
        self.for_each_tap(|dst, src| {
            if let Some(s) = src {
                for (g, v) in grad_input[s..s + c].iter_mut().zip(&cols[dst..dst + c]) {
                    *g += v;
                }
            }
        });
    }

    /// Forward pass over `batch` stacked inputs.
    pub fn forward(&self, batch: usize, input: &[f32], kernel: &[f32]) -> Vec<f32> {
        let (rows, cols) = (self.rows(), self.cols());
        let mut buf = vec![0.0; rows * cols];
        let mut out = vec![0.0; batch * self.out_len()];
        for (x, y) in input
            .chunks_exact(self.in_len())
            .zip(out.chunks_exact_mut(self.out_len()))
        {
            self.im2col(x, &mut buf);
            gemm(rows, cols, self.out_c, &buf, false, kernel, false, 0.0, y);
        }
        out
    }

    /// Gradients w.r.t. kernel and (optionally) input.
    pub fn backward(
        &self,
        batch: usize,
        input: &[f32],
        kernel: &[f32],
        grad_out: &[f32],
        want_input: bool,
    ) -> (Vec<f32>, Option<Vec<f32>>) {
        let (rows, cols) = (self.rows(), self.cols());
        let mut buf = vec![0.0; rows * cols];
        let mut grad_kernel = vec![0.0; cols * self.out_c];
        let mut grad_input = want_input.then(|| vec![0.0; batch * self.in_len()]);
        let mut dcols = if want_input {
            vec![0.0; rows * cols]
        } else {
            Vec::new()
        };
        for b in 0..batch {
            let x = &input[b * self.in_len()..(b + 1) * self.in_len()];
            let gy = &grad_out[b * self.out_len()..(b + 1) * self.out_len()];
            self.im2col(x, &mut buf);
            gemm(
                cols,
                rows,
                self.out_c,
                &buf,
                true,
                gy,
                false,
                1.0,
                &mut grad_kernel,
            );
            if let Some(gx) = grad_input.as_mut() {
                gemm(
                    rows, self.out_c, cols, gy, false, kernel, true, 0.0, &mut dcols,
                );
                self.col2im(&dcols, &mut gx[b * self.in_len()..(b + 1) * self.in_len()]);
            }
        }
        (grad_kernel, grad_input)
    }

    pub fn out_shape_2d(&self, batch: Option<usize>) -> Vec<usize> {
        let mut s = Vec::with_capacity(4);
        if let Some(n) = batch {
            s.push(n);
        }
        s.extend([self.out_h(), self.out_w(), self.out_c]);
        s
    }

    pub fn out_shape_3d(&self) -> Vec<usize> {
        vec![self.out_t(), self.out_h(), self.out_w(), self.out_c]
    }
}

/// 2D cross-correlation. Input `[H,W,Cin]` (or batched `[N,H,W,Cin]`), kernels `[k,k,Cin,Cout]`.
pub fn conv2d(input: &Tensor, kernels: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (n, g) = ConvGeom::conv2d(input.shape(), kernels.shape(), stride, padding)?;
    let out = g.forward(n, input.data(), kernels.data());
    let batch = (input.rank() == 4).then_some(n);
    Tensor::new(g.out_shape_2d(batch), out)
}

/// 3D cross-correlation. Input `[T,H,W,Cin]`, kernels `[kt,k,k,Cin,Cout]`.
pub fn conv3d(input: &Tensor, kernels: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = ConvGeom::conv3d(input.shape(), kernels.shape(), stride, padding)?;
    let out = g.forward(1, input.data(), kernels.data());
    Tensor::new(g.out_shape_3d(), out)
}
