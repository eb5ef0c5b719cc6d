//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in creation
//! order; [`Graph::backward`] walks the tape in reverse. Nodes that cannot
//! reach a parameter are never differentiated.

use std::collections::HashMap;

use super::conv::ConvGeom;
use super::ops::{self, BnCache, BnMode};
use super::optim::{Grads, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        batch: usize,
        geom: ConvGeom,
    },
    AddBias {
        x: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Resize {
        x: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode,
        cache: BnCache,
    },
    Relu {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    ChannelMax {
        x: Var,
        arg: Vec<u32>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Reshape {
        x: Var,
    },
    Sum {
        x: Var,
    },
    WeightedSqErr {
        x: Var,
        target: Tensor,
        weights: Tensor,
    },
    MeanHinge {
        s: Var,
        labels: Vec<f32>,
    },
    GlobalNorm {
        xs: Vec<Var>,
    },
    Scale {
        x: Var,
        k: f32,
    },
    EdgePad {
        x: Var,
        pad: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

/// Gradients of a scalar w.r.t. every node that needed one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn accumulate(slot: &mut Option<Tensor>, shape: &[usize], delta: Vec<f32>) {
    match slot {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(delta) {
                *a += b;
            }
        }
        None => *slot = Some(Tensor::new(shape.to_vec(), delta).expect("gradient shape")),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input; never differentiated.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf not tied to a parameter (used for gradient checks).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Load a named parameter; repeated lookups return the same node.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = params.require(name)?.clone();
        let v = self.push(t, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (batch, geom) =
            ConvGeom::conv2d(self.value(x).shape(), self.value(w).shape(), stride, pad)?;
        let out = geom.forward(batch, self.value(x).data(), self.value(w).data());
        let batched = (self.value(x).rank() == 4).then_some(batch);
        let t = Tensor::new(geom.out_shape_2d(batched), out)?;
        let ng = self.needs(&[x, w]);
        Ok(self.push(t, Op::Conv { x, w, batch, geom }, ng))
    }

    pub fn conv3d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = ConvGeom::conv3d(self.value(x).shape(), self.value(w).shape(), stride, pad)?;
        let out = geom.forward(1, self.value(x).data(), self.value(w).data());
        let t = Tensor::new(geom.out_shape_3d(), out)?;
        let ng = self.needs(&[x, w]);
        Ok(self.push(
            t,
            Op::Conv {
                x,
                w,
                batch: 1,
                geom,
            },
            ng,
        ))
    }

    /// 3D convolution with separate zero padding along time, rows and columns.
    pub fn conv3d_padded(&mut self, x: Var, w: Var, stride: usize, pad: [usize; 3]) -> Result<Var> {
        let geom =
            ConvGeom::conv3d_padded(self.value(x).shape(), self.value(w).shape(), stride, pad)?;
        let out = geom.forward(1, self.value(x).data(), self.value(w).data());
        let t = Tensor::new(geom.out_shape_3d(), out)?;
        let ng = self.needs(&[x, w]);
        Ok(self.push(
            t,
            Op::Conv {
                x,
                w,
                batch: 1,
                geom,
            },
            ng,
        ))
    }

    /// Repeat the first and last slices along the leading axis `pad` times each.
    pub fn edge_pad(&mut self, x: Var, pad: usize) -> Result<Var> {
        let v = self.value(x);
        if v.rank() < 1 || v.shape()[0] == 0 {
            return Err(Error::invalid(
                "edge padding needs a non-empty leading axis",
            ));
        }
        let n = v.shape()[0];
        let slice = v.len() / n;
        let mut data = Vec::with_capacity((n + 2 * pad) * slice);
        for i in 0..n + 2 * pad {
            let src = i.saturating_sub(pad).min(n - 1);
            data.extend_from_slice(&v.data()[src * slice..(src + 1) * slice]);
        }
        let mut shape = v.shape().to_vec();
        shape[0] = n + 2 * pad;
        let t = Tensor::new(shape, data)?;
        let ng = self.needs(&[x]);
        Ok(self.push(t, Op::EdgePad { x, pad }, ng))
    }

    /// Adds a per-channel bias along the trailing axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = self.value(x).channels();
        self.value(b).expect_shape(&[c])?;
        let bias = self.value(b).data().to_vec();
        let mut t = self.value(x).clone();
        for row in t.data_mut().chunks_exact_mut(c) {
            for (v, bv) in row.iter_mut().zip(&bias) {
                *v += bv;
            }
        }
        let ng = self.needs(&[x, b]);
        Ok(self.push(t, Op::AddBias { x, b }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(t, Op::Add { a, b }, ng))
    }

    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let t = ops::resize_bilinear(self.value(x), out_h, out_w)?;
        let ng = self.needs(&[x]);
        Ok(self.push(t, Op::Resize { x }, ng))
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape();
        let r = s.len();
        if r < 3 {
            return Err(Error::invalid("upsample needs a spatial tensor"));
        }
        let (h, w) = (s[r - 3], s[r - 2]);
        self.resize_bilinear(x, 2 * h, 2 * w)
    }

    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode,
        eps: f32,
        running: Option<(&Tensor, &Tensor)>,
    ) -> Result<Var> {
        let (t, cache) = ops::batch_norm_cached(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            mode,
            eps,
            running,
        )?;
        let ng = self.needs(&[x, gamma, beta]);
        let v = self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mode,
                cache,
            },
            ng,
        );
        Ok(v)
    }

    /// Batch mean and unbiased variance seen by a train-mode batch-norm node.
    pub fn batch_stats(&self, v: Var) -> Option<(Vec<f32>, Vec<f32>)> {
        match &self.nodes[v.0].op {
            Op::BatchNorm { cache, .. } => {
                let c = cache.batch_mean.len();
                let n = (self.nodes[v.0].value.len() / c) as f64;
                let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                Some((
                    cache.batch_mean.iter().map(|&m| m as f32).collect(),
                    cache
                        .batch_var
                        .iter()
                        .map(|&s| (s * unbias) as f32)
                        .collect(),
                ))
            }
            _ => None,
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = ops::activation(self.value(x), ops::Activation::Relu);
        let ng = self.needs(&[x]);
        self.push(t, Op::Relu { x }, ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = ops::activation(self.value(x), ops::Activation::Tanh);
        let ng = self.needs(&[x]);
        self.push(t, Op::Tanh { x }, ng)
    }

    pub fn channel_max(&mut self, x: Var) -> Var {
        let (t, arg) = ops::channel_max_indexed(self.value(x));
        let ng = self.needs(&[x]);
        self.push(t, Op::ChannelMax { x, arg }, ng)
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let t = ops::dense(self.value(x), self.value(w), self.value(b))?;
        let ng = self.needs(&[x, w, b]);
        Ok(self.push(t, Op::Dense { x, w, b }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        let ng = self.needs(&[x]);
        Ok(self.push(t, Op::Reshape { x }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|&v| v as f64).sum::<f64>();
        let ng = self.needs(&[x]);
        self.push(Tensor::scalar(s as f32), Op::Sum { x }, ng)
    }

    pub fn scale(&mut self, x: Var, k: f32) -> Var {
        let t = self.value(x).map(|v| v * k);
        let ng = self.needs(&[x]);
        self.push(t, Op::Scale { x, k }, ng)
    }

    /// `Σ weights·(x − target)²` with constant target and weights.
    pub fn weighted_sq_err(&mut self, x: Var, target: Tensor, weights: Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != target.len() || xv.len() != weights.len() {
            return Err(Error::ShapeMismatch {
                expected: xv.shape().to_vec(),
                actual: target.shape().to_vec(),
            });
        }
        let s: f64 = xv
            .data()
            .iter()
            .zip(target.data())
            .zip(weights.data())
            .map(|((&p, &t), &w)| {
                let d = (p - t) as f64;
                w as f64 * d * d
            })
            .sum();
        let ng = self.needs(&[x]);
        Ok(self.push(
            Tensor::scalar(s as f32),
            Op::WeightedSqErr { x, target, weights },
            ng,
        ))
    }

    /// `(1/B) Σ max(0, 1 − z·s)` over a `[B]` or `[B,1]` score tensor.
    pub fn mean_hinge(&mut self, s: Var, labels: &[f32]) -> Result<Var> {
        let sv = self.value(s);
        if sv.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} scores but {} labels",
                sv.len(),
                labels.len()
            )));
        }
        let total: f32 = sv
            .data()
            .iter()
            .zip(labels)
            .map(|(&x, &z)| (1.0 - z * x).max(0.0))
            .sum();
        let t = Tensor::scalar(total / labels.len() as f32);
        let ng = self.needs(&[s]);
        Ok(self.push(
            t,
            Op::MeanHinge {
                s,
                labels: labels.to_vec(),
            },
            ng,
        ))
    }

    /// Euclidean norm of all listed tensors taken together.
    pub fn global_norm(&mut self, xs: &[Var]) -> Var {
        let sq: f64 = xs
            .iter()
            .flat_map(|v| self.value(*v).data())
            .map(|&x| x as f64 * x as f64)
            .sum();
        let ng = self.needs(xs);
        self.push(
            Tensor::scalar(sq.sqrt() as f32),
            Op::GlobalNorm { xs: xs.to_vec() },
            ng,
        )
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::invalid(format!(
                "loss must be a scalar, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let need = |v: Var| self.nodes[v.0].needs_grad;
            let shape_of = |v: Var| self.nodes[v.0].value.shape().to_vec();
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv { x, w, batch, geom } => {
                    let (gw, gx) = geom.backward(
                        *batch,
                        self.value(*x).data(),
                        self.value(*w).data(),
                        g.data(),
                        need(*x),
                    );
                    if need(*w) {
                        accumulate(&mut grads[w.0], &shape_of(*w), gw);
                    }
                    if let Some(gx) = gx {
                        accumulate(&mut grads[x.0], &shape_of(*x), gx);
                    }
                }
                Op::AddBias { x, b } => {
                    if need(*b) {
                        let c = self.value(*b).len();
                        let mut gb = vec![0.0f32; c];
                        for row in g.data().chunks_exact(c) {
                            for (a, v) in gb.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                        accumulate(&mut grads[b.0], &[c], gb);
                    }
                    if need(*x) {
                        accumulate(&mut grads[x.0], &shape_of(*x), g.data().to_vec());
                    }
                }
                Op::Add { a, b } => {
                    for v in [*a, *b] {
                        if need(v) {
                            accumulate(&mut grads[v.0], &shape_of(v), g.data().to_vec());
                        }
                    }
                }
                Op::Resize { x } => {
                    if need(*x) {
                        let gx = ops::resize_bilinear_backward(self.value(*x).shape(), &g)?;
                        accumulate(&mut grads[x.0], &shape_of(*x), gx.into_data());
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    mode,
                    cache,
                } => {
                    let (gx, gg, gb) =
                        ops::batch_norm_backward(cache, self.value(*gamma).data(), g.data(), *mode);
                    if need(*x) {
                        accumulate(&mut grads[x.0], &shape_of(*x), gx);
                    }
                    if need(*gamma) {
                        accumulate(&mut grads[gamma.0], &shape_of(*gamma), gg);
                    }
                    if need(*beta) {
                        accumulate(&mut grads[beta.0], &shape_of(*beta), gb);
                    }
                }
                Op::Relu { x } => {
                    if need(*x) {
                        let gx = g
                            .data()
                            .iter()
                            .zip(node.value.data())
                            .map(|(&d, &y)| if y > 0.0 { d } else { 0.0 })
                            .collect();
                        accumulate(&mut grads[x.0], &shape_of(*x), gx);
                    }
                }
                Op::Tanh { x } => {
                    if need(*x) {
                        let gx = g
                            .data()
                            .iter()
                            .zip(node.value.data())
                            .map(|(&d, &y)| d * (1.0 - y * y))
                            .collect();
                        accumulate(&mut grads[x.0], &shape_of(*x), gx);
                    }
                }
                Op::ChannelMax { x, arg } => {
                    if need(*x) {
                        let c = self.value(*x).channels();
                        let mut gx = vec![0.0f32; self.value(*x).len()];
                        for (loc, (&d, &a)) in g.data().iter().zip(arg).enumerate() {
                            gx[loc * c + a as usize] = d;
                        }
                        accumulate(&mut grads[x.0], &shape_of(*x), gx);
                    }
                }
                Op::Dense { x, w, b } => {
                    let (gx, gw, gb) =
                        ops::dense_backward(self.value(*x), self.value(*w), &g, need(*x));
                    if need(*w) {
                        accumulate(&mut grads[w.0], &shape_of(*w), gw);
                    }
                    if need(*b) {
                        accumulate(&mut grads[b.0], &shape_of(*b), gb);
                    }
                    if let Some(gx) = gx {
                        accumulate(&mut grads[x.0], &shape_of(*x), gx);
                    }
                }
                Op::Reshape { x } => {
                    if need(*x) {
                        accumulate(&mut grads[x.0], &shape_of(*x), g.into_data());
                    }
                }
                Op::Sum { x } => {
                    if need(*x) {
                        let n = self.value(*x).len();
                        accumulate(&mut grads[x.0], &shape_of(*x), vec![g.item(); n]);
                    }
                }
                Op::EdgePad { x, pad } => {
                    if need(*x) {
                        let shape = shape_of(*x);
                        let n = shape[0];
                        let slice = g.len() / (n + 2 * pad);
                        let mut gx = vec![0.0f32; n * slice];
                        for (i, chunk) in g.data().chunks_exact(slice).enumerate() {
                            let dst = i.saturating_sub(*pad).min(n - 1);
                            for (a, b) in gx[dst * slice..(dst + 1) * slice].iter_mut().zip(chunk) {
                                *a += b;
                            }
                        }
                        accumulate(&mut grads[x.0], &shape, gx);
                    }
                }
                Op::Scale { x, k } => {
                    if need(*x) {
                        let gx = g.data().iter().map(|&d| d * k).collect();
                        accumulate(&mut grads[x.0], &shape_of(*x), gx);
                    }
                }
                Op::WeightedSqErr { x, target, weights } => {
                    if need(*x) {
                        let up = g.item();
                        let gx = self
                            .value(*x)
                            .data()
                            .iter()
                            .zip(target.data())
                            .zip(weights.data())
                            .map(|((&p, &t), &w)| up * 2.0 * w * (p - t))
                            .collect();
                        accumulate(&mut grads[x.0], &shape_of(*x), gx);
                    }
                }
                Op::MeanHinge { s, labels } => {
                    if need(*s) {
                        let k = g.item() / labels.len() as f32;
                        let gs = self
                            .value(*s)
                            .data()
                            .iter()
                            .zip(labels)
                            .map(|(&x, &z)| if 1.0 - z * x > 0.0 { -z * k } else { 0.0 })
                            .collect();
                        accumulate(&mut grads[s.0], &shape_of(*s), gs);
                    }
                }
                Op::GlobalNorm { xs } => {
                    let norm = node.value.item();
                    if norm > 0.0 {
                        let k = g.item() / norm;
                        for v in xs {
                            if need(*v) {
                                let gx = self.value(*v).data().iter().map(|&p| p * k).collect();
                                accumulate(&mut grads[v.0], &shape_of(*v), gx);
                            }
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Gradient of `loss` w.r.t. every parameter in `params`; unreferenced parameters get zeros.
    pub fn param_grads(&self, loss: Var, params: &ParamSet) -> Result<Grads> {
        let g = self.backward(loss)?;
        Ok(params
            .iter()
            .map(|(name, t)| {
                let grad = self
                    .params
                    .get(name)
                    .and_then(|v| g.wrt(*v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()));
                (name.to_string(), grad)
            })
            .collect())
    }
}
