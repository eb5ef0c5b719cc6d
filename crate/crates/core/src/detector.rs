//! GOP-level forgery classifier over paired visual and wireless JHM sequences.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csi2pose::config_path;
use crate::error::{Error, Result};
use crate::evalkit::{load_tensors, read_json, save_tensors, write_json};
use crate::numcore::{channel_max, rmsprop_step, Graph, OptimConfig, ParamSet, Tensor, Var};

const KERNEL: usize = 5;
const STRIDE: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub height: usize,
    pub width: usize,
    pub gop_size: usize,
    pub conv_channels: [usize; 2],
    pub dense_widths: [usize; 2],
    /// Weight of the parameter-norm regularizer.
    pub theta: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub optim: OptimConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            height: 64,
            width: 64,
            gop_size: 12,
            conv_channels: [64, 32],
            dense_widths: [672, 256],
            theta: 1e-3,
            batch_size: 32,
            epochs: 5,
            optim: OptimConfig {
                learning_rate: 1e-4,
                ..OptimConfig::default()
            },
        }
    }
}

fn conv_out(n: usize) -> usize {
    (n - KERNEL) / STRIDE + 1
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 2 * KERNEL + STRIDE || self.width < 2 * KERNEL + STRIDE {
            return Err(Error::Config(format!(
                "detector input {}×{} is too small",
                self.height, self.width
            )));
        }
        if self.gop_size == 0
            || self.batch_size == 0
            || self.conv_channels.contains(&0)
            || self.dense_widths.contains(&0)
        {
            return Err(Error::Config("detector sizes must be positive".into()));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(Error::Config(format!(
                "theta must be ≥ 0, got {}",
                self.theta
            )));
        }
        self.optim.validate()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.height, self.width, 2 * self.gop_size]
    }

    /// Length of the flattened second convolution output.
    pub fn flatten_len(&self) -> usize {
        conv_out(conv_out(self.height)) * conv_out(conv_out(self.width)) * self.conv_channels[1]
    }
}

/// Channel-max each JHM and stack visual planes, then wireless planes: `[H, W, 2M]`.
pub fn compact_jhms(visual: &[Tensor], wireless: &[Tensor]) -> Result<Tensor> {
    if visual.len() != wireless.len() {
        return Err(Error::invalid(format!(
            "{} visual JHMs but {} wireless JHMs",
            visual.len(),
            wireless.len()
        )));
    }
    let first = visual
        .first()
        .ok_or_else(|| Error::invalid("empty JHM sequence"))?;
    if first.rank() != 3 {
        return Err(Error::invalid(format!(
            "JHM must be [H,W,J], got {:?}",
            first.shape()
        )));
    }
    let (h, w) = (first.shape()[0], first.shape()[1]);
    let planes: Vec<Tensor> = visual
        .iter()
        .chain(wireless)
        .map(|t| {
            t.expect_shape(first.shape())?;
            Ok(channel_max(t))
        })
        .collect::<Result<_>>()?;
    let depth = planes.len();
    let mut out = vec![0.0f32; h * w * depth];
    for (d, p) in planes.iter().enumerate() {
        for (px, &v) in p.data().iter().enumerate() {
            out[px * depth + d] = v;
        }
    }
    Tensor::new([h, w, depth], out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub score: f32,
    /// `+1` forged, `−1` authentic.
    pub label: i8,
}

/// Forged iff `s > 0`.
pub fn decide(score: f32) -> Decision {
    Decision {
        score,
        label: if score > 0.0 { 1 } else { -1 },
    }
}

/// Per-sample hinge `max(0, 1 − z·s)`.
pub fn hinge(z: f32, s: f32) -> f32 {
    (1.0 - z * s).max(0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorModel {
    pub config: DetectorConfig,
    pub params: ParamSet,
}

const PARAM_ORDER: [&str; 10] = [
    "conv0.w", "conv0.b", "conv1.w", "conv1.b", "dense0.w", "dense0.b", "dense1.w", "dense1.b",
    "out.w", "out.b",
];

impl DetectorModel {
    /// Weights start at `±1/√fan_in`; He-scaled weights saturate the tanh output
    /// within a few RMSprop steps and the hinge gradient then vanishes.
    pub fn init(config: DetectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let [c0, c1] = config.conv_channels;
        let [d0, d1] = config.dense_widths;
        let cin = 2 * config.gop_size;
        let k2 = KERNEL * KERNEL;
        p.init_fan_in_uniform("conv0.w", &[KERNEL, KERNEL, cin, c0], k2 * cin, &mut rng);
        p.insert("conv0.b", Tensor::zeros([c0]));
        p.init_fan_in_uniform("conv1.w", &[KERNEL, KERNEL, c0, c1], k2 * c0, &mut rng);
        p.insert("conv1.b", Tensor::zeros([c1]));
        let flat = config.flatten_len();
        for (name, n, m) in [("dense0", flat, d0), ("dense1", d0, d1), ("out", d1, 1)] {
            p.init_fan_in_uniform(&format!("{name}.w"), &[n, m], n, &mut rng);
            p.insert(format!("{name}.b"), Tensor::zeros([m]));
        }
        Ok(DetectorModel { config, params: p })
    }

    /// Scores `[B, 1]` for a batch `[B, H, W, 2M]`.
    fn scores_graph(&self, g: &mut Graph, batch: Var) -> Result<Var> {
        let p: Vec<Var> = PARAM_ORDER
            .iter()
            .map(|n| g.param(&self.params, n))
            .collect::<Result<_>>()?;
        let b = g.value(batch).shape()[0];
        let mut x = batch;
        for i in 0..2 {
            let y = g.conv2d(x, p[2 * i], STRIDE, 0)?;
            let y = g.add_bias(y, p[2 * i + 1])?;
            x = g.relu(y);
        }
        x = g.reshape(x, &[b, self.config.flatten_len()])?;
        for i in 2..5 {
            x = g.dense(x, p[2 * i], p[2 * i + 1])?;
            if i < 4 {
                x = g.relu(x);
            }
        }
        Ok(g.tanh(x))
    }

    fn batch_tensor(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let shape = self.config.input_shape();
        for t in inputs {
            t.expect_shape(&shape)?;
        }
        let owned: Vec<Tensor> = inputs.iter().map(|t| (*t).clone()).collect();
        Tensor::stack(&owned)
    }

    /// Forgery score `s ∈ [−1, 1]` of one compacted JHM tensor.
    pub fn detect(&self, compacted: &Tensor) -> Result<f32> {
        Ok(self.detect_batch(&[compacted])?[0])
    }

    pub fn detect_batch(&self, inputs: &[&Tensor]) -> Result<Vec<f32>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let x = g.input(self.batch_tensor(inputs)?);
        let s = self.scores_graph(&mut g, x)?;
        Ok(g.value(s).data().to_vec())
    }

    /// Batch objective `(1/Y)Σ hinge + (θ/2Y)‖F_D‖₂` and its graph node.
    fn objective(&self, g: &mut Graph, inputs: &[&Tensor], labels: &[f32]) -> Result<Var> {
        let x = g.input(self.batch_tensor(inputs)?);
        let s = self.scores_graph(g, x)?;
        let h = g.mean_hinge(s, labels)?;
        if self.config.theta == 0.0 {
            return Ok(h);
        }
        let p: Vec<Var> = PARAM_ORDER
            .iter()
            .map(|n| g.param(&self.params, n))
            .collect::<Result<_>>()?;
        let norm = g.global_norm(&p);
        let reg = g.scale(norm, self.config.theta / (2.0 * labels.len() as f32));
        g.add(h, reg)
    }

    pub fn loss(&self, inputs: &[&Tensor], labels: &[i8]) -> Result<f64> {
        let z: Vec<f32> = labels.iter().map(|&l| l as f32).collect();
        let mut g = Graph::new();
        let l = self.objective(&mut g, inputs, &z)?;
        Ok(g.value(l).item() as f64)
    }

    /// One RMSprop step on a batch; returns the objective before the update.
    pub fn train_step(
        &mut self,
        inputs: &[&Tensor],
        labels: &[i8],
        optim: &OptimConfig,
    ) -> Result<f64> {
        let z: Vec<f32> = labels.iter().map(|&l| l as f32).collect();
        let mut g = Graph::new();
        let l = self.objective(&mut g, inputs, &z)?;
        let grads = g.param_grads(l, &self.params)?;
        rmsprop_step(&mut self.params, &grads, optim)?;
        Ok(g.value(l).item() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_tensors(path, &self.params.to_named())?;
        write_json(&config_path(path), &self.config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config: DetectorConfig = read_json(&config_path(path))?;
        let params = ParamSet::from_named(load_tensors(path)?);
        if !DetectorModel::init(config.clone(), 0)?
            .params
            .same_layout(&params)
        {
            return Err(Error::Format(format!(
                "{} does not match its configuration",
                path.display()
            )));
        }
        Ok(DetectorModel { config, params })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorEpoch {
    pub epoch: usize,
    pub learning_rate: f32,
    /// Mean batch objective over the epoch.
    pub mean_loss: f64,
    pub seconds: f64,
}

/// Train the detector on compacted JHM tensors with labels in `{−1, +1}`.
pub fn train_detector(
    inputs: &[Tensor],
    labels: &[i8],
    config: &DetectorConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&DetectorEpoch),
) -> Result<(DetectorModel, Vec<DetectorEpoch>)> {
    if inputs.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} inputs but {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|l| !matches!(l, -1 | 1)) {
        return Err(Error::invalid(format!("label {l} is not ±1")));
    }
    if !(labels.contains(&1) && labels.contains(&-1)) {
        return Err(Error::Config(
            "detector training needs both authentic and forged samples".into(),
        ));
    }
    let mut model = DetectorModel::init(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1b5_4a32_d192_ed03);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut reports = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let optim = config.optim.at_epoch(epoch);
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let x: Vec<&Tensor> = chunk.iter().map(|&i| &inputs[i]).collect();
            let z: Vec<i8> = chunk.iter().map(|&i| labels[i]).collect();
            total += model.train_step(&x, &z, &optim)?;
            batches += 1;
        }
        let report = DetectorEpoch {
            epoch,
            learning_rate: optim.learning_rate,
            mean_loss: total / batches as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&report);
        reports.push(report);
    }
    Ok((model, reports))
}
