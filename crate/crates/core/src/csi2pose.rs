//! CSI→pose network: a 2D-convolutional projector per RF frame, a 3D-convolutional
//! temporal refiner across the GOP and two fully convolutional heads producing
//! joint heat maps and part affinity fields.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csi_ingest::RfFrame;
use crate::error::{Error, Result};
use crate::evalkit::{load_tensors, read_json, save_tensors, write_json};
use crate::numcore::{
    resize_bilinear, rmsprop_step, BnMode, Graph, OptimConfig, ParamSet, Tensor, Var,
};
use crate::pose_features::{jhm_loss_node, paf_loss_node, LossWeights, NUM_KEYPOINTS, NUM_LIMBS};
use crate::scene_sim::{render_visual_sequence, GopSample, VisualConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseNetConfig {
    pub height: usize,
    pub width: usize,
    pub links: usize,
    pub subcarriers: usize,
    pub samples_per_frame: usize,
    pub gop_size: usize,
    /// Channels of the projector, residual blocks and refiner.
    pub base_width: usize,
    /// Channels of the two head convolutions before upsampling.
    pub head_width: usize,
    /// Channels of the upsampling stages.
    pub up_width: usize,
    pub projector_layers: usize,
    pub residual_blocks: usize,
    pub temporal_kernel: usize,
    /// Append normalized row/column coordinates to the projector input.
    pub coord_channels: bool,
    /// Start both heads' 1×1 output convolutions at zero.
    pub zero_init_outputs: bool,
    /// Normalize with the GOP's own batch statistics at inference too.
    pub gop_batch_stats: bool,
    pub bn_eps: f32,
    pub bn_momentum: f32,
    pub epochs: usize,
    pub optim: OptimConfig,
    pub loss: LossWeights,
    pub visual: VisualConfig,
}

impl Default for PoseNetConfig {
    fn default() -> Self {
        PoseNetConfig {
            height: 64,
            width: 64,
            links: 9,
            subcarriers: 30,
            samples_per_frame: 9,
            gop_size: 12,
            base_width: 32,
            head_width: 32,
            up_width: 16,
            projector_layers: 6,
            residual_blocks: 6,
            temporal_kernel: 3,
            coord_channels: false,
            zero_init_outputs: true,
            gop_batch_stats: true,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            epochs: 15,
            optim: OptimConfig::default(),
            loss: LossWeights::default(),
            visual: VisualConfig::default(),
        }
    }
}

impl PoseNetConfig {
    pub fn validate(&self) -> Result<()> {
        let pow2 = |v: usize| v >= 16 && v.is_power_of_two();
        if !pow2(self.height) || !pow2(self.width) {
            return Err(Error::Config(format!(
                "image size must be powers of two ≥ 16, got {}×{}",
                self.height, self.width
            )));
        }
        if self.projector_layers != 6 || self.residual_blocks != 6 {
            return Err(Error::Config(
                "the projector has 6 conv layers and 6 residual blocks".into(),
            ));
        }
        if self.temporal_kernel % 2 == 0 {
            return Err(Error::Config("temporal kernel must be odd".into()));
        }
        if [
            self.links,
            self.subcarriers,
            self.samples_per_frame,
            self.gop_size,
            self.base_width,
            self.head_width,
            self.up_width,
        ]
        .contains(&0)
        {
            return Err(Error::Config("sizes must be positive".into()));
        }
        if self.visual.height != self.height || self.visual.width != self.width {
            return Err(Error::Config(
                "visual feature size differs from the network output".into(),
            ));
        }
        self.optim.validate()?;
        self.loss.validate()
    }

    fn input_channels(&self) -> usize {
        self.links + if self.coord_channels { 2 } else { 0 }
    }

    /// Spatial size of projector features.
    pub fn feature_size(&self) -> (usize, usize) {
        (self.height / 4, self.width / 4)
    }
}

/// Trainable CSI2Pose parameters plus normalization buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseModel {
    pub config: PoseNetConfig,
    pub params: ParamSet,
}

/// Batch-norm nodes of a train-mode forward pass, for running-stat updates.
type BnNodes = Vec<(String, Var)>;

impl PoseModel {
    /// He-uniform weights, zero biases, identity batch norm and input normalization.
    pub fn init(config: PoseNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let bw = config.base_width;
        let conv_bn =
            |p: &mut ParamSet, name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng| {
                p.init_he_uniform(&format!("{name}.w"), &[3, 3, cin, cout], 9 * cin, rng);
                p.insert(format!("{name}.bn.g"), Tensor::full([cout], 1.0));
                p.insert(format!("{name}.bn.b"), Tensor::zeros([cout]));
                p.set_buffer(format!("{name}.bn.mean"), Tensor::zeros([cout]));
                p.set_buffer(format!("{name}.bn.var"), Tensor::full([cout], 1.0));
            };
        for i in 0..config.projector_layers {
            let cin = if i == 0 { config.input_channels() } else { bw };
            conv_bn(&mut p, &format!("proj.{i}"), cin, bw, &mut rng);
        }
        for i in 0..config.residual_blocks {
            conv_bn(&mut p, &format!("res.{i}.a"), bw, bw, &mut rng);
            conv_bn(&mut p, &format!("res.{i}.b"), bw, bw, &mut rng);
        }
        let kt = config.temporal_kernel;
        for i in 0..2 {
            p.init_he_uniform(
                &format!("refine.{i}.w"),
                &[kt, 3, 3, bw, bw],
                kt * 9 * bw,
                &mut rng,
            );
            p.insert(format!("refine.{i}.b"), Tensor::zeros([bw]));
        }
        for (head, out) in [("jhm", NUM_KEYPOINTS), ("paf", 2 * NUM_LIMBS)] {
            let (hw, uw) = (config.head_width, config.up_width);
            let layers = [
                (bw, hw, 3),
                (hw, hw, 3),
                (hw, uw, 3),
                (uw, uw, 3),
                (uw, out, 1),
            ];
            for (i, (cin, cout, k)) in layers.into_iter().enumerate() {
                p.init_he_uniform(
                    &format!("{head}.{i}.w"),
                    &[k, k, cin, cout],
                    k * k * cin,
                    &mut rng,
                );
                p.insert(format!("{head}.{i}.b"), Tensor::zeros([cout]));
            }
            if config.zero_init_outputs {
                p.insert(format!("{head}.4.w"), Tensor::zeros([1, 1, uw, out]));
            }
        }
        let e = config.links * config.subcarriers;
        p.set_buffer("input.mean", Tensor::zeros([e]));
        p.set_buffer("input.std", Tensor::full([e], 1.0));
        Ok(PoseModel { config, params: p })
    }

    /// Normalize, transpose to `[K, F, links]` and resize one RF frame to the image size.
    fn frame_input(&self, frame: &RfFrame) -> Result<Tensor> {
        let c = &self.config;
        frame
            .0
            .expect_shape(&[c.links, c.subcarriers, c.samples_per_frame])?;
        let (mean, std) = (
            self.params.buffer("input.mean").unwrap().data(),
            self.params.buffer("input.std").unwrap().data(),
        );
        let (l, k, f) = (c.links, c.subcarriers, c.samples_per_frame);
        let src = frame.0.data();
        let mut planes = vec![0.0f32; k * f * l];
        for li in 0..l {
            for ki in 0..k {
                let e = li * k + ki;
                for fi in 0..f {
                    planes[(ki * f + fi) * l + li] = (src[e * f + fi] - mean[e]) / std[e];
                }
            }
        }
        let resized = resize_bilinear(&Tensor::new([k, f, l], planes)?, c.height, c.width)?;
        if !c.coord_channels {
            return Ok(resized);
        }
        let (h, w) = (c.height, c.width);
        let mut out = Vec::with_capacity(h * w * (l + 2));
        for (i, px) in resized.data().chunks_exact(l).enumerate() {
            out.extend_from_slice(px);
            out.push(2.0 * (i / w) as f32 / (h - 1) as f32 - 1.0);
            out.push(2.0 * (i % w) as f32 / (w - 1) as f32 - 1.0);
        }
        Tensor::new([h, w, l + 2], out)
    }

    /// Projector input for a sequence of frames, `[M, H, W, C]`.
    pub fn input_tensor(&self, frames: &[RfFrame]) -> Result<Tensor> {
        if frames.is_empty() {
            return Err(Error::invalid("no RF frames"));
        }
        let parts: Result<Vec<Tensor>> = frames.iter().map(|f| self.frame_input(f)).collect();
        Tensor::stack(&parts?)
    }

    fn infer_mode(&self) -> BnMode {
        if self.config.gop_batch_stats {
            BnMode::Train
        } else {
            BnMode::Infer
        }
    }

    fn conv_bn(
        &self,
        g: &mut Graph,
        x: Var,
        name: &str,
        stride: usize,
        mode: BnMode,
        bn: &mut BnNodes,
    ) -> Result<Var> {
        let p = &self.params;
        let w = g.param(p, &format!("{name}.w"))?;
        let y = g.conv2d(x, w, stride, 1)?;
        let gamma = g.param(p, &format!("{name}.bn.g"))?;
        let beta = g.param(p, &format!("{name}.bn.b"))?;
        let running = match mode {
            BnMode::Infer => Some((
                p.buffer(&format!("{name}.bn.mean")).unwrap(),
                p.buffer(&format!("{name}.bn.var")).unwrap(),
            )),
            BnMode::Train => None,
        };
        let y = g.batch_norm(y, gamma, beta, mode, self.config.bn_eps, running)?;
        if mode == BnMode::Train {
            bn.push((name.to_string(), y));
        }
        Ok(y)
    }

    fn conv_bias(&self, g: &mut Graph, x: Var, name: &str, pad: usize) -> Result<Var> {
        let w = g.param(&self.params, &format!("{name}.w"))?;
        let b = g.param(&self.params, &format!("{name}.b"))?;
        let y = g.conv2d(x, w, 1, pad)?;
        g.add_bias(y, b)
    }

    fn project_graph(
        &self,
        g: &mut Graph,
        input: Var,
        mode: BnMode,
        bn: &mut BnNodes,
    ) -> Result<Var> {
        let mut x = input;
        for i in 0..self.config.projector_layers {
            let stride = if i < 2 { 2 } else { 1 };
            x = self.conv_bn(g, x, &format!("proj.{i}"), stride, mode, bn)?;
            x = g.relu(x);
        }
        for i in 0..self.config.residual_blocks {
            let a = self.conv_bn(g, x, &format!("res.{i}.a"), 1, mode, bn)?;
            let a = g.relu(a);
            let b = self.conv_bn(g, a, &format!("res.{i}.b"), 1, mode, bn)?;
            let s = g.add(b, x)?;
            x = g.relu(s);
        }
        Ok(x)
    }

    /// Two 3D convolutions; time is padded by repeating the edge frames.
    fn refine_graph(&self, g: &mut Graph, feats: Var) -> Result<Var> {
        let pad = self.config.temporal_kernel / 2;
        let mut x = feats;
        for i in 0..2 {
            let w = g.param(&self.params, &format!("refine.{i}.w"))?;
            let b = g.param(&self.params, &format!("refine.{i}.b"))?;
            let padded = g.edge_pad(x, pad)?;
            let y = g.conv3d_padded(padded, w, 1, [0, 1, 1])?;
            x = g.add_bias(y, b)?;
            if i == 0 {
                x = g.relu(x);
            }
        }
        Ok(x)
    }

    fn head_graph(&self, g: &mut Graph, x: Var, head: &str) -> Result<Var> {
        let mut y = x;
        for i in 0..4 {
            if i >= 2 {
                y = g.upsample2x(y)?;
            }
            y = self.conv_bias(g, y, &format!("{head}.{i}"), 1)?;
            y = g.relu(y);
        }
        self.conv_bias(g, y, &format!("{head}.4"), 0)
    }

    /// Full forward graph: returns `(jhm [M,H,W,J], paf [M,H,W,2C])` nodes.
    fn forward_graph(
        &self,
        g: &mut Graph,
        frames: &[RfFrame],
        mode: BnMode,
        bn: &mut BnNodes,
    ) -> Result<(Var, Var)> {
        let input = g.input(self.input_tensor(frames)?);
        let f = self.project_graph(g, input, mode, bn)?;
        let r = self.refine_graph(g, f)?;
        Ok((self.head_graph(g, r, "jhm")?, self.head_graph(g, r, "paf")?))
    }

    /// Per-frame projector features, each `[H/4, W/4, width]`.
    pub fn project(&self, frames: &[RfFrame]) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let input = g.input(self.input_tensor(frames)?);
        let f = self.project_graph(&mut g, input, self.infer_mode(), &mut Vec::new())?;
        Ok(g.value(f).unstack())
    }

    /// Temporal refinement of a sequence of projector features.
    pub fn refine(&self, feats: &[Tensor]) -> Result<Vec<Tensor>> {
        let (h, w) = self.config.feature_size();
        for f in feats {
            f.expect_shape(&[h, w, self.config.base_width])?;
        }
        let mut g = Graph::new();
        let x = g.input(Tensor::stack(feats)?);
        let r = self.refine_graph(&mut g, x)?;
        Ok(g.value(r).unstack())
    }

    /// JHM `[H,W,J]` and PAF `[H,W,2,C]` per refined feature map.
    pub fn generate(&self, refined: &[Tensor]) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let mut g = Graph::new();
        let x = g.input(Tensor::stack(refined)?);
        let j = self.head_graph(&mut g, x, "jhm")?;
        let p = self.head_graph(&mut g, x, "paf")?;
        Ok((g.value(j).unstack(), self.paf_frames(g.value(p))?))
    }

    fn paf_frames(&self, paf: &Tensor) -> Result<Vec<Tensor>> {
        let (h, w) = (self.config.height, self.config.width);
        paf.unstack()
            .into_iter()
            .map(|t| t.reshape([h, w, 2, NUM_LIMBS]))
            .collect()
    }

    /// One `(JHM, PAF)` pair per RF frame.
    pub fn forward(&self, frames: &[RfFrame]) -> Result<Vec<(Tensor, Tensor)>> {
        let mut g = Graph::new();
        let (j, p) = self.forward_graph(&mut g, frames, self.infer_mode(), &mut Vec::new())?;
        Ok(g.value(j)
            .unstack()
            .into_iter()
            .zip(self.paf_frames(g.value(p))?)
            .collect())
    }

    /// Summed cross-modal loss of one GOP against visual targets `[M,H,W,J]`, `[M,H,W,2,C]`.
    pub fn loss(&self, frames: &[RfFrame], jhm: &Tensor, paf: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let (j, p) = self.forward_graph(&mut g, frames, self.infer_mode(), &mut Vec::new())?;
        let lj = jhm_loss_node(&mut g, j, jhm, &self.config.loss)?;
        let lp = paf_loss_node(&mut g, p, paf, &self.config.loss)?;
        Ok(g.value(lj).item() as f64 + g.value(lp).item() as f64)
    }

    /// One RMSprop step on one GOP; returns the loss before the update.
    pub fn train_step(
        &mut self,
        frames: &[RfFrame],
        jhm: &Tensor,
        paf: &Tensor,
        optim: &OptimConfig,
    ) -> Result<f64> {
        let mut g = Graph::new();
        let mut bn = Vec::new();
        let (j, p) = self.forward_graph(&mut g, frames, BnMode::Train, &mut bn)?;
        let lj = jhm_loss_node(&mut g, j, jhm, &self.config.loss)?;
        let lp = paf_loss_node(&mut g, p, paf, &self.config.loss)?;
        let loss = g.add(lj, lp)?;
        let grads = g.param_grads(loss, &self.params)?;
        rmsprop_step(&mut self.params, &grads, optim)?;
        let m = self.config.bn_momentum;
        for (name, v) in bn {
            let (mean, var) = g.batch_stats(v).expect("batch-norm node");
            for (key, batch) in [
                (format!("{name}.bn.mean"), mean),
                (format!("{name}.bn.var"), var),
            ] {
                let mut t = self.params.buffer(&key).unwrap().clone();
                t.data_mut()
                    .iter_mut()
                    .zip(batch)
                    .for_each(|(r, b)| *r = (1.0 - m) * *r + m * b);
                self.params.set_buffer(key, t);
            }
        }
        Ok(g.value(loss).item() as f64)
    }

    /// Per-element mean and std of RF power over all frames of `samples`.
    pub fn fit_input_normalization(&mut self, samples: &[&GopSample]) -> Result<()> {
        let c = &self.config;
        let (e, f) = (c.links * c.subcarriers, c.samples_per_frame);
        let mut sum = vec![0.0f64; e];
        let mut sq = vec![0.0f64; e];
        let mut n = 0usize;
        for s in samples {
            s.rf.expect_shape(&[s.gop_size(), c.links, c.subcarriers, f])?;
            for frame in s.rf.data().chunks_exact(e * f) {
                for (i, series) in frame.chunks_exact(f).enumerate() {
                    for &v in series {
                        sum[i] += v as f64;
                        sq[i] += v as f64 * v as f64;
                    }
                }
                n += f;
            }
        }
        if n == 0 {
            return Err(Error::invalid("no RF data to normalize"));
        }
        let mean: Vec<f32> = sum.iter().map(|s| (s / n as f64) as f32).collect();
        let std: Vec<f32> = sq
            .iter()
            .zip(&sum)
            .map(|(q, s)| {
                let m = s / n as f64;
                ((q / n as f64 - m * m).max(0.0).sqrt() as f32).max(1e-6)
            })
            .collect();
        self.params
            .set_buffer("input.mean", Tensor::new([e], mean)?);
        self.params.set_buffer("input.std", Tensor::new([e], std)?);
        Ok(())
    }

    /// Parameter names of each submodule, for gradient-flow checks.
    pub fn submodule_params(&self, prefix: &str) -> Vec<String> {
        self.params
            .names()
            .filter(|n| n.starts_with(prefix))
            .map(str::to_string)
            .collect()
    }

    /// Write parameters to `path` and the configuration to a JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        save_tensors(path, &self.params.to_named())?;
        write_json(&config_path(path), &self.config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config: PoseNetConfig = read_json(&config_path(path))?;
        let params = ParamSet::from_named(load_tensors(path)?);
        let reference = PoseModel::init(config.clone(), 0)?;
        if !reference.params.same_layout(&params) {
            return Err(Error::Format(format!(
                "{} does not match its configuration",
                path.display()
            )));
        }
        Ok(PoseModel { config, params })
    }
}

/// `model.spt` → `model.json`.
pub fn config_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Visual targets for one GOP, stacked as `[M,H,W,J]` and `[M,H,W,2,C]`.
pub fn visual_targets(sample: &GopSample, visual: &VisualConfig) -> Result<(Tensor, Tensor)> {
    let (j, p) = render_visual_sequence(&sample.visual, visual)?;
    Ok((Tensor::stack(&j)?, Tensor::stack(&p)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub learning_rate: f32,
    /// Mean per-GOP loss over the epoch's steps.
    pub mean_loss: f64,
    pub seconds: f64,
}

/// Train CSI2Pose on authentic GOPs, one GOP per step, visiting GOPs in a seeded
/// shuffled order each epoch.
pub fn train_pose(
    samples: &[&GopSample],
    config: &PoseNetConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<(PoseModel, Vec<EpochReport>)> {
    if samples.is_empty() {
        return Err(Error::invalid("no training GOPs"));
    }
    if let Some(s) = samples.iter().find(|s| s.label.is_forged()) {
        return Err(Error::invalid(format!(
            "GOP {} is forged; pose training needs authentic pairs",
            s.id
        )));
    }
    let mut model = PoseModel::init(config.clone(), seed)?;
    model.fit_input_normalization(samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut reports = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let optim = config.optim.at_epoch(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let s = samples[i];
            let (jhm, paf) = visual_targets(s, &config.visual)?;
            total += model.train_step(&s.rf_frames(), &jhm, &paf, &optim)?;
        }
        let report = EpochReport {
            epoch,
            learning_rate: optim.learning_rate,
            mean_loss: total / samples.len() as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&report);
        reports.push(report);
    }
    Ok((model, reports))
}
