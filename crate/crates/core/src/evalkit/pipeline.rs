use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{auroc, detection_metrics, MetricsReport, PckAccumulator, PckReport};
use super::{read_json, write_atomic, write_json};
use crate::csi2pose::{train_pose, EpochReport, PoseModel, PoseNetConfig};
use crate::csi_ingest::{preprocess_gop, FrameClock};
use crate::detector::{
    compact_jhms, decide, train_detector, DetectorConfig, DetectorEpoch, DetectorModel,
};
use crate::error::{Error, Result};
use crate::localizer::{localize_gop, GopFeatures, LocalizationReport, LocalizerConfig};
use crate::numcore::Tensor;
use crate::scene_sim::{
    generate_dataset, read_dataset, render_visual_sequence, simulate_timeline, synthesize_csi,
    write_dataset, AttackKind, Dataset, DatasetConfig, GopLabel, GopSample, Split, VisualConfig,
    MANIFEST_NAME,
};

/// Settings of every pipeline stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub pose: PoseNetConfig,
    pub detector: DetectorConfig,
    pub localizer: LocalizerConfig,
    /// Also store rendered visual features next to the RF frames.
    pub write_features: bool,
    pub pck_rhos: Vec<f64>,
    /// Test GOPs timed by `bench`.
    pub bench_gops: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            dataset: DatasetConfig::default(),
            pose: PoseNetConfig::default(),
            detector: DetectorConfig::default(),
            localizer: LocalizerConfig::default(),
            write_features: false,
            pck_rhos: vec![0.1, 0.2, 0.25, 0.3, 0.4, 0.5],
            bench_gops: 20,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Copy dataset geometry into the model configs.
    pub fn harmonize(&mut self) {
        let d = &self.dataset;
        self.pose.gop_size = d.gop_size;
        self.pose.visual = d.visual;
        self.pose.height = d.visual.height;
        self.pose.width = d.visual.width;
        self.pose.samples_per_frame = d.preprocess.samples_per_frame;
        self.detector.gop_size = d.gop_size;
        self.detector.height = d.visual.height;
        self.detector.width = d.visual.width;
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.pose.validate()?;
        self.detector.validate()?;
        self.localizer.validate()?;
        if let Some(r) = self.pck_rhos.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(Error::Config(format!("PCK threshold {r} outside (0,1)")));
        }
        Ok(())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out_dir.join("dataset")
    }
    pub fn manifest_path(&self) -> PathBuf {
        self.dataset_dir().join(MANIFEST_NAME)
    }
    pub fn pose_model_path(&self) -> PathBuf {
        self.out_dir.join("models").join("pose.spt")
    }
    pub fn detector_model_path(&self) -> PathBuf {
        self.out_dir.join("models").join("detector.spt")
    }
    pub fn decisions_path(&self) -> PathBuf {
        self.out_dir.join("decisions.csv")
    }
    pub fn localization_path(&self) -> PathBuf {
        self.out_dir.join("localization.json")
    }
    pub fn metrics_path(&self) -> PathBuf {
        self.out_dir.join("metrics.json")
    }
    pub fn bench_path(&self) -> PathBuf {
        self.out_dir.join("bench.json")
    }

    fn pose_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }
    fn detector_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what} not found at {}; run the earlier stage first",
            path.display()
        )))
    }
}

pub fn load_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    let path = cfg.manifest_path();
    require(&path, "dataset manifest")?;
    read_dataset(&path)
}

/// Oracle visual JHMs and PAFs of a GOP's (possibly forged) video.
pub fn visual_features(
    sample: &GopSample,
    visual: &VisualConfig,
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    render_visual_sequence(&sample.visual, visual)
}

/// CSI2Pose JHMs and PAFs of a GOP's RF frames.
pub fn wireless_features(
    model: &PoseModel,
    sample: &GopSample,
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    Ok(model.forward(&sample.rf_frames())?.into_iter().unzip())
}

pub fn gop_features(
    model: &PoseModel,
    sample: &GopSample,
    visual: &VisualConfig,
) -> Result<GopFeatures> {
    let (visual_jhm, visual_paf) = visual_features(sample, visual)?;
    let (wireless_jhm, wireless_paf) = wireless_features(model, sample)?;
    Ok(GopFeatures {
        visual_jhm,
        wireless_jhm,
        visual_paf,
        wireless_paf,
    })
}

pub fn detector_input(features: &GopFeatures) -> Result<Tensor> {
    compact_jhms(&features.visual_jhm, &features.wireless_jhm)
}

/// The video the RF frames of `sample` actually correspond to.
pub fn true_pairing(sample: &GopSample) -> GopSample {
    GopSample::authentic(
        sample.id,
        sample.rf.clone(),
        sample.truth.clone(),
        sample.low_quality,
    )
}

pub fn run_simulate(cfg: &PipelineConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let ds = generate_dataset(&cfg.dataset, cfg.seed)?;
    write_dataset(&ds, &cfg.dataset_dir(), cfg.write_features)
}

/// Train CSI2Pose on the training split, each GOP paired with the video of its real scene.
pub fn run_train_pose(
    cfg: &PipelineConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<Vec<EpochReport>> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let pairs: Vec<GopSample> = ds
        .indices(Split::Train)
        .into_iter()
        .map(|i| true_pairing(&ds.samples[i]))
        .collect();
    let refs: Vec<&GopSample> = pairs.iter().collect();
    let (model, log) = train_pose(&refs, &cfg.pose, cfg.pose_seed(), &mut on_epoch)?;
    model.save(&cfg.pose_model_path())?;
    write_json(&cfg.out_dir.join("models").join("pose_log.json"), &log)?;
    Ok(log)
}

fn load_pose(cfg: &PipelineConfig) -> Result<PoseModel> {
    let path = cfg.pose_model_path();
    require(&path, "pose model")?;
    PoseModel::load(&path)
}

fn load_detector(cfg: &PipelineConfig) -> Result<DetectorModel> {
    let path = cfg.detector_model_path();
    require(&path, "detector model")?;
    DetectorModel::load(&path)
}

pub fn run_train_detector(
    cfg: &PipelineConfig,
    mut on_epoch: impl FnMut(&DetectorEpoch),
) -> Result<Vec<DetectorEpoch>> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let pose = load_pose(cfg)?;
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for i in ds.indices(Split::Train) {
        let s = &ds.samples[i];
        inputs.push(detector_input(&gop_features(
            &pose,
            s,
            &cfg.dataset.visual,
        )?)?);
        labels.push(s.label.sign());
    }
    let (model, log) = train_detector(
        &inputs,
        &labels,
        &cfg.detector,
        cfg.detector_seed(),
        &mut on_epoch,
    )?;
    model.save(&cfg.detector_model_path())?;
    write_json(&cfg.out_dir.join("models").join("detector_log.json"), &log)?;
    Ok(log)
}

/// One row of the decisions file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    pub gop_id: usize,
    pub score: f32,
    pub label: i8,
}

pub fn format_decisions(rows: &[DecisionRow]) -> String {
    let mut out = String::from("gop_id,score,label\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.gop_id, r.score, r.label));
    }
    out
}

pub fn parse_decisions(text: &str, path: &Path) -> Result<Vec<DecisionRow>> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "gop_id,score,label")) => {}
        _ => return Err(err(1, "expected header gop_id,score,label".into())),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 3 {
                return Err(err(n + 1, format!("expected 3 fields, got {}", f.len())));
            }
            Ok(DecisionRow {
                gop_id: f[0]
                    .parse()
                    .map_err(|e| err(n + 1, format!("gop_id: {e}")))?,
                score: f[1]
                    .parse()
                    .map_err(|e| err(n + 1, format!("score: {e}")))?,
                label: f[2]
                    .parse()
                    .map_err(|e| err(n + 1, format!("label: {e}")))?,
            })
        })
        .collect()
}

pub fn read_decisions(path: &Path) -> Result<Vec<DecisionRow>> {
    require(path, "decisions file")?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_decisions(&text, path)
}

/// Score every GOP of the dataset.
pub fn run_detect(cfg: &PipelineConfig) -> Result<Vec<DecisionRow>> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let pose = load_pose(cfg)?;
    let det = load_detector(cfg)?;
    let mut rows = Vec::with_capacity(ds.samples.len());
    for s in &ds.samples {
        let x = detector_input(&gop_features(&pose, s, &cfg.dataset.visual)?)?;
        let d = decide(det.detect(&x)?);
        rows.push(DecisionRow {
            gop_id: s.id,
            score: d.score,
            label: d.label,
        });
    }
    write_atomic(&cfg.decisions_path(), format_decisions(&rows).as_bytes())?;
    Ok(rows)
}

/// Localize abnormal people in every GOP flagged forged.
pub fn run_localize(cfg: &PipelineConfig) -> Result<Vec<LocalizationReport>> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let pose = load_pose(cfg)?;
    let decisions = read_decisions(&cfg.decisions_path())?;
    let mut reports = Vec::new();
    for d in decisions.iter().filter(|d| d.label == 1) {
        let s = ds.samples.get(d.gop_id).ok_or(Error::OutOfRange {
            index: d.gop_id,
            len: ds.samples.len(),
        })?;
        let f = gop_features(&pose, s, &cfg.dataset.visual)?;
        reports.push(LocalizationReport {
            gop_id: s.id,
            score: d.score,
            frames: localize_gop(&f, &cfg.localizer)?,
        });
    }
    write_json(&cfg.localization_path(), &reports)?;
    Ok(reports)
}

fn attack_name(s: &GopSample) -> &'static str {
    match (s.label, s.attack.as_ref().map(|a| a.kind)) {
        (GopLabel::Playback, _) => "playback",
        (_, Some(AttackKind::TamperRemove)) => "tamper-remove",
        (_, Some(AttackKind::TamperInsert)) => "tamper-insert",
        _ => "authentic",
    }
}

/// PCK of localized skeletons against each forged GOP's abnormal people, per rho.
pub fn localization_pck<'a>(
    samples: impl IntoIterator<Item = (&'a GopSample, Option<&'a LocalizationReport>)>,
    rhos: &[f64],
) -> Result<Vec<Option<PckReport>>> {
    let mut accs: Vec<PckAccumulator> = rhos
        .iter()
        .map(|&r| PckAccumulator::new(r))
        .collect::<Result<_>>()?;
    for (s, report) in samples {
        for (m, gt) in s.abnormal.iter().enumerate() {
            if gt.is_empty() {
                continue;
            }
            let pred: Vec<_> = report
                .and_then(|r| r.frames.get(m))
                .map(|f| {
                    f.iter()
                        .enumerate()
                        .map(|(i, p)| p.to_skeleton(i as u32))
                        .collect()
                })
                .unwrap_or_default();
            for acc in accs.iter_mut() {
                acc.add_frame(&pred, gt);
            }
        }
    }
    Ok(accs.iter().map(|a| a.report().ok()).collect())
}

/// Detection metrics and localization PCK on the test split.
pub fn run_eval(cfg: &PipelineConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let decisions = read_decisions(&cfg.decisions_path())?;
    let by_id: BTreeMap<usize, &DecisionRow> = decisions.iter().map(|d| (d.gop_id, d)).collect();
    let test = ds.indices(Split::Test);
    let mut labels = Vec::new();
    let mut predicted = Vec::new();
    let mut scores = Vec::new();
    for &i in &test {
        let s = &ds.samples[i];
        let d = by_id
            .get(&s.id)
            .ok_or_else(|| Error::Config(format!("no decision for GOP {}", s.id)))?;
        labels.push(s.label.sign());
        predicted.push(d.label);
        scores.push(d.score as f64);
    }
    let dm = detection_metrics(&predicted, &labels)?;
    let mut report = MetricsReport {
        accuracy: Some(dm.accuracy),
        tpr: dm.tpr,
        fpr: dm.fpr,
        auroc: auroc(&scores, &labels).ok(),
        ..MetricsReport::default()
    };
    let loc_path = cfg.localization_path();
    let localized: Vec<LocalizationReport> = if loc_path.exists() {
        read_json(&loc_path)?
    } else {
        Vec::new()
    };
    let loc_by_id: BTreeMap<usize, &LocalizationReport> =
        localized.iter().map(|r| (r.gop_id, r)).collect();
    let forged: Vec<&GopSample> = test
        .iter()
        .map(|&i| &ds.samples[i])
        .filter(|s| s.label.is_forged())
        .collect();
    let pairs =
        |filter: &dyn Fn(&GopSample) -> bool| -> Vec<(&GopSample, Option<&LocalizationReport>)> {
            forged
                .iter()
                .filter(|s| filter(s))
                .map(|s| (*s, loc_by_id.get(&s.id).copied()))
                .collect()
        };
    report.pck = localization_pck(pairs(&|_| true), &cfg.pck_rhos)?
        .into_iter()
        .flatten()
        .collect();
    for group in ["playback", "tampering", "tamper-remove", "tamper-insert"] {
        let sel = pairs(&|s: &GopSample| match group {
            "tampering" => s.label == GopLabel::Tampering,
            g => attack_name(s) == g,
        });
        let reps: Vec<PckReport> = localization_pck(sel, &cfg.pck_rhos)?
            .into_iter()
            .flatten()
            .collect();
        if !reps.is_empty() {
            report.pck_by_attack.insert(group.to_string(), reps);
        }
    }
    let bench = cfg.bench_path();
    if bench.exists() {
        let b: BenchReport = read_json(&bench)?;
        report.runtime_ms = b
            .stages
            .iter()
            .map(|s| (s.stage.clone(), s.mean_ms))
            .collect();
    }
    write_json(&cfg.metrics_path(), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub mean_ms: f64,
    pub max_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub gops: usize,
    pub stages: Vec<StageTiming>,
    /// GOP duration the per-GOP inference must fit in.
    pub budget_ms: f64,
}

impl BenchReport {
    pub fn stage(&self, name: &str) -> Option<&StageTiming> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<24} {:>10} {:>10}\n", "stage", "mean ms", "max ms");
        for s in &self.stages {
            out.push_str(&format!(
                "{:<24} {:>10.1} {:>10.1}\n",
                s.stage, s.mean_ms, s.max_ms
            ));
        }
        out.push_str(&format!(
            "GOP duration budget: {:.0} ms over {} GOPs\n",
            self.budget_ms, self.gops
        ));
        out
    }
}

pub const STAGE_PREPROCESS: &str = "csi preprocessing";
pub const STAGE_POSE: &str = "csi2pose";
pub const STAGE_VISUAL: &str = "visual features";
pub const STAGE_DETECT: &str = "detection";
pub const STAGE_LOCALIZE: &str = "localization";
pub const STAGE_TOTAL: &str = "detect+localize total";

/// Time each inference stage on test GOPs with frozen models.
pub fn run_bench(cfg: &PipelineConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let pose = load_pose(cfg)?;
    let det = load_detector(cfg)?;
    let d = &cfg.dataset;
    let channel = d.channel();
    let names = [
        STAGE_PREPROCESS,
        STAGE_POSE,
        STAGE_VISUAL,
        STAGE_DETECT,
        STAGE_LOCALIZE,
        STAGE_TOTAL,
    ];
    let mut times: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let test = ds.indices(Split::Test);
    let n = cfg.bench_gops.min(test.len());
    if n == 0 {
        return Err(Error::Config("no test GOPs to benchmark".into()));
    }
    for (k, &i) in test.iter().take(n).enumerate() {
        let s = &ds.samples[i];
        let duration = (d.lead_frames + d.gop_size) as f64 / d.fps + 0.5 / d.fps;
        let tl = simulate_timeline(s.people(), duration, d.fps, cfg.seed ^ k as u64)?;
        let trace = synthesize_csi(&tl, &channel, d.csi_rate_hz, cfg.seed ^ k as u64)?;
        let clock = FrameClock::regular(d.lead_frames as f64 / d.fps, d.fps, d.gop_size);
        let start = Instant::now();
        let t0 = Instant::now();
        preprocess_gop(&trace, &clock, &d.preprocess)?;
        let t_pre = t0.elapsed();
        let t0 = Instant::now();
        let (wireless_jhm, wireless_paf) = wireless_features(&pose, s)?;
        let t_pose = t0.elapsed();
        let t0 = Instant::now();
        let (visual_jhm, visual_paf) = visual_features(s, &d.visual)?;
        let t_vis = t0.elapsed();
        let f = GopFeatures {
            visual_jhm,
            wireless_jhm,
            visual_paf,
            wireless_paf,
        };
        let t0 = Instant::now();
        decide(det.detect(&detector_input(&f)?)?);
        let t_det = t0.elapsed();
        let t0 = Instant::now();
        localize_gop(&f, &cfg.localizer)?;
        let t_loc = t0.elapsed();
        let total = start.elapsed();
        for (slot, t) in times
            .iter_mut()
            .zip([t_pre, t_pose, t_vis, t_det, t_loc, total])
        {
            slot.push(t.as_secs_f64() * 1e3);
        }
    }
    let stages = names
        .iter()
        .zip(&times)
        .map(|(name, t)| StageTiming {
            stage: name.to_string(),
            mean_ms: t.iter().sum::<f64>() / t.len() as f64,
            max_ms: t.iter().copied().fold(0.0, f64::max),
        })
        .collect();
    let report = BenchReport {
        gops: n,
        stages,
        budget_ms: d.gop_size as f64 / d.fps * 1e3,
    };
    write_json(&cfg.bench_path(), &report)?;
    Ok(report)
}
