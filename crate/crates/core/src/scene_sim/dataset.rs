use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attack::{
    inject_playback, inject_tampering, AttackKind, AttackSpec, GopLabel, GopSample, TamperEdit,
    VisualConfig,
};
use super::channel::{synthesize_csi, ChannelModel};
use super::timeline::{simulate_timeline, MAX_PEOPLE};
use crate::csi_ingest::{preprocess_gop, FrameClock, PreprocessConfig};
use crate::error::{Error, Result};
use crate::evalkit::{load_tensor, read_json, save_tensor, write_json};
use crate::numcore::Tensor;
use crate::pose_features::SkeletonPose;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub gops: usize,
    /// People per scene are drawn uniformly from `min_people..=max_people`.
    pub min_people: usize,
    pub max_people: usize,
    pub gop_size: usize,
    pub fps: f64,
    pub csi_rate_hz: f64,
    /// Video frames simulated before the GOP so the trace covers `t_0`.
    pub lead_frames: usize,
    pub forged_fraction: f64,
    pub train_fraction: f64,
    pub preprocess: PreprocessConfig,
    pub visual: VisualConfig,
    /// Seed of the fixed room; the same room is used for every GOP.
    pub room_seed: u64,
    pub reflectivity: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            gops: 600,
            min_people: 0,
            max_people: 4,
            gop_size: 12,
            fps: 7.5,
            csi_rate_hz: 100.0,
            lead_frames: 2,
            forged_fraction: 0.5,
            train_fraction: 0.7,
            preprocess: PreprocessConfig::default(),
            visual: VisualConfig::default(),
            room_seed: 0,
            reflectivity: 0.4,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gops == 0 || self.gop_size == 0 {
            return Err(Error::Config("gops and gop_size must be positive".into()));
        }
        if self.min_people > self.max_people || self.max_people > MAX_PEOPLE {
            return Err(Error::Config(format!(
                "people range {}..={} must lie within 0..={MAX_PEOPLE}",
                self.min_people, self.max_people
            )));
        }
        if !(0.0..=1.0).contains(&self.forged_fraction)
            || !(0.0..=1.0).contains(&self.train_fraction)
        {
            return Err(Error::Config("fractions must lie in [0, 1]".into()));
        }
        if !(self.fps > 0.0 && self.csi_rate_hz > 0.0) {
            return Err(Error::Config("rates must be positive".into()));
        }
        Ok(())
    }

    pub fn channel(&self) -> ChannelModel {
        let mut ch = ChannelModel::indoor(self.room_seed);
        ch.reflectivity = self.reflectivity;
        ch
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub seed: u64,
    pub samples: Vec<GopSample>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Simulate one authentic GOP: scene, CSI, preprocessing and camera skeletons.
pub fn simulate_gop(
    cfg: &DatasetConfig,
    channel: &ChannelModel,
    id: usize,
    people: usize,
    seed: u64,
) -> Result<GopSample> {
    let lead = cfg.lead_frames;
    let duration = (lead + cfg.gop_size) as f64 / cfg.fps + 0.5 / cfg.fps;
    let timeline = simulate_timeline(people, duration, cfg.fps, seed)?;
    let trace = synthesize_csi(&timeline, channel, cfg.csi_rate_hz, seed ^ 0x5eed_c510)?;
    let clock = FrameClock::regular(lead as f64 / cfg.fps, cfg.fps, cfg.gop_size);
    let pre = preprocess_gop(&trace, &clock, &cfg.preprocess)?;
    let rf = Tensor::stack(&pre.frames.into_iter().map(|f| f.0).collect::<Vec<_>>())?;
    let truth = timeline.frames[lead + 1..=lead + cfg.gop_size].to_vec();
    Ok(GopSample::authentic(id, rf, truth, pre.low_quality))
}

/// Relabel `poses` with ids starting at `first`, keeping the mapping consistent across frames.
fn relabel(frames: &[Vec<SkeletonPose>], keep: &[u32], first: u32) -> Vec<Vec<SkeletonPose>> {
    frames
        .iter()
        .map(|f| {
            f.iter()
                .filter_map(|p| {
                    keep.iter().position(|&k| k == p.person_id).map(|j| {
                        let mut q = p.clone();
                        q.person_id = first + j as u32;
                        q
                    })
                })
                .collect()
        })
        .collect()
}

/// Build a labelled dataset: authentic scenes first, then attacks drawn per split.
pub fn generate_dataset(cfg: &DatasetConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let channel = cfg.channel();
    let mut rng = stream_rng(seed, 0);
    let mut samples = Vec::with_capacity(cfg.gops);
    for id in 0..cfg.gops {
        let people = rng.random_range(cfg.min_people..=cfg.max_people);
        let gop_seed = rng.random::<u64>();
        samples.push(simulate_gop(cfg, &channel, id, people, gop_seed)?);
    }

    let mut order: Vec<usize> = (0..cfg.gops).collect();
    order.shuffle(&mut rng);
    let n_train = (cfg.train_fraction * cfg.gops as f64).round() as usize;
    let mut splits = vec![Split::Test; cfg.gops];
    for &i in &order[..n_train] {
        splits[i] = Split::Train;
    }

    let authentic = samples.clone();
    for split in [Split::Train, Split::Test] {
        let mut members: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&i| splits[i] == split)
            .collect();
        members.sort_unstable();
        let mut targets = members.clone();
        targets.shuffle(&mut rng);
        let n_forged = (cfg.forged_fraction * members.len() as f64).round() as usize;
        let n_playback = n_forged / 2;
        for (k, &target) in targets[..n_forged].iter().enumerate() {
            samples[target] = if k < n_playback {
                playback_for(&authentic, &members, target, &mut rng)?
            } else {
                tampering_for(&authentic, &members, target, &mut rng)?
            };
        }
    }
    Ok(Dataset {
        config: cfg.clone(),
        seed,
        samples,
        splits,
    })
}

fn playback_for(
    authentic: &[GopSample],
    members: &[usize],
    target: usize,
    rng: &mut ChaCha8Rng,
) -> Result<GopSample> {
    // an empty scene played over an empty scene is indistinguishable, so skip it
    let candidates: Vec<usize> = members
        .iter()
        .copied()
        .filter(|&s| s != target && (authentic[s].people() > 0 || authentic[target].people() > 0))
        .collect();
    let source = *candidates
        .get(rng.random_range(0..candidates.len().max(1)))
        .ok_or_else(|| Error::Config("no usable playback source".into()))?;
    inject_playback(
        authentic,
        &AttackSpec {
            kind: AttackKind::Playback,
            target,
            source: Some(source),
            person_ids: Vec::new(),
        },
    )
}

fn tampering_for(
    authentic: &[GopSample],
    members: &[usize],
    target: usize,
    rng: &mut ChaCha8Rng,
) -> Result<GopSample> {
    let base = &authentic[target];
    let n = base.people();
    if n > 0 && (n == MAX_PEOPLE || rng.random_bool(0.5)) {
        let mut present: Vec<u32> = base.truth[0].iter().map(|p| p.person_id).collect();
        present.shuffle(rng);
        let k = rng.random_range(1..=n);
        return inject_tampering(base, &TamperEdit::Remove(present[..k].to_vec()));
    }
    let donors: Vec<usize> = members
        .iter()
        .copied()
        .filter(|&s| s != target && authentic[s].people() > 0)
        .collect();
    let donor_ix = *donors
        .get(rng.random_range(0..donors.len().max(1)))
        .ok_or_else(|| Error::Config("no donor scene with people".into()))?;
    let donor = &authentic[donor_ix];
    let mut ids: Vec<u32> = donor.truth[0].iter().map(|p| p.person_id).collect();
    ids.shuffle(rng);
    let k = rng.random_range(1..=ids.len().min(2).min(MAX_PEOPLE - n));
    let first = base.truth[0]
        .iter()
        .map(|p| p.person_id + 1)
        .max()
        .unwrap_or(0);
    let inserted = relabel(&donor.truth, &ids[..k], first);
    let mut out = inject_tampering(base, &TamperEdit::Insert(inserted))?;
    if let Some(a) = out.attack.as_mut() {
        a.source = Some(donor_ix);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub label: GopLabel,
    pub split: Split,
    #[serde(default)]
    pub attack: Option<AttackSpec>,
    pub low_quality: bool,
    pub rf: PathBuf,
    /// Absent when features are rendered on demand from `skeletons`.
    #[serde(default)]
    pub jhm: Option<PathBuf>,
    #[serde(default)]
    pub paf: Option<PathBuf>,
    pub skeletons: PathBuf,
    pub abnormal: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: DatasetConfig,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct SkeletonFile {
    truth: Vec<Vec<SkeletonPose>>,
    visual: Vec<Vec<SkeletonPose>>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Write every GOP's files, then the manifest last so it never names missing files.
pub fn write_dataset(ds: &Dataset, dir: &Path, write_features: bool) -> Result<PathBuf> {
    let mut entries = Vec::with_capacity(ds.samples.len());
    for (s, &split) in ds.samples.iter().zip(&ds.splits) {
        let stem = format!("gop_{:05}", s.id);
        let rel = |ext: &str| PathBuf::from(format!("{stem}.{ext}"));
        save_tensor(&dir.join(rel("rf.spt")), "rf", &s.rf)?;
        write_json(
            &dir.join(rel("skeletons.json")),
            &SkeletonFile {
                truth: s.truth.clone(),
                visual: s.visual.clone(),
            },
        )?;
        write_json(&dir.join(rel("abnormal.json")), &s.abnormal)?;
        let (jhm, paf) = if write_features {
            let (j, p) = super::render_visual_sequence(&s.visual, &ds.config.visual)?;
            save_tensor(&dir.join(rel("jhm.spt")), "jhm", &Tensor::stack(&j)?)?;
            save_tensor(&dir.join(rel("paf.spt")), "paf", &Tensor::stack(&p)?)?;
            (Some(rel("jhm.spt")), Some(rel("paf.spt")))
        } else {
            (None, None)
        };
        entries.push(ManifestEntry {
            id: s.id,
            label: s.label,
            split,
            attack: s.attack.clone(),
            low_quality: s.low_quality,
            rf: rel("rf.spt"),
            jhm,
            paf,
            skeletons: rel("skeletons.json"),
            abnormal: rel("abnormal.json"),
        });
    }
    let manifest = Manifest {
        seed: ds.seed,
        config: ds.config.clone(),
        entries,
    };
    let path = dir.join(MANIFEST_NAME);
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Load a dataset written by [`write_dataset`]; feature files are not read.
pub fn read_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest: Manifest = read_json(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::with_capacity(manifest.entries.len());
    let mut splits = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let sk: SkeletonFile = read_json(&dir.join(&e.skeletons))?;
        let abnormal: Vec<Vec<SkeletonPose>> = read_json(&dir.join(&e.abnormal))?;
        samples.push(GopSample {
            id: e.id,
            label: e.label,
            attack: e.attack.clone(),
            rf: load_tensor(&dir.join(&e.rf))?,
            truth: sk.truth,
            visual: sk.visual,
            abnormal,
            low_quality: e.low_quality,
        });
        splits.push(e.split);
    }
    Ok(Dataset {
        config: manifest.config,
        seed: manifest.seed,
        samples,
        splits,
    })
}
