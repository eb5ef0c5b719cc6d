use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::csi_ingest::RfFrame;
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::pose_features::{render_jhm, render_paf, SkeletonPose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GopLabel {
    Authentic,
    Playback,
    Tampering,
}

impl GopLabel {
    pub fn is_forged(self) -> bool {
        self != GopLabel::Authentic
    }

    /// `+1` for forged, `−1` for authentic.
    pub fn sign(self) -> i8 {
        if self.is_forged() {
            1
        } else {
            -1
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Playback,
    TamperRemove,
    TamperInsert,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub target: usize,
    /// Source GOP of a playback, or donor GOP of an insertion.
    pub source: Option<usize>,
    pub person_ids: Vec<u32>,
}

/// One GOP: authentic RF frames with the skeletons the video shows.
#[derive(Clone, Debug, PartialEq)]
pub struct GopSample {
    pub id: usize,
    pub label: GopLabel,
    pub attack: Option<AttackSpec>,
    /// RF frames stacked as `[M, Nt·Nr, K, F]`.
    pub rf: Tensor,
    /// Skeletons actually present, per frame.
    pub truth: Vec<Vec<SkeletonPose>>,
    /// Skeletons the (possibly forged) video shows, per frame.
    pub visual: Vec<Vec<SkeletonPose>>,
    /// Removed or inserted people, per frame.
    pub abnormal: Vec<Vec<SkeletonPose>>,
    pub low_quality: bool,
}

impl GopSample {
    pub fn authentic(
        id: usize,
        rf: Tensor,
        truth: Vec<Vec<SkeletonPose>>,
        low_quality: bool,
    ) -> Self {
        let m = truth.len();
        GopSample {
            id,
            label: GopLabel::Authentic,
            attack: None,
            rf,
            visual: truth.clone(),
            truth,
            abnormal: vec![Vec::new(); m],
            low_quality,
        }
    }

    pub fn gop_size(&self) -> usize {
        self.truth.len()
    }

    pub fn people(&self) -> usize {
        self.truth.first().map_or(0, Vec::len)
    }

    pub fn rf_frames(&self) -> Vec<RfFrame> {
        self.rf.unstack().into_iter().map(RfFrame).collect()
    }
}

/// Visual-oracle rendering parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualConfig {
    pub height: usize,
    pub width: usize,
    pub jhm_sigma: f32,
    pub paf_width: f32,
}

impl Default for VisualConfig {
    fn default() -> Self {
        VisualConfig {
            height: 64,
            width: 64,
            jhm_sigma: 1.5,
            paf_width: 1.5,
        }
    }
}

/// Ground-truth `(JHM, PAF)` of one frame, standing in for a visual pose detector.
pub fn render_visual_oracle(
    poses: &[SkeletonPose],
    cfg: &VisualConfig,
) -> Result<(Tensor, Tensor)> {
    for p in poses {
        p.validate()?;
    }
    Ok((
        render_jhm(poses, cfg.height, cfg.width, cfg.jhm_sigma)?,
        render_paf(poses, cfg.height, cfg.width, cfg.paf_width)?,
    ))
}

/// Replace the target GOP's video with the source GOP's recording.
pub fn inject_playback(dataset: &[GopSample], spec: &AttackSpec) -> Result<GopSample> {
    if spec.kind != AttackKind::Playback {
        return Err(Error::invalid("not a playback attack"));
    }
    let source_ix = spec
        .source
        .ok_or_else(|| Error::invalid("playback needs a source GOP"))?;
    let target = dataset.get(spec.target).ok_or(Error::OutOfRange {
        index: spec.target,
        len: dataset.len(),
    })?;
    let source = dataset.get(source_ix).ok_or(Error::OutOfRange {
        index: source_ix,
        len: dataset.len(),
    })?;
    if source_ix == spec.target {
        return Err(Error::invalid("playback source and target must differ"));
    }
    if source.gop_size() != target.gop_size() {
        return Err(Error::invalid(
            "playback source and target differ in GOP size",
        ));
    }
    let mut out = target.clone();
    out.visual = source.visual.clone();
    out.abnormal = target
        .truth
        .iter()
        .zip(&source.visual)
        .map(|(t, v)| t.iter().chain(v).cloned().collect())
        .collect();
    out.label = GopLabel::Playback;
    out.attack = Some(spec.clone());
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum TamperEdit {
    Remove(Vec<u32>),
    /// Per-frame donor skeletons; ids must not clash with the people shown.
    Insert(Vec<Vec<SkeletonPose>>),
}

fn ids(poses: &[SkeletonPose]) -> BTreeSet<u32> {
    poses.iter().map(|p| p.person_id).collect()
}

/// People present on exactly one side, matched by id.
fn symmetric_difference(truth: &[SkeletonPose], visual: &[SkeletonPose]) -> Vec<SkeletonPose> {
    let (t, v) = (ids(truth), ids(visual));
    truth
        .iter()
        .filter(|p| !v.contains(&p.person_id))
        .chain(visual.iter().filter(|p| !t.contains(&p.person_id)))
        .cloned()
        .collect()
}

/// Remove people from, or insert donor people into, the video of one GOP.
///
/// The abnormal set is recomputed as the people on only one side; a GOP whose
/// video again matches reality is authentic.
pub fn inject_tampering(sample: &GopSample, edit: &TamperEdit) -> Result<GopSample> {
    if sample.label == GopLabel::Playback {
        return Err(Error::invalid("cannot tamper a played-back GOP"));
    }
    let mut out = sample.clone();
    let (kind, person_ids) = match edit {
        TamperEdit::Remove(remove) => {
            for frame in &out.visual {
                let present = ids(frame);
                if let Some(id) = remove.iter().find(|id| !present.contains(id)) {
                    return Err(Error::invalid(format!("person {id} is not in the video")));
                }
            }
            for frame in out.visual.iter_mut() {
                frame.retain(|p| !remove.contains(&p.person_id));
            }
            (AttackKind::TamperRemove, remove.clone())
        }
        TamperEdit::Insert(donors) => {
            if donors.len() != out.visual.len() {
                return Err(Error::invalid("donor track length differs from the GOP"));
            }
            for (frame, add) in out.visual.iter_mut().zip(donors) {
                let present = ids(frame);
                if let Some(p) = add.iter().find(|p| present.contains(&p.person_id)) {
                    return Err(Error::invalid(format!(
                        "donor id {} already in the video",
                        p.person_id
                    )));
                }
                frame.extend(add.iter().cloned());
            }
            (
                AttackKind::TamperInsert,
                donors
                    .first()
                    .map(|f| ids(f).into_iter().collect())
                    .unwrap_or_default(),
            )
        }
    };
    out.abnormal = out
        .truth
        .iter()
        .zip(&out.visual)
        .map(|(t, v)| symmetric_difference(t, v))
        .collect();
    if out.abnormal.iter().all(Vec::is_empty) && out.visual == out.truth {
        out.label = GopLabel::Authentic;
        out.attack = None;
    } else {
        out.label = GopLabel::Tampering;
        out.attack = Some(AttackSpec {
            kind,
            target: sample.id,
            source: None,
            person_ids,
        });
    }
    Ok(out)
}
