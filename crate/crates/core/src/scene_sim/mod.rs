//! Synthetic scenes: multi-person skeleton timelines, CSI synthesized from
//! limb reflections, oracle visual features and forgery injection.

mod attack;
mod channel;
mod dataset;
mod timeline;

pub use attack::{
    inject_playback, inject_tampering, render_visual_oracle, AttackKind, AttackSpec, GopLabel,
    GopSample, TamperEdit, VisualConfig,
};
pub use channel::{
    subcarrier_frequencies, synthesize_csi, ChannelModel, NoiseConfig, PhaseOffsets, SPEED_OF_LIGHT,
};
pub use dataset::{
    generate_dataset, read_dataset, simulate_gop, write_dataset, Dataset, DatasetConfig, Manifest,
    ManifestEntry, Split, MANIFEST_NAME,
};
pub use timeline::{
    image_scale, limb_reflectors, project, simulate_timeline, Behavior, PersonTrack, SceneTimeline,
    FLOOR_X, FLOOR_Y, KEYPOINT_JITTER, MAX_PEOPLE,
};

use crate::error::Result;
use crate::numcore::Tensor;
use crate::pose_features::SkeletonPose;

/// Oracle `(JHM, PAF)` for every frame of a sequence.
pub fn render_visual_sequence(
    frames: &[Vec<SkeletonPose>],
    cfg: &VisualConfig,
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let mut jhm = Vec::with_capacity(frames.len());
    let mut paf = Vec::with_capacity(frames.len());
    for f in frames {
        let (j, p) = render_visual_oracle(f, cfg)?;
        jhm.push(j);
        paf.push(p);
    }
    Ok((jhm, paf))
}
