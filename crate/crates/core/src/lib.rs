//! Cross-modal surveillance-video forgery detection and localization from
//! Wi-Fi channel state information.
//!
//! The pipeline runs in three stages:
//!
//! 1. [`csi_ingest`] aligns raw CSI power traces to video-frame timestamps and
//!    denoises them into per-frame RF tensors.
//! 2. [`csi2pose`] regresses joint heat maps and part affinity fields from RF
//!    frames, trained against the visual features of [`pose_features`].
//! 3. [`detector`] classifies each group of pictures as authentic or forged and
//!    [`localizer`] recovers the skeletons of abnormal (removed or inserted) people.
//!
//! [`scene_sim`] supplies synthetic scenes, CSI and attacks; [`evalkit`] holds
//! metrics, file formats and the pipeline driver used by the CLI.

pub mod csi2pose;
pub mod csi_ingest;
pub mod detector;
pub mod error;
pub mod evalkit;
pub mod localizer;
pub mod numcore;
pub mod pose_features;
pub mod scene_sim;

pub use error::{Error, Result};
pub use numcore::{OptimConfig, ParamSet, Tensor};
