//! CSI trace ingestion: parsing, frame alignment, denoising and RF-frame assembly.

mod align;
mod filter;
mod trace;

pub use align::{align, interpolate_at, AlignedSamples, FrameClock, LONG_GAP_INTERVALS};
pub use filter::{
    butterworth_lowpass, effective_cutoff, Butterworth, Section, MAX_CUTOFF_FRACTION,
};
pub use trace::{
    format_csi_trace, meta_path, parse_csi_text, parse_csi_trace, write_csi_trace, CsiSample,
    CsiTrace, TraceMeta,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Denoised, frame-aligned CSI power for one video frame, shaped `[Nt·Nr, K, F]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RfFrame(pub Tensor);

impl RfFrame {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn shape(&self) -> &[usize] {
        self.0.shape()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Interpolated measurements per video frame.
    pub samples_per_frame: usize,
    pub cutoff_hz: f64,
    pub filter_order: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            samples_per_frame: 9,
            cutoff_hz: 60.0,
            filter_order: 4,
        }
    }
}

/// Low-pass every (link, subcarrier) series of the aligned GOP in place.
///
/// `fs` is the aligned sampling rate, `F · fps`.
pub fn denoise(aligned: &mut AlignedSamples, fs: f64, cutoff: f64, order: usize) -> Result<()> {
    let filt = Butterworth::lowpass(fs, cutoff, order)?;
    let width = match aligned.per_frame.first().and_then(|f| f.first()) {
        Some(s) => s.len(),
        None => return Ok(()),
    };
    let mut series = Vec::with_capacity(aligned.total());
    for e in 0..width {
        series.clear();
        series.extend(aligned.per_frame.iter().flatten().map(|s| s[e]));
        let y = filt.filter_primed(&series);
        for (s, v) in aligned.per_frame.iter_mut().flatten().zip(y) {
            s[e] = v;
        }
    }
    Ok(())
}

/// Stack each frame's `F` measurements along the last axis: `[links, K, F]`.
pub fn assemble_rf_frames(
    aligned: &AlignedSamples,
    links: usize,
    k: usize,
) -> Result<Vec<RfFrame>> {
    let f = aligned.samples_per_frame();
    let mut out = Vec::with_capacity(aligned.per_frame.len());
    for (m, frame) in aligned.per_frame.iter().enumerate() {
        if frame.len() != f || f == 0 {
            return Err(Error::invalid(format!(
                "frame {m} has {} samples, expected {f}",
                frame.len()
            )));
        }
        let mut data = vec![0.0f32; links * k * f];
        for (fi, s) in frame.iter().enumerate() {
            if s.len() != links * k {
                return Err(Error::invalid(format!(
                    "frame {m} sample {fi} has {} values, expected {}",
                    s.len(),
                    links * k
                )));
            }
            for (e, &v) in s.iter().enumerate() {
                data[e * f + fi] = v as f32;
            }
        }
        out.push(RfFrame(Tensor::new([links, k, f], data)?));
    }
    Ok(out)
}

/// RF frames for one GOP plus the packet-loss quality flag.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessedGop {
    pub frames: Vec<RfFrame>,
    pub low_quality: bool,
}

/// Align → denoise → assemble.
pub fn preprocess_gop(
    trace: &CsiTrace,
    clock: &FrameClock,
    cfg: &PreprocessConfig,
) -> Result<PreprocessedGop> {
    let mut aligned = align(trace, clock, cfg.samples_per_frame)?;
    let fs = cfg.samples_per_frame as f64 * clock.fps;
    denoise(&mut aligned, fs, cfg.cutoff_hz, cfg.filter_order)?;
    let frames = assemble_rf_frames(&aligned, trace.meta.links(), trace.meta.k)?;
    Ok(PreprocessedGop {
        frames,
        low_quality: aligned.low_quality,
    })
}
