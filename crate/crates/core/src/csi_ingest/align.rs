use super::trace::CsiTrace;
use crate::error::{Error, Result};

/// Video-frame timing for one GOP.
///
/// `start` is the timestamp of the frame preceding the GOP (`t_0`);
/// `frames` holds `t_1 .. t_M`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameClock {
    pub start: f64,
    pub frames: Vec<f64>,
    pub fps: f64,
}

impl FrameClock {
    /// A clock ticking exactly at `fps`, with frame 1 one period after `start`.
    pub fn regular(start: f64, fps: f64, gop_size: usize) -> Self {
        FrameClock {
            start,
            frames: (1..=gop_size).map(|m| start + m as f64 / fps).collect(),
            fps,
        }
    }

    pub fn gop_size(&self) -> usize {
        self.frames.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::invalid("frame clock needs at least one frame"));
        }
        let mut prev = self.start;
        for &t in &self.frames {
            if t <= prev {
                return Err(Error::invalid(
                    "frame timestamps must be strictly increasing",
                ));
            }
            prev = t;
        }
        Ok(())
    }

    /// Bounds `(t_{m−1}, t_m)` of zero-based frame `m`.
    pub fn interval(&self, m: usize) -> (f64, f64) {
        let prev = if m == 0 {
            self.start
        } else {
            self.frames[m - 1]
        };
        (prev, self.frames[m])
    }
}

/// `F` interpolated measurements per video frame.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedSamples {
    /// `per_frame[m][f]` is a flattened `Nt·Nr × K` power measurement.
    pub per_frame: Vec<Vec<Vec<f64>>>,
    /// Set when an interpolation bracket exceeds five nominal sample intervals.
    pub low_quality: bool,
}

impl AlignedSamples {
    pub fn samples_per_frame(&self) -> usize {
        self.per_frame.first().map_or(0, Vec::len)
    }

    pub fn total(&self) -> usize {
        self.per_frame.iter().map(Vec::len).sum()
    }
}

/// Gap, in nominal sample intervals, above which a GOP is flagged low quality.
pub const LONG_GAP_INTERVALS: f64 = 5.0;

/// Linear interpolation of the trace at time `t`.
///
/// Returns the measurement and the bracketing gap `t_n − t_{n−1}` (zero on an exact hit).
pub fn interpolate_at(trace: &CsiTrace, t: f64) -> Result<(Vec<f64>, f64)> {
    let (start, end) = trace
        .span()
        .ok_or_else(|| Error::invalid("cannot align an empty trace"))?;
    if t < start || t > end {
        return Err(Error::Coverage {
            time: t,
            start,
            end,
        });
    }
    let s = &trace.samples;
    // first sample strictly after t; s[hi-1].t <= t
    let hi = s.partition_point(|x| x.t <= t);
    let lo = &s[hi - 1];
    if lo.t == t || hi == s.len() {
        return Ok((lo.power.clone(), 0.0));
    }
    let up = &s[hi];
    let gap = up.t - lo.t;
    let eta = (t - lo.t) / gap;
    let v = lo
        .power
        .iter()
        .zip(&up.power)
        .map(|(&a, &b)| a + eta * (b - a))
        .collect();
    Ok((v, gap))
}

/// Resample `F` measurements per frame at `t_{m−1} + f·Δt`, `f = 1..F`, `Δt = (t_m − t_{m−1})/F`.
pub fn align(trace: &CsiTrace, clock: &FrameClock, f: usize) -> Result<AlignedSamples> {
    if f < 1 {
        return Err(Error::invalid("need at least one sample per frame"));
    }
    clock.validate()?;
    let nominal = 1.0 / trace.meta.nominal_rate_hz;
    let mut low_quality = false;
    let mut per_frame = Vec::with_capacity(clock.gop_size());
    for m in 0..clock.gop_size() {
        let (t0, t1) = clock.interval(m);
        let dt = (t1 - t0) / f as f64;
        let mut frame = Vec::with_capacity(f);
        for i in 1..=f {
            // the last sample lands exactly on t_m
            let t = if i == f { t1 } else { t0 + i as f64 * dt };
            let (v, gap) = interpolate_at(trace, t)?;
            low_quality |= gap > LONG_GAP_INTERVALS * nominal;
            frame.push(v);
        }
        per_frame.push(frame);
    }
    Ok(AlignedSamples {
        per_frame,
        low_quality,
    })
}
