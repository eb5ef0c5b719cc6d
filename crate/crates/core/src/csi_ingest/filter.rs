//! Low-pass Butterworth design via the bilinear transform, realized as
//! cascaded second-order sections in transposed direct form II.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// One biquad: `H(z) = (b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Section {
    /// Complex frequency response at normalized angular frequency `w` (rad/sample).
    pub fn response(&self, w: f64) -> (f64, f64) {
        // numerator and denominator evaluated at z⁻¹ = e^{-jw}
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let nr = self.b[0] + self.b[1] * c1 + self.b[2] * c2;
        let ni = self.b[1] * s1 + self.b[2] * s2;
        let dr = 1.0 + self.a[0] * c1 + self.a[1] * c2;
        let di = self.a[0] * s1 + self.a[1] * s2;
        let den = dr * dr + di * di;
        ((nr * dr + ni * di) / den, (ni * dr - nr * di) / den)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Butterworth {
    pub sections: Vec<Section>,
    pub fs: f64,
    /// Cutoff actually realized, after clamping below Nyquist.
    pub cutoff: f64,
}

/// Largest realizable cutoff as a fraction of Nyquist.
pub const MAX_CUTOFF_FRACTION: f64 = 0.9;

/// Clamp a requested cutoff to `0.9 · fs/2`.
pub fn effective_cutoff(fs: f64, cutoff: f64) -> f64 {
    cutoff.min(MAX_CUTOFF_FRACTION * fs / 2.0)
}

impl Butterworth {
    pub fn lowpass(fs: f64, cutoff: f64, order: usize) -> Result<Self> {
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(Error::invalid(format!(
                "sampling rate must be positive, got {fs}"
            )));
        }
        if order < 1 {
            return Err(Error::invalid("filter order must be at least 1"));
        }
        if !(cutoff > 0.0) {
            return Err(Error::invalid(format!(
                "cutoff must be positive, got {cutoff}"
            )));
        }
        let fc = effective_cutoff(fs, cutoff);
        let k = (PI * fc / fs).tan();
        let k2 = k * k;
        let mut sections = Vec::with_capacity(order.div_ceil(2));
        for i in 0..order / 2 {
            // analog pole pair at angle θ from the negative real axis; q = 2·sin of the pole angle
            let theta = PI * (2 * i + 1) as f64 / (2 * order) as f64;
            let q = 2.0 * theta.sin();
            let norm = 1.0 + q * k + k2;
            let b0 = k2 / norm;
            sections.push(Section {
                b: [b0, 2.0 * b0, b0],
                a: [2.0 * (k2 - 1.0) / norm, (1.0 - q * k + k2) / norm],
            });
        }
        if order % 2 == 1 {
            let b0 = k / (1.0 + k);
            sections.push(Section {
                b: [b0, b0, 0.0],
                a: [(k - 1.0) / (k + 1.0), 0.0],
            });
        }
        Ok(Butterworth {
            sections,
            fs,
            cutoff: fc,
        })
    }

    /// Magnitude response at `freq` Hz.
    pub fn gain(&self, freq: f64) -> f64 {
        let w = 2.0 * PI * freq / self.fs;
        self.sections
            .iter()
            .map(|s| {
                let (re, im) = s.response(w);
                (re * re + im * im).sqrt()
            })
            .product()
    }

    /// Causal filtering from a zero initial state.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        self.run(x, 0.0)
    }

    /// Causal filtering with the state primed as if `x[0]` had been held forever,
    /// which suppresses the start-up transient on short windows.
    pub fn filter_primed(&self, x: &[f64]) -> Vec<f64> {
        self.run(x, x.first().copied().unwrap_or(0.0))
    }

    fn run(&self, x: &[f64], level: f64) -> Vec<f64> {
        let mut y = x.to_vec();
        // each section has unit DC gain, so the primed level passes through unchanged
        for s in &self.sections {
            let mut z2 = (s.b[2] - s.a[1]) * level;
            let mut z1 = (s.b[1] - s.a[0]) * level + z2;
            for v in y.iter_mut() {
                let input = *v;
                let out = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[0] * out + z2;
                z2 = s.b[2] * input - s.a[1] * out;
                *v = out;
            }
        }
        y
    }
}

/// Zero-state causal low-pass Butterworth filtering of one series.
pub fn butterworth_lowpass(series: &[f64], fs: f64, cutoff: f64, order: usize) -> Result<Vec<f64>> {
    Ok(Butterworth::lowpass(fs, cutoff, order)?.filter(series))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_dc_gain() {
        for order in 1..=6 {
            let f = Butterworth::lowpass(100.0, 20.0, order).unwrap();
            assert!((f.gain(0.0) - 1.0).abs() < 1e-12, "order {order}");
            // -3 dB at the cutoff for every order
            assert!((f.gain(20.0) - 0.5f64.sqrt()).abs() < 1e-9, "order {order}");
        }
    }

    #[test]
    fn constant_series_settles() {
        let y = butterworth_lowpass(&[3.0; 400], 100.0, 10.0, 4).unwrap();
        assert!(y[200..].iter().all(|v| (v - 3.0).abs() < 1e-3));
    }

    #[test]
    fn primed_filter_has_no_transient() {
        let f = Butterworth::lowpass(67.5, 20.0, 4).unwrap();
        let y = f.filter_primed(&[2.5; 50]);
        assert!(y.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn cutoff_above_nyquist_is_clamped() {
        let f = Butterworth::lowpass(67.5, 60.0, 4).unwrap();
        assert!((f.cutoff - 0.9 * 33.75).abs() < 1e-12);
        assert!(f.gain(33.0) < f.gain(10.0));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(Butterworth::lowpass(0.0, 10.0, 4).is_err());
        assert!(Butterworth::lowpass(-1.0, 10.0, 4).is_err());
        assert!(Butterworth::lowpass(100.0, 10.0, 0).is_err());
    }
}
