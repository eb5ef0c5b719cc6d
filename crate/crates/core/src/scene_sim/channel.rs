use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::timeline::{limb_reflectors, SceneTimeline};
use crate::csi_ingest::{CsiSample, CsiTrace, TraceMeta};
use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseOffsets {
    Zero,
    Random,
}

/// Measurement impairments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Gaussian noise std as a fraction of the mean static power.
    pub gaussian: f64,
    /// Probability that a single power value is replaced by an outlier.
    pub impulse_prob: f64,
    /// Outlier magnitude range in units of mean static power.
    pub impulse_scale: (f64, f64),
    /// Timestamp jitter as a fraction of the nominal interval.
    pub jitter: f64,
    pub drop_prob: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            gaussian: 0.02,
            impulse_prob: 0.005,
            impulse_scale: (1.0, 4.0),
            jitter: 0.2,
            drop_prob: 0.02,
        }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        NoiseConfig {
            gaussian: 0.0,
            impulse_prob: 0.0,
            impulse_scale: (0.0, 0.0),
            jitter: 0.0,
            drop_prob: 0.0,
        }
    }
}

/// Static environment plus reflector physics for one room.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub tx: Vec<[f64; 3]>,
    pub rx: Vec<[f64; 3]>,
    pub center_freq_hz: f64,
    pub subcarrier_hz: Vec<f64>,
    /// `static_cfr[i][k]` as `(re, im)` for link `i = tx·|rx| + rx`, subcarrier `k`.
    pub static_cfr: Vec<Vec<(f64, f64)>>,
    /// Reflection amplitude per meter of limb.
    pub reflectivity: f64,
    pub phase: PhaseOffsets,
    pub noise: NoiseConfig,
}

/// `n` subcarriers evenly spaced over `bandwidth` around `center`, at bin centers.
pub fn subcarrier_frequencies(center: f64, bandwidth: f64, n: usize) -> Vec<f64> {
    let step = bandwidth / n as f64;
    (0..n)
        .map(|k| center - bandwidth / 2.0 + (k as f64 + 0.5) * step)
        .collect()
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// `e^{−j2π d f/c}` for every subcarrier, by recurrence over the even spacing.
fn path_phasors(d: f64, freqs: &[f64], out: &mut [Complex64]) {
    let f0 = freqs[0];
    let step = if freqs.len() > 1 {
        freqs[1] - freqs[0]
    } else {
        0.0
    };
    let mut z = Complex64::from_polar(1.0, -2.0 * PI * d * f0 / SPEED_OF_LIGHT);
    let rot = Complex64::from_polar(1.0, -2.0 * PI * d * step / SPEED_OF_LIGHT);
    for o in out.iter_mut() {
        *o = z;
        z *= rot;
    }
}

impl ChannelModel {
    /// A 3×3 MIMO link pair along one side wall of the floor, 30 subcarriers over
    /// 20 MHz at 5.6 GHz, and a static CFR of line of sight plus fixed wall scatterers.
    pub fn indoor(seed: u64) -> Self {
        let tx = vec![[0.5, -2.5, 1.0], [2.5, -2.5, 1.0], [4.5, -2.5, 1.0]];
        let rx = vec![[1.5, -2.5, 1.2], [3.5, -2.5, 1.2], [5.5, -2.5, 1.2]];
        let freqs = subcarrier_frequencies(5.6e9, 20e6, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scatterers: Vec<([f64; 3], f64)> = (0..4)
            .map(|_| {
                let p = [
                    rng.random_range(0.0..6.5),
                    if rng.random_bool(0.5) {
                        2.6
                    } else {
                        rng.random_range(-2.0..2.0)
                    },
                    rng.random_range(0.2..2.5),
                ];
                (p, rng.random_range(0.1..0.2))
            })
            .collect();
        let mut static_cfr = Vec::new();
        let mut ph = vec![Complex64::default(); freqs.len()];
        for &t in &tx {
            for &r in &rx {
                let mut h = vec![Complex64::default(); freqs.len()];
                let d = dist(t, r);
                path_phasors(d, &freqs, &mut ph);
                h.iter_mut().zip(&ph).for_each(|(h, p)| *h += p / d);
                for &(s, g) in &scatterers {
                    let d = dist(t, s) + dist(s, r);
                    path_phasors(d, &freqs, &mut ph);
                    h.iter_mut().zip(&ph).for_each(|(h, p)| *h += p * (g / d));
                }
                static_cfr.push(h.iter().map(|z| (z.re, z.im)).collect());
            }
        }
        ChannelModel {
            tx,
            rx,
            center_freq_hz: 5.6e9,
            subcarrier_hz: freqs,
            static_cfr,
            reflectivity: 0.4,
            phase: PhaseOffsets::Random,
            noise: NoiseConfig::default(),
        }
    }

    pub fn links(&self) -> usize {
        self.tx.len() * self.rx.len()
    }

    pub fn link_endpoints(&self, i: usize) -> ([f64; 3], [f64; 3]) {
        (self.tx[i / self.rx.len()], self.rx[i % self.rx.len()])
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.subcarrier_hz.len();
        if k == 0 || self.static_cfr.is_empty() {
            return Err(Error::invalid("static CFR table is empty"));
        }
        if self.static_cfr.len() != self.links() || self.static_cfr.iter().any(|r| r.len() != k) {
            return Err(Error::invalid(
                "static CFR table does not match links × subcarriers",
            ));
        }
        if self
            .static_cfr
            .iter()
            .flatten()
            .any(|&(re, im)| !(re.hypot(im) > 0.0))
        {
            return Err(Error::invalid("static CFR must be nonzero everywhere"));
        }
        Ok(())
    }

    pub fn mean_static_power(&self) -> f64 {
        let n = self.static_cfr.iter().map(Vec::len).sum::<usize>() as f64;
        self.static_cfr
            .iter()
            .flatten()
            .map(|&(a, b)| a * a + b * b)
            .sum::<f64>()
            / n
    }

    /// Noise-free CFR of every link at one instant, given limb reflectors `(point, amplitude)`.
    pub fn cfr(&self, reflectors: &[([f64; 3], f64)]) -> Vec<Vec<Complex64>> {
        let k = self.subcarrier_hz.len();
        let mut ph = vec![Complex64::default(); k];
        (0..self.links())
            .map(|i| {
                let (t, r) = self.link_endpoints(i);
                let mut h: Vec<Complex64> = self.static_cfr[i]
                    .iter()
                    .map(|&(a, b)| Complex64::new(a, b))
                    .collect();
                for &(p, amp) in reflectors {
                    let (d1, d2) = (dist(t, p), dist(p, r));
                    path_phasors(d1 + d2, &self.subcarrier_hz, &mut ph);
                    // bistatic spreading: each leg loses 1/d, so near-link bodies dominate
                    let g = 2.0 * amp / (d1 * d2);
                    h.iter_mut().zip(&ph).for_each(|(h, z)| *h += z * g);
                }
                h
            })
            .collect()
    }

    /// Limb reflectors of every person at time `t`.
    pub fn reflectors_at(&self, timeline: &SceneTimeline, t: f64) -> Vec<([f64; 3], f64)> {
        timeline
            .people
            .iter()
            .flat_map(|p| limb_reflectors(&p.body_at(t)))
            .map(|(mid, len)| (mid, self.reflectivity * len))
            .collect()
    }

    pub fn trace_meta(&self, rate: f64) -> TraceMeta {
        TraceMeta {
            nt: self.tx.len(),
            nr: self.rx.len(),
            k: self.subcarrier_hz.len(),
            nominal_rate_hz: rate,
            center_freq_hz: self.center_freq_hz,
        }
    }
}

/// Sample CSI power over the timeline's span at roughly `rate` Hz.
///
/// The first and last samples sit exactly at `0` and `duration` so the trace
/// always covers the whole timeline.
pub fn synthesize_csi(
    timeline: &SceneTimeline,
    channel: &ChannelModel,
    rate: f64,
    seed: u64,
) -> Result<CsiTrace> {
    if !(rate > 0.0) {
        return Err(Error::invalid(format!(
            "sampling rate must be positive, got {rate}"
        )));
    }
    channel.validate()?;
    let noise = channel.noise;
    // separate streams so the phase process never shifts the noise draws
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phase_rng = ChaCha8Rng::seed_from_u64(seed);
    phase_rng.set_stream(1);
    let mean_power = channel.mean_static_power();
    let gauss = Normal::new(0.0, (noise.gaussian * mean_power).max(0.0)).unwrap();
    // interior samples are those that cannot be jittered past the end
    let interior = (1..)
        .take_while(|&i| (i as f64 + noise.jitter.abs()) / rate < timeline.duration)
        .count();
    let count = interior + 2;
    let mut samples = Vec::with_capacity(count);
    for idx in 0..count {
        let t = if idx == 0 {
            0.0
        } else if idx == count - 1 {
            timeline.duration
        } else {
            idx as f64 / rate + noise.jitter * rng.random_range(-1.0..1.0) / rate
        };
        let dropped = idx > 0 && idx < count - 1 && rng.random_bool(noise.drop_prob);
        let h = channel.cfr(&channel.reflectors_at(timeline, t));
        let mut power = Vec::with_capacity(channel.links() * channel.subcarrier_hz.len());
        for z in h.iter().flatten() {
            let rho = match channel.phase {
                PhaseOffsets::Zero => 0.0,
                PhaseOffsets::Random => phase_rng.random_range(0.0..2.0 * PI),
            };
            let mut p = (z * Complex64::from_polar(1.0, -rho)).norm_sqr();
            p += gauss.sample(&mut rng);
            if rng.random_bool(noise.impulse_prob) {
                let (lo, hi) = noise.impulse_scale;
                p += mean_power
                    * if hi > lo {
                        rng.random_range(lo..hi)
                    } else {
                        lo
                    };
            }
            power.push(p.max(0.0));
        }
        if !dropped {
            samples.push(CsiSample { t, power });
        }
    }
    CsiTrace::new(channel.trace_meta(rate), samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subcarriers_span_the_band() {
        let f = subcarrier_frequencies(5.6e9, 20e6, 30);
        assert_eq!(f.len(), 30);
        assert!((f[0] - (5.59e9 + 20e6 / 60.0)).abs() < 1e-3);
        assert!((f[29] - f[0] - 29.0 * 20e6 / 30.0).abs() < 1e-3);
    }

    #[test]
    fn recurrence_matches_direct_phasors() {
        let f = subcarrier_frequencies(5.6e9, 20e6, 30);
        let mut out = vec![Complex64::default(); 30];
        path_phasors(7.3, &f, &mut out);
        for (z, &fk) in out.iter().zip(&f) {
            let want = Complex64::from_polar(1.0, -2.0 * PI * 7.3 * fk / SPEED_OF_LIGHT);
            assert!((z - want).norm() < 1e-9);
        }
    }

    #[test]
    fn indoor_model_is_valid() {
        let ch = ChannelModel::indoor(0);
        ch.validate().unwrap();
        assert_eq!(ch.links(), 9);
        let mut empty = ch.clone();
        empty.static_cfr.clear();
        assert!(empty.validate().is_err());
    }
}
