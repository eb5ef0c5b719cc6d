use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sidecar metadata stored next to a trace as `<name>.meta.json`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub nt: usize,
    pub nr: usize,
    pub k: usize,
    pub nominal_rate_hz: f64,
    pub center_freq_hz: f64,
}

impl TraceMeta {
    pub fn links(&self) -> usize {
        self.nt * self.nr
    }

    pub fn row_len(&self) -> usize {
        self.links() * self.k
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsiSample {
    /// Seconds.
    pub t: f64,
    /// Power per (link, subcarrier), flattened as `link · K + subcarrier`.
    pub power: Vec<f64>,
}

/// Timestamped CSI power measurements over `Nt·Nr` links and `K` subcarriers.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiTrace {
    pub meta: TraceMeta,
    pub samples: Vec<CsiSample>,
}

impl CsiTrace {
    pub fn new(meta: TraceMeta, samples: Vec<CsiSample>) -> Result<Self> {
        let trace = CsiTrace { meta, samples };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if self.meta.k == 0 || self.meta.nt == 0 || self.meta.nr == 0 {
            return Err(Error::invalid(
                "trace needs at least one antenna pair and subcarrier",
            ));
        }
        let n = self.meta.row_len();
        for (i, s) in self.samples.iter().enumerate() {
            if s.power.len() != n {
                return Err(Error::invalid(format!(
                    "sample {i} has {} powers, expected {n}",
                    s.power.len()
                )));
            }
            if i > 0 && s.t <= self.samples[i - 1].t {
                return Err(Error::invalid(format!(
                    "timestamps not increasing at sample {i}"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn span(&self) -> Option<(f64, f64)> {
        Some((self.samples.first()?.t, self.samples.last()?.t))
    }
}

/// `foo.csv` → `foo.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    path.with_file_name(format!("{stem}.meta.json"))
}

fn header(n: usize) -> String {
    let mut h = String::from("t");
    for i in 1..=n {
        let _ = write!(h, ",p_{i}");
    }
    h
}

/// Render a trace as CSV. Shortest round-trip formatting keeps values bit-exact.
pub fn format_csi_trace(trace: &CsiTrace) -> String {
    let mut out = header(trace.meta.row_len());
    out.push('\n');
    for s in &trace.samples {
        let _ = write!(out, "{:?}", s.t);
        for p in &s.power {
            let _ = write!(out, ",{p:?}");
        }
        out.push('\n');
    }
    out
}

pub fn write_csi_trace(path: &Path, trace: &CsiTrace) -> Result<()> {
    let meta = serde_json::to_string_pretty(&trace.meta).map_err(|source| Error::Json {
        path: meta_path(path),
        source,
    })?;
    crate::evalkit::write_atomic(&meta_path(path), meta.as_bytes())?;
    crate::evalkit::write_atomic(path, format_csi_trace(trace).as_bytes())
}

/// Parse CSV trace text given its metadata.
pub fn parse_csi_text(text: &str, meta: TraceMeta, path: &Path) -> Result<CsiTrace> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let n = meta.row_len();
    let mut lines = text.lines().enumerate();
    let (_, head) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    if head.trim() != header(n) {
        return Err(err(1, format!("header must be `t,p_1,...,p_{n}`")));
    }
    let mut samples: Vec<CsiSample> = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n + 1 {
            return Err(err(
                lineno,
                format!("expected {} columns, found {}", n + 1, fields.len()),
            ));
        }
        let parse = |s: &str| -> Result<f64> {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| err(lineno, format!("malformed number `{s}`")))?;
            if !v.is_finite() {
                return Err(err(lineno, format!("non-finite value `{s}`")));
            }
            Ok(v)
        };
        let t = parse(fields[0])?;
        if let Some(prev) = samples.last() {
            if t <= prev.t {
                return Err(err(
                    lineno,
                    format!("timestamp {t} not after previous {}", prev.t),
                ));
            }
        }
        let power = fields[1..]
            .iter()
            .map(|f| parse(f))
            .collect::<Result<Vec<_>>>()?;
        if let Some(p) = power.iter().find(|p| **p < 0.0) {
            return Err(err(lineno, format!("negative power {p}")));
        }
        samples.push(CsiSample { t, power });
    }
    CsiTrace::new(meta, samples)
}

/// Read a CSV trace and its `.meta.json` sidecar.
pub fn parse_csi_trace(path: &Path) -> Result<CsiTrace> {
    let mpath = meta_path(path);
    let meta_text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let meta: TraceMeta = serde_json::from_str(&meta_text).map_err(|source| Error::Json {
        path: mpath,
        source,
    })?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csi_text(&text, meta, path)
}
