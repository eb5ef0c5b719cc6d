//! Metrics, file formats and the end-to-end pipeline driver.

mod metrics;
mod pipeline;
mod tensorfile;

pub use metrics::{
    auroc, detection_metrics, match_people, pck, roc_curve, DetectionMetrics, MetricsReport,
    PckAccumulator, PckReport,
};
pub use pipeline::{
    detector_input, format_decisions, gop_features, load_dataset, localization_pck,
    parse_decisions, read_decisions, run_bench, run_detect, run_eval, run_localize, run_simulate,
    run_train_detector, run_train_pose, true_pairing, visual_features, wireless_features,
    BenchReport, DecisionRow, PipelineConfig, StageTiming, STAGE_DETECT, STAGE_LOCALIZE,
    STAGE_POSE, STAGE_PREPROCESS, STAGE_TOTAL, STAGE_VISUAL,
};
pub use tensorfile::{
    decode_tensors, encode_tensors, load_tensor, load_tensors, save_tensor, save_tensors, MAGIC,
    NAME_LEN,
};

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Write `bytes` to a sibling temporary file, then rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?
        .to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Serialize `value` as pretty JSON and write it atomically.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}
