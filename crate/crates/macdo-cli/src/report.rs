//! Report documents and deterministic file emission. Struct field order
//! fixes the JSON layout and f64 values print in shortest round-trip form,
//! so identical runs produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use macdo::matrix::Matrix;
use macdo::metrics::RunReport;
use macdo::oracle::ConvLayerSpec;

use crate::config::ExperimentConfig;
use crate::errors::{CliError, CliResult};

/// Error of a simulated output against its integer oracle, in code units.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ErrorStats {
    pub max_abs: f64,
    pub rmse: f64,
}

pub fn error_stats(actual: &Matrix<f64>, oracle: &Matrix<i64>) -> ErrorStats {
    let mut max_abs = 0.0f64;
    let mut sum_sq = 0.0;
    let n = (actual.rows() * actual.cols()).max(1);
    for i in 0..actual.rows() {
        for j in 0..actual.cols() {
            let e = actual[(i, j)] - oracle[(i, j)] as f64;
            max_abs = max_abs.max(e.abs());
            sum_sq += e * e;
        }
    }
    ErrorStats {
        max_abs,
        rmse: (sum_sq / n as f64).sqrt(),
    }
}

#[derive(Debug, Serialize)]
pub struct RunDocument<'a> {
    pub command: &'static str,
    pub config: &'a ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer: Option<ConvLayerSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    pub run: RunReport,
    pub oracle_error: ErrorStats,
}

#[derive(Debug, Serialize)]
pub struct SurfaceDocument<'a> {
    pub command: &'static str,
    pub config: &'a ExperimentConfig,
    pub accumulations: u32,
    pub max_abs_err_mv: f64,
    pub max_rel_err_pct: f64,
}

pub fn ensure_out_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io("creating output directory", e))
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<PathBuf> {
    let path = dir.join(name);
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Usage(format!("serializing {name}: {e}")))?;
    body.push('\n');
    fs::write(&path, body).map_err(|e| CliError::io("writing report", e))?;
    Ok(path)
}

pub fn write_text(dir: &Path, name: &str, body: &str) -> CliResult<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| CliError::io("writing report", e))?;
    Ok(path)
}

/// Formats an f64 for CSV output (shortest round-trip form).
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
