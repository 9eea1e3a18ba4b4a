//! Two-threshold malware decision rule.
//!
//! A PSD whose reconstruction error is strictly greater than `t_e` is an
//! outlier. A batch (or a whole run, see `eval`) is malware when its outlier
//! fraction is strictly greater than `t_o`.

mod stream;

pub use stream::{
    run_stream, run_stream_with, ActiveModel, FixedModel, ModelProvider, SampleRing, StreamSource, StreamStats,
    TraceReplay, VerdictSink,
};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::autoencoder::{forward, mse, AeModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Decision {
    Healthy,
    Malware,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Healthy => "healthy",
            Decision::Malware => "malware",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Decision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "healthy" => Ok(Decision::Healthy),
            "malware" => Ok(Decision::Malware),
            other => Err(Error::InvalidConfig(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsdClass {
    Inlier,
    Outlier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub t_e: f64,
    pub t_o: f64,
    pub batch_psds: usize,
    pub model_id: String,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            t_e: 0.91,
            t_o: 0.30,
            batch_psds: 500,
            model_id: "default".to_string(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_e.is_finite() && self.t_e > 0.0) {
            return Err(Error::InvalidConfig(format!("t_e must be positive, got {}", self.t_e)));
        }
        if !(self.t_o > 0.0 && self.t_o < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "t_o must lie in (0, 1), got {}",
                self.t_o
            )));
        }
        if self.batch_psds == 0 {
            return Err(Error::InvalidConfig("batch_psds must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome of the outlier-fraction rule over one batch of PSDs.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchVerdict {
    pub model_id: String,
    pub outlier_count: usize,
    pub total: usize,
    pub outlier_fraction: f64,
    pub decision: Decision,
    /// Start of the first window and end of the last window in the batch.
    pub window_span_ns: (i64, i64),
    pub per_psd_errors: Vec<f64>,
    /// Set on the short batch flushed when a stream ends.
    pub partial: bool,
}

/// Standardizes `psd`, runs it through the model and returns the mean
/// squared difference between standardized input and output.
pub fn reconstruction_error(model: &AeModel, psd: &[f64]) -> Result<f64> {
    let z = model.standardizer.standardize(psd)?;
    let pass = forward(model, &z)?;
    Ok(mse(&z, pass.output()))
}

pub fn classify_psd(err: f64, cfg: &DetectorConfig) -> PsdClass {
    if err > cfg.t_e {
        PsdClass::Outlier
    } else {
        PsdClass::Inlier
    }
}

/// `outlier_count / total > t_o`. Division is correctly rounded, so a ratio
/// equal to the decimal `t_o` (150/500 vs 0.30) compares equal.
pub fn fraction_exceeds(outliers: usize, total: usize, t_o: f64) -> bool {
    total > 0 && outliers as f64 / total as f64 > t_o
}

pub fn batch_decision(errors: &[f64], cfg: &DetectorConfig) -> Result<BatchVerdict> {
    batch_verdict(errors.to_vec(), cfg, &cfg.model_id, (0, 0), false)
}

pub(crate) fn batch_verdict(
    errors: Vec<f64>,
    cfg: &DetectorConfig,
    model_id: &str,
    window_span_ns: (i64, i64),
    partial: bool,
) -> Result<BatchVerdict> {
    if errors.is_empty() {
        return Err(Error::Empty("batch has no PSD errors"));
    }
    let outlier_count = errors
        .iter()
        .filter(|&&e| classify_psd(e, cfg) == PsdClass::Outlier)
        .count();
    let total = errors.len();
    let decision = if fraction_exceeds(outlier_count, total, cfg.t_o) {
        Decision::Malware
    } else {
        Decision::Healthy
    };
    Ok(BatchVerdict {
        model_id: model_id.to_string(),
        outlier_count,
        total,
        outlier_fraction: outlier_count as f64 / total as f64,
        decision,
        window_span_ns,
        per_psd_errors: errors,
        partial,
    })
}

/// Nearest-rank percentile: the value at rank `ceil(p/100 · n)` of the
/// sorted sample (rank at least 1).
pub fn nearest_rank(values: &[f64], percentile: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("no values for percentile"));
    }
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::InvalidConfig(format!(
            "percentile must lie in (0, 100], got {percentile}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // Small tolerance keeps e.g. 0.99 * 100 from rounding up to rank 100.
    let rank = ((percentile / 100.0 * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(n) - 1])
}

pub const MIN_CALIBRATION_ROWS: usize = 10;

/// Reconstruction-error threshold at `percentile` of the healthy
/// validation features.
pub fn calibrate_threshold(model: &AeModel, validation: &[Vec<f64>], percentile: f64) -> Result<f64> {
    if validation.len() < MIN_CALIBRATION_ROWS {
        return Err(Error::TooFew {
            what: "validation rows",
            needed: MIN_CALIBRATION_ROWS,
            got: validation.len(),
        });
    }
    let errors = validation
        .iter()
        .map(|row| reconstruction_error(model, row))
        .collect::<Result<Vec<_>>>()?;
    nearest_rank(&errors, percentile)
}

/// Writes `t_e` as a single decimal line.
pub fn write_threshold(path: &Path, t_e: f64) -> Result<()> {
    std::fs::write(path, format!("{t_e}\n"))?;
    Ok(())
}

pub fn read_threshold(path: &Path) -> Result<f64> {
    let text = std::fs::read_to_string(path)?;
    let t_e: f64 = text.trim().parse().map_err(|_| Error::Parse {
        line: 1,
        msg: format!("expected a threshold, found `{}`", text.trim()),
    })?;
    if !(t_e.is_finite() && t_e > 0.0) {
        return Err(Error::InvalidConfig(format!("threshold must be positive, got {t_e}")));
    }
    Ok(t_e)
}
