//! Welch power-spectral-density features.
//!
//! A window of `window_len` samples is cut into segments of `fft_len`
//! samples spaced `hop_len` apart. Each segment is multiplied by the window
//! function, transformed, and turned into a one-sided density periodogram
//! `|X[k]|² / (Fs Σw²)` with non-DC, non-Nyquist bins doubled. Periodograms
//! are averaged and optionally converted to dB. Consecutive windows advance
//! by `slide_len` samples.

mod features;
mod fft;

pub use features::{read_features, write_features, FeatureFormat, FeatureMatrix};
pub use fft::{fft_real, FftPlan};

use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::trace::{offset_ns, PowerTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowFn {
    /// Periodic Hann, `0.5 - 0.5 cos(2πn/N)`.
    Hann,
    Rect,
}

impl WindowFn {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowFn::Rect => vec![1.0; n],
            WindowFn::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

impl FromStr for WindowFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hann" => Ok(WindowFn::Hann),
            "rect" => Ok(WindowFn::Rect),
            other => Err(Error::InvalidConfig(format!("unknown window `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputScale {
    Db,
    Linear,
}

impl OutputScale {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputScale::Db => "db",
            OutputScale::Linear => "linear",
        }
    }
}

impl FromStr for OutputScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "db" => Ok(OutputScale::Db),
            "linear" => Ok(OutputScale::Linear),
            other => Err(Error::InvalidConfig(format!("unknown scale `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WelchConfig {
    pub window_len: usize,
    pub fft_len: usize,
    pub hop_len: usize,
    pub slide_len: usize,
    pub window_fn: WindowFn,
    pub output_scale: OutputScale,
    pub db_floor: f64,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self {
            window_len: 8192,
            fft_len: 2048,
            hop_len: 1024,
            slide_len: 1000,
            window_fn: WindowFn::Hann,
            output_scale: OutputScale::Db,
            db_floor: 1e-12,
        }
    }
}

impl WelchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.fft_len == 0 || !self.fft_len.is_power_of_two() {
            return bad(format!("fft_len must be a power of two, got {}", self.fft_len));
        }
        if self.fft_len > self.window_len {
            return bad(format!(
                "fft_len {} exceeds window_len {}",
                self.fft_len, self.window_len
            ));
        }
        if self.hop_len == 0 || self.hop_len > self.fft_len {
            return bad(format!("hop_len must be in 1..=fft_len, got {}", self.hop_len));
        }
        if self.slide_len == 0 {
            return bad("slide_len must be positive".into());
        }
        if !(self.db_floor.is_finite() && self.db_floor > 0.0) {
            return bad(format!("db_floor must be positive, got {}", self.db_floor));
        }
        Ok(())
    }

    pub fn segment_count(&self) -> usize {
        (self.window_len - self.fft_len) / self.hop_len + 1
    }

    pub fn feature_len(&self) -> usize {
        self.fft_len / 2 + 1
    }

    /// Number of windows `sliding_psd` emits for `n` samples.
    pub fn window_count(&self, n: usize) -> usize {
        if n < self.window_len {
            0
        } else {
            (n - self.window_len) / self.slide_len + 1
        }
    }
}

/// One PSD feature vector plus the metadata needed to place it in time and
/// frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdFeature {
    pub bins: Vec<f64>,
    pub bin_hz: f64,
    pub window_start_ns: i64,
}

/// Reusable Welch estimator. Holds the FFT plan, window and scratch buffers so
/// repeated estimates do not allocate.
#[derive(Debug, Clone)]
pub struct WelchEstimator {
    cfg: WelchConfig,
    sample_rate_hz: f64,
    plan: FftPlan,
    window: Vec<f64>,
    density_scale: f64,
    scratch: Vec<Complex64>,
    accum: Vec<f64>,
}

impl WelchEstimator {
    pub fn new(cfg: WelchConfig, sample_rate_hz: f64) -> Result<Self> {
        cfg.validate()?;
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        let plan = FftPlan::new(cfg.fft_len)?;
        let window = cfg.window_fn.coefficients(cfg.fft_len);
        let window_power: f64 = window.iter().map(|w| w * w).sum();
        Ok(Self {
            density_scale: 1.0 / (sample_rate_hz * window_power),
            scratch: vec![Complex64::new(0.0, 0.0); cfg.fft_len],
            accum: vec![0.0; cfg.feature_len()],
            sample_rate_hz,
            plan,
            window,
            cfg,
        })
    }

    pub fn config(&self) -> &WelchConfig {
        &self.cfg
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate_hz / self.cfg.fft_len as f64
    }

    /// Writes the PSD of `samples` into `out` (length `fft_len/2 + 1`).
    pub fn estimate_into(&mut self, samples: &[f64], out: &mut [f64]) -> Result<()> {
        let cfg = &self.cfg;
        if samples.len() != cfg.window_len {
            return Err(Error::LengthMismatch {
                expected: cfg.window_len,
                actual: samples.len(),
            });
        }
        if out.len() != cfg.feature_len() {
            return Err(Error::LengthMismatch {
                expected: cfg.feature_len(),
                actual: out.len(),
            });
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let n = cfg.fft_len;
        let nyquist = n / 2;
        self.accum.fill(0.0);
        let segments = cfg.segment_count();
        for seg in 0..segments {
            let start = seg * cfg.hop_len;
            for ((slot, &x), &w) in self
                .scratch
                .iter_mut()
                .zip(&samples[start..start + n])
                .zip(&self.window)
            {
                *slot = Complex64::new(x * w, 0.0);
            }
            self.plan.process(&mut self.scratch);
            for (k, acc) in self.accum.iter_mut().enumerate() {
                let mut p = self.scratch[k].norm_sqr() * self.density_scale;
                if k != 0 && k != nyquist {
                    p *= 2.0;
                }
                *acc += p;
            }
        }
        let inv_segments = 1.0 / segments as f64;
        for (o, &a) in out.iter_mut().zip(&self.accum) {
            let v = a * inv_segments;
            *o = match cfg.output_scale {
                OutputScale::Linear => v,
                OutputScale::Db => 10.0 * v.max(cfg.db_floor).log10(),
            };
        }
        Ok(())
    }

    pub fn estimate(&mut self, samples: &[f64], window_start_ns: i64) -> Result<PsdFeature> {
        let mut bins = vec![0.0; self.cfg.feature_len()];
        self.estimate_into(samples, &mut bins)?;
        Ok(PsdFeature {
            bins,
            bin_hz: self.bin_hz(),
            window_start_ns,
        })
    }
}

/// Welch PSD of exactly one window of samples. `window_start_ns` is left at 0.
pub fn welch_psd(samples: &[f64], cfg: &WelchConfig, sample_rate_hz: f64) -> Result<PsdFeature> {
    WelchEstimator::new(cfg.clone(), sample_rate_hz)?.estimate(samples, 0)
}

/// One PSD per `slide_len` offset while a full window fits in the trace.
pub fn sliding_psd(trace: &PowerTrace, cfg: &WelchConfig) -> Result<Vec<PsdFeature>> {
    cfg.validate()?;
    if trace.len() < cfg.window_len {
        return Err(Error::TooFew {
            what: "samples for one PSD window",
            needed: cfg.window_len,
            got: trace.len(),
        });
    }
    let mut est = WelchEstimator::new(cfg.clone(), trace.sample_rate_hz)?;
    (0..cfg.window_count(trace.len()))
        .map(|k| {
            let start = k * cfg.slide_len;
            est.estimate(
                &trace.samples[start..start + cfg.window_len],
                offset_ns(trace.t0_ns, start, trace.sample_rate_hz),
            )
        })
        .collect()
}
