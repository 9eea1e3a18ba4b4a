//! Power traces: the raw sensor stream, its two on-disk formats, and the
//! oversample-and-average decimation performed by the acquisition hardware.
//!
//! On-disk formats:
//!
//! * CSV: optional `# sample_rate_hz=<float>` and `# t0_ns=<int>` comment
//!   lines, then one decimal power value per LF-terminated line.
//! * raw_f64le: a 24-byte header (`PAE1`, four zero bytes, sample rate as
//!   little-endian f64, `t0_ns` as little-endian i64) followed by the samples
//!   as little-endian f64.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Sample rate assumed for CSV traces without a `sample_rate_hz` header.
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 50_000.0;

pub const RAW_MAGIC: &[u8; 4] = b"PAE1";
pub const RAW_HEADER_LEN: usize = 24;

/// A timestamped sequence of power samples (watts) at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTrace {
    pub sample_rate_hz: f64,
    pub t0_ns: i64,
    pub samples: Vec<f64>,
}

impl PowerTrace {
    /// Builds a trace, rejecting a non-positive rate and non-finite samples.
    pub fn new(sample_rate_hz: f64, t0_ns: i64, samples: Vec<f64>) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sample_rate_hz must be positive, got {sample_rate_hz}"
            )));
        }
        if let Some(row) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFiniteSample(row + 1));
        }
        Ok(Self {
            sample_rate_hz,
            t0_ns,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    /// Nanoseconds between consecutive samples.
    pub fn sample_period_ns(&self) -> f64 {
        1e9 / self.sample_rate_hz
    }

    /// Timestamp of sample `index`, rounded to the nearest nanosecond.
    pub fn timestamp_ns(&self, index: usize) -> i64 {
        offset_ns(self.t0_ns, index, self.sample_rate_hz)
    }
}

/// `t0 + index / rate` in nanoseconds, rounded.
pub fn offset_ns(t0_ns: i64, index: usize, sample_rate_hz: f64) -> i64 {
    t0_ns + (index as f64 * 1e9 / sample_rate_hz).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    RawF64Le,
}

impl TraceFormat {
    /// Guesses the format from a file extension: `.csv` is CSV, anything
    /// else is raw.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => TraceFormat::Csv,
            _ => TraceFormat::RawF64Le,
        }
    }
}

impl FromStr for TraceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TraceFormat::Csv),
            "raw" | "raw_f64le" => Ok(TraceFormat::RawF64Le),
            other => Err(Error::InvalidConfig(format!("unknown trace format `{other}`"))),
        }
    }
}

pub fn read_trace(path: &Path, format: TraceFormat) -> Result<PowerTrace> {
    let bytes = fs::read(path)?;
    match format {
        TraceFormat::Csv => parse_csv(&String::from_utf8_lossy(&bytes)),
        TraceFormat::RawF64Le => parse_raw(&bytes),
    }
}

pub fn write_trace(trace: &PowerTrace, path: &Path, format: TraceFormat) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    match format {
        TraceFormat::Csv => {
            writeln!(out, "# sample_rate_hz={}", trace.sample_rate_hz)?;
            writeln!(out, "# t0_ns={}", trace.t0_ns)?;
            for s in &trace.samples {
                writeln!(out, "{s}")?;
            }
        }
        TraceFormat::RawF64Le => out.write_all(&encode_raw(trace))?,
    }
    out.flush()?;
    Ok(())
}

pub fn encode_raw(trace: &PowerTrace) -> Vec<u8> {
    let mut buf = Vec::with_capacity(RAW_HEADER_LEN + 8 * trace.samples.len());
    buf.extend_from_slice(RAW_MAGIC);
    buf.extend_from_slice(&[0u8; 4]);
    buf.extend_from_slice(&trace.sample_rate_hz.to_le_bytes());
    buf.extend_from_slice(&trace.t0_ns.to_le_bytes());
    for s in &trace.samples {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    buf
}

pub fn parse_raw(bytes: &[u8]) -> Result<PowerTrace> {
    if bytes.len() < RAW_HEADER_LEN {
        return Err(Error::MalformedHeader(format!(
            "raw trace needs a {RAW_HEADER_LEN}-byte header, file has {} bytes",
            bytes.len()
        )));
    }
    if &bytes[..4] != RAW_MAGIC {
        return Err(Error::MalformedHeader("bad magic, expected PAE1".into()));
    }
    let rate = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let t0 = i64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let body = &bytes[RAW_HEADER_LEN..];
    if body.is_empty() {
        return Err(Error::Empty("trace has no samples"));
    }
    if !body.len().is_multiple_of(8) {
        return Err(Error::Truncated(format!(
            "sample payload of {} bytes is not a multiple of 8",
            body.len()
        )));
    }
    let samples = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    PowerTrace::new(rate, t0, samples)
}

pub fn parse_csv(text: &str) -> Result<PowerTrace> {
    let mut rate = DEFAULT_SAMPLE_RATE_HZ;
    let mut t0 = 0i64;
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let Some((key, value)) = comment.split_once('=') else {
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "sample_rate_hz" => {
                    rate = value
                        .parse()
                        .map_err(|_| Error::MalformedHeader(format!("sample_rate_hz={value}")))?;
                }
                "t0_ns" => {
                    t0 = value
                        .parse()
                        .map_err(|_| Error::MalformedHeader(format!("t0_ns={value}")))?;
                }
                _ => {}
            }
            continue;
        }
        let value: f64 = line.parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            msg: format!("`{line}` is not a number"),
        })?;
        if !value.is_finite() {
            return Err(Error::NonFiniteSample(samples.len() + 1));
        }
        samples.push(value);
    }
    if samples.is_empty() {
        return Err(Error::Empty("trace has no samples"));
    }
    PowerTrace::new(rate, t0, samples)
}

/// Samples averaged into each output sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecimationSpec {
    pub avg_factor: usize,
}

impl DecimationSpec {
    pub fn new(avg_factor: usize) -> Result<Self> {
        if avg_factor == 0 {
            return Err(Error::InvalidConfig("avg_factor must be >= 1".into()));
        }
        Ok(Self { avg_factor })
    }
}

/// Block-averages `trace`, dividing the rate by the factor. A trailing
/// partial block is discarded.
pub fn decimate_avg(trace: &PowerTrace, spec: DecimationSpec) -> Result<PowerTrace> {
    if trace.is_empty() {
        return Err(Error::Empty("cannot decimate an empty trace"));
    }
    let factor = spec.avg_factor;
    if factor == 0 {
        return Err(Error::InvalidConfig("avg_factor must be >= 1".into()));
    }
    if trace.len() < factor {
        return Err(Error::TooFew {
            what: "samples for one averaging block",
            needed: factor,
            got: trace.len(),
        });
    }
    let samples = trace
        .samples
        .chunks_exact(factor)
        .map(|block| block.iter().sum::<f64>() / factor as f64)
        .collect();
    Ok(PowerTrace {
        sample_rate_hz: trace.sample_rate_hz / factor as f64,
        t0_ns: trace.t0_ns,
        samples,
    })
}
