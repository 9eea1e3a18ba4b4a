//! PSD feature files.
//!
//! CSV: `# bin_hz=<float>` and `# scale=<db|linear>` header lines, then one
//! feature per line as comma-separated values.
//!
//! Raw matrix: 32-byte header (`PAF1`, scale code byte `0`=db `1`=linear,
//! three zero bytes, bin_hz as LE f64, row count as LE u64, column count as
//! LE u64) followed by the rows as LE f64, row-major.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{OutputScale, PsdFeature};

pub const FEATURE_MAGIC: &[u8; 4] = b"PAF1";
const FEATURE_HEADER_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Csv,
    RawF64Le,
}

impl FeatureFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FeatureFormat::Csv,
            _ => FeatureFormat::RawF64Le,
        }
    }
}

/// Rows of equal-length PSD features sharing a bin width and scale.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub bin_hz: f64,
    pub scale: OutputScale,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn from_features(features: &[PsdFeature], scale: OutputScale) -> Result<Self> {
        let first = features.first().ok_or(Error::Empty("no features"))?;
        let cols = first.bins.len();
        if let Some(bad) = features.iter().find(|f| f.bins.len() != cols) {
            return Err(Error::LengthMismatch {
                expected: cols,
                actual: bad.bins.len(),
            });
        }
        Ok(Self {
            bin_hz: first.bin_hz,
            scale,
            rows: features.iter().map(|f| f.bins.clone()).collect(),
        })
    }

    pub fn cols(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    fn check(&self) -> Result<()> {
        let cols = self.cols();
        for row in &self.rows {
            if row.len() != cols {
                return Err(Error::LengthMismatch {
                    expected: cols,
                    actual: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput);
            }
        }
        Ok(())
    }
}

pub fn write_features(m: &FeatureMatrix, path: &Path, format: FeatureFormat) -> Result<()> {
    m.check()?;
    let mut out = BufWriter::new(fs::File::create(path)?);
    match format {
        FeatureFormat::Csv => {
            writeln!(out, "# bin_hz={}", m.bin_hz)?;
            writeln!(out, "# scale={}", m.scale.as_str())?;
            let mut line = String::new();
            for row in &m.rows {
                line.clear();
                for (i, v) in row.iter().enumerate() {
                    if i > 0 {
                        line.push(',');
                    }
                    line.push_str(&v.to_string());
                }
                line.push('\n');
                out.write_all(line.as_bytes())?;
            }
        }
        FeatureFormat::RawF64Le => {
            out.write_all(FEATURE_MAGIC)?;
            let code = match m.scale {
                OutputScale::Db => 0u8,
                OutputScale::Linear => 1u8,
            };
            out.write_all(&[code, 0, 0, 0])?;
            out.write_all(&m.bin_hz.to_le_bytes())?;
            out.write_all(&(m.rows.len() as u64).to_le_bytes())?;
            out.write_all(&(m.cols() as u64).to_le_bytes())?;
            for v in m.rows.iter().flatten() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_features(path: &Path, format: FeatureFormat) -> Result<FeatureMatrix> {
    let bytes = fs::read(path)?;
    let m = match format {
        FeatureFormat::Csv => parse_csv(&String::from_utf8_lossy(&bytes))?,
        FeatureFormat::RawF64Le => parse_raw(&bytes)?,
    };
    if m.rows.is_empty() {
        return Err(Error::Empty("feature file has no rows"));
    }
    m.check()?;
    Ok(m)
}

fn parse_csv(text: &str) -> Result<FeatureMatrix> {
    let mut bin_hz = None;
    let mut scale = OutputScale::Db;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                match key.trim() {
                    "bin_hz" => {
                        bin_hz = Some(
                            value
                                .trim()
                                .parse()
                                .map_err(|_| Error::MalformedHeader(format!("bin_hz={}", value.trim())))?,
                        )
                    }
                    "scale" => scale = value.trim().parse()?,
                    _ => {}
                }
            }
            continue;
        }
        let row = line
            .split(',')
            .map(|v| {
                v.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    msg: format!("`{}` is not a number", v.trim()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let bin_hz = bin_hz.ok_or_else(|| Error::MalformedHeader("missing `# bin_hz=`".into()))?;
    Ok(FeatureMatrix { bin_hz, scale, rows })
}

fn parse_raw(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < FEATURE_HEADER_LEN || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::MalformedHeader("not a PAF1 feature matrix".into()));
    }
    let scale = match bytes[4] {
        0 => OutputScale::Db,
        1 => OutputScale::Linear,
        c => return Err(Error::MalformedHeader(format!("unknown scale code {c}"))),
    };
    let bin_hz = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let rows = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
    let body = &bytes[FEATURE_HEADER_LEN..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::MalformedHeader("matrix size overflows".into()))?;
    if body.len() != expected {
        return Err(Error::Truncated(format!(
            "expected {expected} payload bytes for {rows}x{cols}, found {}",
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let rows = if cols == 0 {
        Vec::new()
    } else {
        values.chunks(cols).map(<[f64]>::to_vec).collect()
    };
    Ok(FeatureMatrix { bin_hz, scale, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureMatrix {
        FeatureMatrix {
            bin_hz: 24.4140625,
            scale: OutputScale::Db,
            rows: vec![vec![-1.5, 0.1, 3.0e-7], vec![2.0, -120.0, 0.333]],
        }
    }

    #[test]
    fn csv_and_raw_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for (name, fmt) in [("f.csv", FeatureFormat::Csv), ("f.paf", FeatureFormat::RawF64Le)] {
            let path = dir.path().join(name);
            assert_eq!(FeatureFormat::from_path(&path), fmt);
            write_features(&sample(), &path, fmt).unwrap();
            assert_eq!(read_features(&path, fmt).unwrap(), sample());
        }
    }

    #[test]
    fn csv_header_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        write_features(&sample(), &path, FeatureFormat::Csv).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# bin_hz=24.4140625"));
        assert_eq!(lines.next(), Some("# scale=db"));
        assert_eq!(lines.next(), Some("-1.5,0.1,0.0000003"));
    }

    #[test]
    fn ragged_or_headerless_csv_rejected() {
        assert!(parse_csv("1,2\n3\n").is_err());
        let m = parse_csv("# bin_hz=1\n1,2\n3\n").unwrap();
        assert!(m.check().is_err());
    }

    #[test]
    fn truncated_raw_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.paf");
        write_features(&sample(), &path, FeatureFormat::RawF64Le).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(parse_raw(&bytes), Err(Error::Truncated(_))));
    }
}
