//! Run manifests: TSV with columns `run_id`, `benchmark_id`, `label`,
//! `path`. Lines starting with `#` are comments; `# format_version=N`
//! declares the version (1 when absent). Relative paths resolve against the
//! manifest's directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use paella_core::detector::Decision;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub run_id: String,
    pub benchmark_id: String,
    pub label: Decision,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub format_version: u32,
    pub entries: Vec<ManifestEntry>,
}

impl RunManifest {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut format_version = MANIFEST_VERSION;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("format_version=") {
                    format_version = v
                        .trim()
                        .parse()
                        .with_context(|| format!("line {lineno}: bad format_version"))?;
                    if format_version != MANIFEST_VERSION {
                        bail!("unsupported manifest format_version {format_version}");
                    }
                }
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                bail!("line {lineno}: expected 4 tab-separated columns, found {}", cols.len());
            }
            let label: Decision = cols[2]
                .parse()
                .with_context(|| format!("line {lineno}: label must be healthy or malware"))?;
            let path = Path::new(cols[3]);
            entries.push(ManifestEntry {
                run_id: cols[0].to_string(),
                benchmark_id: cols[1].to_string(),
                label,
                path: if path.is_absolute() {
                    path.to_path_buf()
                } else {
                    base_dir.join(path)
                },
            });
        }
        if entries.is_empty() {
            bail!("manifest has no runs");
        }
        Ok(Self {
            format_version,
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in manifest {}", path.display()))
    }

    /// Renders entries with paths written relative to `base_dir` where
    /// possible.
    pub fn render(&self, base_dir: &Path) -> String {
        let mut out = format!(
            "# format_version={}\n# run_id\tbenchmark_id\tlabel\tpath\n",
            self.format_version
        );
        for e in &self.entries {
            let p = e.path.strip_prefix(base_dir).unwrap_or(&e.path);
            let _ = writeln!(out, "{}\t{}\t{}\t{}", e.run_id, e.benchmark_id, e.label, p.display());
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        std::fs::write(path, self.render(base)).with_context(|| format!("writing manifest {}", path.display()))
    }
}
