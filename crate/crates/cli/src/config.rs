//! Optional TOML configuration file. Every key is optional; values given on
//! the command line (or through `PAELLA_*` environment variables) win.
//!
//! ```toml
//! [welch]
//! window_len = 8192
//! fft_len = 2048
//! hop_len = 1024
//! slide_len = 1000
//! window = "hann"      # or "rect"
//! scale = "db"         # or "linear"
//!
//! [train]
//! batch_size = 8
//! epochs = 5
//! learning_rate = 0.01
//! l1_lambda = 1e-5
//! seed = 0
//!
//! [detector]
//! t_e = 0.91
//! t_o = 0.30
//! batch_psds = 500
//!
//! [netmon]
//! broker_url = "tcp://127.0.0.1:1883"
//! node_id = "node-01"
//! ```

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub welch: WelchSection,
    pub train: TrainSection,
    pub detector: DetectorSection,
    pub netmon: NetmonSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WelchSection {
    pub window_len: Option<usize>,
    pub fft_len: Option<usize>,
    pub hop_len: Option<usize>,
    pub slide_len: Option<usize>,
    pub window: Option<String>,
    pub scale: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub l1_lambda: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub t_e: Option<f64>,
    pub t_o: Option<f64>,
    pub batch_psds: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetmonSection {
    pub broker_url: Option<String>,
    pub node_id: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("in config {}", p.display()))
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file() {
        let c = FileConfig::parse("[detector]\nt_e = 1.5\n[welch]\nwindow = \"rect\"\n").unwrap();
        assert_eq!(c.detector.t_e, Some(1.5));
        assert_eq!(c.detector.t_o, None);
        assert_eq!(c.welch.window.as_deref(), Some("rect"));
        assert!(c.netmon.broker_url.is_none());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(FileConfig::parse("[detector]\nte = 1.5\n").is_err());
        assert!(FileConfig::parse("[other]\n").is_err());
    }
}
