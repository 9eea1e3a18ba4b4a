//! Edge malware detection from high-rate power telemetry.
//!
//! Power traces are turned into Welch PSD feature vectors, a small
//! autoencoder trained on healthy signatures scores each vector by its
//! reconstruction error, and a two-threshold rule turns scores into
//! per-batch or per-run malware decisions. The `netmon` module ships those
//! decisions from edge agents to a collector.

pub mod autoencoder;
pub mod campaign;
pub mod detector;
pub mod error;
pub mod eval;
pub mod netmon;
pub mod psd;
pub mod rng;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};
