//! Model files.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! "PAEM"            magic
//! u32               format version (1)
//! u32               number of widths D (layers + 1)
//! u64 × D           layer widths, input first
//! u8 × (D-1)        activation codes (0 = tanh, 1 = relu)
//! f64               l1_lambda
//! per layer:        weights (outputs × inputs, row-major) f64, then bias f64
//! u8                standardizer fitted flag
//! f64 × width[0]    standardizer mean
//! f64 × width[0]    standardizer std
//! ```

use std::fs;
use std::path::Path;

use super::{Activation, AeModel};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"PAEM";
pub const MODEL_FORMAT_VERSION: u32 = 1;

pub fn encode_model(model: &AeModel) -> Vec<u8> {
    let dims = model.dims();
    let mut buf = Vec::with_capacity(64 + 8 * (model.param_count() + 2 * dims[0]));
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in &dims {
        buf.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for layer in &model.layers {
        buf.push(match layer.activation {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        });
    }
    buf.extend_from_slice(&model.l1_lambda.to_le_bytes());
    for layer in &model.layers {
        for v in layer.weights.iter().chain(&layer.bias) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let st = &model.standardizer;
    buf.push(u8::from(st.fitted));
    for v in st.mean.iter().chain(&st.std) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated(format!("model file ends inside {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, out: &mut [f64], what: &str) -> Result<()> {
        let raw = self.take(out.len() * 8, what)?;
        for (o, c) in out.iter_mut().zip(raw.chunks_exact(8)) {
            *o = f64::from_le_bytes(c.try_into().unwrap());
        }
        Ok(())
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<AeModel> {
    if bytes.len() < 4 || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::VersionMismatch("missing PAEM magic".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32("header")?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::VersionMismatch(format!(
            "format version {version}, this build reads {MODEL_FORMAT_VERSION}"
        )));
    }
    let n_dims = r.u32("header")? as usize;
    if !(2..=64).contains(&n_dims) {
        return Err(Error::ShapeMismatch(format!("{n_dims} layer widths")));
    }
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        let d = r.u64("layer widths")?;
        if d == 0 || d > (1 << 24) {
            return Err(Error::ShapeMismatch(format!("layer width {d}")));
        }
        dims.push(d as usize);
    }
    let mut acts = Vec::with_capacity(n_dims - 1);
    for _ in 1..n_dims {
        acts.push(match r.u8("activations")? {
            0 => Activation::Tanh,
            1 => Activation::Relu,
            c => return Err(Error::ShapeMismatch(format!("unknown activation code {c}"))),
        });
    }
    let l1 = f64::from_le_bytes(r.take(8, "l1_lambda")?.try_into().unwrap());
    let mut model = AeModel::zeros(&dims, &acts, l1)?;
    for layer in &mut model.layers {
        r.f64s(&mut layer.weights, "weights")?;
        r.f64s(&mut layer.bias, "biases")?;
    }
    model.standardizer.fitted = match r.u8("standardizer")? {
        0 => false,
        1 => true,
        c => return Err(Error::ShapeMismatch(format!("bad fitted flag {c}"))),
    };
    r.f64s(&mut model.standardizer.mean, "standardizer mean")?;
    r.f64s(&mut model.standardizer.std, "standardizer std")?;
    if r.pos != bytes.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} trailing bytes after model payload",
            bytes.len() - r.pos
        )));
    }
    if !model.is_finite() || !model.standardizer.std.iter().all(|s| s.is_finite() && *s > 0.0) {
        return Err(Error::ShapeMismatch("non-finite parameters or non-positive std".into()));
    }
    Ok(model)
}

pub fn save_model(model: &AeModel, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<AeModel> {
    decode_model(&fs::read(path)?)
}
