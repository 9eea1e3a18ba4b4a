use crate::error::{Error, Result};

/// Per-feature mean and population standard deviation fitted on healthy
/// training features.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizerState {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub fitted: bool,
}

impl StandardizerState {
    /// Identity transform of width `dim`, marked unfitted.
    pub fn unfitted(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            fitted: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn standardize(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        self.standardize_into(x, &mut out)?;
        Ok(out)
    }

    pub fn standardize_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if !self.fitted {
            return Err(Error::Unfitted);
        }
        if x.len() != self.dim() || out.len() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        for (((o, &v), &m), &s) in out.iter_mut().zip(x).zip(&self.mean).zip(&self.std) {
            *o = (v - m) / s;
        }
        Ok(())
    }

    /// Inverse of [`standardize`](Self::standardize): `z * std + mean`.
    pub fn unstandardize(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                actual: z.len(),
            });
        }
        Ok(z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&v, &m), &s)| v * s + m)
            .collect())
    }
}

/// Column-wise population mean and standard deviation. Columns with zero
/// spread get a standard deviation of 1.
pub fn fit_standardizer(rows: &[Vec<f64>]) -> Result<StandardizerState> {
    let first = rows.first().ok_or(Error::Empty("no feature rows to fit"))?;
    if rows.len() < 2 {
        return Err(Error::TooFew {
            what: "rows to fit a standardizer",
            needed: 2,
            got: rows.len(),
        });
    }
    let dim = first.len();
    if dim == 0 {
        return Err(Error::Empty("feature rows have no columns"));
    }
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for row in rows {
        if row.len() != dim {
            return Err(Error::LengthMismatch {
                expected: dim,
                actual: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for row in rows {
        for ((acc, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    let std = var
        .iter()
        .zip(&mean)
        .map(|(&v, &m)| {
            let s = (v / n).sqrt();
            if s == 0.0 || s <= 1e-12 * m.abs() {
                1.0
            } else {
                s
            }
        })
        .collect();
    Ok(StandardizerState {
        mean,
        std,
        fitted: true,
    })
}
