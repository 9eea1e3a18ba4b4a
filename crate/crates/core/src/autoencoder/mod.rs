//! Fully-connected autoencoder scoring PSD features by reconstruction error.
//!
//! The default topology is `[1025, 8, 4, 4, 1025]` with activations
//! `tanh, relu, relu, tanh`. The loss is the per-row mean squared
//! reconstruction error plus an L1 penalty on the weights (biases are not
//! penalized). Inputs are standardized by a per-model [`StandardizerState`].

mod io;
mod standardize;
mod train;

pub use io::{decode_model, encode_model, load_model, save_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use standardize::{fit_standardizer, StandardizerState};
pub use train::{adagrad_step, train, Adagrad, InitScheme, TrainConfig, TrainLog};

use rand::RngCore;

use crate::error::{Error, Result};
use crate::rng;

pub const HIDDEN_DIMS: [usize; 3] = [8, 4, 4];
pub const DEFAULT_ACTIVATIONS: [Activation; 4] =
    [Activation::Tanh, Activation::Relu, Activation::Relu, Activation::Tanh];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }

    /// Derivative given the pre-activation and the activation output.
    /// The relu subgradient at 0 is 0.
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Dense layer `act(W x + b)`; `weights` is `outputs × inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    fn forward_into(&self, x: &[f64], pre: &mut [f64], post: &mut [f64]) {
        for (o, row) in self.weights.chunks_exact(self.inputs).enumerate() {
            let z = row.iter().zip(x).fold(self.bias[o], |acc, (w, v)| acc + w * v);
            pre[o] = z;
            post[o] = self.activation.apply(z);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeModel {
    pub layers: Vec<Layer>,
    pub standardizer: StandardizerState,
    pub l1_lambda: f64,
}

impl AeModel {
    /// All-zero parameters, unfitted standardizer.
    pub fn zeros(dims: &[usize], activations: &[Activation], l1_lambda: f64) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::ShapeMismatch(format!(
                "{} dims need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::ShapeMismatch("layer widths must be positive".into()));
        }
        if dims[0] != dims[dims.len() - 1] {
            return Err(Error::ShapeMismatch(format!(
                "input width {} differs from output width {}",
                dims[0],
                dims[dims.len() - 1]
            )));
        }
        if !(l1_lambda.is_finite() && l1_lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!("l1_lambda must be >= 0, got {l1_lambda}")));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| Layer::zeros(w[0], w[1], act))
            .collect();
        Ok(Self {
            layers,
            standardizer: StandardizerState::unfitted(dims[0]),
            l1_lambda,
        })
    }

    /// `[input_dim, 8, 4, 4, input_dim]` with `tanh, relu, relu, tanh`.
    pub fn default_topology(input_dim: usize, l1_lambda: f64) -> Result<Self> {
        let dims = [input_dim, HIDDEN_DIMS[0], HIDDEN_DIMS[1], HIDDEN_DIMS[2], input_dim];
        Self::zeros(&dims, &DEFAULT_ACTIVATIONS, l1_lambda)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_glorot(&mut self, rng: &mut impl RngCore) {
        for layer in &mut self.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng::uniform(rng, -limit, limit);
            }
            layer.bias.fill(0.0);
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.layers.iter().flat_map(|l| l.weights.iter()).map(|w| w.abs()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Pre- and post-activation values of every layer for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

impl ForwardPass {
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("model has at least one layer")
    }
}

/// Runs `x` (already standardized) through the network.
pub fn forward(model: &AeModel, x: &[f64]) -> Result<ForwardPass> {
    if x.len() != model.input_dim() {
        return Err(Error::LengthMismatch {
            expected: model.input_dim(),
            actual: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let mut pre = Vec::with_capacity(model.layers.len());
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let mut z = vec![0.0; layer.outputs];
        let mut a = vec![0.0; layer.outputs];
        layer.forward_into(post.last().map_or(x, Vec::as_slice), &mut z, &mut a);
        pre.push(z);
        post.push(a);
    }
    Ok(ForwardPass { pre, post })
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Reconstruction MSE of `x` plus `l1_lambda * Σ|w|`.
pub fn loss(model: &AeModel, x: &[f64]) -> Result<f64> {
    let pass = forward(model, x)?;
    Ok(mse(x, pass.output()) + model.l1_lambda * model.l1_norm())
}

/// Mean reconstruction MSE over `batch` plus the L1 penalty (counted once).
pub fn batch_loss(model: &AeModel, batch: &[Vec<f64>]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("empty batch"));
    }
    let mut total = 0.0;
    for x in batch {
        total += mse(x, forward(model, x)?.output());
    }
    Ok(total / batch.len() as f64 + model.l1_lambda * model.l1_norm())
}

/// Gradient of [`batch_loss`] with respect to every weight and bias,
/// laid out like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &AeModel) -> Self {
        Self {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }
}

/// Exact gradient of the mean batch loss. Rows are accumulated in order so
/// the result is deterministic. Also returns the batch loss at the current
/// parameters.
pub fn gradients_with_loss(model: &AeModel, batch: &[Vec<f64>]) -> Result<(Gradients, f64)> {
    if batch.is_empty() {
        return Err(Error::Empty("empty batch"));
    }
    let n_layers = model.layers.len();
    let out_dim = model.layers[n_layers - 1].outputs;
    let scale = 2.0 / (out_dim as f64 * batch.len() as f64);
    let mut grads = Gradients::zeros_like(model);
    let mut recon = 0.0;

    for x in batch {
        let pass = forward(model, x)?;
        recon += mse(x, pass.output());

        // delta = dL/d(pre) of the current layer
        let last = &model.layers[n_layers - 1];
        let mut delta: Vec<f64> = pass
            .output()
            .iter()
            .zip(x)
            .zip(pass.pre[n_layers - 1].iter())
            .map(|((&y, &t), &z)| scale * (y - t) * last.activation.derivative(z, y))
            .collect();

        for l in (0..n_layers).rev() {
            let layer = &model.layers[l];
            let input = if l == 0 {
                x.as_slice()
            } else {
                pass.post[l - 1].as_slice()
            };
            let gw = &mut grads.weights[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for (g, &v) in row.iter_mut().zip(input) {
                    *g += d * v;
                }
                grads.biases[l][o] += d;
            }
            if l > 0 {
                let prev = &model.layers[l - 1];
                let mut next = vec![0.0; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (acc, &w) in next.iter_mut().zip(row) {
                        *acc += w * d;
                    }
                }
                for (i, acc) in next.iter_mut().enumerate() {
                    *acc *= prev.activation.derivative(pass.pre[l - 1][i], pass.post[l - 1][i]);
                }
                delta = next;
            }
        }
    }

    if model.l1_lambda > 0.0 {
        for (gw, layer) in grads.weights.iter_mut().zip(&model.layers) {
            for (g, &w) in gw.iter_mut().zip(&layer.weights) {
                // sign(0) taken as 0
                if w > 0.0 {
                    *g += model.l1_lambda;
                } else if w < 0.0 {
                    *g -= model.l1_lambda;
                }
            }
        }
    }

    let loss = recon / batch.len() as f64 + model.l1_lambda * model.l1_norm();
    Ok((grads, loss))
}

pub fn gradients(model: &AeModel, batch: &[Vec<f64>]) -> Result<Gradients> {
    gradients_with_loss(model, batch).map(|(g, _)| g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> AeModel {
        // 2-2-1-1-2 with hand-set parameters
        let mut m = AeModel::zeros(&[2, 2, 1, 1, 2], &DEFAULT_ACTIVATIONS, 0.0).unwrap();
        m.layers[0].weights = vec![0.5, -0.25, 0.1, 0.2];
        m.layers[0].bias = vec![0.1, -0.1];
        m.layers[1].weights = vec![1.0, -2.0];
        m.layers[1].bias = vec![0.3];
        m.layers[2].weights = vec![1.5];
        m.layers[2].bias = vec![-0.05];
        m.layers[3].weights = vec![0.7, -0.4];
        m.layers[3].bias = vec![0.0, 0.2];
        m
    }

    #[test]
    fn toy_forward_matches_hand_computation() {
        let x = [1.0, 2.0];
        let h1 = [
            (0.5 * 1.0 - 0.25 * 2.0 + 0.1_f64).tanh(),
            (0.1 * 1.0 + 0.2 * 2.0 - 0.1_f64).tanh(),
        ];
        let h2 = (1.0 * h1[0] - 2.0 * h1[1] + 0.3_f64).max(0.0);
        let h3 = (1.5 * h2 - 0.05_f64).max(0.0);
        let y = [(0.7 * h3).tanh(), (-0.4 * h3 + 0.2_f64).tanh()];
        let pass = forward(&toy(), &x).unwrap();
        for (a, b) in pass.output().iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(pass.pre.len(), 4);
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = AeModel::default_topology(1025, 0.0).unwrap();
        let x: Vec<f64> = (0..1025).map(|i| i as f64 * 0.01 - 3.0).collect();
        assert!(forward(&m, &x).unwrap().output().iter().all(|&y| y == 0.0));
        let expected = x.iter().map(|v| v * v).sum::<f64>() / 1025.0;
        assert!((loss(&m, &x).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn mse_by_hand() {
        assert_eq!(mse(&[1.0, 2.0], &[0.0, 0.0]), 2.5);
    }

    #[test]
    fn default_param_count() {
        let m = AeModel::default_topology(1025, 1e-5).unwrap();
        assert_eq!(m.dims(), vec![1025, 8, 4, 4, 1025]);
        assert_eq!(m.param_count(), 1025 * 8 + 8 + 8 * 4 + 4 + 4 * 4 + 4 + 4 * 1025 + 1025);
        assert_eq!(m.param_count(), 13_389);
    }

    #[test]
    fn l1_penalty_is_linear_in_weight_magnitude() {
        // Relu-dead second layer pins the output while a first-layer weight grows.
        let mut m = toy();
        m.l1_lambda = 0.01;
        m.layers[1].weights = vec![0.0, 0.0];
        m.layers[1].bias = vec![-1.0];
        let x = [0.4, -0.3];
        let before = loss(&m, &x).unwrap();
        m.layers[0].weights[0] += 0.5;
        let after = loss(&m, &x).unwrap();
        assert!((after - before - 0.01 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_model_bias_gradient() {
        let m = AeModel::default_topology(1025, 0.0).unwrap();
        let mut r = rng::seeded(4);
        let batch: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..1025).map(|_| rng::standard_normal(&mut r)).collect())
            .collect();
        let g = gradients(&m, &batch).unwrap();
        for j in 0..1025 {
            let mean = batch.iter().map(|r| r[j]).sum::<f64>() / 3.0;
            assert!((g.biases[3][j] + 2.0 / 1025.0 * mean).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicated_rows_same_gradient() {
        let m = toy();
        let x = vec![0.3, -1.2];
        let one = gradients(&m, std::slice::from_ref(&x)).unwrap();
        let many = gradients(&m, &[x.clone(), x.clone(), x]).unwrap();
        for (a, b) in one.weights.iter().flatten().zip(many.weights.iter().flatten()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn bad_shapes_rejected() {
        assert!(AeModel::zeros(&[3, 2, 4], &DEFAULT_ACTIVATIONS[..2], 0.0).is_err());
        assert!(AeModel::zeros(&[3, 2, 3], &DEFAULT_ACTIVATIONS, 0.0).is_err());
        let m = toy();
        assert!(forward(&m, &[1.0]).is_err());
        assert!(matches!(forward(&m, &[1.0, f64::NAN]), Err(Error::NonFiniteInput)));
    }
}
