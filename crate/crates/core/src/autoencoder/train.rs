use log::debug;

use super::{batch_loss, fit_standardizer, gradients_with_loss, AeModel, Gradients};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    GlorotUniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adagrad_eps: f64,
    pub l1_lambda: f64,
    pub seed: u64,
    pub init: InitScheme,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs: 5,
            learning_rate: 0.01,
            adagrad_eps: 1e-8,
            l1_lambda: 1e-5,
            seed: 0,
            init: InitScheme::GlorotUniform,
            hidden: super::HIDDEN_DIMS.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.adagrad_eps.is_finite() && self.adagrad_eps > 0.0) {
            return bad(format!("adagrad_eps must be positive, got {}", self.adagrad_eps));
        }
        if !(self.l1_lambda.is_finite() && self.l1_lambda >= 0.0) {
            return bad(format!("l1_lambda must be >= 0, got {}", self.l1_lambda));
        }
        if self.hidden.len() != super::HIDDEN_DIMS.len() {
            return bad(format!("expected 3 hidden widths, got {}", self.hidden.len()));
        }
        Ok(())
    }
}

/// `acc += g²; p -= lr g / (sqrt(acc) + eps)`, element-wise.
pub fn adagrad_step(params: &mut [f64], grads: &[f64], acc: &mut [f64], lr: f64, eps: f64) {
    assert!(params.len() == grads.len() && grads.len() == acc.len());
    for ((p, &g), a) in params.iter_mut().zip(grads).zip(acc.iter_mut()) {
        if g == 0.0 {
            continue;
        }
        *a += g * g;
        *p -= lr * g / (a.sqrt() + eps);
    }
}

/// Adagrad accumulators shaped like a model's parameters.
#[derive(Debug, Clone)]
pub struct Adagrad {
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    lr: f64,
    eps: f64,
}

impl Adagrad {
    pub fn new(model: &AeModel, lr: f64, eps: f64) -> Self {
        let z = Gradients::zeros_like(model);
        Self {
            weights: z.weights,
            biases: z.biases,
            lr,
            eps,
        }
    }

    pub fn step(&mut self, model: &mut AeModel, grads: &Gradients) {
        for (l, layer) in model.layers.iter_mut().enumerate() {
            adagrad_step(
                &mut layer.weights,
                &grads.weights[l],
                &mut self.weights[l],
                self.lr,
                self.eps,
            );
            adagrad_step(
                &mut layer.bias,
                &grads.biases[l],
                &mut self.biases[l],
                self.lr,
                self.eps,
            );
        }
    }
}

/// What happened during [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub optimizer: &'static str,
    pub loss: &'static str,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps: usize,
    /// Mean of the per-batch losses (taken before each update) in each epoch.
    pub epoch_losses: Vec<f64>,
    /// Loss over the whole standardized training set after the last epoch.
    pub final_loss: f64,
}

/// Fits the standardizer on `features`, initializes the network from
/// `cfg.seed` and runs Adagrad over seeded per-epoch shuffles. The last
/// batch of an epoch may be smaller than `batch_size`.
pub fn train(features: &[Vec<f64>], cfg: &TrainConfig) -> Result<(AeModel, TrainLog)> {
    cfg.validate()?;
    if features.len() < cfg.batch_size.max(2) {
        return Err(Error::TooFew {
            what: "training rows",
            needed: cfg.batch_size.max(2),
            got: features.len(),
        });
    }
    let standardizer = fit_standardizer(features)?;
    let rows: Vec<Vec<f64>> = features
        .iter()
        .map(|r| standardizer.standardize(r))
        .collect::<Result<_>>()?;

    let dim = standardizer.dim();
    let dims = [dim, cfg.hidden[0], cfg.hidden[1], cfg.hidden[2], dim];
    let mut model = AeModel::zeros(&dims, &super::DEFAULT_ACTIVATIONS, cfg.l1_lambda)?;
    let mut prng = rng::seeded(cfg.seed);
    match cfg.init {
        InitScheme::GlorotUniform => model.init_glorot(&mut prng),
    }
    model.standardizer = standardizer;

    let mut opt = Adagrad::new(&model, cfg.learning_rate, cfg.adagrad_eps);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    let mut batch: Vec<Vec<f64>> = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        let order = rng::permutation(&mut prng, rows.len());
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| rows[i].clone()));
            let (grads, loss) = gradients_with_loss(&model, &batch)?;
            opt.step(&mut model, &grads);
            sum += loss;
            count += 1;
            steps += 1;
        }
        let mean = sum / count as f64;
        debug!("epoch {} mean loss {mean:.6}", epoch + 1);
        epoch_losses.push(mean);
    }
    if !model.is_finite() {
        return Err(Error::InvalidConfig(
            "training diverged to non-finite parameters".into(),
        ));
    }
    let final_loss = batch_loss(&model, &rows)?;
    let log = TrainLog {
        optimizer: "adagrad",
        loss: "mse+l1",
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        steps,
        epoch_losses,
        final_loss,
    };
    Ok((model, log))
}
