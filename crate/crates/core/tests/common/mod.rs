//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::TAU;

use num_complex::Complex64;
use paella_core::autoencoder::{batch_loss, forward, gradients, train, Activation, AeModel, TrainConfig};
use paella_core::campaign::{default_profiles, featurize, generate_campaign, CampaignSpec, SyntheticRun};
use paella_core::detector::StreamSource;
use paella_core::eval::LabeledRun;
use paella_core::psd::WelchConfig;
use paella_core::rng;
use paella_core::synth::{gen_signature, SignatureSpec, Tone};
use paella_core::trace::PowerTrace;

/// Direct O(N²) DFT. Twiddles come from an N-entry table indexed by
/// `k·n mod N`, so no angle is formed from a large product.
pub fn dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    let table: Vec<Complex64> = (0..n)
        .map(|m| Complex64::from_polar(1.0, -TAU * m as f64 / n as f64))
        .collect();
    (0..n)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, &v) in x.iter().enumerate() {
                acc += table[(k * j) % n] * v;
            }
            acc
        })
        .collect()
}

/// One-sided periodogram from the oracle DFT with the library's density
/// scaling: `|X_k|² / (Fs Σw²)`, doubled away from DC and Nyquist.
pub fn oracle_periodogram(x: &[f64], window: &[f64], fs: f64) -> Vec<f64> {
    let xw: Vec<f64> = x.iter().zip(window).map(|(a, w)| a * w).collect();
    let spec = dft(&xw);
    let n = x.len();
    let power: f64 = window.iter().map(|w| w * w).sum();
    (0..=n / 2)
        .map(|k| {
            let p = spec[k].norm_sqr() / (fs * power);
            if k == 0 || k == n / 2 {
                p
            } else {
                2.0 * p
            }
        })
        .collect()
}

/// `max |a - b| / max |b|`.
pub fn normwise_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    num / den
}

pub fn random_signal(seed: u64, n: usize) -> Vec<f64> {
    let mut p = rng::seeded(seed);
    (0..n).map(|_| rng::uniform(&mut p, -1.0, 1.0)).collect()
}

pub fn single_segment(n: usize) -> WelchConfig {
    WelchConfig {
        window_len: n,
        fft_len: n,
        hop_len: n,
        slide_len: n,
        window_fn: paella_core::psd::WindowFn::Rect,
        output_scale: paella_core::psd::OutputScale::Linear,
        ..WelchConfig::default()
    }
}

/// Small Glorot-initialized autoencoder with the default activations.
pub fn toy_model(seed: u64, dims: &[usize], l1_lambda: f64) -> AeModel {
    let acts = [Activation::Tanh, Activation::Relu, Activation::Relu, Activation::Tanh];
    let mut m = AeModel::zeros(dims, &acts[..dims.len() - 1], l1_lambda).unwrap();
    m.init_glorot(&mut rng::seeded(seed));
    // Non-zero biases so every code path carries signal.
    let mut p = rng::seeded(seed ^ 0x5eed);
    for layer in &mut m.layers {
        for b in &mut layer.bias {
            *b = rng::uniform(&mut p, -0.1, 0.1);
        }
    }
    m
}

fn relu_pattern(model: &AeModel, batch: &[Vec<f64>]) -> Vec<bool> {
    let mut out = Vec::new();
    for x in batch {
        let pass = forward(model, x).unwrap();
        for (layer, pre) in model.layers.iter().zip(&pass.pre) {
            if layer.activation == Activation::Relu {
                out.extend(pre.iter().map(|&z| z > 0.0));
            }
        }
    }
    out
}

fn nudged(model: &AeModel, layer: usize, idx: usize, bias: bool, delta: f64) -> AeModel {
    let mut m = model.clone();
    let slot = if bias {
        &mut m.layers[layer].bias[idx]
    } else {
        &mut m.layers[layer].weights[idx]
    };
    *slot += delta;
    m
}

/// Fourth-order central difference of `batch_loss` for one parameter. The
/// step starts at 1e-4 and shrinks until neither a relu unit nor the
/// weight's own sign (the L1 kink) changes across the stencil, so it stays
/// on one smooth piece of the loss.
pub fn fd_derivative(model: &AeModel, batch: &[Vec<f64>], layer: usize, idx: usize, bias: bool) -> f64 {
    let base = relu_pattern(model, batch);
    let w = model.layers[layer].weights[idx.min(model.layers[layer].weights.len() - 1)];
    let mut h = 1e-4;
    while h > 1e-8 {
        let l1_smooth = bias || model.l1_lambda == 0.0 || w.abs() > 2.0 * h;
        let smooth = l1_smooth
            && [-2.0, 2.0]
                .iter()
                .all(|k| relu_pattern(&nudged(model, layer, idx, bias, k * h), batch) == base);
        if smooth {
            break;
        }
        h /= 10.0;
    }
    let eval = |delta: f64| batch_loss(&nudged(model, layer, idx, bias, delta), batch).unwrap();
    (-eval(2.0 * h) + 8.0 * eval(h) - 8.0 * eval(-h) + eval(-2.0 * h)) / (12.0 * h)
}

/// Largest relative disagreement over parameters with |g| > 1e-8.
pub fn worst_gradient_error(seed: u64, dims: &[usize], l1: f64) -> f64 {
    let model = toy_model(seed, dims, l1);
    let batch: Vec<Vec<f64>> = (0..4).map(|i| random_signal(seed * 31 + i, dims[0])).collect();
    let g = gradients(&model, &batch).unwrap();
    let mut worst: f64 = 0.0;
    for l in 0..model.layers.len() {
        for (bias, analytic) in [(false, &g.weights[l]), (true, &g.biases[l])] {
            for (i, &a) in analytic.iter().enumerate() {
                if a.abs() <= 1e-8 {
                    continue;
                }
                let n = fd_derivative(&model, &batch, l, i, bias);
                worst = worst.max((a - n).abs() / a.abs().max(n.abs()));
            }
        }
    }
    worst
}

pub fn campaign(benchmarks: &[&str], healthy: usize, malware: usize, secs: f64, seed: u64) -> Vec<SyntheticRun> {
    let spec = CampaignSpec {
        benchmarks: default_profiles()
            .into_iter()
            .filter(|b| benchmarks.contains(&b.id.as_str()))
            .collect(),
        healthy_runs: healthy,
        malware_runs: malware,
        run_secs: secs,
        seed,
        ..CampaignSpec::default()
    };
    generate_campaign(&spec).unwrap()
}

pub fn labeled(runs: &[SyntheticRun]) -> Vec<LabeledRun> {
    featurize(runs, &WelchConfig::default()).unwrap()
}

/// Healthy hpcg-like signature of `secs` seconds.
pub fn hpcg_trace(secs: f64, seed: u64) -> PowerTrace {
    let spec = SignatureSpec {
        baseline_w: 270.0,
        tones: vec![Tone::new(100.0, 3.0), Tone::new(800.0, 2.5), Tone::new(7400.0, 0.8)],
        noise_sigma_w: 1.2,
        seed,
        sample_rate_hz: 50_000.0,
    };
    gen_signature(&spec, secs).unwrap()
}

/// A model trained on healthy hpcg-like features, plus the training rows.
pub fn trained_hpcg(seed: u64) -> (AeModel, Vec<Vec<f64>>) {
    let runs = campaign(&["hpcg"], 8, 0, 1.0, seed);
    let rows: Vec<Vec<f64>> = labeled(&runs).into_iter().flat_map(|r| r.features).collect();
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let (model, _) = train(&rows, &cfg).unwrap();
    (model, rows)
}

pub type Hook = Box<dyn FnOnce() + Send>;

/// Replays `trace` in 2048-sample chunks, running each hook just before the
/// first chunk that reaches its sample index.
pub fn hooked(trace: PowerTrace, mut hooks: Vec<(usize, Hook)>) -> StreamSource {
    hooks.sort_by_key(|h| h.0);
    let mut hooks = hooks.into_iter().peekable();
    let rate = trace.sample_rate_hz;
    let samples = trace.samples;
    let mut pos = 0;
    let chunks = std::iter::from_fn(move || {
        if pos >= samples.len() {
            return None;
        }
        let end = (pos + 2048).min(samples.len());
        while hooks.peek().is_some_and(|h| h.0 <= end) {
            (hooks.next().unwrap().1)();
        }
        let chunk = samples[pos..end].to_vec();
        pos = end;
        Some(chunk)
    });
    StreamSource::new(rate, 0, chunks)
}

/// Sample index at which PSD `k` becomes computable.
pub fn psd_ready(k: usize) -> usize {
    k * 1000 + 8192
}
