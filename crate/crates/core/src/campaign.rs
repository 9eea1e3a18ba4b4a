//! Synthetic acquisition campaigns and the offline train → calibrate → test
//! experiment run over them.
//!
//! Each benchmark has a fixed spectral profile. A healthy run jitters the
//! tone amplitudes, phases and baseline and draws fresh noise; a malware run
//! is a fresh healthy run plus one extra tone near `malware_tone_hz`.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;

use log::info;

use crate::autoencoder::{train, AeModel, TrainConfig, TrainLog};
use crate::detector::{calibrate_threshold, Decision, DetectorConfig};
use crate::error::{Error, Result};
use crate::eval::{build_report, classify_run, split_runs, EvalReport, LabeledRun, RunResult, SplitSpec, Weights};
use crate::psd::{sliding_psd, WelchConfig};
use crate::rng::{self, Prng};
use crate::synth::{gen_signature, perturb, SignatureSpec, Tone};
use crate::trace::{PowerTrace, DEFAULT_SAMPLE_RATE_HZ};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkProfile {
    pub id: String,
    pub baseline_w: f64,
    pub tones: Vec<Tone>,
    pub noise_sigma_w: f64,
}

/// Three benchmark-like profiles with distinct tone sets.
pub fn default_profiles() -> Vec<BenchmarkProfile> {
    let profile = |id: &str, baseline_w: f64, tones: &[(f64, f64)], noise_sigma_w: f64| BenchmarkProfile {
        id: id.to_string(),
        baseline_w,
        tones: tones.iter().map(|&(f, a)| Tone::new(f, a)).collect(),
        noise_sigma_w,
    };
    vec![
        profile("hpcg", 270.0, &[(100.0, 3.0), (800.0, 2.5), (7400.0, 0.8)], 1.2),
        profile("hpl", 310.0, &[(60.0, 4.0), (1250.0, 2.0), (5200.0, 1.0)], 1.0),
        profile("qe", 290.0, &[(150.0, 3.5), (2100.0, 1.5), (9600.0, 1.0)], 0.9),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSpec {
    pub benchmarks: Vec<BenchmarkProfile>,
    pub healthy_runs: usize,
    pub malware_runs: usize,
    pub run_secs: f64,
    pub sample_rate_hz: f64,
    pub seed: u64,
    pub malware_tone_hz: f64,
    /// Malware tone frequencies are drawn uniformly within this many Hz of
    /// `malware_tone_hz`.
    pub malware_tone_spread_hz: f64,
    pub malware_amplitude_w: f64,
    /// Relative jitter applied to every tone amplitude of a run.
    pub amplitude_jitter: f64,
}

impl Default for CampaignSpec {
    fn default() -> Self {
        Self {
            benchmarks: default_profiles(),
            healthy_runs: 33,
            malware_runs: 40,
            run_secs: 1.0,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            seed: 0,
            malware_tone_hz: 3300.0,
            malware_tone_spread_hz: 200.0,
            malware_amplitude_w: 2.5,
            amplitude_jitter: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRun {
    pub run_id: String,
    pub benchmark_id: String,
    pub label: Decision,
    pub trace: PowerTrace,
}

fn healthy_spec(p: &BenchmarkProfile, spec: &CampaignSpec, prng: &mut Prng) -> SignatureSpec {
    let j = spec.amplitude_jitter;
    let tones = p
        .tones
        .iter()
        .map(|t| Tone {
            freq_hz: t.freq_hz,
            amplitude_w: t.amplitude_w * rng::uniform(prng, 1.0 - j, 1.0 + j),
            phase_rad: rng::uniform(prng, 0.0, TAU),
        })
        .collect();
    SignatureSpec {
        baseline_w: p.baseline_w + rng::uniform(prng, -2.0, 2.0),
        tones,
        noise_sigma_w: p.noise_sigma_w,
        seed: prng_u64(prng),
        sample_rate_hz: spec.sample_rate_hz,
    }
}

fn prng_u64(prng: &mut Prng) -> u64 {
    rand::RngCore::next_u64(prng)
}

/// Generates every run of the campaign. Run ids are
/// `<benchmark>-h<NN>` and `<benchmark>-m<NN>`.
pub fn generate_campaign(spec: &CampaignSpec) -> Result<Vec<SyntheticRun>> {
    if spec.benchmarks.is_empty() {
        return Err(Error::Empty("campaign has no benchmarks"));
    }
    let mut prng = rng::seeded(spec.seed);
    let mut runs = Vec::with_capacity(spec.benchmarks.len() * (spec.healthy_runs + spec.malware_runs));
    for p in &spec.benchmarks {
        for i in 0..spec.healthy_runs {
            let sig = healthy_spec(p, spec, &mut prng);
            runs.push(SyntheticRun {
                run_id: format!("{}-h{i:02}", p.id),
                benchmark_id: p.id.clone(),
                label: Decision::Healthy,
                trace: gen_signature(&sig, spec.run_secs)?,
            });
        }
        for i in 0..spec.malware_runs {
            let sig = healthy_spec(p, spec, &mut prng);
            let base = gen_signature(&sig, spec.run_secs)?;
            let tone = Tone {
                freq_hz: spec.malware_tone_hz
                    + rng::uniform(&mut prng, -spec.malware_tone_spread_hz, spec.malware_tone_spread_hz),
                amplitude_w: spec.malware_amplitude_w,
                phase_rad: rng::uniform(&mut prng, 0.0, TAU),
            };
            let extra = SignatureSpec {
                tones: vec![tone],
                ..SignatureSpec::zero(spec.sample_rate_hz)
            };
            runs.push(SyntheticRun {
                run_id: format!("{}-m{i:02}", p.id),
                benchmark_id: p.id.clone(),
                label: Decision::Malware,
                trace: perturb(&base, &extra)?,
            });
        }
    }
    Ok(runs)
}

/// Turns each run's trace into its sliding-window PSD rows.
pub fn featurize(runs: &[SyntheticRun], welch: &WelchConfig) -> Result<Vec<LabeledRun>> {
    runs.iter()
        .map(|r| {
            let features = sliding_psd(&r.trace, welch)?.into_iter().map(|f| f.bins).collect();
            Ok(LabeledRun {
                run_id: r.run_id.clone(),
                benchmark_id: r.benchmark_id.clone(),
                label: r.label,
                features,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub split: SplitSpec,
    pub train: TrainConfig,
    /// Percentile of healthy validation errors used as `t_e`.
    pub percentile: f64,
    pub t_o: f64,
    pub weights: Weights,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            split: SplitSpec::default(),
            train: TrainConfig::default(),
            percentile: 99.0,
            t_o: DetectorConfig::default().t_o,
            weights: Weights::InverseClassCounts,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkModel {
    pub model: AeModel,
    pub log: TrainLog,
    pub t_e: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub models: BTreeMap<String, BenchmarkModel>,
    pub results: Vec<RunResult>,
    pub report: EvalReport,
}

/// Splits runs, trains and calibrates one model per benchmark on its
/// healthy train/validation runs, then classifies every test run.
pub fn run_experiment(runs: Vec<LabeledRun>, cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let splits = split_runs(runs, &cfg.split)?;
    let mut models = BTreeMap::new();
    let benchmarks: BTreeSet<String> = splits.train.iter().map(|r| r.benchmark_id.clone()).collect();
    for id in &benchmarks {
        let rows: Vec<Vec<f64>> = splits
            .train
            .iter()
            .filter(|r| &r.benchmark_id == id)
            .flat_map(|r| r.features.iter().cloned())
            .collect();
        let (model, log) = train(&rows, &cfg.train)?;
        let val: Vec<Vec<f64>> = splits
            .val
            .iter()
            .filter(|r| &r.benchmark_id == id && r.label == Decision::Healthy)
            .flat_map(|r| r.features.iter().cloned())
            .collect();
        let t_e = calibrate_threshold(&model, &val, cfg.percentile)?;
        info!("{id}: trained on {} rows, t_e = {t_e:.6}", rows.len());
        models.insert(id.clone(), BenchmarkModel { model, log, t_e });
    }

    let mut results = Vec::with_capacity(splits.test.len());
    for run in &splits.test {
        let bm = models
            .get(&run.benchmark_id)
            .ok_or_else(|| Error::UnknownModel(run.benchmark_id.clone()))?;
        let det = DetectorConfig {
            t_e: bm.t_e,
            t_o: cfg.t_o,
            model_id: run.benchmark_id.clone(),
            ..DetectorConfig::default()
        };
        results.push(RunResult {
            benchmark_id: run.benchmark_id.clone(),
            label: run.label,
            predicted: classify_run(&bm.model, run, &det)?,
        });
    }
    let report = build_report(&results, cfg.weights)?;
    Ok(ExperimentOutcome {
        models,
        results,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CampaignSpec {
        CampaignSpec {
            benchmarks: default_profiles()[..1].to_vec(),
            healthy_runs: 2,
            malware_runs: 1,
            run_secs: 0.2,
            ..CampaignSpec::default()
        }
    }

    #[test]
    fn campaign_is_seeded() {
        let a = generate_campaign(&small()).unwrap();
        let b = generate_campaign(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_campaign(&CampaignSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a[0].trace, c[0].trace);
        assert_eq!(a.len(), 3);
        assert_eq!(a[2].run_id, "hpcg-m00");
        assert_eq!(a[0].trace.len(), 10_000);
    }

    #[test]
    fn healthy_runs_differ() {
        let runs = generate_campaign(&small()).unwrap();
        assert_ne!(runs[0].trace.samples, runs[1].trace.samples);
    }

    #[test]
    fn featurize_shapes() {
        let runs = generate_campaign(&small()).unwrap();
        let labeled = featurize(&runs, &WelchConfig::default()).unwrap();
        // 10 000 samples: (10000 - 8192) / 1000 + 1 windows.
        assert_eq!(labeled[0].features.len(), 2);
        assert_eq!(labeled[0].features[0].len(), 1025);
        assert_eq!(labeled[2].label, Decision::Malware);
    }
}
