//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails that is not in `KNOWN_FAILURES`.
//!
//! Run with `cargo test -p paella-core --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use paella_core::autoencoder::{load_model, save_model, train, AeModel, TrainConfig};
use paella_core::campaign::{run_experiment, ExperimentConfig};
use paella_core::detector::{
    reconstruction_error, run_stream, run_stream_with, ActiveModel, BatchVerdict, Decision, DetectorConfig,
    ModelProvider, StreamSource, VerdictSink,
};
use paella_core::eval::{split_runs, weighted_f1, SplitSpec};
use paella_core::netmon::{
    agent_run, alarm_topic, collect, command_topic, AgentConfig, AlarmMessage, BufferedPublisher, CollectLimits,
    Collector, LoopbackBroker, MemoryModelStore, Message, ModelCommand, RetryPolicy, Transport, COLLECTOR_FILTER,
};
use paella_core::psd::{fft_real, welch_psd, PsdFeature, WelchConfig};
use paella_core::rng;
use paella_core::synth::{gen_pulse_train, PulseTrainSpec};
use paella_core::trace::{read_trace, write_trace, TraceFormat};

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

// The condition is negated on purpose so a NaN comparison counts as failure.
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(start: Instant, budget: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure!(took < budget, "took {took:.2?}, budget {budget:?}");
    Ok(took)
}

fn fft_welch_oracle() -> Outcome {
    let start = Instant::now();
    let ones = vec![1.0; 2048];
    let (mut fft_worst, mut welch_worst) = (0.0f64, 0.0f64);
    for seed in 0..50 {
        let x = random_signal(seed, 2048);
        let slow = dft(&x);
        let fast = fft_real(&x, 2048).map_err(|e| e.to_string())?;
        let err = fast.iter().zip(&slow).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let scale = slow.iter().map(|v| v.norm()).fold(0.0, f64::max);
        fft_worst = fft_worst.max(err / scale);
        let psd = welch_psd(&x, &single_segment(2048), 50_000.0).map_err(|e| e.to_string())?;
        welch_worst = welch_worst.max(normwise_rel_err(&psd.bins, &oracle_periodogram(&x, &ones, 50_000.0)));
    }
    ensure!(fft_worst < 1e-9, "fft rel err {fft_worst:e}");
    ensure!(welch_worst < 1e-9, "welch rel err {welch_worst:e}");
    let took = within(start, Duration::from_secs(5))?;
    Ok(format!(
        "max rel err fft {fft_worst:.1e}, welch {welch_worst:.1e}, {took:.2?}"
    ))
}

fn feature_length_law() -> Outcome {
    let x = random_signal(3, 8192);
    let n = welch_psd(&x, &WelchConfig::default(), 50_000.0)
        .map_err(|e| e.to_string())?
        .bins
        .len();
    ensure!(n == 1025, "default length {n}");
    let mut checked = 1;
    for e in 1..=13 {
        let fft = 1usize << e;
        for hop_frac in [1, 2, 4] {
            let cfg = WelchConfig {
                window_len: fft + 37 * e,
                fft_len: fft,
                hop_len: (fft / hop_frac).max(1),
                ..WelchConfig::default()
            };
            let x = random_signal(e as u64, cfg.window_len);
            let got = welch_psd(&x, &cfg, 50_000.0).map_err(|e| e.to_string())?.bins.len();
            ensure!(got == fft / 2 + 1, "fft {fft}: length {got}");
            checked += 1;
        }
    }
    Ok(format!("default 1025; fft_len/2+1 on {checked} configs"))
}

fn pulse_train_spectrum() -> Outcome {
    let start = Instant::now();
    let t = gen_pulse_train(&PulseTrainSpec {
        freq_hz: 1000.0,
        duty: 0.3,
        high_w: 200.0,
        low_w: 100.0,
        duration_s: 8192.0 / 50_000.0,
        sample_rate_hz: 50_000.0,
    })
    .map_err(|e| e.to_string())?;
    let psd = welch_psd(&t.samples, &WelchConfig::default(), 50_000.0)
        .map_err(|e| e.to_string())?
        .bins;
    let bin_hz = 50_000.0 / 2048.0;
    // Bin 1 is inside the Hann mainlobe of the DC component.
    let peak = (2..psd.len()).max_by(|&a, &b| psd[a].total_cmp(&psd[b])).unwrap();
    let peak_hz = peak as f64 * bin_hz;
    ensure!((peak_hz - 1000.0).abs() <= bin_hz, "argmax at {peak_hz:.1} Hz");
    let mut rest: Vec<f64> = (1..psd.len()).filter(|&k| k != peak).map(|k| psd[k]).collect();
    rest.sort_by(f64::total_cmp);
    let median = rest[rest.len() / 2];
    let margin = psd[peak] - median;
    ensure!(margin >= 5.0, "peak only {margin:.1} dB above median");
    for h in [2000.0, 3000.0] {
        let k = (h / bin_hz).round() as usize;
        ensure!(
            (k - 1..=k + 1).any(|i| psd[i] > psd[i - 1] && psd[i] > psd[i + 1]),
            "no local maximum near {h} Hz"
        );
    }
    let took = within(start, Duration::from_secs(1))?;
    Ok(format!(
        "peak {peak_hz:.1} Hz, {margin:.1} dB above median, harmonics ok, {took:.2?}"
    ))
}

fn parseval() -> Outcome {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for e in 1..=11 {
        let n = 1usize << e;
        for seed in 0..20u64 {
            let amp = 10f64.powi(seed as i32 % 7 - 3);
            let x: Vec<f64> = random_signal(seed * 13 + e as u64, n)
                .into_iter()
                .map(|v| v * amp)
                .collect();
            let psd = welch_psd(&x, &single_segment(n), 50_000.0).map_err(|e| e.to_string())?;
            let integral: f64 = psd.bins.iter().sum::<f64>() * psd.bin_hz;
            let mean_sq = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
            worst = worst.max((integral - mean_sq).abs() / mean_sq);
            cases += 1;
        }
    }
    ensure!(worst <= 1e-6, "rel err {worst:e}");
    Ok(format!("{cases} cases, max rel err {worst:.1e}"))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        worst = worst.max(worst_gradient_error(seed, &[6, 5, 4, 3, 6], 1e-3));
    }
    ensure!(worst < 1e-4, "max rel err {worst:e}");
    let took = within(start, Duration::from_secs(10))?;
    Ok(format!("20 seeds, max rel err {worst:.1e}, {took:.2?}"))
}

fn parameter_count() -> Outcome {
    let m = AeModel::default_topology(1025, 1e-5).map_err(|e| e.to_string())?;
    let got = m.param_count();
    ensure!(
        got == 13_513,
        "[1025,8,4,4,1025] with biases has {got} parameters, criterion expects 13513"
    );
    Ok(format!("{got}"))
}

fn training_defaults() -> Outcome {
    let runs = campaign(&["hpcg"], 20, 0, 1.0, 0);
    let rows: Vec<Vec<f64>> = labeled(&runs).into_iter().flat_map(|r| r.features).collect();
    let (_, log) = train(&rows, &TrainConfig::default()).map_err(|e| e.to_string())?;
    ensure!(
        log.batch_size == 8 && log.epochs == 5,
        "batch {} epochs {}",
        log.batch_size,
        log.epochs
    );
    ensure!(
        log.optimizer == "adagrad" && log.loss == "mse+l1",
        "{} / {}",
        log.optimizer,
        log.loss
    );
    ensure!(log.steps == 5 * rows.len().div_ceil(8), "{} steps", log.steps);
    let (first, last) = (log.epoch_losses[0], log.epoch_losses[4]);
    ensure!(last < first, "epoch losses {:?}", log.epoch_losses);
    Ok(format!(
        "batch 8, 5 epochs, adagrad, mse+l1; loss {first:.4} -> {last:.4}"
    ))
}

fn end_to_end_separation() -> Outcome {
    let start = Instant::now();
    let runs = labeled(&campaign(&["hpcg"], 33, 40, 1.0, 7));
    let splits = split_runs(runs.clone(), &SplitSpec::default()).map_err(|e| e.to_string())?;
    let healthy_test = splits.test.iter().filter(|r| r.label == Decision::Healthy).count();
    ensure!(
        splits.train.len() == 20 && splits.train.iter().all(|r| r.label == Decision::Healthy),
        "train split has {} runs",
        splits.train.len()
    );
    ensure!(
        (healthy_test, splits.test.len() - healthy_test) == (6, 20),
        "test split {healthy_test} healthy / {} malware",
        splits.test.len() - healthy_test
    );
    let out = run_experiment(runs, &ExperimentConfig::default()).map_err(|e| e.to_string())?;
    let s = out.report.overall;
    let (fa, mm, f1) = (
        s.fa_rate.unwrap_or(f64::NAN),
        s.mm_rate.unwrap_or(f64::NAN),
        s.f1.unwrap_or(f64::NAN),
    );
    ensure!(fa == 0.0 && mm == 0.0 && f1 == 1.0, "FA {fa:.3} MM {mm:.3} F1 {f1:.3}");
    let took = within(start, Duration::from_secs(120))?;
    Ok(format!(
        "6 healthy + 20 malware: FA {fa:.3}, MM {mm:.3}, F1 {f1:.3}, {took:.2?}"
    ))
}

fn f1_exactness() -> Outcome {
    let f = |tp, fp, fn_, wm, wh| weighted_f1(tp, fp, fn_, wm, wh).map_err(|e| e.to_string());
    let a = f(9, 1, 1, 1.0, 1.0)?;
    ensure!(a == 0.9, "weighted_f1(9,1,1,1,1) = {a}");
    for tp in [1, 7, 1000] {
        for (wm, wh) in [(1.0, 1.0), (0.05, 0.2), (3.0, 1e-3)] {
            let v = f(tp, 0, 0, wm, wh)?;
            ensure!(v == 1.0, "perfect case gave {v}");
        }
    }
    let mut worst = 0.0f64;
    for (tp, fp, fn_) in [(9, 1, 1), (3, 5, 2), (40, 0, 7), (1, 9, 0)] {
        let base = f(tp, fp, fn_, 0.05, 1.0 / 6.0)?;
        for c in [1e-6, 0.5, 3.0, 1e6] {
            worst = worst.max((f(tp, fp, fn_, 0.05 * c, c / 6.0)? - base).abs());
        }
    }
    ensure!(worst <= 1e-15, "scale invariance off by {worst:e}");
    Ok(format!("0.9 exact, perfect = 1.0, scale drift {worst:.1e}"))
}

fn real_time_budget() -> Outcome {
    let x = random_signal(4, 8192);
    let cfg = WelchConfig::default();
    let start = Instant::now();
    for _ in 0..1000 {
        std::hint::black_box(welch_psd(std::hint::black_box(&x), &cfg, 50_000.0).map_err(|e| e.to_string())?);
    }
    let mean = start.elapsed() / 1000;
    ensure!(mean < Duration::from_millis(20), "welch_psd mean {mean:.2?}");

    let (model, _) = trained_hpcg(1);
    let trace = hpcg_trace(60.0, 2);
    let mut verdicts = 0;
    let mut sink = |_: BatchVerdict| -> paella_core::Result<()> {
        verdicts += 1;
        Ok(())
    };
    let start = Instant::now();
    run_stream(
        StreamSource::replay(trace, 0.0),
        &model,
        &cfg,
        &DetectorConfig::default(),
        &mut sink,
    )
    .map_err(|e| e.to_string())?;
    let took = within(start, Duration::from_secs(6))?;
    ensure!(verdicts == 6, "{verdicts} verdicts for 60 s");
    Ok(format!("welch_psd mean {mean:.2?}; 60 s stream in {took:.2?}"))
}

fn serialization() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (model, rows) = trained_hpcg(1);
    let path = dir.path().join("m.paem");
    save_model(&model, &path).map_err(|e| e.to_string())?;
    let back = load_model(&path).map_err(|e| e.to_string())?;
    let mut p = rng::seeded(5);
    for i in 0..100 {
        let x: Vec<f64> = rows[i % rows.len()]
            .iter()
            .map(|v| v + rng::uniform(&mut p, -3.0, 3.0))
            .collect();
        let a = reconstruction_error(&model, &x).map_err(|e| e.to_string())?;
        let b = reconstruction_error(&back, &x).map_err(|e| e.to_string())?;
        ensure!(a.to_bits() == b.to_bits(), "input {i}: {a} vs {b}");
    }
    let t = hpcg_trace(0.5, 9);
    let tpath = dir.path().join("t.pae");
    write_trace(&t, &tpath, TraceFormat::RawF64Le).map_err(|e| e.to_string())?;
    let tb = read_trace(&tpath, TraceFormat::RawF64Le).map_err(|e| e.to_string())?;
    ensure!(
        tb.t0_ns == t.t0_ns
            && tb
                .samples
                .iter()
                .zip(&t.samples)
                .all(|(a, b)| a.to_bits() == b.to_bits()),
        "trace round trip differs"
    );
    Ok("model outputs bit-identical on 100 inputs; raw trace bit-exact".into())
}

fn alarm(node: &str, i: i64) -> Message {
    Message::Alarm(AlarmMessage {
        node_id: node.into(),
        ts_ns: (i + 1) * 10_000_000_000,
        model_id: "hpcg".into(),
        outlier_fraction: 0.0,
        decision: Decision::Healthy,
        batch_span_ns: (i * 10_000_000_000, (i + 1) * 10_000_000_000),
        partial: false,
        schema_version: 1,
    })
}

fn loopback_delivery() -> Result<Duration, String> {
    let broker = LoopbackBroker::new();
    let sub = broker.subscribe(COLLECTOR_FILTER).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let agents: Vec<_> = ["a1", "a2"]
        .into_iter()
        .map(|node| {
            let t: Arc<dyn Transport> = Arc::new(broker.clone());
            std::thread::spawn(move || {
                let mut p = BufferedPublisher::new(t, 64, RetryPolicy::default());
                for i in 0..500 {
                    p.publish(&alarm_topic(node), &alarm(node, i).encode())?;
                }
                p.flush()
            })
        })
        .collect();
    let mut c = Collector::new(Vec::new(), Vec::new());
    let limits = CollectLimits {
        max_messages: Some(1000),
        idle_timeout: Some(Duration::from_secs(1)),
        ..Default::default()
    };
    collect(&sub, &mut c, &limits).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    for a in agents {
        a.join().map_err(|_| "agent panicked")?.map_err(|e| e.to_string())?;
    }
    let stats = c.stats();
    ensure!(stats.logged == 1000 && stats.dead_letters == 0, "{stats:?}");
    let (log, _) = c.into_parts();
    let log = String::from_utf8(log).map_err(|e| e.to_string())?;
    let mut last = std::collections::HashMap::new();
    for line in log.lines() {
        let m = Message::decode_line(line).map_err(|e| e.to_string())?;
        let prev = last.insert(m.node_id().to_string(), m.ts_ns()).unwrap_or(i64::MIN);
        ensure!(m.ts_ns() > prev, "{} out of order", m.node_id());
    }
    ensure!(took < Duration::from_secs(1), "delivery took {took:.2?}");
    Ok(took)
}

/// Records which model produced each PSD and each verdict.
#[derive(Default)]
struct ModelTrail {
    verdicts: Vec<BatchVerdict>,
    psd_models: Vec<String>,
}

impl VerdictSink for ModelTrail {
    fn on_verdict(&mut self, v: BatchVerdict) -> paella_core::Result<()> {
        self.verdicts.push(v);
        Ok(())
    }

    fn on_psd(&mut self, _: &PsdFeature, _: f64, model_id: &str) {
        self.psd_models.push(model_id.to_string());
    }
}

/// Swaps to model `b` once `swap_at` batches have started.
struct SwapAfter {
    a: ActiveModel,
    b: ActiveModel,
    calls: std::sync::atomic::AtomicUsize,
    swap_at: usize,
}

impl ModelProvider for SwapAfter {
    fn current(&self) -> ActiveModel {
        let n = self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        if n < self.swap_at {
            self.a.clone()
        } else {
            self.b.clone()
        }
    }
}

fn model_swap() -> Outcome {
    let (a, _) = trained_hpcg(4);
    let (b, _) = trained_hpcg(5);

    // Agent level: a command published mid-batch applies from the next batch.
    let mut store = MemoryModelStore::new();
    store.insert("A", a.clone(), None);
    store.insert("B", b.clone(), None);
    let broker = LoopbackBroker::new();
    let sub = broker.subscribe(&alarm_topic("edge")).map_err(|e| e.to_string())?;
    let cmd = broker.clone();
    let source = hooked(
        hpcg_trace(30.0, 3),
        vec![(
            psd_ready(750),
            Box::new(move || {
                let m = Message::ModelCommand(ModelCommand {
                    node_id: "edge".into(),
                    model_id: "B".into(),
                    ts_ns: 1,
                });
                cmd.publish(&command_topic("edge"), &m.encode())
                    .expect("publish command");
            }) as Hook,
        )],
    );
    let cfg = AgentConfig::new("edge", "A");
    let stats = agent_run(source, &store, &cfg, Arc::new(broker)).map_err(|e| e.to_string())?;
    let ids: Vec<String> = sub
        .try_iter()
        .filter_map(|(_, p)| match Message::decode(&p) {
            Ok(Message::Alarm(a)) => Some(a.model_id),
            _ => None,
        })
        .collect();
    ensure!(stats.swaps == 1, "{} swaps", stats.swaps);
    ensure!(ids == ["A", "A", "B"], "alarm models {ids:?}");

    // Detector level: every PSD in a verdict was scored by that verdict's model.
    let provider = SwapAfter {
        a: ActiveModel {
            id: "A".into(),
            model: Arc::new(a),
            t_e: None,
        },
        b: ActiveModel {
            id: "B".into(),
            model: Arc::new(b),
            t_e: None,
        },
        calls: Default::default(),
        swap_at: 3,
    };
    let det = DetectorConfig {
        batch_psds: 40,
        ..DetectorConfig::default()
    };
    let mut trail = ModelTrail::default();
    run_stream_with(
        StreamSource::replay(hpcg_trace(5.0, 8), 0.0),
        &provider,
        &WelchConfig::default(),
        &det,
        &mut trail,
    )
    .map_err(|e| e.to_string())?;
    let mut offset = 0;
    for v in &trail.verdicts {
        let batch = &trail.psd_models[offset..offset + v.total];
        ensure!(
            batch.iter().all(|m| *m == v.model_id),
            "mixed-model verdict at PSD {offset}"
        );
        offset += v.total;
    }
    let swapped = trail.verdicts.iter().position(|v| v.model_id == "B");
    ensure!(swapped == Some(3), "first B verdict at {swapped:?}");
    Ok(format!(
        "A, A, B across the 20 s boundary; {} verdicts unmixed",
        trail.verdicts.len()
    ))
}

fn agent_collector_loopback() -> Outcome {
    let took = loopback_delivery()?;
    let swap = model_swap()?;
    Ok(format!(
        "1000 alarms from 2 agents in {took:.2?}, per-node ordered; {swap}"
    ))
}

/// Criteria expected to fail, with the reason printed next to the result.
const KNOWN_FAILURES: &[(&str, &str)] = &[(
    "parameter count",
    "13,513 is not reachable with [1025,8,4,4,1025] dense layers and biases (13,389); see README",
)];

const CRITERIA: &[(&str, Check)] = &[
    ("FFT/Welch oracle equivalence", fft_welch_oracle),
    ("feature-length law", feature_length_law),
    ("pulse-train spectrum", pulse_train_spectrum),
    ("Parseval check", parseval),
    ("gradient correctness", gradient_check),
    ("parameter count", parameter_count),
    ("training defaults", training_defaults),
    ("synthetic end-to-end separation", end_to_end_separation),
    ("weighted F1 exactness", f1_exactness),
    ("real-time budget", real_time_budget),
    ("serialization", serialization),
    ("agent/collector loopback", agent_collector_loopback),
];

fn main() {
    // Test runners probe targets with `--list`; there are no named tests.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut passed = 0;
    let mut known = 0;
    let mut unexpected = Vec::new();
    for &(name, check) in CRITERIA {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        let took = start.elapsed();
        let known_reason = KNOWN_FAILURES.iter().find(|k| k.0 == name).map(|k| k.1);
        match (outcome, known_reason) {
            (Ok(detail), None) => {
                passed += 1;
                println!("PASS  {name}: {detail} [{took:.2?}]");
            }
            (Ok(detail), Some(_)) => {
                // A known failure that passes means the list is stale.
                unexpected.push(name);
                println!("PASS  {name}: {detail} [{took:.2?}] (listed as a known failure; update the list)");
            }
            (Err(why), Some(reason)) => {
                known += 1;
                println!("FAIL  {name}: {why} [{took:.2?}] (known: {reason})");
            }
            (Err(why), None) => {
                unexpected.push(name);
                println!("FAIL  {name}: {why} [{took:.2?}]");
            }
        }
    }
    println!(
        "acceptance: {passed} passed, {known} known failure(s), {} unexpected, {} total",
        unexpected.len(),
        CRITERIA.len()
    );
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
