use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use log::info;

use paella_core::autoencoder::{load_model, save_model, train, AeModel, TrainConfig};
use paella_core::campaign::{default_profiles, featurize, generate_campaign, CampaignSpec};
use paella_core::detector::{
    calibrate_threshold, read_threshold, run_stream_with, write_threshold, ActiveModel, BatchVerdict, Decision,
    DetectorConfig, FixedModel, StreamSource,
};
use paella_core::eval::{build_report, classify_run, split_runs, LabeledRun, RunResult, SplitSpec, Weights};
use paella_core::netmon::{
    self, agent_run, collect, command_topic, render_status, status_from_log, AgentConfig, CollectLimits, Collector,
    DirModelStore, Message, ModelCommand, ModelStore, TcpBroker, Transport, COLLECTOR_FILTER,
};
use paella_core::psd::{
    read_features, sliding_psd, write_features, FeatureFormat, FeatureMatrix, OutputScale, WelchConfig, WindowFn,
};
use paella_core::synth::{
    gen_pulse_train, gen_signature, perturb, quantize_12bit, PulseTrainSpec, SignatureSpec, Tone,
};
use paella_core::trace::{read_trace, write_trace, PowerTrace, TraceFormat};

use crate::args::*;
use crate::config::FileConfig;
use crate::manifest::{ManifestEntry, RunManifest, MANIFEST_VERSION};

/// A problem with how the command was invoked rather than with the data.
/// Maps to exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref()).map_err(|e| usage(format!("{e:#}")))?;
    match cli.command {
        Command::Gen(GenCommand::Pulse(a)) => gen_pulse(a),
        Command::Gen(GenCommand::Signature(a)) => gen_sig(a),
        Command::Gen(GenCommand::Campaign(a)) => gen_campaign(a, &file),
        Command::Psd(a) => psd(a, &file),
        Command::Train(a) => train_cmd(a, &file),
        Command::Calibrate(a) => calibrate(a),
        Command::Detect(a) => detect(a, &file),
        Command::Eval(a) => eval(a, &file),
        Command::Agent(a) => agent(a, &file),
        Command::Collect(a) => collect_cmd(a, &file),
    }
}

// ---- shared option resolution ----

fn welch_config(a: &WelchArgs, file: &FileConfig) -> Result<WelchConfig> {
    let f = &file.welch;
    let d = WelchConfig::default();
    let window = a.window.as_ref().or(f.window.as_ref());
    let scale = a.scale.as_ref().or(f.scale.as_ref());
    let cfg = WelchConfig {
        window_len: a.window_len.or(f.window_len).unwrap_or(d.window_len),
        fft_len: a.fft_len.or(f.fft_len).unwrap_or(d.fft_len),
        hop_len: a.hop_len.or(f.hop_len).unwrap_or(d.hop_len),
        slide_len: a.slide_len.or(f.slide_len).unwrap_or(d.slide_len),
        window_fn: match window {
            Some(w) => w.parse::<WindowFn>().map_err(|e| usage(e.to_string()))?,
            None => d.window_fn,
        },
        output_scale: match scale {
            Some(s) => s.parse::<OutputScale>().map_err(|e| usage(e.to_string()))?,
            None => d.output_scale,
        },
        db_floor: d.db_floor,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

/// `t_e` is left as the default; callers decide between an explicit value
/// ([`explicit_t_e`]) and a model's calibrated threshold.
fn detector_config(a: &DetectorArgs, file: &FileConfig, model_id: &str) -> Result<DetectorConfig> {
    let d = DetectorConfig::default();
    let cfg = DetectorConfig {
        t_e: explicit_t_e(a, file).unwrap_or(d.t_e),
        t_o: a.t_o.or(file.detector.t_o).unwrap_or(d.t_o),
        batch_psds: a.batch_psds.or(file.detector.batch_psds).unwrap_or(d.batch_psds),
        model_id: model_id.to_string(),
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn explicit_t_e(a: &DetectorArgs, file: &FileConfig) -> Option<f64> {
    a.t_e.or(file.detector.t_e)
}

/// The sidecar threshold written by `calibrate`, if present.
fn sidecar_t_e(model_path: &Path) -> Result<Option<f64>> {
    let p = model_path.with_extension("te");
    if p.is_file() {
        Ok(Some(
            read_threshold(&p).with_context(|| format!("reading {}", p.display()))?,
        ))
    } else {
        Ok(None)
    }
}

fn trace_format(forced: Option<&str>, path: &Path) -> Result<TraceFormat> {
    match forced {
        Some(f) => f.parse().map_err(|e: paella_core::Error| usage(e.to_string())),
        None => Ok(TraceFormat::from_path(path)),
    }
}

fn load_trace(path: &Path, forced: Option<&str>) -> Result<PowerTrace> {
    let fmt = trace_format(forced, path)?;
    read_trace(path, fmt).with_context(|| format!("reading trace {}", path.display()))
}

fn save_trace(trace: &PowerTrace, out: &OutputTrace) -> Result<()> {
    let fmt = trace_format(out.format.as_deref(), &out.output)?;
    write_trace(trace, &out.output, fmt).with_context(|| format!("writing {}", out.output.display()))?;
    info!("wrote {} samples to {}", trace.len(), out.output.display());
    Ok(())
}

fn load_rows(paths: &[PathBuf]) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for p in paths {
        let m = read_features(p, FeatureFormat::from_path(p)).with_context(|| format!("reading {}", p.display()))?;
        if let Some(first) = rows.first().map(Vec::len) {
            if m.cols() != first {
                bail!("{} has {} columns, expected {first}", p.display(), m.cols());
            }
        }
        rows.extend(m.rows);
    }
    Ok(rows)
}

fn load_model_at(path: &Path) -> Result<AeModel> {
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn model_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.paem"))
}

fn out_writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn parse_tone(s: &str) -> Result<Tone> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |t: &str| {
        t.parse::<f64>()
            .map_err(|_| usage(format!("bad tone `{s}` (expected F:A[:PHASE])")))
    };
    match parts.as_slice() {
        [f, a] => Ok(Tone::new(num(f)?, num(a)?)),
        [f, a, p] => Ok(Tone {
            freq_hz: num(f)?,
            amplitude_w: num(a)?,
            phase_rad: num(p)?,
        }),
        _ => Err(usage(format!("bad tone `{s}` (expected F:A[:PHASE])"))),
    }
}

fn features_of(entries: &[ManifestEntry]) -> Result<Vec<LabeledRun>> {
    entries
        .iter()
        .map(|e| {
            let m = read_features(&e.path, FeatureFormat::from_path(&e.path))
                .with_context(|| format!("run {}: reading {}", e.run_id, e.path.display()))?;
            Ok(LabeledRun {
                run_id: e.run_id.clone(),
                benchmark_id: e.benchmark_id.clone(),
                label: e.label,
                features: m.rows,
            })
        })
        .collect()
}

/// Healthy rows of each benchmark, in manifest order.
fn healthy_by_benchmark(manifest: &RunManifest) -> Result<BTreeMap<String, Vec<Vec<f64>>>> {
    let healthy: Vec<ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| e.label == Decision::Healthy)
        .cloned()
        .collect();
    if healthy.is_empty() {
        bail!("manifest lists no healthy runs");
    }
    let mut out: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for run in features_of(&healthy)? {
        out.entry(run.benchmark_id).or_default().extend(run.features);
    }
    Ok(out)
}

// ---- gen ----

fn gen_pulse(a: PulseArgs) -> Result<()> {
    let trace = gen_pulse_train(&PulseTrainSpec {
        freq_hz: a.freq,
        duty: a.duty,
        high_w: a.high,
        low_w: a.low,
        duration_s: a.secs,
        sample_rate_hz: a.rate,
    })?;
    save_trace(&trace, &a.out)
}

fn gen_sig(a: SignatureArgs) -> Result<()> {
    let tones = a.tones.iter().map(|t| parse_tone(t)).collect::<Result<Vec<_>>>()?;
    let spec = SignatureSpec {
        baseline_w: a.baseline,
        tones,
        noise_sigma_w: a.noise,
        seed: a.seed,
        sample_rate_hz: a.rate,
    };
    let mut trace = gen_signature(&spec, a.secs)?;
    if !a.perturb_tones.is_empty() {
        let extra = SignatureSpec {
            tones: a
                .perturb_tones
                .iter()
                .map(|t| parse_tone(t))
                .collect::<Result<Vec<_>>>()?,
            ..SignatureSpec::zero(a.rate)
        };
        trace = perturb(&trace, &extra)?;
    }
    if let Some(fs_w) = a.quantize {
        trace = quantize_12bit(&trace, fs_w)?;
    }
    save_trace(&trace, &a.out)
}

fn gen_campaign(a: CampaignArgs, file: &FileConfig) -> Result<()> {
    let welch = welch_config(&a.welch, file)?;
    let mut benchmarks = default_profiles();
    if !a.benchmarks.is_empty() {
        let known: BTreeSet<String> = benchmarks.iter().map(|b| b.id.clone()).collect();
        if let Some(bad) = a.benchmarks.iter().find(|b| !known.contains(*b)) {
            return Err(usage(format!(
                "unknown benchmark `{bad}` (known: {})",
                known.into_iter().collect::<Vec<_>>().join(", ")
            )));
        }
        benchmarks.retain(|b| a.benchmarks.contains(&b.id));
    }
    let spec = CampaignSpec {
        benchmarks,
        healthy_runs: a.healthy,
        malware_runs: a.malware,
        run_secs: a.secs,
        seed: a.seed,
        ..CampaignSpec::default()
    };
    let runs = generate_campaign(&spec)?;
    let feat_dir = a.out_dir.join("features");
    fs::create_dir_all(&feat_dir).with_context(|| format!("creating {}", feat_dir.display()))?;
    if a.traces {
        let dir = a.out_dir.join("traces");
        fs::create_dir_all(&dir)?;
        for r in &runs {
            write_trace(&r.trace, &dir.join(format!("{}.pae", r.run_id)), TraceFormat::RawF64Le)?;
        }
    }
    let labeled = featurize(&runs, &welch)?;
    let mut entries = Vec::with_capacity(labeled.len());
    for r in &labeled {
        let path = feat_dir.join(format!("{}.paf", r.run_id));
        let m = FeatureMatrix {
            bin_hz: runs[0].trace.sample_rate_hz / welch.fft_len as f64,
            scale: welch.output_scale,
            rows: r.features.clone(),
        };
        write_features(&m, &path, FeatureFormat::RawF64Le)?;
        entries.push(ManifestEntry {
            run_id: r.run_id.clone(),
            benchmark_id: r.benchmark_id.clone(),
            label: r.label,
            path,
        });
    }
    let manifest = |entries: Vec<ManifestEntry>| RunManifest {
        format_version: MANIFEST_VERSION,
        entries,
    };
    let by_id: BTreeMap<String, ManifestEntry> = entries.iter().map(|e| (e.run_id.clone(), e.clone())).collect();
    manifest(entries).write(&a.out_dir.join("all.tsv"))?;
    let splits = split_runs(
        labeled,
        &SplitSpec {
            seed: a.split_seed,
            ..SplitSpec::default()
        },
    )?;
    for (name, part) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        let e = part.iter().map(|r| by_id[&r.run_id].clone()).collect();
        manifest(e).write(&a.out_dir.join(format!("{name}.tsv")))?;
    }
    println!(
        "{} runs: train {}, val {}, test {} -> {}",
        runs.len(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        a.out_dir.display()
    );
    Ok(())
}

// ---- psd ----

fn psd(a: PsdArgs, file: &FileConfig) -> Result<()> {
    let welch = welch_config(&a.welch, file)?;
    let trace = load_trace(&a.input, a.input_format.as_deref())?;
    let feats = sliding_psd(&trace, &welch)?;
    if feats.is_empty() {
        bail!(
            "trace has {} samples, fewer than one {}-sample window",
            trace.len(),
            welch.window_len
        );
    }
    let m = FeatureMatrix::from_features(&feats, welch.output_scale)?;
    write_features(&m, &a.output, FeatureFormat::from_path(&a.output))
        .with_context(|| format!("writing {}", a.output.display()))?;
    info!("{} PSDs x {} bins -> {}", m.rows.len(), m.cols(), a.output.display());
    Ok(())
}

// ---- train / calibrate ----

fn train_config(p: &TrainParams, file: &FileConfig) -> TrainConfig {
    let f = &file.train;
    let d = TrainConfig::default();
    TrainConfig {
        batch_size: p.batch_size.or(f.batch_size).unwrap_or(d.batch_size),
        epochs: p.epochs.or(f.epochs).unwrap_or(d.epochs),
        learning_rate: p.learning_rate.or(f.learning_rate).unwrap_or(d.learning_rate),
        l1_lambda: p.l1_lambda.or(f.l1_lambda).unwrap_or(d.l1_lambda),
        seed: p.seed.or(f.seed).unwrap_or(d.seed),
        ..d
    }
}

fn train_one(name: &str, rows: &[Vec<f64>], cfg: &TrainConfig, out: &Path) -> Result<()> {
    let (model, log) = train(rows, cfg).with_context(|| format!("training {name}"))?;
    save_model(&model, out).with_context(|| format!("writing {}", out.display()))?;
    let losses: Vec<String> = log.epoch_losses.iter().map(|l| format!("{l:.4}")).collect();
    println!(
        "{name}: {} rows, {} params, {} {} epochs x batch {}, loss [{}] -> {}",
        rows.len(),
        model.param_count(),
        log.optimizer,
        log.epochs,
        log.batch_size,
        losses.join(", "),
        out.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs, file: &FileConfig) -> Result<()> {
    let cfg = train_config(&a.params, file);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    match (&a.manifest, &a.output) {
        (Some(manifest), _) => {
            let dir = a.model_dir.as_ref().expect("clap requires model_dir");
            fs::create_dir_all(dir)?;
            let manifest = RunManifest::read(manifest)?;
            for (bench, rows) in healthy_by_benchmark(&manifest)? {
                netmon::validate_id("benchmark id", &bench)?;
                train_one(&bench, &rows, &cfg, &model_path(dir, &bench))?;
            }
            Ok(())
        }
        (None, Some(out)) => {
            if a.features.is_empty() {
                return Err(usage("train needs feature files or --manifest"));
            }
            let rows = load_rows(&a.features)?;
            let name = out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
            train_one(name, &rows, &cfg, out)
        }
        (None, None) => Err(usage(
            "train needs -o <model> with feature files, or --manifest with --model-dir",
        )),
    }
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    if let Some(manifest) = &a.manifest {
        let dir = a.model_dir.as_ref().expect("clap requires model_dir");
        let manifest = RunManifest::read(manifest)?;
        for (bench, rows) in healthy_by_benchmark(&manifest)? {
            let path = model_path(dir, &bench);
            let model = load_model_at(&path)?;
            let t_e =
                calibrate_threshold(&model, &rows, a.percentile).with_context(|| format!("calibrating {bench}"))?;
            let te_path = path.with_extension("te");
            write_threshold(&te_path, t_e)?;
            println!(
                "{bench}: t_e = {t_e} (p{} of {} rows) -> {}",
                a.percentile,
                rows.len(),
                te_path.display()
            );
        }
        return Ok(());
    }
    let Some(model_file) = &a.model else {
        return Err(usage(
            "calibrate needs --model with feature files, or --manifest with --model-dir",
        ));
    };
    if a.features.is_empty() {
        return Err(usage("calibrate needs validation feature files"));
    }
    let model = load_model_at(model_file)?;
    let rows = load_rows(&a.features)?;
    let t_e = calibrate_threshold(&model, &rows, a.percentile)?;
    let out = a.output.clone().unwrap_or_else(|| model_file.with_extension("te"));
    write_threshold(&out, t_e)?;
    println!(
        "t_e = {t_e} (p{} of {} rows) -> {}",
        a.percentile,
        rows.len(),
        out.display()
    );
    Ok(())
}

// ---- detect ----

const VERDICT_CSV_HEADER: &str =
    "model_id,window_start_ns,window_end_ns,outliers,total,outlier_fraction,decision,partial";

fn verdict_row(v: &BatchVerdict) -> String {
    format!(
        "{},{},{},{},{},{:.6},{},{}",
        v.model_id,
        v.window_span_ns.0,
        v.window_span_ns.1,
        v.outlier_count,
        v.total,
        v.outlier_fraction,
        v.decision,
        v.partial
    )
}

fn detect(a: DetectArgs, file: &FileConfig) -> Result<()> {
    let welch = welch_config(&a.welch, file)?;
    let model_id = match &a.model_id {
        Some(id) => id.clone(),
        None => a
            .model
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("model")
            .to_string(),
    };
    let cfg = detector_config(&a.detector, file, &model_id)?;
    let model = load_model_at(&a.model)?;
    let t_e = match explicit_t_e(&a.detector, file) {
        Some(t) => Some(t),
        None => sidecar_t_e(&a.model)?,
    };
    let trace = load_trace(&a.trace, a.input_format.as_deref())?;
    let provider = FixedModel(ActiveModel {
        id: model_id,
        model: Arc::new(model),
        t_e,
    });

    let mut out = out_writer(a.output.as_deref())?;
    writeln!(out, "{VERDICT_CSV_HEADER}")?;
    let mut malware = 0;
    let mut sink = |v: BatchVerdict| -> paella_core::Result<()> {
        if v.decision == Decision::Malware {
            malware += 1;
        }
        writeln!(out, "{}", verdict_row(&v))?;
        Ok(())
    };
    let stats = run_stream_with(StreamSource::replay(trace, a.speed), &provider, &welch, &cfg, &mut sink)?;
    out.flush()?;
    eprintln!(
        "{} samples, {} PSDs, {} verdicts ({} partial), {} malware",
        stats.samples, stats.psds, stats.verdicts, stats.partial_verdicts, malware
    );
    Ok(())
}

// ---- eval ----

fn eval(a: EvalArgs, file: &FileConfig) -> Result<()> {
    let weights = match (a.w_m, a.w_h) {
        (Some(w_m), Some(w_h)) => Weights::Explicit { w_m, w_h },
        _ => Weights::InverseClassCounts,
    };
    let manifest = RunManifest::read(&a.manifest)?;
    let runs = features_of(&manifest.entries)?;
    let explicit = explicit_t_e(&a.detector, file);

    let mut models: BTreeMap<String, (AeModel, DetectorConfig)> = BTreeMap::new();
    let mut results = Vec::with_capacity(runs.len());
    for run in &runs {
        if !models.contains_key(&run.benchmark_id) {
            netmon::validate_id("benchmark id", &run.benchmark_id)?;
            let path = model_path(&a.model_dir, &run.benchmark_id);
            let model = load_model_at(&path)?;
            let mut cfg = detector_config(&a.detector, file, &run.benchmark_id)?;
            cfg.t_e = match explicit {
                Some(t) => t,
                None => sidecar_t_e(&path)?.unwrap_or(cfg.t_e),
            };
            info!("{}: t_e = {}", run.benchmark_id, cfg.t_e);
            models.insert(run.benchmark_id.clone(), (model, cfg));
        }
        let (model, cfg) = &models[&run.benchmark_id];
        let predicted = classify_run(model, run, cfg).with_context(|| format!("run {}", run.run_id))?;
        results.push(RunResult {
            benchmark_id: run.benchmark_id.clone(),
            label: run.label,
            predicted,
        });
    }
    let report = build_report(&results, weights)?;
    if let Some(out) = &a.output {
        fs::write(out, report.to_csv()).with_context(|| format!("writing {}", out.display()))?;
    }
    print!("{}", report.to_text());
    Ok(())
}

// ---- agent ----

/// Applies an explicit threshold to every model the agent loads.
struct ThresholdOverride<S> {
    inner: S,
    t_e: Option<f64>,
}

impl<S: ModelStore> ModelStore for ThresholdOverride<S> {
    fn load(&self, id: &str) -> paella_core::Result<ActiveModel> {
        let mut m = self.inner.load(id)?;
        if self.t_e.is_some() {
            m.t_e = self.t_e;
        }
        Ok(m)
    }
}

fn broker_url(net: &NetArgs, file: &FileConfig) -> Result<String> {
    net.broker_url
        .clone()
        .or_else(|| file.netmon.broker_url.clone())
        .ok_or_else(|| usage("no broker: pass --broker-url or set PAELLA_BROKER_URL"))
}

fn node_id(net: &NetArgs, file: &FileConfig) -> Result<String> {
    let id = net
        .node_id
        .clone()
        .or_else(|| file.netmon.node_id.clone())
        .ok_or_else(|| usage("no node id: pass --node-id or set PAELLA_NODE_ID"))?;
    netmon::validate_id("node id", &id).map_err(|e| usage(e.to_string()))?;
    Ok(id)
}

fn agent(a: AgentArgs, file: &FileConfig) -> Result<()> {
    let welch = welch_config(&a.welch, file)?;
    let node = node_id(&a.net, file)?;
    let url = broker_url(&a.net, file)?;
    if !(a.heartbeat_secs.is_finite() && a.heartbeat_secs > 0.0) {
        return Err(usage("--heartbeat-secs must be positive"));
    }
    let mut cfg = AgentConfig::new(&node, &a.model);
    cfg.welch = welch;
    cfg.detector = detector_config(&a.detector, file, &a.model)?;
    cfg.heartbeat_every_ns = (a.heartbeat_secs * 1e9).round() as i64;
    let store = ThresholdOverride {
        inner: DirModelStore {
            dir: a.model_dir.clone(),
        },
        t_e: explicit_t_e(&a.detector, file),
    };
    let trace = load_trace(&a.trace, a.input_format.as_deref())?;
    let transport = netmon::connect(&url).with_context(|| format!("connecting to {url}"))?;
    let stats = agent_run(StreamSource::replay(trace, a.speed), &store, &cfg, transport)?;
    eprintln!(
        "{node}: {} PSDs, {} alarms, {} heartbeats, {} model swaps, {} nacks, {} published",
        stats.stream.psds, stats.alarms, stats.heartbeats, stats.swaps, stats.nacks, stats.published
    );
    Ok(())
}

// ---- collect ----

fn now_ns() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as i64)
        .unwrap_or(0)
}

fn collect_cmd(a: CollectArgs, file: &FileConfig) -> Result<()> {
    if a.status {
        let nodes = status_from_log(&a.log).with_context(|| format!("reading {}", a.log.display()))?;
        print!("{}", render_status(&nodes));
        return Ok(());
    }
    if let Some(model_id) = &a.send_model {
        netmon::validate_id("model id", model_id).map_err(|e| usage(e.to_string()))?;
        let node = node_id(&a.net, file)?;
        let url = broker_url(&a.net, file)?;
        let transport = netmon::connect(&url).with_context(|| format!("connecting to {url}"))?;
        let msg = Message::ModelCommand(ModelCommand {
            node_id: node.clone(),
            model_id: model_id.clone(),
            ts_ns: now_ns(),
        });
        transport.publish(&command_topic(&node), &msg.encode())?;
        transport.flush()?;
        eprintln!("sent model {model_id} to {node}");
        return Ok(());
    }

    let idle_timeout = match a.idle_timeout {
        Some(s) if s.is_finite() && s > 0.0 => Some(Duration::from_secs_f64(s)),
        Some(_) => return Err(usage("--idle-timeout must be positive")),
        None => None,
    };
    // Keep the embedded broker alive until collection ends.
    let (_broker, transport): (Option<TcpBroker>, Arc<dyn Transport>) = match &a.listen {
        Some(addr) => {
            let broker = TcpBroker::bind(addr).with_context(|| format!("binding {addr}"))?;
            eprintln!("listening on {}", broker.url());
            let t = netmon::connect(&broker.url())?;
            (Some(broker), t)
        }
        None => {
            let url = broker_url(&a.net, file)?;
            (
                None,
                netmon::connect(&url).with_context(|| format!("connecting to {url}"))?,
            )
        }
    };
    let sub = transport.subscribe(COLLECTOR_FILTER)?;
    let mut collector = Collector::open(&a.log, &a.dead_letter)
        .with_context(|| format!("opening {} / {}", a.log.display(), a.dead_letter.display()))?;
    let limits = CollectLimits {
        max_messages: a.max_messages,
        idle_timeout,
        stop: None,
    };
    let stats = collect(&sub, &mut collector, &limits)?;
    let status = collector.status_text();
    let (mut log, mut dead) = collector.into_parts();
    log.flush()?;
    dead.flush()?;
    eprintln!(
        "received {}, logged {}, duplicates {}, dead letters {}",
        stats.received, stats.logged, stats.duplicates, stats.dead_letters
    );
    print!("{status}");
    Ok(())
}
