use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "paella",
    version,
    about = "Malware detection from high-rate power telemetry",
    after_help = "Exit status: 0 success, 1 runtime or data error, 2 usage error."
)]
pub struct Cli {
    /// TOML config file; command-line flags and PAELLA_* variables override it.
    #[arg(long, global = true, env = "PAELLA_CONFIG", value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// More log output on stderr (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic traces or a whole labeled campaign.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Compute sliding-window Welch PSD features from a trace.
    Psd(PsdArgs),
    /// Train an autoencoder on healthy features.
    Train(TrainArgs),
    /// Set the reconstruction-error threshold from healthy validation features.
    Calibrate(CalibrateArgs),
    /// Stream a trace through the detector and print one verdict per batch.
    Detect(DetectArgs),
    /// Classify every run in a manifest and write the FA / MM / F1 report.
    Eval(EvalArgs),
    /// Run the edge agent: detect over a replayed trace and publish verdicts.
    Agent(AgentArgs),
    /// Run the collector, print node status, or send a model command.
    Collect(CollectArgs),
}

#[derive(Debug, Subcommand)]
pub enum GenCommand {
    /// Square-wave load pulses.
    Pulse(PulseArgs),
    /// Baseline plus tones plus Gaussian noise, optionally perturbed and quantized.
    Signature(SignatureArgs),
    /// Labeled healthy / perturbed runs with features and split manifests.
    Campaign(CampaignArgs),
}

#[derive(Debug, Args)]
pub struct OutputTrace {
    /// Output trace; `.csv` selects CSV, anything else the raw format.
    #[arg(short, long, value_name = "FILE")]
    pub output: PathBuf,

    /// Force the output format (csv, raw).
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Args)]
pub struct PulseArgs {
    #[arg(long, default_value_t = 1000.0)]
    pub freq: f64,
    #[arg(long, default_value_t = 0.5)]
    pub duty: f64,
    /// Power while high, in watts.
    #[arg(long, default_value_t = 200.0)]
    pub high: f64,
    /// Power while low, in watts.
    #[arg(long, default_value_t = 100.0)]
    pub low: f64,
    /// Sample rate in Hz.
    #[arg(long, default_value_t = 50_000.0)]
    pub rate: f64,
    /// Duration in seconds.
    #[arg(long)]
    pub secs: f64,
    #[command(flatten)]
    pub out: OutputTrace,
}

#[derive(Debug, Args)]
pub struct SignatureArgs {
    #[arg(long, default_value_t = 250.0)]
    pub baseline: f64,
    /// Tone as FREQ:AMPLITUDE[:PHASE]; repeatable.
    #[arg(long = "tone", value_name = "F:A[:P]")]
    pub tones: Vec<String>,
    /// Gaussian noise standard deviation in watts.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Extra tone added on top of the signature (FREQ:AMPLITUDE[:PHASE]); repeatable.
    #[arg(long = "perturb-tone", value_name = "F:A[:P]")]
    pub perturb_tones: Vec<String>,
    /// Quantize to 12 bits with this full-scale value in watts.
    #[arg(long, value_name = "WATTS")]
    pub quantize: Option<f64>,
    #[arg(long, default_value_t = 50_000.0)]
    pub rate: f64,
    #[arg(long)]
    pub secs: f64,
    #[command(flatten)]
    pub out: OutputTrace,
}

#[derive(Debug, Args)]
pub struct CampaignArgs {
    /// Directory for features, optional traces and manifests.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Comma-separated subset of the built-in benchmark profiles (hpcg, hpl, qe).
    #[arg(long, value_delimiter = ',')]
    pub benchmarks: Vec<String>,
    /// Healthy runs per benchmark.
    #[arg(long, default_value_t = 33)]
    pub healthy: usize,
    /// Perturbed runs per benchmark.
    #[arg(long, default_value_t = 40)]
    pub malware: usize,
    /// Seconds per run.
    #[arg(long, default_value_t = 1.0)]
    pub secs: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of the train/validation/test split.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Also write each run's trace under traces/.
    #[arg(long)]
    pub traces: bool,
    #[command(flatten)]
    pub welch: WelchArgs,
}

#[derive(Debug, Args, Default, Clone)]
pub struct WelchArgs {
    #[arg(long)]
    pub window_len: Option<usize>,
    #[arg(long)]
    pub fft_len: Option<usize>,
    #[arg(long)]
    pub hop_len: Option<usize>,
    #[arg(long)]
    pub slide_len: Option<usize>,
    /// hann or rect.
    #[arg(long)]
    pub window: Option<String>,
    /// db or linear.
    #[arg(long)]
    pub scale: Option<String>,
}

#[derive(Debug, Args)]
pub struct PsdArgs {
    /// Input trace (`.csv` or raw).
    pub input: PathBuf,
    /// Output features; `.csv` selects CSV, anything else the raw matrix.
    #[arg(short, long, value_name = "FILE")]
    pub output: PathBuf,
    /// Force the input trace format (csv, raw).
    #[arg(long)]
    pub input_format: Option<String>,
    #[command(flatten)]
    pub welch: WelchArgs,
}

#[derive(Debug, Args, Default, Clone)]
pub struct TrainParams {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long = "l1")]
    pub l1_lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Healthy feature files, concatenated.
    #[arg(conflicts_with = "manifest")]
    pub features: Vec<PathBuf>,
    /// Output model (single-model mode).
    #[arg(short, long, value_name = "FILE", conflicts_with = "manifest")]
    pub output: Option<PathBuf>,
    /// Train one model per benchmark from the healthy runs of this manifest.
    #[arg(long, requires = "model_dir")]
    pub manifest: Option<PathBuf>,
    /// Where per-benchmark models are written as <benchmark>.paem.
    #[arg(long, value_name = "DIR")]
    pub model_dir: Option<PathBuf>,
    #[command(flatten)]
    pub params: TrainParams,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Healthy validation feature files.
    #[arg(conflicts_with = "manifest")]
    pub features: Vec<PathBuf>,
    /// Model to calibrate (single-model mode).
    #[arg(long, conflicts_with = "manifest")]
    pub model: Option<PathBuf>,
    /// Threshold file to write; defaults to the model path with extension `.te`.
    #[arg(short, long, value_name = "FILE")]
    pub output: Option<PathBuf>,
    /// Calibrate every <benchmark>.paem in --model-dir on this manifest's healthy runs.
    #[arg(long, requires = "model_dir")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub model_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 99.0)]
    pub percentile: f64,
}

#[derive(Debug, Args, Default, Clone)]
pub struct DetectorArgs {
    /// Per-PSD reconstruction-error threshold (default: the model's .te file, else 0.91).
    #[arg(long = "t-e")]
    pub t_e: Option<f64>,
    /// Outlier fraction above which a batch is malware.
    #[arg(long = "t-o")]
    pub t_o: Option<f64>,
    /// PSDs per verdict.
    #[arg(long)]
    pub batch_psds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    pub trace: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Id stamped on verdicts (default: model file stem).
    #[arg(long)]
    pub model_id: Option<String>,
    /// Replay speed: 1 = real time, 0 = as fast as possible.
    #[arg(long, default_value_t = 0.0)]
    pub speed: f64,
    /// Verdict CSV destination (default: stdout).
    #[arg(short, long, value_name = "FILE")]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub input_format: Option<String>,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[command(flatten)]
    pub welch: WelchArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding <benchmark>.paem (and optional <benchmark>.te).
    #[arg(long, value_name = "DIR")]
    pub model_dir: PathBuf,
    /// Report CSV destination; the text table always goes to stdout.
    #[arg(short, long, value_name = "FILE")]
    pub output: Option<PathBuf>,
    /// Explicit malware-class F1 weight (requires --w-h).
    #[arg(long = "w-m", requires = "w_h")]
    pub w_m: Option<f64>,
    /// Explicit healthy-class F1 weight (requires --w-m).
    #[arg(long = "w-h", requires = "w_m")]
    pub w_h: Option<f64>,
    #[command(flatten)]
    pub detector: DetectorArgs,
}

#[derive(Debug, Args, Default, Clone)]
pub struct NetArgs {
    /// Broker address, tcp://host:port.
    #[arg(long, env = "PAELLA_BROKER_URL")]
    pub broker_url: Option<String>,
    #[arg(long, env = "PAELLA_NODE_ID")]
    pub node_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct AgentArgs {
    pub trace: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub model_dir: PathBuf,
    /// Model id to start with (<id>.paem in --model-dir).
    #[arg(long)]
    pub model: String,
    /// Replay speed: 1 = real time, 0 = as fast as possible.
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
    /// Heartbeat period in seconds of stream time.
    #[arg(long, default_value_t = 10.0)]
    pub heartbeat_secs: f64,
    #[arg(long)]
    pub input_format: Option<String>,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[command(flatten)]
    pub welch: WelchArgs,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    /// Alarm log (one message per line, appended).
    #[arg(long, default_value = "alarms.log", value_name = "FILE")]
    pub log: PathBuf,
    /// Where unparseable messages go.
    #[arg(long, default_value = "dead-letter.log", value_name = "FILE")]
    pub dead_letter: PathBuf,
    /// Run an embedded broker on this address instead of connecting to one.
    #[arg(long, value_name = "ADDR", conflicts_with = "broker_url")]
    pub listen: Option<String>,
    /// Stop after this many deliveries.
    #[arg(long)]
    pub max_messages: Option<usize>,
    /// Stop after this many seconds without deliveries.
    #[arg(long, value_name = "SECS")]
    pub idle_timeout: Option<f64>,
    /// Print per-node status from the log and exit.
    #[arg(long, conflicts_with_all = ["send_model", "listen"])]
    pub status: bool,
    /// Tell --node-id to switch to this model, then exit.
    #[arg(long, value_name = "MODEL_ID")]
    pub send_model: Option<String>,
    #[command(flatten)]
    pub net: NetArgs,
}
