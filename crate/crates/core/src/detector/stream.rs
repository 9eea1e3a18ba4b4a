//! Streaming detection: ingest → PSD → inference, joined by bounded
//! single-producer/single-consumer queues. A full queue blocks its producer,
//! so no sample is ever dropped.

use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use log::debug;

use super::{batch_verdict, reconstruction_error, BatchVerdict, DetectorConfig};
use crate::autoencoder::AeModel;
use crate::error::{Error, Result};
use crate::psd::{PsdFeature, WelchConfig, WelchEstimator};
use crate::trace::{offset_ns, PowerTrace};

/// Depth of each inter-stage queue, in messages.
const QUEUE_DEPTH: usize = 16;

/// Samples handed over per chunk by [`TraceReplay`]; matches the 2048-sample
/// batches the acquisition front end delivers.
pub const REPLAY_CHUNK: usize = 2048;

/// Fixed-capacity circular buffer holding the most recent `capacity` samples.
#[derive(Debug, Clone)]
pub struct SampleRing {
    buf: Vec<f64>,
    head: usize,
    len: usize,
}

impl SampleRing {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "ring capacity must be positive");
        Self {
            buf: vec![0.0; capacity],
            head: 0,
            len: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.buf.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_full(&self) -> bool {
        self.len == self.buf.len()
    }

    pub fn push(&mut self, x: f64) {
        self.buf[self.head] = x;
        self.head = (self.head + 1) % self.buf.len();
        if self.len < self.buf.len() {
            self.len += 1;
        }
    }

    /// Copies the buffered samples, oldest first, into `out`.
    pub fn copy_ordered(&self, out: &mut [f64]) {
        assert_eq!(out.len(), self.len);
        let cap = self.buf.len();
        let start = (self.head + cap - self.len) % cap;
        let first = (cap - start).min(self.len);
        out[..first].copy_from_slice(&self.buf[start..start + first]);
        out[first..].copy_from_slice(&self.buf[..self.len - first]);
    }
}

/// A finite or unbounded stream of sample chunks at a declared rate.
pub struct StreamSource {
    pub sample_rate_hz: f64,
    pub t0_ns: i64,
    pub chunks: Box<dyn Iterator<Item = Vec<f64>> + Send>,
}

impl StreamSource {
    pub fn new(sample_rate_hz: f64, t0_ns: i64, chunks: impl Iterator<Item = Vec<f64>> + Send + 'static) -> Self {
        Self {
            sample_rate_hz,
            t0_ns,
            chunks: Box::new(chunks),
        }
    }

    /// Replays a trace in [`REPLAY_CHUNK`]-sample chunks. `speed` 1.0 paces
    /// chunks in real time, 0 delivers as fast as possible.
    pub fn replay(trace: PowerTrace, speed: f64) -> Self {
        let (rate, t0) = (trace.sample_rate_hz, trace.t0_ns);
        Self::new(rate, t0, TraceReplay::new(trace, REPLAY_CHUNK, speed))
    }
}

/// Iterator over chunks of a trace, optionally paced against the wall clock.
pub struct TraceReplay {
    trace: PowerTrace,
    chunk_len: usize,
    speed: f64,
    pos: usize,
    started: Option<Instant>,
}

impl TraceReplay {
    pub fn new(trace: PowerTrace, chunk_len: usize, speed: f64) -> Self {
        Self {
            trace,
            chunk_len: chunk_len.max(1),
            speed: if speed.is_finite() && speed > 0.0 { speed } else { 0.0 },
            pos: 0,
            started: None,
        }
    }
}

impl Iterator for TraceReplay {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        if self.pos >= self.trace.len() {
            return None;
        }
        let end = (self.pos + self.chunk_len).min(self.trace.len());
        if self.speed > 0.0 {
            let started = *self.started.get_or_insert_with(Instant::now);
            let due = Duration::from_secs_f64(end as f64 / self.trace.sample_rate_hz / self.speed);
            let elapsed = started.elapsed();
            if due > elapsed {
                thread::sleep(due - elapsed);
            }
        }
        let chunk = self.trace.samples[self.pos..end].to_vec();
        self.pos = end;
        Some(chunk)
    }
}

/// Supplies the model for each batch. `current` is called once at the start
/// of every batch, so swaps only ever land on batch boundaries.
pub trait ModelProvider: Sync {
    fn current(&self) -> ActiveModel;
}

/// A model together with the id stamped on its verdicts and, optionally,
/// its own calibrated `t_e` (otherwise the detector config's is used).
#[derive(Debug, Clone)]
pub struct ActiveModel {
    pub id: String,
    pub model: Arc<AeModel>,
    pub t_e: Option<f64>,
}

/// A single model that never changes.
pub struct FixedModel(pub ActiveModel);

impl ModelProvider for FixedModel {
    fn current(&self) -> ActiveModel {
        self.0.clone()
    }
}

/// Receives pipeline output on the inference thread.
pub trait VerdictSink {
    fn on_verdict(&mut self, verdict: BatchVerdict) -> Result<()>;

    /// Called for every PSD with its reconstruction error and the id of the
    /// model that scored it, in stream order.
    fn on_psd(&mut self, _psd: &PsdFeature, _error: f64, _model_id: &str) {}
}

impl<F: FnMut(BatchVerdict) -> Result<()>> VerdictSink for F {
    fn on_verdict(&mut self, verdict: BatchVerdict) -> Result<()> {
        self(verdict)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamStats {
    pub samples: usize,
    pub psds: usize,
    pub verdicts: usize,
    pub partial_verdicts: usize,
}

/// Runs the detector over `source` with one fixed model
/// (`cfg.model_id` names it in verdicts).
pub fn run_stream(
    source: StreamSource,
    model: &AeModel,
    welch: &WelchConfig,
    cfg: &DetectorConfig,
    sink: &mut dyn VerdictSink,
) -> Result<StreamStats> {
    let provider = FixedModel(ActiveModel {
        id: cfg.model_id.clone(),
        model: Arc::new(model.clone()),
        t_e: None,
    });
    run_stream_with(source, &provider, welch, cfg, sink)
}

/// Runs the detector over `source`, asking `models` for the model at every
/// batch boundary. When the source ends, a non-empty short batch is flushed
/// with `partial` set.
pub fn run_stream_with(
    source: StreamSource,
    models: &dyn ModelProvider,
    welch: &WelchConfig,
    cfg: &DetectorConfig,
    sink: &mut dyn VerdictSink,
) -> Result<StreamStats> {
    cfg.validate()?;
    let estimator = WelchEstimator::new(welch.clone(), source.sample_rate_hz)?;
    let StreamSource {
        sample_rate_hz,
        t0_ns,
        chunks,
    } = source;
    let window_ns = (welch.window_len as f64 * 1e9 / sample_rate_hz).round() as i64;

    thread::scope(|scope| {
        let (chunk_tx, chunk_rx) = sync_channel::<Vec<f64>>(QUEUE_DEPTH);
        let (psd_tx, psd_rx) = sync_channel::<Result<PsdFeature>>(QUEUE_DEPTH);

        let ingest = scope.spawn(move || ingest_stage(chunks, chunk_tx));
        scope.spawn(move || psd_stage(chunk_rx, psd_tx, estimator, t0_ns));

        let mut stats = inference_stage(psd_rx, models, cfg, window_ns, sink)?;
        stats.samples = ingest.join().expect("ingest stage panicked");
        Ok(stats)
    })
}

fn ingest_stage(chunks: Box<dyn Iterator<Item = Vec<f64>> + Send>, tx: SyncSender<Vec<f64>>) -> usize {
    let mut total = 0;
    for chunk in chunks {
        total += chunk.len();
        if tx.send(chunk).is_err() {
            break;
        }
    }
    total
}

fn psd_stage(rx: Receiver<Vec<f64>>, tx: SyncSender<Result<PsdFeature>>, mut est: WelchEstimator, t0_ns: i64) {
    let cfg = est.config().clone();
    let rate = est.sample_rate_hz();
    let mut ring = SampleRing::new(cfg.window_len);
    let mut window = vec![0.0; cfg.window_len];
    let mut seen = 0usize;
    for chunk in rx {
        for x in chunk {
            if !x.is_finite() {
                let _ = tx.send(Err(Error::NonFiniteSample(seen + 1)));
                return;
            }
            ring.push(x);
            seen += 1;
            if seen >= cfg.window_len && (seen - cfg.window_len).is_multiple_of(cfg.slide_len) {
                let start = seen - cfg.window_len;
                ring.copy_ordered(&mut window);
                let feature = est.estimate(&window, offset_ns(t0_ns, start, rate));
                if tx.send(feature).is_err() {
                    return;
                }
            }
        }
    }
}

struct PendingBatch {
    model_id: String,
    model: Arc<AeModel>,
    cfg: DetectorConfig,
    errors: Vec<f64>,
    first_start_ns: i64,
    last_start_ns: i64,
}

fn inference_stage(
    rx: Receiver<Result<PsdFeature>>,
    models: &dyn ModelProvider,
    cfg: &DetectorConfig,
    window_ns: i64,
    sink: &mut dyn VerdictSink,
) -> Result<StreamStats> {
    let mut stats = StreamStats::default();
    let mut batch: Option<PendingBatch> = None;
    for feature in rx {
        let feature = feature?;
        let pending = batch.get_or_insert_with(|| {
            let active = models.current();
            let mut batch_cfg = cfg.clone();
            if let Some(t_e) = active.t_e {
                batch_cfg.t_e = t_e;
            }
            PendingBatch {
                model_id: active.id,
                model: active.model,
                cfg: batch_cfg,
                errors: Vec::with_capacity(cfg.batch_psds),
                first_start_ns: feature.window_start_ns,
                last_start_ns: feature.window_start_ns,
            }
        });
        let err = reconstruction_error(&pending.model, &feature.bins)?;
        sink.on_psd(&feature, err, &pending.model_id);
        pending.errors.push(err);
        pending.last_start_ns = feature.window_start_ns;
        stats.psds += 1;
        if pending.errors.len() == cfg.batch_psds {
            let done = batch.take().expect("batch present");
            sink.on_verdict(finish(done, window_ns, false)?)?;
            stats.verdicts += 1;
        }
    }
    if let Some(done) = batch.take() {
        debug!("flushing partial batch of {} PSDs", done.errors.len());
        sink.on_verdict(finish(done, window_ns, true)?)?;
        stats.verdicts += 1;
        stats.partial_verdicts += 1;
    }
    Ok(stats)
}

fn finish(b: PendingBatch, window_ns: i64, partial: bool) -> Result<BatchVerdict> {
    batch_verdict(
        b.errors,
        &b.cfg,
        &b.model_id,
        (b.first_start_ns, b.last_start_ns + window_ns),
        partial,
    )
}
