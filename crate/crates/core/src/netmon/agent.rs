use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicI64, AtomicUsize, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, RecvTimeoutError, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread;

use log::{info, warn};

use super::transport::{BufferedPublisher, RetryPolicy, Subscription, Transport};
use super::{
    alarm_topic, command_topic, heartbeat_topic, nack_topic, validate_id, AlarmMessage, Heartbeat, Message, Nack,
};
use crate::autoencoder::{load_model, AeModel};
use crate::detector::{
    read_threshold, run_stream_with, ActiveModel, BatchVerdict, DetectorConfig, ModelProvider, StreamSource,
    StreamStats, VerdictSink,
};
use crate::error::{Error, Result};
use crate::psd::{PsdFeature, WelchConfig};

/// Heartbeat period in stream time.
pub const HEARTBEAT_EVERY_NS: i64 = 10_000_000_000;

const OUTBOX_DEPTH: usize = 64;

/// Where the agent looks up models named by commands.
pub trait ModelStore: Sync {
    /// Fails with `UnknownModel` when `model_id` is not available.
    fn load(&self, model_id: &str) -> Result<ActiveModel>;
}

#[derive(Default)]
pub struct MemoryModelStore {
    models: BTreeMap<String, ActiveModel>,
}

impl MemoryModelStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: &str, model: AeModel, t_e: Option<f64>) {
        self.models.insert(
            id.to_string(),
            ActiveModel {
                id: id.to_string(),
                model: Arc::new(model),
                t_e,
            },
        );
    }
}

impl ModelStore for MemoryModelStore {
    fn load(&self, model_id: &str) -> Result<ActiveModel> {
        self.models
            .get(model_id)
            .cloned()
            .ok_or_else(|| Error::UnknownModel(model_id.to_string()))
    }
}

/// Models stored as `<dir>/<id>.paem`, each with an optional calibrated
/// threshold in `<dir>/<id>.te`.
pub struct DirModelStore {
    pub dir: PathBuf,
}

impl ModelStore for DirModelStore {
    fn load(&self, model_id: &str) -> Result<ActiveModel> {
        validate_id("model id", model_id).map_err(|_| Error::UnknownModel(model_id.to_string()))?;
        let path = self.dir.join(format!("{model_id}.paem"));
        if !path.is_file() {
            return Err(Error::UnknownModel(model_id.to_string()));
        }
        let model = load_model(&path)?;
        let te_path = path.with_extension("te");
        let t_e = if te_path.is_file() {
            Some(read_threshold(&te_path)?)
        } else {
            None
        };
        Ok(ActiveModel {
            id: model_id.to_string(),
            model: Arc::new(model),
            t_e,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub node_id: String,
    pub initial_model: String,
    pub welch: WelchConfig,
    /// `t_e` here applies only to models without their own threshold;
    /// `model_id` is ignored in favor of the active model's id.
    pub detector: DetectorConfig,
    pub heartbeat_every_ns: i64,
    /// Messages kept while the transport is down.
    pub buffer_capacity: usize,
    pub retry: RetryPolicy,
}

impl AgentConfig {
    pub fn new(node_id: &str, initial_model: &str) -> Self {
        Self {
            node_id: node_id.to_string(),
            initial_model: initial_model.to_string(),
            welch: WelchConfig::default(),
            detector: DetectorConfig::default(),
            heartbeat_every_ns: HEARTBEAT_EVERY_NS,
            buffer_capacity: 1024,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AgentStats {
    pub stream: StreamStats,
    pub alarms: usize,
    pub heartbeats: usize,
    pub swaps: usize,
    pub nacks: usize,
    pub published: usize,
}

type Outgoing = (String, Vec<u8>);

/// Model provider that applies pending model commands at each batch start.
struct ModelSlot<'a> {
    node_id: String,
    active: Mutex<ActiveModel>,
    commands: Mutex<Subscription>,
    store: &'a dyn ModelStore,
    outbox: Mutex<SyncSender<Outgoing>>,
    /// Latest stream time seen, used to stamp nacks.
    now_ns: AtomicI64,
    swaps: AtomicUsize,
    nacks: AtomicUsize,
}

impl ModelSlot<'_> {
    fn apply(&self, payload: &[u8]) {
        let cmd = match Message::decode(payload) {
            Ok(Message::ModelCommand(c)) if c.node_id == self.node_id => c,
            Ok(other) => {
                warn!("ignoring {} message on command topic", other.kind());
                return;
            }
            Err(e) => {
                warn!("ignoring malformed command: {e}");
                return;
            }
        };
        match self.store.load(&cmd.model_id) {
            Ok(next) => {
                info!("switching to model {}", next.id);
                *self.active.lock().expect("slot lock poisoned") = next;
                self.swaps.fetch_add(1, Ordering::Relaxed);
            }
            Err(e) => {
                warn!("rejecting model {}: {e}", cmd.model_id);
                let nack = Message::Nack(Nack {
                    node_id: self.node_id.clone(),
                    ts_ns: self.now_ns.load(Ordering::Relaxed),
                    model_id: cmd.model_id,
                    reason: e.to_string(),
                });
                let sent = self
                    .outbox
                    .lock()
                    .expect("outbox lock poisoned")
                    .send((nack_topic(&self.node_id), nack.encode()));
                if sent.is_ok() {
                    self.nacks.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
    }
}

impl ModelProvider for ModelSlot<'_> {
    fn current(&self) -> ActiveModel {
        let pending: Vec<Vec<u8>> = self
            .commands
            .lock()
            .expect("command lock poisoned")
            .try_iter()
            .map(|(_, p)| p)
            .collect();
        for p in pending {
            self.apply(&p);
        }
        self.active.lock().expect("slot lock poisoned").clone()
    }
}

struct AgentSink<'a> {
    node_id: String,
    outbox: SyncSender<Outgoing>,
    slot: &'a ModelSlot<'a>,
    every_ns: i64,
    next_heartbeat_ns: Option<i64>,
    psds: u64,
    alarms: usize,
    heartbeats: usize,
}

impl AgentSink<'_> {
    fn send(&self, topic: String, msg: Message) -> Result<()> {
        self.outbox.send((topic, msg.encode())).map_err(|_| Error::Disconnected)
    }
}

impl VerdictSink for AgentSink<'_> {
    fn on_verdict(&mut self, verdict: BatchVerdict) -> Result<()> {
        let msg = Message::Alarm(AlarmMessage::from_verdict(&self.node_id, &verdict));
        self.send(alarm_topic(&self.node_id), msg)?;
        self.alarms += 1;
        Ok(())
    }

    fn on_psd(&mut self, psd: &PsdFeature, _error: f64, model_id: &str) {
        self.psds += 1;
        let now = psd.window_start_ns;
        self.slot.now_ns.store(now, Ordering::Relaxed);
        if self.next_heartbeat_ns.is_some_and(|t| now < t) {
            return;
        }
        let hb = Message::Heartbeat(Heartbeat {
            node_id: self.node_id.clone(),
            ts_ns: now,
            model_id: model_id.to_string(),
            psds: self.psds,
        });
        // A dead publisher surfaces on the next verdict.
        if self.send(heartbeat_topic(&self.node_id), hb).is_ok() {
            self.heartbeats += 1;
        }
        self.next_heartbeat_ns = Some(now.saturating_add(self.every_ns));
    }
}

fn publisher_loop(
    rx: Receiver<Outgoing>,
    transport: Arc<dyn Transport>,
    capacity: usize,
    retry: RetryPolicy,
) -> Result<usize> {
    let mut publisher = BufferedPublisher::new(Arc::clone(&transport), capacity, retry);
    let mut accepted = 0;
    loop {
        let next = if publisher.pending() > 0 {
            match rx.recv_timeout(retry.backoff) {
                Ok(m) => m,
                Err(RecvTimeoutError::Timeout) => {
                    let _ = publisher.try_drain();
                    continue;
                }
                Err(RecvTimeoutError::Disconnected) => break,
            }
        } else {
            match rx.recv() {
                Ok(m) => m,
                Err(_) => break,
            }
        };
        publisher.publish(&next.0, &next.1)?;
        accepted += 1;
    }
    publisher.flush()?;
    transport.flush()?;
    Ok(accepted)
}

/// Runs the detector over `source` and publishes every verdict as an alarm
/// on `paella/<node>/alarm`, a heartbeat every `heartbeat_every_ns` of
/// stream time, and a nack for each model command naming an unknown model.
/// Model commands take effect at the next batch boundary.
pub fn agent_run(
    source: StreamSource,
    store: &dyn ModelStore,
    cfg: &AgentConfig,
    transport: Arc<dyn Transport>,
) -> Result<AgentStats> {
    validate_id("node id", &cfg.node_id)?;
    if cfg.heartbeat_every_ns <= 0 || cfg.buffer_capacity == 0 {
        return Err(Error::InvalidConfig(
            "heartbeat period and buffer capacity must be positive".into(),
        ));
    }
    let initial = store.load(&cfg.initial_model)?;
    let commands = transport.subscribe(&command_topic(&cfg.node_id))?;
    let (out_tx, out_rx) = sync_channel::<Outgoing>(OUTBOX_DEPTH);

    thread::scope(|scope| {
        let publisher = {
            let transport = Arc::clone(&transport);
            let (capacity, retry) = (cfg.buffer_capacity, cfg.retry);
            scope.spawn(move || publisher_loop(out_rx, transport, capacity, retry))
        };

        let run = {
            let slot = ModelSlot {
                node_id: cfg.node_id.clone(),
                active: Mutex::new(initial),
                commands: Mutex::new(commands),
                store,
                outbox: Mutex::new(out_tx.clone()),
                now_ns: AtomicI64::new(source.t0_ns),
                swaps: AtomicUsize::new(0),
                nacks: AtomicUsize::new(0),
            };
            let mut sink = AgentSink {
                node_id: cfg.node_id.clone(),
                outbox: out_tx,
                slot: &slot,
                every_ns: cfg.heartbeat_every_ns,
                next_heartbeat_ns: None,
                psds: 0,
                alarms: 0,
                heartbeats: 0,
            };
            let stream = run_stream_with(source, &slot, &cfg.welch, &cfg.detector, &mut sink);
            stream.map(|stream| AgentStats {
                stream,
                alarms: sink.alarms,
                heartbeats: sink.heartbeats,
                swaps: slot.swaps.load(Ordering::Relaxed),
                nacks: slot.nacks.load(Ordering::Relaxed),
                published: 0,
            })
            // Slot and sink drop here, closing the outbox.
        };

        let published = publisher.join().expect("publisher thread panicked")?;
        let mut stats = run?;
        stats.published = published;
        Ok(stats)
    })
}
