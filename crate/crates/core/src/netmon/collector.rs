use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::RecvTimeoutError;
use std::time::{Duration, Instant};

use log::{debug, warn};

use super::transport::Subscription;
use super::{AlarmMessage, Message};
use crate::detector::Decision;
use crate::error::Result;

/// Everything a collector listens to; model commands seen on it are ignored.
pub const COLLECTOR_FILTER: &str = "paella/#";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeStatus {
    /// Stream timestamp of the latest message from the node.
    pub last_seen_ns: i64,
    pub last_decision: Option<Decision>,
    pub model_id: String,
    pub alarms: u64,
    pub malware_alarms: u64,
    pub heartbeats: u64,
    pub nacks: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CollectorStats {
    pub received: usize,
    pub logged: usize,
    /// Alarms whose (node_id, ts_ns) key was already logged.
    pub duplicates: usize,
    pub dead_letters: usize,
}

/// Appends alarms to a line-per-message log, tracks per-node state and
/// diverts anything it cannot parse to a dead-letter sink.
pub struct Collector<W: Write, D: Write> {
    log: W,
    dead: D,
    seen: HashSet<(String, i64)>,
    nodes: BTreeMap<String, NodeStatus>,
    stats: CollectorStats,
}

impl Collector<BufWriter<File>, BufWriter<File>> {
    /// Opens both files for appending. Alarms already in the log are
    /// replayed so duplicates across restarts are still recognized.
    pub fn open(log_path: &Path, dead_letter_path: &Path) -> Result<Self> {
        let mut c = Collector::new(
            BufWriter::new(append(log_path)?),
            BufWriter::new(append(dead_letter_path)?),
        );
        for alarm in read_log(log_path)? {
            c.seen.insert((alarm.node_id.clone(), alarm.ts_ns));
            c.record_alarm(&alarm);
        }
        Ok(c)
    }
}

fn append(path: &Path) -> std::io::Result<File> {
    OpenOptions::new().create(true).append(true).open(path)
}

/// Parses every line of a collector log.
pub fn read_log(path: &Path) -> Result<Vec<AlarmMessage>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        match Message::decode_line(&line)? {
            Message::Alarm(a) => out.push(a),
            other => warn!("skipping {} entry in alarm log", other.kind()),
        }
    }
    Ok(out)
}

/// Per-node state derived from a collector log alone.
pub fn status_from_log(path: &Path) -> Result<BTreeMap<String, NodeStatus>> {
    let mut c = Collector::new(std::io::sink(), std::io::sink());
    for alarm in read_log(path)? {
        c.record_alarm(&alarm);
    }
    Ok(c.nodes)
}

impl<W: Write, D: Write> Collector<W, D> {
    pub fn new(log: W, dead: D) -> Self {
        Self {
            log,
            dead,
            seen: HashSet::new(),
            nodes: BTreeMap::new(),
            stats: CollectorStats::default(),
        }
    }

    pub fn stats(&self) -> CollectorStats {
        self.stats
    }

    pub fn nodes(&self) -> &BTreeMap<String, NodeStatus> {
        &self.nodes
    }

    pub fn into_parts(self) -> (W, D) {
        (self.log, self.dead)
    }

    fn record_alarm(&mut self, a: &AlarmMessage) {
        let n = self.nodes.entry(a.node_id.clone()).or_default();
        n.last_seen_ns = n.last_seen_ns.max(a.ts_ns);
        n.last_decision = Some(a.decision);
        n.model_id = a.model_id.clone();
        n.alarms += 1;
        if a.decision == Decision::Malware {
            n.malware_alarms += 1;
        }
    }

    fn dead_letter(&mut self, topic: &str, reason: &str, payload: &[u8]) -> Result<()> {
        warn!("dead letter on {topic}: {reason}");
        writeln!(
            self.dead,
            "{topic}\t{}\t{}",
            reason.replace(['\t', '\n'], " "),
            String::from_utf8_lossy(payload).escape_debug()
        )?;
        self.dead.flush()?;
        self.stats.dead_letters += 1;
        Ok(())
    }

    /// Processes one delivery. Only I/O failures on the log or dead-letter
    /// sink are errors; bad payloads are dead-lettered.
    pub fn handle(&mut self, topic: &str, payload: &[u8]) -> Result<()> {
        self.stats.received += 1;
        let msg = match Message::decode(payload) {
            Ok(m) => m,
            Err(e) => return self.dead_letter(topic, &e.to_string(), payload),
        };
        let expected = match &msg {
            Message::Alarm(_) => super::alarm_topic(msg.node_id()),
            Message::Heartbeat(_) => super::heartbeat_topic(msg.node_id()),
            Message::Nack(_) => super::nack_topic(msg.node_id()),
            Message::ModelCommand(_) => return Ok(()),
        };
        if topic != expected {
            return self.dead_letter(topic, &format!("{} message on wrong topic", msg.kind()), payload);
        }
        match msg {
            Message::Alarm(a) => {
                if !self.seen.insert((a.node_id.clone(), a.ts_ns)) {
                    debug!("duplicate alarm {} @ {}", a.node_id, a.ts_ns);
                    self.stats.duplicates += 1;
                    return Ok(());
                }
                let line = Message::Alarm(a.clone()).encode_line();
                writeln!(self.log, "{line}")?;
                self.log.flush()?;
                self.stats.logged += 1;
                self.record_alarm(&a);
            }
            Message::Heartbeat(h) => {
                let n = self.nodes.entry(h.node_id).or_default();
                n.last_seen_ns = n.last_seen_ns.max(h.ts_ns);
                n.model_id = h.model_id;
                n.heartbeats += 1;
            }
            Message::Nack(k) => {
                warn!("node {} rejected model {}: {}", k.node_id, k.model_id, k.reason);
                let n = self.nodes.entry(k.node_id).or_default();
                n.last_seen_ns = n.last_seen_ns.max(k.ts_ns);
                n.nacks += 1;
            }
            Message::ModelCommand(_) => unreachable!("returned above"),
        }
        Ok(())
    }

    /// Tab-separated per-node table.
    pub fn status_text(&self) -> String {
        render_status(&self.nodes)
    }
}

pub fn render_status(nodes: &BTreeMap<String, NodeStatus>) -> String {
    let mut out = String::from("node\tlast_seen_ns\tlast_decision\tmodel_id\talarms\tmalware\theartbeats\tnacks\n");
    for (id, n) in nodes {
        let _ = writeln!(
            out,
            "{id}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            n.last_seen_ns,
            n.last_decision.map_or("-", Decision::as_str),
            if n.model_id.is_empty() { "-" } else { &n.model_id },
            n.alarms,
            n.malware_alarms,
            n.heartbeats,
            n.nacks
        );
    }
    out
}

/// When [`collect`] should return. With everything unset it runs until
/// the subscription closes.
#[derive(Debug, Default)]
pub struct CollectLimits<'a> {
    pub max_messages: Option<usize>,
    pub idle_timeout: Option<Duration>,
    pub stop: Option<&'a AtomicBool>,
}

const POLL: Duration = Duration::from_millis(100);

/// Feeds deliveries from `sub` into `collector` until a limit is hit or the
/// subscription closes.
pub fn collect<W: Write, D: Write>(
    sub: &Subscription,
    collector: &mut Collector<W, D>,
    limits: &CollectLimits<'_>,
) -> Result<CollectorStats> {
    let mut last = Instant::now();
    let mut handled = 0;
    loop {
        if limits.max_messages.is_some_and(|m| handled >= m) {
            break;
        }
        if limits.stop.is_some_and(|s| s.load(Ordering::SeqCst)) {
            break;
        }
        match sub.recv_timeout(POLL) {
            Ok((topic, payload)) => {
                collector.handle(&topic, &payload)?;
                handled += 1;
                last = Instant::now();
            }
            Err(RecvTimeoutError::Timeout) => {
                if limits.idle_timeout.is_some_and(|t| last.elapsed() >= t) {
                    break;
                }
            }
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }
    Ok(collector.stats())
}
