//! Edge-to-collector messaging: wire messages, topic layout, transports, the
//! per-node agent and the central collector.
//!
//! # Wire encoding
//!
//! A message is UTF-8 text, one `key:value` field per LF-terminated line, in
//! the fixed order below, followed by one empty line. Integers are decimal,
//! reals use the shortest decimal that parses back to the same `f64`, and
//! booleans are `true` / `false`.
//!
//! ```text
//! kind:alarm           kind:heartbeat       kind:model_cmd       kind:nack
//! schema_version:1     schema_version:1     schema_version:1     schema_version:1
//! node_id:<id>         node_id:<id>         node_id:<id>         node_id:<id>
//! ts_ns:<i64>          ts_ns:<i64>          ts_ns:<i64>          ts_ns:<i64>
//! model_id:<id>        model_id:<id>        model_id:<id>        model_id:<id>
//! outlier_fraction:<r> psds:<u64>                                reason:<text>
//! decision:<healthy|malware>
//! batch_span_ns:<i64>,<i64>
//! partial:<bool>
//! ```
//!
//! Ids are non-empty and limited to `[A-Za-z0-9._-]` so they are safe inside
//! topics. In the collector log each message takes one line, with its fields
//! joined by a tab instead of LF.

mod agent;
mod collector;
mod tcp;
mod transport;

pub use agent::{agent_run, AgentConfig, AgentStats, DirModelStore, MemoryModelStore, ModelStore, HEARTBEAT_EVERY_NS};
pub use collector::{
    collect, read_log, render_status, status_from_log, CollectLimits, Collector, CollectorStats, NodeStatus,
    COLLECTOR_FILTER,
};
pub use tcp::{TcpBroker, TcpTransport};
pub use transport::{connect, topic_matches, BufferedPublisher, LoopbackBroker, RetryPolicy, Subscription, Transport};

use std::fmt::Write as _;

use crate::detector::{BatchVerdict, Decision};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub fn alarm_topic(node_id: &str) -> String {
    format!("paella/{node_id}/alarm")
}

pub fn heartbeat_topic(node_id: &str) -> String {
    format!("paella/{node_id}/heartbeat")
}

pub fn command_topic(node_id: &str) -> String {
    format!("paella/{node_id}/cmd/model")
}

pub fn nack_topic(node_id: &str) -> String {
    format!("paella/{node_id}/cmd/nack")
}

/// Checks that `id` is non-empty and uses only `[A-Za-z0-9._-]`.
pub fn validate_id(what: &str, id: &str) -> Result<()> {
    if id.is_empty()
        || !id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
    {
        return Err(Error::InvalidConfig(format!(
            "{what} `{id}` must be non-empty and use only [A-Za-z0-9._-]"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlarmMessage {
    pub node_id: String,
    /// End of the batch span; together with `node_id` the idempotency key.
    pub ts_ns: i64,
    pub model_id: String,
    pub outlier_fraction: f64,
    pub decision: Decision,
    pub batch_span_ns: (i64, i64),
    pub partial: bool,
    pub schema_version: u32,
}

impl AlarmMessage {
    pub fn from_verdict(node_id: &str, v: &BatchVerdict) -> Self {
        Self {
            node_id: node_id.to_string(),
            ts_ns: v.window_span_ns.1,
            model_id: v.model_id.clone(),
            outlier_fraction: v.outlier_fraction,
            decision: v.decision,
            batch_span_ns: v.window_span_ns,
            partial: v.partial,
            schema_version: SCHEMA_VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelCommand {
    pub node_id: String,
    pub model_id: String,
    pub ts_ns: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Heartbeat {
    pub node_id: String,
    pub ts_ns: i64,
    pub model_id: String,
    /// PSDs scored so far.
    pub psds: u64,
}

/// Negative acknowledgment of a [`ModelCommand`]; the named model was not
/// loaded and the previous one stays active.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Nack {
    pub node_id: String,
    pub ts_ns: i64,
    pub model_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Alarm(AlarmMessage),
    Heartbeat(Heartbeat),
    ModelCommand(ModelCommand),
    Nack(Nack),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Alarm(_) => "alarm",
            Message::Heartbeat(_) => "heartbeat",
            Message::ModelCommand(_) => "model_cmd",
            Message::Nack(_) => "nack",
        }
    }

    pub fn node_id(&self) -> &str {
        match self {
            Message::Alarm(m) => &m.node_id,
            Message::Heartbeat(m) => &m.node_id,
            Message::ModelCommand(m) => &m.node_id,
            Message::Nack(m) => &m.node_id,
        }
    }

    pub fn ts_ns(&self) -> i64 {
        match self {
            Message::Alarm(m) => m.ts_ns,
            Message::Heartbeat(m) => m.ts_ns,
            Message::ModelCommand(m) => m.ts_ns,
            Message::Nack(m) => m.ts_ns,
        }
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        let mut f = vec![
            ("kind", self.kind().to_string()),
            ("schema_version", SCHEMA_VERSION.to_string()),
            ("node_id", self.node_id().to_string()),
            ("ts_ns", self.ts_ns().to_string()),
        ];
        match self {
            Message::Alarm(m) => {
                f[1].1 = m.schema_version.to_string();
                f.push(("model_id", m.model_id.clone()));
                f.push(("outlier_fraction", m.outlier_fraction.to_string()));
                f.push(("decision", m.decision.to_string()));
                f.push(("batch_span_ns", format!("{},{}", m.batch_span_ns.0, m.batch_span_ns.1)));
                f.push(("partial", m.partial.to_string()));
            }
            Message::Heartbeat(m) => {
                f.push(("model_id", m.model_id.clone()));
                f.push(("psds", m.psds.to_string()));
            }
            Message::ModelCommand(m) => f.push(("model_id", m.model_id.clone())),
            Message::Nack(m) => {
                f.push(("model_id", m.model_id.clone()));
                f.push(("reason", sanitize(&m.reason)));
            }
        }
        f
    }

    /// Wire form: `key:value` lines terminated by an empty line.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = String::new();
        for (k, v) in self.fields() {
            let _ = writeln!(out, "{k}:{v}");
        }
        out.push('\n');
        out.into_bytes()
    }

    /// Collector log form: the same fields joined by tabs, no newline.
    pub fn encode_line(&self) -> String {
        self.fields()
            .iter()
            .map(|(k, v)| format!("{k}:{v}"))
            .collect::<Vec<_>>()
            .join("\t")
    }

    pub fn decode(payload: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(payload).map_err(|_| malformed("payload is not UTF-8"))?;
        let body = text
            .strip_suffix("\n\n")
            .ok_or_else(|| malformed("payload is not terminated by an empty line"))?;
        Self::decode_fields(body.split('\n'))
    }

    pub fn decode_line(line: &str) -> Result<Self> {
        Self::decode_fields(line.trim_end_matches(['\r', '\n']).split('\t'))
    }

    fn decode_fields<'a>(lines: impl Iterator<Item = &'a str>) -> Result<Self> {
        let mut r = FieldReader {
            lines: lines.peekable(),
        };
        let kind = r.take("kind")?;
        let version: u32 = r.parse("schema_version")?;
        if version != SCHEMA_VERSION {
            return Err(malformed(&format!("unsupported schema_version {version}")));
        }
        let node_id = r.id("node_id")?;
        let ts_ns: i64 = r.parse("ts_ns")?;
        let model_id = r.id("model_id")?;
        let msg = match kind {
            "alarm" => {
                let outlier_fraction: f64 = r.parse("outlier_fraction")?;
                if !(0.0..=1.0).contains(&outlier_fraction) {
                    return Err(malformed("outlier_fraction outside [0, 1]"));
                }
                let decision: Decision = r.parse("decision")?;
                let span = r.take("batch_span_ns")?;
                let (a, b) = span
                    .split_once(',')
                    .ok_or_else(|| malformed("batch_span_ns needs `start,end`"))?;
                let batch_span_ns = (
                    a.parse().map_err(|_| malformed("bad batch span start"))?,
                    b.parse().map_err(|_| malformed("bad batch span end"))?,
                );
                let partial: bool = r.parse("partial")?;
                Message::Alarm(AlarmMessage {
                    node_id,
                    ts_ns,
                    model_id,
                    outlier_fraction,
                    decision,
                    batch_span_ns,
                    partial,
                    schema_version: version,
                })
            }
            "heartbeat" => Message::Heartbeat(Heartbeat {
                node_id,
                ts_ns,
                model_id,
                psds: r.parse("psds")?,
            }),
            "model_cmd" => Message::ModelCommand(ModelCommand {
                node_id,
                model_id,
                ts_ns,
            }),
            "nack" => Message::Nack(Nack {
                node_id,
                ts_ns,
                model_id,
                reason: r.take("reason")?.to_string(),
            }),
            other => return Err(malformed(&format!("unknown kind `{other}`"))),
        };
        if let Some(extra) = r.lines.next() {
            return Err(malformed(&format!("unexpected trailing field `{extra}`")));
        }
        Ok(msg)
    }
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_control() { ' ' } else { c }).collect()
}

fn malformed(msg: &str) -> Error {
    Error::MalformedMessage(msg.to_string())
}

struct FieldReader<'a, I: Iterator<Item = &'a str>> {
    lines: std::iter::Peekable<I>,
}

impl<'a, I: Iterator<Item = &'a str>> FieldReader<'a, I> {
    fn take(&mut self, key: &str) -> Result<&'a str> {
        let line = self
            .lines
            .next()
            .ok_or_else(|| malformed(&format!("missing field `{key}`")))?;
        match line.split_once(':') {
            Some((k, v)) if k == key => Ok(v),
            _ => Err(malformed(&format!("expected field `{key}`, found `{line}`"))),
        }
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.take(key)?;
        v.parse()
            .map_err(|_| malformed(&format!("bad value `{v}` for `{key}`")))
    }

    fn id(&mut self, key: &str) -> Result<String> {
        let v = self.take(key)?;
        validate_id(key, v).map_err(|_| malformed(&format!("bad {key} `{v}`")))?;
        Ok(v.to_string())
    }
}
