use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use log::warn;

use super::tcp::TcpTransport;
use crate::error::{Error, Result};

/// Messages delivered to one subscription, as `(topic, payload)`.
pub type Subscription = Receiver<(String, Vec<u8>)>;

/// Topic-based publish/subscribe. Messages from one publisher reach each
/// subscriber in publish order.
pub trait Transport: Send + Sync {
    fn publish(&self, topic: &str, payload: &[u8]) -> Result<()>;
    fn subscribe(&self, filter: &str) -> Result<Subscription>;

    /// Returns once everything published so far has reached the broker.
    fn flush(&self) -> Result<()> {
        Ok(())
    }
}

/// MQTT-style filter matching: `+` matches one level, a trailing `#` matches
/// any number of remaining levels (including none).
pub fn topic_matches(filter: &str, topic: &str) -> bool {
    let mut f = filter.split('/');
    let mut t = topic.split('/');
    loop {
        match (f.next(), t.next()) {
            (Some("#"), _) => return true,
            (Some("+"), Some(_)) => {}
            (Some(a), Some(b)) if a == b => {}
            (None, None) => return true,
            _ => return false,
        }
    }
}

type Subscriber = (String, Sender<(String, Vec<u8>)>);

struct LoopbackInner {
    subs: Mutex<Vec<Subscriber>>,
    connected: AtomicBool,
}

/// In-process broker. Cloning shares the same broker. Delivery happens
/// synchronously inside `publish`, under one lock, so per-publisher order
/// is preserved. `set_connected(false)` simulates a network outage.
#[derive(Clone)]
pub struct LoopbackBroker {
    inner: Arc<LoopbackInner>,
}

impl Default for LoopbackBroker {
    fn default() -> Self {
        Self::new()
    }
}

impl LoopbackBroker {
    pub fn new() -> Self {
        Self {
            inner: Arc::new(LoopbackInner {
                subs: Mutex::new(Vec::new()),
                connected: AtomicBool::new(true),
            }),
        }
    }

    pub fn set_connected(&self, up: bool) {
        self.inner.connected.store(up, Ordering::SeqCst);
    }

    pub fn is_connected(&self) -> bool {
        self.inner.connected.load(Ordering::SeqCst)
    }
}

impl Transport for LoopbackBroker {
    fn publish(&self, topic: &str, payload: &[u8]) -> Result<()> {
        if !self.is_connected() {
            return Err(Error::Disconnected);
        }
        let mut subs = self.inner.subs.lock().expect("broker lock poisoned");
        subs.retain(|(filter, tx)| {
            !topic_matches(filter, topic) || tx.send((topic.to_string(), payload.to_vec())).is_ok()
        });
        Ok(())
    }

    fn subscribe(&self, filter: &str) -> Result<Subscription> {
        if !self.is_connected() {
            return Err(Error::Disconnected);
        }
        let (tx, rx) = channel();
        self.inner
            .subs
            .lock()
            .expect("broker lock poisoned")
            .push((filter.to_string(), tx));
        Ok(rx)
    }
}

/// Opens a transport from a broker URL. Only `tcp://host:port` is
/// supported; in-process brokers are constructed directly.
pub fn connect(url: &str) -> Result<Arc<dyn Transport>> {
    match url.strip_prefix("tcp://") {
        Some(addr) => Ok(Arc::new(TcpTransport::connect(addr)?)),
        None => Err(Error::InvalidConfig(format!(
            "unsupported broker url `{url}` (expected tcp://host:port)"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 20,
            backoff: Duration::from_millis(50),
        }
    }
}

/// Publisher that keeps up to `capacity` undelivered messages while the
/// transport is down and replays them in order once it is back.
pub struct BufferedPublisher {
    transport: Arc<dyn Transport>,
    pending: VecDeque<(String, Vec<u8>)>,
    capacity: usize,
    retry: RetryPolicy,
}

impl BufferedPublisher {
    pub fn new(transport: Arc<dyn Transport>, capacity: usize, retry: RetryPolicy) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            transport,
            pending: VecDeque::with_capacity(capacity),
            capacity,
            retry,
        }
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Queues the message and tries to drain the queue once. A down
    /// transport is not an error until the buffer overflows.
    pub fn publish(&mut self, topic: &str, payload: &[u8]) -> Result<()> {
        if self.pending.len() == self.capacity {
            let _ = self.try_drain();
            if self.pending.len() == self.capacity {
                return Err(Error::BufferFull(self.capacity));
            }
        }
        self.pending.push_back((topic.to_string(), payload.to_vec()));
        match self.try_drain() {
            Ok(()) | Err(Error::Disconnected) => Ok(()),
            Err(e) => Err(e),
        }
    }

    /// Publishes queued messages in order until one fails.
    pub fn try_drain(&mut self) -> Result<()> {
        while let Some((topic, payload)) = self.pending.front() {
            self.transport.publish(topic, payload)?;
            self.pending.pop_front();
        }
        Ok(())
    }

    /// Drains the queue, retrying per the policy; fails with
    /// `Disconnected` if messages are still queued afterwards.
    pub fn flush(&mut self) -> Result<()> {
        for attempt in 0..=self.retry.attempts {
            match self.try_drain() {
                Ok(()) => return Ok(()),
                Err(Error::Disconnected) if attempt < self.retry.attempts => {
                    warn!("transport down, {} message(s) queued; retrying", self.pending.len());
                    thread::sleep(self.retry.backoff);
                }
                Err(e) => return Err(e),
            }
        }
        Err(Error::Disconnected)
    }
}
