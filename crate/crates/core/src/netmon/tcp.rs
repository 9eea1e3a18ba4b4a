//! Minimal TCP pub/sub broker and client.
//!
//! Frames are a text header line followed by an optional binary payload:
//!
//! ```text
//! client → broker   SUB <filter>\n
//!                   PUB <topic> <len>\n<len payload bytes>
//!                   PING\n
//! broker → client   MSG <topic> <len>\n<len payload bytes>
//!                   PONG\n
//! ```
//!
//! Each connection is served by one thread in frame order, so messages from
//! one publisher reach every subscriber in publish order. A connection gets
//! a message at most once even when several of its filters match.

use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, warn};

use super::transport::{topic_matches, Subscription, Transport};
use crate::error::{Error, Result};

const MAX_PAYLOAD: usize = 1 << 20;
const PONG_TIMEOUT: Duration = Duration::from_secs(5);

enum Frame {
    Sub(String),
    Pub(String, Vec<u8>),
    Msg(String, Vec<u8>),
    Ping,
    Pong,
}

fn read_frame(r: &mut impl BufRead) -> std::io::Result<Option<Frame>> {
    let mut header = String::new();
    if r.read_line(&mut header)? == 0 {
        return Ok(None);
    }
    let bad = || std::io::Error::new(std::io::ErrorKind::InvalidData, "bad frame header");
    let header = header.strip_suffix('\n').ok_or_else(bad)?;
    let mut parts = header.split(' ');
    let verb = parts.next().ok_or_else(bad)?;
    let frame = match verb {
        "SUB" => Frame::Sub(parts.next().ok_or_else(bad)?.to_string()),
        "PING" => Frame::Ping,
        "PONG" => Frame::Pong,
        "PUB" | "MSG" => {
            let topic = parts.next().ok_or_else(bad)?.to_string();
            let len: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if len > MAX_PAYLOAD {
                return Err(bad());
            }
            let mut payload = vec![0; len];
            r.read_exact(&mut payload)?;
            if verb == "PUB" {
                Frame::Pub(topic, payload)
            } else {
                Frame::Msg(topic, payload)
            }
        }
        _ => return Err(bad()),
    };
    Ok(Some(frame))
}

fn write_payload_frame(w: &mut impl Write, verb: &str, topic: &str, payload: &[u8]) -> std::io::Result<()> {
    let mut buf = format!("{verb} {topic} {}\n", payload.len()).into_bytes();
    buf.extend_from_slice(payload);
    w.write_all(&buf)
}

fn check_topic(topic: &str) -> Result<()> {
    if topic.is_empty() || topic.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return Err(Error::InvalidConfig(format!("invalid topic `{topic}`")));
    }
    Ok(())
}

struct Conn {
    id: u64,
    stream: Mutex<TcpStream>,
    filters: Mutex<Vec<String>>,
}

type Conns = Arc<Mutex<Vec<Arc<Conn>>>>;

/// Broker listening on a TCP socket; stops when dropped.
pub struct TcpBroker {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    conns: Conns,
    accept: Option<JoinHandle<()>>,
}

impl TcpBroker {
    /// Binds `addr` (use port 0 for an ephemeral port) and starts serving.
    pub fn bind(addr: &str) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let conns: Conns = Arc::default();
        let accept = {
            let stop = Arc::clone(&stop);
            let conns = Arc::clone(&conns);
            thread::spawn(move || accept_loop(listener, stop, conns))
        };
        debug!("broker listening on {addr}");
        Ok(Self {
            addr,
            stop,
            conns,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("tcp://{}", self.addr)
    }
}

impl Drop for TcpBroker {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for c in self.conns.lock().expect("broker lock poisoned").drain(..) {
            let _ = c.stream.lock().expect("conn lock poisoned").shutdown(Shutdown::Both);
        }
    }
}

fn accept_loop(listener: TcpListener, stop: Arc<AtomicBool>, conns: Conns) {
    let next_id = AtomicU64::new(0);
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let _ = stream.set_nodelay(true);
        let reader = match stream.try_clone() {
            Ok(r) => r,
            Err(e) => {
                warn!("cannot clone connection: {e}");
                continue;
            }
        };
        let conn = Arc::new(Conn {
            id: next_id.fetch_add(1, Ordering::Relaxed),
            stream: Mutex::new(stream),
            filters: Mutex::default(),
        });
        conns.lock().expect("broker lock poisoned").push(Arc::clone(&conn));
        let conns = Arc::clone(&conns);
        thread::spawn(move || serve_conn(conn, reader, conns));
    }
}

fn serve_conn(conn: Arc<Conn>, reader: TcpStream, conns: Conns) {
    let mut reader = BufReader::new(reader);
    loop {
        match read_frame(&mut reader) {
            Ok(Some(Frame::Sub(filter))) => conn.filters.lock().expect("conn lock poisoned").push(filter),
            Ok(Some(Frame::Ping)) => {
                let _ = conn.stream.lock().expect("conn lock poisoned").write_all(b"PONG\n");
            }
            Ok(Some(Frame::Pub(topic, payload))) => {
                let all = conns.lock().expect("broker lock poisoned");
                for c in all.iter() {
                    let wants = c
                        .filters
                        .lock()
                        .expect("conn lock poisoned")
                        .iter()
                        .any(|f| topic_matches(f, &topic));
                    if wants {
                        let mut s = c.stream.lock().expect("conn lock poisoned");
                        if let Err(e) = write_payload_frame(&mut *s, "MSG", &topic, &payload) {
                            debug!("dropping delivery to connection {}: {e}", c.id);
                        }
                    }
                }
            }
            Ok(Some(_)) => {
                warn!("connection {} sent a broker-only frame; closing", conn.id);
                break;
            }
            Ok(None) => break,
            Err(e) => {
                warn!("connection {}: {e}", conn.id);
                break;
            }
        }
    }
    conns.lock().expect("broker lock poisoned").retain(|c| c.id != conn.id);
}

type LocalSubs = Arc<Mutex<Vec<(String, Sender<(String, Vec<u8>)>)>>>;

/// Client connection to a [`TcpBroker`].
pub struct TcpTransport {
    writer: Mutex<TcpStream>,
    subs: LocalSubs,
    pongs: Mutex<Receiver<()>>,
    alive: Arc<AtomicBool>,
}

impl TcpTransport {
    pub fn connect(addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        let subs: LocalSubs = Arc::default();
        let alive = Arc::new(AtomicBool::new(true));
        let (pong_tx, pong_rx) = channel();
        {
            let subs = Arc::clone(&subs);
            let alive = Arc::clone(&alive);
            thread::spawn(move || client_reader(reader, subs, pong_tx, alive));
        }
        Ok(Self {
            writer: Mutex::new(stream),
            subs,
            pongs: Mutex::new(pong_rx),
            alive,
        })
    }

    fn write(&self, bytes: &[u8]) -> Result<()> {
        if !self.alive.load(Ordering::SeqCst) {
            return Err(Error::Disconnected);
        }
        self.writer
            .lock()
            .expect("writer lock poisoned")
            .write_all(bytes)
            .map_err(|_| Error::Disconnected)
    }

    /// Round trip through the broker; everything sent before has been
    /// processed once this returns.
    pub fn sync(&self) -> Result<()> {
        let pongs = self.pongs.lock().expect("pong lock poisoned");
        self.write(b"PING\n")?;
        pongs.recv_timeout(PONG_TIMEOUT).map_err(|_| Error::Disconnected)
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        let _ = self.writer.lock().map(|s| s.shutdown(Shutdown::Both));
    }
}

fn client_reader(stream: TcpStream, subs: LocalSubs, pongs: Sender<()>, alive: Arc<AtomicBool>) {
    let mut reader = BufReader::new(stream);
    loop {
        match read_frame(&mut reader) {
            Ok(Some(Frame::Msg(topic, payload))) => {
                subs.lock().expect("subs lock poisoned").retain(|(filter, tx)| {
                    !topic_matches(filter, &topic) || tx.send((topic.clone(), payload.clone())).is_ok()
                });
            }
            Ok(Some(Frame::Pong)) => {
                let _ = pongs.send(());
            }
            Ok(Some(_)) => warn!("broker sent an unexpected frame"),
            Ok(None) | Err(_) => break,
        }
    }
    alive.store(false, Ordering::SeqCst);
    // Dropping the senders ends every subscription.
    subs.lock().expect("subs lock poisoned").clear();
}

impl Transport for TcpTransport {
    fn publish(&self, topic: &str, payload: &[u8]) -> Result<()> {
        check_topic(topic)?;
        let mut buf = Vec::with_capacity(payload.len() + topic.len() + 16);
        write_payload_frame(&mut buf, "PUB", topic, payload)?;
        self.write(&buf)
    }

    fn subscribe(&self, filter: &str) -> Result<Subscription> {
        check_topic(filter)?;
        let (tx, rx) = channel();
        self.subs
            .lock()
            .expect("subs lock poisoned")
            .push((filter.to_string(), tx));
        self.write(format!("SUB {filter}\n").as_bytes())?;
        self.sync()?;
        Ok(rx)
    }

    fn flush(&self) -> Result<()> {
        self.sync()
    }
}
