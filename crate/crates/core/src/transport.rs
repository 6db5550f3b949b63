//! Frame transports for sync sessions.
//!
//! A [`Transport`] is the client's view of a connection, including its
//! notion of time, so the same session code runs against a real socket
//! (wall clock) or an in-memory link (virtual clock, no sleeping).

use std::collections::{BTreeMap, HashSet};
use std::io::{self, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use crate::records::now_ms;
use crate::rng::SplitMix64;
use crate::wire::{Frame, FrameHandler, ProtocolError};

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("connection closed")]
    Closed,
    #[error("transport I/O: {0}")]
    Io(#[from] io::Error),
    #[error("protocol: {0}")]
    Protocol(#[from] ProtocolError),
}

pub trait Transport {
    fn send(&mut self, frame: &Frame) -> Result<(), TransportError>;
    /// Next inbound frame, or `Ok(None)` once `timeout_ms` elapses.
    fn recv(&mut self, timeout_ms: u64) -> Result<Option<Frame>, TransportError>;
    fn now_ms(&self) -> u64;
    fn sleep_ms(&mut self, ms: u64);
}

/// Client side of a TCP connection to the middleware.
pub struct TcpTransport {
    stream: TcpStream,
    buf: Vec<u8>,
}

impl TcpTransport {
    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self, TransportError> {
        let mut last = io::Error::new(io::ErrorKind::NotFound, "no address");
        for a in addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(stream) => {
                    stream.set_nodelay(true)?;
                    return Ok(Self {
                        stream,
                        buf: Vec::new(),
                    });
                }
                Err(e) => last = e,
            }
        }
        Err(last.into())
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, frame: &Frame) -> Result<(), TransportError> {
        self.stream.write_all(&frame.encode())?;
        Ok(())
    }

    fn recv(&mut self, timeout_ms: u64) -> Result<Option<Frame>, TransportError> {
        let deadline = Instant::now() + Duration::from_millis(timeout_ms);
        let mut tmp = [0u8; 16 * 1024];
        loop {
            if let Some((frame, used)) = Frame::try_decode(&self.buf)? {
                self.buf.drain(..used);
                return Ok(Some(frame));
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            self.stream.set_read_timeout(Some(left))?;
            match self.stream.read(&mut tmp) {
                Ok(0) => return Err(TransportError::Closed),
                Ok(n) => self.buf.extend_from_slice(&tmp[..n]),
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => return Ok(None),
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn now_ms(&self) -> u64 {
        now_ms()
    }

    fn sleep_ms(&mut self, ms: u64) {
        std::thread::sleep(Duration::from_millis(ms));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Client to server.
    Up,
    /// Server to client.
    Down,
}

/// Outcome of pushing one encoded frame onto a simulated link.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transmission {
    /// When the sender has finished putting the frame on the link.
    pub sent_ns: u64,
    /// When the receiver has it, or `None` if it was lost.
    pub arrival_ns: Option<u64>,
}

/// Timing and loss behaviour of an in-memory link.
pub trait LinkModel {
    /// `ready_ns` is the earliest time the sender can start transmitting.
    fn transmit(&mut self, dir: Direction, ready_ns: u64, frame: &[u8]) -> Transmission;
}

/// Instant, lossless delivery.
#[derive(Clone, Copy, Debug, Default)]
pub struct PerfectLink;

impl LinkModel for PerfectLink {
    fn transmit(&mut self, _dir: Direction, ready_ns: u64, _frame: &[u8]) -> Transmission {
        Transmission {
            sent_ns: ready_ns,
            arrival_ns: Some(ready_ns),
        }
    }
}

/// Drops the first copy of every distinct frame, in either direction.
#[derive(Debug, Default)]
pub struct DropOnceLink {
    seen: HashSet<(bool, Vec<u8>)>,
}

impl LinkModel for DropOnceLink {
    fn transmit(&mut self, dir: Direction, ready_ns: u64, frame: &[u8]) -> Transmission {
        let first = self.seen.insert((dir == Direction::Up, frame.to_vec()));
        Transmission {
            sent_ns: ready_ns,
            arrival_ns: (!first).then_some(ready_ns),
        }
    }
}

/// Independent per-frame loss with probability `loss` in both directions.
#[derive(Debug)]
pub struct LossyLink {
    loss: f64,
    rng: SplitMix64,
}

impl LossyLink {
    pub fn new(loss: f64, seed: u64) -> Self {
        Self {
            loss,
            rng: SplitMix64::new(seed),
        }
    }
}

impl LinkModel for LossyLink {
    fn transmit(&mut self, _dir: Direction, ready_ns: u64, _frame: &[u8]) -> Transmission {
        let lost = self.rng.next_f64() < self.loss;
        Transmission {
            sent_ns: ready_ns,
            arrival_ns: (!lost).then_some(ready_ns),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub up_frames: u64,
    pub up_lost: u64,
    pub up_bytes: u64,
    pub down_frames: u64,
    pub down_lost: u64,
}

impl LinkStats {
    pub fn frames_sent(&self) -> u64 {
        self.up_frames + self.down_frames
    }

    pub fn frames_lost(&self) -> u64 {
        self.up_lost + self.down_lost
    }
}

/// A client connection whose server end is an in-process [`FrameHandler`]
/// and whose wire is a [`LinkModel`]. Time is virtual: `send` advances the
/// clock by the frame's transmission time, `recv` jumps to the next arrival
/// (or to the timeout) and `sleep_ms` just moves the clock.
pub struct MemTransport<H, L> {
    handler: H,
    link: L,
    now_ns: u64,
    up_free_ns: u64,
    down_free_ns: u64,
    inbox: BTreeMap<(u64, u64), Frame>,
    seq: u64,
    closed: bool,
    /// Server handles each inbound frame this many times.
    replay: u32,
    stats: LinkStats,
}

impl<H: FrameHandler, L: LinkModel> MemTransport<H, L> {
    pub fn new(handler: H, link: L) -> Self {
        Self {
            handler,
            link,
            now_ns: 0,
            up_free_ns: 0,
            down_free_ns: 0,
            inbox: BTreeMap::new(),
            seq: 0,
            closed: false,
            replay: 1,
            stats: LinkStats::default(),
        }
    }

    /// Start the virtual clock at `ms`.
    pub fn starting_at(mut self, ms: u64) -> Self {
        self.now_ns = ms * 1_000_000;
        self
    }

    /// Make the server see every delivered client frame `times` times.
    pub fn replaying(mut self, times: u32) -> Self {
        self.replay = times.max(1);
        self
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    pub fn handler(&self) -> &H {
        &self.handler
    }

    pub fn handler_mut(&mut self) -> &mut H {
        &mut self.handler
    }

    pub fn now_ns(&self) -> u64 {
        self.now_ns
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Drop the connection and start a fresh one on the same link and clock.
    pub fn reconnect(&mut self, handler: H) {
        self.handler = handler;
        self.inbox.clear();
        self.closed = false;
    }
}

impl<H: FrameHandler, L: LinkModel> Transport for MemTransport<H, L> {
    fn send(&mut self, frame: &Frame) -> Result<(), TransportError> {
        if self.closed {
            return Err(TransportError::Closed);
        }
        let bytes = frame.encode();
        let ready = self.now_ns.max(self.up_free_ns);
        let tx = self.link.transmit(Direction::Up, ready, &bytes);
        self.up_free_ns = tx.sent_ns;
        self.now_ns = tx.sent_ns;
        self.stats.up_frames += 1;
        self.stats.up_bytes += bytes.len() as u64;
        let Some(arrival) = tx.arrival_ns else {
            self.stats.up_lost += 1;
            return Ok(());
        };
        for _ in 0..self.replay {
            let reply = self.handler.handle(frame.clone(), arrival / 1_000_000);
            for out in reply.frames {
                let bytes = out.encode();
                let ready = arrival.max(self.down_free_ns);
                let tx = self.link.transmit(Direction::Down, ready, &bytes);
                self.down_free_ns = tx.sent_ns;
                self.stats.down_frames += 1;
                match tx.arrival_ns {
                    Some(at) => {
                        self.seq += 1;
                        self.inbox.insert((at, self.seq), out);
                    }
                    None => self.stats.down_lost += 1,
                }
            }
            if reply.close {
                self.closed = true;
                break;
            }
        }
        Ok(())
    }

    fn recv(&mut self, timeout_ms: u64) -> Result<Option<Frame>, TransportError> {
        let deadline = self.now_ns.saturating_add(timeout_ms.saturating_mul(1_000_000));
        match self.inbox.first_key_value() {
            Some((&(at, seq), _)) if at <= deadline => {
                self.now_ns = self.now_ns.max(at);
                Ok(self.inbox.remove(&(at, seq)))
            }
            _ if self.closed && self.inbox.is_empty() => Err(TransportError::Closed),
            _ => {
                self.now_ns = deadline;
                Ok(None)
            }
        }
    }

    fn now_ms(&self) -> u64 {
        self.now_ns / 1_000_000
    }

    fn sleep_ms(&mut self, ms: u64) {
        self.now_ns = self.now_ns.saturating_add(ms.saturating_mul(1_000_000));
    }
}
