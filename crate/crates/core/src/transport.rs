//! Length-prefixed message framing and two carriers: in-process channels and
//! TCP.
//!
//! Frame layout: 4-byte big-endian length of the rest, then a 14-byte header
//! (version `u8`, kind `u8`, worker id `u32` BE, round `u64` BE), then the
//! payload.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 14;
pub const DEFAULT_MAX_PAYLOAD: usize = 256 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Kind {
    Hello = 1,
    Shard = 2,
    InitParams = 3,
    RefreshRequest = 4,
    RefreshReply = 5,
    Done = 6,
    Abort = 7,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::Hello,
        Kind::Shard,
        Kind::InitParams,
        Kind::RefreshRequest,
        Kind::RefreshReply,
        Kind::Done,
        Kind::Abort,
    ];

    fn from_u8(v: u8) -> Option<Kind> {
        Kind::ALL.get((v as usize).wrapping_sub(1)).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub version: u8,
    pub kind: Kind,
    pub worker: u32,
    pub round: u64,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new(kind: Kind, worker: u32, round: u64, payload: Vec<u8>) -> Self {
        Self {
            version: VERSION,
            kind,
            worker,
            round,
            payload,
        }
    }

    /// Bytes this message occupies on the wire.
    pub fn frame_len(&self) -> usize {
        4 + HEADER_LEN + self.payload.len()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("truncated frame: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("unknown message kind {0}")]
    BadKind(u8),
    #[error("payload of {len} bytes exceeds the {max} byte limit")]
    Oversize { len: usize, max: usize },
    #[error("frame declares {declared} bytes but {actual} follow")]
    LengthMismatch { declared: usize, actual: usize },
}

impl FrameError {
    /// Stable numeric code per error kind.
    pub fn code(&self) -> u8 {
        match self {
            FrameError::Truncated { .. } => 1,
            FrameError::BadVersion(_) => 2,
            FrameError::BadKind(_) => 3,
            FrameError::Oversize { .. } => 4,
            FrameError::LengthMismatch { .. } => 5,
        }
    }
}

pub fn encode_frame(msg: &Message, max_payload: usize) -> Result<Vec<u8>, FrameError> {
    if msg.payload.len() > max_payload {
        return Err(FrameError::Oversize {
            len: msg.payload.len(),
            max: max_payload,
        });
    }
    let mut out = Vec::with_capacity(msg.frame_len());
    out.extend(((HEADER_LEN + msg.payload.len()) as u32).to_be_bytes());
    out.push(msg.version);
    out.push(msg.kind as u8);
    out.extend(msg.worker.to_be_bytes());
    out.extend(msg.round.to_be_bytes());
    out.extend_from_slice(&msg.payload);
    Ok(out)
}

/// Checks a frame's declared body length against the payload limit.
fn body_len(prefix: [u8; 4], max_payload: usize) -> Result<usize, FrameError> {
    let len = u32::from_be_bytes(prefix) as usize;
    if len < HEADER_LEN {
        return Err(FrameError::Truncated {
            need: HEADER_LEN,
            have: len,
        });
    }
    if len - HEADER_LEN > max_payload {
        return Err(FrameError::Oversize {
            len: len - HEADER_LEN,
            max: max_payload,
        });
    }
    Ok(len)
}

fn decode_body(body: &[u8]) -> Result<Message, FrameError> {
    let version = body[0];
    if version != VERSION {
        return Err(FrameError::BadVersion(version));
    }
    let kind = Kind::from_u8(body[1]).ok_or(FrameError::BadKind(body[1]))?;
    Ok(Message {
        version,
        kind,
        worker: u32::from_be_bytes(body[2..6].try_into().expect("4 bytes")),
        round: u64::from_be_bytes(body[6..14].try_into().expect("8 bytes")),
        payload: body[HEADER_LEN..].to_vec(),
    })
}

/// Decodes one complete frame, length prefix included.
pub fn decode_frame(bytes: &[u8], max_payload: usize) -> Result<Message, FrameError> {
    let prefix: [u8; 4] = bytes
        .get(..4)
        .ok_or(FrameError::Truncated {
            need: 4,
            have: bytes.len(),
        })?
        .try_into()
        .expect("4 bytes");
    let len = body_len(prefix, max_payload)?;
    let body = &bytes[4..];
    if body.len() < len {
        return Err(FrameError::Truncated {
            need: len + 4,
            have: bytes.len(),
        });
    }
    if body.len() > len {
        return Err(FrameError::LengthMismatch {
            declared: len,
            actual: body.len(),
        });
    }
    decode_body(body)
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("peer closed the connection")]
    Closed,
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("expected {expected:?}, received {got:?}")]
    Unexpected { expected: Kind, got: Kind },
}

/// Cumulative per-endpoint traffic. `nanos_*` covers framing, copying and
/// socket writes/reads, but not time spent blocked waiting for a peer.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ChannelStats {
    pub msgs_tx: u64,
    pub msgs_rx: u64,
    pub bytes_tx: u64,
    pub bytes_rx: u64,
    pub nanos_tx: u64,
    pub nanos_rx: u64,
}

impl ChannelStats {
    pub fn merge(&self, o: &Self) -> Self {
        Self {
            msgs_tx: self.msgs_tx + o.msgs_tx,
            msgs_rx: self.msgs_rx + o.msgs_rx,
            bytes_tx: self.bytes_tx + o.bytes_tx,
            bytes_rx: self.bytes_rx + o.bytes_rx,
            nanos_tx: self.nanos_tx + o.nanos_tx,
            nanos_rx: self.nanos_rx + o.nanos_rx,
        }
    }

    pub fn nanos(&self) -> u64 {
        self.nanos_tx + self.nanos_rx
    }

    fn sent(&mut self, bytes: usize, start: Instant) {
        self.msgs_tx += 1;
        self.bytes_tx += bytes as u64;
        self.nanos_tx += start.elapsed().as_nanos() as u64;
    }

    fn received(&mut self, bytes: usize, start: Instant) {
        self.msgs_rx += 1;
        self.bytes_rx += bytes as u64;
        self.nanos_rx += start.elapsed().as_nanos() as u64;
    }
}

/// One side of a bidirectional, in-order message channel.
pub trait Endpoint: Send {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError>;
    /// Blocks until a message arrives.
    fn recv(&mut self) -> Result<Message, TransportError>;
    fn stats(&self) -> ChannelStats;
    fn reset_stats(&mut self);

    /// Receives and checks the kind.
    fn expect(&mut self, kind: Kind) -> Result<Message, TransportError> {
        let m = self.recv()?;
        if m.kind == kind {
            Ok(m)
        } else {
            Err(TransportError::Unexpected { expected: kind, got: m.kind })
        }
    }
}

/// Shared carrier options.
#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub max_payload: usize,
    /// Sleep injected before every send.
    pub latency: Duration,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            max_payload: DEFAULT_MAX_PAYLOAD,
            latency: Duration::ZERO,
        }
    }
}

/// In-process endpoint carrying encoded frames over channels.
pub struct InProc {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    opts: Options,
    stats: ChannelStats,
}

pub fn inproc_pair(opts: Options) -> (InProc, InProc) {
    let (a_tx, b_rx) = channel();
    let (b_tx, a_rx) = channel();
    let end = |tx, rx| InProc {
        tx,
        rx,
        opts,
        stats: ChannelStats::default(),
    };
    (end(a_tx, a_rx), end(b_tx, b_rx))
}

impl Endpoint for InProc {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        if !self.opts.latency.is_zero() {
            thread::sleep(self.opts.latency);
        }
        let start = Instant::now();
        let frame = encode_frame(msg, self.opts.max_payload)?;
        let len = frame.len();
        self.tx.send(frame).map_err(|_| TransportError::Closed)?;
        self.stats.sent(len, start);
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        let frame = self.rx.recv().map_err(|_| TransportError::Closed)?;
        let start = Instant::now();
        let msg = decode_frame(&frame, self.opts.max_payload)?;
        self.stats.received(frame.len(), start);
        Ok(msg)
    }

    fn stats(&self) -> ChannelStats {
        self.stats
    }

    fn reset_stats(&mut self) {
        self.stats = ChannelStats::default();
    }
}

/// TCP endpoint.
pub struct Tcp {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    opts: Options,
    stats: ChannelStats,
    pending: Option<Message>,
}

impl Tcp {
    pub fn new(stream: TcpStream, opts: Options) -> Result<Self, TransportError> {
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::with_capacity(1 << 16, stream.try_clone()?),
            writer: BufWriter::with_capacity(1 << 16, stream),
            opts,
            stats: ChannelStats::default(),
            pending: None,
        })
    }

    pub fn connect(addr: impl ToSocketAddrs, opts: Options) -> Result<Self, TransportError> {
        Self::new(TcpStream::connect(addr)?, opts)
    }

    fn read_frame(&mut self) -> Result<Message, TransportError> {
        let mut prefix = [0u8; 4];
        match self.reader.read_exact(&mut prefix) {
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Err(TransportError::Closed),
            r => r?,
        }
        let start = Instant::now();
        let len = body_len(prefix, self.opts.max_payload)?;
        let mut body = vec![0u8; len];
        self.reader.read_exact(&mut body).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => TransportError::Closed,
            _ => e.into(),
        })?;
        let msg = decode_body(&body)?;
        self.stats.received(len + 4, start);
        Ok(msg)
    }
}

impl Endpoint for Tcp {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        if !self.opts.latency.is_zero() {
            thread::sleep(self.opts.latency);
        }
        let start = Instant::now();
        let frame = encode_frame(msg, self.opts.max_payload)?;
        self.writer.write_all(&frame)?;
        self.writer.flush()?;
        self.stats.sent(frame.len(), start);
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        match self.pending.take() {
            Some(m) => Ok(m),
            None => self.read_frame(),
        }
    }

    fn stats(&self) -> ChannelStats {
        self.stats
    }

    fn reset_stats(&mut self) {
        self.stats = ChannelStats::default();
    }
}

/// Accepts `workers` connections and orders them by the worker id of their
/// first message, which must be a Hello. The Hello stays queued for the
/// caller's first `recv`.
pub fn accept_workers(listener: &TcpListener, workers: usize, opts: Options) -> Result<Vec<Tcp>, TransportError> {
    let mut slots: Vec<Option<Tcp>> = (0..workers).map(|_| None).collect();
    for _ in 0..workers {
        let (stream, _) = listener.accept()?;
        let mut ep = Tcp::new(stream, opts)?;
        let hello = ep.expect(Kind::Hello)?;
        let id = hello.worker as usize;
        if id >= workers || slots[id].is_some() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("unexpected or duplicate worker id {id}"),
            )
            .into());
        }
        ep.pending = Some(hello);
        slots[id] = Some(ep);
    }
    Ok(slots.into_iter().map(|s| s.expect("every id filled")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kind_strategy() -> impl Strategy<Value = Kind> {
        (0usize..7).prop_map(|i| Kind::ALL[i])
    }

    #[test]
    fn empty_hello_frame_is_header_sized() {
        let m = Message::new(Kind::Hello, 3, 0, vec![]);
        let f = encode_frame(&m, DEFAULT_MAX_PAYLOAD).unwrap();
        assert_eq!(f.len(), 4 + HEADER_LEN);
        assert_eq!(u32::from_be_bytes(f[..4].try_into().unwrap()) as usize, HEADER_LEN);
        assert_eq!(decode_frame(&f, DEFAULT_MAX_PAYLOAD).unwrap(), m);
    }

    #[test]
    fn framing_errors_have_distinct_codes() {
        let m = Message::new(Kind::Done, 1, 9, vec![1, 2, 3]);
        let f = encode_frame(&m, 16).unwrap();
        let mut bad = f.clone();
        bad[4] = 255;
        let e1 = decode_frame(&bad, 16).unwrap_err();
        assert_eq!(e1, FrameError::BadVersion(255));
        let mut bad = f.clone();
        bad[5] = 0;
        let e2 = decode_frame(&bad, 16).unwrap_err();
        assert_eq!(e2, FrameError::BadKind(0));
        let e3 = decode_frame(&f[..f.len() - 1], 16).unwrap_err();
        assert!(matches!(e3, FrameError::Truncated { .. }));
        let e4 = decode_frame(&f, 2).unwrap_err();
        assert!(matches!(e4, FrameError::Oversize { len: 3, max: 2 }));
        let mut long = f.clone();
        long.push(0);
        let e5 = decode_frame(&long, 16).unwrap_err();
        let codes = [e1.code(), e2.code(), e3.code(), e4.code(), e5.code()];
        let mut uniq = codes.to_vec();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 5);
        assert!(encode_frame(&Message::new(Kind::Shard, 0, 0, vec![0; 17]), 16).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn frame_round_trip(kind in kind_strategy(), worker in any::<u32>(), round in any::<u64>(),
                            payload in proptest::collection::vec(any::<u8>(), 0..64)) {
            let m = Message::new(kind, worker, round, payload);
            let f = encode_frame(&m, DEFAULT_MAX_PAYLOAD).unwrap();
            prop_assert_eq!(f.len(), m.frame_len());
            prop_assert_eq!(decode_frame(&f, DEFAULT_MAX_PAYLOAD).unwrap(), m);
        }
    }

    fn exercise(a: &mut dyn Endpoint, b: &mut dyn Endpoint) {
        a.send(&Message::new(Kind::Hello, 0, 0, vec![7])).unwrap();
        assert_eq!(b.recv().unwrap().payload, vec![7]);
        for r in 1..=3 {
            a.send(&Message::new(Kind::RefreshRequest, 0, r, vec![r as u8; 100])).unwrap();
        }
        for r in 1..=3 {
            let m = b.recv().unwrap();
            assert_eq!((m.kind, m.round), (Kind::RefreshRequest, r));
        }
        b.send(&Message::new(Kind::RefreshReply, 0, 3, vec![])).unwrap();
        assert_eq!(a.expect(Kind::RefreshReply).unwrap().round, 3);
        let (sa, sb) = (a.stats(), b.stats());
        assert_eq!((sa.msgs_tx, sa.msgs_rx), (4, 1));
        assert_eq!((sb.msgs_tx, sb.msgs_rx), (1, 4));
        assert_eq!(sa.bytes_tx, (4 + HEADER_LEN + 1) as u64 + 3 * (4 + HEADER_LEN + 100) as u64);
        assert_eq!(sa.bytes_tx, sb.bytes_rx);
        assert_eq!(sb.bytes_tx, sa.bytes_rx);
        a.reset_stats();
        assert_eq!(a.stats(), ChannelStats::default());
    }

    #[test]
    fn inproc_loopback_and_accounting() {
        let (mut a, mut b) = inproc_pair(Options::default());
        exercise(&mut a, &mut b);
        drop(a);
        assert!(matches!(b.recv(), Err(TransportError::Closed)));
    }

    #[test]
    fn tcp_loopback_and_accounting() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let client = thread::spawn(move || {
            let mut c = Tcp::connect(addr, Options::default()).unwrap();
            c.send(&Message::new(Kind::Hello, 0, 0, vec![])).unwrap();
            c
        });
        let mut server = accept_workers(&listener, 1, Options::default()).unwrap().pop().unwrap();
        let mut c = client.join().unwrap();
        assert_eq!(server.recv().unwrap().kind, Kind::Hello);
        server.reset_stats();
        c.reset_stats();
        exercise(&mut c, &mut server);
        drop(c);
        assert!(matches!(server.recv(), Err(TransportError::Closed)));
    }
}
