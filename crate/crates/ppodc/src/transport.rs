//! Ordered, framed, duplex message channels with stream multiplexing.
//!
//! Wire format, big-endian throughout:
//!
//! ```text
//! +----------------+----------+-----------------+---------+
//! | length: u32    | type: u8 | session_id: u32 | payload |
//! +----------------+----------+-----------------+---------+
//! ```
//!
//! `length` covers everything after itself (type + session + payload), so a
//! header-only frame has `length = 5`. Big integers inside payloads are
//! encoded as a 16-bit byte-count prefix followed by the big-endian
//! magnitude; zero encodes as a zero-length magnitude.
//!
//! The same frame moves over an in-process channel pair (tests, all-in-one
//! runs) or a TCP stream (role deployment). A [`Mux`] demultiplexes inbound
//! frames by `session_id` so concurrent sessions can share one connection
//! with per-stream FIFO delivery. Deployments that need confidentiality on
//! the wire must wrap the TCP listener in TLS; the protocol itself assumes
//! secure channels.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;

use num_bigint::BigUint;

use crate::error::TransportError;
use crate::metrics::PartyMetrics;

/// Maximum accepted frame length (the value of the length field). Guards the
/// reader against corrupt or hostile size prefixes.
pub const MAX_FRAME_LEN: u32 = 64 * 1024 * 1024;

/// Session id reserved for link teardown: a control frame addressed here
/// makes the receiving demultiplexer exit, releasing its end of the link.
pub const CLOSE_SESSION: u32 = u32::MAX;

/// One request or response kind; every primitive round maps to exactly one
/// request/response pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    ShareUpload = 1,
    EncForward = 2,
    SmpMasked = 3,
    SmpProduct = 4,
    SlsbMasked = 5,
    SlsbParity = 6,
    SminkPermuted = 7,
    SminkIndicators = 8,
    SetcGammaEnc = 9,
    SetcGammaPlain = 10,
    RevealMasked = 11,
    RevealPlain = 12,
    Control = 13,
}

impl TryFrom<u8> for MessageType {
    type Error = TransportError;

    fn try_from(v: u8) -> Result<Self, TransportError> {
        Ok(match v {
            1 => MessageType::ShareUpload,
            2 => MessageType::EncForward,
            3 => MessageType::SmpMasked,
            4 => MessageType::SmpProduct,
            5 => MessageType::SlsbMasked,
            6 => MessageType::SlsbParity,
            7 => MessageType::SminkPermuted,
            8 => MessageType::SminkIndicators,
            9 => MessageType::SetcGammaEnc,
            10 => MessageType::SetcGammaPlain,
            11 => MessageType::RevealMasked,
            12 => MessageType::RevealPlain,
            13 => MessageType::Control,
            other => return Err(TransportError::UnknownType(other)),
        })
    }
}

/// A typed, length-framed unit exchanged between parties.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MessageType,
    pub session_id: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MessageType, session_id: u32, payload: Vec<u8>) -> Self {
        Frame { msg_type, session_id, payload }
    }

    /// Value of the wire length field: type byte + session id + payload.
    pub fn length_field(&self) -> u32 {
        (1 + 4 + self.payload.len()) as u32
    }

    /// Total bytes this frame occupies on the wire.
    pub fn wire_len(&self) -> u64 {
        4 + self.length_field() as u64
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len() as usize);
        out.extend_from_slice(&self.length_field().to_be_bytes());
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.session_id.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode_from<R: Read>(r: &mut R) -> Result<Frame, TransportError> {
        let mut len_buf = [0u8; 4];
        r.read_exact(&mut len_buf)?;
        let length = u32::from_be_bytes(len_buf);
        if length < 5 {
            return Err(TransportError::Malformed(format!("length field {length} < 5")));
        }
        if length > MAX_FRAME_LEN {
            return Err(TransportError::Malformed(format!("length field {length} too large")));
        }
        let mut type_buf = [0u8; 1];
        r.read_exact(&mut type_buf)?;
        let msg_type = MessageType::try_from(type_buf[0])?;
        let mut sess_buf = [0u8; 4];
        r.read_exact(&mut sess_buf)?;
        let session_id = u32::from_be_bytes(sess_buf);
        let mut payload = vec![0u8; (length - 5) as usize];
        r.read_exact(&mut payload)?;
        Ok(Frame { msg_type, session_id, payload })
    }
}

/// Incremental payload builder.
#[derive(Debug, Default)]
pub struct PayloadWriter {
    buf: Vec<u8>,
}

impl PayloadWriter {
    pub fn new() -> Self {
        PayloadWriter::default()
    }

    pub fn put_u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn put_u16(&mut self, v: u16) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn put_u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn put_u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    /// 16-bit byte-count prefix + big-endian magnitude. Zero has an empty
    /// magnitude.
    pub fn put_uint(&mut self, v: &BigUint) -> &mut Self {
        let bytes = v.to_bytes_be();
        let bytes = if bytes == [0] { Vec::new() } else { bytes };
        assert!(bytes.len() <= u16::MAX as usize, "big integer too large for wire form");
        self.buf.extend_from_slice(&(bytes.len() as u16).to_be_bytes());
        self.buf.extend_from_slice(&bytes);
        self
    }

    pub fn put_str(&mut self, s: &str) -> &mut Self {
        let bytes = s.as_bytes();
        assert!(bytes.len() <= u16::MAX as usize);
        self.put_u16(bytes.len() as u16);
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Sequential payload reader; every getter fails cleanly on truncation.
pub struct PayloadReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        PayloadReader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], TransportError> {
        if self.pos + n > self.buf.len() {
            return Err(TransportError::Malformed(format!(
                "payload truncated: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn get_u8(&mut self) -> Result<u8, TransportError> {
        Ok(self.take(1)?[0])
    }

    pub fn get_u16(&mut self) -> Result<u16, TransportError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn get_u32(&mut self) -> Result<u32, TransportError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn get_u64(&mut self) -> Result<u64, TransportError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn get_uint(&mut self) -> Result<BigUint, TransportError> {
        let n = self.get_u16()? as usize;
        Ok(BigUint::from_bytes_be(self.take(n)?))
    }

    pub fn get_str(&mut self) -> Result<String, TransportError> {
        let n = self.get_u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| TransportError::Malformed("invalid utf8".into()))
    }

    /// Asserts the payload was fully consumed.
    pub fn expect_end(&self) -> Result<(), TransportError> {
        if self.pos != self.buf.len() {
            return Err(TransportError::Malformed(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// An ordered duplex frame pipe. Implementations must deliver frames intact
/// and in send order.
pub trait FrameLink: Send + Sync {
    fn send(&self, frame: Frame) -> Result<(), TransportError>;
    fn recv(&self) -> Result<Frame, TransportError>;
}

/// In-process link: a pair of unbounded queues.
pub struct InprocLink {
    tx: mpsc::Sender<Frame>,
    rx: Mutex<mpsc::Receiver<Frame>>,
}

/// Two connected in-process endpoints.
pub fn inproc_pair() -> (InprocLink, InprocLink) {
    let (tx_a, rx_b) = mpsc::channel();
    let (tx_b, rx_a) = mpsc::channel();
    (
        InprocLink { tx: tx_a, rx: Mutex::new(rx_a) },
        InprocLink { tx: tx_b, rx: Mutex::new(rx_b) },
    )
}

impl FrameLink for InprocLink {
    fn send(&self, frame: Frame) -> Result<(), TransportError> {
        self.tx.send(frame).map_err(|_| TransportError::Closed)
    }

    fn recv(&self) -> Result<Frame, TransportError> {
        let rx = self.rx.lock().expect("inproc receiver poisoned");
        rx.recv().map_err(|_| TransportError::Closed)
    }
}

/// TCP link carrying encoded frames.
pub struct TcpLink {
    reader: Mutex<BufReader<TcpStream>>,
    writer: Mutex<BufWriter<TcpStream>>,
}

impl TcpLink {
    pub fn from_stream(stream: TcpStream) -> Result<Self, TransportError> {
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        Ok(TcpLink {
            reader: Mutex::new(BufReader::new(reader)),
            writer: Mutex::new(BufWriter::new(stream)),
        })
    }

    pub fn connect(addr: &str) -> Result<Self, TransportError> {
        Self::from_stream(TcpStream::connect(addr)?)
    }
}

impl FrameLink for TcpLink {
    fn send(&self, frame: Frame) -> Result<(), TransportError> {
        let bytes = frame.encode();
        let mut w = self.writer.lock().expect("tcp writer poisoned");
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }

    fn recv(&self) -> Result<Frame, TransportError> {
        let mut r = self.reader.lock().expect("tcp reader poisoned");
        Frame::decode_from(&mut *r)
    }
}

struct MuxInner {
    link: Arc<dyn FrameLink>,
    streams: Mutex<HashMap<u32, mpsc::Sender<Frame>>>,
    /// Frames that arrived before their stream was opened.
    pending: Mutex<HashMap<u32, Vec<Frame>>>,
    metrics: Mutex<Option<Arc<PartyMetrics>>>,
}

/// Demultiplexer over one [`FrameLink`]: routes inbound frames to per-session
/// queues. Per-stream FIFO holds because one background thread drains the
/// link in order.
pub struct Mux {
    inner: Arc<MuxInner>,
}

impl Mux {
    pub fn new(link: Arc<dyn FrameLink>) -> Arc<Mux> {
        let inner = Arc::new(MuxInner {
            link,
            streams: Mutex::new(HashMap::new()),
            pending: Mutex::new(HashMap::new()),
            metrics: Mutex::new(None),
        });
        let demux = Arc::clone(&inner);
        thread::Builder::new()
            .name("mux-demux".into())
            .spawn(move || loop {
                let frame = match demux.link.recv() {
                    Ok(f) => f,
                    Err(_) => {
                        // Peer gone: drop all queue senders so readers wake.
                        demux.streams.lock().unwrap().clear();
                        return;
                    }
                };
                if let Some(m) = demux.metrics.lock().unwrap().as_ref() {
                    m.add_recvd(frame.wire_len());
                }
                let sid = frame.session_id;
                let sender = demux.streams.lock().unwrap().get(&sid).cloned();
                match sender {
                    Some(tx) => {
                        // Receiver dropped: stash so a reopened stream can drain.
                        if let Err(e) = tx.send(frame) {
                            demux.pending.lock().unwrap().entry(sid).or_default().push(e.0);
                        }
                    }
                    None => {
                        demux.pending.lock().unwrap().entry(sid).or_default().push(frame);
                    }
                }
            })
            .expect("spawn demux thread");
        Arc::new(Mux { inner })
    }

    /// Attaches message/byte counters for this endpoint.
    pub fn set_metrics(&self, metrics: Arc<PartyMetrics>) {
        *self.inner.metrics.lock().unwrap() = Some(metrics);
    }

    /// Opens (or reopens) the sub-channel for a session id. Frames that
    /// arrived early are replayed in order.
    pub fn open_stream(self: &Arc<Self>, session_id: u32) -> StreamHandle {
        let (tx, rx) = mpsc::channel();
        if let Some(early) = self.inner.pending.lock().unwrap().remove(&session_id) {
            for f in early {
                let _ = tx.send(f);
            }
        }
        self.inner.streams.lock().unwrap().insert(session_id, tx);
        StreamHandle { mux: Arc::clone(self), session_id, rx }
    }

    fn send(&self, frame: Frame) -> Result<(), TransportError> {
        if let Some(m) = self.inner.metrics.lock().unwrap().as_ref() {
            m.add_sent(frame.wire_len());
        }
        self.inner.link.send(frame)
    }
}

/// A sub-channel bound to one session id.
pub struct StreamHandle {
    mux: Arc<Mux>,
    session_id: u32,
    rx: mpsc::Receiver<Frame>,
}

impl StreamHandle {
    pub fn session_id(&self) -> u32 {
        self.session_id
    }

    pub fn send(&self, msg_type: MessageType, payload: Vec<u8>) -> Result<(), TransportError> {
        self.mux.send(Frame::new(msg_type, self.session_id, payload))
    }

    pub fn recv(&self) -> Result<Frame, TransportError> {
        self.rx.recv().map_err(|_| TransportError::Closed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::{One, Zero};

    #[test]
    fn header_only_control_frame_has_length_five() {
        let f = Frame::new(MessageType::Control, 9, Vec::new());
        assert_eq!(f.length_field(), 5);
        let bytes = f.encode();
        assert_eq!(bytes.len(), 9);
        assert_eq!(&bytes[..4], &[0, 0, 0, 5]);
        let decoded = Frame::decode_from(&mut &bytes[..]).unwrap();
        assert_eq!(decoded, f);
    }

    #[test]
    fn frame_roundtrip_with_big_integer_payload() {
        let big = BigUint::parse_bytes(b"123456789012345678901234567890", 10).unwrap();
        let val = &big << 994u32; // a ~1024-bit value
        let mut w = PayloadWriter::new();
        w.put_uint(&val).put_u32(77);
        let f = Frame::new(MessageType::SmpMasked, 3, w.finish());
        let bytes = f.encode();
        let decoded = Frame::decode_from(&mut &bytes[..]).unwrap();
        assert_eq!(decoded, f);
        let mut r = PayloadReader::new(&decoded.payload);
        assert_eq!(r.get_uint().unwrap(), val);
        assert_eq!(r.get_u32().unwrap(), 77);
        r.expect_end().unwrap();
    }

    #[test]
    fn biguint_payload_edges() {
        // zero and a max-style value
        let n2_minus_one: BigUint = (BigUint::one() << 2048u32) - 1u32;
        for v in [BigUint::zero(), BigUint::one(), n2_minus_one] {
            let mut w = PayloadWriter::new();
            w.put_uint(&v);
            let buf = w.finish();
            let mut r = PayloadReader::new(&buf);
            assert_eq!(r.get_uint().unwrap(), v);
            r.expect_end().unwrap();
        }
    }

    #[test]
    fn decode_rejects_bad_type_and_bad_length() {
        // unknown type 200
        let mut bytes = Frame::new(MessageType::Control, 0, vec![]).encode();
        bytes[4] = 200;
        assert!(matches!(
            Frame::decode_from(&mut &bytes[..]),
            Err(TransportError::UnknownType(200))
        ));

        // length field below the header size
        let bad = [0u8, 0, 0, 2, 13, 0, 0, 0, 0];
        assert!(matches!(Frame::decode_from(&mut &bad[..]), Err(TransportError::Malformed(_))));
    }

    #[test]
    fn inproc_roundtrip_and_close() {
        let (a, b) = inproc_pair();
        a.send(Frame::new(MessageType::Control, 1, vec![1, 2, 3])).unwrap();
        let got = b.recv().unwrap();
        assert_eq!(got.payload, vec![1, 2, 3]);
        drop(a);
        assert!(matches!(b.recv(), Err(TransportError::Closed)));
    }

    #[test]
    fn mux_interleaved_streams_preserve_per_stream_fifo() {
        let (a, b) = inproc_pair();
        let mux_a = Mux::new(Arc::new(a));
        let mux_b = Mux::new(Arc::new(b));

        let a1 = mux_a.open_stream(1);
        let a2 = mux_a.open_stream(2);
        let b1 = mux_b.open_stream(1);
        let b2 = mux_b.open_stream(2);

        let t1 = thread::spawn(move || {
            for i in 0..100u32 {
                a1.send(MessageType::Control, i.to_be_bytes().to_vec()).unwrap();
            }
        });
        let t2 = thread::spawn(move || {
            for i in 0..100u32 {
                a2.send(MessageType::Control, (1000 + i).to_be_bytes().to_vec()).unwrap();
            }
        });
        t1.join().unwrap();
        t2.join().unwrap();

        for i in 0..100u32 {
            let f = b1.recv().unwrap();
            assert_eq!(u32::from_be_bytes(f.payload.try_into().unwrap()), i);
            let f = b2.recv().unwrap();
            assert_eq!(u32::from_be_bytes(f.payload.try_into().unwrap()), 1000 + i);
        }
    }

    #[test]
    fn mux_buffers_frames_for_streams_opened_late() {
        let (a, b) = inproc_pair();
        let mux_a = Mux::new(Arc::new(a));
        let mux_b = Mux::new(Arc::new(b));

        let a7 = mux_a.open_stream(7);
        a7.send(MessageType::Control, vec![42]).unwrap();
        // give the demux thread a moment to route into pending
        thread::sleep(std::time::Duration::from_millis(20));
        let b7 = mux_b.open_stream(7);
        assert_eq!(b7.recv().unwrap().payload, vec![42]);
    }

    #[test]
    fn tcp_link_roundtrip() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let link = TcpLink::from_stream(stream).unwrap();
            let f = link.recv().unwrap();
            link.send(Frame::new(MessageType::Control, f.session_id, f.payload)).unwrap();
        });

        let client = TcpLink::connect(&addr.to_string()).unwrap();
        let big = BigUint::parse_bytes(b"99887766554433221100", 10).unwrap() << 1000u32;
        let mut w = PayloadWriter::new();
        w.put_uint(&big);
        client.send(Frame::new(MessageType::Control, 5, w.finish())).unwrap();
        let echoed = client.recv().unwrap();
        let mut r = PayloadReader::new(&echoed.payload);
        assert_eq!(r.get_uint().unwrap(), big);
        server.join().unwrap();
    }
}
