//! TCP transport for the node.
//!
//! One device-loop thread owns the [`Node`]. Each connection gets a reader
//! thread that forwards raw frames to the loop and a writer thread that
//! drains replies and stream samples, so commands from all connections are
//! executed one at a time in arrival order.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::protocol::*;
use super::{Node, StreamControl, CHANNELS};

pub const DEFAULT_PORT: u16 = 7070;

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    /// Advance simulated time with the wall clock between commands. Off by
    /// default so measurements depend only on the commands issued.
    pub wall_clock: bool,
}

enum Msg {
    Frame { conn: u64, bytes: Vec<u8>, out: Sender<Vec<u8>> },
    Garbage { out: Sender<Vec<u8>> },
    Disconnect(u64),
    Shutdown,
}

struct Stream {
    interval: Duration,
    next: Instant,
    out: Sender<Vec<u8>>,
}

fn device_loop(mut node: Node, rx: mpsc::Receiver<Msg>, opts: ServerOptions) -> Node {
    let mut streams: BTreeMap<u64, Stream> = BTreeMap::new();
    let mut last_wall = Instant::now();
    let mut advance = |node: &mut Node| {
        if opts.wall_clock {
            let now = Instant::now();
            node.step_ns((now - last_wall).as_nanos() as u64);
            last_wall = now;
        }
    };
    loop {
        let msg = match streams.values().map(|s| s.next).min() {
            Some(deadline) => {
                let wait = deadline.saturating_duration_since(Instant::now());
                match rx.recv_timeout(wait) {
                    Ok(m) => Some(m),
                    Err(RecvTimeoutError::Timeout) => None,
                    Err(RecvTimeoutError::Disconnected) => return node,
                }
            }
            None => match rx.recv() {
                Ok(m) => Some(m),
                Err(_) => return node,
            },
        };
        match msg {
            Some(Msg::Frame { conn, bytes, out }) => {
                advance(&mut node);
                let reply = node.handle_frame(&bytes);
                let _ = out.send(reply.frame.encode());
                match reply.stream {
                    Some(StreamControl::Start { interval_ms }) => {
                        let interval = Duration::from_millis(interval_ms as u64);
                        streams.insert(
                            conn,
                            Stream {
                                interval,
                                next: Instant::now() + interval,
                                out,
                            },
                        );
                    }
                    Some(StreamControl::Stop) => {
                        streams.remove(&conn);
                    }
                    None => {}
                }
            }
            Some(Msg::Garbage { out }) => {
                let _ = out.send(Frame::error(ErrCode::BadLength).encode());
            }
            Some(Msg::Disconnect(conn)) => {
                streams.remove(&conn);
            }
            Some(Msg::Shutdown) => return node,
            None => {}
        }
        let now = Instant::now();
        let due: Vec<u64> = streams
            .iter()
            .filter(|(_, s)| s.next <= now)
            .map(|(&c, _)| c)
            .collect();
        for conn in due {
            advance(&mut node);
            let frame = node.stream_tick().encode();
            let s = streams.get_mut(&conn).expect("listed above");
            s.next += s.interval;
            if s.next < now {
                s.next = now + s.interval;
            }
            if s.out.send(frame).is_err() {
                streams.remove(&conn);
            }
        }
    }
}

fn serve_connection(conn: u64, stream: TcpStream, tx: Sender<Msg>) {
    let Ok(write_half) = stream.try_clone() else {
        return;
    };
    let (out_tx, out_rx) = mpsc::channel::<Vec<u8>>();
    let writer = thread::spawn(move || {
        let mut w = BufWriter::new(write_half);
        while let Ok(bytes) = out_rx.recv() {
            if w.write_all(&bytes).is_err() {
                break;
            }
            // Drain whatever else is queued before flushing.
            while let Ok(more) = out_rx.try_recv() {
                if w.write_all(&more).is_err() {
                    return;
                }
            }
            if w.flush().is_err() {
                break;
            }
        }
    });
    let mut reader = FrameReader::new(BufReader::new(&stream));
    loop {
        let msg = match reader.next_frame() {
            Ok(Incoming::Frame(bytes)) => Msg::Frame {
                conn,
                bytes,
                out: out_tx.clone(),
            },
            Ok(Incoming::Garbage) => Msg::Garbage { out: out_tx.clone() },
            Ok(Incoming::Eof) | Err(_) => break,
        };
        if tx.send(msg).is_err() {
            break;
        }
    }
    let _ = tx.send(Msg::Disconnect(conn));
    drop(out_tx);
    let _ = writer.join();
    let _ = stream.shutdown(Shutdown::Both);
}

/// A running server. Dropping the handle leaves it running; call
/// [`ServerHandle::shutdown`] to stop it.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    tx: Sender<Msg>,
    accept: Option<JoinHandle<()>>,
    device: Option<JoinHandle<Node>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, finishes queued commands and returns the final
    /// device state.
    pub fn shutdown(mut self) -> Option<Node> {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.tx.send(Msg::Shutdown);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        self.device.take().and_then(|h| h.join().ok())
    }

    /// Blocks until the accept loop exits.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

/// Binds `addr` and serves `node` on background threads.
pub fn spawn_server<A: ToSocketAddrs>(
    addr: A,
    node: Node,
    opts: ServerOptions,
) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let (tx, rx) = mpsc::channel();
    let device = thread::spawn(move || device_loop(node, rx, opts));
    let stop = Arc::new(AtomicBool::new(false));
    let accept = {
        let stop = stop.clone();
        let tx = tx.clone();
        thread::spawn(move || {
            let mut next_id = 0u64;
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let _ = stream.set_nodelay(true);
                let tx = tx.clone();
                let id = next_id;
                next_id += 1;
                thread::spawn(move || serve_connection(id, stream, tx));
            }
        })
    };
    Ok(ServerHandle {
        addr: local,
        stop,
        tx,
        accept: Some(accept),
        device: Some(device),
    })
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("connection failed: {0}")]
    Connect(io::Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("node closed the connection")]
    Closed,
    #[error("malformed reply from node: {0}")]
    Protocol(String),
    #[error("node reported error 0x{code:02X} ({})", ErrCode::from_u8(*code).map(ErrCode::describe).unwrap_or("unknown"))]
    Device { code: u8 },
    #[error("payload of {0} bytes exceeds the frame limit")]
    TooLarge(usize),
}

/// Host side of one protocol session.
pub struct NodeClient {
    writer: TcpStream,
    reader: FrameReader<BufReader<TcpStream>>,
    samples: VecDeque<[u32; CHANNELS]>,
}

impl NodeClient {
    pub fn connect<A: ToSocketAddrs>(addr: A, timeout: Duration) -> Result<Self, ClientError> {
        let addrs: Vec<SocketAddr> = addr.to_socket_addrs().map_err(ClientError::Connect)?.collect();
        let mut last = io::Error::new(io::ErrorKind::NotFound, "address resolved to nothing");
        for a in addrs {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(s) => {
                    s.set_read_timeout(Some(Duration::from_secs(30)))?;
                    let _ = s.set_nodelay(true);
                    let r = s.try_clone()?;
                    return Ok(NodeClient {
                        writer: s,
                        reader: FrameReader::new(BufReader::new(r)),
                        samples: VecDeque::new(),
                    });
                }
                Err(e) => last = e,
            }
        }
        Err(ClientError::Connect(last))
    }

    /// Sends raw bytes without framing; for robustness tests.
    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<(), ClientError> {
        self.writer.write_all(bytes)?;
        Ok(())
    }

    /// Reads the next frame of any kind.
    pub fn recv_frame(&mut self) -> Result<Frame, ClientError> {
        match self.reader.next_frame()? {
            Incoming::Frame(bytes) => {
                Frame::decode(&bytes).map_err(|e| ClientError::Protocol(e.describe().into()))
            }
            Incoming::Garbage => Err(ClientError::Protocol("garbage on the wire".into())),
            Incoming::Eof => Err(ClientError::Closed),
        }
    }

    /// Sends one command and waits for its reply. Stream samples arriving
    /// in between are queued for [`NodeClient::next_sample`].
    pub fn request(&mut self, cmd: u8, payload: Vec<u8>) -> Result<Frame, ClientError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(ClientError::TooLarge(payload.len()));
        }
        self.send_raw(&Frame::new(cmd, payload).encode())?;
        loop {
            let f = self.recv_frame()?;
            if f.cmd == RSP_STREAM && cmd != CMD_STREAM_START {
                self.samples.push_back(parse_sample(&f)?);
                continue;
            }
            if let Some(code) = f.err_code() {
                return Err(ClientError::Device { code });
            }
            return Ok(f);
        }
    }

    fn expect(&mut self, cmd: u8, payload: Vec<u8>, rsp: u8) -> Result<Frame, ClientError> {
        let f = self.request(cmd, payload)?;
        if f.cmd != rsp {
            return Err(ClientError::Protocol(format!(
                "expected reply 0x{rsp:02X}, got 0x{:02X}",
                f.cmd
            )));
        }
        Ok(f)
    }

    pub fn ping(&mut self) -> Result<(), ClientError> {
        self.expect(CMD_PING, vec![], RSP_PONG).map(|_| ())
    }

    pub fn load_manifest(&mut self, json: &[u8]) -> Result<(), ClientError> {
        self.expect(CMD_LOAD_MANIFEST, json.to_vec(), RSP_ACK).map(|_| ())
    }

    pub fn fpga_on(&mut self) -> Result<(), ClientError> {
        self.expect(CMD_FPGA_ON, vec![], RSP_ACK).map(|_| ())
    }

    pub fn fpga_off(&mut self) -> Result<(), ClientError> {
        self.expect(CMD_FPGA_OFF, vec![], RSP_ACK).map(|_| ())
    }

    /// Returns output codes and the reported latency in ns.
    pub fn infer(&mut self, codes: &[i32]) -> Result<(Vec<i32>, u32), ClientError> {
        if codes.len() > u16::MAX as usize {
            return Err(ClientError::TooLarge(codes.len()));
        }
        let f = self.expect(CMD_INFER, encode_codes(codes), RSP_INFER)?;
        let bad = || ClientError::Protocol("short INFER reply".into());
        let (out, rest) = decode_codes(&f.payload).ok_or_else(bad)?;
        if rest.len() != 4 {
            return Err(bad());
        }
        Ok((out, le_u32(rest)))
    }

    /// Returns `(avg_uw, samples)`.
    pub fn read_channel(&mut self, ch: u8) -> Result<(u32, u32), ClientError> {
        let f = self.expect(CMD_READ_CH, vec![ch], RSP_CHANNEL)?;
        if f.payload.len() != 8 {
            return Err(ClientError::Protocol("short READ_CH reply".into()));
        }
        Ok((le_u32(&f.payload), le_u32(&f.payload[4..])))
    }

    /// Starts streaming; the first sample is returned immediately.
    pub fn stream_start(&mut self, interval_ms: u16) -> Result<[u32; CHANNELS], ClientError> {
        let f = self.expect(CMD_STREAM_START, interval_ms.to_le_bytes().to_vec(), RSP_STREAM)?;
        parse_sample(&f)
    }

    pub fn stream_stop(&mut self) -> Result<(), ClientError> {
        self.expect(CMD_STREAM_STOP, vec![], RSP_ACK).map(|_| ())
    }

    /// Next periodic sample, from the queue or the wire.
    pub fn next_sample(&mut self) -> Result<[u32; CHANNELS], ClientError> {
        if let Some(s) = self.samples.pop_front() {
            return Ok(s);
        }
        loop {
            let f = self.recv_frame()?;
            if f.cmd == RSP_STREAM {
                return parse_sample(&f);
            }
        }
    }
}

fn parse_sample(f: &Frame) -> Result<[u32; CHANNELS], ClientError> {
    if f.payload.len() != 4 * CHANNELS {
        return Err(ClientError::Protocol("stream sample must carry 8 channels".into()));
    }
    let mut out = [0; CHANNELS];
    for (c, chunk) in f.payload.chunks_exact(4).enumerate() {
        out[c] = le_u32(chunk);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{NodeConfig, PowerProfile};
    use super::*;

    fn start() -> ServerHandle {
        let node = Node::new(PowerProfile::fpga_only(0.0, 40.0, 5.0, 71.0), NodeConfig::default()).unwrap();
        spawn_server("127.0.0.1:0", node, ServerOptions::default()).unwrap()
    }

    #[test]
    fn ping_and_errors_over_tcp() {
        let server = start();
        let mut c = NodeClient::connect(server.local_addr(), Duration::from_secs(2)).unwrap();
        c.ping().unwrap();
        assert!(matches!(c.read_channel(9), Err(ClientError::Device { code: 0x05 })));
        assert!(matches!(c.infer(&[1]), Err(ClientError::Device { code: 0x03 })));
        c.send_raw(&[0x00, 0x11]).unwrap();
        assert_eq!(c.recv_frame().unwrap().err_code(), Some(0x06));
        c.ping().unwrap();
        server.shutdown().unwrap();
    }

    #[test]
    fn two_sessions_share_one_device() {
        let server = start();
        let mut a = NodeClient::connect(server.local_addr(), Duration::from_secs(2)).unwrap();
        let mut b = NodeClient::connect(server.local_addr(), Duration::from_secs(2)).unwrap();
        a.fpga_on().unwrap();
        // b observes the energy a's configuration produced, then it is gone.
        assert!(b.read_channel(1).unwrap().1 > 0);
        assert_eq!(a.read_channel(1).unwrap().1, 0);
        server.shutdown().unwrap();
    }

    #[test]
    fn stream_emits_samples() {
        let server = start();
        let mut c = NodeClient::connect(server.local_addr(), Duration::from_secs(2)).unwrap();
        c.fpga_on().unwrap();
        let first = c.stream_start(5).unwrap();
        // Only the configuration dwell has elapsed in simulated time.
        assert_eq!(first[1], 40_000);
        assert_eq!(first[0], 0);
        let _ = c.next_sample().unwrap();
        c.stream_stop().unwrap();
        c.ping().unwrap();
        server.shutdown().unwrap();
    }

    #[test]
    fn connect_failure() {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = l.local_addr().unwrap();
        drop(l);
        assert!(matches!(
            NodeClient::connect(addr, Duration::from_millis(500)),
            Err(ClientError::Connect(_))
        ));
    }
}
