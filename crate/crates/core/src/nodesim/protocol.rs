//! Framed binary protocol between host and node.
//!
//! `0xEA | cmd | len:u16 LE | payload | crc8` where the CRC-8 (poly 0x07,
//! init 0) covers `cmd`, both length bytes and the payload.

use std::io::{self, Read};

use crc::{Crc, CRC_8_SMBUS};

pub const MAGIC: u8 = 0xEA;
pub const HEADER_LEN: usize = 4;
pub const MAX_PAYLOAD: usize = u16::MAX as usize;

pub const CMD_PING: u8 = 0x01;
pub const CMD_LOAD_MANIFEST: u8 = 0x02;
pub const CMD_FPGA_ON: u8 = 0x03;
pub const CMD_FPGA_OFF: u8 = 0x04;
pub const CMD_INFER: u8 = 0x05;
pub const CMD_READ_CH: u8 = 0x06;
pub const CMD_STREAM_START: u8 = 0x07;
pub const CMD_STREAM_STOP: u8 = 0x08;

pub const RSP_PONG: u8 = 0x81;
pub const RSP_ACK: u8 = 0x82;
pub const RSP_INFER: u8 = 0x85;
pub const RSP_CHANNEL: u8 = 0x86;
pub const RSP_STREAM: u8 = 0x87;
pub const RSP_ERR: u8 = 0xFF;

const CRC8: Crc<u8> = Crc::<u8>::new(&CRC_8_SMBUS);

pub fn crc8(bytes: &[u8]) -> u8 {
    CRC8.checksum(bytes)
}

/// Error codes carried in a `0xFF` frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ErrCode {
    BadChecksum = 0x01,
    UnknownCommand = 0x02,
    FpgaOff = 0x03,
    NoManifest = 0x04,
    BadChannel = 0x05,
    BadLength = 0x06,
}

impl ErrCode {
    pub fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            0x01 => ErrCode::BadChecksum,
            0x02 => ErrCode::UnknownCommand,
            0x03 => ErrCode::FpgaOff,
            0x04 => ErrCode::NoManifest,
            0x05 => ErrCode::BadChannel,
            0x06 => ErrCode::BadLength,
            _ => return None,
        })
    }

    pub fn describe(self) -> &'static str {
        match self {
            ErrCode::BadChecksum => "bad checksum",
            ErrCode::UnknownCommand => "unknown command",
            ErrCode::FpgaOff => "fpga off",
            ErrCode::NoManifest => "no manifest",
            ErrCode::BadChannel => "bad channel",
            ErrCode::BadLength => "bad length",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub cmd: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(cmd: u8, payload: Vec<u8>) -> Self {
        Frame { cmd, payload }
    }

    pub fn error(code: ErrCode) -> Self {
        Frame::new(RSP_ERR, vec![code as u8])
    }

    /// Wire encoding. Panics if the payload exceeds 65535 bytes.
    pub fn encode(&self) -> Vec<u8> {
        assert!(self.payload.len() <= MAX_PAYLOAD, "payload too large");
        let mut out = Vec::with_capacity(self.payload.len() + HEADER_LEN + 1);
        out.push(MAGIC);
        out.push(self.cmd);
        out.extend_from_slice(&(self.payload.len() as u16).to_le_bytes());
        out.extend_from_slice(&self.payload);
        let crc = crc8(&out[1..]);
        out.push(crc);
        out
    }

    /// Parses exactly one frame occupying all of `bytes`. Structural faults
    /// (magic, truncation, length disagreement) report `BadLength`; a
    /// well-formed frame with a wrong trailer reports `BadChecksum`.
    pub fn decode(bytes: &[u8]) -> Result<Frame, ErrCode> {
        if bytes.len() < HEADER_LEN + 1 || bytes[0] != MAGIC {
            return Err(ErrCode::BadLength);
        }
        let len = u16::from_le_bytes([bytes[2], bytes[3]]) as usize;
        if bytes.len() != HEADER_LEN + len + 1 {
            return Err(ErrCode::BadLength);
        }
        let body = &bytes[1..HEADER_LEN + len];
        if crc8(body) != bytes[HEADER_LEN + len] {
            return Err(ErrCode::BadChecksum);
        }
        Ok(Frame::new(bytes[1], bytes[HEADER_LEN..HEADER_LEN + len].to_vec()))
    }

    /// The error code if this is an error frame.
    pub fn err_code(&self) -> Option<u8> {
        (self.cmd == RSP_ERR).then(|| self.payload.first().copied().unwrap_or(0))
    }
}

/// Result of scanning a byte stream for the next frame.
#[derive(Debug)]
pub enum Incoming {
    /// Raw bytes of one complete frame, checksum not yet verified.
    Frame(Vec<u8>),
    /// Bytes that could not start a frame were skipped.
    Garbage,
    Eof,
}

/// Splits a byte stream into frames. The first byte of a run that cannot
/// start a frame is reported as `Garbage`; the rest of the run up to the next
/// magic byte is skipped silently.
pub struct FrameReader<R> {
    inner: R,
    skipping: bool,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        FrameReader {
            inner,
            skipping: false,
        }
    }

    pub fn next_frame(&mut self) -> io::Result<Incoming> {
        let mut b = [0u8; 1];
        loop {
            if !read_full(&mut self.inner, &mut b)? {
                return Ok(Incoming::Eof);
            }
            if b[0] == MAGIC {
                self.skipping = false;
                break;
            }
            if !self.skipping {
                self.skipping = true;
                return Ok(Incoming::Garbage);
            }
        }
        Ok(match read_after_magic(&mut self.inner)? {
            Some(frame) => Incoming::Frame(frame),
            None => Incoming::Eof,
        })
    }
}

fn read_after_magic<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut head = [0u8; 3];
    if !read_full(r, &mut head)? {
        return Ok(None);
    }
    let len = u16::from_le_bytes([head[1], head[2]]) as usize;
    let mut frame = Vec::with_capacity(HEADER_LEN + len + 1);
    frame.push(MAGIC);
    frame.extend_from_slice(&head);
    frame.resize(HEADER_LEN + len + 1, 0);
    if !read_full(r, &mut frame[HEADER_LEN..])? {
        return Ok(None);
    }
    Ok(Some(frame))
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => return Ok(false),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

pub fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

pub fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

pub fn le_i32(b: &[u8]) -> i32 {
    i32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

/// `INFER` payload: u16 count followed by that many i32 codes.
pub fn encode_codes(codes: &[i32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 + 4 * codes.len());
    out.extend_from_slice(&(codes.len() as u16).to_le_bytes());
    for c in codes {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out
}

/// Inverse of [`encode_codes`]; returns the codes and any trailing bytes.
pub fn decode_codes(payload: &[u8]) -> Option<(Vec<i32>, &[u8])> {
    if payload.len() < 2 {
        return None;
    }
    let count = le_u16(payload) as usize;
    let end = 2 + 4 * count;
    if payload.len() < end {
        return None;
    }
    let codes = payload[2..end].chunks_exact(4).map(le_i32).collect();
    Some((codes, &payload[end..]))
}
