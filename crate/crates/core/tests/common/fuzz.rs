//! Frame fuzzer shared by the protocol tests.

#![allow(dead_code)]

use nnaccel::nodesim::protocol::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const RESPONSES: [u8; 6] = [RSP_PONG, RSP_ACK, RSP_INFER, RSP_CHANNEL, RSP_STREAM, RSP_ERR];

/// A mix of well-formed commands, corrupted frames and raw noise.
pub fn fuzz_frame(rng: &mut ChaCha8Rng, manifest: &[u8]) -> Vec<u8> {
    let valid_cmd = |rng: &mut ChaCha8Rng| -> Frame {
        match rng.gen_range(0..10) {
            0 => Frame::new(CMD_PING, vec![]),
            1 => Frame::new(CMD_LOAD_MANIFEST, manifest.to_vec()),
            2 | 3 => Frame::new(CMD_FPGA_ON, vec![]),
            4 => Frame::new(CMD_FPGA_OFF, vec![]),
            5 | 6 => {
                let n = *[0usize, 1, 1, 1, 2].choose(rng).unwrap();
                let codes: Vec<i32> = (0..n).map(|_| rng.gen()).collect();
                Frame::new(CMD_INFER, encode_codes(&codes))
            }
            7 => Frame::new(CMD_READ_CH, vec![rng.gen_range(0..12)]),
            8 => Frame::new(CMD_STREAM_START, rng.gen::<u16>().to_le_bytes().to_vec()),
            _ => Frame::new(CMD_STREAM_STOP, vec![]),
        }
    };
    match rng.gen_range(0..8) {
        0..=2 => valid_cmd(rng).encode(),
        3 => {
            // valid framing, arbitrary command and payload
            let len = rng.gen_range(0..40);
            let payload = (0..len).map(|_| rng.gen()).collect();
            Frame::new(rng.gen(), payload).encode()
        }
        4 => {
            let mut b = valid_cmd(rng).encode();
            let i = rng.gen_range(0..b.len());
            b[i] ^= 1 << rng.gen_range(0..8);
            b
        }
        5 => {
            let b = valid_cmd(rng).encode();
            let cut = rng.gen_range(0..b.len());
            b[..cut].to_vec()
        }
        6 => {
            let mut b = valid_cmd(rng).encode();
            b.extend((0..rng.gen_range(1..4)).map(|_| rng.gen::<u8>()));
            b
        }
        _ => (0..rng.gen_range(0..64)).map(|_| rng.gen()).collect(),
    }
}

