//! Two's-complement bit-string literals for ROM contents and testbench
//! constants.

use crate::quantizer::QuantizedTensor;

/// One VHDL bit-string literal holding `code` as an `bits`-wide two's
/// complement value: `x"0080"` when `bits` is a multiple of four, the
/// VHDL-2008 sized form `18x"3FFFF"` otherwise.
pub fn literal(code: i64, bits: u32) -> String {
    let mask = if bits >= 64 { u64::MAX } else { (1u64 << bits) - 1 };
    let digits = bits.div_ceil(4) as usize;
    let hex = format!("{:0digits$X}", (code as u64) & mask);
    if bits.is_multiple_of(4) {
        format!("x\"{hex}\"")
    } else {
        format!("{bits}x\"{hex}\"")
    }
}

/// ROM body: one literal per code in row-major order, comma separated, one
/// per line. An empty tensor renders as an empty body.
pub fn render_rom(weights: &QuantizedTensor) -> String {
    let bits = weights.format.total_bits();
    let mut out = String::new();
    for (k, &c) in weights.codes.iter().enumerate() {
        out.push_str("    ");
        out.push_str(&literal(c as i64, bits));
        if k + 1 < weights.codes.len() {
            out.push(',');
        }
        out.push('\n');
    }
    out
}

/// Recovers codes from every bit-string literal in `text`, sign-extending
/// from `bits`. Inverse of [`render_rom`] and [`literal`].
pub fn parse_literals(text: &str, bits: u32) -> Vec<i64> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut k = 0;
    while k + 1 < bytes.len() {
        let prev_ok = k == 0 || !bytes[k - 1].is_ascii_alphabetic() && bytes[k - 1] != b'_';
        if (bytes[k] == b'x' || bytes[k] == b'X') && bytes[k + 1] == b'"' && prev_ok {
            let start = k + 2;
            let Some(len) = text[start..].find('"') else {
                break;
            };
            let hex = &text[start..start + len];
            if let Ok(raw) = u64::from_str_radix(hex, 16) {
                out.push(sign_extend(raw, bits));
            }
            k = start + len + 1;
        } else {
            k += 1;
        }
    }
    out
}

pub fn sign_extend(raw: u64, bits: u32) -> i64 {
    let shift = 64 - bits;
    ((raw << shift) as i64) >> shift
}
