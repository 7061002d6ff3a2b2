//! Bit-exact fixed-point inference.
//!
//! This interpreter is the arithmetic contract of the generated RTL and the
//! source of every golden vector. Products of two `Qn.f` codes are summed in a
//! wide accumulator at `2f` fractional bits, then rounded half-up and
//! saturated back to `n` bits exactly once per output element.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_ir::ActivationKind;
use crate::quantizer::{FixedPointFormat, QuantizedLayer, QuantizedModel, QuantizedTensor};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FixError {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("input length {got} does not match model input length {expected}")]
    InputLengthMismatch { expected: usize, got: usize },
}

/// Accumulator at `2f` fractional bits.
///
/// `i128` covers `2n + ceil(log2(in + 1))` bits for `n <= 32` and fan-in up
/// to `2^16` with room to spare.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WideAccumulator {
    pub value: i128,
    pub frac_bits: u32,
}

/// Minimum accumulator width for a dot product of `fan_in` terms plus bias.
pub fn accumulator_bits(fmt: FixedPointFormat, fan_in: usize) -> u32 {
    let terms = fan_in as u64 + 1;
    // ceil(log2(terms))
    2 * fmt.total_bits() + (64 - (terms - 1).leading_zeros())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceStats {
    pub ops: u64,
    pub saturations: u64,
}

/// `Σ w_i·x_i + (bias << f)`.
pub fn mac_dot(
    weights: &[i32],
    inputs: &[i32],
    bias: i32,
    fmt: FixedPointFormat,
) -> Result<WideAccumulator, FixError> {
    if weights.len() != inputs.len() {
        return Err(FixError::LengthMismatch {
            expected: weights.len(),
            got: inputs.len(),
        });
    }
    let sum: i128 = weights
        .iter()
        .zip(inputs)
        .map(|(&w, &x)| w as i128 * x as i128)
        .sum();
    Ok(WideAccumulator {
        value: sum + ((bias as i128) << fmt.frac_bits()),
        frac_bits: 2 * fmt.frac_bits(),
    })
}

/// Round-half-up shift back to `f` fractional bits, saturated to `n` bits.
pub fn requantize_checked(acc: WideAccumulator, fmt: FixedPointFormat) -> (i32, bool) {
    let f = fmt.frac_bits();
    let rounded = if f == 0 {
        acc.value
    } else {
        (acc.value + (1i128 << (f - 1))) >> f
    };
    fmt.saturate(rounded)
}

pub fn requantize(acc: WideAccumulator, fmt: FixedPointFormat) -> i32 {
    requantize_checked(acc, fmt).0
}

fn one(fmt: FixedPointFormat) -> i32 {
    fmt.saturate(1i128 << fmt.frac_bits()).0
}

fn half(fmt: FixedPointFormat) -> i32 {
    match fmt.frac_bits() {
        0 => 0,
        f => 1 << (f - 1),
    }
}

pub fn hard_sigmoid_fixed(x: i32, fmt: FixedPointFormat) -> i32 {
    ((x >> 2) + half(fmt)).clamp(0, one(fmt))
}

pub fn hard_tanh_fixed(x: i32, fmt: FixedPointFormat) -> i32 {
    let one = one(fmt);
    let minus_one = fmt.saturate(-(1i128 << fmt.frac_bits())).0;
    x.clamp(minus_one, one)
}

pub fn relu_fixed(x: i32) -> i32 {
    x.max(0)
}

pub fn activation_fixed(kind: ActivationKind, x: i32, fmt: FixedPointFormat) -> i32 {
    match kind {
        ActivationKind::HardSigmoid => hard_sigmoid_fixed(x, fmt),
        ActivationKind::HardTanh => hard_tanh_fixed(x, fmt),
        ActivationKind::ReLU => relu_fixed(x),
    }
}

/// Product of two codes requantized to one code.
fn mul_requant(a: i32, b: i32, fmt: FixedPointFormat, stats: &mut InferenceStats) -> i32 {
    let acc = WideAccumulator {
        value: a as i128 * b as i128,
        frac_bits: 2 * fmt.frac_bits(),
    };
    let (c, sat) = requantize_checked(acc, fmt);
    stats.saturations += sat as u64;
    c
}

fn affine(
    weights: &QuantizedTensor,
    bias: &QuantizedTensor,
    x: &[i32],
    fmt: FixedPointFormat,
    stats: &mut InferenceStats,
) -> Result<Vec<i32>, FixError> {
    let rows = bias.len();
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let acc = mac_dot(weights.row(r), x, bias.codes[r], fmt)?;
        // multiply + add per term, plus the bias add
        stats.ops += 2 * x.len() as u64 + 1;
        let (c, sat) = requantize_checked(acc, fmt);
        stats.saturations += sat as u64;
        out.push(c);
    }
    Ok(out)
}

fn linear_forward_stats(
    layer: &QuantizedLayer,
    x: &[i32],
    fmt: FixedPointFormat,
    stats: &mut InferenceStats,
) -> Result<Vec<i32>, FixError> {
    match layer {
        QuantizedLayer::Linear {
            in_features,
            weights,
            bias,
            ..
        } => {
            if x.len() != *in_features {
                return Err(FixError::LengthMismatch {
                    expected: *in_features,
                    got: x.len(),
                });
            }
            affine(weights, bias, x, fmt, stats)
        }
        _ => panic!("linear_forward called on a {} layer", layer.kind_name()),
    }
}

/// One output code per row: `requantize(Σ w·x + bias)`.
///
/// # Panics
///
/// If `layer` is not a Linear layer.
pub fn linear_forward(
    layer: &QuantizedLayer,
    x: &[i32],
    fmt: FixedPointFormat,
) -> Result<Vec<i32>, FixError> {
    linear_forward_stats(layer, x, fmt, &mut InferenceStats::default())
}

fn lstm_step_stats(
    cell: &QuantizedLayer,
    x: &[i32],
    h: &[i32],
    c: &[i32],
    fmt: FixedPointFormat,
    stats: &mut InferenceStats,
) -> Result<(Vec<i32>, Vec<i32>), FixError> {
    let QuantizedLayer::Lstm {
        input_size,
        hidden_size,
        gate_weights,
        gate_bias,
        ..
    } = cell
    else {
        panic!("lstm_step called on a {} layer", cell.kind_name());
    };
    let hs = *hidden_size;
    for (v, want) in [(x.len(), *input_size), (h.len(), hs), (c.len(), hs)] {
        if v != want {
            return Err(FixError::LengthMismatch {
                expected: want,
                got: v,
            });
        }
    }
    let xh: Vec<i32> = x.iter().chain(h).copied().collect();
    let z = affine(gate_weights, gate_bias, &xh, fmt, stats)?;

    let mut h_next = Vec::with_capacity(hs);
    let mut c_next = Vec::with_capacity(hs);
    for k in 0..hs {
        let i = hard_sigmoid_fixed(z[k], fmt);
        let f = hard_sigmoid_fixed(z[hs + k], fmt);
        let g = hard_tanh_fixed(z[2 * hs + k], fmt);
        let o = hard_sigmoid_fixed(z[3 * hs + k], fmt);
        // f·c + i·g summed at 2f, one rounding
        let acc = WideAccumulator {
            value: f as i128 * c[k] as i128 + i as i128 * g as i128,
            frac_bits: 2 * fmt.frac_bits(),
        };
        let (c_new, sat) = requantize_checked(acc, fmt);
        stats.saturations += sat as u64;
        let t = hard_tanh_fixed(c_new, fmt);
        let h_new = mul_requant(o, t, fmt, stats);
        // 4 gate activations, tanh(c'), two products, one add, one product
        stats.ops += 4 + 1 + 4;
        c_next.push(c_new);
        h_next.push(h_new);
    }
    Ok((h_next, c_next))
}

/// One LSTM time step. Returns `(h', c')`.
///
/// # Panics
///
/// If `cell` is not an LSTM layer.
pub fn lstm_step(
    cell: &QuantizedLayer,
    x: &[i32],
    h: &[i32],
    c: &[i32],
    fmt: FixedPointFormat,
) -> Result<(Vec<i32>, Vec<i32>), FixError> {
    lstm_step_stats(cell, x, h, c, fmt, &mut InferenceStats::default())
}

/// Runs the whole model; `stats.ops` always equals the model's op count.
pub fn infer_fixed(
    model: &QuantizedModel,
    x: &[i32],
) -> Result<(Vec<i32>, InferenceStats), FixError> {
    if x.len() != model.input_len() {
        return Err(FixError::InputLengthMismatch {
            expected: model.input_len(),
            got: x.len(),
        });
    }
    let fmt = model.format;
    let mut stats = InferenceStats::default();
    let mut v = x.to_vec();
    for layer in &model.layers {
        v = match layer {
            QuantizedLayer::Linear { .. } => linear_forward_stats(layer, &v, fmt, &mut stats)?,
            QuantizedLayer::Lstm {
                input_size,
                hidden_size,
                ..
            } => {
                let mut h = vec![0; *hidden_size];
                let mut c = vec![0; *hidden_size];
                for x_t in v.chunks(*input_size) {
                    (h, c) = lstm_step_stats(layer, x_t, &h, &c, fmt, &mut stats)?;
                }
                h
            }
            QuantizedLayer::Activation { function } => {
                stats.ops += v.len() as u64;
                v.iter().map(|&c| activation_fixed(*function, c, fmt)).collect()
            }
        };
    }
    Ok((v, stats))
}
