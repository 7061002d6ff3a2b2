//! Two's-complement fixed-point conversion of real-valued models.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_ir::{ActivationKind, LayerShape, LayerSpec, ModelGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantError {
    #[error("invalid fixed-point format: {0}")]
    InvalidFormat(String),
    #[error("non-finite value {value} in {location}")]
    NonFiniteInput { value: f64, location: String },
    #[error("code {code} out of range for {format}")]
    CodeOutOfRange { code: i64, format: FixedPointFormat },
}

/// `Qn.f`: `n` total bits, `f` of them fractional. A code `c` denotes `c·2^-f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawFormat", into = "RawFormat")]
pub struct FixedPointFormat {
    total_bits: u32,
    frac_bits: u32,
}

#[derive(Serialize, Deserialize)]
struct RawFormat {
    total_bits: u32,
    frac_bits: u32,
}

impl TryFrom<RawFormat> for FixedPointFormat {
    type Error = QuantError;
    fn try_from(r: RawFormat) -> Result<Self, Self::Error> {
        FixedPointFormat::new(r.total_bits, r.frac_bits)
    }
}

impl From<FixedPointFormat> for RawFormat {
    fn from(f: FixedPointFormat) -> Self {
        RawFormat {
            total_bits: f.total_bits,
            frac_bits: f.frac_bits,
        }
    }
}

impl Default for FixedPointFormat {
    fn default() -> Self {
        FixedPointFormat {
            total_bits: 16,
            frac_bits: 8,
        }
    }
}

impl FixedPointFormat {
    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self, QuantError> {
        if !(2..=32).contains(&total_bits) || frac_bits >= total_bits {
            return Err(QuantError::InvalidFormat(format!(
                "{total_bits}.{frac_bits}: need 2 <= n <= 32 and 0 <= f < n"
            )));
        }
        Ok(FixedPointFormat {
            total_bits,
            frac_bits,
        })
    }

    pub fn total_bits(self) -> u32 {
        self.total_bits
    }

    pub fn frac_bits(self) -> u32 {
        self.frac_bits
    }

    pub fn min_code(self) -> i32 {
        (-(1i64 << (self.total_bits - 1))) as i32
    }

    pub fn max_code(self) -> i32 {
        ((1i64 << (self.total_bits - 1)) - 1) as i32
    }

    /// Weight of one least-significant bit, `2^-f`.
    pub fn ulp(self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn contains(self, code: i64) -> bool {
        code >= self.min_code() as i64 && code <= self.max_code() as i64
    }

    pub fn saturate(self, code: i128) -> (i32, bool) {
        let (lo, hi) = (self.min_code() as i128, self.max_code() as i128);
        if code > hi {
            (hi as i32, true)
        } else if code < lo {
            (lo as i32, true)
        } else {
            (code as i32, false)
        }
    }
}

impl fmt::Display for FixedPointFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.total_bits, self.frac_bits)
    }
}

impl FromStr for FixedPointFormat {
    type Err = QuantError;

    /// Parses the `N.F` flag syntax, e.g. `16.8`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || QuantError::InvalidFormat(format!("`{s}` is not of the form N.F"));
        let (n, f) = s.split_once('.').ok_or_else(bad)?;
        let n = n.trim().parse().map_err(|_| bad())?;
        let f = f.trim().parse().map_err(|_| bad())?;
        FixedPointFormat::new(n, f)
    }
}

/// Round-half-to-even of `x·2^f`, saturated. The flag reports saturation.
pub fn to_fixed_checked(x: f64, fmt: FixedPointFormat) -> Result<(i32, bool), QuantError> {
    if !x.is_finite() {
        return Err(QuantError::NonFiniteInput {
            value: x,
            location: "scalar".into(),
        });
    }
    // Power-of-two scaling is exact unless it overflows to infinity, which
    // saturates correctly below.
    let scaled = (x * (fmt.frac_bits as f64).exp2()).round_ties_even();
    let hi = fmt.max_code() as f64;
    let lo = fmt.min_code() as f64;
    if scaled > hi {
        Ok((fmt.max_code(), true))
    } else if scaled < lo {
        Ok((fmt.min_code(), true))
    } else {
        Ok((scaled as i32, false))
    }
}

pub fn to_fixed(x: f64, fmt: FixedPointFormat) -> Result<i32, QuantError> {
    to_fixed_checked(x, fmt).map(|(c, _)| c)
}

pub fn dequantize(code: i64, fmt: FixedPointFormat) -> Result<f64, QuantError> {
    if !fmt.contains(code) {
        return Err(QuantError::CodeOutOfRange { code, format: fmt });
    }
    Ok(code as f64 * fmt.ulp())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub codes: Vec<i32>,
    pub shape: Vec<usize>,
    pub format: FixedPointFormat,
}

impl QuantizedTensor {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Row `r` of a 2-D tensor.
    pub fn row(&self, r: usize) -> &[i32] {
        let cols = self.shape.get(1).copied().unwrap_or(self.codes.len());
        &self.codes[r * cols..(r + 1) * cols]
    }

    pub fn in_range(&self) -> bool {
        self.codes.iter().all(|&c| self.format.contains(c as i64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum QuantizedLayer {
    Linear {
        in_features: usize,
        out_features: usize,
        weights: QuantizedTensor,
        bias: QuantizedTensor,
    },
    Lstm {
        input_size: usize,
        hidden_size: usize,
        steps: usize,
        gate_weights: QuantizedTensor,
        gate_bias: QuantizedTensor,
    },
    Activation {
        function: ActivationKind,
    },
}

impl QuantizedLayer {
    /// Weight and bias tensors in storage order.
    pub fn tensors(&self) -> Vec<(&'static str, &QuantizedTensor)> {
        match self {
            QuantizedLayer::Linear { weights, bias, .. } => {
                vec![("weights", weights), ("bias", bias)]
            }
            QuantizedLayer::Lstm {
                gate_weights,
                gate_bias,
                ..
            } => vec![("gate_weights", gate_weights), ("gate_bias", gate_bias)],
            QuantizedLayer::Activation { .. } => vec![],
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            QuantizedLayer::Linear { .. } => "linear",
            QuantizedLayer::Lstm { .. } => "lstm",
            QuantizedLayer::Activation { .. } => "act",
        }
    }
}

/// Integer-weight model with one format shared by every tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedModel {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub format: FixedPointFormat,
    pub layers: Vec<QuantizedLayer>,
}

impl QuantizedModel {
    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.shapes()
            .last()
            .map(LayerShape::output_len)
            .unwrap_or_else(|| self.input_len())
    }

    pub fn shapes(&self) -> Vec<LayerShape> {
        let mut len = self.input_len();
        self.layers
            .iter()
            .map(|layer| {
                let shape = match layer {
                    QuantizedLayer::Linear {
                        in_features,
                        out_features,
                        ..
                    } => LayerShape::Linear {
                        in_features: *in_features,
                        out_features: *out_features,
                    },
                    QuantizedLayer::Lstm {
                        input_size,
                        hidden_size,
                        steps,
                        ..
                    } => LayerShape::Lstm {
                        input_size: *input_size,
                        hidden_size: *hidden_size,
                        steps: *steps,
                    },
                    QuantizedLayer::Activation { function } => LayerShape::Activation {
                        kind: *function,
                        len,
                    },
                };
                len = shape.output_len();
                shape
            })
            .collect()
    }

    pub fn op_count(&self) -> u64 {
        crate::model_ir::op_count_shapes(&self.shapes())
    }

    /// Structural check for models arriving from outside the toolchain:
    /// tensor sizes, shared format, code range and layer chaining.
    pub fn check(&self) -> Result<(), String> {
        for (idx, layer) in self.layers.iter().enumerate() {
            let expect: Vec<(&str, Vec<usize>)> = match layer {
                QuantizedLayer::Linear {
                    in_features,
                    out_features,
                    ..
                } => vec![
                    ("weights", vec![*out_features, *in_features]),
                    ("bias", vec![*out_features]),
                ],
                QuantizedLayer::Lstm {
                    input_size,
                    hidden_size,
                    ..
                } => vec![
                    ("gate_weights", vec![4 * hidden_size, input_size + hidden_size]),
                    ("gate_bias", vec![4 * hidden_size]),
                ],
                QuantizedLayer::Activation { .. } => vec![],
            };
            for ((name, t), (_, shape)) in layer.tensors().into_iter().zip(expect) {
                if t.shape != shape || t.codes.len() != shape.iter().product::<usize>() {
                    return Err(format!("layer {idx} {name}: expected shape {shape:?}"));
                }
                if t.format != self.format {
                    return Err(format!("layer {idx} {name}: format {} differs from model format {}", t.format, self.format));
                }
                if !t.in_range() {
                    return Err(format!("layer {idx} {name}: code outside {}", self.format));
                }
            }
        }
        let diags = self.to_graph().validate();
        match diags.iter().find(|d| d.severity == crate::model_ir::Severity::Error) {
            Some(d) => Err(d.to_string()),
            None => Ok(()),
        }
    }

    /// Total number of stored weight and bias codes.
    pub fn weight_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.tensors())
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Recovers a real-valued graph whose weights are the dequantized codes.
    pub fn to_graph(&self) -> ModelGraph {
        let ulp = self.format.ulp();
        let rows = |t: &QuantizedTensor| -> Vec<Vec<f64>> {
            let cols = t.shape.get(1).copied().unwrap_or(0);
            if cols == 0 {
                return vec![Vec::new(); t.shape.first().copied().unwrap_or(0)];
            }
            t.codes
                .chunks(cols)
                .map(|r| r.iter().map(|&c| c as f64 * ulp).collect())
                .collect()
        };
        let vec = |t: &QuantizedTensor| -> Vec<f64> {
            t.codes.iter().map(|&c| c as f64 * ulp).collect()
        };
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                QuantizedLayer::Linear {
                    in_features,
                    out_features,
                    weights,
                    bias,
                } => LayerSpec::Linear {
                    in_features: *in_features,
                    out_features: *out_features,
                    weights: rows(weights),
                    bias: vec(bias),
                },
                QuantizedLayer::Lstm {
                    input_size,
                    hidden_size,
                    steps,
                    gate_weights,
                    gate_bias,
                } => LayerSpec::Lstm {
                    input_size: *input_size,
                    hidden_size: *hidden_size,
                    steps: *steps,
                    gate_weights: rows(gate_weights),
                    gate_bias: vec(gate_bias),
                },
                QuantizedLayer::Activation { function } => LayerSpec::Activation {
                    function: *function,
                },
            })
            .collect();
        ModelGraph {
            name: self.name.clone(),
            input_shape: self.input_shape.clone(),
            layers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorError {
    pub layer: usize,
    pub tensor: String,
    pub max_abs_error: f64,
    pub mse: f64,
    pub saturations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationReport {
    pub format: FixedPointFormat,
    pub tensors: Vec<TensorError>,
    pub max_abs_error: f64,
    /// Mean squared error over every weight and bias in the model.
    pub mse: f64,
    pub saturations: u64,
}

fn quantize_tensor(
    values: &[f64],
    shape: Vec<usize>,
    fmt: FixedPointFormat,
    layer: usize,
    name: &str,
) -> Result<(QuantizedTensor, TensorError, f64), QuantError> {
    let mut codes = Vec::with_capacity(values.len());
    let (mut max_err, mut sq_sum, mut sats) = (0.0f64, 0.0f64, 0u64);
    for (k, &v) in values.iter().enumerate() {
        let (code, sat) = to_fixed_checked(v, fmt).map_err(|_| QuantError::NonFiniteInput {
            value: v,
            location: format!("layer {layer} {name}[{k}]"),
        })?;
        let err = (v - code as f64 * fmt.ulp()).abs();
        max_err = max_err.max(err);
        sq_sum += err * err;
        sats += sat as u64;
        codes.push(code);
    }
    let n = values.len().max(1) as f64;
    Ok((
        QuantizedTensor {
            codes,
            shape,
            format: fmt,
        },
        TensorError {
            layer,
            tensor: name.to_string(),
            max_abs_error: max_err,
            mse: sq_sum / n,
            saturations: sats,
        },
        sq_sum,
    ))
}

fn flatten(m: &[Vec<f64>]) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

/// Quantizes every tensor of `graph` with `fmt`.
///
/// The graph is assumed valid; callers run [`crate::model_ir::validate`]
/// first.
pub fn quantize_model(
    graph: &ModelGraph,
    fmt: FixedPointFormat,
) -> Result<(QuantizedModel, QuantizationReport), QuantError> {
    let mut layers = Vec::with_capacity(graph.layers.len());
    let mut tensors = Vec::new();
    let (mut sq_total, mut count) = (0.0f64, 0usize);

    let mut push = |res: (QuantizedTensor, TensorError, f64), len: usize| {
        sq_total += res.2;
        count += len;
        tensors.push(res.1);
        res.0
    };

    for (idx, layer) in graph.layers.iter().enumerate() {
        let q = match layer {
            LayerSpec::Linear {
                in_features,
                out_features,
                weights,
                bias,
            } => {
                let w = flatten(weights);
                let wl = w.len();
                let weights = push(
                    quantize_tensor(&w, vec![*out_features, *in_features], fmt, idx, "weights")?,
                    wl,
                );
                let bias = push(
                    quantize_tensor(bias, vec![*out_features], fmt, idx, "bias")?,
                    bias.len(),
                );
                QuantizedLayer::Linear {
                    in_features: *in_features,
                    out_features: *out_features,
                    weights,
                    bias,
                }
            }
            LayerSpec::Lstm {
                input_size,
                hidden_size,
                steps,
                gate_weights,
                gate_bias,
            } => {
                let w = flatten(gate_weights);
                let wl = w.len();
                let shape = vec![4 * hidden_size, input_size + hidden_size];
                let gate_weights =
                    push(quantize_tensor(&w, shape, fmt, idx, "gate_weights")?, wl);
                let gate_bias = push(
                    quantize_tensor(gate_bias, vec![4 * hidden_size], fmt, idx, "gate_bias")?,
                    gate_bias.len(),
                );
                QuantizedLayer::Lstm {
                    input_size: *input_size,
                    hidden_size: *hidden_size,
                    steps: *steps,
                    gate_weights,
                    gate_bias,
                }
            }
            LayerSpec::Activation { function } => QuantizedLayer::Activation {
                function: *function,
            },
        };
        layers.push(q);
    }

    let report = QuantizationReport {
        format: fmt,
        max_abs_error: tensors.iter().map(|t| t.max_abs_error).fold(0.0, f64::max),
        saturations: tensors.iter().map(|t| t.saturations).sum(),
        mse: if count == 0 { 0.0 } else { sq_total / count as f64 },
        tensors,
    };
    let model = QuantizedModel {
        name: graph.name.clone(),
        input_shape: graph.input_shape.clone(),
        format: fmt,
        layers,
    };
    Ok((model, report))
}

/// Quantizes an input vector with the same rounding rule as the weights.
pub fn quantize_vector(xs: &[f64], fmt: FixedPointFormat) -> Result<Vec<i32>, QuantError> {
    xs.iter().map(|&x| to_fixed(x, fmt)).collect()
}
