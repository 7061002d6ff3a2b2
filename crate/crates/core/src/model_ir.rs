//! Interchange representation for sequential networks.
//!
//! A [`ModelGraph`] is a linear chain of [`LayerSpec`]s with real-valued
//! weights. Shapes are compared by element count: a Linear layer consumes
//! `in_features` values, an LSTM consumes a flattened `steps × input_size`
//! sequence and emits its final hidden state, activations are elementwise.
//!
//! LSTM gate rows are stored in the order input, forget, cell, output
//! (`i, f, g, o`), each block `hidden_size` rows tall.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("unknown layer kind `{kind}` at layer {layer}")]
    UnknownLayerKind { layer: usize, kind: String },
    #[error("shape mismatch at layer {layer}: {detail}")]
    ShapeMismatch { layer: usize, detail: String },
    #[error("invalid model: {}", first_error(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("input length {got} does not match model input length {expected}")]
    InputLengthMismatch { expected: usize, got: usize },
}

fn first_error(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .find(|d| d.severity == Severity::Error)
        .map(|d| d.to_string())
        .unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    HardSigmoid,
    HardTanh,
    #[serde(rename = "relu")]
    ReLU,
}

impl ActivationKind {
    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::HardSigmoid => "hard_sigmoid",
            ActivationKind::HardTanh => "hard_tanh",
            ActivationKind::ReLU => "relu",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::HardSigmoid => hard_sigmoid(x),
            ActivationKind::HardTanh => hard_tanh(x),
            ActivationKind::ReLU => x.max(0.0),
        }
    }
}

pub fn hard_sigmoid(x: f64) -> f64 {
    (x / 4.0 + 0.5).clamp(0.0, 1.0)
}

pub fn hard_tanh(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Linear {
        in_features: usize,
        out_features: usize,
        /// Row-major `[out_features][in_features]`.
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
    },
    Lstm {
        input_size: usize,
        hidden_size: usize,
        steps: usize,
        /// `[4·hidden][input + hidden]`, gate blocks ordered i, f, g, o.
        gate_weights: Vec<Vec<f64>>,
        gate_bias: Vec<f64>,
    },
    Activation {
        function: ActivationKind,
    },
}

/// Dimensions of a layer with the weights stripped. Shared by the float graph
/// and the quantized model so counting and scheduling need only one
/// implementation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerShape {
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Lstm {
        input_size: usize,
        hidden_size: usize,
        steps: usize,
    },
    Activation {
        kind: ActivationKind,
        len: usize,
    },
}

impl LayerShape {
    /// Number of input elements consumed per evaluation.
    pub fn input_len(&self) -> usize {
        match *self {
            LayerShape::Linear { in_features, .. } => in_features,
            LayerShape::Lstm {
                input_size, steps, ..
            } => input_size * steps,
            LayerShape::Activation { len, .. } => len,
        }
    }

    pub fn output_len(&self) -> usize {
        match *self {
            LayerShape::Linear { out_features, .. } => out_features,
            LayerShape::Lstm { hidden_size, .. } => hidden_size,
            LayerShape::Activation { len, .. } => len,
        }
    }

    /// Scalar operations for one evaluation of this layer.
    ///
    /// One MAC counts as two ops, a bias add as one, an activation as one per
    /// element. An LSTM step adds `13·h` on top of its gate MACs: `4h` bias
    /// adds, `5h` activations and `4h` elementwise ops.
    pub fn ops(&self) -> u64 {
        match *self {
            LayerShape::Linear {
                in_features,
                out_features,
            } => {
                let (i, o) = (in_features as u64, out_features as u64);
                2 * i * o + o
            }
            LayerShape::Lstm {
                input_size,
                hidden_size,
                steps,
            } => {
                let (i, h, s) = (input_size as u64, hidden_size as u64, steps as u64);
                s * (8 * h * (i + h) + 13 * h)
            }
            LayerShape::Activation { len, .. } => len as u64,
        }
    }
}

/// Total op count of a chain of layer shapes.
pub fn op_count_shapes(shapes: &[LayerShape]) -> u64 {
    shapes.iter().map(LayerShape::ops).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: String,
    pub message: String,
    pub layer: usize,
}

impl Diagnostic {
    fn error(code: &str, layer: usize, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            code: code.to_string(),
            message: message.into(),
            layer,
        }
    }

    fn warning(code: &str, layer: usize, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            code: code.to_string(),
            message: message.into(),
            layer,
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}: {} @{}: {}", self.code, self.layer, self.message)
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

impl ModelGraph {
    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.shapes()
            .last()
            .map(LayerShape::output_len)
            .unwrap_or_else(|| self.input_len())
    }

    /// Layer dimensions, with activation lengths resolved from the chain.
    pub fn shapes(&self) -> Vec<LayerShape> {
        let mut len = self.input_len();
        self.layers
            .iter()
            .map(|layer| {
                let shape = match layer {
                    LayerSpec::Linear {
                        in_features,
                        out_features,
                        ..
                    } => LayerShape::Linear {
                        in_features: *in_features,
                        out_features: *out_features,
                    },
                    LayerSpec::Lstm {
                        input_size,
                        hidden_size,
                        steps,
                        ..
                    } => LayerShape::Lstm {
                        input_size: *input_size,
                        hidden_size: *hidden_size,
                        steps: *steps,
                    },
                    LayerSpec::Activation { function } => LayerShape::Activation {
                        kind: *function,
                        len,
                    },
                };
                len = shape.output_len();
                shape
            })
            .collect()
    }

    pub fn validate(&self) -> Vec<Diagnostic> {
        validate(self)
    }

    pub fn op_count(&self) -> u64 {
        op_count(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model graphs always serialize")
    }
}

fn check_matrix(
    diags: &mut Vec<Diagnostic>,
    layer: usize,
    what: &str,
    m: &[Vec<f64>],
    rows: usize,
    cols: usize,
) {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        diags.push(Diagnostic::error(
            "WeightShapeMismatch",
            layer,
            format!("{what} must be {rows}x{cols}"),
        ));
    }
    if m.iter().flatten().any(|w| !w.is_finite()) {
        diags.push(Diagnostic::error(
            "NonFiniteWeight",
            layer,
            format!("{what} contains a non-finite value"),
        ));
    }
}

fn check_vector(diags: &mut Vec<Diagnostic>, layer: usize, what: &str, v: &[f64], len: usize) {
    if v.len() != len {
        diags.push(Diagnostic::error(
            "WeightShapeMismatch",
            layer,
            format!("{what} must have {len} elements, found {}", v.len()),
        ));
    }
    if v.iter().any(|w| !w.is_finite()) {
        diags.push(Diagnostic::error(
            "NonFiniteWeight",
            layer,
            format!("{what} contains a non-finite value"),
        ));
    }
}

/// Checks every graph invariant. Diagnostics come out ordered by layer index.
pub fn validate(graph: &ModelGraph) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    if graph.input_shape.is_empty() || graph.input_shape.contains(&0) {
        diags.push(Diagnostic::error(
            "DimensionZero",
            0,
            "input_shape must be a non-empty list of positive integers",
        ));
    }
    if graph.layers.is_empty() {
        diags.push(Diagnostic::error("EmptyGraph", 0, "model has no layers"));
        return diags;
    }

    let mut len = graph.input_len();
    let mut prev_activation = false;
    for (idx, layer) in graph.layers.iter().enumerate() {
        let (needs, produces) = match layer {
            LayerSpec::Linear {
                in_features,
                out_features,
                weights,
                bias,
            } => {
                if *in_features == 0 || *out_features == 0 {
                    diags.push(Diagnostic::error(
                        "DimensionZero",
                        idx,
                        "linear dimensions must be at least 1",
                    ));
                } else {
                    check_matrix(&mut diags, idx, "weights", weights, *out_features, *in_features);
                    check_vector(&mut diags, idx, "bias", bias, *out_features);
                }
                prev_activation = false;
                (Some(*in_features), *out_features)
            }
            LayerSpec::Lstm {
                input_size,
                hidden_size,
                steps,
                gate_weights,
                gate_bias,
            } => {
                if *input_size == 0 || *hidden_size == 0 || *steps == 0 {
                    diags.push(Diagnostic::error(
                        "DimensionZero",
                        idx,
                        "lstm input_size, hidden_size and steps must be at least 1",
                    ));
                } else {
                    let h = *hidden_size;
                    check_matrix(
                        &mut diags,
                        idx,
                        "gate_weights",
                        gate_weights,
                        4 * h,
                        input_size + h,
                    );
                    check_vector(&mut diags, idx, "gate_bias", gate_bias, 4 * h);
                }
                prev_activation = false;
                (Some(input_size * steps), *hidden_size)
            }
            LayerSpec::Activation { function } => {
                if prev_activation {
                    diags.push(Diagnostic::warning(
                        "StackedActivation",
                        idx,
                        format!("{} directly follows another activation", function.name()),
                    ));
                }
                prev_activation = true;
                (None, len)
            }
        };
        if let Some(needs) = needs {
            if needs != len && needs != 0 {
                diags.push(Diagnostic::error(
                    "ShapeMismatch",
                    idx,
                    format!("layer expects {needs} inputs but receives {len}"),
                ));
            }
        }
        len = produces;
    }
    diags
}

pub fn op_count(graph: &ModelGraph) -> u64 {
    op_count_shapes(&graph.shapes())
}

fn dot(row: &[f64], x: &[f64]) -> f64 {
    row.iter().zip(x).map(|(w, v)| w * v).sum()
}

/// Floating-point reference forward pass.
pub fn infer_float(graph: &ModelGraph, input: &[f64]) -> Result<Vec<f64>, ModelError> {
    if input.len() != graph.input_len() {
        return Err(ModelError::InputLengthMismatch {
            expected: graph.input_len(),
            got: input.len(),
        });
    }
    let mut x = input.to_vec();
    for layer in &graph.layers {
        x = match layer {
            LayerSpec::Linear { weights, bias, .. } => weights
                .iter()
                .zip(bias)
                .map(|(row, b)| dot(row, &x) + b)
                .collect(),
            LayerSpec::Lstm {
                input_size,
                hidden_size,
                gate_weights,
                gate_bias,
                ..
            } => lstm_float(*input_size, *hidden_size, gate_weights, gate_bias, &x),
            LayerSpec::Activation { function } => x.iter().map(|&v| function.apply(v)).collect(),
        };
    }
    Ok(x)
}

fn lstm_float(
    input_size: usize,
    h_len: usize,
    weights: &[Vec<f64>],
    bias: &[f64],
    seq: &[f64],
) -> Vec<f64> {
    let mut h = vec![0.0; h_len];
    let mut c = vec![0.0; h_len];
    let mut xh = vec![0.0; input_size + h_len];
    for x_t in seq.chunks(input_size) {
        xh[..input_size].copy_from_slice(x_t);
        xh[input_size..].copy_from_slice(&h);
        let z: Vec<f64> = weights
            .iter()
            .zip(bias)
            .map(|(row, b)| dot(row, &xh) + b)
            .collect();
        for k in 0..h_len {
            let i = hard_sigmoid(z[k]);
            let f = hard_sigmoid(z[h_len + k]);
            let g = hard_tanh(z[2 * h_len + k]);
            let o = hard_sigmoid(z[3 * h_len + k]);
            c[k] = f * c[k] + i * g;
            h[k] = o * hard_tanh(c[k]);
        }
    }
    h
}

/// Parses and validates an interchange document.
///
/// LSTM layers may carry either a single `gate_bias` or the two vectors
/// `bias_ih` and `bias_hh` produced by common training frameworks; the pair
/// is summed into one bias per gate row.
pub fn parse_model(document: &[u8]) -> Result<ModelGraph, ModelError> {
    let root: Value = serde_json::from_slice(document)
        .map_err(|e| ModelError::MalformedDocument(e.to_string()))?;
    let obj = root
        .as_object()
        .ok_or_else(|| ModelError::MalformedDocument("top level must be an object".into()))?;

    let name = obj
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| ModelError::MalformedDocument("missing string `name`".into()))?
        .to_string();
    let input_shape: Vec<usize> = field(obj.get("input_shape"), "input_shape")?;
    let raw_layers = obj
        .get("layers")
        .and_then(Value::as_array)
        .ok_or_else(|| ModelError::MalformedDocument("missing array `layers`".into()))?;

    let mut layers = Vec::with_capacity(raw_layers.len());
    for (idx, raw) in raw_layers.iter().enumerate() {
        layers.push(parse_layer(idx, raw)?);
    }
    let graph = ModelGraph {
        name,
        input_shape,
        layers,
    };

    let diags = validate(&graph);
    if let Some(d) = diags
        .iter()
        .find(|d| matches!(d.code.as_str(), "ShapeMismatch" | "WeightShapeMismatch"))
    {
        return Err(ModelError::ShapeMismatch {
            layer: d.layer,
            detail: d.message.clone(),
        });
    }
    if has_errors(&diags) {
        return Err(ModelError::Invalid(diags));
    }
    Ok(graph)
}

fn field<T: serde::de::DeserializeOwned>(v: Option<&Value>, name: &str) -> Result<T, ModelError> {
    let v = v.ok_or_else(|| ModelError::MalformedDocument(format!("missing field `{name}`")))?;
    T::deserialize(v).map_err(|e| ModelError::MalformedDocument(format!("field `{name}`: {e}")))
}

fn parse_layer(idx: usize, raw: &Value) -> Result<LayerSpec, ModelError> {
    let obj = raw
        .as_object()
        .ok_or_else(|| ModelError::MalformedDocument(format!("layer {idx} is not an object")))?;
    let kind = obj
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| ModelError::MalformedDocument(format!("layer {idx} has no `kind`")))?;
    let ctx = |e: ModelError| match e {
        ModelError::MalformedDocument(m) => {
            ModelError::MalformedDocument(format!("layer {idx}: {m}"))
        }
        other => other,
    };
    match kind {
        "linear" => Ok(LayerSpec::Linear {
            in_features: field(obj.get("in_features"), "in_features").map_err(ctx)?,
            out_features: field(obj.get("out_features"), "out_features").map_err(ctx)?,
            weights: field(obj.get("weights"), "weights").map_err(ctx)?,
            bias: field(obj.get("bias"), "bias").map_err(ctx)?,
        }),
        "lstm" => {
            let gate_bias = match (obj.get("gate_bias"), obj.get("bias_ih"), obj.get("bias_hh")) {
                (Some(b), None, None) => field(Some(b), "gate_bias").map_err(ctx)?,
                (None, Some(ih), Some(hh)) => {
                    let ih: Vec<f64> = field(Some(ih), "bias_ih").map_err(ctx)?;
                    let hh: Vec<f64> = field(Some(hh), "bias_hh").map_err(ctx)?;
                    if ih.len() != hh.len() {
                        return Err(ModelError::ShapeMismatch {
                            layer: idx,
                            detail: "bias_ih and bias_hh differ in length".into(),
                        });
                    }
                    ih.iter().zip(&hh).map(|(a, b)| a + b).collect()
                }
                _ => {
                    return Err(ModelError::MalformedDocument(format!(
                        "layer {idx}: lstm needs `gate_bias` or both `bias_ih` and `bias_hh`"
                    )))
                }
            };
            Ok(LayerSpec::Lstm {
                input_size: field(obj.get("input_size"), "input_size").map_err(ctx)?,
                hidden_size: field(obj.get("hidden_size"), "hidden_size").map_err(ctx)?,
                steps: match obj.get("steps") {
                    Some(s) => field(Some(s), "steps").map_err(ctx)?,
                    None => 1,
                },
                gate_weights: field(obj.get("gate_weights"), "gate_weights").map_err(ctx)?,
                gate_bias,
            })
        }
        "activation" => {
            let function: String = field(obj.get("function"), "function").map_err(ctx)?;
            let function = match function.as_str() {
                "hard_sigmoid" => ActivationKind::HardSigmoid,
                "hard_tanh" => ActivationKind::HardTanh,
                "relu" => ActivationKind::ReLU,
                other => {
                    return Err(ModelError::UnknownLayerKind {
                        layer: idx,
                        kind: format!("activation/{other}"),
                    })
                }
            };
            Ok(LayerSpec::Activation { function })
        }
        other => Err(ModelError::UnknownLayerKind {
            layer: idx,
            kind: other.to_string(),
        }),
    }
}
