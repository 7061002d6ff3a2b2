//! Shared fixtures for the criterion benchmarks.

use nnaccel::model_ir::{ActivationKind, LayerSpec, ModelGraph};

/// Deterministic LSTM → Linear model with weights spread over `[-1, 1)`.
pub fn lstm_regressor(input: usize, hidden: usize, steps: usize) -> ModelGraph {
    let mut seed = 0x2545_f491_u64;
    let mut next = move || {
        seed ^= seed << 13;
        seed ^= seed >> 7;
        seed ^= seed << 17;
        (seed >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    let mut matrix = |rows: usize, cols: usize| -> Vec<Vec<f64>> {
        (0..rows).map(|_| (0..cols).map(|_| next()).collect()).collect()
    };
    let gate_weights = matrix(4 * hidden, input + hidden);
    let gate_bias = matrix(1, 4 * hidden).remove(0);
    let weights = matrix(1, hidden);
    ModelGraph {
        name: format!("lstm{input}x{hidden}x{steps}"),
        input_shape: vec![steps, input],
        layers: vec![
            LayerSpec::Lstm {
                input_size: input,
                hidden_size: hidden,
                steps,
                gate_weights,
                gate_bias,
            },
            LayerSpec::Linear {
                in_features: hidden,
                out_features: 1,
                weights,
                bias: vec![0.0],
            },
            LayerSpec::Activation {
                function: ActivationKind::HardTanh,
            },
        ],
    }
}
