//! Seeded random graphs for property tests.

#![allow(dead_code)]

use nnaccel::model_ir::{ActivationKind, LayerSpec, ModelGraph};
use rand::Rng;

pub const ACTIVATIONS: [ActivationKind; 3] = [
    ActivationKind::HardSigmoid,
    ActivationKind::HardTanh,
    ActivationKind::ReLU,
];

pub fn matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-scale..scale)).collect())
        .collect()
}

pub fn vector<R: Rng>(rng: &mut R, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn linear<R: Rng>(rng: &mut R, i: usize, o: usize, scale: f64) -> LayerSpec {
    LayerSpec::Linear {
        in_features: i,
        out_features: o,
        weights: matrix(rng, o, i, scale),
        bias: vector(rng, o, scale),
    }
}

pub fn lstm<R: Rng>(rng: &mut R, i: usize, h: usize, steps: usize, scale: f64) -> LayerSpec {
    LayerSpec::Lstm {
        input_size: i,
        hidden_size: h,
        steps,
        gate_weights: matrix(rng, 4 * h, i + h, scale),
        gate_bias: vector(rng, 4 * h, scale),
    }
}

/// A chain of 1 to 4 layers with every dimension in `1..=max_dim`. LSTM
/// layers only appear first since they consume a sequence.
pub fn random_graph<R: Rng>(rng: &mut R, max_dim: usize, max_steps: usize, scale: f64) -> ModelGraph {
    let mut layers = Vec::new();
    let depth = rng.gen_range(1..=4);
    let input_shape;
    let mut len;
    if rng.gen_bool(0.4) {
        let (i, h, s) = (
            rng.gen_range(1..=max_dim),
            rng.gen_range(1..=max_dim),
            rng.gen_range(1..=max_steps),
        );
        layers.push(lstm(rng, i, h, s, scale));
        input_shape = vec![s, i];
        len = h;
    } else {
        len = rng.gen_range(1..=max_dim);
        input_shape = vec![len];
    }
    while layers.len() < depth {
        if rng.gen_bool(0.35) {
            layers.push(LayerSpec::Activation {
                function: ACTIVATIONS[rng.gen_range(0..3)],
            });
        } else {
            let o = rng.gen_range(1..=max_dim);
            layers.push(linear(rng, len, o, scale));
            len = o;
        }
    }
    ModelGraph {
        name: "random".into(),
        input_shape,
        layers,
    }
}
