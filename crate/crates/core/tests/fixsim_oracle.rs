mod common;

use common::gen::{linear, lstm, random_graph};
use common::oracle::Oracle;
use nnaccel::fixsim::{infer_fixed, lstm_step};
use nnaccel::model_ir::{ModelGraph, LayerSpec};
use nnaccel::quantizer::{quantize_model, FixedPointFormat, QuantizedModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_input(rng: &mut ChaCha8Rng, model: &QuantizedModel, span: i32) -> Vec<i32> {
    (0..model.input_len()).map(|_| rng.gen_range(-span..span)).collect()
}

fn check_models(fmt: FixedPointFormat, trials: usize, seed: u64) {
    let oracle = Oracle::new(fmt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = (4i64 << fmt.frac_bits()).min(fmt.max_code() as i64) as i32;
    for trial in 0..trials {
        let g = random_graph(&mut rng, 8, 4, 2.0);
        let (m, _) = quantize_model(&g, fmt).unwrap();
        let x = random_input(&mut rng, &m, span);
        let (y, stats) = infer_fixed(&m, &x).unwrap();
        let want = oracle.infer(&m, &x);
        let got: Vec<i64> = y.iter().map(|&c| c as i64).collect();
        assert_eq!(got, want, "trial {trial} at {fmt}: {}", g.to_json());
        assert_eq!(stats.ops, g.op_count(), "trial {trial}");
    }
}

#[test]
fn thousand_models_q16_8() {
    check_models(FixedPointFormat::new(16, 8).unwrap(), 1000, 1);
}

#[test]
fn other_formats() {
    for (n, f) in [(8, 4), (18, 10), (12, 0), (10, 9), (32, 16)] {
        check_models(FixedPointFormat::new(n, f).unwrap(), 150, n as u64 * 100 + f as u64);
    }
}

#[test]
fn random_linear_4x2() {
    let fmt = FixedPointFormat::new(16, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..200 {
        let g = ModelGraph {
            name: "l".into(),
            input_shape: vec![4],
            layers: vec![linear(&mut rng, 4, 2, 1.0)],
        };
        let (m, _) = quantize_model(&g, fmt).unwrap();
        let x = random_input(&mut rng, &m, 256);
        let y: Vec<i64> = infer_fixed(&m, &x).unwrap().0.into_iter().map(i64::from).collect();
        assert_eq!(y, Oracle::new(fmt).infer(&m, &x));
    }
}

#[test]
fn lstm_cell_h3_in2() {
    let fmt = FixedPointFormat::new(16, 8).unwrap();
    let oracle = Oracle::new(fmt);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let g = ModelGraph {
            name: "cell".into(),
            input_shape: vec![1, 2],
            layers: vec![lstm(&mut rng, 2, 3, 1, 1.5)],
        };
        let (m, _) = quantize_model(&g, fmt).unwrap();
        let x = random_input(&mut rng, &m, 512);
        let (h, _) = lstm_step(&m.layers[0], &x, &[0; 3], &[0; 3], fmt).unwrap();
        let h: Vec<i64> = h.into_iter().map(i64::from).collect();
        assert_eq!(h, oracle.infer(&m, &x));
    }
}

#[test]
fn lstm_carries_state_with_saturated_gates() {
    let fmt = FixedPointFormat::new(16, 8).unwrap();
    // f-gate bias +8 saturates to 1.0, i-gate bias -8 to 0.0.
    let mut bias = vec![0.0; 8];
    bias[0] = -8.0;
    bias[1] = -8.0;
    bias[2] = 8.0;
    bias[3] = 8.0;
    let g = ModelGraph {
        name: "carry".into(),
        input_shape: vec![1, 1],
        layers: vec![LayerSpec::Lstm {
            input_size: 1,
            hidden_size: 2,
            steps: 1,
            gate_weights: vec![vec![0.0; 3]; 8],
            gate_bias: bias,
        }],
    };
    let (m, _) = quantize_model(&g, fmt).unwrap();
    let (_, c) = lstm_step(&m.layers[0], &[100], &[0, 0], &[77, -300], fmt).unwrap();
    assert_eq!(c, vec![77, -300]);
}
