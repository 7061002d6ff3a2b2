//! Manifests and nodes for simulator tests.

#![allow(dead_code)]

use nnaccel::estimator::{DeviceProfile, GenConfig};
use nnaccel::model_ir::{LayerSpec, ModelGraph};
use nnaccel::nodesim::{Node, NodeConfig, PowerProfile};
use nnaccel::quantizer::{quantize_model, FixedPointFormat};
use nnaccel::rtlgen::{generate_rtl, AcceleratorManifest, RtlOptions};

/// 1→1 identity Linear whose manifest claims `cycles` at 100 MHz.
pub fn identity_manifest(cycles: u64) -> AcceleratorManifest {
    let g = ModelGraph {
        name: "identity".into(),
        input_shape: vec![1],
        layers: vec![LayerSpec::Linear {
            in_features: 1,
            out_features: 1,
            weights: vec![vec![1.0]],
            bias: vec![0.0],
        }],
    };
    let q = quantize_model(&g, FixedPointFormat::default()).unwrap().0;
    let mut m = generate_rtl(&q, &GenConfig::default(), &DeviceProfile::xc7s15(), &RtlOptions::default())
        .unwrap()
        .manifest;
    m.cycles_per_inference = cycles;
    m
}

pub fn node(profile: PowerProfile, configure_us: u64) -> Node {
    Node::new(
        profile,
        NodeConfig {
            configure_us,
            ..NodeConfig::default()
        },
    )
    .unwrap()
}
