//! RTL bundle generation.
//!
//! A bundle holds one entity per layer, one ROM package per weighted layer,
//! the `top` chain, a self-checking `tb_top`, a vendor synthesis stub and the
//! accelerator manifest. Output is a pure function of the model, the
//! generation config and the stimulus vectors.

mod check;
mod rom;
mod testbench;
mod vhdl;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use check::check_structure;
pub use rom::{literal, parse_literals, render_rom, sign_extend};
pub use testbench::{
    generate_testbench, golden_vectors, parse_expected, parse_stimuli, vector_literal,
};

use crate::estimator::{cycle_count, resource_estimate, DeviceProfile, GenConfig, ResourceEstimate};
use crate::quantizer::{FixedPointFormat, QuantizedLayer, QuantizedModel};
use vhdl::{Ctx, Stage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RtlError {
    #[error("{resource} estimate {need} exceeds device capacity {have}")]
    ResourceOverflow {
        resource: String,
        need: u64,
        have: u64,
    },
    #[error("testbench needs at least one stimulus vector")]
    NoVectors,
    #[error("input length {got} does not match model input length {expected}")]
    InputLengthMismatch { expected: usize, got: usize },
    #[error("golden model evaluation failed: {0}")]
    Golden(String),
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("model has no layers")]
    EmptyModel,
}

/// Machine-readable summary of a generated accelerator. The node simulator
/// loads this in place of a bitfile, so it also carries the quantized model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceleratorManifest {
    pub top_entity: String,
    pub model_name: String,
    pub format: FixedPointFormat,
    pub clock_mhz: f64,
    pub parallel_macs: usize,
    pub layer_overhead: u64,
    pub cycles_per_inference: u64,
    pub ops: u64,
    pub resources: ResourceEstimate,
    pub device: String,
    pub input_len: usize,
    pub output_len: usize,
    pub model: QuantizedModel,
}

impl AcceleratorManifest {
    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest always serializes");
        s.push('\n');
        s
    }

    pub fn to_json_compact(&self) -> String {
        serde_json::to_string(self).expect("manifest always serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            parallel_macs: self.parallel_macs,
            clock_mhz: self.clock_mhz,
            layer_overhead: self.layer_overhead,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RtlBundle {
    pub files: BTreeMap<String, String>,
    pub manifest: AcceleratorManifest,
    pub warnings: Vec<String>,
}

impl RtlBundle {
    /// Writes every file into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for (name, text) in &self.files {
            fs::write(dir.join(name), text)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RtlOptions {
    /// Emit the bundle even if the resource estimate overflows the device.
    pub force: bool,
    /// Testbench stimuli; defaults to [`golden_vectors`] with 4 vectors.
    pub vectors: Option<Vec<Vec<i32>>>,
}

pub const DEFAULT_VECTOR_SEED: u64 = 0x0005_EED0_FA11;

fn layer_name(idx: usize, layer: &QuantizedLayer) -> String {
    format!("{}{idx}", layer.kind_name())
}

pub fn generate_rtl(
    model: &QuantizedModel,
    cfg: &GenConfig,
    device: &DeviceProfile,
    opts: &RtlOptions,
) -> Result<RtlBundle, RtlError> {
    if cfg.parallel_macs == 0 {
        return Err(RtlError::InvalidConfig("parallel_macs must be at least 1".into()));
    }
    if cfg.clock_mhz.is_nan() || cfg.clock_mhz <= 0.0 {
        return Err(RtlError::InvalidConfig(format!(
            "clock must be positive, got {} MHz",
            cfg.clock_mhz
        )));
    }
    if model.layers.is_empty() {
        return Err(RtlError::EmptyModel);
    }

    let mut warnings = Vec::new();
    let (resources, fits) = resource_estimate(model, cfg, device);
    if !fits {
        let (resource, need, have) = resources
            .first_overflow(&device.capacity)
            .expect("a non-fitting estimate has an overflowing resource");
        if !opts.force {
            return Err(RtlError::ResourceOverflow {
                resource: resource.to_string(),
                need,
                have,
            });
        }
        warnings.push(format!(
            "{resource} estimate {need} exceeds {} capacity {have}",
            device.name
        ));
    }
    if cfg.layer_overhead < 2 {
        warnings.push(format!(
            "layer_overhead {} is below the 2-cycle handshake minimum; RTL latency will exceed the cycle model",
            cfg.layer_overhead
        ));
    }

    let ctx = Ctx {
        fmt: model.format,
        parallel: cfg.parallel_macs,
        overhead: cfg.layer_overhead,
    };
    let mut files = BTreeMap::new();
    let mut sources = Vec::new();
    let mut stages = Vec::new();
    for ((idx, layer), shape) in model.layers.iter().enumerate().zip(model.shapes()) {
        let name = layer_name(idx, layer);
        let text = match layer {
            QuantizedLayer::Linear {
                in_features,
                out_features,
                weights,
                bias,
            } => {
                let rom = format!("rom_{name}.vhd");
                files.insert(rom.clone(), vhdl::rom_package(&name, weights, bias));
                sources.push(rom);
                vhdl::linear_entity(&name, *in_features, *out_features, &ctx)
            }
            QuantizedLayer::Lstm {
                input_size,
                hidden_size,
                steps,
                gate_weights,
                gate_bias,
            } => {
                let rom = format!("rom_{name}.vhd");
                files.insert(rom.clone(), vhdl::rom_package(&name, gate_weights, gate_bias));
                sources.push(rom);
                vhdl::lstm_entity(&name, *input_size, *hidden_size, *steps, &ctx)
            }
            QuantizedLayer::Activation { function } => {
                vhdl::activation_entity(&name, *function, shape.input_len(), &ctx)
            }
        };
        let file = format!("{name}.vhd");
        files.insert(file.clone(), text);
        sources.push(file);
        stages.push(Stage {
            entity: name,
            out_len: shape.output_len(),
        });
    }
    files.insert("top.vhd".into(), vhdl::top_entity(model.input_len(), &stages, &ctx));
    sources.push("top.vhd".into());

    let vectors = match &opts.vectors {
        Some(v) => v.clone(),
        None => golden_vectors(model, 4, DEFAULT_VECTOR_SEED),
    };
    files.insert("tb_top.vhd".into(), generate_testbench(model, cfg, &vectors)?);

    let part = device.part.clone().unwrap_or_else(|| device.name.clone());
    files.insert(
        "synth.tcl".into(),
        vhdl::synth_script(&model.name, &sources, &part, cfg.clock_mhz),
    );

    let manifest = AcceleratorManifest {
        top_entity: "top".into(),
        model_name: model.name.clone(),
        format: model.format,
        clock_mhz: cfg.clock_mhz,
        parallel_macs: cfg.parallel_macs,
        layer_overhead: cfg.layer_overhead,
        cycles_per_inference: cycle_count(model, cfg),
        ops: model.op_count(),
        resources,
        device: device.name.clone(),
        input_len: model.input_len(),
        output_len: model.output_len(),
        model: model.clone(),
    };
    files.insert("manifest.json".into(), manifest.to_json_pretty());

    Ok(RtlBundle {
        files,
        manifest,
        warnings,
    })
}
