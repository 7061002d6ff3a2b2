//! Toolchain for turning small trained networks into fixed-point RTL
//! accelerators, estimating their cost and measuring them on a simulated
//! power-monitored node.
//!
//! The pipeline is `model_ir` → `quantizer` → `fixsim` / `rtlgen` →
//! `estimator`, with `nodesim` standing in for the hardware.

pub mod estimator;
pub mod fixsim;
pub mod model_ir;
pub mod nodesim;
pub mod quantizer;
pub mod rtlgen;

pub use estimator::{
    DeviceProfile, GenConfig, PerformanceReport, ReportSource, ResourceEstimate,
};
pub use fixsim::{infer_fixed, InferenceStats};
pub use model_ir::{infer_float, op_count, parse_model, validate, Diagnostic, LayerSpec, ModelGraph};
pub use quantizer::{quantize_model, FixedPointFormat, QuantizedModel, QuantizationReport};
pub use rtlgen::{generate_rtl, AcceleratorManifest, RtlBundle, RtlError, RtlOptions};
pub use nodesim::{Node, NodeConfig, PowerProfile};
