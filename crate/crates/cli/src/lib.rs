//! Workflow commands behind the `nnaccel` binary: translate a model into an
//! RTL bundle, estimate it, measure it on a (simulated) node and compare the
//! two reports.
//!
//! Every command returns `Result<_, CliError>`; [`CliError::exit_code`] maps
//! failures onto the documented exit codes.

mod compare;
mod estimate;
mod measure;
mod node;
mod translate;

use std::fs;
use std::path::Path;

use nnaccel::estimator::PerformanceReport;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use compare::{compare, render_table, Comparison, MetricDelta};
pub use estimate::{estimate, EstimateArgs};
pub use measure::{measure, MeasureArgs, MeasureOutcome};
pub use node::{start_node_sim, NodeSimArgs};
pub use translate::{translate, TranslateArgs, TranslateOutcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;
pub const EXIT_CONNECTIVITY: i32 = 4;
pub const EXIT_MISMATCH: i32 = 5;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("MalformedDocument: {0}")]
    MalformedDocument(String),
    #[error("InvalidModel: {0}")]
    InvalidModel(String),
    #[error("InvalidArgument: {0}")]
    InvalidArgument(String),
    #[error("MissingManifest: no {MANIFEST_FILE} in {0}")]
    MissingManifest(String),
    #[error("ResourceOverflow: {0}")]
    ResourceOverflow(String),
    #[error("ConnectionFailed: {0}")]
    ConnectionFailed(String),
    #[error("DeviceError: {0}")]
    DeviceError(String),
    #[error("OutputMismatch: {0}")]
    OutputMismatch(String),
    #[error("OpsMismatch: estimated report has {estimated} ops, measured has {measured}; pass --allow-ops-mismatch to compare anyway")]
    OpsMismatch { estimated: u64, measured: u64 },
    #[error("ThresholdExceeded: {0}")]
    ThresholdExceeded(String),
    #[error("Io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ThresholdExceeded(_) => EXIT_FAIL,
            CliError::ResourceOverflow(_) => EXIT_RESOURCE,
            CliError::ConnectionFailed(_) | CliError::DeviceError(_) => EXIT_CONNECTIVITY,
            CliError::OutputMismatch(_) => EXIT_MISMATCH,
            _ => EXIT_INPUT,
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Acceptance limits for the optimization loop. Absent limits always pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default)]
    pub max_quant_mse: Option<f64>,
    #[serde(default)]
    pub min_gop_per_j: Option<f64>,
    #[serde(default)]
    pub max_time_us: Option<f64>,
}

impl Thresholds {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let t: Thresholds = serde_json::from_slice(&read_file(path)?)
            .map_err(|e| CliError::MalformedDocument(format!("{}: {e}", path.display())))?;
        for (name, v) in [
            ("max_quant_mse", t.max_quant_mse),
            ("min_gop_per_j", t.min_gop_per_j),
            ("max_time_us", t.max_time_us),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(CliError::InvalidArgument(format!(
                        "threshold {name} must be a non-negative number, got {v}"
                    )));
                }
            }
        }
        Ok(t)
    }

    /// Names of the limits `report` violates.
    pub fn violations(&self, report: &PerformanceReport) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(min) = self.min_gop_per_j {
            if report.gop_per_j < min {
                out.push(format!("efficiency {:.4} GOP/J below {min}", report.gop_per_j));
            }
        }
        if let Some(max) = self.max_time_us {
            if report.time_per_inference_us > max {
                out.push(format!(
                    "time per inference {:.4} us above {max}",
                    report.time_per_inference_us
                ));
            }
        }
        out
    }
}

pub fn load_report(path: &Path) -> Result<PerformanceReport, CliError> {
    serde_json::from_slice(&read_file(path)?)
        .map_err(|e| CliError::MalformedDocument(format!("{}: {e}", path.display())))
}

/// Report JSON as written to disk: pretty-printed with a trailing newline.
pub fn report_json(report: &PerformanceReport) -> String {
    let mut s = report.to_json();
    s.push('\n');
    s
}
