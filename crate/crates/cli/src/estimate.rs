use std::path::{Path, PathBuf};

use nnaccel::estimator::{report_from_cycles, PerformanceReport};
use nnaccel::nodesim::PowerProfile;
use nnaccel::rtlgen::AcceleratorManifest;

use crate::{read_file, report_json, write_file, CliError, MANIFEST_FILE};

#[derive(Debug, Clone)]
pub struct EstimateArgs {
    /// Bundle directory written by `translate`.
    pub build: PathBuf,
    pub power_profile: PathBuf,
    /// Report destination; `<build>/report_estimated.json` when absent.
    pub out: Option<PathBuf>,
}

pub(crate) fn load_manifest(build: &Path) -> Result<AcceleratorManifest, CliError> {
    let path = build.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(CliError::MissingManifest(build.display().to_string()));
    }
    AcceleratorManifest::from_json(&read_file(&path)?)
        .map_err(|e| CliError::MalformedDocument(format!("{}: {e}", path.display())))
}

pub(crate) fn load_profile(path: &Path) -> Result<PowerProfile, CliError> {
    PowerProfile::from_json(&read_file(path)?)
        .map_err(|e| CliError::MalformedDocument(format!("{}: {e}", path.display())))
}

/// Estimated report: manifest latency at the profile's running FPGA power.
pub fn estimate(args: &EstimateArgs) -> Result<PerformanceReport, CliError> {
    let manifest = load_manifest(&args.build)?;
    let profile = load_profile(&args.power_profile)?;
    let report = report_from_cycles(
        manifest.cycles_per_inference,
        manifest.clock_mhz,
        manifest.ops,
        profile.running_fpga_mw(),
    )
    .map_err(|e| CliError::InvalidArgument(e.to_string()))?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.build.join("report_estimated.json"));
    write_file(&out, &report_json(&report))?;
    Ok(report)
}
