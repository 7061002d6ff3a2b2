use std::path::PathBuf;
use std::time::Duration;

use nnaccel::estimator::{PerformanceReport, ReportSource};
use nnaccel::fixsim::infer_fixed;
use nnaccel::nodesim::protocol::MAX_PAYLOAD;
use nnaccel::nodesim::server::{ClientError, NodeClient};
use nnaccel::nodesim::{CHANNELS, FPGA_CORE_CHANNEL};
use nnaccel::rtlgen::{golden_vectors, DEFAULT_VECTOR_SEED};

use crate::estimate::load_manifest;
use crate::{report_json, write_file, CliError};

#[derive(Debug, Clone)]
pub struct MeasureArgs {
    pub addr: String,
    pub build: PathBuf,
    pub runs: usize,
    /// Report destination; `<build>/report_measured.json` when absent.
    pub out: Option<PathBuf>,
    pub connect_timeout: Duration,
}

#[derive(Debug, Clone)]
pub struct MeasureOutcome {
    pub report: PerformanceReport,
    /// Per-inference latency reported by the node, in ns.
    pub latencies_ns: Vec<u32>,
}

fn device(e: ClientError) -> CliError {
    match e {
        ClientError::Connect(e) => CliError::ConnectionFailed(e.to_string()),
        ClientError::Io(e) => CliError::ConnectionFailed(e.to_string()),
        ClientError::Closed => CliError::ConnectionFailed("node closed the connection".into()),
        other => CliError::DeviceError(other.to_string()),
    }
}

/// Loads the manifest onto the node, runs `runs`
/// inferences bracketed by meter reads and checks every returned output
/// against the local fixed-point interpreter.
pub fn measure(args: &MeasureArgs) -> Result<MeasureOutcome, CliError> {
    if args.runs == 0 {
        return Err(CliError::InvalidArgument("--runs must be at least 1".into()));
    }
    let manifest = load_manifest(&args.build)?;
    let payload = manifest.to_json_compact();
    if payload.len() > MAX_PAYLOAD {
        return Err(CliError::InvalidArgument(format!(
            "manifest is {} bytes, the protocol carries at most {MAX_PAYLOAD}",
            payload.len()
        )));
    }
    let mut c = NodeClient::connect(args.addr.as_str(), args.connect_timeout).map_err(|e| match e {
        ClientError::Connect(e) => CliError::ConnectionFailed(format!("{}: {e}", args.addr)),
        other => device(other),
    })?;
    c.ping().map_err(device)?;
    c.load_manifest(payload.as_bytes()).map_err(device)?;
    c.fpga_on().map_err(device)?;

    let vectors = golden_vectors(&manifest.model, args.runs, DEFAULT_VECTOR_SEED);
    // Latch and discard whatever accumulated before the batch.
    for ch in 0..CHANNELS {
        c.read_channel(ch as u8).map_err(device)?;
    }
    let mut outputs = Vec::with_capacity(args.runs);
    let mut latencies_ns = Vec::with_capacity(args.runs);
    for v in &vectors {
        let (y, ns) = c.infer(v).map_err(device)?;
        outputs.push(y);
        latencies_ns.push(ns);
    }
    let mut channels_mw = Vec::with_capacity(CHANNELS);
    for ch in 0..CHANNELS {
        let (uw, _) = c.read_channel(ch as u8).map_err(device)?;
        channels_mw.push(uw as f64 / 1000.0);
    }

    for (k, (v, got)) in vectors.iter().zip(&outputs).enumerate() {
        let (want, _) = infer_fixed(&manifest.model, v)
            .map_err(|e| CliError::InvalidModel(e.to_string()))?;
        if *got != want {
            return Err(CliError::OutputMismatch(format!(
                "run {k}: node returned {got:?}, local interpreter {want:?}"
            )));
        }
    }

    let total_ns: u64 = latencies_ns.iter().map(|&n| n as u64).sum();
    let report = PerformanceReport::from_measurements(
        ReportSource::Measured,
        channels_mw[FPGA_CORE_CHANNEL],
        total_ns as f64 / args.runs as f64 / 1000.0,
        manifest.ops,
        Some(channels_mw),
    )
    .map_err(|e| CliError::DeviceError(format!("unusable measurement: {e}")))?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.build.join("report_measured.json"));
    write_file(&out, &report_json(&report))?;
    Ok(MeasureOutcome {
        report,
        latencies_ns,
    })
}
