use std::fs;
use std::path::{Path, PathBuf};

use nnaccel::estimator::{DeviceProfile, DeviceTable, GenConfig};
use nnaccel::model_ir::{parse_model, ModelError, Severity};
use nnaccel::quantizer::{quantize_model, FixedPointFormat, QuantizationReport};
use nnaccel::rtlgen::{generate_rtl, RtlBundle, RtlError, RtlOptions};

use crate::{read_file, write_file, CliError, Thresholds};

#[derive(Debug, Clone)]
pub struct TranslateArgs {
    pub model: PathBuf,
    pub format: FixedPointFormat,
    pub parallel_macs: usize,
    /// Defaults to the device's clock.
    pub clock_mhz: Option<f64>,
    pub layer_overhead: u64,
    pub device: String,
    /// Device table; the built-in XC7S15 entry when absent.
    pub devices: Option<PathBuf>,
    pub out: PathBuf,
    pub force: bool,
    pub thresholds: Thresholds,
}

#[derive(Debug)]
pub struct TranslateOutcome {
    /// Directory holding the bundle, `<out>/<model name>`.
    pub dir: PathBuf,
    pub bundle: RtlBundle,
    pub quantization: QuantizationReport,
    /// Model diagnostics and generator warnings, for the error stream.
    pub warnings: Vec<String>,
}

fn load_device(args: &TranslateArgs) -> Result<DeviceProfile, CliError> {
    let table = match &args.devices {
        Some(path) => serde_json::from_slice::<DeviceTable>(&read_file(path)?)
            .map_err(|e| CliError::MalformedDocument(format!("{}: {e}", path.display())))?,
        None => DeviceTable::default(),
    };
    let dev = table
        .get(&args.device)
        .map_err(|e| CliError::InvalidArgument(e.to_string()))?
        .clone();
    dev.validate()
        .map_err(|e| CliError::InvalidArgument(e.to_string()))?;
    Ok(dev)
}

/// Model names become directory names; keep them to a safe alphabet.
fn safe_name(name: &str) -> Result<&str, CliError> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
        && name != "."
        && name != "..";
    if ok {
        Ok(name)
    } else {
        Err(CliError::InvalidModel(format!(
            "model name `{name}` must be non-empty and use only letters, digits, `_`, `-` or `.`"
        )))
    }
}

pub fn translate(args: &TranslateArgs) -> Result<TranslateOutcome, CliError> {
    let bytes = read_file(&args.model)?;
    let graph = parse_model(&bytes).map_err(|e| match e {
        ModelError::MalformedDocument(m) => CliError::MalformedDocument(m),
        other => CliError::InvalidModel(other.to_string()),
    })?;
    let name = safe_name(&graph.name)?.to_string();
    let mut warnings: Vec<String> = graph
        .validate()
        .into_iter()
        .filter(|d| d.severity == Severity::Warning)
        .map(|d| d.to_string())
        .collect();

    let device = load_device(args)?;
    let cfg = GenConfig {
        parallel_macs: args.parallel_macs,
        clock_mhz: args.clock_mhz.unwrap_or(device.default_clock_mhz),
        layer_overhead: args.layer_overhead,
    };
    if cfg.parallel_macs == 0 {
        return Err(CliError::InvalidArgument("--p must be at least 1".into()));
    }
    if !(cfg.clock_mhz.is_finite() && cfg.clock_mhz > 0.0) {
        return Err(CliError::InvalidArgument(format!(
            "--clock must be positive, got {}",
            cfg.clock_mhz
        )));
    }

    let (model, quantization) =
        quantize_model(&graph, args.format).map_err(|e| CliError::InvalidModel(e.to_string()))?;
    if quantization.saturations > 0 {
        warnings.push(format!(
            "{} weight codes saturated at {}",
            quantization.saturations, args.format
        ));
    }
    if let Some(max) = args.thresholds.max_quant_mse {
        if quantization.mse > max {
            return Err(CliError::ThresholdExceeded(format!(
                "quantization MSE {:.3e} above max_quant_mse {max:e}",
                quantization.mse
            )));
        }
    }

    let opts = RtlOptions {
        force: args.force,
        vectors: None,
    };
    let bundle = generate_rtl(&model, &cfg, &device, &opts).map_err(|e| match e {
        RtlError::ResourceOverflow { .. } => {
            CliError::ResourceOverflow(format!("{e} on {}; use --force to emit anyway", device.name))
        }
        other => CliError::InvalidArgument(other.to_string()),
    })?;
    warnings.extend(bundle.warnings.iter().cloned());

    let dir = args.out.join(&name);
    write_bundle(&dir, &bundle)?;
    let mut q = serde_json::to_string_pretty(&quantization).expect("report serializes");
    q.push('\n');
    write_file(&args.out.join(format!("{name}.quantization.json")), &q)?;

    Ok(TranslateOutcome {
        dir,
        bundle,
        quantization,
        warnings,
    })
}

/// Replaces the bundle directory so stale files from an earlier model
/// revision never linger next to the new ones.
fn write_bundle(dir: &Path, bundle: &RtlBundle) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: dir.display().to_string(),
        source,
    };
    if dir.exists() {
        for entry in fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            let generated = path
                .extension()
                .map(|e| e == "vhd" || e == "tcl" || e == "json")
                .unwrap_or(false);
            if path.is_file() && generated {
                fs::remove_file(&path).map_err(io)?;
            }
        }
    }
    bundle.write_to(dir).map_err(io)
}
