use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use nnaccel::quantizer::FixedPointFormat;
use nnaccel::nodesim::server::DEFAULT_PORT;
use nnaccel_cli::*;

#[derive(Parser)]
#[command(name = "nnaccel", version, about = "Translate, estimate and measure fixed-point neural network accelerators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize a model and emit its RTL bundle under OUT/<model name>/.
    Translate {
        #[arg(long)]
        model: PathBuf,
        /// Fixed-point format as total.fractional bits, e.g. 16.8.
        #[arg(long, default_value = "16.8")]
        fixed: FixedPointFormat,
        /// Parallel MAC units per layer.
        #[arg(long, default_value_t = 1)]
        p: usize,
        /// Clock in MHz; defaults to the device clock.
        #[arg(long)]
        clock: Option<f64>,
        /// Fixed per-layer handshake overhead in cycles.
        #[arg(long, visible_alias = "k", alias = "layer-overhead", default_value_t = 10)]
        overhead: u64,
        #[arg(long, default_value = "xc7s15")]
        device: String,
        /// Device capacity table (JSON); the built-in XC7S15 when omitted.
        #[arg(long)]
        devices: Option<PathBuf>,
        #[arg(long, default_value = "build")]
        out: PathBuf,
        /// Emit the bundle even if it does not fit the device.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        thresholds: Option<PathBuf>,
    },
    /// Estimated performance report from a bundle's manifest.
    Estimate {
        #[arg(long)]
        build: PathBuf,
        #[arg(long)]
        power_profile: PathBuf,
        /// Report path; BUILD/report_estimated.json by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the simulated node until interrupted.
    NodeSim {
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long)]
        power_profile: PathBuf,
        /// Standard deviation of Gaussian noise added to every channel.
        #[arg(long, default_value_t = 0.0)]
        noise_mw: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Simulated time spent configuring the FPGA.
        #[arg(long, default_value_t = 1000)]
        configure_us: u64,
        /// Let simulated time follow the wall clock between commands.
        #[arg(long)]
        wall_clock: bool,
        /// Corrupt the loaded model (exercises host-side output checks).
        #[arg(long, hide = true)]
        tamper: bool,
    },
    /// Measure a bundle on a running node.
    Measure {
        #[arg(long)]
        addr: String,
        #[arg(long)]
        build: PathBuf,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// Report path; BUILD/report_measured.json by default.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 5000)]
        connect_timeout_ms: u64,
    },
    /// Compare an estimated and a measured report.
    Compare {
        estimated: PathBuf,
        measured: PathBuf,
        #[arg(long)]
        thresholds: Option<PathBuf>,
        /// Compare reports even when their op counts differ.
        #[arg(long)]
        allow_ops_mismatch: bool,
    },
}

fn thresholds(path: Option<PathBuf>) -> Result<Thresholds, CliError> {
    path.map(|p| Thresholds::load(&p))
        .transpose()
        .map(Option::unwrap_or_default)
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Translate {
            model,
            fixed,
            p,
            clock,
            overhead,
            device,
            devices,
            out,
            force,
            thresholds: t,
        } => {
            let args = TranslateArgs {
                model,
                format: fixed,
                parallel_macs: p,
                clock_mhz: clock,
                layer_overhead: overhead,
                device,
                devices,
                out,
                force,
                thresholds: thresholds(t)?,
            };
            let o = translate(&args)?;
            for w in &o.warnings {
                eprintln!("warning: {w}");
            }
            let m = &o.bundle.manifest;
            println!("wrote {} files to {}", o.bundle.files.len(), o.dir.display());
            println!(
                "format {}  mse {:.3e}  max error {:.3e}  saturations {}",
                m.format, o.quantization.mse, o.quantization.max_abs_error, o.quantization.saturations
            );
            println!(
                "cycles {}  ops {}  luts {}  ffs {}  bram_bits {}  dsp {}",
                m.cycles_per_inference,
                m.ops,
                m.resources.luts,
                m.resources.ffs,
                m.resources.bram_bits,
                m.resources.dsp_slices
            );
            Ok(EXIT_OK)
        }
        Command::Estimate {
            build,
            power_profile,
            out,
        } => {
            let r = estimate(&EstimateArgs {
                build,
                power_profile,
                out,
            })?;
            print!("{}", report_json(&r));
            Ok(EXIT_OK)
        }
        Command::NodeSim {
            port,
            bind,
            power_profile,
            noise_mw,
            seed,
            configure_us,
            wall_clock,
            tamper,
        } => {
            let server = start_node_sim(&NodeSimArgs {
                bind,
                port,
                power_profile,
                noise_mw,
                seed,
                configure_us,
                wall_clock,
                tamper,
            })?;
            println!("listening on {}", server.local_addr());
            server.wait();
            Ok(EXIT_OK)
        }
        Command::Measure {
            addr,
            build,
            runs,
            out,
            connect_timeout_ms,
        } => {
            let o = measure(&MeasureArgs {
                addr,
                build,
                runs,
                out,
                connect_timeout: Duration::from_millis(connect_timeout_ms),
            })?;
            print!("{}", report_json(&o.report));
            Ok(EXIT_OK)
        }
        Command::Compare {
            estimated,
            measured,
            thresholds: t,
            allow_ops_mismatch,
        } => {
            let e = load_report(&estimated)?;
            let m = load_report(&measured)?;
            let c = compare(&e, &m, &thresholds(t)?, allow_ops_mismatch)?;
            print!("{}", render_table(&c));
            Ok(if c.pass() { EXIT_OK } else { EXIT_FAIL })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
