use std::path::PathBuf;

use nnaccel::nodesim::server::{spawn_server, ServerHandle, ServerOptions};
use nnaccel::nodesim::{Node, NodeConfig};

use crate::estimate::load_profile;
use crate::CliError;

#[derive(Debug, Clone)]
pub struct NodeSimArgs {
    pub bind: String,
    pub port: u16,
    pub power_profile: PathBuf,
    pub noise_mw: f64,
    pub seed: u64,
    pub configure_us: u64,
    pub wall_clock: bool,
    pub tamper: bool,
}

/// Starts the simulated node on background threads.
pub fn start_node_sim(args: &NodeSimArgs) -> Result<ServerHandle, CliError> {
    let profile = load_profile(&args.power_profile)?;
    if !(args.noise_mw.is_finite() && args.noise_mw >= 0.0) {
        return Err(CliError::InvalidArgument(format!(
            "--noise-mw must be non-negative, got {}",
            args.noise_mw
        )));
    }
    let node = Node::new(
        profile,
        NodeConfig {
            configure_us: args.configure_us,
            noise_mw: args.noise_mw,
            seed: args.seed,
            tamper: args.tamper,
            ..NodeConfig::default()
        },
    )
    .map_err(|e| CliError::InvalidArgument(e.to_string()))?;
    spawn_server(
        (args.bind.as_str(), args.port),
        node,
        ServerOptions {
            wall_clock: args.wall_clock,
        },
    )
    .map_err(|e| CliError::ConnectionFailed(format!("cannot listen on {}:{}: {e}", args.bind, args.port)))
}
