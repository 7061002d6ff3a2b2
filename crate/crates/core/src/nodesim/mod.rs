//! Simulated power-monitored node.
//!
//! An MCU gates an FPGA through Off → Configuring → Idle ⇄ Running. Eight
//! meter channels integrate the power profile of the current state over
//! simulated time. Energy is kept in picojoules and time in nanoseconds so
//! that integer-mW profiles integrate exactly over any whole-ns dwell.

pub mod protocol;
pub mod server;

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{PerformanceReport, ReportSource};
use crate::fixsim::infer_fixed;
use crate::rtlgen::AcceleratorManifest;
use protocol::*;

pub const CHANNELS: usize = 8;
/// Meter accumulators wrap at 48 bits.
pub const ACC_MASK: u64 = (1 << 48) - 1;
pub const FPGA_CORE_CHANNEL: usize = 1;

pub const DEFAULT_CHANNEL_NAMES: [&str; CHANNELS] = [
    "mcu",
    "fpga_core",
    "fpga_io",
    "sensors",
    "extension",
    "flash",
    "supply_overhead",
    "battery",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NodeError {
    #[error("time step must be positive, got {0} us")]
    NonpositiveStep(f64),
    #[error("channel {0} out of range 0..7")]
    BadChannel(usize),
    #[error("fpga is not configured")]
    FpgaOff,
    #[error("no manifest loaded")]
    NoManifest,
    #[error("input has {got} codes, model expects {expected}")]
    BadInputLength { expected: usize, got: usize },
    #[error("invalid power profile: {0}")]
    InvalidProfile(String),
    #[error("invalid manifest: {0}")]
    BadManifest(String),
    #[error("runs must be at least 1")]
    NoRuns,
    #[error("report: {0}")]
    Report(String),
}

impl NodeError {
    pub fn code(&self) -> ErrCode {
        match self {
            NodeError::FpgaOff => ErrCode::FpgaOff,
            NodeError::NoManifest => ErrCode::NoManifest,
            NodeError::BadChannel(_) => ErrCode::BadChannel,
            _ => ErrCode::BadLength,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FpgaState {
    Off,
    Configuring,
    Idle,
    Running,
}

impl FpgaState {
    pub fn key(self) -> &'static str {
        match self {
            FpgaState::Off => "fpga_off",
            FpgaState::Configuring => "fpga_configuring",
            FpgaState::Idle => "fpga_idle",
            FpgaState::Running => "fpga_running",
        }
    }

    pub const ALL: [FpgaState; 4] = [
        FpgaState::Off,
        FpgaState::Configuring,
        FpgaState::Idle,
        FpgaState::Running,
    ];
}

/// Per-state, per-channel power draw in mW. On disk it is a JSON object
/// mapping `fpga_off`, `fpga_configuring`, `fpga_idle` and `fpga_running`
/// to 8-element arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, Vec<f64>>", into = "BTreeMap<String, Vec<f64>>")]
pub struct PowerProfile {
    states: BTreeMap<FpgaState, [f64; CHANNELS]>,
}

impl TryFrom<BTreeMap<String, Vec<f64>>> for PowerProfile {
    type Error = NodeError;

    fn try_from(raw: BTreeMap<String, Vec<f64>>) -> Result<Self, NodeError> {
        for key in raw.keys() {
            if !FpgaState::ALL.iter().any(|s| s.key() == key) {
                return Err(NodeError::InvalidProfile(format!("unknown state `{key}`")));
            }
        }
        let mut states = BTreeMap::new();
        for s in FpgaState::ALL {
            let row = raw
                .get(s.key())
                .ok_or_else(|| NodeError::InvalidProfile(format!("missing state `{}`", s.key())))?;
            let row: [f64; CHANNELS] = row.as_slice().try_into().map_err(|_| {
                NodeError::InvalidProfile(format!(
                    "`{}` has {} channels, expected {CHANNELS}",
                    s.key(),
                    row.len()
                ))
            })?;
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(NodeError::InvalidProfile(format!(
                    "`{}` has a negative or non-finite entry",
                    s.key()
                )));
            }
            states.insert(s, row);
        }
        Ok(PowerProfile { states })
    }
}

impl From<PowerProfile> for BTreeMap<String, Vec<f64>> {
    fn from(p: PowerProfile) -> Self {
        p.states
            .into_iter()
            .map(|(s, row)| (s.key().to_string(), row.to_vec()))
            .collect()
    }
}

impl PowerProfile {
    pub fn new(rows: [[f64; CHANNELS]; 4]) -> Result<Self, NodeError> {
        let raw = FpgaState::ALL
            .iter()
            .zip(rows)
            .map(|(s, r)| (s.key().to_string(), r.to_vec()))
            .collect::<BTreeMap<_, _>>();
        PowerProfile::try_from(raw)
    }

    /// Profile with a single non-zero channel, handy for exact tests.
    pub fn fpga_only(off: f64, configuring: f64, idle: f64, running: f64) -> Self {
        let row = |p: f64| {
            let mut r = [0.0; CHANNELS];
            r[FPGA_CORE_CHANNEL] = p;
            r
        };
        PowerProfile::new([row(off), row(configuring), row(idle), row(running)])
            .expect("non-negative values")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, NodeError> {
        serde_json::from_slice(bytes).map_err(|e| NodeError::InvalidProfile(e.to_string()))
    }

    pub fn power_mw(&self, state: FpgaState, channel: usize) -> f64 {
        self.states[&state][channel]
    }

    /// FPGA-core draw while an inference runs; the estimator's power input.
    pub fn running_fpga_mw(&self) -> f64 {
        self.power_mw(FpgaState::Running, FPGA_CORE_CHANNEL)
    }
}

/// One meter channel: live accumulators plus the copy taken at the last
/// latch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChannelAccumulator {
    pub energy_pj: u64,
    pub elapsed_ns: u64,
    pub samples: u64,
    pub latched_energy_pj: u64,
    pub latched_elapsed_ns: u64,
    pub latched_samples: u64,
}

impl ChannelAccumulator {
    fn add(&mut self, pj: u64, ns: u64) {
        self.energy_pj = (self.energy_pj + pj) & ACC_MASK;
        self.elapsed_ns += ns;
        self.samples += 1;
    }

    /// Copies the live registers into the latch and clears them.
    pub fn latch(&mut self) {
        self.latched_energy_pj = self.energy_pj;
        self.latched_elapsed_ns = self.elapsed_ns;
        self.latched_samples = self.samples;
        self.energy_pj = 0;
        self.elapsed_ns = 0;
        self.samples = 0;
    }

    /// Average power of the latched window in µW, 0 when nothing was latched.
    pub fn latched_avg_uw(&self) -> u64 {
        if self.latched_samples == 0 || self.latched_elapsed_ns == 0 {
            return 0;
        }
        let num = self.latched_energy_pj as u128 * 1000;
        let den = self.latched_elapsed_ns as u128;
        ((num + den / 2) / den) as u64
    }

    /// Live energy in nJ.
    pub fn energy_nj(&self) -> f64 {
        self.energy_pj as f64 / 1000.0
    }
}

#[derive(Debug, Clone)]
pub struct NodeConfig {
    /// Simulated time spent in `Configuring` on every (re)configuration.
    pub configure_us: u64,
    /// Standard deviation of additive Gaussian noise on every channel.
    pub noise_mw: f64,
    pub seed: u64,
    pub channel_names: [String; CHANNELS],
    /// Flip one bit of every bias in the last weighted layer on load.
    /// Exists to exercise output verification on the host.
    pub tamper: bool,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            configure_us: 1000,
            noise_mw: 0.0,
            seed: 0,
            channel_names: DEFAULT_CHANNEL_NAMES.map(String::from),
            tamper: false,
        }
    }
}

/// What the transport layer should do about periodic reports after a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamControl {
    Start { interval_ms: u16 },
    Stop,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub frame: Frame,
    pub stream: Option<StreamControl>,
}

impl From<Frame> for Reply {
    fn from(frame: Frame) -> Self {
        Reply {
            frame,
            stream: None,
        }
    }
}

pub struct Node {
    profile: PowerProfile,
    config: NodeConfig,
    state: FpgaState,
    manifest: Option<AcceleratorManifest>,
    sim_time_ns: u64,
    channels: [ChannelAccumulator; CHANNELS],
    injected_pj: u128,
    read_out_pj: u128,
    noise: Option<(StdRng, Normal<f64>)>,
}

impl Node {
    pub fn new(profile: PowerProfile, config: NodeConfig) -> Result<Self, NodeError> {
        let noise = if config.noise_mw > 0.0 {
            let dist = Normal::new(0.0, config.noise_mw)
                .map_err(|e| NodeError::InvalidProfile(e.to_string()))?;
            Some((StdRng::seed_from_u64(config.seed), dist))
        } else if config.noise_mw == 0.0 {
            None
        } else {
            return Err(NodeError::InvalidProfile(format!(
                "noise_mw must be >= 0, got {}",
                config.noise_mw
            )));
        };
        Ok(Node {
            profile,
            config,
            state: FpgaState::Off,
            manifest: None,
            sim_time_ns: 0,
            channels: [ChannelAccumulator::default(); CHANNELS],
            injected_pj: 0,
            read_out_pj: 0,
            noise,
        })
    }

    pub fn state(&self) -> FpgaState {
        self.state
    }

    pub fn manifest(&self) -> Option<&AcceleratorManifest> {
        self.manifest.as_ref()
    }

    pub fn sim_time_ns(&self) -> u64 {
        self.sim_time_ns
    }

    pub fn sim_time_us(&self) -> f64 {
        self.sim_time_ns as f64 / 1000.0
    }

    pub fn channel(&self, ch: usize) -> Result<&ChannelAccumulator, NodeError> {
        self.channels.get(ch).ok_or(NodeError::BadChannel(ch))
    }

    pub fn channel_names(&self) -> &[String; CHANNELS] {
        &self.config.channel_names
    }

    /// Energy integrated since start, in pJ, without wraparound.
    pub fn injected_pj(&self) -> u128 {
        self.injected_pj
    }

    /// Energy handed out through latches since start, in pJ.
    pub fn read_out_pj(&self) -> u128 {
        self.read_out_pj
    }

    /// Energy still sitting in the live accumulators, in pJ.
    pub fn pending_pj(&self) -> u128 {
        self.channels.iter().map(|c| c.energy_pj as u128).sum()
    }

    /// Advances simulated time by `dt_us` in the current state.
    pub fn step_time(&mut self, dt_us: f64) -> Result<(), NodeError> {
        let ns = (dt_us * 1000.0).round();
        if dt_us.is_nan() || dt_us <= 0.0 || ns < 1.0 {
            return Err(NodeError::NonpositiveStep(dt_us));
        }
        self.step_ns(ns as u64);
        Ok(())
    }

    /// Advances simulated time by `ns` nanoseconds in the current state.
    pub fn step_ns(&mut self, ns: u64) {
        if ns == 0 {
            return;
        }
        for c in 0..CHANNELS {
            let mut mw = self.profile.power_mw(self.state, c);
            if let Some((rng, dist)) = &mut self.noise {
                mw = (mw + dist.sample(rng)).max(0.0);
            }
            let pj = (mw * ns as f64).round() as u64;
            self.channels[c].add(pj, ns);
            self.injected_pj += pj as u128;
        }
        self.sim_time_ns += ns;
    }

    /// Latches and clears one channel; returns `(avg_uw, samples)`.
    pub fn read_channel(&mut self, ch: usize) -> Result<(u64, u64), NodeError> {
        let acc = self.channels.get_mut(ch).ok_or(NodeError::BadChannel(ch))?;
        acc.latch();
        self.read_out_pj += acc.latched_energy_pj as u128;
        Ok((acc.latched_avg_uw(), acc.latched_samples))
    }

    /// Latches every channel at once, as a stream tick does.
    pub fn read_all(&mut self) -> [u64; CHANNELS] {
        let mut out = [0; CHANNELS];
        for (c, slot) in out.iter_mut().enumerate() {
            *slot = self.read_channel(c).expect("index in range").0;
        }
        out
    }

    fn configure(&mut self) {
        self.state = FpgaState::Configuring;
        self.step_ns(self.config.configure_us * 1000);
        self.state = FpgaState::Idle;
    }

    pub fn fpga_on(&mut self) {
        if self.state == FpgaState::Off {
            self.configure();
        }
    }

    pub fn fpga_off(&mut self) {
        self.state = FpgaState::Off;
    }

    /// Accepts a manifest; reconfigures the fabric if it is powered.
    pub fn load_manifest(&mut self, mut manifest: AcceleratorManifest) -> Result<(), NodeError> {
        manifest.model.check().map_err(NodeError::BadManifest)?;
        if !(manifest.clock_mhz.is_finite() && manifest.clock_mhz > 0.0) {
            return Err(NodeError::BadManifest(format!(
                "clock must be positive, got {}",
                manifest.clock_mhz
            )));
        }
        if manifest.input_len != manifest.model.input_len()
            || manifest.output_len != manifest.model.output_len()
        {
            return Err(NodeError::BadManifest(
                "declared input/output length disagrees with the model".into(),
            ));
        }
        if self.config.tamper {
            tamper_model(&mut manifest);
        }
        self.manifest = Some(manifest);
        if self.state != FpgaState::Off {
            self.configure();
        }
        Ok(())
    }

    /// Inference latency in ns implied by the loaded manifest.
    fn inference_ns(m: &AcceleratorManifest) -> u64 {
        (m.cycles_per_inference as f64 * 1000.0 / m.clock_mhz).round() as u64
    }

    /// Runs one inference: Idle → Running for the manifest latency → Idle.
    pub fn run_inference(&mut self, input: &[i32]) -> Result<(Vec<i32>, f64), NodeError> {
        let (out, ns) = self.infer_ns(input)?;
        Ok((out, ns as f64 / 1000.0))
    }

    fn infer_ns(&mut self, input: &[i32]) -> Result<(Vec<i32>, u64), NodeError> {
        if matches!(self.state, FpgaState::Off | FpgaState::Configuring) {
            return Err(NodeError::FpgaOff);
        }
        let m = self.manifest.as_ref().ok_or(NodeError::NoManifest)?;
        if input.len() != m.input_len {
            return Err(NodeError::BadInputLength {
                expected: m.input_len,
                got: input.len(),
            });
        }
        let (out, _) = infer_fixed(&m.model, input).map_err(|e| NodeError::BadManifest(e.to_string()))?;
        let ns = Self::inference_ns(m);
        self.state = FpgaState::Running;
        self.step_ns(ns);
        self.state = FpgaState::Idle;
        Ok((out, ns))
    }

    /// Runs `runs` inferences on zero input bracketed by channel reads.
    pub fn measure_report(&mut self, runs: usize) -> Result<PerformanceReport, NodeError> {
        if runs == 0 {
            return Err(NodeError::NoRuns);
        }
        let m = self.manifest.as_ref().ok_or(NodeError::NoManifest)?;
        let zeros = vec![0; m.input_len];
        let ops = m.ops;
        self.read_all();
        let mut total_ns = 0u64;
        for _ in 0..runs {
            total_ns += self.infer_ns(&zeros)?.1;
        }
        let uw = self.read_all();
        let channels: Vec<f64> = uw.iter().map(|&u| u as f64 / 1000.0).collect();
        PerformanceReport::from_measurements(
            ReportSource::Measured,
            channels[FPGA_CORE_CHANNEL],
            total_ns as f64 / runs as f64 / 1000.0,
            ops,
            Some(channels),
        )
        .map_err(|e| NodeError::Report(e.to_string()))
    }

    /// One stream sample: every channel's average since its last latch.
    pub fn stream_tick(&mut self) -> Frame {
        let uw = self.read_all();
        let mut payload = Vec::with_capacity(4 * CHANNELS);
        for u in uw {
            payload.extend_from_slice(&(u.min(u32::MAX as u64) as u32).to_le_bytes());
        }
        Frame::new(RSP_STREAM, payload)
    }

    /// Decodes and executes one wire frame. Never panics on any input.
    pub fn handle_frame(&mut self, bytes: &[u8]) -> Reply {
        match Frame::decode(bytes) {
            Ok(frame) => self.handle(&frame),
            Err(code) => Frame::error(code).into(),
        }
    }

    pub fn handle(&mut self, frame: &Frame) -> Reply {
        match self.dispatch(frame) {
            Ok(reply) => reply,
            Err(code) => Frame::error(code).into(),
        }
    }

    fn dispatch(&mut self, frame: &Frame) -> Result<Reply, ErrCode> {
        let p = frame.payload.as_slice();
        let expect_len = |n: usize| if p.len() == n { Ok(()) } else { Err(ErrCode::BadLength) };
        let ack = || Frame::new(RSP_ACK, vec![]).into();
        match frame.cmd {
            CMD_PING => {
                expect_len(0)?;
                Ok(Frame::new(RSP_PONG, vec![]).into())
            }
            CMD_LOAD_MANIFEST => {
                let m = AcceleratorManifest::from_json(p).map_err(|_| ErrCode::BadLength)?;
                self.load_manifest(m).map_err(|e| e.code())?;
                Ok(ack())
            }
            CMD_FPGA_ON => {
                expect_len(0)?;
                self.fpga_on();
                Ok(ack())
            }
            CMD_FPGA_OFF => {
                expect_len(0)?;
                self.fpga_off();
                Ok(ack())
            }
            CMD_INFER => {
                let (codes, rest) = decode_codes(p).ok_or(ErrCode::BadLength)?;
                if !rest.is_empty() {
                    return Err(ErrCode::BadLength);
                }
                let (out, ns) = self.infer_ns(&codes).map_err(|e| e.code())?;
                let mut payload = encode_codes(&out);
                payload.extend_from_slice(&(ns.min(u32::MAX as u64) as u32).to_le_bytes());
                Ok(Frame::new(RSP_INFER, payload).into())
            }
            CMD_READ_CH => {
                expect_len(1)?;
                let (uw, samples) = self.read_channel(p[0] as usize).map_err(|e| e.code())?;
                let mut payload = Vec::with_capacity(8);
                payload.extend_from_slice(&(uw.min(u32::MAX as u64) as u32).to_le_bytes());
                payload.extend_from_slice(&(samples.min(u32::MAX as u64) as u32).to_le_bytes());
                Ok(Frame::new(RSP_CHANNEL, payload).into())
            }
            CMD_STREAM_START => {
                expect_len(2)?;
                let interval_ms = le_u16(p);
                if interval_ms == 0 {
                    return Err(ErrCode::BadLength);
                }
                Ok(Reply {
                    frame: self.stream_tick(),
                    stream: Some(StreamControl::Start { interval_ms }),
                })
            }
            CMD_STREAM_STOP => {
                expect_len(0)?;
                Ok(Reply {
                    frame: Frame::new(RSP_ACK, vec![]),
                    stream: Some(StreamControl::Stop),
                })
            }
            _ => Err(ErrCode::UnknownCommand),
        }
    }
}

fn tamper_model(m: &mut AcceleratorManifest) {
    use crate::quantizer::QuantizedLayer;
    let bit = 1i32 << m.model.format.frac_bits().min(30);
    let fmt = m.model.format;
    if let Some(bias) = m.model.layers.iter_mut().rev().find_map(|l| match l {
        QuantizedLayer::Linear { bias, .. } => Some(bias),
        QuantizedLayer::Lstm { gate_bias, .. } => Some(gate_bias),
        QuantizedLayer::Activation { .. } => None,
    }) {
        for c in &mut bias.codes {
            *c = fmt.saturate((*c ^ bit) as i128).0;
        }
    }
}
