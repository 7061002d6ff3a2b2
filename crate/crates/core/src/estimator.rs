//! Cycle, time, energy, efficiency and resource estimates for a generated
//! accelerator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_ir::LayerShape;
use crate::quantizer::QuantizedModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("clock must be positive, got {0} MHz")]
    NonpositiveClock(f64),
    #[error("negative input: {0}")]
    NegativeInput(String),
    #[error("energy per inference is zero")]
    ZeroEnergy,
    #[error("unknown device profile `{0}`")]
    UnknownDevice(String),
    #[error("invalid device profile: {0}")]
    InvalidDevice(String),
}

/// Generation parameters shared by the RTL generator and the cycle model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Width of each layer's physical MAC group.
    pub parallel_macs: usize,
    pub clock_mhz: f64,
    /// Fixed control cycles per layer (handshake, pipeline fill, writeback).
    pub layer_overhead: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            parallel_macs: 1,
            clock_mhz: 100.0,
            layer_overhead: 10,
        }
    }
}

/// Cycles spent in one layer under the time-multiplexed schedule.
pub fn layer_cycles(shape: &LayerShape, cfg: &GenConfig) -> u64 {
    let p = cfg.parallel_macs.max(1);
    let k = cfg.layer_overhead;
    let chunks = |n: usize| n.div_ceil(p) as u64;
    match *shape {
        LayerShape::Linear {
            in_features,
            out_features,
        } => chunks(in_features) * out_features as u64 + k,
        LayerShape::Lstm {
            input_size,
            hidden_size,
            steps,
        } => {
            let h = hidden_size as u64;
            steps as u64 * (chunks(input_size + hidden_size) * 4 * h + 9 * h) + k
        }
        LayerShape::Activation { len, .. } => chunks(len) + k,
    }
}

pub fn cycle_count_shapes(shapes: &[LayerShape], cfg: &GenConfig) -> u64 {
    shapes.iter().map(|s| layer_cycles(s, cfg)).sum()
}

pub fn cycle_count(model: &QuantizedModel, cfg: &GenConfig) -> u64 {
    cycle_count_shapes(&model.shapes(), cfg)
}

pub fn inference_time_us(cycles: u64, clock_mhz: f64) -> Result<f64, EstimateError> {
    if clock_mhz.is_nan() || clock_mhz <= 0.0 {
        return Err(EstimateError::NonpositiveClock(clock_mhz));
    }
    Ok(cycles as f64 / clock_mhz)
}

/// mW × µs = nJ; the result is in µJ.
pub fn energy_uj(power_mw: f64, time_us: f64) -> Result<f64, EstimateError> {
    if power_mw.is_nan() || power_mw < 0.0 {
        return Err(EstimateError::NegativeInput(format!("power {power_mw} mW")));
    }
    if time_us.is_nan() || time_us < 0.0 {
        return Err(EstimateError::NegativeInput(format!("time {time_us} us")));
    }
    Ok(power_mw * time_us * 1e-3)
}

pub fn efficiency_gop_j(ops: u64, energy_uj: f64) -> Result<f64, EstimateError> {
    if energy_uj.is_nan() || energy_uj <= 0.0 {
        return Err(EstimateError::ZeroEnergy);
    }
    Ok(ops as f64 / (energy_uj * 1e-6) / 1e9)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceEstimate {
    pub luts: u64,
    pub ffs: u64,
    pub bram_bits: u64,
    pub dsp_slices: u64,
}

impl ResourceEstimate {
    pub fn fits(&self, cap: &ResourceEstimate) -> bool {
        self.first_overflow(cap).is_none()
    }

    /// Name of the first resource (in LUT, FF, BRAM, DSP order) that exceeds
    /// `cap`, with the requested and available amounts.
    pub fn first_overflow(&self, cap: &ResourceEstimate) -> Option<(&'static str, u64, u64)> {
        [
            ("luts", self.luts, cap.luts),
            ("ffs", self.ffs, cap.ffs),
            ("bram_bits", self.bram_bits, cap.bram_bits),
            ("dsp_slices", self.dsp_slices, cap.dsp_slices),
        ]
        .into_iter()
        .find(|(_, need, have)| need > have)
    }
}

/// Affine LUT/FF cost coefficients.
///
/// Per MAC layer: `luts = lut_per_layer + lut_per_mac_bit·n·P + lut_per_row·rows`,
/// `ffs = ff_per_layer + ff_per_acc_bit·acc_bits·P + ff_per_output_bit·n·outputs`.
/// Activation layers cost `lut_per_act_bit·n·min(len, P)` LUTs plus their
/// output register. The top-level FSM adds `lut_top` / `ff_top`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCoefficients {
    pub lut_top: u64,
    pub ff_top: u64,
    pub lut_per_layer: u64,
    pub lut_per_mac_bit: u64,
    pub lut_per_row: u64,
    pub lut_per_act_bit: u64,
    pub ff_per_layer: u64,
    pub ff_per_acc_bit: u64,
    pub ff_per_output_bit: u64,
}

impl Default for CostCoefficients {
    fn default() -> Self {
        CostCoefficients {
            lut_top: 120,
            ff_top: 64,
            lut_per_layer: 60,
            lut_per_mac_bit: 2,
            lut_per_row: 1,
            lut_per_act_bit: 2,
            ff_per_layer: 40,
            ff_per_acc_bit: 1,
            ff_per_output_bit: 1,
        }
    }
}

/// Target device capacity. The figures in [`DeviceProfile::xc7s15`] are
/// vendor datasheet values for a Spartan-7 XC7S15, kept as configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    pub capacity: ResourceEstimate,
    pub default_clock_mhz: f64,
    /// Full part string for the synthesis script; falls back to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part: Option<String>,
    #[serde(default)]
    pub costs: CostCoefficients,
}

impl DeviceProfile {
    pub fn xc7s15() -> Self {
        DeviceProfile {
            name: "xc7s15".into(),
            capacity: ResourceEstimate {
                luts: 8_000,
                ffs: 16_000,
                bram_bits: 10 * 36 * 1024,
                dsp_slices: 20,
            },
            default_clock_mhz: 100.0,
            part: Some("xc7s15ftgb196-1".into()),
            costs: CostCoefficients::default(),
        }
    }

    pub fn validate(&self) -> Result<(), EstimateError> {
        let c = &self.capacity;
        if c.luts == 0 || c.ffs == 0 || c.bram_bits == 0 || c.dsp_slices == 0 {
            return Err(EstimateError::InvalidDevice(format!(
                "{}: all capacities must be positive",
                self.name
            )));
        }
        if self.default_clock_mhz.is_nan() || self.default_clock_mhz <= 0.0 {
            return Err(EstimateError::NonpositiveClock(self.default_clock_mhz));
        }
        Ok(())
    }
}

/// Contents of a `devices.json` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceTable {
    pub devices: Vec<DeviceProfile>,
}

impl Default for DeviceTable {
    fn default() -> Self {
        DeviceTable {
            devices: vec![DeviceProfile::xc7s15()],
        }
    }
}

impl DeviceTable {
    pub fn get(&self, name: &str) -> Result<&DeviceProfile, EstimateError> {
        self.devices
            .iter()
            .find(|d| d.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| EstimateError::UnknownDevice(name.to_string()))
    }
}

fn ceil_log2(n: u64) -> u64 {
    (64 - n.saturating_sub(1).leading_zeros()) as u64
}

pub fn resource_estimate(
    model: &QuantizedModel,
    cfg: &GenConfig,
    dev: &DeviceProfile,
) -> (ResourceEstimate, bool) {
    let n = model.format.total_bits() as u64;
    let p = cfg.parallel_macs.max(1) as u64;
    let c = &dev.costs;
    let mut est = ResourceEstimate {
        luts: c.lut_top,
        ffs: c.ff_top,
        bram_bits: model.weight_count() as u64 * n,
        dsp_slices: 0,
    };
    for shape in model.shapes() {
        let (rows, fan_in, outputs) = match shape {
            LayerShape::Linear {
                in_features,
                out_features,
            } => (out_features, in_features, out_features),
            LayerShape::Lstm {
                input_size,
                hidden_size,
                ..
            } => (4 * hidden_size, input_size + hidden_size, 2 * hidden_size),
            LayerShape::Activation { len, .. } => {
                est.luts += c.lut_per_act_bit * n * p.min(len as u64);
                est.ffs += c.ff_per_output_bit * n * len as u64;
                continue;
            }
        };
        let acc_bits = 2 * n + ceil_log2(fan_in as u64 + 1);
        est.luts += c.lut_per_layer + c.lut_per_mac_bit * n * p + c.lut_per_row * rows as u64;
        est.ffs += c.ff_per_layer
            + c.ff_per_acc_bit * acc_bits * p
            + c.ff_per_output_bit * n * outputs as u64;
        est.dsp_slices += p;
    }
    let fits = est.fits(&dev.capacity);
    (est, fits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportSource {
    Estimated,
    Measured,
}

/// The common currency of estimate and measurement. Both sides serialize to
/// the same JSON object so they can be compared field by field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub source: ReportSource,
    pub power_mw: f64,
    pub time_per_inference_us: f64,
    pub ops: u64,
    pub energy_uj: f64,
    pub gop_per_j: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<f64>>,
}

impl PerformanceReport {
    /// Derives energy and efficiency from power, time and ops.
    pub fn from_measurements(
        source: ReportSource,
        power_mw: f64,
        time_per_inference_us: f64,
        ops: u64,
        channels: Option<Vec<f64>>,
    ) -> Result<Self, EstimateError> {
        let energy = energy_uj(power_mw, time_per_inference_us)?;
        let gop_per_j = efficiency_gop_j(ops, energy)?;
        Ok(PerformanceReport {
            source,
            power_mw,
            time_per_inference_us,
            ops,
            energy_uj: energy,
            gop_per_j,
            channels,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }
}

/// Estimated report from a cycle count, a clock and an active-power figure.
pub fn report_from_cycles(
    cycles: u64,
    clock_mhz: f64,
    ops: u64,
    power_mw: f64,
) -> Result<PerformanceReport, EstimateError> {
    let t = inference_time_us(cycles, clock_mhz)?;
    PerformanceReport::from_measurements(ReportSource::Estimated, power_mw, t, ops, None)
}

pub fn build_report(
    model: &QuantizedModel,
    cfg: &GenConfig,
    power_mw: f64,
) -> Result<PerformanceReport, EstimateError> {
    report_from_cycles(
        cycle_count(model, cfg),
        cfg.clock_mhz,
        model.op_count(),
        power_mw,
    )
}
