use std::fmt::Write;

use nnaccel::estimator::PerformanceReport;

use crate::{CliError, Thresholds};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricDelta {
    pub estimated: f64,
    pub measured: f64,
    pub delta: f64,
    /// Relative to the estimate, in percent.
    pub percent: f64,
}

impl MetricDelta {
    fn new(estimated: f64, measured: f64) -> Self {
        let delta = measured - estimated;
        let percent = if estimated == 0.0 { 0.0 } else { delta / estimated * 100.0 };
        MetricDelta {
            estimated,
            measured,
            delta,
            percent,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub power_mw: MetricDelta,
    pub time_us: MetricDelta,
    pub gop_per_j: MetricDelta,
    /// Threshold violations of the measured report; empty means PASS.
    pub violations: Vec<String>,
}

impl Comparison {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Side-by-side deltas of two reports. Reports of different models are
/// refused unless `allow_ops_mismatch` is set.
pub fn compare(
    estimated: &PerformanceReport,
    measured: &PerformanceReport,
    thresholds: &Thresholds,
    allow_ops_mismatch: bool,
) -> Result<Comparison, CliError> {
    if estimated.ops != measured.ops && !allow_ops_mismatch {
        return Err(CliError::OpsMismatch {
            estimated: estimated.ops,
            measured: measured.ops,
        });
    }
    Ok(Comparison {
        power_mw: MetricDelta::new(estimated.power_mw, measured.power_mw),
        time_us: MetricDelta::new(estimated.time_per_inference_us, measured.time_per_inference_us),
        gop_per_j: MetricDelta::new(estimated.gop_per_j, measured.gop_per_j),
        violations: thresholds.violations(measured),
    })
}

/// Text table with one row per metric and estimate/measurement columns.
pub fn render_table(c: &Comparison) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<28} {:>16} {:>16} {:>10} {:>9}",
        "", "From Estimation", "From Node", "Delta", "Delta %"
    );
    for (label, m) in [
        ("Power (mW)", c.power_mw),
        ("Time per inference (us)", c.time_us),
        ("Energy efficiency (GOP/J)", c.gop_per_j),
    ] {
        let _ = writeln!(
            s,
            "{label:<28} {:>16.2} {:>16.2} {:>+10.2} {:>+8.2}%",
            m.estimated, m.measured, m.delta, m.percent
        );
    }
    if c.pass() {
        s.push_str("Verdict: PASS\n");
    } else {
        let _ = writeln!(s, "Verdict: FAIL ({})", c.violations.join("; "));
    }
    s
}
