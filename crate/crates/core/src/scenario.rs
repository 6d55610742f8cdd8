//! Scenario documents (TOML) and the bundled figure scenarios.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::MetricsConfig;
use crate::error::{Error, Result};
use crate::population::PopulationSpec;
use crate::protocol::Command;
use crate::sim::SimConfig;

/// Largest admissible time step, minutes.
pub const DT_MAX: f64 = 0.1;

const BUNDLED: &[(&str, &str)] = &[
    ("fig1_baseline", include_str!("../scenarios/fig1_baseline.toml")),
    ("fig4_unsafe_off", include_str!("../scenarios/fig4_unsafe_off.toml")),
    ("fig4_unsafe_on", include_str!("../scenarios/fig4_unsafe_on.toml")),
    ("fig6_unsafe_shift", include_str!("../scenarios/fig6_unsafe_shift.toml")),
    ("fig8_sp1_down", include_str!("../scenarios/fig8_sp1_down.toml")),
    ("fig8_sp1_up", include_str!("../scenarios/fig8_sp1_up.toml")),
    ("fig10_sp2_up04", include_str!("../scenarios/fig10_sp2_up04.toml")),
    ("fig12_sp3_3min", include_str!("../scenarios/fig12_sp3_3min.toml")),
    ("fig13_hybrid_pos", include_str!("../scenarios/fig13_hybrid_pos.toml")),
    ("fig14_hybrid_neg", include_str!("../scenarios/fig14_hybrid_neg.toml")),
];

fn default_stride() -> f64 {
    0.5
}

fn default_tolerance() -> f64 {
    1.0
}

fn default_bin_width() -> f64 {
    0.02
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub t_min: f64,
    pub command: Command<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "yes")]
    pub trace: bool,
    #[serde(default)]
    pub histogram_times_min: Vec<f64>,
    #[serde(default = "default_bin_width", rename = "histogram_bin_width_C")]
    pub histogram_bin_width: f64,
    #[serde(default)]
    pub device_probe_ids: Vec<usize>,
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            trace: true,
            histogram_times_min: vec![],
            histogram_bin_width: default_bin_width(),
            device_probe_ids: vec![],
        }
    }
}

/// Thresholds for the pulse metrics in the run summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSettings {
    pub steady_window_min: f64,
    pub final_window_min: f64,
    pub settle_tolerance: f64,
    pub settle_hold_min: f64,
    pub oscillation_threshold: f64,
    pub untimed_horizon_min: f64,
    pub settle_to_original: bool,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self::from(MetricsConfig::default())
    }
}

impl From<MetricsConfig<f64>> for AnalysisSettings {
    fn from(m: MetricsConfig<f64>) -> Self {
        Self {
            steady_window_min: m.steady_window,
            final_window_min: m.final_window,
            settle_tolerance: m.settle_tolerance,
            settle_hold_min: m.settle_hold,
            oscillation_threshold: m.oscillation_threshold,
            untimed_horizon_min: m.untimed_horizon,
            settle_to_original: m.settle_to_original,
        }
    }
}

impl From<AnalysisSettings> for MetricsConfig<f64> {
    fn from(a: AnalysisSettings) -> Self {
        Self {
            steady_window: a.steady_window_min,
            final_window: a.final_window_min,
            settle_tolerance: a.settle_tolerance,
            settle_hold: a.settle_hold_min,
            oscillation_threshold: a.oscillation_threshold,
            untimed_horizon: a.untimed_horizon_min,
            settle_to_original: a.settle_to_original,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub caption: String,
    pub dt_min: f64,
    pub t_end_min: f64,
    #[serde(default = "default_stride")]
    pub output_stride_min: f64,
    #[serde(default = "default_tolerance", rename = "tolerance_delta_max_C")]
    pub tolerance_delta_max: f64,
    #[serde(default)]
    pub broadcast_latency_max_min: f64,
    pub population: PopulationSpec,
    #[serde(default)]
    pub events: Vec<Event>,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub analysis: AnalysisSettings,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let scenario: Scenario = toml::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Reads a scenario file, or a bundled scenario when `source` names one
    /// and no such file exists.
    pub fn load(source: &str) -> Result<Self> {
        let path = Path::new(source);
        if path.exists() {
            return Self::from_toml(&std::fs::read_to_string(path)?);
        }
        Self::bundled(source)
    }

    pub fn bundled(name: &str) -> Result<Self> {
        let name = name.strip_suffix(".toml").unwrap_or(name);
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::UnknownScenario(name.to_string()))
            .and_then(|(_, text)| Self::from_toml(text))
    }

    pub fn bundled_names() -> impl Iterator<Item = &'static str> {
        BUNDLED.iter().map(|(n, _)| *n)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.population.validate()?;
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(field, format!("must be positive, got {v}")))
            }
        };
        positive("dt_min", self.dt_min)?;
        if self.dt_min > DT_MAX {
            return Err(Error::validation("dt_min", format!("must not exceed {DT_MAX} min")));
        }
        positive("t_end_min", self.t_end_min)?;
        positive("output_stride_min", self.output_stride_min)?;
        if self.output_stride_min < self.dt_min * (1.0 - 1e-9) {
            return Err(Error::validation("output_stride_min", "must be at least dt_min"));
        }
        positive("tolerance_delta_max_C", self.tolerance_delta_max)?;
        if !(self.broadcast_latency_max_min >= 0.0 && self.broadcast_latency_max_min.is_finite()) {
            return Err(Error::validation("broadcast_latency_max_min", "must be non-negative"));
        }
        let mut last = f64::NEG_INFINITY;
        for (i, e) in self.events.iter().enumerate() {
            let field = format!("events[{i}].t_min");
            if !(e.t_min >= 0.0 && e.t_min <= self.t_end_min) {
                return Err(Error::validation(&field, format!("{} lies outside [0, t_end_min]", e.t_min)));
            }
            if e.t_min <= last {
                return Err(Error::validation(&field, "events must be strictly increasing in time"));
            }
            last = e.t_min;
            e.command.validate(self.tolerance_delta_max).map_err(|err| match err {
                Error::Validation { field: f, reason } => {
                    Error::Validation { field: format!("events[{i}].command.{f}"), reason }
                }
                other => other,
            })?;
        }
        for (i, &t) in self.outputs.histogram_times_min.iter().enumerate() {
            if !(t >= 0.0 && t <= self.t_end_min) {
                return Err(Error::validation(
                    format!("outputs.histogram_times_min[{i}]"),
                    format!("{t} lies outside [0, t_end_min]"),
                ));
            }
        }
        positive("outputs.histogram_bin_width_C", self.outputs.histogram_bin_width)?;
        if let Some(&id) = self.outputs.device_probe_ids.iter().find(|&&id| id >= self.population.n) {
            return Err(Error::validation(
                "outputs.device_probe_ids",
                format!("{id} is not below population.n = {}", self.population.n),
            ));
        }
        let a = &self.analysis;
        for (field, v) in [
            ("analysis.steady_window_min", a.steady_window_min),
            ("analysis.final_window_min", a.final_window_min),
            ("analysis.settle_tolerance", a.settle_tolerance),
            ("analysis.settle_hold_min", a.settle_hold_min),
            ("analysis.oscillation_threshold", a.oscillation_threshold),
            ("analysis.untimed_horizon_min", a.untimed_horizon_min),
        ] {
            positive(field, v)?;
        }
        Ok(())
    }

    /// Same scenario with a different population seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.population.seed = seed;
        self
    }

    pub fn sim_config(&self) -> SimConfig<f64> {
        SimConfig {
            dt: self.dt_min,
            t_end: self.t_end_min,
            stride: self.output_stride_min,
            events: self.events.iter().map(|e| (e.t_min, e.command)).collect(),
            histogram_times: self.outputs.histogram_times_min.clone(),
            histogram_bin_width: self.outputs.histogram_bin_width,
            probes: self.outputs.device_probe_ids.clone(),
        }
    }

    pub fn metrics_config(&self) -> MetricsConfig<f64> {
        self.analysis.into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Direction;

    const MINIMAL: &str = r#"
dt_min = 0.05
t_end_min = 60.0

[population]
n = 100
mean_C = 3.0
mean_R = 2.0
mean_P = 14.0
rel_sigma = 0.07
theta_amb_C = 32.0
setpoint_C = 20.0
delta_band_C = 1.0
noise_sigma = 0.052
seed = 4

[[events]]
t_min = 10.0
command = { kind = "sp2", delta_C = 0.4 }
"#;

    #[test]
    fn minimal_document_with_defaults() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.output_stride_min, 0.5);
        assert_eq!(s.tolerance_delta_max, 1.0);
        assert_eq!(s.population.eta, 1.0);
        assert_eq!(s.events[0].command, Command::Sp2 { delta: 0.4 });
        assert!(s.outputs.trace);
    }

    #[test]
    fn all_bundled_scenarios_parse() {
        let names: Vec<_> = Scenario::bundled_names().collect();
        assert_eq!(names.len(), 10);
        for name in names {
            let s = Scenario::bundled(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(!s.caption.is_empty());
            assert_eq!(s.population.n, 10_000);
        }
        assert!(matches!(Scenario::bundled("fig99"), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn echo_round_trip_keeps_hash() {
        for name in Scenario::bundled_names() {
            let s = Scenario::bundled(name).unwrap();
            let echo = Scenario::from_toml(&s.to_toml().unwrap()).unwrap();
            assert_eq!(echo, s);
            assert_eq!(echo.hash().unwrap(), s.hash().unwrap());
        }
        let a = Scenario::from_toml(MINIMAL).unwrap();
        assert_ne!(a.hash().unwrap(), a.clone().with_seed(5).hash().unwrap());
    }

    fn field_of(err: Error) -> String {
        match err {
            Error::Validation { field, .. } => field,
            other => panic!("not a validation error: {other}"),
        }
    }

    #[test]
    fn validation_names_the_field() {
        let base = Scenario::from_toml(MINIMAL).unwrap();
        let check = |f: &dyn Fn(&mut Scenario), field: &str| {
            let mut s = base.clone();
            f(&mut s);
            assert_eq!(field_of(s.validate().unwrap_err()), field);
        };
        check(&|s| s.dt_min = 0.5, "dt_min");
        check(&|s| s.dt_min = 0.0, "dt_min");
        check(&|s| s.t_end_min = -1.0, "t_end_min");
        check(&|s| s.events[0].command = Command::Sp2 { delta: 1.5 }, "events[0].command.delta_C");
        check(&|s| s.events[0].t_min = 100.0, "events[0].t_min");
        check(
            &|s| {
                s.events.push(Event { t_min: 5.0, command: Command::Sp1 { direction: Direction::Up } });
            },
            "events[1].t_min",
        );
        check(&|s| s.outputs.device_probe_ids = vec![100], "outputs.device_probe_ids");
        check(&|s| s.population.rel_sigma = -0.1, "population.rel_sigma");
        check(&|s| s.output_stride_min = 0.01, "output_stride_min");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("dt_min = 0.05", "dt_min = 0.05\ndt = 0.05");
        let err = Scenario::from_toml(&text).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("dt"), "{err}");
    }
}
