use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{GridError, Topology};
use crate::Phase;

/// A disturbing load that switches between on and off as a rectangular wave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub id: String,
    pub supply_point: String,
    pub phases: Vec<Phase>,
    /// Total rated power, shared evenly between the connected phases.
    pub rated_power_kw: f64,
    pub switch_frequency_hz: f64,
    /// Fraction of each switching period the load is on.
    pub duty: f64,
    /// Offset of the first turn-on as a fraction of the period.
    #[serde(default)]
    pub start_phase: f64,
}

impl LoadSpec {
    /// Constant resistance per connected phase while the load is on.
    pub fn resistance_per_phase(&self, nominal_voltage: f64) -> f64 {
        let per_phase_w = self.rated_power_kw * 1e3 / self.phases.len() as f64;
        nominal_voltage * nominal_voltage / per_phase_w
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let bad = |what: &str| Err(GridError::Scenario(format!("load {}: {what}", self.id)));
        if !(self.duty > 0.0 && self.duty < 1.0) {
            return bad("duty must be in (0, 1)");
        }
        if !(self.switch_frequency_hz > 0.0) {
            return bad("switch frequency must be positive");
        }
        if !(self.rated_power_kw > 0.0) {
            return bad("rated power must be positive");
        }
        if self.phases.is_empty() {
            return bad("at least one phase is required");
        }
        if self.phases.iter().collect::<BTreeSet<_>>().len() != self.phases.len() {
            return bad("phases must be distinct");
        }
        if !(0.0..1.0).contains(&self.start_phase) {
            return bad("start phase must be in [0, 1)");
        }
        Ok(())
    }
}

/// A voltage harmonic injected at the source, relative to the nominal voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub order: u32,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Rectangular amplitude modulation of the source EMF, standing in for a
/// fluctuation source on the MV side of the transformer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceModulation {
    /// Relative EMF drop while the modulation is in its "on" state.
    pub depth: f64,
    pub frequency_hz: f64,
    pub duty: f64,
    #[serde(default)]
    pub start_phase: f64,
}

fn default_carrier() -> f64 {
    50.0
}
fn default_voltage() -> f64 {
    230.0
}
fn default_sample_rate() -> f64 {
    20_000.0
}

/// Everything needed to synthesize a multi-point recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_carrier")]
    pub carrier_frequency_hz: f64,
    #[serde(default = "default_voltage")]
    pub nominal_voltage: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
    /// Standard deviation of additive white measurement noise, in volts.
    #[serde(default)]
    pub noise_std: f64,
    /// Phases to record; all three when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recorded_phases: Option<Vec<Phase>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_modulation: Option<SourceModulation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub harmonics: Vec<Harmonic>,
    pub topology: Topology,
    #[serde(default)]
    pub loads: Vec<LoadSpec>,
}

impl ScenarioConfig {
    /// A quiet scenario on the reference feeder with default sampling.
    pub fn quiet(duration_s: f64) -> Self {
        ScenarioConfig {
            name: None,
            carrier_frequency_hz: default_carrier(),
            nominal_voltage: default_voltage(),
            sample_rate: default_sample_rate(),
            duration_s,
            seed: 0,
            noise_std: 0.0,
            recorded_phases: None,
            source_modulation: None,
            harmonics: Vec::new(),
            topology: Topology::reference_feeder(),
            loads: Vec::new(),
        }
    }

    pub fn phases(&self) -> Vec<Phase> {
        self.recorded_phases.clone().unwrap_or_else(|| Phase::ALL.to_vec())
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_s * self.sample_rate).round() as usize
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let bad = |msg: String| Err(GridError::Scenario(msg));
        if !(self.carrier_frequency_hz > 0.0) {
            return bad("carrier frequency must be positive".into());
        }
        if !(self.nominal_voltage > 0.0) {
            return bad("nominal voltage must be positive".into());
        }
        if !(self.duration_s > 0.0) {
            return bad("duration must be positive".into());
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std must be non-negative".into());
        }
        let max_order = self.harmonics.iter().map(|h| h.order).max().unwrap_or(1).max(1);
        if self.harmonics.iter().any(|h| h.order < 2) {
            return bad("harmonic orders start at 2".into());
        }
        let required = 20.0 * self.carrier_frequency_hz * max_order as f64;
        if self.sample_rate < required {
            return bad(format!(
                "sample rate {} is below 20 x carrier x max harmonic order = {required}",
                self.sample_rate
            ));
        }
        let mut ids = BTreeSet::new();
        for load in &self.loads {
            load.validate()?;
            if !ids.insert(load.id.as_str()) {
                return bad(format!("duplicate load id {}", load.id));
            }
            if !self.topology.supply_points.contains(&load.supply_point) {
                return bad(format!(
                    "load {} references unknown supply point {}",
                    load.id, load.supply_point
                ));
            }
        }
        if let Some(f_min) = self
            .loads
            .iter()
            .map(|l| l.switch_frequency_hz)
            .min_by(f64::total_cmp)
        {
            if self.duration_s * f_min < 3.0 - 1e-9 {
                return bad(format!(
                    "duration {} s holds fewer than 3 periods of the slowest load ({f_min} Hz)",
                    self.duration_s
                ));
            }
        }
        if let Some(m) = &self.source_modulation {
            if !(m.depth > 0.0 && m.depth < 1.0 && m.frequency_hz > 0.0 && m.duty > 0.0 && m.duty < 1.0) {
                return bad("source modulation needs depth and duty in (0, 1) and a positive frequency".into());
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario is always representable as TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load() -> LoadSpec {
        LoadSpec {
            id: "a".into(),
            supply_point: "P4".into(),
            phases: vec![Phase::L1],
            rated_power_kw: 2.0,
            switch_frequency_hz: 5.0,
            duty: 0.5,
            start_phase: 0.0,
        }
    }

    #[test]
    fn resistance_matches_rated_power() {
        assert!((load().resistance_per_phase(230.0) - 26.45).abs() < 1e-12);
        let three = LoadSpec {
            phases: Phase::ALL.to_vec(),
            rated_power_kw: 6.0,
            ..load()
        };
        assert!((three.resistance_per_phase(230.0) - 26.45).abs() < 1e-12);
    }

    #[test]
    fn load_invariants() {
        assert!(load().validate().is_ok());
        for bad in [
            LoadSpec { duty: 1.0, ..load() },
            LoadSpec { duty: 0.0, ..load() },
            LoadSpec { switch_frequency_hz: 0.0, ..load() },
            LoadSpec { rated_power_kw: -1.0, ..load() },
            LoadSpec { phases: vec![], ..load() },
            LoadSpec { start_phase: 1.0, ..load() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn scenario_invariants() {
        let mut s = ScenarioConfig::quiet(2.0);
        s.loads.push(load());
        assert!(s.validate().is_ok());

        let mut short = s.clone();
        short.loads[0].switch_frequency_hz = 1.0;
        assert!(short.validate().is_err());

        let mut slow = s.clone();
        slow.harmonics.push(Harmonic { order: 25, amplitude: 0.01, phase: 0.0 });
        assert!(slow.validate().is_err());

        let mut unknown = s.clone();
        unknown.loads[0].supply_point = "P42".into();
        assert!(unknown.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut s = ScenarioConfig::quiet(10.0);
        s.loads.push(load());
        s.harmonics.push(Harmonic { order: 5, amplitude: 0.05, phase: 0.3 });
        s.source_modulation = Some(SourceModulation {
            depth: 0.01,
            frequency_hz: 8.0,
            duty: 0.5,
            start_phase: 0.25,
        });
        let text = s.to_toml();
        assert_eq!(ScenarioConfig::from_toml(&text).unwrap(), s);
    }
}
