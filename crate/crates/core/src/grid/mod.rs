//! Radial LV network model and quasi-stationary waveform synthesis.
//!
//! Each phase is an independent single-line circuit fed by an ideal source
//! behind the transformer impedance. Loads are constant resistances while on.
//! The sampled waveform at every supply point is assembled from phasor
//! solutions recomputed at every switching event.

mod network;
mod scenario;
mod schedule;
mod synth;
mod topology;

use thiserror::Error;

pub use network::{build_network, solve_state, LoadCurrent, NetworkModel, PhasorSolution};
pub use scenario::{Harmonic, LoadSpec, ScenarioConfig, SourceModulation};
pub use schedule::{make_schedule, rectangular_state, SwitchEvent, SwitchSchedule};
pub use synth::{quasi_stationary_warnings, synthesize, MultiPointRecording};
pub use topology::{LineSection, SourceImpedance, Topology};

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("topology error: {0}")]
    Topology(String),
    #[error("unknown node '{0}'")]
    UnknownNode(String),
    #[error("singular nodal system at node '{0}'")]
    Singular(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
}
