//! Multi-point identification of voltage fluctuation sources in radial LV grids.
//!
//! The crate is organised as a pipeline:
//!
//! * [`grid`] models a branching radial network and synthesizes sampled
//!   voltages at every supply point while disturbing loads switch on and off.
//! * [`demod`] recovers the amplitude-modulating signal (the envelope) of each
//!   channel by dividing out an estimated carrier, which keeps modulation
//!   frequencies above the power frequency.
//! * [`dapw`] decomposes an envelope into rectangular pulse-wave components,
//!   one per disturbing load.
//! * [`localize`] matches components across points and indicates the supply
//!   point of each load from where its amplitude peaks.
//! * [`bench`] generates randomized scenarios and scores the pipeline.
//! * [`io`] holds the recording/report file formats and configuration files.

pub mod bench;
pub mod dapw;
pub mod demod;
pub mod grid;
pub mod io;
pub mod localize;

mod error;
mod types;

pub use error::{Error, Result};
pub use types::{ChannelId, Phase};
