//! Decomposition of an envelope into rectangular pulse waves.
//!
//! A greedy matching pursuit over a pulse-wave dictionary: find the strongest
//! rectangular periodicity in the residual, fit its duty and phase, subtract,
//! repeat. Every accepted component removes exactly its projection energy, so
//! `dc + Σ components + residual` reproduces the input.

mod fit;
mod fold;
mod search;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demod::ModulatingSignal;

pub use fit::{fit_pulse_wave, PulseComponent, PulseFit};
pub use search::dominant_frequency;

use search::{dominant_frequency_with, SearchParams};

#[derive(Debug, Error, PartialEq)]
pub enum DapwError {
    #[error("no component above the noise floor")]
    NoComponent,
    #[error("component rejected: captures {energy_fraction:.4} of the residual energy")]
    Rejected { energy_fraction: f64 },
    #[error("block of {duration} s holds fewer than 3 periods at {lowest} Hz")]
    TooShort { duration: f64, lowest: f64 },
    #[error("invalid decomposition setting: {0}")]
    Settings(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecompositionSettings {
    /// Stop when a component explains less than this fraction of the
    /// initial fluctuation energy.
    pub min_energy: f64,
    pub max_components: usize,
    /// Lowest searchable frequency; defaults to three periods per block.
    pub f_min_hz: Option<f64>,
    pub f_max_hz: f64,
    /// Components closer than this relative frequency are merged.
    pub merge_tolerance: f64,
    /// Spectral peaks must exceed this multiple of the band's median power.
    pub noise_floor: f64,
    /// Spectral peaks scored per iteration.
    pub candidates: usize,
}

impl Default for DecompositionSettings {
    fn default() -> Self {
        DecompositionSettings {
            min_energy: 0.01,
            max_components: 8,
            f_min_hz: None,
            f_max_hz: 160.0,
            merge_tolerance: 0.01,
            noise_floor: 30.0,
            candidates: 6,
        }
    }
}

impl DecompositionSettings {
    pub fn validate(&self) -> Result<(), DapwError> {
        if !(self.min_energy > 0.0 && self.min_energy < 1.0) {
            return Err(DapwError::Settings(format!("min_energy {} not in (0, 1)", self.min_energy)));
        }
        if self.max_components == 0 {
            return Err(DapwError::Settings("max_components must be at least 1".into()));
        }
        if !(self.f_max_hz > 0.0) || self.f_min_hz.is_some_and(|f| !(f > 0.0 && f < self.f_max_hz)) {
            return Err(DapwError::Settings("frequency range must satisfy 0 < f_min < f_max".into()));
        }
        if !(self.merge_tolerance >= 0.0) || self.candidates == 0 {
            return Err(DapwError::Settings("merge_tolerance >= 0 and candidates >= 1 required".into()));
        }
        Ok(())
    }

    fn search(&self) -> SearchParams {
        SearchParams {
            floor_factor: self.noise_floor,
            candidates: self.candidates,
            ..SearchParams::default()
        }
    }
}

/// Pulse-wave decomposition of one envelope block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub dc_level: f64,
    /// Sorted by energy, strongest first.
    pub components: Vec<PulseComponent>,
    pub residual_energy_fraction: f64,
    /// Length of the analysed block, in seconds.
    pub discrimination_period: f64,
    pub sample_rate: f64,
    pub sample_count: usize,
}

impl Decomposition {
    fn empty(dc_level: f64, sample_rate: f64, sample_count: usize) -> Self {
        Decomposition {
            dc_level,
            components: Vec::new(),
            residual_energy_fraction: 0.0,
            discrimination_period: sample_count as f64 / sample_rate,
            sample_rate,
            sample_count,
        }
    }

    /// `dc_level` plus every fitted component, sample by sample.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = vec![self.dc_level; self.sample_count];
        for c in &self.components {
            for (o, w) in out.iter_mut().zip(c.waveform(self.sample_count, self.sample_rate)) {
                *o += w;
            }
        }
        out
    }
}

/// Decomposes a demodulated envelope.
pub fn decompose(m: &ModulatingSignal, settings: &DecompositionSettings) -> Result<Decomposition, DapwError> {
    decompose_samples(&m.samples, m.sample_rate, settings).map(|(d, _)| d)
}

/// Decomposes raw samples, returning the final residual alongside.
pub fn decompose_samples(
    x: &[f64],
    sample_rate: f64,
    settings: &DecompositionSettings,
) -> Result<(Decomposition, Vec<f64>), DapwError> {
    settings.validate()?;
    let n = x.len();
    if n == 0 {
        return Ok((Decomposition::empty(0.0, sample_rate, 0), Vec::new()));
    }
    let dc = x.iter().sum::<f64>() / n as f64;
    let mut residual: Vec<f64> = x.iter().map(|v| v - dc).collect();
    let initial: f64 = residual.iter().map(|v| v * v).sum();
    let flat = 1e-9 * dc.abs().max(1.0);
    if initial <= n as f64 * flat * flat {
        return Ok((Decomposition::empty(dc, sample_rate, n), residual));
    }

    let duration = n as f64 / sample_rate;
    let lo = settings.f_min_hz.unwrap_or(3.0 / duration).max(3.0 / duration);
    let hi = settings.f_max_hz.min(0.45 * sample_rate);
    if hi <= lo {
        return Err(DapwError::TooShort { duration, lowest: lo });
    }
    let search = settings.search();

    let mut fits: Vec<PulseFit> = Vec::new();
    while fits.len() < settings.max_components {
        let f = match dominant_frequency_with(&residual, sample_rate, (lo, hi), &search) {
            Ok(f) => f,
            Err(DapwError::NoComponent) => break,
            Err(e) => return Err(e),
        };
        let fit = match fit_pulse_wave(&residual, sample_rate, f, 0.0) {
            Ok(fit) => fit,
            Err(DapwError::Rejected { .. }) => break,
            Err(e) => return Err(e),
        };
        if fit.energy / initial < settings.min_energy {
            break;
        }
        subtract(&mut residual, &fit.component, sample_rate, -1.0);
        fits.push(fit);
    }

    merge_close(&mut fits, &mut residual, sample_rate, settings.merge_tolerance);
    backfit(&mut fits, &mut residual, sample_rate, BACKFIT_SWEEPS);

    let mut components: Vec<PulseComponent> = fits
        .iter()
        .map(|f| PulseComponent {
            energy_fraction: f.energy / initial,
            ..f.component
        })
        .collect();
    components.sort_by(|a, b| b.energy_fraction.total_cmp(&a.energy_fraction));
    let residual_energy: f64 = residual.iter().map(|v| v * v).sum();
    Ok((
        Decomposition {
            dc_level: dc,
            components,
            residual_energy_fraction: residual_energy / initial,
            discrimination_period: duration,
            sample_rate,
            sample_count: n,
        },
        residual,
    ))
}

const BACKFIT_SWEEPS: usize = 2;

// Each greedy fit saw the components found after it as interference. Refit
// every component against the residual with the others removed.
fn backfit(fits: &mut [PulseFit], residual: &mut [f64], fs: f64, sweeps: usize) {
    if fits.len() < 2 {
        return;
    }
    for _ in 0..sweeps {
        for fit in fits.iter_mut() {
            subtract(residual, &fit.component, fs, 1.0);
            if let Ok(refit) = fit_pulse_wave(residual, fs, fit.component.frequency, 0.0) {
                *fit = refit;
            }
            subtract(residual, &fit.component, fs, -1.0);
        }
    }
}

fn subtract(residual: &mut [f64], c: &PulseComponent, fs: f64, sign: f64) {
    let w = c.waveform(residual.len(), fs);
    for (r, w) in residual.iter_mut().zip(w) {
        *r += sign * w;
    }
}

// Two fits within `tol` of each other describe one periodicity: put both back
// and refit once at the stronger one's frequency.
fn merge_close(fits: &mut Vec<PulseFit>, residual: &mut [f64], fs: f64, tol: f64) {
    loop {
        let mut pair = None;
        'outer: for i in 0..fits.len() {
            for j in i + 1..fits.len() {
                let (a, b) = (fits[i].component.frequency, fits[j].component.frequency);
                if (a - b).abs() / a.min(b) <= tol {
                    pair = Some((i, j));
                    break 'outer;
                }
            }
        }
        let Some((i, j)) = pair else { return };
        let (keep, drop) = if fits[i].energy >= fits[j].energy { (i, j) } else { (j, i) };
        let f = fits[keep].component.frequency;
        subtract(residual, &fits[i].component, fs, 1.0);
        subtract(residual, &fits[j].component, fs, 1.0);
        let removed = fits.remove(keep.max(drop));
        let other = fits.remove(keep.min(drop));
        match fit_pulse_wave(residual, fs, f, 0.0) {
            Ok(fit) => {
                subtract(residual, &fit.component, fs, -1.0);
                fits.push(fit);
            }
            Err(_) => {
                // Keep the original pair rather than lose the energy.
                subtract(residual, &removed.component, fs, -1.0);
                subtract(residual, &other.component, fs, -1.0);
                fits.push(other);
                fits.push(removed);
                return;
            }
        }
    }
}

#[cfg(test)]
mod tests;
