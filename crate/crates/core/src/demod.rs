//! Envelope recovery by division with an estimated carrier.
//!
//! The carrier is fitted by least squares in sliding one-period windows; its
//! frequency comes from the phase slope across windows. The phase used for
//! division is anchored to the signal's upward zero crossings, which amplitude
//! modulation cannot move, and median-smoothed over several periods. The raw
//! ratio `u / ĉ` is only trusted where the unit carrier is at least `guard`
//! in magnitude; the rest is bridged by linear interpolation, and a sliding
//! median (the statistical filter) cleans the result. Unlike a product
//! detector, this keeps modulation components well above the carrier
//! frequency.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ChannelId;

#[derive(Debug, Error, PartialEq)]
pub enum DemodError {
    #[error("recording too short: {samples} samples, need at least {needed} (two carrier periods)")]
    TooShort { samples: usize, needed: usize },
    #[error("no carrier: fitted amplitude {amplitude:.4} is below 10% of the signal level {level:.4}")]
    NoCarrier { amplitude: f64, level: f64 },
    #[error("carrier frequency {estimated:.4} Hz is outside ±5% of nominal {nominal} Hz")]
    FrequencyOutOfRange { estimated: f64, nominal: f64 },
    #[error("invalid demodulator setting: {0}")]
    Settings(String),
    #[error("degenerate carrier: no sample passed the guard of {guard}")]
    Degenerate { guard: f64 },
    #[error("carrier estimate covers {expected} samples, signal has {actual}")]
    LengthMismatch { expected: usize, actual: usize },
}

/// Tuning knobs of the demodulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemodSettings {
    /// Samples with `|ĉ| < guard` are interpolated instead of divided.
    pub guard: f64,
    /// Length of the sliding median, in samples (odd).
    pub median_window: usize,
    /// Carrier fit window, in nominal carrier periods.
    pub carrier_window_periods: f64,
    /// Window hop as a fraction of the window length.
    pub carrier_hop_fraction: f64,
    /// Span of the sliding median applied to the tracked phase, in carrier
    /// periods. Zero disables it.
    pub phase_smoothing_periods: f64,
    pub phase_reference: PhaseReference,
}

/// What anchors the tracked carrier phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseReference {
    /// Upward zero crossings, which amplitude modulation cannot move.
    ZeroCrossing,
    /// Phase of the per-window least-squares fit.
    LeastSquares,
}

impl Default for DemodSettings {
    fn default() -> Self {
        DemodSettings {
            guard: 0.02,
            median_window: 51,
            carrier_window_periods: 1.0,
            carrier_hop_fraction: 0.125,
            phase_smoothing_periods: 10.0,
            phase_reference: PhaseReference::ZeroCrossing,
        }
    }
}

impl DemodSettings {
    pub fn validate(&self) -> Result<(), DemodError> {
        if !(self.guard > 0.0 && self.guard < 0.7) {
            return Err(DemodError::Settings(format!("guard {} not in (0, 0.7)", self.guard)));
        }
        if self.median_window % 2 == 0 {
            return Err(DemodError::Settings(format!(
                "median window {} must be odd",
                self.median_window
            )));
        }
        if !(self.carrier_window_periods >= 0.5) {
            return Err(DemodError::Settings("carrier window must span at least half a period".into()));
        }
        if !(self.carrier_hop_fraction > 0.0 && self.carrier_hop_fraction <= 1.0) {
            return Err(DemodError::Settings("carrier hop fraction must be in (0, 1]".into()));
        }
        if !(self.phase_smoothing_periods >= 0.0) {
            return Err(DemodError::Settings("phase smoothing span must be non-negative".into()));
        }
        Ok(())
    }
}

/// Least-squares fit of one analysis window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarrierWindow {
    /// Window centre, in (fractional) samples.
    pub center: f64,
    /// Local frequency from the phase slope around this window.
    pub frequency: f64,
    pub amplitude: f64,
    /// Phase relative to `sin(2π f̂ t)` at the block frequency `f̂`.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarrierEstimate {
    /// Block carrier frequency `f̂`.
    pub frequency: f64,
    pub sample_rate: f64,
    pub sample_count: usize,
    pub window_len: usize,
    pub hop: usize,
    /// Phase-unwrapped windows in time order.
    pub windows: Vec<CarrierWindow>,
}

impl CarrierEstimate {
    pub fn mean_amplitude(&self) -> f64 {
        self.windows.iter().map(|w| w.amplitude).sum::<f64>() / self.windows.len() as f64
    }

    /// Tracked carrier phase at sample `i`, linearly interpolated between
    /// window centres and held constant beyond the first and last one.
    pub fn phase_at(&self, i: f64) -> f64 {
        let w = &self.windows;
        if i <= w[0].center {
            return w[0].phase;
        }
        let last = w.len() - 1;
        if i >= w[last].center {
            return w[last].phase;
        }
        let k = (w.partition_point(|x| x.center <= i) - 1).min(last - 1);
        let (a, b) = (&w[k], &w[k + 1]);
        a.phase + (b.phase - a.phase) * (i - a.center) / (b.center - a.center)
    }

    /// Unit-amplitude reconstructed carrier.
    pub fn unit_carrier(&self) -> Vec<f64> {
        let step = 2.0 * PI * self.frequency / self.sample_rate;
        let mut out = Vec::with_capacity(self.sample_count);
        let w = &self.windows;
        let mut k = 0usize;
        for i in 0..self.sample_count {
            let x = i as f64;
            while k + 1 < w.len() && w[k + 1].center <= x {
                k += 1;
            }
            let phase = if x <= w[0].center {
                w[0].phase
            } else if k + 1 >= w.len() {
                w[k].phase
            } else {
                let (a, b) = (&w[k], &w[k + 1]);
                a.phase + (b.phase - a.phase) * (x - a.center) / (b.center - a.center)
            };
            out.push((step * x + phase).sin());
        }
        out
    }
}

/// Estimated amplitude-modulating signal of one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulatingSignal {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelId>,
    pub effective_bandwidth: f64,
}

impl ModulatingSignal {
    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }
}

// Per-window fit at a fixed frequency using prefix sums of the normal-equation
// terms, so each window costs O(1).
fn fit_windows(u: &[f64], fs: f64, freq: f64, len: usize, hop: usize) -> Vec<(f64, f64, f64)> {
    let n = u.len();
    let step = 2.0 * PI * freq / fs;
    let mut pref = vec![[0.0f64; 5]; n + 1];
    for i in 0..n {
        let (s, c) = (step * i as f64).sin_cos();
        let p = pref[i];
        pref[i + 1] = [
            p[0] + u[i] * s,
            p[1] + u[i] * c,
            p[2] + s * s,
            p[3] + s * c,
            p[4] + c * c,
        ];
    }
    let mut out = Vec::new();
    let mut start = 0usize;
    while start + len <= n {
        let (a0, b0) = (&pref[start], &pref[start + len]);
        let d: Vec<f64> = (0..5).map(|j| b0[j] - a0[j]).collect();
        let det = d[2] * d[4] - d[3] * d[3];
        let (a, b) = if det.abs() > 1e-12 {
            ((d[0] * d[4] - d[1] * d[3]) / det, (d[1] * d[2] - d[0] * d[3]) / det)
        } else {
            (0.0, 0.0)
        };
        let center = start as f64 + (len as f64 - 1.0) / 2.0;
        out.push((center, a.hypot(b), b.atan2(a)));
        start += hop;
    }
    out
}

// Sample positions of upward zero crossings, linearly interpolated. A crossing
// counts once the signal has been below `-h` and then rises above `h`, so
// noise around zero cannot create extra crossings.
fn upward_crossings(u: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut armed = false;
    let mut last_neg = 0usize;
    for (i, &x) in u.iter().enumerate() {
        if x < 0.0 {
            last_neg = i;
        }
        if x < -h {
            armed = true;
        } else if armed && x > h {
            let j = last_neg;
            let (a, b) = (u[j], u[j + 1]);
            out.push(j as f64 + a / (a - b));
            armed = false;
        }
    }
    out
}

fn unwrap(phases: &mut [f64]) {
    for k in 1..phases.len() {
        let d = phases[k] - phases[k - 1];
        phases[k] -= (d / (2.0 * PI)).round() * 2.0 * PI;
    }
}

/// Estimates the carrier with default window settings.
pub fn estimate_carrier(u: &[f64], sample_rate: f64, f_nominal: f64) -> Result<CarrierEstimate, DemodError> {
    estimate_carrier_with(u, sample_rate, f_nominal, &DemodSettings::default())
}

pub fn estimate_carrier_with(
    u: &[f64],
    sample_rate: f64,
    f_nominal: f64,
    settings: &DemodSettings,
) -> Result<CarrierEstimate, DemodError> {
    settings.validate()?;
    let period = sample_rate / f_nominal;
    let needed = (2.0 * period).ceil() as usize;
    if u.len() < needed {
        return Err(DemodError::TooShort { samples: u.len(), needed });
    }
    let len = ((settings.carrier_window_periods * period).round() as usize).clamp(4, u.len());
    let hop = ((len as f64 * settings.carrier_hop_fraction).round() as usize).max(1);

    // Pass 1 at the nominal frequency: the phase drift gives the offset.
    let coarse = fit_windows(u, sample_rate, f_nominal, len, hop);
    let mut psi: Vec<f64> = coarse.iter().map(|w| w.2).collect();
    unwrap(&mut psi);
    let frequency = if coarse.len() >= 2 {
        let t: Vec<f64> = coarse.iter().map(|w| w.0 / sample_rate).collect();
        let tm = t.iter().sum::<f64>() / t.len() as f64;
        let pm = psi.iter().sum::<f64>() / psi.len() as f64;
        let (num, den) = t.iter().zip(&psi).fold((0.0, 0.0), |(nu, de), (&ti, &pi)| {
            (nu + (ti - tm) * (pi - pm), de + (ti - tm) * (ti - tm))
        });
        f_nominal + num / den / (2.0 * PI)
    } else {
        f_nominal
    };
    if !((frequency - f_nominal).abs() <= 0.05 * f_nominal) {
        return Err(DemodError::FrequencyOutOfRange {
            estimated: frequency,
            nominal: f_nominal,
        });
    }

    // Pass 2 at the block frequency for amplitude and tracked phase.
    let fine = fit_windows(u, sample_rate, frequency, len, hop);
    let level = (u.iter().map(|x| x * x).sum::<f64>() / u.len() as f64).sqrt() * 2f64.sqrt();
    let mut amps: Vec<f64> = fine.iter().map(|w| w.1).collect();
    amps.sort_by(f64::total_cmp);
    let amplitude = amps[amps.len() / 2];
    if !(amplitude > 0.1 * level) || amplitude == 0.0 {
        return Err(DemodError::NoCarrier { amplitude, level });
    }

    let step = 2.0 * PI * frequency / sample_rate;
    let mut track: Vec<(f64, f64, f64)> = match settings.phase_reference {
        PhaseReference::ZeroCrossing => {
            let crossings = upward_crossings(u, 0.05 * amplitude);
            let mut k = 0usize;
            crossings
                .iter()
                .map(|&x| {
                    while k + 1 < fine.len() && fine[k + 1].0 <= x {
                        k += 1;
                    }
                    (x, fine[k].1, -step * x)
                })
                .collect()
        }
        PhaseReference::LeastSquares => Vec::new(),
    };
    // Too few crossings (very short or heavily distorted input): fall back.
    let per_entry = if track.len() >= 2 {
        period
    } else {
        track = fine.clone();
        hop as f64
    };
    let mut phase: Vec<f64> = track.iter().map(|w| w.2).collect();
    unwrap(&mut phase);
    // Amplitude steps bias single-window phases; the median over many
    // entries removes that while keeping genuine phase steps.
    let span = (settings.phase_smoothing_periods * period / per_entry).round() as usize;
    if span >= 3 {
        phase = sliding_median(&phase, span | 1);
    }

    let windows = track
        .iter()
        .enumerate()
        .map(|(k, &(center, amplitude, _))| {
            let (a, b) = (k.saturating_sub(1), (k + 1).min(track.len() - 1));
            let slope = if b > a {
                (phase[b] - phase[a]) / (track[b].0 - track[a].0) * sample_rate
            } else {
                0.0
            };
            CarrierWindow {
                center,
                frequency: frequency + slope / (2.0 * PI),
                amplitude,
                phase: phase[k],
            }
        })
        .collect();
    Ok(CarrierEstimate {
        frequency,
        sample_rate,
        sample_count: u.len(),
        window_len: len,
        hop,
        windows,
    })
}

/// Ratio demodulation followed by the sliding-median statistical filter.
pub fn demodulate(
    u: &[f64],
    carrier: &CarrierEstimate,
    settings: &DemodSettings,
) -> Result<ModulatingSignal, DemodError> {
    settings.validate()?;
    if u.len() != carrier.sample_count {
        return Err(DemodError::LengthMismatch {
            expected: carrier.sample_count,
            actual: u.len(),
        });
    }
    let c = carrier.unit_carrier();
    let ratio: Vec<Option<f64>> = u
        .iter()
        .zip(&c)
        .map(|(&x, &ci)| (ci.abs() >= settings.guard).then(|| x / ci))
        .collect();
    let raw = bridge_gaps(&ratio).ok_or(DemodError::Degenerate { guard: settings.guard })?;
    Ok(ModulatingSignal {
        samples: sliding_median(&raw, settings.median_window),
        sample_rate: carrier.sample_rate,
        channel: None,
        effective_bandwidth: carrier.sample_rate / (2.0 * settings.median_window as f64),
    })
}

/// Carrier estimation and demodulation of one channel.
pub fn demodulate_channel(
    u: &[f64],
    sample_rate: f64,
    f_nominal: f64,
    settings: &DemodSettings,
) -> Result<ModulatingSignal, DemodError> {
    let carrier = estimate_carrier_with(u, sample_rate, f_nominal, settings)?;
    demodulate(u, &carrier, settings)
}

// Linear interpolation across runs of missing samples; runs touching either
// end take the nearest valid value.
fn bridge_gaps(x: &[Option<f64>]) -> Option<Vec<f64>> {
    let first = x.iter().position(Option::is_some)?;
    let mut out = vec![0.0; x.len()];
    let mut last_valid = first;
    let v0 = x[first].unwrap();
    out[..=first].iter_mut().for_each(|o| *o = v0);
    for i in first + 1..x.len() {
        if let Some(v) = x[i] {
            let gap = i - last_valid;
            if gap > 1 {
                let a = out[last_valid];
                for j in 1..gap {
                    out[last_valid + j] = a + (v - a) * j as f64 / gap as f64;
                }
            }
            out[i] = v;
            last_valid = i;
        }
    }
    let tail = out[last_valid];
    out[last_valid + 1..].iter_mut().for_each(|o| *o = tail);
    Some(out)
}

/// Centred sliding median; the window shrinks symmetrically at the edges.
pub fn sliding_median(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    let h = window / 2;
    if n == 0 || h == 0 {
        return x.to_vec();
    }
    let direct = |i: usize| {
        let r = h.min(i).min(n - 1 - i);
        let mut w = x[i - r..=i + r].to_vec();
        w.sort_by(f64::total_cmp);
        w[r]
    };
    let mut out = vec![0.0; n];
    if n <= 2 * h + 1 {
        for (i, o) in out.iter_mut().enumerate() {
            *o = direct(i);
        }
        return out;
    }
    for i in (0..h).chain(n - h..n) {
        out[i] = direct(i);
    }
    let mut sorted = x[..=2 * h].to_vec();
    sorted.sort_by(f64::total_cmp);
    out[h] = sorted[h];
    for i in h + 1..n - h {
        let gone = x[i - h - 1];
        let pos = sorted.partition_point(|v| v.total_cmp(&gone).is_lt());
        sorted.remove(pos);
        let new = x[i + h];
        let pos = sorted.partition_point(|v| v.total_cmp(&new).is_lt());
        sorted.insert(pos, new);
        out[i] = sorted[h];
    }
    out
}

/// Relative peak-to-peak of the envelope, `(max - min) / mean`.
pub fn envelope_deviation(m: &ModulatingSignal) -> f64 {
    if m.samples.is_empty() {
        return 0.0;
    }
    let (lo, hi) = m
        .samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mean = m.mean();
    if mean == 0.0 {
        return 0.0;
    }
    (hi - lo) / mean
}
