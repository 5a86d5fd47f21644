use serde::{Deserialize, Serialize};

use super::fold::BinSpan;
use super::search::Series;
use super::DapwError;

// Final fit resolution: multiple of 20 (duty grid), 64 (phase grid) and of
// their halves, so the grid and its one-round refinement land on bins.
pub(crate) const FIT_BINS: usize = 1280;
const DUTY_STEP: usize = FIT_BINS / 20;
const PHASE_STEP: usize = FIT_BINS / 64;

/// One fitted pulse wave.
///
/// The waveform is `coefficient · (on(t) − p)` where `on(t)` is true when
/// `frac(frequency·t − phase_offset) < duty` and `p` is the fraction of
/// samples that are on, so every component is zero-mean. The coefficient is
/// always positive: `duty` is the fraction of the period spent at the upper
/// level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseComponent {
    /// Peak-to-peak excursion, in volts.
    pub amplitude: f64,
    pub frequency: f64,
    pub duty: f64,
    pub phase_offset: f64,
    pub energy_fraction: f64,
    /// Least-squares projection coefficient used for subtraction.
    pub coefficient: f64,
}

impl PulseComponent {
    pub(crate) fn is_on(&self, i: usize, sample_rate: f64) -> bool {
        template_on(i, sample_rate, self.frequency, self.phase_offset, self.duty)
    }

    /// Zero-mean waveform of this component over `n` samples.
    pub fn waveform(&self, n: usize, sample_rate: f64) -> Vec<f64> {
        let on: Vec<bool> = (0..n).map(|i| self.is_on(i, sample_rate)).collect();
        let p = on.iter().filter(|&&o| o).count() as f64 / n.max(1) as f64;
        on.into_iter()
            .map(|o| self.coefficient * (if o { 1.0 } else { 0.0 } - p))
            .collect()
    }
}

pub(crate) fn template_on(i: usize, fs: f64, f: f64, phase: f64, duty: f64) -> bool {
    frac(f * (i as f64 / fs) - phase) < duty
}

/// `x.rem_euclid(1.0)` without the libm call.
#[inline]
pub(crate) fn frac(x: f64) -> f64 {
    let r = x - (x as i64) as f64;
    if r < 0.0 {
        r + 1.0
    } else {
        r
    }
}

/// Result of [`fit_pulse_wave`]: the component and the residual energy it
/// removes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseFit {
    pub component: PulseComponent,
    pub energy: f64,
}

fn projection(residual: &[f64], fs: f64, f: f64, phase: f64, duty: f64) -> (f64, f64) {
    let mut n_on = 0usize;
    let mut on_sum = 0.0;
    let mut total = 0.0;
    for (i, &v) in residual.iter().enumerate() {
        total += v;
        if template_on(i, fs, f, phase, duty) {
            n_on += 1;
            on_sum += v;
        }
    }
    let n = residual.len() as f64;
    let p = n_on as f64 / n;
    (on_sum - p * total, n_on as f64 * (1.0 - p))
}

// Mean-on minus mean-off in each full period of the template; median over
// periods when at least five are available.
fn per_period_amplitude(residual: &[f64], fs: f64, f: f64, phase: f64, duty: f64) -> Option<f64> {
    let n = residual.len();
    let duration = n as f64 / fs;
    let first = (-phase).ceil() as i64;
    let mut values = Vec::new();
    let mut k = first;
    loop {
        let t_start = (k as f64 + phase) / f;
        let t_end = (k as f64 + 1.0 + phase) / f;
        if t_end > duration {
            break;
        }
        let a = (t_start * fs).ceil().max(0.0) as usize;
        let b = ((t_end * fs).ceil() as usize).min(n);
        let (mut on, mut non, mut off, mut noff) = (0.0, 0usize, 0.0, 0usize);
        for (i, &v) in residual.iter().enumerate().take(b).skip(a) {
            if template_on(i, fs, f, phase, duty) {
                on += v;
                non += 1;
            } else {
                off += v;
                noff += 1;
            }
        }
        if non > 0 && noff > 0 {
            values.push(on / non as f64 - off / noff as f64);
        }
        k += 1;
    }
    if values.len() < 5 {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len();
    let med = if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    };
    (med > 0.0).then_some(med)
}

/// Fits the pulse wave near frequency `f` that best explains `residual`.
///
/// The frequency is refined around `f` (at most ±2%), then duty and phase are
/// searched on a 0.05 × 1/64 grid, refined once at half the grid steps, and
/// finally each edge is placed at 1/1280-period resolution. The reported
/// amplitude is the median per-period excursion when the block holds at
/// least five periods, else the least-squares coefficient.
///
/// Returns [`DapwError::Rejected`] when the fit removes less than
/// `min_energy_fraction` of the residual's energy.
pub fn fit_pulse_wave(
    residual: &[f64],
    sample_rate: f64,
    f: f64,
    min_energy_fraction: f64,
) -> Result<PulseFit, DapwError> {
    let n = residual.len();
    let duration = n as f64 / sample_rate;
    if !(f > 0.0) || f * duration < 1.0 || f >= sample_rate / 2.0 {
        return Err(DapwError::Settings(format!(
            "frequency {f} Hz is not searchable in a {duration} s block"
        )));
    }
    let mean = residual.iter().sum::<f64>() / n as f64;
    let total_energy: f64 = residual.iter().map(|v| (v - mean) * (v - mean)).sum();
    if total_energy <= 0.0 {
        return Err(DapwError::Rejected { energy_fraction: 0.0 });
    }

    // Frequency on a decimated copy; edges are then placed at full rate.
    let coarse = Series::decimated(residual, sample_rate, 1500.0f64.max(8.0 * f));
    let half_span = (0.02 * f).min(1.0 / duration).max(0.5 / duration).min(0.02 * f);
    let (frequency, _) = coarse.refine(f, half_span);
    let full = Series {
        x: residual.to_vec(),
        t0: 0.0,
        dt: 1.0 / sample_rate,
    };
    let fold = full.fold(frequency, FIT_BINS);
    let (grid, _) = fold.best_on_grid(PHASE_STEP, DUTY_STEP);
    let (half, _) = fold.refine_edges(grid, PHASE_STEP / 2, DUTY_STEP / 2, PHASE_STEP / 2);
    let (span, _) = fold.refine_edges(half, PHASE_STEP / 2, DUTY_STEP / 2, 1);
    let BinSpan { start, len } = span;
    let mut phase = start as f64 / FIT_BINS as f64;
    let mut duty = len as f64 / FIT_BINS as f64;

    let (mut num, mut den) = projection(residual, sample_rate, frequency, phase, duty);
    if num < 0.0 {
        // Same waveform, expressed with a positive coefficient.
        phase = ((start + len) % FIT_BINS) as f64 / FIT_BINS as f64;
        duty = (FIT_BINS - len) as f64 / FIT_BINS as f64;
        (num, den) = projection(residual, sample_rate, frequency, phase, duty);
    }
    if den <= 0.0 {
        return Err(DapwError::Rejected { energy_fraction: 0.0 });
    }
    let coefficient = num / den;
    let energy = num * num / den;
    let energy_fraction = energy / total_energy;
    if energy_fraction < min_energy_fraction {
        return Err(DapwError::Rejected { energy_fraction });
    }
    let amplitude =
        per_period_amplitude(residual, sample_rate, frequency, phase, duty).unwrap_or(coefficient);
    Ok(PulseFit {
        component: PulseComponent {
            amplitude,
            frequency,
            duty,
            phase_offset: phase,
            energy_fraction,
            coefficient,
        },
        energy,
    })
}
