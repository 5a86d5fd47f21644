use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::fold::PhaseFold;
use super::DapwError;

// Coarse fold resolution used to score trial frequencies: 320 bins hold both
// the 1/20 duty grid and the 1/64 phase grid.
pub(crate) const SCORE_BINS: usize = 320;
const SCORE_DUTY_STEP: usize = SCORE_BINS / 20;
const SCORE_PHASE_STEP: usize = SCORE_BINS / 64;

/// A sample sequence on a uniform time grid `t0 + i·dt`.
pub(crate) struct Series {
    pub x: Vec<f64>,
    pub t0: f64,
    pub dt: f64,
}

impl Series {
    pub fn duration(&self) -> f64 {
        self.x.len() as f64 * self.dt
    }

    /// Boxcar-averaged copy with roughly `target_rate` samples per second.
    /// Each output sample sits at the centre of its block.
    pub fn decimated(x: &[f64], fs: f64, target_rate: f64) -> Series {
        let d = ((fs / target_rate).floor() as usize).max(1);
        let blocks = x.len() / d;
        let y = (0..blocks)
            .map(|k| x[k * d..(k + 1) * d].iter().sum::<f64>() / d as f64)
            .collect();
        Series {
            x: y,
            t0: (d as f64 - 1.0) / 2.0 / fs,
            dt: d as f64 / fs,
        }
    }

    pub fn fold(&self, frequency: f64, bins: usize) -> PhaseFold {
        PhaseFold::new(&self.x, self.t0, self.dt, frequency, bins)
    }

    /// Energy captured by the best pulse template on the coarse grid.
    pub fn score(&self, frequency: f64) -> f64 {
        self.fold(frequency, SCORE_BINS)
            .best_on_grid(SCORE_PHASE_STEP, SCORE_DUTY_STEP)
            .1
    }

    /// Maximizes [`Series::score`] over `f0 ± half_span`: a grid at a quarter
    /// of the block's frequency resolution, then golden-section search
    /// around the best grid point.
    pub fn refine(&self, f0: f64, half_span: f64) -> (f64, f64) {
        let t = self.duration();
        let step = 0.25 / t;
        let k = (half_span / step).ceil().max(1.0) as i64;
        let mut best = (f0, self.score(f0));
        for j in -k..=k {
            let f = f0 + j as f64 * step;
            if j == 0 || f <= 0.0 {
                continue;
            }
            let e = self.score(f);
            if e > best.1 {
                best = (f, e);
            }
        }
        golden_max(|f| self.score(f), best.0 - step, best.0 + step, step * 1e-2, best)
    }
}

pub(crate) fn golden_max(g: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64, seed: (f64, f64)) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut best = seed;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut gc = g(c);
    let mut gd = g(d);
    while (b - a).abs() > tol {
        if gc > gd {
            b = d;
            d = c;
            gd = gc;
            c = b - r * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + r * (b - a);
            gd = g(d);
        }
    }
    for (f, e) in [(c, gc), (d, gd)] {
        if e > best.1 {
            best = (f, e);
        }
    }
    best
}

/// Spectral peaks of a zero-mean series within `[lo, hi]`, strongest first,
/// keeping only those at least `floor_factor` times the median power of the
/// band. Frequencies are refined by log-parabolic interpolation.
pub(crate) fn spectral_peaks(s: &Series, lo: f64, hi: f64, floor_factor: f64, max_peaks: usize) -> Vec<(f64, f64)> {
    let n = s.x.len();
    if n < 4 {
        return Vec::new();
    }
    let mean = s.x.iter().sum::<f64>() / n as f64;
    let len = n.next_power_of_two() * 4;
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); len];
    for (i, &v) in s.x.iter().enumerate() {
        let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
        buf[i] = Complex::new((v - mean) * w, 0.0);
    }
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let rate = 1.0 / s.dt;
    let df = rate / len as f64;
    let k_lo = ((lo / df).floor() as usize).max(1);
    let k_hi = ((hi / df).ceil() as usize).min(len / 2 - 1);
    if k_hi <= k_lo + 1 {
        return Vec::new();
    }
    let power: Vec<f64> = buf[..=k_hi + 1].iter().map(|c| c.norm_sqr()).collect();
    let mut band: Vec<f64> = power[k_lo..=k_hi].to_vec();
    band.sort_by(f64::total_cmp);
    let floor = band[band.len() / 2] * floor_factor;
    let top = band[band.len() - 1];
    if top <= 0.0 {
        return Vec::new();
    }

    let mut peaks: Vec<(f64, f64)> = (k_lo.max(1)..=k_hi)
        .filter(|&k| power[k] > power[k - 1] && power[k] >= power[k + 1] && power[k] > floor)
        .map(|k| {
            let (a, b, c) = (power[k - 1].ln(), power[k].ln(), power[k + 1].ln());
            let den = a - 2.0 * b + c;
            let delta = if den.abs() > 1e-300 { 0.5 * (a - c) / den } else { 0.0 };
            ((k as f64 + delta.clamp(-0.5, 0.5)) * df, power[k])
        })
        .collect();
    peaks.sort_by(|x, y| y.1.total_cmp(&x.1));
    peaks.truncate(max_peaks);
    peaks
}

/// Search parameters shared by [`dominant_frequency`] and the decomposer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SearchParams {
    pub floor_factor: f64,
    pub candidates: usize,
    pub scoring_rate: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            floor_factor: 30.0,
            candidates: 6,
            scoring_rate: 1500.0,
        }
    }
}

pub(crate) fn dominant_frequency_with(
    residual: &[f64],
    sample_rate: f64,
    range: (f64, f64),
    params: &SearchParams,
) -> Result<f64, DapwError> {
    let (lo, hi) = range;
    if !(lo > 0.0 && hi > lo) {
        return Err(DapwError::Settings(format!("invalid frequency range [{lo}, {hi}]")));
    }
    let duration = residual.len() as f64 / sample_rate;
    if duration * lo < 3.0 - 1e-9 {
        return Err(DapwError::TooShort {
            duration,
            lowest: lo,
        });
    }
    let rate = params.scoring_rate.max(8.0 * hi).min(sample_rate);
    let series = Series::decimated(residual, sample_rate, rate);
    let peaks = spectral_peaks(&series, lo, hi, params.floor_factor, params.candidates);
    if peaks.is_empty() {
        return Err(DapwError::NoComponent);
    }
    let span = |f: f64| (0.02 * f).min(1.0 / duration).max(0.5 / duration);
    let mut best = (0.0, f64::NEG_INFINITY);
    for &(f, _) in &peaks {
        let cand = series.refine(f, span(f));
        if cand.1 > best.1 {
            best = cand;
        }
    }
    // A square wave's odd harmonics must not win over its fundamental.
    let base = best;
    for div in [3.0, 5.0] {
        let sub = base.0 / div;
        if sub < lo {
            continue;
        }
        let cand = series.refine(sub, span(sub).max(0.02 * sub));
        if cand.1 >= 1.5 * base.1 && cand.1 > best.1 {
            best = cand;
        }
    }
    Ok(best.0)
}

/// Fundamental of the strongest rectangular periodicity in `residual`.
///
/// Spectral peaks are scored by how much energy the best pulse template at
/// each (refined) frequency captures; a winner whose third or fifth
/// subharmonic captures at least 1.5 times as much is replaced by it.
pub fn dominant_frequency(residual: &[f64], sample_rate: f64, range: (f64, f64)) -> Result<f64, DapwError> {
    dominant_frequency_with(residual, sample_rate, range, &SearchParams::default())
}
