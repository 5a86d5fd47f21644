use super::fit::frac;

/// Residual folded onto one period of a trial frequency.
///
/// Bin `b` collects every sample whose phase `frac(f·t)` falls in
/// `[b/B, (b+1)/B)`. A zero-mean pulse template that is on for bins
/// `[start, start+len)` (circularly) then has closed-form inner products with
/// the residual from prefix sums, so a whole duty/phase grid costs O(B²/steps).
pub(crate) struct PhaseFold {
    bins: usize,
    // Prefix sums over two concatenated periods for wrap-around windows.
    sum_prefix: Vec<f64>,
    count_prefix: Vec<f64>,
    total: f64,
    n: f64,
}

/// Circular run of bins that a template is on for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct BinSpan {
    pub start: usize,
    pub len: usize,
}

impl PhaseFold {
    pub fn new(x: &[f64], t0: f64, dt: f64, frequency: f64, bins: usize) -> Self {
        let mut sums = vec![0.0; bins];
        let mut counts = vec![0.0; bins];
        let scale = bins as f64;
        for (i, &v) in x.iter().enumerate() {
            let b = ((frac(frequency * (t0 + dt * i as f64)) * scale) as usize).min(bins - 1);
            sums[b] += v;
            counts[b] += 1.0;
        }
        let mut sum_prefix = vec![0.0; 2 * bins + 1];
        let mut count_prefix = vec![0.0; 2 * bins + 1];
        for k in 0..2 * bins {
            sum_prefix[k + 1] = sum_prefix[k] + sums[k % bins];
            count_prefix[k + 1] = count_prefix[k] + counts[k % bins];
        }
        PhaseFold {
            bins,
            total: sum_prefix[bins],
            n: count_prefix[bins],
            sum_prefix,
            count_prefix,
        }
    }

    /// `(⟨r, s⟩, ⟨s, s⟩)` for the zero-mean template `s = on − n_on/n`.
    pub fn inner(&self, span: BinSpan) -> (f64, f64) {
        let s = span.start % self.bins;
        let on_sum = self.sum_prefix[s + span.len] - self.sum_prefix[s];
        let on_n = self.count_prefix[s + span.len] - self.count_prefix[s];
        let p = if self.n > 0.0 { on_n / self.n } else { 0.0 };
        (on_sum - p * self.total, on_n - on_n * p)
    }

    /// Residual energy removed by projecting onto the template.
    pub fn energy(&self, span: BinSpan) -> f64 {
        let (num, den) = self.inner(span);
        if den <= 1e-12 {
            0.0
        } else {
            num * num / den
        }
    }

    /// Best span over `len ∈ {len_step·k}` and `start ∈ {start_step·k}`.
    pub fn best_on_grid(&self, start_step: usize, len_step: usize) -> (BinSpan, f64) {
        let mut best = (BinSpan { start: 0, len: len_step }, f64::NEG_INFINITY);
        let mut len = len_step;
        while len < self.bins {
            let mut start = 0;
            while start < self.bins {
                let span = BinSpan { start, len };
                let e = self.energy(span);
                if e > best.1 {
                    best = (span, e);
                }
                start += start_step;
            }
            len += len_step;
        }
        best
    }

    /// Best span with each edge moved independently within `±radius` bins of
    /// `around`, stepping `step` bins.
    pub fn refine_edges(&self, around: BinSpan, start_radius: usize, end_radius: usize, step: usize) -> (BinSpan, f64) {
        let b = self.bins as i64;
        let s0 = around.start as i64;
        let e0 = s0 + around.len as i64;
        let mut best = (around, self.energy(around));
        let step = step.max(1) as i64;
        let mut ds = -(start_radius as i64);
        while ds <= start_radius as i64 {
            let mut de = -(end_radius as i64);
            while de <= end_radius as i64 {
                let s = s0 + ds;
                let len = e0 + de - s;
                if len >= 1 && len < b {
                    let span = BinSpan {
                        start: s.rem_euclid(b) as usize,
                        len: len as usize,
                    };
                    let e = self.energy(span);
                    if e > best.1 {
                        best = (span, e);
                    }
                }
                de += step;
            }
            ds += step;
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inner_products_match_direct_sums() {
        let fs = 1000.0;
        let f = 7.3;
        let x: Vec<f64> = (0..5000).map(|i| ((i * 7919) % 113) as f64 / 113.0 - 0.4).collect();
        let fold = PhaseFold::new(&x, 0.0, 1.0 / fs, f, 64);
        let span = BinSpan { start: 50, len: 30 };
        let on: Vec<bool> = (0..x.len())
            .map(|i| {
                let b = ((f * i as f64 / fs).rem_euclid(1.0) * 64.0) as usize;
                (b + 64 - 50) % 64 < 30
            })
            .collect();
        let p = on.iter().filter(|&&o| o).count() as f64 / x.len() as f64;
        let s: Vec<f64> = on.iter().map(|&o| if o { 1.0 - p } else { -p }).collect();
        let num: f64 = x.iter().zip(&s).map(|(a, b)| a * b).sum();
        let den: f64 = s.iter().map(|v| v * v).sum();
        let (n2, d2) = fold.inner(span);
        assert!((num - n2).abs() < 1e-9 && (den - d2).abs() < 1e-9);
    }
}
