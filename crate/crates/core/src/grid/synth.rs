use std::collections::{BTreeMap, HashMap};
use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::schedule::toggle_times;
use super::{build_network, GridError, LoadSpec, NetworkModel, ScenarioConfig, SourceModulation};
use crate::{ChannelId, Phase};

/// Sampled phase voltages at several supply points on a common time base.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiPointRecording {
    pub channels: BTreeMap<ChannelId, Vec<f64>>,
    pub sample_rate: f64,
    pub carrier_frequency_nominal: f64,
    pub scenario_ref: Option<String>,
}

impl MultiPointRecording {
    pub fn sample_count(&self) -> usize {
        self.channels.values().next().map_or(0, Vec::len)
    }

    pub fn duration(&self) -> f64 {
        self.sample_count() as f64 / self.sample_rate
    }

    pub fn phases(&self) -> Vec<Phase> {
        let mut p: Vec<Phase> = self.channels.keys().map(|c| c.phase).collect();
        p.dedup();
        p.sort();
        p.dedup();
        p
    }

    pub fn channel(&self, point: &str, phase: Phase) -> Option<&[f64]> {
        self.channels.get(&ChannelId::new(point, phase)).map(Vec::as_slice)
    }

    /// Checks that all channels have the same length and the rate is valid.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.sample_rate > 0.0) {
            return Err(format!("sample rate must be positive, got {}", self.sample_rate));
        }
        let n = self.sample_count();
        if let Some((c, s)) = self.channels.iter().find(|(_, s)| s.len() != n) {
            return Err(format!("channel {c} has {} samples, expected {n}", s.len()));
        }
        Ok(())
    }

    /// Every sample multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        for s in out.channels.values_mut() {
            s.iter_mut().for_each(|x| *x *= k);
        }
        out
    }
}

/// Loads whose own on- or off-interval is shorter than 10 samples, where
/// stitching steady-state phasors stops being a good approximation.
pub fn quasi_stationary_warnings(config: &ScenarioConfig) -> Vec<String> {
    let min_samples = 10.0;
    let mut out = Vec::new();
    let mut check = |id: &str, f: f64, duty: f64| {
        let shortest = duty.min(1.0 - duty) / f * config.sample_rate;
        if shortest < min_samples {
            out.push(format!(
                "{id}: switching interval of {shortest:.1} samples is below {min_samples}; \
                 quasi-stationary synthesis is degraded"
            ));
        }
    };
    for l in &config.loads {
        check(&l.id, l.switch_frequency_hz, l.duty);
    }
    if let Some(m) = &config.source_modulation {
        check("source modulation", m.frequency_hz, m.duty);
    }
    out
}

/// Synthesizes the voltage at every supply point and recorded phase.
///
/// Between switching events the network is in steady state, so each segment
/// is a sinusoid (plus source harmonics) with the amplitude and phase of the
/// nodal phasor for that load state. The time base is continuous across
/// segments.
pub fn synthesize(config: &ScenarioConfig) -> Result<MultiPointRecording, GridError> {
    config.validate()?;
    for w in quasi_stationary_warnings(config) {
        log::warn!("{w}");
    }
    let model = build_network(&config.topology, config.carrier_frequency_hz)?;
    let n = config.sample_count();
    let fs = config.sample_rate;
    let omega = 2.0 * PI * config.carrier_frequency_hz;

    let mut orders: Vec<u32> = vec![1];
    orders.extend(config.harmonics.iter().map(|h| h.order));
    // sin/cos of h·ω·t for every sample, shared by all channels.
    let trig: Vec<(Vec<f64>, Vec<f64>)> = orders
        .iter()
        .map(|&h| {
            (0..n)
                .map(|i| (h as f64 * omega * i as f64 / fs).sin_cos())
                .unzip()
        })
        .collect();

    let mut channels = BTreeMap::new();
    for phase in config.phases() {
        let waves = synthesize_phase(config, &model, phase, n, &orders, &trig)?;
        for (p, samples) in config.topology.supply_points.iter().zip(waves) {
            channels.insert(ChannelId::new(p.clone(), phase), samples);
        }
    }

    if config.noise_std > 0.0 {
        let normal = Normal::new(0.0, config.noise_std).expect("validated noise_std");
        for (k, samples) in channels.values_mut().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(k as u64 + 1);
            samples.iter_mut().for_each(|x| *x += normal.sample(&mut rng));
        }
    }

    Ok(MultiPointRecording {
        channels,
        sample_rate: fs,
        carrier_frequency_nominal: config.carrier_frequency_hz,
        scenario_ref: config.name.clone(),
    })
}

// Bit 63 of the state key is the source modulation.
const SOURCE_BIT: u32 = 63;

fn first_sample_at(t: f64, fs: f64) -> usize {
    (t * fs - 1e-7).ceil().max(0.0) as usize
}

fn synthesize_phase(
    config: &ScenarioConfig,
    model: &NetworkModel,
    phase: Phase,
    n: usize,
    orders: &[u32],
    trig: &[(Vec<f64>, Vec<f64>)],
) -> Result<Vec<Vec<f64>>, GridError> {
    let fs = config.sample_rate;
    let on_phase: Vec<&LoadSpec> = config.loads.iter().filter(|l| l.phases.contains(&phase)).collect();
    if on_phase.len() >= SOURCE_BIT as usize {
        return Err(GridError::Scenario(format!(
            "at most {SOURCE_BIT} loads per phase are supported"
        )));
    }
    let horizon = n as f64 / fs;

    // (sample index, bit, on)
    let mut toggles: Vec<(usize, u32, bool)> = Vec::new();
    for (bit, l) in on_phase.iter().enumerate() {
        for (t, on) in toggle_times(l.switch_frequency_hz, l.duty, l.start_phase, horizon) {
            toggles.push((first_sample_at(t, fs), bit as u32, on));
        }
    }
    if let Some(SourceModulation { frequency_hz, duty, start_phase, .. }) = config.source_modulation {
        for (t, on) in toggle_times(frequency_hz, duty, start_phase, horizon) {
            toggles.push((first_sample_at(t, fs), SOURCE_BIT, on));
        }
    }
    toggles.sort_by_key(|&(i, bit, _)| (i, bit));

    let points = model.supply_points().to_vec();
    let mut cache: HashMap<u64, Vec<Vec<Complex64>>> = HashMap::new();
    let mut phasors_for = |mask: u64| -> Result<Vec<Vec<Complex64>>, GridError> {
        if let Some(v) = cache.get(&mask) {
            return Ok(v.clone());
        }
        let states: Vec<(&LoadSpec, bool)> = on_phase
            .iter()
            .enumerate()
            .map(|(bit, l)| (*l, mask & (1 << bit) != 0))
            .collect();
        let scale = match (&config.source_modulation, mask & (1 << SOURCE_BIT) != 0) {
            (Some(m), true) => 1.0 - m.depth,
            _ => 1.0,
        };
        let mut per_order = Vec::with_capacity(orders.len());
        for (k, &h) in orders.iter().enumerate() {
            let shunt = model.shunt_for_phase(&states, phase, config.nominal_voltage)?;
            let emf = if k == 0 {
                Complex64::from_polar(config.nominal_voltage * scale, phase.angle())
            } else {
                let hm = &config.harmonics[k - 1];
                Complex64::from_polar(
                    config.nominal_voltage * scale * hm.amplitude,
                    hm.phase + h as f64 * phase.angle(),
                )
            };
            let v = model.solve_phase(&shunt, emf, h)?;
            per_order.push(points.iter().map(|&p| v[p] * SQRT_2).collect::<Vec<_>>());
        }
        cache.insert(mask, per_order.clone());
        Ok(per_order)
    };

    let mut out = vec![vec![0.0; n]; points.len()];
    let mut mask = 0u64;
    let mut start = 0usize;
    let mut k = 0usize;
    while start < n {
        while k < toggles.len() && toggles[k].0 <= start {
            let (_, bit, on) = toggles[k];
            if on {
                mask |= 1 << bit;
            } else {
                mask &= !(1 << bit);
            }
            k += 1;
        }
        let end = toggles.get(k).map_or(n, |t| t.0.min(n));
        let phasors = phasors_for(mask)?;
        for (j, wave) in out.iter_mut().enumerate() {
            for (o, (sin, cos)) in trig.iter().enumerate() {
                let v = phasors[o][j];
                for i in start..end {
                    wave[i] += v.re * sin[i] + v.im * cos[i];
                }
            }
        }
        start = end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{solve_state, Harmonic, Topology};

    fn one_load(point: &str, f: f64) -> ScenarioConfig {
        let mut s = ScenarioConfig::quiet(1.0);
        s.recorded_phases = Some(vec![Phase::L1]);
        s.loads.push(LoadSpec {
            id: "a".into(),
            supply_point: point.into(),
            phases: vec![Phase::L1],
            rated_power_kw: 2.0,
            switch_frequency_hz: f,
            duty: 0.5,
            start_phase: 0.0,
        });
        s
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn quiet_grid_is_nominal_sinusoid() {
        let rec = synthesize(&ScenarioConfig::quiet(1.0)).unwrap();
        assert_eq!(rec.channels.len(), 21);
        assert_eq!(rec.sample_count(), 20_000);
        for s in rec.channels.values() {
            assert!((rms(s) - 230.0).abs() / 230.0 < 1e-4);
        }
    }

    #[test]
    fn per_cycle_peak_follows_load_state() {
        let cfg = one_load("P4", 5.0);
        let rec = synthesize(&cfg).unwrap();
        let model = build_network(&cfg.topology, 50.0).unwrap();
        let on = solve_state(&model, &[(&cfg.loads[0], true)], 230.0).unwrap();
        let v_on = on.voltage("P4", Phase::L1).unwrap().norm() * SQRT_2;
        let s = rec.channel("P4", Phase::L1).unwrap();
        // First 100 ms the load is on, next 100 ms off; take cycle maxima.
        let peak = |a: usize, b: usize| s[a..b].iter().cloned().fold(f64::MIN, f64::max);
        assert!((peak(400, 800) - v_on).abs() < 0.01);
        assert!((peak(2400, 2800) - 230.0 * SQRT_2).abs() < 0.01);
    }

    #[test]
    fn harmonics_and_quasi_stationary_warning() {
        let mut cfg = one_load("P2", 1200.0);
        cfg.harmonics.push(Harmonic { order: 5, amplitude: 0.05, phase: 0.0 });
        assert_eq!(quasi_stationary_warnings(&cfg).len(), 1);
        let rec = synthesize(&ScenarioConfig { loads: vec![], ..cfg }).unwrap();
        let s = rec.channel("P1", Phase::L1).unwrap();
        let expected = 230.0 * (1.0f64 + 0.05 * 0.05).sqrt();
        assert!((rms(s) - expected).abs() / expected < 1e-4);
    }

    #[test]
    fn deterministic_with_noise() {
        let mut cfg = one_load("P3", 7.0);
        cfg.noise_std = 0.1;
        cfg.seed = 11;
        let a = synthesize(&cfg).unwrap();
        let b = synthesize(&cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed = 12;
        assert_ne!(a, synthesize(&cfg).unwrap());
    }

    #[test]
    fn rejects_invalid_scenario() {
        let mut cfg = ScenarioConfig::quiet(1.0);
        cfg.topology = Topology { supply_points: vec![], ..Topology::reference_feeder() };
        cfg.loads = one_load("P4", 5.0).loads;
        assert!(matches!(synthesize(&cfg), Err(GridError::Scenario(_))));
    }
}
