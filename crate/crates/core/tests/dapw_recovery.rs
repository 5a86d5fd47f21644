use proptest::prelude::*;
use vfloc::dapw::{decompose, DecompositionSettings, PulseComponent};
use vfloc::demod::ModulatingSignal;

const FS: f64 = 20_000.0;
const SECONDS: f64 = 10.0;

#[derive(Debug, Clone, Copy)]
struct Pulse {
    f: f64,
    duty: f64,
    phase: f64,
    pp: f64,
}

fn envelope(pulses: &[Pulse]) -> ModulatingSignal {
    let n = (FS * SECONDS) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / FS;
            325.0
                + pulses
                    .iter()
                    .map(|p| if (p.f * t - p.phase).rem_euclid(1.0) < p.duty { p.pp } else { 0.0 })
                    .sum::<f64>()
        })
        .collect();
    ModulatingSignal {
        samples,
        sample_rate: FS,
        channel: None,
        effective_bandwidth: FS / 102.0,
    }
}

fn check(c: &PulseComponent, p: &Pulse, scale: f64) -> Result<(), TestCaseError> {
    prop_assert!((c.frequency - p.f).abs() / p.f <= 0.005 * scale, "f {} vs {}", c.frequency, p.f);
    prop_assert!((c.amplitude - p.pp).abs() / p.pp <= 0.02 * scale, "A {} vs {}", c.amplitude, p.pp);
    prop_assert!((c.duty - p.duty).abs() <= 0.05 * scale, "duty {} vs {}", c.duty, p.duty);
    Ok(())
}

fn arb_pulse(f: std::ops::Range<f64>) -> impl Strategy<Value = Pulse> {
    (f, 0.3..0.7f64, 0.0..1.0f64, 0.2..3.0f64).prop_map(|(f, duty, phase, pp)| Pulse { f, duty, phase, pp })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn single_pulse_wave_is_recovered(p in arb_pulse(0.5..150.0)) {
        let d = decompose(&envelope(&[p]), &DecompositionSettings::default()).unwrap();
        prop_assert!(!d.components.is_empty());
        check(&d.components[0], &p, 1.0)?;
        prop_assert!(d.residual_energy_fraction < 0.05);
    }

    #[test]
    fn two_pulse_waves_are_recovered(a in arb_pulse(0.5..130.0), ratio in 1.10..3.0f64, b in arb_pulse(0.5..1.0)) {
        let b = Pulse { f: (a.f * ratio).min(150.0), ..b };
        prop_assume!(b.f / a.f >= 1.10);
        let d = decompose(&envelope(&[a, b]), &DecompositionSettings::default()).unwrap();
        for p in [a, b] {
            let c = d
                .components
                .iter()
                .min_by(|x, y| (x.frequency - p.f).abs().total_cmp(&(y.frequency - p.f).abs()))
                .unwrap();
            check(c, &p, 2.5)?;
        }
    }

    #[test]
    fn reconstruction_plus_residual_is_the_input(p in arb_pulse(0.5..150.0), q in arb_pulse(0.5..150.0)) {
        let m = envelope(&[p, q]);
        let d = decompose(&m, &DecompositionSettings::default()).unwrap();
        let fit = d.reconstruct();
        let energy: f64 = m.samples.iter().map(|v| (v - d.dc_level).powi(2)).sum();
        let residual: f64 = m.samples.iter().zip(&fit).map(|(v, r)| (v - r).powi(2)).sum();
        prop_assert!((residual / energy - d.residual_energy_fraction).abs() < 1e-9);
    }
}

#[test]
fn scaling_the_envelope_scales_the_amplitudes() {
    let p = Pulse {
        f: 23.0,
        duty: 0.4,
        phase: 0.2,
        pp: 1.0,
    };
    let m = envelope(&[p]);
    let mut scaled = m.clone();
    scaled.samples.iter_mut().for_each(|v| *v *= 3.0);
    let s = DecompositionSettings::default();
    let a = decompose(&m, &s).unwrap().components[0];
    let b = decompose(&scaled, &s).unwrap().components[0];
    assert!((b.amplitude / a.amplitude - 3.0).abs() < 1e-9);
    assert_eq!(a.frequency, b.frequency);
}
