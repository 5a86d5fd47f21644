use super::*;

const FS: f64 = 2000.0;

fn pulse(n: usize, fs: f64, f: f64, duty: f64, phase: f64, pp: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if (f * i as f64 / fs - phase).rem_euclid(1.0) < duty {
                pp
            } else {
                0.0
            }
        })
        .collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn noise(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, sigma).unwrap();
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

#[test]
fn dominant_frequency_of_square() {
    let x = pulse(10 * 20_000, 20_000.0, 7.0, 0.5, 0.0, 2.0);
    let f = dominant_frequency(&x, 20_000.0, (0.3, 160.0)).unwrap();
    assert!((f - 7.0).abs() <= 0.05, "{f}");
}

#[test]
fn dominant_frequency_prefers_stronger_square() {
    let n = 20_000;
    let x = add(&pulse(n, FS, 7.0, 0.5, 0.0, 2.0), &pulse(n, FS, 25.0, 0.5, 0.1, 1.0));
    let f = dominant_frequency(&x, FS, (0.3, 160.0)).unwrap();
    assert!((f - 7.0).abs() < 0.07, "{f}");
}

#[test]
fn dominant_frequency_rejects_noise() {
    let x = noise(20_000, 1e-3, 3);
    assert_eq!(dominant_frequency(&x, FS, (0.3, 160.0)), Err(DapwError::NoComponent));
}

#[test]
fn dominant_frequency_needs_three_periods() {
    let x = pulse(2000, FS, 5.0, 0.5, 0.0, 1.0);
    assert!(matches!(
        dominant_frequency(&x, FS, (1.0, 50.0)),
        Err(DapwError::TooShort { .. })
    ));
}

#[test]
fn fit_square_wave() {
    let x = pulse(20_000, FS, 5.0, 0.5, 0.3, 2.0);
    let fit = fit_pulse_wave(&x, FS, 5.02, 0.0).unwrap();
    let c = fit.component;
    assert!((c.amplitude - 2.0).abs() <= 0.02, "{c:?}");
    assert!((c.duty - 0.5).abs() <= 0.05, "{c:?}");
    assert!((c.frequency - 5.0).abs() / 5.0 <= 0.005, "{c:?}");
    assert!((c.phase_offset - 0.3).abs() < 0.01, "{c:?}");
}

#[test]
fn fit_quarter_duty_pulse() {
    let x = pulse(20_000, FS, 3.0, 0.25, 0.0, 1.0);
    let c = fit_pulse_wave(&x, FS, 3.0, 0.0).unwrap().component;
    assert!((c.duty - 0.25).abs() <= 0.05, "{c:?}");
    assert!((c.amplitude - 1.0).abs() <= 0.02, "{c:?}");
}

#[test]
fn fit_reports_positive_coefficient_for_dips() {
    // A load switching on lowers the envelope: fitted duty is the upper level.
    let x: Vec<f64> = pulse(20_000, FS, 4.0, 0.3, 0.0, 1.0).iter().map(|v| 230.0 - v).collect();
    let c = fit_pulse_wave(&x, FS, 4.0, 0.0).unwrap().component;
    assert!(c.coefficient > 0.0);
    assert!((c.duty - 0.7).abs() <= 0.05, "{c:?}");
    assert!((c.amplitude - 1.0).abs() <= 0.02, "{c:?}");
}

#[test]
fn fit_without_periodicity_is_rejected() {
    let x = noise(20_000, 1.0, 9);
    assert!(matches!(
        fit_pulse_wave(&x, FS, 13.7, 0.01),
        Err(DapwError::Rejected { .. })
    ));
}

#[test]
fn constant_envelope_has_no_components() {
    let x = vec![325.0; 20_000];
    let (d, r) = decompose_samples(&x, FS, &DecompositionSettings::default()).unwrap();
    assert!(d.components.is_empty());
    assert_eq!(d.dc_level, 325.0);
    assert!(r.iter().all(|&v| v == 0.0));
}

#[test]
fn empty_input_is_empty_decomposition() {
    let (d, r) = decompose_samples(&[], FS, &DecompositionSettings::default()).unwrap();
    assert!(d.components.is_empty() && r.is_empty());
}

#[test]
fn two_squares_are_separated() {
    let n = 20_000;
    let x = add(&pulse(n, FS, 7.0, 0.5, 0.0, 2.0), &pulse(n, FS, 25.0, 0.5, 0.2, 1.0));
    let (d, _) = decompose_samples(&x, FS, &DecompositionSettings::default()).unwrap();
    assert_eq!(d.components.len(), 2, "{:?}", d.components);
    let (a, b) = (&d.components[0], &d.components[1]);
    assert!((a.frequency - 7.0).abs() / 7.0 < 0.01 && (a.amplitude - 2.0).abs() / 2.0 < 0.05);
    assert!((b.frequency - 25.0).abs() / 25.0 < 0.01 && (b.amplitude - 1.0).abs() < 0.05);
    assert!(d.residual_energy_fraction < 0.05);
}

#[test]
fn backfitting_removes_cross_talk_between_components() {
    let (n, fs) = (200_000, 20_000.0);
    let x = add(&pulse(n, fs, 79.715, 0.371, 0.118, 0.809), &pulse(n, fs, 150.0, 0.597, 0.949, 0.809));
    let (d, _) = decompose_samples(&x, fs, &DecompositionSettings::default()).unwrap();
    for f in [79.715, 150.0] {
        let c = d.components.iter().find(|c| (c.frequency - f).abs() / f < 0.005).unwrap();
        assert!((c.amplitude - 0.809).abs() / 0.809 < 0.01, "{c:?}");
    }
}

#[test]
fn reconstruction_identity() {
    let n = 20_000;
    let x: Vec<f64> = add(&pulse(n, FS, 11.0, 0.4, 0.0, 1.5), &noise(n, 0.05, 1))
        .iter()
        .map(|v| v + 300.0)
        .collect();
    let (d, r) = decompose_samples(&x, FS, &DecompositionSettings::default()).unwrap();
    assert!(!d.components.is_empty());
    for ((xi, yi), ri) in x.iter().zip(d.reconstruct()).zip(&r) {
        assert!((xi - (yi + ri)).abs() < 1e-9);
    }
}

#[test]
fn component_cap_is_respected() {
    let n = 20_000;
    let mut x = pulse(n, FS, 3.0, 0.5, 0.0, 1.0);
    for (k, f) in [9.0, 17.0, 31.0].iter().enumerate() {
        x = add(&x, &pulse(n, FS, *f, 0.5, 0.1 * k as f64, 0.8));
    }
    let s = DecompositionSettings {
        max_components: 2,
        ..Default::default()
    };
    let (d, _) = decompose_samples(&x, FS, &s).unwrap();
    assert_eq!(d.components.len(), 2);
}

#[test]
fn settings_are_validated() {
    let bad = [
        DecompositionSettings {
            min_energy: 0.0,
            ..Default::default()
        },
        DecompositionSettings {
            max_components: 0,
            ..Default::default()
        },
        DecompositionSettings {
            f_min_hz: Some(200.0),
            ..Default::default()
        },
    ];
    for s in bad {
        assert!(matches!(s.validate(), Err(DapwError::Settings(_))));
    }
}
