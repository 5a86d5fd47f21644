use std::collections::BTreeSet;

use vfloc::bench::{case_seed, generate_scenario, run_suite, GeneratorRanges, GroundTruth, SuiteSettings};

#[test]
fn thousand_draws_stay_within_ranges() {
    let r = GeneratorRanges::default();
    let mut counts = BTreeSet::new();
    let mut three_phase = 0usize;
    let mut total = 0usize;
    for i in 0..1000 {
        let c = generate_scenario(case_seed(1, i), &r).unwrap();
        for s in &c.topology.sections {
            assert!((50.0..=150.0).contains(&s.resistance_mohm), "{}", s.resistance_mohm);
            assert!((6.7..=100.0).contains(&s.inductance_uh), "{}", s.inductance_uh);
        }
        let n = c.loads.len();
        assert!((2..=6).contains(&n));
        counts.insert(n);
        let freqs: Vec<f64> = c.loads.iter().map(|l| l.switch_frequency_hz).collect();
        for (a, &fa) in freqs.iter().enumerate() {
            for &fb in &freqs[a + 1..] {
                assert!((fa - fb).abs() / fa.min(fb) >= 0.15, "{fa} vs {fb}");
            }
        }
        for l in &c.loads {
            assert!((0.5..=150.0).contains(&l.switch_frequency_hz));
            assert!((0.5..=4.0).contains(&l.rated_power_kw));
            assert!((0.3..=0.7).contains(&l.duty));
            let k: usize = l.supply_point[1..].parse().unwrap();
            assert!((2..=7).contains(&k));
            assert!(l.phases.len() == 1 || l.phases.len() == 3);
            three_phase += usize::from(l.phases.len() == 3);
            total += 1;
            for p in &l.phases {
                assert!(c.phases().contains(p));
            }
        }
        c.validate().unwrap();
    }
    assert_eq!(counts, (2..=6).collect());
    let share = three_phase as f64 / total as f64;
    assert!((0.45..0.55).contains(&share), "{share}");
}

#[test]
fn same_seed_same_scenario() {
    let r = GeneratorRanges::default();
    assert_eq!(generate_scenario(7, &r).unwrap(), generate_scenario(7, &r).unwrap());
    assert_ne!(generate_scenario(7, &r).unwrap(), generate_scenario(8, &r).unwrap());
    let seeds: BTreeSet<u64> = (0..100).map(|i| case_seed(42, i)).collect();
    assert_eq!(seeds.len(), 100);
}

#[test]
fn infeasible_separation_is_an_error() {
    let r = GeneratorRanges {
        load_count: [6, 6],
        frequency_hz: [10.0, 12.0],
        ..Default::default()
    };
    assert!(generate_scenario(3, &r).is_err());
}

#[test]
fn ground_truth_mirrors_the_config() {
    let c = generate_scenario(5, &GeneratorRanges::default()).unwrap();
    let t = GroundTruth::from_config(&c);
    assert_eq!(t.n(), c.loads.len());
}

#[test]
fn suite_tables_are_bit_identical_across_runs() {
    let mut s = SuiteSettings::default();
    s.ranges.duration_s = 3.0;
    s.ranges.load_count = [2, 3];
    s.ranges.frequency_hz = [2.0, 150.0];
    s.ranges.three_phase_probability = 0.0;
    let a = run_suite(2, 99, &s);
    let b = run_suite(2, 99, &s);
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.rows.len(), 2);
}
