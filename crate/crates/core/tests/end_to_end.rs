use vfloc::grid::{build_network, synthesize, LoadSpec, ScenarioConfig, SourceModulation, Topology};
use vfloc::localize::{check_trigger, detect_upstream, run_identification, AnalysisSettings, Indication, LocalizationReport};
use vfloc::Phase;

fn load(id: &str, point: &str, hz: f64, kw: f64) -> LoadSpec {
    LoadSpec {
        id: id.into(),
        supply_point: point.into(),
        phases: vec![Phase::L1],
        rated_power_kw: kw,
        switch_frequency_hz: hz,
        duty: 0.5,
        start_phase: 0.13,
    }
}

fn scenario(loads: Vec<LoadSpec>) -> ScenarioConfig {
    let mut c = ScenarioConfig::quiet(4.0);
    c.recorded_phases = Some(vec![Phase::L1]);
    c.loads = loads;
    c
}

fn analyze(c: &ScenarioConfig) -> LocalizationReport {
    let rec = synthesize(c).unwrap();
    run_identification(&rec, &c.topology, &AnalysisSettings::default()).unwrap()
}

/// The strongest track within 5% of `hz`.
fn indicated_at(r: &LocalizationReport, hz: f64) -> Indication {
    r.tracks
        .iter()
        .find(|t| (t.consensus_frequency - hz).abs() <= 0.05 * hz)
        .unwrap_or_else(|| panic!("no track near {hz} Hz"))
        .indicated
        .clone()
}

fn point(p: &str) -> Indication {
    Indication::Point(p.into())
}

#[test]
fn single_load_at_p5() {
    let r = analyze(&scenario(vec![load("a", "P5", 9.0, 2.0)]));
    assert!(r.trigger.fired);
    assert_eq!(indicated_at(&r, 9.0), point("P5"));
    let t = &r.tracks[0];
    assert!((t.consensus_frequency - 9.0).abs() < 0.01);
    assert_eq!(t.members(), 7);
}

#[test]
fn three_loads_at_distinct_points() {
    let r = analyze(&scenario(vec![
        load("a", "P3", 7.0, 2.0),
        load("b", "P5", 25.0, 1.5),
        load("c", "P7", 85.0, 2.5),
    ]));
    let genuine: Vec<_> = r.tracks.iter().filter(|t| t.members() >= 5 && !t.possible_artifact).collect();
    assert_eq!(genuine.len(), 3, "{:?}", r.tracks.iter().map(|t| t.consensus_frequency).collect::<Vec<_>>());
    assert_eq!(indicated_at(&r, 7.0), point("P3"));
    assert_eq!(indicated_at(&r, 25.0), point("P5"));
    assert_eq!(indicated_at(&r, 85.0), point("P7"));
}

#[test]
fn two_loads_at_the_same_point() {
    let r = analyze(&scenario(vec![load("a", "P6", 5.0, 2.0), load("b", "P6", 40.0, 1.0)]));
    assert_eq!(indicated_at(&r, 5.0), point("P6"));
    assert_eq!(indicated_at(&r, 40.0), point("P6"));
}

#[test]
fn medium_voltage_modulation_is_upstream() {
    let mut c = scenario(Vec::new());
    c.source_modulation = Some(SourceModulation {
        depth: 0.01,
        frequency_hz: 11.0,
        duty: 0.5,
        start_phase: 0.0,
    });
    let r = analyze(&c);
    assert_eq!(indicated_at(&r, 11.0), Indication::Upstream);
    let network = build_network(&c.topology, 50.0).unwrap();
    let s = AnalysisSettings::default();
    assert!(detect_upstream(&r.tracks[0], &network, s.tie_band, s.assessment));
}

#[test]
fn load_at_p6_is_not_upstream() {
    let c = scenario(vec![load("a", "P6", 13.0, 2.0)]);
    let r = analyze(&c);
    let network = build_network(&c.topology, 50.0).unwrap();
    let s = AnalysisSettings::default();
    assert!(!detect_upstream(&r.tracks[0], &network, s.tie_band, s.assessment));
    assert_eq!(r.tracks[0].indicated, point("P6"));
}

#[test]
fn quiet_grid_does_not_fire() {
    let c = scenario(Vec::new());
    let rec = synthesize(&c).unwrap();
    let r = run_identification(&rec, &c.topology, &AnalysisSettings::default()).unwrap();
    assert!(!r.trigger.fired);
    assert!(r.tracks.is_empty());
    assert!(!check_trigger(&rec, 0.004).unwrap().fired);
}

#[test]
fn square_modulation_at_one_point_fires() {
    let c = scenario(Vec::new());
    let mut rec = synthesize(&c).unwrap();
    let u = rec.channels.get_mut(&vfloc::ChannelId::new("P4", Phase::L1)).unwrap();
    for (i, v) in u.iter_mut().enumerate() {
        let t = i as f64 / rec.sample_rate;
        if (3.0 * t).fract() < 0.5 {
            *v *= 1.02;
        }
    }
    assert!(check_trigger(&rec, 0.004).unwrap().fired);
}

#[test]
fn common_scaling_leaves_indications_unchanged() {
    let c = scenario(vec![load("a", "P4", 6.0, 2.0), load("b", "P5", 31.0, 1.0)]);
    let rec = synthesize(&c).unwrap();
    let s = AnalysisSettings::default();
    let base = run_identification(&rec, &c.topology, &s).unwrap();
    for k in [0.5, 1.7] {
        let scaled = run_identification(&rec.scaled(k), &c.topology, &s).unwrap();
        for hz in [6.0, 31.0] {
            assert_eq!(indicated_at(&scaled, hz), indicated_at(&base, hz), "k={k} f={hz}");
        }
    }
}

#[test]
fn three_phase_load_gives_consistent_tracks() {
    let mut c = scenario(vec![LoadSpec {
        phases: Phase::ALL.to_vec(),
        ..load("a", "P7", 17.0, 3.0)
    }]);
    c.recorded_phases = None;
    let r = analyze(&c);
    for phase in Phase::ALL {
        let t = r.tracks_on(phase).next().unwrap();
        assert!((t.consensus_frequency - 17.0).abs() < 0.05);
        assert_eq!(t.indicated, point("P7"));
        assert_eq!(t.cross_phase.len(), 2);
    }
}

#[test]
fn missing_channel_is_reported() {
    let c = scenario(vec![load("a", "P2", 5.0, 1.0)]);
    let mut rec = synthesize(&c).unwrap();
    rec.channels.remove(&vfloc::ChannelId::new("P3", Phase::L1));
    let e = run_identification(&rec, &Topology::reference_feeder(), &AnalysisSettings::default()).unwrap_err();
    assert!(e.to_string().contains("P3"));
}
