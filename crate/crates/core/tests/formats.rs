use std::fs;

use tempfile::tempdir;
use vfloc::bench::{run_suite, SuiteSettings};
use vfloc::grid::{synthesize, LoadSpec, MultiPointRecording, ScenarioConfig};
use vfloc::io::{
    format_recording, parse_recording, read_recording, read_recording_dir, read_report, write_recording,
    write_recording_dir, write_report, FormatError, RecordingFile, ReportBody, ReportFile,
};
use vfloc::localize::{run_identification, AnalysisSettings};
use vfloc::{ChannelId, Error, Phase};

fn scenario() -> ScenarioConfig {
    let mut c = ScenarioConfig::quiet(3.0);
    c.name = Some("formats".into());
    c.recorded_phases = Some(vec![Phase::L2]);
    c.noise_std = 0.02;
    c.seed = 4;
    c.loads = vec![LoadSpec {
        id: "a".into(),
        supply_point: "P6".into(),
        phases: vec![Phase::L2],
        rated_power_kw: 2.0,
        switch_frequency_hz: 11.0,
        duty: 0.45,
        start_phase: 0.0,
    }];
    c
}

fn nine_digits(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 5e-9 * a.abs().max(b.abs())
}

#[test]
fn ten_second_channel_round_trips_to_nine_digits() {
    let samples: Vec<f64> = (0..200_000)
        .map(|i| 325.27 * (2.0 * std::f64::consts::PI * 50.0 * i as f64 / 20_000.0).sin() + 1e-3 * (i % 7) as f64)
        .collect();
    let f = RecordingFile {
        version: 1,
        sample_rate: 20_000.0,
        carrier_frequency_nominal: 50.0,
        channel: ChannelId::new("P3", Phase::L1),
        scenario: Some("x".into()),
        start_s: 0.0,
        samples,
    };
    let dir = tempdir().unwrap();
    let path = dir.path().join("P3_L1.rec");
    write_recording(&path, &f).unwrap();
    let g = read_recording(&path).unwrap();
    assert_eq!(g.samples.len(), f.samples.len());
    assert!(f.samples.iter().zip(&g.samples).all(|(a, b)| nine_digits(*a, *b)));
    assert_eq!((g.sample_rate, g.carrier_frequency_nominal, &g.channel), (f.sample_rate, f.carrier_frequency_nominal, &f.channel));
    // A re-written file is byte-identical: serialization is idempotent.
    assert_eq!(format_recording(&g), fs::read_to_string(&path).unwrap());
}

#[test]
fn missing_sample_rate_names_the_key() {
    let text = "# version=1\n# fc_hz=50.0\n# point=P1\n# phase=L1\n# samples=1\n1.0\n";
    match parse_recording(text) {
        Err(FormatError::MissingKey(k)) => assert_eq!(k, "fs_hz"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn short_payload_is_a_truncation_error() {
    let text = "# version=1\n# fs_hz=20000.0\n# fc_hz=50.0\n# point=P1\n# phase=L1\n# samples=3\n1.0\n2.0\n";
    assert!(matches!(parse_recording(text), Err(FormatError::Truncated { declared: 3, found: 2 })));
}

#[test]
fn binary_directory_round_trip_is_exact() {
    let rec = synthesize(&scenario()).unwrap();
    let dir = tempdir().unwrap();
    write_recording_dir(dir.path(), &rec, true).unwrap();
    assert_eq!(read_recording_dir(dir.path()).unwrap(), rec);
}

#[test]
fn reanalysis_of_written_recordings_is_stable() {
    let c = scenario();
    let rec = synthesize(&c).unwrap();
    let s = AnalysisSettings::default();
    let direct = run_identification(&rec, &c.topology, &s).unwrap();

    let bin = tempdir().unwrap();
    write_recording_dir(bin.path(), &rec, true).unwrap();
    let from_bin = run_identification(&read_recording_dir(bin.path()).unwrap(), &c.topology, &s).unwrap();
    assert_eq!(from_bin, direct);

    let text = tempdir().unwrap();
    write_recording_dir(text.path(), &rec, false).unwrap();
    let once: MultiPointRecording = read_recording_dir(text.path()).unwrap();
    let again = tempdir().unwrap();
    write_recording_dir(again.path(), &once, false).unwrap();
    let twice = read_recording_dir(again.path()).unwrap();
    assert_eq!(once, twice);
    let r1 = run_identification(&once, &c.topology, &s).unwrap();
    let r2 = run_identification(&twice, &c.topology, &s).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(r1.tracks[0].indicated, direct.tracks[0].indicated);
    assert!((r1.tracks[0].consensus_frequency - direct.tracks[0].consensus_frequency).abs() < 1e-6);
}

#[test]
fn reports_round_trip_losslessly() {
    let c = scenario();
    let rec = synthesize(&c).unwrap();
    let settings = AnalysisSettings::default();
    let report = run_identification(&rec, &c.topology, &settings).unwrap();
    let file = ReportFile::new(ReportBody::Localization { settings, report });
    let dir = tempdir().unwrap();
    let path = dir.path().join("r.json");
    write_report(&path, &file).unwrap();
    let back = read_report(&path).unwrap();
    assert_eq!(back, file);
    assert_eq!(back.to_json(), file.to_json());

    let mut suite = SuiteSettings::default();
    suite.ranges.duration_s = 2.0;
    suite.ranges.load_count = [2, 2];
    suite.ranges.frequency_hz = [3.0, 150.0];
    suite.ranges.three_phase_probability = 0.0;
    let table = run_suite(1, 5, &suite);
    let file = ReportFile::new(ReportBody::Suite {
        settings: suite,
        seed: 5,
        cases: 1,
        table,
    });
    assert_eq!(ReportFile::from_json(&file.to_json()).unwrap(), file);
}

#[test]
fn settings_echo_reproduces_the_analysis() {
    let c = scenario();
    let rec = synthesize(&c).unwrap();
    let settings = AnalysisSettings {
        tie_band: 0.03,
        match_tolerance: 0.04,
        ..Default::default()
    };
    let report = run_identification(&rec, &c.topology, &settings).unwrap();
    let json = ReportFile::new(ReportBody::Localization { settings, report: report.clone() }).to_json();
    let ReportBody::Localization { settings: echoed, .. } = ReportFile::from_json(&json).unwrap().body else {
        panic!("wrong report kind");
    };
    assert_eq!(run_identification(&rec, &c.topology, &echoed).unwrap(), report);
}

#[test]
fn unknown_report_version_is_rejected() {
    let json = r#"{"format_version": 9, "kind": "suite"}"#;
    assert!(matches!(ReportFile::from_json(json), Err(FormatError::Version(9))));
}

#[test]
fn empty_directory_is_an_error() {
    let dir = tempdir().unwrap();
    let e = read_recording_dir(dir.path()).unwrap_err();
    assert!(matches!(e, Error::Format(FormatError::EmptyDirectory(_))));
}
