//! Randomized scenario suites and accuracy scoring.
//!
//! `e1` is the percentage of true loads whose supply point was indicated
//! correctly, `e2` the percentage whose switching frequency was estimated
//! within 10%.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{synthesize, GridError, LineSection, LoadSpec, ScenarioConfig, Topology};
use crate::localize::{run_identification, AnalysisSettings, Indication, LocalizationReport};
use crate::Phase;

/// Relative frequency error accepted as a correct estimate.
pub const FREQUENCY_TOLERANCE: f64 = 0.10;

/// Parameter ranges of the scenario generator. Draws are uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorRanges {
    pub resistance_mohm: [f64; 2],
    pub inductance_uh: [f64; 2],
    pub load_count: [usize; 2],
    pub frequency_hz: [f64; 2],
    pub power_kw: [f64; 2],
    pub duty: [f64; 2],
    /// Minimum pairwise relative frequency separation, `|fa - fb| / min`.
    pub min_separation: f64,
    /// Probability that a load is three-phase rather than single-phase.
    pub three_phase_probability: f64,
    pub supply_points: Vec<String>,
    pub duration_s: f64,
    pub sample_rate: f64,
    pub noise_std: f64,
}

impl Default for GeneratorRanges {
    fn default() -> Self {
        GeneratorRanges {
            resistance_mohm: [50.0, 150.0],
            inductance_uh: [6.7, 100.0],
            load_count: [2, 6],
            frequency_hz: [0.5, 150.0],
            power_kw: [0.5, 4.0],
            duty: [0.3, 0.7],
            min_separation: 0.15,
            three_phase_probability: 0.5,
            supply_points: (2..=7).map(|k| format!("P{k}")).collect(),
            duration_s: 10.0,
            sample_rate: 20_000.0,
            noise_std: 0.0,
        }
    }
}

impl GeneratorRanges {
    /// Same ranges without the frequency-separation constraint.
    pub fn stress() -> Self {
        GeneratorRanges {
            min_separation: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let ordered = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1];
        let ok = ordered(self.resistance_mohm)
            && self.inductance_uh[0] >= 0.0
            && self.inductance_uh[0] <= self.inductance_uh[1]
            && self.load_count[0] >= 1
            && self.load_count[0] <= self.load_count[1]
            && ordered(self.frequency_hz)
            && ordered(self.power_kw)
            && ordered(self.duty)
            && self.duty[1] < 1.0
            && self.min_separation >= 0.0
            && (0.0..=1.0).contains(&self.three_phase_probability)
            && !self.supply_points.is_empty()
            && self.duration_s > 0.0
            && self.sample_rate > 0.0
            && self.noise_std >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(GridError::Scenario("generator ranges are not physically valid".into()))
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn separated(f: f64, others: &[f64], min: f64) -> bool {
    others.iter().all(|&g| (f - g).abs() / f.min(g) >= min)
}

fn draw(rng: &mut ChaCha8Rng, seed: u64, r: &GeneratorRanges) -> Option<ScenarioConfig> {
    let mut topology = Topology::reference_feeder();
    for s in &mut topology.sections {
        *s = LineSection {
            resistance_mohm: uniform(rng, r.resistance_mohm),
            inductance_uh: uniform(rng, r.inductance_uh),
            ..s.clone()
        };
    }
    let n = rng.random_range(r.load_count[0]..=r.load_count[1]);
    let mut freqs: Vec<f64> = Vec::with_capacity(n);
    for _ in 0..n {
        let f = (0..200)
            .map(|_| uniform(rng, r.frequency_hz))
            .find(|&f| separated(f, &freqs, r.min_separation))?;
        freqs.push(f);
    }
    let mut used = BTreeSet::new();
    let loads: Vec<LoadSpec> = freqs
        .iter()
        .enumerate()
        .map(|(k, &f)| {
            let phases = if rng.random_bool(r.three_phase_probability) {
                Phase::ALL.to_vec()
            } else {
                vec![Phase::ALL[rng.random_range(0..3)]]
            };
            used.extend(phases.iter().copied());
            LoadSpec {
                id: format!("load{}", k + 1),
                supply_point: r.supply_points[rng.random_range(0..r.supply_points.len())].clone(),
                phases,
                rated_power_kw: uniform(rng, r.power_kw),
                switch_frequency_hz: f,
                duty: uniform(rng, r.duty),
                start_phase: rng.random_range(0.0..1.0),
            }
        })
        .collect();
    Some(ScenarioConfig {
        name: Some(format!("case-{seed}")),
        sample_rate: r.sample_rate,
        duration_s: r.duration_s,
        seed,
        noise_std: r.noise_std,
        recorded_phases: Some(used.into_iter().collect()),
        topology,
        loads,
        ..ScenarioConfig::quiet(r.duration_s)
    })
}

/// Draws a random scenario on the reference feeder layout: line parameters,
/// load count, and per-load point, phases, power, frequency and duty.
///
/// Only the phases carrying loads are recorded. When the separation
/// constraint cannot be met, the draw restarts from a fresh sub-seed.
pub fn generate_scenario(seed: u64, ranges: &GeneratorRanges) -> Result<ScenarioConfig, GridError> {
    ranges.validate()?;
    for attempt in 0..64u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        if let Some(cfg) = draw(&mut rng, seed, ranges) {
            return Ok(cfg);
        }
    }
    Err(GridError::Scenario(format!(
        "cannot place {} loads with {:.0}% separation in the frequency range",
        ranges.load_count[1],
        100.0 * ranges.min_separation
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueLoad {
    pub id: String,
    pub supply_point: String,
    pub frequency_hz: f64,
    pub phases: Vec<Phase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub loads: Vec<TrueLoad>,
}

impl GroundTruth {
    pub fn from_config(config: &ScenarioConfig) -> Self {
        GroundTruth {
            loads: config
                .loads
                .iter()
                .map(|l| TrueLoad {
                    id: l.id.clone(),
                    supply_point: l.supply_point.clone(),
                    frequency_hz: l.switch_frequency_hz,
                    phases: l.phases.clone(),
                })
                .collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.loads.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub n: usize,
    pub n_t: usize,
    pub n_f_t: usize,
    pub e1: f64,
    pub e2: f64,
}

impl MetricResult {
    pub fn from_counts(n: usize, n_t: usize, n_f_t: usize) -> Self {
        assert!(n_t <= n && n_f_t <= n, "counts exceed the number of loads");
        let pct = |k: usize| if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 };
        MetricResult {
            n,
            n_t,
            n_f_t,
            e1: pct(n_t),
            e2: pct(n_f_t),
        }
    }
}

/// True when `estimate` is within 10% of `truth` (boundary included).
pub fn frequency_correct(estimate: f64, truth: f64) -> bool {
    (estimate - truth).abs() <= FREQUENCY_TOLERANCE * truth * (1.0 + 1e-12)
}

/// How one true load fared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadOutcome {
    pub load: String,
    pub frequency_hz: f64,
    pub track: Option<usize>,
    pub estimated_frequency_hz: Option<f64>,
    pub indicated: Option<Indication>,
    pub point_correct: bool,
    pub frequency_correct: bool,
}

/// Pairs true loads with tracks by frequency closeness.
///
/// Candidate pairs are a load and a track on one of the load's phases whose
/// relative frequency difference is at most `match_cutoff`; pairs are taken
/// greedily from the closest, each load and track used once.
pub fn match_truth(report: &LocalizationReport, truth: &GroundTruth, match_cutoff: f64) -> Vec<LoadOutcome> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (li, l) in truth.loads.iter().enumerate() {
        for (ti, t) in report.tracks.iter().enumerate() {
            let d = (t.consensus_frequency - l.frequency_hz).abs() / l.frequency_hz;
            if l.phases.contains(&t.phase) && d <= match_cutoff {
                pairs.push((d, li, ti));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut load_track = vec![None; truth.n()];
    let mut track_used = vec![false; report.tracks.len()];
    for (_, li, ti) in pairs {
        if load_track[li].is_none() && !track_used[ti] {
            load_track[li] = Some(ti);
            track_used[ti] = true;
        }
    }
    truth
        .loads
        .iter()
        .zip(load_track)
        .map(|(l, ti)| {
            let t = ti.map(|i| &report.tracks[i]);
            LoadOutcome {
                load: l.id.clone(),
                frequency_hz: l.frequency_hz,
                track: t.map(|t| t.id),
                estimated_frequency_hz: t.map(|t| t.consensus_frequency),
                indicated: t.map(|t| t.indicated.clone()),
                point_correct: t.is_some_and(|t| t.indicated == Indication::Point(l.supply_point.clone())),
                frequency_correct: t.is_some_and(|t| frequency_correct(t.consensus_frequency, l.frequency_hz)),
            }
        })
        .collect()
}

/// Counts correct indications and frequency estimates over matched loads.
pub fn score_outcomes(outcomes: &[LoadOutcome]) -> MetricResult {
    MetricResult::from_counts(
        outcomes.len(),
        outcomes.iter().filter(|o| o.point_correct).count(),
        outcomes.iter().filter(|o| o.frequency_correct).count(),
    )
}

/// `e1`/`e2` of one report against its ground truth, with the default
/// matching cutoff.
pub fn score(report: &LocalizationReport, truth: &GroundTruth) -> MetricResult {
    score_outcomes(&match_truth(report, truth, SuiteSettings::default().match_cutoff))
}

/// Everything that drives a suite besides its seed and size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteSettings {
    pub ranges: GeneratorRanges,
    pub analysis: AnalysisSettings,
    /// Largest relative frequency difference at which a track may be
    /// credited to a true load.
    pub match_cutoff: f64,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        SuiteSettings {
            ranges: GeneratorRanges::default(),
            // Every generated case holds loads, so the analysis is not gated.
            analysis: AnalysisSettings {
                trigger_threshold: 0.0,
                ..Default::default()
            },
            match_cutoff: 0.25,
        }
    }
}

impl SuiteSettings {
    pub fn validate(&self) -> Result<(), String> {
        self.ranges.validate().map_err(|e| e.to_string())?;
        self.analysis.validate().map_err(|e| e.to_string())?;
        if !(self.match_cutoff > 0.0) {
            return Err(format!("match_cutoff {} must be positive", self.match_cutoff));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings are always serializable")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub case: usize,
    pub seed: u64,
    pub metric: MetricResult,
    /// Loads switching faster than the carrier.
    pub above_carrier_n: usize,
    pub above_carrier_n_t: usize,
    pub above_carrier_n_f_t: usize,
    pub error: Option<String>,
    pub outcomes: Vec<LoadOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteAggregate {
    pub cases: usize,
    pub failed_cases: usize,
    /// Means of the per-case percentages.
    pub mean_e1: f64,
    pub mean_e2: f64,
    /// Percentages over all loads of all cases.
    pub pooled: MetricResult,
    pub above_carrier: MetricResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteTable {
    pub rows: Vec<CaseRow>,
    pub aggregate: SuiteAggregate,
}

impl SuiteTable {
    fn from_rows(rows: Vec<CaseRow>) -> Self {
        let cases = rows.len();
        let mean = |g: fn(&CaseRow) -> f64| rows.iter().map(g).sum::<f64>() / cases.max(1) as f64;
        let sum = |g: fn(&CaseRow) -> usize| rows.iter().map(g).sum::<usize>();
        let aggregate = SuiteAggregate {
            cases,
            failed_cases: rows.iter().filter(|r| r.error.is_some()).count(),
            mean_e1: mean(|r| r.metric.e1),
            mean_e2: mean(|r| r.metric.e2),
            pooled: MetricResult::from_counts(sum(|r| r.metric.n), sum(|r| r.metric.n_t), sum(|r| r.metric.n_f_t)),
            above_carrier: MetricResult::from_counts(
                sum(|r| r.above_carrier_n),
                sum(|r| r.above_carrier_n_t),
                sum(|r| r.above_carrier_n_f_t),
            ),
        };
        SuiteTable { rows, aggregate }
    }

    /// One comma-separated row per case, then `#`-prefixed summary lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("case,seed,n,n_t,n_f_t,e1,e2,above_carrier_n,above_carrier_n_f_t,status\n");
        for r in &self.rows {
            let m = &r.metric;
            let status = r.error.as_deref().map_or("ok".to_string(), |e| format!("error: {}", e.replace([',', '\n'], ";")));
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.2},{:.2},{},{},{}",
                r.case, r.seed, m.n, m.n_t, m.n_f_t, m.e1, m.e2, r.above_carrier_n, r.above_carrier_n_f_t, status
            );
        }
        let a = &self.aggregate;
        let _ = writeln!(s, "# cases={} failed={}", a.cases, a.failed_cases);
        let _ = writeln!(s, "# mean_e1={:.2} mean_e2={:.2}", a.mean_e1, a.mean_e2);
        let _ = writeln!(
            s,
            "# pooled N={} N_T={} N_fT={} e1={:.2} e2={:.2}",
            a.pooled.n, a.pooled.n_t, a.pooled.n_f_t, a.pooled.e1, a.pooled.e2
        );
        let _ = writeln!(
            s,
            "# above_carrier N={} N_fT={} e2={:.2}",
            a.above_carrier.n, a.above_carrier.n_f_t, a.above_carrier.e2
        );
        s
    }
}

/// Seed of case `index` in a suite seeded with `seed`.
pub fn case_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng.next_u64()
}

/// Synthesizes, analyzes and scores one configured scenario.
pub fn run_config(config: &ScenarioConfig, settings: &SuiteSettings) -> (MetricResult, Vec<LoadOutcome>, Option<String>) {
    let truth = GroundTruth::from_config(config);
    let analysed = synthesize(config)
        .map_err(crate::Error::from)
        .and_then(|rec| run_identification(&rec, &config.topology, &settings.analysis).map_err(crate::Error::from));
    match analysed {
        Ok(report) => {
            let outcomes = match_truth(&report, &truth, settings.match_cutoff);
            (score_outcomes(&outcomes), outcomes, None)
        }
        Err(e) => {
            let outcomes = truth
                .loads
                .iter()
                .map(|l| LoadOutcome {
                    load: l.id.clone(),
                    frequency_hz: l.frequency_hz,
                    track: None,
                    estimated_frequency_hz: None,
                    indicated: None,
                    point_correct: false,
                    frequency_correct: false,
                })
                .collect();
            (MetricResult::from_counts(truth.n(), 0, 0), outcomes, Some(e.to_string()))
        }
    }
}

fn run_case(case: usize, seed: u64, settings: &SuiteSettings) -> CaseRow {
    let (metric, outcomes, error) = match generate_scenario(seed, &settings.ranges) {
        Ok(cfg) => {
            let carrier = cfg.carrier_frequency_hz;
            let (m, o, e) = run_config(&cfg, settings);
            let above: Vec<&LoadOutcome> = o.iter().filter(|x| x.frequency_hz > carrier).collect();
            let row = CaseRow {
                case,
                seed,
                metric: m,
                above_carrier_n: above.len(),
                above_carrier_n_t: above.iter().filter(|x| x.point_correct).count(),
                above_carrier_n_f_t: above.iter().filter(|x| x.frequency_correct).count(),
                error: e,
                outcomes: o,
            };
            return row;
        }
        Err(e) => (MetricResult::from_counts(0, 0, 0), Vec::new(), Some(e.to_string())),
    };
    CaseRow {
        case,
        seed,
        metric,
        above_carrier_n: 0,
        above_carrier_n_t: 0,
        above_carrier_n_f_t: 0,
        error,
        outcomes,
    }
}

/// Runs `cases` generated scenarios. Case `i` uses [`case_seed`]`(seed, i)`,
/// so the table is a pure function of the arguments.
pub fn run_suite(cases: usize, seed: u64, settings: &SuiteSettings) -> SuiteTable {
    let rows = (0..cases)
        .map(|i| {
            let row = run_case(i, case_seed(seed, i), settings);
            log::info!(
                "case {i}: N={} N_T={} N_fT={}{}",
                row.metric.n,
                row.metric.n_t,
                row.metric.n_f_t,
                row.error.as_deref().map(|e| format!(" ({e})")).unwrap_or_default()
            );
            row
        })
        .collect();
    SuiteTable::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_arithmetic() {
        let m = MetricResult::from_counts(4, 3, 4);
        assert_eq!(m.e1, 75.0);
        assert_eq!(m.e2, 100.0);
    }

    #[test]
    fn ten_percent_boundary() {
        assert!(frequency_correct(109.0, 100.0));
        assert!(frequency_correct(110.0, 100.0));
        assert!(frequency_correct(90.0, 100.0));
        assert!(!frequency_correct(111.0, 100.0));
        assert!(!frequency_correct(89.9, 100.0));
    }

    #[test]
    fn generator_is_deterministic_and_separated() {
        let r = GeneratorRanges::default();
        let a = generate_scenario(1, &r).unwrap();
        assert_eq!(a, generate_scenario(1, &r).unwrap());
        assert_ne!(a, generate_scenario(2, &r).unwrap());
        let f: Vec<f64> = a.loads.iter().map(|l| l.switch_frequency_hz).collect();
        for (i, x) in f.iter().enumerate() {
            assert!(separated(*x, &f[i + 1..], 0.15));
        }
        a.validate().unwrap();
    }

    #[test]
    fn case_seeds_differ() {
        let s: BTreeSet<u64> = (0..100).map(|i| case_seed(42, i)).collect();
        assert_eq!(s.len(), 100);
    }

    #[test]
    fn csv_has_one_row_per_case() {
        let rows = (0..3)
            .map(|i| CaseRow {
                case: i,
                seed: i as u64,
                metric: MetricResult::from_counts(2, 1, 2),
                above_carrier_n: 1,
                above_carrier_n_t: 1,
                above_carrier_n_f_t: 1,
                error: None,
                outcomes: Vec::new(),
            })
            .collect();
        let t = SuiteTable::from_rows(rows);
        let csv = t.to_csv();
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 4);
        assert_eq!(t.aggregate.mean_e1, 50.0);
        assert_eq!(t.aggregate.above_carrier.e2, 100.0);
    }
}
