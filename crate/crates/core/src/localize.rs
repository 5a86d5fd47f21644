//! Cross-point matching of pulse components and supply-point indication.
//!
//! Every measured point sees every load, but a load's voltage excursion is
//! largest at its own supply point: upstream of it the excursion is a
//! fraction set by the shared impedance, and downstream of it no extra
//! current flows, so the excursion stays (almost) constant. Components are
//! clustered by frequency across points into tracks, and each track is
//! assigned to the point where its amplitude peaks. Points downstream of the
//! supply point tie with it, so ties resolve to the point nearest the source.
//! A track that peaks at the busbar is attributed to the medium-voltage side.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dapw::{decompose, Decomposition, DecompositionSettings};
use crate::demod::{demodulate_channel, envelope_deviation, DemodSettings, ModulatingSignal};
use crate::grid::{build_network, MultiPointRecording, NetworkModel, Topology};
use crate::types::channel_map;
use crate::{ChannelId, Phase};

#[derive(Debug, Error)]
pub enum LocalizeError {
    #[error("recording has no channel for {0}")]
    MissingChannel(ChannelId),
    #[error("recording is empty or inconsistent: {0}")]
    Recording(String),
    #[error("analysis block [{start}, {start} + {duration}) s lies outside the {available} s recording")]
    Block { start: f64, duration: f64, available: f64 },
    #[error("invalid analysis setting: {0}")]
    Settings(String),
    #[error("channel {channel}: {source}")]
    Stage {
        channel: ChannelId,
        #[source]
        source: Box<crate::Error>,
    },
}

impl LocalizeError {
    fn stage(channel: &ChannelId, e: impl Into<crate::Error>) -> Self {
        LocalizeError::Stage {
            channel: channel.clone(),
            source: Box::new(e.into()),
        }
    }
}

/// Everything tunable in the analysis chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisSettings {
    pub demod: DemodSettings,
    pub decomposition: DecompositionSettings,
    /// Relative frequency tolerance for joining a component to a track.
    pub match_tolerance: f64,
    /// Trigger fires when any channel's metric reaches this value.
    pub trigger_threshold: f64,
    /// Amplitudes within this relative band of the maximum count as tied.
    pub tie_band: f64,
    pub block_start_s: f64,
    /// Whole recording when absent.
    pub block_duration_s: Option<f64>,
    pub assessment: AssessmentRule,
}

/// How a track's supply point is chosen from its per-point amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssessmentRule {
    /// The candidate whose predicted attenuation profile fits best.
    #[default]
    ProfileFit,
    /// Largest amplitude, ties within the band going to the point nearest
    /// the source.
    Argmax,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            demod: DemodSettings::default(),
            decomposition: DecompositionSettings::default(),
            match_tolerance: 0.05,
            trigger_threshold: 0.004,
            tie_band: 0.02,
            block_start_s: 0.0,
            block_duration_s: None,
            assessment: AssessmentRule::default(),
        }
    }
}

impl AnalysisSettings {
    pub fn validate(&self) -> Result<(), LocalizeError> {
        let bad = |m: String| Err(LocalizeError::Settings(m));
        if let Err(e) = self.demod.validate() {
            return bad(e.to_string());
        }
        if let Err(e) = self.decomposition.validate() {
            return bad(e.to_string());
        }
        if !(self.match_tolerance > 0.0 && self.match_tolerance < 1.0) {
            return bad(format!("match_tolerance {} not in (0, 1)", self.match_tolerance));
        }
        if !(self.trigger_threshold >= 0.0) {
            return bad(format!("trigger_threshold {} is negative", self.trigger_threshold));
        }
        if !(self.tie_band >= 0.0 && self.tie_band < 1.0) {
            return bad(format!("tie_band {} not in [0, 1)", self.tie_band));
        }
        if !(self.block_start_s >= 0.0) || self.block_duration_s.is_some_and(|d| !(d > 0.0)) {
            return bad("analysis block must start at t >= 0 and have positive length".into());
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

/// A per-channel scalar severity measure for gating the analysis.
pub trait TriggerMetric {
    fn name(&self) -> &str;
    fn evaluate(&self, envelope: &ModulatingSignal) -> f64;
}

/// Relative peak-to-peak of the demodulated envelope.
#[derive(Debug, Default, Clone, Copy)]
pub struct EnvelopePeakToPeak;

impl TriggerMetric for EnvelopePeakToPeak {
    fn name(&self) -> &str {
        "envelope_relative_peak_to_peak"
    }

    fn evaluate(&self, envelope: &ModulatingSignal) -> f64 {
        envelope_deviation(envelope)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerDecision {
    pub fired: bool,
    pub metric: String,
    #[serde(with = "channel_map")]
    pub values: BTreeMap<ChannelId, f64>,
    pub threshold: f64,
}

/// Applies `metric` to each envelope; fires when any value is at least
/// `threshold`.
pub fn evaluate_trigger(
    envelopes: &BTreeMap<ChannelId, ModulatingSignal>,
    threshold: f64,
    metric: &dyn TriggerMetric,
) -> TriggerDecision {
    let values: BTreeMap<ChannelId, f64> = envelopes.iter().map(|(c, m)| (c.clone(), metric.evaluate(m))).collect();
    TriggerDecision {
        fired: values.values().any(|&v| v >= threshold),
        metric: metric.name().to_string(),
        values,
        threshold,
    }
}

/// Demodulates every channel with default settings and evaluates the
/// relative envelope peak-to-peak against `threshold`.
pub fn check_trigger(rec: &MultiPointRecording, threshold: f64) -> Result<TriggerDecision, LocalizeError> {
    let envelopes = demodulate_all(rec, rec.channels.keys(), &DemodSettings::default())?;
    Ok(evaluate_trigger(&envelopes, threshold, &EnvelopePeakToPeak))
}

fn demodulate_all<'a>(
    rec: &MultiPointRecording,
    channels: impl Iterator<Item = &'a ChannelId>,
    settings: &DemodSettings,
) -> Result<BTreeMap<ChannelId, ModulatingSignal>, LocalizeError> {
    let mut out = BTreeMap::new();
    for c in channels {
        let u = rec.channels.get(c).ok_or_else(|| LocalizeError::MissingChannel(c.clone()))?;
        let mut m = demodulate_channel(u, rec.sample_rate, rec.carrier_frequency_nominal, settings)
            .map_err(|e| LocalizeError::stage(c, e))?;
        m.channel = Some(c.clone());
        out.insert(c.clone(), m);
    }
    Ok(out)
}

/// One point's view of a tracked component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackMember {
    pub amplitude: f64,
    pub frequency: f64,
    pub duty: f64,
}

/// Where a track's amplitude peaks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indication {
    Point(String),
    /// Peaks at the busbar: the source is on the medium-voltage side.
    Upstream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentTrack {
    pub id: usize,
    pub phase: Phase,
    pub consensus_frequency: f64,
    pub per_point: BTreeMap<String, TrackMember>,
    pub max_amplitude: f64,
    pub indicated: Indication,
    /// Largest over second-largest member amplitude; absent for singletons.
    pub margin: Option<f64>,
    /// Points within the tie band of the maximum.
    pub tied: Vec<String>,
    pub low_confidence: bool,
    /// Relative rms misfit of the indicated point's attenuation profile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_residual: Option<f64>,
    /// Other phases carrying a track at a matching frequency.
    pub cross_phase: Vec<Phase>,
    /// Sits at twice the carrier, or at twice the carrier plus or minus a
    /// stronger track on the same phase. Carrier phase shifts at switching
    /// edges leave demodulation products there.
    #[serde(default)]
    pub possible_artifact: bool,
}

impl ComponentTrack {
    pub fn members(&self) -> usize {
        self.per_point.len()
    }

    fn argmax(&self) -> (&str, f64) {
        self.per_point
            .iter()
            .map(|(p, m)| (p.as_str(), m.amplitude))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("tracks are never empty")
    }
}

/// Clusters components of one phase across points.
///
/// Seeds are taken in order of decreasing amplitude; every other point
/// contributes its closest unassigned component within `rel_tolerance` of the
/// seed frequency. The consensus frequency is the amplitude-weighted mean.
/// Tracks come back unassessed (indicated at their argmax, no tie handling).
pub fn match_components(per_point: &BTreeMap<String, Decomposition>, phase: Phase, rel_tolerance: f64) -> Vec<ComponentTrack> {
    let mut pool: Vec<(&str, TrackMember)> = per_point
        .iter()
        .flat_map(|(p, d)| {
            d.components.iter().map(move |c| {
                (
                    p.as_str(),
                    TrackMember {
                        amplitude: c.amplitude,
                        frequency: c.frequency,
                        duty: c.duty,
                    },
                )
            })
        })
        .collect();
    pool.sort_by(|a, b| b.1.amplitude.total_cmp(&a.1.amplitude).then_with(|| a.0.cmp(b.0)));
    let mut used = vec![false; pool.len()];
    let mut tracks = Vec::new();
    for s in 0..pool.len() {
        if used[s] {
            continue;
        }
        used[s] = true;
        let (seed_point, seed) = pool[s];
        let mut members = BTreeMap::new();
        members.insert(seed_point.to_string(), seed);
        for point in per_point.keys() {
            if point == seed_point {
                continue;
            }
            let best = (0..pool.len())
                .filter(|&k| !used[k] && pool[k].0 == point)
                .map(|k| (k, (pool[k].1.frequency - seed.frequency).abs() / seed.frequency))
                .filter(|&(_, d)| d <= rel_tolerance)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((k, _)) = best {
                used[k] = true;
                members.insert(point.clone(), pool[k].1);
            }
        }
        let weight: f64 = members.values().map(|m| m.amplitude).sum();
        let consensus = members.values().map(|m| m.amplitude * m.frequency).sum::<f64>() / weight;
        tracks.push(ComponentTrack {
            id: tracks.len(),
            phase,
            consensus_frequency: consensus,
            max_amplitude: seed.amplitude,
            indicated: Indication::Point(seed_point.to_string()),
            margin: None,
            tied: vec![seed_point.to_string()],
            low_confidence: members.len() < 2,
            possible_artifact: false,
            profile_residual: None,
            cross_phase: Vec::new(),
            per_point: members,
        });
    }
    tracks
}

/// Outcome of comparing a track's amplitudes along the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub point: String,
    pub margin: Option<f64>,
    /// Points within the tie band of the maximum, nearest the source first.
    pub tied: Vec<String>,
    pub low_confidence: bool,
    pub profile_residual: Option<f64>,
}

fn margin_and_ties(track: &ComponentTrack, network: &NetworkModel, tie_band: f64) -> (Option<f64>, Vec<String>) {
    let (_, max) = track.argmax();
    let mut amps: Vec<f64> = track.per_point.values().map(|m| m.amplitude).collect();
    amps.sort_by(|a, b| b.total_cmp(a));
    let margin = (amps.len() >= 2 && amps[1] > 0.0).then(|| amps[0] / amps[1]);
    let distance = |p: &str| network.node_index(p).map_or(f64::INFINITY, |i| network.distance_mohm(i));
    let mut tied: Vec<String> = track
        .per_point
        .iter()
        .filter(|(_, m)| m.amplitude >= (1.0 - tie_band) * max)
        .map(|(p, _)| p.clone())
        .collect();
    tied.sort_by(|a, b| distance(a).total_cmp(&distance(b)).then_with(|| a.cmp(b)));
    (margin, tied)
}

/// Indicates the supply point of a track: the point of maximum amplitude,
/// or, among points within `tie_band` of the maximum, the one electrically
/// closest to the source.
pub fn assess_propagation(track: &ComponentTrack, network: &NetworkModel, tie_band: f64) -> Assessment {
    let (margin, tied) = margin_and_ties(track, network, tie_band);
    Assessment {
        point: tied[0].clone(),
        margin,
        tied,
        low_confidence: track.members() < 2,
        profile_residual: None,
    }
}

/// Indicates the supply point whose predicted amplitude profile best fits
/// the track.
///
/// A resistive current step at node `x` is in phase with the voltage, so it
/// moves the voltage magnitude at `p` by the step times the resistance from
/// the source to the deepest node shared by both paths. Each candidate thus
/// predicts amplitudes up to one scale factor. Candidates are the member
/// points; the one with the smallest least-squares misfit wins and exact
/// ties go to the point nearest the source. Members at points unknown to the
/// network are ignored.
pub fn fit_propagation(track: &ComponentTrack, network: &NetworkModel, tie_band: f64) -> Assessment {
    let (margin, tied) = margin_and_ties(track, network, tie_band);
    let members: Vec<(usize, f64)> = track
        .per_point
        .iter()
        .filter_map(|(p, m)| network.node_index(p).map(|i| (i, m.amplitude)))
        .collect();
    let total: f64 = members.iter().map(|(_, a)| a * a).sum();
    let mut best: Option<(f64, f64, usize)> = None;
    for &(x, _) in &members {
        let g: Vec<f64> = members
            .iter()
            .map(|&(p, _)| network.impedance_to(network.common_ancestor(p, x)).re)
            .collect();
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if gg <= 0.0 || total <= 0.0 {
            continue;
        }
        let scale = members.iter().zip(&g).map(|((_, a), g)| a * g).sum::<f64>() / gg;
        let sse: f64 = members.iter().zip(&g).map(|((_, a), g)| (a - scale * g).powi(2)).sum();
        let residual = (sse / total).sqrt();
        let d = network.distance_mohm(x);
        let better = match best {
            None => true,
            Some((r, bd, _)) => residual < r - 1e-12 || ((residual - r).abs() <= 1e-12 && d < bd),
        };
        if better {
            best = Some((residual, d, x));
        }
    }
    match best {
        Some((residual, _, x)) => Assessment {
            point: network.node_ids()[x].clone(),
            margin,
            tied,
            low_confidence: track.members() < 2,
            profile_residual: Some(residual),
        },
        None => assess_propagation(track, network, tie_band),
    }
}

/// Assessment under `rule`.
pub fn assess(track: &ComponentTrack, network: &NetworkModel, tie_band: f64, rule: AssessmentRule) -> Assessment {
    match rule {
        AssessmentRule::ProfileFit => fit_propagation(track, network, tie_band),
        AssessmentRule::Argmax => assess_propagation(track, network, tie_band),
    }
}

/// The supply point electrically closest to the source (the busbar).
pub fn busbar_point(network: &NetworkModel) -> Option<String> {
    network
        .supply_points()
        .iter()
        .min_by(|&&a, &&b| network.distance_mohm(a).total_cmp(&network.distance_mohm(b)))
        .map(|&i| network.node_ids()[i].clone())
}

/// True when the track is attributed to the busbar, which stands in for
/// the medium-voltage side.
pub fn detect_upstream(track: &ComponentTrack, network: &NetworkModel, tie_band: f64, rule: AssessmentRule) -> bool {
    busbar_point(network).is_some_and(|b| assess(track, network, tie_band, rule).point == b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisBlock {
    pub start_s: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    /// Sorted by `max_amplitude`, largest first.
    pub tracks: Vec<ComponentTrack>,
    pub trigger: TriggerDecision,
    pub block: AnalysisBlock,
    #[serde(with = "channel_map")]
    pub decompositions: BTreeMap<ChannelId, Decomposition>,
}

impl LocalizationReport {
    pub fn tracks_on(&self, phase: Phase) -> impl Iterator<Item = &ComponentTrack> {
        self.tracks.iter().filter(move |t| t.phase == phase)
    }
}

fn block_slice(rec: &MultiPointRecording, s: &AnalysisSettings) -> Result<(MultiPointRecording, AnalysisBlock), LocalizeError> {
    let available = rec.duration();
    let duration = s.block_duration_s.unwrap_or(available - s.block_start_s);
    let a = (s.block_start_s * rec.sample_rate).round() as usize;
    let b = ((s.block_start_s + duration) * rec.sample_rate).round() as usize;
    if duration <= 0.0 || b > rec.sample_count() || a >= b {
        return Err(LocalizeError::Block {
            start: s.block_start_s,
            duration,
            available,
        });
    }
    let mut out = rec.clone();
    if a > 0 || b < rec.sample_count() {
        for v in out.channels.values_mut() {
            *v = v[a..b].to_vec();
        }
    }
    Ok((
        out,
        AnalysisBlock {
            start_s: s.block_start_s,
            duration_s: duration,
        },
    ))
}

/// The full chain for one analysis block: trigger, demodulation,
/// decomposition, cross-point matching and propagation assessment, run
/// independently on every recorded phase.
pub fn run_identification(
    rec: &MultiPointRecording,
    topology: &Topology,
    settings: &AnalysisSettings,
) -> Result<LocalizationReport, LocalizeError> {
    settings.validate()?;
    rec.validate().map_err(LocalizeError::Recording)?;
    if rec.channels.is_empty() {
        return Err(LocalizeError::Recording("no channels".into()));
    }
    let network = build_network(topology, rec.carrier_frequency_nominal).map_err(|e| {
        LocalizeError::Stage {
            channel: rec.channels.keys().next().unwrap().clone(),
            source: Box::new(e.into()),
        }
    })?;
    let (block_rec, block) = block_slice(rec, settings)?;

    let phases = rec.phases();
    let mut channels = Vec::new();
    for &phase in &phases {
        for p in &topology.supply_points {
            let c = ChannelId::new(p.clone(), phase);
            if !rec.channels.contains_key(&c) {
                return Err(LocalizeError::MissingChannel(c));
            }
            channels.push(c);
        }
    }
    let envelopes = demodulate_all(&block_rec, channels.iter(), &settings.demod)?;
    let trigger = evaluate_trigger(&envelopes, settings.trigger_threshold, &EnvelopePeakToPeak);
    let mut report = LocalizationReport {
        tracks: Vec::new(),
        trigger,
        block,
        decompositions: BTreeMap::new(),
    };
    if !report.trigger.fired {
        return Ok(report);
    }

    let busbar = busbar_point(&network);
    for &phase in &phases {
        let mut per_point = BTreeMap::new();
        for p in &topology.supply_points {
            let c = ChannelId::new(p.clone(), phase);
            let d = decompose(&envelopes[&c], &settings.decomposition).map_err(|e| LocalizeError::stage(&c, e))?;
            report.decompositions.insert(c, d.clone());
            per_point.insert(p.clone(), d);
        }
        for mut t in match_components(&per_point, phase, settings.match_tolerance) {
            let a = assess(&t, &network, settings.tie_band, settings.assessment);
            t.indicated = if busbar.as_deref() == Some(a.point.as_str()) {
                Indication::Upstream
            } else {
                Indication::Point(a.point)
            };
            t.margin = a.margin;
            t.tied = a.tied;
            t.low_confidence = a.low_confidence;
            t.profile_residual = a.profile_residual;
            report.tracks.push(t);
        }
    }

    let snapshot: Vec<(Phase, f64)> = report.tracks.iter().map(|t| (t.phase, t.consensus_frequency)).collect();
    for t in &mut report.tracks {
        let mut cross: Vec<Phase> = snapshot
            .iter()
            .filter(|(p, f)| *p != t.phase && (f - t.consensus_frequency).abs() / t.consensus_frequency <= settings.match_tolerance)
            .map(|(p, _)| *p)
            .collect();
        cross.sort();
        cross.dedup();
        t.cross_phase = cross;
    }
    report.tracks.sort_by(|a, b| b.max_amplitude.total_cmp(&a.max_amplitude));
    for (i, t) in report.tracks.iter_mut().enumerate() {
        t.id = i;
    }
    flag_carrier_products(&mut report.tracks, rec.carrier_frequency_nominal, settings.match_tolerance);
    Ok(report)
}

/// Marks tracks at `2fc` or `2fc ± f` of a stronger track on the same phase.
/// Expects `tracks` sorted by decreasing amplitude.
pub fn flag_carrier_products(tracks: &mut [ComponentTrack], carrier_frequency: f64, rel_tolerance: f64) {
    let two_fc = 2.0 * carrier_frequency;
    let near = |f: f64, g: f64| g > 0.0 && (f - g).abs() <= rel_tolerance * g;
    for j in 0..tracks.len() {
        let f = tracks[j].consensus_frequency;
        let flagged = near(f, two_fc)
            || tracks[..j].iter().any(|k| {
                k.phase == tracks[j].phase
                    && (near(f, (two_fc - k.consensus_frequency).abs()) || near(f, two_fc + k.consensus_frequency))
            });
        tracks[j].possible_artifact = flagged;
    }
}
