//! Candidate-pair screening, near-miss event extraction, review feedback and
//! hotspot aggregation.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::ObjectClass;
use crate::qa::{Decision, FailureTag, ReviewRecord};
use crate::refine::Branch;
use crate::safety::{pair_frames, pair_metrics, MetricSeries, MetricSummary, RadiusBuffer, SafetyError};
use crate::tracker::Track;

#[derive(Debug, Error)]
pub enum MinerError {
    #[error("invalid screening config: {0}")]
    InvalidConfig(String),
    #[error("review record {record_id} references unknown event {event_id}")]
    UnknownEvent { record_id: String, event_id: String },
    #[error(transparent)]
    Safety(#[from] SafetyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreeningConfig {
    pub ttc_threshold: f64,
    pub sep_threshold: f64,
    pub min_track_displacement: f64,
    pub min_track_length: usize,
    pub stationary_speed: f64,
    pub anti_repeat_gap: u64,
    /// Unordered class pairs allowed to form candidates; empty allows all.
    pub allowed_class_pairs: Vec<[ObjectClass; 2]>,
    pub buffer: RadiusBuffer,
    /// Frames of series context kept on each side of an event window.
    pub context_frames: u64,
    pub dt: f64,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        ScreeningConfig {
            ttc_threshold: 1.5,
            sep_threshold: 1.0,
            min_track_displacement: 2.0,
            min_track_length: 10,
            stationary_speed: 0.75,
            anti_repeat_gap: 50,
            allowed_class_pairs: Vec::new(),
            buffer: RadiusBuffer::default(),
            context_frames: 20,
            dt: 0.1,
        }
    }
}

impl ScreeningConfig {
    pub fn validate(&self) -> Result<(), MinerError> {
        for (name, v) in [
            ("ttc_threshold", self.ttc_threshold),
            ("sep_threshold", self.sep_threshold),
            ("min_track_displacement", self.min_track_displacement),
            ("stationary_speed", self.stationary_speed),
            ("dt", self.dt),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(MinerError::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.min_track_length == 0 || self.anti_repeat_gap == 0 {
            return Err(MinerError::InvalidConfig(
                "min_track_length and anti_repeat_gap must be > 0".into(),
            ));
        }
        Ok(())
    }

    fn class_pair_allowed(&self, a: ObjectClass, b: ObjectClass) -> bool {
        self.allowed_class_pairs.is_empty()
            || self
                .allowed_class_pairs
                .iter()
                .any(|&[x, y]| (x == a && y == b) || (x == b && y == a))
    }
}

pub fn net_displacement(track: &Track) -> f64 {
    match (track.points.first(), track.points.last()) {
        (Some(a), Some(b)) => (b.pose.x - a.pose.x).hypot(b.pose.y - a.pose.y),
        _ => 0.0,
    }
}

pub fn movement_valid(track: &Track, cfg: &ScreeningConfig) -> bool {
    track.len() >= cfg.min_track_length && net_displacement(track) >= cfg.min_track_displacement
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePair {
    pub series: MetricSeries,
}

/// All unordered pairs of movement-valid tracks that share at least two
/// frames, have an allowed class pair, and are not both stationary throughout.
pub fn screen_pairs(tracks: &[Track], cfg: &ScreeningConfig) -> Vec<CandidatePair> {
    let mut valid: Vec<&Track> = tracks.iter().filter(|t| movement_valid(t, cfg)).collect();
    valid.sort_by_key(|t| t.track_id);
    let mut out = Vec::new();
    for (i, a) in valid.iter().enumerate() {
        for b in &valid[i + 1..] {
            if !cfg.class_pair_allowed(a.class, b.class) {
                continue;
            }
            let Ok(frames) = pair_frames(a, b, cfg.dt) else {
                continue;
            };
            let both_still = frames.iter().all(|f| {
                f.v1[0].hypot(f.v1[1]) < cfg.stationary_speed && f.v2[0].hypot(f.v2[1]) < cfg.stationary_speed
            });
            if both_still {
                continue;
            }
            if let Ok(series) = pair_metrics(a, b, cfg.buffer, cfg.dt) {
                out.push(CandidatePair { series });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    Ttc,
    Separation,
    Both,
}

impl Trigger {
    pub fn as_str(self) -> &'static str {
        match self {
            Trigger::Ttc => "ttc",
            Trigger::Separation => "separation",
            Trigger::Both => "both",
        }
    }

    pub fn from_summary(s: &MetricSummary, cfg: &ScreeningConfig) -> Option<Trigger> {
        let ttc = s.min_ttc.seconds() <= cfg.ttc_threshold;
        let sep = s.min_sep <= cfg.sep_threshold;
        match (ttc, sep) {
            (true, true) => Some(Trigger::Both),
            (true, false) => Some(Trigger::Ttc),
            (false, true) => Some(Trigger::Separation),
            (false, false) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventStatus {
    Pending,
    Kept,
    Rejected,
    Deferred,
}

impl From<Decision> for EventStatus {
    fn from(d: Decision) -> Self {
        match d {
            Decision::Keep => EventStatus::Kept,
            Decision::Reject => EventStatus::Rejected,
            Decision::Defer => EventStatus::Deferred,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearMissEvent {
    pub event_id: String,
    pub track_a: u64,
    pub track_b: u64,
    pub class_a: ObjectClass,
    pub class_b: ObjectClass,
    pub start_frame: u64,
    pub end_frame: u64,
    pub argmin_frame: u64,
    pub trigger: Trigger,
    /// Minima over `[start_frame, end_frame]`.
    pub summary: MetricSummary,
    /// BEV midpoint of both participants at `argmin_frame`.
    pub location: [f64; 2],
    pub status: EventStatus,
    pub branch: Option<Branch>,
    /// Per-frame metrics over the event window plus context, as mined.
    pub series: MetricSeries,
}

impl NearMissEvent {
    pub fn pair(&self) -> (u64, u64) {
        (self.track_a, self.track_b)
    }

    /// Lower is more severe: by TTC, then by separation.
    fn severity_key(&self) -> (f64, f64) {
        (self.summary.min_ttc.seconds(), self.summary.min_sep)
    }
}

pub fn event_id(track_a: u64, track_b: u64, argmin_frame: u64, trigger: Trigger) -> String {
    let mut h = Sha256::new();
    h.update(format!("{track_a}:{track_b}:{argmin_frame}:{}", trigger.as_str()).as_bytes());
    hex::encode(&h.finalize()[..8])
}

/// Maximal runs of consecutive series frames where either threshold is met.
fn trigger_runs(series: &MetricSeries, cfg: &ScreeningConfig) -> Vec<(u64, u64)> {
    let mut runs = Vec::new();
    let mut current: Option<(u64, u64)> = None;
    for f in &series.frames {
        let hit = f.ttc.seconds() <= cfg.ttc_threshold || f.sep <= cfg.sep_threshold;
        current = match (hit, current) {
            (true, Some((s, _))) => Some((s, f.frame)),
            (true, None) => Some((f.frame, f.frame)),
            (false, Some(run)) => {
                runs.push(run);
                None
            }
            (false, None) => None,
        };
    }
    runs.extend(current);
    runs
}

fn midpoint(tracks: &HashMap<u64, &Track>, a: u64, b: u64, frame: u64) -> [f64; 2] {
    let pa = tracks.get(&a).and_then(|t| t.point_at(frame)).map(|p| p.pose.xy());
    let pb = tracks.get(&b).and_then(|t| t.point_at(frame)).map(|p| p.pose.xy());
    match (pa, pb) {
        (Some(p), Some(q)) => [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0],
        _ => [f64::NAN, f64::NAN],
    }
}

fn build_event(
    series: &MetricSeries,
    window: (u64, u64),
    tracks: &HashMap<u64, &Track>,
    cfg: &ScreeningConfig,
    branch: Option<Branch>,
) -> Option<NearMissEvent> {
    let inner = series.restrict(window.0, window.1)?;
    let trigger = Trigger::from_summary(&inner.summary, cfg)?;
    let argmin_frame = match trigger {
        Trigger::Separation => inner.summary.argmin_sep,
        _ => inner.summary.argmin_ttc.unwrap_or(inner.summary.argmin_sep),
    };
    let context = series.restrict(
        window.0.saturating_sub(cfg.context_frames),
        window.1.saturating_add(cfg.context_frames),
    )?;
    Some(NearMissEvent {
        event_id: event_id(series.track_a, series.track_b, argmin_frame, trigger),
        track_a: series.track_a,
        track_b: series.track_b,
        class_a: series.class_a,
        class_b: series.class_b,
        start_frame: window.0,
        end_frame: window.1,
        argmin_frame,
        trigger,
        summary: inner.summary,
        location: midpoint(tracks, series.track_a, series.track_b, argmin_frame),
        status: EventStatus::Pending,
        branch,
        series: context,
    })
}

/// Turns screened pairs into events. Episodes of one pair whose argmin frames
/// are closer than `anti_repeat_gap` are merged into one event spanning them,
/// so the surviving event carries the most severe minimum.
pub fn mine_events(
    pairs: &[CandidatePair],
    tracks: &[Track],
    cfg: &ScreeningConfig,
    branch: Option<Branch>,
) -> Vec<NearMissEvent> {
    let by_id: HashMap<u64, &Track> = tracks.iter().map(|t| (t.track_id, t)).collect();
    let mut events = Vec::new();
    for pair in pairs {
        let series = &pair.series;
        let mut episodes: Vec<NearMissEvent> = trigger_runs(series, cfg)
            .into_iter()
            .filter_map(|w| build_event(series, w, &by_id, cfg, branch))
            .collect();
        episodes.sort_by_key(|e| e.argmin_frame);

        let mut clusters: Vec<Vec<NearMissEvent>> = Vec::new();
        for e in episodes {
            match clusters.last_mut() {
                Some(c) if e.argmin_frame - c.last().unwrap().argmin_frame < cfg.anti_repeat_gap => c.push(e),
                _ => clusters.push(vec![e]),
            }
        }
        for cluster in clusters {
            if cluster.len() == 1 {
                events.extend(cluster);
                continue;
            }
            let start = cluster.iter().map(|e| e.start_frame).min().unwrap();
            let end = cluster.iter().map(|e| e.end_frame).max().unwrap();
            let worst = cluster
                .iter()
                .min_by(|a, b| a.severity_key().partial_cmp(&b.severity_key()).unwrap())
                .unwrap();
            let merged = build_event(series, (start, end), &by_id, cfg, branch).unwrap_or_else(|| worst.clone());
            events.push(merged);
        }
    }
    events.sort_by(|a, b| {
        (a.start_frame, a.track_a, a.track_b, a.argmin_frame).cmp(&(b.start_frame, b.track_a, b.track_b, b.argmin_frame))
    });
    events
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotspotCell {
    pub cell_x: i64,
    pub cell_y: i64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotspotGrid {
    pub cell_size: f64,
    pub n: usize,
    pub cells: Vec<HotspotCell>,
}

/// Half-open square tiling: `x` in `[k·c, (k+1)·c)` maps to cell `k`.
pub fn cell_of(p: [f64; 2], cell_size: f64) -> (i64, i64) {
    ((p[0] / cell_size).floor() as i64, (p[1] / cell_size).floor() as i64)
}

pub fn hotspot<'a, I>(events: I, cell_size: f64) -> HotspotGrid
where
    I: IntoIterator<Item = &'a NearMissEvent>,
{
    hotspot_points(events.into_iter().map(|e| e.location), cell_size)
}

/// Grid counts over raw locations; non-finite points are skipped.
pub fn hotspot_points<I>(points: I, cell_size: f64) -> HotspotGrid
where
    I: IntoIterator<Item = [f64; 2]>,
{
    let mut counts: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    let mut n = 0;
    for p in points {
        if !(p[0].is_finite() && p[1].is_finite()) {
            continue;
        }
        *counts.entry(cell_of(p, cell_size)).or_default() += 1;
        n += 1;
    }
    HotspotGrid {
        cell_size,
        n,
        cells: counts
            .into_iter()
            .map(|((cell_x, cell_y), count)| HotspotCell { cell_x, cell_y, count })
            .collect(),
    }
}

/// Hotspot over kept and pending events, optionally including rejected and deferred ones.
pub fn hotspot_filtered(events: &[NearMissEvent], cell_size: f64, include_rejected: bool) -> HotspotGrid {
    hotspot(
        events
            .iter()
            .filter(|e| include_rejected || matches!(e.status, EventStatus::Kept | EventStatus::Pending)),
        cell_size,
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeedbackStats {
    pub by_status: BTreeMap<EventStatus, usize>,
    /// Tag counts over each event's latest decision.
    pub by_tag: BTreeMap<FailureTag, usize>,
}

/// Applies review records in log order; the latest record per event wins.
pub fn apply_review_feedback(
    events: &mut [NearMissEvent],
    records: &[ReviewRecord],
) -> Result<FeedbackStats, MinerError> {
    let index: HashMap<String, usize> = events
        .iter()
        .enumerate()
        .map(|(i, e)| (e.event_id.clone(), i))
        .collect();
    let mut latest: BTreeMap<usize, &ReviewRecord> = BTreeMap::new();
    for r in records {
        let &i = index.get(&r.event_id).ok_or_else(|| MinerError::UnknownEvent {
            record_id: r.record_id.clone(),
            event_id: r.event_id.clone(),
        })?;
        latest.insert(i, r);
    }
    let mut stats = FeedbackStats::default();
    for (&i, r) in &latest {
        events[i].status = r.decision.into();
        if let Some(tag) = r.failure_tag {
            *stats.by_tag.entry(tag).or_default() += 1;
        }
    }
    for e in events.iter() {
        *stats.by_status.entry(e.status).or_default() += 1;
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningSummary {
    pub format_version: u32,
    pub branch: Option<Branch>,
    pub tracks: usize,
    pub movement_valid_tracks: usize,
    pub candidate_pairs: usize,
    pub events: usize,
    pub events_by_trigger: BTreeMap<Trigger, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiningOutput {
    pub pairs: Vec<CandidatePair>,
    pub events: Vec<NearMissEvent>,
    pub summary: MiningSummary,
}

pub fn mine(tracks: &[Track], cfg: &ScreeningConfig, branch: Option<Branch>) -> Result<MiningOutput, MinerError> {
    cfg.validate()?;
    let pairs = screen_pairs(tracks, cfg);
    let events = mine_events(&pairs, tracks, cfg, branch);
    let mut by_trigger = BTreeMap::new();
    for e in &events {
        *by_trigger.entry(e.trigger).or_default() += 1;
    }
    let summary = MiningSummary {
        format_version: crate::format::current_version(),
        branch,
        tracks: tracks.len(),
        movement_valid_tracks: tracks.iter().filter(|t| movement_valid(t, cfg)).count(),
        candidate_pairs: pairs.len(),
        events: events.len(),
        events_by_trigger: by_trigger,
    };
    Ok(MiningOutput { pairs, events, summary })
}

/// One line of the events JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub format_version: Option<u32>,
    #[serde(flatten)]
    pub event: NearMissEvent,
}

pub fn event_records(events: &[NearMissEvent]) -> Vec<EventRecord> {
    events
        .iter()
        .map(|e| EventRecord {
            format_version: Some(crate::format::current_version()),
            event: e.clone(),
        })
        .collect()
}

/// Pairs `(a, b)` that produced more than one event; empty under the anti-repeat rule.
pub fn repeated_pairs(events: &[NearMissEvent], gap: u64) -> BTreeSet<(u64, u64)> {
    let mut out = BTreeSet::new();
    for (i, a) in events.iter().enumerate() {
        for b in &events[i + 1..] {
            if a.pair() == b.pair() && a.argmin_frame.abs_diff(b.argmin_frame) < gap {
                out.insert(a.pair());
            }
        }
    }
    out
}
