//! Review queues and append-only decision records.
//!
//! On-disk layout under the store root:
//!
//! ```text
//! index.json          rounds with config snapshots
//! queues/<round>.json exported queue items per round
//! records.jsonl       review records, one per line, append-only
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const INDEX_FILE: &str = "index.json";
pub const RECORDS_FILE: &str = "records.jsonl";

/// Store-relative path of a round's queue file.
pub fn queue_file(round_id: &str) -> PathBuf {
    Path::new("queues").join(format!("{round_id}.json"))
}

use crate::format::{self, FormatError};
use crate::ingest::ObjectClass;
use crate::miner::{EventStatus, NearMissEvent, Trigger};
use crate::refine::Branch;
use crate::safety::{MetricSeries, MetricSummary};
use crate::tracker::{Provenance, Track};

#[derive(Debug, Error)]
pub enum QaError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("store is opened read-only")]
    ReadOnly,
    #[error("round {0:?} not found")]
    RoundNotFound(String),
    #[error("event {0:?} is not in any queue")]
    EventNotFound(String),
    #[error("decision reject requires a failure tag")]
    MissingFailureTag,
    #[error("decision keep requires tag true_near_miss or borderline, got {0:?}")]
    InvalidKeepTag(Option<FailureTag>),
    #[error("event {event_id}: track {track_id} is missing")]
    MissingTrack { event_id: String, track_id: u64 },
    #[error("round id {round:?} must sort after the latest round {latest:?}")]
    RoundOrder { round: String, latest: String },
    #[error("invalid round id {0:?}")]
    InvalidRoundId(String),
    #[error("store is inconsistent: {0}")]
    Corrupt(String),
}

impl QaError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            QaError::Format(_) => "store_io",
            QaError::ReadOnly => "store_read_only",
            QaError::RoundNotFound(_) => "round_not_found",
            QaError::EventNotFound(_) => "event_not_found",
            QaError::MissingFailureTag => "missing_failure_tag",
            QaError::InvalidKeepTag(_) => "invalid_failure_tag",
            QaError::MissingTrack { .. } => "missing_track",
            QaError::RoundOrder { .. } => "round_order",
            QaError::InvalidRoundId(_) => "invalid_round_id",
            QaError::Corrupt(_) => "store_corrupt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Keep,
    Reject,
    Defer,
}

impl Decision {
    pub const ALL: [Decision; 3] = [Decision::Keep, Decision::Reject, Decision::Defer];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureTag {
    TrackingBreak,
    TtcMisuse,
    GeometryUnstable,
    CrossLaneFalseConflict,
    TrueNearMiss,
    Borderline,
    Other,
}

impl FailureTag {
    pub const ALL: [FailureTag; 7] = [
        FailureTag::TrackingBreak,
        FailureTag::TtcMisuse,
        FailureTag::GeometryUnstable,
        FailureTag::CrossLaneFalseConflict,
        FailureTag::TrueNearMiss,
        FailureTag::Borderline,
        FailureTag::Other,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseCorrection {
    pub track_id: u64,
    pub frame: u64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// A review as submitted, before the store assigns ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSubmission {
    pub decision: Decision,
    #[serde(default)]
    pub failure_tag: Option<FailureTag>,
    #[serde(default)]
    pub corrections: Vec<PoseCorrection>,
    #[serde(default)]
    pub notes: String,
    #[serde(default)]
    pub reviewer: String,
    /// RFC 3339; the store's clock is used when absent.
    #[serde(default)]
    pub created_at: Option<String>,
}

impl ReviewSubmission {
    pub fn validate(&self) -> Result<(), QaError> {
        validate_decision(self.decision, self.failure_tag)
    }
}

pub fn validate_decision(decision: Decision, tag: Option<FailureTag>) -> Result<(), QaError> {
    match (decision, tag) {
        (Decision::Keep, Some(FailureTag::TrueNearMiss | FailureTag::Borderline)) => Ok(()),
        (Decision::Keep, other) => Err(QaError::InvalidKeepTag(other)),
        (Decision::Reject, None) => Err(QaError::MissingFailureTag),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    #[serde(default)]
    pub format_version: Option<u32>,
    pub record_id: String,
    pub event_id: String,
    pub round_id: String,
    pub decision: Decision,
    #[serde(default)]
    pub failure_tag: Option<FailureTag>,
    #[serde(default)]
    pub corrections: Vec<PoseCorrection>,
    #[serde(default)]
    pub notes: String,
    pub reviewer: String,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackletFrame {
    pub frame: u64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    pub track_id: u64,
    pub class: ObjectClass,
    pub frames: Vec<TrackletFrame>,
}

/// Points of `track` within `[start - margin, end + margin]`, truncated at its ends.
pub fn tracklet(track: &Track, start: u64, end: u64, margin: u64) -> Tracklet {
    let lo = start.saturating_sub(margin);
    let hi = end.saturating_add(margin);
    Tracklet {
        track_id: track.track_id,
        class: track.class,
        frames: track
            .points
            .iter()
            .filter(|p| p.frame_id >= lo && p.frame_id <= hi)
            .map(|p| TrackletFrame {
                frame: p.frame_id,
                x: p.pose.x,
                y: p.pose.y,
                z: p.pose.z,
                yaw: p.pose.yaw(),
                dx: p.dims.dx(),
                dy: p.dims.dy(),
                dz: p.dims.dz(),
                provenance: p.provenance,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub event_id: String,
    pub round_id: String,
    pub created_at: String,
    pub branch: Option<Branch>,
    pub trigger: Trigger,
    pub track_a: u64,
    pub track_b: u64,
    pub class_a: ObjectClass,
    pub class_b: ObjectClass,
    pub start_frame: u64,
    pub end_frame: u64,
    pub argmin_frame: u64,
    pub location: [f64; 2],
    pub summary: MetricSummary,
    pub tracklets: Vec<Tracklet>,
    pub series: MetricSeries,
}

/// Queue listing row without tracklets or series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItemMeta {
    pub event_id: String,
    pub round_id: String,
    pub created_at: String,
    pub branch: Option<Branch>,
    pub trigger: Trigger,
    pub track_a: u64,
    pub track_b: u64,
    pub class_a: ObjectClass,
    pub class_b: ObjectClass,
    pub start_frame: u64,
    pub end_frame: u64,
    pub argmin_frame: u64,
    pub location: [f64; 2],
    pub summary: MetricSummary,
    pub status: EventStatus,
}

impl QueueItem {
    pub fn meta(&self, status: EventStatus) -> QueueItemMeta {
        QueueItemMeta {
            event_id: self.event_id.clone(),
            round_id: self.round_id.clone(),
            created_at: self.created_at.clone(),
            branch: self.branch,
            trigger: self.trigger,
            track_a: self.track_a,
            track_b: self.track_b,
            class_a: self.class_a,
            class_b: self.class_b,
            start_frame: self.start_frame,
            end_frame: self.end_frame,
            argmin_frame: self.argmin_frame,
            location: self.location,
            summary: self.summary.clone(),
            status,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub round_id: String,
    pub case_count: usize,
    /// Free-text note on the dominant issue, set by the operator.
    #[serde(default)]
    pub summary: String,
    pub config_snapshot: serde_json::Value,
    pub created_at: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct StoreIndex {
    #[serde(default)]
    format_version: Option<u32>,
    rounds: Vec<Round>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct QueueFile {
    #[serde(default)]
    format_version: Option<u32>,
    round_id: String,
    items: Vec<QueueItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round_id: String,
    pub records: usize,
    pub by_decision: BTreeMap<Decision, usize>,
    pub by_tag: BTreeMap<FailureTag, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpenMode {
    ReadOnly,
    ReadWrite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportReport {
    pub round_id: String,
    pub added: usize,
    pub already_present: usize,
    pub skipped_not_pending: usize,
}

#[derive(Debug, Default)]
struct State {
    index: StoreIndex,
    queues: BTreeMap<String, Vec<QueueItem>>,
    records: Vec<ReviewRecord>,
    /// event id -> round ids containing it, in round order.
    event_rounds: HashMap<String, Vec<String>>,
}

impl State {
    fn reindex(&mut self) {
        self.event_rounds.clear();
        for (round, items) in &self.queues {
            for item in items {
                self.event_rounds.entry(item.event_id.clone()).or_default().push(round.clone());
            }
        }
    }

    fn status(&self, event_id: &str) -> EventStatus {
        self.records
            .iter()
            .rev()
            .find(|r| r.event_id == event_id)
            .map_or(EventStatus::Pending, |r| r.decision.into())
    }

    fn find_item(&self, event_id: &str) -> Option<&QueueItem> {
        let round = self.event_rounds.get(event_id)?.last()?;
        self.queues.get(round)?.iter().find(|i| i.event_id == event_id)
    }
}

/// Embedded single-writer store. Reads share a lock; writes are serialized.
#[derive(Debug)]
pub struct QaStore {
    root: PathBuf,
    mode: OpenMode,
    state: RwLock<State>,
}

fn valid_round_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 32 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn write_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let tmp = path.with_extension("json.tmp");
    format::write_json(&tmp, value)?;
    std::fs::rename(&tmp, path).map_err(|e| FormatError::io(path, e))
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl QaStore {
    pub fn open(root: impl Into<PathBuf>, mode: OpenMode) -> Result<Self, QaError> {
        let root = root.into();
        if mode == OpenMode::ReadWrite {
            std::fs::create_dir_all(root.join("queues")).map_err(|e| FormatError::io(&root, e))?;
        }
        let mut state = State::default();
        let index_path = root.join(INDEX_FILE);
        if index_path.exists() {
            state.index = format::read_json(&index_path)?;
        }
        for round in &state.index.rounds {
            let path = root.join(queue_file(&round.round_id));
            let file: QueueFile = format::read_json(&path)?;
            if file.round_id != round.round_id {
                return Err(QaError::Corrupt(format!(
                    "{} holds round {:?}",
                    path.display(),
                    file.round_id
                )));
            }
            state.queues.insert(round.round_id.clone(), file.items);
        }
        let records_path = root.join(RECORDS_FILE);
        if records_path.exists() {
            state.records = format::read_jsonl(&records_path)?;
        }
        state.reindex();
        for r in &state.records {
            if !state.event_rounds.contains_key(&r.event_id) {
                return Err(QaError::Corrupt(format!(
                    "record {} references unknown event {}",
                    r.record_id, r.event_id
                )));
            }
        }
        Ok(QaStore {
            root,
            mode,
            state: RwLock::new(state),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn mode(&self) -> OpenMode {
        self.mode
    }

    fn ensure_writable(&self) -> Result<(), QaError> {
        match self.mode {
            OpenMode::ReadWrite => Ok(()),
            OpenMode::ReadOnly => Err(QaError::ReadOnly),
        }
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, State> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, State> {
        self.state.write().unwrap_or_else(|e| e.into_inner())
    }

    /// Exports one item per pending event. Re-exporting an event already in
    /// the round is a no-op.
    pub fn export_queue(
        &self,
        events: &[NearMissEvent],
        tracks: &[Track],
        round_id: &str,
        margin: u64,
        config_snapshot: serde_json::Value,
        created_at: &str,
    ) -> Result<ExportReport, QaError> {
        self.ensure_writable()?;
        if !valid_round_id(round_id) {
            return Err(QaError::InvalidRoundId(round_id.into()));
        }
        let by_id: HashMap<u64, &Track> = tracks.iter().map(|t| (t.track_id, t)).collect();
        let mut state = self.write();
        let existing = state.index.rounds.iter().any(|r| r.round_id == round_id);
        if !existing {
            if let Some(latest) = state.index.rounds.last() {
                if latest.round_id.as_str() >= round_id {
                    return Err(QaError::RoundOrder {
                        round: round_id.into(),
                        latest: latest.round_id.clone(),
                    });
                }
            }
        }

        let mut report = ExportReport {
            round_id: round_id.into(),
            added: 0,
            already_present: 0,
            skipped_not_pending: 0,
        };
        let mut items = state.queues.get(round_id).cloned().unwrap_or_default();
        for e in events {
            if e.status != EventStatus::Pending || state.status(&e.event_id) != EventStatus::Pending {
                report.skipped_not_pending += 1;
                continue;
            }
            if items.iter().any(|i| i.event_id == e.event_id) {
                report.already_present += 1;
                continue;
            }
            let mut tracklets = Vec::with_capacity(2);
            for id in [e.track_a, e.track_b] {
                let t = by_id.get(&id).ok_or_else(|| QaError::MissingTrack {
                    event_id: e.event_id.clone(),
                    track_id: id,
                })?;
                tracklets.push(tracklet(t, e.start_frame, e.end_frame, margin));
            }
            items.push(QueueItem {
                event_id: e.event_id.clone(),
                round_id: round_id.into(),
                created_at: created_at.into(),
                branch: e.branch,
                trigger: e.trigger,
                track_a: e.track_a,
                track_b: e.track_b,
                class_a: e.class_a,
                class_b: e.class_b,
                start_frame: e.start_frame,
                end_frame: e.end_frame,
                argmin_frame: e.argmin_frame,
                location: e.location,
                summary: e.summary.clone(),
                tracklets,
                series: e.series.clone(),
            });
            report.added += 1;
        }

        let mut index = state.index.clone();
        index.format_version = Some(format::FORMAT_VERSION);
        match index.rounds.iter_mut().find(|r| r.round_id == round_id) {
            Some(r) => r.case_count = items.len(),
            None => index.rounds.push(Round {
                round_id: round_id.into(),
                case_count: items.len(),
                summary: String::new(),
                config_snapshot,
                created_at: created_at.into(),
            }),
        }
        let file = QueueFile {
            format_version: Some(format::FORMAT_VERSION),
            round_id: round_id.into(),
            items,
        };
        // Queue before index: a crash leaves an orphan queue file, never a dangling index entry.
        write_atomic(&self.root.join(queue_file(round_id)), &file)?;
        write_atomic(&self.root.join(INDEX_FILE), &index)?;
        state.index = index;
        state.queues.insert(round_id.into(), file.items);
        state.reindex();
        Ok(report)
    }

    pub fn set_round_note(&self, round_id: &str, note: &str) -> Result<(), QaError> {
        self.ensure_writable()?;
        let mut state = self.write();
        let mut index = state.index.clone();
        let r = index
            .rounds
            .iter_mut()
            .find(|r| r.round_id == round_id)
            .ok_or_else(|| QaError::RoundNotFound(round_id.into()))?;
        r.summary = note.into();
        write_atomic(&self.root.join(INDEX_FILE), &index)?;
        state.index = index;
        Ok(())
    }

    /// Validates and appends a review for `event_id`; returns the new record id.
    pub fn submit_review(&self, event_id: &str, sub: ReviewSubmission) -> Result<ReviewRecord, QaError> {
        self.ensure_writable()?;
        sub.validate()?;
        let mut state = self.write();
        let round_id = state
            .event_rounds
            .get(event_id)
            .and_then(|r| r.last())
            .cloned()
            .ok_or_else(|| QaError::EventNotFound(event_id.into()))?;
        let record = ReviewRecord {
            format_version: Some(format::FORMAT_VERSION),
            record_id: format!("rec-{:06}", state.records.len() + 1),
            event_id: event_id.into(),
            round_id,
            decision: sub.decision,
            failure_tag: sub.failure_tag,
            corrections: sub.corrections,
            notes: sub.notes,
            reviewer: sub.reviewer,
            created_at: sub.created_at.unwrap_or_else(now_rfc3339),
        };
        let mut line = serde_json::to_vec(&record).map_err(FormatError::from)?;
        line.push(b'\n');
        let path = self.root.join(RECORDS_FILE);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| FormatError::io(&path, e))?;
        f.write_all(&line).map_err(|e| FormatError::io(&path, e))?;
        f.sync_data().map_err(|e| FormatError::io(&path, e))?;
        state.records.push(record.clone());
        Ok(record)
    }

    pub fn rounds(&self) -> Vec<Round> {
        self.read().index.rounds.clone()
    }

    pub fn queue(&self, round_id: &str) -> Result<Vec<QueueItemMeta>, QaError> {
        let state = self.read();
        let items = state
            .queues
            .get(round_id)
            .ok_or_else(|| QaError::RoundNotFound(round_id.into()))?;
        Ok(items.iter().map(|i| i.meta(state.status(&i.event_id))).collect())
    }

    /// Latest exported item for the event.
    pub fn case(&self, event_id: &str) -> Result<(QueueItem, EventStatus, Vec<ReviewRecord>), QaError> {
        let state = self.read();
        let item = state
            .find_item(event_id)
            .cloned()
            .ok_or_else(|| QaError::EventNotFound(event_id.into()))?;
        let history = state.records.iter().filter(|r| r.event_id == event_id).cloned().collect();
        Ok((item, state.status(event_id), history))
    }

    pub fn status(&self, event_id: &str) -> EventStatus {
        self.read().status(event_id)
    }

    pub fn records(&self) -> Vec<ReviewRecord> {
        self.read().records.clone()
    }

    /// Latest item for every event with its current status.
    pub fn latest_items(&self) -> Vec<QueueItemMeta> {
        let state = self.read();
        let mut ids: Vec<&String> = state.event_rounds.keys().collect();
        ids.sort();
        ids.into_iter()
            .filter_map(|id| state.find_item(id).map(|i| i.meta(state.status(id))))
            .collect()
    }

    pub fn round_summary(&self, round_id: &str) -> Result<RoundSummary, QaError> {
        let state = self.read();
        if !state.queues.contains_key(round_id) {
            return Err(QaError::RoundNotFound(round_id.into()));
        }
        let mut by_decision: BTreeMap<Decision, usize> = Decision::ALL.iter().map(|&d| (d, 0)).collect();
        let mut by_tag: BTreeMap<FailureTag, usize> = FailureTag::ALL.iter().map(|&t| (t, 0)).collect();
        let mut records = 0;
        for r in state.records.iter().filter(|r| r.round_id == round_id) {
            records += 1;
            *by_decision.entry(r.decision).or_default() += 1;
            if let Some(t) = r.failure_tag {
                *by_tag.entry(t).or_default() += 1;
            }
        }
        Ok(RoundSummary {
            round_id: round_id.into(),
            records,
            by_decision,
            by_tag,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BevPose, BoxDims};
    use crate::miner::{mine, ScreeningConfig};
    use crate::tracker::TrackPoint;

    fn cv(id: u64, start: [f64; 2], v: [f64; 2], frames: std::ops::Range<u64>) -> Track {
        Track {
            track_id: id,
            class: ObjectClass::Car,
            points: frames
                .map(|k| {
                    let t = k as f64 * 0.1;
                    TrackPoint {
                        frame_id: k,
                        pose: BevPose::new(start[0] + v[0] * t, start[1] + v[1] * t, 0.0, 0.0),
                        dims: BoxDims::new(4.0, 2.0, 1.5).unwrap(),
                        score: 0.9,
                        provenance: Provenance::Raw,
                        prediction: None,
                    }
                })
                .collect(),
        }
    }

    /// Three head-on pairs in disjoint time windows, one event each.
    fn fixture() -> (Vec<Track>, Vec<NearMissEvent>) {
        let mut tracks = Vec::new();
        for k in 0..3u64 {
            let (f0, t0) = (100 * k, 10.0 * k as f64);
            tracks.push(cv(2 * k + 1, [-10.0 - 5.0 * t0, 0.0], [5.0, 0.0], f0..f0 + 40));
            tracks.push(cv(2 * k + 2, [10.0 + 5.0 * t0, 7.0], [-5.0, 0.0], f0..f0 + 40));
        }
        let events = mine(&tracks, &ScreeningConfig::default(), Some(Branch::B1)).unwrap().events;
        (tracks, events)
    }

    fn sub(decision: Decision, tag: Option<FailureTag>) -> ReviewSubmission {
        ReviewSubmission {
            decision,
            failure_tag: tag,
            corrections: Vec::new(),
            notes: String::new(),
            reviewer: "r1".into(),
            created_at: Some("2026-01-01T00:00:00Z".into()),
        }
    }

    fn exported(dir: &Path) -> (QaStore, Vec<NearMissEvent>) {
        let (tracks, events) = fixture();
        let store = QaStore::open(dir, OpenMode::ReadWrite).unwrap();
        store
            .export_queue(&events, &tracks, "000", 20, serde_json::json!({}), "2026-01-01T00:00:00Z")
            .unwrap();
        (store, events)
    }

    #[test]
    fn export_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        let (tracks, events) = fixture();
        assert_eq!(events.len(), 3);
        let store = QaStore::open(dir.path(), OpenMode::ReadWrite).unwrap();
        let r = store
            .export_queue(&events, &tracks, "000", 20, serde_json::json!({}), "t0")
            .unwrap();
        assert_eq!(r.added, 3);
        let r = store
            .export_queue(&events, &tracks, "000", 20, serde_json::json!({}), "t0")
            .unwrap();
        assert_eq!((r.added, r.already_present), (0, 3));
        assert_eq!(store.queue("000").unwrap().len(), 3);
        assert_eq!(store.rounds()[0].case_count, 3);

        let reopened = QaStore::open(dir.path(), OpenMode::ReadOnly).unwrap();
        assert_eq!(reopened.queue("000").unwrap().len(), 3);
    }

    #[test]
    fn tracklet_truncated_at_start() {
        let t = cv(1, [0.0, 0.0], [1.0, 0.0], 0..40);
        let w = tracklet(&t, 5, 10, 20);
        assert_eq!(w.frames.first().unwrap().frame, 0);
        assert_eq!(w.frames.last().unwrap().frame, 30);
    }

    #[test]
    fn export_missing_track() {
        let dir = tempfile::tempdir().unwrap();
        let (tracks, events) = fixture();
        let store = QaStore::open(dir.path(), OpenMode::ReadWrite).unwrap();
        let err = store
            .export_queue(&events, &tracks[1..], "000", 20, serde_json::json!({}), "t0")
            .unwrap_err();
        assert!(matches!(err, QaError::MissingTrack { track_id: 1, .. }));
    }

    #[test]
    fn round_order_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let (tracks, events) = fixture();
        let store = QaStore::open(dir.path(), OpenMode::ReadWrite).unwrap();
        store.export_queue(&events, &tracks, "001", 20, serde_json::json!({}), "t").unwrap();
        assert!(matches!(
            store.export_queue(&events, &tracks, "000", 20, serde_json::json!({}), "t"),
            Err(QaError::RoundOrder { .. })
        ));
        assert!(matches!(
            store.export_queue(&events, &tracks, "../x", 20, serde_json::json!({}), "t"),
            Err(QaError::InvalidRoundId(_))
        ));
    }

    #[test]
    fn validation_rules() {
        assert!(sub(Decision::Keep, Some(FailureTag::TrueNearMiss)).validate().is_ok());
        assert!(sub(Decision::Keep, Some(FailureTag::Borderline)).validate().is_ok());
        assert!(matches!(
            sub(Decision::Keep, Some(FailureTag::TrackingBreak)).validate(),
            Err(QaError::InvalidKeepTag(_))
        ));
        assert!(matches!(sub(Decision::Reject, None).validate(), Err(QaError::MissingFailureTag)));
        assert!(sub(Decision::Defer, None).validate().is_ok());
    }

    #[test]
    fn submissions_and_latest_status() {
        let dir = tempfile::tempdir().unwrap();
        let (store, events) = exported(dir.path());
        let id = &events[0].event_id;
        let r1 = store.submit_review(id, sub(Decision::Reject, Some(FailureTag::TrackingBreak))).unwrap();
        assert_eq!(store.status(id), EventStatus::Rejected);
        let r2 = store.submit_review(id, sub(Decision::Keep, Some(FailureTag::TrueNearMiss))).unwrap();
        assert_ne!(r1.record_id, r2.record_id);
        assert_eq!(store.status(id), EventStatus::Kept);
        let (_, status, history) = store.case(id).unwrap();
        assert_eq!(status, EventStatus::Kept);
        assert_eq!(history.len(), 2);

        assert!(matches!(
            store.submit_review("nope", sub(Decision::Defer, None)),
            Err(QaError::EventNotFound(_))
        ));
        assert!(matches!(
            store.submit_review(id, sub(Decision::Reject, None)),
            Err(QaError::MissingFailureTag)
        ));
        assert_eq!(store.records().len(), 2);

        let reopened = QaStore::open(dir.path(), OpenMode::ReadOnly).unwrap();
        assert_eq!(reopened.records(), store.records());
        assert!(matches!(
            reopened.submit_review(id, sub(Decision::Defer, None)),
            Err(QaError::ReadOnly)
        ));
    }

    #[test]
    fn summaries() {
        let dir = tempfile::tempdir().unwrap();
        let (store, events) = exported(dir.path());
        let empty = store.round_summary("000").unwrap();
        assert_eq!(empty.records, 0);
        assert!(empty.by_decision.values().all(|&v| v == 0));
        assert_eq!(empty.by_tag.len(), FailureTag::ALL.len());

        store.submit_review(&events[0].event_id, sub(Decision::Keep, Some(FailureTag::TrueNearMiss))).unwrap();
        store.submit_review(&events[1].event_id, sub(Decision::Reject, Some(FailureTag::TtcMisuse))).unwrap();
        store.submit_review(&events[2].event_id, sub(Decision::Defer, None)).unwrap();
        let s = store.round_summary("000").unwrap();
        assert_eq!(s.records, 3);
        assert_eq!(s.by_decision[&Decision::Keep], 1);
        assert_eq!(s.by_decision.values().sum::<usize>(), s.records);
        assert!(matches!(store.round_summary("999"), Err(QaError::RoundNotFound(_))));
    }

    #[test]
    fn already_reviewed_events_not_reexported() {
        let dir = tempfile::tempdir().unwrap();
        let (tracks, events) = fixture();
        let (store, _) = exported(dir.path());
        store.submit_review(&events[0].event_id, sub(Decision::Reject, Some(FailureTag::Other))).unwrap();
        let r = store.export_queue(&events, &tracks, "001", 20, serde_json::json!({}), "t").unwrap();
        assert_eq!((r.added, r.skipped_not_pending), (2, 1));
        // New decisions on re-queued events land in the newest round.
        let rec = store.submit_review(&events[1].event_id, sub(Decision::Defer, None)).unwrap();
        assert_eq!(rec.round_id, "001");
    }
}
