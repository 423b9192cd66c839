//! SORT-style multi-object tracking in BEV.
//!
//! Each track carries a constant-velocity Kalman filter over `(x, y, vx, vy)`.
//! Detections are associated per frame by a gated optimal assignment on BEV
//! center distance (or rotated-box IoU), restricted to matching classes. Yaw
//! and dims pass through unfiltered.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{self, Match};
use crate::geometry::{bev_iou, wrap, AngleDelta, BevPose, BoxDims};
use crate::ingest::{Detection, FrameStream, ObjectClass};
use crate::refine::Branch;

#[derive(Debug, Error, PartialEq)]
pub enum TrackerError {
    #[error("invalid tracker config: {0}")]
    InvalidConfig(String),
    #[error("track {track_id}: covariance lost symmetry or positive semi-definiteness")]
    Covariance { track_id: u64 },
    #[error("frame {frame} arrived after frame {last}")]
    OutOfOrder { frame: u64, last: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GateMode {
    /// Admit pairs whose BEV center distance is within `gate_radius`.
    CenterDistance,
    /// Admit pairs whose rotated-footprint IoU is at least `min_iou`.
    Iou { min_iou: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub gate_radius: f64,
    pub gate_mode: GateMode,
    pub max_misses: u32,
    pub min_hits: u32,
    /// Measurement noise std-dev on each BEV axis (m).
    pub measurement_std: f64,
    /// White-noise acceleration std-dev (m/s²).
    pub process_accel_std: f64,
    /// Initial velocity std-dev for a newborn track (m/s).
    pub initial_velocity_std: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            gate_radius: 1.5,
            gate_mode: GateMode::CenterDistance,
            max_misses: 5,
            min_hits: 3,
            measurement_std: 0.15,
            process_accel_std: 2.0,
            initial_velocity_std: 8.0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let bad = |m: &str| Err(TrackerError::InvalidConfig(m.into()));
        if !(self.gate_radius.is_finite() && self.gate_radius > 0.0) {
            return bad("gate_radius must be > 0");
        }
        if self.min_hits < 1 {
            return bad("min_hits must be >= 1");
        }
        if let GateMode::Iou { min_iou } = self.gate_mode {
            if !(min_iou > 0.0 && min_iou <= 1.0) {
                return bad("min_iou must be in (0, 1]");
            }
        }
        for (name, v) in [
            ("measurement_std", self.measurement_std),
            ("process_accel_std", self.process_accel_std),
            ("initial_velocity_std", self.initial_velocity_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TrackerError::InvalidConfig(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Dead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Raw,
    Interpolated,
    Corrected,
    Smoothed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackPoint {
    pub frame_id: u64,
    pub pose: BevPose,
    pub dims: BoxDims,
    pub score: f64,
    pub provenance: Provenance,
    /// Kalman prior position at this frame, when one existed.
    pub prediction: Option<[f64; 2]>,
}

impl TrackPoint {
    /// Distance between the observed center and the tracker prediction.
    pub fn residual(&self) -> f64 {
        match self.prediction {
            Some([px, py]) => (self.pose.x - px).hypot(self.pose.y - py),
            None => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u64,
    pub class: ObjectClass,
    pub points: Vec<TrackPoint>,
}

impl Track {
    pub fn first_frame(&self) -> Option<u64> {
        self.points.first().map(|p| p.frame_id)
    }

    pub fn last_frame(&self) -> Option<u64> {
        self.points.last().map(|p| p.frame_id)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point_at(&self, frame: u64) -> Option<&TrackPoint> {
        self.points
            .binary_search_by_key(&frame, |p| p.frame_id)
            .ok()
            .map(|i| &self.points[i])
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.points.iter().map(TrackPoint::residual).collect()
    }

    pub fn frames_strictly_increasing(&self) -> bool {
        self.points.windows(2).all(|w| w[0].frame_id < w[1].frame_id)
    }
}

/// Live filter state of one track.
#[derive(Debug, Clone)]
pub struct TrackState {
    pub track_id: u64,
    pub class: ObjectClass,
    pub kalman_mean: Vector4<f64>,
    pub kalman_cov: Matrix4<f64>,
    pub last_pose: BevPose,
    pub last_dims: BoxDims,
    pub last_score: f64,
    pub hits: u32,
    pub misses: u32,
    pub status: TrackStatus,
    points: Vec<TrackPoint>,
    coast: Vec<(u64, [f64; 2])>,
}

impl TrackState {
    pub fn predicted_position(&self) -> [f64; 2] {
        [self.kalman_mean[0], self.kalman_mean[1]]
    }

    pub fn predicted_pose(&self) -> BevPose {
        self.last_pose
            .with_xy(self.kalman_mean[0], self.kalman_mean[1])
    }
}

/// Returns true when `cov` is symmetric and PSD to within `tol`.
pub fn covariance_is_valid(cov: &Matrix4<f64>, tol: f64) -> bool {
    if (cov - cov.transpose()).abs().max() > tol {
        return false;
    }
    let sym = (cov + cov.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().all(|&l| l >= -tol)
}

struct Kalman {
    r: Matrix2<f64>,
    accel_var: f64,
    init_vel_var: f64,
}

impl Kalman {
    fn new(cfg: &TrackerConfig) -> Self {
        Kalman {
            r: Matrix2::identity() * cfg.measurement_std.powi(2),
            accel_var: cfg.process_accel_std.powi(2),
            init_vel_var: cfg.initial_velocity_std.powi(2),
        }
    }

    fn h() -> Matrix2x4<f64> {
        Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
    }

    fn init(&self, x: f64, y: f64) -> (Vector4<f64>, Matrix4<f64>) {
        let pos_var = self.r[(0, 0)];
        let cov = Matrix4::from_diagonal(&Vector4::new(
            pos_var,
            pos_var,
            self.init_vel_var,
            self.init_vel_var,
        ));
        (Vector4::new(x, y, 0.0, 0.0), cov)
    }

    fn predict(&self, mean: &mut Vector4<f64>, cov: &mut Matrix4<f64>, dt: f64) {
        let mut f = Matrix4::identity();
        f[(0, 2)] = dt;
        f[(1, 3)] = dt;
        let (dt2, dt3, dt4) = (dt * dt, dt.powi(3), dt.powi(4));
        let q = Matrix4::new(
            dt4 / 4.0, 0.0, dt3 / 2.0, 0.0,
            0.0, dt4 / 4.0, 0.0, dt3 / 2.0,
            dt3 / 2.0, 0.0, dt2, 0.0,
            0.0, dt3 / 2.0, 0.0, dt2,
        ) * self.accel_var;
        *mean = f * *mean;
        *cov = f * *cov * f.transpose() + q;
    }

    fn update(&self, mean: &mut Vector4<f64>, cov: &mut Matrix4<f64>, z: Vector2<f64>) {
        let h = Self::h();
        let innovation = z - h * *mean;
        let s = h * *cov * h.transpose() + self.r + Matrix2::identity() * 1e-12;
        let s_inv = s.try_inverse().unwrap_or_else(Matrix2::zeros);
        let k = *cov * h.transpose() * s_inv;
        *mean += k * innovation;
        // Joseph form keeps the covariance symmetric PSD.
        let ikh = Matrix4::identity() - k * h;
        let updated = ikh * *cov * ikh.transpose() + k * self.r * k.transpose();
        *cov = (updated + updated.transpose()) * 0.5;
    }
}

/// Result of one association round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Association {
    /// `(prediction index, detection index, cost)`.
    pub matches: Vec<(usize, usize, f64)>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

impl Association {
    pub fn total_cost(&self) -> f64 {
        self.matches.iter().map(|m| m.2).sum()
    }
}

/// Admissible association cost between a prediction and a detection.
pub fn gate_cost(pred: &TrackState, det: &Detection, radius: f64, mode: GateMode) -> Option<f64> {
    if pred.class != det.class {
        return None;
    }
    match mode {
        GateMode::CenterDistance => {
            let [px, py] = pred.predicted_position();
            let d = (det.pose.x - px).hypot(det.pose.y - py);
            (d <= radius).then_some(d)
        }
        GateMode::Iou { min_iou } => {
            let iou = bev_iou(&pred.predicted_pose(), &pred.last_dims, &det.pose, &det.dims);
            (iou >= min_iou).then_some(1.0 - iou)
        }
    }
}

/// Globally optimal class-gated assignment on BEV center distance.
pub fn associate(predictions: &[TrackState], detections: &[Detection], gate_radius: f64) -> Association {
    associate_with(predictions, detections, gate_radius, GateMode::CenterDistance)
}

pub fn associate_with(
    predictions: &[TrackState],
    detections: &[Detection],
    gate_radius: f64,
    mode: GateMode,
) -> Association {
    associate_costs(&gate_matrix(predictions, detections, gate_radius, mode), detections.len())
}

/// Gated cost matrix, one row per prediction; `None` is inadmissible.
pub fn gate_matrix(
    predictions: &[TrackState],
    detections: &[Detection],
    gate_radius: f64,
    mode: GateMode,
) -> Vec<Vec<Option<f64>>> {
    predictions
        .iter()
        .map(|p| {
            detections
                .iter()
                .map(|d| gate_cost(p, d, gate_radius, mode))
                .collect()
        })
        .collect()
}

pub fn associate_costs(cost: &[Vec<Option<f64>>], detections: usize) -> Association {
    let matches: Vec<Match> = assignment::solve_gated(cost, detections);
    let mut det_used = vec![false; detections];
    let mut pred_used = vec![false; cost.len()];
    for m in &matches {
        det_used[m.col] = true;
        pred_used[m.row] = true;
    }
    Association {
        matches: matches.iter().map(|m| (m.row, m.col, m.cost)).collect(),
        unmatched_predictions: (0..cost.len()).filter(|&i| !pred_used[i]).collect(),
        unmatched_detections: (0..detections).filter(|&i| !det_used[i]).collect(),
    }
}

/// Incremental tracker; `track` drives it over a whole stream.
pub struct Tracker {
    cfg: TrackerConfig,
    dt: f64,
    kalman: Kalman,
    live: Vec<TrackState>,
    finished: Vec<TrackState>,
    next_id: u64,
    last_frame: Option<u64>,
}

/// Which track took which detection in one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameStep {
    pub frame_id: u64,
    /// `(track_id, detection index)`.
    pub assigned: Vec<(u64, usize)>,
    pub association_cost: f64,
    /// Track ids of the cost-matrix rows, in row order.
    pub candidates: Vec<u64>,
    /// Gated costs the assignment was solved on.
    pub costs: Vec<Vec<Option<f64>>>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig, dt: f64) -> Result<Self, TrackerError> {
        cfg.validate()?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(TrackerError::InvalidConfig(format!("dt must be > 0, got {dt}")));
        }
        let kalman = Kalman::new(&cfg);
        Ok(Tracker {
            cfg,
            dt,
            kalman,
            live: Vec::new(),
            finished: Vec::new(),
            next_id: 1,
            last_frame: None,
        })
    }

    pub fn live_tracks(&self) -> &[TrackState] {
        &self.live
    }

    /// Processes one frame of detections.
    pub fn step(&mut self, frame_id: u64, detections: &[Detection]) -> Result<FrameStep, TrackerError> {
        let gap = match self.last_frame {
            Some(last) if frame_id <= last => {
                return Err(TrackerError::OutOfOrder { frame: frame_id, last })
            }
            Some(last) => frame_id - last,
            None => 1,
        };
        self.last_frame = Some(frame_id);
        let dt = gap as f64 * self.dt;
        for t in &mut self.live {
            self.kalman.predict(&mut t.kalman_mean, &mut t.kalman_cov, dt);
        }

        let costs = gate_matrix(&self.live, detections, self.cfg.gate_radius, self.cfg.gate_mode);
        let assoc = associate_costs(&costs, detections.len());
        let mut step = FrameStep {
            frame_id,
            assigned: Vec::with_capacity(assoc.matches.len()),
            association_cost: assoc.total_cost(),
            candidates: self.live.iter().map(|t| t.track_id).collect(),
            costs,
        };

        for &(ti, di, _) in &assoc.matches {
            let det = &detections[di];
            let t = &mut self.live[ti];
            let prior = t.predicted_position();
            self.kalman.update(
                &mut t.kalman_mean,
                &mut t.kalman_cov,
                Vector2::new(det.pose.x, det.pose.y),
            );
            if !covariance_is_valid(&t.kalman_cov, 1e-8) {
                return Err(TrackerError::Covariance { track_id: t.track_id });
            }
            fill_gap(t, det);
            t.points.push(TrackPoint {
                frame_id,
                pose: det.pose,
                dims: det.dims,
                score: det.score,
                provenance: Provenance::Raw,
                prediction: Some(prior),
            });
            t.last_pose = det.pose;
            t.last_dims = det.dims;
            t.last_score = det.score;
            t.hits += 1;
            t.misses = 0;
            if t.hits >= self.cfg.min_hits {
                t.status = TrackStatus::Confirmed;
            }
            step.assigned.push((t.track_id, di));
        }

        for &ti in &assoc.unmatched_predictions {
            let t = &mut self.live[ti];
            t.misses += 1;
            let pos = t.predicted_position();
            t.coast.push((frame_id, pos));
            if t.status == TrackStatus::Tentative || t.misses > self.cfg.max_misses {
                t.status = TrackStatus::Dead;
            }
        }

        for &di in &assoc.unmatched_detections {
            let det = &detections[di];
            let (mean, cov) = self.kalman.init(det.pose.x, det.pose.y);
            let id = self.next_id;
            self.next_id += 1;
            self.live.push(TrackState {
                track_id: id,
                class: det.class,
                kalman_mean: mean,
                kalman_cov: cov,
                last_pose: det.pose,
                last_dims: det.dims,
                last_score: det.score,
                hits: 1,
                misses: 0,
                status: if self.cfg.min_hits <= 1 {
                    TrackStatus::Confirmed
                } else {
                    TrackStatus::Tentative
                },
                points: vec![TrackPoint {
                    frame_id,
                    pose: det.pose,
                    dims: det.dims,
                    score: det.score,
                    provenance: Provenance::Raw,
                    prediction: None,
                }],
                coast: Vec::new(),
            });
            step.assigned.push((id, di));
        }

        let (dead, live): (Vec<_>, Vec<_>) = std::mem::take(&mut self.live)
            .into_iter()
            .partition(|t| t.status == TrackStatus::Dead);
        self.live = live;
        self.finished.extend(dead);
        step.assigned.sort_unstable();
        Ok(step)
    }

    /// Closes every live track and returns the confirmed ones, renumbered
    /// from 1 in order of first frame.
    pub fn finish(mut self) -> Vec<Track> {
        self.finished.append(&mut self.live);
        let mut kept: Vec<TrackState> = self
            .finished
            .into_iter()
            .filter(|t| t.hits >= self.cfg.min_hits)
            .collect();
        kept.sort_by_key(|t| (t.points[0].frame_id, t.track_id));
        kept.into_iter()
            .enumerate()
            .map(|(i, t)| Track {
                track_id: i as u64 + 1,
                class: t.class,
                points: t.points,
            })
            .collect()
    }
}

// Emits the coasted frames between the last raw point and `det` as interpolated points.
fn fill_gap(t: &mut TrackState, det: &Detection) {
    if t.coast.is_empty() {
        return;
    }
    let last = t.points.last().expect("track has a first point").clone();
    let span = (det.frame_id - last.frame_id) as f64;
    let dyaw = AngleDelta::between(det.pose.yaw(), last.pose.yaw()).value();
    for &(frame, [x, y]) in &t.coast {
        let u = (frame - last.frame_id) as f64 / span;
        t.points.push(TrackPoint {
            frame_id: frame,
            pose: BevPose::new(x, y, last.pose.z, wrap(last.pose.yaw() + u * dyaw)),
            dims: last.dims,
            score: last.score,
            provenance: Provenance::Interpolated,
            prediction: None,
        });
    }
    t.coast.clear();
}

/// Runs the tracker over a whole stream.
pub fn track(frames: &FrameStream, cfg: &TrackerConfig) -> Result<Vec<Track>, TrackerError> {
    let mut tracker = Tracker::new(cfg.clone(), frames.dt())?;
    for (frame_id, dets) in frames.frames() {
        tracker.step(frame_id, dets)?;
    }
    Ok(tracker.finish())
}

/// Wire format of one track point: the track JSONL schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_version: Option<u32>,
    pub track_id: u64,
    pub cls: ObjectClass,
    pub frame: u64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub score: f64,
    pub provenance: Provenance,
    #[serde(default)]
    pub pred_x: Option<f64>,
    #[serde(default)]
    pub pred_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<Branch>,
}

impl TrackRecord {
    pub fn from_point(track: &Track, p: &TrackPoint, branch: Option<Branch>) -> Self {
        TrackRecord {
            format_version: Some(crate::format::current_version()),
            track_id: track.track_id,
            cls: track.class,
            frame: p.frame_id,
            x: p.pose.x,
            y: p.pose.y,
            z: p.pose.z,
            yaw: p.pose.yaw(),
            dx: p.dims.dx(),
            dy: p.dims.dy(),
            dz: p.dims.dz(),
            score: p.score,
            provenance: p.provenance,
            pred_x: p.prediction.map(|q| q[0]),
            pred_y: p.prediction.map(|q| q[1]),
            branch,
        }
    }

    pub fn to_point(&self) -> Result<TrackPoint, String> {
        let pose = BevPose::try_new(self.x, self.y, self.z, self.yaw).map_err(|e| e.to_string())?;
        let dims = BoxDims::new(self.dx, self.dy, self.dz).map_err(|e| e.to_string())?;
        let prediction = match (self.pred_x, self.pred_y) {
            (Some(x), Some(y)) => Some([x, y]),
            (None, None) => None,
            _ => return Err("pred_x and pred_y must both be present or both null".into()),
        };
        Ok(TrackPoint {
            frame_id: self.frame,
            pose,
            dims,
            score: self.score,
            provenance: self.provenance,
            prediction,
        })
    }
}

pub fn track_records(tracks: &[Track], branch: Option<Branch>) -> Vec<TrackRecord> {
    tracks
        .iter()
        .flat_map(|t| t.points.iter().map(move |p| TrackRecord::from_point(t, p, branch)))
        .collect()
}

#[derive(Debug, Error)]
pub enum TrackRecordError {
    #[error("record {index}: {message}")]
    Invalid { index: usize, message: String },
    #[error("track {track_id}: class changes from {first} to {other}")]
    ClassChange {
        track_id: u64,
        first: ObjectClass,
        other: ObjectClass,
    },
    #[error("track {track_id}: duplicate frame {frame}")]
    DuplicateFrame { track_id: u64, frame: u64 },
}

/// Groups records into tracks (sorted by first frame then id). Returns the
/// branch recorded on the rows, when they agree on one.
pub fn tracks_from_records(
    records: &[TrackRecord],
) -> Result<(Vec<Track>, Option<Branch>), TrackRecordError> {
    let mut by_id: BTreeMap<u64, (ObjectClass, BTreeMap<u64, TrackPoint>)> = BTreeMap::new();
    let mut branch = records.first().and_then(|r| r.branch);
    for (index, r) in records.iter().enumerate() {
        if r.branch != branch {
            branch = None;
        }
        let p = r
            .to_point()
            .map_err(|message| TrackRecordError::Invalid { index, message })?;
        let entry = by_id.entry(r.track_id).or_insert_with(|| (r.cls, BTreeMap::new()));
        if entry.0 != r.cls {
            return Err(TrackRecordError::ClassChange {
                track_id: r.track_id,
                first: entry.0,
                other: r.cls,
            });
        }
        if entry.1.insert(r.frame, p).is_some() {
            return Err(TrackRecordError::DuplicateFrame {
                track_id: r.track_id,
                frame: r.frame,
            });
        }
    }
    let mut tracks: Vec<Track> = by_id
        .into_iter()
        .map(|(track_id, (class, pts))| Track {
            track_id,
            class,
            points: pts.into_values().collect(),
        })
        .collect();
    tracks.sort_by_key(|t| (t.first_frame(), t.track_id));
    Ok((tracks, branch))
}
