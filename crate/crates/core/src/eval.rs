//! Evaluation of predicted tracks against ground truth.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::solve_gated;
use crate::geometry::{AngleDelta, BevPose};
use crate::ingest::{GroundTruthTrack, ObjectClass};
use crate::tracker::Track;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("metric {0} is undefined for this input")]
    Undefined(&'static str),
    #[error("invalid eval config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Inclusive BEV center-distance match radius (m).
    pub radius: f64,
    pub strict_class: bool,
    pub stationary_speed: f64,
    pub dt: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            radius: 1.5,
            strict_class: false,
            stationary_speed: 0.75,
            dt: 0.1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(EvalError::InvalidConfig("radius must be > 0".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(EvalError::InvalidConfig("dt must be > 0".into()));
        }
        Ok(())
    }
}

/// A labelled box at one frame, on either side of the comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBox {
    pub id: String,
    pub class: ObjectClass,
    pub pose: BevPose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub frame: u64,
    pub pred_id: String,
    pub gt_id: String,
    pub distance: f64,
    /// Absolute wrapped yaw error, radians in `[0, π]`.
    pub yaw_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unmatched {
    pub frame: u64,
    pub id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matches: Vec<MatchedPair>,
    pub unmatched_preds: Vec<Unmatched>,
    pub unmatched_gts: Vec<Unmatched>,
}

pub fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// Optimal one-to-one matching of one frame's boxes: maximum number of pairs
/// within `radius`, then minimum total center distance. Returns `(pred, gt, distance)`.
pub fn match_frame(preds: &[FrameBox], gts: &[FrameBox], cfg: &EvalConfig) -> Vec<(usize, usize, f64)> {
    let cost: Vec<Vec<Option<f64>>> = preds
        .iter()
        .map(|p| {
            gts.iter()
                .map(|g| {
                    if cfg.strict_class && p.class != g.class {
                        return None;
                    }
                    let d = (p.pose.x - g.pose.x).hypot(p.pose.y - g.pose.y);
                    (d <= cfg.radius).then_some(d)
                })
                .collect()
        })
        .collect();
    solve_gated(&cost, gts.len())
        .into_iter()
        .map(|m| (m.row, m.col, m.cost))
        .collect()
}

fn pred_boxes(preds: &[Track]) -> BTreeMap<u64, Vec<FrameBox>> {
    let mut out: BTreeMap<u64, Vec<FrameBox>> = BTreeMap::new();
    for t in preds {
        for p in &t.points {
            out.entry(p.frame_id).or_default().push(FrameBox {
                id: t.track_id.to_string(),
                class: t.class,
                pose: p.pose,
            });
        }
    }
    out
}

fn gt_boxes(gts: &[GroundTruthTrack]) -> BTreeMap<u64, Vec<FrameBox>> {
    let mut out: BTreeMap<u64, Vec<FrameBox>> = BTreeMap::new();
    for g in gts {
        for p in &g.points {
            out.entry(p.frame_id).or_default().push(FrameBox {
                id: g.gt_id.clone(),
                class: p.class,
                pose: p.pose,
            });
        }
    }
    out
}

/// Per-frame matching accumulated over every frame present on either side.
pub fn match_frames(preds: &[Track], gts: &[GroundTruthTrack], cfg: &EvalConfig) -> MatchReport {
    let pb = pred_boxes(preds);
    let gb = gt_boxes(gts);
    let frames: BTreeSet<u64> = pb.keys().chain(gb.keys()).copied().collect();
    let empty = Vec::new();
    let mut report = MatchReport::default();
    for f in frames {
        let ps = pb.get(&f).unwrap_or(&empty);
        let gs = gb.get(&f).unwrap_or(&empty);
        let matches = match_frame(ps, gs, cfg);
        let mut pred_used = vec![false; ps.len()];
        let mut gt_used = vec![false; gs.len()];
        for &(i, j, d) in &matches {
            pred_used[i] = true;
            gt_used[j] = true;
            report.matches.push(MatchedPair {
                frame: f,
                pred_id: ps[i].id.clone(),
                gt_id: gs[j].id.clone(),
                distance: d,
                yaw_error: AngleDelta::between(ps[i].pose.yaw(), gs[j].pose.yaw()).abs(),
            });
        }
        report.unmatched_preds.extend(
            ps.iter()
                .zip(&pred_used)
                .filter(|(_, &u)| !u)
                .map(|(p, _)| Unmatched { frame: f, id: p.id.clone() }),
        );
        report.unmatched_gts.extend(
            gs.iter()
                .zip(&gt_used)
                .filter(|(_, &u)| !u)
                .map(|(g, _)| Unmatched { frame: f, id: g.id.clone() }),
        );
    }
    report.tp = report.matches.len();
    report.fp = report.unmatched_preds.len();
    report.fn_ = report.unmatched_gts.len();
    (report.precision, report.recall, report.f1) = prf(report.tp, report.fp, report.fn_);
    report
}

/// 95th percentile of absolute yaw errors (radians in), reported in degrees.
///
/// Uses the order statistic at 0-based rank `min(⌊0.95·n⌋, n − 1)`, so 100
/// errors select the 96th smallest.
pub fn yaw_p95(errors: &[f64]) -> Result<f64, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::Undefined("yaw_p95"));
    }
    let mut v: Vec<f64> = errors.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let k = ((0.95 * n as f64).floor() as usize).min(n - 1);
    Ok(v[k].to_degrees())
}

/// Absolute heading-to-tangent offsets on moving frames. The tangent comes
/// from the track's own consecutive positions; frame 0 borrows the first step.
fn motion_offsets(track: &Track, cfg: &EvalConfig) -> Vec<f64> {
    let pts = &track.points;
    if pts.len() < 2 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..pts.len() {
        let (a, b) = if i == 0 { (&pts[0], &pts[1]) } else { (&pts[i - 1], &pts[i]) };
        let gap = (b.frame_id - a.frame_id).max(1) as f64;
        let (dx, dy) = (b.pose.x - a.pose.x, b.pose.y - a.pose.y);
        let speed = dx.hypot(dy) / (gap * cfg.dt);
        if speed >= cfg.stationary_speed && speed > 0.0 {
            out.push(AngleDelta::between(pts[i].pose.yaw(), dy.atan2(dx)).abs());
        }
    }
    out
}

/// Mean heading-to-path-tangent offset over moving frames, in degrees.
pub fn heading_motion_error(track: &Track, cfg: &EvalConfig) -> Result<f64, EvalError> {
    pooled_heading_motion_error(std::slice::from_ref(track), cfg)
}

pub fn pooled_heading_motion_error(tracks: &[Track], cfg: &EvalConfig) -> Result<f64, EvalError> {
    let all: Vec<f64> = tracks.iter().flat_map(|t| motion_offsets(t, cfg)).collect();
    if all.is_empty() {
        return Err(EvalError::Undefined("heading_motion_error"));
    }
    Ok((all.iter().sum::<f64>() / all.len() as f64).to_degrees())
}

fn steps(track: &Track) -> impl Iterator<Item = f64> + '_ {
    track
        .points
        .windows(2)
        .map(|w| AngleDelta::between(w[1].pose.yaw(), w[0].pose.yaw()).abs())
}

/// Mean absolute wrapped yaw change between consecutive points, in radians.
pub fn heading_step(track: &Track) -> Result<f64, EvalError> {
    pooled_heading_step(std::slice::from_ref(track))
}

pub fn pooled_heading_step(tracks: &[Track]) -> Result<f64, EvalError> {
    let (sum, n) = tracks
        .iter()
        .flat_map(steps)
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return Err(EvalError::Undefined("heading_step"));
    }
    Ok(sum / n as f64)
}

/// Mean number of extra predicted ids per matched ground-truth trajectory.
pub fn fragmentation_rate(report: &MatchReport) -> f64 {
    let mut ids: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for m in &report.matches {
        ids.entry(&m.gt_id).or_default().insert(&m.pred_id);
    }
    if ids.is_empty() {
        return 0.0;
    }
    ids.values().map(|s| s.len() - 1).sum::<usize>() as f64 / ids.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub radius: f64,
    pub strict_class: bool,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub yaw_p95_deg: Option<f64>,
    pub heading_motion_error_deg: Option<f64>,
    pub heading_step_rad: Option<f64>,
    pub fragmentation_rate: f64,
}

pub fn evaluate(preds: &[Track], gts: &[GroundTruthTrack], cfg: &EvalConfig) -> (EvalReport, MatchReport) {
    let m = match_frames(preds, gts, cfg);
    let yaw: Vec<f64> = m.matches.iter().map(|p| p.yaw_error).collect();
    let report = EvalReport {
        format_version: crate::format::current_version(),
        radius: cfg.radius,
        strict_class: cfg.strict_class,
        tp: m.tp,
        fp: m.fp,
        fn_: m.fn_,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        yaw_p95_deg: yaw_p95(&yaw).ok(),
        heading_motion_error_deg: pooled_heading_motion_error(preds, cfg).ok(),
        heading_step_rad: pooled_heading_step(preds).ok(),
        fragmentation_rate: fragmentation_rate(&m),
    };
    (report, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxDims;
    use crate::ingest::GtPoint;
    use crate::tracker::{Provenance, TrackPoint};
    use proptest::prelude::*;

    fn fb(id: &str, x: f64, y: f64) -> FrameBox {
        FrameBox {
            id: id.into(),
            class: ObjectClass::Car,
            pose: BevPose::new(x, y, 0.0, 0.0),
        }
    }

    fn track(id: u64, pts: &[(f64, f64, f64)]) -> Track {
        Track {
            track_id: id,
            class: ObjectClass::Car,
            points: pts
                .iter()
                .enumerate()
                .map(|(k, &(x, y, yaw))| TrackPoint {
                    frame_id: k as u64,
                    pose: BevPose::new(x, y, 0.0, yaw),
                    dims: BoxDims::new(4.0, 2.0, 1.5).unwrap(),
                    score: 0.9,
                    provenance: Provenance::Raw,
                    prediction: None,
                })
                .collect(),
        }
    }

    fn gt_of(t: &Track) -> GroundTruthTrack {
        GroundTruthTrack {
            gt_id: format!("g{}", t.track_id),
            points: t
                .points
                .iter()
                .map(|p| GtPoint {
                    frame_id: p.frame_id,
                    class: t.class,
                    pose: p.pose,
                    dims: p.dims,
                })
                .collect(),
        }
    }

    #[test]
    fn perfect_overlap() {
        let t = track(1, &[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (2.0, 0.0, 0.0)]);
        let r = match_frames(std::slice::from_ref(&t), &[gt_of(&t)], &EvalConfig::default());
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn radius_exclusion_and_boundary() {
        let cfg = EvalConfig::default();
        assert!(match_frame(&[fb("p", 2.0, 0.0)], &[fb("g", 0.0, 0.0)], &cfg).is_empty());
        assert_eq!(prf(0, 1, 1), (0.0, 0.0, 0.0));
        // Exactly on the radius counts.
        assert_eq!(match_frame(&[fb("p", 1.5, 0.0)], &[fb("g", 0.0, 0.0)], &cfg).len(), 1);
        assert!(match_frame(&[fb("p", 1.5 + 1e-12, 0.0)], &[fb("g", 0.0, 0.0)], &cfg).is_empty());
    }

    #[test]
    fn one_to_one() {
        let m = match_frame(
            &[fb("a", 0.5, 0.0), fb("b", -0.5, 0.0)],
            &[fb("g", 0.0, 0.0)],
            &EvalConfig::default(),
        );
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn strict_class_option() {
        let mut p = fb("p", 0.0, 0.0);
        p.class = ObjectClass::Truck;
        let mut cfg = EvalConfig::default();
        assert_eq!(match_frame(&[p.clone()], &[fb("g", 0.0, 0.0)], &cfg).len(), 1);
        cfg.strict_class = true;
        assert!(match_frame(&[p], &[fb("g", 0.0, 0.0)], &cfg).is_empty());
    }

    #[test]
    fn yaw_p95_examples() {
        assert_eq!(yaw_p95(&[0.0; 10]).unwrap(), 0.0);
        let mut errs = vec![1f64.to_radians(); 95];
        errs.extend(vec![10f64.to_radians(); 5]);
        assert!((yaw_p95(&errs).unwrap() - 10.0).abs() < 1e-9);
        assert!(yaw_p95(&[]).is_err());
        let e = AngleDelta::between((-179f64).to_radians(), 179f64.to_radians()).abs();
        assert!((e.to_degrees() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn heading_metrics() {
        let cfg = EvalConfig::default();
        let tangent: Vec<_> = (0..10).map(|k| (k as f64, 0.0, 0.0)).collect();
        assert!(heading_motion_error(&track(1, &tangent), &cfg).unwrap().abs() < 1e-12);
        let offset: Vec<_> = (0..10).map(|k| (k as f64, 0.0, 5f64.to_radians())).collect();
        assert!((heading_motion_error(&track(1, &offset), &cfg).unwrap() - 5.0).abs() < 1e-9);
        let still: Vec<_> = (0..10).map(|_| (0.0, 0.0, 0.0)).collect();
        assert!(heading_motion_error(&track(1, &still), &cfg).is_err());

        assert_eq!(heading_step(&track(1, &tangent)).unwrap(), 0.0);
        let turn: Vec<_> = (0..10).map(|k| (k as f64, 0.0, (k as f64).to_radians())).collect();
        assert!((heading_step(&track(1, &turn)).unwrap() - 0.017453292519943295).abs() < 1e-12);
        assert!(heading_step(&track(1, &tangent[..1])).is_err());
    }

    #[test]
    fn fragmentation() {
        let a = track(1, &[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]);
        let mut b = track(2, &[(0.0, 0.0, 0.0), (2.0, 0.0, 0.0), (3.0, 0.0, 0.0)]);
        b.points.remove(0);
        b.points.remove(0);
        let mut gt = gt_of(&track(9, &[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (2.0, 0.0, 0.0), (3.0, 0.0, 0.0)]));
        gt.points.truncate(3);
        let r = match_frames(&[a, b], &[gt], &EvalConfig::default());
        assert_eq!(r.tp, 3);
        assert_eq!(fragmentation_rate(&r), 1.0);
    }

    /// Exhaustive best (cardinality, then total distance) over all partial matchings.
    fn oracle(ps: &[FrameBox], gs: &[FrameBox], radius: f64) -> (usize, f64) {
        fn rec(i: usize, used: &mut Vec<bool>, d: &[Vec<f64>], radius: f64) -> (usize, f64) {
            if i == d.len() {
                return (0, 0.0);
            }
            let mut best = rec(i + 1, used, d, radius);
            for j in 0..used.len() {
                if !used[j] && d[i][j] <= radius {
                    used[j] = true;
                    let (k, c) = rec(i + 1, used, d, radius);
                    used[j] = false;
                    let cand = (k + 1, c + d[i][j]);
                    if cand.0 > best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                        best = cand;
                    }
                }
            }
            best
        }
        let d: Vec<Vec<f64>> = ps
            .iter()
            .map(|p| gs.iter().map(|g| (p.pose.x - g.pose.x).hypot(p.pose.y - g.pose.y)).collect())
            .collect();
        rec(0, &mut vec![false; gs.len()], &d, radius)
    }

    proptest! {
        #[test]
        fn matching_optimal(
            ps in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 0..=5),
            gs in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 0..=5),
        ) {
            let pb: Vec<_> = ps.iter().enumerate().map(|(i, &(x, y))| fb(&format!("p{i}"), x, y)).collect();
            let gb: Vec<_> = gs.iter().enumerate().map(|(i, &(x, y))| fb(&format!("g{i}"), x, y)).collect();
            let m = match_frame(&pb, &gb, &EvalConfig::default());
            let (k, c) = oracle(&pb, &gb, 1.5);
            prop_assert_eq!(m.len(), k);
            let total: f64 = m.iter().map(|x| x.2).sum();
            prop_assert!((total - c).abs() < 1e-9);
            let (p, r, f1) = prf(m.len(), pb.len() - m.len(), gb.len() - m.len());
            prop_assert!((0.0..=1.0).contains(&f1));
            prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r));
        }

        #[test]
        fn yaw_errors_bounded(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let e = AngleDelta::between(a, b).abs();
            prop_assert!((0.0..=std::f64::consts::PI).contains(&e));
        }
    }
}
