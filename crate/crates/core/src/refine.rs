//! Post-tracking refinement branches.
//!
//! * `B0` passes tracks through unchanged.
//! * `B1` flags suspicious frames and applies capped corrections, but only
//!   where the detection-to-prediction residual shows the registration is good.
//! * `B2` smooths every frame of the track with a centered window.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::{circular_mean_unweighted, wrap, AngleDelta};
use crate::tracker::{Provenance, Track};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Branch {
    B0,
    B1,
    B2,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::B0 => "B0",
            Branch::B1 => "B1",
            Branch::B2 => "B2",
        })
    }
}

impl FromStr for Branch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "b0" => Ok(Branch::B0),
            "b1" => Ok(Branch::B1),
            "b2" => Ok(Branch::B2),
            other => Err(format!("unknown branch {other:?} (expected b0, b1 or b2)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuspicionReason {
    YawStep,
    RegistrationDisagreement,
    CompositeScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Hard per-frame yaw step limit (degrees).
    pub yaw_step_limit_deg: f64,
    /// Yaw step that maps to a normalized indicator of 1 (degrees).
    pub yaw_step_scale_deg: f64,
    /// Residual that maps to a normalized indicator of 1 (m); the tracker gate.
    pub residual_scale: f64,
    /// Hard residual limit (m).
    pub residual_limit: f64,
    /// Score drop that maps to a normalized indicator of 1.
    pub score_drop_scale: f64,
    pub suspicion_threshold: f64,
    /// Maximum position correction per frame (m).
    pub pos_cap: f64,
    /// Maximum yaw correction per frame (degrees).
    pub yaw_cap_deg: f64,
    /// Corrections apply only when the frame residual is at most this (m).
    pub registration_ok_residual: f64,
    /// Unflagged neighbors used on each side for the B1 reference yaw.
    pub reference_neighbors: usize,
    /// Odd B2 window length (frames).
    pub smoothing_window: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig::for_gate(1.5)
    }
}

impl RefineConfig {
    pub fn for_gate(gate_radius: f64) -> Self {
        RefineConfig {
            yaw_step_limit_deg: 25.0,
            yaw_step_scale_deg: 15.0,
            residual_scale: gate_radius,
            residual_limit: 2.0 * gate_radius,
            score_drop_scale: 0.5,
            suspicion_threshold: 0.5,
            pos_cap: 0.5,
            yaw_cap_deg: 10.0,
            registration_ok_residual: gate_radius,
            reference_neighbors: 2,
            smoothing_window: 9,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.smoothing_window < 3 || self.smoothing_window % 2 == 0 {
            return Err(format!(
                "smoothing_window must be odd and >= 3, got {}",
                self.smoothing_window
            ));
        }
        for (name, v) in [
            ("yaw_step_limit_deg", self.yaw_step_limit_deg),
            ("yaw_step_scale_deg", self.yaw_step_scale_deg),
            ("residual_scale", self.residual_scale),
            ("residual_limit", self.residual_limit),
            ("score_drop_scale", self.score_drop_scale),
            ("pos_cap", self.pos_cap),
            ("yaw_cap_deg", self.yaw_cap_deg),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be > 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.suspicion_threshold) {
            return Err("suspicion_threshold must be in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameIndicators {
    pub frame_id: u64,
    pub yaw_step_deg: f64,
    pub position_residual_m: f64,
    pub score_drop: f64,
    pub composite: f64,
    pub reasons: BTreeSet<SuspicionReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedSegment {
    pub start_frame: u64,
    pub end_frame: u64,
    pub reasons: BTreeSet<SuspicionReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspicionReport {
    pub track_id: u64,
    pub segments: Vec<FlaggedSegment>,
    pub frames: Vec<FrameIndicators>,
}

impl SuspicionReport {
    pub fn is_flagged(&self, frame: u64) -> bool {
        self.segments
            .iter()
            .any(|s| s.start_frame <= frame && frame <= s.end_frame)
    }

    pub fn reasons_at(&self, frame: u64) -> BTreeSet<SuspicionReason> {
        self.frames
            .iter()
            .find(|f| f.frame_id == frame)
            .map(|f| f.reasons.clone())
            .unwrap_or_default()
    }
}

/// Scores per-frame suspicion from yaw steps, residuals and score drops.
///
/// `residuals` must align with `track.points`.
pub fn score_suspicion(track: &Track, residuals: &[f64], cfg: &RefineConfig) -> SuspicionReport {
    let mut report = SuspicionReport {
        track_id: track.track_id,
        segments: Vec::new(),
        frames: Vec::new(),
    };
    let pts = &track.points;
    if pts.len() < 2 {
        return report;
    }
    assert_eq!(residuals.len(), pts.len(), "residuals must align with track points");

    for (i, p) in pts.iter().enumerate() {
        let (yaw_step_deg, score_drop) = if i == 0 {
            (0.0, 0.0)
        } else {
            let prev = &pts[i - 1];
            let gap = (p.frame_id - prev.frame_id).max(1) as f64;
            let step = AngleDelta::between(p.pose.yaw(), prev.pose.yaw()).abs().to_degrees() / gap;
            (step, (prev.score - p.score).max(0.0))
        };
        let residual = residuals[i];
        let yaw_n = (yaw_step_deg / cfg.yaw_step_scale_deg).clamp(0.0, 1.0);
        let res_n = (residual / cfg.residual_scale).clamp(0.0, 1.0);
        let drop_n = (score_drop / cfg.score_drop_scale).clamp(0.0, 1.0);
        let composite = (yaw_n + res_n + drop_n) / 3.0;

        let mut reasons = BTreeSet::new();
        if yaw_step_deg > cfg.yaw_step_limit_deg {
            reasons.insert(SuspicionReason::YawStep);
        }
        if residual > cfg.residual_limit {
            reasons.insert(SuspicionReason::RegistrationDisagreement);
        }
        if composite > cfg.suspicion_threshold {
            reasons.insert(SuspicionReason::CompositeScore);
        }
        report.frames.push(FrameIndicators {
            frame_id: p.frame_id,
            yaw_step_deg,
            position_residual_m: residual,
            score_drop,
            composite,
            reasons,
        });
    }

    // Adjacent flagged points merge into one segment.
    let mut current: Option<FlaggedSegment> = None;
    for f in &report.frames {
        if f.reasons.is_empty() {
            if let Some(seg) = current.take() {
                report.segments.push(seg);
            }
            continue;
        }
        match current.as_mut() {
            Some(seg) => {
                seg.end_frame = f.frame_id;
                seg.reasons.extend(f.reasons.iter().copied());
            }
            None => {
                current = Some(FlaggedSegment {
                    start_frame: f.frame_id,
                    end_frame: f.frame_id,
                    reasons: f.reasons.clone(),
                })
            }
        }
    }
    if let Some(seg) = current {
        report.segments.push(seg);
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub frame_id: u64,
    /// Position delta `[dx, dy]` in meters.
    pub dpos: [f64; 2],
    /// Heading delta in radians.
    pub dyaw: f64,
    pub applied: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedTrack {
    pub track: Track,
    pub branch: Branch,
    pub corrections: Vec<Correction>,
}

pub fn refine_b0(track: &Track) -> RefinedTrack {
    RefinedTrack {
        track: track.clone(),
        branch: Branch::B0,
        corrections: Vec::new(),
    }
}

fn reason_label(reasons: &BTreeSet<SuspicionReason>) -> String {
    reasons
        .iter()
        .map(|r| match r {
            SuspicionReason::YawStep => "yaw_step",
            SuspicionReason::RegistrationDisagreement => "registration_disagreement",
            SuspicionReason::CompositeScore => "composite_score",
        })
        .collect::<Vec<_>>()
        .join("+")
}

fn clip_norm(v: [f64; 2], cap: f64) -> [f64; 2] {
    let n = v[0].hypot(v[1]);
    if n <= cap || n == 0.0 {
        v
    } else {
        [v[0] * cap / n, v[1] * cap / n]
    }
}

/// Selective capped corrections on flagged frames.
pub fn refine_b1(track: &Track, report: &SuspicionReport, cfg: &RefineConfig) -> RefinedTrack {
    let mut out = track.clone();
    let mut corrections = Vec::new();
    let pts = &track.points;
    let flagged: Vec<bool> = pts.iter().map(|p| report.is_flagged(p.frame_id)).collect();
    let yaw_cap = cfg.yaw_cap_deg.to_radians();

    for (i, p) in pts.iter().enumerate() {
        if !flagged[i] {
            continue;
        }
        let dpos = match p.prediction {
            Some([px, py]) => clip_norm([px - p.pose.x, py - p.pose.y], cfg.pos_cap),
            None => [0.0, 0.0],
        };

        let mut neighbors = Vec::with_capacity(2 * cfg.reference_neighbors);
        neighbors.extend(
            (0..i)
                .rev()
                .filter(|&j| !flagged[j])
                .take(cfg.reference_neighbors)
                .map(|j| pts[j].pose.yaw()),
        );
        neighbors.extend(
            (i + 1..pts.len())
                .filter(|&j| !flagged[j])
                .take(cfg.reference_neighbors)
                .map(|j| pts[j].pose.yaw()),
        );
        let dyaw = match circular_mean_unweighted(&neighbors) {
            Ok(reference) => AngleDelta::between(reference, p.pose.yaw())
                .value()
                .clamp(-yaw_cap, yaw_cap),
            Err(_) => 0.0,
        };

        let applied = p.residual() <= cfg.registration_ok_residual;
        if applied {
            let q = &mut out.points[i];
            q.pose = q.pose.with_xy(p.pose.x + dpos[0], p.pose.y + dpos[1]);
            q.pose.set_yaw(wrap(p.pose.yaw() + dyaw));
            if q.provenance == Provenance::Raw && (dpos != [0.0, 0.0] || dyaw != 0.0) {
                q.provenance = Provenance::Corrected;
            }
        }
        corrections.push(Correction {
            frame_id: p.frame_id,
            dpos,
            dyaw,
            applied,
            reason: reason_label(&report.reasons_at(p.frame_id)),
        });
    }
    RefinedTrack {
        track: out,
        branch: Branch::B1,
        corrections,
    }
}

/// Half-width of the symmetric window at `i`, truncated at the track ends.
pub(crate) fn symmetric_half(i: usize, n: usize, half: usize) -> usize {
    half.min(i).min(n - 1 - i)
}

/// Whole-track centered smoothing of position and yaw.
pub fn refine_b2(track: &Track, cfg: &RefineConfig) -> RefinedTrack {
    let pts = &track.points;
    let n = pts.len();
    if n < 3 {
        return RefinedTrack {
            track: track.clone(),
            branch: Branch::B2,
            corrections: Vec::new(),
        };
    }
    let half = cfg.smoothing_window / 2;
    let mut out = track.clone();
    let mut corrections = Vec::with_capacity(n);
    for i in 0..n {
        let h = symmetric_half(i, n, half);
        let window = &pts[i - h..=i + h];
        let k = window.len() as f64;
        let mx = window.iter().map(|p| p.pose.x).sum::<f64>() / k;
        let my = window.iter().map(|p| p.pose.y).sum::<f64>() / k;
        let yaws: Vec<f64> = window.iter().map(|p| p.pose.yaw()).collect();
        let yaw = circular_mean_unweighted(&yaws).unwrap_or(pts[i].pose.yaw());
        let p = &pts[i];
        let q = &mut out.points[i];
        q.pose = q.pose.with_xy(mx, my);
        q.pose.set_yaw(yaw);
        if q.provenance == Provenance::Raw {
            q.provenance = Provenance::Smoothed;
        }
        corrections.push(Correction {
            frame_id: p.frame_id,
            dpos: [mx - p.pose.x, my - p.pose.y],
            dyaw: AngleDelta::between(yaw, p.pose.yaw()).value(),
            applied: true,
            reason: "smoothing".into(),
        });
    }
    RefinedTrack {
        track: out,
        branch: Branch::B2,
        corrections,
    }
}

/// Runs the requested branch on a track using its stored tracker residuals.
pub fn refine(track: &Track, branch: Branch, cfg: &RefineConfig) -> RefinedTrack {
    match branch {
        Branch::B0 => refine_b0(track),
        Branch::B1 => {
            let report = score_suspicion(track, &track.residuals(), cfg);
            refine_b1(track, &report, cfg)
        }
        Branch::B2 => refine_b2(track, cfg),
    }
}

pub fn refine_all(tracks: &[Track], branch: Branch, cfg: &RefineConfig) -> Vec<RefinedTrack> {
    tracks.iter().map(|t| refine(t, branch, cfg)).collect()
}

/// Sidecar audit row for one correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRecord {
    pub format_version: u32,
    pub track_id: u64,
    pub branch: Branch,
    pub frame: u64,
    pub dx: f64,
    pub dy: f64,
    pub dyaw: f64,
    pub applied: bool,
    pub reason: String,
}

pub fn correction_records(refined: &[RefinedTrack]) -> Vec<CorrectionRecord> {
    refined
        .iter()
        .flat_map(|r| {
            r.corrections.iter().map(move |c| CorrectionRecord {
                format_version: crate::format::current_version(),
                track_id: r.track.track_id,
                branch: r.branch,
                frame: c.frame_id,
                dx: c.dpos[0],
                dy: c.dpos[1],
                dyaw: c.dyaw,
                applied: c.applied,
                reason: c.reason.clone(),
            })
        })
        .collect()
}
