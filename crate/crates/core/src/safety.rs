//! Frame-level surrogate safety measures for a pair of tracks: signed
//! size-adjusted separation, direction-agnostic time-to-collision, and
//! time-to-collision along the heavier participant's direction of travel.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::geometry::{BevPose, BoxDims};
use crate::ingest::ObjectClass;
use crate::tracker::Track;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SafetyError {
    #[error("tracks {a} and {b} overlap in {frames} frame(s); need at least 2")]
    InsufficientOverlap { a: u64, b: u64, frames: usize },
    #[error("heavy participant is not moving; longitudinal direction undefined")]
    UndefinedDirection,
    #[error("radius buffer must be finite and >= 0, got {0}")]
    InvalidBuffer(f64),
}

/// Time-to-collision: either a finite positive time or "not closing".
///
/// Serialized as a number or `null`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ttc {
    Closing(f64),
    NotClosing,
}

impl Ttc {
    pub fn seconds(self) -> f64 {
        match self {
            Ttc::Closing(t) => t,
            Ttc::NotClosing => f64::INFINITY,
        }
    }

    pub fn is_closing(self) -> bool {
        matches!(self, Ttc::Closing(_))
    }
}

impl fmt::Display for Ttc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ttc::Closing(t) => write!(f, "{t:.3} s"),
            Ttc::NotClosing => f.write_str("inf"),
        }
    }
}

impl Serialize for Ttc {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Ttc::Closing(t) => s.serialize_some(t),
            Ttc::NotClosing => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for Ttc {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match Option::<f64>::deserialize(d)? {
            Some(t) if t.is_finite() && t >= 0.0 => Ok(Ttc::Closing(t)),
            Some(t) => Err(serde::de::Error::custom(format!("invalid ttc {t}"))),
            None => Ok(Ttc::NotClosing),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RadiusBuffer(f64);

impl RadiusBuffer {
    pub fn new(m: f64) -> Result<Self, SafetyError> {
        if m.is_finite() && m >= 0.0 {
            Ok(RadiusBuffer(m))
        } else {
            Err(SafetyError::InvalidBuffer(m))
        }
    }

    pub fn meters(self) -> f64 {
        self.0
    }
}

impl Default for RadiusBuffer {
    fn default() -> Self {
        RadiusBuffer(0.3)
    }
}

impl TryFrom<f64> for RadiusBuffer {
    type Error = SafetyError;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        RadiusBuffer::new(v)
    }
}

impl From<RadiusBuffer> for f64 {
    fn from(b: RadiusBuffer) -> f64 {
        b.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairFrame {
    pub frame_id: u64,
    pub p1: BevPose,
    pub p2: BevPose,
    pub v1: [f64; 2],
    pub v2: [f64; 2],
    pub dims1: BoxDims,
    pub dims2: BoxDims,
}

impl PairFrame {
    fn dp(&self) -> [f64; 2] {
        [self.p2.x - self.p1.x, self.p2.y - self.p1.y]
    }

    fn dv(&self) -> [f64; 2] {
        [self.v2[0] - self.v1[0], self.v2[1] - self.v1[1]]
    }

    pub fn swapped(&self) -> PairFrame {
        PairFrame {
            frame_id: self.frame_id,
            p1: self.p2,
            p2: self.p1,
            v1: self.v2,
            v2: self.v1,
            dims1: self.dims2,
            dims2: self.dims1,
        }
    }
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn proxy_radius(dims: &BoxDims, buffer: RadiusBuffer) -> f64 {
    dims.half_diagonal() + buffer.meters()
}

/// Signed clearance between the circular proxies; negative means overlap.
pub fn separation(f: &PairFrame, buffer: RadiusBuffer) -> f64 {
    let dp = f.dp();
    dp[0].hypot(dp[1]) - (proxy_radius(&f.dims1, buffer) + proxy_radius(&f.dims2, buffer))
}

/// Time until centers reach closest approach, if currently closing.
pub fn ttc(f: &PairFrame) -> Ttc {
    let dp = f.dp();
    let dv = f.dv();
    let closing = dot(dp, dv);
    let vv = dot(dv, dv);
    if closing < 0.0 && vv > 0.0 {
        Ttc::Closing(-closing / vv)
    } else {
        Ttc::NotClosing
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heavy {
    First,
    Second,
}

/// TTC along the unit direction of the heavy participant's velocity.
pub fn ttc_longitudinal(f: &PairFrame, heavy: Heavy) -> Result<Ttc, SafetyError> {
    let (ph, pb, vh, vb) = match heavy {
        Heavy::First => (&f.p1, &f.p2, f.v1, f.v2),
        Heavy::Second => (&f.p2, &f.p1, f.v2, f.v1),
    };
    let speed = vh[0].hypot(vh[1]);
    if speed <= 0.0 || !speed.is_finite() {
        return Err(SafetyError::UndefinedDirection);
    }
    let e = [vh[0] / speed, vh[1] / speed];
    let d_par = dot([pb.x - ph.x, pb.y - ph.y], e);
    let v_par = dot([vb[0] - vh[0], vb[1] - vh[1]], e);
    if d_par <= 0.0 || v_par >= 0.0 {
        return Ok(Ttc::NotClosing);
    }
    Ok(Ttc::Closing(d_par / -v_par))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricFrame {
    pub frame: u64,
    pub sep: f64,
    pub ttc: Ttc,
    pub ttc_long: Ttc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub min_sep: f64,
    pub argmin_sep: u64,
    pub min_ttc: Ttc,
    pub argmin_ttc: Option<u64>,
    pub min_ttc_long: Ttc,
    pub argmin_ttc_long: Option<u64>,
}

fn min_with_arg<F: Fn(&MetricFrame) -> Ttc>(frames: &[MetricFrame], key: F) -> (Ttc, Option<u64>) {
    let mut best = (Ttc::NotClosing, None);
    for f in frames {
        let t = key(f);
        if t.seconds() < best.0.seconds() {
            best = (t, Some(f.frame));
        }
    }
    best
}

impl MetricSummary {
    /// Minima over `frames` (first frame wins ties). `None` when empty.
    pub fn from_frames(frames: &[MetricFrame]) -> Option<Self> {
        let first = frames.first()?;
        let (mut min_sep, mut argmin_sep) = (first.sep, first.frame);
        for f in &frames[1..] {
            if f.sep < min_sep {
                min_sep = f.sep;
                argmin_sep = f.frame;
            }
        }
        let (min_ttc, argmin_ttc) = min_with_arg(frames, |f| f.ttc);
        let (min_ttc_long, argmin_ttc_long) = min_with_arg(frames, |f| f.ttc_long);
        Some(MetricSummary {
            min_sep,
            argmin_sep,
            min_ttc,
            argmin_ttc,
            min_ttc_long,
            argmin_ttc_long,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub track_a: u64,
    pub track_b: u64,
    pub class_a: ObjectClass,
    pub class_b: ObjectClass,
    /// Track id whose heading defines the longitudinal axis.
    pub heavy: u64,
    /// Frames where the heavy participant stood still and TTC∥ was taken as not closing.
    pub undefined_direction_frames: usize,
    pub frames: Vec<MetricFrame>,
    pub summary: MetricSummary,
}

impl MetricSeries {
    /// Subseries over `[start, end]`, with summaries recomputed.
    pub fn restrict(&self, start: u64, end: u64) -> Option<MetricSeries> {
        let frames: Vec<MetricFrame> = self
            .frames
            .iter()
            .filter(|f| f.frame >= start && f.frame <= end)
            .cloned()
            .collect();
        let summary = MetricSummary::from_frames(&frames)?;
        Some(MetricSeries {
            frames,
            summary,
            ..self.clone()
        })
    }

    pub fn first_frame(&self) -> u64 {
        self.frames.first().map_or(0, |f| f.frame)
    }

    pub fn last_frame(&self) -> u64 {
        self.frames.last().map_or(0, |f| f.frame)
    }
}

/// Picks the heavy participant: higher class rank first, then higher mean speed,
/// then the first track.
pub fn choose_heavy(class_a: ObjectClass, class_b: ObjectClass, speed_a: f64, speed_b: f64) -> Heavy {
    match class_a.mass_rank().cmp(&class_b.mass_rank()) {
        std::cmp::Ordering::Greater => Heavy::First,
        std::cmp::Ordering::Less => Heavy::Second,
        std::cmp::Ordering::Equal if speed_b > speed_a => Heavy::Second,
        std::cmp::Ordering::Equal => Heavy::First,
    }
}

/// Centered finite differences (one-sided at the ends) over `(frame, xy)` samples.
pub fn finite_difference_velocity(frames: &[u64], xy: &[[f64; 2]], dt: f64) -> Vec<[f64; 2]> {
    let n = xy.len();
    (0..n)
        .map(|i| {
            if n < 2 {
                return [0.0, 0.0];
            }
            let (lo, hi) = match i {
                0 => (0, 1),
                i if i == n - 1 => (n - 2, n - 1),
                i => (i - 1, i + 1),
            };
            let span = (frames[hi] - frames[lo]) as f64 * dt;
            [(xy[hi][0] - xy[lo][0]) / span, (xy[hi][1] - xy[lo][1]) / span]
        })
        .collect()
}

/// Frames present in both tracks, in increasing order.
pub fn overlap_frames(a: &Track, b: &Track) -> Vec<u64> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.points.len() && j < b.points.len() {
        let (fa, fb) = (a.points[i].frame_id, b.points[j].frame_id);
        match fa.cmp(&fb) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(fa);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Per-participant poses, dims and velocities on the shared frames.
pub fn pair_frames(a: &Track, b: &Track, dt: f64) -> Result<Vec<PairFrame>, SafetyError> {
    let frames = overlap_frames(a, b);
    if frames.len() < 2 {
        return Err(SafetyError::InsufficientOverlap {
            a: a.track_id,
            b: b.track_id,
            frames: frames.len(),
        });
    }
    let pa: Vec<_> = frames.iter().map(|&f| a.point_at(f).expect("overlap frame")).collect();
    let pb: Vec<_> = frames.iter().map(|&f| b.point_at(f).expect("overlap frame")).collect();
    let va = finite_difference_velocity(&frames, &pa.iter().map(|p| p.pose.xy()).collect::<Vec<_>>(), dt);
    let vb = finite_difference_velocity(&frames, &pb.iter().map(|p| p.pose.xy()).collect::<Vec<_>>(), dt);
    Ok((0..frames.len())
        .map(|i| PairFrame {
            frame_id: frames[i],
            p1: pa[i].pose,
            p2: pb[i].pose,
            v1: va[i],
            v2: vb[i],
            dims1: pa[i].dims,
            dims2: pb[i].dims,
        })
        .collect())
}

fn mean_speed(vs: impl Iterator<Item = [f64; 2]>) -> f64 {
    let (sum, n) = vs.fold((0.0, 0usize), |(s, n), v| (s + v[0].hypot(v[1]), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn pair_metrics(a: &Track, b: &Track, buffer: RadiusBuffer, dt: f64) -> Result<MetricSeries, SafetyError> {
    let frames = pair_frames(a, b, dt)?;
    let heavy = choose_heavy(
        a.class,
        b.class,
        mean_speed(frames.iter().map(|f| f.v1)),
        mean_speed(frames.iter().map(|f| f.v2)),
    );
    let mut undefined = 0;
    let rows: Vec<MetricFrame> = frames
        .iter()
        .map(|f| {
            let ttc_long = ttc_longitudinal(f, heavy).unwrap_or_else(|_| {
                undefined += 1;
                Ttc::NotClosing
            });
            MetricFrame {
                frame: f.frame_id,
                sep: separation(f, buffer),
                ttc: ttc(f),
                ttc_long,
            }
        })
        .collect();
    if undefined > 0 {
        log::debug!(
            "pair ({}, {}): heavy participant stationary on {undefined} frame(s)",
            a.track_id,
            b.track_id
        );
    }
    let summary = MetricSummary::from_frames(&rows).expect("at least two frames");
    Ok(MetricSeries {
        track_a: a.track_id,
        track_b: b.track_id,
        class_a: a.class,
        class_b: b.class,
        heavy: match heavy {
            Heavy::First => a.track_id,
            Heavy::Second => b.track_id,
        },
        undefined_direction_frames: undefined,
        frames: rows,
        summary,
    })
}

/// One line of the metric-series JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub format_version: u32,
    pub track_a: u64,
    pub track_b: u64,
    pub frame: u64,
    pub sep: f64,
    pub ttc: Ttc,
    pub ttc_long: Ttc,
}

pub fn metric_records(series: &[MetricSeries]) -> Vec<MetricRecord> {
    series
        .iter()
        .flat_map(|s| {
            s.frames.iter().map(move |f| MetricRecord {
                format_version: crate::format::current_version(),
                track_a: s.track_a,
                track_b: s.track_b,
                frame: f.frame,
                sep: f.sep,
                ttc: f.ttc,
                ttc_long: f.ttc_long,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracker::{Provenance, TrackPoint};
    use proptest::prelude::*;

    fn dims(dx: f64, dy: f64) -> BoxDims {
        BoxDims::new(dx, dy, 1.5).unwrap()
    }

    fn frame(p1: [f64; 2], p2: [f64; 2], v1: [f64; 2], v2: [f64; 2]) -> PairFrame {
        PairFrame {
            frame_id: 0,
            p1: BevPose::new(p1[0], p1[1], 0.0, 0.0),
            p2: BevPose::new(p2[0], p2[1], 0.0, 0.0),
            v1,
            v2,
            dims1: dims(4.0, 2.0),
            dims2: dims(4.0, 2.0),
        }
    }

    fn cv_track(id: u64, class: ObjectClass, start: [f64; 2], v: [f64; 2], frames: std::ops::Range<u64>) -> Track {
        Track {
            track_id: id,
            class,
            points: frames
                .map(|k| {
                    let t = k as f64 * 0.1;
                    TrackPoint {
                        frame_id: k,
                        pose: BevPose::new(start[0] + v[0] * t, start[1] + v[1] * t, 0.0, v[1].atan2(v[0])),
                        dims: dims(4.0, 2.0),
                        score: 0.9,
                        provenance: Provenance::Raw,
                        prediction: None,
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn separation_examples() {
        let f = frame([0.0, 0.0], [10.0, 0.0], [0.0; 2], [0.0; 2]);
        let expect = 10.0 - 2.0 * (0.5 * 20f64.sqrt() + 0.3);
        let s = separation(&f, RadiusBuffer::default());
        assert!((s - expect).abs() < 1e-12);
        assert!((s - 4.928).abs() < 1e-3);

        let f = frame([1.0, 1.0], [1.0, 1.0], [0.0; 2], [0.0; 2]);
        assert!(separation(&f, RadiusBuffer::default()) < 0.0);

        let mut f = frame([0.0, 0.0], [3.0, 4.0], [0.0; 2], [0.0; 2]);
        f.dims1 = dims(1e-9, 1e-9);
        f.dims2 = dims(1e-9, 1e-9);
        assert!((separation(&f, RadiusBuffer::new(0.0).unwrap()) - 5.0).abs() < 1e-8);
    }

    #[test]
    fn ttc_examples() {
        let f = frame([0.0, 0.0], [10.0, 0.0], [0.0; 2], [-2.0, 0.0]);
        assert_eq!(ttc(&f), Ttc::Closing(5.0));
        let f = frame([0.0, 0.0], [10.0, 0.0], [0.0; 2], [2.0, 0.0]);
        assert_eq!(ttc(&f), Ttc::NotClosing);
        let f = frame([0.0, 0.0], [10.0, 0.0], [3.0, 1.0], [3.0, 1.0]);
        assert_eq!(ttc(&f), Ttc::NotClosing);
    }

    #[test]
    fn longitudinal_examples() {
        // Heavy moving +x at 5 m/s; bicycle 8 m ahead at 3 m/s.
        let f = frame([0.0, 0.0], [8.0, 0.0], [5.0, 0.0], [3.0, 0.0]);
        assert_eq!(ttc_longitudinal(&f, Heavy::First).unwrap(), Ttc::Closing(4.0));
        // Bicycle crossing laterally at the heavy vehicle's speed along x.
        let f = frame([0.0, 0.0], [8.0, 3.0], [5.0, 0.0], [5.0, -3.0]);
        assert_eq!(ttc_longitudinal(&f, Heavy::First).unwrap(), Ttc::NotClosing);
        assert!(ttc(&f).is_closing());
        let f = frame([0.0, 0.0], [8.0, 0.0], [5.0, 0.0], [7.0, 0.0]);
        assert_eq!(ttc_longitudinal(&f, Heavy::First).unwrap(), Ttc::NotClosing);
        // Other agent already behind.
        let f = frame([0.0, 0.0], [-8.0, 0.0], [5.0, 0.0], [0.0, 0.0]);
        assert_eq!(ttc_longitudinal(&f, Heavy::First).unwrap(), Ttc::NotClosing);
        let f = frame([0.0, 0.0], [8.0, 0.0], [0.0, 0.0], [-1.0, 0.0]);
        assert_eq!(ttc_longitudinal(&f, Heavy::First), Err(SafetyError::UndefinedDirection));
    }

    #[test]
    fn longitudinal_not_symmetric() {
        let f = frame([0.0, 0.0], [8.0, 1.0], [5.0, 0.0], [1.0, 2.0]);
        let a = ttc_longitudinal(&f, Heavy::First).unwrap();
        let b = ttc_longitudinal(&f.swapped(), Heavy::First).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, ttc_longitudinal(&f.swapped(), Heavy::Second).unwrap());
    }

    #[test]
    fn ttc_serializes_as_null() {
        let rows = vec![Ttc::Closing(1.25), Ttc::NotClosing];
        let s = serde_json::to_string(&rows).unwrap();
        assert_eq!(s, "[1.25,null]");
        let back: Vec<Ttc> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, rows);
        assert!(serde_json::from_str::<Ttc>("-1.0").is_err());
    }

    #[test]
    fn parallel_tracks() {
        let a = cv_track(1, ObjectClass::Car, [0.0, 0.0], [5.0, 0.0], 0..30);
        let b = cv_track(2, ObjectClass::Car, [0.0, 6.0], [5.0, 0.0], 0..30);
        let m = pair_metrics(&a, &b, RadiusBuffer::default(), 0.1).unwrap();
        assert!(m.frames.iter().all(|f| f.ttc == Ttc::NotClosing));
        let expect = 6.0 - 2.0 * (0.5 * 20f64.sqrt() + 0.3);
        assert!((m.summary.min_sep - expect).abs() < 1e-9);
    }

    #[test]
    fn insufficient_overlap() {
        let a = cv_track(1, ObjectClass::Car, [0.0, 0.0], [5.0, 0.0], 0..10);
        let b = cv_track(2, ObjectClass::Car, [0.0, 6.0], [5.0, 0.0], 9..20);
        assert!(matches!(
            pair_metrics(&a, &b, RadiusBuffer::default(), 0.1),
            Err(SafetyError::InsufficientOverlap { frames: 1, .. })
        ));
    }

    /// Dense closest approach of two piecewise-linear center paths.
    fn dense_closest_approach(a: &Track, b: &Track, dt: f64) -> f64 {
        let frames = overlap_frames(a, b);
        let sub = 100;
        let mut best = (f64::INFINITY, 0.0);
        for w in frames.windows(2) {
            let (pa0, pa1) = (a.point_at(w[0]).unwrap().pose, a.point_at(w[1]).unwrap().pose);
            let (pb0, pb1) = (b.point_at(w[0]).unwrap().pose, b.point_at(w[1]).unwrap().pose);
            for k in 0..=sub {
                let s = k as f64 / sub as f64;
                let dx = (pb0.x + s * (pb1.x - pb0.x)) - (pa0.x + s * (pa1.x - pa0.x));
                let dy = (pb0.y + s * (pb1.y - pb0.y)) - (pa0.y + s * (pa1.y - pa0.y));
                let d = dx.hypot(dy);
                if d < best.0 {
                    best = (d, (w[0] as f64 + s * (w[1] - w[0]) as f64) * dt);
                }
            }
        }
        best.1
    }

    #[test]
    fn head_on_matches_dense_oracle() {
        let a = cv_track(1, ObjectClass::Car, [-20.0, 0.0], [6.0, 0.0], 0..40);
        let b = cv_track(2, ObjectClass::Car, [20.0, 0.3], [-7.0, 0.0], 0..40);
        let m = pair_metrics(&a, &b, RadiusBuffer::default(), 0.1).unwrap();
        let t_ca = dense_closest_approach(&a, &b, 0.1);
        let argmin = m.summary.argmin_ttc.unwrap() as f64 * 0.1;
        let predicted = argmin + m.summary.min_ttc.seconds();
        assert!((predicted - t_ca).abs() <= 0.1, "{predicted} vs {t_ca}");
    }

    #[test]
    fn restrict_recomputes() {
        let a = cv_track(1, ObjectClass::Car, [-20.0, 0.0], [6.0, 0.0], 0..40);
        let b = cv_track(2, ObjectClass::Car, [20.0, 0.3], [-7.0, 0.0], 0..40);
        let m = pair_metrics(&a, &b, RadiusBuffer::default(), 0.1).unwrap();
        let r = m.restrict(0, 10).unwrap();
        assert_eq!(r.frames.len(), 11);
        assert!(r.summary.min_sep >= m.summary.min_sep);
        assert!(r.summary.min_ttc.seconds() >= m.summary.min_ttc.seconds());
        assert!(m.restrict(100, 200).is_none());
    }

    #[test]
    fn heavy_rule() {
        assert_eq!(choose_heavy(ObjectClass::Bicycle, ObjectClass::Truck, 9.0, 1.0), Heavy::Second);
        assert_eq!(choose_heavy(ObjectClass::Car, ObjectClass::Car, 1.0, 2.0), Heavy::Second);
        assert_eq!(choose_heavy(ObjectClass::Car, ObjectClass::Car, 2.0, 2.0), Heavy::First);
    }

    fn transform(f: &PairFrame, theta: f64, shift: [f64; 2]) -> PairFrame {
        let (s, c) = theta.sin_cos();
        let rot = |v: [f64; 2]| [c * v[0] - s * v[1], s * v[0] + c * v[1]];
        let pose = |p: &BevPose| {
            let r = rot([p.x, p.y]);
            BevPose::new(r[0] + shift[0], r[1] + shift[1], p.z, p.yaw() + theta)
        };
        PairFrame {
            frame_id: f.frame_id,
            p1: pose(&f.p1),
            p2: pose(&f.p2),
            v1: rot(f.v1),
            v2: rot(f.v2),
            dims1: f.dims1,
            dims2: f.dims2,
        }
    }

    fn close(a: Ttc, b: Ttc, tol: f64) -> bool {
        match (a, b) {
            (Ttc::Closing(x), Ttc::Closing(y)) => (x - y).abs() <= tol * (1.0 + x.abs()),
            (Ttc::NotClosing, Ttc::NotClosing) => true,
            _ => false,
        }
    }

    fn arb_frame() -> impl Strategy<Value = PairFrame> {
        (
            prop::array::uniform2(-30.0f64..30.0),
            prop::array::uniform2(-30.0f64..30.0),
            prop::array::uniform2(-10.0f64..10.0),
            prop::array::uniform2(-10.0f64..10.0),
            prop::array::uniform2(0.5f64..8.0),
            prop::array::uniform2(0.5f64..8.0),
        )
            .prop_map(|(p1, p2, v1, v2, d1, d2)| PairFrame {
                frame_id: 0,
                p1: BevPose::new(p1[0], p1[1], 0.0, 0.0),
                p2: BevPose::new(p2[0], p2[1], 0.0, 0.0),
                v1,
                v2,
                dims1: dims(d1[0], d1[1]),
                dims2: dims(d2[0], d2[1]),
            })
    }

    proptest! {
        #[test]
        fn swap_symmetry(f in arb_frame()) {
            let b = RadiusBuffer::default();
            prop_assert_eq!(separation(&f, b), separation(&f.swapped(), b));
            prop_assert!(close(ttc(&f), ttc(&f.swapped()), 1e-12));
        }

        #[test]
        fn rigid_invariance(f in arb_frame(), theta in -3.1f64..3.1, sx in -100.0f64..100.0, sy in -100.0f64..100.0) {
            // Skip frames whose closing sign is numerically ambiguous.
            let dp = f.dp();
            let dv = f.dv();
            prop_assume!(dot(dp, dv).abs() > 1e-6);
            let g = transform(&f, theta, [sx, sy]);
            let b = RadiusBuffer::default();
            prop_assert!((separation(&f, b) - separation(&g, b)).abs() < 1e-9);
            prop_assert!(close(ttc(&f), ttc(&g), 1e-9));
            if let (Ok(a), Ok(c)) = (ttc_longitudinal(&f, Heavy::First), ttc_longitudinal(&g, Heavy::First)) {
                let e = [f.v1[0] / f.v1[0].hypot(f.v1[1]), f.v1[1] / f.v1[0].hypot(f.v1[1])];
                let d_par = dot(dp, e);
                let v_par = dot(dv, e);
                prop_assume!(d_par.abs() > 1e-6 && v_par.abs() > 1e-6);
                prop_assert!(close(a, c, 1e-9));
            }
        }

        #[test]
        fn scaling(f in arb_frame(), c in 0.1f64..10.0) {
            let b = RadiusBuffer::new(0.0).unwrap();
            let scaled = PairFrame {
                frame_id: 0,
                p1: BevPose::new(f.p1.x * c, f.p1.y * c, 0.0, 0.0),
                p2: BevPose::new(f.p2.x * c, f.p2.y * c, 0.0, 0.0),
                v1: [f.v1[0] * c, f.v1[1] * c],
                v2: [f.v2[0] * c, f.v2[1] * c],
                dims1: dims(f.dims1.dx() * c, f.dims1.dy() * c),
                dims2: dims(f.dims2.dx() * c, f.dims2.dy() * c),
            };
            prop_assert!((separation(&scaled, b) - c * separation(&f, b)).abs() < 1e-9 * (1.0 + c * 100.0));
            prop_assert!(close(ttc(&f), ttc(&scaled), 1e-9));
        }

        #[test]
        fn summaries_match_series(vx in -8.0f64..8.0, vy in -8.0f64..8.0, cut in 2u64..30) {
            let a = cv_track(1, ObjectClass::Truck, [-10.0, 0.0], [5.0, 0.0], 0..30);
            let b = cv_track(2, ObjectClass::Bicycle, [5.0, 8.0], [vx, vy], 0..30);
            let m = pair_metrics(&a, &b, RadiusBuffer::default(), 0.1).unwrap();
            let min_sep = m.frames.iter().map(|f| f.sep).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(min_sep, m.summary.min_sep);
            let min_ttc = m.frames.iter().map(|f| f.ttc.seconds()).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(min_ttc, m.summary.min_ttc.seconds());
            prop_assert!(m.frames.iter().all(|f| f.ttc.seconds() > 0.0));
            let r = m.restrict(0, cut).unwrap();
            prop_assert!(r.summary.min_sep >= m.summary.min_sep);
            prop_assert!(r.summary.min_ttc.seconds() >= m.summary.min_ttc.seconds());
            prop_assert!(r.summary.min_ttc_long.seconds() >= m.summary.min_ttc_long.seconds());
        }
    }
}
