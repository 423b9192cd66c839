//! Dynamics-aware stabilization: position smoothing blended with a
//! constant-velocity prediction, heading blending toward the path tangent with
//! a bounded turn rate, and robust per-track dimensions.

use serde::{Deserialize, Serialize};

use crate::geometry::{circular_mean_unweighted, wrap, AngleDelta, BevPose, BoxDims};
use crate::ingest::ObjectClass;
use crate::refine::symmetric_half;
use crate::tracker::{Provenance, Track, TrackPoint};

/// Steps shorter than this have no usable tangent.
const STATIONARY_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilizerConfig {
    pub window: usize,
    pub alpha: f64,
    pub alpha_low: f64,
    pub alpha_high: f64,
    pub s_min: f64,
    /// Radians.
    pub eps_psi: f64,
    /// Radians per frame.
    pub max_step: f64,
    pub backprop_heading: bool,
    pub dt: f64,
}

impl Default for StabilizerConfig {
    fn default() -> Self {
        StabilizerConfig {
            window: 9,
            alpha: 0.3,
            alpha_low: 0.35,
            alpha_high: 0.08,
            s_min: 0.75,
            eps_psi: 20f64.to_radians(),
            max_step: 2.5f64.to_radians(),
            backprop_heading: true,
            dt: 0.1,
        }
    }
}

impl StabilizerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(format!("window must be odd and >= 3, got {}", self.window));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err("alpha must be in [0, 1]".into());
        }
        if !(0.0 <= self.alpha_high && self.alpha_high <= self.alpha_low && self.alpha_low <= 1.0) {
            return Err("need 0 <= alpha_high <= alpha_low <= 1".into());
        }
        if !(self.max_step.is_finite() && self.max_step > 0.0) {
            return Err("max_step must be > 0".into());
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err("dt must be > 0".into());
        }
        if !(self.s_min.is_finite() && self.s_min >= 0.0) || !(self.eps_psi >= 0.0) {
            return Err("s_min and eps_psi must be >= 0".into());
        }
        Ok(())
    }
}

fn gaps(frames: &[u64]) -> Vec<f64> {
    frames
        .windows(2)
        .map(|w| (w[1].saturating_sub(w[0])).max(1) as f64)
        .collect()
}

/// Returns `(p̄, p̃)`: the truncated centered average and its blend with a
/// constant-velocity prediction.
pub fn smooth_position(
    frames: &[u64],
    positions: &[[f64; 2]],
    cfg: &StabilizerConfig,
) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let n = positions.len();
    let half = cfg.window / 2;
    let mut avg = Vec::with_capacity(n);
    for i in 0..n {
        let h = symmetric_half(i, n, half);
        let w = &positions[i - h..=i + h];
        let k = w.len() as f64;
        avg.push([
            w.iter().map(|p| p[0]).sum::<f64>() / k,
            w.iter().map(|p| p[1]).sum::<f64>() / k,
        ]);
    }
    let g = gaps(frames);
    let mut out: Vec<[f64; 2]> = Vec::with_capacity(n);
    for i in 0..n {
        if i < 2 {
            out.push(avg[i]);
            continue;
        }
        // Velocity per frame over the previous step, carried across the current gap.
        let (a, b) = (out[i - 2], out[i - 1]);
        let scale = g[i - 1] / g[i - 2];
        let pred = [b[0] + (b[0] - a[0]) * scale, b[1] + (b[1] - a[1]) * scale];
        out.push([
            (1.0 - cfg.alpha) * avg[i][0] + cfg.alpha * pred[0],
            (1.0 - cfg.alpha) * avg[i][1] + cfg.alpha * pred[1],
        ]);
    }
    (avg, out)
}

/// Reliability in `[0, 1]` from speed.
pub fn reliability(speed: f64, cfg: &StabilizerConfig) -> f64 {
    ((speed - cfg.s_min) / (cfg.s_min + 0.75)).clamp(0.0, 1.0)
}

pub fn raw_blend_alpha(r: f64, cfg: &StabilizerConfig) -> f64 {
    cfg.alpha_low + (cfg.alpha_high - cfg.alpha_low) * r
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionFrame {
    /// Path-tangent heading; `None` while no step has moved yet.
    pub psi_motion: Option<f64>,
    pub speed: f64,
    pub r: f64,
    pub alpha: f64,
}

/// Tangent heading, speed and blend weight per frame. Frame 0 borrows the
/// first step; stationary steps reuse the last known tangent.
pub fn motion_heading(frames: &[u64], positions: &[[f64; 2]], cfg: &StabilizerConfig) -> Vec<MotionFrame> {
    let n = positions.len();
    if n == 0 {
        return Vec::new();
    }
    let g = gaps(frames);
    let mut steps: Vec<(Option<f64>, f64)> = Vec::with_capacity(n);
    for i in 1..n {
        let dx = positions[i][0] - positions[i - 1][0];
        let dy = positions[i][1] - positions[i - 1][1];
        let len = dx.hypot(dy);
        let heading = (len >= STATIONARY_STEP).then(|| dy.atan2(dx));
        steps.push((heading, len / (g[i - 1] * cfg.dt)));
    }
    let first = steps.first().copied().unwrap_or((None, 0.0));
    let mut out = Vec::with_capacity(n);
    let mut last: Option<f64> = None;
    for i in 0..n {
        let (h, speed) = if i == 0 { first } else { steps[i - 1] };
        if h.is_some() {
            last = h;
        }
        let r = reliability(speed, cfg);
        out.push(MotionFrame {
            psi_motion: h.or(last),
            speed,
            r,
            alpha: raw_blend_alpha(r, cfg),
        });
    }
    out
}

/// Returns `(ψ_blend, β)`.
pub fn blend_heading(psi_bar: f64, psi_motion: f64, alpha_t: f64, cfg: &StabilizerConfig) -> (f64, f64) {
    let d = AngleDelta::between(psi_motion, psi_bar).value();
    let beta = if d.abs() <= cfg.eps_psi { 1.0 - alpha_t } else { 1.0 };
    (wrap(psi_bar + beta * d), beta)
}

pub fn clamp_heading_step(prev: f64, proposed: f64, frame_gap: u64, cfg: &StabilizerConfig) -> f64 {
    let limit = cfg.max_step * frame_gap.max(1) as f64;
    let mut inc = AngleDelta::between(proposed, prev).value().clamp(-limit, limit);
    // Shrink by ulps until the wrapped result honors the limit exactly.
    loop {
        let out = wrap(prev + inc);
        if AngleDelta::between(out, prev).abs() <= limit || inc == 0.0 {
            return out;
        }
        inc = if inc > 0.0 { inc.next_down() } else { inc.next_up() };
    }
}

pub fn backpropagate_heading(headings: &mut [f64], r: &[f64]) {
    if let Some(k) = r.iter().position(|&v| v > 0.0) {
        let h = headings[k];
        headings[..k].iter_mut().for_each(|x| *x = h);
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Componentwise median of the observed dimensions.
pub fn robust_dims(dims: &[BoxDims]) -> Option<BoxDims> {
    if dims.is_empty() {
        return None;
    }
    let mut xs: Vec<f64> = dims.iter().map(BoxDims::dx).collect();
    let mut ys: Vec<f64> = dims.iter().map(BoxDims::dy).collect();
    let mut zs: Vec<f64> = dims.iter().map(BoxDims::dz).collect();
    BoxDims::new(median(&mut xs), median(&mut ys), median(&mut zs)).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizedFrame {
    pub frame_id: u64,
    pub position: [f64; 2],
    pub z: f64,
    pub heading: f64,
    pub psi_motion: f64,
    pub speed: f64,
    pub r: f64,
    pub beta_eff: f64,
    pub score: f64,
    pub prediction: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizedTrack {
    pub track_id: u64,
    pub class: ObjectClass,
    pub frames: Vec<StabilizedFrame>,
    pub dims: BoxDims,
}

impl StabilizedTrack {
    pub fn to_track(&self) -> Track {
        Track {
            track_id: self.track_id,
            class: self.class,
            points: self
                .frames
                .iter()
                .map(|f| TrackPoint {
                    frame_id: f.frame_id,
                    pose: BevPose::new(f.position[0], f.position[1], f.z, f.heading),
                    dims: self.dims,
                    score: f.score,
                    provenance: Provenance::Smoothed,
                    prediction: f.prediction,
                })
                .collect(),
        }
    }
}

/// Full stabilization pipeline for one track. Returns `None` for an empty track.
pub fn stabilize(track: &Track, cfg: &StabilizerConfig) -> Option<StabilizedTrack> {
    let pts = &track.points;
    let n = pts.len();
    let dims = robust_dims(&pts.iter().map(|p| p.dims).collect::<Vec<_>>())?;
    let frames: Vec<u64> = pts.iter().map(|p| p.frame_id).collect();
    let raw: Vec<[f64; 2]> = pts.iter().map(|p| p.pose.xy()).collect();
    let raw_yaw: Vec<f64> = pts.iter().map(|p| p.pose.yaw()).collect();
    let (_, pos) = smooth_position(&frames, &raw, cfg);
    let motion = motion_heading(&frames, &pos, cfg);

    let half = cfg.window / 2;
    let mut heading = Vec::with_capacity(n);
    let mut psi_motion = Vec::with_capacity(n);
    let mut beta_eff = Vec::with_capacity(n);
    for i in 0..n {
        let h = symmetric_half(i, n, half);
        let prev = if i == 0 { raw_yaw[0] } else { heading[i - 1] };
        let psi_bar = circular_mean_unweighted(&raw_yaw[i - h..=i + h]).unwrap_or(prev);
        let m = motion[i].psi_motion.unwrap_or(psi_bar);
        let (blend, beta) = blend_heading(psi_bar, m, motion[i].alpha, cfg);
        let psi = if i == 0 {
            blend
        } else {
            clamp_heading_step(prev, blend, frames[i] - frames[i - 1], cfg)
        };
        heading.push(psi);
        psi_motion.push(m);
        beta_eff.push(beta);
    }
    if cfg.backprop_heading {
        let r: Vec<f64> = motion.iter().map(|m| m.r).collect();
        backpropagate_heading(&mut heading, &r);
    }

    Some(StabilizedTrack {
        track_id: track.track_id,
        class: track.class,
        dims,
        frames: (0..n)
            .map(|i| StabilizedFrame {
                frame_id: frames[i],
                position: pos[i],
                z: pts[i].pose.z,
                heading: heading[i],
                psi_motion: psi_motion[i],
                speed: motion[i].speed,
                r: motion[i].r,
                beta_eff: beta_eff[i],
                score: pts[i].score,
                prediction: pts[i].prediction,
            })
            .collect(),
    })
}

pub fn stabilize_all(tracks: &[Track], cfg: &StabilizerConfig) -> Vec<StabilizedTrack> {
    tracks.iter().filter_map(|t| stabilize(t, cfg)).collect()
}

/// One line of the stabilized JSONL: a per-frame row or a per-track dims summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StabilizedRecord {
    Frame {
        format_version: u32,
        track_id: u64,
        cls: ObjectClass,
        frame: u64,
        x: f64,
        y: f64,
        z: f64,
        yaw: f64,
        psi_motion: f64,
        speed: f64,
        r: f64,
        beta_eff: f64,
        score: f64,
    },
    Dims {
        format_version: u32,
        track_id: u64,
        cls: ObjectClass,
        dx: f64,
        dy: f64,
        dz: f64,
    },
}

pub fn stabilized_records(tracks: &[StabilizedTrack]) -> Vec<StabilizedRecord> {
    let v = crate::format::current_version();
    let mut out = Vec::new();
    for t in tracks {
        out.push(StabilizedRecord::Dims {
            format_version: v,
            track_id: t.track_id,
            cls: t.class,
            dx: t.dims.dx(),
            dy: t.dims.dy(),
            dz: t.dims.dz(),
        });
        out.extend(t.frames.iter().map(|f| StabilizedRecord::Frame {
            format_version: v,
            track_id: t.track_id,
            cls: t.class,
            frame: f.frame_id,
            x: f.position[0],
            y: f.position[1],
            z: f.z,
            yaw: f.heading,
            psi_motion: f.psi_motion,
            speed: f.speed,
            r: f.r,
            beta_eff: f.beta_eff,
            score: f.score,
        }));
    }
    out
}
