//! Deterministic synthetic scenario generator.
//!
//! Agents follow parametric paths; ground truth is the noiseless path sampled
//! at every frame, detections add seeded noise and dropout. Angles in the
//! serialized spec carry a `_deg` suffix; everything internal is radians.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap, BevPose, BoxDims};
use crate::ingest::{Detection, FrameStream, GroundTruthTrack, GtPoint, IngestError, ObjectClass};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PathSpec {
    ConstantVelocity {
        start: [f64; 2],
        velocity: [f64; 2],
    },
    ConstantTurn {
        start: [f64; 2],
        speed: f64,
        heading_deg: f64,
        turn_rate_deg_s: f64,
    },
    /// Piecewise-linear in time through `[t, x, y]` knots; clamped outside.
    Waypoints { points: Vec<[f64; 3]> },
    /// Straight line with piecewise-linear speed through `[t, speed]` knots.
    SpeedProfile {
        start: [f64; 2],
        heading_deg: f64,
        knots: Vec<[f64; 2]>,
    },
}

impl PathSpec {
    /// Position and velocity at time `t` (seconds since agent start).
    pub fn state(&self, t: f64) -> ([f64; 2], [f64; 2]) {
        match self {
            PathSpec::ConstantVelocity { start, velocity } => (
                [start[0] + velocity[0] * t, start[1] + velocity[1] * t],
                *velocity,
            ),
            PathSpec::ConstantTurn {
                start,
                speed,
                heading_deg,
                turn_rate_deg_s,
            } => {
                let h0 = heading_deg.to_radians();
                let w = turn_rate_deg_s.to_radians();
                let h = h0 + w * t;
                let vel = [speed * h.cos(), speed * h.sin()];
                if w.abs() < 1e-12 {
                    return ([start[0] + vel[0] * t, start[1] + vel[1] * t], vel);
                }
                let r = speed / w;
                (
                    [
                        start[0] + r * (h.sin() - h0.sin()),
                        start[1] - r * (h.cos() - h0.cos()),
                    ],
                    vel,
                )
            }
            PathSpec::Waypoints { points } => {
                let first = points[0];
                if t <= first[0] || points.len() == 1 {
                    return ([first[1], first[2]], [0.0, 0.0]);
                }
                for w in points.windows(2) {
                    let (a, b) = (w[0], w[1]);
                    if t <= b[0] {
                        let span = b[0] - a[0];
                        let u = (t - a[0]) / span;
                        let vel = [(b[1] - a[1]) / span, (b[2] - a[2]) / span];
                        return ([a[1] + u * (b[1] - a[1]), a[2] + u * (b[2] - a[2])], vel);
                    }
                }
                let last = points[points.len() - 1];
                ([last[1], last[2]], [0.0, 0.0])
            }
            PathSpec::SpeedProfile {
                start,
                heading_deg,
                knots,
            } => {
                let h = heading_deg.to_radians();
                let (dist, speed) = integrate_speed(knots, t);
                (
                    [start[0] + dist * h.cos(), start[1] + dist * h.sin()],
                    [speed * h.cos(), speed * h.sin()],
                )
            }
        }
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::InvalidSpec(m.to_string()));
        match self {
            PathSpec::Waypoints { points } => {
                if points.is_empty() {
                    return bad("waypoint path needs at least one point");
                }
                if points.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                    return bad("waypoint times must be strictly increasing");
                }
            }
            PathSpec::SpeedProfile { knots, .. } => {
                if knots.is_empty() {
                    return bad("speed profile needs at least one knot");
                }
                if knots.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                    return bad("speed knot times must be strictly increasing");
                }
            }
            _ => {}
        }
        Ok(())
    }
}

// Distance travelled and speed at `t` for a piecewise-linear speed profile.
fn integrate_speed(knots: &[[f64; 2]], t: f64) -> (f64, f64) {
    let first = knots[0];
    if t <= first[0] {
        return (first[1] * (t - first[0]).max(0.0), first[1]);
    }
    let mut dist = first[1] * first[0].max(0.0);
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let end = t.min(b[0]);
        let span = b[0] - a[0];
        let v_end = a[1] + (b[1] - a[1]) * (end - a[0]) / span;
        dist += 0.5 * (a[1] + v_end) * (end - a[0]);
        if t <= b[0] {
            return (dist, v_end);
        }
    }
    let last = knots[knots.len() - 1];
    dist += last[1] * (t - last[0]);
    (dist, last[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct NoiseSpec {
    pub pos_std: f64,
    pub yaw_std_deg: f64,
    pub dims_std: f64,
    /// Deterministic `±amplitude` yaw jitter alternating frame by frame.
    pub yaw_alternating_deg: f64,
    /// Probability of a large single-frame heading error.
    pub yaw_outlier_prob: f64,
    pub yaw_outlier_deg: f64,
    pub score_std: f64,
}

fn default_score() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: String,
    pub cls: ObjectClass,
    /// `[dx, dy, dz]` in meters.
    pub dims: [f64; 3],
    pub path: PathSpec,
    #[serde(default)]
    pub start_frame: u64,
    #[serde(default)]
    pub end_frame: Option<u64>,
    /// Fixed yaw overriding the path tangent.
    #[serde(default)]
    pub yaw_deg: Option<f64>,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub dropout_frames: Vec<u64>,
    #[serde(default = "default_score")]
    pub score: f64,
}

fn default_dt() -> f64 {
    crate::ingest::DEFAULT_DT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub dropout_prob: f64,
    pub agents: Vec<AgentSpec>,
}

impl ScenarioSpec {
    pub fn frame_count(&self) -> u64 {
        (self.duration_s / self.dt).round() as u64
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::InvalidSpec(m));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("duration must be > 0, got {}", self.duration_s));
        }
        if self.agents.is_empty() {
            return bad("scenario needs at least one agent".into());
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return bad(format!("dropout_prob {} outside [0, 1]", self.dropout_prob));
        }
        let mut ids = BTreeSet::new();
        for a in &self.agents {
            if !ids.insert(a.id.as_str()) {
                return bad(format!("duplicate agent id {}", a.id));
            }
            BoxDims::new(a.dims[0], a.dims[1], a.dims[2])
                .map_err(|e| ScenarioError::InvalidSpec(format!("agent {}: {e}", a.id)))?;
            a.path.validate()?;
            let n = a.noise.as_ref().unwrap_or(&self.noise);
            for (name, v) in [
                ("pos_std", n.pos_std),
                ("yaw_std_deg", n.yaw_std_deg),
                ("dims_std", n.dims_std),
                ("score_std", n.score_std),
            ] {
                if !(v.is_finite() && v >= 0.0) {
                    return bad(format!("agent {}: {name} must be >= 0", a.id));
                }
            }
            if !(0.0..=1.0).contains(&n.yaw_outlier_prob) {
                return bad(format!("agent {}: yaw_outlier_prob outside [0, 1]", a.id));
            }
            if !(0.0..=1.0).contains(&a.score) {
                return bad(format!("agent {}: score outside [0, 1]", a.id));
            }
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, std).expect("std validated").sample(rng)
}

/// Generates detections and noiseless ground truth. Deterministic in `spec.seed`.
pub fn generate_scenario(
    spec: &ScenarioSpec,
) -> Result<(FrameStream, Vec<GroundTruthTrack>), ScenarioError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let frames = spec.frame_count();
    let mut stream = FrameStream::new(spec.dt)?;
    let mut gts: Vec<GroundTruthTrack> = spec
        .agents
        .iter()
        .map(|a| GroundTruthTrack {
            gt_id: a.id.clone(),
            points: Vec::new(),
        })
        .collect();
    let mut last_heading: Vec<Option<f64>> = vec![None; spec.agents.len()];

    for frame in 0..frames {
        stream.ensure_frame(frame);
        for (ai, agent) in spec.agents.iter().enumerate() {
            if frame < agent.start_frame || agent.end_frame.is_some_and(|e| frame > e) {
                continue;
            }
            let t = (frame - agent.start_frame) as f64 * spec.dt;
            let (pos, vel) = agent.path.state(t);
            let speed = vel[0].hypot(vel[1]);
            let heading = match agent.yaw_deg {
                Some(y) => y.to_radians(),
                None if speed > 1e-9 => vel[1].atan2(vel[0]),
                None => last_heading[ai].unwrap_or_else(|| initial_heading(&agent.path)),
            };
            last_heading[ai] = Some(heading);
            let dims = BoxDims::new(agent.dims[0], agent.dims[1], agent.dims[2])
                .expect("dims validated");
            let gt_pose = BevPose::new(pos[0], pos[1], 0.5 * agent.dims[2], heading);
            gts[ai].points.push(GtPoint {
                frame_id: frame,
                class: agent.cls,
                pose: gt_pose,
                dims,
            });

            // Noise draws happen in a fixed order so seeds stay reproducible.
            let noise = agent.noise.as_ref().unwrap_or(&spec.noise);
            let drop_roll = rng.random::<f64>();
            let nx = normal(&mut rng, noise.pos_std);
            let ny = normal(&mut rng, noise.pos_std);
            let nyaw = normal(&mut rng, noise.yaw_std_deg.to_radians());
            let nd = [
                normal(&mut rng, noise.dims_std),
                normal(&mut rng, noise.dims_std),
                normal(&mut rng, noise.dims_std),
            ];
            let outlier_roll = rng.random::<f64>();
            let outlier_sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let nscore = normal(&mut rng, noise.score_std);

            if drop_roll < spec.dropout_prob || agent.dropout_frames.contains(&frame) {
                continue;
            }
            let alt = if frame % 2 == 0 { 1.0 } else { -1.0 } * noise.yaw_alternating_deg.to_radians();
            let outlier = if outlier_roll < noise.yaw_outlier_prob {
                outlier_sign * noise.yaw_outlier_deg.to_radians()
            } else {
                0.0
            };
            let yaw = wrap(heading + nyaw + alt + outlier);
            let ddims = BoxDims::new(
                (agent.dims[0] + nd[0]).max(0.05),
                (agent.dims[1] + nd[1]).max(0.05),
                (agent.dims[2] + nd[2]).max(0.05),
            )
            .expect("clamped positive");
            stream.push(Detection {
                frame_id: frame,
                timestamp: frame as f64 * spec.dt,
                class: agent.cls,
                score: (agent.score + nscore).clamp(0.01, 1.0),
                pose: BevPose::new(pos[0] + nx, pos[1] + ny, gt_pose.z, yaw),
                dims: ddims,
            });
        }
    }
    Ok((stream, gts))
}

fn initial_heading(path: &PathSpec) -> f64 {
    match path {
        PathSpec::ConstantTurn { heading_deg, .. } | PathSpec::SpeedProfile { heading_deg, .. } => {
            heading_deg.to_radians()
        }
        PathSpec::Waypoints { points } if points.len() >= 2 => {
            let (a, b) = (points[0], points[1]);
            (b[2] - a[2]).atan2(b[1] - a[1])
        }
        _ => 0.0,
    }
}

/// Bundled scenarios used by tests, the acceptance suite and the CLI.
pub mod presets {
    use super::*;

    fn agent(id: &str, cls: ObjectClass, dims: [f64; 3], path: PathSpec) -> AgentSpec {
        AgentSpec {
            id: id.into(),
            cls,
            dims,
            path,
            start_frame: 0,
            end_frame: None,
            yaw_deg: None,
            noise: None,
            dropout_frames: Vec::new(),
            score: 0.9,
        }
    }

    pub const CAR_DIMS: [f64; 3] = [4.5, 1.9, 1.6];
    pub const TRUCK_DIMS: [f64; 3] = [8.0, 2.5, 3.2];
    pub const BICYCLE_DIMS: [f64; 3] = [1.8, 0.6, 1.7];

    /// Heavy vehicle braking while a bicycle cuts across its path from the left.
    ///
    /// Direction-agnostic TTC collapses as the bicycle's lateral motion closes
    /// the gap, while the longitudinal gap along the truck heading stays wide.
    pub fn anchor_lateral_intrusion(seed: u64) -> ScenarioSpec {
        let mut truck = agent(
            "truck",
            ObjectClass::Truck,
            TRUCK_DIMS,
            PathSpec::SpeedProfile {
                start: [-12.0, 0.0],
                heading_deg: 0.0,
                knots: vec![[0.0, 6.0], [1.5, 6.0], [2.5, 4.0], [6.0, 4.0]],
            },
        );
        truck.score = 0.92;
        let bike = agent(
            "bicycle",
            ObjectClass::Bicycle,
            BICYCLE_DIMS,
            PathSpec::ConstantVelocity {
                start: [-1.0, 8.0],
                velocity: [4.5, -3.0],
            },
        );
        ScenarioSpec {
            dt: 0.1,
            duration_s: 6.0,
            seed,
            noise: NoiseSpec {
                pos_std: 0.03,
                yaw_std_deg: 1.0,
                dims_std: 0.03,
                score_std: 0.02,
                ..NoiseSpec::default()
            },
            dropout_prob: 0.0,
            agents: vec![truck, bike],
        }
    }

    /// Moving cars with heavy yaw jitter, occasional heading outliers and
    /// box-center noise. Used for the refinement and stabilization regressions.
    pub fn jitter_suite(seed: u64) -> ScenarioSpec {
        let noise = NoiseSpec {
            pos_std: 0.08,
            yaw_std_deg: 8.0,
            dims_std: 0.1,
            yaw_outlier_prob: 0.06,
            yaw_outlier_deg: 60.0,
            score_std: 0.03,
            ..NoiseSpec::default()
        };
        let agents = vec![
            agent(
                "a",
                ObjectClass::Car,
                CAR_DIMS,
                PathSpec::ConstantVelocity {
                    start: [-40.0, -6.0],
                    velocity: [8.0, 0.0],
                },
            ),
            agent(
                "b",
                ObjectClass::Car,
                CAR_DIMS,
                PathSpec::ConstantTurn {
                    start: [0.0, -40.0],
                    speed: 7.0,
                    heading_deg: 90.0,
                    turn_rate_deg_s: 6.0,
                },
            ),
            agent(
                "c",
                ObjectClass::Truck,
                TRUCK_DIMS,
                PathSpec::ConstantVelocity {
                    start: [40.0, 8.0],
                    velocity: [-6.0, 0.5],
                },
            ),
            agent(
                "d",
                ObjectClass::Car,
                CAR_DIMS,
                PathSpec::ConstantTurn {
                    start: [20.0, 30.0],
                    speed: 9.0,
                    heading_deg: -120.0,
                    turn_rate_deg_s: -4.0,
                },
            ),
        ];
        ScenarioSpec {
            dt: 0.1,
            duration_s: 8.0,
            seed,
            noise,
            dropout_prob: 0.0,
            agents,
        }
    }

    /// Two same-class agents whose paths cross at right angles.
    pub fn crossing_pair(seed: u64) -> ScenarioSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
        let sa = rng.random_range(5.0..9.0);
        let sb = rng.random_range(5.0..9.0);
        let ta = rng.random_range(2.0..3.0);
        let tb = ta + rng.random_range(-0.6..0.6);
        let cross = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        let a = agent(
            "a",
            ObjectClass::Car,
            CAR_DIMS,
            PathSpec::ConstantVelocity {
                start: [cross[0] - sa * ta, cross[1]],
                velocity: [sa, 0.0],
            },
        );
        let b = agent(
            "b",
            ObjectClass::Car,
            CAR_DIMS,
            PathSpec::ConstantVelocity {
                start: [cross[0], cross[1] - sb * tb],
                velocity: [0.0, sb],
            },
        );
        ScenarioSpec {
            dt: 0.1,
            duration_s: 5.0,
            seed,
            noise: NoiseSpec {
                pos_std: 0.1,
                yaw_std_deg: 3.0,
                dims_std: 0.05,
                ..NoiseSpec::default()
            },
            dropout_prob: 0.03,
            agents: vec![a, b],
        }
    }
}
