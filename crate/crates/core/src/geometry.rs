//! BEV geometry, angle arithmetic and box primitives.
//!
//! Angles are radians, measured counterclockwise from the +x axis of the
//! fixed BEV frame. Stored angles are always wrapped into (-π, π].

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate window: all weights are zero")]
    DegenerateWindow,
    #[error("degenerate circular mean: resultant vector is zero")]
    DegenerateMean,
    #[error("length mismatch: {angles} angles vs {weights} weights")]
    LengthMismatch { angles: usize, weights: usize },
}

/// Wraps an angle into (-π, π]. Returns an error for non-finite input.
pub fn wrap_angle(theta: f64) -> Result<f64, GeometryError> {
    if !theta.is_finite() {
        return Err(GeometryError::InvalidInput(format!(
            "angle must be finite, got {theta}"
        )));
    }
    Ok(wrap(theta))
}

/// Infallible wrap for values already known to be finite.
///
/// Non-finite input propagates as NaN.
#[inline]
pub fn wrap(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let mut r = theta.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    // rem_euclid can land on exactly -π after the shift; the interval is open there.
    if r <= -PI {
        r += TAU;
    }
    r
}

/// Wrapped angular difference `wrap(a - b)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct AngleDelta(f64);

impl AngleDelta {
    pub fn between(a: f64, b: f64) -> Self {
        AngleDelta(wrap(a - b))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn abs(self) -> f64 {
        self.0.abs()
    }
}

/// Weighted circular mean `atan2(Σ w sin ψ, Σ w cos ψ)`.
pub fn circular_mean(angles: &[f64], weights: &[f64]) -> Result<f64, GeometryError> {
    if angles.len() != weights.len() {
        return Err(GeometryError::LengthMismatch {
            angles: angles.len(),
            weights: weights.len(),
        });
    }
    let mut sum_w = 0.0;
    let mut sum_sin = 0.0;
    let mut sum_cos = 0.0;
    for (&a, &w) in angles.iter().zip(weights) {
        if !a.is_finite() || !w.is_finite() || w < 0.0 {
            return Err(GeometryError::InvalidInput(format!(
                "angle {a} / weight {w} must be finite with non-negative weight"
            )));
        }
        sum_w += w;
        sum_sin += w * a.sin();
        sum_cos += w * a.cos();
    }
    if sum_w <= 0.0 {
        return Err(GeometryError::DegenerateWindow);
    }
    if sum_sin.hypot(sum_cos) <= 1e-12 * sum_w {
        return Err(GeometryError::DegenerateMean);
    }
    Ok(wrap(sum_sin.atan2(sum_cos)))
}

/// Unit-weight circular mean.
pub fn circular_mean_unweighted(angles: &[f64]) -> Result<f64, GeometryError> {
    let weights = vec![1.0; angles.len()];
    circular_mean(angles, &weights)
}

/// A box center and heading in the BEV frame. `z` is carried but unused by BEV math.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr")]
pub struct BevPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    yaw: f64,
}

impl BevPose {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        BevPose {
            x,
            y,
            z,
            yaw: wrap(yaw),
        }
    }

    /// Validating constructor: every component must be finite.
    pub fn try_new(x: f64, y: f64, z: f64, yaw: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && z.is_finite() && yaw.is_finite()) {
            return Err(GeometryError::InvalidInput(format!(
                "pose components must be finite: ({x}, {y}, {z}, {yaw})"
            )));
        }
        Ok(Self::new(x, y, z, yaw))
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn set_yaw(&mut self, yaw: f64) {
        self.yaw = wrap(yaw);
    }

    pub fn with_xy(&self, x: f64, y: f64) -> Self {
        BevPose { x, y, ..*self }
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.yaw.is_finite()
    }
}

/// Box extents. All components strictly positive and finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DimsRepr")]
pub struct BoxDims {
    dx: f64,
    dy: f64,
    dz: f64,
}

impl BoxDims {
    pub fn new(dx: f64, dy: f64, dz: f64) -> Result<Self, GeometryError> {
        for (name, v) in [("dx", dx), ("dy", dy), ("dz", dz)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(GeometryError::InvalidInput(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(BoxDims { dx, dy, dz })
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    /// Half of the BEV footprint diagonal.
    pub fn half_diagonal(&self) -> f64 {
        0.5 * self.dx.hypot(self.dy)
    }
}

#[derive(Deserialize)]
struct PoseRepr {
    x: f64,
    y: f64,
    #[serde(default)]
    z: f64,
    yaw: f64,
}

impl TryFrom<PoseRepr> for BevPose {
    type Error = GeometryError;

    fn try_from(r: PoseRepr) -> Result<Self, Self::Error> {
        BevPose::try_new(r.x, r.y, r.z, r.yaw)
    }
}

#[derive(Deserialize)]
struct DimsRepr {
    dx: f64,
    dy: f64,
    dz: f64,
}

impl TryFrom<DimsRepr> for BoxDims {
    type Error = GeometryError;

    fn try_from(r: DimsRepr) -> Result<Self, Self::Error> {
        BoxDims::new(r.dx, r.dy, r.dz)
    }
}

/// Euclidean distance between BEV centers.
pub fn bev_center_distance(a: &BevPose, b: &BevPose) -> Result<f64, GeometryError> {
    let d = (b.x - a.x).hypot(b.y - a.y);
    if !d.is_finite() {
        return Err(GeometryError::InvalidInput(
            "pose coordinates must be finite".into(),
        ));
    }
    Ok(d)
}

/// Footprint corners counterclockwise, `dx` along the heading.
pub fn bev_corners(pose: &BevPose, dims: &BoxDims) -> [[f64; 2]; 4] {
    let (s, c) = pose.yaw().sin_cos();
    let hx = 0.5 * dims.dx();
    let hy = 0.5 * dims.dy();
    let local = [[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]];
    local.map(|[u, v]| [pose.x + c * u - s * v, pose.y + s * u + c * v])
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc.abs()
}

// Sutherland-Hodgman; both polygons convex and counterclockwise.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    let t = sp / (sp - sc);
                    output.push([prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])]);
                }
                output.push(cur);
            } else if sp >= 0.0 {
                let t = sp / (sp - sc);
                output.push([prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])]);
            }
        }
    }
    output
}

/// Intersection-over-union of two rotated BEV footprints.
pub fn bev_iou(pa: &BevPose, da: &BoxDims, pb: &BevPose, db: &BoxDims) -> f64 {
    let a = bev_corners(pa, da);
    let b = bev_corners(pb, db);
    let inter = polygon_area(&clip_convex(&a, &b));
    let union = da.dx() * da.dy() + db.dx() * db.dy() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}
