//! Unsafe-interval computation for vertically aligned cylinders moving along
//! straight segments in 3D.
//!
//! A pair of cylinders overlaps when their planar (xy) circles overlap and
//! their vertical extents overlap at the same instant. Both conditions are
//! strict: touching bodies are safe. Each condition is solved analytically on
//! the common time window of the two motions and the results are intersected.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::TimedPlan;

pub type Vec3 = Vector3<f64>;

/// Discriminants below this are treated as tangency (no overlap).
pub const TANGENCY_EPS: f64 = 1e-12;

/// Unsafe intervals shorter than this (seconds) are grazing contact left
/// over from rounding and are reported as safe.
pub const CONTACT_TIME_EPS: f64 = 1e-9;

/// Relative velocities below this are treated as exactly zero.
const STATIONARY_EPS: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid motion: {0}")]
    InvalidMotion(String),
    #[error("invalid body: {0}")]
    InvalidBody(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A time window. Collision intervals are open `(lo, hi)`; constraint and
/// safe intervals are half-open `[lo, hi)`. `hi` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn unbounded_from(lo: f64) -> Self {
        Interval {
            lo,
            hi: f64::INFINITY,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.lo < self.hi)
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    /// Membership in the open interval.
    pub fn contains_open(&self, t: f64) -> bool {
        self.lo < t && t < self.hi
    }

    /// Membership in the half-open interval `[lo, hi)`.
    pub fn contains(&self, t: f64) -> bool {
        self.lo <= t && t < self.hi
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let iv = Interval::new(self.lo.max(other.lo), self.hi.min(other.hi));
        (!iv.is_empty()).then_some(iv)
    }

    pub fn shifted(&self, dt: f64) -> Interval {
        Interval::new(self.lo + dt, self.hi + dt)
    }
}

/// Straight-line motion from `p0` at `t0` to `p1` at `t1`.
///
/// A wait has `p0 == p1`; only waits may have an infinite `t1` (an agent
/// parked at its goal).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearMotion {
    pub p0: Vec3,
    pub p1: Vec3,
    pub t0: f64,
    pub t1: f64,
}

impl LinearMotion {
    pub fn new(p0: Vec3, p1: Vec3, t0: f64, t1: f64) -> Self {
        LinearMotion { p0, p1, t0, t1 }
    }

    pub fn wait(p: Vec3, t0: f64, t1: f64) -> Self {
        LinearMotion {
            p0: p,
            p1: p,
            t0,
            t1,
        }
    }

    /// Stationary at `p` from `t0` forever.
    pub fn parked(p: Vec3, t0: f64) -> Self {
        LinearMotion::wait(p, t0, f64::INFINITY)
    }

    pub fn is_wait(&self) -> bool {
        self.p0 == self.p1
    }

    pub fn duration(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn window(&self) -> Interval {
        Interval::new(self.t0, self.t1)
    }

    pub fn velocity(&self) -> Vec3 {
        if self.is_wait() {
            Vec3::zeros()
        } else {
            (self.p1 - self.p0) / (self.t1 - self.t0)
        }
    }

    /// Position at `t`, clamped to the segment endpoints outside `[t0, t1]`.
    pub fn position_at(&self, t: f64) -> Vec3 {
        if self.is_wait() || t <= self.t0 {
            return self.p0;
        }
        if t >= self.t1 {
            return self.p1;
        }
        let s = (t - self.t0) / (self.t1 - self.t0);
        self.p0 + (self.p1 - self.p0) * s
    }

    /// The same motion started `dt` later.
    pub fn shifted(&self, dt: f64) -> LinearMotion {
        LinearMotion {
            t0: self.t0 + dt,
            t1: self.t1 + dt,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = self.p0.iter().chain(self.p1.iter()).all(|c| c.is_finite());
        if !finite || !self.t0.is_finite() || self.t1.is_nan() {
            return Err(GeometryError::InvalidMotion(format!(
                "non-finite value in {self:?}"
            )));
        }
        if !(self.t0 < self.t1) {
            return Err(GeometryError::InvalidMotion(format!(
                "degenerate time window [{}, {}]",
                self.t0, self.t1
            )));
        }
        if self.t1.is_infinite() && !self.is_wait() {
            return Err(GeometryError::InvalidMotion(
                "unbounded motion must be a wait".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderBody {
    pub radius: f64,
    pub height: f64,
}

impl Default for CylinderBody {
    fn default() -> Self {
        CylinderBody {
            radius: 0.25,
            height: 1.0,
        }
    }
}

impl CylinderBody {
    pub fn new(radius: f64, height: f64) -> Result<Self, GeometryError> {
        let body = CylinderBody { radius, height };
        body.validate()?;
        Ok(body)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(GeometryError::InvalidBody(format!(
                "radius {} must be > 0",
                self.radius
            )));
        }
        if !(self.height > 0.0 && self.height.is_finite()) {
            return Err(GeometryError::InvalidBody(format!(
                "height {} must be > 0",
                self.height
            )));
        }
        Ok(())
    }

    /// Signed clearance between two bodies centered at `a` and `b`; negative
    /// means they overlap.
    pub fn clearance(&self, a: &Vec3, other: &CylinderBody, b: &Vec3) -> f64 {
        let planar = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
        let vertical = (a.z - b.z).abs();
        (planar - (self.radius + other.radius)).max(vertical - 0.5 * (self.height + other.height))
    }
}

/// The earliest overlap between two agents' actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conflict {
    pub agent_i: usize,
    pub action_i: LinearMotion,
    pub agent_j: usize,
    pub action_j: LinearMotion,
    pub unsafe_interval: Interval,
}

/// Common time window of two motions, if it has positive length.
pub fn temporal_overlap(a: &LinearMotion, b: &LinearMotion) -> Option<Interval> {
    a.window().intersect(&b.window())
}

fn check_pair(a: &LinearMotion, b: &LinearMotion) -> Result<(), GeometryError> {
    a.validate()?;
    b.validate()
}

fn check_positive(name: &str, v: f64) -> Result<(), GeometryError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(GeometryError::InvalidParameter(format!(
            "{name} = {v} must be > 0"
        )))
    }
}

/// Relative times in `[0, span]` where `|d0 + dv*t| < r`, with `d0`, `dv`
/// planar vectors.
fn planar_window(d0: [f64; 2], dv: [f64; 2], r: f64, span: f64) -> Option<(f64, f64)> {
    let a = dv[0] * dv[0] + dv[1] * dv[1];
    let b = 2.0 * (d0[0] * dv[0] + d0[1] * dv[1]);
    let c = d0[0] * d0[0] + d0[1] * d0[1] - r * r;
    if a < STATIONARY_EPS * STATIONARY_EPS {
        // Contact within rounding noise counts as touching.
        return (c < -TANGENCY_EPS).then_some((0.0, span));
    }
    let disc = b * b - 4.0 * a * c;
    if disc < TANGENCY_EPS {
        return None;
    }
    // Citardauq form: the root with no cancellation first, the other from
    // the product of roots.
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let (r1, r2) = (q / a, c / q);
    clip(r1.min(r2), r1.max(r2), span)
}

/// Relative times in `[0, span]` where `|dz0 + dvz*t| < h`.
fn vertical_window(dz0: f64, dvz: f64, h: f64, span: f64) -> Option<(f64, f64)> {
    if dvz.abs() < STATIONARY_EPS {
        return (dz0.abs() < h - TANGENCY_EPS).then_some((0.0, span));
    }
    let r1 = (-h - dz0) / dvz;
    let r2 = (h - dz0) / dvz;
    clip(r1.min(r2), r1.max(r2), span)
}

fn clip(lo: f64, hi: f64, span: f64) -> Option<(f64, f64)> {
    let lo = lo.max(0.0);
    let hi = hi.min(span);
    (lo < hi).then_some((lo, hi))
}

/// Interval during which the planar circles of radius sum `r_sum` overlap.
pub fn xy_unsafe_interval(
    a: &LinearMotion,
    b: &LinearMotion,
    r_sum: f64,
) -> Result<Option<Interval>, GeometryError> {
    check_pair(a, b)?;
    check_positive("r_sum", r_sum)?;
    let Some(window) = temporal_overlap(a, b) else {
        return Ok(None);
    };
    let d0 = a.position_at(window.lo) - b.position_at(window.lo);
    let dv = a.velocity() - b.velocity();
    Ok(
        planar_window([d0.x, d0.y], [dv.x, dv.y], r_sum, window.length())
            .map(|(lo, hi)| Interval::new(window.lo + lo, window.lo + hi)),
    )
}

/// Interval during which the vertical centers are closer than `h_sum_half`.
pub fn z_unsafe_interval(
    a: &LinearMotion,
    b: &LinearMotion,
    h_sum_half: f64,
) -> Result<Option<Interval>, GeometryError> {
    check_pair(a, b)?;
    check_positive("h_sum_half", h_sum_half)?;
    let Some(window) = temporal_overlap(a, b) else {
        return Ok(None);
    };
    let dz0 = a.position_at(window.lo).z - b.position_at(window.lo).z;
    let dvz = a.velocity().z - b.velocity().z;
    Ok(vertical_window(dz0, dvz, h_sum_half, window.length())
        .map(|(lo, hi)| Interval::new(window.lo + lo, window.lo + hi)))
}

pub fn cylinder_unsafe_interval(
    a: &LinearMotion,
    b: &LinearMotion,
    body_a: &CylinderBody,
    body_b: &CylinderBody,
) -> Result<Option<Interval>, GeometryError> {
    body_a.validate()?;
    body_b.validate()?;
    let Some(xy) = xy_unsafe_interval(a, b, body_a.radius + body_b.radius)? else {
        return Ok(None);
    };
    let Some(z) = z_unsafe_interval(a, b, 0.5 * (body_a.height + body_b.height))? else {
        return Ok(None);
    };
    Ok(xy
        .intersect(&z)
        .filter(|iv| iv.length() >= CONTACT_TIME_EPS))
}

/// Earliest conflict over all agent pairs, with plans extended by an
/// infinite wait at the goal.
///
/// Ties on the interval start are broken by agent ids, then action start
/// times. `bodies[k]` is the body of `plans[k]`.
pub fn first_conflict(plans: &[TimedPlan], bodies: &[CylinderBody]) -> Option<Conflict> {
    assert_eq!(plans.len(), bodies.len(), "one body per plan");
    let motions: Vec<Vec<LinearMotion>> = plans.iter().map(TimedPlan::motions).collect();
    let mut best: Option<(ConflictKey, Conflict)> = None;
    for i in 0..plans.len() {
        for j in i + 1..plans.len() {
            let (a, b) = if plans[i].agent <= plans[j].agent {
                (i, j)
            } else {
                (j, i)
            };
            let Some(conflict) = pair_first_conflict(
                plans[a].agent,
                &motions[a],
                &bodies[a],
                plans[b].agent,
                &motions[b],
                &bodies[b],
            ) else {
                continue;
            };
            let key = ConflictKey::of(&conflict);
            if best.as_ref().is_none_or(|(k, _)| key < *k) {
                best = Some((key, conflict));
            }
        }
    }
    best.map(|(_, c)| c)
}

#[derive(Debug, PartialEq, PartialOrd)]
struct ConflictKey(f64, usize, usize, f64, f64);

impl ConflictKey {
    fn of(c: &Conflict) -> Self {
        ConflictKey(
            c.unsafe_interval.lo,
            c.agent_i,
            c.agent_j,
            c.action_i.t0,
            c.action_j.t0,
        )
    }
}

/// Earliest conflict between two agents' motion sequences (time-ordered).
pub fn pair_first_conflict(
    agent_i: usize,
    motions_i: &[LinearMotion],
    body_i: &CylinderBody,
    agent_j: usize,
    motions_j: &[LinearMotion],
    body_j: &CylinderBody,
) -> Option<Conflict> {
    let mut best: Option<Conflict> = None;
    let mut start_j = 0;
    for mi in motions_i {
        // motions_j is sorted, so skip the prefix that ends before mi starts.
        while start_j < motions_j.len() && motions_j[start_j].t1 <= mi.t0 {
            start_j += 1;
        }
        if let Some(b) = &best {
            if mi.t0 >= b.unsafe_interval.lo {
                break;
            }
        }
        for mj in &motions_j[start_j..] {
            if mj.t0 >= mi.t1 {
                break;
            }
            let Ok(Some(iv)) = cylinder_unsafe_interval(mi, mj, body_i, body_j) else {
                continue;
            };
            let better = match &best {
                None => true,
                Some(b) => {
                    (iv.lo, mi.t0, mj.t0) < (b.unsafe_interval.lo, b.action_i.t0, b.action_j.t0)
                }
            };
            if better {
                best = Some(Conflict {
                    agent_i,
                    action_i: *mi,
                    agent_j,
                    action_j: *mj,
                    unsafe_interval: iv,
                });
            }
        }
    }
    best
}
