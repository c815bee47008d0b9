//! Timed plans: the contract between the planner and the executors, their
//! file format, and an independent validator.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{pair_first_conflict, CylinderBody, LinearMotion, Vec3};
use crate::world::{GridWorld, Instance};

pub const DEFAULT_SAMPLING_DT: f64 = 1e-3;

/// Relative tolerance on segment speed checks.
const SPEED_RTOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("agent {agent}, waypoint {waypoint}: {reason}")]
    Malformed {
        agent: usize,
        waypoint: usize,
        reason: String,
    },
    #[error("{0}")]
    Mismatch(String),
}

impl From<serde_json::Error> for PlanError {
    fn from(e: serde_json::Error) -> Self {
        PlanError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

/// Position `(x, y, z)` reached at time `t`. Serialized as `[x, y, z, t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Waypoint {
    pub pos: Vec3,
    pub t: f64,
}

impl Waypoint {
    pub fn new(pos: Vec3, t: f64) -> Self {
        Waypoint { pos, t }
    }
}

impl From<[f64; 4]> for Waypoint {
    fn from(v: [f64; 4]) -> Self {
        Waypoint {
            pos: Vec3::new(v[0], v[1], v[2]),
            t: v[3],
        }
    }
}

impl From<Waypoint> for [f64; 4] {
    fn from(w: Waypoint) -> Self {
        [w.pos.x, w.pos.y, w.pos.z, w.t]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedPlan {
    pub agent: usize,
    pub waypoints: Vec<Waypoint>,
}

impl TimedPlan {
    pub fn new(agent: usize, waypoints: Vec<Waypoint>) -> Result<Self, PlanError> {
        let plan = TimedPlan { agent, waypoints };
        plan.check()?;
        Ok(plan)
    }

    /// Structural well-formedness: nonempty, finite, starts at `t = 0`, strictly
    /// increasing timestamps.
    pub fn check(&self) -> Result<(), PlanError> {
        let malformed = |waypoint: usize, reason: String| PlanError::Malformed {
            agent: self.agent,
            waypoint,
            reason,
        };
        let Some(first) = self.waypoints.first() else {
            return Err(malformed(0, "plan has no waypoints".into()));
        };
        if first.t != 0.0 {
            return Err(malformed(
                0,
                format!("first waypoint at t = {} instead of 0", first.t),
            ));
        }
        for (k, w) in self.waypoints.iter().enumerate() {
            if !w.t.is_finite() || w.pos.iter().any(|c| !c.is_finite()) {
                return Err(malformed(k, "non-finite value".into()));
            }
            if k > 0 && !(w.t > self.waypoints[k - 1].t) {
                return Err(malformed(
                    k,
                    format!(
                        "timestamp {} does not increase past {}",
                        w.t,
                        self.waypoints[k - 1].t
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn start(&self) -> Vec3 {
        self.waypoints[0].pos
    }

    pub fn goal(&self) -> Vec3 {
        self.waypoints.last().expect("nonempty plan").pos
    }

    /// Time of the last waypoint.
    pub fn arrival(&self) -> f64 {
        self.waypoints.last().expect("nonempty plan").t
    }

    /// Segments between consecutive waypoints followed by an infinite wait at
    /// the goal.
    pub fn motions(&self) -> Vec<LinearMotion> {
        let mut out: Vec<LinearMotion> = self
            .waypoints
            .windows(2)
            .map(|w| LinearMotion::new(w[0].pos, w[1].pos, w[0].t, w[1].t))
            .collect();
        out.push(LinearMotion::parked(self.goal(), self.arrival()));
        out
    }

    /// Position on the piecewise-linear trajectory; the start before `t = 0`
    /// and the goal after arrival.
    pub fn position_at(&self, t: f64) -> Vec3 {
        let wps = &self.waypoints;
        if t <= wps[0].t {
            return wps[0].pos;
        }
        // first waypoint with time >= t
        let k = wps.partition_point(|w| w.t < t);
        if k == wps.len() {
            return self.goal();
        }
        let (a, b) = (wps[k - 1], wps[k]);
        let s = (t - a.t) / (b.t - a.t);
        a.pos + (b.pos - a.pos) * s
    }

    /// Number of wait segments (excluding the final parking).
    pub fn num_waits(&self) -> usize {
        self.waypoints
            .windows(2)
            .filter(|w| w[0].pos == w[1].pos)
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentBody {
    pub agent: usize,
    pub radius: f64,
    pub height: f64,
    pub speed: f64,
}

impl AgentBody {
    pub fn body(&self) -> CylinderBody {
        CylinderBody {
            radius: self.radius,
            height: self.height,
        }
    }
}

/// Plans for a team of agents with the body parameters they were planned
/// for; `plans[k]` and `bodies[k]` describe the same agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSet {
    pub plans: Vec<TimedPlan>,
    pub bodies: Vec<AgentBody>,
}

impl PlanSet {
    pub fn new(mut plans: Vec<TimedPlan>, mut bodies: Vec<AgentBody>) -> Result<Self, PlanError> {
        plans.sort_by_key(|p| p.agent);
        bodies.sort_by_key(|b| b.agent);
        let set = PlanSet { plans, bodies };
        set.check()?;
        Ok(set)
    }

    /// Builds a plan set carrying the bodies of the instance's agents.
    pub fn from_instance(instance: &Instance, plans: Vec<TimedPlan>) -> Result<Self, PlanError> {
        let bodies = instance
            .agents
            .iter()
            .map(|a| AgentBody {
                agent: a.id,
                radius: a.body.radius,
                height: a.body.height,
                speed: a.speed,
            })
            .collect();
        PlanSet::new(plans, bodies)
    }

    pub fn check(&self) -> Result<(), PlanError> {
        for p in &self.plans {
            p.check()?;
        }
        if self.plans.len() != self.bodies.len() {
            return Err(PlanError::Mismatch(format!(
                "{} plans but {} bodies",
                self.plans.len(),
                self.bodies.len()
            )));
        }
        for (k, (p, b)) in self.plans.iter().zip(&self.bodies).enumerate() {
            if p.agent != b.agent {
                return Err(PlanError::Mismatch(format!(
                    "plan for agent {} has no matching body entry",
                    p.agent
                )));
            }
            if k > 0 && self.plans[k - 1].agent == p.agent {
                return Err(PlanError::Mismatch(format!(
                    "duplicate plan for agent {}",
                    p.agent
                )));
            }
            b.body()
                .validate()
                .map_err(|e| PlanError::Mismatch(format!("agent {}: {e}", b.agent)))?;
            if !(b.speed > 0.0 && b.speed.is_finite()) {
                return Err(PlanError::Mismatch(format!(
                    "agent {}: speed {} must be > 0",
                    b.agent, b.speed
                )));
            }
        }
        Ok(())
    }

    pub fn cylinder_bodies(&self) -> Vec<CylinderBody> {
        self.bodies.iter().map(AgentBody::body).collect()
    }

    pub fn sum_of_costs(&self) -> f64 {
        self.plans.iter().map(TimedPlan::arrival).sum()
    }

    pub fn makespan(&self) -> f64 {
        self.plans
            .iter()
            .map(TimedPlan::arrival)
            .fold(0.0, f64::max)
    }

    /// Cross-checks the plans against an instance: same agents, starting at
    /// their starts and ending at their goals.
    pub fn check_against(&self, instance: &Instance) -> Result<(), PlanError> {
        for p in &self.plans {
            let Some(spec) = instance.agents.iter().find(|a| a.id == p.agent) else {
                return Err(PlanError::Mismatch(format!(
                    "plan for agent {} which is not in the instance",
                    p.agent
                )));
            };
            let start = instance.world.position(spec.start);
            let goal = instance.world.position(spec.goal);
            if (p.start() - start).norm() > 1e-9 {
                return Err(PlanError::Malformed {
                    agent: p.agent,
                    waypoint: 0,
                    reason: format!("does not begin at start {}", spec.start),
                });
            }
            if (p.goal() - goal).norm() > 1e-9 {
                return Err(PlanError::Malformed {
                    agent: p.agent,
                    waypoint: p.waypoints.len() - 1,
                    reason: format!("does not end at goal {}", spec.goal),
                });
            }
        }
        if let Some(missing) = instance
            .agents
            .iter()
            .find(|a| !self.plans.iter().any(|p| p.agent == a.id))
        {
            return Err(PlanError::Mismatch(format!(
                "no plan for agent {}",
                missing.id
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plans serialize");
        s.push('\n');
        s
    }
}

pub fn parse_plans(text: &str) -> Result<PlanSet, PlanError> {
    let raw: PlanSet = serde_json::from_str(text)?;
    PlanSet::new(raw.plans, raw.bodies)
}

pub fn load_plans(path: impl AsRef<Path>) -> Result<PlanSet, PlanError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| PlanError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_plans(&text)
}

pub fn save_plans(plans: &PlanSet, path: impl AsRef<Path>) -> Result<(), PlanError> {
    let path = path.as_ref();
    std::fs::write(path, plans.to_json()).map_err(|source| PlanError::Io {
        path: path.to_owned(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMethod {
    Analytic,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Collision {
        agents: (usize, usize),
        /// Earliest offending time found by this method.
        time: f64,
        /// Most negative signed clearance found (see `CylinderBody::clearance`).
        min_separation: f64,
        method: CheckMethod,
    },
    Static {
        agent: usize,
        segment: usize,
        reason: String,
    },
    Kinematic {
        agent: usize,
        segment: usize,
        expected_speed: f64,
        actual_speed: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
    pub checked_pairs: usize,
}

impl ValidationReport {
    pub fn collisions(&self, method: CheckMethod) -> impl Iterator<Item = &Violation> {
        self.violations
            .iter()
            .filter(move |v| matches!(v, Violation::Collision { method: m, .. } if *m == method))
    }
}

/// Checks plans for inter-agent collisions (analytically and by sampling at
/// `sampling_dt`), static validity against the grid, and segment speeds.
pub fn validate(
    plans: &PlanSet,
    world: &GridWorld,
    sampling_dt: f64,
) -> Result<ValidationReport, PlanError> {
    plans.check()?;
    if !(sampling_dt > 0.0 && sampling_dt.is_finite()) {
        return Err(PlanError::Mismatch(format!(
            "sampling_dt {sampling_dt} must be > 0"
        )));
    }
    let mut violations = Vec::new();
    for (plan, body) in plans.plans.iter().zip(&plans.bodies) {
        check_statics(plan, body, world, &mut violations);
    }
    let bodies = plans.cylinder_bodies();
    let n = plans.plans.len();
    violations.extend(analytic_collisions(plans, &bodies));
    violations.extend(sampled_collisions(plans, &bodies, sampling_dt));
    violations.sort_by(|a, b| {
        violation_key(a)
            .partial_cmp(&violation_key(b))
            .expect("finite")
    });
    Ok(ValidationReport {
        ok: violations.is_empty(),
        violations,
        checked_pairs: n * n.saturating_sub(1) / 2,
    })
}

fn violation_key(v: &Violation) -> (u8, usize, usize, f64, u8) {
    match v {
        Violation::Static { agent, segment, .. } => (0, *agent, *segment, 0.0, 0),
        Violation::Kinematic { agent, segment, .. } => (1, *agent, *segment, 0.0, 0),
        Violation::Collision {
            agents,
            time,
            method,
            ..
        } => (2, agents.0, agents.1, *time, *method as u8),
    }
}

fn check_statics(plan: &TimedPlan, body: &AgentBody, world: &GridWorld, out: &mut Vec<Violation>) {
    let cells: Vec<_> = plan
        .waypoints
        .iter()
        .map(|w| world.cell_of(&w.pos))
        .collect();
    for (k, c) in cells.iter().enumerate() {
        match c {
            None => out.push(Violation::Static {
                agent: plan.agent,
                segment: k,
                reason: format!("waypoint {k} is not a grid vertex"),
            }),
            Some(c) if !world.is_free(*c) => out.push(Violation::Static {
                agent: plan.agent,
                segment: k,
                reason: format!("waypoint {k} is on obstacle {c}"),
            }),
            _ => {}
        }
    }
    for (k, w) in plan.waypoints.windows(2).enumerate() {
        let (Some(from), Some(to)) = (cells[k], cells[k + 1]) else {
            continue;
        };
        if from == to {
            continue;
        }
        if !world.is_move(from, to) {
            out.push(Violation::Static {
                agent: plan.agent,
                segment: k,
                reason: format!("{from} -> {to} is not a free grid move"),
            });
            continue;
        }
        let actual = (w[1].pos - w[0].pos).norm() / (w[1].t - w[0].t);
        if (actual - body.speed).abs() > SPEED_RTOL * body.speed {
            out.push(Violation::Kinematic {
                agent: plan.agent,
                segment: k,
                expected_speed: body.speed,
                actual_speed: actual,
            });
        }
    }
}

fn analytic_collisions(plans: &PlanSet, bodies: &[CylinderBody]) -> Vec<Violation> {
    let motions: Vec<Vec<LinearMotion>> = plans.plans.iter().map(TimedPlan::motions).collect();
    let mut out = Vec::new();
    for i in 0..plans.plans.len() {
        for j in i + 1..plans.plans.len() {
            let Some(c) = pair_first_conflict(
                plans.plans[i].agent,
                &motions[i],
                &bodies[i],
                plans.plans[j].agent,
                &motions[j],
                &bodies[j],
            ) else {
                continue;
            };
            let iv = c.unsafe_interval;
            let hi = if iv.hi.is_finite() {
                iv.hi
            } else {
                iv.lo + 10.0
            };
            let min_separation = (0..=100)
                .map(|k| {
                    let t = iv.lo + (hi - iv.lo) * k as f64 / 100.0;
                    bodies[i].clearance(
                        &plans.plans[i].position_at(t),
                        &bodies[j],
                        &plans.plans[j].position_at(t),
                    )
                })
                .fold(f64::INFINITY, f64::min);
            out.push(Violation::Collision {
                agents: (plans.plans[i].agent, plans.plans[j].agent),
                time: iv.lo,
                min_separation,
                method: CheckMethod::Analytic,
            });
        }
    }
    out
}

/// Sampled penetration shallower than this counts as touching.
const CONTACT_TOL: f64 = 1e-9;

fn sampled_collisions(plans: &PlanSet, bodies: &[CylinderBody], dt: f64) -> Vec<Violation> {
    let n = plans.plans.len();
    // One sample past the last arrival covers the all-parked suffix.
    let horizon = plans.makespan() + 1.0;
    let steps = (horizon / dt).ceil() as usize;
    let mut first: Vec<Option<(f64, f64)>> = vec![None; n * n];
    let mut positions = vec![Vec3::zeros(); n];
    for k in 0..=steps {
        let t = k as f64 * dt;
        for (p, plan) in positions.iter_mut().zip(&plans.plans) {
            *p = plan.position_at(t);
        }
        for i in 0..n {
            for j in i + 1..n {
                let c = bodies[i].clearance(&positions[i], &bodies[j], &positions[j]);
                if c < -CONTACT_TOL {
                    let slot = &mut first[i * n + j];
                    *slot = Some(match *slot {
                        None => (t, c),
                        Some((t0, m)) => (t0, m.min(c)),
                    });
                }
            }
        }
    }
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if let Some((time, min_separation)) = first[i * n + j] {
                out.push(Violation::Collision {
                    agents: (plans.plans[i].agent, plans.plans[j].agent),
                    time,
                    min_separation,
                    method: CheckMethod::Sampled,
                });
            }
        }
    }
    out
}
