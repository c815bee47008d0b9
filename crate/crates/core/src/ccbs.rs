//! Continuous-time conflict-based search.
//!
//! The high level is a best-first search over constraint trees. Each node
//! holds one plan per agent; the earliest cylinder conflict among them is
//! split into two constraints, one per agent, and only the newly constrained
//! agent is re-planned with [`sipp_plan`].
//!
//! Splits are built so that any pair of executions violating both children's
//! constraints still collides:
//!
//! * move vs move: each agent may not start its move in `[t, t + delay)`,
//!   where `delay` is the smallest postponement of that move (the other held
//!   fixed) that clears the conflict;
//! * wait vs move: with the moving agent's danger window `(lo, hi)` over the
//!   waiting vertex and a split instant `s` in the conflict, the waiting agent
//!   may not be at the vertex during `[s, hi)` and the mover may not start in
//!   `[t, t + s - lo)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{
    cylinder_unsafe_interval, first_conflict, Conflict, CylinderBody, Interval, LinearMotion,
};
use crate::plan::{PlanSet, TimedPlan};
use crate::sipp::{sipp_plan, Constraint};
use crate::world::{AgentSpec, GridWorld, Instance};

/// Width below which the postponement search stops.
const DELAY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    pub max_time: Duration,
    pub max_expansions: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_time: Duration::from_secs(30),
            max_expansions: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SolverStats {
    pub expansions: usize,
    pub generated: usize,
    pub conflicts_resolved: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub plans: PlanSet,
    pub cost: f64,
    pub makespan: f64,
    pub stats: SolverStats,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("instance has no solution ({0})")]
    NoSolution(String, SolverStats),
    #[error("search limit exceeded after {} expansions", .0.expansions)]
    LimitExceeded(SolverStats),
}

#[derive(Debug, Error, PartialEq)]
pub enum BranchError {
    #[error("conflict between two stationary agents cannot be split")]
    Stationary,
    #[error("conflicting action endpoint is not a grid vertex")]
    OffGrid,
    #[error("conflict too short to split")]
    Degenerate,
}

/// Smallest `delay >= 0` such that `moving` started `delay` later no longer
/// conflicts with `fixed`, to within `DELAY_TOL` on the safe side.
fn clearing_delay(
    moving: &LinearMotion,
    fixed: &LinearMotion,
    body_m: &CylinderBody,
    body_f: &CylinderBody,
) -> f64 {
    let collides = |d: f64| {
        matches!(
            cylinder_unsafe_interval(&moving.shifted(d), fixed, body_m, body_f),
            Ok(Some(_))
        )
    };
    // Starting once `fixed` has ended leaves no common window.
    let mut hi = (fixed.t1 - moving.t0).max(DELAY_TOL);
    debug_assert!(!collides(hi));
    let mut lo = 0.0;
    while hi - lo > DELAY_TOL {
        let mid = 0.5 * (lo + hi);
        if collides(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Splits a conflict into one constraint per agent; see the module docs.
pub fn branch(
    conflict: &Conflict,
    body_i: &CylinderBody,
    body_j: &CylinderBody,
    world: &GridWorld,
) -> Result<(Constraint, Constraint), BranchError> {
    let (ci, cj) = split(conflict, body_i, body_j, world)?;
    if ci.interval.is_empty() || cj.interval.is_empty() {
        return Err(BranchError::Degenerate);
    }
    Ok((ci, cj))
}

fn split(
    conflict: &Conflict,
    body_i: &CylinderBody,
    body_j: &CylinderBody,
    world: &GridWorld,
) -> Result<(Constraint, Constraint), BranchError> {
    let (ai, aj) = (&conflict.action_i, &conflict.action_j);
    match (ai.is_wait(), aj.is_wait()) {
        (false, false) => {
            let mi = move_action(world, ai)?;
            let mj = move_action(world, aj)?;
            let di = clearing_delay(ai, aj, body_i, body_j);
            let dj = clearing_delay(aj, ai, body_j, body_i);
            Ok((
                Constraint::movement(conflict.agent_i, mi, Interval::new(ai.t0, ai.t0 + di)),
                Constraint::movement(conflict.agent_j, mj, Interval::new(aj.t0, aj.t0 + dj)),
            ))
        }
        (true, false) => wait_move_split(
            conflict.agent_i,
            ai,
            body_i,
            conflict.agent_j,
            aj,
            body_j,
            world,
        ),
        (false, true) => {
            let (cj, ci) = wait_move_split(
                conflict.agent_j,
                aj,
                body_j,
                conflict.agent_i,
                ai,
                body_i,
                world,
            )?;
            Ok((ci, cj))
        }
        (true, true) => Err(BranchError::Stationary),
    }
}

fn move_action(
    world: &GridWorld,
    m: &LinearMotion,
) -> Result<crate::world::MoveAction, BranchError> {
    let from = world.cell_of(&m.p0).ok_or(BranchError::OffGrid)?;
    let to = world.cell_of(&m.p1).ok_or(BranchError::OffGrid)?;
    Ok(crate::world::MoveAction {
        from,
        to,
        duration: m.duration(),
    })
}

fn wait_move_split(
    waiter: usize,
    wait: &LinearMotion,
    body_w: &CylinderBody,
    mover: usize,
    mv: &LinearMotion,
    body_m: &CylinderBody,
    world: &GridWorld,
) -> Result<(Constraint, Constraint), BranchError> {
    let vertex = world.cell_of(&wait.p0).ok_or(BranchError::OffGrid)?;
    let action = move_action(world, mv)?;
    // Times at which anyone standing at the vertex would be hit by the move.
    let danger = cylinder_unsafe_interval(
        &LinearMotion::wait(wait.p0, mv.t0, mv.t1),
        mv,
        body_w,
        body_m,
    )
    .ok()
    .flatten()
    .expect("a wait/move conflict implies a danger window");
    // Any split in (lo, min(hi, t1)] is sound.
    let split = wait.t1.min(0.5 * (danger.lo + danger.hi));
    Ok((
        Constraint::vertex(waiter, vertex, Interval::new(split, danger.hi)),
        Constraint::movement(
            mover,
            action,
            Interval::new(mv.t0, mv.t0 + (split - danger.lo)),
        ),
    ))
}

#[derive(Debug, Clone)]
struct CtNode {
    constraints: Vec<Constraint>,
    plans: Vec<TimedPlan>,
    cost: f64,
}

#[derive(Debug)]
struct Queued {
    cost: f64,
    depth: usize,
    seq: usize,
    node: CtNode,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    // Max-heap: lowest cost, then fewest constraints, then oldest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then(other.depth.cmp(&self.depth))
            .then(other.seq.cmp(&self.seq))
    }
}

fn child(
    world: &GridWorld,
    agents: &[AgentSpec],
    node: &CtNode,
    constraint: Constraint,
) -> Option<CtNode> {
    let agent = &agents[constraint.agent];
    let mut constraints = node.constraints.clone();
    constraints.push(constraint);
    let own: Vec<Constraint> = constraints
        .iter()
        .filter(|c| c.agent == agent.id)
        .copied()
        .collect();
    let plan = sipp_plan(world, agent, &own)?;
    let mut plans = node.plans.clone();
    plans[agent.id] = plan;
    let cost = plans.iter().map(TimedPlan::arrival).sum();
    Some(CtNode {
        constraints,
        plans,
        cost,
    })
}

fn stationary_overlap(world: &GridWorld, instance: &Instance, pick_goal: bool) -> Option<String> {
    let agents = &instance.agents;
    for (i, a) in agents.iter().enumerate() {
        for b in &agents[i + 1..] {
            let (ca, cb) = if pick_goal {
                (a.goal, b.goal)
            } else {
                (a.start, b.start)
            };
            let clearance = a
                .body
                .clearance(&world.position(ca), &b.body, &world.position(cb));
            if clearance < 0.0 {
                let what = if pick_goal { "goals" } else { "starts" };
                return Some(format!(
                    "agents {} and {} have overlapping {what}",
                    a.id, b.id
                ));
            }
        }
    }
    None
}

/// Sum-of-costs optimal conflict-free plans, or the reason none was found.
pub fn ccbs_solve(instance: &Instance, limits: &Limits) -> Result<Solution, SolveError> {
    let started = Instant::now();
    let world = &instance.world;
    let agents = &instance.agents;
    let bodies = instance.bodies();
    let mut stats = SolverStats::default();
    let finish = |mut stats: SolverStats| {
        stats.wall_time_s = started.elapsed().as_secs_f64();
        stats
    };

    for pick_goal in [false, true] {
        if let Some(why) = stationary_overlap(world, instance, pick_goal) {
            return Err(SolveError::NoSolution(why, finish(stats)));
        }
    }

    let mut root_plans = Vec::with_capacity(agents.len());
    for a in agents {
        match sipp_plan(world, a, &[]) {
            Some(p) => root_plans.push(p),
            None => {
                return Err(SolveError::NoSolution(
                    format!("agent {} cannot reach its goal", a.id),
                    finish(stats),
                ))
            }
        }
    }
    let cost = root_plans.iter().map(TimedPlan::arrival).sum();
    let mut open = BinaryHeap::new();
    let mut seq = 0;
    open.push(Queued {
        cost,
        depth: 0,
        seq,
        node: CtNode {
            constraints: Vec::new(),
            plans: root_plans,
            cost,
        },
    });
    stats.generated = 1;

    while let Some(Queued { node, .. }) = open.pop() {
        if stats.expansions >= limits.max_expansions || started.elapsed() > limits.max_time {
            return Err(SolveError::LimitExceeded(finish(stats)));
        }
        stats.expansions += 1;
        let Some(conflict) = first_conflict(&node.plans, &bodies) else {
            let plans = PlanSet::from_instance(instance, node.plans)
                .expect("planner output is well-formed");
            return Ok(Solution {
                cost: node.cost,
                makespan: plans.makespan(),
                plans,
                stats: finish(stats),
            });
        };
        stats.conflicts_resolved += 1;
        let (ci, cj) = match branch(
            &conflict,
            &bodies[conflict.agent_i],
            &bodies[conflict.agent_j],
            world,
        ) {
            Ok(pair) => pair,
            Err(e) => {
                log::warn!("dropping node: {e}");
                continue;
            }
        };
        for constraint in [ci, cj] {
            let Some(node) = child(world, agents, &node, constraint) else {
                continue;
            };
            seq += 1;
            stats.generated += 1;
            open.push(Queued {
                cost: node.cost,
                depth: node.constraints.len(),
                seq,
                node,
            });
        }
    }
    Err(SolveError::NoSolution(
        "constraint tree exhausted".into(),
        finish(stats),
    ))
}
