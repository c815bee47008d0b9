//! Safe-interval path planning for one agent under action/interval
//! constraints.
//!
//! A move constraint forbids starting the move `from -> to` at any time in
//! `[lo, hi)`. A wait constraint (`from == to`) forbids being at the vertex at
//! any time in `[lo, hi)`, whether parked, waiting or passing through.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use crate::geometry::Interval;
use crate::plan::{TimedPlan, Waypoint};
use crate::world::{AgentSpec, Cell, GridWorld, MoveAction};

pub type SingleAgentPlan = TimedPlan;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constraint {
    pub agent: usize,
    pub action: MoveAction,
    pub interval: Interval,
}

impl Constraint {
    pub fn movement(agent: usize, action: MoveAction, interval: Interval) -> Self {
        Constraint {
            agent,
            action,
            interval,
        }
    }

    pub fn vertex(agent: usize, cell: Cell, interval: Interval) -> Self {
        Constraint {
            agent,
            action: MoveAction {
                from: cell,
                to: cell,
                duration: 0.0,
            },
            interval,
        }
    }

    pub fn is_vertex(&self) -> bool {
        self.action.is_wait()
    }
}

/// Merged complements of the prohibitions, as sorted disjoint `[lo, hi)`
/// intervals over `[0, inf)`.
#[derive(Debug, Clone, Default)]
pub struct SafeIntervals {
    vertex: HashMap<Cell, Vec<Interval>>,
    moves: HashMap<(Cell, Cell), Vec<Interval>>,
}

const ALWAYS: [Interval; 1] = [Interval {
    lo: 0.0,
    hi: f64::INFINITY,
}];

impl SafeIntervals {
    pub fn vertex(&self, c: Cell) -> &[Interval] {
        self.vertex.get(&c).map_or(&ALWAYS, Vec::as_slice)
    }

    /// Safe departure times for the move `from -> to`.
    pub fn departures(&self, from: Cell, to: Cell) -> &[Interval] {
        self.moves.get(&(from, to)).map_or(&ALWAYS, Vec::as_slice)
    }
}

/// Complement over `[0, inf)` of the union of half-open prohibitions.
pub fn complement(prohibited: &[Interval]) -> Vec<Interval> {
    let mut sorted: Vec<Interval> = prohibited
        .iter()
        .copied()
        .filter(|iv| !iv.is_empty())
        .collect();
    sorted.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let mut safe = Vec::new();
    let mut cursor = 0.0f64;
    for iv in sorted {
        if iv.lo > cursor {
            safe.push(Interval::new(cursor, iv.lo));
        }
        cursor = cursor.max(iv.hi);
    }
    if cursor.is_finite() {
        safe.push(Interval::unbounded_from(cursor));
    }
    safe
}

pub fn build_safe_intervals(constraints: &[Constraint], agent: usize) -> SafeIntervals {
    let mut vertex: HashMap<Cell, Vec<Interval>> = HashMap::new();
    let mut moves: HashMap<(Cell, Cell), Vec<Interval>> = HashMap::new();
    for c in constraints.iter().filter(|c| c.agent == agent) {
        if c.is_vertex() {
            vertex.entry(c.action.from).or_default().push(c.interval);
        } else {
            moves
                .entry((c.action.from, c.action.to))
                .or_default()
                .push(c.interval);
        }
    }
    SafeIntervals {
        vertex: vertex
            .into_iter()
            .map(|(k, v)| (k, complement(&v)))
            .collect(),
        moves: moves
            .into_iter()
            .map(|(k, v)| (k, complement(&v)))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    cell: Cell,
    interval: usize,
    arrival: f64,
    /// Departure time from the parent vertex.
    departure: f64,
    parent: Option<usize>,
}

#[derive(Debug)]
struct OpenEntry {
    f: f64,
    g: f64,
    vertex: usize,
    interval: usize,
    node: usize,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for OpenEntry {}
impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OpenEntry {
    // Max-heap: smallest f first, then larger g, then lower vertex index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(self.g.total_cmp(&other.g))
            .then(other.vertex.cmp(&self.vertex))
            .then(other.interval.cmp(&self.interval))
            .then(other.node.cmp(&self.node))
    }
}

/// Earliest departure in `[earliest, latest)` that is a safe departure time
/// and lands inside `target`.
fn earliest_departure(
    earliest: f64,
    latest: f64,
    departures: &[Interval],
    duration: f64,
    target: &Interval,
) -> Option<f64> {
    let lo_bound = earliest.max(target.lo - duration);
    let hi_bound = latest.min(target.hi - duration);
    for d in departures {
        if d.hi <= lo_bound {
            continue;
        }
        if d.lo >= hi_bound {
            break;
        }
        let mut t = lo_bound.max(d.lo);
        // Round-off in `target.lo - duration` may land an ulp early.
        while t + duration < target.lo {
            t = t.next_up();
        }
        if t < hi_bound.min(d.hi) && t + duration < target.hi {
            return Some(t);
        }
    }
    None
}

/// Minimum-arrival-time plan from the agent's start to its goal honoring all
/// of the agent's constraints; `None` if the goal is unreachable.
pub fn sipp_plan(
    world: &GridWorld,
    agent: &AgentSpec,
    constraints: &[Constraint],
) -> Option<SingleAgentPlan> {
    let safe = build_safe_intervals(constraints, agent.id);
    let goal_pos = world.position(agent.goal);
    let h = |c: Cell| (world.position(c) - goal_pos).norm() / agent.speed;

    let start_intervals = safe.vertex(agent.start);
    let start_k = start_intervals.iter().position(|iv| iv.contains(0.0))?;
    let mut nodes = vec![Node {
        cell: agent.start,
        interval: start_k,
        arrival: 0.0,
        departure: 0.0,
        parent: None,
    }];
    let mut best: HashMap<(Cell, usize), f64> = HashMap::new();
    best.insert((agent.start, start_k), 0.0);
    let mut open = BinaryHeap::new();
    open.push(OpenEntry {
        f: h(agent.start),
        g: 0.0,
        vertex: world.index(agent.start),
        interval: start_k,
        node: 0,
    });

    while let Some(entry) = open.pop() {
        let node = nodes[entry.node];
        if best
            .get(&(node.cell, node.interval))
            .is_some_and(|&b| b < node.arrival)
        {
            continue;
        }
        let here = safe.vertex(node.cell);
        if node.cell == agent.goal && node.interval == here.len() - 1 {
            return Some(reconstruct(world, agent.id, &nodes, entry.node));
        }
        let latest = here[node.interval].hi;
        let neighbors = world.neighbors(node.cell).ok()?;
        for next in neighbors {
            let action = world.move_action(node.cell, next, agent.speed);
            let departures = safe.departures(node.cell, next);
            for (m, target) in safe.vertex(next).iter().enumerate() {
                if target.hi <= node.arrival + action.duration {
                    continue;
                }
                let Some(t_dep) =
                    earliest_departure(node.arrival, latest, departures, action.duration, target)
                else {
                    continue;
                };
                let arrival = t_dep + action.duration;
                if best.get(&(next, m)).is_some_and(|&b| b <= arrival) {
                    continue;
                }
                best.insert((next, m), arrival);
                nodes.push(Node {
                    cell: next,
                    interval: m,
                    arrival,
                    departure: t_dep,
                    parent: Some(entry.node),
                });
                open.push(OpenEntry {
                    f: arrival + h(next),
                    g: arrival,
                    vertex: world.index(next),
                    interval: m,
                    node: nodes.len() - 1,
                });
            }
        }
    }
    None
}

fn reconstruct(world: &GridWorld, agent: usize, nodes: &[Node], last: usize) -> TimedPlan {
    let mut chain = vec![last];
    while let Some(p) = nodes[*chain.last().expect("nonempty")].parent {
        chain.push(p);
    }
    chain.reverse();
    let mut waypoints = vec![Waypoint::new(world.position(nodes[chain[0]].cell), 0.0)];
    for pair in chain.windows(2) {
        let (from, to) = (nodes[pair[0]], nodes[pair[1]]);
        if to.departure > from.arrival {
            waypoints.push(Waypoint::new(world.position(from.cell), to.departure));
        }
        waypoints.push(Waypoint::new(world.position(to.cell), to.arrival));
    }
    TimedPlan { agent, waypoints }
}

/// Replays a plan against a constraint list directly (without safe-interval
/// tables). Returns the index of the first violated constraint.
pub fn first_violated(
    plan: &TimedPlan,
    constraints: &[Constraint],
    world: &GridWorld,
) -> Option<usize> {
    let cells: Vec<Cell> = plan
        .waypoints
        .iter()
        .map(|w| {
            world
                .cell_of(&w.pos)
                .expect("plan waypoints lie on grid vertices")
        })
        .collect();
    // Maximal stays at one vertex as closed time ranges; the last is open-ended.
    let mut stays: Vec<(Cell, f64, f64)> = Vec::new();
    for (c, w) in cells.iter().zip(&plan.waypoints) {
        match stays.last_mut() {
            Some(last) if last.0 == *c => last.2 = w.t,
            _ => stays.push((*c, w.t, w.t)),
        }
    }
    if let Some(last) = stays.last_mut() {
        last.2 = f64::INFINITY;
    }
    constraints.iter().position(|c| {
        if c.agent != plan.agent {
            return false;
        }
        if c.is_vertex() {
            stays.iter().any(|&(cell, s, e)| {
                cell == c.action.from && s < c.interval.hi && c.interval.lo <= e
            })
        } else {
            plan.waypoints
                .windows(2)
                .zip(cells.windows(2))
                .any(|(w, cs)| {
                    cs[0] == c.action.from && cs[1] == c.action.to && c.interval.contains(w[0].t)
                })
        }
    })
}
