//! Brute-force reference implementations and random instance generators
//! shared by the integration tests.
#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use quadmapf::ccbs::Solution;
use quadmapf::geometry::{cylinder_unsafe_interval, CylinderBody, LinearMotion, Vec3};
use quadmapf::plan::{validate, AgentBody, CheckMethod, PlanSet, TimedPlan};
use quadmapf::sipp::Constraint;
use quadmapf::world::{AgentSpec, Cell, Connectivity, GridWorld, Instance};
use quadmapf::Interval;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- geometry

pub fn collides(
    a: &LinearMotion,
    b: &LinearMotion,
    ba: &CylinderBody,
    bb: &CylinderBody,
    t: f64,
) -> bool {
    let d = a.position_at(t) - b.position_at(t);
    let r = ba.radius + bb.radius;
    d.x * d.x + d.y * d.y < r * r && d.z.abs() < 0.5 * (ba.height + bb.height)
}

/// Outcome of comparing an analytic unsafe interval with the sampled truth.
#[derive(Debug)]
pub enum OracleVerdict {
    Agree,
    Mismatch(String),
}

/// Checks `analytic` against dense sampling of the overlap window plus
/// bisection refinement of every sampled boundary. Unbounded windows are
/// truncated `horizon` seconds after they open.
pub fn check_unsafe_interval(
    a: &LinearMotion,
    b: &LinearMotion,
    ba: &CylinderBody,
    bb: &CylinderBody,
    analytic: Option<Interval>,
    samples: usize,
    tol: f64,
) -> OracleVerdict {
    let lo = a.t0.max(b.t0);
    let hi_true = a.t1.min(b.t1);
    if lo > hi_true {
        return match analytic {
            None => OracleVerdict::Agree,
            Some(iv) => OracleVerdict::Mismatch(format!("disjoint windows but got {iv:?}")),
        };
    }
    let hi = if hi_true.is_finite() {
        hi_true
    } else {
        lo + 20.0
    };
    let ts: Vec<f64> = (0..=samples)
        .map(|k| lo + (hi - lo) * k as f64 / samples as f64)
        .collect();
    let hits: Vec<usize> = (0..ts.len())
        .filter(|&k| collides(a, b, ba, bb, ts[k]))
        .collect();
    let col = |t: f64| collides(a, b, ba, bb, t);

    let Some((&first, &last)) = hits.first().zip(hits.last()) else {
        return match analytic {
            None => OracleVerdict::Agree,
            // A sliver narrower than the sampling step: confirm it is real.
            Some(iv) if iv.length() <= (hi - lo) / samples as f64 && col(0.5 * (iv.lo + iv.hi)) => {
                OracleVerdict::Agree
            }
            Some(iv) if iv.length() < tol => OracleVerdict::Agree,
            Some(iv) => OracleVerdict::Mismatch(format!("no sampled collision but got {iv:?}")),
        };
    };
    // Zero false-safe: every colliding sample lies inside the analytic set.
    let Some(iv) = analytic else {
        let span = ts[last] - ts[first];
        return if span < tol {
            OracleVerdict::Agree
        } else {
            OracleVerdict::Mismatch(format!(
                "collision sampled on [{}, {}] but none reported",
                ts[first], ts[last]
            ))
        };
    };
    for &k in &hits {
        if ts[k] < iv.lo - 1e-9 || ts[k] > iv.hi + 1e-9 {
            return OracleVerdict::Mismatch(format!("false safe at t = {} outside {iv:?}", ts[k]));
        }
    }
    let lo_ref = if first == 0 {
        lo
    } else {
        bisect(&col, ts[first - 1], ts[first])
    };
    let hi_ref = if last == samples {
        if hi_true.is_finite() {
            hi
        } else {
            f64::INFINITY
        }
    } else {
        bisect(&col, ts[last + 1], ts[last])
    };
    let close = |x: f64, y: f64| (x == y) || (x - y).abs() <= tol;
    if close(lo_ref, iv.lo) && close(hi_ref, iv.hi) {
        OracleVerdict::Agree
    } else {
        OracleVerdict::Mismatch(format!("oracle [{lo_ref}, {hi_ref}] vs analytic {iv:?}"))
    }
}

/// Boundary between `safe` (not colliding) and `hit` (colliding).
fn bisect(col: &impl Fn(f64) -> bool, mut safe: f64, mut hit: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (safe + hit);
        if mid == safe || mid == hit {
            break;
        }
        if col(mid) {
            hit = mid;
        } else {
            safe = mid;
        }
    }
    0.5 * (safe + hit)
}

fn random_point(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-1.0..1.0),
    )
}

/// Random motion pair drawn from a mix of generic, head-on, crossing,
/// vertical and parked configurations.
pub fn random_motion_pair(
    rng: &mut ChaCha8Rng,
) -> (LinearMotion, LinearMotion, CylinderBody, CylinderBody) {
    let body = |rng: &mut ChaCha8Rng| CylinderBody {
        radius: rng.random_range(0.05..0.6),
        height: rng.random_range(0.1..1.5),
    };
    let (ba, bb) = (body(rng), body(rng));
    let t0a = rng.random_range(0.0..3.0);
    let t0b = rng.random_range(0.0..3.0);
    let da = rng.random_range(0.3..4.0);
    let db = rng.random_range(0.3..4.0);
    let kind = rng.random_range(0..6);
    let (a, b) = match kind {
        0 => (
            LinearMotion::new(random_point(rng), random_point(rng), t0a, t0a + da),
            LinearMotion::new(random_point(rng), random_point(rng), t0b, t0b + db),
        ),
        1 => {
            // Head-on along a shared line at a shared height.
            let z = rng.random_range(-0.2..0.2);
            (
                LinearMotion::new(
                    Vec3::new(-2.0, 0.0, 0.0),
                    Vec3::new(2.0, 0.0, 0.0),
                    t0a,
                    t0a + da,
                ),
                LinearMotion::new(
                    Vec3::new(2.0, 0.0, z),
                    Vec3::new(-2.0, 0.0, z),
                    t0a,
                    t0a + da,
                ),
            )
        }
        2 => {
            // Crossing at a random offset.
            let off = rng.random_range(-0.5..0.5);
            (
                LinearMotion::new(
                    Vec3::new(-1.0, off, 0.0),
                    Vec3::new(1.0, off, 0.0),
                    t0a,
                    t0a + da,
                ),
                LinearMotion::new(
                    Vec3::new(0.0, -1.0, 0.0),
                    Vec3::new(0.0, 1.0, 0.0),
                    t0b,
                    t0b + db,
                ),
            )
        }
        3 => {
            // One agent climbs through another's column.
            let p = Vec3::new(rng.random_range(-0.4..0.4), 0.0, 0.0);
            (
                LinearMotion::new(
                    Vec3::new(0.0, 0.0, -2.0),
                    Vec3::new(0.0, 0.0, 2.0),
                    t0a,
                    t0a + da,
                ),
                LinearMotion::wait(p, t0b, t0b + db),
            )
        }
        4 => {
            // A move against an agent parked forever.
            let p = random_point(rng) * 0.3;
            (
                LinearMotion::new(random_point(rng), -random_point(rng), t0a, t0a + da),
                LinearMotion::parked(p, t0b),
            )
        }
        _ => {
            let p = random_point(rng);
            (
                LinearMotion::wait(p, t0a, t0a + da),
                LinearMotion::wait(p + random_point(rng) * 0.4, t0b, t0b + db),
            )
        }
    };
    (a, b, ba, bb)
}

pub fn analytic(
    a: &LinearMotion,
    b: &LinearMotion,
    ba: &CylinderBody,
    bb: &CylinderBody,
) -> Option<Interval> {
    cylinder_unsafe_interval(a, b, ba, bb).expect("valid motions")
}

// ---------------------------------------------------------------- instances

/// Small bodies that fit one per cell, including vertically adjacent cells.
pub const SMALL_BODY: CylinderBody = CylinderBody {
    radius: 0.2,
    height: 0.4,
};

fn random_free_cell(rng: &mut ChaCha8Rng, world: &GridWorld) -> Cell {
    loop {
        let d = world.dims();
        let c = Cell::new(
            rng.random_range(0..d[0] as i32),
            rng.random_range(0..d[1] as i32),
            rng.random_range(0..d[2] as i32),
        );
        if world.is_free(c) {
            return c;
        }
    }
}

pub fn random_world(
    rng: &mut ChaCha8Rng,
    max_dims: [usize; 3],
    obstacle_fraction: f64,
) -> GridWorld {
    let dims = [
        rng.random_range(2..=max_dims[0]),
        rng.random_range(2..=max_dims[1]),
        rng.random_range(1..=max_dims[2]),
    ];
    let open = GridWorld::open(dims);
    let obstacles: Vec<Cell> = open
        .cells()
        .filter(|_| rng.random_bool(obstacle_fraction))
        .collect();
    GridWorld::new(dims, 0.5, obstacles, Connectivity::Face6).expect("valid grid")
}

/// `n` agents with pairwise separated starts and pairwise separated goals.
/// Returns `None` when the world is too crowded to place them.
pub fn random_agents(
    rng: &mut ChaCha8Rng,
    world: &GridWorld,
    n: usize,
    body: CylinderBody,
    speed: f64,
) -> Option<Vec<AgentSpec>> {
    let free = world.cells().filter(|c| world.is_free(*c)).count();
    if free < n {
        return None;
    }
    let separated = |cells: &[Cell], c: Cell| {
        cells
            .iter()
            .all(|o| body.clearance(&world.position(*o), &body, &world.position(c)) >= 0.0)
    };
    let pick = |rng: &mut ChaCha8Rng| {
        let mut cells: Vec<Cell> = Vec::new();
        for _ in 0..200 {
            if cells.len() == n {
                break;
            }
            let c = random_free_cell(rng, world);
            if separated(&cells, c) {
                cells.push(c);
            }
        }
        (cells.len() == n).then_some(cells)
    };
    let starts = pick(rng)?;
    let goals = pick(rng)?;
    Some(
        starts
            .into_iter()
            .zip(goals)
            .enumerate()
            .map(|(id, (start, goal))| AgentSpec {
                id,
                start,
                goal,
                body,
                speed,
            })
            .collect(),
    )
}

pub fn random_instance(
    rng: &mut ChaCha8Rng,
    max_dims: [usize; 3],
    obstacle_fraction: f64,
    n: usize,
    body: CylinderBody,
    speed: f64,
) -> Instance {
    loop {
        let world = random_world(rng, max_dims, obstacle_fraction);
        if let Some(agents) = random_agents(rng, &world, n, body, speed) {
            return Instance { world, agents };
        }
    }
}

/// The fixed-dimension 8-agent benchmark: tall default bodies, distinct
/// columns for starts and for goals.
pub fn eight_agent_instance(seed: u64) -> Instance {
    let mut rng = rng(seed);
    let world = GridWorld::open([4, 4, 2]);
    let agents = random_agents(&mut rng, &world, 8, CylinderBody::default(), 0.5)
        .expect("room for 8 agents");
    Instance { world, agents }
}

// ---------------------------------------------------------------- validation

pub fn plan_set_for(instance: &Instance, plans: Vec<TimedPlan>) -> PlanSet {
    PlanSet::from_instance(instance, plans).expect("well-formed plans")
}

/// Runs the analytic and sampled validators and panics with the report on
/// any violation.
pub fn assert_valid(solution: &PlanSet, world: &GridWorld) {
    let report = validate(solution, world, 1e-3).expect("validator runs");
    assert!(
        report.ok,
        "validator rejected a solution: {:?}",
        report.violations
    );
    assert_eq!(report.collisions(CheckMethod::Analytic).count(), 0);
    assert_eq!(report.collisions(CheckMethod::Sampled).count(), 0);
}

pub fn solution_valid(solution: &Solution, world: &GridWorld) -> bool {
    validate(&solution.plans, world, 1e-3)
        .map(|r| r.ok)
        .unwrap_or(false)
}

pub fn single_plan_set(agent: &AgentSpec, plan: TimedPlan) -> PlanSet {
    let body = AgentBody {
        agent: agent.id,
        radius: agent.body.radius,
        height: agent.body.height,
        speed: agent.speed,
    };
    PlanSet::new(
        vec![TimedPlan {
            agent: agent.id,
            ..plan
        }],
        vec![body],
    )
    .expect("well-formed plan")
}

// ---------------------------------------------------------------- SIPP oracle

fn steps(x: f64, dt: f64) -> usize {
    let k = (x / dt).round();
    assert!((k * dt - x).abs() < 1e-9, "{x} is not a multiple of {dt}");
    k as usize
}

/// Earliest time at which the agent can be at its goal and stay there
/// forever, searching departures only at multiples of `dt`.
pub fn sipp_oracle(
    world: &GridWorld,
    agent: &AgentSpec,
    constraints: &[Constraint],
    dt: f64,
) -> Option<f64> {
    let own: Vec<&Constraint> = constraints.iter().filter(|c| c.agent == agent.id).collect();
    let vertex_blocked = |c: Cell, a: f64, b: f64| {
        own.iter()
            .any(|k| k.is_vertex() && k.action.from == c && a < k.interval.hi && k.interval.lo <= b)
    };
    let move_blocked = |from: Cell, to: Cell, t: f64| {
        own.iter().any(|k| {
            !k.is_vertex() && k.action.from == from && k.action.to == to && k.interval.contains(t)
        })
    };
    let n = world.num_cells();
    let last_finite = own
        .iter()
        .flat_map(|k| [k.interval.lo, k.interval.hi])
        .filter(|x| x.is_finite())
        .fold(0.0, f64::max);
    let step_dur = world.cell_size() / agent.speed;
    let d = steps(step_dur, dt);
    let horizon = steps((last_finite / dt).ceil() * dt, dt) + d * (n + 2);
    let t = |k: usize| k as f64 * dt;

    let start = world.index(agent.start);
    if vertex_blocked(agent.start, 0.0, 0.0) {
        return None;
    }
    let mut reach = vec![vec![false; n]; horizon + d + 1];
    reach[0][start] = true;
    for k in 0..=horizon {
        for v in 0..n {
            if !reach[k][v] {
                continue;
            }
            let cell = world.cell_at(v);
            if cell == agent.goal && !vertex_blocked(cell, t(k), f64::INFINITY) {
                return Some(t(k));
            }
            if !vertex_blocked(cell, t(k), t(k + 1)) {
                reach[k + 1][v] = true;
            }
            for next in world.neighbors(cell).expect("in bounds") {
                if move_blocked(cell, next, t(k)) || vertex_blocked(next, t(k + d), t(k + d)) {
                    continue;
                }
                reach[k + d][world.index(next)] = true;
            }
        }
    }
    None
}

/// Random vertex and move constraints near the straight-line corridor.
pub fn random_constraints(
    rng: &mut ChaCha8Rng,
    world: &GridWorld,
    agent: &AgentSpec,
    max: usize,
    dt: f64,
) -> Vec<Constraint> {
    let count = rng.random_range(0..=max);
    let (s, g) = (agent.start.0, agent.goal.0);
    let lo = [s[0].min(g[0]), s[1].min(g[1]), s[2].min(g[2])];
    let hi = [s[0].max(g[0]), s[1].max(g[1]), s[2].max(g[2])];
    let mut out = Vec::new();
    while out.len() < count {
        let c = if rng.random_bool(0.8) {
            Cell::new(
                rng.random_range(lo[0]..=hi[0]),
                rng.random_range(lo[1]..=hi[1]),
                rng.random_range(lo[2]..=hi[2]),
            )
        } else {
            random_free_cell(rng, world)
        };
        if !world.is_free(c) {
            continue;
        }
        let start_k: u32 = rng.random_range(0..500);
        let len_k: u32 = rng.random_range(10..300);
        let from = f64::from(start_k) * dt;
        let to = f64::from(start_k + len_k) * dt;
        let interval = Interval::new(from, to);
        if rng.random_bool(0.5) {
            out.push(Constraint::vertex(agent.id, c, interval));
        } else {
            let nbrs = world.neighbors(c).expect("in bounds");
            if nbrs.is_empty() {
                continue;
            }
            let next = nbrs[rng.random_range(0..nbrs.len())];
            out.push(Constraint::movement(
                agent.id,
                world.move_action(c, next, agent.speed),
                interval,
            ));
        }
    }
    out
}

// ---------------------------------------------------------------- CCBS oracle

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Slot {
    At(u8),
    Transit { from: u8, to: u8, done: u8 },
    Done,
}

/// Sum-of-costs optimum when every action starts at a multiple of `dt`.
///
/// A joint best-first search over per-agent states (at a vertex, partway
/// through a move, or parked at the goal for good). Each step of `dt` costs
/// `dt` per agent not yet parked; collisions are checked for every step.
/// Returns `None` if no joint plan exists within `max_states` expansions.
pub fn joint_oracle(instance: &Instance, dt: f64, max_states: usize) -> Option<f64> {
    let world = &instance.world;
    let agents = &instance.agents;
    let n = agents.len();
    let durations: Vec<usize> = agents
        .iter()
        .map(|a| steps(world.cell_size() / a.speed, dt))
        .collect();
    let dist: Vec<Vec<usize>> = agents.iter().map(|a| bfs_hops(world, a.goal)).collect();
    let bodies: Vec<CylinderBody> = agents.iter().map(|a| a.body).collect();
    let idx = |c: Cell| world.index(c) as u8;
    let pos = |slot: Slot, agent: usize| -> Vec3 {
        match slot {
            Slot::At(v) => world.position(world.cell_at(v as usize)),
            Slot::Done => world.position(agents[agent].goal),
            Slot::Transit { from, to, done } => {
                let (p, q) = (
                    world.position(world.cell_at(from as usize)),
                    world.position(world.cell_at(to as usize)),
                );
                p + (q - p) * (done as f64 / durations[agent] as f64)
            }
        }
    };
    let h = |state: &[Slot]| -> usize {
        state
            .iter()
            .enumerate()
            .map(|(a, s)| match *s {
                Slot::At(v) => dist[a][v as usize] * durations[a],
                Slot::Transit { to, done, .. } => {
                    durations[a] - done as usize + dist[a][to as usize] * durations[a]
                }
                Slot::Done => 0,
            })
            .sum()
    };
    if (0..n).any(|a| dist[a][idx(agents[a].start) as usize] == usize::MAX) {
        return None;
    }

    let start: Vec<Slot> = agents.iter().map(|a| Slot::At(idx(a.start))).collect();
    let mut best: HashMap<Vec<Slot>, usize> = HashMap::new();
    let mut open = BinaryHeap::new();
    best.insert(start.clone(), 0);
    open.push(Reverse((h(&start), 0usize, start)));
    let mut expanded = 0;
    while let Some(Reverse((_, g, state))) = open.pop() {
        if best.get(&state).is_some_and(|&b| b < g) {
            continue;
        }
        if state.iter().all(|s| *s == Slot::Done) {
            return Some(g as f64 * dt);
        }
        expanded += 1;
        if expanded > max_states {
            return None;
        }
        // Per-agent options: (slot after the step, slot during the step start).
        let options: Vec<Vec<(Slot, Slot)>> = state
            .iter()
            .enumerate()
            .map(|(a, &s)| {
                let mut opts = Vec::new();
                match s {
                    Slot::Done => opts.push((Slot::Done, Slot::Done)),
                    Slot::At(v) => {
                        let cell = world.cell_at(v as usize);
                        opts.push((Slot::At(v), Slot::At(v)));
                        if cell == agents[a].goal {
                            opts.push((Slot::Done, Slot::Done));
                        }
                        for next in world.neighbors(cell).expect("in bounds") {
                            let to = idx(next);
                            let after = if durations[a] == 1 {
                                Slot::At(to)
                            } else {
                                Slot::Transit {
                                    from: v,
                                    to,
                                    done: 1,
                                }
                            };
                            opts.push((
                                after,
                                Slot::Transit {
                                    from: v,
                                    to,
                                    done: 0,
                                },
                            ));
                        }
                    }
                    Slot::Transit { from, to, done } => {
                        let after = if done as usize + 1 == durations[a] {
                            Slot::At(to)
                        } else {
                            Slot::Transit {
                                from,
                                to,
                                done: done + 1,
                            }
                        };
                        opts.push((after, s));
                    }
                }
                opts
            })
            .collect();
        let mut choice = vec![0usize; n];
        'product: loop {
            let next: Vec<Slot> = (0..n).map(|a| options[a][choice[a]].0).collect();
            let before: Vec<Slot> = (0..n).map(|a| options[a][choice[a]].1).collect();
            let active = next.iter().filter(|s| **s != Slot::Done).count();
            let all_parked = active == 0;
            let collision_free = all_parked
                || (0..n).all(|i| {
                    (i + 1..n).all(|j| {
                        let mi = LinearMotion::new(
                            pos(before[i], i),
                            pos(end_slot(next[i], before[i]), i),
                            0.0,
                            dt,
                        );
                        let mj = LinearMotion::new(
                            pos(before[j], j),
                            pos(end_slot(next[j], before[j]), j),
                            0.0,
                            dt,
                        );
                        cylinder_unsafe_interval(&mi, &mj, &bodies[i], &bodies[j])
                            .expect("valid")
                            .is_none()
                    })
                });
            if collision_free {
                // Parking costs nothing; every other slot pays one step.
                let g2 = g + if all_parked { 0 } else { active };
                if best.get(&next).is_none_or(|&b| g2 < b) {
                    best.insert(next.clone(), g2);
                    open.push(Reverse((g2 + h(&next), g2, next)));
                }
            }
            let mut k = 0;
            loop {
                if k == n {
                    break 'product;
                }
                choice[k] += 1;
                if choice[k] < options[k].len() {
                    break;
                }
                choice[k] = 0;
                k += 1;
            }
        }
    }
    None
}

/// Where a step that starts in `before` ends, for position purposes. A newly
/// parked agent does not move during the step.
fn end_slot(after: Slot, before: Slot) -> Slot {
    match after {
        Slot::Done => before,
        s => s,
    }
}

fn bfs_hops(world: &GridWorld, goal: Cell) -> Vec<usize> {
    let mut dist = vec![usize::MAX; world.num_cells()];
    dist[world.index(goal)] = 0;
    let mut q = VecDeque::from([goal]);
    while let Some(c) = q.pop_front() {
        let d = dist[world.index(c)];
        for n in world.neighbors(c).expect("in bounds") {
            if dist[world.index(n)] == usize::MAX {
                dist[world.index(n)] = d + 1;
                q.push_back(n);
            }
        }
    }
    dist
}
