mod common;

use std::time::Duration;

use common::*;
use proptest::prelude::*;
use quadmapf::ccbs::{ccbs_solve, Limits, SolveError};
use quadmapf::plan::TimedPlan;
use quadmapf::sipp::sipp_plan;
use quadmapf::world::parse_instance;

fn limits() -> Limits {
    Limits {
        max_time: Duration::from_secs(5),
        max_expansions: 5_000,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn solutions_validate_and_bound_below_by_free_paths(seed in any::<u64>(), n in 2usize..=4) {
        let inst = random_instance(&mut rng(seed), [4, 4, 2], 0.1, n, SMALL_BODY, 0.5);
        let sol = match ccbs_solve(&inst, &limits()) {
            Ok(sol) => sol,
            Err(SolveError::LimitExceeded(_) | SolveError::NoSolution(..)) => return Ok(()),
        };
        assert_valid(&sol.plans, &inst.world);
        let free: f64 = inst
            .agents
            .iter()
            .map(|a| sipp_plan(&inst.world, a, &[]).unwrap().arrival())
            .sum();
        prop_assert!(sol.cost >= free - 1e-9, "{} < {free}", sol.cost);
        let recomputed: f64 = sol.plans.plans.iter().map(TimedPlan::arrival).sum();
        prop_assert!((sol.cost - recomputed).abs() < 1e-9);
        prop_assert!(sol.makespan <= sol.cost + 1e-9);
        for (plan, agent) in sol.plans.plans.iter().zip(&inst.agents) {
            prop_assert_eq!(inst.world.cell_of(&plan.start()), Some(agent.start));
            prop_assert_eq!(inst.world.cell_of(&plan.goal()), Some(agent.goal));
        }
    }

    #[test]
    fn repeated_solves_are_identical(seed in any::<u64>()) {
        let inst = random_instance(&mut rng(seed), [4, 4, 2], 0.1, 3, SMALL_BODY, 0.5);
        let outcome = |r: Result<quadmapf::ccbs::Solution, SolveError>| match r {
            Ok(s) => Ok((s.plans.to_json(), s.stats.expansions, s.stats.generated)),
            Err(SolveError::NoSolution(why, s)) => Err((why, s.expansions)),
            Err(SolveError::LimitExceeded(s)) => Err(("limit".into(), s.expansions)),
        };
        let limits = Limits { max_time: Duration::from_secs(60), max_expansions: 2_000 };
        let first = outcome(ccbs_solve(&inst, &limits));
        let second = outcome(ccbs_solve(&inst, &limits));
        prop_assert_eq!(first, second);
    }
}

#[test]
fn crossing_delays_one_agent_by_the_clearing_wait() {
    // Two agents cross the centre of a plus-shaped corridor at the same time.
    let inst = parse_instance(
        r#"{
        "grid": {"dims": [3, 3, 1], "cell_size": 0.5,
                 "obstacles": [[0, 0, 0], [2, 0, 0], [0, 2, 0], [2, 2, 0]],
                 "connectivity": "face-6"},
        "agents": [
            {"id": 0, "start": [0, 1, 0], "goal": [2, 1, 0], "radius": 0.2, "height": 0.4, "speed": 0.5},
            {"id": 1, "start": [1, 0, 0], "goal": [1, 2, 0], "radius": 0.2, "height": 0.4, "speed": 0.5}
        ]}"#,
    )
    .unwrap();
    let sol = ccbs_solve(&inst, &Limits::default()).unwrap();
    assert_valid(&sol.plans, &inst.world);
    let want = joint_oracle(&inst, 0.05, 2_000_000).unwrap();
    let waits: usize = sol.plans.plans.iter().map(TimedPlan::num_waits).sum();
    assert_eq!(waits, 1);
    assert!(
        sol.cost <= want + 1e-9 && want - sol.cost <= 0.05 + 1e-9,
        "{} vs {want}",
        sol.cost
    );
    // Free arrivals are 2 s each; exactly one agent pays the wait.
    let arrivals: Vec<f64> = sol.plans.plans.iter().map(TimedPlan::arrival).collect();
    assert!(
        arrivals.iter().filter(|&&a| (a - 2.0).abs() < 1e-9).count() == 1,
        "{arrivals:?}"
    );
}

#[test]
fn corridor_swap_makes_one_agent_step_aside() {
    let inst = parse_instance(
        r#"{
        "grid": {"dims": [3, 2, 1], "cell_size": 0.5,
                 "obstacles": [[0, 1, 0], [2, 1, 0]], "connectivity": "face-6"},
        "agents": [
            {"id": 0, "start": [0, 0, 0], "goal": [2, 0, 0], "radius": 0.2, "height": 0.4, "speed": 0.5},
            {"id": 1, "start": [2, 0, 0], "goal": [0, 0, 0], "radius": 0.2, "height": 0.4, "speed": 0.5}
        ]}"#,
    )
    .unwrap();
    let sol = ccbs_solve(&inst, &Limits::default()).unwrap();
    assert_valid(&sol.plans, &inst.world);
    let want = joint_oracle(&inst, 0.05, 2_000_000).unwrap();
    let waits: usize = sol.plans.plans.iter().map(TimedPlan::num_waits).sum();
    assert!(sol.cost <= want + 1e-9, "{} vs {want}", sol.cost);
    assert!(
        want - sol.cost <= 0.05 * waits as f64 + 1e-9,
        "{} vs {want}",
        sol.cost
    );
    let side = inst.world.position(quadmapf::Cell::new(1, 1, 0));
    assert!(sol
        .plans
        .plans
        .iter()
        .any(|p| p.waypoints.iter().any(|w| w.pos == side)));
}
