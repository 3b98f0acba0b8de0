//! Small hand-built scenarios shared by tests, benches, and docs.

use crate::scenario::{Scenario, ScenarioBuilder};

/// Two agents, one type each, identity dynamics, δ = 0.5.
///
/// Selecting both yields stage welfare 2 - 0.5 = 1.5 and total welfare
/// 3.0; without agent 0 the best plan is to select nobody, without
/// agent 1 it is to select agent 0 forever (welfare 2.0).
pub fn tiny_exchange() -> Scenario {
    ScenarioBuilder::new("tiny_exchange")
        .agent(&["only"])
        .agent(&["only"])
        .value(0, &[0], &[0], 1.0)
        .value(0, &[0, 1], &[0, 0], 2.0)
        .value(1, &[1], &[0], -0.25)
        .value(1, &[0, 1], &[0, 0], -0.5)
        .identity_kernels()
        .delta(0.5)
        .build()
        .expect("fixture is well formed")
}

/// One agent, one type, configurable valuation and discount.
pub fn single_agent(value: f64, delta: f64) -> Scenario {
    ScenarioBuilder::new("single_agent")
        .agent(&["only"])
        .value(0, &[0], &[0], value)
        .identity_kernels()
        .delta(delta)
        .build()
        .expect("fixture is well formed")
}

/// Two agents with two types each and interdependent valuations: the
/// owner's value under joint selection depends on the worker's skill.
/// Selection wears both agents down; rest recovers them.
pub fn fatigue_pair() -> Scenario {
    fatigue_pair_with_delta(0.6)
}

/// [`fatigue_pair`] at an arbitrary discount; `delta` near zero makes the
/// mechanism behave like its one-shot (static) counterpart.
pub fn fatigue_pair_with_delta(delta: f64) -> Scenario {
    ScenarioBuilder::new("fatigue_pair")
        .agent(&["fresh", "tired"])
        .agent(&["fresh", "tired"])
        // owner alone
        .value(0, &[0], &[0], 0.6)
        .value(0, &[0], &[1], 0.3)
        // owner with the worker: depends on both types
        .value(0, &[0, 1], &[0, 0], 1.6)
        .value(0, &[0, 1], &[0, 1], 1.0)
        .value(0, &[0, 1], &[1, 0], 1.2)
        .value(0, &[0, 1], &[1, 1], 0.5)
        // worker alone: pure cost
        .value(1, &[1], &[0], -0.2)
        .value(1, &[1], &[1], -0.4)
        // worker in the team: cost eased by a fresh owner
        .value(1, &[0, 1], &[0, 0], -0.25)
        .value(1, &[0, 1], &[0, 1], -0.55)
        .value(1, &[0, 1], &[1, 0], -0.3)
        .value(1, &[0, 1], &[1, 1], -0.6)
        .membership_kernel(
            0,
            &[vec![0.4, 0.6], vec![0.2, 0.8]],
            &[vec![0.9, 0.1], vec![0.7, 0.3]],
        )
        .membership_kernel(
            1,
            &[vec![0.4, 0.6], vec![0.2, 0.8]],
            &[vec![0.9, 0.1], vec![0.7, 0.3]],
        )
        .delta(delta)
        .build()
        .expect("fixture is well formed")
}

/// Like [`fatigue_pair`] but with private values: each agent's valuation
/// depends on its own type only, so the single-stage pivot baseline is
/// truthful here too.
pub fn private_pair() -> Scenario {
    ScenarioBuilder::new("private_pair")
        .agent(&["fresh", "tired"])
        .agent(&["fresh", "tired"])
        .value(0, &[0], &[0], 0.8)
        .value(0, &[0], &[1], 0.4)
        .value(0, &[0, 1], &[0, 0], 0.9)
        .value(0, &[0, 1], &[0, 1], 0.9)
        .value(0, &[0, 1], &[1, 0], 0.45)
        .value(0, &[0, 1], &[1, 1], 0.45)
        .value(1, &[1], &[0], -0.15)
        .value(1, &[1], &[1], -0.35)
        .value(1, &[0, 1], &[0, 0], -0.2)
        .value(1, &[0, 1], &[1, 0], -0.2)
        .value(1, &[0, 1], &[0, 1], -0.45)
        .value(1, &[0, 1], &[1, 1], -0.45)
        .membership_kernel(
            0,
            &[vec![0.5, 0.5], vec![0.25, 0.75]],
            &[vec![0.85, 0.15], vec![0.6, 0.4]],
        )
        .membership_kernel(
            1,
            &[vec![0.5, 0.5], vec![0.25, 0.75]],
            &[vec![0.85, 0.15], vec![0.6, 0.4]],
        )
        .delta(0.55)
        .build()
        .expect("fixture is well formed")
}
