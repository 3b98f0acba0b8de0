//! Social-welfare MDP solver.
//!
//! `W(θ) = max_a [ Σ_j v_j(a, θ_a) + δ·E_{θ'|a,θ} W(θ') ]` solved by
//! synchronous (Jacobi) value iteration, together with the marginal
//! problems `W_{-i}` on the reduced profile spaces with allocations
//! restricted to subsets that omit agent `i`. Sweeps exploit the
//! factorized transition kernel by contracting one agent axis at a time;
//! the brute-force finite-horizon oracle in [`finite_horizon_welfare`]
//! deliberately avoids that machinery so the two paths stay independent.
//!
//! The stopping rule is a sup-norm successive difference of
//! `tol·(1-δ)/(2δ)`, which by the standard contraction bound leaves the
//! returned table within `tol/2` of the true fixed point.

use rayon::prelude::*;
use thiserror::Error;

use crate::allocation::{enumerate_allocations, Allocation};
use crate::scenario::{Scenario, StateSpace};

/// Default solver tolerance; incentive checks sit two orders above it.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Sweep cap before the solver reports a scenario/tolerance mismatch.
pub const DEFAULT_MAX_SWEEPS: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(
        "value iteration did not converge within {iterations} sweeps \
         (last sup-norm difference {residual:e})"
    )]
    NonConvergence { iterations: usize, residual: f64 },
}

/// Converged social-welfare table over the full joint state space.
#[derive(Clone, Debug)]
pub struct WelfareTable {
    pub values: Vec<f64>,
    /// Final sup-norm successive difference.
    pub residual: f64,
    pub iterations: usize,
}

/// `W_{-i}` over reduced profiles (all agents except `agent`).
#[derive(Clone, Debug)]
pub struct MarginalWelfareTable {
    pub agent: usize,
    pub values: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Deterministic efficient-allocation policy extracted from a converged
/// welfare table: the canonically first maximizer per state.
#[derive(Clone, Debug)]
pub struct PolicyTable {
    pub allocations: Vec<Allocation>,
    /// Number of allocations within solver tolerance of the maximum.
    pub tie_counts: Vec<usize>,
}

/// The full solve bundle the mechanism needs: `W`, every `W_{-i}`, and
/// the allocation policy.
#[derive(Clone, Debug)]
pub struct SolvedTables {
    pub welfare: WelfareTable,
    pub marginals: Vec<MarginalWelfareTable>,
    pub policy: PolicyTable,
}

impl SolvedTables {
    pub fn welfare_at(&self, scenario: &Scenario, profile: &[usize]) -> f64 {
        self.welfare.values[scenario.state_space().index(profile)]
    }

    /// `W_{-i}` looked up from a full joint profile (agent i's entry is
    /// ignored).
    pub fn marginal_at(&self, scenario: &Scenario, agent: usize, profile: &[usize]) -> f64 {
        let reduced = scenario.reduced_profile(profile, agent);
        self.marginals[agent].values[scenario.reduced_space(agent).index(&reduced)]
    }
}

/// One sub-problem: which agents participate and which allocations are
/// admissible. The full problem uses all agents and all of `2^N`; the
/// marginal problem for `i` drops the agent and restricts to `2^{N\{i}}`.
struct MdpView<'a> {
    scenario: &'a Scenario,
    active: Vec<usize>,
    /// agent index -> position within `active`
    positions: Vec<usize>,
    allocations: Vec<Allocation>,
    space: StateSpace,
}

impl<'a> MdpView<'a> {
    fn build(scenario: &'a Scenario, excluded: Option<usize>) -> MdpView<'a> {
        let active: Vec<usize> = (0..scenario.n()).filter(|&j| Some(j) != excluded).collect();
        let mut positions = vec![usize::MAX; scenario.n()];
        for (pos, &agent) in active.iter().enumerate() {
            positions[agent] = pos;
        }
        let space = match excluded {
            Some(i) => scenario.reduced_space(i),
            None => scenario.state_space().clone(),
        };
        MdpView {
            scenario,
            active,
            positions,
            allocations: enumerate_allocations(scenario.n(), excluded),
            space,
        }
    }

    fn full(scenario: &'a Scenario) -> MdpView<'a> {
        MdpView::build(scenario, None)
    }

    fn excluding(scenario: &'a Scenario, agent: usize) -> MdpView<'a> {
        MdpView::build(scenario, Some(agent))
    }

    /// Σ over `alloc`'s members of their valuation at the view profile.
    fn stage_sum(&self, alloc: Allocation, profile: &[usize]) -> f64 {
        let member_types: Vec<usize> = alloc
            .members()
            .map(|m| profile[self.positions[m]])
            .collect();
        alloc
            .members()
            .map(|member| self.scenario.valuation_for_members(member, alloc, &member_types))
            .sum()
    }

    /// Stage rewards for every (allocation, state) pair, computed once per
    /// solve.
    fn stage_table(&self) -> Vec<Vec<f64>> {
        self.allocations
            .iter()
            .map(|&a| {
                let mut col = vec![0.0; self.space.count()];
                let mut profile = vec![0usize; self.active.len()];
                for (s, slot) in col.iter_mut().enumerate() {
                    self.space.fill_profile(s, &mut profile);
                    *slot = self.stage_sum(a, &profile);
                }
                col
            })
            .collect()
    }

    /// `E_{θ'|a,θ}[w(θ')]` for every θ at once, contracting one agent axis
    /// at a time (valid because the joint kernel factorizes per agent).
    fn expected_table(&self, w: &[f64], alloc: Allocation) -> Vec<f64> {
        let mut cur = w.to_vec();
        for (axis, &agent) in self.active.iter().enumerate() {
            cur = self.apply_axis(&cur, axis, agent, alloc);
        }
        cur
    }

    fn apply_axis(&self, values: &[f64], axis: usize, agent: usize, alloc: Allocation) -> Vec<f64> {
        let size = self.space.sizes()[axis];
        let stride = self.space.strides()[axis];
        if size == 1 {
            // single-type agents transition nowhere
            return values.to_vec();
        }
        let block = size * stride;
        let mut out = vec![0.0; values.len()];
        for base in (0..values.len()).step_by(block) {
            for from in 0..size {
                let row = self.scenario.transition_row(agent, alloc, from);
                let dst = base + from * stride;
                for (to, &p) in row.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let src = base + to * stride;
                    for k in 0..stride {
                        out[dst + k] += p * values[src + k];
                    }
                }
            }
        }
        out
    }

    /// One synchronous Bellman sweep; returns the new table and the
    /// sup-norm difference from `w`.
    fn sweep(&self, stage: &[Vec<f64>], w: &[f64]) -> (Vec<f64>, f64) {
        let delta = self.scenario.delta();
        let mut best = vec![f64::NEG_INFINITY; self.space.count()];
        for (ai, &alloc) in self.allocations.iter().enumerate() {
            let expected = self.expected_table(w, alloc);
            for s in 0..best.len() {
                let cand = stage[ai][s] + delta * expected[s];
                if cand > best[s] {
                    best[s] = cand;
                }
            }
        }
        let diff = best
            .iter()
            .zip(w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        (best, diff)
    }

    fn value_iterate(&self, tol: f64, max_sweeps: usize) -> Result<(Vec<f64>, f64, usize), SolveError> {
        assert!(tol > 0.0, "tolerance must be positive");
        let delta = self.scenario.delta();
        let threshold = tol * (1.0 - delta) / (2.0 * delta);
        let stage = self.stage_table();
        let mut w = vec![0.0; self.space.count()];
        let mut residual = f64::INFINITY;
        for it in 1..=max_sweeps {
            let (next, diff) = self.sweep(&stage, &w);
            w = next;
            residual = diff;
            if diff <= threshold {
                return Ok((w, residual, it));
            }
        }
        Err(SolveError::NonConvergence { iterations: max_sweeps, residual })
    }

    /// Bellman value of each admissible allocation at one state, using a
    /// direct sum over joint successors. This is the path the policy,
    /// `efficient_allocation`, and the payment formulas share.
    fn values_at(&self, w: &[f64], profile: &[usize]) -> Vec<f64> {
        let delta = self.scenario.delta();
        self.allocations
            .iter()
            .map(|&a| self.stage_sum(a, profile) + delta * self.expected_at(w, a, profile))
            .collect()
    }

    fn expected_at(&self, w: &[f64], alloc: Allocation, profile: &[usize]) -> f64 {
        let rows: Vec<&[f64]> = self
            .active
            .iter()
            .enumerate()
            .map(|(pos, &agent)| self.scenario.transition_row(agent, alloc, profile[pos]))
            .collect();
        let mut acc = 0.0;
        let mut next = vec![0usize; self.active.len()];
        for (idx, &value) in w.iter().enumerate() {
            self.space.fill_profile(idx, &mut next);
            let mut p = 1.0;
            for (pos, row) in rows.iter().enumerate() {
                p *= row[next[pos]];
                if p == 0.0 {
                    break;
                }
            }
            acc += p * value;
        }
        acc
    }

    fn best_at(&self, w: &[f64], profile: &[usize], tie_tol: f64) -> (f64, Allocation, usize) {
        let values = self.values_at(w, profile);
        let mut best = f64::NEG_INFINITY;
        let mut arg = self.allocations[0];
        for (k, &v) in values.iter().enumerate() {
            if v > best {
                best = v;
                arg = self.allocations[k];
            }
        }
        let ties = values.iter().filter(|&&v| best - v <= tie_tol).count();
        (best, arg, ties)
    }
}

/// Solves the social-welfare fixed point to within `tol`.
pub fn solve_welfare(scenario: &Scenario, tol: f64) -> Result<WelfareTable, SolveError> {
    solve_welfare_capped(scenario, tol, DEFAULT_MAX_SWEEPS)
}

pub(crate) fn solve_welfare_capped(
    scenario: &Scenario,
    tol: f64,
    max_sweeps: usize,
) -> Result<WelfareTable, SolveError> {
    let view = MdpView::full(scenario);
    let (values, residual, iterations) = view.value_iterate(tol, max_sweeps)?;
    Ok(WelfareTable { values, residual, iterations })
}

/// Solves `W_{-i}` on the reduced profile space. Agent `agent`'s type is
/// marginalized out entirely, which is exact because no valuation in
/// `A_{-i}` reads it and the transitions factorize per agent.
pub fn solve_marginal_welfare(
    scenario: &Scenario,
    agent: usize,
    tol: f64,
) -> Result<MarginalWelfareTable, SolveError> {
    let view = MdpView::excluding(scenario, agent);
    let (values, residual, iterations) = view.value_iterate(tol, DEFAULT_MAX_SWEEPS)?;
    Ok(MarginalWelfareTable { agent, values, residual, iterations })
}

/// Canonically first allocation attaining the Bellman maximum at `profile`.
pub fn efficient_allocation(
    scenario: &Scenario,
    welfare: &WelfareTable,
    profile: &[usize],
) -> Allocation {
    let view = MdpView::full(scenario);
    view.best_at(&welfare.values, profile, DEFAULT_TOL).1
}

/// Extracts the policy (and tie counts at `tie_tol`) for every state.
pub fn extract_policy(scenario: &Scenario, welfare: &WelfareTable, tie_tol: f64) -> PolicyTable {
    let view = MdpView::full(scenario);
    let count = view.space.count();
    let mut allocations = Vec::with_capacity(count);
    let mut tie_counts = Vec::with_capacity(count);
    let mut profile = vec![0usize; scenario.n()];
    for s in 0..count {
        view.space.fill_profile(s, &mut profile);
        let (_, arg, ties) = view.best_at(&welfare.values, &profile, tie_tol);
        allocations.push(arg);
        tie_counts.push(ties);
    }
    PolicyTable { allocations, tie_counts }
}

/// Solves `W`, every `W_{-i}`, and the policy. The marginal solves are
/// independent and run in parallel.
pub fn solve_all(scenario: &Scenario, tol: f64) -> Result<SolvedTables, SolveError> {
    let welfare = solve_welfare(scenario, tol)?;
    let marginals: Vec<MarginalWelfareTable> = (0..scenario.n())
        .into_par_iter()
        .map(|i| solve_marginal_welfare(scenario, i, tol))
        .collect::<Result<_, _>>()?;
    let policy = extract_policy(scenario, &welfare, tol);
    Ok(SolvedTables { welfare, marginals, policy })
}

/// Exact finite-horizon backward induction from `W_0 ≡ 0`, via brute-force
/// sums over the full joint successor space. Independent of the value
/// iteration machinery; serves as the convergence oracle, with
/// `‖W - W_T‖ ≤ δ^T · n·M/(1-δ)`.
pub fn finite_horizon_welfare(scenario: &Scenario, horizon: usize) -> Vec<f64> {
    let space = scenario.state_space();
    let allocations = enumerate_allocations(scenario.n(), None);
    let mut w = vec![0.0; space.count()];
    for _ in 0..horizon {
        let mut next = vec![f64::NEG_INFINITY; space.count()];
        for (s, slot) in next.iter_mut().enumerate() {
            let profile = space.profile(s);
            for &alloc in &allocations {
                let stage: f64 = scenario.stage_values(alloc, &profile).iter().sum();
                let dist = scenario.joint_transition(&profile, alloc);
                let expected: f64 = dist.iter().zip(&w).map(|(p, v)| p * v).sum();
                let cand = stage + scenario.delta() * expected;
                if cand > *slot {
                    *slot = cand;
                }
            }
        }
        w = next;
    }
    w
}

/// `E_{θ'|a,cond}[ w(θ') ]` over the full joint successor space.
pub fn expected_next_welfare(
    scenario: &Scenario,
    w: &[f64],
    alloc: Allocation,
    cond: &[usize],
) -> f64 {
    let view = MdpView::full(scenario);
    view.expected_at(w, alloc, cond)
}

/// `E_{θ'|a,cond}[ W_{-i}(θ'_{-i}) ]`, the payment's continuation term,
/// computed literally: the sum runs over full joint successors (agent i's
/// next type included) even though the summand only reads `θ'_{-i}`.
pub fn expected_next_marginal(
    scenario: &Scenario,
    marginal: &MarginalWelfareTable,
    alloc: Allocation,
    cond: &[usize],
) -> f64 {
    let i = marginal.agent;
    let space = scenario.state_space();
    let reduced = scenario.reduced_space(i);
    let rows: Vec<&[f64]> = (0..scenario.n())
        .map(|j| scenario.transition_row(j, alloc, cond[j]))
        .collect();
    let mut acc = 0.0;
    let mut next = vec![0usize; scenario.n()];
    let mut next_reduced = vec![0usize; scenario.n() - 1];
    for idx in 0..space.count() {
        space.fill_profile(idx, &mut next);
        let mut p = 1.0;
        for (j, row) in rows.iter().enumerate() {
            p *= row[next[j]];
            if p == 0.0 {
                break;
            }
        }
        if p == 0.0 {
            continue;
        }
        let mut pos = 0;
        for (j, &t) in next.iter().enumerate() {
            if j != i {
                next_reduced[pos] = t;
                pos += 1;
            }
        }
        acc += p * marginal.values[reduced.index(&next_reduced)];
    }
    acc
}

/// Iterative evaluation of a fixed allocation policy under an arbitrary
/// per-state reward; same stopping rule as the optimizing solver.
pub fn evaluate_policy_rewards(
    scenario: &Scenario,
    policy: &PolicyTable,
    reward: impl Fn(usize, Allocation) -> f64,
    tol: f64,
) -> Result<Vec<f64>, SolveError> {
    let space = scenario.state_space();
    let delta = scenario.delta();
    let threshold = tol * (1.0 - delta) / (2.0 * delta);
    let rewards: Vec<f64> = (0..space.count())
        .map(|s| reward(s, policy.allocations[s]))
        .collect();
    let dists: Vec<Vec<f64>> = (0..space.count())
        .map(|s| scenario.joint_transition(&space.profile(s), policy.allocations[s]))
        .collect();
    let mut v = vec![0.0; space.count()];
    let mut residual = f64::INFINITY;
    for _ in 1..=DEFAULT_MAX_SWEEPS {
        let mut next = vec![0.0; space.count()];
        for s in 0..space.count() {
            let expected: f64 = dists[s].iter().zip(&v).map(|(p, w)| p * w).sum();
            next[s] = rewards[s] + delta * expected;
        }
        residual = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        v = next;
        if residual <= threshold {
            return Ok(v);
        }
    }
    Err(SolveError::NonConvergence { iterations: DEFAULT_MAX_SWEEPS, residual })
}

/// Evaluates the policy's total-welfare value `W^π`; used by the
/// efficiency check against the finite-horizon oracle.
pub fn evaluate_policy_welfare(
    scenario: &Scenario,
    policy: &PolicyTable,
    tol: f64,
) -> Result<Vec<f64>, SolveError> {
    let space = scenario.state_space();
    evaluate_policy_rewards(
        scenario,
        policy,
        |s, alloc| scenario.stage_sum(alloc, &space.profile(s)),
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::mechanism::Penalty;
    use crate::scenario::ScenarioBuilder;

    fn all_zero_scenario() -> Scenario {
        ScenarioBuilder::new("zeros")
            .agent(&["a", "b"])
            .agent(&["x"])
            .value(0, &[0], &[0], 0.0)
            .value(0, &[0], &[1], 0.0)
            .value(0, &[0, 1], &[0, 0], 0.0)
            .value(0, &[0, 1], &[1, 0], 0.0)
            .value(1, &[1], &[0], 0.0)
            .value(1, &[0, 1], &[0, 0], 0.0)
            .value(1, &[0, 1], &[1, 0], 0.0)
            .identity_kernels()
            .delta(0.5)
            .build()
            .unwrap()
    }

    #[test]
    fn tiny_exchange_welfare_matches_hand_sum() {
        let s = fixtures::tiny_exchange();
        let w = solve_welfare(&s, 1e-9).unwrap();
        // stage max is 1.5 at {0 1}; geometric series gives 1.5 / (1 - 0.5)
        assert!((w.values[0] - 3.0).abs() < 1e-8);
        assert!(w.residual <= 1e-9);
    }

    #[test]
    fn tiny_exchange_marginals() {
        let s = fixtures::tiny_exchange();
        let m0 = solve_marginal_welfare(&s, 0, 1e-9).unwrap();
        let m1 = solve_marginal_welfare(&s, 1, 1e-9).unwrap();
        // without agent 0, selecting agent 1 alone is a loss: stay empty
        assert!((m0.values[0] - 0.0).abs() < 1e-8);
        // without agent 1, select agent 0 forever: 1 / (1 - 0.5)
        assert!((m1.values[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn all_zero_valuations_fix_point_is_zero() {
        let s = all_zero_scenario();
        let w = solve_welfare(&s, 1e-9).unwrap();
        assert!(w.values.iter().all(|&v| v == 0.0));
        for i in 0..s.n() {
            let m = solve_marginal_welfare(&s, i, 1e-9).unwrap();
            assert!(m.values.iter().all(|&v| v == 0.0));
        }
        // every allocation ties; the canonical first is the empty set
        let tables = solve_all(&s, 1e-9).unwrap();
        assert!(tables.policy.allocations.iter().all(|a| a.is_empty()));
        assert!(tables.policy.tie_counts.iter().all(|&t| t == 4));
    }

    #[test]
    fn single_agent_geometric_value() {
        let s = fixtures::single_agent(1.0, 0.9);
        let w = solve_welfare(&s, 1e-9).unwrap();
        assert!((w.values[0] - 10.0).abs() < 1e-7);
    }

    #[test]
    fn negative_value_agent_stays_unselected() {
        let s = fixtures::single_agent(-1.0, 0.5);
        let tables = solve_all(&s, 1e-9).unwrap();
        assert_eq!(tables.policy.allocations[0], Allocation::EMPTY);
        assert_eq!(
            efficient_allocation(&s, &tables.welfare, &[0]),
            Allocation::EMPTY
        );
    }

    #[test]
    fn tiny_exchange_policy_selects_both() {
        let s = fixtures::tiny_exchange();
        let tables = solve_all(&s, 1e-9).unwrap();
        assert_eq!(
            tables.policy.allocations[0],
            Allocation::from_members([0, 1])
        );
    }

    #[test]
    fn finite_horizon_oracle_examples() {
        let s = fixtures::tiny_exchange();
        assert!(finite_horizon_welfare(&s, 0).iter().all(|&v| v == 0.0));
        let w1 = finite_horizon_welfare(&s, 1);
        assert!((w1[0] - 1.5).abs() < 1e-12);
        let w20 = finite_horizon_welfare(&s, 20);
        let tail = 3.0 * 0.5_f64.powi(20);
        assert!((w20[0] - 3.0).abs() <= tail + 1e-12);
    }

    #[test]
    fn oracle_tail_bound_holds_at_several_horizons() {
        let s = fixtures::fatigue_pair();
        let w = solve_welfare(&s, 1e-9).unwrap();
        let cap = s.welfare_cap();
        for horizon in [1usize, 5, 10, 25] {
            let oracle = finite_horizon_welfare(&s, horizon);
            let gap = w
                .values
                .iter()
                .zip(&oracle)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            assert!(
                gap <= s.delta().powi(horizon as i32) * cap + 1e-8,
                "horizon {horizon}: gap {gap}"
            );
        }
    }

    #[test]
    fn sweeps_contract_at_rate_delta() {
        let s = fixtures::fatigue_pair();
        let view = MdpView::full(&s);
        let stage = view.stage_table();
        let mut w = vec![0.0; view.space.count()];
        let mut last_diff = f64::INFINITY;
        for k in 0..12 {
            let (next, diff) = view.sweep(&stage, &w);
            w = next;
            if k > 0 {
                assert!(
                    diff <= s.delta() * last_diff + 1e-13,
                    "sweep {k}: {diff} vs {last_diff}"
                );
            }
            last_diff = diff;
        }
    }

    #[test]
    fn welfare_bound_holds() {
        let s = fixtures::fatigue_pair();
        let tables = solve_all(&s, 1e-9).unwrap();
        let cap = s.welfare_cap();
        assert!(tables.welfare.values.iter().all(|v| v.abs() <= cap + 1e-9));
        for m in &tables.marginals {
            let cap_m = (s.n() - 1) as f64 * s.bound() / (1.0 - s.delta());
            assert!(m.values.iter().all(|v| v.abs() <= cap_m + 1e-9));
        }
    }

    #[test]
    fn policy_attains_bellman_maximum() {
        let s = fixtures::fatigue_pair();
        let tables = solve_all(&s, 1e-9).unwrap();
        let view = MdpView::full(&s);
        let space = s.state_space();
        for idx in 0..space.count() {
            let profile = space.profile(idx);
            let values = view.values_at(&tables.welfare.values, &profile);
            let best = values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let chosen = view
                .allocations
                .iter()
                .position(|&a| a == tables.policy.allocations[idx])
                .unwrap();
            assert!(values[chosen] >= best - 2e-9);
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let s = fixtures::single_agent(1.0, 0.9);
        let err = solve_welfare_capped(&s, 1e-12, 3).unwrap_err();
        let SolveError::NonConvergence { iterations, residual } = err;
        assert_eq!(iterations, 3);
        assert!(residual > 0.0);
    }

    #[test]
    fn policy_evaluation_matches_welfare_on_optimal_policy() {
        let s = fixtures::fatigue_pair();
        let tables = solve_all(&s, 1e-9).unwrap();
        let evaluated = evaluate_policy_welfare(&s, &tables.policy, 1e-9).unwrap();
        for (a, b) in evaluated.iter().zip(&tables.welfare.values) {
            assert!((a - b).abs() < 5e-9);
        }
    }

    #[test]
    fn zero_penalty_scenario_builds() {
        // Penalty choice must not affect welfare solving at all.
        let s = fixtures::tiny_exchange().with_penalty(Penalty::Absolute);
        let w = solve_welfare(&s, 1e-9).unwrap();
        assert!((w.values[0] - 3.0).abs() < 1e-8);
    }
}
