//! Exhaustive desk-scale certification of the mechanism's incentive
//! properties, plus the search that separates it from the single-stage
//! pivot baseline.
//!
//! Every check enumerates the full cross product of states, agents, and
//! deviations, evaluates exact closed-form utilities, and reports the
//! worst case with a reproducible witness. Tolerances follow the solver
//! hierarchy: tables solved to 1e-9, identity checks at a few times that,
//! incentive checks at 1e-7.

use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::allocation::enumerate_allocations;
use crate::generator::{random_scenario, GeneratorConfig};
use crate::mechanism::{allocate, consistent_value, const_payment, Mechanism};
use crate::scenario::Scenario;
use crate::simulator::{
    exact_deviation_utility, exact_dpm_deviation_utility, exact_truthful_utility, Trajectory,
};
use crate::welfare::{
    evaluate_policy_rewards, evaluate_policy_welfare, expected_next_marginal,
    expected_next_welfare, finite_horizon_welfare, solve_all, SolveError, SolvedTables,
    DEFAULT_TOL,
};

/// Default incentive-check tolerance.
pub const DEFAULT_CHECK_TOL: f64 = 1e-7;

/// Default stage-2 grid half-width (k in -steps..=steps).
pub const DEFAULT_GRID_STEPS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Property {
    Epic,
    StrictStage2,
    Epir,
    Efficiency,
    MarginalIndependence,
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Property::Epic => write!(f, "epic"),
            Property::StrictStage2 => write!(f, "strict-stage2"),
            Property::Epir => write!(f, "epir"),
            Property::Efficiency => write!(f, "efficiency"),
            Property::MarginalIndependence => write!(f, "marginal-independence"),
        }
    }
}

/// Structured witness of the worst case a check found.
#[derive(Clone, Debug)]
pub struct Witness {
    pub state: Vec<usize>,
    pub agent: Option<usize>,
    pub reported_type: Option<usize>,
    pub reported_value: Option<f64>,
    /// Preformatted, comma-free description for verdict reports.
    pub label: String,
}

/// Result of one property check over one scenario.
#[derive(Clone, Debug)]
pub struct ViolationReport {
    pub property: Property,
    pub cases: usize,
    /// Worst observed value; its orientation depends on the property
    /// (max gain for epic, min utility for epir, ...).
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub witness: Option<Witness>,
}

impl ViolationReport {
    /// Witness text for CSV, empty when no witness was recorded.
    pub fn witness_label(&self) -> &str {
        self.witness.as_ref().map(|w| w.label.as_str()).unwrap_or("")
    }
}

fn value_grid(consistent: f64, bound: f64, steps: usize) -> Vec<f64> {
    let step = bound.max(1.0) / 5.0;
    let mut grid = Vec::with_capacity(2 * steps + 1);
    grid.push(consistent);
    for k in 1..=steps as i64 {
        grid.push(consistent - k as f64 * step);
        grid.push(consistent + k as f64 * step);
    }
    grid
}

/// Within-period ex-post incentive compatibility: over every state, every
/// agent, every stage-1 misreport, the analytic stage-2 best response
/// (the consistent value, which zeroes the penalty) plus an off-best
/// grid, no deviation gains more than `tol` over truthful play.
pub fn check_epic(
    scenario: &Scenario,
    tables: &SolvedTables,
    tol: f64,
    grid_steps: usize,
) -> ViolationReport {
    let space = scenario.state_space();
    let bound = scenario.bound();
    let per_state: Vec<(f64, usize, Option<Witness>)> = (0..space.count())
        .into_par_iter()
        .map(|idx| {
            let state = space.profile(idx);
            let mut worst = f64::NEG_INFINITY;
            let mut cases = 0usize;
            let mut witness = None;
            for agent in 0..scenario.n() {
                let truthful = exact_truthful_utility(scenario, tables, &state, agent);
                for reported_type in 0..scenario.type_count(agent) {
                    let mut reported = state.clone();
                    reported[agent] = reported_type;
                    let alloc = allocate(scenario, tables, &reported);
                    let consistent = consistent_value(scenario, agent, alloc, &reported);
                    for reported_value in value_grid(consistent, bound, grid_steps) {
                        let gain = exact_deviation_utility(
                            scenario, tables, &state, agent, reported_type, reported_value,
                        ) - truthful;
                        cases += 1;
                        if gain > worst {
                            worst = gain;
                            witness = Some(Witness {
                                state: state.clone(),
                                agent: Some(agent),
                                reported_type: Some(reported_type),
                                reported_value: Some(reported_value),
                                label: format!(
                                    "state={} agent={agent} report={} vhat={:e} gain={gain:e}",
                                    scenario.state_label(&state),
                                    scenario.type_label(agent, reported_type),
                                    reported_value,
                                ),
                            });
                        }
                    }
                }
            }
            (worst, cases, witness)
        })
        .collect();

    let mut worst = f64::NEG_INFINITY;
    let mut cases = 0usize;
    let mut witness = None;
    for (w, c, wit) in per_state {
        cases += c;
        if w > worst {
            worst = w;
            witness = wit;
        }
    }
    ViolationReport {
        property: Property::Epic,
        cases,
        worst,
        tolerance: tol,
        passed: worst <= tol,
        witness,
    }
}

/// Strictness of the second stage: with truthful stage-1 reports, every
/// off-consistent grid report must lose exactly `g(v̂, v)`, and that loss
/// must be strictly positive. With the penalty ablated every gap is
/// identically zero and this check fails, reproducing the weak
/// indifference the penalty eliminates.
pub fn check_strict_stage2(
    scenario: &Scenario,
    tables: &SolvedTables,
    rel_tol: f64,
    grid_steps: usize,
) -> ViolationReport {
    let space = scenario.state_space();
    let bound = scenario.bound();
    let mut worst_mismatch = 0.0f64;
    let mut cases = 0usize;
    let mut witness: Option<Witness> = None;
    let mut all_strict = true;

    for idx in 0..space.count() {
        let state = space.profile(idx);
        for agent in 0..scenario.n() {
            let alloc = allocate(scenario, tables, &state);
            let true_value = consistent_value(scenario, agent, alloc, &state);
            let at_consistent =
                exact_deviation_utility(scenario, tables, &state, agent, state[agent], true_value);
            for reported_value in value_grid(true_value, bound, grid_steps).into_iter().skip(1) {
                let gap = at_consistent
                    - exact_deviation_utility(
                        scenario, tables, &state, agent, state[agent], reported_value,
                    );
                let expected = scenario.penalty().apply(reported_value, true_value);
                let mismatch = (gap - expected).abs() / expected.abs().max(1.0);
                cases += 1;
                let strict = gap > 0.0;
                if !strict {
                    all_strict = false;
                }
                if mismatch > worst_mismatch || (!strict && witness.is_none()) {
                    worst_mismatch = worst_mismatch.max(mismatch);
                    witness = Some(Witness {
                        state: state.clone(),
                        agent: Some(agent),
                        reported_type: Some(state[agent]),
                        reported_value: Some(reported_value),
                        label: format!(
                            "state={} agent={agent} vhat={reported_value:e} gap={gap:e} expected={expected:e}",
                            scenario.state_label(&state),
                        ),
                    });
                }
            }
        }
    }

    ViolationReport {
        property: Property::StrictStage2,
        cases,
        worst: worst_mismatch,
        tolerance: rel_tol,
        passed: all_strict && worst_mismatch <= rel_tol,
        witness,
    }
}

/// Within-period ex-post individual rationality: the truthful utility
/// `W(θ) - W_{-i}(θ_{-i})` stays above `-tol` everywhere.
pub fn check_epir(scenario: &Scenario, tables: &SolvedTables, tol: f64) -> ViolationReport {
    let space = scenario.state_space();
    let mut worst = f64::INFINITY;
    let mut cases = 0usize;
    let mut witness = None;
    for idx in 0..space.count() {
        let state = space.profile(idx);
        for agent in 0..scenario.n() {
            let utility = exact_truthful_utility(scenario, tables, &state, agent);
            cases += 1;
            if utility < worst {
                worst = utility;
                witness = Some(Witness {
                    state: state.clone(),
                    agent: Some(agent),
                    reported_type: None,
                    reported_value: None,
                    label: format!(
                        "state={} agent={agent} utility={utility:e}",
                        scenario.state_label(&state)
                    ),
                });
            }
        }
    }
    ViolationReport {
        property: Property::Epir,
        cases,
        worst,
        tolerance: tol,
        passed: worst >= -tol,
        witness,
    }
}

/// Compares the extracted policy's welfare against the brute-force
/// finite-horizon oracle, run long enough that the geometric tail sits
/// below `tol`.
pub fn check_efficiency(
    scenario: &Scenario,
    tables: &SolvedTables,
    tol: f64,
) -> Result<ViolationReport, SolveError> {
    let cap = scenario.welfare_cap();
    let delta = scenario.delta();
    let mut horizon = 1usize;
    while delta.powi(horizon as i32) * cap >= tol && horizon < 100_000 {
        horizon += 1;
    }
    let tail = delta.powi(horizon as i32) * cap;
    let oracle = finite_horizon_welfare(scenario, horizon);
    let evaluated = evaluate_policy_welfare(scenario, &tables.policy, tol.min(1e-9))?;

    let space = scenario.state_space();
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    for idx in 0..space.count() {
        let shortfall = oracle[idx] - evaluated[idx];
        if shortfall > worst {
            worst = shortfall;
            let state = space.profile(idx);
            witness = Some(Witness {
                state: state.clone(),
                agent: None,
                reported_type: None,
                reported_value: None,
                label: format!(
                    "state={} shortfall={shortfall:e} horizon={horizon}",
                    scenario.state_label(&state)
                ),
            });
        }
    }
    Ok(ViolationReport {
        property: Property::Efficiency,
        cases: space.count(),
        worst,
        tolerance: tol + tail,
        passed: worst <= tol + tail,
        witness,
    })
}

/// The payment's continuation expectation `E[W_{-i}(θ'_{-i}) | a, θ]` may
/// not depend on θ_i: agent i's own next type is integrated out and no
/// remaining term reads it. Checked literally for every allocation.
pub fn check_marginal_independence(
    scenario: &Scenario,
    tables: &SolvedTables,
    tol: f64,
) -> ViolationReport {
    let mut worst = 0.0f64;
    let mut cases = 0usize;
    let mut witness = None;
    for agent in 0..scenario.n() {
        let reduced = scenario.reduced_space(agent);
        for alloc in enumerate_allocations(scenario.n(), None) {
            for ridx in 0..reduced.count() {
                let rest = reduced.profile(ridx);
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for own in 0..scenario.type_count(agent) {
                    let mut full = Vec::with_capacity(scenario.n());
                    let mut pos = 0usize;
                    for j in 0..scenario.n() {
                        if j == agent {
                            full.push(own);
                        } else {
                            full.push(rest[pos]);
                            pos += 1;
                        }
                    }
                    let e = expected_next_marginal(
                        scenario,
                        &tables.marginals[agent],
                        alloc,
                        &full,
                    );
                    lo = lo.min(e);
                    hi = hi.max(e);
                    cases += 1;
                }
                let spread = hi - lo;
                if spread > worst {
                    worst = spread;
                    witness = Some(Witness {
                        state: rest.clone(),
                        agent: Some(agent),
                        reported_type: None,
                        reported_value: None,
                        label: format!(
                            "agent={agent} allocation={alloc} rest={} spread={spread:e}",
                            scenario.reduced_state_label(&rest, agent)
                        ),
                    });
                }
            }
        }
    }
    ViolationReport {
        property: Property::MarginalIndependence,
        cases,
        worst,
        tolerance: tol,
        passed: worst <= tol,
        witness,
    }
}

/// Tolerances for [`run_all_checks`], following the hierarchy: incentive
/// checks two orders above the solver, identity checks near float noise.
#[derive(Clone, Debug)]
pub struct CheckConfig {
    pub tol: f64,
    pub grid_steps: usize,
    pub strict_rel_tol: f64,
    pub independence_tol: f64,
}

impl Default for CheckConfig {
    fn default() -> CheckConfig {
        CheckConfig {
            tol: DEFAULT_CHECK_TOL,
            grid_steps: DEFAULT_GRID_STEPS,
            strict_rel_tol: 1e-9,
            independence_tol: 1e-10,
        }
    }
}

/// Runs every property check on one scenario.
pub fn run_all_checks(
    scenario: &Scenario,
    tables: &SolvedTables,
    cfg: &CheckConfig,
) -> Result<Vec<ViolationReport>, SolveError> {
    Ok(vec![
        check_epic(scenario, tables, cfg.tol, cfg.grid_steps),
        check_strict_stage2(scenario, tables, cfg.strict_rel_tol, cfg.grid_steps),
        check_epir(scenario, tables, cfg.tol),
        check_efficiency(scenario, tables, cfg.tol)?,
        check_marginal_independence(scenario, tables, cfg.independence_tol),
    ])
}

/// Worst stage-1 deviation gain under the single-stage pivot baseline.
pub fn dpm_worst_gain(scenario: &Scenario, tables: &SolvedTables) -> (f64, Option<Witness>) {
    let space = scenario.state_space();
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    for idx in 0..space.count() {
        let state = space.profile(idx);
        for agent in 0..scenario.n() {
            let truthful = exact_truthful_utility(scenario, tables, &state, agent);
            for reported_type in 0..scenario.type_count(agent) {
                let gain =
                    exact_dpm_deviation_utility(scenario, tables, &state, agent, reported_type)
                        - truthful;
                if gain > worst {
                    worst = gain;
                    witness = Some(Witness {
                        state: state.clone(),
                        agent: Some(agent),
                        reported_type: Some(reported_type),
                        reported_value: None,
                        label: format!(
                            "state={} agent={agent} report={} gain={gain:e}",
                            scenario.state_label(&state),
                            scenario.type_label(agent, reported_type),
                        ),
                    });
                }
            }
        }
    }
    (worst, witness)
}

/// Per-agent discounted utility table under the fixed-price baseline
/// (truthful reports, the shared efficient allocation rule).
pub fn const_utility_table(
    scenario: &Scenario,
    tables: &SolvedTables,
) -> Result<Vec<Vec<f64>>, SolveError> {
    let space = scenario.state_space();
    (0..scenario.n())
        .map(|agent| {
            evaluate_policy_rewards(
                scenario,
                &tables.policy,
                |s, alloc| {
                    let profile = space.profile(s);
                    scenario.value(agent, alloc, &profile)
                        + const_payment(scenario, alloc, scenario.const_price())[agent]
                },
                DEFAULT_TOL,
            )
        })
        .collect()
}

fn const_worst_gain(
    scenario: &Scenario,
    tables: &SolvedTables,
    utilities: &[Vec<f64>],
) -> (f64, Option<Witness>) {
    let space = scenario.state_space();
    let delta = scenario.delta();
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    for idx in 0..space.count() {
        let state = space.profile(idx);
        for agent in 0..scenario.n() {
            for reported_type in 0..scenario.type_count(agent) {
                let mut reported = state.clone();
                reported[agent] = reported_type;
                let alloc = allocate(scenario, tables, &reported);
                let dev = scenario.value(agent, alloc, &state)
                    + const_payment(scenario, alloc, scenario.const_price())[agent]
                    + delta * expected_next_welfare(scenario, &utilities[agent], alloc, &state);
                let gain = dev - utilities[agent][idx];
                if gain > worst {
                    worst = gain;
                    witness = Some(Witness {
                        state: state.clone(),
                        agent: Some(agent),
                        reported_type: Some(reported_type),
                        reported_value: None,
                        label: format!(
                            "state={} agent={agent} report={} gain={gain:e}",
                            scenario.state_label(&state),
                            scenario.type_label(agent, reported_type),
                        ),
                    });
                }
            }
        }
    }
    (worst, witness)
}

/// EPIC verdict for any of the three mechanisms, on a shared scale: the
/// worst single-round deviation gain versus truthful play.
pub fn check_epic_for(
    scenario: &Scenario,
    tables: &SolvedTables,
    mechanism: Mechanism,
    tol: f64,
    grid_steps: usize,
) -> Result<ViolationReport, SolveError> {
    match mechanism {
        Mechanism::Matrix => Ok(check_epic(scenario, tables, tol, grid_steps)),
        Mechanism::Dpm => {
            let (worst, witness) = dpm_worst_gain(scenario, tables);
            let cases = scenario.num_states()
                * (0..scenario.n()).map(|i| scenario.type_count(i)).sum::<usize>();
            Ok(ViolationReport {
                property: Property::Epic,
                cases,
                worst,
                tolerance: tol,
                passed: worst <= tol,
                witness,
            })
        }
        Mechanism::Const => {
            let utilities = const_utility_table(scenario, tables)?;
            let (worst, witness) = const_worst_gain(scenario, tables, &utilities);
            let cases = scenario.num_states()
                * (0..scenario.n()).map(|i| scenario.type_count(i)).sum::<usize>();
            Ok(ViolationReport {
                property: Property::Epic,
                cases,
                worst,
                tolerance: tol,
                passed: worst <= tol,
                witness,
            })
        }
    }
}

/// EPIR verdict for any mechanism: minimal truthful utility.
pub fn check_epir_for(
    scenario: &Scenario,
    tables: &SolvedTables,
    mechanism: Mechanism,
    tol: f64,
) -> Result<ViolationReport, SolveError> {
    match mechanism {
        // truthful utility is W - W_{-i} for both two-stage and pivot payments
        Mechanism::Matrix | Mechanism::Dpm => Ok(check_epir(scenario, tables, tol)),
        Mechanism::Const => {
            let utilities = const_utility_table(scenario, tables)?;
            let space = scenario.state_space();
            let mut worst = f64::INFINITY;
            let mut witness = None;
            let mut cases = 0usize;
            for idx in 0..space.count() {
                for (agent, table) in utilities.iter().enumerate() {
                    cases += 1;
                    if table[idx] < worst {
                        worst = table[idx];
                        let state = space.profile(idx);
                        witness = Some(Witness {
                            state: state.clone(),
                            agent: Some(agent),
                            reported_type: None,
                            reported_value: None,
                            label: format!(
                                "state={} agent={agent} utility={worst:e}",
                                scenario.state_label(&state)
                            ),
                        });
                    }
                }
            }
            Ok(ViolationReport {
                property: Property::Epir,
                cases,
                worst,
                tolerance: tol,
                passed: worst >= -tol,
                witness,
            })
        }
    }
}

/// Round-level budget diagnostics for a trajectory. Positive round sums
/// mean the designer paid out more than it collected.
#[derive(Clone, Debug)]
pub struct BudgetSummary {
    pub rounds: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub deficit_rounds: usize,
}

pub fn budget_metrics(trajectory: &Trajectory) -> BudgetSummary {
    let sums: Vec<f64> = trajectory.outcomes.iter().map(|o| o.budget).collect();
    if sums.is_empty() {
        return BudgetSummary { rounds: 0, min: 0.0, max: 0.0, mean: 0.0, deficit_rounds: 0 };
    }
    let min = sums.iter().copied().fold(f64::INFINITY, f64::min);
    let max = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = sums.iter().sum::<f64>() / sums.len() as f64;
    let deficit_rounds = sums.iter().filter(|&&s| s > 0.0).count();
    BudgetSummary { rounds: sums.len(), min, max, mean, deficit_rounds }
}

/// Configuration of the pivot-baseline counterexample search.
#[derive(Clone, Debug)]
pub struct DpmSearchConfig {
    pub instances: usize,
    pub seed: u64,
    pub generator: GeneratorConfig,
    /// Qualifying pivot-baseline deviation gain.
    pub dpm_gain_min: f64,
    /// Ceiling the two-stage mechanism must stay under on the same instance.
    pub matrix_gain_max: f64,
    pub solver_tol: f64,
    pub grid_steps: usize,
}

impl Default for DpmSearchConfig {
    fn default() -> DpmSearchConfig {
        DpmSearchConfig {
            instances: 1000,
            seed: 7,
            generator: GeneratorConfig::dpm_search(),
            dpm_gain_min: 1e-6,
            matrix_gain_max: DEFAULT_CHECK_TOL,
            solver_tol: DEFAULT_TOL,
            grid_steps: DEFAULT_GRID_STEPS,
        }
    }
}

/// A scenario on which the pivot baseline is profitably manipulable while
/// the two-stage mechanism is not.
#[derive(Clone, Debug)]
pub struct DpmWitness {
    pub scenario: Scenario,
    pub instance: usize,
    pub state: Vec<usize>,
    pub agent: usize,
    pub reported_type: usize,
    pub dpm_gain: f64,
    pub matrix_worst_gain: f64,
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("search budget of {instances} instances exhausted without a qualifying witness")]
    BudgetExhausted { instances: usize },
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Scans seeded random instances for the first one where the pivot
/// baseline admits a deviation gain above `dpm_gain_min` while the
/// two-stage mechanism's worst gain stays within `matrix_gain_max`.
/// Private-value generators never qualify: there the two payment rules
/// coincide and both are truthful.
pub fn find_dpm_counterexample(cfg: &DpmSearchConfig) -> Result<DpmWitness, SearchError> {
    for instance in 0..cfg.instances {
        let scenario = random_scenario(&cfg.generator, cfg.seed.wrapping_add(instance as u64))
            .with_id(format!("{}-{instance:04}", cfg.generator.id_prefix));
        let tables = solve_all(&scenario, cfg.solver_tol)?;
        let (dpm_gain, witness) = dpm_worst_gain(&scenario, &tables);
        if dpm_gain <= cfg.dpm_gain_min {
            continue;
        }
        let matrix = check_epic(&scenario, &tables, cfg.matrix_gain_max, cfg.grid_steps);
        if matrix.worst <= cfg.matrix_gain_max {
            let w = witness.expect("positive gain implies a witness");
            return Ok(DpmWitness {
                scenario,
                instance,
                state: w.state,
                agent: w.agent.expect("deviation witness has an agent"),
                reported_type: w.reported_type.expect("deviation witness has a report"),
                dpm_gain,
                matrix_worst_gain: matrix.worst,
            });
        }
    }
    Err(SearchError::BudgetExhausted { instances: cfg.instances })
}
