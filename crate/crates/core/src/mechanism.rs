//! One round of the two-stage mechanism and its baselines.
//!
//! Stage 1: agents report types, the designer picks the welfare-maximizing
//! allocation at the reported profile. Stage 2: selected agents observe
//! their realized valuations (true types inside the valuation, reports
//! only via the allocation) and report values; payments settle as
//!
//! ```text
//! p_i = Σ_{j≠i} v̂_j  +  δ·E_{θ'|a*,θ̂}[W_{-i}(θ'_{-i})]  -  W_{-i}(θ̂_{-i})
//!       -  g(v̂_i, v_i(a*, θ̂_{a*}))
//! ```
//!
//! where the last term penalizes a stage-2 report that is inconsistent
//! with the stage-1 reports. Two baselines share the allocation rule:
//! `dpm` replaces the stage-2 reports with valuations evaluated at the
//! reported types (no penalty, no second stage), and `const` pays a fixed
//! price per selected worker, charged to a designated owner.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::allocation::Allocation;
use crate::scenario::Scenario;
use crate::welfare::{expected_next_marginal, SolvedTables};

/// Consistency penalty `g(x, ℓ) ≥ 0` with `g = 0` iff `x = ℓ`.
///
/// `Disabled` turns the penalty off; it exists only for ablation
/// experiments and deliberately violates the zero-iff-diagonal contract.
#[derive(Clone, Debug, PartialEq)]
pub enum Penalty {
    Quadratic,
    Absolute,
    ScaledQuadratic(f64),
    Disabled,
}

impl Penalty {
    /// `g(report, consistent)`.
    pub fn apply(&self, report: f64, consistent: f64) -> f64 {
        match self {
            Penalty::Quadratic => {
                let d = report - consistent;
                d * d
            }
            Penalty::Absolute => (report - consistent).abs(),
            Penalty::ScaledQuadratic(c) => {
                let d = report - consistent;
                c * d * d
            }
            Penalty::Disabled => 0.0,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        match self {
            Penalty::ScaledQuadratic(c) if !(c.is_finite() && *c > 0.0) => Err(format!(
                "scaled penalty coefficient must be positive and finite, got {c}"
            )),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Penalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Penalty::Quadratic => write!(f, "quadratic"),
            Penalty::Absolute => write!(f, "absolute"),
            Penalty::ScaledQuadratic(c) => write!(f, "scaled:{}", crate::report::fmt_float(*c)),
            Penalty::Disabled => write!(f, "disabled"),
        }
    }
}

impl FromStr for Penalty {
    type Err = String;

    fn from_str(s: &str) -> Result<Penalty, String> {
        match s {
            "quadratic" => Ok(Penalty::Quadratic),
            "absolute" => Ok(Penalty::Absolute),
            "disabled" => Ok(Penalty::Disabled),
            other => {
                if let Some(c) = other.strip_prefix("scaled:") {
                    let c: f64 = c
                        .parse()
                        .map_err(|_| format!("bad scaled penalty coefficient `{c}`"))?;
                    Ok(Penalty::ScaledQuadratic(c))
                } else {
                    Err(format!(
                        "unknown penalty `{other}`: expected quadratic, absolute, scaled:<c>, or disabled"
                    ))
                }
            }
        }
    }
}

/// Which payment rule settles the round. All three share the allocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mechanism {
    Matrix,
    Dpm,
    Const,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mechanism::Matrix => write!(f, "matrix"),
            Mechanism::Dpm => write!(f, "dpm"),
            Mechanism::Const => write!(f, "const"),
        }
    }
}

impl FromStr for Mechanism {
    type Err = String;

    fn from_str(s: &str) -> Result<Mechanism, String> {
        match s {
            "matrix" => Ok(Mechanism::Matrix),
            "dpm" => Ok(Mechanism::Dpm),
            "const" => Ok(Mechanism::Const),
            other => Err(format!("unknown mechanism `{other}`: expected matrix, dpm, or const")),
        }
    }
}

/// A stage-1 strategy returned a type outside the agent's space.
#[derive(Debug, Error)]
#[error("agent {agent} reported type {report} outside its {size}-type space")]
pub struct StrategyDomainError {
    pub agent: usize,
    pub report: usize,
    pub size: usize,
}

/// What agents know when they act. Stage 2 sees only the agent's own
/// realized valuation and own stage-1 report: other agents' reports are
/// never revealed, which is what makes truthful play an ex-post Nash
/// equilibrium rather than a subgame-perfect one.
pub trait RoundStrategies {
    fn stage_one(&self, agent: usize, true_type: usize, round: usize) -> usize;
    fn stage_two(&self, agent: usize, true_value: f64, own_report: usize, round: usize) -> f64;
}

/// Everything observable about one settled round.
#[derive(Clone, Debug)]
pub struct RoundOutcome {
    pub round: usize,
    pub true_profile: Vec<usize>,
    pub reported_profile: Vec<usize>,
    pub allocation: Allocation,
    pub true_values: Vec<f64>,
    pub reported_values: Vec<f64>,
    pub payments: Vec<f64>,
    pub penalties: Vec<f64>,
    /// Per-agent round utility `v_i + p_i`.
    pub utilities: Vec<f64>,
    /// `Σ_i p_i`; positive means the designer ran a deficit this round.
    pub budget: f64,
}

/// Welfare-maximizing allocation at the reported profile.
pub fn allocate(scenario: &Scenario, tables: &SolvedTables, reports: &[usize]) -> Allocation {
    tables.policy.allocations[scenario.state_space().index(reports)]
}

/// The stage-2 report that incurs zero penalty: the valuation agent `i`
/// would experience if the stage-1 reports were the truth.
pub fn consistent_value(
    scenario: &Scenario,
    agent: usize,
    alloc: Allocation,
    reports: &[usize],
) -> f64 {
    scenario.value(agent, alloc, reports)
}

/// Two-stage payments at the reported types and reported values.
pub fn matrix_payment(
    scenario: &Scenario,
    tables: &SolvedTables,
    stage_one: &[usize],
    stage_two: &[f64],
) -> Vec<f64> {
    let alloc = allocate(scenario, tables, stage_one);
    let delta = scenario.delta();
    (0..scenario.n())
        .map(|i| {
            let mut others = 0.0;
            for (j, &report) in stage_two.iter().enumerate() {
                if j != i {
                    others += report;
                }
            }
            let cont = expected_next_marginal(scenario, &tables.marginals[i], alloc, stage_one);
            let base = others + delta * cont - tables.marginal_at(scenario, i, stage_one);
            let penalty = scenario
                .penalty()
                .apply(stage_two[i], consistent_value(scenario, i, alloc, stage_one));
            base - penalty
        })
        .collect()
}

/// Single-stage pivot baseline: stage-2 reports are replaced by the
/// valuations evaluated at the reported type profile, and there is no
/// penalty. Under private values this coincides with the two-stage
/// payment at consistent reports; with interdependent values it does not.
pub fn dpm_payment(scenario: &Scenario, tables: &SolvedTables, stage_one: &[usize]) -> Vec<f64> {
    let alloc = allocate(scenario, tables, stage_one);
    let delta = scenario.delta();
    (0..scenario.n())
        .map(|i| {
            let mut others = 0.0;
            for j in 0..scenario.n() {
                if j != i {
                    others += scenario.value(j, alloc, stage_one);
                }
            }
            let cont = expected_next_marginal(scenario, &tables.marginals[i], alloc, stage_one);
            others + delta * cont - tables.marginal_at(scenario, i, stage_one)
        })
        .collect()
}

/// Fixed-price baseline: every selected worker receives `price`, the
/// owner pays `price` per selected worker, everyone else gets 0. Budget
/// balances to zero by construction.
pub fn const_payment(scenario: &Scenario, alloc: Allocation, price: f64) -> Vec<f64> {
    let owner = scenario.owner();
    let mut payments = vec![0.0; scenario.n()];
    let mut workers = 0usize;
    for m in alloc.members() {
        if m != owner {
            payments[m] = price;
            workers += 1;
        }
    }
    payments[owner] = -price * workers as f64;
    payments
}

/// Runs one full round of the selected mechanism: stage-1 reports,
/// allocation, valuation realization, stage-2 reports (when the mechanism
/// has a second stage), payments.
pub fn run_round<S: RoundStrategies>(
    scenario: &Scenario,
    tables: &SolvedTables,
    mechanism: Mechanism,
    true_profile: &[usize],
    strategies: &S,
    round: usize,
) -> Result<RoundOutcome, StrategyDomainError> {
    let n = scenario.n();
    let mut reported = Vec::with_capacity(n);
    for agent in 0..n {
        let report = strategies.stage_one(agent, true_profile[agent], round);
        if report >= scenario.type_count(agent) {
            return Err(StrategyDomainError { agent, report, size: scenario.type_count(agent) });
        }
        reported.push(report);
    }
    let allocation = allocate(scenario, tables, &reported);
    let true_values = scenario.stage_values(allocation, true_profile);

    let (reported_values, payments, penalties) = match mechanism {
        Mechanism::Matrix => {
            let reported_values: Vec<f64> = (0..n)
                .map(|agent| {
                    strategies.stage_two(agent, true_values[agent], reported[agent], round)
                })
                .collect();
            let payments = matrix_payment(scenario, tables, &reported, &reported_values);
            let penalties: Vec<f64> = (0..n)
                .map(|agent| {
                    scenario.penalty().apply(
                        reported_values[agent],
                        consistent_value(scenario, agent, allocation, &reported),
                    )
                })
                .collect();
            (reported_values, payments, penalties)
        }
        Mechanism::Dpm => {
            let imputed: Vec<f64> = (0..n)
                .map(|agent| scenario.value(agent, allocation, &reported))
                .collect();
            let payments = dpm_payment(scenario, tables, &reported);
            (imputed, payments, vec![0.0; n])
        }
        Mechanism::Const => {
            let payments = const_payment(scenario, allocation, scenario.const_price());
            (vec![0.0; n], payments, vec![0.0; n])
        }
    };

    let utilities: Vec<f64> = true_values
        .iter()
        .zip(&payments)
        .map(|(v, p)| v + p)
        .collect();
    let budget = payments.iter().sum();

    Ok(RoundOutcome {
        round,
        true_profile: true_profile.to_vec(),
        reported_profile: reported,
        allocation,
        true_values,
        reported_values,
        payments,
        penalties,
        utilities,
        budget,
    })
}

/// Two-stage round under the primary mechanism.
pub fn run_round_matrix<S: RoundStrategies>(
    scenario: &Scenario,
    tables: &SolvedTables,
    true_profile: &[usize],
    strategies: &S,
    round: usize,
) -> Result<RoundOutcome, StrategyDomainError> {
    run_round(scenario, tables, Mechanism::Matrix, true_profile, strategies, round)
}
