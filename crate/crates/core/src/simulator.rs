//! Multi-round episodes, seeded Monte-Carlo utility estimation, and the
//! closed-form discounted utilities for truthful play and single-round
//! deviations.
//!
//! Under truthful play agent `i`'s exact discounted utility from state θ
//! is `W(θ) - W_{-i}(θ_{-i})`. A single deviation at the current round
//! (all other agents truthful forever, the deviator truthful afterwards)
//! has the closed form evaluated by [`exact_deviation_utility`]; by the
//! single-deviation principle no other strategy needs checking.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::mechanism::{
    allocate, consistent_value, const_payment, dpm_payment, matrix_payment, run_round,
    Mechanism, RoundOutcome, RoundStrategies, StrategyDomainError,
};
use crate::scenario::Scenario;
use crate::welfare::{expected_next_marginal, expected_next_welfare, SolvedTables};

/// Truncation target for the default Monte-Carlo horizon.
pub const DEFAULT_TRUNCATION_TARGET: f64 = 1e-3;

/// Stage-1 behavior: what an agent reports after observing its own type.
#[derive(Clone, Debug)]
pub enum Stage1Rule {
    Truthful,
    Fixed(usize),
    /// Report `map[true_type]`.
    Map(Vec<usize>),
}

impl Stage1Rule {
    fn apply(&self, true_type: usize) -> usize {
        match self {
            Stage1Rule::Truthful => true_type,
            Stage1Rule::Fixed(report) => *report,
            Stage1Rule::Map(map) => map[true_type],
        }
    }
}

/// Stage-2 behavior: a function of the agent's own realized valuation and
/// own stage-1 report only.
#[derive(Clone, Debug)]
pub enum Stage2Rule {
    Truthful,
    Fixed(f64),
    /// Report `true_value + offset`.
    Offset(f64),
}

impl Stage2Rule {
    fn apply(&self, true_value: f64) -> f64 {
        match self {
            Stage2Rule::Truthful => true_value,
            Stage2Rule::Fixed(report) => *report,
            Stage2Rule::Offset(off) => true_value + off,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AgentStrategy {
    pub stage_one: Stage1Rule,
    pub stage_two: Stage2Rule,
}

impl AgentStrategy {
    pub fn truthful() -> AgentStrategy {
        AgentStrategy { stage_one: Stage1Rule::Truthful, stage_two: Stage2Rule::Truthful }
    }
}

/// A one-round override for single-deviation experiments.
#[derive(Clone, Debug)]
pub struct Deviation {
    pub agent: usize,
    pub round: usize,
    pub stage_one: Option<Stage1Rule>,
    pub stage_two: Option<Stage2Rule>,
}

/// Per-agent strategies plus an optional single deviation.
#[derive(Clone, Debug)]
pub struct StrategyProfile {
    pub agents: Vec<AgentStrategy>,
    pub deviation: Option<Deviation>,
}

impl StrategyProfile {
    pub fn truthful(n: usize) -> StrategyProfile {
        StrategyProfile {
            agents: (0..n).map(|_| AgentStrategy::truthful()).collect(),
            deviation: None,
        }
    }

    pub fn with_deviation(n: usize, deviation: Deviation) -> StrategyProfile {
        let mut profile = StrategyProfile::truthful(n);
        profile.deviation = Some(deviation);
        profile
    }

    /// Truthful except agent reports `true value + offset` at `round`.
    pub fn stage_two_offset(n: usize, agent: usize, round: usize, offset: f64) -> StrategyProfile {
        StrategyProfile::with_deviation(
            n,
            Deviation { agent, round, stage_one: None, stage_two: Some(Stage2Rule::Offset(offset)) },
        )
    }

    /// Truthful except agent reports a fixed type at `round`.
    pub fn stage_one_fixed(n: usize, agent: usize, round: usize, report: usize) -> StrategyProfile {
        StrategyProfile::with_deviation(
            n,
            Deviation { agent, round, stage_one: Some(Stage1Rule::Fixed(report)), stage_two: None },
        )
    }
}

impl RoundStrategies for StrategyProfile {
    fn stage_one(&self, agent: usize, true_type: usize, round: usize) -> usize {
        if let Some(dev) = &self.deviation {
            if dev.agent == agent && dev.round == round {
                if let Some(rule) = &dev.stage_one {
                    return rule.apply(true_type);
                }
            }
        }
        self.agents[agent].stage_one.apply(true_type)
    }

    fn stage_two(&self, agent: usize, true_value: f64, _own_report: usize, round: usize) -> f64 {
        if let Some(dev) = &self.deviation {
            if dev.agent == agent && dev.round == round {
                if let Some(rule) = &dev.stage_two {
                    return rule.apply(true_value);
                }
            }
        }
        self.agents[agent].stage_two.apply(true_value)
    }
}

/// A simulated episode: outcomes round by round plus the realized
/// discounted utility `Σ_t δ^t (v_{i,t} + p_{i,t})` per agent.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub initial: Vec<usize>,
    pub outcomes: Vec<RoundOutcome>,
    pub discounted_utilities: Vec<f64>,
    pub seed: u64,
}

/// Monte-Carlo estimate of a discounted utility.
#[derive(Clone, Debug)]
pub struct UtilityEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub episodes: usize,
    pub horizon: usize,
    /// `δ^T (n·M + P_max) / (1-δ)`, the tail cut off by the horizon.
    pub truncation_bound: f64,
}

fn sample_row(rng: &mut ChaCha8Rng, row: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    row.len() - 1
}

fn sample_next(
    scenario: &Scenario,
    rng: &mut ChaCha8Rng,
    alloc: crate::allocation::Allocation,
    profile: &[usize],
) -> Vec<usize> {
    (0..scenario.n())
        .map(|i| sample_row(rng, scenario.transition_row(i, alloc, profile[i])))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn episode_with_rng(
    scenario: &Scenario,
    tables: &SolvedTables,
    mechanism: Mechanism,
    strategies: &StrategyProfile,
    initial: &[usize],
    horizon: usize,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> Result<Trajectory, StrategyDomainError> {
    let n = scenario.n();
    let mut profile = initial.to_vec();
    let mut outcomes = Vec::with_capacity(horizon);
    for round in 0..horizon {
        let outcome = run_round(scenario, tables, mechanism, &profile, strategies, round)?;
        profile = sample_next(scenario, rng, outcome.allocation, &profile);
        outcomes.push(outcome);
    }
    let mut discounted = vec![0.0; n];
    let mut weight = 1.0;
    for outcome in &outcomes {
        for (i, slot) in discounted.iter_mut().enumerate() {
            *slot += weight * outcome.utilities[i];
        }
        weight *= scenario.delta();
    }
    Ok(Trajectory { initial: initial.to_vec(), outcomes, discounted_utilities: discounted, seed })
}

/// Simulates one episode; everything downstream of `seed` is
/// deterministic.
#[allow(clippy::too_many_arguments)]
pub fn simulate_episode(
    scenario: &Scenario,
    tables: &SolvedTables,
    mechanism: Mechanism,
    strategies: &StrategyProfile,
    initial: &[usize],
    horizon: usize,
    seed: u64,
) -> Result<Trajectory, StrategyDomainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    episode_with_rng(scenario, tables, mechanism, strategies, initial, horizon, &mut rng, seed)
}

/// Mean and standard error of the realized discounted utility of `agent`
/// over independent episodes. One root seed; episode `k` draws from
/// stream `k+1` of that seed, so runs are reproducible and episodes can
/// execute in parallel.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_utility(
    scenario: &Scenario,
    tables: &SolvedTables,
    mechanism: Mechanism,
    strategies: &StrategyProfile,
    initial: &[usize],
    agent: usize,
    horizon: usize,
    episodes: usize,
    seed: u64,
) -> Result<UtilityEstimate, StrategyDomainError> {
    assert!(episodes >= 1, "at least one episode required");
    let samples: Vec<f64> = (0..episodes)
        .into_par_iter()
        .map(|ep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(ep as u64 + 1);
            episode_with_rng(
                scenario, tables, mechanism, strategies, initial, horizon, &mut rng, seed,
            )
            .map(|t| t.discounted_utilities[agent])
        })
        .collect::<Result<_, _>>()?;
    let mean = samples.iter().sum::<f64>() / episodes as f64;
    let std_error = if episodes > 1 {
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
            / (episodes - 1) as f64;
        (var / episodes as f64).sqrt()
    } else {
        0.0
    };
    Ok(UtilityEstimate {
        mean,
        std_error,
        episodes,
        horizon,
        truncation_bound: truncation_bound(scenario, payment_bound(scenario, tables, mechanism), horizon),
    })
}

/// Exact ex-post equilibrium utility under all-truthful play:
/// `W(θ) - W_{-i}(θ_{-i})`.
pub fn exact_truthful_utility(
    scenario: &Scenario,
    tables: &SolvedTables,
    profile: &[usize],
    agent: usize,
) -> f64 {
    tables.welfare_at(scenario, profile) - tables.marginal_at(scenario, agent, profile)
}

/// Exact discounted utility when agent `i` misreports `(θ̂_i, v̂_i)` this
/// round while everyone, including `i` from the next round on, plays
/// truthfully:
///
/// ```text
/// Σ_j v_j(a*(θ̂), θ)  +  δ·E_{θ'|a*,θ̂}[W_{-i}]  -  W_{-i}(θ_{-i})
///   -  g(v̂_i, v_i(a*(θ̂), θ̂))  +  δ·E_{θ'|a*,θ}[W - W_{-i}]
/// ```
///
/// At `θ̂_i = θ_i` and a consistent `v̂_i` this collapses to
/// [`exact_truthful_utility`].
pub fn exact_deviation_utility(
    scenario: &Scenario,
    tables: &SolvedTables,
    profile: &[usize],
    agent: usize,
    reported_type: usize,
    reported_value: f64,
) -> f64 {
    let mut reported = profile.to_vec();
    reported[agent] = reported_type;
    let alloc = allocate(scenario, tables, &reported);
    let delta = scenario.delta();

    // realized valuations carry the true types; reports act through a* only
    let current: f64 = scenario.stage_values(alloc, profile).iter().sum();
    let penalty = scenario
        .penalty()
        .apply(reported_value, consistent_value(scenario, agent, alloc, &reported));
    let marginal = &tables.marginals[agent];
    let cont_reported = expected_next_marginal(scenario, marginal, alloc, &reported);
    let cont_welfare = expected_next_welfare(scenario, &tables.welfare.values, alloc, profile);
    let cont_marginal = expected_next_marginal(scenario, marginal, alloc, profile);

    current + delta * cont_reported - tables.marginal_at(scenario, agent, profile) - penalty
        + delta * (cont_welfare - cont_marginal)
}

/// The same single-deviation utility under the single-stage pivot
/// baseline: the designer imputes the other agents' valuations from the
/// reported profile, so the deviator's misreport leaks into the sum.
pub fn exact_dpm_deviation_utility(
    scenario: &Scenario,
    tables: &SolvedTables,
    profile: &[usize],
    agent: usize,
    reported_type: usize,
) -> f64 {
    let mut reported = profile.to_vec();
    reported[agent] = reported_type;
    let alloc = allocate(scenario, tables, &reported);
    let delta = scenario.delta();

    let own = scenario.value(agent, alloc, profile);
    let mut others = 0.0;
    for j in 0..scenario.n() {
        if j != agent {
            others += scenario.value(j, alloc, &reported);
        }
    }
    let marginal = &tables.marginals[agent];
    let cont_reported = expected_next_marginal(scenario, marginal, alloc, &reported);
    let cont_welfare = expected_next_welfare(scenario, &tables.welfare.values, alloc, profile);
    let cont_marginal = expected_next_marginal(scenario, marginal, alloc, profile);

    own + others + delta * cont_reported - tables.marginal_at(scenario, agent, profile)
        + delta * (cont_welfare - cont_marginal)
}

/// Max |payment| over all states under truthful play; enters the
/// truncation bound.
pub fn payment_bound(scenario: &Scenario, tables: &SolvedTables, mechanism: Mechanism) -> f64 {
    let space = scenario.state_space();
    let mut bound = 0.0f64;
    for idx in 0..space.count() {
        let state = space.profile(idx);
        let payments = match mechanism {
            Mechanism::Matrix => {
                let alloc = allocate(scenario, tables, &state);
                let consistent: Vec<f64> = (0..scenario.n())
                    .map(|i| consistent_value(scenario, i, alloc, &state))
                    .collect();
                matrix_payment(scenario, tables, &state, &consistent)
            }
            Mechanism::Dpm => dpm_payment(scenario, tables, &state),
            Mechanism::Const => {
                let alloc = allocate(scenario, tables, &state);
                const_payment(scenario, alloc, scenario.const_price())
            }
        };
        for p in payments {
            bound = bound.max(p.abs());
        }
    }
    bound
}

/// `δ^T (n·M + P_max) / (1-δ)`.
pub fn truncation_bound(scenario: &Scenario, payment_bound: f64, horizon: usize) -> f64 {
    let per_round = scenario.n() as f64 * scenario.bound() + payment_bound;
    scenario.delta().powi(horizon as i32) * per_round / (1.0 - scenario.delta())
}

/// Smallest horizon whose truncation bound is below
/// [`DEFAULT_TRUNCATION_TARGET`].
pub fn default_horizon(scenario: &Scenario, tables: &SolvedTables, mechanism: Mechanism) -> usize {
    horizon_for_target(scenario, payment_bound(scenario, tables, mechanism), DEFAULT_TRUNCATION_TARGET)
}

/// Smallest horizon T ≥ 1 with `δ^T (n·M + P_max)/(1-δ) < target`.
pub fn horizon_for_target(scenario: &Scenario, payment_bound: f64, target: f64) -> usize {
    let delta = scenario.delta();
    let c = (scenario.n() as f64 * scenario.bound() + payment_bound) / (1.0 - delta);
    if c < target {
        return 1;
    }
    let mut t = ((target / c).ln() / delta.ln()).ceil().max(1.0) as usize;
    while scenario.delta().powi(t as i32) * c >= target && t < 1_000_000 {
        t += 1;
    }
    t
}
