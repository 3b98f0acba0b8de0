//! Dynamic mechanism toolkit for exchange economies with interdependent
//! valuations and Markov-evolving agent types.
//!
//! The primary mechanism (`matrix` on the command line) combines an
//! MDP-based efficient allocation rule with a two-stage payment: agents
//! first report types and the welfare-maximizing subset is selected, then
//! selected agents report their realized valuations and transfers settle,
//! including a penalty for stage-2 reports inconsistent with the stage-1
//! reports. On subset-allocation, peer-influenced-valuation instances the
//! mechanism is efficient, within-period ex-post incentive compatible
//! (strictly so in the second stage), and individually rational; the
//! [`verifier`] certifies all of that numerically on finite instances and
//! separates the mechanism from a single-stage pivot baseline, which
//! interdependent valuations break.
//!
//! Modules:
//! - [`scenario`]: problem instances and their validation
//! - [`welfare`]: value-iteration solver for `W` and every `W_{-i}`
//! - [`mechanism`]: allocation, payments, baselines, one-round execution
//! - [`simulator`]: episodes, Monte Carlo, closed-form deviation utilities
//! - [`verifier`]: property checks and the counterexample search
//! - [`generator`]: seeded random instances
//! - [`report`]: CSV emission and re-ingestion

#![forbid(unsafe_code)]
// agent and type indices address several parallel tables at once
#![allow(clippy::needless_range_loop)]

pub mod allocation;
pub mod fixtures;
pub mod generator;
pub mod mechanism;
pub mod report;
pub mod scenario;
pub mod simulator;
pub mod verifier;
pub mod welfare;

pub use allocation::{enumerate_allocations, Allocation};
pub use mechanism::{Mechanism, Penalty, RoundOutcome, StrategyDomainError};
pub use scenario::{parse_scenario, Scenario, ScenarioBuilder, ScenarioError, StateSpace, TypeProfile};
pub use simulator::{StrategyProfile, Trajectory, UtilityEstimate};
pub use verifier::{DpmSearchConfig, DpmWitness, Property, SearchError, ViolationReport};
pub use welfare::{SolveError, SolvedTables, WelfareTable};
