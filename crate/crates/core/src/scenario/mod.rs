//! Problem instances: agents, finite type spaces, valuation tables,
//! per-agent Markov transition kernels, and the discount factor.
//!
//! A [`Scenario`] is immutable once built. Construction goes through
//! [`ScenarioBuilder`] (or the text format via [`parse_scenario`]), which checks every
//! invariant up front: tables complete over their index sets, transition
//! rows stochastic, discount strictly inside (0, 1), valuations only for
//! selected agents, and all values bounded. After validation every lookup
//! is infallible.

mod parse;

pub use parse::{parse_scenario, write_scenario_string};

use std::fmt::Write as _;

use thiserror::Error;

use crate::allocation::{enumerate_allocations, Allocation, MAX_AGENTS};
use crate::mechanism::Penalty;

/// One joint assignment of a type to each agent, by type index.
pub type TypeProfile = Vec<usize>;

/// Row-major indexing over a product of finite per-agent type spaces.
///
/// The last axis varies fastest, so for two binary agents the order is
/// (0,0), (0,1), (1,0), (1,1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateSpace {
    sizes: Vec<usize>,
    strides: Vec<usize>,
    count: usize,
}

impl StateSpace {
    pub fn new(sizes: &[usize]) -> StateSpace {
        let mut strides = vec![0usize; sizes.len()];
        let mut acc = 1usize;
        for (k, &s) in sizes.iter().enumerate().rev() {
            strides[k] = acc;
            acc *= s;
        }
        StateSpace { sizes: sizes.to_vec(), strides, count: acc }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn index(&self, profile: &[usize]) -> usize {
        debug_assert_eq!(profile.len(), self.sizes.len());
        profile
            .iter()
            .zip(&self.strides)
            .map(|(&t, &s)| t * s)
            .sum()
    }

    pub fn profile(&self, index: usize) -> TypeProfile {
        let mut out = vec![0usize; self.sizes.len()];
        self.fill_profile(index, &mut out);
        out
    }

    pub fn fill_profile(&self, index: usize, out: &mut [usize]) {
        let mut rest = index;
        for (k, &s) in self.strides.iter().enumerate() {
            out[k] = rest / s;
            rest %= s;
        }
    }

    /// All profiles in index order.
    pub fn profiles(&self) -> impl Iterator<Item = TypeProfile> + '_ {
        (0..self.count).map(|i| self.profile(i))
    }
}

/// Everything that can go wrong while building or parsing a scenario.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing table entry: {0}")]
    MissingTableEntry(String),
    #[error("transition row not stochastic for {context}: sum = {sum}")]
    RowNotStochastic { context: String, sum: f64 },
    #[error("key `delta` must lie strictly inside (0, 1), got {0}")]
    DiscountOutOfRange(f64),
    #[error("valuation declared for agent {agent} who is not in allocation {alloc}")]
    NonZeroOutsideAllocation { agent: usize, alloc: Allocation },
    #[error("duplicate entry: {0}")]
    DuplicateEntry(String),
    #[error("declared bound {declared} exceeded: max |v| found is {actual}")]
    BoundExceeded { declared: f64, actual: f64 },
    #[error("scenario too large: {0}")]
    TooLarge(String),
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, ScenarioError>;

/// Dense valuation tables `v_i(a, types of a's members)`, stored only for
/// allocations that contain agent `i`. Unselected agents value 0 by
/// construction.
#[derive(Clone, Debug)]
pub struct ValuationModel {
    n: usize,
    sizes: Vec<usize>,
    // indexed agent * 2^n + mask bits; Some iff agent in mask
    tables: Vec<Option<Vec<f64>>>,
    bound: f64,
}

impl ValuationModel {
    /// Index of a restricted profile within a member table: members in
    /// ascending agent order, the last member varying fastest.
    fn restricted_index(&self, alloc: Allocation, member_types: &[usize]) -> usize {
        let mut idx = 0usize;
        for (m, &t) in alloc.members().zip(member_types) {
            idx = idx * self.sizes[m] + t;
        }
        idx
    }

    /// `v_i(a, θ_a)` given the types of `a`'s members in ascending agent
    /// order; exactly 0 when `i` is not selected.
    pub fn value_for_members(&self, agent: usize, alloc: Allocation, member_types: &[usize]) -> f64 {
        match &self.tables[agent * (1 << self.n) + alloc.bits() as usize] {
            Some(table) => table[self.restricted_index(alloc, member_types)],
            None => 0.0,
        }
    }

    /// Max |v| over all tables.
    pub fn bound(&self) -> f64 {
        self.bound
    }
}

/// Per-agent type transition kernels, indexed by the chosen allocation.
///
/// The common case only distinguishes whether the agent is selected, so a
/// kernel can be declared as a selected/unselected pair; a fully
/// allocation-dependent table is also supported. Rows are renormalized on
/// validation so stored rows sum to 1 to within 1e-12.
#[derive(Clone, Debug)]
pub enum AgentKernel {
    Membership { selected: Vec<Vec<f64>>, unselected: Vec<Vec<f64>> },
    PerAllocation(Vec<Vec<Vec<f64>>>),
}

#[derive(Clone, Debug)]
pub struct TransitionModel {
    kernels: Vec<AgentKernel>,
}

impl TransitionModel {
    /// Distribution over the agent's next type.
    pub fn row(&self, agent: usize, alloc: Allocation, from: usize) -> &[f64] {
        match &self.kernels[agent] {
            AgentKernel::Membership { selected, unselected } => {
                if alloc.contains(agent) {
                    &selected[from]
                } else {
                    &unselected[from]
                }
            }
            AgentKernel::PerAllocation(table) => &table[alloc.bits() as usize][from],
        }
    }
}

/// A validated problem instance.
#[derive(Clone, Debug)]
pub struct Scenario {
    id: String,
    labels: Vec<Vec<String>>,
    codes: Vec<Vec<f64>>,
    valuations: ValuationModel,
    transitions: TransitionModel,
    delta: f64,
    penalty: Penalty,
    owner: usize,
    const_price: f64,
    space: StateSpace,
}

impl Scenario {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn penalty(&self) -> &Penalty {
        &self.penalty
    }

    /// Agent designated as the paying side of the fixed-price baseline.
    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn const_price(&self) -> f64 {
        self.const_price
    }

    pub fn type_count(&self, agent: usize) -> usize {
        self.labels[agent].len()
    }

    pub fn type_label(&self, agent: usize, t: usize) -> &str {
        &self.labels[agent][t]
    }

    pub fn type_code(&self, agent: usize, t: usize) -> f64 {
        self.codes[agent][t]
    }

    /// Max |v_i(a, θ_a)| over every table cell.
    pub fn bound(&self) -> f64 {
        self.valuations.bound()
    }

    /// `n · M / (1 - δ)`, the cap on any welfare value.
    pub fn welfare_cap(&self) -> f64 {
        self.n() as f64 * self.bound() / (1.0 - self.delta)
    }

    pub fn state_space(&self) -> &StateSpace {
        &self.space
    }

    pub fn num_states(&self) -> usize {
        self.space.count()
    }

    /// Index space over the profiles of all agents except `excluded`.
    pub fn reduced_space(&self, excluded: usize) -> StateSpace {
        let sizes: Vec<usize> = (0..self.n())
            .filter(|&j| j != excluded)
            .map(|j| self.type_count(j))
            .collect();
        StateSpace::new(&sizes)
    }

    /// `profile` with agent `excluded` dropped.
    pub fn reduced_profile(&self, profile: &[usize], excluded: usize) -> TypeProfile {
        profile
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != excluded)
            .map(|(_, &t)| t)
            .collect()
    }

    /// All joint type profiles in row-major order.
    pub fn enumerate_states(&self) -> Vec<TypeProfile> {
        self.space.profiles().collect()
    }

    /// `v_i(a, θ_a)` read from a full joint profile; 0 when `i ∉ a`.
    pub fn value(&self, agent: usize, alloc: Allocation, profile: &[usize]) -> f64 {
        if !alloc.contains(agent) {
            return 0.0;
        }
        let member_types: Vec<usize> = alloc.members().map(|m| profile[m]).collect();
        self.valuations.value_for_members(agent, alloc, &member_types)
    }

    /// `v_i(a, θ_a)` given member types directly (ascending member order).
    pub fn valuation_for_members(&self, agent: usize, alloc: Allocation, member_types: &[usize]) -> f64 {
        self.valuations.value_for_members(agent, alloc, member_types)
    }

    /// Per-agent valuations under `alloc` at the joint profile.
    pub fn stage_values(&self, alloc: Allocation, profile: &[usize]) -> Vec<f64> {
        (0..self.n()).map(|i| self.value(i, alloc, profile)).collect()
    }

    /// Sum of the selected agents' valuations.
    pub fn stage_sum(&self, alloc: Allocation, profile: &[usize]) -> f64 {
        alloc.members().map(|i| self.value(i, alloc, profile)).sum()
    }

    pub fn transition_row(&self, agent: usize, alloc: Allocation, from: usize) -> &[f64] {
        self.transitions.row(agent, alloc, from)
    }

    /// Full joint next-profile distribution `Π_i F_i(θ'_i | a, θ_i)`, in
    /// state-space index order.
    pub fn joint_transition(&self, profile: &[usize], alloc: Allocation) -> Vec<f64> {
        let rows: Vec<&[f64]> = (0..self.n())
            .map(|i| self.transition_row(i, alloc, profile[i]))
            .collect();
        let mut dist = vec![0.0; self.num_states()];
        let mut next = vec![0usize; self.n()];
        for (idx, slot) in dist.iter_mut().enumerate() {
            self.space.fill_profile(idx, &mut next);
            let mut p = 1.0;
            for (i, row) in rows.iter().enumerate() {
                p *= row[next[i]];
                if p == 0.0 {
                    break;
                }
            }
            *slot = p;
        }
        dist
    }

    /// Type labels of a profile joined with `;`, e.g. `lo;hi`.
    pub fn state_label(&self, profile: &[usize]) -> String {
        let mut out = String::new();
        for (agent, &t) in profile.iter().enumerate() {
            if agent > 0 {
                out.push(';');
            }
            let _ = write!(out, "{}", self.labels[agent][t]);
        }
        out
    }

    /// Labels of a reduced profile (agents `j != excluded`), joined with `;`.
    pub fn reduced_state_label(&self, reduced: &[usize], excluded: usize) -> String {
        let mut out = String::new();
        let mut first = true;
        for (pos, agent) in (0..self.n()).filter(|&j| j != excluded).enumerate() {
            if !first {
                out.push(';');
            }
            first = false;
            let _ = write!(out, "{}", self.labels[agent][reduced[pos]]);
        }
        out
    }

    /// Resolve a `;`-joined label tuple back to a profile.
    pub fn profile_from_label(&self, label: &str) -> Result<TypeProfile> {
        let parts: Vec<&str> = if label.is_empty() { vec![] } else { label.split(';').collect() };
        if parts.len() != self.n() {
            return Err(ScenarioError::Invalid(format!(
                "state label `{label}` has {} fields, expected {}",
                parts.len(),
                self.n()
            )));
        }
        parts
            .iter()
            .enumerate()
            .map(|(agent, lab)| {
                self.labels[agent]
                    .iter()
                    .position(|l| l == lab)
                    .ok_or_else(|| {
                        ScenarioError::Invalid(format!(
                            "unknown type label `{lab}` for agent {agent}"
                        ))
                    })
            })
            .collect()
    }

    /// Copy with the penalty replaced; used for the ablation experiments
    /// and the `--penalty` override.
    pub fn with_penalty(&self, penalty: Penalty) -> Scenario {
        let mut s = self.clone();
        s.penalty = penalty;
        s
    }

    pub fn with_id(&self, id: impl Into<String>) -> Scenario {
        let mut s = self.clone();
        s.id = id.into();
        s
    }
}

/// Kernel key a transition row was declared under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransitionKey {
    Selected,
    Unselected,
    ForAllocation(Allocation),
}

#[derive(Clone, Debug)]
struct ValuationEntry {
    agent: usize,
    alloc: Allocation,
    member_types: Vec<usize>,
    value: f64,
}

#[derive(Clone, Debug)]
struct TransitionEntry {
    agent: usize,
    key: TransitionKey,
    from: usize,
    to: usize,
    prob: f64,
}

/// Accumulates a raw description and validates it into a [`Scenario`].
#[derive(Clone, Debug)]
pub struct ScenarioBuilder {
    id: String,
    labels: Vec<Vec<String>>,
    codes: Vec<Vec<f64>>,
    valuations: Vec<ValuationEntry>,
    transitions: Vec<TransitionEntry>,
    delta: Option<f64>,
    penalty: Penalty,
    owner: usize,
    const_price: f64,
    declared_bound: Option<f64>,
}

impl ScenarioBuilder {
    pub fn new(id: impl Into<String>) -> ScenarioBuilder {
        ScenarioBuilder {
            id: id.into(),
            labels: Vec::new(),
            codes: Vec::new(),
            valuations: Vec::new(),
            transitions: Vec::new(),
            delta: None,
            penalty: Penalty::Quadratic,
            owner: 0,
            const_price: 1.0,
            declared_bound: None,
        }
    }

    /// Adds an agent whose types carry the given labels; numeric codes
    /// default to the type index.
    pub fn agent(self, labels: &[&str]) -> ScenarioBuilder {
        let codes: Vec<f64> = (0..labels.len()).map(|k| k as f64).collect();
        self.agent_with_codes(labels, &codes)
    }

    pub fn agent_with_codes(mut self, labels: &[&str], codes: &[f64]) -> ScenarioBuilder {
        self.labels.push(labels.iter().map(|s| s.to_string()).collect());
        self.codes.push(codes.to_vec());
        self
    }

    /// Declares `v_agent(members, types) = value`. `types` follow the
    /// ascending member order.
    pub fn value(mut self, agent: usize, members: &[usize], types: &[usize], value: f64) -> ScenarioBuilder {
        self.valuations.push(ValuationEntry {
            agent,
            alloc: Allocation::from_members(members.iter().copied()),
            member_types: types.to_vec(),
            value,
        });
        self
    }

    pub fn transition(mut self, agent: usize, key: TransitionKey, from: usize, to: usize, prob: f64) -> ScenarioBuilder {
        self.transitions.push(TransitionEntry { agent, key, from, to, prob });
        self
    }

    /// Declares a selected/unselected kernel pair from dense row matrices.
    pub fn membership_kernel(mut self, agent: usize, selected: &[Vec<f64>], unselected: &[Vec<f64>]) -> ScenarioBuilder {
        for (key, rows) in [
            (TransitionKey::Selected, selected),
            (TransitionKey::Unselected, unselected),
        ] {
            for (from, row) in rows.iter().enumerate() {
                for (to, &p) in row.iter().enumerate() {
                    self.transitions.push(TransitionEntry { agent, key, from, to, prob: p });
                }
            }
        }
        self
    }

    /// Identity kernels (types never change) for every declared agent.
    pub fn identity_kernels(mut self) -> ScenarioBuilder {
        for agent in 0..self.labels.len() {
            let k = self.labels[agent].len();
            for key in [TransitionKey::Selected, TransitionKey::Unselected] {
                for from in 0..k {
                    for to in 0..k {
                        self.transitions.push(TransitionEntry {
                            agent,
                            key,
                            from,
                            to,
                            prob: if from == to { 1.0 } else { 0.0 },
                        });
                    }
                }
            }
        }
        self
    }

    pub fn delta(mut self, delta: f64) -> ScenarioBuilder {
        self.delta = Some(delta);
        self
    }

    pub fn penalty(mut self, penalty: Penalty) -> ScenarioBuilder {
        self.penalty = penalty;
        self
    }

    pub fn owner(mut self, owner: usize) -> ScenarioBuilder {
        self.owner = owner;
        self
    }

    pub fn const_price(mut self, price: f64) -> ScenarioBuilder {
        self.const_price = price;
        self
    }

    pub fn declared_bound(mut self, bound: f64) -> ScenarioBuilder {
        self.declared_bound = Some(bound);
        self
    }

    /// Validates every invariant and produces the immutable scenario.
    pub fn build(self) -> Result<Scenario> {
        let n = self.labels.len();
        if n == 0 {
            return Err(ScenarioError::Invalid("no agents declared".into()));
        }
        if n > MAX_AGENTS {
            return Err(ScenarioError::TooLarge(format!(
                "{n} agents exceeds the supported maximum of {MAX_AGENTS}"
            )));
        }
        let mut sizes = Vec::with_capacity(n);
        let mut state_count = 1usize;
        for (agent, labels) in self.labels.iter().enumerate() {
            if labels.is_empty() {
                return Err(ScenarioError::Invalid(format!("agent {agent} declares no types")));
            }
            if self.codes[agent].len() != labels.len() {
                return Err(ScenarioError::Invalid(format!(
                    "agent {agent}: {} codes for {} labels",
                    self.codes[agent].len(),
                    labels.len()
                )));
            }
            for (k, lab) in labels.iter().enumerate() {
                if labels[..k].contains(lab) {
                    return Err(ScenarioError::DuplicateEntry(format!(
                        "type label `{lab}` for agent {agent}"
                    )));
                }
            }
            sizes.push(labels.len());
            state_count = state_count
                .checked_mul(labels.len())
                .filter(|&c| c <= 1 << 31)
                .ok_or_else(|| {
                    ScenarioError::TooLarge("joint state count exceeds 2^31".into())
                })?;
        }

        let delta = self.delta.ok_or_else(|| {
            ScenarioError::MissingTableEntry("params key `delta`".into())
        })?;
        if !(delta > 0.0 && delta < 1.0) {
            return Err(ScenarioError::DiscountOutOfRange(delta));
        }
        if self.owner >= n {
            return Err(ScenarioError::Invalid(format!(
                "owner index {} out of range for {n} agents",
                self.owner
            )));
        }
        if self.const_price < 0.0 || self.const_price.is_nan() {
            return Err(ScenarioError::Invalid(format!(
                "const_price must be non-negative, got {}",
                self.const_price
            )));
        }
        self.penalty.validate().map_err(ScenarioError::Invalid)?;

        let valuations = build_valuations(n, &sizes, &self.labels, &self.valuations)?;
        if let Some(declared) = self.declared_bound {
            if valuations.bound() > declared {
                return Err(ScenarioError::BoundExceeded {
                    declared,
                    actual: valuations.bound(),
                });
            }
        }
        let transitions = build_transitions(n, &sizes, &self.labels, &self.transitions)?;

        Ok(Scenario {
            id: self.id,
            labels: self.labels,
            codes: self.codes,
            valuations,
            transitions,
            delta,
            penalty: self.penalty,
            owner: self.owner,
            const_price: self.const_price,
            space: StateSpace::new(&sizes),
        })
    }
}

fn build_valuations(
    n: usize,
    sizes: &[usize],
    labels: &[Vec<String>],
    entries: &[ValuationEntry],
) -> Result<ValuationModel> {
    let mask_count = 1usize << n;
    let mut tables: Vec<Option<Vec<f64>>> = vec![None; n * mask_count];
    let mut filled: Vec<Vec<bool>> = Vec::new();

    // allocate a table for every (agent, allocation containing the agent)
    let mut total_cells = 0usize;
    for agent in 0..n {
        for alloc in enumerate_allocations(n, None) {
            if !alloc.contains(agent) {
                continue;
            }
            let cells: usize = alloc.members().map(|m| sizes[m]).product();
            total_cells = total_cells.checked_add(cells).ok_or_else(|| {
                ScenarioError::TooLarge("valuation table cell count overflows".into())
            })?;
            if total_cells > 1 << 27 {
                return Err(ScenarioError::TooLarge(
                    "valuation tables exceed 2^27 cells".into(),
                ));
            }
            tables[agent * mask_count + alloc.bits() as usize] = Some(vec![0.0; cells]);
            filled.push(vec![false; cells]);
        }
    }
    // map (agent, mask) -> position in `filled`
    let mut fill_pos = vec![usize::MAX; n * mask_count];
    {
        let mut next = 0usize;
        for agent in 0..n {
            for alloc in enumerate_allocations(n, None) {
                if alloc.contains(agent) {
                    fill_pos[agent * mask_count + alloc.bits() as usize] = next;
                    next += 1;
                }
            }
        }
    }

    let mut bound = 0.0f64;
    let model_sizes = sizes.to_vec();
    let restricted_index = |alloc: Allocation, types: &[usize]| -> usize {
        let mut idx = 0usize;
        for (m, &t) in alloc.members().zip(types) {
            idx = idx * model_sizes[m] + t;
        }
        idx
    };

    for e in entries {
        if e.agent >= n {
            return Err(ScenarioError::Invalid(format!(
                "valuation references unknown agent {}",
                e.agent
            )));
        }
        if !e.alloc.contains(e.agent) {
            return Err(ScenarioError::NonZeroOutsideAllocation { agent: e.agent, alloc: e.alloc });
        }
        if e.alloc.members().any(|m| m >= n) {
            return Err(ScenarioError::Invalid(format!(
                "allocation {} references an undeclared agent",
                e.alloc
            )));
        }
        if e.member_types.len() != e.alloc.size() {
            return Err(ScenarioError::Invalid(format!(
                "valuation for agent {} under {} gives {} types for {} members",
                e.agent,
                e.alloc,
                e.member_types.len(),
                e.alloc.size()
            )));
        }
        for (m, &t) in e.alloc.members().zip(&e.member_types) {
            if t >= sizes[m] {
                return Err(ScenarioError::Invalid(format!(
                    "type index {t} out of range for agent {m}"
                )));
            }
        }
        if !e.value.is_finite() {
            return Err(ScenarioError::Invalid(format!(
                "non-finite valuation for agent {} under {}",
                e.agent, e.alloc
            )));
        }
        let slot = e.agent * mask_count + e.alloc.bits() as usize;
        let idx = restricted_index(e.alloc, &e.member_types);
        let seen = &mut filled[fill_pos[slot]][idx];
        if *seen {
            return Err(ScenarioError::DuplicateEntry(format!(
                "valuation for agent {} under {} at types {:?}",
                e.agent, e.alloc, e.member_types
            )));
        }
        *seen = true;
        tables[slot].as_mut().expect("table allocated above")[idx] = e.value;
        bound = bound.max(e.value.abs());
    }

    // every cell of every table must have been declared
    for agent in 0..n {
        for alloc in enumerate_allocations(n, None) {
            if !alloc.contains(agent) {
                continue;
            }
            let slot = agent * mask_count + alloc.bits() as usize;
            let flags = &filled[fill_pos[slot]];
            if let Some(missing) = flags.iter().position(|&f| !f) {
                // decode the restricted index back into labels for the message
                let members: Vec<usize> = alloc.members().collect();
                let mut rest = missing;
                let mut types = vec![0usize; members.len()];
                for k in (0..members.len()).rev() {
                    types[k] = rest % sizes[members[k]];
                    rest /= sizes[members[k]];
                }
                let tuple: Vec<&str> = members
                    .iter()
                    .zip(&types)
                    .map(|(&m, &t)| labels[m][t].as_str())
                    .collect();
                return Err(ScenarioError::MissingTableEntry(format!(
                    "valuation for agent {agent} under {alloc} at types ({})",
                    tuple.join(" ")
                )));
            }
        }
    }

    Ok(ValuationModel { n, sizes: model_sizes, tables, bound })
}

const ROW_SUM_TOLERANCE: f64 = 1e-9;

fn build_transitions(
    n: usize,
    sizes: &[usize],
    labels: &[Vec<String>],
    entries: &[TransitionEntry],
) -> Result<TransitionModel> {
    use std::collections::BTreeMap;

    // group raw rows per agent, keeping track of the declaration style
    type RawRows = BTreeMap<(u64, usize), Vec<(usize, f64)>>;
    let mut by_agent: Vec<RawRows> = vec![BTreeMap::new(); n];
    let mut style: Vec<Option<bool>> = vec![None; n]; // Some(true) = membership

    let key_code = |key: TransitionKey| -> u64 {
        match key {
            TransitionKey::Selected => u64::MAX,
            TransitionKey::Unselected => u64::MAX - 1,
            TransitionKey::ForAllocation(a) => a.bits() as u64,
        }
    };

    for e in entries {
        if e.agent >= n {
            return Err(ScenarioError::Invalid(format!(
                "transition references unknown agent {}",
                e.agent
            )));
        }
        let membership = !matches!(e.key, TransitionKey::ForAllocation(_));
        match style[e.agent] {
            None => style[e.agent] = Some(membership),
            Some(s) if s != membership => {
                return Err(ScenarioError::Invalid(format!(
                    "agent {} mixes selected/unselected and per-allocation transition rows",
                    e.agent
                )));
            }
            _ => {}
        }
        if let TransitionKey::ForAllocation(a) = e.key {
            if a.members().any(|m| m >= n) {
                return Err(ScenarioError::Invalid(format!(
                    "transition allocation {a} references an undeclared agent"
                )));
            }
        }
        if e.from >= sizes[e.agent] || e.to >= sizes[e.agent] {
            return Err(ScenarioError::Invalid(format!(
                "transition type index out of range for agent {}",
                e.agent
            )));
        }
        let row = by_agent[e.agent].entry((key_code(e.key), e.from)).or_default();
        if row.iter().any(|&(to, _)| to == e.to) {
            return Err(ScenarioError::DuplicateEntry(format!(
                "transition for agent {} from `{}` to `{}`",
                e.agent, labels[e.agent][e.from], labels[e.agent][e.to]
            )));
        }
        row.push((e.to, e.prob));
    }

    let normalize = |agent: usize,
                     context: String,
                     raw: Option<&Vec<(usize, f64)>>|
     -> Result<Vec<f64>> {
        let raw = raw.ok_or_else(|| ScenarioError::MissingTableEntry(context.clone()))?;
        let mut row = vec![0.0f64; sizes[agent]];
        for &(to, p) in raw {
            if !(0.0..=1.0 + ROW_SUM_TOLERANCE).contains(&p) || !p.is_finite() {
                return Err(ScenarioError::RowNotStochastic {
                    context: context.clone(),
                    sum: p,
                });
            }
            row[to] = if p == 0.0 { 0.0 } else { p };
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(ScenarioError::RowNotStochastic { context, sum });
        }
        // Renormalize rows that are merely close; rows already within a few
        // ulps are kept verbatim so a serialize/parse round trip is stable.
        if (sum - 1.0).abs() > 1e-13 {
            for p in &mut row {
                *p /= sum;
            }
        }
        Ok(row)
    };

    let mut kernels = Vec::with_capacity(n);
    for agent in 0..n {
        let style_a = style[agent].ok_or_else(|| {
            ScenarioError::MissingTableEntry(format!("transition rows for agent {agent}"))
        })?;
        if style_a {
            let mut selected = Vec::with_capacity(sizes[agent]);
            let mut unselected = Vec::with_capacity(sizes[agent]);
            for from in 0..sizes[agent] {
                selected.push(normalize(
                    agent,
                    format!("transition (agent {agent}, selected, from `{}`)", labels[agent][from]),
                    by_agent[agent].get(&(key_code(TransitionKey::Selected), from)),
                )?);
                unselected.push(normalize(
                    agent,
                    format!(
                        "transition (agent {agent}, unselected, from `{}`)",
                        labels[agent][from]
                    ),
                    by_agent[agent].get(&(key_code(TransitionKey::Unselected), from)),
                )?);
            }
            kernels.push(AgentKernel::Membership { selected, unselected });
        } else {
            let mut table = Vec::with_capacity(1 << n);
            for alloc in enumerate_allocations(n, None) {
                let mut rows = Vec::with_capacity(sizes[agent]);
                for from in 0..sizes[agent] {
                    rows.push(normalize(
                        agent,
                        format!(
                            "transition (agent {agent}, {alloc}, from `{}`)",
                            labels[agent][from]
                        ),
                        by_agent[agent].get(&(key_code(TransitionKey::ForAllocation(alloc)), from)),
                    )?);
                }
                table.push(rows);
            }
            kernels.push(AgentKernel::PerAllocation(table));
        }
    }

    Ok(TransitionModel { kernels })
}

#[cfg(test)]
mod tests;
