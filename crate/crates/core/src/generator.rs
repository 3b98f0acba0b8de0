//! Seeded random scenario generation for test suites and searches.
//!
//! Valuations are drawn uniformly from [-1, 1] and rounded to three
//! decimals (rounding keeps argmax ties away from float noise);
//! transition rows are normalized uniform draws; the discount is drawn
//! from a configurable range. Draw order is fixed, so a seed pins the
//! instance exactly.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::allocation::enumerate_allocations;
use crate::scenario::{Scenario, ScenarioBuilder, StateSpace, TransitionKey};

#[derive(Clone, Debug)]
pub struct GeneratorConfig {
    pub id_prefix: String,
    pub min_agents: usize,
    pub max_agents: usize,
    pub min_types: usize,
    pub max_types: usize,
    /// Draw each agent's valuation as a function of its own type only.
    pub private_values: bool,
    pub delta_min: f64,
    pub delta_max: f64,
}

impl Default for GeneratorConfig {
    fn default() -> GeneratorConfig {
        GeneratorConfig {
            id_prefix: "rand".into(),
            min_agents: 1,
            max_agents: 3,
            min_types: 1,
            max_types: 3,
            private_values: false,
            delta_min: 0.3,
            delta_max: 0.9,
        }
    }
}

impl GeneratorConfig {
    /// The shape the pivot-baseline counterexample search uses: two or
    /// three agents with exactly two types each.
    pub fn dpm_search() -> GeneratorConfig {
        GeneratorConfig {
            id_prefix: "search".into(),
            min_agents: 2,
            max_agents: 3,
            min_types: 2,
            max_types: 2,
            ..GeneratorConfig::default()
        }
    }

    pub fn private(mut self) -> GeneratorConfig {
        self.private_values = true;
        self
    }
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

pub fn random_scenario(cfg: &GeneratorConfig, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(cfg.min_agents..=cfg.max_agents);
    let sizes: Vec<usize> = (0..n)
        .map(|_| rng.random_range(cfg.min_types..=cfg.max_types))
        .collect();
    let delta = round3(rng.random_range(cfg.delta_min..cfg.delta_max)).clamp(0.001, 0.999);

    let mut builder = ScenarioBuilder::new(format!("{}-{seed}", cfg.id_prefix));
    let labels: Vec<Vec<String>> = sizes
        .iter()
        .map(|&k| (0..k).map(|t| format!("t{t}")).collect())
        .collect();
    for agent_labels in &labels {
        let refs: Vec<&str> = agent_labels.iter().map(|s| s.as_str()).collect();
        builder = builder.agent(&refs);
    }

    for agent in 0..n {
        for alloc in enumerate_allocations(n, None) {
            if !alloc.contains(agent) {
                continue;
            }
            let members: Vec<usize> = alloc.members().collect();
            let own_pos = members.iter().position(|&m| m == agent).expect("member");
            // under private values the cell depends on the agent's own type
            let own_values: Option<Vec<f64>> = cfg.private_values.then(|| {
                (0..sizes[agent])
                    .map(|_| round3(rng.random_range(-1.0..1.0)))
                    .collect()
            });
            let member_sizes: Vec<usize> = members.iter().map(|&m| sizes[m]).collect();
            for types in StateSpace::new(&member_sizes).profiles() {
                let v = match &own_values {
                    Some(table) => table[types[own_pos]],
                    None => round3(rng.random_range(-1.0..1.0)),
                };
                builder = builder.value(agent, &members, &types, v);
            }
        }
    }

    for agent in 0..n {
        for key in [TransitionKey::Selected, TransitionKey::Unselected] {
            for from in 0..sizes[agent] {
                let raw: Vec<f64> = (0..sizes[agent])
                    .map(|_| rng.random_range(0.05..1.0))
                    .collect();
                let sum: f64 = raw.iter().sum();
                for (to, &u) in raw.iter().enumerate() {
                    builder = builder.transition(agent, key, from, to, u / sum);
                }
            }
        }
    }

    builder
        .delta(delta)
        .build()
        .expect("generated scenarios are well formed by construction")
}

/// `count` independent scenarios; instance `k` is seeded `root_seed + k`
/// and tagged with its index.
pub fn random_suite(cfg: &GeneratorConfig, count: usize, root_seed: u64) -> Vec<Scenario> {
    (0..count)
        .map(|k| {
            random_scenario(cfg, root_seed.wrapping_add(k as u64))
                .with_id(format!("{}-{k:03}", cfg.id_prefix))
        })
        .collect()
}
