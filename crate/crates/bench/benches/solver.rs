use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use matrix_mech::fixtures;
use matrix_mech::generator::{random_scenario, GeneratorConfig};
use matrix_mech::welfare::{finite_horizon_welfare, solve_all};

fn solver_benches(c: &mut Criterion) {
    let small = fixtures::fatigue_pair();
    c.bench_function("solve_all fatigue_pair", |b| {
        b.iter(|| black_box(solve_all(&small, 1e-9).unwrap()))
    });

    let cfg = GeneratorConfig {
        min_agents: 3,
        max_agents: 3,
        min_types: 3,
        max_types: 3,
        ..GeneratorConfig::default()
    };
    let dense = random_scenario(&cfg, 1);
    c.bench_function("solve_all 3 agents x 3 types", |b| {
        b.iter(|| black_box(solve_all(&dense, 1e-9).unwrap()))
    });

    c.bench_function("finite_horizon_oracle t50", |b| {
        b.iter(|| black_box(finite_horizon_welfare(&dense, 50)))
    });
}

criterion_group!(benches, solver_benches);
criterion_main!(benches);
