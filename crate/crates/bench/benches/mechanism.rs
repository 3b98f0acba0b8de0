use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use matrix_mech::generator::{random_scenario, GeneratorConfig};
use matrix_mech::mechanism::{allocate, consistent_value, matrix_payment, Mechanism};
use matrix_mech::simulator::{simulate_episode, StrategyProfile};
use matrix_mech::verifier::check_epic;
use matrix_mech::welfare::solve_all;

fn mechanism_benches(c: &mut Criterion) {
    let cfg = GeneratorConfig {
        min_agents: 3,
        max_agents: 3,
        min_types: 2,
        max_types: 3,
        ..GeneratorConfig::default()
    };
    let scenario = random_scenario(&cfg, 5);
    let tables = solve_all(&scenario, 1e-9).unwrap();
    let state = vec![0; scenario.n()];
    let alloc = allocate(&scenario, &tables, &state);
    let reports: Vec<f64> = (0..scenario.n())
        .map(|i| consistent_value(&scenario, i, alloc, &state))
        .collect();

    c.bench_function("matrix_payment", |b| {
        b.iter(|| black_box(matrix_payment(&scenario, &tables, &state, &reports)))
    });

    c.bench_function("check_epic", |b| {
        b.iter(|| black_box(check_epic(&scenario, &tables, 1e-7, 5)))
    });

    let truthful = StrategyProfile::truthful(scenario.n());
    c.bench_function("simulate_episode t100", |b| {
        b.iter(|| {
            black_box(
                simulate_episode(
                    &scenario,
                    &tables,
                    Mechanism::Matrix,
                    &truthful,
                    &state,
                    100,
                    42,
                )
                .unwrap(),
            )
        })
    });
}

criterion_group!(benches, mechanism_benches);
criterion_main!(benches);
