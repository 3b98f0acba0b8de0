use super::*;
use crate::fixtures;

fn minimal_builder() -> ScenarioBuilder {
    ScenarioBuilder::new("minimal")
        .agent(&["only"])
        .value(0, &[0], &[0], 1.0)
        .identity_kernels()
        .delta(0.5)
}

#[test]
fn smallest_well_formed_instance() {
    let s = minimal_builder().build().unwrap();
    assert_eq!(s.n(), 1);
    assert_eq!(s.bound(), 1.0);
    assert_eq!(s.num_states(), 1);
}

#[test]
fn overfull_transition_row_is_rejected() {
    let err = ScenarioBuilder::new("bad")
        .agent(&["a", "b"])
        .value(0, &[0], &[0], 1.0)
        .value(0, &[0], &[1], 1.0)
        .membership_kernel(
            0,
            &[vec![0.5, 0.6], vec![0.5, 0.5]],
            &[vec![0.5, 0.5], vec![0.5, 0.5]],
        )
        .delta(0.5)
        .build()
        .unwrap_err();
    assert!(matches!(err, ScenarioError::RowNotStochastic { .. }), "{err}");
}

#[test]
fn boundary_discounts_are_rejected() {
    for delta in [1.0, 0.0, -0.1, 1.5] {
        let err = minimal_builder().delta(delta).build().unwrap_err();
        assert!(matches!(err, ScenarioError::DiscountOutOfRange(d) if d == delta), "{err}");
    }
}

#[test]
fn missing_valuation_cell_is_named() {
    let err = ScenarioBuilder::new("gap")
        .agent(&["lo", "hi"])
        .value(0, &[0], &[0], 1.0)
        .identity_kernels()
        .delta(0.5)
        .build()
        .unwrap_err();
    match err {
        ScenarioError::MissingTableEntry(msg) => assert!(msg.contains("hi"), "{msg}"),
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn valuation_outside_allocation_is_rejected() {
    let err = ScenarioBuilder::new("outside")
        .agent(&["x"])
        .agent(&["y"])
        .value(0, &[1], &[0], 1.0)
        .identity_kernels()
        .delta(0.5)
        .build()
        .unwrap_err();
    assert!(matches!(err, ScenarioError::NonZeroOutsideAllocation { agent: 0, .. }), "{err}");
}

#[test]
fn declared_bound_violation_is_rejected() {
    let err = minimal_builder().declared_bound(0.5).build().unwrap_err();
    assert!(matches!(err, ScenarioError::BoundExceeded { .. }), "{err}");
    assert!(minimal_builder().declared_bound(1.0).build().is_ok());
}

#[test]
fn mixed_transition_styles_are_rejected() {
    let err = ScenarioBuilder::new("mixed")
        .agent(&["only"])
        .value(0, &[0], &[0], 1.0)
        .transition(0, TransitionKey::Selected, 0, 0, 1.0)
        .transition(0, TransitionKey::ForAllocation(Allocation::EMPTY), 0, 0, 1.0)
        .delta(0.5)
        .build()
        .unwrap_err();
    assert!(matches!(err, ScenarioError::Invalid(_)), "{err}");
}

#[test]
fn per_allocation_kernels_work() {
    let s = ScenarioBuilder::new("per-alloc")
        .agent(&["only"])
        .agent(&["calm", "keen"])
        .value(0, &[0], &[0], 0.5)
        .value(0, &[0, 1], &[0, 0], 1.0)
        .value(0, &[0, 1], &[0, 1], 2.0)
        .value(1, &[1], &[0], 0.1)
        .value(1, &[1], &[1], 0.2)
        .value(1, &[0, 1], &[0, 0], -0.1)
        .value(1, &[0, 1], &[0, 1], -0.2)
        .membership_kernel(0, &[vec![1.0]], &[vec![1.0]])
        // agent 1 keys its kernel on the exact allocation
        .transition(1, TransitionKey::ForAllocation(Allocation::EMPTY), 0, 0, 1.0)
        .transition(1, TransitionKey::ForAllocation(Allocation::EMPTY), 1, 1, 1.0)
        .transition(1, TransitionKey::ForAllocation(Allocation::from_members([0])), 0, 1, 1.0)
        .transition(1, TransitionKey::ForAllocation(Allocation::from_members([0])), 1, 0, 1.0)
        .transition(1, TransitionKey::ForAllocation(Allocation::from_members([1])), 0, 0, 0.5)
        .transition(1, TransitionKey::ForAllocation(Allocation::from_members([1])), 0, 1, 0.5)
        .transition(1, TransitionKey::ForAllocation(Allocation::from_members([1])), 1, 1, 1.0)
        .transition(1, TransitionKey::ForAllocation(Allocation::from_members([0, 1])), 0, 1, 1.0)
        .transition(1, TransitionKey::ForAllocation(Allocation::from_members([0, 1])), 1, 1, 1.0)
        .delta(0.5)
        .build()
        .unwrap();
    // rows really differ by allocation, not just membership
    let a01 = Allocation::from_members([0, 1]);
    let a1 = Allocation::from_members([1]);
    assert_eq!(s.transition_row(1, a01, 0), &[0.0, 1.0]);
    assert_eq!(s.transition_row(1, a1, 0), &[0.5, 0.5]);
    // the {0}-allocation row applies even though agent 1 is unselected there
    assert_eq!(s.transition_row(1, Allocation::from_members([0]), 0), &[0.0, 1.0]);
}

#[test]
fn state_enumeration_orders() {
    let s = fixtures::fatigue_pair();
    let states = s.enumerate_states();
    assert_eq!(states, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);

    let three = ScenarioBuilder::new("three")
        .agent(&["a", "b"])
        .agent(&["x", "y", "z"])
        .agent(&["p", "q"])
        .value(0, &[0], &[0], 0.0)
        .value(0, &[0], &[1], 0.0)
        .value(1, &[1], &[0], 0.0)
        .value(1, &[1], &[1], 0.0)
        .value(1, &[1], &[2], 0.0)
        .value(2, &[2], &[0], 0.0)
        .value(2, &[2], &[1], 0.0);
    // fill the remaining member tables with zeros
    let mut b = three;
    for (agent, members) in [
        (0usize, vec![vec![0usize, 1], vec![0, 2], vec![0, 1, 2]]),
        (1, vec![vec![0, 1], vec![1, 2], vec![0, 1, 2]]),
        (2, vec![vec![0, 2], vec![1, 2], vec![0, 1, 2]]),
    ] {
        for m in members {
            let sizes: Vec<usize> = m.iter().map(|&j| [2, 3, 2][j]).collect();
            for types in StateSpace::new(&sizes).profiles() {
                b = b.value(agent, &m, &types, 0.0);
            }
        }
    }
    let s3 = b.identity_kernels().delta(0.5).build().unwrap();
    assert_eq!(s3.num_states(), 12);
    assert_eq!(s3.enumerate_states().len(), 12);
}

#[test]
fn stage_values_are_zero_outside_the_allocation() {
    let s = fixtures::fatigue_pair();
    for state in s.enumerate_states() {
        for alloc in crate::allocation::enumerate_allocations(2, None) {
            let values = s.stage_values(alloc, &state);
            for (agent, v) in values.iter().enumerate() {
                if !alloc.contains(agent) {
                    assert_eq!(*v, 0.0);
                }
            }
        }
        assert_eq!(s.stage_values(Allocation::EMPTY, &state), vec![0.0, 0.0]);
    }
}

#[test]
fn tiny_exchange_stage_values() {
    let s = fixtures::tiny_exchange();
    assert_eq!(
        s.stage_values(Allocation::from_members([0, 1]), &[0, 0]),
        vec![2.0, -0.5]
    );
}

#[test]
fn joint_transition_products() {
    // point mass under identity kernels
    let s1 = fixtures::single_agent(1.0, 0.5);
    assert_eq!(s1.joint_transition(&[0], Allocation::EMPTY), vec![1.0]);

    let s = ScenarioBuilder::new("product")
        .agent(&["a", "b"])
        .agent(&["x", "y"])
        .value(0, &[0], &[0], 0.0)
        .value(0, &[0], &[1], 0.0)
        .value(1, &[1], &[0], 0.0)
        .value(1, &[1], &[1], 0.0)
        .value(0, &[0, 1], &[0, 0], 0.0)
        .value(0, &[0, 1], &[0, 1], 0.0)
        .value(0, &[0, 1], &[1, 0], 0.0)
        .value(0, &[0, 1], &[1, 1], 0.0)
        .value(1, &[0, 1], &[0, 0], 0.0)
        .value(1, &[0, 1], &[0, 1], 0.0)
        .value(1, &[0, 1], &[1, 0], 0.0)
        .value(1, &[0, 1], &[1, 1], 0.0)
        .membership_kernel(0, &[vec![0.8, 0.2], vec![0.8, 0.2]], &[vec![0.8, 0.2], vec![0.8, 0.2]])
        .membership_kernel(1, &[vec![0.5, 0.5], vec![0.5, 0.5]], &[vec![0.5, 0.5], vec![0.5, 0.5]])
        .delta(0.5)
        .build()
        .unwrap();
    let dist = s.joint_transition(&[0, 0], Allocation::EMPTY);
    assert_eq!(dist, vec![0.40, 0.40, 0.10, 0.10]);
}

#[test]
fn factorization_marginals_recover_each_kernel_row() {
    let s = fixtures::fatigue_pair();
    let space = s.state_space();
    for state in s.enumerate_states() {
        for alloc in crate::allocation::enumerate_allocations(2, None) {
            let dist = s.joint_transition(&state, alloc);
            let total: f64 = dist.iter().sum();
            assert!((total - 1.0).abs() < 1e-10);
            for agent in 0..2 {
                for t in 0..2 {
                    let marginal: f64 = (0..space.count())
                        .filter(|&idx| space.profile(idx)[agent] == t)
                        .map(|idx| dist[idx])
                        .sum();
                    let expected = s.transition_row(agent, alloc, state[agent])[t];
                    assert!((marginal - expected).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn parse_round_trip_is_exact() {
    for scenario in [fixtures::tiny_exchange(), fixtures::fatigue_pair(), fixtures::private_pair()]
    {
        let text = write_scenario_string(&scenario);
        let back = parse_scenario(&text, scenario.id()).unwrap();
        assert_eq!(back.n(), scenario.n());
        assert_eq!(back.delta(), scenario.delta());
        assert_eq!(back.owner(), scenario.owner());
        for state in scenario.enumerate_states() {
            for alloc in crate::allocation::enumerate_allocations(scenario.n(), None) {
                assert_eq!(
                    back.stage_values(alloc, &state),
                    scenario.stage_values(alloc, &state)
                );
                for agent in 0..scenario.n() {
                    assert_eq!(
                        back.transition_row(agent, alloc, state[agent]),
                        scenario.transition_row(agent, alloc, state[agent])
                    );
                }
            }
        }
        // serializing the re-parsed scenario is byte-identical
        assert_eq!(write_scenario_string(&back), text);
    }
}

#[test]
fn parser_rejects_unknown_keys_and_sections() {
    let base = write_scenario_string(&fixtures::tiny_exchange());
    let with_unknown_key = base.replace("delta =", "dleta =");
    let err = parse_scenario(&with_unknown_key, "x").unwrap_err();
    assert!(err.to_string().contains("dleta"), "{err}");

    let with_unknown_section = format!("{base}\n[extras]\nfoo = 1\n");
    let err = parse_scenario(&with_unknown_section, "x").unwrap_err();
    assert!(err.to_string().contains("extras"), "{err}");

    let err = parse_scenario("count = 1\n", "x").unwrap_err();
    assert!(matches!(err, ScenarioError::Parse { .. }), "{err}");
}

#[test]
fn parser_reports_malformed_delta_by_key() {
    let base = write_scenario_string(&fixtures::tiny_exchange());
    let broken = base.replace(
        &format!("delta = {}", crate::report::fmt_float(0.5)),
        "delta = half",
    );
    let err = parse_scenario(&broken, "x").unwrap_err();
    assert!(err.to_string().contains("delta"), "{err}");
}

#[test]
fn duplicate_entries_are_rejected() {
    let err = minimal_builder().value(0, &[0], &[0], 2.0).build().unwrap_err();
    assert!(matches!(err, ScenarioError::DuplicateEntry(_)), "{err}");
}

#[test]
fn label_round_trips() {
    let s = fixtures::fatigue_pair();
    for state in s.enumerate_states() {
        let label = s.state_label(&state);
        assert_eq!(s.profile_from_label(&label).unwrap(), state);
    }
}
