//! End-to-end checks of the binary: exit codes, emitted files, and
//! determinism of the outputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_matrix-mech"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

#[test]
fn solve_writes_tables_and_policy() {
    let out = tempfile::tempdir().unwrap();
    let result = run(&[
        "solve",
        "--scenario",
        scenario("tiny_exchange.scn").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&result), 0, "{}", String::from_utf8_lossy(&result.stderr));
    for file in ["welfare.csv", "marginal_0.csv", "marginal_1.csv", "policy.csv", "solve_summary.csv"] {
        assert!(out.path().join(file).exists(), "{file} missing");
    }
    let policy = std::fs::read_to_string(out.path().join("policy.csv")).unwrap();
    let mut lines = policy.lines();
    assert_eq!(lines.next(), Some("state,value,allocation"));
    let row = lines.next().unwrap();
    assert!(row.starts_with("only;only,"), "{row}");
    assert!(row.ends_with(",{0 1}"), "{row}");
    assert!(lines.next().is_none());
}

#[test]
fn policy_csv_round_trips_exactly() {
    let out = tempfile::tempdir().unwrap();
    let path = scenario("fatigue_pair.scn");
    let result = run(&[
        "solve",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&result), 0);

    let text = std::fs::read_to_string(&path).unwrap();
    let s = matrix_mech::parse_scenario(&text, "fatigue_pair").unwrap();
    let tables = matrix_mech::welfare::solve_all(&s, 1e-9).unwrap();
    let (values, allocations) =
        matrix_mech::report::read_policy_csv(&out.path().join("policy.csv"), &s).unwrap();
    assert_eq!(values, tables.welfare.values);
    assert_eq!(allocations, tables.policy.allocations);
    let welfare = matrix_mech::report::read_welfare_csv(&out.path().join("welfare.csv"), &s).unwrap();
    assert_eq!(welfare, tables.welfare.values);
}

#[test]
fn malformed_delta_exits_one_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scn");
    let text = std::fs::read_to_string(scenario("tiny_exchange.scn"))
        .unwrap()
        .replace("delta = 0.5", "delta = one-half");
    std::fs::write(&bad, text).unwrap();
    let result = run(&["solve", "--scenario", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&result), 1);
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("delta"), "{stderr}");
}

#[test]
fn out_of_range_delta_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scn");
    let text = std::fs::read_to_string(scenario("tiny_exchange.scn"))
        .unwrap()
        .replace("delta = 0.5", "delta = 1.0");
    std::fs::write(&bad, text).unwrap();
    let result = run(&["solve", "--scenario", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&result), 1);
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("delta"), "{stderr}");
}

#[test]
fn unknown_flags_are_rejected() {
    let result = run(&["solve", "--scenario", "x.scn", "--frobnicate"]);
    assert_ne!(code(&result), 0);
    assert!(String::from_utf8_lossy(&result.stderr).contains("--frobnicate"));
}

#[test]
fn verify_passes_on_well_behaved_scenarios() {
    let out = tempfile::tempdir().unwrap();
    let result = run(&[
        "verify",
        "--scenario",
        scenario("fatigue_pair.scn").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&result), 0, "{}", String::from_utf8_lossy(&result.stdout));
    let verdicts = std::fs::read_to_string(out.path().join("verdicts.csv")).unwrap();
    for property in ["epic", "strict-stage2", "epir", "efficiency", "marginal-independence"] {
        assert!(
            verdicts.contains(&format!("fatigue_pair,{property}")),
            "missing {property} row: {verdicts}"
        );
    }
    assert!(!verdicts.contains(",fail,"), "{verdicts}");
}

#[test]
fn verify_directory_emits_rows_per_scenario() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["tiny_exchange.scn", "fatigue_pair.scn", "private_pair.scn"] {
        std::fs::copy(scenario(name), dir.path().join(name)).unwrap();
    }
    let out = tempfile::tempdir().unwrap();
    let result = run(&[
        "verify",
        "--scenario",
        dir.path().to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&result), 0);
    let verdicts = std::fs::read_to_string(out.path().join("verdicts.csv")).unwrap();
    // header + 5 properties x 3 scenarios
    assert_eq!(verdicts.lines().count(), 1 + 15, "{verdicts}");
}

#[test]
fn ablating_the_penalty_fails_strictness_with_exit_three() {
    let out = tempfile::tempdir().unwrap();
    let result = run(&[
        "verify",
        "--scenario",
        scenario("fatigue_pair.scn").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--ablate-penalty",
    ]);
    assert_eq!(code(&result), 3);
    let verdicts = std::fs::read_to_string(out.path().join("verdicts.csv")).unwrap();
    let strict = verdicts
        .lines()
        .find(|l| l.contains(",strict-stage2,"))
        .unwrap();
    assert!(strict.contains(",fail,"), "{strict}");
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let out_a = tempfile::tempdir().unwrap();
    let out_b = tempfile::tempdir().unwrap();
    for out in [&out_a, &out_b] {
        let result = run(&[
            "simulate",
            "--scenario",
            scenario("fatigue_pair.scn").to_str().unwrap(),
            "--out",
            out.path().to_str().unwrap(),
            "--horizon",
            "40",
            "--episodes",
            "50",
            "--seed",
            "42",
        ]);
        assert_eq!(code(&result), 0, "{}", String::from_utf8_lossy(&result.stderr));
    }
    for file in ["trajectory.csv", "utilities.csv"] {
        let a = std::fs::read(out_a.path().join(file)).unwrap();
        let b = std::fs::read(out_b.path().join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn single_deviation_penalizes_exactly_one_round() {
    let out = tempfile::tempdir().unwrap();
    let result = run(&[
        "simulate",
        "--scenario",
        scenario("fatigue_pair.scn").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--horizon",
        "12",
        "--episodes",
        "1",
        "--seed",
        "9",
        "--deviator",
        "0",
        "--deviation-round",
        "3",
        "--report-value-offset",
        "0.5",
    ]);
    assert_eq!(code(&result), 0, "{}", String::from_utf8_lossy(&result.stderr));
    let trajectory = std::fs::read_to_string(out.path().join("trajectory.csv")).unwrap();
    for line in trajectory.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let round: usize = fields[0].parse().unwrap();
        let agent: usize = fields[1].parse().unwrap();
        let penalty: f64 = fields[8].parse().unwrap();
        if round == 3 && agent == 0 {
            assert!((penalty - 0.25).abs() < 1e-12, "{line}");
        } else {
            assert_eq!(penalty, 0.0, "{line}");
        }
    }
}

#[test]
fn compare_reports_side_by_side_and_flags_const() {
    let out = tempfile::tempdir().unwrap();
    // matrix and dpm both pass on the private-value instance
    let result = run(&[
        "compare",
        "--scenario",
        scenario("private_pair.scn").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--mechanism",
        "matrix,dpm",
        "--horizon",
        "60",
    ]);
    assert_eq!(code(&result), 0, "{}", String::from_utf8_lossy(&result.stdout));
    let compare = std::fs::read_to_string(out.path().join("compare.csv")).unwrap();
    assert!(compare.lines().count() == 3, "{compare}");
    for line in compare.lines().skip(1) {
        assert!(line.contains(",pass,"), "{line}");
    }

    // the fixed-price baseline fails incentive checks on the fatigue pair
    let result = run(&[
        "compare",
        "--scenario",
        scenario("fatigue_pair.scn").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--mechanism",
        "const",
        "--horizon",
        "60",
    ]);
    assert_eq!(code(&result), 3);
    let compare = std::fs::read_to_string(out.path().join("compare.csv")).unwrap();
    let row = compare.lines().nth(1).unwrap();
    assert!(row.starts_with("const,"));
    assert!(row.contains(",fail"), "{row}");
    // fixed payments balance the budget in every round
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields[8], "0", "deficit rounds: {row}");
}

#[test]
fn search_finds_a_witness_and_compare_separates_the_mechanisms() {
    let out = tempfile::tempdir().unwrap();
    let result = run(&[
        "search-dpm",
        "--out",
        out.path().to_str().unwrap(),
        "--instances",
        "200",
    ]);
    assert_eq!(code(&result), 0, "{}", String::from_utf8_lossy(&result.stderr));
    let witness = out.path().join("witness.scn");
    assert!(witness.exists());
    assert!(out.path().join("witness.csv").exists());

    let compare_out = tempfile::tempdir().unwrap();
    let result = run(&[
        "compare",
        "--scenario",
        witness.to_str().unwrap(),
        "--out",
        compare_out.path().to_str().unwrap(),
        "--mechanism",
        "matrix,dpm",
        "--horizon",
        "40",
    ]);
    assert_eq!(code(&result), 3);
    let compare = std::fs::read_to_string(compare_out.path().join("compare.csv")).unwrap();
    let matrix_row = compare.lines().find(|l| l.starts_with("matrix,")).unwrap();
    let dpm_row = compare.lines().find(|l| l.starts_with("dpm,")).unwrap();
    let epic_verdict = |row: &str| row.split(',').nth(2).unwrap().to_string();
    assert_eq!(epic_verdict(matrix_row), "pass", "{matrix_row}");
    assert_eq!(epic_verdict(dpm_row), "fail", "{dpm_row}");
}

#[test]
fn tighter_tolerance_needs_more_iterations_but_keeps_the_policy() {
    let loose = tempfile::tempdir().unwrap();
    let tight = tempfile::tempdir().unwrap();
    for (out, tol) in [(&loose, "1e-9"), (&tight, "1e-12")] {
        let result = run(&[
            "solve",
            "--scenario",
            scenario("tiny_exchange.scn").to_str().unwrap(),
            "--out",
            out.path().to_str().unwrap(),
            "--tol",
            tol,
        ]);
        assert_eq!(code(&result), 0);
    }
    let iterations = |dir: &tempfile::TempDir| -> usize {
        std::fs::read_to_string(dir.path().join("solve_summary.csv"))
            .unwrap()
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .nth(1)
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(iterations(&tight) > iterations(&loose));
    let policy = |dir: &tempfile::TempDir| {
        std::fs::read_to_string(dir.path().join("policy.csv"))
            .unwrap()
            .lines()
            .map(|l| l.rsplit(',').next().unwrap().to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(policy(&tight), policy(&loose));
}

#[test]
fn private_value_search_exhausts_the_budget() {
    let out = tempfile::tempdir().unwrap();
    let result = run(&[
        "search-dpm",
        "--out",
        out.path().to_str().unwrap(),
        "--instances",
        "25",
        "--private-values",
    ]);
    assert_eq!(code(&result), 4);
}
