//! Command-line front end: solve, simulate, verify, compare, search-dpm.
//!
//! Exit codes: 0 success, 1 validation/I-O failure, 2 solver
//! non-convergence, 3 at least one property check failed (a finding, not
//! a crash), 4 counterexample search budget exhausted.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use matrix_mech::generator::GeneratorConfig;
use matrix_mech::mechanism::{Mechanism, Penalty};
use matrix_mech::report::{self, CompareRow};
use matrix_mech::scenario::{parse_scenario, write_scenario_string, Scenario};
use matrix_mech::simulator::{
    default_horizon, exact_truthful_utility, monte_carlo_utility, simulate_episode,
    Deviation, Stage1Rule, Stage2Rule, StrategyProfile,
};
use matrix_mech::verifier::{
    budget_metrics, check_epic_for, check_epir_for, const_utility_table,
    find_dpm_counterexample, run_all_checks, CheckConfig, DpmSearchConfig, SearchError,
};
use matrix_mech::welfare::{
    extract_policy, solve_all, solve_marginal_welfare, solve_welfare,
};

const EXIT_INVALID: u8 = 1;
const EXIT_NONCONVERGENCE: u8 = 2;
const EXIT_PROPERTY_FAILED: u8 = 3;
const EXIT_BUDGET_EXHAUSTED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "matrix-mech",
    version,
    about = "Dynamic exchange-economy mechanism toolkit: solve, simulate, verify, compare"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the welfare MDPs and write the tables and policy as CSV
    Solve(SolveArgs),
    /// Run seeded episodes and write trajectory and utility CSVs
    Simulate(SimulateArgs),
    /// Run every incentive property check; exit 3 on any failure
    Verify(VerifyArgs),
    /// Compare mechanisms side by side on one scenario
    Compare(CompareArgs),
    /// Search random interdependent instances for a pivot-baseline counterexample
    SearchDpm(SearchDpmArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Scenario file
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Solver tolerance (true table error stays below it)
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Override the scenario's penalty rule (quadratic | absolute | scaled:C)
    #[arg(long)]
    penalty: Option<Penalty>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// matrix | dpm | const
    #[arg(long, default_value = "matrix")]
    mechanism: Mechanism,
    /// Rounds per episode; default picks the smallest horizon whose
    /// truncation bound is below 1e-3
    #[arg(long)]
    horizon: Option<usize>,
    /// Monte-Carlo episodes
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    /// Root seed; episode k draws from stream k+1
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Initial state as a `;`-joined label tuple; defaults to the first state
    #[arg(long)]
    initial_state: Option<String>,
    /// Agent that deviates once (truthful otherwise)
    #[arg(long)]
    deviator: Option<usize>,
    /// Round of the single deviation
    #[arg(long, default_value_t = 0)]
    deviation_round: usize,
    /// Stage-1 misreport (a type label of the deviator)
    #[arg(long)]
    report_type: Option<String>,
    /// Stage-2 misreport as an offset added to the true value
    #[arg(long, allow_negative_numbers = true)]
    report_value_offset: Option<f64>,
    #[arg(long)]
    penalty: Option<Penalty>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Scenario file, or a directory of .scn files (a suite)
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Incentive-check tolerance
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    /// Stage-2 report grid half-width
    #[arg(long, default_value_t = 5)]
    grid_steps: usize,
    /// Disable the consistency penalty (ablation experiment)
    #[arg(long)]
    ablate_penalty: bool,
    #[arg(long)]
    penalty: Option<Penalty>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated mechanisms to compare
    #[arg(long, default_value = "matrix,dpm,const", value_delimiter = ',')]
    mechanism: Vec<Mechanism>,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 5)]
    grid_steps: usize,
    /// Horizon of the budget-metrics trajectory
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    penalty: Option<Penalty>,
}

#[derive(Args)]
struct SearchDpmArgs {
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Instance budget
    #[arg(long, default_value_t = 1000)]
    instances: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Restrict the generator to private values (the search then always
    /// exhausts its budget: the baseline is truthful there)
    #[arg(long)]
    private_values: bool,
}

fn main() -> ExitCode {
    // die quietly when stdout goes away mid-pipe, like other unix tools
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Compare(args) => cmd_compare(args),
        Command::SearchDpm(args) => cmd_search_dpm(args),
    }
}

fn invalid(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_INVALID)
}

fn load_scenario(path: &Path, penalty: &Option<Penalty>) -> Result<Scenario, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    let scenario = parse_scenario(&text, id).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(match penalty {
        Some(p) => scenario.with_penalty(p.clone()),
        None => scenario,
    })
}

fn ensure_out(dir: &Path) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))
}

fn cmd_solve(args: SolveArgs) -> ExitCode {
    let scenario = match load_scenario(&args.scenario, &args.penalty) {
        Ok(s) => s,
        Err(e) => return invalid(e),
    };
    if let Err(e) = ensure_out(&args.out) {
        return invalid(e);
    }

    let mut summary: Vec<(String, usize, f64)> = Vec::new();
    let started = Instant::now();
    let welfare = match solve_welfare(&scenario, args.tol) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_NONCONVERGENCE);
        }
    };
    println!(
        "W: {} iterations, residual {:e}, {:.3} ms",
        welfare.iterations,
        welfare.residual,
        started.elapsed().as_secs_f64() * 1e3
    );
    summary.push(("W".into(), welfare.iterations, welfare.residual));

    let mut marginals = Vec::new();
    for agent in 0..scenario.n() {
        let started = Instant::now();
        let m = match solve_marginal_welfare(&scenario, agent, args.tol) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_NONCONVERGENCE);
            }
        };
        println!(
            "W_minus_{agent}: {} iterations, residual {:e}, {:.3} ms",
            m.iterations,
            m.residual,
            started.elapsed().as_secs_f64() * 1e3
        );
        summary.push((format!("W_minus_{agent}"), m.iterations, m.residual));
        marginals.push(m);
    }
    let policy = extract_policy(&scenario, &welfare, args.tol);

    let write = || -> std::io::Result<()> {
        report::write_welfare_csv(&args.out.join("welfare.csv"), &scenario, &welfare)?;
        for m in &marginals {
            report::write_marginal_csv(
                &args.out.join(format!("marginal_{}.csv", m.agent)),
                &scenario,
                m,
            )?;
        }
        report::write_policy_csv(&args.out.join("policy.csv"), &scenario, &welfare, &policy)?;
        report::write_solve_summary(&args.out.join("solve_summary.csv"), &summary)
    };
    if let Err(e) = write() {
        return invalid(e);
    }
    println!("wrote tables to {}", args.out.display());
    ExitCode::SUCCESS
}

fn build_strategies(scenario: &Scenario, args: &SimulateArgs) -> Result<StrategyProfile, String> {
    let mut profile = StrategyProfile::truthful(scenario.n());
    if let Some(agent) = args.deviator {
        if agent >= scenario.n() {
            return Err(format!("deviator {agent} out of range"));
        }
        let stage_one = match &args.report_type {
            Some(label) => {
                let t = (0..scenario.type_count(agent))
                    .find(|&t| scenario.type_label(agent, t) == label)
                    .ok_or_else(|| format!("unknown type label `{label}` for agent {agent}"))?;
                Some(Stage1Rule::Fixed(t))
            }
            None => None,
        };
        let stage_two = args.report_value_offset.map(Stage2Rule::Offset);
        if stage_one.is_none() && stage_two.is_none() {
            return Err("deviator given without --report-type or --report-value-offset".into());
        }
        profile.deviation = Some(Deviation { agent, round: args.deviation_round, stage_one, stage_two });
    } else if args.report_type.is_some() || args.report_value_offset.is_some() {
        return Err("--report-type/--report-value-offset require --deviator".into());
    }
    Ok(profile)
}

fn cmd_simulate(args: SimulateArgs) -> ExitCode {
    let scenario = match load_scenario(&args.scenario, &args.penalty) {
        Ok(s) => s,
        Err(e) => return invalid(e),
    };
    if let Err(e) = ensure_out(&args.out) {
        return invalid(e);
    }
    let tables = match solve_all(&scenario, 1e-9) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_NONCONVERGENCE);
        }
    };
    let initial = match &args.initial_state {
        Some(label) => match scenario.profile_from_label(label) {
            Ok(p) => p,
            Err(e) => return invalid(e),
        },
        None => vec![0; scenario.n()],
    };
    let strategies = match build_strategies(&scenario, &args) {
        Ok(s) => s,
        Err(e) => return invalid(e),
    };
    let horizon = args
        .horizon
        .unwrap_or_else(|| default_horizon(&scenario, &tables, args.mechanism));

    let trajectory = match simulate_episode(
        &scenario, &tables, args.mechanism, &strategies, &initial, horizon, args.seed,
    ) {
        Ok(t) => t,
        Err(e) => return invalid(e),
    };
    if let Err(e) =
        report::write_trajectory_csv(&args.out.join("trajectory.csv"), &scenario, &trajectory)
    {
        return invalid(e);
    }

    let const_utilities = if args.mechanism == Mechanism::Const {
        match const_utility_table(&scenario, &tables) {
            Ok(u) => Some(u),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_NONCONVERGENCE);
            }
        }
    } else {
        None
    };
    let state_idx = scenario.state_space().index(&initial);
    let mut rows = Vec::new();
    for agent in 0..scenario.n() {
        let estimate = match monte_carlo_utility(
            &scenario,
            &tables,
            args.mechanism,
            &strategies,
            &initial,
            agent,
            horizon,
            args.episodes,
            args.seed,
        ) {
            Ok(e) => e,
            Err(e) => return invalid(e),
        };
        let exact = match &const_utilities {
            Some(u) => u[agent][state_idx],
            None => exact_truthful_utility(&scenario, &tables, &initial, agent),
        };
        println!(
            "agent {agent}: exact {exact:.6} mc {:.6} ± {:.2e} ({} episodes, horizon {horizon})",
            estimate.mean, estimate.std_error, estimate.episodes
        );
        rows.push((
            scenario.id().to_string(),
            args.mechanism.to_string(),
            agent,
            scenario.state_label(&initial),
            exact,
            estimate,
        ));
    }
    if let Err(e) = report::write_utility_csv(&args.out.join("utilities.csv"), &rows) {
        return invalid(e);
    }
    println!("wrote trajectory.csv and utilities.csv to {}", args.out.display());
    ExitCode::SUCCESS
}

fn scenario_files(path: &Path) -> Result<Vec<PathBuf>, String> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "scn"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(format!("no .scn files under {}", path.display()));
        }
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

fn cmd_verify(args: VerifyArgs) -> ExitCode {
    let files = match scenario_files(&args.scenario) {
        Ok(f) => f,
        Err(e) => return invalid(e),
    };
    if let Err(e) = ensure_out(&args.out) {
        return invalid(e);
    }
    let override_penalty = if args.ablate_penalty {
        Some(Penalty::Disabled)
    } else {
        args.penalty.clone()
    };
    let cfg = CheckConfig { tol: args.tol, grid_steps: args.grid_steps, ..CheckConfig::default() };

    let mut rows = Vec::new();
    let mut all_passed = true;
    for file in &files {
        let scenario = match load_scenario(file, &override_penalty) {
            Ok(s) => s,
            Err(e) => return invalid(e),
        };
        let tables = match solve_all(&scenario, 1e-9) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_NONCONVERGENCE);
            }
        };
        let reports = match run_all_checks(&scenario, &tables, &cfg) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_NONCONVERGENCE);
            }
        };
        for r in reports {
            println!(
                "{} {}: {} (worst {:e}, {} cases)",
                scenario.id(),
                r.property,
                if r.passed { "pass" } else { "FAIL" },
                r.worst,
                r.cases
            );
            all_passed &= r.passed;
            rows.push((scenario.id().to_string(), r));
        }
    }
    if let Err(e) = report::write_verdicts_csv(&args.out.join("verdicts.csv"), &rows) {
        return invalid(e);
    }
    println!("wrote verdicts.csv to {}", args.out.display());
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_PROPERTY_FAILED)
    }
}

fn cmd_compare(args: CompareArgs) -> ExitCode {
    let scenario = match load_scenario(&args.scenario, &args.penalty) {
        Ok(s) => s,
        Err(e) => return invalid(e),
    };
    if let Err(e) = ensure_out(&args.out) {
        return invalid(e);
    }
    let tables = match solve_all(&scenario, 1e-9) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_NONCONVERGENCE);
        }
    };

    let mut rows = Vec::new();
    let mut all_passed = true;
    for &mech in &args.mechanism {
        let epic = match check_epic_for(&scenario, &tables, mech, args.tol, args.grid_steps) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_NONCONVERGENCE);
            }
        };
        let epir = match check_epir_for(&scenario, &tables, mech, args.tol) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_NONCONVERGENCE);
            }
        };
        let horizon = args
            .horizon
            .unwrap_or_else(|| default_horizon(&scenario, &tables, mech));
        let truthful = StrategyProfile::truthful(scenario.n());
        let trajectory = match simulate_episode(
            &scenario,
            &tables,
            mech,
            &truthful,
            &vec![0; scenario.n()],
            horizon,
            args.seed,
        ) {
            Ok(t) => t,
            Err(e) => return invalid(e),
        };
        let budget = budget_metrics(&trajectory);
        println!(
            "{mech}: epic {} (worst {:e}), epir {} (worst {:e}), budget mean {:.4}, {} deficit rounds of {}",
            if epic.passed { "pass" } else { "FAIL" },
            epic.worst,
            if epir.passed { "pass" } else { "FAIL" },
            epir.worst,
            budget.mean,
            budget.deficit_rounds,
            budget.rounds
        );
        all_passed &= epic.passed && epir.passed;
        rows.push(CompareRow { mechanism: mech.to_string(), epic, epir, budget });
    }
    if let Err(e) = report::write_compare_csv(&args.out.join("compare.csv"), &rows) {
        return invalid(e);
    }
    println!("wrote compare.csv to {}", args.out.display());
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_PROPERTY_FAILED)
    }
}

fn cmd_search_dpm(args: SearchDpmArgs) -> ExitCode {
    if let Err(e) = ensure_out(&args.out) {
        return invalid(e);
    }
    let mut generator = GeneratorConfig::dpm_search();
    generator.private_values = args.private_values;
    let cfg = DpmSearchConfig {
        instances: args.instances,
        seed: args.seed,
        generator,
        ..DpmSearchConfig::default()
    };
    match find_dpm_counterexample(&cfg) {
        Ok(witness) => {
            let scenario_path = args.out.join("witness.scn");
            let text = write_scenario_string(&witness.scenario);
            if let Err(e) = std::fs::write(&scenario_path, text) {
                return invalid(e);
            }
            let summary = format!(
                "instance,scenario_id,state,agent,report,dpm_gain,matrix_worst_gain\n\
                 {},{},{},{},{},{},{}\n",
                witness.instance,
                witness.scenario.id(),
                witness.scenario.state_label(&witness.state),
                witness.agent,
                witness.scenario.type_label(witness.agent, witness.reported_type),
                report::fmt_float(witness.dpm_gain),
                report::fmt_float(witness.matrix_worst_gain),
            );
            if let Err(e) = std::fs::write(args.out.join("witness.csv"), summary) {
                return invalid(e);
            }
            println!(
                "witness found at instance {}: state {} agent {} misreports {}; \
                 pivot gain {:e}, two-stage worst gain {:e}",
                witness.instance,
                witness.scenario.state_label(&witness.state),
                witness.agent,
                witness.scenario.type_label(witness.agent, witness.reported_type),
                witness.dpm_gain,
                witness.matrix_worst_gain
            );
            println!("wrote witness.scn and witness.csv to {}", args.out.display());
            ExitCode::SUCCESS
        }
        Err(SearchError::BudgetExhausted { instances }) => {
            eprintln!("no qualifying instance within the budget of {instances}");
            ExitCode::from(EXIT_BUDGET_EXHAUSTED)
        }
        Err(SearchError::Solve(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_NONCONVERGENCE)
        }
    }
}
