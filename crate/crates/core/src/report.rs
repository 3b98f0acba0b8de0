//! CSV emission and re-ingestion for solve tables, trajectories, utility
//! estimates, and verdicts.
//!
//! Floats are printed at 17 significant digits so every emitted table
//! re-reads to the exact in-memory value; all writers are byte
//! deterministic given their inputs.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::allocation::Allocation;
use crate::scenario::Scenario;
use crate::simulator::{Trajectory, UtilityEstimate};
use crate::verifier::{BudgetSummary, ViolationReport};
use crate::welfare::{MarginalWelfareTable, PolicyTable, WelfareTable};

/// 17 significant digits: enough to round-trip any f64.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn create(path: &Path) -> io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn parse_float(field: &str, path: &Path) -> io::Result<f64> {
    field.parse().map_err(|_| {
        io::Error::new(
            io::ErrorKind::InvalidData,
            format!("bad float `{field}` in {}", path.display()),
        )
    })
}

pub fn write_welfare_csv(path: &Path, scenario: &Scenario, table: &WelfareTable) -> io::Result<()> {
    let mut out = create(path)?;
    writeln!(out, "state,value")?;
    for (idx, value) in table.values.iter().enumerate() {
        let profile = scenario.state_space().profile(idx);
        writeln!(out, "{},{}", scenario.state_label(&profile), fmt_float(*value))?;
    }
    out.flush()
}

pub fn read_welfare_csv(path: &Path, scenario: &Scenario) -> io::Result<Vec<f64>> {
    let reader = BufReader::new(File::open(path)?);
    let mut values = vec![0.0; scenario.num_states()];
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if k == 0 {
            continue;
        }
        let (state, value) = line.split_once(',').ok_or_else(|| {
            io::Error::new(io::ErrorKind::InvalidData, format!("bad row `{line}`"))
        })?;
        let profile = scenario
            .profile_from_label(state)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        values[scenario.state_space().index(&profile)] = parse_float(value, path)?;
    }
    Ok(values)
}

pub fn write_marginal_csv(
    path: &Path,
    scenario: &Scenario,
    table: &MarginalWelfareTable,
) -> io::Result<()> {
    let mut out = create(path)?;
    writeln!(out, "state,value")?;
    let space = scenario.reduced_space(table.agent);
    for (idx, value) in table.values.iter().enumerate() {
        let reduced = space.profile(idx);
        writeln!(
            out,
            "{},{}",
            scenario.reduced_state_label(&reduced, table.agent),
            fmt_float(*value)
        )?;
    }
    out.flush()
}

pub fn write_policy_csv(
    path: &Path,
    scenario: &Scenario,
    welfare: &WelfareTable,
    policy: &PolicyTable,
) -> io::Result<()> {
    let mut out = create(path)?;
    writeln!(out, "state,value,allocation")?;
    for (idx, alloc) in policy.allocations.iter().enumerate() {
        let profile = scenario.state_space().profile(idx);
        writeln!(
            out,
            "{},{},{}",
            scenario.state_label(&profile),
            fmt_float(welfare.values[idx]),
            alloc
        )?;
    }
    out.flush()
}

pub fn read_policy_csv(
    path: &Path,
    scenario: &Scenario,
) -> io::Result<(Vec<f64>, Vec<Allocation>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut values = vec![0.0; scenario.num_states()];
    let mut allocations = vec![Allocation::EMPTY; scenario.num_states()];
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if k == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("bad row `{line}`"),
            ));
        }
        let profile = scenario
            .profile_from_label(fields[0])
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        let idx = scenario.state_space().index(&profile);
        values[idx] = parse_float(fields[1], path)?;
        allocations[idx] = fields[2]
            .parse()
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    }
    Ok((values, allocations))
}

/// Convergence summary: one row per solved table.
pub fn write_solve_summary(
    path: &Path,
    rows: &[(String, usize, f64)],
) -> io::Result<()> {
    let mut out = create(path)?;
    writeln!(out, "table,iterations,residual")?;
    for (name, iterations, residual) in rows {
        writeln!(out, "{name},{iterations},{}", fmt_float(*residual))?;
    }
    out.flush()
}

/// One row per agent per round.
pub fn write_trajectory_csv(path: &Path, scenario: &Scenario, t: &Trajectory) -> io::Result<()> {
    let mut out = create(path)?;
    writeln!(
        out,
        "t,agent,true_type,reported_type,allocated,true_value,reported_value,payment,penalty,utility"
    )?;
    for outcome in &t.outcomes {
        for agent in 0..scenario.n() {
            writeln!(
                out,
                "{},{agent},{},{},{},{},{},{},{},{}",
                outcome.round,
                scenario.type_label(agent, outcome.true_profile[agent]),
                scenario.type_label(agent, outcome.reported_profile[agent]),
                outcome.allocation.contains(agent) as u8,
                fmt_float(outcome.true_values[agent]),
                fmt_float(outcome.reported_values[agent]),
                fmt_float(outcome.payments[agent]),
                fmt_float(outcome.penalties[agent]),
                fmt_float(outcome.utilities[agent]),
            )?;
        }
    }
    out.flush()
}

/// One row per (agent, estimate).
pub fn write_utility_csv(
    path: &Path,
    rows: &[(String, String, usize, String, f64, UtilityEstimate)],
) -> io::Result<()> {
    let mut out = create(path)?;
    writeln!(out, "scenario,mechanism,agent,state,exact,mc_mean,mc_stderr,episodes")?;
    for (scenario, mechanism, agent, state, exact, est) in rows {
        writeln!(
            out,
            "{scenario},{mechanism},{agent},{state},{},{},{},{}",
            fmt_float(*exact),
            fmt_float(est.mean),
            fmt_float(est.std_error),
            est.episodes
        )?;
    }
    out.flush()
}

/// One row per property per scenario.
pub fn write_verdicts_csv(path: &Path, rows: &[(String, ViolationReport)]) -> io::Result<()> {
    let mut out = create(path)?;
    writeln!(out, "scenario_id,property,cases,worst_value,tolerance,verdict,witness")?;
    for (id, report) in rows {
        writeln!(out, "{id},{}", verdict_fields(report))?;
    }
    out.flush()
}

fn verdict_fields(report: &ViolationReport) -> String {
    format!(
        "{},{},{},{},{},{}",
        report.property,
        report.cases,
        fmt_float(report.worst),
        fmt_float(report.tolerance),
        if report.passed { "pass" } else { "fail" },
        report.witness_label()
    )
}

/// Side-by-side mechanism comparison: one row per mechanism.
pub struct CompareRow {
    pub mechanism: String,
    pub epic: ViolationReport,
    pub epir: ViolationReport,
    pub budget: BudgetSummary,
}

pub fn write_compare_csv(path: &Path, rows: &[CompareRow]) -> io::Result<()> {
    let mut out = create(path)?;
    writeln!(
        out,
        "mechanism,epic_worst_gain,epic_verdict,epir_worst,epir_verdict,\
         budget_min,budget_max,budget_mean,deficit_rounds,rounds"
    )?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            row.mechanism,
            fmt_float(row.epic.worst),
            if row.epic.passed { "pass" } else { "fail" },
            fmt_float(row.epir.worst),
            if row.epir.passed { "pass" } else { "fail" },
            fmt_float(row.budget.min),
            fmt_float(row.budget.max),
            fmt_float(row.budget.mean),
            row.budget.deficit_rounds,
            row.budget.rounds,
        )?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [
            3.0,
            -0.5,
            1.0 / 3.0,
            2.0_f64.powi(-40) + 1.0,
            f64::MIN_POSITIVE,
            -9.87654321e40,
        ] {
            let s = fmt_float(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }
}
