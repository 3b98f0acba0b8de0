//! Line-oriented text format for scenario files.
//!
//! ```text
//! # comments run to end of line; blank lines are ignored
//! [agents]
//! count = 2
//!
//! [types]
//! # agent, label, numeric-code
//! 0, lo, 0.5
//! 0, hi, 1.0
//! 1, lo, 0.5
//! 1, hi, 1.0
//!
//! [valuations]
//! # agent, members, type-tuple (labels of members, ascending agent order), value
//! 0, {0}, (lo), 1.0
//! 0, {0 1}, (lo lo), 2.0
//!
//! [transitions]
//! # agent, selected|unselected|{members}, from-label, to-label, probability
//! 0, selected, lo, lo, 0.8
//! 0, selected, lo, hi, 0.2
//!
//! [params]
//! delta = 0.5
//! penalty = quadratic      # quadratic | absolute | scaled:<c>
//! owner = 0                # paying agent of the fixed-price baseline
//! const_price = 1.0
//! bound = 2.0              # optional declared cap on |v|; violations are errors
//! ```
//!
//! Every key, section, and row shape outside this grammar is rejected.
//! Within a declared transition row, unlisted target types default to
//! probability 0; the listed entries must sum to 1 within 1e-9. Valuation
//! cells all have to be declared explicitly.

use std::fmt::Write as _;

use crate::allocation::Allocation;
use crate::mechanism::Penalty;
use crate::report::fmt_float;
use crate::scenario::{
    AgentKernel, Scenario, ScenarioBuilder, ScenarioError, StateSpace, TransitionKey,
};

type Result<T> = std::result::Result<T, ScenarioError>;

fn err(line: usize, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse { line, msg: msg.into() }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Agents,
    Types,
    Valuations,
    Transitions,
    Params,
}

/// Parses and validates a scenario from its text form.
pub fn parse_scenario(text: &str, id: impl Into<String>) -> Result<Scenario> {
    let mut agents_rows: Vec<(usize, String)> = Vec::new();
    let mut types_rows: Vec<(usize, String)> = Vec::new();
    let mut valuation_rows: Vec<(usize, String)> = Vec::new();
    let mut transition_rows: Vec<(usize, String)> = Vec::new();
    let mut params_rows: Vec<(usize, String)> = Vec::new();
    let mut seen = [false; 5];

    let mut section = Section::None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let (next, slot) = match name {
                "agents" => (Section::Agents, 0),
                "types" => (Section::Types, 1),
                "valuations" => (Section::Valuations, 2),
                "transitions" => (Section::Transitions, 3),
                "params" => (Section::Params, 4),
                other => return Err(err(line, format!("unknown section `[{other}]`"))),
            };
            if seen[slot] {
                return Err(err(line, format!("section `[{name}]` declared twice")));
            }
            seen[slot] = true;
            section = next;
            continue;
        }
        let row = (line, content.to_string());
        match section {
            Section::None => return Err(err(line, "content before any section header")),
            Section::Agents => agents_rows.push(row),
            Section::Types => types_rows.push(row),
            Section::Valuations => valuation_rows.push(row),
            Section::Transitions => transition_rows.push(row),
            Section::Params => params_rows.push(row),
        }
    }

    // [agents]
    let mut count: Option<usize> = None;
    for (line, row) in &agents_rows {
        let (key, value) = split_assignment(*line, row)?;
        match key {
            "count" => {
                count = Some(value.parse().map_err(|_| {
                    err(*line, format!("key `count`: bad agent count `{value}`"))
                })?);
            }
            other => return Err(err(*line, format!("unknown key `{other}` in [agents]"))),
        }
    }
    let n = count.ok_or_else(|| {
        ScenarioError::MissingTableEntry("key `count` in [agents]".into())
    })?;
    if n == 0 {
        return Err(ScenarioError::Invalid("agent count must be at least 1".into()));
    }

    // [types]
    let mut labels: Vec<Vec<String>> = vec![Vec::new(); n];
    let mut codes: Vec<Vec<f64>> = vec![Vec::new(); n];
    for (line, row) in &types_rows {
        let fields = split_fields(row);
        if fields.len() != 2 && fields.len() != 3 {
            return Err(err(*line, "expected `agent, label[, code]`"));
        }
        let agent = parse_agent(*line, fields[0], n)?;
        let label = fields[1];
        check_label(*line, label)?;
        let code = if fields.len() == 3 {
            fields[2]
                .parse()
                .map_err(|_| err(*line, format!("bad numeric code `{}`", fields[2])))?
        } else {
            labels[agent].len() as f64
        };
        labels[agent].push(label.to_string());
        codes[agent].push(code);
    }

    let mut builder = ScenarioBuilder::new(id);
    for agent in 0..n {
        let ls: Vec<&str> = labels[agent].iter().map(|s| s.as_str()).collect();
        builder = builder.agent_with_codes(&ls, &codes[agent]);
        if ls.is_empty() {
            return Err(ScenarioError::MissingTableEntry(format!(
                "type declarations for agent {agent}"
            )));
        }
    }

    let find_type = |line: usize, agent: usize, label: &str| -> Result<usize> {
        labels[agent]
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| err(line, format!("unknown type label `{label}` for agent {agent}")))
    };

    // [valuations]
    for (line, row) in &valuation_rows {
        let fields = split_fields(row);
        if fields.len() != 4 {
            return Err(err(*line, "expected `agent, {members}, (type-tuple), value`"));
        }
        let agent = parse_agent(*line, fields[0], n)?;
        let alloc: Allocation = fields[1]
            .parse()
            .map_err(|e| err(*line, e))?;
        let tuple = fields[2]
            .strip_prefix('(')
            .and_then(|s| s.strip_suffix(')'))
            .ok_or_else(|| err(*line, format!("type tuple must be parenthesized, got `{}`", fields[2])))?;
        let tuple_labels: Vec<&str> = tuple.split_whitespace().collect();
        let members: Vec<usize> = alloc.members().collect();
        if members.iter().any(|&m| m >= n) {
            return Err(err(*line, format!("allocation {alloc} references an undeclared agent")));
        }
        if tuple_labels.len() != members.len() {
            return Err(err(
                *line,
                format!("{} labels in tuple for {} members", tuple_labels.len(), members.len()),
            ));
        }
        let mut types = Vec::with_capacity(members.len());
        for (&m, lab) in members.iter().zip(&tuple_labels) {
            types.push(find_type(*line, m, lab)?);
        }
        let value: f64 = fields[3]
            .parse()
            .map_err(|_| err(*line, format!("bad value `{}`", fields[3])))?;
        builder = builder.value(agent, &members, &types, value);
    }

    // [transitions]
    for (line, row) in &transition_rows {
        let fields = split_fields(row);
        if fields.len() != 5 {
            return Err(err(
                *line,
                "expected `agent, selected|unselected|{members}, from, to, prob`",
            ));
        }
        let agent = parse_agent(*line, fields[0], n)?;
        let key = match fields[1] {
            "selected" => TransitionKey::Selected,
            "unselected" => TransitionKey::Unselected,
            other if other.starts_with('{') => {
                TransitionKey::ForAllocation(other.parse().map_err(|e| err(*line, e))?)
            }
            other => {
                return Err(err(
                    *line,
                    format!("bad transition key `{other}`: expected selected, unselected, or {{members}}"),
                ))
            }
        };
        let from = find_type(*line, agent, fields[2])?;
        let to = find_type(*line, agent, fields[3])?;
        let prob: f64 = fields[4]
            .parse()
            .map_err(|_| err(*line, format!("bad probability `{}`", fields[4])))?;
        builder = builder.transition(agent, key, from, to, prob);
    }

    // [params]
    for (line, row) in &params_rows {
        let (key, value) = split_assignment(*line, row)?;
        match key {
            "delta" => {
                let d: f64 = value
                    .parse()
                    .map_err(|_| err(*line, format!("key `delta`: bad number `{value}`")))?;
                builder = builder.delta(d);
            }
            "penalty" => {
                let p: Penalty = value.parse().map_err(|e| err(*line, e)).map_err(
                    |e: ScenarioError| match e {
                        ScenarioError::Parse { line, msg } => err(line, format!("key `penalty`: {msg}")),
                        other => other,
                    },
                )?;
                builder = builder.penalty(p);
            }
            "owner" => {
                let o = parse_agent(*line, value, n)
                    .map_err(|_| err(*line, format!("key `owner`: bad agent index `{value}`")))?;
                builder = builder.owner(o);
            }
            "const_price" => {
                let p: f64 = value
                    .parse()
                    .map_err(|_| err(*line, format!("key `const_price`: bad number `{value}`")))?;
                builder = builder.const_price(p);
            }
            "bound" => {
                let b: f64 = value
                    .parse()
                    .map_err(|_| err(*line, format!("key `bound`: bad number `{value}`")))?;
                builder = builder.declared_bound(b);
            }
            other => return Err(err(*line, format!("unknown key `{other}` in [params]"))),
        }
    }

    builder.build()
}

fn split_assignment(line: usize, row: &str) -> Result<(&str, &str)> {
    let (key, value) = row
        .split_once('=')
        .ok_or_else(|| err(line, format!("expected `key = value`, got `{row}`")))?;
    Ok((key.trim(), value.trim()))
}

fn split_fields(row: &str) -> Vec<&str> {
    row.split(',').map(str::trim).collect()
}

fn parse_agent(line: usize, field: &str, n: usize) -> Result<usize> {
    let agent: usize = field
        .parse()
        .map_err(|_| err(line, format!("bad agent index `{field}`")))?;
    if agent >= n {
        return Err(err(line, format!("agent index {agent} out of range (count = {n})")));
    }
    Ok(agent)
}

fn check_label(line: usize, label: &str) -> Result<()> {
    let ok = !label.is_empty()
        && label
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '+' | '-'));
    if ok {
        Ok(())
    } else {
        Err(err(
            line,
            format!("bad type label `{label}`: use only alphanumerics and `_.+-`"),
        ))
    }
}

/// Serializes a scenario back into the text format.
///
/// Output is canonical (sections in fixed order, allocations ascending,
/// floats at 17 significant digits), so parsing it reproduces the scenario
/// tables bit for bit.
pub fn write_scenario_string(s: &Scenario) -> String {
    let n = s.n();
    let mut out = String::new();
    let _ = writeln!(out, "[agents]");
    let _ = writeln!(out, "count = {n}");

    let _ = writeln!(out, "\n[types]");
    for agent in 0..n {
        for t in 0..s.type_count(agent) {
            let _ = writeln!(
                out,
                "{agent}, {}, {}",
                s.type_label(agent, t),
                fmt_float(s.type_code(agent, t))
            );
        }
    }

    let _ = writeln!(out, "\n[valuations]");
    for agent in 0..n {
        for alloc in crate::allocation::enumerate_allocations(n, None) {
            if !alloc.contains(agent) {
                continue;
            }
            let members: Vec<usize> = alloc.members().collect();
            let member_sizes: Vec<usize> = members.iter().map(|&m| s.type_count(m)).collect();
            let restricted = StateSpace::new(&member_sizes);
            for types in restricted.profiles() {
                let tuple: Vec<&str> = members
                    .iter()
                    .zip(&types)
                    .map(|(&m, &t)| s.type_label(m, t))
                    .collect();
                let v = s.valuations.value_for_members(agent, alloc, &types);
                let _ = writeln!(
                    out,
                    "{agent}, {alloc}, ({}), {}",
                    tuple.join(" "),
                    fmt_float(v)
                );
            }
        }
    }

    let _ = writeln!(out, "\n[transitions]");
    for agent in 0..n {
        match &s.transitions.kernels[agent] {
            AgentKernel::Membership { selected, unselected } => {
                for (name, rows) in [("selected", selected), ("unselected", unselected)] {
                    write_kernel_rows(&mut out, s, agent, name, rows);
                }
            }
            AgentKernel::PerAllocation(table) => {
                for (bits, rows) in table.iter().enumerate() {
                    let alloc = Allocation::from_bits(bits as u32);
                    write_kernel_rows(&mut out, s, agent, &alloc.to_string(), rows);
                }
            }
        }
    }

    let _ = writeln!(out, "\n[params]");
    let _ = writeln!(out, "delta = {}", fmt_float(s.delta()));
    let _ = writeln!(out, "penalty = {}", s.penalty());
    let _ = writeln!(out, "owner = {}", s.owner());
    let _ = writeln!(out, "const_price = {}", fmt_float(s.const_price()));
    out
}

fn write_kernel_rows(out: &mut String, s: &Scenario, agent: usize, key: &str, rows: &[Vec<f64>]) {
    for (from, row) in rows.iter().enumerate() {
        for (to, &p) in row.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let _ = writeln!(
                out,
                "{agent}, {key}, {}, {}, {}",
                s.type_label(agent, from),
                s.type_label(agent, to),
                fmt_float(p)
            );
        }
    }
}
