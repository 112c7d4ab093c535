//! Trace and report files.
//!
//! # CSV
//!
//! One row per recorded step per run, followed by one `final` row per run
//! holding the state after the last step. Columns:
//!
//! | column | content |
//! |---|---|
//! | `run` | run index within the batch, from 0 |
//! | `step` | time step `s`, from 0 |
//! | `mode` | Markov mode at step `s`, from 1 |
//! | `x1`..`xn` | state |
//! | `u` (or `u1`..`um`) | applied input |
//! | `eta1`..`etan` | perturbation state |
//! | `branch` | `terminal`, `perturbed`, empty for the baselines, `final` on the closing row |
//! | `V` | terminal Lyapunov value `xᵀP x` |
//! | `cost` | stage cost `xᵀSx + uᵀRu` |
//! | `in_terminal` | `1` inside the terminal ellipsoid, else `0` |
//! | `op5_iterations` | bisection steps of the online problem |
//! | `op5_seconds` | wall-clock solve time, only with timing enabled |
//! | `input_excess`, `state_excess` | largest constraint excess, `≤ 0` when admissible |
//!
//! # JSON
//!
//! `{"format": "dpo-mpc-traces", "version": 1, "traces": [...]}` with one
//! object per run mirroring [`SimulationTrace`]; modes start at 1.

use std::io::Write;

use dpo_mpc_core::sim::{MonteCarloReport, RunStatus, SimulationTrace, StepRecord};
use dpo_mpc_core::Branch;
use serde::{Deserialize, Serialize};

use crate::real::{reals, vector_in, vector_out, Real};

pub const TRACE_FORMAT: &str = "dpo-mpc-traces";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("cannot write trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot write CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot parse traces: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed trace file: {0}")]
    Format(String),
}

/// Shortest round-trip text, with exponent notation for very large or small magnitudes.
pub fn number(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn branch_name(b: Option<Branch>) -> &'static str {
    match b {
        Some(Branch::Terminal) => "terminal",
        Some(Branch::Perturbed) => "perturbed",
        None => "",
    }
}

fn indexed(prefix: &str, n: usize, bare_if_single: bool) -> Vec<String> {
    if bare_if_single && n == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=n).map(|k| format!("{prefix}{k}")).collect()
    }
}

pub fn csv_header(n_x: usize, n_u: usize, timing: bool) -> Vec<String> {
    let mut h = vec!["run".to_string(), "step".into(), "mode".into()];
    h.extend(indexed("x", n_x, false));
    h.extend(indexed("u", n_u, true));
    h.extend(indexed("eta", n_x, false));
    h.extend(["branch", "V", "cost", "in_terminal", "op5_iterations"].map(String::from));
    if timing {
        h.push("op5_seconds".into());
    }
    h.extend(["input_excess", "state_excess"].map(String::from));
    h
}

fn step_row(run: usize, r: &StepRecord, timing: bool) -> Vec<String> {
    let mut row = vec![run.to_string(), r.step.to_string(), (r.mode + 1).to_string()];
    row.extend(r.x.iter().map(|&v| number(v)));
    row.extend(r.u.iter().map(|&v| number(v)));
    row.extend(r.eta.iter().map(|&v| number(v)));
    row.push(branch_name(r.branch).into());
    row.push(number(r.lyapunov));
    row.push(number(r.stage_cost));
    row.push(u8::from(r.in_terminal_set).to_string());
    row.push(r.op5_iterations.to_string());
    if timing {
        row.push(number(r.op5_seconds));
    }
    row.push(number(r.input_excess));
    row.push(number(r.state_excess));
    row
}

fn final_row(run: usize, t: &SimulationTrace, n_u: usize, timing: bool) -> Vec<String> {
    let mut row = vec![run.to_string(), t.steps.len().to_string(), (t.final_mode + 1).to_string()];
    row.extend(t.final_x.iter().map(|&v| number(v)));
    row.extend(std::iter::repeat_n(String::new(), n_u + t.final_x.len()));
    row.push("final".into());
    row.push(number(t.final_lyapunov));
    row.push(String::new());
    row.push(u8::from(t.final_in_terminal_set).to_string());
    row.push(String::new());
    if timing {
        row.push(String::new());
    }
    row.push(String::new());
    row.push(number(t.final_state_excess));
    row
}

/// Writes the traces of a batch; trace `r` is labelled run `r`.
pub fn write_csv<W: Write>(out: W, traces: &[SimulationTrace], n_x: usize, n_u: usize, timing: bool) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(n_x, n_u, timing))?;
    for (run, t) in traces.iter().enumerate() {
        for r in &t.steps {
            w.write_record(step_row(run, r, timing))?;
        }
        w.write_record(final_row(run, t, n_u, timing))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceSet {
    format: String,
    version: u32,
    traces: Vec<TraceDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceDoc {
    run: usize,
    seed: u64,
    status: StatusDoc,
    final_x: Vec<Real>,
    final_mode: usize,
    final_lyapunov: Real,
    final_in_terminal_set: bool,
    final_state_excess: Real,
    steps: Vec<StepDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum StatusDoc {
    Completed,
    Failed { step: usize, reason: String },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepDoc {
    step: usize,
    mode: usize,
    x: Vec<Real>,
    u: Vec<Real>,
    eta: Vec<Real>,
    branch: Option<String>,
    lyapunov: Real,
    in_terminal_set: bool,
    stage_cost: Real,
    op5_iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    op5_seconds: Option<Real>,
    input_excess: Real,
    state_excess: Real,
}

fn doc_of(run: usize, t: &SimulationTrace, timing: bool) -> TraceDoc {
    TraceDoc {
        run,
        seed: t.seed,
        status: match &t.status {
            RunStatus::Completed => StatusDoc::Completed,
            RunStatus::Failed { step, reason } => StatusDoc::Failed { step: *step, reason: reason.clone() },
        },
        final_x: vector_out(&t.final_x),
        final_mode: t.final_mode + 1,
        final_lyapunov: Real(t.final_lyapunov),
        final_in_terminal_set: t.final_in_terminal_set,
        final_state_excess: Real(t.final_state_excess),
        steps: t
            .steps
            .iter()
            .map(|r| StepDoc {
                step: r.step,
                mode: r.mode + 1,
                x: vector_out(&r.x),
                u: vector_out(&r.u),
                eta: vector_out(&r.eta),
                branch: r.branch.map(|b| branch_name(Some(b)).to_string()),
                lyapunov: Real(r.lyapunov),
                in_terminal_set: r.in_terminal_set,
                stage_cost: Real(r.stage_cost),
                op5_iterations: r.op5_iterations,
                op5_seconds: timing.then_some(Real(r.op5_seconds)),
                input_excess: Real(r.input_excess),
                state_excess: Real(r.state_excess),
            })
            .collect(),
    }
}

fn one_based(what: &str, k: usize) -> Result<usize, TraceError> {
    k.checked_sub(1).ok_or_else(|| TraceError::Format(format!("{what} is numbered from 1")))
}

fn trace_of(d: TraceDoc) -> Result<SimulationTrace, TraceError> {
    let steps = d
        .steps
        .into_iter()
        .map(|s| {
            let branch = match s.branch.as_deref() {
                None => None,
                Some("terminal") => Some(Branch::Terminal),
                Some("perturbed") => Some(Branch::Perturbed),
                Some(other) => return Err(TraceError::Format(format!("unknown branch {other:?}"))),
            };
            Ok(StepRecord {
                step: s.step,
                x: vector_in(&s.x),
                u: vector_in(&s.u),
                mode: one_based("mode", s.mode)?,
                eta: vector_in(&s.eta),
                branch,
                lyapunov: s.lyapunov.0,
                in_terminal_set: s.in_terminal_set,
                stage_cost: s.stage_cost.0,
                op5_iterations: s.op5_iterations,
                op5_seconds: s.op5_seconds.map_or(0.0, |r| r.0),
                input_excess: s.input_excess.0,
                state_excess: s.state_excess.0,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SimulationTrace {
        seed: d.seed,
        steps,
        final_x: vector_in(&d.final_x),
        final_mode: one_based("final_mode", d.final_mode)?,
        final_lyapunov: d.final_lyapunov.0,
        final_in_terminal_set: d.final_in_terminal_set,
        final_state_excess: d.final_state_excess.0,
        status: match d.status {
            StatusDoc::Completed => RunStatus::Completed,
            StatusDoc::Failed { step, reason } => RunStatus::Failed { step, reason },
        },
    })
}

/// Solve times are written only when `timing` is set.
pub fn traces_to_json(traces: &[SimulationTrace], timing: bool) -> String {
    let set = TraceSet {
        format: TRACE_FORMAT.into(),
        version: TRACE_VERSION,
        traces: traces.iter().enumerate().map(|(r, t)| doc_of(r, t, timing)).collect(),
    };
    let mut text = serde_json::to_string_pretty(&set).expect("trace documents always serialize");
    text.push('\n');
    text
}

pub fn traces_from_json(text: &str) -> Result<Vec<SimulationTrace>, TraceError> {
    let set: TraceSet = serde_json::from_str(text)?;
    if set.format != TRACE_FORMAT || set.version != TRACE_VERSION {
        return Err(TraceError::Format(format!("format {:?}, version {}", set.format, set.version)));
    }
    set.traces.into_iter().map(trace_of).collect()
}

#[derive(Serialize)]
struct FailureDoc<'a> {
    run: usize,
    step: usize,
    reason: &'a str,
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    runs: usize,
    horizon: usize,
    seed: u64,
    seeds: &'a [u64],
    mean_sq_norm: Vec<Real>,
    max_sq_norm: Vec<Real>,
    mean_cost: Real,
    input_violations: usize,
    state_violations: usize,
    mean_op5_iterations: Real,
    max_op5_iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_op5_seconds: Option<Real>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_op5_seconds: Option<Real>,
    terminal_entry: &'a [Option<usize>],
    terminal_exits: usize,
    failures: Vec<FailureDoc<'a>>,
}

/// Aggregate statistics of a batch as JSON; times only with `timing`.
pub fn summary_json(report: &MonteCarloReport, timing: bool) -> String {
    let doc = SummaryDoc {
        runs: report.config.runs,
        horizon: report.config.horizon,
        seed: report.config.seed,
        seeds: &report.seeds,
        mean_sq_norm: reals(&report.mean_sq_norm),
        max_sq_norm: reals(&report.max_sq_norm),
        mean_cost: Real(report.mean_cost),
        input_violations: report.input_violations,
        state_violations: report.state_violations,
        mean_op5_iterations: Real(report.mean_op5_iterations),
        max_op5_iterations: report.max_op5_iterations,
        mean_op5_seconds: timing.then_some(Real(report.mean_op5_seconds)),
        max_op5_seconds: timing.then_some(Real(report.max_op5_seconds)),
        terminal_entry: &report.terminal_entry,
        terminal_exits: report.terminal_exits,
        failures: report.failures.iter().map(|(run, step, reason)| FailureDoc { run: *run, step: *step, reason }).collect(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("summaries always serialize");
    text.push('\n');
    text
}

/// Two-column text table.
pub fn table(rows: &[(String, String)]) -> String {
    let width = rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
}

pub fn summary_rows(report: &MonteCarloReport) -> Vec<(String, String)> {
    let n = report.config.horizon;
    let x0 = report.config.x0.norm_squared();
    let entered = report.terminal_entry.iter().filter(|e| e.is_some()).count();
    let latest = report.terminal_entry.iter().flatten().max();
    vec![
        ("runs".into(), report.config.runs.to_string()),
        ("horizon".into(), n.to_string()),
        ("master seed".into(), report.config.seed.to_string()),
        ("|x0|^2".into(), number(x0)),
        (format!("mean |x_{n}|^2"), number(report.mean_sq_norm[n])),
        (format!("max |x_{n}|^2"), number(report.max_sq_norm[n])),
        ("mean cost".into(), number(report.mean_cost)),
        ("input violations".into(), report.input_violations.to_string()),
        ("state violations".into(), report.state_violations.to_string()),
        ("runs in terminal set".into(), format!("{entered}/{}", report.config.runs)),
        ("latest terminal entry".into(), latest.map_or("-".into(), |s| format!("step {s}"))),
        ("terminal set exits".into(), report.terminal_exits.to_string()),
        ("failed runs".into(), report.failures.len().to_string()),
        ("mean OP5 iterations".into(), format!("{:.2}", report.mean_op5_iterations)),
        ("max OP5 iterations".into(), report.max_op5_iterations.to_string()),
        ("mean OP5 time".into(), format!("{:.3e} s", report.mean_op5_seconds)),
        ("max OP5 time".into(), format!("{:.3e} s", report.max_op5_seconds)),
    ]
}
