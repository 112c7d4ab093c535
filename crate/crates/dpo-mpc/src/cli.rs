//! The `dpo-mpc` command line.
//!
//! Exit status: 0 on success, 1 when a hard certificate fails, 2 when
//! synthesis is infeasible or a stage fails, 3 when a simulation run fails
//! or the DPO controller violates a constraint, 4 on I/O, parse, usage or
//! model errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use dpo_mpc_core::sim::{monte_carlo_timed, Clock, ControllerKind, MonteCarloReport};
use dpo_mpc_core::synthesis::{certify, CertificateReport};
use dpo_mpc_core::{synthesize, ControllerBundle, FuzzyMjsModel, SynthesisError};
use serde::Serialize;

use crate::config::{self, ControllerChoice, ExperimentConfig, PlantChoice, ROBOT_ARM_TOML};
use crate::real::{reals, Real};
use crate::trace_file::{self, number, table};
use crate::bundle_file;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CERTIFICATE: i32 = 1;
pub const EXIT_SYNTHESIS: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_INPUT: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "dpo-mpc", version, about = "Dynamic-prediction-optimization MPC for fuzzy Markov jump systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the robot-arm model configuration.
    Example {
        /// Destination file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the offline synthesis and write a controller bundle.
    Synth(SynthArgs),
    /// Simulate a single closed-loop run.
    Run(SimArgs),
    /// Simulate a Monte-Carlo batch and report OP5 solve times.
    Bench(BenchArgs),
    /// Re-evaluate every certificate of a bundle on a membership grid.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Output bundle file.
    #[arg(long)]
    pub bundle: PathBuf,
    /// Certificate report file; defaults to the bundle path with extension `report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Tolerance added to every certificate limit.
    #[arg(long, default_value_t = 0.0)]
    pub tol: f64,
    /// Outer barrier iterations per stage.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Points per simplex edge of the certificate grid.
    #[arg(long)]
    pub grid: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub tol: f64,
    #[arg(long)]
    pub grid: Option<usize>,
    /// Also write the report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub bundle: PathBuf,
    /// Output directory for `trace.csv`, `trace.json` and `summary.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, value_enum)]
    pub plant: Option<PlantChoice>,
    #[arg(long, value_enum)]
    pub controller: Option<ControllerChoice>,
    /// Write OP5 solve times into the output files.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub runs: Option<usize>,
}

/// Seconds since construction.
pub struct WallClock(Instant);

impl WallClock {
    pub fn new() -> Self {
        WallClock(Instant::now())
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

struct Failure {
    code: i32,
    message: String,
}

fn fail(code: i32, message: impl std::fmt::Display) -> Failure {
    Failure { code, message: message.to_string() }
}

type Outcome = Result<i32, Failure>;

/// Parses `args` (including the program name), runs the command and returns the exit status.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{text}");
                EXIT_OK
            } else {
                let _ = write!(err, "{text}");
                EXIT_INPUT
            };
        }
    };
    let outcome = match &cli.command {
        Command::Example { out: path } => cmd_example(path.as_deref(), out),
        Command::Synth(a) => cmd_synth(a, out),
        Command::Run(a) => cmd_simulate(a, Some(1), false, out),
        Command::Bench(a) => cmd_simulate(&a.sim, a.runs, true, out),
        Command::Check(a) => cmd_check(a, out),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| fail(EXIT_INPUT, format!("cannot write {}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<(ExperimentConfig, FuzzyMjsModel), Failure> {
    let cfg = config::load(path).map_err(|e| fail(EXIT_INPUT, e))?;
    let model = cfg.build_model().map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", path.display())))?;
    Ok((cfg, model))
}

fn load_bundle(path: &Path, model: &FuzzyMjsModel) -> Result<ControllerBundle, Failure> {
    let bundle = bundle_file::read(path).map_err(|e| fail(EXIT_INPUT, e))?;
    bundle
        .check_against(model)
        .map_err(|e| fail(EXIT_INPUT, format!("bundle does not match the model: {e}")))?;
    Ok(bundle)
}

fn cmd_example(path: Option<&Path>, out: &mut dyn Write) -> Outcome {
    match path {
        Some(p) => write_file(p, ROBOT_ARM_TOML)?,
        None => out.write_all(ROBOT_ARM_TOML.as_bytes()).map_err(|e| fail(EXIT_INPUT, e))?,
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct FamilyDoc<'a> {
    name: &'a str,
    worst: Real,
    at: &'a str,
    limit: Real,
    hard: bool,
    passed: bool,
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    grid: usize,
    tol: Real,
    passed: bool,
    families: Vec<FamilyDoc<'a>>,
    terminal_volume: Vec<Real>,
    projection_volume: Vec<Real>,
}

/// JSON form of a certificate report.
pub fn report_json(r: &CertificateReport) -> String {
    let doc = ReportDoc {
        grid: r.grid,
        tol: Real(r.tol),
        passed: r.passed,
        families: r
            .families
            .iter()
            .map(|f| FamilyDoc {
                name: f.name,
                worst: Real(f.worst),
                at: &f.at,
                limit: Real(f.limit),
                hard: f.hard,
                passed: f.passed,
            })
            .collect(),
        terminal_volume: reals(&r.terminal_volume),
        projection_volume: reals(&r.projection_volume),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("reports always serialize");
    text.push('\n');
    text
}

/// Text form of a certificate report.
pub fn report_text(r: &CertificateReport) -> String {
    let name_w = r.families.iter().map(|f| f.name.len()).max().unwrap_or(0);
    let mut s = format!("certificates on a {}-point grid, tol {}\n", r.grid, number(r.tol));
    s += &format!("{:<name_w$}  {:>13}  {:>10}  {:<10}  {:<6}  at\n", "family", "worst", "limit", "kind", "result");
    for f in &r.families {
        let kind = if f.hard { "hard" } else { "diagnostic" };
        let result = match (f.hard, f.passed) {
            (_, true) => "pass",
            (true, false) => "FAIL",
            (false, false) => "note",
        };
        s += &format!("{:<name_w$}  {:>13.6e}  {:>10.1e}  {kind:<10}  {result:<6}  {}\n", f.name, f.worst, f.limit, f.at);
    }
    for (i, (t, p)) in r.terminal_volume.iter().zip(&r.projection_volume).enumerate() {
        s += &format!("mode {}: terminal volume {}, projection volume {}\n", i + 1, number(*t), number(*p));
    }
    s += if r.passed { "all hard certificates pass\n" } else { "hard certificate failure\n" };
    s
}

fn grid_or_default(flag: Option<usize>, cfg: &ExperimentConfig) -> usize {
    flag.unwrap_or_else(|| cfg.synthesis_options().grid)
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Outcome {
    let (cfg, model) = load_model(&a.model)?;
    let mut options = cfg.synthesis_options();
    if let Some(m) = a.max_iters {
        options.solver.max_iters = m;
    }
    if let Some(g) = a.grid {
        options.grid = g;
    }
    let start = Instant::now();
    let bundle = synthesize(&model, &options).map_err(|e| match e {
        SynthesisError::InvalidModel(_) | SynthesisError::InvalidOptions(_) => fail(EXIT_INPUT, e),
        _ => fail(EXIT_SYNTHESIS, format!("synthesis failed: {e}")),
    })?;
    let elapsed = start.elapsed().as_secs_f64();
    bundle_file::write(&a.bundle, &bundle).map_err(|e| fail(EXIT_INPUT, e))?;

    let report = certify(&model, &bundle, options.grid, a.tol);
    let report_path = a.report.clone().unwrap_or_else(|| a.bundle.with_extension("report.json"));
    write_file(&report_path, &report_json(&report))?;

    let mut rows = vec![("sigma".to_string(), number(bundle.sigma))];
    for s in &bundle.provenance.stages {
        rows.push((
            s.stage.to_string(),
            format!(
                "objective {}, worst residual {:.3e}, {} Newton steps, {} unknowns, {} constraints",
                number(s.objective),
                s.worst_violation,
                s.iterations,
                s.unknowns,
                s.constraints
            ),
        ));
    }
    let g_max = bundle.provenance.g_cond.iter().flatten().fold(0.0f64, |m, &c| m.max(c));
    rows.push(("max cond(G)".into(), format!("{g_max:.3e}")));
    rows.push(("offline time".into(), format!("{elapsed:.2} s")));
    rows.push(("bundle".into(), a.bundle.display().to_string()));
    rows.push(("report".into(), report_path.display().to_string()));
    let text = format!("{}\n{}", table(&rows), report_text(&report));
    out.write_all(text.as_bytes()).map_err(|e| fail(EXIT_INPUT, e))?;
    Ok(if report.passed { EXIT_OK } else { EXIT_CERTIFICATE })
}

fn cmd_check(a: &CheckArgs, out: &mut dyn Write) -> Outcome {
    let (cfg, model) = load_model(&a.model)?;
    let bundle = load_bundle(&a.bundle, &model)?;
    let grid = grid_or_default(a.grid, &cfg);
    if grid < 2 {
        return Err(fail(EXIT_INPUT, "grid must have at least 2 points"));
    }
    let report = certify(&model, &bundle, grid, a.tol);
    if let Some(p) = &a.report {
        write_file(p, &report_json(&report))?;
    }
    out.write_all(report_text(&report).as_bytes()).map_err(|e| fail(EXIT_INPUT, e))?;
    Ok(if report.passed { EXIT_OK } else { EXIT_CERTIFICATE })
}

/// Writes `trace.csv`, `trace.json` and `summary.json` into `dir`.
pub fn write_outputs(dir: &Path, report: &MonteCarloReport, model: &FuzzyMjsModel, timing: bool) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let csv = std::fs::File::create(dir.join("trace.csv"))?;
    trace_file::write_csv(std::io::BufWriter::new(csv), &report.traces, model.n_x, model.n_u, timing)
        .map_err(std::io::Error::other)?;
    std::fs::write(dir.join("trace.json"), trace_file::traces_to_json(&report.traces, timing))?;
    std::fs::write(dir.join("summary.json"), trace_file::summary_json(report, timing))?;
    Ok(())
}

fn cmd_simulate(a: &SimArgs, runs: Option<usize>, bench: bool, out: &mut dyn Write) -> Outcome {
    let (cfg, model) = load_model(&a.model)?;
    let bundle = load_bundle(&a.bundle, &model)?;
    let mut sim = cfg.sim_config(&model).map_err(|e| fail(EXIT_INPUT, e))?;
    if let Some(r) = runs {
        sim.runs = r;
    }
    if let Some(s) = a.seed {
        sim.seed = s;
    }
    if let Some(h) = a.horizon {
        sim.horizon = h;
    }
    if let Some(p) = a.plant {
        sim.plant = p.into();
    }
    if let Some(c) = a.controller {
        sim.controller = c.into();
    }
    let report = monte_carlo_timed(&model, &bundle, &sim, &WallClock::new()).map_err(|e| fail(EXIT_INPUT, e))?;
    write_outputs(&a.out, &report, &model, a.timing)
        .map_err(|e| fail(EXIT_INPUT, format!("cannot write to {}: {e}", a.out.display())))?;

    let mut rows = trace_file::summary_rows(&report);
    if !bench {
        rows.retain(|(k, _)| !k.starts_with("max ") && k != "runs in terminal set");
    }
    rows.push(("output".into(), a.out.display().to_string()));
    let mut text = table(&rows);
    for (run, step, reason) in &report.failures {
        text += &format!("run {run} failed at step {step}: {reason}\n");
    }
    out.write_all(text.as_bytes()).map_err(|e| fail(EXIT_INPUT, e))?;

    let violated = sim.controller == ControllerKind::Dpo && report.input_violations + report.state_violations > 0;
    Ok(if !report.failures.is_empty() || violated { EXIT_RUNTIME } else { EXIT_OK })
}
