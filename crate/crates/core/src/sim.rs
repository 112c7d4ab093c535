//! Seeded closed-loop simulation of the jump system and Monte-Carlo
//! aggregation over independent runs.
//!
//! Run `r` of a Monte-Carlo batch with master seed `s` draws its modes from a
//! ChaCha8 stream seeded with [`run_seed`]`(s, r) = splitmix64(splitmix64(s) ^ r)`,
//! so a run can be replayed on its own.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::{control, Branch, ControlError};
use crate::linalg::{self, Mat, Vector};
use crate::model::{nonlinear_arm_step, FuzzyMjsModel, PremiseSet};
use crate::synthesis::ControllerBundle;

/// Input or state excess above this counts as a violation.
pub const VIOLATION_TOL: f64 = 1e-9;

/// The SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn run_seed(master: u64, run: usize) -> u64 {
    splitmix64(splitmix64(master) ^ run as u64)
}

/// First `j` whose cumulative probability exceeds `draw`; rows that sum
/// slightly below 1 fall back to the last mode with positive probability.
pub fn mode_from_draw(row: &[f64], draw: f64) -> usize {
    let mut acc = 0.0;
    for (j, p) in row.iter().enumerate() {
        acc += p;
        if acc > draw {
            return j;
        }
    }
    row.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Inverse-CDF sample from row `i` of `transition` using one uniform draw.
pub fn sample_next_mode<R: RngCore>(rng: &mut R, transition: &Mat, i: usize) -> usize {
    let draw: f64 = rng.gen();
    let row: Vec<f64> = transition.row(i).iter().copied().collect();
    mode_from_draw(&row, draw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantKind {
    /// `x⁺ = A_{iθ(x)}x + B_{iθ(x)}u`.
    FuzzyBlend,
    /// Euler-discretized arm dynamics; needs a model built from arm parameters.
    NonlinearArm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Dpo,
    /// `u = K_{iϑ}x` everywhere.
    TerminalGainOnly,
    /// `u = 0`.
    OpenLoop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub horizon: usize,
    pub runs: usize,
    pub seed: u64,
    pub plant: PlantKind,
    pub controller: ControllerKind,
    pub x0: Vector,
    /// 0-based initial mode.
    pub mode0: usize,
}

impl SimConfig {
    pub fn new(x0: Vector) -> Self {
        SimConfig {
            horizon: 50,
            runs: 100,
            seed: 0,
            plant: PlantKind::FuzzyBlend,
            controller: ControllerKind::Dpo,
            x0,
            mode0: 0,
        }
    }

    pub fn validate(&self, model: &FuzzyMjsModel) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.into()));
        if self.horizon < 1 {
            return bad("horizon must be at least 1");
        }
        if self.runs < 1 {
            return bad("runs must be at least 1");
        }
        if self.x0.len() != model.n_x {
            return bad("initial state has the wrong length");
        }
        if self.mode0 >= model.modes() {
            return bad("initial mode out of range");
        }
        if self.plant == PlantKind::NonlinearArm && model.arm.is_none() {
            return bad("the nonlinear plant needs a model built from arm parameters");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("bundle does not match the model: {0}")]
    BundleMismatch(String),
}

/// Source of wall-clock time in seconds; simulations without one record zero.
pub trait Clock {
    fn now(&self) -> f64;
}

pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub x: Vector,
    pub u: Vector,
    /// 0-based mode active during this step.
    pub mode: usize,
    pub eta: Vector,
    /// `None` for the baseline controllers.
    pub branch: Option<Branch>,
    /// `xᵀP_{iθ}x`.
    pub lyapunov: f64,
    pub in_terminal_set: bool,
    /// `xᵀSx + uᵀRu`.
    pub stage_cost: f64,
    pub op5_iterations: usize,
    pub op5_seconds: f64,
    /// Largest `|u_e| − ŭ_e`.
    pub input_excess: f64,
    /// Largest `|(Φx)_f| − x̆_f`.
    pub state_excess: f64,
}

impl StepRecord {
    pub fn violates_input(&self) -> bool {
        self.input_excess > VIOLATION_TOL
    }

    pub fn violates_state(&self) -> bool {
        self.state_excess > VIOLATION_TOL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    /// The controller failed at `step`; the run stops there.
    Failed { step: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    /// State and mode after the last recorded step.
    pub final_x: Vector,
    pub final_mode: usize,
    /// `x_Nᵀ P x_N` at the final state, the tail bound of the truncated cost.
    pub final_lyapunov: f64,
    pub final_in_terminal_set: bool,
    pub final_state_excess: f64,
    pub status: RunStatus,
}

impl SimulationTrace {
    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.stage_cost).sum()
    }

    /// First step whose state lies in the terminal set.
    pub fn terminal_entry(&self) -> Option<usize> {
        self.steps.iter().find(|s| s.in_terminal_set).map(|s| s.step)
    }

    /// Steps after the terminal entry whose state is outside the terminal set,
    /// including the final state.
    pub fn terminal_exits(&self) -> usize {
        let Some(entry) = self.terminal_entry() else { return 0 };
        let after = self.steps.iter().filter(|s| s.step > entry && !s.in_terminal_set).count();
        after + usize::from(!self.final_in_terminal_set)
    }

    /// `‖x_s‖²` for `s = 0..=N`.
    pub fn squared_norms(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.x.norm_squared()).chain(core::iter::once(self.final_x.norm_squared())).collect()
    }

    pub fn violations(&self) -> (usize, usize) {
        let input = self.steps.iter().filter(|s| s.violates_input()).count();
        let state = self.steps.iter().filter(|s| s.violates_state()).count()
            + usize::from(self.final_state_excess > VIOLATION_TOL);
        (input, state)
    }
}

fn terminal_value(bundle: &ControllerBundle, model: &FuzzyMjsModel, x: &Vector, mode: usize) -> Option<f64> {
    let theta = model.evaluate_membership(x, PremiseSet::Plant).ok()?;
    Some(linalg::quad(&bundle.terminal_shape(mode, &theta), x))
}

fn check_inputs(model: &FuzzyMjsModel, bundle: &ControllerBundle, config: &SimConfig) -> Result<(), SimError> {
    config.validate(model)?;
    bundle.check_against(model).map_err(SimError::BundleMismatch)
}

/// One closed-loop rollout of `config.horizon` steps seeded with `seed`.
pub fn simulate_seeded(
    model: &FuzzyMjsModel,
    bundle: &ControllerBundle,
    config: &SimConfig,
    seed: u64,
    clock: &dyn Clock,
) -> Result<SimulationTrace, SimError> {
    check_inputs(model, bundle, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = &model.state_weight;
    let r = &model.input_weight;
    let mut x = config.x0.clone();
    let mut mode = config.mode0;
    let mut steps = Vec::with_capacity(config.horizon);
    let mut status = RunStatus::Completed;

    for step in 0..config.horizon {
        let started = clock.now();
        let decision = match config.controller {
            ControllerKind::Dpo => control(bundle, model, &x, mode).map(Some),
            _ => Ok(None),
        };
        let elapsed = clock.now() - started;
        let decision = match decision {
            Ok(d) => d,
            Err(e) => {
                status = RunStatus::Failed { step, reason: alloc::format!("{e}") };
                break;
            }
        };
        let vartheta = match model.evaluate_membership(&x, PremiseSet::Controller) {
            Ok(v) => v,
            Err(e) => {
                status = RunStatus::Failed { step, reason: alloc::format!("{}", ControlError::from(e)) };
                break;
            }
        };
        let Some(lyapunov) = terminal_value(bundle, model, &x, mode) else {
            status = RunStatus::Failed { step, reason: "non-finite state".into() };
            break;
        };
        let (u, eta, branch, iterations) = match (&decision, config.controller) {
            (Some(d), _) => (d.u.clone(), d.eta.clone(), Some(d.branch), d.iterations),
            (None, ControllerKind::TerminalGainOnly) => (bundle.gain(mode, &vartheta) * &x, Vector::zeros(model.n_x), None, 0),
            (None, _) => (Vector::zeros(model.n_u), Vector::zeros(model.n_x), None, 0),
        };
        let stage_cost = linalg::quad(s, &x) + linalg::quad(r, &u);
        let next = match config.plant {
            PlantKind::FuzzyBlend => match model.step(&x, &u, mode) {
                Ok(v) => v,
                Err(e) => {
                    status = RunStatus::Failed { step, reason: alloc::format!("{e}") };
                    break;
                }
            },
            PlantKind::NonlinearArm => {
                let params = model.arm.as_ref().expect("validated");
                nonlinear_arm_step(params, mode, &x, &u)
            }
        };
        steps.push(StepRecord {
            step,
            input_excess: model.constraints.input_excess(&u),
            state_excess: model.constraints.state_excess(&x),
            x,
            u,
            mode,
            eta,
            branch,
            lyapunov,
            in_terminal_set: lyapunov <= bundle.sigma,
            stage_cost,
            op5_iterations: iterations,
            op5_seconds: if branch == Some(Branch::Perturbed) { elapsed } else { 0.0 },
        });
        x = next;
        mode = sample_next_mode(&mut rng, &model.transition, mode);
    }

    let final_lyapunov = terminal_value(bundle, model, &x, mode).unwrap_or(f64::INFINITY);
    if status == RunStatus::Completed && !final_lyapunov.is_finite() {
        status = RunStatus::Failed { step: config.horizon, reason: "non-finite state".into() };
    }
    Ok(SimulationTrace {
        seed,
        steps,
        final_state_excess: model.constraints.state_excess(&x),
        final_in_terminal_set: final_lyapunov <= bundle.sigma,
        final_x: x,
        final_mode: mode,
        final_lyapunov,
        status,
    })
}

/// Run 0 of the batch described by `config`.
pub fn simulate(model: &FuzzyMjsModel, bundle: &ControllerBundle, config: &SimConfig) -> Result<SimulationTrace, SimError> {
    simulate_seeded(model, bundle, config, run_seed(config.seed, 0), &NoClock)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub config: SimConfig,
    pub seeds: Vec<u64>,
    pub traces: Vec<SimulationTrace>,
    /// Mean of `‖x_s‖²` over the runs that reached step `s`, `s = 0..=N`.
    pub mean_sq_norm: Vec<f64>,
    pub max_sq_norm: Vec<f64>,
    pub mean_cost: f64,
    pub input_violations: usize,
    pub state_violations: usize,
    pub mean_op5_seconds: f64,
    pub max_op5_seconds: f64,
    pub mean_op5_iterations: f64,
    pub max_op5_iterations: usize,
    pub terminal_entry: Vec<Option<usize>>,
    pub terminal_exits: usize,
    /// `(run, step, reason)` of every failed run.
    pub failures: Vec<(usize, usize, String)>,
}

/// Runs `config.runs` independent rollouts and aggregates them.
pub fn monte_carlo_timed(
    model: &FuzzyMjsModel,
    bundle: &ControllerBundle,
    config: &SimConfig,
    clock: &dyn Clock,
) -> Result<MonteCarloReport, SimError> {
    check_inputs(model, bundle, config)?;
    let seeds: Vec<u64> = (0..config.runs).map(|r| run_seed(config.seed, r)).collect();
    let traces = seeds
        .iter()
        .map(|&seed| simulate_seeded(model, bundle, config, seed, clock))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate(config.clone(), seeds, traces))
}

pub fn monte_carlo(model: &FuzzyMjsModel, bundle: &ControllerBundle, config: &SimConfig) -> Result<MonteCarloReport, SimError> {
    monte_carlo_timed(model, bundle, config, &NoClock)
}

/// Builds a report from stored traces.
pub fn aggregate(config: SimConfig, seeds: Vec<u64>, traces: Vec<SimulationTrace>) -> MonteCarloReport {
    let len = config.horizon + 1;
    let mut sum = alloc::vec![0.0; len];
    let mut count = alloc::vec![0usize; len];
    let mut max_sq_norm = alloc::vec![0.0f64; len];
    for t in &traces {
        for (s, v) in t.squared_norms().into_iter().enumerate().take(len) {
            sum[s] += v;
            count[s] += 1;
            max_sq_norm[s] = max_sq_norm[s].max(v);
        }
    }
    let mean_sq_norm = sum.iter().zip(&count).map(|(s, c)| if *c > 0 { s / *c as f64 } else { f64::NAN }).collect();
    let perturbed: Vec<&StepRecord> =
        traces.iter().flat_map(|t| t.steps.iter()).filter(|s| s.branch == Some(Branch::Perturbed)).collect();
    let mean_of = |f: &dyn Fn(&StepRecord) -> f64| {
        if perturbed.is_empty() {
            0.0
        } else {
            perturbed.iter().map(|s| f(s)).sum::<f64>() / perturbed.len() as f64
        }
    };
    let (input_violations, state_violations) =
        traces.iter().map(SimulationTrace::violations).fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let failures = traces
        .iter()
        .enumerate()
        .filter_map(|(r, t)| match &t.status {
            RunStatus::Failed { step, reason } => Some((r, *step, reason.clone())),
            RunStatus::Completed => None,
        })
        .collect();
    MonteCarloReport {
        mean_cost: traces.iter().map(SimulationTrace::total_cost).sum::<f64>() / traces.len().max(1) as f64,
        mean_sq_norm,
        max_sq_norm,
        input_violations,
        state_violations,
        mean_op5_seconds: mean_of(&|s| s.op5_seconds),
        max_op5_seconds: perturbed.iter().map(|s| s.op5_seconds).fold(0.0, f64::max),
        mean_op5_iterations: mean_of(&|s| s.op5_iterations as f64),
        max_op5_iterations: perturbed.iter().map(|s| s.op5_iterations).max().unwrap_or(0),
        terminal_entry: traces.iter().map(SimulationTrace::terminal_entry).collect(),
        terminal_exits: traces.iter().map(SimulationTrace::terminal_exits).sum(),
        failures,
        config,
        seeds,
        traces,
    }
}

/// Pooled `V_{s+1} − V_s + ℓ_s` over consecutive steps that both start in the
/// terminal set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecreaseStats {
    pub samples: usize,
    pub mean: f64,
    /// Standard error of `mean`.
    pub std_err: f64,
}

pub fn terminal_decrease(traces: &[SimulationTrace]) -> DecreaseStats {
    let mut values = Vec::new();
    for t in traces {
        let next_v = t.steps.iter().skip(1).map(|s| (s.lyapunov, s.in_terminal_set)).chain(core::iter::once((
            t.final_lyapunov,
            t.final_in_terminal_set,
        )));
        for (s, (v1, _)) in t.steps.iter().zip(next_v) {
            if s.in_terminal_set && t.status == RunStatus::Completed {
                values.push(v1 - s.lyapunov + s.stage_cost);
            }
        }
    }
    let n = values.len();
    if n == 0 {
        return DecreaseStats { samples: 0, mean: 0.0, std_err: 0.0 };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    DecreaseStats { samples: n, mean, std_err: libm::sqrt(var / n as f64) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{arm_transition, ConstraintSpec, Membership};
    use crate::synthesis::{synthesize, SynthesisOptions};

    fn scalar_setup() -> (FuzzyMjsModel, ControllerBundle) {
        let model = FuzzyMjsModel {
            n_x: 1,
            n_u: 1,
            a: vec![vec![Mat::from_element(1, 1, 1.1)], vec![Mat::from_element(1, 1, 0.9)]],
            b: vec![vec![Mat::from_element(1, 1, 1.0)], vec![Mat::from_element(1, 1, 0.5)]],
            transition: Mat::from_row_slice(2, 2, &[0.6, 0.4, 0.3, 0.7]),
            plant_membership: Membership::Single,
            controller_membership: Membership::Single,
            state_weight: Mat::identity(1, 1),
            input_weight: Mat::identity(1, 1),
            constraints: ConstraintSpec {
                u_bound: Vector::from_element(1, 5.0),
                x_bound: Vector::from_element(1, 10.0),
                phi: Mat::identity(1, 1),
            },
            arm: None,
        };
        let bundle = synthesize(&model, &SynthesisOptions::default()).unwrap();
        (model, bundle)
    }

    #[test]
    fn splitmix_matches_reference_stream() {
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_ne!(run_seed(7, 0), run_seed(7, 1));
        let batch = |m: u64| -> std::collections::BTreeSet<u64> { (0..100).map(|r| run_seed(m, r)).collect() };
        assert!(batch(0).is_disjoint(&batch(1)));
    }

    #[test]
    fn draw_selects_first_cumulative_exceedance() {
        assert_eq!(mode_from_draw(&[1.0, 0.0, 0.0, 0.0], 0.999), 0);
        assert_eq!(mode_from_draw(&[0.5, 0.5], 0.75), 1);
        assert_eq!(mode_from_draw(&[0.5, 0.5], 0.5), 1);
        assert_eq!(mode_from_draw(&[0.5, 0.5], 0.4999), 0);
        assert_eq!(mode_from_draw(&[0.3, 0.3, 0.0], 0.9999), 1);
    }

    #[test]
    fn degenerate_row_always_stays() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = Mat::identity(4, 4);
        assert!((0..1000).all(|_| sample_next_mode(&mut rng, &t, 0) == 0));
    }

    #[test]
    fn empirical_frequencies_match_the_transition_row() {
        let t = arm_transition();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 1_000_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[sample_next_mode(&mut rng, &t, 0)] += 1;
        }
        for (j, c) in counts.iter().enumerate() {
            let p = t[(0, j)];
            let sd = libm::sqrt(p * (1.0 - p) / draws as f64);
            let freq = *c as f64 / draws as f64;
            assert!((freq - p).abs() <= 3.0 * sd, "mode {j}: {freq} vs {p}");
        }
    }

    #[test]
    fn origin_is_an_equilibrium() {
        let (model, bundle) = scalar_setup();
        let mut cfg = SimConfig::new(Vector::zeros(1));
        cfg.horizon = 10;
        let t = simulate(&model, &bundle, &cfg).unwrap();
        assert!(t.steps.iter().all(|s| s.x[0] == 0.0 && s.stage_cost == 0.0));
        assert_eq!(t.total_cost(), 0.0);
        assert_eq!(t.terminal_entry(), Some(0));
    }

    #[test]
    fn same_seed_gives_identical_reports() {
        let (model, bundle) = scalar_setup();
        let mut cfg = SimConfig::new(Vector::from_element(1, 3.0));
        cfg.runs = 5;
        cfg.horizon = 20;
        cfg.seed = 11;
        let a = monte_carlo(&model, &bundle, &cfg).unwrap();
        let b = monte_carlo(&model, &bundle, &cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed = 12;
        let c = monte_carlo(&model, &bundle, &cfg).unwrap();
        assert_ne!(a.seeds, c.seeds);
    }

    #[test]
    fn single_run_batch_reduces_to_simulate() {
        let (model, bundle) = scalar_setup();
        let mut cfg = SimConfig::new(Vector::from_element(1, 3.0));
        cfg.runs = 1;
        let report = monte_carlo(&model, &bundle, &cfg).unwrap();
        assert_eq!(report.traces, vec![simulate(&model, &bundle, &cfg).unwrap()]);
        assert_eq!(report.mean_cost, report.traces[0].total_cost());
    }

    #[test]
    fn closed_loop_settles_and_respects_bounds() {
        let (model, bundle) = scalar_setup();
        let mut cfg = SimConfig::new(Vector::from_element(1, 3.0));
        cfg.runs = 20;
        let report = monte_carlo(&model, &bundle, &cfg).unwrap();
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        assert_eq!((report.input_violations, report.state_violations), (0, 0));
        assert_eq!(report.terminal_exits, 0);
        assert!(report.mean_sq_norm[cfg.horizon] < 1e-3 * 9.0);
        let d = terminal_decrease(&report.traces);
        assert!(d.samples > 0);
        assert!(d.mean <= 3.0 * d.std_err);
    }

    #[test]
    fn baselines_skip_the_perturbation_problem() {
        let (model, bundle) = scalar_setup();
        let mut cfg = SimConfig::new(Vector::from_element(1, 3.0));
        cfg.controller = ControllerKind::OpenLoop;
        cfg.horizon = 5;
        let t = simulate(&model, &bundle, &cfg).unwrap();
        assert!(t.steps.iter().all(|s| s.u[0] == 0.0 && s.branch.is_none()));
        cfg.controller = ControllerKind::TerminalGainOnly;
        let t = simulate(&model, &bundle, &cfg).unwrap();
        let first = &t.steps[0];
        assert_eq!(first.u[0], bundle.k[0][0][(0, 0)] * 3.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let (model, bundle) = scalar_setup();
        let mut cfg = SimConfig::new(Vector::from_element(1, 1.0));
        cfg.horizon = 0;
        assert!(matches!(simulate(&model, &bundle, &cfg), Err(SimError::InvalidConfig(_))));
        let mut cfg = SimConfig::new(Vector::from_element(1, 1.0));
        cfg.plant = PlantKind::NonlinearArm;
        assert!(matches!(simulate(&model, &bundle, &cfg), Err(SimError::InvalidConfig(_))));
        let cfg = SimConfig::new(Vector::zeros(2));
        assert!(matches!(simulate(&model, &bundle, &cfg), Err(SimError::InvalidConfig(_))));
    }
}
