//! Offline synthesis in three stages.
//!
//! 1. The terminal-set stage ([`build_op2`]) finds mode- and rule-dependent
//!    feedback gains `K` and terminal ellipsoids `{x : xᵀP x ≤ σ}`.
//! 2. The prediction stage ([`build_op3`]) fixes `K` and maximizes the
//!    projection of an augmented invariant ellipsoid `ξᵀ𝒫ξ ≤ 1` over
//!    `ξ = [x; η]`, yielding the perturbation dynamics `𝒜` and output `𝒞`.
//! 3. The cost-bound stage ([`build_op4`]) fixes `K`, `𝒜`, `𝒞` and finds the
//!    block-diagonal quadratic cost bound `Ψ`.
//!
//! [`synthesize`] runs the three stages and packs everything into a
//! [`ControllerBundle`]; [`certify`] re-checks the bundle on a membership grid.

mod bundle;
mod certify;
mod cost;
mod prediction;
mod terminal;


use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

pub use bundle::{ControllerBundle, Provenance, StageReport};
pub use certify::{
    certify, lyapunov_feasibility, simplex_grid, CertificateReport, FamilyResult, GainCertificate, CERT_STRICTNESS,
};
pub use cost::{build_op4, recover_cost, CostBlocks, CostProblem, CostValues};
pub use prediction::{
    build_op3, factorize, recover_prediction, FactorConvention, FactorError, PredictionProblem, PredictionSet,
    PredictionValues,
};
pub use terminal::{build_op2, recover_terminal, TerminalGains, TerminalProblem, TerminalValues};

use crate::linalg::{Mat, Vector};
use crate::lmi::{CompiledProblem, LmiError, MatExpr, Problem, Var};
use crate::model::FuzzyMjsModel;
use crate::sdp::{self, SdpError, SdpSolution, SolveStatus, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Terminal,
    Prediction,
    Cost,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Terminal => "terminal-set stage",
            Stage::Prediction => "prediction stage",
            Stage::Cost => "cost-bound stage",
        })
    }
}

/// How the prediction stage couples the slack matrices `Y` across the
/// successor mode `j` and successor rule `ω`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// One `Y_{i,υ}` for all `(j, ω)`, with `E = I`, `F = M − L`.
    Consistent,
    /// Independent `Y_{ij,υω}`, with `E = M − L`, `F = I`; `𝒜` averages
    /// `E_j⁻¹ Y_{ij,υυ} F⁻ᵀ` over `j`.
    Independent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOptions {
    pub solver: SolverOptions,
    /// Strictness margin of the terminal and cost-bound LMIs.
    pub margin: f64,
    /// Strictness margin of the prediction LMIs.
    pub prediction_margin: f64,
    /// States that every terminal ellipsoid must contain; `None` uses
    /// `0.5·e_k` for each coordinate `k`.
    pub anchors: Option<Vec<Vector>>,
    /// Require `P` to decrease along every possible jump, not only in mean.
    pub mode_robust: bool,
    pub coupling: Coupling,
    /// Points per simplex edge for the certificates.
    pub grid: usize,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            solver: SolverOptions::default(),
            margin: 1e-7,
            prediction_margin: 1e-4,
            anchors: None,
            mode_robust: true,
            coupling: Coupling::Consistent,
            grid: 5,
        }
    }
}

impl SynthesisOptions {
    pub fn anchor_states(&self, n_x: usize) -> Vec<Vector> {
        match &self.anchors {
            Some(a) => a.clone(),
            None => (0..n_x)
                .map(|k| {
                    let mut v = Vector::zeros(n_x);
                    v[k] = 0.5;
                    v
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthesisError {
    #[error("invalid model: {}", .0.join("; "))]
    InvalidModel(Vec<String>),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("{stage}: {source}")]
    Lmi { stage: Stage, source: LmiError },
    #[error("{stage}: {source}")]
    Sdp { stage: Stage, source: SdpError },
    #[error("{stage} infeasible: constraint `{constraint}` exceeds its bound by {excess:e}")]
    Infeasible { stage: Stage, constraint: String, excess: f64 },
    #[error("{stage} did not converge (status {status:?})")]
    NotConverged { stage: Stage, status: SolveStatus },
    #[error("G for mode {mode}, rule {rule} is singular (condition number {cond:e})")]
    SingularG { mode: usize, rule: usize, cond: f64 },
    #[error("M − L for mode {mode}, rule {rule} cannot be factorized: {reason}")]
    Factorization { mode: usize, rule: usize, reason: FactorError },
    #[error("{what} for mode {mode}, rule {rule} is not positive definite")]
    NotPositiveDefinite { what: &'static str, mode: usize, rule: usize },
    #[error("𝒫𝒫⁻¹ for mode {mode}, rule {rule} deviates from I by {residual:e}")]
    InverseResidual { mode: usize, rule: usize, residual: f64 },
}

/// Compiles and solves one stage, turning failures into stage errors.
pub(crate) fn run_stage(
    stage: Stage,
    problem: &Problem,
    options: &SolverOptions,
) -> Result<(CompiledProblem, SdpSolution), SynthesisError> {
    let cp = problem.compile().map_err(|source| SynthesisError::Lmi { stage, source })?;
    let sol = sdp::solve(&cp, options).map_err(|source| SynthesisError::Sdp { stage, source })?;
    match sol.status {
        SolveStatus::Optimal => Ok((cp, sol)),
        SolveStatus::Infeasible => {
            let (j, excess) = sol
                .max_eigs
                .iter()
                .zip(&cp.constraints)
                .map(|(e, c)| e + c.margin)
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, e)| if e > best.1 { (j, e) } else { best });
            let constraint = cp.constraints.get(j).map(|c| c.name.clone()).unwrap_or_default();
            Err(SynthesisError::Infeasible { stage, constraint, excess })
        }
        status => Err(SynthesisError::NotConverged { stage, status }),
    }
}

/// `[V]_{ee} ≤ b_e²` for every diagonal entry.
pub(crate) fn diagonal_caps(p: &mut Problem, name: &str, v: Var, bounds: &Vector) {
    let n = bounds.len();
    for e in 0..n {
        let mut row = Mat::zeros(1, n);
        row[(0, e)] = 1.0;
        let entry = MatExpr::var(v).lmul(&row).rmul(&row.transpose());
        let cap = MatExpr::constant(Mat::from_element(1, 1, bounds[e] * bounds[e]));
        p.add_lmi(&format!("{name} cap {}", e + 1), entry - cap, 0.0);
    }
}

pub(crate) fn values_of(cp: &CompiledProblem, sol: &SdpSolution) -> Vec<Mat> {
    cp.unpack(&sol.x)
}

fn stage_report(stage: Stage, cp: &CompiledProblem, sol: &SdpSolution) -> StageReport {
    let check = sdp::check_solution(cp, &sol.x, f64::INFINITY);
    StageReport {
        stage,
        objective: sol.objective,
        worst_violation: check.worst_violation,
        iterations: sol.iterations,
        unknowns: cp.n,
        constraints: cp.constraints.len(),
    }
}

/// Runs the terminal-set, prediction and cost-bound stages in order.
pub fn synthesize(model: &FuzzyMjsModel, options: &SynthesisOptions) -> Result<ControllerBundle, SynthesisError> {
    let violations = model.validate();
    if !violations.is_empty() {
        return Err(SynthesisError::InvalidModel(violations.iter().map(|v| format!("{v}")).collect()));
    }
    options.solver.validate().map_err(|e| SynthesisError::InvalidOptions(format!("{e}")))?;
    if options.grid < 2 {
        return Err(SynthesisError::InvalidOptions("grid must have at least 2 points".into()));
    }
    if options.anchors.as_ref().is_some_and(|a| a.iter().any(|x| x.len() != model.n_x)) {
        return Err(SynthesisError::InvalidOptions("anchor state has the wrong length".into()));
    }

    let tp = build_op2(model, options);
    let (cp2, sol2) = run_stage(Stage::Terminal, &tp.problem, &options.solver)?;
    let terminal = recover_terminal(&tp.values(&cp2, &sol2))?;

    let pp = build_op3(model, &terminal.k, options);
    let (cp3, sol3) = run_stage(Stage::Prediction, &pp.problem, &options.solver)?;
    let prediction = recover_prediction(&pp.values(&cp3, &sol3), &model.transition, FactorConvention::for_coupling(options.coupling))?;

    let cq = build_op4(model, &terminal.k, &prediction.a_pred, &prediction.c_pred, options);
    let (cp4, sol4) = run_stage(Stage::Cost, &cq.problem, &options.solver)?;
    let cost = recover_cost(&cq.values(&cp4, &sol4), model.n_x)?;

    let provenance = Provenance {
        stages: vec![
            stage_report(Stage::Terminal, &cp2, &sol2),
            stage_report(Stage::Prediction, &cp3, &sol3),
            stage_report(Stage::Cost, &cp4, &sol4),
        ],
        margin: options.margin,
        prediction_margin: options.prediction_margin,
        coupling: options.coupling,
        mode_robust: options.mode_robust,
        anchors: options.anchor_states(model.n_x),
        feas_tol: options.solver.feas_tol,
        duality_tol: options.solver.duality_tol,
        max_iters: options.solver.max_iters,
        g_cond: terminal.g_cond.clone(),
    };
    Ok(ControllerBundle {
        n_x: model.n_x,
        n_u: model.n_u,
        k: terminal.k,
        p: terminal.p,
        sigma: terminal.sigma,
        a_pred: prediction.a_pred,
        c_pred: prediction.c_pred,
        l: prediction.l,
        m: prediction.m,
        e: prediction.e,
        f: prediction.f,
        big_p: prediction.big_p,
        big_p_inv: prediction.big_p_inv,
        psi_xx: cost.psi_xx,
        psi_eta: cost.psi_eta,
        provenance,
    })
}
