//! Barrier-method solver for small dense SDPs with log-determinant terms.
//!
//! Problems come from [`crate::lmi::Problem::compile`]. A constraint
//! `S_j(x) ≼ −ε_j I` contributes the barrier `−logdet(−S_j(x) − ε_j I)`; an
//! objective term `−w logdet D(x)` is carried with weight `t·w`, so each
//! centering step minimizes
//!
//! ```text
//! t·(cᵀx − Σ w_k logdet D_k(x)) − Σ_j logdet(−S_j(x) − ε_j I)
//! ```
//!
//! The run stops once `m/t ≤ duality_tol·max(1, |f|)`, with `m` the total
//! barrier dimension. All unknowns are also kept inside a large box
//! `|x_k| < variable_bound`.

mod barrier;

use alloc::vec::Vec;

use crate::linalg::{self, Vector};
use crate::lmi::{AffineSym, CompiledProblem, SparseTerm};
use barrier::{BarrierProblem, Block};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub feas_tol: f64,
    pub duality_tol: f64,
    /// Limit on outer (centering) iterations.
    pub max_iters: usize,
    /// Factor applied to `1/t` after each centering.
    pub barrier_shrink: f64,
    pub backtrack: f64,
    /// Phase I reports feasibility only when the slack is below `−margin`.
    pub margin: f64,
    pub max_newton: usize,
    pub newton_tol: f64,
    /// Phase I returns as soon as the slack drops below `−phase1_target`.
    pub phase1_target: f64,
    pub phase1_radius: f64,
    pub variable_bound: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            feas_tol: 1e-8,
            duality_tol: 1e-8,
            max_iters: 200,
            barrier_shrink: 0.2,
            backtrack: 0.5,
            margin: 1e-9,
            max_newton: 500,
            newton_tol: 1e-10,
            phase1_target: 1e-3,
            phase1_radius: 10.0,
            variable_bound: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SdpError {
    #[error("invalid solver option `{0}`")]
    InvalidOption(&'static str),
    #[error("starting point has length {got}, expected {expected}")]
    StartDimension { got: usize, expected: usize },
    #[error("starting point is not strictly feasible")]
    StartNotInterior,
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), SdpError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let factor = |v: f64| v > 0.0 && v < 1.0;
        if !positive(self.feas_tol) {
            return Err(SdpError::InvalidOption("feas_tol"));
        }
        if !positive(self.duality_tol) {
            return Err(SdpError::InvalidOption("duality_tol"));
        }
        if !factor(self.barrier_shrink) {
            return Err(SdpError::InvalidOption("barrier_shrink"));
        }
        if !factor(self.backtrack) {
            return Err(SdpError::InvalidOption("backtrack"));
        }
        if !(self.margin >= 0.0) {
            return Err(SdpError::InvalidOption("margin"));
        }
        if self.max_iters == 0 || self.max_newton == 0 {
            return Err(SdpError::InvalidOption("max_iters"));
        }
        if !positive(self.newton_tol) || !positive(self.phase1_target) || !positive(self.variable_bound) || !positive(self.phase1_radius) {
            return Err(SdpError::InvalidOption("newton_tol"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub x: Vector,
    pub status: SolveStatus,
    pub objective: f64,
    /// `λ_max(S_j(x))` per constraint.
    pub max_eigs: Vec<f64>,
    /// Newton steps over both phases.
    pub iterations: usize,
    pub outer_iterations: usize,
    /// Objective after each centering step of phase II.
    pub history: Vec<f64>,
    /// Final gap bound `m/t`.
    pub gap: f64,
    pub phase1_slack: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase1Status {
    Feasible,
    Infeasible,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase1Result {
    pub status: Phase1Status,
    pub x: Vector,
    /// Smallest `s` reached with `S_j(x) + ε_j I ≼ s·I` (and `D_k(x) ≽ −s·I`).
    pub slack: f64,
    pub iterations: usize,
}

/// Finds a strictly feasible point by minimizing a common slack `s ≥ −1`.
///
/// The unknowns are confined to a box of radius `phase1_radius`, enlarged
/// 100-fold up to `variable_bound` while no feasible point is found.
pub fn phase1(problem: &CompiledProblem, options: &SolverOptions) -> Phase1Result {
    let n = problem.n;
    let s_idx = n;
    let shift_term = |dim: usize| SparseTerm { k: s_idx, entries: (0..dim).map(|i| (i, i, -1.0)).collect() };
    let mut maps: Vec<AffineSym> = Vec::new();
    for c in &problem.constraints {
        let mut f0 = c.map.f0.clone();
        for i in 0..c.map.dim {
            f0[(i, i)] += c.margin;
        }
        let mut terms = c.map.terms.clone();
        terms.push(shift_term(c.map.dim));
        maps.push(AffineSym { dim: c.map.dim, f0, terms });
    }
    for (d, _) in &problem.logdet {
        let mut terms: Vec<SparseTerm> = d
            .terms
            .iter()
            .map(|t| SparseTerm { k: t.k, entries: t.entries.iter().map(|&(r, c, v)| (r, c, -v)).collect() })
            .collect();
        terms.push(shift_term(d.dim));
        maps.push(AffineSym { dim: d.dim, f0: -&d.f0, terms });
    }
    maps.push(AffineSym {
        dim: 1,
        f0: linalg::Mat::from_element(1, 1, -1.0),
        terms: alloc::vec![SparseTerm { k: s_idx, entries: alloc::vec![(0, 0, -1.0)] }],
    });
    let start = Vector::zeros(n + 1);
    let worst = maps.iter().map(|m| linalg::max_eig(&m.evaluate(&start))).fold(0.0f64, f64::max);
    let s0 = worst + 1.0;
    let mut c = Vector::zeros(n + 1);
    c[s_idx] = 1.0;
    let m_total = maps.iter().map(|m| m.dim).sum::<usize>() as f64 + 2.0 * (n + 1) as f64;
    let mut radius = options.phase1_radius.min(options.variable_bound);
    let mut iterations = 0;
    loop {
        let blocks: Vec<Block> = maps.iter().map(|m| Block { map: m, sign: -1.0, shift: 0.0, alpha: 1.0, objective: false }).collect();
        let mut bound = Vector::from_element(n + 1, radius);
        bound[s_idx] = (4.0 * s0).max(radius);
        let bp = BarrierProblem { n: n + 1, c: &c, blocks, bound, m_total };
        let mut y0 = start.clone();
        y0[s_idx] = s0;
        let target = -options.phase1_target;
        let out = bp.run(y0, options, &|y: &Vector| y[s_idx] < target);
        iterations += out.newton_steps;
        let slack = out.x[s_idx];
        let x = out.x.rows(0, n).into_owned();
        let last = radius >= options.variable_bound;
        if slack < -options.margin || last {
            let status = if slack < -options.margin {
                Phase1Status::Feasible
            } else if out.converged {
                Phase1Status::Infeasible
            } else {
                Phase1Status::Indeterminate
            };
            return Phase1Result { status, x, slack, iterations };
        }
        radius = (radius * 100.0).min(options.variable_bound);
    }
}

fn blocks_for(problem: &CompiledProblem) -> Vec<Block<'_>> {
    let mut blocks: Vec<Block> = problem
        .constraints
        .iter()
        .map(|c| Block { map: &c.map, sign: -1.0, shift: -c.margin, alpha: 1.0, objective: false })
        .collect();
    for (d, w) in &problem.logdet {
        blocks.push(Block { map: d, sign: 1.0, shift: 0.0, alpha: *w, objective: true });
    }
    blocks
}

/// Whether `x` is strictly inside every cone and the box.
pub fn is_interior(problem: &CompiledProblem, x: &Vector, options: &SolverOptions) -> bool {
    x.len() == problem.n
        && x.iter().all(|v| v.abs() < options.variable_bound)
        && problem.constraints.iter().all(|c| {
            let mut z = -c.map.evaluate(x);
            for i in 0..z.nrows() {
                z[(i, i)] -= c.margin;
            }
            linalg::is_pd(&z)
        })
        && problem.logdet.iter().all(|(d, _)| linalg::is_pd(&d.evaluate(x)))
}

/// Runs phase I, then the barrier method.
pub fn solve(problem: &CompiledProblem, options: &SolverOptions) -> Result<SdpSolution, SdpError> {
    options.validate()?;
    let p1 = phase1(problem, options);
    if p1.status != Phase1Status::Feasible || !is_interior(problem, &p1.x, options) {
        let status = if p1.status == Phase1Status::Infeasible { SolveStatus::Infeasible } else { SolveStatus::MaxIter };
        return Ok(finish(problem, p1.x, status, p1.iterations, 0, Vec::new(), f64::INFINITY, Some(p1.slack)));
    }
    let mut sol = solve_from(problem, p1.x, options)?;
    sol.iterations += p1.iterations;
    sol.phase1_slack = Some(p1.slack);
    Ok(sol)
}

/// Runs the barrier method from a caller-supplied strictly feasible point.
pub fn solve_from(problem: &CompiledProblem, x0: Vector, options: &SolverOptions) -> Result<SdpSolution, SdpError> {
    options.validate()?;
    if x0.len() != problem.n {
        return Err(SdpError::StartDimension { got: x0.len(), expected: problem.n });
    }
    if !is_interior(problem, &x0, options) {
        return Err(SdpError::StartNotInterior);
    }
    let blocks = blocks_for(problem);
    let m_total = blocks.iter().map(|b| b.map.dim).sum::<usize>() as f64 + 2.0 * problem.n as f64;
    let bound = Vector::from_element(problem.n, options.variable_bound);
    let bp = BarrierProblem { n: problem.n, c: &problem.c, blocks, bound, m_total };
    let out = bp.run(x0, options, &|_| false);
    let status = if out.converged { SolveStatus::Optimal } else { SolveStatus::MaxIter };
    Ok(finish(problem, out.x, status, out.newton_steps, out.outer, out.history, out.gap, None))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    problem: &CompiledProblem,
    x: Vector,
    status: SolveStatus,
    iterations: usize,
    outer_iterations: usize,
    mut history: Vec<f64>,
    gap: f64,
    phase1_slack: Option<f64>,
) -> SdpSolution {
    let max_eigs = (0..problem.constraints.len()).map(|j| linalg::max_eig(&problem.constraint_value(j, &x))).collect();
    let objective = problem.objective(&x).unwrap_or(f64::NAN);
    for h in &mut history {
        *h += problem.c0;
    }
    SdpSolution { x, status, objective, max_eigs, iterations, outer_iterations, history, gap, phase1_slack }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// `λ_max(S_j(x))` per constraint.
    pub max_eigs: Vec<f64>,
    /// `λ_min(D_k(x))` per logdet block.
    pub logdet_min_eigs: Vec<f64>,
    pub objective: Option<f64>,
    /// Largest of `λ_max(S_j) + ε_j` and `−λ_min(D_k)`.
    pub worst_violation: f64,
    pub passed: bool,
}

/// Residuals of `x`; `passed` means every violation is at most `tol`.
pub fn check_solution(problem: &CompiledProblem, x: &Vector, tol: f64) -> ResidualReport {
    let max_eigs: Vec<f64> = (0..problem.constraints.len()).map(|j| linalg::max_eig(&problem.constraint_value(j, x))).collect();
    let logdet_min_eigs: Vec<f64> = problem.logdet.iter().map(|(d, _)| linalg::min_eig(&d.evaluate(x))).collect();
    let worst_violation = max_eigs
        .iter()
        .zip(&problem.constraints)
        .map(|(e, c)| e + c.margin)
        .chain(logdet_min_eigs.iter().map(|e| -e))
        .fold(f64::NEG_INFINITY, f64::max);
    let passed = !(worst_violation > tol);
    ResidualReport { max_eigs, logdet_min_eigs, objective: problem.objective(x), worst_violation, passed }
}
