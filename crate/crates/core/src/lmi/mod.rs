//! Symbolic block LMIs over named decision variables.
//!
//! A [`Problem`] collects variable declarations, constraints `S_j(x) ≼ −ε_j I`
//! and an objective `Σ w·tr(E) − Σ w·logdet D`. [`Problem::compile`] flattens
//! it to [`CompiledProblem`], where every constraint is an affine map
//! `S_j(x) = F_j0 + Σ_k x_k F_jk` over a real vector `x`.

mod block;
mod compiled;
mod expr;

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

pub use block::BlockLmi;
pub use compiled::{AffineSym, CompiledLmi, CompiledProblem, SparseTerm};
pub use expr::{MatExpr, Term, Var};

use crate::linalg::{self, Mat};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LmiError {
    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),
    #[error("variable `{0}` is not referenced by any constraint")]
    UnreferencedVariable(String),
    #[error("product of two variable-dependent expressions")]
    Nonlinear,
    #[error("constraint `{0}` is not square")]
    NotSquare(String),
    #[error("constraint `{name}` is not symmetric (asymmetry {asym:e})")]
    NotSymmetric { name: String, asym: f64 },
    #[error("singular (2,2) block")]
    SingularBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Symmetric,
    Rectangular,
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Structure {
    Dense,
    /// Symmetric with zero off-diagonal blocks; sizes of the diagonal blocks.
    BlockDiagonal(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionVar {
    pub name: String,
    pub kind: VarKind,
    pub rows: usize,
    pub cols: usize,
    pub structure: Structure,
}

impl DecisionVar {
    /// Entries `(row, col, value)` of the basis matrix for each scalar unknown.
    ///
    /// Symmetric off-diagonal unknowns carry `1/√2` in both mirrored entries,
    /// so the flat inner product equals the trace inner product.
    pub(crate) fn basis(&self) -> Vec<Vec<(usize, usize, f64)>> {
        match self.kind {
            VarKind::Scalar => alloc::vec![alloc::vec![(0, 0, 1.0)]],
            VarKind::Rectangular => {
                let mut out = Vec::with_capacity(self.rows * self.cols);
                for r in 0..self.rows {
                    for c in 0..self.cols {
                        out.push(alloc::vec![(r, c, 1.0)]);
                    }
                }
                out
            }
            VarKind::Symmetric => {
                let s = core::f64::consts::FRAC_1_SQRT_2;
                let mut out = Vec::new();
                for (start, size) in self.diagonal_blocks() {
                    for r in start..start + size {
                        for c in r..start + size {
                            if r == c {
                                out.push(alloc::vec![(r, r, 1.0)]);
                            } else {
                                out.push(alloc::vec![(r, c, s), (c, r, s)]);
                            }
                        }
                    }
                }
                out
            }
        }
    }

    fn diagonal_blocks(&self) -> Vec<(usize, usize)> {
        match &self.structure {
            Structure::Dense => alloc::vec![(0, self.rows)],
            Structure::BlockDiagonal(sizes) => {
                let mut start = 0;
                sizes
                    .iter()
                    .map(|s| {
                        let b = (start, *s);
                        start += s;
                        b
                    })
                    .collect()
            }
        }
    }

    pub fn len(&self) -> usize {
        match self.kind {
            VarKind::Scalar => 1,
            VarKind::Rectangular => self.rows * self.cols,
            VarKind::Symmetric => self.diagonal_blocks().iter().map(|(_, s)| s * (s + 1) / 2).sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    /// Symmetric expression required to satisfy `expr ≼ −margin·I`.
    pub expr: MatExpr,
    pub margin: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Objective {
    /// `weight · tr(expr)` terms.
    pub linear: Vec<(MatExpr, f64)>,
    /// `−weight · logdet(expr)` terms; each `expr` must stay positive definite.
    pub logdet: Vec<(MatExpr, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Problem {
    vars: Vec<DecisionVar>,
    constraints: Vec<Constraint>,
    objective: Objective,
}

impl Problem {
    pub fn new() -> Self {
        Self::default()
    }

    fn declare(&mut self, name: &str, kind: VarKind, rows: usize, cols: usize, structure: Structure) -> Var {
        let id = self.vars.len();
        self.vars.push(DecisionVar { name: name.into(), kind, rows, cols, structure });
        Var { id, rows, cols }
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> Var {
        self.declare(name, VarKind::Symmetric, n, n, Structure::Dense)
    }

    pub fn symmetric_block_diag(&mut self, name: &str, sizes: &[usize]) -> Var {
        let n = sizes.iter().sum();
        self.declare(name, VarKind::Symmetric, n, n, Structure::BlockDiagonal(sizes.to_vec()))
    }

    pub fn rectangular(&mut self, name: &str, rows: usize, cols: usize) -> Var {
        self.declare(name, VarKind::Rectangular, rows, cols, Structure::Dense)
    }

    pub fn scalar(&mut self, name: &str) -> Var {
        self.declare(name, VarKind::Scalar, 1, 1, Structure::Dense)
    }

    /// Adds `expr ≼ −margin·I`.
    pub fn add_lmi(&mut self, name: &str, expr: MatExpr, margin: f64) {
        self.constraints.push(Constraint { name: name.into(), expr, margin });
    }

    pub fn add_block(&mut self, name: &str, lmi: BlockLmi, margin: f64) {
        self.add_lmi(name, lmi.assemble(), margin);
    }

    /// Adds `expr ≽ margin·I`.
    pub fn add_psd(&mut self, name: &str, expr: MatExpr, margin: f64) {
        self.add_lmi(name, -expr, margin);
    }

    pub fn minimize_trace(&mut self, expr: MatExpr, weight: f64) {
        self.objective.linear.push((expr, weight));
    }

    pub fn minimize_neg_logdet(&mut self, expr: MatExpr, weight: f64) {
        self.objective.logdet.push((expr, weight));
    }

    pub fn vars(&self) -> &[DecisionVar] {
        &self.vars
    }

    pub fn var(&self, v: Var) -> &DecisionVar {
        &self.vars[v.id]
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    /// Numeric value of constraint `j` by direct symbolic substitution.
    pub fn eval_constraint(&self, j: usize, values: &[Mat]) -> Mat {
        self.constraints[j].expr.evaluate(values)
    }

    pub fn compile(&self) -> Result<CompiledProblem, LmiError> {
        let mut seen = BTreeSet::new();
        for v in &self.vars {
            if !seen.insert(v.name.as_str()) {
                return Err(LmiError::DuplicateVariable(v.name.clone()));
            }
        }
        let mut used = alloc::vec![false; self.vars.len()];
        for e in self.constraints.iter().map(|c| &c.expr).chain(self.objective.logdet.iter().map(|(e, _)| e)) {
            for v in e.vars() {
                used[v.id] = true;
            }
        }
        if let Some(k) = used.iter().position(|u| !u) {
            return Err(LmiError::UnreferencedVariable(self.vars[k].name.clone()));
        }
        compiled::compile(self)
    }
}

/// Outcome of comparing `M ≼ 0` with its Schur-complement reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchurAgreement {
    pub full_nsd: bool,
    pub reduced_nsd: bool,
}

impl SchurAgreement {
    pub fn agree(&self) -> bool {
        self.full_nsd == self.reduced_nsd
    }
}

/// Tests `M ≼ 0` directly and through `C ≺ 0`, `A − B C⁻¹ Bᵀ ≼ 0` with
/// `M = [[A, Bᵀ], [B, C]]` split after `split` rows.
pub fn schur_check(m: &Mat, split: usize) -> Result<SchurAgreement, LmiError> {
    let n = m.nrows();
    let tol = 1e-10 * linalg::max_abs(m).max(1.0);
    let a = m.view((0, 0), (split, split)).clone_owned();
    let b = m.view((split, 0), (n - split, split)).clone_owned();
    let c = m.view((split, split), (n - split, n - split)).clone_owned();
    let full_nsd = linalg::max_eig(m) <= tol;
    let eigs = linalg::symmetrize(&c).symmetric_eigenvalues();
    if eigs.iter().any(|l| l.abs() <= tol) {
        return Err(LmiError::SingularBlock);
    }
    let reduced_nsd = if eigs.iter().all(|l| *l < 0.0) {
        let ci = linalg::inv(&c).ok_or(LmiError::SingularBlock)?;
        linalg::max_eig(&(a - b.transpose() * ci * b)) <= tol
    } else {
        false
    };
    Ok(SchurAgreement { full_nsd, reduced_nsd })
}

#[cfg(test)]
mod tests;
