use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use super::{DecisionVar, LmiError, MatExpr, Problem, Term};
use crate::linalg::{self, Mat, Vector};

/// One coefficient matrix `F_k` stored as its nonzero entries (both triangles).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTerm {
    pub k: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

/// Symmetric affine map `F0 + Σ_k x_k F_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSym {
    pub dim: usize,
    pub f0: Mat,
    pub terms: Vec<SparseTerm>,
}

impl AffineSym {
    pub fn evaluate(&self, x: &Vector) -> Mat {
        let mut out = self.f0.clone();
        for t in &self.terms {
            let xk = x[t.k];
            if xk != 0.0 {
                for &(r, c, v) in &t.entries {
                    out[(r, c)] += xk * v;
                }
            }
        }
        out
    }

    /// `Σ_k x_k F_k` without the constant.
    pub fn linear_part(&self, x: &Vector) -> Mat {
        let mut out = Mat::zeros(self.dim, self.dim);
        for t in &self.terms {
            for &(r, c, v) in &t.entries {
                out[(r, c)] += x[t.k] * v;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledLmi {
    pub name: String,
    pub map: AffineSym,
    pub margin: f64,
}

/// Flat form of a [`Problem`].
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledProblem {
    pub vars: Vec<DecisionVar>,
    pub offsets: Vec<usize>,
    pub n: usize,
    pub constraints: Vec<CompiledLmi>,
    pub c: Vector,
    pub c0: f64,
    pub logdet: Vec<(AffineSym, f64)>,
}

pub(super) fn compile(p: &Problem) -> Result<CompiledProblem, LmiError> {
    let mut offsets = Vec::with_capacity(p.vars.len());
    let mut bases = Vec::with_capacity(p.vars.len());
    let mut n = 0;
    for v in &p.vars {
        offsets.push(n);
        let b = v.basis();
        n += b.len();
        bases.push(b);
    }
    let flatten = |name: &str, e: &MatExpr, symmetric: bool| -> Result<AffineSym, LmiError> {
        let (rows, cols) = e.shape();
        if rows != cols {
            return Err(LmiError::NotSquare(name.into()));
        }
        let mut dense: BTreeMap<usize, Mat> = BTreeMap::new();
        for t in e.terms() {
            match t {
                Term::Product { left, var, transpose, right } => {
                    for (p_idx, entries) in bases[var.id].iter().enumerate() {
                        let acc = dense.entry(offsets[var.id] + p_idx).or_insert_with(|| Mat::zeros(rows, cols));
                        for &(a, b, w) in entries {
                            let (a, b) = if *transpose { (b, a) } else { (a, b) };
                            *acc += left.column(a) * right.row(b) * w;
                        }
                    }
                }
                Term::Scaled { var, coef } => {
                    let acc = dense.entry(offsets[var.id]).or_insert_with(|| Mat::zeros(rows, cols));
                    *acc += coef;
                }
            }
        }
        let check = |m: &Mat| -> Result<Mat, LmiError> {
            let asym = linalg::max_abs(&(m - m.transpose()));
            if symmetric && asym > 1e-12 * linalg::max_abs(m).max(1.0) {
                Err(LmiError::NotSymmetric { name: name.into(), asym })
            } else {
                Ok(linalg::symmetrize(m))
            }
        };
        let f0 = check(e.constant_part())?;
        let mut terms = Vec::new();
        for (k, m) in dense {
            let m = check(&m)?;
            let mut entries = Vec::new();
            for c in 0..cols {
                for r in 0..rows {
                    if m[(r, c)] != 0.0 {
                        entries.push((r, c, m[(r, c)]));
                    }
                }
            }
            if !entries.is_empty() {
                terms.push(SparseTerm { k, entries });
            }
        }
        Ok(AffineSym { dim: rows, f0, terms })
    };

    let mut constraints = Vec::with_capacity(p.constraints.len());
    for c in &p.constraints {
        constraints.push(CompiledLmi { name: c.name.clone(), map: flatten(&c.name, &c.expr, true)?, margin: c.margin });
    }
    let mut c = Vector::zeros(n);
    let mut c0 = 0.0;
    for (i, (e, w)) in p.objective.linear.iter().enumerate() {
        let a = flatten(&alloc::format!("objective term {}", i + 1), e, false)?;
        c0 += w * a.f0.trace();
        for t in &a.terms {
            c[t.k] += w * t.entries.iter().filter(|(r, cc, _)| r == cc).map(|(_, _, v)| v).sum::<f64>();
        }
    }
    let mut logdet = Vec::with_capacity(p.objective.logdet.len());
    for (i, (e, w)) in p.objective.logdet.iter().enumerate() {
        logdet.push((flatten(&alloc::format!("logdet term {}", i + 1), e, true)?, *w));
    }
    Ok(CompiledProblem { vars: p.vars.clone(), offsets, n, constraints, c, c0, logdet })
}

impl CompiledProblem {
    pub fn unpack(&self, x: &Vector) -> Vec<Mat> {
        self.vars
            .iter()
            .zip(&self.offsets)
            .map(|(v, off)| {
                let mut m = Mat::zeros(v.rows, v.cols);
                for (p, entries) in v.basis().iter().enumerate() {
                    for &(r, c, w) in entries {
                        m[(r, c)] += w * x[off + p];
                    }
                }
                m
            })
            .collect()
    }

    pub fn pack(&self, values: &[Mat]) -> Vector {
        let mut x = Vector::zeros(self.n);
        for ((v, off), m) in self.vars.iter().zip(&self.offsets).zip(values) {
            for (p, entries) in v.basis().iter().enumerate() {
                let (r, c, w) = entries[0];
                x[off + p] = m[(r, c)] / w;
            }
        }
        x
    }

    pub fn constraint_value(&self, j: usize, x: &Vector) -> Mat {
        self.constraints[j].map.evaluate(x)
    }

    pub fn linear_objective(&self, x: &Vector) -> f64 {
        self.c0 + self.c.dot(x)
    }

    /// Full objective; `None` when a logdet block is not positive definite.
    pub fn objective(&self, x: &Vector) -> Option<f64> {
        let mut f = self.linear_objective(x);
        for (d, w) in &self.logdet {
            f -= w * linalg::logdet_pd(&d.evaluate(x))?;
        }
        Some(f)
    }

    pub fn total_dim(&self) -> usize {
        self.constraints.iter().map(|c| c.map.dim).sum::<usize>() + self.logdet.iter().map(|(d, _)| d.dim).sum::<usize>()
    }

    /// Sparse text dump.
    ///
    /// After a `#` header, each line is `j row col k value` for one nonzero
    /// upper-triangle entry of `F_jk`: `j` is the 1-based constraint (or
    /// `L1`, `L2`, ... for logdet blocks), `row`/`col` are 0-based entry
    /// indices, `k = 0` is the constant and `k ≥ 1` the flat unknown `k − 1`.
    /// Objective coefficients are written as `c k value`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# sparse-lmi v1 unknowns {} constraints {} logdet {}", self.n, self.constraints.len(), self.logdet.len());
        for (v, off) in self.vars.iter().zip(&self.offsets) {
            let _ = writeln!(s, "# var {} offset {} len {}", v.name, off, v.len());
        }
        let mut emit = |tag: String, a: &AffineSym| {
            for c in 0..a.dim {
                for r in 0..=c {
                    if a.f0[(r, c)] != 0.0 {
                        let _ = writeln!(s, "{tag} {r} {c} 0 {:e}", a.f0[(r, c)]);
                    }
                }
            }
            for t in &a.terms {
                for &(r, c, v) in &t.entries {
                    if r <= c {
                        let _ = writeln!(s, "{tag} {r} {c} {} {v:e}", t.k + 1);
                    }
                }
            }
        };
        for (j, c) in self.constraints.iter().enumerate() {
            emit(alloc::format!("{}", j + 1), &c.map);
        }
        for (j, (d, _)) in self.logdet.iter().enumerate() {
            emit(alloc::format!("L{}", j + 1), d);
        }
        if self.c0 != 0.0 {
            let _ = writeln!(s, "c 0 {:e}", self.c0);
        }
        for (k, v) in self.c.iter().enumerate() {
            if *v != 0.0 {
                let _ = writeln!(s, "c {} {v:e}", k + 1);
            }
        }
        for (j, (_, w)) in self.logdet.iter().enumerate() {
            let _ = writeln!(s, "w L{} {w:e}", j + 1);
        }
        s
    }
}
