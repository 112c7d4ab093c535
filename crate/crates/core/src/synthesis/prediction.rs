use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use super::{diagonal_caps, values_of, Coupling, SynthesisError, SynthesisOptions};
use crate::linalg::{self, Mat};
use crate::lmi::{BlockLmi, CompiledProblem, MatExpr, Problem, Var};
use crate::model::FuzzyMjsModel;
use crate::sdp::SdpSolution;

#[derive(Debug, Clone)]
pub struct PredictionProblem {
    pub problem: Problem,
    pub coupling: Coupling,
    /// `M[mode][controller rule]`.
    pub m: Vec<Vec<Var>>,
    pub l: Vec<Vec<Var>>,
    pub x: Vec<Vec<Var>>,
    /// `Y[i][j][υ][ω]`; entries alias one variable under consistent coupling.
    pub y: Vec<Vec<Vec<Vec<Var>>>>,
    pub u: Var,
    pub xc: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionValues {
    pub m: Vec<Vec<Mat>>,
    pub l: Vec<Vec<Mat>>,
    pub x: Vec<Vec<Mat>>,
    pub y: Vec<Vec<Vec<Vec<Mat>>>>,
}

/// Recovered augmented-set quantities, all indexed `[mode][controller rule]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub a_pred: Vec<Vec<Mat>>,
    pub c_pred: Vec<Vec<Mat>>,
    pub l: Vec<Vec<Mat>>,
    pub m: Vec<Vec<Mat>>,
    pub e: Vec<Vec<Mat>>,
    pub f: Vec<Vec<Mat>>,
    pub big_p: Vec<Vec<Mat>>,
    pub big_p_inv: Vec<Vec<Mat>>,
}

impl PredictionProblem {
    pub fn values(&self, cp: &CompiledProblem, sol: &SdpSolution) -> PredictionValues {
        let vals = values_of(cp, sol);
        let pick = |grid: &Vec<Vec<Var>>| -> Vec<Vec<Mat>> {
            grid.iter().map(|row| row.iter().map(|v| vals[v.id()].clone()).collect()).collect()
        };
        let y = self
            .y
            .iter()
            .map(|a| a.iter().map(|b| b.iter().map(|c| c.iter().map(|v| vals[v.id()].clone()).collect()).collect()).collect())
            .collect();
        PredictionValues { m: pick(&self.m), l: pick(&self.l), x: pick(&self.x), y }
    }
}

/// `Δ = [[L, M], [M, M]]`.
fn delta(l: Var, m: Var, n: usize) -> MatExpr {
    let d = 2 * n;
    MatExpr::var(l).place(d, d, 0, 0)
        + MatExpr::var(m).place(d, d, 0, n)
        + MatExpr::var(m).place(d, d, n, 0)
        + MatExpr::var(m).place(d, d, n, n)
}

/// Builds the prediction problem for fixed terminal gains `k[mode][rule]`:
/// maximize `Σ logdet L_{i,υ}` subject to augmented invariance for every
/// `(i, ħ, υ, ω)` and input/state admissibility for every `(i, υ)`.
pub fn build_op3(model: &FuzzyMjsModel, k: &[Vec<Mat>], options: &SynthesisOptions) -> PredictionProblem {
    let (n, nu, modes) = (model.n_x, model.n_u, model.modes());
    let (t, v) = (model.plant_rules(), model.controller_rules());
    let nc = model.state_constraint_rows();
    let eps = options.prediction_margin;
    let mut p = Problem::new();

    let m: Vec<Vec<Var>> =
        (0..modes).map(|i| (0..v).map(|u| p.symmetric(&format!("M[{}][{}]", i + 1, u + 1), n)).collect()).collect();
    let l: Vec<Vec<Var>> =
        (0..modes).map(|i| (0..v).map(|u| p.symmetric(&format!("L[{}][{}]", i + 1, u + 1), n)).collect()).collect();
    let x: Vec<Vec<Var>> = (0..modes)
        .map(|i| (0..v).map(|u| p.rectangular(&format!("Xp[{}][{}]", i + 1, u + 1), nu, n)).collect())
        .collect();
    let y: Vec<Vec<Vec<Vec<Var>>>> = match options.coupling {
        Coupling::Consistent => (0..modes)
            .map(|i| {
                let shared: Vec<Var> = (0..v).map(|u| p.rectangular(&format!("Y[{}][{}]", i + 1, u + 1), n, n)).collect();
                (0..modes).map(|_| shared.iter().map(|y| alloc::vec![*y; v]).collect()).collect()
            })
            .collect(),
        Coupling::Independent => (0..modes)
            .map(|i| {
                (0..modes)
                    .map(|j| {
                        (0..v)
                            .map(|u| {
                                (0..v)
                                    .map(|w| p.rectangular(&format!("Y[{}{}][{}{}]", i + 1, j + 1, u + 1, w + 1), n, n))
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect(),
    };
    let u_cap = p.symmetric("U", nu);
    let x_cap = p.symmetric("Xc", nc);

    for i in 0..modes {
        for u in 0..v {
            let tag = format!("i={} v={}", i + 1, u + 1);
            p.add_psd(&format!("M pd {tag}"), MatExpr::var(m[i][u]), eps);
            p.add_psd(&format!("L pd {tag}"), MatExpr::var(l[i][u]), eps);
            let d = delta(l[i][u], m[i][u], n);

            for h in 0..t {
                let pt = &model.a[i][h] + &model.b[i][h] * &k[i][u];
                let top = MatExpr::var(l[i][u]).lmul(&pt) + MatExpr::var(x[i][u]).lmul(&model.b[i][h]);
                let right = MatExpr::var(m[i][u]).lmul(&pt);
                for w in 0..v {
                    let mut blk = BlockLmi::new(&alloc::vec![2 * n; modes + 1]);
                    blk.set(0, 0, -d.clone());
                    for j in 0..modes {
                        let gamma = top.clone().place(2 * n, 2 * n, 0, 0)
                            + right.clone().place(2 * n, 2 * n, 0, n)
                            + (top.clone() + MatExpr::var(y[i][j][u][w])).place(2 * n, 2 * n, n, 0)
                            + right.clone().place(2 * n, 2 * n, n, n);
                        blk.set(1 + j, 0, gamma.scale(libm::sqrt(model.p(i, j))));
                        blk.set(1 + j, 1 + j, -delta(l[j][w], m[j][w], n));
                    }
                    p.add_block(&format!("invariance {tag} h={} w={}", h + 1, w + 1), blk, eps);
                }
            }

            let input_row = (MatExpr::var(l[i][u]).lmul(&k[i][u]) + MatExpr::var(x[i][u])).place(nu, 2 * n, 0, 0)
                + MatExpr::var(m[i][u]).lmul(&k[i][u]).place(nu, 2 * n, 0, n);
            let mut blk = BlockLmi::new(&[nu, 2 * n]);
            blk.set(0, 0, -MatExpr::var(u_cap));
            blk.set(0, 1, input_row);
            blk.set(1, 1, -d.clone());
            p.add_block(&format!("input {tag}"), blk, 0.0);

            let phi = &model.constraints.phi;
            let state_row = MatExpr::var(l[i][u]).lmul(phi).place(nc, 2 * n, 0, 0)
                + MatExpr::var(m[i][u]).lmul(phi).place(nc, 2 * n, 0, n);
            let mut blk = BlockLmi::new(&[nc, 2 * n]);
            blk.set(0, 0, -MatExpr::var(x_cap));
            blk.set(0, 1, state_row);
            blk.set(1, 1, -d);
            p.add_block(&format!("state {tag}"), blk, 0.0);

            p.minimize_neg_logdet(MatExpr::var(l[i][u]), 1.0);
        }
    }
    diagonal_caps(&mut p, "U", u_cap, &model.constraints.u_bound);
    diagonal_caps(&mut p, "Xc", x_cap, &model.constraints.x_bound);
    p.add_psd("U pd", MatExpr::var(u_cap), 0.0);
    p.add_psd("Xc pd", MatExpr::var(x_cap), 0.0);
    PredictionProblem { problem: p, coupling: options.coupling, m, l, x, y, u: u_cap, xc: x_cap }
}

/// Which factor of `M − L = E Fᵀ` is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorConvention {
    /// `E = I`, `F = (M − L)ᵀ`.
    UnitLeft,
    /// `E = M − L`, `F = I`, falling back to `E = QΛ`, `F = Q` from the
    /// eigendecomposition when `M − L` is ill-conditioned.
    UnitRight,
}

impl FactorConvention {
    pub fn for_coupling(c: Coupling) -> Self {
        match c {
            Coupling::Consistent => FactorConvention::UnitLeft,
            Coupling::Independent => FactorConvention::UnitRight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FactorError {
    NotSymmetric,
    Singular { min_abs_eig: f64 },
    IllConditioned { cond: f64 },
}

impl fmt::Display for FactorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FactorError::NotSymmetric => f.write_str("M − L is not symmetric"),
            FactorError::Singular { min_abs_eig } => write!(f, "M − L is singular (smallest |λ| = {min_abs_eig:e})"),
            FactorError::IllConditioned { cond } => write!(f, "M − L is ill-conditioned (condition number {cond:e})"),
        }
    }
}

/// Splits `M − L` into `E Fᵀ` with both factors invertible.
pub fn factorize(m: &Mat, l: &Mat, convention: FactorConvention) -> Result<(Mat, Mat), FactorError> {
    let d = m - l;
    let n = d.nrows();
    if linalg::max_abs(&(&d - d.transpose())) > 1e-12 * linalg::max_abs(&d).max(1.0) {
        return Err(FactorError::NotSymmetric);
    }
    let d = linalg::symmetrize(&d);
    let eig = d.clone().symmetric_eigen();
    let min_abs = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(libm::fabs(*v)));
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(libm::fabs(*v)));
    if !(min_abs >= 1e-10) {
        return Err(FactorError::Singular { min_abs_eig: min_abs });
    }
    let cond = max_abs / min_abs;
    match convention {
        FactorConvention::UnitLeft if cond < 1e10 => Ok((Mat::identity(n, n), d)),
        FactorConvention::UnitLeft => Err(FactorError::IllConditioned { cond }),
        FactorConvention::UnitRight if cond < 1e10 => Ok((d, Mat::identity(n, n))),
        FactorConvention::UnitRight => {
            let q = eig.eigenvectors.clone();
            let e = &q * Mat::from_diagonal(&eig.eigenvalues);
            Ok((e, q))
        }
    }
}

/// Recovers `𝒜`, `𝒞`, `E`, `F`, `𝒫` and `𝒫⁻¹` from the prediction unknowns.
///
/// `𝒜_{i,υ} = Σ_j p_ij E_{j,υ}⁻¹ Y_{ij,υυ} F_{i,υ}⁻ᵀ` and `𝒞 = X F⁻ᵀ`.
pub fn recover_prediction(
    values: &PredictionValues,
    transition: &Mat,
    convention: FactorConvention,
) -> Result<PredictionSet, SynthesisError> {
    let modes = values.m.len();
    let v = values.m.first().map_or(0, Vec::len);
    let mut e = alloc::vec![Vec::with_capacity(v); modes];
    let mut f = alloc::vec![Vec::with_capacity(v); modes];
    let mut e_inv = alloc::vec![Vec::with_capacity(v); modes];
    let mut f_inv_t = alloc::vec![Vec::with_capacity(v); modes];
    for i in 0..modes {
        for u in 0..v {
            let (ei, fi) = factorize(&values.m[i][u], &values.l[i][u], convention)
                .map_err(|reason| SynthesisError::Factorization { mode: i + 1, rule: u + 1, reason })?;
            let singular = SynthesisError::Factorization {
                mode: i + 1,
                rule: u + 1,
                reason: FactorError::Singular { min_abs_eig: 0.0 },
            };
            e_inv[i].push(linalg::inv(&ei).ok_or(singular.clone())?);
            f_inv_t[i].push(linalg::inv(&fi.transpose()).ok_or(singular)?);
            e[i].push(ei);
            f[i].push(fi);
        }
    }

    let mut a_pred = alloc::vec![Vec::with_capacity(v); modes];
    let mut c_pred = alloc::vec![Vec::with_capacity(v); modes];
    let mut big_p = alloc::vec![Vec::with_capacity(v); modes];
    let mut big_p_inv = alloc::vec![Vec::with_capacity(v); modes];
    for i in 0..modes {
        for u in 0..v {
            let n = values.m[i][u].nrows();
            let mut a = Mat::zeros(n, n);
            for j in 0..modes {
                let pij = transition[(i, j)];
                if pij != 0.0 {
                    a += (&e_inv[j][u] * &values.y[i][j][u][u] * &f_inv_t[i][u]) * pij;
                }
            }
            a_pred[i].push(a);
            c_pred[i].push(&values.x[i][u] * &f_inv_t[i][u]);

            let not_pd = |what| SynthesisError::NotPositiveDefinite { what, mode: i + 1, rule: u + 1 };
            let lm = &values.l[i][u];
            let mi = linalg::inv_pd(&values.m[i][u]).ok_or(not_pd("M"))?;
            linalg::inv_pd(lm).ok_or(not_pd("L"))?;
            let (ei, fi) = (&e[i][u], &f[i][u]);
            let top_right = &mi * ei;
            let bottom = -(ei.transpose() * &mi * lm * &f_inv_t[i][u]);
            let pm = linalg::symmetrize(&linalg::block(&[
                alloc::vec![&mi, &top_right],
                alloc::vec![&top_right.transpose(), &bottom],
            ]));
            let br = -(&e_inv[i][u] * fi);
            let pinv = linalg::symmetrize(&linalg::block(&[alloc::vec![lm, fi], alloc::vec![&fi.transpose(), &br]]));
            if !linalg::is_pd(&pm) {
                return Err(not_pd("𝒫"));
            }
            let residual = linalg::max_abs(&(&pm * &pinv - Mat::identity(2 * n, 2 * n)));
            if !(residual < 1e-8) {
                return Err(SynthesisError::InverseResidual { mode: i + 1, rule: u + 1, residual });
            }
            big_p[i].push(pm);
            big_p_inv[i].push(pinv);
        }
    }
    Ok(PredictionSet { a_pred, c_pred, l: values.l.clone(), m: values.m.clone(), e, f, big_p, big_p_inv })
}
