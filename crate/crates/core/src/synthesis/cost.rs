use alloc::format;
use alloc::vec::Vec;

use super::{values_of, SynthesisError, SynthesisOptions};
use crate::linalg::{self, Mat};
use crate::lmi::{CompiledProblem, MatExpr, Problem, Var};
use crate::model::FuzzyMjsModel;
use crate::sdp::SdpSolution;

#[derive(Debug, Clone)]
pub struct CostProblem {
    pub problem: Problem,
    /// Block-diagonal `Ψ[mode][controller rule] = diag(Ψ_xx, Ψ_ηη)`.
    pub psi: Vec<Vec<Var>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostValues {
    pub psi: Vec<Vec<Mat>>,
}

impl CostProblem {
    pub fn values(&self, cp: &CompiledProblem, sol: &SdpSolution) -> CostValues {
        let vals = values_of(cp, sol);
        CostValues { psi: self.psi.iter().map(|row| row.iter().map(|v| vals[v.id()].clone()).collect()).collect() }
    }
}

/// `Ξ = [[A + B K, B 𝒞], [0, 𝒜]]`.
pub(crate) fn xi(a: &Mat, b: &Mat, k: &Mat, c: &Mat, a_pred: &Mat) -> Mat {
    let n = a.nrows();
    let closed = a + b * k;
    let bc = b * c;
    let z = Mat::zeros(n, n);
    linalg::block(&[alloc::vec![&closed, &bc], alloc::vec![&z, a_pred]])
}

/// `𝔼ᵀ S 𝔼 + Λᵀ R Λ` with `𝔼 = [I 0]`, `Λ = [K 𝒞]`.
pub(crate) fn stage_weight(s: &Mat, r: &Mat, k: &Mat, c: &Mat) -> Mat {
    let n = s.nrows();
    let mut out = Mat::zeros(2 * n, 2 * n);
    out.view_mut((0, 0), (n, n)).copy_from(s);
    let lambda = linalg::block(&[alloc::vec![k, c]]);
    out + lambda.transpose() * r * lambda
}

/// Builds the cost-bound problem for fixed `K`, `𝒜`, `𝒞`: minimize
/// `Σ tr Ψ_{i,υ}` subject to the quadratic cost decrease LMI for every
/// `(i, ħ, υ, ω)`.
pub fn build_op4(
    model: &FuzzyMjsModel,
    k: &[Vec<Mat>],
    a_pred: &[Vec<Mat>],
    c_pred: &[Vec<Mat>],
    options: &SynthesisOptions,
) -> CostProblem {
    let (n, modes) = (model.n_x, model.modes());
    let (t, v) = (model.plant_rules(), model.controller_rules());
    let eps = options.margin;
    let mut p = Problem::new();
    let psi: Vec<Vec<Var>> = (0..modes)
        .map(|i| (0..v).map(|u| p.symmetric_block_diag(&format!("Psi[{}][{}]", i + 1, u + 1), &[n, n])).collect())
        .collect();
    for i in 0..modes {
        for u in 0..v {
            let tag = format!("i={} v={}", i + 1, u + 1);
            p.add_psd(&format!("Psi pd {tag}"), MatExpr::var(psi[i][u]), eps);
            let weight = stage_weight(&model.state_weight, &model.input_weight, &k[i][u], &c_pred[i][u]);
            for h in 0..t {
                let x = xi(&model.a[i][h], &model.b[i][h], &k[i][u], &c_pred[i][u], &a_pred[i][u]);
                let xt = x.transpose();
                for w in 0..v {
                    let mut e = MatExpr::constant(weight.clone()) - MatExpr::var(psi[i][u]);
                    for j in (0..modes).filter(|&j| model.p(i, j) != 0.0) {
                        e = e + MatExpr::var(psi[j][w]).lmul(&xt).rmul(&x).scale(model.p(i, j));
                    }
                    p.add_lmi(&format!("cost {tag} h={} w={}", h + 1, w + 1), e, eps);
                }
            }
            p.minimize_trace(MatExpr::var(psi[i][u]), 1.0);
        }
    }
    CostProblem { problem: p, psi }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostBlocks {
    pub psi_xx: Vec<Vec<Mat>>,
    pub psi_eta: Vec<Vec<Mat>>,
}

/// Splits each `Ψ` into its diagonal blocks, checking both are positive definite.
pub fn recover_cost(values: &CostValues, n_x: usize) -> Result<CostBlocks, SynthesisError> {
    let mut psi_xx = Vec::with_capacity(values.psi.len());
    let mut psi_eta = Vec::with_capacity(values.psi.len());
    for (i, row) in values.psi.iter().enumerate() {
        let mut xx = Vec::with_capacity(row.len());
        let mut ee = Vec::with_capacity(row.len());
        for (u, psi) in row.iter().enumerate() {
            let a = psi.view((0, 0), (n_x, n_x)).into_owned();
            let b = psi.view((n_x, n_x), (n_x, n_x)).into_owned();
            if !linalg::is_pd(&a) || !linalg::is_pd(&b) {
                return Err(SynthesisError::NotPositiveDefinite { what: "Ψ", mode: i + 1, rule: u + 1 });
            }
            xx.push(a);
            ee.push(b);
        }
        psi_xx.push(xx);
        psi_eta.push(ee);
    }
    Ok(CostBlocks { psi_xx, psi_eta })
}
