use alloc::format;
use alloc::vec::Vec;

use super::{diagonal_caps, values_of, SynthesisError, SynthesisOptions};
use crate::linalg::{self, Mat};
use crate::lmi::{BlockLmi, CompiledProblem, MatExpr, Problem, Var};
use crate::model::FuzzyMjsModel;
use crate::sdp::SdpSolution;

/// Terminal-set problem together with the handles of its unknowns.
#[derive(Debug, Clone)]
pub struct TerminalProblem {
    pub problem: Problem,
    /// `W[mode][plant rule]`.
    pub w: Vec<Vec<Var>>,
    /// `G[mode][controller rule]`.
    pub g: Vec<Vec<Var>>,
    /// `K̃[mode][controller rule]`.
    pub k_tilde: Vec<Vec<Var>>,
    pub sigma: Var,
    pub u: Var,
    pub x: Var,
}

/// Numeric values of the terminal-set unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalValues {
    pub w: Vec<Vec<Mat>>,
    pub g: Vec<Vec<Mat>>,
    pub k_tilde: Vec<Vec<Mat>>,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalGains {
    /// `K[mode][controller rule] = K̃ G⁻¹`.
    pub k: Vec<Vec<Mat>>,
    /// `P[mode][plant rule] = σ W⁻¹`.
    pub p: Vec<Vec<Mat>>,
    pub sigma: f64,
    pub g_cond: Vec<Vec<f64>>,
}

impl TerminalProblem {
    pub fn values(&self, cp: &CompiledProblem, sol: &SdpSolution) -> TerminalValues {
        let vals = values_of(cp, sol);
        let pick = |grid: &Vec<Vec<Var>>| -> Vec<Vec<Mat>> {
            grid.iter().map(|row| row.iter().map(|v| vals[v.id()].clone()).collect()).collect()
        };
        TerminalValues { w: pick(&self.w), g: pick(&self.g), k_tilde: pick(&self.k_tilde), sigma: vals[self.sigma.id()][(0, 0)] }
    }
}

/// Builds the terminal-set problem: minimize `σ` subject to the Lyapunov
/// decrease LMIs for every `(i, ħ, υ, λ)`, the input and state admissibility
/// LMIs, the anchor containment LMIs and (optionally) per-jump decrease.
pub fn build_op2(model: &FuzzyMjsModel, options: &SynthesisOptions) -> TerminalProblem {
    let (n, nu, modes) = (model.n_x, model.n_u, model.modes());
    let (t, v) = (model.plant_rules(), model.controller_rules());
    let nc = model.state_constraint_rows();
    let eps = options.margin;
    let s = &model.state_weight;
    let r = &model.input_weight;
    let mut p = Problem::new();

    let w: Vec<Vec<Var>> =
        (0..modes).map(|i| (0..t).map(|h| p.symmetric(&format!("W[{}][{}]", i + 1, h + 1), n)).collect()).collect();
    let g: Vec<Vec<Var>> =
        (0..modes).map(|i| (0..v).map(|u| p.rectangular(&format!("G[{}][{}]", i + 1, u + 1), n, n)).collect()).collect();
    let k_tilde: Vec<Vec<Var>> = (0..modes)
        .map(|i| (0..v).map(|u| p.rectangular(&format!("Kt[{}][{}]", i + 1, u + 1), nu, n)).collect())
        .collect();
    let sigma = p.scalar("sigma");
    let u_cap = p.symmetric("U", nu);
    let x_cap = p.symmetric("X", nc);

    let anchors = options.anchor_states(n);
    for i in 0..modes {
        for h in 0..t {
            let tag = format!("i={} h={}", i + 1, h + 1);
            p.add_psd(&format!("W pd {tag}"), MatExpr::var(w[i][h]), eps);
            for (a, xa) in anchors.iter().enumerate() {
                let mut blk = BlockLmi::new(&[1, n]);
                blk.set(0, 0, Mat::identity(1, 1));
                blk.set(1, 0, Mat::from_column_slice(n, 1, xa.as_slice()));
                blk.set(1, 1, w[i][h]);
                p.add_psd(&format!("anchor {} {tag}", a + 1), blk.assemble(), 0.0);
            }
            let wx = MatExpr::var(w[i][h]).lmul(&model.constraints.phi);
            let mut blk = BlockLmi::new(&[nc, n]);
            blk.set(0, 0, -MatExpr::var(x_cap));
            blk.set(0, 1, wx);
            blk.set(1, 1, -MatExpr::var(w[i][h]));
            p.add_block(&format!("state {tag}"), blk, 0.0);

            for u in 0..v {
                let tag = format!("i={} h={} v={}", i + 1, h + 1, u + 1);
                let gg = MatExpr::var(g[i][u]) + MatExpr::var(g[i][u]).transpose() - MatExpr::var(w[i][h]);
                let pi = MatExpr::var(g[i][u]).lmul(&model.a[i][h]) + MatExpr::var(k_tilde[i][u]).lmul(&model.b[i][h]);

                for l in 0..t {
                    let mut sizes = alloc::vec![n; modes + 2];
                    sizes.push(nu);
                    let mut blk = BlockLmi::new(&sizes);
                    blk.set(0, 0, -gg.clone());
                    for j in 0..modes {
                        blk.set(1 + j, 0, pi.clone().scale(libm::sqrt(model.p(i, j))));
                        blk.set(1 + j, 1 + j, -MatExpr::var(w[j][l]));
                    }
                    blk.set(modes + 1, 0, MatExpr::var(g[i][u]).lmul(s));
                    blk.set(modes + 2, 0, MatExpr::var(k_tilde[i][u]).lmul(r));
                    blk.set(modes + 1, modes + 1, MatExpr::scaled(sigma, -s));
                    blk.set(modes + 2, modes + 2, MatExpr::scaled(sigma, -r));
                    p.add_block(&format!("lyapunov {tag} l={}", l + 1), blk, eps);
                }

                if options.mode_robust {
                    for j in (0..modes).filter(|&j| model.p(i, j) > 0.0) {
                        for l in 0..t {
                            let mut blk = BlockLmi::new(&[n, n]);
                            blk.set(0, 0, -gg.clone());
                            blk.set(1, 0, pi.clone());
                            blk.set(1, 1, -MatExpr::var(w[j][l]));
                            p.add_block(&format!("jump {tag} j={} l={}", j + 1, l + 1), blk, eps);
                        }
                    }
                }

                let mut blk = BlockLmi::new(&[nu, n]);
                blk.set(0, 0, -MatExpr::var(u_cap));
                blk.set(0, 1, k_tilde[i][u]);
                blk.set(1, 1, -gg);
                p.add_block(&format!("input {tag}"), blk, 0.0);
            }
        }
    }
    diagonal_caps(&mut p, "U", u_cap, &model.constraints.u_bound);
    diagonal_caps(&mut p, "X", x_cap, &model.constraints.x_bound);
    p.add_psd("U pd", MatExpr::var(u_cap), 0.0);
    p.add_psd("X pd", MatExpr::var(x_cap), 0.0);
    p.add_psd("sigma lower bound", MatExpr::var(sigma), eps);
    p.minimize_trace(MatExpr::var(sigma), 1.0);
    TerminalProblem { problem: p, w, g, k_tilde, sigma, u: u_cap, x: x_cap }
}

/// `K = K̃ G⁻¹`, `P = σ W⁻¹`; fails when some `G` has condition number
/// `≥ 1e12` or some `W` is not positive definite.
pub fn recover_terminal(values: &TerminalValues) -> Result<TerminalGains, SynthesisError> {
    let mut k = Vec::with_capacity(values.g.len());
    let mut g_cond = Vec::with_capacity(values.g.len());
    for (i, (gs, kts)) in values.g.iter().zip(&values.k_tilde).enumerate() {
        let mut row = Vec::with_capacity(gs.len());
        let mut conds = Vec::with_capacity(gs.len());
        for (u, (g, kt)) in gs.iter().zip(kts).enumerate() {
            let cond = linalg::cond(g);
            let ginv = linalg::inv(g).filter(|_| cond < 1e12);
            let Some(ginv) = ginv else {
                return Err(SynthesisError::SingularG { mode: i + 1, rule: u + 1, cond });
            };
            row.push(kt * ginv);
            conds.push(cond);
        }
        k.push(row);
        g_cond.push(conds);
    }
    let mut p = Vec::with_capacity(values.w.len());
    for (i, ws) in values.w.iter().enumerate() {
        let mut row = Vec::with_capacity(ws.len());
        for (h, w) in ws.iter().enumerate() {
            let winv = linalg::inv_pd(w).ok_or(SynthesisError::NotPositiveDefinite { what: "W", mode: i + 1, rule: h + 1 })?;
            row.push(linalg::symmetrize(&(winv * values.sigma)));
        }
        p.push(row);
    }
    Ok(TerminalGains { k, p, sigma: values.sigma, g_cond })
}
