use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{Coupling, Stage};
use crate::linalg::{Mat, Vector};
use crate::model::{blend, FuzzyMjsModel, MembershipVector};

/// Residual summary of one solved stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: Stage,
    pub objective: f64,
    /// Largest `λ_max(S_j) + ε_j` over the stage constraints.
    pub worst_violation: f64,
    pub iterations: usize,
    pub unknowns: usize,
    pub constraints: usize,
}

/// Options and residuals that produced a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub stages: Vec<StageReport>,
    pub margin: f64,
    pub prediction_margin: f64,
    pub coupling: Coupling,
    pub mode_robust: bool,
    pub anchors: Vec<Vector>,
    pub feas_tol: f64,
    pub duality_tol: f64,
    pub max_iters: usize,
    /// Condition number of each `G[mode][controller rule]`.
    pub g_cond: Vec<Vec<f64>>,
}

/// Everything the online controller needs.
///
/// Matrices indexed `[mode][controller rule]` except `p`, which is
/// `[mode][plant rule]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerBundle {
    pub n_x: usize,
    pub n_u: usize,
    pub k: Vec<Vec<Mat>>,
    pub p: Vec<Vec<Mat>>,
    pub sigma: f64,
    pub a_pred: Vec<Vec<Mat>>,
    pub c_pred: Vec<Vec<Mat>>,
    pub l: Vec<Vec<Mat>>,
    pub m: Vec<Vec<Mat>>,
    pub e: Vec<Vec<Mat>>,
    pub f: Vec<Vec<Mat>>,
    pub big_p: Vec<Vec<Mat>>,
    pub big_p_inv: Vec<Vec<Mat>>,
    pub psi_xx: Vec<Vec<Mat>>,
    pub psi_eta: Vec<Vec<Mat>>,
    pub provenance: Provenance,
}

fn mix(ms: &[Mat], w: &MembershipVector) -> Mat {
    blend(ms, w).expect("bundle blocks and memberships were checked against the model")
}

impl ControllerBundle {
    pub fn modes(&self) -> usize {
        self.k.len()
    }

    pub fn plant_rules(&self) -> usize {
        self.p.first().map_or(0, Vec::len)
    }

    pub fn controller_rules(&self) -> usize {
        self.k.first().map_or(0, Vec::len)
    }

    /// `K_{iϑ}`.
    pub fn gain(&self, mode: usize, vartheta: &MembershipVector) -> Mat {
        mix(&self.k[mode], vartheta)
    }

    /// `P_{iθ}`.
    pub fn terminal_shape(&self, mode: usize, theta: &MembershipVector) -> Mat {
        mix(&self.p[mode], theta)
    }

    /// `𝒞_{iϑ}`.
    pub fn perturbation_output(&self, mode: usize, vartheta: &MembershipVector) -> Mat {
        mix(&self.c_pred[mode], vartheta)
    }

    /// `𝒫_{iϑ}`.
    pub fn augmented_shape(&self, mode: usize, vartheta: &MembershipVector) -> Mat {
        mix(&self.big_p[mode], vartheta)
    }

    /// `Ψ_{iηη,ϑ}`.
    pub fn perturbation_cost(&self, mode: usize, vartheta: &MembershipVector) -> Mat {
        mix(&self.psi_eta[mode], vartheta)
    }

    /// Checks that every block has the shape implied by `model`.
    pub fn check_against(&self, model: &FuzzyMjsModel) -> Result<(), String> {
        let (n, nu) = (model.n_x, model.n_u);
        let (modes, t, v) = (model.modes(), model.plant_rules(), model.controller_rules());
        if self.n_x != n || self.n_u != nu {
            return Err(format!("bundle is for n_x = {}, n_u = {}; model has n_x = {n}, n_u = {nu}", self.n_x, self.n_u));
        }
        type Grid<'a> = (&'a str, &'a Vec<Vec<Mat>>, usize, (usize, usize));
        let grids: [Grid<'_>; 12] = [
            ("K", &self.k, v, (nu, n)),
            ("P", &self.p, t, (n, n)),
            ("A_pred", &self.a_pred, v, (n, n)),
            ("C_pred", &self.c_pred, v, (nu, n)),
            ("L", &self.l, v, (n, n)),
            ("M", &self.m, v, (n, n)),
            ("E", &self.e, v, (n, n)),
            ("F", &self.f, v, (n, n)),
            ("big_P", &self.big_p, v, (2 * n, 2 * n)),
            ("big_P_inv", &self.big_p_inv, v, (2 * n, 2 * n)),
            ("Psi_xx", &self.psi_xx, v, (n, n)),
            ("Psi_eta", &self.psi_eta, v, (n, n)),
        ];
        for (name, grid, rules, shape) in grids {
            if grid.len() != modes {
                return Err(format!("{name} has {} modes, model has {modes}", grid.len()));
            }
            for (i, row) in grid.iter().enumerate() {
                if row.len() != rules {
                    return Err(format!("{name}[{}] has {} rules, expected {rules}", i + 1, row.len()));
                }
                for (r, m) in row.iter().enumerate() {
                    if m.shape() != shape {
                        return Err(format!("{name}[{}][{}] is {:?}, expected {shape:?}", i + 1, r + 1, m.shape()));
                    }
                }
            }
        }
        if !(self.sigma > 0.0) {
            return Err(format!("sigma = {} is not positive", self.sigma));
        }
        Ok(())
    }
}
