//! Online stage: terminal-set test, the perturbation problem and the
//! resulting control input.
//!
//! At every step the controller checks `xᵀP_{iθ}x ≤ σ`. Inside the terminal
//! set it applies `u = K_{iϑ}x`. Outside it solves
//!
//! ```text
//! minimize ηᵀ Ψ_{iηη,ϑ} η   subject to   [x; η]ᵀ 𝒫_{iϑ} [x; η] ≤ 1
//! ```
//!
//! and applies `u = K_{iϑ}x + 𝒞_{iϑ}η`. Only the current perturbation is
//! used; it is re-solved from scratch at the next step.

use crate::linalg::{self, Mat, Vector};
use crate::model::{FuzzyMjsModel, MembershipVector, ModelError, PremiseSet};
use crate::synthesis::ControllerBundle;

/// Residual `|ξᵀ𝒫ξ − 1|` at which bisection stops.
pub const OP5_RESIDUAL: f64 = 1e-10;
/// Bisection steps allowed after the bracket search.
pub const OP5_MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Terminal,
    Perturbed,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Op5Error {
    /// Even the constraint-minimizing `η` leaves `ξᵀ𝒫ξ = min_value > 1`, so
    /// `x` is outside the projection of the augmented set.
    #[error("perturbation problem infeasible: smallest attainable ξᵀ𝒫ξ is {min_value}")]
    Infeasible { min_value: f64 },
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(&'static str),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Op5(#[from] Op5Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Op5Solution {
    pub eta: Vector,
    /// Multiplier of the ellipsoid constraint; 0 when `η = 0` is optimal.
    pub lambda: f64,
    /// Bracket doublings plus bisection steps.
    pub iterations: usize,
    pub constraint_value: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    pub u: Vector,
    pub eta: Vector,
    pub branch: Branch,
    pub lambda: f64,
    pub iterations: usize,
    /// `ξᵀ𝒫_{iϑ}ξ` with `ξ = [x; η]`.
    pub constraint_value: f64,
    /// `xᵀP_{iθ}x`.
    pub lyapunov: f64,
    pub theta: MembershipVector,
    pub vartheta: MembershipVector,
}

/// `xᵀP_{iθ}x ≤ σ`.
pub fn in_terminal_set(bundle: &ControllerBundle, x: &Vector, mode: usize, theta: &MembershipVector) -> bool {
    linalg::quad(&bundle.terminal_shape(mode, theta), x) <= bundle.sigma
}

/// Perturbation problem for the blended bundle blocks of `mode` at `vartheta`.
pub fn solve_op5(
    bundle: &ControllerBundle,
    x: &Vector,
    mode: usize,
    vartheta: &MembershipVector,
) -> Result<Op5Solution, Op5Error> {
    solve_op5_with(&bundle.augmented_shape(mode, vartheta), &bundle.perturbation_cost(mode, vartheta), x)
}

/// Minimizes `ηᵀΨη` subject to `[x; η]ᵀ𝒫[x; η] ≤ 1`.
///
/// When `η = 0` is infeasible the constraint is active; the minimizer is
/// `η(λ) = −(Ψ + λ𝒫_ηη)⁻¹ λ 𝒫_ηx x`, whose constraint value decreases in
/// `λ`, so `λ` is found by doubling followed by bisection.
pub fn solve_op5_with(big_p: &Mat, psi: &Mat, x: &Vector) -> Result<Op5Solution, Op5Error> {
    let n = x.len();
    let m = psi.nrows();
    if big_p.nrows() != n + m || big_p.ncols() != n + m || psi.ncols() != m {
        return Err(Op5Error::Dimension("𝒫 must be (n+m)×(n+m) for an n-state and an m×m Ψ"));
    }
    if !linalg::is_pd(psi) {
        return Err(Op5Error::NotPositiveDefinite("Ψ_ηη"));
    }
    let pxx = big_p.view((0, 0), (n, n)).into_owned();
    let pee = big_p.view((n, n), (m, m)).into_owned();
    let pee_chol = pee.clone().cholesky().ok_or(Op5Error::NotPositiveDefinite("𝒫_ηη"))?;
    let b: Vector = big_p.view((n, 0), (m, n)) * x;
    let c0 = linalg::quad(&pxx, x);
    let value = |eta: &Vector| c0 + 2.0 * b.dot(eta) + linalg::quad(&pee, eta);
    let solution = |eta: Vector, lambda: f64, iterations: usize| {
        let constraint_value = value(&eta);
        let objective = linalg::quad(psi, &eta);
        Op5Solution { eta, lambda, iterations, constraint_value, objective }
    };

    if c0 <= 1.0 {
        return Ok(solution(Vector::zeros(m), 0.0, 0));
    }
    let eta_inf = -pee_chol.solve(&b);
    let min_value = value(&eta_inf);
    if min_value > 1.0 {
        return Err(Op5Error::Infeasible { min_value });
    }
    let eta_at = |lambda: f64| -> Vector {
        let lhs = psi / lambda + &pee;
        match lhs.cholesky() {
            Some(c) => -c.solve(&b),
            None => eta_inf.clone(),
        }
    };

    let mut iterations = 0;
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut eta_hi = eta_at(hi);
    while value(&eta_hi) > 1.0 {
        iterations += 1;
        if hi > 1e300 {
            return Ok(solution(eta_inf, f64::INFINITY, iterations));
        }
        lo = hi;
        hi *= 2.0;
        eta_hi = eta_at(hi);
    }
    for _ in 0..OP5_MAX_BISECTIONS {
        if libm::fabs(value(&eta_hi) - 1.0) <= OP5_RESIDUAL {
            break;
        }
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let eta_mid = eta_at(mid);
        if value(&eta_mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
            eta_hi = eta_mid;
        }
    }
    Ok(solution(eta_hi, hi, iterations))
}

/// One step of the online controller for state `x` in `mode`.
pub fn control(
    bundle: &ControllerBundle,
    model: &FuzzyMjsModel,
    x: &Vector,
    mode: usize,
) -> Result<ControlDecision, ControlError> {
    if mode >= bundle.modes() {
        return Err(ModelError::ModeOutOfRange { mode, modes: bundle.modes() }.into());
    }
    let theta = model.evaluate_membership(x, PremiseSet::Plant)?;
    let vartheta = model.evaluate_membership(x, PremiseSet::Controller)?;
    if theta.len() != bundle.plant_rules() || vartheta.len() != bundle.controller_rules() {
        return Err(ModelError::Dimension("membership length differs from the bundle rule count".into()).into());
    }
    let k = bundle.gain(mode, &vartheta);
    let lyapunov = linalg::quad(&bundle.terminal_shape(mode, &theta), x);
    if lyapunov <= bundle.sigma {
        let eta = Vector::zeros(bundle.n_x);
        let xi = x.clone().insert_rows(bundle.n_x, bundle.n_x, 0.0);
        let constraint_value = linalg::quad(&bundle.augmented_shape(mode, &vartheta), &xi);
        return Ok(ControlDecision {
            u: k * x,
            eta,
            branch: Branch::Terminal,
            lambda: 0.0,
            iterations: 0,
            constraint_value,
            lyapunov,
            theta,
            vartheta,
        });
    }
    let sol = solve_op5(bundle, x, mode, &vartheta)?;
    let u = k * x + bundle.perturbation_output(mode, &vartheta) * &sol.eta;
    Ok(ControlDecision {
        u,
        eta: sol.eta,
        branch: Branch::Perturbed,
        lambda: sol.lambda,
        iterations: sol.iterations,
        constraint_value: sol.constraint_value,
        lyapunov,
        theta,
        vartheta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_pair(x: f64) -> (Mat, Mat, Vector) {
        (Mat::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]), Mat::identity(1, 1), Vector::from_element(1, x))
    }

    /// Smallest `ψη²` over a uniform grid of `η ∈ [−3, 3]` meeting the constraint.
    fn grid_oracle(p: &Mat, psi: f64, x: f64, step: f64) -> Option<f64> {
        let steps = (6.0 / step) as i64;
        (0..=steps)
            .map(|k| -3.0 + k as f64 * step)
            .filter(|e| p[(0, 0)] * x * x + 2.0 * p[(0, 1)] * x * e + p[(1, 1)] * e * e <= 1.0)
            .map(|e| psi * e * e)
            .min_by(f64::total_cmp)
    }

    #[test]
    fn unperturbed_point_is_returned_when_feasible() {
        let s = solve_op5_with(&Mat::identity(4, 4), &Mat::identity(2, 2), &Vector::from_vec(vec![0.6, 0.6])).unwrap();
        assert_eq!(s.eta, Vector::zeros(2));
        assert_eq!(s.lambda, 0.0);
    }

    #[test]
    fn decoupled_blocks_cannot_shrink_the_state_term() {
        let r = solve_op5_with(&Mat::identity(4, 4), &Mat::identity(2, 2), &Vector::from_vec(vec![1.0, 0.5]));
        assert!(matches!(r, Err(Op5Error::Infeasible { min_value }) if (min_value - 1.25).abs() < 1e-12));
    }

    #[test]
    fn scalar_instance_matches_grid_search() {
        let (p, psi, x) = scalar_pair(0.8);
        let s = solve_op5_with(&p, &psi, &x).unwrap();
        let oracle = grid_oracle(&p, 1.0, 0.8, 1e-6).unwrap();
        assert!((s.objective - oracle).abs() < 1e-6, "{} vs {oracle}", s.objective);
        assert!((s.constraint_value - 1.0).abs() <= 1e-10);
        assert!(s.lambda > 0.0);
    }

    #[test]
    fn scalar_instance_beyond_projection_is_infeasible() {
        let (p, psi, x) = scalar_pair(0.9);
        assert!(grid_oracle(&p, 1.0, 0.9, 1e-4).is_none());
        match solve_op5_with(&p, &psi, &x) {
            Err(Op5Error::Infeasible { min_value }) => assert!((min_value - 1.215).abs() < 1e-12),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn rejects_indefinite_weights() {
        let (p, _, x) = scalar_pair(0.8);
        let psi = Mat::from_element(1, 1, -1.0);
        assert!(matches!(solve_op5_with(&p, &psi, &x), Err(Op5Error::NotPositiveDefinite(_))));
        assert!(matches!(solve_op5_with(&p, &Mat::identity(2, 2), &x), Err(Op5Error::Dimension(_))));
    }

    fn spd_from(entries: &[f64], n: usize, shift: f64) -> Mat {
        let a = Mat::from_column_slice(n, n, &entries[..n * n]);
        &a * a.transpose() + Mat::identity(n, n) * shift
    }

    /// When `η = 0` is infeasible the minimizer lies on the boundary
    /// `(η − η∞)ᵀ𝒫_ηη(η − η∞) = 1 − c_min`, parametrized here by the angles
    /// of a unit vector. A coarse angle grid is refined around its best point.
    fn oracle(p: &Mat, psi: &Mat, x: &Vector) -> Option<f64> {
        use core::f64::consts::PI;
        let n = x.len();
        let m = psi.nrows();
        let pxx = p.view((0, 0), (n, n)).into_owned();
        if linalg::quad(&pxx, x) <= 1.0 {
            return Some(0.0);
        }
        let pee = p.view((n, n), (m, m)).into_owned();
        let b: Vector = p.view((n, 0), (m, n)) * x;
        let centre = -linalg::inv_pd(&pee).unwrap() * &b;
        let c_min = linalg::quad(&pxx, x) + b.dot(&centre);
        if c_min > 1.0 {
            return None;
        }
        let lower = pee.cholesky().unwrap().l();
        let map = linalg::inv(&lower.transpose()).unwrap() * (1.0 - c_min).sqrt();
        let f = |angles: &[f64]| -> f64 {
            let z = match m {
                1 => Vector::from_element(1, if angles[0] < PI { 1.0 } else { -1.0 }),
                2 => Vector::from_vec(vec![angles[0].cos(), angles[0].sin()]),
                _ => Vector::from_vec(vec![
                    angles[1].sin() * angles[0].cos(),
                    angles[1].sin() * angles[0].sin(),
                    angles[1].cos(),
                ]),
            };
            linalg::quad(psi, &(&centre + &map * z))
        };
        let dims = if m == 3 { 2 } else { 1 };
        let coarse: usize = if dims == 1 { 3600 } else { 360 };
        let mut best = (f64::INFINITY, vec![0.0; dims]);
        for idx in 0..coarse.pow(dims as u32) {
            let a = [2.0 * PI * (idx % coarse) as f64 / coarse as f64, PI * (idx / coarse) as f64 / coarse as f64];
            let v = f(&a[..dims]);
            if v < best.0 {
                best = (v, a[..dims].to_vec());
            }
        }
        if m == 1 {
            return Some(best.0);
        }
        let mut span = 2.0 * PI / coarse as f64;
        for _ in 0..80 {
            let centre = best.1.clone();
            for i in 0..21usize.pow(dims as u32) {
                let a: Vec<f64> = (0..dims)
                    .map(|d| centre[d] + span * ((i / 21usize.pow(d as u32)) % 21) as f64 / 10.0 - span)
                    .collect();
                let v = f(&a);
                if v < best.0 {
                    best = (v, a);
                }
            }
            span *= 0.5;
        }
        Some(best.0)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn random_instances_match_the_oracle(
            n in 1usize..=3,
            entries in proptest::collection::vec(-1.0f64..1.0, 36),
            psi_entries in proptest::collection::vec(-1.0f64..1.0, 9),
            xs in proptest::collection::vec(-1.5f64..1.5, 3),
        ) {
            let p = spd_from(&entries, 2 * n, 0.2);
            let psi = spd_from(&psi_entries, n, 0.1);
            let x = Vector::from_column_slice(&xs[..n]);
            let expected = oracle(&p, &psi, &x);
            match solve_op5_with(&p, &psi, &x) {
                Ok(s) => {
                    let oracle = expected.expect("oracle finds the instance feasible");
                    prop_assert!((s.objective - oracle).abs() <= 1e-5 * oracle.abs() + 1e-12, "{} vs {}", s.objective, oracle);
                    prop_assert!(s.constraint_value <= 1.0 + 1e-8);
                    prop_assert!(s.lambda == 0.0 || (s.constraint_value - 1.0).abs() <= 1e-8);
                }
                Err(Op5Error::Infeasible { .. }) => prop_assert!(expected.is_none()),
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn active_constraint_holds_with_equality(
            entries in proptest::collection::vec(-1.0f64..1.0, 16),
            psi_entries in proptest::collection::vec(-1.0f64..1.0, 4),
            scale in 1.0f64..4.0,
        ) {
            let p = spd_from(&entries, 4, 0.3);
            let psi = spd_from(&psi_entries, 2, 0.1);
            let x = Vector::from_vec(vec![1.0, -1.0]) * scale;
            if let Ok(s) = solve_op5_with(&p, &psi, &x) {
                let xi = Vector::from_iterator(4, x.iter().chain(s.eta.iter()).copied());
                prop_assert!((linalg::quad(&p, &xi) - s.constraint_value).abs() < 1e-12);
                prop_assert!(s.lambda == 0.0 || (s.constraint_value - 1.0).abs() <= 1e-8);
            }
        }
    }
}
