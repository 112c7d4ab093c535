//! Constrained T-S fuzzy Markov jump system.
//!
//! Modes and rules are 0-based here; files and reports use 1-based indices.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::linalg::{self, Mat, Vector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("non-finite state vector")]
    NonFiniteState,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("mode {mode} out of range (model has {modes} modes)")]
    ModeOutOfRange { mode: usize, modes: usize },
}

/// Which premise family a membership evaluation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PremiseSet {
    Plant,
    Controller,
}

/// Normalized rule weights on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipVector(Vec<f64>);

impl MembershipVector {
    /// Clamps negative grades to zero and normalizes; all-zero grades give
    /// uniform weights.
    pub fn from_grades(grades: &[f64]) -> Self {
        let clamped: Vec<f64> = grades.iter().map(|g| if *g > 0.0 { *g } else { 0.0 }).collect();
        let total: f64 = clamped.iter().sum();
        if total > 0.0 {
            MembershipVector(clamped.iter().map(|g| g / total).collect())
        } else {
            let n = grades.len().max(1);
            MembershipVector(vec![1.0 / n as f64; n])
        }
    }

    /// Unit weight on rule `k`.
    pub fn unit(len: usize, k: usize) -> Self {
        let mut w = vec![0.0; len];
        w[k] = 1.0;
        MembershipVector(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Convex combination `alpha * self + (1 - alpha) * other`.
    pub fn mix(&self, other: &Self, alpha: f64) -> Self {
        MembershipVector(self.0.iter().zip(&other.0).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect())
    }
}

/// Membership function families.
#[derive(Debug, Clone, PartialEq)]
pub enum Membership {
    /// A single rule with weight 1.
    Single,
    /// Two rules on state component `component`:
    /// `θ₁(z) = (sin z − β z) / ((1 − β) z)` (`θ₁(0) = 1`), `θ₂ = 1 − θ₁`.
    ArmSinc { beta: f64, component: usize },
    /// State-independent weights (renormalized on evaluation).
    Constant(Vec<f64>),
}

impl Membership {
    pub fn rule_count(&self) -> usize {
        match self {
            Membership::Single => 1,
            Membership::ArmSinc { .. } => 2,
            Membership::Constant(w) => w.len(),
        }
    }

    /// Raw, possibly negative grades before clamping.
    pub fn raw_grades(&self, x: &Vector) -> Vec<f64> {
        match self {
            Membership::Single => vec![1.0],
            Membership::ArmSinc { beta, component } => {
                let z = x[*component];
                let theta1 = if z == 0.0 { 1.0 } else { (libm::sin(z) - beta * z) / ((1.0 - beta) * z) };
                vec![theta1, 1.0 - theta1]
            }
            Membership::Constant(w) => w.clone(),
        }
    }

    pub fn evaluate(&self, x: &Vector) -> MembershipVector {
        MembershipVector::from_grades(&self.raw_grades(x))
    }
}

/// Hard constraints `|u_e| ≤ ŭ_e` and `|(Φ x)_f| ≤ x̆_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    pub u_bound: Vector,
    pub x_bound: Vector,
    pub phi: Mat,
}

impl ConstraintSpec {
    /// Largest amount by which `u` exceeds its bounds (`<= 0` when admissible).
    pub fn input_excess(&self, u: &Vector) -> f64 {
        u.iter()
            .zip(self.u_bound.iter())
            .map(|(v, b)| libm::fabs(*v) - b)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn state_excess(&self, x: &Vector) -> f64 {
        let y = &self.phi * x;
        y.iter()
            .zip(self.x_bound.iter())
            .map(|(v, b)| libm::fabs(*v) - b)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Physical parameters of the single-link arm, one mass/inertia per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmParams {
    pub gravity: f64,
    pub length: f64,
    pub friction: f64,
    pub sampling_period: f64,
    pub masses: Vec<f64>,
    pub inertias: Vec<f64>,
    pub beta: f64,
    /// Row-stochastic mode transition matrix.
    pub transition: Mat,
}

impl Default for ArmParams {
    fn default() -> Self {
        ArmParams {
            gravity: 9.81,
            length: 0.5,
            friction: 2.0,
            sampling_period: 0.1,
            masses: vec![1.0, 5.0, 10.0, 15.0],
            inertias: vec![1.0, 5.0, 10.0, 15.0],
            beta: 1e-2 / PI,
            transition: arm_transition(),
        }
    }
}

/// Markov matrix of the four-mode arm example.
pub fn arm_transition() -> Mat {
    Mat::from_row_slice(
        4,
        4,
        &[
            0.2, 0.25, 0.4, 0.15, //
            0.1, 0.2, 0.3, 0.4, //
            0.3, 0.2, 0.4, 0.1, //
            0.4, 0.2, 0.2, 0.2,
        ],
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyMjsModel {
    pub n_x: usize,
    pub n_u: usize,
    /// `a[mode][rule]`.
    pub a: Vec<Vec<Mat>>,
    /// `b[mode][rule]`.
    pub b: Vec<Vec<Mat>>,
    pub transition: Mat,
    pub plant_membership: Membership,
    pub controller_membership: Membership,
    pub state_weight: Mat,
    pub input_weight: Mat,
    pub constraints: ConstraintSpec,
    /// Present when the model was built from arm parameters; enables the
    /// nonlinear plant.
    pub arm: Option<ArmParams>,
}

impl FuzzyMjsModel {
    pub fn modes(&self) -> usize {
        self.a.len()
    }

    pub fn plant_rules(&self) -> usize {
        self.plant_membership.rule_count()
    }

    pub fn controller_rules(&self) -> usize {
        self.controller_membership.rule_count()
    }

    pub fn state_constraint_rows(&self) -> usize {
        self.constraints.phi.nrows()
    }

    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.transition[(i, j)]
    }

    pub fn evaluate_membership(&self, x: &Vector, which: PremiseSet) -> Result<MembershipVector, ModelError> {
        if !x.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFiniteState);
        }
        if x.len() != self.n_x {
            return Err(ModelError::Dimension(format!("state has length {}, expected {}", x.len(), self.n_x)));
        }
        Ok(match which {
            PremiseSet::Plant => self.plant_membership.evaluate(x),
            PremiseSet::Controller => self.controller_membership.evaluate(x),
        })
    }

    /// Blended `(A_{iθ}, B_{iθ})` for mode `mode` and plant weights `theta`.
    pub fn blended(&self, mode: usize, theta: &MembershipVector) -> Result<(Mat, Mat), ModelError> {
        self.check_mode(mode)?;
        Ok((blend(&self.a[mode], theta)?, blend(&self.b[mode], theta)?))
    }

    /// `x⁺ = A_{iθ(x)} x + B_{iθ(x)} u`.
    pub fn step(&self, x: &Vector, u: &Vector, mode: usize) -> Result<Vector, ModelError> {
        if u.len() != self.n_u {
            return Err(ModelError::Dimension(format!("input has length {}, expected {}", u.len(), self.n_u)));
        }
        let theta = self.evaluate_membership(x, PremiseSet::Plant)?;
        let (a, b) = self.blended(mode, &theta)?;
        Ok(a * x + b * u)
    }

    fn check_mode(&self, mode: usize) -> Result<(), ModelError> {
        if mode >= self.modes() {
            Err(ModelError::ModeOutOfRange { mode, modes: self.modes() })
        } else {
            Ok(())
        }
    }

    /// Lists every violated model invariant; empty when the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.modes();
        if n == 0 {
            out.push(Violation::NoModes);
            return out;
        }
        if self.transition.shape() != (n, n) {
            out.push(Violation::Shape(format!(
                "transition matrix is {}x{}, expected {n}x{n}",
                self.transition.nrows(),
                self.transition.ncols()
            )));
        } else {
            for i in 0..n {
                let row = self.transition.row(i);
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    out.push(Violation::ProbabilityRange { row: i + 1 });
                }
                if libm::fabs(row.sum() - 1.0) > 1e-12 {
                    out.push(Violation::RowNotStochastic { row: i + 1 });
                }
            }
        }
        let t = self.plant_rules();
        for i in 0..n {
            if self.a[i].len() != t || self.b.get(i).is_none_or(|b| b.len() != t) {
                out.push(Violation::Shape(format!("mode {} does not carry {t} plant rules", i + 1)));
                continue;
            }
            for h in 0..t {
                if self.a[i][h].shape() != (self.n_x, self.n_x) {
                    out.push(Violation::Shape(format!("A[{}][{}] is not {}x{}", i + 1, h + 1, self.n_x, self.n_x)));
                }
                if self.b[i][h].shape() != (self.n_x, self.n_u) {
                    out.push(Violation::Shape(format!("B[{}][{}] is not {}x{}", i + 1, h + 1, self.n_x, self.n_u)));
                }
            }
        }
        if self.b.len() != n {
            out.push(Violation::Shape(format!("{} input matrix families for {n} modes", self.b.len())));
        }
        check_weight(&mut out, "S", &self.state_weight, self.n_x);
        check_weight(&mut out, "R", &self.input_weight, self.n_u);
        let c = &self.constraints;
        if c.u_bound.len() != self.n_u {
            out.push(Violation::Shape(format!("input bound has {} entries, expected {}", c.u_bound.len(), self.n_u)));
        }
        if c.phi.ncols() != self.n_x || c.phi.nrows() != c.x_bound.len() {
            out.push(Violation::Shape(format!(
                "state constraint matrix is {}x{} with {} bounds",
                c.phi.nrows(),
                c.phi.ncols(),
                c.x_bound.len()
            )));
        }
        if c.u_bound.iter().chain(c.x_bound.iter()).any(|v| !(*v > 0.0)) {
            out.push(Violation::NonPositiveBound);
        }
        for (name, m) in [("plant", &self.plant_membership), ("controller", &self.controller_membership)] {
            if let Membership::ArmSinc { beta, component } = m {
                if !(*beta > 0.0 && *beta < 1.0) || *component >= self.n_x {
                    out.push(Violation::Membership(format!("{name} membership parameters out of range")));
                }
            }
            if let Membership::Constant(w) = m {
                if w.is_empty() || w.iter().any(|v| *v < 0.0) {
                    out.push(Violation::Membership(format!("{name} constant weights must be non-negative")));
                }
            }
        }
        out
    }
}

fn check_weight(out: &mut Vec<Violation>, name: &'static str, m: &Mat, n: usize) {
    if m.shape() != (n, n) {
        out.push(Violation::Shape(format!("weight {name} is not {n}x{n}")));
    } else if linalg::max_abs(&(m - m.transpose())) > 1e-12 || !linalg::is_pd(m) {
        out.push(Violation::WeightNotPd(name));
    }
}

/// A broken model invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoModes,
    /// 1-based row index.
    RowNotStochastic { row: usize },
    ProbabilityRange { row: usize },
    Shape(String),
    WeightNotPd(&'static str),
    NonPositiveBound,
    Membership(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoModes => write!(f, "model has no modes"),
            Violation::RowNotStochastic { row } => write!(f, "row {row} not stochastic"),
            Violation::ProbabilityRange { row } => write!(f, "row {row} has entries outside [0, 1]"),
            Violation::Shape(s) => write!(f, "{s}"),
            Violation::WeightNotPd(name) => write!(f, "weight {name} is not symmetric positive definite"),
            Violation::NonPositiveBound => write!(f, "constraint bounds must be strictly positive"),
            Violation::Membership(s) => write!(f, "{s}"),
        }
    }
}

/// `Σ_k w_k M_k`.
pub fn blend(matrices: &[Mat], w: &MembershipVector) -> Result<Mat, ModelError> {
    if matrices.is_empty() || matrices.len() != w.len() {
        return Err(ModelError::Dimension(format!("{} matrices for {} weights", matrices.len(), w.len())));
    }
    let shape = matrices[0].shape();
    let mut out = Mat::zeros(shape.0, shape.1);
    for (m, wk) in matrices.iter().zip(w.weights()) {
        if m.shape() != shape {
            return Err(ModelError::Dimension(format!("blend of {:?} and {:?} matrices", shape, m.shape())));
        }
        out += m * *wk;
    }
    Ok(out)
}

/// Euler-discretized two-rule fuzzy model of the arm.
///
/// Rule 1 linearizes `sin δ ≈ δ`, rule 2 uses `sin δ ≈ β δ`. Weights are
/// `S = I₂`, `R = 0.01`, bounds `|δ| ≤ π`, `|u| ≤ 40`.
pub fn robot_arm_model(params: &ArmParams) -> FuzzyMjsModel {
    let t = params.sampling_period;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (m, j) in params.masses.iter().zip(&params.inertias) {
        let stiff = t * m * params.gravity * params.length / j;
        let damp = 1.0 - t * params.friction / j;
        let rule1 = Mat::from_row_slice(2, 2, &[1.0, t, -stiff, damp]);
        let rule2 = Mat::from_row_slice(2, 2, &[1.0, t, -params.beta * stiff, damp]);
        let input = Mat::from_row_slice(2, 1, &[0.0, t / j]);
        a.push(vec![rule1, rule2]);
        b.push(vec![input.clone(), input]);
    }
    let membership = Membership::ArmSinc { beta: params.beta, component: 0 };
    FuzzyMjsModel {
        n_x: 2,
        n_u: 1,
        a,
        b,
        transition: params.transition.clone(),
        plant_membership: membership.clone(),
        controller_membership: membership,
        state_weight: Mat::identity(2, 2),
        input_weight: Mat::from_element(1, 1, 0.01),
        constraints: ConstraintSpec {
            u_bound: Vector::from_element(1, 40.0),
            x_bound: Vector::from_element(1, PI),
            phi: Mat::from_row_slice(1, 2, &[1.0, 0.0]),
        },
        arm: Some(params.clone()),
    }
}

/// One explicit-Euler step of `δ̈ = −(M g L / J) sin δ − (R / J) δ̇ + u / J`.
pub fn nonlinear_arm_step(params: &ArmParams, mode: usize, x: &Vector, u: &Vector) -> Vector {
    let m = params.masses[mode];
    let j = params.inertias[mode];
    let t = params.sampling_period;
    let accel = -(m * params.gravity * params.length / j) * libm::sin(x[0]) - params.friction / j * x[1] + u[0] / j;
    Vector::from_vec(vec![x[0] + t * x[1], x[1] + t * accel])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn arm() -> FuzzyMjsModel {
        robot_arm_model(&ArmParams::default())
    }

    #[test]
    fn membership_at_origin_is_first_rule() {
        let w = arm().evaluate_membership(&Vector::from_vec(vec![0.0, 0.3]), PremiseSet::Plant).unwrap();
        assert_eq!(w.weights(), &[1.0, 0.0]);
    }

    #[test]
    fn membership_at_half_pi_matches_closed_form() {
        let beta = 1e-2 / PI;
        let z = PI / 2.0;
        let expected = (1.0 - beta * z) / ((1.0 - beta) * z);
        let w = arm().evaluate_membership(&Vector::from_vec(vec![z, 0.0]), PremiseSet::Plant).unwrap();
        assert_relative_eq!(w.weights()[0], expected, epsilon = 1e-15);
        assert_relative_eq!(w.weights()[1], 1.0 - expected, epsilon = 1e-15);
    }

    #[test]
    fn membership_clamps_negative_grade_at_pi() {
        let m = arm();
        assert!(m.plant_membership.raw_grades(&Vector::from_vec(vec![PI, 0.0]))[0] < 0.0);
        let w = m.evaluate_membership(&Vector::from_vec(vec![PI, 0.0]), PremiseSet::Plant).unwrap();
        assert_eq!(w.weights(), &[0.0, 1.0]);
    }

    #[test]
    fn equal_and_zero_grades() {
        assert_eq!(MembershipVector::from_grades(&[0.3, 0.3]).weights(), &[0.5, 0.5]);
        assert_eq!(MembershipVector::from_grades(&[0.0, -1.0]).weights(), &[0.5, 0.5]);
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let r = arm().evaluate_membership(&Vector::from_vec(vec![f64::NAN, 0.0]), PremiseSet::Plant);
        assert_eq!(r, Err(ModelError::NonFiniteState));
    }

    #[test]
    fn blend_unit_and_midpoint() {
        let ms = vec![Mat::zeros(2, 2), Mat::identity(2, 2) * 2.0];
        assert_eq!(blend(&ms, &MembershipVector::unit(2, 0)).unwrap(), Mat::zeros(2, 2));
        assert_eq!(blend(&ms, &MembershipVector::from_grades(&[1.0, 1.0])).unwrap(), Mat::identity(2, 2));
        assert!(blend(&ms, &MembershipVector::unit(3, 0)).is_err());
        let bad = vec![Mat::zeros(2, 2), Mat::zeros(3, 3)];
        assert!(blend(&bad, &MembershipVector::unit(2, 0)).is_err());
    }

    #[test]
    fn arm_matrices() {
        let m = arm();
        assert_eq!(m.modes(), 4);
        let w = MembershipVector::unit(2, 0);
        let (a, b) = m.blended(0, &w).unwrap();
        assert_relative_eq!(a, Mat::from_row_slice(2, 2, &[1.0, 0.1, -0.4905, 0.8]), epsilon = 1e-15);
        assert_relative_eq!(b, Mat::from_row_slice(2, 1, &[0.0, 0.1]), epsilon = 1e-15);
        assert_relative_eq!(m.a[1][0], Mat::from_row_slice(2, 2, &[1.0, 0.1, -0.4905, 0.96]), epsilon = 1e-15);
        for (i, j) in [1.0, 5.0, 10.0, 15.0].iter().enumerate() {
            assert_relative_eq!(m.b[i][0][(1, 0)], 0.1 / j, epsilon = 1e-15);
            assert_eq!(m.b[i][0][(0, 0)], 0.0);
        }
        let row1: Vec<f64> = m.transition.row(0).iter().copied().collect();
        assert_eq!(row1, vec![0.2, 0.25, 0.4, 0.15]);
        // open-loop heavy mode: det = 0.96 + 0.04905
        assert_relative_eq!(m.a[1][0].determinant(), 1.00905, epsilon = 1e-12);
    }

    #[test]
    fn arm_rules_differ_only_in_gravity_entry() {
        let m = arm();
        let beta = ArmParams::default().beta;
        for i in 0..4 {
            let d = &m.a[i][0] - &m.a[i][1];
            for (r, c) in [(0, 0), (0, 1), (1, 1)] {
                assert_eq!(d[(r, c)], 0.0);
            }
            assert_relative_eq!(m.a[i][1][(1, 0)], beta * m.a[i][0][(1, 0)], epsilon = 1e-15);
        }
    }

    #[test]
    fn step_examples() {
        let m = arm();
        let zero = m.step(&Vector::zeros(2), &Vector::zeros(1), 2).unwrap();
        assert_eq!(zero, Vector::zeros(2));
        let x = Vector::from_vec(vec![1.5, -1.5]);
        let theta = m.evaluate_membership(&x, PremiseSet::Plant).unwrap();
        let a = blend(&m.a[0], &theta).unwrap();
        let expected = &a * &x;
        assert_relative_eq!(m.step(&x, &Vector::zeros(1), 0).unwrap(), expected, epsilon = 1e-15);
        assert!(matches!(m.step(&x, &Vector::zeros(1), 4), Err(ModelError::ModeOutOfRange { .. })));
        assert!(matches!(m.step(&x, &Vector::zeros(2), 0), Err(ModelError::Dimension(_))));
    }

    #[test]
    fn nonlinear_step_examples() {
        let p = ArmParams::default();
        assert_eq!(nonlinear_arm_step(&p, 0, &Vector::zeros(2), &Vector::zeros(1)), Vector::zeros(2));
        let at_pi = nonlinear_arm_step(&p, 0, &Vector::from_vec(vec![PI, 0.0]), &Vector::zeros(1));
        assert_eq!(at_pi[0], PI);
        assert!(at_pi[1].abs() < 1e-15);
        let one = nonlinear_arm_step(&p, 0, &Vector::from_vec(vec![1.0, 0.0]), &Vector::zeros(1));
        assert_eq!(one[0], 1.0);
        assert_relative_eq!(one[1], -0.1 * 9.81 * 0.5 * libm::sin(1.0), epsilon = 1e-15);
    }

    #[test]
    fn validate_reports_violations() {
        let mut m = arm();
        assert!(m.validate().is_empty());
        m.transition[(0, 0)] = 0.1;
        let v = m.validate();
        assert!(v.iter().any(|e| format!("{e}") == "row 1 not stochastic"), "{v:?}");
        let mut m = arm();
        m.constraints.u_bound[0] = -1.0;
        assert!(m.validate().contains(&Violation::NonPositiveBound));
        let mut m = arm();
        m.input_weight[(0, 0)] = -0.01;
        assert!(m.validate().contains(&Violation::WeightNotPd("R")));
    }

    proptest! {
        #[test]
        fn membership_stays_on_simplex(x1 in -PI..PI, x2 in -PI..PI) {
            let w = arm().evaluate_membership(&Vector::from_vec(vec![x1, x2]), PremiseSet::Plant).unwrap();
            prop_assert!(w.weights().iter().all(|v| *v >= 0.0));
            prop_assert!((w.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn blend_is_affine(alpha in 0.0..=1.0f64, a in 0.0..=1.0f64, b in 0.0..=1.0f64, seed in 0u64..1000) {
            let m = arm();
            let ms = &m.a[(seed % 4) as usize];
            let w1 = MembershipVector::from_grades(&[a, 1.0 - a]);
            let w2 = MembershipVector::from_grades(&[b, 1.0 - b]);
            let lhs = blend(ms, &w1.mix(&w2, alpha)).unwrap();
            let rhs = blend(ms, &w1).unwrap() * alpha + blend(ms, &w2).unwrap() * (1.0 - alpha);
            prop_assert!(linalg::max_abs(&(lhs - rhs)) < 1e-14);
        }

        #[test]
        fn single_rule_step_is_linear(x1 in -3.0..3.0f64, x2 in -3.0..3.0f64, u in -5.0..5.0f64) {
            let mut m = arm();
            m.a = m.a.iter().map(|r| vec![r[0].clone()]).collect();
            m.b = m.b.iter().map(|r| vec![r[0].clone()]).collect();
            m.plant_membership = Membership::Single;
            m.controller_membership = Membership::Single;
            let x = Vector::from_vec(vec![x1, x2]);
            let uu = Vector::from_vec(vec![u]);
            let got = m.step(&x, &uu, 1).unwrap();
            let want = &m.a[1][0] * &x + &m.b[1][0] * &uu;
            prop_assert_eq!(got, want);
        }
    }
}
