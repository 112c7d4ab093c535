use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::bundle::ControllerBundle;
use super::cost::{stage_weight, xi};
use crate::linalg::{self, Mat};
use crate::lmi::{MatExpr, Problem, Var};
use crate::model::{blend, FuzzyMjsModel, MembershipVector};
use crate::sdp::{self, Phase1Status, SolverOptions};

/// Required distance below zero for the strict eigenvalue families.
pub const CERT_STRICTNESS: f64 = 1e-9;

/// All points of the simplex with `points` nodes per edge.
pub fn simplex_grid(rules: usize, points: usize) -> Vec<MembershipVector> {
    let steps = points.saturating_sub(1).max(if rules > 1 { 1 } else { 0 });
    let mut out = Vec::new();
    let mut counts = alloc::vec![0usize; rules];
    fn rec(k: usize, left: usize, counts: &mut Vec<usize>, out: &mut Vec<MembershipVector>) {
        if k + 1 == counts.len() {
            counts[k] = left;
            let g: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            out.push(MembershipVector::from_grades(&g));
            return;
        }
        for c in (0..=left).rev() {
            counts[k] = c;
            rec(k + 1, left - c, counts, out);
        }
    }
    if rules == 0 {
        return out;
    }
    rec(0, steps, &mut counts, &mut out);
    out
}

/// Worst value of one certificate family over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyResult {
    pub name: &'static str,
    pub worst: f64,
    /// Where the worst value occurs.
    pub at: String,
    /// The family passes when `worst < limit + tol`.
    pub limit: f64,
    /// Hard families decide the overall verdict; the others are diagnostics.
    pub hard: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    pub grid: usize,
    pub tol: f64,
    pub families: Vec<FamilyResult>,
    /// Largest terminal ellipsoid volume over the plant grid, per mode.
    pub terminal_volume: Vec<f64>,
    /// Smallest projection ellipsoid volume over the controller grid, per mode.
    pub projection_volume: Vec<f64>,
    pub passed: bool,
}

impl CertificateReport {
    pub fn family(&self, name: &str) -> Option<&FamilyResult> {
        self.families.iter().find(|f| f.name == name)
    }
}

struct Tracker {
    worst: f64,
    at: String,
}

impl Tracker {
    fn new() -> Self {
        Tracker { worst: f64::NEG_INFINITY, at: String::new() }
    }

    fn see(&mut self, value: f64, at: impl FnOnce() -> String) {
        if value > self.worst || value.is_nan() {
            self.worst = value;
            self.at = at();
        }
    }

    fn finish(self, name: &'static str, limit: f64, hard: bool, tol: f64) -> FamilyResult {
        let passed = tol == f64::INFINITY || self.worst < limit + tol;
        FamilyResult { name, worst: self.worst, at: self.at, limit, hard, passed }
    }
}

fn fmt_w(w: &MembershipVector) -> String {
    let parts: Vec<String> = w.weights().iter().map(|v| format!("{v:.3}")).collect();
    format!("({})", parts.join(", "))
}

fn unit_ball_volume(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    libm::pow(core::f64::consts::PI, h) / libm::tgamma(h + 1.0)
}

/// Largest `max_e (Λ Q Λᵀ)_ee / b_e² − 1`.
fn normalized_excess(lambda: &Mat, q: &Mat, bounds: &crate::linalg::Vector) -> f64 {
    let v = lambda * q * lambda.transpose();
    (0..v.nrows()).map(|e| v[(e, e)] / (bounds[e] * bounds[e]) - 1.0).fold(f64::NEG_INFINITY, f64::max)
}

/// Re-evaluates every certificate of `bundle` on a membership grid with
/// `grid` points per simplex edge. `tol` loosens every limit.
pub fn certify(model: &FuzzyMjsModel, bundle: &ControllerBundle, grid: usize, tol: f64) -> CertificateReport {
    let n = model.n_x;
    let modes = model.modes();
    let s = &model.state_weight;
    let r = &model.input_weight;
    let cons = &model.constraints;
    let thetas = simplex_grid(model.plant_rules(), grid);
    let varthetas = simplex_grid(model.controller_rules(), grid);

    let p_at: Vec<Vec<Mat>> = (0..modes).map(|i| thetas.iter().map(|th| bundle.terminal_shape(i, th)).collect()).collect();
    let k_at: Vec<Vec<Mat>> = (0..modes).map(|i| varthetas.iter().map(|v| bundle.gain(i, v)).collect()).collect();
    let c_at: Vec<Vec<Mat>> =
        (0..modes).map(|i| varthetas.iter().map(|v| bundle.perturbation_output(i, v)).collect()).collect();
    let a_at: Vec<Vec<Mat>> = (0..modes)
        .map(|i| varthetas.iter().map(|v| blend(&bundle.a_pred[i], v).expect("shape checked")).collect())
        .collect();
    let bp_at: Vec<Vec<Mat>> =
        (0..modes).map(|i| varthetas.iter().map(|v| bundle.augmented_shape(i, v)).collect()).collect();
    let psi_at: Vec<Vec<Mat>> = (0..modes)
        .map(|i| {
            varthetas
                .iter()
                .map(|v| {
                    let xx = blend(&bundle.psi_xx[i], v).expect("shape checked");
                    let ee = bundle.perturbation_cost(i, v);
                    linalg::block_diag(&[&xx, &ee])
                })
                .collect()
        })
        .collect();
    let ab_at: Vec<Vec<(Mat, Mat)>> =
        (0..modes).map(|i| thetas.iter().map(|th| model.blended(i, th).expect("shape checked")).collect()).collect();

    let mut lyap = Tracker::new();
    let mut jump = Tracker::new();
    let mut pred = Tracker::new();
    let mut cost = Tracker::new();
    let mut t_in = Tracker::new();
    let mut t_st = Tracker::new();
    let mut a_in = Tracker::new();
    let mut a_st = Tracker::new();
    let mut contain = Tracker::new();
    let mut pd = Tracker::new();
    let mut inv_res = Tracker::new();
    let mut fac_res = Tracker::new();
    let mut terminal_volume = alloc::vec![0.0f64; modes];
    let mut projection_volume = alloc::vec![f64::INFINITY; modes];
    let vn = unit_ball_volume(n);
    let sigma = bundle.sigma;
    let phi_aug = {
        let nc = cons.phi.nrows();
        linalg::block(&[alloc::vec![&cons.phi, &Mat::zeros(nc, n)]])
    };

    for i in 0..modes {
        let succ: Vec<usize> = (0..modes).filter(|&j| model.p(i, j) != 0.0).collect();
        for (a, th) in thetas.iter().enumerate() {
            let (am, bm) = &ab_at[i][a];
            let p_i = &p_at[i][a];
            let p_inv = linalg::inv_pd(p_i);
            pd.see(-linalg::min_eig(p_i), || format!("P mode {}, θ={}", i + 1, fmt_w(th)));
            if let Some(d) = linalg::logdet_pd(p_i) {
                let vol = vn * libm::pow(sigma, n as f64 / 2.0) * libm::exp(-d / 2.0);
                terminal_volume[i] = terminal_volume[i].max(vol);
            }
            for (b, vt) in varthetas.iter().enumerate() {
                let k = &k_at[i][b];
                let closed = am + bm * k;
                let ct = closed.transpose();
                let base = -p_i + s + k.transpose() * r * k;
                for (c, thp) in thetas.iter().enumerate() {
                    let mut m = base.clone();
                    for &j in &succ {
                        m += &ct * &p_at[j][c] * &closed * model.p(i, j);
                        let e = linalg::max_eig(&(&ct * &p_at[j][c] * &closed - p_i));
                        jump.see(e, || format!("mode {}→{}, θ={}, ϑ={}, θ₊={}", i + 1, j + 1, fmt_w(th), fmt_w(vt), fmt_w(thp)));
                    }
                    let e = linalg::max_eig(&m);
                    lyap.see(e, || format!("mode {}, θ={}, ϑ={}, θ₊={}", i + 1, fmt_w(th), fmt_w(vt), fmt_w(thp)));
                }
                if let Some(q) = &p_inv {
                    let q = q * sigma;
                    t_in.see(normalized_excess(k, &q, &cons.u_bound), || format!("mode {}, θ={}, ϑ={}", i + 1, fmt_w(th), fmt_w(vt)));
                    t_st.see(normalized_excess(&cons.phi, &q, &cons.x_bound), || format!("mode {}, θ={}", i + 1, fmt_w(th)));
                } else {
                    t_in.see(f64::INFINITY, || format!("P mode {} singular", i + 1));
                }

                let x = xi(am, bm, k, &c_at[i][b], &a_at[i][b]);
                let xt = x.transpose();
                let weight = stage_weight(s, r, k, &c_at[i][b]);
                for (c, vp) in varthetas.iter().enumerate() {
                    let mut mp = -&bp_at[i][b];
                    let mut mc = weight.clone() - &psi_at[i][b];
                    for &j in &succ {
                        mp += &xt * &bp_at[j][c] * &x * model.p(i, j);
                        mc += &xt * &psi_at[j][c] * &x * model.p(i, j);
                    }
                    let at = || format!("mode {}, θ={}, ϑ={}, ϑ₊={}", i + 1, fmt_w(th), fmt_w(vt), fmt_w(vp));
                    pred.see(linalg::max_eig(&mp), at);
                    cost.see(linalg::max_eig(&mc), at);
                }
                if let Some(li) = linalg::inv_pd(&blend(&bundle.l[i], vt).expect("shape checked")) {
                    let e = linalg::max_eig(&(li - p_i / sigma));
                    contain.see(e, || format!("mode {}, θ={}, ϑ={}", i + 1, fmt_w(th), fmt_w(vt)));
                }
            }
        }
        for (b, vt) in varthetas.iter().enumerate() {
            let bp = &bp_at[i][b];
            let at = || format!("mode {}, ϑ={}", i + 1, fmt_w(vt));
            pd.see(-linalg::min_eig(bp), || format!("𝒫 {}", at()));
            pd.see(-linalg::min_eig(&psi_at[i][b]), || format!("Ψ {}", at()));
            match linalg::inv_pd(bp) {
                Some(q) => {
                    let lambda = linalg::block(&[alloc::vec![&k_at[i][b], &c_at[i][b]]]);
                    a_in.see(normalized_excess(&lambda, &q, &cons.u_bound), at);
                    a_st.see(normalized_excess(&phi_aug, &q, &cons.x_bound), at);
                }
                None => a_in.see(f64::INFINITY, at),
            }
            let l = blend(&bundle.l[i], vt).expect("shape checked");
            if let Some(d) = linalg::logdet_pd(&l) {
                projection_volume[i] = projection_volume[i].min(vn * libm::exp(d / 2.0));
            }
        }
        for u in 0..model.controller_rules() {
            let at = || format!("mode {}, rule {}", i + 1, u + 1);
            let big = &bundle.big_p[i][u];
            let res = linalg::max_abs(&(big * &bundle.big_p_inv[i][u] - Mat::identity(2 * n, 2 * n)));
            inv_res.see(res, at);
            let fr = linalg::max_abs(&(&bundle.e[i][u] * bundle.f[i][u].transpose() - (&bundle.m[i][u] - &bundle.l[i][u])));
            fac_res.see(fr, at);
            pd.see(-linalg::min_eig(&bundle.l[i][u]), || format!("L {}", at()));
            pd.see(-linalg::min_eig(&bundle.m[i][u]), || format!("M {}", at()));
        }
    }

    let families = alloc::vec![
        lyap.finish("terminal-lyapunov", -CERT_STRICTNESS, true, tol),
        pred.finish("prediction-invariance", -CERT_STRICTNESS, true, tol),
        cost.finish("cost-bound", -CERT_STRICTNESS, true, tol),
        t_in.finish("terminal-input", 0.0, true, tol),
        t_st.finish("terminal-state", 0.0, true, tol),
        a_in.finish("augmented-input", 0.0, true, tol),
        a_st.finish("augmented-state", 0.0, true, tol),
        pd.finish("positive-definite", 0.0, true, tol),
        inv_res.finish("inverse-residual", 1e-8, true, tol),
        fac_res.finish("factor-residual", 1e-10, true, tol),
        jump.finish("terminal-jump-decrease", 0.0, false, tol),
        contain.finish("containment", 0.0, false, tol),
    ];
    let passed = families.iter().filter(|f| f.hard).all(|f| f.passed);
    CertificateReport { grid, tol, families, terminal_volume, projection_volume, passed }
}

/// Outcome of the fixed-gain Lyapunov feasibility test.
#[derive(Debug, Clone, PartialEq)]
pub struct GainCertificate {
    pub status: Phase1Status,
    pub slack: f64,
    /// Largest eigenvalue over the grid family at the phase-I point.
    pub worst: f64,
    /// `P[mode][plant rule]` found by phase I.
    pub p: Vec<Vec<Mat>>,
    pub constraints: usize,
}

impl GainCertificate {
    pub fn certified(&self) -> bool {
        self.status == Phase1Status::Feasible && self.worst < -CERT_STRICTNESS
    }
}

/// Searches for `P_{i,ħ} ≻ 0` making the Lyapunov decrease family hold at
/// every grid point for fixed gains `k[mode][controller rule]`.
pub fn lyapunov_feasibility(model: &FuzzyMjsModel, k: &[Vec<Mat>], grid: usize, options: &SolverOptions) -> GainCertificate {
    let (n, modes) = (model.n_x, model.modes());
    let thetas = simplex_grid(model.plant_rules(), grid);
    let varthetas = simplex_grid(model.controller_rules(), grid);
    let mut prob = Problem::new();
    let p: Vec<Vec<Var>> = (0..modes)
        .map(|i| (0..model.plant_rules()).map(|h| prob.symmetric(&format!("P[{}][{}]", i + 1, h + 1), n)).collect())
        .collect();
    let blend_var = |i: usize, w: &MembershipVector| -> MatExpr {
        let mut e = MatExpr::zeros(n, n);
        for (h, &wh) in w.weights().iter().enumerate() {
            if wh != 0.0 {
                e = e + MatExpr::from(p[i][h]).scale(wh);
            }
        }
        e
    };
    for i in 0..modes {
        for h in 0..model.plant_rules() {
            prob.add_psd(&format!("P pd {} {}", i + 1, h + 1), MatExpr::var(p[i][h]), CERT_STRICTNESS);
        }
        for th in &thetas {
            let (am, bm) = model.blended(i, th).expect("validated model");
            for (b, vt) in varthetas.iter().enumerate() {
                let kk = blend(&k[i], vt).expect("gain shape");
                let closed = &am + &bm * &kk;
                let ct = closed.transpose();
                let base = &model.state_weight + kk.transpose() * &model.input_weight * &kk;
                for (c, thp) in thetas.iter().enumerate() {
                    let mut e = MatExpr::constant(base.clone()) - blend_var(i, th);
                    for j in (0..modes).filter(|&j| model.p(i, j) != 0.0) {
                        e = e + blend_var(j, thp).lmul(&ct).rmul(&closed).scale(model.p(i, j));
                    }
                    prob.add_lmi(&format!("lyapunov mode {} {b} {c}", i + 1), e, CERT_STRICTNESS);
                }
            }
        }
    }
    let cp = prob.compile().expect("well-formed problem");
    let r = sdp::phase1(&cp, options);
    let worst = (0..cp.constraints.len())
        .filter(|&j| cp.constraints[j].name.starts_with("lyapunov"))
        .map(|j| linalg::max_eig(&cp.constraint_value(j, &r.x)))
        .fold(f64::NEG_INFINITY, f64::max);
    let vals = cp.unpack(&r.x);
    let pm = p.iter().map(|row| row.iter().map(|v| vals[v.id()].clone()).collect()).collect();
    GainCertificate { status: r.status, slack: r.slack, worst, p: pm, constraints: cp.constraints.len() }
}
