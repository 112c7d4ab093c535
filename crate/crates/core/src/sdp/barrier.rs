//! Damped-Newton central-path iteration shared by phase I and phase II.

use alloc::vec::Vec;

use crate::linalg::{Mat, Vector};
use crate::lmi::AffineSym;

use super::SolverOptions;

/// A log-barrier block `−α logdet Z(x)` with `Z(x) = sign·A(x) + shift·I`.
pub(crate) struct Block<'a> {
    pub map: &'a AffineSym,
    pub sign: f64,
    pub shift: f64,
    /// Weight; objective blocks are additionally multiplied by `t`.
    pub alpha: f64,
    pub objective: bool,
}

impl Block<'_> {
    fn z(&self, x: &Vector) -> Mat {
        let mut z = self.map.evaluate(x) * self.sign;
        for i in 0..z.nrows() {
            z[(i, i)] += self.shift;
        }
        z
    }

    fn weight(&self, t: f64) -> f64 {
        if self.objective {
            t * self.alpha
        } else {
            self.alpha
        }
    }
}

pub(crate) struct BarrierProblem<'a> {
    pub n: usize,
    pub c: &'a Vector,
    pub blocks: Vec<Block<'a>>,
    /// Box `|x_k| < bound_k` handled as scalar barriers.
    pub bound: Vector,
    /// Barrier parameter count Σ m_j for the gap bound.
    pub m_total: f64,
}

pub(crate) struct Outcome {
    pub x: Vector,
    pub converged: bool,
    pub newton_steps: usize,
    pub outer: usize,
    pub history: Vec<f64>,
    pub gap: f64,
}

fn logdet_chol(z: &Mat) -> Option<(f64, Mat)> {
    let ch = z.clone().cholesky()?;
    let l = ch.l_dirty();
    let mut s = 0.0;
    for i in 0..z.nrows() {
        s += libm::log(l[(i, i)]);
    }
    Some((2.0 * s, ch.inverse()))
}

impl BarrierProblem<'_> {
    /// Barrier part (everything except `t·cᵀx`); `None` outside the domain.
    fn barrier(&self, x: &Vector, t: f64) -> Option<f64> {
        let mut f = 0.0;
        for b in &self.blocks {
            let ch = b.z(x).cholesky()?;
            let l = ch.l_dirty();
            let mut s = 0.0;
            for i in 0..b.map.dim {
                s += libm::log(l[(i, i)]);
            }
            f -= b.weight(t) * 2.0 * s;
        }
        for (v, r) in x.iter().zip(self.bound.iter()) {
            let (lo, hi) = (r + v, r - v);
            if !(lo > 0.0 && hi > 0.0) {
                return None;
            }
            f -= libm::log(lo) + libm::log(hi);
        }
        Some(f)
    }

    fn objective_blocks(&self, x: &Vector) -> f64 {
        let mut f = self.c.dot(x);
        for b in self.blocks.iter().filter(|b| b.objective) {
            if let Some((ld, _)) = logdet_chol(&b.z(x)) {
                f -= b.alpha * ld;
            }
        }
        f
    }

    fn grad_hess(&self, x: &Vector, t: f64) -> Option<(Vector, Mat)> {
        let n = self.n;
        let mut g = self.c * t;
        let mut h = Mat::zeros(n, n);
        for b in &self.blocks {
            let (_, zi) = logdet_chol(&b.z(x))?;
            let w = b.weight(t);
            let m = b.map.dim;
            let mut ts = Vec::with_capacity(b.map.terms.len());
            for term in &b.map.terms {
                let mut gk = Mat::zeros(m, m);
                for &(r, c, v) in &term.entries {
                    for i in 0..m {
                        gk[(i, c)] += v * zi[(i, r)];
                    }
                }
                g[term.k] -= w * b.sign * gk.trace();
                ts.push(gk * &zi);
            }
            for (a, ta) in ts.iter().enumerate() {
                let ka = b.map.terms[a].k;
                for bb in a..b.map.terms.len() {
                    let tb = &b.map.terms[bb];
                    let mut val = 0.0;
                    for &(r, c, v) in &tb.entries {
                        val += v * ta[(c, r)];
                    }
                    h[(ka, tb.k)] += w * val;
                    if bb != a {
                        h[(tb.k, ka)] += w * val;
                    }
                }
            }
        }
        for k in 0..n {
            let (lo, hi) = (self.bound[k] + x[k], self.bound[k] - x[k]);
            g[k] += 1.0 / hi - 1.0 / lo;
            h[(k, k)] += 1.0 / (lo * lo) + 1.0 / (hi * hi);
        }
        Some((g, h))
    }

    /// Solves `H Δ = −g` by Cholesky, adding `λI` with `λ = 1e-12·max diag`
    /// and growing it 100-fold on each failed factorization.
    fn newton_step(g: &Vector, h: &Mat) -> Option<Vector> {
        if let Some(ch) = h.clone().cholesky() {
            return Some(ch.solve(&(-g)));
        }
        let scale = h.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        let mut lambda = 1e-12 * scale;
        for _ in 0..12 {
            let mut hr = h.clone();
            for i in 0..hr.nrows() {
                hr[(i, i)] += lambda;
            }
            if let Some(ch) = hr.cholesky() {
                return Some(ch.solve(&(-g)));
            }
            lambda *= 100.0;
        }
        None
    }

    /// The `t` for which `x` is closest to the central path in the Newton
    /// metric, clamped to `[1e-8, 1e8]`.
    fn initial_t(&self, x: &Vector) -> f64 {
        let (Some((g0, _)), Some((g1, h))) = (self.grad_hess(x, 0.0), self.grad_hess(x, 1.0)) else { return 1.0 };
        let g_obj = &g1 - &g0;
        let Some(ch) = h.cholesky() else { return 1.0 };
        let hg = ch.solve(&g_obj);
        let denom = g_obj.dot(&hg);
        let t = -g0.dot(&hg) / denom;
        if denom > 0.0 && t.is_finite() && t > 0.0 {
            t.clamp(1e-8, 1e8)
        } else {
            1.0
        }
    }

    /// Runs the barrier method from the strictly interior point `x`.
    ///
    /// `stop` is checked after every Newton step and ends the run early.
    pub fn run(&self, mut x: Vector, opts: &SolverOptions, stop: &dyn Fn(&Vector) -> bool) -> Outcome {
        let mut t = self.initial_t(&x);
        let mut newton_steps = 0;
        let mut history = Vec::new();
        let mut outer = 0;
        loop {
            outer += 1;
            let mut barrier_x = match self.barrier(&x, t) {
                Some(v) => v,
                None => break,
            };
            for _ in 0..opts.max_newton {
                let Some((g, h)) = self.grad_hess(&x, t) else { break };
                let Some(dx) = Self::newton_step(&g, &h) else { break };
                let slope = g.dot(&dx);
                let decrement = -slope;
                if !(decrement.is_finite()) || decrement / 2.0 <= opts.newton_tol {
                    break;
                }
                let lin = t * self.c.dot(&dx);
                let mut alpha = 1.0;
                let mut accepted = None;
                while alpha > 1e-14 {
                    let trial = &x + &dx * alpha;
                    if let Some(bt) = self.barrier(&trial, t) {
                        let diff = alpha * lin + (bt - barrier_x);
                        if diff <= 0.01 * alpha * slope {
                            accepted = Some((trial, bt));
                            break;
                        }
                    }
                    alpha *= opts.backtrack;
                }
                let Some((trial, bt)) = accepted else { break };
                let moved = (&trial - &x).amax();
                x = trial;
                barrier_x = bt;
                newton_steps += 1;
                if stop(&x) {
                    return Outcome { x, converged: false, newton_steps, outer, history, gap: self.m_total / t };
                }
                if moved <= 1e-13 * x.amax().max(1.0) {
                    break;
                }
            }
            let obj = self.objective_blocks(&x);
            history.push(obj);
            let gap = self.m_total / t;
            if gap <= opts.duality_tol * obj.abs().max(1.0) {
                return Outcome { x, converged: true, newton_steps, outer, history, gap };
            }
            if outer >= opts.max_iters {
                return Outcome { x, converged: false, newton_steps, outer, history, gap };
            }
            t /= opts.barrier_shrink;
        }
        Outcome { x, converged: false, newton_steps, outer, history, gap: self.m_total / t }
    }
}

