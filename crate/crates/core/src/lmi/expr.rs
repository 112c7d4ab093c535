use alloc::vec::Vec;
use core::ops::{Add, Mul, Neg, Sub};

use super::LmiError;
use crate::linalg::Mat;

/// Handle to a declared decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var {
    pub(crate) id: usize,
    pub(crate) rows: usize,
    pub(crate) cols: usize,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    /// `left · V · right`, or `left · Vᵀ · right` when `transpose` is set.
    Product { left: Mat, var: Var, transpose: bool, right: Mat },
    /// `v · coef` for a 1×1 variable `v`.
    Scaled { var: Var, coef: Mat },
}

impl Term {
    fn var(&self) -> Var {
        match self {
            Term::Product { var, .. } | Term::Scaled { var, .. } => *var,
        }
    }

    fn evaluate(&self, values: &[Mat]) -> Mat {
        match self {
            Term::Product { left, var, transpose, right } => {
                let v = &values[var.id];
                if *transpose {
                    left * v.transpose() * right
                } else {
                    left * v * right
                }
            }
            Term::Scaled { var, coef } => coef * values[var.id][(0, 0)],
        }
    }
}

/// An affine matrix expression `C + Σ terms` in the decision variables.
#[derive(Debug, Clone, PartialEq)]
pub struct MatExpr {
    rows: usize,
    cols: usize,
    constant: Mat,
    terms: Vec<Term>,
}

impl MatExpr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        MatExpr { rows, cols, constant: Mat::zeros(rows, cols), terms: Vec::new() }
    }

    pub fn constant(m: Mat) -> Self {
        MatExpr { rows: m.nrows(), cols: m.ncols(), constant: m, terms: Vec::new() }
    }

    pub fn var(v: Var) -> Self {
        MatExpr {
            rows: v.rows,
            cols: v.cols,
            constant: Mat::zeros(v.rows, v.cols),
            terms: alloc::vec![Term::Product {
                left: Mat::identity(v.rows, v.rows),
                var: v,
                transpose: false,
                right: Mat::identity(v.cols, v.cols),
            }],
        }
    }

    /// `v · coef` where `v` is a 1×1 variable.
    pub fn scaled(v: Var, coef: Mat) -> Self {
        assert_eq!(v.shape(), (1, 1), "scaled term needs a 1x1 variable");
        MatExpr { rows: coef.nrows(), cols: coef.ncols(), constant: Mat::zeros(coef.nrows(), coef.ncols()), terms: alloc::vec![Term::Scaled { var: v, coef }] }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn constant_part(&self) -> &Mat {
        &self.constant
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.terms.iter().map(Term::var)
    }

    pub fn scale(mut self, a: f64) -> Self {
        self.constant *= a;
        for t in &mut self.terms {
            match t {
                Term::Product { left, .. } => *left *= a,
                Term::Scaled { coef, .. } => *coef *= a,
            }
        }
        self
    }

    /// `m · self`.
    pub fn lmul(self, m: &Mat) -> Self {
        assert_eq!(m.ncols(), self.rows, "left factor has wrong width");
        let terms = self
            .terms
            .into_iter()
            .map(|t| match t {
                Term::Product { left, var, transpose, right } => Term::Product { left: m * left, var, transpose, right },
                Term::Scaled { var, coef } => Term::Scaled { var, coef: m * coef },
            })
            .collect();
        MatExpr { rows: m.nrows(), cols: self.cols, constant: m * self.constant, terms }
    }

    /// `self · m`.
    pub fn rmul(self, m: &Mat) -> Self {
        assert_eq!(m.nrows(), self.cols, "right factor has wrong height");
        let terms = self
            .terms
            .into_iter()
            .map(|t| match t {
                Term::Product { left, var, transpose, right } => Term::Product { left, var, transpose, right: right * m },
                Term::Scaled { var, coef } => Term::Scaled { var, coef: coef * m },
            })
            .collect();
        MatExpr { rows: self.rows, cols: m.ncols(), constant: self.constant * m, terms }
    }

    pub fn transpose(self) -> Self {
        let terms = self
            .terms
            .into_iter()
            .map(|t| match t {
                Term::Product { left, var, transpose, right } => {
                    Term::Product { left: right.transpose(), var, transpose: !transpose, right: left.transpose() }
                }
                Term::Scaled { var, coef } => Term::Scaled { var, coef: coef.transpose() },
            })
            .collect();
        MatExpr { rows: self.cols, cols: self.rows, constant: self.constant.transpose(), terms }
    }

    /// Product of two expressions; fails unless one side is constant.
    pub fn try_mul(self, rhs: MatExpr) -> Result<Self, LmiError> {
        if rhs.is_constant() {
            Ok(self.rmul(&rhs.constant))
        } else if self.is_constant() {
            Ok(rhs.lmul(&self.constant))
        } else {
            Err(LmiError::Nonlinear)
        }
    }

    /// `(self + selfᵀ) / 2`.
    pub fn sym(self) -> Self {
        let t = self.clone().transpose();
        (self + t).scale(0.5)
    }

    /// Embeds `self` at `(row, col)` of an otherwise zero `rows × cols` expression.
    pub fn place(self, rows: usize, cols: usize, row: usize, col: usize) -> Self {
        assert!(row + self.rows <= rows && col + self.cols <= cols, "placement out of bounds");
        let mut left = Mat::zeros(rows, self.rows);
        left.view_mut((row, 0), (self.rows, self.rows)).fill_with_identity();
        let mut right = Mat::zeros(self.cols, cols);
        right.view_mut((0, col), (self.cols, self.cols)).fill_with_identity();
        self.lmul(&left).rmul(&right)
    }

    pub fn evaluate(&self, values: &[Mat]) -> Mat {
        let mut out = self.constant.clone();
        for t in &self.terms {
            out += t.evaluate(values);
        }
        out
    }
}

impl From<Var> for MatExpr {
    fn from(v: Var) -> Self {
        MatExpr::var(v)
    }
}

impl From<Mat> for MatExpr {
    fn from(m: Mat) -> Self {
        MatExpr::constant(m)
    }
}

impl Add for MatExpr {
    type Output = MatExpr;

    fn add(mut self, rhs: MatExpr) -> MatExpr {
        assert_eq!(self.shape(), rhs.shape(), "adding expressions of different shape");
        self.constant += rhs.constant;
        self.terms.extend(rhs.terms);
        self
    }
}

impl Sub for MatExpr {
    type Output = MatExpr;

    fn sub(self, rhs: MatExpr) -> MatExpr {
        self + rhs.scale(-1.0)
    }
}

impl Neg for MatExpr {
    type Output = MatExpr;

    fn neg(self) -> MatExpr {
        self.scale(-1.0)
    }
}

impl Mul<f64> for MatExpr {
    type Output = MatExpr;

    fn mul(self, a: f64) -> MatExpr {
        self.scale(a)
    }
}

impl Mul<MatExpr> for &Mat {
    type Output = MatExpr;

    fn mul(self, rhs: MatExpr) -> MatExpr {
        rhs.lmul(self)
    }
}

impl Mul<&Mat> for MatExpr {
    type Output = MatExpr;

    fn mul(self, rhs: &Mat) -> MatExpr {
        self.rmul(rhs)
    }
}
