//! Small dense helpers on top of nalgebra.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Builds a matrix from row-major nested rows.
pub fn from_rows(rows: &[Vec<f64>]) -> Mat {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    Mat::from_fn(r, c, |i, j| rows[i][j])
}

/// Row-major nested rows of `m`.
pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Largest eigenvalue of the symmetric part of `m`.
pub fn max_eig(m: &Mat) -> f64 {
    if m.is_empty() {
        return f64::NEG_INFINITY;
    }
    symmetrize(m).symmetric_eigenvalues().max()
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eig(m: &Mat) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

pub fn is_pd(m: &Mat) -> bool {
    m.nrows() == m.ncols() && symmetrize(m).cholesky().is_some()
}

/// `log det m` for symmetric positive definite `m`.
pub fn logdet_pd(m: &Mat) -> Option<f64> {
    let ch = symmetrize(m).cholesky()?;
    let l = ch.l_dirty();
    Some((0..m.nrows()).map(|i| 2.0 * libm::log(l[(i, i)])).sum())
}

/// Inverse of a symmetric positive definite matrix.
pub fn inv_pd(m: &Mat) -> Option<Mat> {
    symmetrize(m).cholesky().map(|c| symmetrize(&c.inverse()))
}

pub fn inv(m: &Mat) -> Option<Mat> {
    m.clone().try_inverse()
}

/// 2-norm condition number from the singular values.
pub fn cond(m: &Mat) -> f64 {
    let sv = m.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Max absolute entry.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(libm::fabs(*v)))
}

/// `diag(blocks...)`.
pub fn block_diag(blocks: &[&Mat]) -> Mat {
    let r: usize = blocks.iter().map(|b| b.nrows()).sum();
    let c: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(r, c);
    let (mut ro, mut co) = (0, 0);
    for b in blocks {
        out.view_mut((ro, co), (b.nrows(), b.ncols())).copy_from(*b);
        ro += b.nrows();
        co += b.ncols();
    }
    out
}

/// Assembles a dense matrix from a grid of equally-partitioned blocks.
pub fn block(grid: &[Vec<&Mat>]) -> Mat {
    let heights: Vec<usize> = grid.iter().map(|row| row[0].nrows()).collect();
    let widths: Vec<usize> = grid[0].iter().map(|b| b.ncols()).collect();
    let mut out = Mat::zeros(heights.iter().sum(), widths.iter().sum());
    let mut ro = 0;
    for (i, row) in grid.iter().enumerate() {
        let mut co = 0;
        for (j, b) in row.iter().enumerate() {
            out.view_mut((ro, co), (heights[i], widths[j])).copy_from(*b);
            co += widths[j];
        }
        ro += heights[i];
    }
    out
}

/// Quadratic form `vᵀ m v`.
pub fn quad(m: &Mat, v: &Vector) -> f64 {
    v.dot(&(m * v))
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eig_bounds_of_diagonal() {
        let m = Mat::from_diagonal(&Vector::from_vec(alloc::vec![-3.0, 2.0, 0.5]));
        assert_eq!(max_eig(&m), 2.0);
        assert_eq!(min_eig(&m), -3.0);
        assert!(!is_pd(&m));
    }

    #[test]
    fn logdet_matches_product_of_diagonal() {
        let m = Mat::from_diagonal(&Vector::from_vec(alloc::vec![2.0, 8.0]));
        assert!((logdet_pd(&m).unwrap() - libm::log(16.0)).abs() < 1e-14);
        assert!(logdet_pd(&(-m)).is_none());
    }

    #[test]
    fn block_assembly() {
        let a = Mat::identity(2, 2);
        let b = Mat::from_element(2, 1, 3.0);
        let c = Mat::from_element(1, 2, 4.0);
        let d = Mat::from_element(1, 1, 5.0);
        let m = block(&[alloc::vec![&a, &b], alloc::vec![&c, &d]]);
        assert_eq!(m.shape(), (3, 3));
        assert_eq!(m[(0, 2)], 3.0);
        assert_eq!(m[(2, 0)], 4.0);
        assert_eq!(m[(2, 2)], 5.0);
        let bd = block_diag(&[&a, &d]);
        assert_eq!(bd[(2, 2)], 5.0);
        assert_eq!(bd[(0, 2)], 0.0);
    }
}
