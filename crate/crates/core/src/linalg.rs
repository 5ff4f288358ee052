//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_traits::Float;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Orthonormal basis (as columns) of the column space of `m`.
///
/// Columns whose singular value falls below `rel_tol * sigma_max` are dropped,
/// so the result has exactly `rank(m)` columns (possibly zero).
pub fn orthonormal_basis(m: &Matrix, rel_tol: f64) -> Matrix {
    let rows = m.nrows();
    if m.ncols() == 0 || rows == 0 {
        return Matrix::zeros(rows, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if sigma_max == 0.0 {
        return Matrix::zeros(rows, 0);
    }
    let keep: alloc::vec::Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > rel_tol * sigma_max)
        .map(|(i, _)| i)
        .collect();
    Matrix::from_fn(rows, keep.len(), |r, c| u[(r, keep[c])])
}

/// Orthogonal projector `B Bᵀ` onto the span of orthonormal columns `basis`.
pub fn projector(basis: &Matrix) -> Matrix {
    basis * basis.transpose()
}

/// Largest deviation of `BᵀB` from the identity.
pub fn orthonormality_defect(basis: &Matrix) -> f64 {
    let gram = basis.transpose() * basis;
    let k = gram.nrows();
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max(Float::abs(gram[(i, j)] - target));
        }
    }
    worst
}

/// Spectral norm (largest singular value); zero for empty matrices.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// 2-norm condition number; infinite when singular.
pub fn condition_number(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 1.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    Float::sqrt(dot(a, a))
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    Float::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
}

/// Symmetric part `(M + Mᵀ)/2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_of_rank_deficient_matrix() {
        let m = Matrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let b = orthonormal_basis(&m, 1e-12);
        assert_eq!(b.ncols(), 1);
        assert!(orthonormality_defect(&b) < 1e-14);
        assert!((b[(0, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn empty_and_zero_matrices_have_empty_basis() {
        assert_eq!(orthonormal_basis(&Matrix::zeros(2, 0), 1e-12).ncols(), 0);
        assert_eq!(orthonormal_basis(&Matrix::zeros(2, 2), 1e-12).ncols(), 0);
    }

    #[test]
    fn condition_of_identity_is_one() {
        assert!((condition_number(&Matrix::identity(3, 3)) - 1.0).abs() < 1e-14);
        assert!(condition_number(&Matrix::zeros(2, 2)).is_infinite());
    }
}
