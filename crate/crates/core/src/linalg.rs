//! Small dense helpers shared by the solvers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::index_set::IndexSet;

pub fn principal_submatrix(m: &DMatrix<f64>, idx: &IndexSet) -> DMatrix<f64> {
    let k = idx.len();
    DMatrix::from_fn(k, k, |a, b| m[(idx.as_slice()[a], idx.as_slice()[b])])
}

pub fn subvector(v: &DVector<f64>, idx: &IndexSet) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|i| v[i]))
}

/// Scatter `values` (indexed like `idx`) into a zero vector of length `d`.
pub fn scatter(values: &DVector<f64>, idx: &IndexSet, d: usize) -> DVector<f64> {
    let mut out = DVector::zeros(d);
    for (a, i) in idx.iter().enumerate() {
        out[i] = values[a];
    }
    out
}

/// Cholesky factor of the principal submatrix `m[idx, idx]`, or `None` if it is not PD.
pub fn principal_cholesky(m: &DMatrix<f64>, idx: &IndexSet) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(principal_submatrix(m, idx))
}

/// Solves `m[idx, idx] x = b[idx]` and returns `x` scattered to length `d`.
pub fn solve_principal(m: &DMatrix<f64>, idx: &IndexSet, b: &DVector<f64>) -> Option<DVector<f64>> {
    if idx.is_empty() {
        return Some(DVector::zeros(m.nrows()));
    }
    let chol = principal_cholesky(m, idx)?;
    let x = chol.solve(&subvector(b, idx));
    Some(scatter(&x, idx, m.nrows()))
}

/// Crude 2-norm condition estimate from the Cholesky diagonal, `(max l_ii / min l_ii)^2`.
pub fn cholesky_condition_estimate(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    let n = l.nrows();
    if n == 0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let v = l[(i, i)].abs();
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (hi / lo).powi(2)
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn symmetric_eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub fn norm_inf(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Maximum absolute row sum.
pub fn matrix_norm_inf(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0f64, f64::max)
}

pub fn all_finite(values: impl IntoIterator<Item = f64>) -> bool {
    values.into_iter().all(f64::is_finite)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn principal_solve_matches_full_solve_on_full_index() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let x = solve_principal(&m, &IndexSet::full(2), &b).unwrap();
        assert!((x - DVector::from_vec(vec![1.0, 1.0])).norm() < 1e-14);
        let x1 = solve_principal(&m, &IndexSet::from_indices([0]), &b).unwrap();
        assert!((x1[0] - 0.5).abs() < 1e-15 && x1[1] == 0.0);
    }

    #[test]
    fn eigen_range_of_tridiagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        let (lo, hi) = symmetric_eigen_range(&m);
        assert!((lo - 1.0).abs() < 1e-14 && (hi - 3.0).abs() < 1e-14);
    }
}
