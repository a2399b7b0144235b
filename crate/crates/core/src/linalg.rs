//! Small dense linear-algebra helpers shared by the estimation and bound code.

use nalgebra::{ComplexField, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Singular values at or below `RANK_TOL * sigma_max` count as zero.
pub const RANK_TOL: f64 = 1e-9;

/// Jitter added once when a covariance factorization fails.
pub const CHOLESKY_JITTER: f64 = 1e-10;

/// Numerical rank with the relative threshold [`RANK_TOL`].
pub fn numerical_rank<T>(m: &DMatrix<T>) -> usize
where
    T: ComplexField<RealField = f64>,
{
    rank_with_tol(m, RANK_TOL)
}

pub fn rank_with_tol<T>(m: &DMatrix<T>, rel_tol: f64) -> usize
where
    T: ComplexField<RealField = f64>,
{
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    if max == 0.0 || !max.is_finite() {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Ratio of extreme singular values, `inf` for singular input.
pub fn condition_number<T>(m: &DMatrix<T>) -> f64
where
    T: ComplexField<RealField = f64>,
{
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Maximum absolute row sum.
pub fn inf_norm<T>(m: &DMatrix<T>) -> f64
where
    T: ComplexField<RealField = f64>,
{
    m.row_iter()
        .map(|r| r.iter().map(|v| v.clone().modulus()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Replace `m` by `(m + m^T) / 2`, exactly symmetric afterwards.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = inf_norm(m).max(1.0);
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * scale))
}

/// Symmetric and no eigenvalue below `-tol * max(1, |m|)`.
pub fn is_symmetric_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    if !is_symmetric(m, tol) {
        return false;
    }
    if m.nrows() == 0 {
        return true;
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    let scale = inf_norm(&s).max(1.0);
    let eig = SymmetricEigen::new(s);
    eig.eigenvalues.iter().all(|&l| l >= -tol * scale)
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let mut s = m.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Inverse of a symmetric positive definite matrix through Cholesky,
/// retrying once with a diagonal jitter relative to the mean diagonal.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        let mut inv = ch.inverse();
        symmetrize(&mut inv);
        return Ok(inv);
    }
    let n = m.nrows();
    let scale = m.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n.max(1) as f64;
    if !(scale > 0.0) {
        return Err(Error::SingularCovariance);
    }
    let jittered = m + DMatrix::<f64>::identity(n, n) * (CHOLESKY_JITTER * scale);
    match jittered.cholesky() {
        Some(ch) => {
            let mut inv = ch.inverse();
            symmetrize(&mut inv);
            Ok(inv)
        }
        None => Err(Error::SingularCovariance),
    }
}

/// A matrix `L` with `L L^T = m` for symmetric PSD `m`, via the eigendecomposition
/// so that singular covariances are accepted.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = m.clone();
    symmetrize(&mut s);
    if let Some(ch) = s.clone().cholesky() {
        return ch.l();
    }
    let eig = SymmetricEigen::new(s);
    let mut v = eig.eigenvectors;
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let r = l.max(0.0).sqrt();
        v.column_mut(j).scale_mut(r);
    }
    v
}

pub fn trace(m: &DMatrix<f64>) -> f64 {
    m.diagonal().sum()
}

/// Row-major copy of the entries of `m`.
pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<num_complex::Complex64> {
    m.map(|v| num_complex::Complex64::new(v, 0.0))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

pub fn vec_max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_simple_matrices() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        assert_eq!(numerical_rank(&m), 2);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(numerical_rank(&m), 1);
        assert_eq!(numerical_rank(&DMatrix::<f64>::zeros(3, 2)), 0);
    }

    #[test]
    fn rank_is_invariant_under_row_permutation() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 1.0, 1.0]);
        let p = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 3.0, 1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert_eq!(numerical_rank(&m), numerical_rank(&p));
    }

    #[test]
    fn spd_inverse_matches_direct_inverse() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let inv = spd_inverse(&m).unwrap();
        let id = &m * &inv;
        assert!((id - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);
        assert!(spd_inverse(&DMatrix::<f64>::zeros(2, 2)).is_err());
    }

    #[test]
    fn psd_sqrt_handles_singular_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = psd_sqrt(&m);
        assert!((&l * l.transpose() - &m).amax() < 1e-12);
    }

    #[test]
    fn symmetrize_is_exact() {
        let mut m = DMatrix::from_row_slice(2, 2, &[1.0, 0.1 + 0.2, 0.3, 2.0]);
        symmetrize(&mut m);
        assert_eq!(m[(0, 1)], m[(1, 0)]);
    }
}
