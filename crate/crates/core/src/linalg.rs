//! Symmetric positive-definite solves with a diagonal jitter fallback.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{invalid, Error, Result};

/// First jitter tried, relative to the mean of the diagonal.
pub const JITTER_START: f64 = 1e-10;
/// Largest jitter tried before giving up, relative to the mean of the diagonal.
pub const JITTER_MAX: f64 = 1e-4;

/// Cholesky factor of `A + jitter·I`.
#[derive(Clone, Debug)]
pub struct PsdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl PsdFactor {
    /// Factorizes `a`, escalating diagonal jitter by ×10 from
    /// `JITTER_START·mean(diag)` up to `JITTER_MAX·mean(diag)` when the plain
    /// factorization fails.
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(invalid(format!(
                "psd factorization needs a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.nrows() == 0 {
            return Err(invalid("psd factorization of an empty matrix"));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(invalid("matrix has non-finite entries"));
        }
        if let Some(chol) = a.clone().cholesky() {
            return Ok(Self { chol, jitter: 0.0 });
        }

        let n = a.nrows();
        let mean_diag = a.diagonal().sum() / n as f64;
        let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
        let mut rel = JITTER_START;
        let mut jitter = rel * scale;
        while rel <= JITTER_MAX * (1.0 + 1e-9) {
            jitter = rel * scale;
            let mut shifted = a.clone();
            for i in 0..n {
                shifted[(i, i)] += jitter;
            }
            if let Some(chol) = shifted.cholesky() {
                return Ok(Self { chol, jitter });
            }
            rel *= 10.0;
        }
        Err(Error::SingularMatrix { jitter })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Diagonal jitter that was added to obtain the factorization (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Solves `L v = b` with the lower Cholesky factor, so `vᵀv = bᵀA⁻¹b`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut v = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut v);
        v
    }

    /// Returns `L v`, which has covariance `A + jitter·I` for white `v`.
    pub fn lower_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.l() * v
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }
}

/// Returns `A⁻¹B` for symmetric positive-definite `A`.
pub fn psd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(invalid(format!(
            "dimension mismatch: A is {}x{}, B has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    Ok(PsdFactor::new(a.clone())?.solve_mat(b))
}

/// Vector form of [`psd_solve`].
pub fn psd_solve_vec(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(invalid(format!(
            "dimension mismatch: A is {}x{}, b has {} entries",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    Ok(PsdFactor::new(a.clone())?.solve_vec(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_solve_is_passthrough() {
        let a = DMatrix::<f64>::identity(3, 3);
        let b = DVector::from_vec(vec![1.0, -2.0, 3.5]);
        assert_eq!(psd_solve_vec(&a, &b).unwrap(), b);
    }

    #[test]
    fn scalar_solve() {
        let a = DMatrix::from_element(1, 1, 4.0);
        let b = DVector::from_element(1, 2.0);
        assert!((psd_solve_vec(&a, &b).unwrap()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn random_spd_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let g = DMatrix::<f64>::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
            let a = &g * g.transpose() + DMatrix::identity(6, 6) * 0.1;
            let b = DVector::<f64>::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
            let x = psd_solve_vec(&a, &b).unwrap();
            let resid = (&a * &x - &b).norm() / b.norm();
            assert!(resid < 1e-10, "residual {resid}");
        }
    }

    #[test]
    fn log_det_matches_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 5.0]));
        let f = PsdFactor::new(a).unwrap();
        assert!((f.log_det() - 30f64.ln()).abs() < 1e-12);
        assert_eq!(f.jitter(), 0.0);
    }

    #[test]
    fn rank_one_matrix_gets_jitter() {
        let a = DMatrix::from_element(3, 3, 1.0);
        let f = PsdFactor::new(a).unwrap();
        assert!(f.jitter() > 0.0);
        assert!(f.jitter() <= JITTER_MAX * 1.000001);
    }

    #[test]
    fn indefinite_matrix_is_singular_error() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match PsdFactor::new(a) {
            Err(Error::SingularMatrix { jitter }) => assert!(jitter > 0.0),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = DMatrix::<f64>::identity(2, 2);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            psd_solve_vec(&a, &b),
            Err(Error::InvalidArgument(_))
        ));
    }
}
