//! Symmetric positive-definite factorizations with a jitter fallback, plus
//! the handful of dense helpers the rest of the crate leans on.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative jitter levels tried, in order, when a plain Cholesky fails.
/// Each is multiplied by the mean diagonal of the matrix.
pub const JITTER_LADDER: [f64; 3] = [1e-10, 1e-8, 1e-6];

/// Relative asymmetry tolerated before symmetrization is refused.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Largest absolute entry, used as the scale for relative tolerances.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Returns (A + Aᵀ)/2, or an error if A is further than `SYMMETRY_TOL`
/// (relative to its largest entry) from symmetric.
pub fn symmetrize(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            context: "square matrix",
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    let asym = max_abs(&(a - a.transpose()));
    let tol = SYMMETRY_TOL * max_abs(a).max(f64::MIN_POSITIVE);
    if asym > tol {
        return Err(Error::NotSymmetric {
            asymmetry: asym,
            tolerance: tol,
        });
    }
    Ok((a + a.transpose()) * 0.5)
}

/// Smallest eigenvalue of a symmetric matrix (0 for an empty one).
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    let sym = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Checks the PSD convention used for every second-order specification:
/// min eigenvalue ≥ −1e-8 · (largest diagonal entry).
pub fn check_psd(a: &DMatrix<f64>) -> Result<()> {
    let scale = a.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let lam = min_eigenvalue(a);
    if lam < -1e-8 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPositiveSemiDefinite {
            min_eigenvalue: lam,
        });
    }
    Ok(())
}

/// Rounding tolerance, relative to the kernel variance, for negative
/// eigenvalues of an emulator's predictive covariance.
pub const PREDICTIVE_PSD_TOL: f64 = 1e-10;

/// Symmetrizes `cov` and zeroes negative eigenvalues no larger in magnitude
/// than `tol · scale`; anything more negative is an error.
pub fn clip_rounding(cov: DMatrix<f64>, scale: f64, tol: f64) -> Result<DMatrix<f64>> {
    let cov = (&cov + cov.transpose()) * 0.5;
    if cov.nrows() == 0 {
        return Ok(cov);
    }
    let eig = SymmetricEigen::new(cov.clone());
    let lam = eig.eigenvalues.min();
    if lam >= 0.0 {
        return Ok(cov);
    }
    if lam < -tol * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPositiveSemiDefinite { min_eigenvalue: lam });
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// Kronecker product a ⊗ b.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Cholesky factorization of a symmetric matrix that retries with diagonal
/// jitter and remembers how much it needed.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl SpdFactor {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let sym = symmetrize(a)?;
        let n = sym.nrows();
        if let Some(chol) = Cholesky::new(sym.clone()) {
            return Ok(Self { chol, jitter: 0.0 });
        }
        let mean_diag = if n == 0 {
            0.0
        } else {
            sym.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n as f64
        };
        if !(mean_diag > 0.0) {
            return Err(Error::SingularVariance { max_jitter: 0.0 });
        }
        let base = mean_diag;
        for rel in JITTER_LADDER {
            let delta = rel * base;
            let mut shifted = sym.clone();
            for i in 0..n {
                shifted[(i, i)] += delta;
            }
            if let Some(chol) = Cholesky::new(shifted) {
                log::debug!("cholesky needed jitter {delta:e} ({rel:e} x mean diagonal)");
                return Ok(Self { chol, jitter: delta });
            }
        }
        Err(Error::SingularVariance {
            max_jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] * base,
        })
    }

    /// Absolute diagonal jitter added before the factorization succeeded.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn ln_determinant(&self) -> f64 {
        self.chol.ln_determinant()
    }

    /// Lower-triangular factor L with L·Lᵀ = A (+ jitter).
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

/// Solves a·x = rhs for symmetric a, returning x and the jitter used.
pub fn spd_solve(a: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if a.nrows() != rhs.nrows() {
        return Err(Error::DimensionMismatch {
            context: "spd_solve right-hand side",
            expected: a.nrows(),
            found: rhs.nrows(),
        });
    }
    let f = SpdFactor::new(a)?;
    Ok((f.solve(rhs), f.jitter()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let rhs = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 3.5, 0.0, 7.0, 1e-3]);
        let (x, jitter) = spd_solve(&DMatrix::identity(3, 3), &rhs).unwrap();
        assert_eq!(jitter, 0.0);
        assert!((x - rhs).abs().max() < 1e-15);
    }

    #[test]
    fn diagonal_solve() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let rhs = DMatrix::from_column_slice(2, 1, &[2.0, 4.0]);
        let (x, _) = spd_solve(&a, &rhs).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_spd_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_spd(20, &mut rng);
        let rhs = DMatrix::from_fn(20, 3, |_, _| rng.random_range(-1.0..1.0));
        let (x, _) = spd_solve(&a, &rhs).unwrap();
        let rel = (&a * &x - &rhs).norm() / rhs.norm();
        assert!(rel <= 1e-10, "relative residual {rel:e}");
    }

    #[test]
    fn rank_deficient_needs_jitter() {
        let v = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let a = &v * v.transpose();
        let f = SpdFactor::new(&a).unwrap();
        assert!(f.jitter() > 0.0);
    }

    #[test]
    fn indefinite_is_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            SpdFactor::new(&a),
            Err(Error::SingularVariance { .. })
        ));
    }

    #[test]
    fn asymmetry_is_rejected_beyond_tolerance() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0 + 1e-6, 2.0]);
        assert!(matches!(symmetrize(&a), Err(Error::NotSymmetric { .. })));
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0 + 1e-12, 2.0]);
        let s = symmetrize(&b).unwrap();
        assert_eq!(s[(0, 1)], s[(1, 0)]);
    }
}
