//! Second-order belief specifications and their Bayes linear adjustment.
//!
//! Everything in the toolkit is eventually expressed as a [`JointBelief`]
//! over an unobserved collection B and an observed collection D, and
//! adjusted with [`adjust`]. Adjusted covariances between sub-collections
//! B1, B2 of B are read off the adjusted covariance with
//! [`AdjustedBelief::cross_cov`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_psd, symmetrize, SpdFactor};

/// Mean vector and covariance matrix over a collection of quantities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderSpec {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl SecondOrderSpec {
    /// Validates symmetry (1e-10 relative) and positive semi-definiteness
    /// (min eigenvalue ≥ −1e-8 · largest diagonal entry).
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                context: "second-order spec covariance",
                expected: mean.len(),
                found: cov.nrows(),
            });
        }
        let cov = symmetrize(&cov)?;
        check_psd(&cov)?;
        Ok(Self { mean, cov })
    }

    /// Builds a spec without the eigenvalue check. Callers guarantee
    /// symmetry; used on hot paths where the structure is known.
    pub(crate) fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        debug_assert_eq!(mean.len(), cov.nrows());
        Self { mean, cov }
    }

    pub fn known(values: DVector<f64>) -> Self {
        let n = values.len();
        Self {
            mean: values,
            cov: DMatrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn variances(&self) -> DVector<f64> {
        self.cov.diagonal()
    }

    /// Marginal spec over the listed components.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        for &i in indices {
            if i >= self.dim() {
                return Err(Error::DimensionMismatch {
                    context: "component index",
                    expected: self.dim(),
                    found: i,
                });
            }
        }
        let mean = DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.mean[i]));
        let cov = DMatrix::from_fn(indices.len(), indices.len(), |r, c| {
            self.cov[(indices[r], indices[c])]
        });
        Ok(Self { mean, cov })
    }

    /// Exact image under x ↦ A·x + b.
    pub fn affine(&self, scale: &DMatrix<f64>, offset: &DVector<f64>) -> Result<Self> {
        if scale.ncols() != self.dim() || scale.nrows() != offset.len() {
            return Err(Error::DimensionMismatch {
                context: "affine transform",
                expected: self.dim(),
                found: scale.ncols(),
            });
        }
        let mean = scale * &self.mean + offset;
        let cov = scale * &self.cov * scale.transpose();
        let cov = (&cov + cov.transpose()) * 0.5;
        Ok(Self { mean, cov })
    }
}

/// Joint second-order prior over (B, D).
#[derive(Clone, Debug)]
pub struct JointBelief {
    pub b: SecondOrderSpec,
    pub d: SecondOrderSpec,
    /// Cov[B, D], dim(B) × dim(D).
    pub cross: DMatrix<f64>,
}

impl JointBelief {
    /// Checks dimensions and that the stacked covariance
    /// [[Var B, Cov BD], [Cov DB, Var D]] is PSD.
    pub fn new(b: SecondOrderSpec, d: SecondOrderSpec, cross: DMatrix<f64>) -> Result<Self> {
        let joint = Self::new_unchecked(b, d, cross)?;
        check_psd(&joint.stacked_cov())?;
        Ok(joint)
    }

    /// Checks dimensions only.
    pub fn new_unchecked(b: SecondOrderSpec, d: SecondOrderSpec, cross: DMatrix<f64>) -> Result<Self> {
        if cross.nrows() != b.dim() {
            return Err(Error::DimensionMismatch {
                context: "Cov[B, D] rows",
                expected: b.dim(),
                found: cross.nrows(),
            });
        }
        if cross.ncols() != d.dim() {
            return Err(Error::DimensionMismatch {
                context: "Cov[B, D] columns",
                expected: d.dim(),
                found: cross.ncols(),
            });
        }
        Ok(Self { b, d, cross })
    }

    pub fn stacked_cov(&self) -> DMatrix<f64> {
        let (nb, nd) = (self.b.dim(), self.d.dim());
        let mut s = DMatrix::zeros(nb + nd, nb + nd);
        s.view_mut((0, 0), (nb, nb)).copy_from(self.b.cov());
        s.view_mut((nb, nb), (nd, nd)).copy_from(self.d.cov());
        s.view_mut((0, nb), (nb, nd)).copy_from(&self.cross);
        s.view_mut((nb, 0), (nd, nb)).copy_from(&self.cross.transpose());
        s
    }
}

/// Adjusted expectation and variance of B given D.
#[derive(Clone, Debug)]
pub struct AdjustedBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Prior minus adjusted covariance, Cov[B,D]·Var[D]⁻¹·Cov[D,B].
    pub resolved_cov: DMatrix<f64>,
    /// Diagonal jitter that Var[D] needed before it factorized.
    pub jitter: f64,
}

impl AdjustedBelief {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Adjusted covariance between sub-collections `rows` and `cols` of B.
    pub fn cross_cov(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| self.cov[(rows[r], cols[c])])
    }

    pub fn to_spec(&self) -> SecondOrderSpec {
        SecondOrderSpec::from_parts(self.mean.clone(), self.cov.clone())
    }
}

/// Bayes linear adjustment of B by the observation of D.
pub fn adjust(joint: &JointBelief, observed: &DVector<f64>) -> Result<AdjustedBelief> {
    if observed.len() != joint.d.dim() {
        return Err(Error::DimensionMismatch {
            context: "observation",
            expected: joint.d.dim(),
            found: observed.len(),
        });
    }
    let nb = joint.b.dim();
    if joint.d.dim() == 0 {
        return Ok(AdjustedBelief {
            mean: joint.b.mean().clone(),
            cov: joint.b.cov().clone(),
            resolved_cov: DMatrix::zeros(nb, nb),
            jitter: 0.0,
        });
    }
    let factor = SpdFactor::new(joint.d.cov())?;
    let resid = observed - joint.d.mean();
    let weights = factor.solve_vec(&resid);
    let mean = joint.b.mean() + &joint.cross * weights;

    let gain_t = factor.solve(&joint.cross.transpose());
    let resolved = &joint.cross * gain_t;
    let resolved = (&resolved + resolved.transpose()) * 0.5;
    let cov = joint.b.cov() - &resolved;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(AdjustedBelief {
        mean,
        cov,
        resolved_cov: resolved,
        jitter: factor.jitter(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_joint(nb: usize, nd: usize, rng: &mut ChaCha8Rng) -> (JointBelief, DVector<f64>) {
        let n = nb + nd;
        let a = DMatrix::from_fn(n, n + 2, |_, _| rng.random_range(-1.0..1.0));
        let mut s = &a * a.transpose();
        for i in 0..n {
            s[(i, i)] += 0.05;
        }
        let mean = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let b = SecondOrderSpec::new(
            mean.rows(0, nb).into_owned(),
            s.view((0, 0), (nb, nb)).into_owned(),
        )
        .unwrap();
        let d = SecondOrderSpec::new(
            mean.rows(nb, nd).into_owned(),
            s.view((nb, nb), (nd, nd)).into_owned(),
        )
        .unwrap();
        let cross = s.view((0, nb), (nb, nd)).into_owned();
        let obs = DVector::from_fn(nd, |_, _| rng.random_range(-3.0..3.0));
        (JointBelief::new(b, d, cross).unwrap(), obs)
    }

    #[test]
    fn zero_cross_covariance_leaves_prior() {
        let b = SecondOrderSpec::new(
            DVector::from_vec(vec![1.0, -1.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
        )
        .unwrap();
        let d = SecondOrderSpec::new(DVector::from_vec(vec![0.0]), DMatrix::identity(1, 1)).unwrap();
        let joint = JointBelief::new(b.clone(), d, DMatrix::zeros(2, 1)).unwrap();
        let adj = adjust(&joint, &DVector::from_vec(vec![42.0])).unwrap();
        assert_eq!(&adj.mean, b.mean());
        assert_eq!(&adj.cov, b.cov());
    }

    #[test]
    fn scalar_hand_evaluation() {
        let b = SecondOrderSpec::new(DVector::from_vec(vec![0.0]), DMatrix::identity(1, 1)).unwrap();
        let d = SecondOrderSpec::new(DVector::from_vec(vec![0.0]), DMatrix::identity(1, 1)).unwrap();
        let joint = JointBelief::new(b, d, DMatrix::from_element(1, 1, 0.5)).unwrap();
        let adj = adjust(&joint, &DVector::from_vec(vec![2.0])).unwrap();
        assert!((adj.mean[0] - 1.0).abs() < 1e-15);
        assert!((adj.cov[(0, 0)] - 0.75).abs() < 1e-15);
        assert!((adj.resolved_cov[(0, 0)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn observation_dimension_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (joint, _) = random_joint(2, 3, &mut rng);
        assert!(matches!(
            adjust(&joint, &DVector::zeros(2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn degenerate_prior_is_singular() {
        let b = SecondOrderSpec::known(DVector::zeros(1));
        let d = SecondOrderSpec::known(DVector::zeros(2));
        let joint = JointBelief::new(b, d, DMatrix::zeros(1, 2)).unwrap();
        assert!(matches!(
            adjust(&joint, &DVector::zeros(2)),
            Err(Error::SingularVariance { .. })
        ));
    }

    #[test]
    fn adjusted_variance_below_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let (joint, obs) = random_joint(4, 3, &mut rng);
            let adj = adjust(&joint, &obs).unwrap();
            let diff = joint.b.cov() - &adj.cov;
            let scale = joint.b.cov().diagonal().max();
            assert!(min_eigenvalue(&diff) >= -1e-8 * scale);
        }
    }

    #[test]
    fn observation_reproduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (joint, obs) = random_joint(2, 4, &mut rng);
        // B' = (B, D_2)
        let nb = joint.b.dim();
        let mut bmean = joint.b.mean().clone().insert_row(nb, joint.d.mean()[2]);
        bmean[nb] = joint.d.mean()[2];
        let full = joint.stacked_cov();
        let idx: Vec<usize> = (0..nb).chain(std::iter::once(nb + 2)).collect();
        let bcov = DMatrix::from_fn(idx.len(), idx.len(), |r, c| full[(idx[r], idx[c])]);
        let cross = DMatrix::from_fn(idx.len(), 4, |r, c| full[(idx[r], nb + c)]);
        let joint2 = JointBelief::new(
            SecondOrderSpec::new(bmean, bcov.clone()).unwrap(),
            joint.d.clone(),
            cross,
        )
        .unwrap();
        let adj = adjust(&joint2, &obs).unwrap();
        assert!((adj.mean[nb] - obs[2]).abs() < 1e-10);
        assert!(adj.cov[(nb, nb)] <= 1e-8 * bcov[(nb, nb)]);
    }

    #[test]
    fn readjusting_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (joint, obs) = random_joint(3, 2, &mut rng);
        let adj = adjust(&joint, &obs).unwrap();
        let again = JointBelief::new_unchecked(
            adj.to_spec(),
            SecondOrderSpec::new(obs.clone(), joint.d.cov().clone()).unwrap(),
            DMatrix::zeros(3, 2),
        )
        .unwrap();
        let adj2 = adjust(&again, &obs).unwrap();
        assert_eq!(adj2.mean, adj.mean);
        assert_eq!(adj2.cov, adj.cov);
    }

    #[test]
    fn cross_cov_reads_sub_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (joint, obs) = random_joint(4, 2, &mut rng);
        let adj = adjust(&joint, &obs).unwrap();
        let block = adj.cross_cov(&[0, 1], &[3]);
        assert_eq!(block[(1, 0)], adj.cov[(1, 3)]);
    }

    #[test]
    fn non_psd_joint_is_rejected() {
        let b = SecondOrderSpec::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let d = SecondOrderSpec::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        assert!(JointBelief::new(b, d, DMatrix::from_element(1, 1, 2.0)).is_err());
    }
}
