//! Inputs known only to second order, and the Gaussian correlation kernel
//! evaluated over them.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_psd, symmetrize};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Identity of a random quantity. Two inputs are "the same random variable"
/// exactly when their ids are equal; equal moments say nothing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InputId(u64);

impl InputId {
    /// A token never handed out before in this process.
    pub fn fresh() -> Self {
        InputId(NEXT_ID.fetch_add(1, Ordering::Relaxed))
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    /// Rebuilds a token from a user-supplied label (e.g. a CSV id column).
    /// Labels live in the upper half of the id space so that they cannot
    /// collide with `fresh` tokens.
    pub fn from_label(label: u64) -> Self {
        InputId(label | (1 << 63))
    }
}

/// A p-dimensional input with mean E[X] and variance Var[X].
#[derive(Clone, Debug, PartialEq)]
pub struct UncertainInput {
    id: InputId,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl UncertainInput {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::with_id(InputId::fresh(), mean, cov)
    }

    pub fn with_id(id: InputId, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                context: "uncertain input covariance",
                expected: mean.len(),
                found: cov.nrows(),
            });
        }
        let cov = symmetrize(&cov)?;
        check_psd(&cov)?;
        Ok(Self { id, mean, cov })
    }

    /// A known input: zero variance, fresh identity.
    pub fn known(x: DVector<f64>) -> Self {
        let p = x.len();
        Self {
            id: InputId::fresh(),
            mean: x,
            cov: DMatrix::zeros(p, p),
        }
    }

    /// Scalar convenience constructor.
    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
    }

    pub fn id(&self) -> InputId {
        self.id
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

    pub fn is_known(&self) -> bool {
        self.cov.iter().all(|v| *v == 0.0)
    }
}

/// Cross-covariances Cov[X⁽ⁱ⁾, X⁽ʲ⁾] between distinct inputs, zero unless set.
#[derive(Clone, Debug, Default)]
pub struct CrossCov {
    pairs: HashMap<(InputId, InputId), DMatrix<f64>>,
}

impl CrossCov {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records Cov[a, b]; Cov[b, a] is its transpose.
    pub fn set(&mut self, a: InputId, b: InputId, cov: DMatrix<f64>) -> Result<()> {
        if a == b {
            return Err(Error::InvalidParameter(
                "the covariance of an input with itself is its own variance".into(),
            ));
        }
        if a < b {
            self.pairs.insert((a, b), cov);
        } else {
            self.pairs.insert((b, a), cov.transpose());
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Cov[x, x′] as a dim(x) × dim(x′) matrix.
    pub fn get(&self, x: &UncertainInput, xp: &UncertainInput) -> DMatrix<f64> {
        if x.id == xp.id {
            return x.cov.clone();
        }
        let (a, b) = (x.id, xp.id);
        let stored = if a < b {
            self.pairs.get(&(a, b)).cloned()
        } else {
            self.pairs.get(&(b, a)).map(|m| m.transpose())
        };
        stored.unwrap_or_else(|| DMatrix::zeros(x.dim(), xp.dim()))
    }

    /// Diagonal entry r of Cov[x, x′] without building the whole block.
    pub fn get_rr(&self, x: &UncertainInput, xp: &UncertainInput, r: usize) -> f64 {
        if x.id == xp.id {
            return x.cov[(r, r)];
        }
        let (a, b) = (x.id, xp.id);
        let key = if a < b { (a, b) } else { (b, a) };
        self.pairs.get(&key).map_or(0.0, |m| m[(r, r)])
    }
}

/// Correlation lengths θ and output covariance Σ of a separable kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    theta: DVector<f64>,
    sigma: DMatrix<f64>,
}

impl KernelConfig {
    pub fn new(theta: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        check_lengthscales(&theta)?;
        let sigma = symmetrize(&sigma)?;
        check_psd(&sigma)?;
        Ok(Self { theta, sigma })
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn input_dim(&self) -> usize {
        self.theta.len()
    }

    pub fn output_dim(&self) -> usize {
        self.sigma.nrows()
    }
}

fn check_lengthscales(theta: &DVector<f64>) -> Result<()> {
    for (index, &value) in theta.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveLengthscale { index, value });
        }
    }
    Ok(())
}

fn check_dims(a: usize, b: usize, theta: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            context: "kernel inputs",
            expected: a,
            found: b,
        });
    }
    if a != theta {
        return Err(Error::DimensionMismatch {
            context: "kernel lengthscales",
            expected: a,
            found: theta,
        });
    }
    Ok(())
}

/// exp{−Σ_r ((x_r − x′_r)/θ_r)²}.
pub fn gaussian_corr(x: &DVector<f64>, xp: &DVector<f64>, theta: &DVector<f64>) -> Result<f64> {
    check_dims(x.len(), xp.len(), theta.len())?;
    check_lengthscales(theta)?;
    Ok(gaussian_corr_unchecked(x.as_slice(), xp.as_slice(), theta.as_slice()))
}

pub(crate) fn gaussian_corr_unchecked(x: &[f64], xp: &[f64], theta: &[f64]) -> f64 {
    let mut s = 0.0;
    for r in 0..theta.len() {
        let d = (x[r] - xp[r]) / theta[r];
        s += d * d;
    }
    (-s).exp()
}

/// The Gaussian kernel extended to uncertain inputs:
/// exp{−Σ_r (m_r² + v_r)/θ_r²}, m = E[X] − E[X′], v_r = Var[X − X′]_rr.
pub fn ui_gaussian_corr(
    x: &UncertainInput,
    xp: &UncertainInput,
    cross: &CrossCov,
    theta: &DVector<f64>,
) -> Result<f64> {
    check_dims(x.dim(), xp.dim(), theta.len())?;
    check_lengthscales(theta)?;
    if x.id == xp.id {
        return Ok(1.0);
    }
    let mut s = 0.0;
    for r in 0..theta.len() {
        let m = x.mean[r] - xp.mean[r];
        let v = difference_variance(x, xp, cross, r)?;
        let d = m / theta[r];
        s += d * d + v / (theta[r] * theta[r]);
    }
    Ok((-s).exp())
}

fn difference_variance(x: &UncertainInput, xp: &UncertainInput, cross: &CrossCov, r: usize) -> Result<f64> {
    let v = x.cov[(r, r)] + xp.cov[(r, r)] - 2.0 * cross.get_rr(x, xp, r);
    if v >= 0.0 {
        Ok(v)
    } else if v >= -1e-8 {
        Ok(0.0)
    } else {
        Err(Error::NegativeDifferenceVariance { index: r, value: v })
    }
}

/// Inputs that share an id must carry the same moments.
pub fn check_identity_consistency(inputs: &[&UncertainInput]) -> Result<()> {
    let mut seen: HashMap<InputId, &UncertainInput> = HashMap::new();
    for x in inputs {
        match seen.get(&x.id) {
            Some(prev) if prev.mean != x.mean || prev.cov != x.cov => {
                return Err(Error::InconsistentIdentity { id: x.id.raw() });
            }
            Some(_) => {}
            None => {
                seen.insert(x.id, x);
            }
        }
    }
    Ok(())
}

/// Matrix of `ui_gaussian_corr` over a collection of inputs.
pub fn ui_corr_matrix(inputs: &[UncertainInput], cross: &CrossCov, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    if inputs.is_empty() {
        return Err(Error::InvalidParameter("ui_corr_matrix needs at least one input".into()));
    }
    let refs: Vec<&UncertainInput> = inputs.iter().collect();
    check_identity_consistency(&refs)?;
    let n = inputs.len();
    let mut c = DMatrix::identity(n, n);
    for i in 0..n {
        check_dims(inputs[i].dim(), theta.len(), theta.len())?;
        for j in 0..i {
            let v = ui_gaussian_corr(&inputs[i], &inputs[j], cross, theta)?;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    Ok(c)
}

/// Cov[u(X), u(X′)] = c(X, X′)·Σ.
pub fn ui_cov(x: &UncertainInput, xp: &UncertainInput, cross: &CrossCov, config: &KernelConfig) -> Result<DMatrix<f64>> {
    let k = ui_gaussian_corr(x, xp, cross, &config.theta)?;
    Ok(&config.sigma * k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn random_input(p: usize, rng: &mut ChaCha8Rng) -> UncertainInput {
        let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-0.5..0.5));
        let mean = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
        UncertainInput::new(mean, &a * a.transpose()).unwrap()
    }

    #[test]
    fn gaussian_corr_examples() {
        assert_eq!(gaussian_corr(&v(&[0.3, 0.2]), &v(&[0.3, 0.2]), &v(&[1.0, 2.0])).unwrap(), 1.0);
        let k = gaussian_corr(&v(&[0.0]), &v(&[1.0]), &v(&[1.0])).unwrap();
        assert!((k - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn gaussian_corr_componentwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: DVector<f64> = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let t: DVector<f64> = DVector::from_fn(3, |_, _| rng.random_range(0.2..2.0));
        let mut expo = 0.0_f64;
        for r in 0..3 {
            expo += (x[r] - y[r]).powi(2) / t[r].powi(2);
        }
        assert!((gaussian_corr(&x, &y, &t).unwrap() - (-expo).exp()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_corr_errors() {
        assert!(matches!(
            gaussian_corr(&v(&[0.0]), &v(&[0.0, 1.0]), &v(&[1.0])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            gaussian_corr(&v(&[0.0]), &v(&[1.0]), &v(&[0.0])),
            Err(Error::NonPositiveLengthscale { index: 0, .. })
        ));
    }

    #[test]
    fn ui_kernel_examples() {
        let x = UncertainInput::scalar(0.0, 1.0).unwrap();
        let cross = CrossCov::new();
        assert_eq!(ui_gaussian_corr(&x, &x.clone(), &cross, &v(&[1.0])).unwrap(), 1.0);

        let a = UncertainInput::known(v(&[0.1, -0.4]));
        let b = UncertainInput::known(v(&[0.7, 0.2]));
        let t = v(&[0.5, 1.5]);
        assert_eq!(
            ui_gaussian_corr(&a, &b, &cross, &t).unwrap(),
            gaussian_corr(a.mean(), b.mean(), &t).unwrap()
        );

        let y = UncertainInput::scalar(1.0, 1.0).unwrap();
        let k = ui_gaussian_corr(&x, &y, &cross, &v(&[1.0])).unwrap();
        assert!((k - (-3.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn cross_covariance_enters_difference_variance() {
        let x = UncertainInput::scalar(0.0, 1.0).unwrap();
        let y = UncertainInput::scalar(0.0, 1.0).unwrap();
        let mut cross = CrossCov::new();
        cross.set(x.id(), y.id(), DMatrix::from_element(1, 1, 0.5)).unwrap();
        // v = 1 + 1 − 1 = 1
        let k = ui_gaussian_corr(&y, &x, &cross, &v(&[1.0])).unwrap();
        assert!((k - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(cross.get(&y, &x)[(0, 0)], 0.5);
    }

    #[test]
    fn slightly_negative_difference_variance_is_clamped() {
        let x = UncertainInput::scalar(0.0, 1.0).unwrap();
        let y = UncertainInput::scalar(0.0, 1.0).unwrap();
        let mut cross = CrossCov::new();
        cross.set(x.id(), y.id(), DMatrix::from_element(1, 1, 1.0 + 1e-9)).unwrap();
        assert_eq!(ui_gaussian_corr(&x, &y, &cross, &v(&[1.0])).unwrap(), 1.0);
        cross.set(x.id(), y.id(), DMatrix::from_element(1, 1, 1.1)).unwrap();
        assert!(matches!(
            ui_gaussian_corr(&x, &y, &cross, &v(&[1.0])),
            Err(Error::NegativeDifferenceVariance { .. })
        ));
    }

    #[test]
    fn corr_matrix_examples() {
        let cross = CrossCov::new();
        let one = ui_corr_matrix(&[UncertainInput::scalar(0.2, 0.3).unwrap()], &cross, &v(&[1.0])).unwrap();
        assert_eq!(one, DMatrix::identity(1, 1));

        let pts: Vec<DVector<f64>> = (0..6).map(|i| v(&[i as f64 * 0.3 - 0.7])).collect();
        let known: Vec<UncertainInput> = pts.iter().cloned().map(UncertainInput::known).collect();
        let c = ui_corr_matrix(&known, &cross, &v(&[0.4])).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let g = gaussian_corr(&pts[i], &pts[j], &v(&[0.4])).unwrap();
                assert_eq!(c[(i, j)], g);
            }
        }
    }

    #[test]
    fn corr_matrix_is_psd_for_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let inputs: Vec<UncertainInput> = (0..20).map(|_| random_input(3, &mut rng)).collect();
        let c = ui_corr_matrix(&inputs, &CrossCov::new(), &v(&[0.3, 0.6, 1.0])).unwrap();
        assert!(min_eigenvalue(&c) >= -1e-8);
    }

    #[test]
    fn inconsistent_identity_is_rejected() {
        let x = UncertainInput::scalar(0.0, 1.0).unwrap();
        let y = UncertainInput::with_id(x.id(), v(&[0.5]), DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!(matches!(
            ui_corr_matrix(&[x, y], &CrossCov::new(), &v(&[1.0])),
            Err(Error::InconsistentIdentity { .. })
        ));
    }

    #[test]
    fn ui_cov_examples() {
        let cross = CrossCov::new();
        let x = UncertainInput::scalar(0.0, 2.0).unwrap();
        let cfg = KernelConfig::new(v(&[1.0]), DMatrix::identity(1, 1)).unwrap();
        assert_eq!(ui_cov(&x, &x, &cross, &cfg).unwrap(), DMatrix::identity(1, 1));

        let y = UncertainInput::scalar(0.5, 0.1).unwrap();
        let cfg4 = KernelConfig::new(v(&[0.7]), DMatrix::from_element(1, 1, 4.0)).unwrap();
        let k = ui_gaussian_corr(&x, &y, &cross, &v(&[0.7])).unwrap();
        assert_eq!(ui_cov(&x, &y, &cross, &cfg4).unwrap()[(0, 0)], 4.0 * k);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_input(2, &mut rng);
        let b = random_input(2, &mut rng);
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]);
        let cfg2 = KernelConfig::new(v(&[0.5, 0.8]), s.clone()).unwrap();
        let k = ui_gaussian_corr(&a, &b, &cross, cfg2.theta()).unwrap();
        let got = ui_cov(&a, &b, &cross, &cfg2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(got[(i, j)], k * s[(i, j)]);
            }
        }
    }

    #[test]
    fn monte_carlo_kernel_expectation_exceeds_ui_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let x = UncertainInput::new(v(&[0.1, -0.2]), DMatrix::from_row_slice(2, 2, &[0.2, 0.05, 0.05, 0.1])).unwrap();
        let y = UncertainInput::new(v(&[0.4, 0.3]), DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.05])).unwrap();
        let theta = v(&[0.6, 0.9]);
        let lx = x.cov().clone().cholesky().unwrap().l();
        let ly = y.cov().clone().cholesky().unwrap().l();
        let n = 50_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let zx = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
            let zy = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
            let a = x.mean() + &lx * zx;
            let b = y.mean() + &ly * zy;
            let k = gaussian_corr(&a, &b, &theta).unwrap();
            s += k;
            s2 += k * k;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        let ui = ui_gaussian_corr(&x, &y, &CrossCov::new(), &theta).unwrap();
        assert!(mean >= ui - 3.0 * se, "mc {mean} vs ui {ui}");
    }

    proptest! {
        #[test]
        fn kernel_is_symmetric_and_in_unit_interval(
            m1 in -2.0f64..2.0, m2 in -2.0f64..2.0,
            v1 in 0.0f64..3.0, v2 in 0.0f64..3.0, t in 0.05f64..5.0,
        ) {
            let x = UncertainInput::scalar(m1, v1).unwrap();
            let y = UncertainInput::scalar(m2, v2).unwrap();
            let cross = CrossCov::new();
            let a = ui_gaussian_corr(&x, &y, &cross, &v(&[t])).unwrap();
            let b = ui_gaussian_corr(&y, &x, &cross, &v(&[t])).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a <= 1.0);
            prop_assert!(a > 0.0 || (m1 - m2).powi(2) + v1 + v2 > 700.0 * t * t);
        }

        #[test]
        fn more_input_variance_shrinks_kernel(
            m1 in -1.0f64..1.0, m2 in -1.0f64..1.0,
            v1 in 0.0f64..1.0, dv in 1e-3f64..1.0, t in 0.3f64..3.0,
        ) {
            let y = UncertainInput::scalar(m2, 0.2).unwrap();
            let cross = CrossCov::new();
            let a = ui_gaussian_corr(&UncertainInput::scalar(m1, v1).unwrap(), &y, &cross, &v(&[t])).unwrap();
            let b = ui_gaussian_corr(&UncertainInput::scalar(m1, v1 + dv).unwrap(), &y, &cross, &v(&[t])).unwrap();
            prop_assert!(b < a);
        }

        #[test]
        fn corr_matrix_psd_property(seed in 0u64..1000, n in 1usize..30, p in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs: Vec<UncertainInput> = (0..n).map(|_| random_input(p, &mut rng)).collect();
            let theta = DVector::from_fn(p, |_, _| rng.random_range(0.1..2.0));
            let c = ui_corr_matrix(&inputs, &CrossCov::new(), &theta).unwrap();
            prop_assert!(min_eigenvalue(&c) >= -1e-8);
        }
    }
}
