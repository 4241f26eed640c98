//! Linear regression on uncertain inputs.
//!
//! Two residual structures are provided: uncorrelated homoscedastic error,
//! and the structured error ε(t) = A(t) + J(t) + H(t) of an electrolysis
//! cell, with A a measurement error, J a random walk and H an AR(1)
//! process. When the time index T is itself uncertain, the J and H
//! covariances involve E[min(T, T′)] and E[|T − T′|], which are replaced by
//! conservative bounds (see [`order_stat_bounds`]).

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::belief::{adjust, AdjustedBelief, JointBelief, SecondOrderSpec};
use crate::error::{Error, Result};
use crate::linalg::{check_psd, min_eigenvalue, symmetrize};
use crate::uncertain::{CrossCov, InputId, UncertainInput};

/// Prior E[β] = Γ, Var[β] = Δ for the regression coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionPrior {
    gamma: DVector<f64>,
    delta: DMatrix<f64>,
}

impl RegressionPrior {
    pub fn new(gamma: DVector<f64>, delta: DMatrix<f64>) -> Result<Self> {
        if delta.nrows() != gamma.len() || delta.ncols() != gamma.len() {
            return Err(Error::DimensionMismatch {
                context: "regression prior Δ",
                expected: gamma.len(),
                found: delta.nrows(),
            });
        }
        let delta = symmetrize(&delta)?;
        check_psd(&delta)?;
        Ok(Self { gamma, delta })
    }

    pub fn gamma(&self) -> &DVector<f64> {
        &self.gamma
    }

    pub fn delta(&self) -> &DMatrix<f64> {
        &self.delta
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

/// Variances of the error components and the AR coefficient ψ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectrolysisParams {
    pub sigma_a2: f64,
    pub sigma_q2: f64,
    pub sigma_r2: f64,
    pub sigma_12: f64,
    pub psi: f64,
}

impl ElectrolysisParams {
    pub fn new(sigma_a2: f64, sigma_q2: f64, sigma_r2: f64, sigma_12: f64, psi: f64) -> Result<Self> {
        for (name, v) in [
            ("sigma_A^2", sigma_a2),
            ("sigma_Q^2", sigma_q2),
            ("sigma_R^2", sigma_r2),
            ("sigma_1^2", sigma_12),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(psi > 0.0 && psi < 1.0) {
            return Err(Error::InvalidParameter(format!("psi must lie in (0, 1), got {psi}")));
        }
        Ok(Self {
            sigma_a2,
            sigma_q2,
            sigma_r2,
            sigma_12,
            psi,
        })
    }

    /// Stationary AR variance σ_R²/(1 − ψ²).
    pub fn k(&self) -> f64 {
        self.sigma_r2 / (1.0 - self.psi * self.psi)
    }

    /// Upper value used for Var H(T).
    pub fn l(&self) -> f64 {
        let k = self.k();
        if self.sigma_12 <= k {
            k
        } else {
            self.psi.powi(4) * self.sigma_12 + self.sigma_r2
        }
    }
}

/// A scalar time known to second order.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertainTime {
    input: UncertainInput,
}

impl UncertainTime {
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        Self::from_input(UncertainInput::scalar(mean, var)?)
    }

    pub fn with_id(id: InputId, mean: f64, var: f64) -> Result<Self> {
        Self::from_input(UncertainInput::with_id(
            id,
            DVector::from_element(1, mean),
            DMatrix::from_element(1, 1, var),
        )?)
    }

    pub fn known(t: f64) -> Self {
        Self {
            input: UncertainInput::known(DVector::from_element(1, t)),
        }
    }

    pub fn from_input(input: UncertainInput) -> Result<Self> {
        if input.dim() != 1 {
            return Err(Error::DimensionMismatch {
                context: "uncertain time",
                expected: 1,
                found: input.dim(),
            });
        }
        if input.mean()[0] < 3.0 && input.cov()[(0, 0)] > 0.0 {
            log::warn!(
                "uncertain time with mean {} < 3; the drift and AR terms will refuse it",
                input.mean()[0]
            );
        }
        Ok(Self { input })
    }

    pub fn id(&self) -> InputId {
        self.input.id()
    }

    pub fn mean(&self) -> f64 {
        self.input.mean()[0]
    }

    pub fn var(&self) -> f64 {
        self.input.cov()[(0, 0)]
    }

    pub fn sd(&self) -> f64 {
        self.var().max(0.0).sqrt()
    }

    pub fn input(&self) -> &UncertainInput {
        &self.input
    }
}

/// What is known about which of a pair (T, T′) comes first. The
/// probabilities and correlations refer to the indicator 𝕀{T < T′}.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum PairOrdering {
    #[default]
    Unknown,
    /// T < T′ with certainty.
    FirstEarlier,
    /// T′ < T with certainty.
    SecondEarlier,
    /// p = P(T < T′) only.
    Probability { p: f64 },
    /// p together with corr(T, 𝕀) ∈ [−1, 0] and corr(T′, 𝕀) ∈ [0, 1].
    Full { p: f64, rho_first: f64, rho_second: f64 },
}

impl PairOrdering {
    pub fn validate(&self) -> Result<()> {
        let check_p = |p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("P(T < T') = {p} is not a probability")))
            }
        };
        match *self {
            PairOrdering::Probability { p } => check_p(p),
            PairOrdering::Full {
                p,
                rho_first,
                rho_second,
            } => {
                check_p(p)?;
                if !(-1.0..=0.0).contains(&rho_first) {
                    return Err(Error::InvalidParameter(format!(
                        "corr(T, I) = {rho_first} must lie in [-1, 0]"
                    )));
                }
                if !(0.0..=1.0).contains(&rho_second) {
                    return Err(Error::InvalidParameter(format!(
                        "corr(T', I) = {rho_second} must lie in [0, 1]"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// The same knowledge expressed for the swapped pair (T′, T).
    pub fn flipped(&self) -> Self {
        match *self {
            PairOrdering::Unknown => PairOrdering::Unknown,
            PairOrdering::FirstEarlier => PairOrdering::SecondEarlier,
            PairOrdering::SecondEarlier => PairOrdering::FirstEarlier,
            PairOrdering::Probability { p } => PairOrdering::Probability { p: 1.0 - p },
            PairOrdering::Full {
                p,
                rho_first,
                rho_second,
            } => PairOrdering::Full {
                p: 1.0 - p,
                rho_first: -rho_second,
                rho_second: -rho_first,
            },
        }
    }
}

/// Ordering knowledge for pairs of times, keyed by identity.
#[derive(Clone, Debug, Default)]
pub struct OrderingBook {
    pairs: HashMap<(InputId, InputId), PairOrdering>,
}

impl OrderingBook {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records knowledge about (first, second).
    pub fn set(&mut self, first: InputId, second: InputId, ordering: PairOrdering) -> Result<()> {
        ordering.validate()?;
        if first == second {
            return Err(Error::InvalidParameter(
                "an input cannot be ordered against itself".into(),
            ));
        }
        if first < second {
            self.pairs.insert((first, second), ordering);
        } else {
            self.pairs.insert((second, first), ordering.flipped());
        }
        Ok(())
    }

    pub fn get(&self, first: InputId, second: InputId) -> PairOrdering {
        if first < second {
            self.pairs.get(&(first, second)).copied().unwrap_or_default()
        } else {
            self.pairs
                .get(&(second, first))
                .map(|o| o.flipped())
                .unwrap_or_default()
        }
    }
}

/// E[XᵀΔX′] = trace(Δ(E[X′]E[X]ᵀ + Cov[X′, X])).
pub fn expected_quadform(x: &UncertainInput, xp: &UncertainInput, cross: &CrossCov, delta: &DMatrix<f64>) -> Result<f64> {
    let p = x.dim();
    if xp.dim() != p || delta.nrows() != p || delta.ncols() != p {
        return Err(Error::DimensionMismatch {
            context: "expected quadratic form",
            expected: p,
            found: if xp.dim() != p { xp.dim() } else { delta.nrows() },
        });
    }
    let m = xp.mean() * x.mean().transpose() + cross.get(xp, x);
    Ok((delta * m).trace())
}

/// Bounds (E[min(T, T′)], E[|T − T′|]) used in place of the exact order
/// statistics. The tier follows what is known about the ordering.
pub fn order_stat_bounds(t: &UncertainTime, tp: &UncertainTime, ordering: &PairOrdering) -> (f64, f64) {
    let (a, b) = (t.mean(), tp.mean());
    if t.id() == tp.id() {
        return (a, 0.0);
    }
    let (s, sp) = (t.sd(), tp.sd());
    match *ordering {
        PairOrdering::FirstEarlier => (a, b - a),
        PairOrdering::SecondEarlier => (b, a - b),
        PairOrdering::Full {
            p,
            rho_first,
            rho_second,
        } => {
            let w = (p * (1.0 - p)).sqrt();
            let e_min = p * a + (1.0 - p) * b + w * (rho_first * s - rho_second * sp);
            let e_range = (1.0 - 2.0 * p) * (a - b) + 2.0 * w * (rho_second * sp - rho_first * s);
            (e_min, e_range)
        }
        PairOrdering::Probability { p } => {
            let w = (p * (1.0 - p)).sqrt();
            let e_min = p * a + (1.0 - p) * b - w * (s + sp);
            let e_range = (1.0 - 2.0 * p) * (a - b) + 2.0 * w * (s + sp);
            (e_min, e_range)
        }
        PairOrdering::Unknown if s == 0.0 && sp == 0.0 => (a.min(b), (a - b).abs()),
        PairOrdering::Unknown => {
            let spread = ((b - a).powi(2) + (s + sp).powi(2)).sqrt();
            (0.5 * (a + b - spread), spread)
        }
    }
}

/// Cov[A(T), A(T′)] = 𝕀{T = T′}·σ_A².
pub fn cov_measurement(t: &UncertainTime, tp: &UncertainTime, sigma_a2: f64) -> f64 {
    if t.id() == tp.id() {
        sigma_a2
    } else {
        0.0
    }
}

fn check_time_floor(t: &UncertainTime, tp: &UncertainTime) -> Result<()> {
    if t.var() > 0.0 || tp.var() > 0.0 {
        for x in [t, tp] {
            if x.mean() < 3.0 {
                return Err(Error::TimeBelowThree { mean: x.mean() });
            }
        }
    }
    Ok(())
}

/// Cov[J(T), J(T′)] = σ_Q²·E[min(T, T′)], with the minimum bounded below.
pub fn cov_drift(t: &UncertainTime, tp: &UncertainTime, sigma_q2: f64, ordering: &PairOrdering) -> Result<f64> {
    check_time_floor(t, tp)?;
    if t.id() == tp.id() {
        return Ok(sigma_q2 * t.mean());
    }
    let (e_min, _) = order_stat_bounds(t, tp, ordering);
    Ok(sigma_q2 * e_min)
}

/// Cov[H(T), H(T′)]: L for the same time, otherwise
/// σ₁²ψ^{E[T]+E[T′]−2} + σ_R²ψ^{range bound}.
pub fn cov_ar(t: &UncertainTime, tp: &UncertainTime, params: &ElectrolysisParams, ordering: &PairOrdering) -> Result<f64> {
    check_time_floor(t, tp)?;
    if t.id() == tp.id() {
        return Ok(params.l());
    }
    let (_, e_range) = order_stat_bounds(t, tp, ordering);
    let lpsi = params.psi.ln();
    Ok(params.sigma_12 * (lpsi * (t.mean() + tp.mean() - 2.0)).exp() + params.sigma_r2 * (lpsi * e_range).exp())
}

/// Classical Cov[H(t), H(t′)] for known times.
pub fn cov_h_known(t: f64, tp: f64, params: &ElectrolysisParams) -> f64 {
    let psi = params.psi;
    let tm = t.min(tp);
    let d = (t - tp).abs();
    let psi2 = psi * psi;
    psi.powf(d)
        * (psi2.powf(tm - 1.0) * params.sigma_12 + (1.0 - psi2.powf(tm - 2.0)) / (1.0 - psi2) * params.sigma_r2)
}

/// Classical Var H(t) for a known time.
pub fn var_h_known(t: f64, params: &ElectrolysisParams) -> f64 {
    cov_h_known(t, t, params)
}

/// Var H(t) at integer t ≥ 2 by iterating W(2) = ψ²σ₁², W(t) = ψ²W(t−1) + σ_R².
pub fn var_h_recursion(t: u32, params: &ElectrolysisParams) -> f64 {
    assert!(t >= 2, "recursion starts at t = 2");
    let psi2 = params.psi * params.psi;
    let mut w = psi2 * params.sigma_12;
    for _ in 3..=t {
        w = psi2 * w + params.sigma_r2;
    }
    w
}

fn time_design(t: &UncertainTime) -> UncertainInput {
    // (1, T) sharing T's identity so that Cov[(1,T), (1,T)] carries Var T.
    UncertainInput::with_id(
        t.id(),
        DVector::from_vec(vec![1.0, t.mean()]),
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, t.var()]),
    )
    .expect("embedding of a valid scalar time")
}

fn time_cross(cross: &CrossCov, t: &UncertainTime, tp: &UncertainTime) -> f64 {
    cross.get(t.input(), tp.input())[(0, 0)]
}

fn require_intercept_slope(prior: &RegressionPrior) -> Result<()> {
    if prior.dim() != 2 {
        return Err(Error::DimensionMismatch {
            context: "intercept-slope regression prior",
            expected: 2,
            found: prior.dim(),
        });
    }
    Ok(())
}

/// E[y(T)] = γ₀ + E[T]γ₁.
pub fn prior_mean_y(t: &UncertainTime, prior: &RegressionPrior) -> Result<f64> {
    require_intercept_slope(prior)?;
    Ok(prior.gamma[0] + t.mean() * prior.gamma[1])
}

/// Prior Cov[y(T), y(T′)] under the structured error model.
pub fn prior_cov_y(
    t: &UncertainTime,
    tp: &UncertainTime,
    prior: &RegressionPrior,
    params: &ElectrolysisParams,
    cross: &CrossCov,
    orderings: &OrderingBook,
) -> Result<f64> {
    require_intercept_slope(prior)?;
    let ordering = if t.id() == tp.id() {
        PairOrdering::Unknown
    } else {
        orderings.get(t.id(), tp.id())
    };
    let cov_tt = time_cross(cross, t, tp);
    let x = time_design(t);
    let xp = time_design(tp);
    let mut tcross = CrossCov::new();
    if x.id() != xp.id() {
        tcross.set(x.id(), xp.id(), DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, cov_tt]))?;
    }
    let quad = expected_quadform(&x, &xp, &tcross, prior.delta())?;
    let g1 = prior.gamma[1];
    Ok(quad
        + g1 * g1 * cov_tt
        + cov_measurement(t, tp, params.sigma_a2)
        + cov_drift(t, tp, params.sigma_q2, &ordering)?
        + cov_ar(t, tp, params, &ordering)?)
}

/// E[y(X)] = E[X]ᵀΓ under uncorrelated homoscedastic error.
pub fn linear_prior_mean(x: &UncertainInput, prior: &RegressionPrior) -> Result<f64> {
    if x.dim() != prior.dim() {
        return Err(Error::DimensionMismatch {
            context: "regression input",
            expected: prior.dim(),
            found: x.dim(),
        });
    }
    Ok(x.mean().dot(prior.gamma()))
}

/// Cov[y(X), y(X′)] = E[XᵀΔX′] + ΓᵀCov[X, X′]Γ + 𝕀{X = X′}σ².
pub fn linear_prior_cov(
    x: &UncertainInput,
    xp: &UncertainInput,
    cross: &CrossCov,
    prior: &RegressionPrior,
    sigma2: f64,
) -> Result<f64> {
    let quad = expected_quadform(x, xp, cross, prior.delta())?;
    let c = cross.get(x, xp);
    let g = prior.gamma();
    let noise = if x.id() == xp.id() { sigma2 } else { 0.0 };
    Ok(quad + (g.transpose() * c * g)[(0, 0)] + noise)
}

/// Result of [`regress_adjust`].
#[derive(Clone, Debug)]
pub struct RegressionAdjustment {
    pub belief: AdjustedBelief,
    /// Diagonal shift added to the joint prior covariance to make it PSD
    /// (zero when none was needed).
    pub psd_repair: f64,
    /// Smallest eigenvalue of the joint prior covariance before repair.
    pub prior_min_eigenvalue: f64,
}

/// Adjusts y at `targets` by observations of y at uncertain training times.
pub fn regress_adjust(
    training: &[(UncertainTime, f64)],
    cross: &CrossCov,
    prior: &RegressionPrior,
    params: &ElectrolysisParams,
    targets: &[UncertainTime],
    orderings: &OrderingBook,
) -> Result<RegressionAdjustment> {
    if training.is_empty() {
        return Err(Error::InvalidParameter("regression needs at least one observation".into()));
    }
    let all: Vec<&UncertainTime> = targets.iter().chain(training.iter().map(|(t, _)| t)).collect();
    let inputs: Vec<&UncertainInput> = all.iter().map(|t| t.input()).collect();
    crate::uncertain::check_identity_consistency(&inputs)?;

    let nt = targets.len();
    let n = all.len();
    let mut mean = DVector::zeros(n);
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        mean[i] = prior_mean_y(all[i], prior)?;
        for j in 0..=i {
            let c = prior_cov_y(all[i], all[j], prior, params, cross, orderings)?;
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }

    let lam = min_eigenvalue(&cov);
    let scale = cov.diagonal().max().max(f64::MIN_POSITIVE);
    let mut repair = 0.0;
    if lam < -1e-8 * scale {
        repair = -lam + 1e-10 * scale;
        log::warn!("prior covariance of y has min eigenvalue {lam:e}; adding {repair:e} to its diagonal");
        for i in 0..n {
            cov[(i, i)] += repair;
        }
    }

    let b = SecondOrderSpec::from_parts(mean.rows(0, nt).into_owned(), cov.view((0, 0), (nt, nt)).into_owned());
    let d = SecondOrderSpec::from_parts(mean.rows(nt, n - nt).into_owned(), cov.view((nt, nt), (n - nt, n - nt)).into_owned());
    let joint = JointBelief::new_unchecked(b, d, cov.view((0, nt), (nt, n - nt)).into_owned())?;
    let observed = DVector::from_iterator(training.len(), training.iter().map(|(_, y)| *y));
    Ok(RegressionAdjustment {
        belief: adjust(&joint, &observed)?,
        psd_repair: repair,
        prior_min_eigenvalue: lam,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn params(a: f64, q: f64, r: f64, s1: f64, psi: f64) -> ElectrolysisParams {
        ElectrolysisParams::new(a, q, r, s1, psi).unwrap()
    }

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn k_and_l() {
        let p = params(1.0, 1.0, 0.75, 1.0, 0.5);
        assert!(approx(p.k(), 1.0, 1e-15));
        assert!(approx(p.l(), 1.0, 1e-15));
        let p2 = params(1.0, 1.0, 1.0, 10.0, 0.5);
        assert!(approx(p2.l(), 0.0625 * 10.0 + 1.0, 1e-15));
    }

    #[test]
    fn invalid_params() {
        assert!(ElectrolysisParams::new(0.0, 1.0, 1.0, 1.0, 0.5).is_err());
        assert!(ElectrolysisParams::new(1.0, 1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn quadform_examples() {
        let cross = CrossCov::new();
        let x = UncertainInput::scalar(0.0, 1.0).unwrap();
        let y = UncertainInput::scalar(0.0, 1.0).unwrap();
        assert_eq!(expected_quadform(&x, &y, &cross, &DMatrix::identity(1, 1)).unwrap(), 0.0);
        assert_eq!(expected_quadform(&x, &x, &cross, &DMatrix::identity(1, 1)).unwrap(), 1.0);
    }

    #[test]
    fn quadform_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        // Joint Gaussian over (X, X′) with a nonzero cross block.
        let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-0.6..0.6));
        let s = &a * a.transpose();
        let mu = DVector::from_vec(vec![0.5, -0.3, 1.0, 0.2]);
        let x = UncertainInput::new(mu.rows(0, 2).into_owned(), s.view((0, 0), (2, 2)).into_owned()).unwrap();
        let xp = UncertainInput::new(mu.rows(2, 2).into_owned(), s.view((2, 2), (2, 2)).into_owned()).unwrap();
        let mut cross = CrossCov::new();
        cross.set(x.id(), xp.id(), s.view((0, 2), (2, 2)).into_owned()).unwrap();
        let delta = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let exact = expected_quadform(&x, &xp, &cross, &delta).unwrap();
        let l = (s.clone() + DMatrix::identity(4, 4) * 1e-12).cholesky().unwrap().l();
        let n = 200_000;
        let (mut m, mut m2) = (0.0, 0.0);
        for _ in 0..n {
            let z = DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng));
            let w = &mu + &l * z;
            let u = w.rows(0, 2).into_owned();
            let up = w.rows(2, 2).into_owned();
            let q = (u.transpose() * &delta * up)[(0, 0)];
            m += q;
            m2 += q * q;
        }
        let mean = m / n as f64;
        let se = ((m2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact).abs() <= 4.0 * se, "mc {mean} exact {exact} se {se}");
    }

    #[test]
    fn order_stat_examples() {
        let none = PairOrdering::Unknown;
        assert_eq!(order_stat_bounds(&UncertainTime::known(2.0), &UncertainTime::known(5.0), &none), (2.0, 3.0));
        let t = UncertainTime::new(3.0, 1.0).unwrap();
        let tp = UncertainTime::new(3.0, 1.0).unwrap();
        assert_eq!(order_stat_bounds(&t, &tp, &none), (2.0, 2.0));
        let a = UncertainTime::new(4.0, 1.0).unwrap();
        let b = UncertainTime::new(6.0, 1.0).unwrap();
        assert_eq!(order_stat_bounds(&a, &b, &PairOrdering::FirstEarlier), (4.0, 2.0));
        assert_eq!(order_stat_bounds(&b, &a, &PairOrdering::SecondEarlier), (4.0, 2.0));
    }

    #[test]
    fn probability_tier_at_p_one_is_known_order() {
        let a = UncertainTime::new(4.0, 1.0).unwrap();
        let b = UncertainTime::new(6.0, 2.0).unwrap();
        let (m, r) = order_stat_bounds(&a, &b, &PairOrdering::Probability { p: 1.0 });
        assert_eq!((m, r), (4.0, 2.0));
    }

    #[test]
    fn unknown_tier_is_worst_case_over_p() {
        let a = UncertainTime::new(4.0, 1.5).unwrap();
        let b = UncertainTime::new(5.0, 0.5).unwrap();
        let (m0, r0) = order_stat_bounds(&a, &b, &PairOrdering::Unknown);
        for k in 0..=100 {
            let p = k as f64 / 100.0;
            let (m, r) = order_stat_bounds(&a, &b, &PairOrdering::Probability { p });
            assert!(m >= m0 - 1e-12);
            assert!(r <= r0 + 1e-12);
        }
    }

    #[test]
    fn flipping_ordering_gives_same_bounds() {
        let a = UncertainTime::new(4.0, 1.5).unwrap();
        let b = UncertainTime::new(5.0, 0.5).unwrap();
        let o = PairOrdering::Full {
            p: 0.7,
            rho_first: -0.4,
            rho_second: 0.3,
        };
        let (m1, r1) = order_stat_bounds(&a, &b, &o);
        let (m2, r2) = order_stat_bounds(&b, &a, &o.flipped());
        assert!(approx(m1, m2, 1e-12) && approx(r1, r2, 1e-12));

        let mut book = OrderingBook::new();
        book.set(b.id(), a.id(), o.flipped()).unwrap();
        assert_eq!(book.get(a.id(), b.id()), o);
    }

    #[test]
    fn ordering_validation() {
        assert!(PairOrdering::Probability { p: 1.2 }.validate().is_err());
        assert!(PairOrdering::Full {
            p: 0.5,
            rho_first: 0.2,
            rho_second: 0.2
        }
        .validate()
        .is_err());
    }

    #[test]
    fn measurement_examples() {
        let t = UncertainTime::new(4.0, 1.0).unwrap();
        assert_eq!(cov_measurement(&t, &t.clone(), 2.5), 2.5);
        let u = UncertainTime::new(4.0, 1.0).unwrap();
        assert_eq!(cov_measurement(&t, &u, 2.5), 0.0);
        assert_eq!(cov_measurement(&UncertainTime::known(4.0), &UncertainTime::known(4.0), 2.5), 0.0);
    }

    #[test]
    fn drift_examples() {
        let none = PairOrdering::Unknown;
        let t = UncertainTime::new(5.0, 1.0).unwrap();
        assert_eq!(cov_drift(&t, &t, 0.2, &none).unwrap(), 1.0);
        assert_eq!(cov_drift(&UncertainTime::known(3.0), &UncertainTime::known(7.0), 0.2, &none).unwrap(), 0.2 * 3.0);
        let a = UncertainTime::new(4.0, 1.0).unwrap();
        let b = UncertainTime::new(4.0, 1.0).unwrap();
        assert!(approx(cov_drift(&a, &b, 0.2, &none).unwrap(), 0.2 * 3.0, 1e-15));
    }

    #[test]
    fn time_floor_enforced_only_for_uncertain_times() {
        let none = PairOrdering::Unknown;
        let a = UncertainTime::new(2.0, 0.5).unwrap();
        let b = UncertainTime::known(5.0);
        assert!(matches!(cov_drift(&a, &b, 1.0, &none), Err(Error::TimeBelowThree { .. })));
        let p = params(1.0, 1.0, 1.0, 1.0, 0.5);
        assert!(matches!(cov_ar(&a, &b, &p, &none), Err(Error::TimeBelowThree { .. })));
        assert!(cov_drift(&UncertainTime::known(1.0), &b, 1.0, &none).is_ok());
    }

    #[test]
    fn ar_examples() {
        let none = PairOrdering::Unknown;
        let p = params(1.0, 1.0, 0.75, 1.0, 0.5);
        let t = UncertainTime::new(4.0, 1.0).unwrap();
        assert!(approx(cov_ar(&t, &t, &p, &none).unwrap(), 1.0, 1e-15));

        let p1 = params(1.0, 1.0, 1.0, 1.0, 0.5);
        assert!(approx(var_h_known(3.0, &p1), 1.0625, 1e-15));
        assert!(approx(var_h_recursion(3, &p1), 1.0625, 1e-15));

        let v = cov_ar(&UncertainTime::known(3.0), &UncertainTime::known(5.0), &p1, &none).unwrap();
        assert!(approx(v, 0.265625, 1e-15));
    }

    #[test]
    fn recursion_matches_closed_form() {
        let p = params(1.0, 1.0, 0.3, 2.0, 0.7);
        for t in 2..30 {
            assert!(approx(var_h_recursion(t, &p), var_h_known(t as f64, &p), 1e-12));
        }
    }

    #[test]
    fn known_ui_ar_is_below_classical() {
        let none = PairOrdering::Unknown;
        let p = params(1.0, 1.0, 0.6, 1.5, 0.6);
        for t in 3..12 {
            for tp in (t + 1)..14 {
                let ui = cov_ar(&UncertainTime::known(t as f64), &UncertainTime::known(tp as f64), &p, &none).unwrap();
                assert!(ui <= cov_h_known(t as f64, tp as f64, &p) + 1e-12);
            }
        }
    }

    fn intercept_slope_prior() -> RegressionPrior {
        RegressionPrior::new(
            DVector::from_vec(vec![0.5, 1.2]),
            DMatrix::from_row_slice(2, 2, &[0.4, 0.05, 0.05, 0.1]),
        )
        .unwrap()
    }

    #[test]
    fn prior_cov_is_symmetric() {
        let pr = intercept_slope_prior();
        let p = params(0.2, 0.1, 0.3, 0.4, 0.6);
        let a = UncertainTime::new(4.0, 0.5).unwrap();
        let b = UncertainTime::new(6.5, 1.0).unwrap();
        let mut cross = CrossCov::new();
        cross.set(a.id(), b.id(), DMatrix::from_element(1, 1, 0.2)).unwrap();
        let mut book = OrderingBook::new();
        book.set(a.id(), b.id(), PairOrdering::Probability { p: 0.8 }).unwrap();
        let ab = prior_cov_y(&a, &b, &pr, &p, &cross, &book).unwrap();
        let ba = prior_cov_y(&b, &a, &pr, &p, &cross, &book).unwrap();
        assert!(approx(ab, ba, 1e-14));
    }

    #[test]
    fn zero_regression_prior_leaves_error_terms() {
        let pr = RegressionPrior::new(DVector::zeros(2), DMatrix::zeros(2, 2)).unwrap();
        let p = params(0.2, 0.1, 0.3, 0.4, 0.6);
        let a = UncertainTime::new(4.0, 0.5).unwrap();
        let b = UncertainTime::new(6.5, 1.0).unwrap();
        let none = PairOrdering::Unknown;
        let got = prior_cov_y(&a, &b, &pr, &p, &CrossCov::new(), &OrderingBook::new()).unwrap();
        let want = cov_drift(&a, &b, 0.1, &none).unwrap() + cov_ar(&a, &b, &p, &none).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn prior_cov_term_by_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let g = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let am = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            let dl = &am * am.transpose();
            let pr = RegressionPrior::new(g.clone(), dl.clone()).unwrap();
            let p = params(
                rng.random_range(0.1..1.0),
                rng.random_range(0.1..1.0),
                rng.random_range(0.1..1.0),
                rng.random_range(0.1..1.0),
                rng.random_range(0.1..0.9),
            );
            let (ma, mb) = (rng.random_range(3.0..10.0), rng.random_range(3.0..10.0));
            let (va, vb) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let a = UncertainTime::new(ma, va).unwrap();
            let b = UncertainTime::new(mb, vb).unwrap();
            let c = rng.random_range(-0.5..0.5) * (va * vb).sqrt();
            let mut cross = CrossCov::new();
            cross.set(a.id(), b.id(), DMatrix::from_element(1, 1, c)).unwrap();
            let book = OrderingBook::new();
            let got = prior_cov_y(&a, &b, &pr, &p, &cross, &book).unwrap();

            let quad = dl[(0, 0)] + dl[(0, 1)] * (ma + mb) + dl[(1, 1)] * (ma * mb + c);
            let spread = ((ma - mb).powi(2) + (va.sqrt() + vb.sqrt()).powi(2)).sqrt();
            let drift = p.sigma_q2 * 0.5 * (ma + mb - spread);
            let ar = p.sigma_12 * p.psi.powf(ma + mb - 2.0) + p.sigma_r2 * p.psi.powf(spread);
            let want = quad + g[1] * g[1] * c + drift + ar;
            assert!(approx(got, want, 1e-12 * want.abs().max(1.0)), "{got} vs {want}");
        }
    }

    #[test]
    fn linear_model_known_inputs_reduce_to_classical() {
        let pr = RegressionPrior::new(DVector::from_vec(vec![1.0, -0.5]), DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5])).unwrap();
        let x = UncertainInput::known(DVector::from_vec(vec![1.0, 2.0]));
        let y = UncertainInput::known(DVector::from_vec(vec![1.0, -1.0]));
        let cross = CrossCov::new();
        let c = linear_prior_cov(&x, &y, &cross, &pr, 0.3).unwrap();
        let want = (x.mean().transpose() * pr.delta() * y.mean())[(0, 0)];
        assert!(approx(c, want, 1e-14));
        let v = linear_prior_cov(&x, &x, &cross, &pr, 0.3).unwrap();
        let want_v = (x.mean().transpose() * pr.delta() * x.mean())[(0, 0)] + 0.3;
        assert!(approx(v, want_v, 1e-14));
        assert!(approx(linear_prior_mean(&x, &pr).unwrap(), 0.0, 1e-15));
    }

    #[test]
    fn regress_reproduces_observation() {
        let pr = intercept_slope_prior();
        let p = params(0.2, 0.1, 0.3, 0.4, 0.6);
        let t = UncertainTime::known(5.0);
        let adj = regress_adjust(&[(t.clone(), 7.3)], &CrossCov::new(), &pr, &p, std::slice::from_ref(&t), &OrderingBook::new()).unwrap();
        let prior_var = prior_cov_y(&t, &t, &pr, &p, &CrossCov::new(), &OrderingBook::new()).unwrap();
        assert!(approx(adj.belief.mean[0], 7.3, 1e-10));
        assert!(adj.belief.cov[(0, 0)] <= 1e-8 * prior_var);
    }

    #[test]
    fn distant_small_error_target_keeps_prior() {
        let pr = RegressionPrior::new(DVector::from_vec(vec![1.0, 0.1]), DMatrix::zeros(2, 2)).unwrap();
        let p = params(1e-6, 1e-15, 1e-6, 1e-6, 0.1);
        let train = UncertainTime::new(3.0, 0.01).unwrap();
        let target = UncertainTime::new(300.0, 0.01).unwrap();
        let adj = regress_adjust(&[(train, 5.0)], &CrossCov::new(), &pr, &p, std::slice::from_ref(&target), &OrderingBook::new()).unwrap();
        let prior_mean = prior_mean_y(&target, &pr).unwrap();
        assert!(approx(adj.belief.mean[0], prior_mean, 1e-6));
    }

    proptest! {
        #[test]
        fn known_times_reduce_to_min_and_distance(t in 0.0f64..50.0, tp in 0.0f64..50.0) {
            let a = UncertainTime::known(t);
            let b = UncertainTime::known(tp);
            let (m, r) = order_stat_bounds(&a, &b, &PairOrdering::Unknown);
            prop_assert_eq!(m, t.min(tp));
            prop_assert_eq!(r, (t - tp).abs());
            prop_assert_eq!(cov_drift(&a, &b, 1.0, &PairOrdering::Unknown).unwrap(), t.min(tp));
        }

        #[test]
        fn prior_cov_symmetric_property(ma in 3.0f64..20.0, mb in 3.0f64..20.0, va in 0.0f64..2.0, vb in 0.0f64..2.0) {
            let pr = intercept_slope_prior();
            let p = params(0.2, 0.1, 0.3, 0.4, 0.6);
            let a = UncertainTime::new(ma, va).unwrap();
            let b = UncertainTime::new(mb, vb).unwrap();
            let x = prior_cov_y(&a, &b, &pr, &p, &CrossCov::new(), &OrderingBook::new()).unwrap();
            let y = prior_cov_y(&b, &a, &pr, &p, &CrossCov::new(), &OrderingBook::new()).unwrap();
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}
