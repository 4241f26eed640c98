//! Maximum-likelihood correlation lengths.
//!
//! The outputs are modelled as Gaussian with mean Gβ and covariance
//! Σ ⊗ (C(θ) + nugget·I). Profiling out β (at β̂_GLS) and Σ (at RᵀC̃⁻¹R/n)
//! leaves
//!   ℓ(θ) = −½ [n·ln det Σ̂ + q·ln det C̃ + nq(1 + ln 2π)],
//! which is maximised over log θ from the best points of a grid.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::basis::BasisSpec;
use super::model::{check_design, correlation_matrix, factor_gram, with_nugget, InputScaling, DEFAULT_NUGGET};
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;

/// Smallest profiled output variance; below it the data are treated as
/// having no residual variation.
pub const SIGMA_FLOOR: f64 = 1e-12;

const GRID_LOWER: f64 = 0.02;
const GRID_UPPER: f64 = 10.0;
const GRID_PER_DIM: usize = 10;
const GRID_CAP: usize = 4096;
const LOG_THETA_BOUNDS: (f64, f64) = (-8.0, 5.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Number of local searches, seeded from the best grid points.
    pub starts: usize,
    pub max_iters: u64,
    pub nugget: f64,
    /// Defaults to the design's column ranges.
    pub scaling: Option<InputScaling>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            starts: 8,
            max_iters: 300,
            nugget: DEFAULT_NUGGET,
            scaling: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: DVector<f64>,
    /// Profiled Σ̂ at θ, floored at `SIGMA_FLOOR` on the diagonal.
    pub sigma: DMatrix<f64>,
    pub log_likelihood: f64,
    /// Best log-likelihood found by each local search, in start order.
    pub trace: Vec<f64>,
    /// The profiled Σ̂ was (numerically) zero.
    pub degenerate: bool,
    /// No local search improved on its starting grid point.
    pub did_not_improve: bool,
    pub scaling: InputScaling,
}

/// Profile likelihood evaluator over a fixed, scaled design.
pub struct ProfileLikelihood {
    design: DMatrix<f64>,
    g: DMatrix<f64>,
    outputs: DMatrix<f64>,
    nugget: f64,
}

/// Value of the profile likelihood at one θ.
#[derive(Clone, Debug)]
pub struct ProfilePoint {
    pub log_likelihood: f64,
    pub sigma: DMatrix<f64>,
    pub degenerate: bool,
}

impl ProfileLikelihood {
    /// `design` must already be scaled.
    pub fn new(design: DMatrix<f64>, outputs: DMatrix<f64>, basis: &BasisSpec, nugget: f64) -> Result<Self> {
        let g = basis.design_matrix(&design)?;
        Ok(Self {
            design,
            g,
            outputs,
            nugget,
        })
    }

    pub fn eval(&self, theta: &DVector<f64>) -> Result<ProfilePoint> {
        let (n, q) = self.outputs.shape();
        let c = with_nugget(&correlation_matrix(&self.design, theta), self.nugget);
        let cf = SpdFactor::new(&c)?;
        let cig = cf.solve(&self.g);
        let gram = factor_gram(&(self.g.transpose() * &cig))?;
        let b = gram.solve(&(cig.transpose() * &self.outputs));
        let r = &self.outputs - &self.g * b;
        let mut sigma = r.transpose() * cf.solve(&r) / n as f64;
        sigma = (&sigma + sigma.transpose()) * 0.5;
        let scale = self.outputs.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
        let degenerate = sigma.diagonal().max() <= 1e-10 * scale * scale;
        for k in 0..q {
            sigma[(k, k)] = sigma[(k, k)].max(SIGMA_FLOOR);
        }
        let ln_det_sigma = match nalgebra::Cholesky::new(sigma.clone()) {
            Some(ch) => ch.ln_determinant(),
            None => SpdFactor::new(&sigma)?.ln_determinant(),
        };
        let nq = (n * q) as f64;
        let ll = -0.5 * (n as f64 * ln_det_sigma + q as f64 * cf.ln_determinant() + nq * (1.0 + (2.0 * std::f64::consts::PI).ln()));
        Ok(ProfilePoint {
            log_likelihood: ll,
            sigma,
            degenerate,
        })
    }

    fn neg_ll_log(&self, log_theta: &[f64]) -> f64 {
        if log_theta.iter().any(|v| !(LOG_THETA_BOUNDS.0..=LOG_THETA_BOUNDS.1).contains(v)) {
            return f64::INFINITY;
        }
        let theta = DVector::from_iterator(log_theta.len(), log_theta.iter().map(|v| v.exp()));
        match self.eval(&theta) {
            Ok(p) if p.log_likelihood.is_finite() => -p.log_likelihood,
            _ => f64::INFINITY,
        }
    }
}

impl CostFunction for &ProfileLikelihood {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.neg_ll_log(p))
    }
}

/// Log-spaced grid over [0.02, 10]^p, 10 points per dimension, capped at
/// 4096 points by thinning every dimension equally.
pub fn theta_grid(p: usize) -> Vec<DVector<f64>> {
    let mut per_dim = GRID_PER_DIM;
    while per_dim > 2 && per_dim.pow(p as u32) > GRID_CAP {
        per_dim -= 1;
    }
    let (lo, hi) = (GRID_LOWER.ln(), GRID_UPPER.ln());
    let axis: Vec<f64> = (0..per_dim)
        .map(|i| (lo + (hi - lo) * i as f64 / (per_dim - 1) as f64).exp())
        .collect();
    let total = per_dim.pow(p as u32);
    (0..total)
        .map(|mut idx| {
            DVector::from_fn(p, |_, _| {
                let v = axis[idx % per_dim];
                idx /= per_dim;
                v
            })
        })
        .collect()
}

/// Fits θ (shared across outputs) by maximum profile likelihood.
/// `design` is n × p in original units, `outputs` n × q.
pub fn fit_hyperparameters(design: &DMatrix<f64>, outputs: &DMatrix<f64>, basis: &BasisSpec, config: &FitConfig) -> Result<FitResult> {
    let (n, p) = design.shape();
    if outputs.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "training outputs",
            expected: n,
            found: outputs.nrows(),
        });
    }
    let m = basis.len(p);
    if n < m + 2 {
        return Err(Error::InvalidParameter(format!(
            "fitting needs at least m + 2 = {} training runs, got {n}",
            m + 2
        )));
    }
    if config.starts == 0 {
        return Err(Error::InvalidParameter("at least one start is needed".into()));
    }
    check_design(design)?;
    let scaling = config.scaling.clone().unwrap_or_else(|| InputScaling::from_design(design));
    let scaled = scaling.scale_design(design);
    let lik = ProfileLikelihood::new(scaled, outputs.clone(), basis, config.nugget)?;

    let mut scored: Vec<(f64, DVector<f64>)> = theta_grid(p)
        .into_iter()
        .map(|t| {
            let v = lik.eval(&t).map(|pt| pt.log_likelihood).unwrap_or(f64::NEG_INFINITY);
            (v, t)
        })
        .collect();
    // Stable sort keeps grid order among ties.
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    if !scored[0].0.is_finite() {
        return Err(Error::SingularVariance { max_jitter: 0.0 });
    }

    let starts = config.starts.min(scored.len());
    let mut trace = Vec::with_capacity(starts);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut improved = false;
    for (start_ll, start_theta) in scored.iter().take(starts) {
        let x0: Vec<f64> = start_theta.iter().map(|v| v.ln()).collect();
        let (ll, x) = match local_search(&lik, &x0, config.max_iters) {
            Some((cost, x)) if -cost >= *start_ll => (-cost, x),
            _ => (*start_ll, x0),
        };
        if ll > start_ll + 1e-9 {
            improved = true;
        }
        trace.push(ll);
        if best.as_ref().is_none_or(|(b, _)| ll > *b) {
            best = Some((ll, x));
        }
    }
    let (_, best_x) = best.expect("at least one start");
    let theta = DVector::from_iterator(p, best_x.iter().map(|v| v.exp()));
    let point = lik.eval(&theta)?;
    if point.degenerate {
        log::warn!("profiled output variance is zero; the data show no residual variation");
    }
    if !improved {
        log::warn!("no local search improved on its starting grid point");
    }
    Ok(FitResult {
        theta,
        sigma: point.sigma,
        log_likelihood: point.log_likelihood,
        trace,
        degenerate: point.degenerate,
        did_not_improve: !improved,
        scaling,
    })
}

fn local_search(lik: &ProfileLikelihood, x0: &[f64], max_iters: u64) -> Option<(f64, Vec<f64>)> {
    let mut simplex = vec![x0.to_vec()];
    for r in 0..x0.len() {
        let mut v = x0.to_vec();
        v[r] += 0.4;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-10).ok()?;
    let res = Executor::new(lik, solver)
        .configure(|s| s.max_iters(max_iters))
        .run()
        .ok()?;
    let state = res.state();
    let x = state.get_best_param()?.clone();
    let cost = state.get_best_cost();
    cost.is_finite().then_some((cost, x))
}
