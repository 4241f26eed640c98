//! Fitting and building emulators from settings shared by `fit` and the demo.

use nalgebra::{DMatrix, DVector};
use uible::emulator::{fit_hyperparameters, BasisKind, BasisSpec, BetaPrior, BuildOptions, EmulatorModel, FitConfig, FitResult, ProfileLikelihood};
use uible::regression::RegressionPrior;
use uible::{KernelConfig, Result};

/// Prior on the regression coefficients.
#[derive(Clone, Debug, PartialEq)]
pub enum PriorChoice {
    Vague,
    /// E[β] = gamma (zero when absent) and Var[β] = delta_scale · v_k · I
    /// for the block of output k, where v_k is the sample variance of that
    /// output column (1 when the column is constant).
    Proper { gamma: Option<Vec<f64>>, delta_scale: f64 },
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub basis: BasisKind,
    pub prior: PriorChoice,
    pub fit: FitConfig,
    /// Skip the likelihood search and use these correlation lengths.
    pub theta: Option<Vec<f64>>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            basis: BasisKind::Linear,
            prior: PriorChoice::Vague,
            fit: FitConfig::default(),
            theta: None,
        }
    }
}

fn build_prior(choice: &PriorChoice, m: usize, outputs: &DMatrix<f64>) -> Result<BetaPrior> {
    match choice {
        PriorChoice::Vague => Ok(BetaPrior::Vague),
        PriorChoice::Proper { gamma, delta_scale } => {
            let q = outputs.ncols();
            let gamma = match gamma {
                Some(g) => DVector::from_column_slice(g),
                None => DVector::zeros(m * q),
            };
            let mut diag = DVector::zeros(m * q);
            for k in 0..q {
                let col = outputs.column(k);
                let n = col.len() as f64;
                let mean = col.sum() / n;
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
                let v = if var > 0.0 { var } else { 1.0 };
                diag.rows_mut(k * m, m).fill(delta_scale * v);
            }
            Ok(BetaPrior::Proper(RegressionPrior::new(gamma, DMatrix::from_diagonal(&diag))?))
        }
    }
}

/// Fits θ (unless fixed) and Σ by profile likelihood, then builds the model.
pub fn train_emulator(design: &DMatrix<f64>, outputs: &DMatrix<f64>, opts: &TrainOptions) -> Result<(EmulatorModel, FitResult)> {
    let basis = BasisSpec::from_kind(opts.basis);
    let fit = match &opts.theta {
        None => fit_hyperparameters(design, outputs, &basis, &opts.fit)?,
        Some(theta) => fixed_theta_fit(design, outputs, &basis, &opts.fit, DVector::from_column_slice(theta))?,
    };
    let prior = build_prior(&opts.prior, basis.len(design.ncols()), outputs)?;
    let model = EmulatorModel::build(
        design,
        outputs,
        basis,
        KernelConfig::new(fit.theta.clone(), fit.sigma.clone())?,
        prior,
        BuildOptions {
            nugget: opts.fit.nugget,
            scaling: Some(fit.scaling.clone()),
        },
    )?;
    Ok((model, fit))
}

fn fixed_theta_fit(design: &DMatrix<f64>, outputs: &DMatrix<f64>, basis: &BasisSpec, cfg: &FitConfig, theta: DVector<f64>) -> Result<FitResult> {
    let scaling = cfg
        .scaling
        .clone()
        .unwrap_or_else(|| uible::emulator::InputScaling::from_design(design));
    let profile = ProfileLikelihood::new(scaling.scale_design(design), outputs.clone(), basis, cfg.nugget)?;
    let point = profile.eval(&theta)?;
    Ok(FitResult {
        theta,
        sigma: point.sigma,
        log_likelihood: point.log_likelihood,
        trace: Vec::new(),
        degenerate: point.degenerate,
        did_not_improve: false,
        scaling,
    })
}
