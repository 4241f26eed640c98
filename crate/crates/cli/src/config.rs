//! Run configuration read from a TOML file. Command-line flags take
//! precedence over every field here.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use uible::emulator::{BasisKind, FitConfig, DEFAULT_NUGGET};

use crate::error::{CliError, CliResult};
use crate::train::{PriorChoice, TrainOptions};

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub design: Option<PathBuf>,
    pub outputs: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub chain: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub truths: Option<PathBuf>,
    pub training: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectrolysisBlock {
    pub sigma_a2: f64,
    pub sigma_q2: f64,
    pub sigma_r2: f64,
    pub sigma_12: f64,
    pub psi: f64,
}

/// Prior for the (intercept, slope) regression on time.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionPriorBlock {
    pub gamma: Vec<f64>,
    pub delta: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub paths: Paths,
    pub seed: Option<u64>,
    #[serde(default = "default_basis")]
    pub basis: BasisKind,
    pub nugget: Option<f64>,
    #[serde(default)]
    pub vague_prior: bool,
    /// E[β] for a proper prior; zeros when absent.
    pub gamma: Option<Vec<f64>>,
    /// Var[β] multiplier for a proper prior (see `PriorChoice`).
    #[serde(default = "default_delta_scale")]
    pub delta_scale: f64,
    /// Fixed correlation lengths; the likelihood search is skipped.
    pub theta: Option<Vec<f64>>,
    pub starts: Option<usize>,
    pub max_iters: Option<u64>,
    pub lhs_iterations: Option<usize>,
    pub electrolysis: Option<ElectrolysisBlock>,
    pub regression_prior: Option<RegressionPriorBlock>,
}

fn default_basis() -> BasisKind {
    BasisKind::Linear
}

fn default_delta_scale() -> f64 {
    100.0
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            seed: None,
            basis: default_basis(),
            nugget: None,
            vague_prior: false,
            gamma: None,
            delta_scale: default_delta_scale(),
            theta: None,
            starts: None,
            max_iters: None,
            lhs_iterations: None,
            electrolysis: None,
            regression_prior: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|source| CliError::Config {
            path: path.display().to_string(),
            source,
        })?;
        cfg.validate(path)?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    fn validate(&self, path: &Path) -> CliResult<()> {
        if let Some(n) = self.nugget {
            if !(n >= 0.0 && n.is_finite()) {
                return Err(CliError::input(path, format!("nugget must be a finite value ≥ 0, got {n}")));
            }
        }
        if !(self.delta_scale > 0.0 && self.delta_scale.is_finite()) {
            return Err(CliError::input(path, "delta_scale must be positive"));
        }
        if self.starts == Some(0) {
            return Err(CliError::input(path, "starts must be at least 1"));
        }
        if let Some(t) = &self.theta {
            if t.iter().any(|v| !(*v > 0.0)) {
                return Err(CliError::input(path, "theta entries must be positive"));
            }
        }
        Ok(())
    }

    /// Training settings after applying command-line overrides.
    pub fn train_options(&self, vague_prior: bool, nugget: Option<f64>, starts: Option<usize>) -> CliResult<TrainOptions> {
        let nugget = nugget.or(self.nugget).unwrap_or(DEFAULT_NUGGET);
        if !(nugget >= 0.0 && nugget.is_finite()) {
            return Err(CliError::Usage(format!("--nugget must be a finite value ≥ 0, got {nugget}")));
        }
        let starts = starts.or(self.starts).unwrap_or(FitConfig::default().starts);
        if starts == 0 {
            return Err(CliError::Usage("--starts must be at least 1".into()));
        }
        let prior = if vague_prior || self.vague_prior {
            PriorChoice::Vague
        } else {
            PriorChoice::Proper {
                gamma: self.gamma.clone(),
                delta_scale: self.delta_scale,
            }
        };
        Ok(TrainOptions {
            basis: self.basis,
            prior,
            fit: FitConfig {
                starts,
                max_iters: self.max_iters.unwrap_or(FitConfig::default().max_iters),
                nugget,
                scaling: None,
            },
            theta: self.theta.clone(),
        })
    }
}

/// The flag value if given, else the config value, else an error naming both.
pub fn resolve_path(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| CliError::Usage(format!("missing --{name} (or paths.{name} in the config)")))
}
