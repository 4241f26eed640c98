//! Bayes linear emulation of deterministic simulators.
//!
//! Beliefs about f(x) = g(x)ᵀB + u(x) are adjusted by training runs at known
//! design points, and the adjusted emulator is then queried either at known
//! inputs or at inputs known only through their mean and variance. Inputs
//! are mapped onto [−1, 1] per dimension before the kernel and basis are
//! evaluated; correlation lengths live on that scaled space.

mod basis;
mod document;
mod fit;
mod model;

pub use basis::{basis_moments, BasisKind, BasisMoments, BasisSpec};
pub use document::{FitSummary, ModelDocument, DOCUMENT_FORMAT, DOCUMENT_VERSION};
pub use fit::{fit_hyperparameters, theta_grid, FitConfig, FitResult, ProfileLikelihood, ProfilePoint, SIGMA_FLOOR};
pub use model::{
    adjusted_beta, beta_gls, check_design, correlation_matrix, gls_residual_sigma, BetaPrior, BuildOptions, EmulatorModel,
    InputScaling, UIPrediction, DEFAULT_NUGGET,
};
