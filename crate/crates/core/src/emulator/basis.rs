use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertain::UncertainInput;

type BasisFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

/// Regression functions g(·) of an emulator.
#[derive(Clone)]
pub enum BasisSpec {
    /// g(x) = (1).
    Constant,
    /// g(x) = (1, x₁, …, x_p).
    Linear,
    /// User-supplied g with m outputs. Usable only at known inputs.
    Custom {
        name: String,
        m: usize,
        func: Arc<BasisFn>,
    },
}

impl fmt::Debug for BasisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisSpec::Constant => write!(f, "Constant"),
            BasisSpec::Linear => write!(f, "Linear"),
            BasisSpec::Custom { name, m, .. } => write!(f, "Custom({name}, m = {m})"),
        }
    }
}

/// Serializable name of a built-in basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Constant,
    Linear,
}

impl BasisSpec {
    pub fn custom(name: impl Into<String>, m: usize, func: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        BasisSpec::Custom {
            name: name.into(),
            m,
            func: Arc::new(func),
        }
    }

    /// Number of basis functions for p-dimensional inputs.
    pub fn len(&self, p: usize) -> usize {
        match self {
            BasisSpec::Constant => 1,
            BasisSpec::Linear => p + 1,
            BasisSpec::Custom { m, .. } => *m,
        }
    }

    pub fn kind(&self) -> Option<BasisKind> {
        match self {
            BasisSpec::Constant => Some(BasisKind::Constant),
            BasisSpec::Linear => Some(BasisKind::Linear),
            BasisSpec::Custom { .. } => None,
        }
    }

    pub fn from_kind(kind: BasisKind) -> Self {
        match kind {
            BasisKind::Constant => BasisSpec::Constant,
            BasisKind::Linear => BasisSpec::Linear,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            BasisSpec::Constant => "constant",
            BasisSpec::Linear => "linear",
            BasisSpec::Custom { name, .. } => name,
        }
    }

    /// g(x) at a known (already scaled) input.
    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            BasisSpec::Constant => Ok(DVector::from_element(1, 1.0)),
            BasisSpec::Linear => {
                let mut g = DVector::zeros(x.len() + 1);
                g[0] = 1.0;
                g.rows_mut(1, x.len()).copy_from(x);
                Ok(g)
            }
            BasisSpec::Custom { name, m, func } => {
                let g = func(x);
                if g.len() != *m {
                    return Err(Error::ArityMismatch {
                        context: format!("basis `{name}`"),
                        expected: *m,
                        found: g.len(),
                    });
                }
                Ok(g)
            }
        }
    }

    /// Regression matrix G with rows g(x⁽ⁱ⁾)ᵀ.
    pub fn design_matrix(&self, design: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let m = self.len(design.ncols());
        let mut g = DMatrix::zeros(design.nrows(), m);
        for i in 0..design.nrows() {
            let row = self.eval(&design.row(i).transpose())?;
            g.row_mut(i).copy_from(&row.transpose());
        }
        Ok(g)
    }
}

/// E[g(X)] and Var[g(X)]. The moments of w(X) = I_q ⊗ g(X)ᵀ follow by
/// replicating these per output.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisMoments {
    pub mean: DVector<f64>,
    pub var: DMatrix<f64>,
}

impl BasisMoments {
    /// E[w(X)] = I_q ⊗ E[g(X)]ᵀ, a q × mq matrix.
    pub fn w_mean(&self, q: usize) -> DMatrix<f64> {
        DMatrix::identity(q, q).kronecker(&self.mean.transpose())
    }
}

/// Second-order moments of the basis at an uncertain input.
pub fn basis_moments(x: &UncertainInput, basis: &BasisSpec) -> Result<BasisMoments> {
    let p = x.dim();
    match basis {
        BasisSpec::Constant => Ok(BasisMoments {
            mean: DVector::from_element(1, 1.0),
            var: DMatrix::zeros(1, 1),
        }),
        BasisSpec::Linear => {
            let mut var = DMatrix::zeros(p + 1, p + 1);
            var.view_mut((1, 1), (p, p)).copy_from(x.cov());
            Ok(BasisMoments {
                mean: basis.eval(x.mean())?,
                var,
            })
        }
        BasisSpec::Custom { name, m, .. } => {
            if !x.is_known() {
                return Err(Error::UnsupportedBasisForUncertainInput(name.clone()));
            }
            Ok(BasisMoments {
                mean: basis.eval(x.mean())?,
                var: DMatrix::zeros(*m, *m),
            })
        }
    }
}
