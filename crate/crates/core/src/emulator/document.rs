//! Versioned JSON document for a trained emulator.
//!
//! Floats are written in shortest round-trip decimal form, so every stored
//! value reloads bit for bit. Loading rebuilds all factorizations from the
//! stored design and hyperparameters and checks the stored adjusted-β
//! moments against the rebuild.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::basis::{BasisKind, BasisSpec};
use super::fit::FitResult;
use super::model::{BetaPrior, BuildOptions, EmulatorModel, InputScaling};
use crate::error::{Error, Result};
use crate::regression::RegressionPrior;
use crate::uncertain::KernelConfig;

pub const DOCUMENT_FORMAT: &str = "uible-emulator";
pub const DOCUMENT_VERSION: u32 = 1;

/// Summary of the fit that produced the hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub log_likelihood: f64,
    pub degenerate: bool,
    pub did_not_improve: bool,
    pub trace: Vec<f64>,
}

impl From<&FitResult> for FitSummary {
    fn from(f: &FitResult) -> Self {
        Self {
            log_likelihood: f.log_likelihood,
            degenerate: f.degenerate,
            did_not_improve: f.did_not_improve,
            trace: f.trace.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorDocument {
    Vague,
    Proper { gamma: Vec<f64>, delta: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub basis: BasisKind,
    pub scaling: InputScaling,
    /// Design rows in original units.
    pub design: Vec<Vec<f64>>,
    /// One row per training run, one column per output.
    pub outputs: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub nugget: f64,
    pub prior: PriorDocument,
    pub adjusted_beta_mean: Vec<f64>,
    pub adjusted_beta_var: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSummary>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nr = r.len();
    let nc = r.first().map_or(0, |x| x.len());
    if r.iter().any(|x| x.len() != nc) {
        return Err(Error::Document(format!("ragged matrix `{what}`")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| r[i][j]))
}

impl ModelDocument {
    pub fn from_model(model: &EmulatorModel, fit: Option<FitSummary>) -> Result<Self> {
        let basis = model
            .basis()
            .kind()
            .ok_or_else(|| Error::Document(format!("basis `{}` cannot be serialized", model.basis().name())))?;
        let prior = match model.prior() {
            BetaPrior::Vague => PriorDocument::Vague,
            BetaPrior::Proper(p) => PriorDocument::Proper {
                gamma: p.gamma().iter().copied().collect(),
                delta: rows(p.delta()),
            },
        };
        let (bm, bv) = model.adjusted_beta();
        Ok(Self {
            format: DOCUMENT_FORMAT.to_string(),
            version: DOCUMENT_VERSION,
            basis,
            scaling: model.scaling().clone(),
            design: rows(model.design_original()),
            outputs: rows(model.outputs()),
            theta: model.kernel().theta().iter().copied().collect(),
            sigma: rows(model.kernel().sigma()),
            nugget: model.nugget(),
            prior,
            adjusted_beta_mean: bm.iter().copied().collect(),
            adjusted_beta_var: rows(bv),
            fit,
        })
    }

    /// Rebuilds the model and checks it against the stored moments.
    pub fn to_model(&self) -> Result<EmulatorModel> {
        if self.format != DOCUMENT_FORMAT {
            return Err(Error::Document(format!("unexpected format `{}`", self.format)));
        }
        if self.version != DOCUMENT_VERSION {
            return Err(Error::Document(format!("unsupported version {}", self.version)));
        }
        let prior = match &self.prior {
            PriorDocument::Vague => BetaPrior::Vague,
            PriorDocument::Proper { gamma, delta } => BetaPrior::Proper(RegressionPrior::new(
                DVector::from_column_slice(gamma),
                from_rows(delta, "delta")?,
            )?),
        };
        let kernel = KernelConfig::new(DVector::from_column_slice(&self.theta), from_rows(&self.sigma, "sigma")?)?;
        let model = EmulatorModel::build(
            &from_rows(&self.design, "design")?,
            &from_rows(&self.outputs, "outputs")?,
            BasisSpec::from_kind(self.basis),
            kernel,
            prior,
            BuildOptions {
                nugget: self.nugget,
                scaling: Some(self.scaling.clone()),
            },
        )?;
        let (bm, bv) = model.adjusted_beta();
        let stored_m = DVector::from_column_slice(&self.adjusted_beta_mean);
        let stored_v = from_rows(&self.adjusted_beta_var, "adjusted_beta_var")?;
        if stored_m.len() != bm.len() || stored_v.shape() != bv.shape() {
            return Err(Error::Document("stored adjusted β has the wrong shape".into()));
        }
        let dm = (bm - &stored_m).abs().max();
        let dv = (bv - &stored_v).abs().max();
        if dm > 1e-10 * stored_m.abs().max().max(1.0) || dv > 1e-10 * stored_v.abs().max().max(1e-300) {
            return Err(Error::Document(format!(
                "rebuilt adjusted β differs from the stored one by {dm:e} (mean) and {dv:e} (variance)"
            )));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl EmulatorModel {
    pub fn save(&self, path: impl AsRef<Path>, fit: Option<FitSummary>) -> Result<()> {
        ModelDocument::from_model(self, fit)?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ModelDocument::load(path)?.to_model()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(prior: BetaPrior) -> EmulatorModel {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let design: DMatrix<f64> = DMatrix::from_fn(9, 2, |_, _| rng.random_range(0.0..5.0));
        let outputs = DMatrix::from_fn(9, 2, |i, k| design[(i, 0)].sin() + k as f64 * design[(i, 1)] / 7.0);
        EmulatorModel::build(
            &design,
            &outputs,
            BasisSpec::Linear,
            KernelConfig::new(DVector::from_vec(vec![0.7, 1.1]), DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 0.3])).unwrap(),
            prior,
            BuildOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for prior in [
            BetaPrior::Vague,
            BetaPrior::Proper(RegressionPrior::new(DVector::from_element(6, 0.1), DMatrix::identity(6, 6) * 3.0).unwrap()),
        ] {
            let m = model(prior);
            let doc = ModelDocument::from_model(&m, None).unwrap();
            let json = doc.to_json().unwrap();
            let doc2 = ModelDocument::from_json(&json).unwrap();
            assert_eq!(doc, doc2);
            let m2 = doc2.to_model().unwrap();
            let x = DVector::from_vec(vec![2.2, 3.1]);
            assert_eq!(m.predict_known(&x).unwrap(), m2.predict_known(&x).unwrap());
            assert_eq!(m.adjusted_beta(), m2.adjusted_beta());
        }
    }

    #[test]
    fn tampered_document_is_rejected() {
        let mut doc = ModelDocument::from_model(&model(BetaPrior::Vague), None).unwrap();
        doc.adjusted_beta_mean[0] += 1e-3;
        assert!(matches!(doc.to_model(), Err(Error::Document(_))));
        let mut doc = ModelDocument::from_model(&model(BetaPrior::Vague), None).unwrap();
        doc.version = 99;
        assert!(matches!(doc.to_model(), Err(Error::Document(_))));
    }

    #[test]
    fn custom_basis_cannot_be_saved() {
        let design = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let outputs = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 4.0, 9.0]);
        let m = EmulatorModel::build(
            &design,
            &outputs,
            BasisSpec::custom("quad", 2, |x| DVector::from_vec(vec![1.0, x[0] * x[0]])),
            KernelConfig::new(DVector::from_vec(vec![0.5]), DMatrix::identity(1, 1)).unwrap(),
            BetaPrior::Vague,
            BuildOptions::default(),
        )
        .unwrap();
        assert!(matches!(ModelDocument::from_model(&m, None), Err(Error::Document(_))));
    }
}
