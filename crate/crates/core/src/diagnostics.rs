//! Validation metrics for emulators and chains on held-out runs.

use std::io::Write;

use nalgebra::DVector;

use crate::belief::SecondOrderSpec;
use crate::emulator::EmulatorModel;
use crate::error::{Error, Result};
use crate::network::{link_predict, ChainSpec};
use crate::uncertain::UncertainInput;

fn check_lengths(context: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            context,
            expected: a,
            found: b,
        });
    }
    if a == 0 {
        return Err(Error::InvalidParameter("diagnostics need at least one point".into()));
    }
    Ok(())
}

fn check_variances(variances: &[f64]) -> Result<()> {
    match variances.iter().position(|v| !(*v > 0.0)) {
        Some(index) => Err(Error::NonPositiveVariance {
            index,
            value: variances[index],
        }),
        None => Ok(()),
    }
}

/// Mean absolute standardized prediction error, (1/n) Σ |f − μ| / √ν.
pub fn maspe(truths: &[f64], means: &[f64], variances: &[f64]) -> Result<f64> {
    check_lengths("maspe means", truths.len(), means.len())?;
    check_lengths("maspe variances", truths.len(), variances.len())?;
    check_variances(variances)?;
    let s: f64 = truths
        .iter()
        .zip(means)
        .zip(variances)
        .map(|((f, m), v)| (f - m).abs() / v.sqrt())
        .sum();
    Ok(s / truths.len() as f64)
}

/// Root mean squared prediction error.
pub fn rmspe(truths: &[f64], means: &[f64]) -> Result<f64> {
    check_lengths("rmspe means", truths.len(), means.len())?;
    let s: f64 = truths.iter().zip(means).map(|(f, m)| (f - m) * (f - m)).sum();
    Ok((s / truths.len() as f64).sqrt())
}

/// Mean generalised entropy score, −(1/n) Σ [(f − μ)²/ν + ln ν].
pub fn mges(truths: &[f64], means: &[f64], variances: &[f64]) -> Result<f64> {
    check_lengths("mges means", truths.len(), means.len())?;
    check_lengths("mges variances", truths.len(), variances.len())?;
    check_variances(variances)?;
    let s: f64 = truths
        .iter()
        .zip(means)
        .zip(variances)
        .map(|((f, m), v)| (f - m) * (f - m) / v + v.ln())
        .sum();
    Ok(-s / truths.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticRow {
    /// Position of the point in the caller's list.
    pub index: usize,
    pub truth: f64,
    pub mean: f64,
    pub variance: f64,
}

impl DiagnosticRow {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn std_err(&self) -> f64 {
        (self.truth - self.mean) / self.sd()
    }

    pub fn within_3sd(&self) -> bool {
        (self.truth - self.mean).abs() <= 3.0 * self.sd()
    }
}

/// Per-point predictions sorted by increasing truth, with summaries.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticReport {
    pub rows: Vec<DiagnosticRow>,
    pub maspe: f64,
    pub rmspe: f64,
    pub mges: f64,
}

impl DiagnosticReport {
    pub fn new(truths: &[f64], means: &[f64], variances: &[f64]) -> Result<Self> {
        let maspe_v = maspe(truths, means, variances)?;
        let rmspe_v = rmspe(truths, means)?;
        let mges_v = mges(truths, means, variances)?;
        let mut rows: Vec<DiagnosticRow> = (0..truths.len())
            .map(|i| DiagnosticRow {
                index: i,
                truth: truths[i],
                mean: means[i],
                variance: variances[i],
            })
            .collect();
        rows.sort_by(|a, b| a.truth.total_cmp(&b.truth).then(a.index.cmp(&b.index)));
        Ok(Self {
            rows,
            maspe: maspe_v,
            rmspe: rmspe_v,
            mges: mges_v,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Fraction of points with |f − μ| ≤ 3√ν.
    pub fn coverage(&self) -> f64 {
        self.rows.iter().filter(|r| r.within_3sd()).count() as f64 / self.len() as f64
    }

    /// Columns index, truth, mean, sd, std_err, within3sd.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "truth", "mean", "sd", "std_err", "within3sd"]).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.index.to_string(),
                fmt_f64(r.truth),
                fmt_f64(r.mean),
                fmt_f64(r.sd()),
                fmt_f64(r.std_err()),
                r.within_3sd().to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Key/value rows maspe, rmspe, mges, coverage_3sd.
    pub fn write_summary<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["key", "value"]).map_err(csv_err)?;
        for (k, v) in [
            ("maspe", self.maspe),
            ("rmspe", self.rmspe),
            ("mges", self.mges),
            ("coverage_3sd", self.coverage()),
        ] {
            w.write_record([k.to_string(), fmt_f64(v)]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// 17 significant digits in scientific notation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Document(e.to_string())
}

/// Anything that yields a second-order belief at a known input.
pub trait Predictor {
    fn predict_at(&self, x: &DVector<f64>) -> Result<SecondOrderSpec>;
}

impl Predictor for EmulatorModel {
    fn predict_at(&self, x: &DVector<f64>) -> Result<SecondOrderSpec> {
        let p = self.predict_known(x)?;
        SecondOrderSpec::new(p.mean, p.cov)
    }
}

impl Predictor for ChainSpec {
    fn predict_at(&self, x: &DVector<f64>) -> Result<SecondOrderSpec> {
        link_predict(self, &UncertainInput::known(x.clone()))
    }
}

/// Report for output component `output` of `predictor` over test points.
pub fn diagnostic_report(
    predictor: &dyn Predictor,
    inputs: &[DVector<f64>],
    truths: &[f64],
    output: usize,
) -> Result<DiagnosticReport> {
    check_lengths("diagnostic truths", inputs.len(), truths.len())?;
    let mut means = Vec::with_capacity(inputs.len());
    let mut vars = Vec::with_capacity(inputs.len());
    for x in inputs {
        let s = predictor.predict_at(x)?;
        if output >= s.dim() {
            return Err(Error::DimensionMismatch {
                context: "diagnosed output",
                expected: s.dim(),
                found: output,
            });
        }
        means.push(s.mean()[output]);
        vars.push(s.cov()[(output, output)]);
    }
    DiagnosticReport::new(truths, &means, &vars)
}
