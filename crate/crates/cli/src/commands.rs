//! One function per subcommand. Each reads its inputs from files, calls the
//! library, and writes its results; the binary only parses flags.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use uible::design::maximin_lhs;
use uible::diagnostics::{fmt_f64, DiagnosticReport};
use uible::emulator::{EmulatorModel, FitResult, FitSummary};
use uible::network::{link_predict, ChainFile, ChainSpec};
use uible::regression::{regress_adjust, ElectrolysisParams, OrderingBook, RegressionPrior, UncertainTime};
use uible::{CrossCov, InputId, SecondOrderSpec};

use crate::config::RunConfig;
use crate::csvio::{numbered, write_matrix, Table, Targets};
use crate::demo::{run_demo, DemoConfig, DemoResult};
use crate::error::{CliError, CliResult};
use crate::train::{train_emulator, TrainOptions};

/// Writes an n × p maximin Latin hypercube on [−1, 1]^p.
pub fn cmd_design(n: usize, p: usize, seed: u64, iterations: usize, out: &Path) -> CliResult<DMatrix<f64>> {
    if n == 0 || p == 0 {
        return Err(CliError::Usage("design needs n ≥ 1 and p ≥ 1".into()));
    }
    let x = maximin_lhs(n, p, seed, iterations);
    write_matrix(out, &numbered("x", p), &x)?;
    Ok(x)
}

/// Fits an emulator to a design and its outputs and saves it.
pub fn cmd_fit(design: &Path, outputs: &Path, opts: &TrainOptions, out: &Path) -> CliResult<(EmulatorModel, FitResult)> {
    let x = Table::read(design)?;
    let y = Table::read(outputs)?;
    if x.nrows() != y.nrows() {
        return Err(CliError::input(
            outputs,
            format!("{} output rows for {} design rows in {}", y.nrows(), x.nrows(), design.display()),
        ));
    }
    if let Some(theta) = &opts.theta {
        if theta.len() != x.ncols() {
            return Err(CliError::Usage(format!(
                "theta has {} entries but the design has {} columns",
                theta.len(),
                x.ncols()
            )));
        }
    }
    let (model, fit) = train_emulator(&x.matrix(), &y.matrix(), opts)?;
    model.save(out, Some(FitSummary::from(&fit)))?;
    Ok((model, fit))
}

fn check_target_dim(targets: &Targets, expected: usize, path: &Path) -> CliResult<()> {
    if targets.dim() != expected {
        return Err(CliError::input(
            path,
            format!("{} mean columns, but the model takes {expected} inputs", targets.dim()),
        ));
    }
    Ok(())
}

fn write_predictions(out: &Path, preds: &[SecondOrderSpec]) -> CliResult<()> {
    let q = preds[0].dim();
    let mut headers = numbered("mean_", q);
    headers.extend(numbered("var_", q));
    let m = DMatrix::from_fn(preds.len(), 2 * q, |i, j| {
        if j < q {
            preds[i].mean()[j]
        } else {
            preds[i].cov()[(j - q, j - q)]
        }
    });
    write_matrix(out, &headers, &m)
}

/// The library call `cmd_predict` makes for one target row.
pub fn predict_row(model: &EmulatorModel, targets: &Targets, i: usize) -> uible::Result<SecondOrderSpec> {
    let p = if targets.is_known(i) {
        model.predict_known(&targets.means[i])?
    } else {
        model.predict_uncertain(&targets.input(i)?)?
    };
    SecondOrderSpec::new(p.mean, p.cov)
}

/// Predictive means and variances of a saved emulator at each target row.
pub fn cmd_predict(model: &Path, targets: &Path, out: &Path) -> CliResult<Vec<SecondOrderSpec>> {
    let model = EmulatorModel::load(model)?;
    let t = Targets::read(targets)?;
    check_target_dim(&t, model.input_dim(), targets)?;
    let preds = (0..t.len()).map(|i| predict_row(&model, &t, i)).collect::<uible::Result<Vec<_>>>()?;
    write_predictions(out, &preds)?;
    Ok(preds)
}

/// Final-node beliefs of a chain at each target row.
pub fn cmd_chain(chain: &Path, targets: &Path, out: &Path) -> CliResult<Vec<SecondOrderSpec>> {
    let chain = ChainFile::open(chain)?;
    let t = Targets::read(targets)?;
    check_target_dim(&t, chain.input_dim(), targets)?;
    let preds = (0..t.len())
        .map(|i| link_predict(&chain, &t.input(i)?))
        .collect::<uible::Result<Vec<_>>>()?;
    write_predictions(out, &preds)?;
    Ok(preds)
}

/// What `diagnose` evaluates.
pub enum Subject {
    Model(PathBuf),
    Chain(PathBuf),
}

/// `<report>.summary.csv` next to the report.
pub fn summary_path(report: &Path) -> PathBuf {
    let stem = report.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into());
    report.with_file_name(format!("{stem}.summary.csv"))
}

/// Scores a model or chain on test inputs against true outputs, writing the
/// per-point report and its summary.
pub fn cmd_diagnose(subject: &Subject, inputs: &Path, truths: &Path, output: usize, out: &Path) -> CliResult<DiagnosticReport> {
    let t = Targets::read(inputs)?;
    let truth_table = Table::read(truths)?;
    if truth_table.nrows() != t.len() {
        return Err(CliError::input(truths, format!("{} rows for {} inputs", truth_table.nrows(), t.len())));
    }
    if output >= truth_table.ncols() {
        return Err(CliError::input(truths, format!("no column for output {output}")));
    }
    let truth: Vec<f64> = truth_table.rows.iter().map(|r| r[output]).collect();
    let preds: Vec<SecondOrderSpec> = match subject {
        Subject::Model(p) => {
            let model = EmulatorModel::load(p)?;
            check_target_dim(&t, model.input_dim(), inputs)?;
            (0..t.len()).map(|i| predict_row(&model, &t, i)).collect::<uible::Result<_>>()?
        }
        Subject::Chain(p) => {
            let chain: ChainSpec = ChainFile::open(p)?;
            check_target_dim(&t, chain.input_dim(), inputs)?;
            (0..t.len()).map(|i| link_predict(&chain, &t.input(i)?)).collect::<uible::Result<_>>()?
        }
    };
    if output >= preds[0].dim() {
        return Err(CliError::Usage(format!("output {output} out of range for a {}-output predictor", preds[0].dim())));
    }
    let means: Vec<f64> = preds.iter().map(|p| p.mean()[output]).collect();
    let vars: Vec<f64> = preds.iter().map(|p| p.cov()[(output, output)]).collect();
    let report = DiagnosticReport::new(&truth, &means, &vars)?;
    let f = std::fs::File::create(out).map_err(|e| CliError::io(out, e))?;
    report.write_csv(f)?;
    let sp = summary_path(out);
    let f = std::fs::File::create(&sp).map_err(|e| CliError::io(&sp, e))?;
    report.write_summary(f)?;
    Ok(report)
}

/// Runs the synthetic study and writes its artifacts under `out`.
pub fn cmd_demo_ddr(cfg: &DemoConfig, out: &Path) -> CliResult<DemoResult> {
    let result = run_demo(cfg)?;
    result.write(out)?;
    Ok(result)
}

fn read_times(path: &Path, with_y: bool) -> CliResult<(Vec<UncertainTime>, Vec<f64>)> {
    let t = Table::read(path)?;
    let col = |name: &str| t.column_index(name).ok_or_else(|| CliError::input(path, format!("missing column `{name}`")));
    let mean_c = col("time_mean")?;
    let var_c = t.column_index("time_var");
    let id_c = t.column_index("id");
    let y_c = if with_y { Some(col("y")?) } else { None };
    let mut times = Vec::with_capacity(t.nrows());
    let mut ys = Vec::new();
    for (r, row) in t.rows.iter().enumerate() {
        let var = var_c.map_or(0.0, |c| row[c]);
        let time = match id_c {
            Some(c) => {
                let id = row[c];
                if !(id >= 0.0 && id.fract() == 0.0 && id < 2f64.powi(63)) {
                    return Err(CliError::input(path, format!("line {}, column `id`: ids are non-negative integers", r + 2)));
                }
                UncertainTime::with_id(InputId::from_label(id as u64), row[mean_c], var)
            }
            None => UncertainTime::new(row[mean_c], var),
        }
        .map_err(|e| CliError::input(path, format!("line {}: {e}", r + 2)))?;
        times.push(time);
        if let Some(c) = y_c {
            ys.push(row[c]);
        }
    }
    Ok((times, ys))
}

/// Adjusts beliefs about y at the target times given training data, under
/// the structured electrolysis error model from the config. Writes mean and
/// variance per target.
pub fn cmd_regress(config: &RunConfig, training: &Path, targets: &Path, out: &Path) -> CliResult<SecondOrderSpec> {
    let e = config
        .electrolysis
        .as_ref()
        .ok_or_else(|| CliError::Usage("regress needs an [electrolysis] block in the config".into()))?;
    let rp = config
        .regression_prior
        .as_ref()
        .ok_or_else(|| CliError::Usage("regress needs a [regression_prior] block in the config".into()))?;
    let params = ElectrolysisParams::new(e.sigma_a2, e.sigma_q2, e.sigma_r2, e.sigma_12, e.psi)?;
    let n = rp.delta.len();
    if rp.delta.iter().any(|r| r.len() != n) {
        return Err(CliError::Usage("regression_prior.delta must be square".into()));
    }
    let prior = RegressionPrior::new(
        DVector::from_column_slice(&rp.gamma),
        DMatrix::from_fn(n, n, |i, j| rp.delta[i][j]),
    )?;
    let (train_t, ys) = read_times(training, true)?;
    let (target_t, _) = read_times(targets, false)?;
    let train: Vec<(UncertainTime, f64)> = train_t.into_iter().zip(ys).collect();
    let adj = regress_adjust(&train, &CrossCov::new(), &prior, &params, &target_t, &OrderingBook::new())?;
    let k = target_t.len();
    let spec = adj.belief.to_spec();
    let m = DMatrix::from_fn(k, 2, |i, j| if j == 0 { spec.mean()[i] } else { spec.cov()[(i, i)] });
    write_matrix(out, &["mean".to_string(), "var".to_string()], &m)?;
    Ok(spec)
}

/// Summary lines printed after `diagnose`.
pub fn summary_text(r: &DiagnosticReport) -> String {
    format!(
        "maspe,{}\nrmspe,{}\nmges,{}\ncoverage_3sd,{}",
        fmt_f64(r.maspe),
        fmt_f64(r.rmspe),
        fmt_f64(r.mges),
        fmt_f64(r.coverage())
    )
}
