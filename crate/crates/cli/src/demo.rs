//! The synthetic dispersion / dose-response study.
//!
//! For each design protocol the demo trains emulators of f¹, f² and of the
//! composite h directly, links the f¹ and f² emulators into a chain, and
//! scores all four approximations on the same held-out inputs.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uible::ddr::SyntheticDDR;
use uible::design::{maximin_lhs, random_lhs};
use uible::diagnostics::{fmt_f64, DiagnosticReport};
use uible::emulator::EmulatorModel;
use uible::network::{link_predict, ChainFile, ChainSpec, NodeEntry, SimulatorNode};
use uible::UncertainInput;

use crate::error::{CliError, CliResult};
use crate::train::{train_emulator, TrainOptions};

/// Training-set sizes for f¹, h and f².
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Protocol {
    pub n_f1: usize,
    pub n_h: usize,
    pub n_f2: usize,
}

impl Protocol {
    pub fn label(&self) -> String {
        format!("{}-{}-{}", self.n_f1, self.n_h, self.n_f2)
    }
}

pub const PROTOCOLS: [Protocol; 2] = [
    Protocol { n_f1: 50, n_h: 50, n_f2: 20 },
    Protocol { n_f1: 30, n_h: 30, n_f2: 30 },
];

pub const DIAGNOSTIC_POINTS: usize = 100;

pub const METHODS: [&str; 4] = ["de_f1", "de_f2", "de_h", "uible"];

#[derive(Clone, Debug)]
pub struct DemoConfig {
    pub seed: u64,
    pub lhs_iterations: usize,
    pub train: TrainOptions,
}

impl DemoConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            lhs_iterations: uible::design::DEFAULT_LHS_ITERATIONS,
            train: TrainOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProtocolResult {
    pub protocol: Protocol,
    /// One report per entry of `METHODS`, in that order.
    pub reports: Vec<DiagnosticReport>,
    pub f1_model: EmulatorModel,
    pub f2_model: EmulatorModel,
    pub h_model: EmulatorModel,
}

impl ProtocolResult {
    pub fn report(&self, method: &str) -> Option<&DiagnosticReport> {
        METHODS.iter().position(|m| *m == method).map(|i| &self.reports[i])
    }
}

#[derive(Clone, Debug)]
pub struct DemoResult {
    pub protocols: Vec<ProtocolResult>,
}

fn column(v: DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    DMatrix::from_column_slice(n, 1, v.as_slice())
}

fn report_from(truths: &[f64], preds: &[(f64, f64)]) -> CliResult<DiagnosticReport> {
    let means: Vec<f64> = preds.iter().map(|p| p.0).collect();
    let vars: Vec<f64> = preds.iter().map(|p| p.1).collect();
    Ok(DiagnosticReport::new(truths, &means, &vars)?)
}

fn run_protocol(cfg: &DemoConfig, protocol: Protocol, offset: u64, test_x: &DMatrix<f64>) -> CliResult<ProtocolResult> {
    let ddr = SyntheticDDR::default();
    let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(offset);

    let x1 = SyntheticDDR::to_physical(&maximin_lhs(protocol.n_f1, 3, seed, cfg.lhs_iterations));
    let (f1_model, _) = train_emulator(&x1, &column(ddr.f1_rows(&x1)), &cfg.train)?;

    let xh = if protocol.n_h == protocol.n_f1 {
        x1.clone()
    } else {
        SyntheticDDR::to_physical(&maximin_lhs(protocol.n_h, 3, seed.wrapping_add(1), cfg.lhs_iterations))
    };
    let (h_model, _) = train_emulator(&xh, &column(ddr.h_rows(&xh)), &cfg.train)?;

    let (lo, hi) = ddr.f1_range();
    let u = maximin_lhs(protocol.n_f2, 1, seed.wrapping_add(2), cfg.lhs_iterations);
    let y2 = u.map(|v| lo + (v + 1.0) * 0.5 * (hi - lo));
    let out2 = DMatrix::from_fn(protocol.n_f2, 1, |i, _| ddr.f2(y2[(i, 0)]));
    let (f2_model, _) = train_emulator(&y2, &out2, &cfg.train)?;

    let chain = ChainSpec::direct(vec![
        SimulatorNode::emulator(f1_model.clone()),
        SimulatorNode::emulator(f2_model.clone()),
    ])?;

    let n = test_x.nrows();
    let mut truth_f1 = Vec::with_capacity(n);
    let mut truth_h = Vec::with_capacity(n);
    let mut truth_f2 = Vec::with_capacity(n);
    let mut preds: [Vec<(f64, f64)>; 4] = Default::default();
    for i in 0..n {
        let x = test_x.row(i).transpose();
        let y = ddr.f1(x[0], x[1], x[2]);
        truth_f1.push(y);
        truth_f2.push(ddr.f2(y));
        truth_h.push(ddr.h(x[0], x[1], x[2]));

        let p1 = f1_model.predict_known(&x)?;
        preds[0].push((p1.mean[0], p1.cov[(0, 0)]));
        let p2 = f2_model.predict_known(&DVector::from_element(1, y))?;
        preds[1].push((p2.mean[0], p2.cov[(0, 0)]));
        let ph = h_model.predict_known(&x)?;
        preds[2].push((ph.mean[0], ph.cov[(0, 0)]));
        let pc = link_predict(&chain, &UncertainInput::known(x))?;
        preds[3].push((pc.mean()[0], pc.cov()[(0, 0)]));
    }
    let reports = vec![
        report_from(&truth_f1, &preds[0])?,
        report_from(&truth_f2, &preds[1])?,
        report_from(&truth_h, &preds[2])?,
        report_from(&truth_h, &preds[3])?,
    ];
    Ok(ProtocolResult {
        protocol,
        reports,
        f1_model,
        f2_model,
        h_model,
    })
}

/// Held-out inputs for the given seed, in physical units.
pub fn diagnostic_inputs(seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d1a6);
    SyntheticDDR::to_physical(&random_lhs(DIAGNOSTIC_POINTS, 3, &mut rng))
}

pub fn run_demo(cfg: &DemoConfig) -> CliResult<DemoResult> {
    let test_x = diagnostic_inputs(cfg.seed);
    let protocols = PROTOCOLS
        .iter()
        .enumerate()
        .map(|(k, p)| run_protocol(cfg, *p, 10 * k as u64, &test_x))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(DemoResult { protocols })
}

impl DemoResult {
    /// Header and rows of the comparison table: one row per protocol, one
    /// column per (method, metric).
    pub fn table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut header = vec!["design".to_string()];
        for m in METHODS {
            for metric in ["maspe", "rmspe", "mges"] {
                header.push(format!("{m}_{metric}"));
            }
        }
        let rows = self
            .protocols
            .iter()
            .map(|p| {
                let mut row = vec![p.protocol.label()];
                for r in &p.reports {
                    row.extend([fmt_f64(r.maspe), fmt_f64(r.rmspe), fmt_f64(r.mges)]);
                }
                row
            })
            .collect();
        (header, rows)
    }

    /// Plain-text rendering of the table for the terminal.
    pub fn render(&self) -> String {
        let mut s = format!("{:<10}", "design");
        for m in METHODS {
            s.push_str(&format!(" | {m:^26}"));
        }
        s.push('\n');
        s.push_str(&format!("{:<10}", ""));
        for _ in METHODS {
            s.push_str(&format!(" | {:>8} {:>8} {:>8}", "MASPE", "RMSPE", "MGES"));
        }
        s.push('\n');
        for p in &self.protocols {
            s.push_str(&format!("{:<10}", p.protocol.label()));
            for r in &p.reports {
                s.push_str(&format!(" | {:>8.4} {:>8.4} {:>8.3}", r.maspe, r.rmspe, r.mges));
            }
            s.push('\n');
        }
        s.push_str("within ±3 sd:\n");
        for p in &self.protocols {
            s.push_str(&format!("{:<10}", p.protocol.label()));
            for (m, r) in METHODS.iter().zip(&p.reports) {
                s.push_str(&format!(" {m}={:.2}", r.coverage()));
            }
            s.push('\n');
        }
        s
    }

    /// Writes `table.csv`, `coverage.csv`, one report per (design, method)
    /// and, per design, the three emulators plus a chain file linking the
    /// f¹ and f² emulators.
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let (header, rows) = self.table();
        let table_path = dir.join("table.csv");
        let mut w = csv::Writer::from_path(&table_path).map_err(|e| CliError::input(&table_path, e.to_string()))?;
        w.write_record(&header).map_err(|e| CliError::input(&table_path, e.to_string()))?;
        for r in &rows {
            w.write_record(r).map_err(|e| CliError::input(&table_path, e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::io(&table_path, e))?;

        let cov_path = dir.join("coverage.csv");
        let mut w = csv::Writer::from_path(&cov_path).map_err(|e| CliError::input(&cov_path, e.to_string()))?;
        w.write_record(["design", "method", "coverage_3sd"]).map_err(|e| CliError::input(&cov_path, e.to_string()))?;
        for p in &self.protocols {
            for (m, r) in METHODS.iter().zip(&p.reports) {
                w.write_record([p.protocol.label(), m.to_string(), fmt_f64(r.coverage())])
                    .map_err(|e| CliError::input(&cov_path, e.to_string()))?;
            }
        }
        w.flush().map_err(|e| CliError::io(&cov_path, e))?;

        for p in &self.protocols {
            let label = p.protocol.label();
            for (m, r) in METHODS.iter().zip(&p.reports) {
                let path = dir.join(format!("report_{label}_{m}.csv"));
                let f = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
                r.write_csv(f)?;
                let path = dir.join(format!("report_{label}_{m}.summary.csv"));
                let f = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
                r.write_summary(f)?;
            }
            let f1 = format!("model_{label}_f1.json");
            let f2 = format!("model_{label}_f2.json");
            p.f1_model.save(dir.join(&f1), None)?;
            p.f2_model.save(dir.join(&f2), None)?;
            p.h_model.save(dir.join(format!("model_{label}_h.json")), None)?;
            ChainFile {
                nodes: vec![NodeEntry::Model(f1.into()), NodeEntry::Model(f2.into())],
                links: None,
            }
            .save(dir.join(format!("chain_{label}.json")))?;
        }
        Ok(())
    }
}
