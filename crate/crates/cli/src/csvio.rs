//! Numeric CSV tables with a header row.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use uible::diagnostics::fmt_f64;
use uible::{InputId, UncertainInput};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    /// Row-major values.
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> CliResult<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| CliError::input(path, e.to_string()))?;
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| CliError::input(path, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| CliError::input(path, e.to_string()))?;
            let line = r + 2;
            let row = rec
                .iter()
                .enumerate()
                .map(|(c, field)| {
                    field.parse::<f64>().map_err(|_| {
                        CliError::input(path, format!("line {line}, column `{}`: cannot parse `{field}` as a number", headers[c]))
                    })
                })
                .collect::<CliResult<Vec<f64>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(CliError::input(path, "no data rows"));
        }
        Ok(Self { headers, rows })
    }

    pub fn ncols(&self) -> usize {
        self.headers.len()
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.nrows(), self.ncols(), |i, j| self.rows[i][j])
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }
}

/// Writes a matrix with the given column names.
pub fn write_matrix(path: &Path, headers: &[String], m: &DMatrix<f64>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::input(path, e.to_string()))?;
    w.write_record(headers).map_err(|e| CliError::input(path, e.to_string()))?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| fmt_f64(*v))).map_err(|e| CliError::input(path, e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("{prefix}{k}")).collect()
}

/// Prediction targets: mean columns, optional `var_<name>` columns holding
/// the diagonal of Var[X], and an optional integer `id` column.
#[derive(Clone, Debug)]
pub struct Targets {
    pub means: Vec<DVector<f64>>,
    /// Per-dimension variances, present when the file has any var column.
    pub variances: Option<Vec<DVector<f64>>>,
    pub ids: Option<Vec<u64>>,
}

impl Targets {
    pub fn read(path: &Path) -> CliResult<Self> {
        let t = Table::read(path)?;
        let id_col = t.column_index("id");
        let mean_cols: Vec<usize> = (0..t.ncols())
            .filter(|&c| Some(c) != id_col && !t.headers[c].starts_with("var_"))
            .collect();
        if mean_cols.is_empty() {
            return Err(CliError::input(path, "no mean columns"));
        }
        let mut var_cols = vec![None; mean_cols.len()];
        for (c, h) in t.headers.iter().enumerate() {
            if let Some(name) = h.strip_prefix("var_") {
                let k = mean_cols
                    .iter()
                    .position(|&mc| t.headers[mc] == name)
                    .ok_or_else(|| CliError::input(path, format!("column `{h}` has no matching mean column `{name}`")))?;
                var_cols[k] = Some(c);
            }
        }
        let any_var = var_cols.iter().any(Option::is_some);
        let mut means = Vec::with_capacity(t.nrows());
        let mut variances = Vec::with_capacity(t.nrows());
        let mut ids = Vec::with_capacity(t.nrows());
        for (r, row) in t.rows.iter().enumerate() {
            means.push(DVector::from_iterator(mean_cols.len(), mean_cols.iter().map(|&c| row[c])));
            let v = DVector::from_iterator(var_cols.len(), var_cols.iter().map(|c| c.map_or(0.0, |c| row[c])));
            if let Some(k) = v.iter().position(|x| !(*x >= 0.0)) {
                return Err(CliError::input(
                    path,
                    format!("line {}, column `var_{}`: variance must be ≥ 0", r + 2, t.headers[mean_cols[k]]),
                ));
            }
            variances.push(v);
            if let Some(c) = id_col {
                let x = row[c];
                if !(x >= 0.0 && x.fract() == 0.0 && x < 2f64.powi(63)) {
                    return Err(CliError::input(path, format!("line {}, column `id`: ids are non-negative integers", r + 2)));
                }
                ids.push(x as u64);
            }
        }
        Ok(Self {
            means,
            variances: any_var.then_some(variances),
            ids: id_col.map(|_| ids),
        })
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// True when row `i` carries no input variance.
    pub fn is_known(&self, i: usize) -> bool {
        self.variances.as_ref().is_none_or(|v| v[i].iter().all(|x| *x == 0.0))
    }

    /// Row `i` as an uncertain input with diagonal variance.
    pub fn input(&self, i: usize) -> uible::Result<UncertainInput> {
        let mean = self.means[i].clone();
        let cov = match &self.variances {
            Some(v) => DMatrix::from_diagonal(&v[i]),
            None => DMatrix::zeros(mean.len(), mean.len()),
        };
        match &self.ids {
            Some(ids) => UncertainInput::with_id(InputId::from_label(ids[i]), mean, cov),
            None => UncertainInput::new(mean, cov),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_targets_with_variances_and_ids() {
        let f = file("x1,x2,var_x2,id\n0.5,1.0,0.25,7\n1.5,2.0,0,8\n");
        let t = Targets::read(f.path()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.means[0], DVector::from_vec(vec![0.5, 1.0]));
        assert_eq!(t.variances.as_ref().unwrap()[0], DVector::from_vec(vec![0.0, 0.25]));
        assert!(!t.is_known(0));
        assert!(t.is_known(1));
        assert_eq!(t.input(0).unwrap().id(), InputId::from_label(7));
    }

    #[test]
    fn parse_errors_carry_line_and_column() {
        let f = file("x1,x2\n0.5,abc\n");
        let msg = Table::read(f.path()).unwrap_err().to_string();
        assert!(msg.contains("line 2") && msg.contains("`x2`"), "{msg}");
    }

    #[test]
    fn orphan_variance_column_is_rejected() {
        let f = file("x1,var_x9\n0.5,0.1\n");
        assert!(Targets::read(f.path()).is_err());
        let f = file("x1,var_x1\n0.5,-0.1\n");
        assert!(Targets::read(f.path()).is_err());
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = DMatrix::from_row_slice(2, 2, &[0.1, 1.0 / 3.0, -2.5e-300, 7.0]);
        write_matrix(&p, &numbered("y", 2), &m).unwrap();
        let t = Table::read(&p).unwrap();
        assert_eq!(t.headers, vec!["y1", "y2"]);
        assert_eq!(t.matrix(), m);
    }
}
