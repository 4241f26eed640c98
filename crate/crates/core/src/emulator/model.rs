use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::basis::{basis_moments, BasisSpec};
use crate::error::{Error, Result};
use crate::linalg::{clip_rounding, symmetrize, SpdFactor, PREDICTIVE_PSD_TOL};
use crate::regression::RegressionPrior;
use crate::uncertain::{gaussian_corr_unchecked, ui_gaussian_corr, CrossCov, KernelConfig, UncertainInput};

/// Default diagonal inflation of the training correlation matrix.
pub const DEFAULT_NUGGET: f64 = 1e-8;

/// Affine map of each input dimension from [lower, upper] onto [−1, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl InputScaling {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                context: "scaling bounds",
                expected: lower.len(),
                found: upper.len(),
            });
        }
        for (r, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "scaling range for dimension {r} is [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The identity map (bounds [−1, 1]).
    pub fn unit(p: usize) -> Self {
        Self {
            lower: vec![-1.0; p],
            upper: vec![1.0; p],
        }
    }

    /// Bounds taken from the column ranges of a design. A constant column
    /// gets a unit-width range centred on its value.
    pub fn from_design(design: &DMatrix<f64>) -> Self {
        let p = design.ncols();
        let mut lower = Vec::with_capacity(p);
        let mut upper = Vec::with_capacity(p);
        for r in 0..p {
            let col = design.column(r);
            let (lo, hi) = (col.min(), col.max());
            if hi > lo {
                lower.push(lo);
                upper.push(hi);
            } else {
                lower.push(lo - 0.5);
                upper.push(hi + 0.5);
            }
        }
        Self { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Per-dimension slope 2/(upper − lower).
    pub fn slopes(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.lower.iter().zip(&self.upper).map(|(lo, hi)| 2.0 / (hi - lo)))
    }

    pub fn scale_point(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter()
                .enumerate()
                .map(|(r, v)| 2.0 * (v - self.lower[r]) / (self.upper[r] - self.lower[r]) - 1.0),
        )
    }

    pub fn unscale_point(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            z.len(),
            z.iter()
                .enumerate()
                .map(|(r, v)| self.lower[r] + (v + 1.0) * 0.5 * (self.upper[r] - self.lower[r])),
        )
    }

    /// Scaled moments of an uncertain input, keeping its identity.
    pub fn scale_input(&self, x: &UncertainInput) -> Result<UncertainInput> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "emulator input",
                expected: self.dim(),
                found: x.dim(),
            });
        }
        let d = DMatrix::from_diagonal(&self.slopes());
        let cov = &d * x.cov() * &d;
        let cov = (&cov + cov.transpose()) * 0.5;
        UncertainInput::with_id(x.id(), self.scale_point(x.mean()), cov)
    }

    pub fn scale_design(&self, design: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = design.clone();
        for i in 0..design.nrows() {
            let z = self.scale_point(&design.row(i).transpose());
            out.row_mut(i).copy_from(&z.transpose());
        }
        out
    }
}

/// Prior over β = vec(B).
#[derive(Clone, Debug, PartialEq)]
pub enum BetaPrior {
    /// The limit Var[β] → ∞.
    Vague,
    /// E[β] = Γ, Var[β] = Δ with Δ invertible.
    Proper(RegressionPrior),
}

/// Construction settings that are not part of the statistical model.
#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub nugget: f64,
    /// Defaults to the design's column ranges.
    pub scaling: Option<InputScaling>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            nugget: DEFAULT_NUGGET,
            scaling: None,
        }
    }
}

/// Predictive mean and covariance of f at one input.
#[derive(Clone, Debug, PartialEq)]
pub struct UIPrediction {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// True when the input mean lies outside the scaled training box.
    pub extrapolated: bool,
}

impl UIPrediction {
    pub fn variances(&self) -> DVector<f64> {
        self.cov.diagonal()
    }
}

/// Checks that no two design rows coincide.
pub fn check_design(design: &DMatrix<f64>) -> Result<()> {
    for i in 0..design.nrows() {
        for j in 0..i {
            if design.row(i) == design.row(j) {
                return Err(Error::DegenerateDesign { first: j, second: i });
            }
        }
    }
    Ok(())
}

/// Gaussian correlation matrix of a (scaled) design, unit diagonal.
pub fn correlation_matrix(design: &DMatrix<f64>, theta: &DVector<f64>) -> DMatrix<f64> {
    let n = design.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| design.row(i).iter().copied().collect()).collect();
    let mut c = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = gaussian_corr_unchecked(&rows[i], &rows[j], theta.as_slice());
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

pub(crate) fn with_nugget(c: &DMatrix<f64>, nugget: f64) -> DMatrix<f64> {
    let mut out = c.clone();
    for i in 0..out.nrows() {
        out[(i, i)] += nugget;
    }
    out
}

/// Cholesky of GᵀC⁻¹G without jitter; a failure or a reciprocal
/// condition number below 1e-13 means the basis is rank deficient.
pub(crate) fn factor_gram(a: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let a = (a + a.transpose()) * 0.5;
    let chol = Cholesky::new(a).ok_or(Error::RankDeficientBasis)?;
    let d = chol.l_dirty().diagonal();
    let (lo, hi) = (d.min(), d.max());
    if !(lo > 0.0) || (lo / hi).powi(2) < 1e-13 {
        return Err(Error::RankDeficientBasis);
    }
    Ok(chol)
}

fn vec_columns(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn check_outputs(g: &DMatrix<f64>, outputs: &DMatrix<f64>) -> Result<()> {
    if outputs.nrows() != g.nrows() {
        return Err(Error::DimensionMismatch {
            context: "training outputs",
            expected: g.nrows(),
            found: outputs.nrows(),
        });
    }
    Ok(())
}

/// β̂_GLS = I_q ⊗ (GᵀC⁻¹G)⁻¹GᵀC⁻¹ · F, with F the columns of `outputs`
/// stacked, and `c` the (nugget-inflated) correlation matrix.
pub fn beta_gls(g: &DMatrix<f64>, c: &DMatrix<f64>, outputs: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_outputs(g, outputs)?;
    let cf = SpdFactor::new(c)?;
    let cig = cf.solve(g);
    let gram = factor_gram(&(g.transpose() * &cig))?;
    Ok(vec_columns(&gram.solve(&(cig.transpose() * outputs))))
}

/// Adjusted moments (E_F[β], Var_F[β]).
pub fn adjusted_beta(
    g: &DMatrix<f64>,
    c: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    outputs: &DMatrix<f64>,
    prior: &BetaPrior,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_outputs(g, outputs)?;
    let cf = SpdFactor::new(c)?;
    let sf = SpdFactor::new(sigma)?;
    let cig = cf.solve(g);
    let gram_m = g.transpose() * &cig;
    let gram = factor_gram(&gram_m)?;
    adjusted_beta_parts(&gram_m, &gram, &(cig.transpose() * outputs), sigma, &sf, prior)
}

/// `gcf` is GᵀC⁻¹F (m × q).
fn adjusted_beta_parts(
    gram_m: &DMatrix<f64>,
    gram: &Cholesky<f64, nalgebra::Dyn>,
    gcf: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    sigma_factor: &SpdFactor,
    prior: &BetaPrior,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let q = sigma.nrows();
    if gcf.ncols() != q {
        return Err(Error::DimensionMismatch {
            context: "output covariance Σ",
            expected: gcf.ncols(),
            found: q,
        });
    }
    match prior {
        BetaPrior::Vague => {
            let mean = vec_columns(&gram.solve(gcf));
            let var = sigma.kronecker(&gram.inverse());
            Ok((mean, symmetrize_loose(var)))
        }
        BetaPrior::Proper(p) => {
            let mq = gram_m.nrows() * q;
            if p.dim() != mq {
                return Err(Error::DimensionMismatch {
                    context: "prior on vec(B)",
                    expected: mq,
                    found: p.dim(),
                });
            }
            let sinv = sigma_factor.inverse();
            let df = SpdFactor::new(p.delta())?;
            let precision = sinv.kronecker(gram_m) + df.inverse();
            let pf = SpdFactor::new(&symmetrize_loose(precision))?;
            // Wᵀ Ω⁻¹ F = vec(GᵀC⁻¹ F Σ⁻¹).
            let info = vec_columns(&(gcf * &sinv)) + df.solve_vec(p.gamma());
            Ok((pf.solve_vec(&info), symmetrize_loose(pf.inverse())))
        }
    }
}

fn symmetrize_loose(a: DMatrix<f64>) -> DMatrix<f64> {
    (&a + a.transpose()) * 0.5
}

/// A trained emulator: design, outputs, hyperparameters and the
/// factorizations every prediction reuses.
#[derive(Clone, Debug)]
pub struct EmulatorModel {
    basis: BasisSpec,
    scaling: InputScaling,
    raw_design: DMatrix<f64>,
    design: DMatrix<f64>,
    design_inputs: Vec<UncertainInput>,
    outputs: DMatrix<f64>,
    kernel: KernelConfig,
    prior: BetaPrior,
    nugget: f64,
    g: DMatrix<f64>,
    c: DMatrix<f64>,
    c_factor: SpdFactor,
    beta_gls: DVector<f64>,
    beta_mean: DVector<f64>,
    beta_var: DMatrix<f64>,
    /// C̃⁻¹(F_k − G·E_F[β_k]) column by column, C̃ = C + nugget·I.
    alpha: DMatrix<f64>,
}

impl EmulatorModel {
    /// `design` is n × p in original units, `outputs` is n × q.
    pub fn build(
        design: &DMatrix<f64>,
        outputs: &DMatrix<f64>,
        basis: BasisSpec,
        kernel: KernelConfig,
        prior: BetaPrior,
        options: BuildOptions,
    ) -> Result<Self> {
        let (n, p) = design.shape();
        if n == 0 {
            return Err(Error::InvalidParameter("the training design is empty".into()));
        }
        if outputs.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "training outputs",
                expected: n,
                found: outputs.nrows(),
            });
        }
        if kernel.input_dim() != p {
            return Err(Error::DimensionMismatch {
                context: "kernel lengthscales",
                expected: p,
                found: kernel.input_dim(),
            });
        }
        if kernel.output_dim() != outputs.ncols() {
            return Err(Error::DimensionMismatch {
                context: "output covariance Σ",
                expected: outputs.ncols(),
                found: kernel.output_dim(),
            });
        }
        if !(options.nugget >= 0.0) {
            return Err(Error::InvalidParameter(format!("nugget must be non-negative, got {}", options.nugget)));
        }
        check_design(design)?;
        let scaling = match options.scaling {
            Some(s) if s.dim() != p => {
                return Err(Error::DimensionMismatch {
                    context: "scaling bounds",
                    expected: p,
                    found: s.dim(),
                })
            }
            Some(s) => s,
            None => InputScaling::from_design(design),
        };
        let scaled = scaling.scale_design(design);
        let design_inputs = (0..n).map(|i| UncertainInput::known(scaled.row(i).transpose())).collect();
        let g = basis.design_matrix(&scaled)?;
        let c = correlation_matrix(&scaled, kernel.theta());
        let c_factor = SpdFactor::new(&with_nugget(&c, options.nugget))?;
        let sigma_factor = SpdFactor::new(kernel.sigma())?;

        let cig = c_factor.solve(&g);
        let gram_m = g.transpose() * &cig;
        let gram = factor_gram(&gram_m)?;
        let gcf = cig.transpose() * outputs;
        let beta_gls = vec_columns(&gram.solve(&gcf));
        let (beta_mean, beta_var) = adjusted_beta_parts(&gram_m, &gram, &gcf, kernel.sigma(), &sigma_factor, &prior)?;

        let m = g.ncols();
        let q = outputs.ncols();
        let beta_mat = DMatrix::from_column_slice(m, q, beta_mean.as_slice());
        let alpha = c_factor.solve(&(outputs - &g * beta_mat));
        Ok(Self {
            basis,
            scaling,
            raw_design: design.clone(),
            design: scaled,
            design_inputs,
            outputs: outputs.clone(),
            kernel,
            prior,
            nugget: options.nugget,
            g,
            c,
            c_factor,
            beta_gls,
            beta_mean,
            beta_var,
            alpha,
        })
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn scaling(&self) -> &InputScaling {
        &self.scaling
    }

    /// Scaled design (rows in [−1, 1]^p for the default scaling).
    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    /// Design rows in original units.
    pub fn design_original(&self) -> &DMatrix<f64> {
        &self.raw_design
    }

    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }

    /// F = vec(outputs).
    pub fn stacked_outputs(&self) -> DVector<f64> {
        vec_columns(&self.outputs)
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn prior(&self) -> &BetaPrior {
        &self.prior
    }

    pub fn nugget(&self) -> f64 {
        self.nugget
    }

    pub fn input_dim(&self) -> usize {
        self.design.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.ncols()
    }

    pub fn n_train(&self) -> usize {
        self.design.nrows()
    }

    pub fn n_basis(&self) -> usize {
        self.g.ncols()
    }

    pub fn regression_matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// Correlation matrix C (unit diagonal, no nugget).
    pub fn correlation(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// Jitter the factorization of C + nugget·I needed on top of the nugget.
    pub fn factor_jitter(&self) -> f64 {
        self.c_factor.jitter()
    }

    /// Ω = Σ ⊗ (C + nugget·I), assembled densely.
    pub fn omega(&self) -> DMatrix<f64> {
        self.kernel.sigma().kronecker(&with_nugget(&self.c, self.nugget))
    }

    /// W = I_q ⊗ G.
    pub fn w(&self) -> DMatrix<f64> {
        DMatrix::identity(self.output_dim(), self.output_dim()).kronecker(&self.g)
    }

    pub fn beta_gls(&self) -> &DVector<f64> {
        &self.beta_gls
    }

    /// (E_F[β], Var_F[β]).
    pub fn adjusted_beta(&self) -> (&DVector<f64>, &DMatrix<f64>) {
        (&self.beta_mean, &self.beta_var)
    }

    fn extrapolates(&self, z: &DVector<f64>) -> bool {
        let out = z.iter().any(|v| v.abs() > 1.0 + 1e-9);
        if out {
            log::debug!("prediction input lies outside the scaled training box");
        }
        out
    }

    /// Moments of f at a known input in original units.
    pub fn predict_known(&self, x: &DVector<f64>) -> Result<UIPrediction> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "emulator input",
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let z = self.scaling.scale_point(x);
        let theta = self.kernel.theta().as_slice();
        let cvec = DVector::from_iterator(
            self.n_train(),
            (0..self.n_train()).map(|i| {
                let row: Vec<f64> = self.design.row(i).iter().copied().collect();
                gaussian_corr_unchecked(z.as_slice(), &row, theta)
            }),
        );
        let mu_g = self.basis.eval(&z)?;
        let var_g = DMatrix::zeros(mu_g.len(), mu_g.len());
        let (mean, cov) = self.combine(&mu_g, &var_g, &cvec)?;
        Ok(UIPrediction {
            mean,
            cov,
            extrapolated: self.extrapolates(&z),
        })
    }

    /// Moments of f(X) at an uncertain input in original units, assumed
    /// uncorrelated with the training data.
    pub fn predict_uncertain(&self, x: &UncertainInput) -> Result<UIPrediction> {
        let xs = self.scaling.scale_input(x)?;
        let moments = basis_moments(&xs, &self.basis)?;
        let cross = CrossCov::new();
        let mut cvec = DVector::zeros(self.n_train());
        for (i, d) in self.design_inputs.iter().enumerate() {
            cvec[i] = ui_gaussian_corr(&xs, d, &cross, self.kernel.theta())?;
        }
        let (mean, cov) = self.combine(&moments.mean, &moments.var, &cvec)?;
        Ok(UIPrediction {
            mean,
            cov,
            extrapolated: self.extrapolates(xs.mean()),
        })
    }

    /// Assembles the predictive moments from E[g], Var[g] and the vector of
    /// correlations c between the target and the design. With
    /// h = GᵀC̃⁻¹c, s = cᵀC̃⁻¹c and V_kl the (k, l) block of Var_F[β]:
    ///   mean_k = E[g]ᵀβ_k + cᵀC̃⁻¹(F_k − Gβ_k)
    ///   cov_kl = (E[g] − h)ᵀV_kl(E[g] − h) + tr(V_kl Var[g])
    ///            + β_kᵀ Var[g] β_l + (1 − s)Σ_kl.
    /// At a training point with no nugget s is 1 up to rounding, so the
    /// covariance is clipped at the scale of Σ.
    fn combine(&self, mu_g: &DVector<f64>, var_g: &DMatrix<f64>, cvec: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let m = self.n_basis();
        let q = self.output_dim();
        let a = self.c_factor.solve_vec(cvec);
        let h = self.g.transpose() * &a;
        let s = cvec.dot(&a);
        let d = mu_g - &h;
        let sigma = self.kernel.sigma();

        let mut mean = DVector::zeros(q);
        for k in 0..q {
            let bk = self.beta_mean.rows(k * m, m);
            mean[k] = mu_g.dot(&bk) + cvec.dot(&self.alpha.column(k));
        }

        let vg_beta: Vec<DVector<f64>> = (0..q).map(|k| var_g * self.beta_mean.rows(k * m, m)).collect();
        let mut cov = DMatrix::zeros(q, q);
        for k in 0..q {
            for l in 0..=k {
                let v = self.beta_var.view((k * m, l * m), (m, m));
                let quad = (d.transpose() * v * &d)[(0, 0)];
                let tr = (v * var_g).trace();
                let bvb = self.beta_mean.rows(k * m, m).dot(&vg_beta[l]);
                let val = quad + tr + bvb + (1.0 - s) * sigma[(k, l)];
                cov[(k, l)] = val;
                cov[(l, k)] = val;
            }
        }
        let scale = sigma.diagonal().max().max(cov.diagonal().max());
        Ok((mean, clip_rounding(cov, scale, PREDICTIVE_PSD_TOL)?))
    }

    #[cfg(test)]
    pub(crate) fn c_factor(&self) -> &SpdFactor {
        &self.c_factor
    }
}

/// GLS residual covariance RᵀC̃⁻¹R / n, R = outputs − G·β̂_GLS.
pub fn gls_residual_sigma(g: &DMatrix<f64>, c_factor: &SpdFactor, outputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cig = c_factor.solve(g);
    let gram = factor_gram(&(g.transpose() * &cig))?;
    let b = gram.solve(&(cig.transpose() * outputs));
    let r = outputs - g * b;
    let s = r.transpose() * c_factor.solve(&r) / outputs.nrows() as f64;
    symmetrize(&symmetrize_loose(s))
}
