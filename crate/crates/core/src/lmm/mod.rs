//! Linear mixed-effects models with random intercepts (and optionally
//! slopes) per subject, fitted by ML or REML.

mod direct;
pub mod engine;
mod variance;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

pub use direct::{blup, gls_beta, marginal_loglik, reml_loglik, subject_covariance};
pub use engine::{FitControl, MixedProblem};
pub use variance::{Criterion, VarianceComponents};

use crate::error::{Error, Result};
use crate::panel::{fixed_row, random_row, Design, PanelDataset, Term, TransformSpec};

#[derive(Debug, Clone)]
pub struct LmmFit {
    pub fixed_terms: Vec<Term>,
    pub random_terms: Vec<Term>,
    pub fixed_names: Vec<String>,
    pub beta: DVector<f64>,
    /// Standard errors from `(XᵀV⁻¹X)⁻¹` at the fitted components.
    pub beta_se: DVector<f64>,
    pub theta: VarianceComponents,
    pub blups: BTreeMap<u32, DVector<f64>>,
    pub loglik: f64,
    pub criterion: Criterion,
    pub aic: f64,
    pub n_obs: usize,
    pub n_subjects: usize,
    pub n_params: usize,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Random-effect variances flagged as sitting on the lower bound.
    pub boundary: Vec<usize>,
}

/// Fixed effects plus the distinct parameters of `D` and `σ²`.
pub fn parameter_count(p: usize, q: usize) -> usize {
    p + q * (q + 1) / 2 + 1
}

/// Fits the model by maximizing the chosen criterion over the variance
/// components, with β at its GLS value.
pub fn fit(design: &Design, criterion: Criterion, control: &FitControl) -> Result<LmmFit> {
    fit_from(design, criterion, control, None)
}

/// Rejects fixed-effect columns that are (numerically) linearly
/// dependent, judged on `XᵀX` scaled to unit diagonal.
fn check_full_rank(design: &Design) -> Result<()> {
    let p = design.n_fixed();
    if p == 0 {
        return Ok(());
    }
    let mut xtx = DMatrix::zeros(p, p);
    for b in &design.blocks {
        xtx += b.x.transpose() * &b.x;
    }
    let scale: Vec<f64> = (0..p).map(|j| xtx[(j, j)].sqrt()).collect();
    if let Some(j) = scale.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::Singular(format!("fixed-effect column {} is identically zero", design.fixed_names[j])));
    }
    let corr = DMatrix::from_fn(p, p, |i, j| xtx[(i, j)] / (scale[i] * scale[j]));
    let eig = corr.symmetric_eigen().eigenvalues;
    if eig.min() < 1e-10 * eig.max() {
        return Err(Error::Singular("fixed-effect columns are collinear".into()));
    }
    Ok(())
}

/// As [`fit`], starting the optimizer from `start` instead of EM.
pub fn fit_from(
    design: &Design,
    criterion: Criterion,
    control: &FitControl,
    start: Option<&VarianceComponents>,
) -> Result<LmmFit> {
    if design.n_random() == 0 {
        return Err(Error::InvalidInput("the mixed model needs at least one random term".into()));
    }
    if let Some(b) = design.blocks.iter().find(|b| b.y.is_empty()) {
        return Err(Error::TooFewRows { subject: b.subject, needed: 1, found: 0 });
    }
    check_full_rank(design)?;
    let problem = MixedProblem::new(design, None)?;
    let opt = problem.maximize(criterion, control, start)?;
    let post = problem.posterior(&opt.l, opt.theta.sigma_sq, &opt.eval.beta)?;
    let blups = problem
        .subjects()
        .iter()
        .zip(post)
        .map(|(&s, (b, _))| (s, b))
        .collect();
    let n_params = parameter_count(design.n_fixed(), design.n_random());
    let beta_se = opt.eval.h_inv.diagonal().map(|v| v.max(0.0).sqrt());
    Ok(LmmFit {
        fixed_terms: design.fixed_terms.clone(),
        random_terms: design.random_terms.clone(),
        fixed_names: design.fixed_names.clone(),
        beta: opt.eval.beta.clone(),
        beta_se,
        theta: opt.theta.clone(),
        blups,
        loglik: opt.eval.value,
        criterion,
        aic: -2.0 * opt.eval.value + 2.0 * n_params as f64,
        n_obs: design.n_obs(),
        n_subjects: design.blocks.len(),
        n_params,
        converged: opt.converged,
        iterations: opt.iterations,
        grad_norm: opt.grad_norm,
        boundary: opt.boundary,
    })
}

impl LmmFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.fixed_names.iter().position(|n| n == name).map(|k| self.beta[k])
    }

    pub fn blup_for(&self, subject: u32) -> Result<&DVector<f64>> {
        self.blups.get(&subject).ok_or(Error::UnknownSubject(subject))
    }

    /// Model-scale predictions `xᵀβ̂ + zᵀb̂ᵢ` for every row.
    pub fn predict_linear(&self, rows: &PanelDataset) -> Result<Vec<f64>> {
        if self.fixed_names.len() != self.fixed_terms.len() + 1 {
            return Err(Error::InvalidInput(
                "fit has extra fixed columns; use the model that produced them to predict".into(),
            ));
        }
        rows.rows()
            .iter()
            .map(|row| {
                let b = self.blup_for(row.subject)?;
                let x = fixed_row(row, &self.fixed_terms);
                let z = random_row(row, &self.random_terms);
                let fixed: f64 = x.iter().zip(self.beta.iter()).map(|(a, c)| a * c).sum();
                let random: f64 = z.iter().zip(b.iter()).map(|(a, c)| a * c).sum();
                Ok(fixed + random)
            })
            .collect()
    }

    /// Predictions on the original response scale.
    pub fn predict(&self, rows: &PanelDataset, transform: &TransformSpec) -> Result<Vec<f64>> {
        Ok(self
            .predict_linear(rows)?
            .into_iter()
            .map(|v| transform.inverse_response(v))
            .collect())
    }

    pub fn report_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "linear mixed model ({})", self.criterion);
        let _ = writeln!(s, "observations: {}  subjects: {}", self.n_obs, self.n_subjects);
        let _ = writeln!(s, "log-likelihood: {:.4}", self.loglik);
        let _ = writeln!(s, "AIC: {:.4}  (parameters: {})", self.aic, self.n_params);
        let _ = writeln!(s, "\nfixed effects:");
        let _ = writeln!(s, "  {:<24} {:>14} {:>14}", "term", "estimate", "std_error");
        for ((name, b), se) in self.fixed_names.iter().zip(self.beta.iter()).zip(self.beta_se.iter()) {
            let _ = writeln!(s, "  {name:<24} {b:>14.6} {se:>14.6}");
        }
        let _ = writeln!(s, "\nvariance components:");
        for (k, t) in self.random_terms.iter().enumerate() {
            let v = self.theta.d[(k, k)];
            let _ = writeln!(s, "  sd({:<20}) {:>14.6}  (variance {:.6e})", t.name(), v.sqrt(), v);
        }
        if let Some(rho) = self.theta.rho() {
            let _ = writeln!(s, "  corr(random effects)   {rho:>14.6}");
        }
        let _ = writeln!(
            s,
            "  sd(residual)           {:>14.6}  (variance {:.6e})",
            self.theta.sigma_sq.sqrt(),
            self.theta.sigma_sq
        );
        let _ = writeln!(
            s,
            "\nconverged: {} (iterations {}, gradient norm {:.3e})",
            self.converged, self.iterations, self.grad_norm
        );
        if !self.boundary.is_empty() {
            let names: Vec<String> = self.boundary.iter().map(|&k| self.random_terms[k].name()).collect();
            let _ = writeln!(s, "boundary estimates: {}", names.join(", "));
        }
        s
    }

    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("model".to_string(), "lmm".to_string()),
            ("criterion".into(), self.criterion.to_string()),
            ("n_obs".into(), self.n_obs.to_string()),
            ("n_subjects".into(), self.n_subjects.to_string()),
            ("n_params".into(), self.n_params.to_string()),
            ("loglik".into(), self.loglik.to_string()),
            ("aic".into(), self.aic.to_string()),
            ("converged".into(), self.converged.to_string()),
            ("grad_norm".into(), self.grad_norm.to_string()),
        ];
        for ((name, b), se) in self.fixed_names.iter().zip(self.beta.iter()).zip(self.beta_se.iter()) {
            kv.push((format!("beta.{name}"), b.to_string()));
            kv.push((format!("se.{name}"), se.to_string()));
        }
        kv.push(("sigma_b0_sq".into(), self.theta.sigma_b0_sq().to_string()));
        if let Some(v) = self.theta.sigma_b1_sq() {
            kv.push(("sigma_b1_sq".into(), v.to_string()));
        }
        if let Some(r) = self.theta.rho() {
            kv.push(("rho".into(), r.to_string()));
        }
        kv.push(("sigma_sq".into(), self.theta.sigma_sq.to_string()));
        kv.push((
            "boundary".into(),
            self.boundary.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
        ));
        kv
    }
}
