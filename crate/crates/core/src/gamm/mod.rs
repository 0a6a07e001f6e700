//! Additive mixed model: linear terms, a penalized cubic regression
//! spline in `test_time`, and per-subject random effects. The smoothing
//! parameter is chosen by REML.

mod basis;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

pub use basis::{build_basis, constraint_null_space, SplineBasis};

use crate::error::{Error, Result};
use crate::lmm::engine::Optimum;
use crate::lmm::{Criterion, FitControl, MixedProblem, VarianceComponents};
use crate::numeric::linalg::psd_cholesky;
use crate::numeric::optimize::golden_section;
use crate::panel::{design_matrices, fixed_row, random_row, Column, Design, PanelDataset, Term, TransformSpec};

pub const GRID_POINTS: usize = 20;
pub const LOG10_LAMBDA_RANGE: (f64, f64) = (-6.0, 6.0);

#[derive(Debug, Clone, PartialEq)]
pub struct GammSpec {
    /// Linear fixed terms; the intercept is implicit.
    pub linear: Vec<Term>,
    pub random: Vec<Term>,
    pub k: usize,
}

impl Default for GammSpec {
    fn default() -> Self {
        Self {
            linear: vec![Term::Column(Column::Age), Term::Column(Column::Hnr)],
            random: vec![Term::Intercept, Term::Column(Column::TestTime)],
            k: 10,
        }
    }
}

/// Design of the mixed model with the centered spline block appended to
/// the linear columns.
#[derive(Debug, Clone)]
pub struct GammDesign {
    pub spec: GammSpec,
    pub basis: SplineBasis,
    /// Maps centered coefficients to knot values (`K x (K−1)`).
    pub constraint: DMatrix<f64>,
    pub design: Design,
    /// Scaled roughness penalty embedded in the full fixed-effect block.
    pub penalty: DMatrix<f64>,
    /// Index of the first spline column.
    pub spline_start: usize,
}

impl GammDesign {
    pub fn build(data: &PanelDataset, spec: &GammSpec) -> Result<Self> {
        let times = data.column(Column::TestTime);
        let basis = build_basis(&times, spec.k)?;
        let raw = basis.design(&times);
        let colsum = DVector::from_iterator(raw.ncols(), raw.column_iter().map(|c| c.sum()));
        let constraint = constraint_null_space(&colsum);
        let centered = &raw * &constraint;
        let sc = constraint.transpose() * &basis.penalty * &constraint;
        // scale the penalty so lambda is comparable across time units
        let x_norm = centered.row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max);
        let s_norm = sc.column_iter().map(|c| c.abs().sum()).fold(0.0, f64::max);
        let sc = sc * (x_norm * x_norm / s_norm);

        let mut design = design_matrices(data, &spec.linear, &spec.random)?;
        let spline_start = design.n_fixed();
        let m = constraint.ncols();
        let names: Vec<String> = (1..=m).map(|j| format!("s(test_time).{j}")).collect();
        let b = &basis;
        let z = &constraint;
        design.append_columns(data, &names, |row| (z.transpose() * b.eval(row.test_time)).iter().copied().collect());

        let p = design.n_fixed();
        let mut penalty = DMatrix::zeros(p, p);
        penalty.view_mut((spline_start, spline_start), (m, m)).copy_from(&((&sc + sc.transpose()) * 0.5));
        Ok(Self { spec: spec.clone(), basis, constraint, design, penalty, spline_start })
    }

    pub fn n_smooth(&self) -> usize {
        self.constraint.ncols()
    }

    pub fn penalty_at(&self, lambda: f64) -> DMatrix<f64> {
        &self.penalty * lambda
    }

    pub fn problem(&self, lambda: f64) -> Result<MixedProblem> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidInput(format!("smoothing parameter must be finite and >= 0, got {lambda}")));
        }
        MixedProblem::new(&self.design, Some(self.penalty_at(lambda)))
    }

    /// Centered spline row at time `t`.
    pub fn spline_row(&self, t: f64) -> DVector<f64> {
        self.constraint.transpose() * self.basis.eval(t)
    }

    /// Trace of the spline block of `(XᵀV⁻¹X + λS)⁻¹ XᵀV⁻¹X`.
    pub fn edf_from(&self, h_inv: &DMatrix<f64>, xvx: &DMatrix<f64>) -> f64 {
        let s = self.spline_start;
        let m = self.n_smooth();
        (s..s + m).map(|j| h_inv.row(j).dot(&xvx.column(j).transpose())).sum()
    }
}

/// Penalized GLS at fixed variance components.
#[derive(Debug, Clone)]
pub struct InnerFit {
    /// Intercept and linear terms.
    pub beta: DVector<f64>,
    /// Centered spline coefficients.
    pub alpha_centered: DVector<f64>,
    /// Spline values at the knots.
    pub alpha: DVector<f64>,
    pub blups: BTreeMap<u32, DVector<f64>>,
    /// `ℓ(β, α) − (λ/2) αᵀSα` at the given components.
    pub penalized_loglik: f64,
    pub edf: f64,
}

pub fn fit_gamm(design: &GammDesign, lambda: f64, theta: &VarianceComponents) -> Result<InnerFit> {
    theta.validate()?;
    let problem = design.problem(lambda)?;
    let l = psd_cholesky(&theta.d);
    let eval = problem.evaluate(&l, theta.sigma_sq, Criterion::Ml)?;
    let post = problem.posterior(&l, theta.sigma_sq, &eval.beta)?;
    let s = design.spline_start;
    let alpha_centered = eval.beta.rows(s, design.n_smooth()).into_owned();
    Ok(InnerFit {
        beta: eval.beta.rows(0, s).into_owned(),
        alpha: &design.constraint * &alpha_centered,
        alpha_centered,
        blups: problem.subjects().iter().copied().zip(post.into_iter().map(|(b, _)| b)).collect(),
        penalized_loglik: eval.value,
        edf: design.edf_from(&eval.h_inv, &eval.xvx),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct GridPoint {
    pub lambda: f64,
    /// `−∞` when the variance components could not be fitted.
    pub reml: f64,
    pub edf: f64,
}

#[derive(Debug, Clone)]
pub struct GammFit {
    pub spec: GammSpec,
    pub basis: SplineBasis,
    pub constraint: DMatrix<f64>,
    pub linear_names: Vec<String>,
    pub beta_linear: DVector<f64>,
    pub alpha_centered: DVector<f64>,
    pub alpha: DVector<f64>,
    pub lambda: f64,
    /// True when the REML optimum sat at the end of the search range.
    pub lambda_at_boundary: bool,
    pub theta: VarianceComponents,
    pub edf: f64,
    pub reml: f64,
    /// Unpenalized ML log-likelihood of the penalized-ML refit at `lambda`.
    pub loglik: f64,
    pub aic: f64,
    pub blups: BTreeMap<u32, DVector<f64>>,
    pub grid: Vec<GridPoint>,
    pub n_obs: usize,
    pub n_subjects: usize,
}

/// REML optimum over the variance components at a fixed `lambda`.
pub fn reml_at(
    design: &GammDesign,
    lambda: f64,
    control: &FitControl,
    start: Option<&VarianceComponents>,
) -> Result<Optimum> {
    design.problem(lambda)?.maximize(Criterion::Reml, control, start)
}

fn log_grid() -> Vec<f64> {
    let (lo, hi) = LOG10_LAMBDA_RANGE;
    (0..GRID_POINTS).map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64).collect()
}

/// Chooses `lambda` by REML (grid scan over `log λ`, then golden-section
/// refinement) and fits the model there.
pub fn select_lambda(design: &GammDesign, control: &FitControl) -> Result<GammFit> {
    let logs = log_grid();
    let results: Vec<Option<Optimum>> = logs
        .par_iter()
        .map(|&lg| reml_at(design, 10f64.powf(lg), control, None).ok())
        .collect();
    let grid: Vec<GridPoint> = logs
        .iter()
        .zip(&results)
        .map(|(&lg, r)| GridPoint {
            lambda: 10f64.powf(lg),
            reml: r.as_ref().map_or(f64::NEG_INFINITY, |o| o.eval.value),
            edf: r.as_ref().map_or(f64::NAN, |o| design.edf_from(&o.eval.h_inv, &o.eval.xvx)),
        })
        .collect();
    let best = (0..grid.len())
        .filter(|&i| grid[i].reml.is_finite())
        .max_by(|&a, &b| grid[a].reml.total_cmp(&grid[b].reml))
        .ok_or_else(|| Error::InvalidInput("REML could not be evaluated at any smoothing parameter".into()))?;
    let warm = results[best].as_ref().map(|o| o.theta.clone());

    let at_boundary = best == 0 || best == grid.len() - 1;
    let (log_lambda, opt) = if at_boundary {
        log::warn!("REML optimum at the end of the smoothing-parameter range (lambda = {:.3e})", grid[best].lambda);
        (logs[best], results[best].clone().expect("finite grid point has a fit"))
    } else {
        let objective = |lg: f64| match reml_at(design, 10f64.powf(lg), control, warm.as_ref()) {
            Ok(o) => -o.eval.value,
            Err(_) => f64::INFINITY,
        };
        let (lg, _) = golden_section(objective, logs[best - 1], logs[best + 1], 1e-3, 60);
        match reml_at(design, 10f64.powf(lg), control, warm.as_ref()) {
            Ok(o) if o.eval.value >= grid[best].reml => (lg, o),
            _ => (logs[best], results[best].clone().expect("finite grid point has a fit")),
        }
    };
    let lambda = 10f64.powf(log_lambda);
    finish(design, lambda, at_boundary, opt, grid, control)
}

/// Fits at a given `lambda` with variance components by REML.
pub fn fit_at_lambda(design: &GammDesign, lambda: f64, control: &FitControl) -> Result<GammFit> {
    let opt = reml_at(design, lambda, control, None)?;
    finish(design, lambda, false, opt, Vec::new(), control)
}

fn finish(
    design: &GammDesign,
    lambda: f64,
    lambda_at_boundary: bool,
    opt: Optimum,
    grid: Vec<GridPoint>,
    control: &FitControl,
) -> Result<GammFit> {
    let inner = fit_gamm(design, lambda, &opt.theta)?;
    // information criterion from the penalized ML refit
    let problem = design.problem(lambda)?;
    let ml = problem.maximize(Criterion::Ml, control, Some(&opt.theta))?;
    let pen = ml.eval.beta.dot(&(design.penalty_at(lambda) * &ml.eval.beta));
    let loglik = ml.eval.value + 0.5 * pen;
    let edf_ml = design.edf_from(&ml.eval.h_inv, &ml.eval.xvx);
    let q = design.design.n_random();
    let k = design.spline_start as f64 + edf_ml + (q * (q + 1) / 2 + 1) as f64;
    Ok(GammFit {
        spec: design.spec.clone(),
        basis: design.basis.clone(),
        constraint: design.constraint.clone(),
        linear_names: design.design.fixed_names[..design.spline_start].to_vec(),
        beta_linear: inner.beta,
        alpha_centered: inner.alpha_centered,
        alpha: inner.alpha,
        lambda,
        lambda_at_boundary,
        theta: opt.theta,
        edf: inner.edf,
        reml: opt.eval.value,
        loglik,
        aic: -2.0 * loglik + 2.0 * k,
        blups: inner.blups,
        grid,
        n_obs: design.design.n_obs(),
        n_subjects: design.design.blocks.len(),
    })
}

impl GammFit {
    /// Centered smooth `f̂(t)`, linear beyond the knot range.
    pub fn smooth(&self, t: f64) -> f64 {
        self.basis.eval(t).dot(&self.alpha)
    }

    /// `points` evenly spaced `(t, f̂(t))` pairs over the knot range.
    pub fn smooth_curve(&self, points: usize) -> Vec<(f64, f64)> {
        let (lo, hi) = self.basis.boundary();
        let n = points.max(2);
        (0..n)
            .map(|i| {
                let t = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                (t, self.smooth(t))
            })
            .collect()
    }

    pub fn write_smooth_csv<W: Write>(&self, mut out: W, points: usize) -> Result<()> {
        writeln!(out, "test_time,smooth")?;
        for (t, f) in self.smooth_curve(points) {
            writeln!(out, "{t},{f}")?;
        }
        Ok(())
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.linear_names.iter().position(|n| n == name).map(|k| self.beta_linear[k])
    }

    pub fn predict_linear(&self, rows: &PanelDataset) -> Result<Vec<f64>> {
        rows.rows()
            .iter()
            .map(|row| {
                let b = self.blups.get(&row.subject).ok_or(Error::UnknownSubject(row.subject))?;
                let x = fixed_row(row, &self.spec.linear);
                let z = random_row(row, &self.spec.random);
                let fixed: f64 = x.iter().zip(self.beta_linear.iter()).map(|(a, c)| a * c).sum();
                let random: f64 = z.iter().zip(b.iter()).map(|(a, c)| a * c).sum();
                Ok(fixed + self.smooth(row.test_time) + random)
            })
            .collect()
    }

    pub fn predict(&self, rows: &PanelDataset, transform: &TransformSpec) -> Result<Vec<f64>> {
        Ok(self
            .predict_linear(rows)?
            .into_iter()
            .map(|v| transform.inverse_response(v))
            .collect())
    }

    pub fn report_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "additive mixed model (REML smoothing)");
        let _ = writeln!(s, "observations: {}  subjects: {}", self.n_obs, self.n_subjects);
        let _ = writeln!(s, "linear terms:");
        for (n, b) in self.linear_names.iter().zip(self.beta_linear.iter()) {
            let _ = writeln!(s, "  {n:<24} {b:>14.6}");
        }
        let _ = writeln!(s, "smooth: s(test_time), {} knots", self.basis.num_basis());
        let _ = writeln!(s, "  lambda {:.6e}{}", self.lambda, if self.lambda_at_boundary { " (at range limit)" } else { "" });
        let _ = writeln!(s, "  edf    {:.4}", self.edf);
        let _ = writeln!(s, "random effects covariance:");
        for i in 0..self.theta.dim() {
            let row: Vec<String> = (0..self.theta.dim()).map(|j| format!("{:>12.6}", self.theta.d[(i, j)])).collect();
            let _ = writeln!(s, "  {}", row.join(" "));
        }
        let _ = writeln!(s, "residual variance {:.6}", self.theta.sigma_sq);
        let _ = writeln!(s, "REML criterion {:.4}", self.reml);
        let _ = writeln!(s, "ML log-likelihood {:.4}  AIC {:.4}", self.loglik, self.aic);
        s
    }

    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("lambda".to_string(), format!("{:.10e}", self.lambda)),
            ("edf".to_string(), format!("{:.6}", self.edf)),
            ("reml".to_string(), format!("{:.6}", self.reml)),
            ("loglik".to_string(), format!("{:.6}", self.loglik)),
            ("aic".to_string(), format!("{:.6}", self.aic)),
            ("sigma_sq".to_string(), format!("{:.10}", self.theta.sigma_sq)),
        ];
        for (n, b) in self.linear_names.iter().zip(self.beta_linear.iter()) {
            kv.push((format!("beta.{n}"), format!("{b:.10}")));
        }
        kv
    }
}
