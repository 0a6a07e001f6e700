use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::numeric::seeded_rng;
use crate::panel::{mean_sd, PanelDataset, Term};

pub const LASSO_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 100_000;
const ZERO_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaRule {
    #[default]
    CvMin,
    Cv1se,
}

impl fmt::Display for LambdaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LambdaRule::CvMin => "cv_min",
            LambdaRule::Cv1se => "cv_1se",
        })
    }
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Gram form of the problem: `G = XᵀX/n`, `c = Xᵀy/n`.
struct Gram {
    g: DMatrix<f64>,
    c: DVector<f64>,
    /// Columns equal (up to sign) to an earlier column. The objective only
    /// sees the sum of their coefficients, so they are held at zero and the
    /// sparsest of the equivalent minimizers is returned.
    aliased: Vec<bool>,
}

impl Gram {
    fn new(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        let n = x.nrows() as f64;
        let g = x.transpose() * x / n;
        let p = g.nrows();
        let aliased = (0..p)
            .map(|j| {
                (0..j).any(|k| {
                    let scale = (g[(j, j)] * g[(k, k)]).sqrt();
                    scale > 0.0 && g[(j, k)].abs() >= scale * (1.0 - 1e-12)
                })
            })
            .collect();
        Self {
            g,
            c: x.transpose() * y / n,
            aliased,
        }
    }

    fn lambda_max(&self) -> f64 {
        self.c.amax()
    }

    /// Cyclic coordinate descent from `beta` until no coefficient moves
    /// by more than the tolerance.
    fn solve(&self, lambda: f64, beta: &mut DVector<f64>) {
        let p = beta.len();
        // grad_j = c_j − Σ_k G_jk β_k, maintained incrementally
        let mut grad = &self.c - &self.g * &*beta;
        for _ in 0..MAX_SWEEPS {
            let mut max_change = 0.0f64;
            for j in 0..p {
                let gjj = self.g[(j, j)];
                if gjj <= 0.0 || self.aliased[j] {
                    continue;
                }
                let old = beta[j];
                // gradients on the threshold up to round-off stay at zero
                let z = grad[j] + gjj * old;
                let new = if z.abs() <= lambda + ZERO_SLACK { 0.0 } else { soft_threshold(z, lambda) / gjj };
                let delta = new - old;
                if delta != 0.0 {
                    beta[j] = new;
                    for k in 0..p {
                        grad[k] -= self.g[(k, j)] * delta;
                    }
                    max_change = max_change.max(delta.abs());
                }
            }
            if max_change < LASSO_TOL {
                break;
            }
        }
    }
}

fn check_standardized(x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() < 2 {
        return Err(Error::InvalidInput("lasso needs at least two rows".into()));
    }
    for j in 0..x.ncols() {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        let (m, sd) = mean_sd(&col);
        if m.abs() > 1e-6 || (sd - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "column {j} is not standardized (mean {m:.3e}, sd {sd:.6})"
            )));
        }
    }
    Ok(())
}

/// Minimizes `(1/2n)‖y − Xβ‖² + λ‖β‖₁` for standardized columns of `X`.
pub fn lasso_fit(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be non-negative, got {lambda}")));
    }
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("X has {} rows, y has {}", x.nrows(), y.len())));
    }
    check_standardized(x)?;
    let gram = Gram::new(x, y);
    let mut beta = DVector::zeros(x.ncols());
    gram.solve(lambda, &mut beta);
    Ok(beta)
}

/// `max_j |X_jᵀy| / n`, the smallest penalty with an all-zero solution.
pub fn lambda_max(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    Gram::new(x, y).lambda_max()
}

#[derive(Debug, Clone)]
pub struct LassoPath {
    pub names: Vec<String>,
    pub terms: Vec<Term>,
    /// Descending.
    pub lambda_grid: Vec<f64>,
    /// One row per grid value, on the standardized scale.
    pub coefficients: DMatrix<f64>,
    pub cv_mean: Vec<f64>,
    pub cv_se: Vec<f64>,
    pub rule: LambdaRule,
    pub chosen: usize,
    pub selected: Vec<Term>,
}

impl LassoPath {
    pub fn lambda(&self) -> f64 {
        self.lambda_grid[self.chosen]
    }

    pub fn report_text(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "lasso path: {} predictors, {} penalties", self.names.len(), self.lambda_grid.len());
        let _ = writeln!(
            s,
            "chosen by {}: lambda = {:.6e} (cv mse {:.6}, se {:.6})",
            self.rule, self.lambda(), self.cv_mean[self.chosen], self.cv_se[self.chosen]
        );
        let _ = writeln!(s, "  {:<24} {:>14}", "term", "coefficient");
        for (k, name) in self.names.iter().enumerate() {
            let _ = writeln!(s, "  {name:<24} {:>14.6}", self.coefficients[(self.chosen, k)]);
        }
        let names: Vec<String> = self.selected.iter().map(|t| t.name()).collect();
        let _ = writeln!(s, "selected: {}", names.join(", "));
        s
    }
}

/// Standardization of design columns, fitted on one set of rows.
struct Scaler {
    mean: Vec<f64>,
    sd: Vec<f64>,
    y_mean: f64,
}

impl Scaler {
    fn fit(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<Self> {
        let mut mean = Vec::with_capacity(x.ncols());
        let mut sd = Vec::with_capacity(x.ncols());
        for j in 0..x.ncols() {
            let col: Vec<f64> = x.column(j).iter().copied().collect();
            let (m, s) = mean_sd(&col);
            if !(s > 0.0) {
                return Err(Error::ZeroVariance(names[j].clone()));
            }
            mean.push(m);
            sd.push(s);
        }
        Ok(Self { mean, sd, y_mean: y.mean() })
    }

    fn x(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.sd[j])
    }
}

fn term_matrix(data: &PanelDataset, terms: &[Term]) -> (DMatrix<f64>, DVector<f64>) {
    let rows = data.rows();
    let x = DMatrix::from_fn(rows.len(), terms.len(), |i, j| terms[j].eval(&rows[i]));
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.total_updrs));
    (x, y)
}

/// Log-spaced grid of `points` values from `lmax` down `decades` decades.
pub fn lambda_grid(lmax: f64, points: usize, decades: f64) -> Vec<f64> {
    (0..points)
        .map(|k| lmax * 10f64.powf(-decades * k as f64 / (points - 1).max(1) as f64))
        .collect()
}

#[derive(Debug, Clone)]
pub struct LassoOptions {
    pub folds: usize,
    pub rule: LambdaRule,
    pub grid_points: usize,
    pub decades: f64,
    /// Shuffles subjects before assigning folds.
    pub seed: u64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            folds: 10,
            rule: LambdaRule::CvMin,
            grid_points: 100,
            decades: 4.0,
            seed: 0,
        }
    }
}

/// Cross-validated lasso on the fixed-effects linear model, with folds
/// grouped by subject. The response is `total_updrs` as stored.
pub fn lasso_select(data: &PanelDataset, candidates: &[Term], opts: &LassoOptions) -> Result<LassoPath> {
    if opts.folds < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {}", opts.folds)));
    }
    let terms: Vec<Term> = candidates.iter().copied().filter(|t| *t != Term::Intercept).collect();
    if terms.is_empty() {
        return Err(Error::InvalidInput("no candidate terms".into()));
    }
    let subjects = data.subjects();
    if subjects.len() < opts.folds {
        return Err(Error::InvalidInput(format!(
            "{} subjects cannot fill {} folds",
            subjects.len(),
            opts.folds
        )));
    }
    let names: Vec<String> = terms.iter().map(|t| t.name()).collect();
    let (x, y) = term_matrix(data, &terms);
    let scaler = Scaler::fit(&x, &y, &names)?;
    let xs = scaler.x(&x);
    let yc = y.add_scalar(-scaler.y_mean);
    let full = Gram::new(&xs, &yc);
    let grid = lambda_grid(full.lambda_max(), opts.grid_points, opts.decades);

    let mut order: Vec<usize> = (0..subjects.len()).collect();
    order.shuffle(&mut seeded_rng(opts.seed));
    let mut fold_of_group = vec![0usize; subjects.len()];
    for (rank, &g) in order.iter().enumerate() {
        fold_of_group[g] = rank % opts.folds;
    }
    let mut row_fold = vec![0usize; data.len()];
    for (g, range) in data.groups().iter().enumerate() {
        for r in range.clone() {
            row_fold[r] = fold_of_group[g];
        }
    }

    let mut errors = vec![vec![0.0; opts.folds]; grid.len()];
    for fold in 0..opts.folds {
        let train: Vec<usize> = (0..data.len()).filter(|&r| row_fold[r] != fold).collect();
        let test: Vec<usize> = (0..data.len()).filter(|&r| row_fold[r] == fold).collect();
        let xt = x.select_rows(&train);
        let yt = y.select_rows(&train);
        if yt.iter().all(|&v| v == yt[0]) {
            return Err(Error::InvalidInput(format!("fold {fold} has a constant response")));
        }
        let sc = Scaler::fit(&xt, &yt, &names)?;
        let gram = Gram::new(&sc.x(&xt), &yt.add_scalar(-sc.y_mean));
        let xv = sc.x(&x.select_rows(&test));
        let yv = y.select_rows(&test);
        let mut beta = DVector::zeros(terms.len());
        for (k, &lam) in grid.iter().enumerate() {
            gram.solve(lam, &mut beta);
            let pred = (&xv * &beta).add_scalar(sc.y_mean);
            errors[k][fold] = (pred - &yv).norm_squared() / yv.len() as f64;
        }
    }
    let kf = opts.folds as f64;
    let cv_mean: Vec<f64> = errors.iter().map(|e| e.iter().sum::<f64>() / kf).collect();
    let cv_se: Vec<f64> = errors
        .iter()
        .zip(&cv_mean)
        .map(|(e, m)| (e.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (kf - 1.0) / kf).sqrt())
        .collect();
    let best = (0..grid.len())
        .min_by(|&a, &b| cv_mean[a].total_cmp(&cv_mean[b]))
        .unwrap_or(0);
    let chosen = match opts.rule {
        LambdaRule::CvMin => best,
        // grid is descending, so the first index within one SE is the largest penalty
        LambdaRule::Cv1se => (0..grid.len())
            .find(|&k| cv_mean[k] <= cv_mean[best] + cv_se[best])
            .unwrap_or(best),
    };

    let mut coefficients = DMatrix::zeros(grid.len(), terms.len());
    let mut beta = DVector::zeros(terms.len());
    for (k, &lam) in grid.iter().enumerate() {
        full.solve(lam, &mut beta);
        coefficients.row_mut(k).copy_from(&beta.transpose());
    }
    let selected = terms
        .iter()
        .enumerate()
        .filter(|&(j, _)| coefficients[(chosen, j)] != 0.0)
        .map(|(_, t)| *t)
        .collect();
    Ok(LassoPath {
        names,
        terms,
        lambda_grid: grid,
        coefficients,
        cv_mean,
        cv_se,
        rule: opts.rule,
        chosen,
        selected,
    })
}
