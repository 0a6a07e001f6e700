//! Likelihood evaluation and optimization for (optionally penalized)
//! linear mixed models, working from per-subject sufficient statistics.
//!
//! With `D = L Lᵀ`, `W_i = Z_i L` and `M_i = σ² I + W_iᵀ W_i`, the
//! Woodbury identity gives `V_i⁻¹ = (I − W_i M_i⁻¹ W_iᵀ) / σ²` and
//! `log|V_i| = (n_i − q) log σ² + log|M_i|`, so every quantity below is
//! assembled from `XᵀX`, `XᵀZ`, `ZᵀZ`, `Xᵀy`, `Zᵀy` and `yᵀy`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lmm::variance::{Criterion, VarianceComponents};
use crate::numeric::linalg::{psd_cholesky, Cholesky};
use crate::numeric::optimize::{bfgs, BfgsOptions};
use crate::panel::Design;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitControl {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub em_iterations: usize,
    pub variance_floor: f64,
}

impl Default for FitControl {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-6,
            em_iterations: 20,
            variance_floor: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
struct SubjectStats {
    n: usize,
    xtx: DMatrix<f64>,
    xtz: DMatrix<f64>,
    ztz: DMatrix<f64>,
    xty: DVector<f64>,
    zty: DVector<f64>,
    yty: f64,
}

/// Sufficient statistics of a design plus an optional quadratic penalty
/// on the fixed effects.
#[derive(Debug, Clone)]
pub struct MixedProblem {
    subjects: Vec<u32>,
    stats: Vec<SubjectStats>,
    p: usize,
    q: usize,
    n: usize,
    penalty: Option<DMatrix<f64>>,
    penalty_logdet: f64,
    penalty_rank: usize,
}

/// Criterion value and everything derived from one evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub beta: DVector<f64>,
    /// `(XᵀV⁻¹X + S)⁻¹`.
    pub h_inv: DMatrix<f64>,
    /// `XᵀV⁻¹X` without the penalty.
    pub xvx: DMatrix<f64>,
    /// `∂ℓ/∂D` as a symmetric matrix (`dℓ = tr(G dD)`).
    pub grad_d: DMatrix<f64>,
    pub grad_sigma_sq: f64,
}

/// Per-subject Woodbury pieces at a given `(L, σ²)`.
struct Local {
    m_inv: DMatrix<f64>,
    /// `Lᵀ ZᵀZ L`.
    a: DMatrix<f64>,
    /// `XᵀZ L`.
    xw: DMatrix<f64>,
    /// `Lᵀ Zᵀy`.
    yw: DVector<f64>,
    logdet_m: f64,
}

impl MixedProblem {
    pub fn new(design: &Design, penalty: Option<DMatrix<f64>>) -> Result<Self> {
        let p = design.n_fixed();
        let q = design.n_random();
        let mut stats = Vec::with_capacity(design.blocks.len());
        for b in &design.blocks {
            if b.x.ncols() != p || b.z.ncols() != q || b.x.nrows() != b.y.len() || b.z.nrows() != b.y.len() {
                return Err(Error::Shape(format!("design block for subject {} is inconsistent", b.subject)));
            }
            stats.push(SubjectStats {
                n: b.y.len(),
                xtx: b.x.transpose() * &b.x,
                xtz: b.x.transpose() * &b.z,
                ztz: b.z.transpose() * &b.z,
                xty: b.x.transpose() * &b.y,
                zty: b.z.transpose() * &b.y,
                yty: b.y.dot(&b.y),
            });
        }
        let (penalty_logdet, penalty_rank) = match &penalty {
            None => (0.0, 0),
            Some(s) => {
                if s.shape() != (p, p) {
                    return Err(Error::Shape(format!("penalty is {}x{}, expected {p}x{p}", s.nrows(), s.ncols())));
                }
                let eig = s.clone().symmetric_eigen();
                let top = eig.eigenvalues.amax();
                let pos: Vec<f64> = eig.eigenvalues.iter().copied().filter(|&e| e > 1e-10 * top).collect();
                (pos.iter().map(|e| e.ln()).sum(), pos.len())
            }
        };
        Ok(Self {
            subjects: design.subjects(),
            n: stats.iter().map(|s| s.n).sum(),
            stats,
            p,
            q,
            penalty,
            penalty_logdet,
            penalty_rank,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n
    }

    pub fn n_fixed(&self) -> usize {
        self.p
    }

    pub fn n_random(&self) -> usize {
        self.q
    }

    pub fn subjects(&self) -> &[u32] {
        &self.subjects
    }

    fn local(&self, s: &SubjectStats, l: &DMatrix<f64>, sigma_sq: f64) -> Result<Local> {
        let a = l.transpose() * &s.ztz * l;
        let m = &a + DMatrix::identity(self.q, self.q) * sigma_sq;
        let ch = Cholesky::new(&m)?;
        Ok(Local {
            m_inv: ch.inverse(),
            xw: &s.xtz * l,
            yw: l.transpose() * &s.zty,
            logdet_m: ch.logdet(),
            a,
        })
    }

    /// Penalized GLS at `(L, σ²)`, plus the criterion and its gradient
    /// with respect to `D` and `σ²`.
    pub fn evaluate(&self, l: &DMatrix<f64>, sigma_sq: f64, criterion: Criterion) -> Result<Evaluation> {
        let (p, q) = (self.p, self.q);
        let locals = self
            .stats
            .iter()
            .map(|s| self.local(s, l, sigma_sq))
            .collect::<Result<Vec<_>>>()?;

        let mut xvx = DMatrix::zeros(p, p);
        let mut xvy = DVector::zeros(p);
        let mut yvy = 0.0;
        let mut logdet_v = 0.0;
        for (s, lc) in self.stats.iter().zip(&locals) {
            let xw_minv = &lc.xw * &lc.m_inv;
            xvx += (&s.xtx - &xw_minv * lc.xw.transpose()) / sigma_sq;
            xvy += (&s.xty - &xw_minv * &lc.yw) / sigma_sq;
            yvy += (s.yty - lc.yw.dot(&(&lc.m_inv * &lc.yw))) / sigma_sq;
            logdet_v += (s.n as f64 - q as f64) * sigma_sq.ln() + lc.logdet_m;
        }
        let h = match &self.penalty {
            Some(sp) => &xvx + sp,
            None => xvx.clone(),
        };
        let h = (&h + h.transpose()) * 0.5;
        let h_ch = Cholesky::new(&h).map_err(|_| {
            Error::Singular("fixed-effect normal equations are singular (collinear columns?)".into())
        })?;
        let beta = h_ch.solve_vec(&xvy);
        let h_inv = h_ch.inverse();
        let quad = yvy - 2.0 * beta.dot(&xvy) + beta.dot(&(&xvx * &beta));
        let pen = self.penalty.as_ref().map_or(0.0, |sp| beta.dot(&(sp * &beta)));
        let n = self.n as f64;
        let value = match criterion {
            Criterion::Ml => -0.5 * (logdet_v + quad + pen + n * (2.0 * PI).ln()),
            Criterion::Reml => {
                let null_dim = (p - self.penalty_rank) as f64;
                -0.5 * (logdet_v + quad + pen + h_ch.logdet() - self.penalty_logdet + (n - null_dim) * (2.0 * PI).ln())
            }
        };

        let reml = criterion == Criterion::Reml;
        let mut grad_d = DMatrix::zeros(q, q);
        let mut tr_vinv = 0.0;
        let mut rv2r = 0.0;
        let mut xv2x = DMatrix::zeros(p, p);
        for (s, lc) in self.stats.iter().zip(&locals) {
            // Zᵀ V⁻¹ (·) blocks
            let ztz_l = &s.ztz * l;
            let zvz = (&s.ztz - &ztz_l * &lc.m_inv * ztz_l.transpose()) / sigma_sq;
            let zvx = (s.xtz.transpose() - &ztz_l * &lc.m_inv * lc.xw.transpose()) / sigma_sq;
            let zvy = (&s.zty - &ztz_l * &lc.m_inv * &lc.yw) / sigma_sq;
            let u = &zvy - &zvx * &beta;
            let mut g = zvz - &u * u.transpose();
            if reml {
                g -= &zvx * &h_inv * zvx.transpose();
            }
            grad_d -= g * 0.5;

            tr_vinv += (s.n as f64 - (&lc.m_inv * &lc.a).trace()) / sigma_sq;
            let wr = &lc.yw - lc.xw.transpose() * &beta;
            let rtr = s.yty - 2.0 * beta.dot(&s.xty) + beta.dot(&(&s.xtx * &beta));
            let mw = &lc.m_inv * &wr;
            rv2r += (rtr - 2.0 * wr.dot(&mw) + mw.dot(&(&lc.a * &mw))) / (sigma_sq * sigma_sq);
            if reml {
                let xm = &lc.xw * &lc.m_inv;
                xv2x += (&s.xtx - &xm * lc.xw.transpose() * 2.0 + &xm * &lc.a * xm.transpose())
                    / (sigma_sq * sigma_sq);
            }
        }
        let mut tr_p = tr_vinv;
        if reml {
            tr_p -= (&h_inv * &xv2x).trace();
        }
        let grad_sigma_sq = -0.5 * (tr_p - rv2r);
        Ok(Evaluation {
            value,
            beta,
            h_inv,
            xvx,
            grad_d,
            grad_sigma_sq,
        })
    }

    /// Conditional means `L M⁻¹ Lᵀ Zᵀ r` and covariances `σ² L M⁻¹ Lᵀ`.
    pub fn posterior(
        &self,
        l: &DMatrix<f64>,
        sigma_sq: f64,
        beta: &DVector<f64>,
    ) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
        self.stats
            .iter()
            .map(|s| {
                let lc = self.local(s, l, sigma_sq)?;
                let wr = &lc.yw - lc.xw.transpose() * beta;
                let lm = l * &lc.m_inv;
                Ok((&lm * wr, &lm * l.transpose() * sigma_sq))
            })
            .collect()
    }

    /// One EM update of `(D, σ²)` with β at its GLS value.
    fn em_step(&self, l: &DMatrix<f64>, sigma_sq: f64, criterion: Criterion) -> Result<(DMatrix<f64>, f64)> {
        let eval = self.evaluate(l, sigma_sq, criterion)?;
        let beta = &eval.beta;
        let post = self.posterior(l, sigma_sq, beta)?;
        let mut d = DMatrix::zeros(self.q, self.q);
        let mut ss = 0.0;
        for (s, (b, var)) in self.stats.iter().zip(&post) {
            d += b * b.transpose() + var;
            let ztr = &s.zty - s.xtz.transpose() * beta;
            let rtr = s.yty - 2.0 * beta.dot(&s.xty) + beta.dot(&(&s.xtx * beta));
            ss += rtr - 2.0 * b.dot(&ztr) + b.dot(&(&s.ztz * b)) + (var * &s.ztz).trace();
        }
        d /= self.stats.len() as f64;
        Ok((d, (ss / self.n as f64).max(1e-300)))
    }

    /// Starting values: OLS residual variance split between the random
    /// effects and the residual, followed by EM iterations.
    fn start(&self, control: &FitControl, criterion: Criterion) -> Result<(DMatrix<f64>, f64)> {
        let mut xtx = DMatrix::zeros(self.p, self.p);
        let mut xty = DVector::zeros(self.p);
        let mut yty = 0.0;
        let mut zsq = DVector::zeros(self.q);
        for s in &self.stats {
            xtx += &s.xtx;
            xty += &s.xty;
            yty += s.yty;
            zsq += s.ztz.diagonal();
        }
        if let Some(sp) = &self.penalty {
            xtx += sp;
        }
        let beta = if self.p > 0 {
            Cholesky::new(&((&xtx + xtx.transpose()) * 0.5))
                .map_err(|_| Error::Singular("fixed-effect columns are collinear".into()))?
                .solve_vec(&xty)
        } else {
            DVector::zeros(0)
        };
        let rss = (yty - beta.dot(&xty)).max(0.0);
        let var = (rss / self.n as f64).max(1e-8);
        let mut d = DMatrix::zeros(self.q, self.q);
        for k in 0..self.q {
            let msq = (zsq[k] / self.n as f64).max(1e-12);
            d[(k, k)] = 0.5 * var / msq;
        }
        let mut sigma_sq = 0.5 * var;
        for _ in 0..control.em_iterations {
            let l = psd_cholesky(&d);
            match self.em_step(&l, sigma_sq, criterion) {
                Ok((dn, sn)) => {
                    d = (&dn + dn.transpose()) * 0.5;
                    sigma_sq = sn.max(control.variance_floor);
                }
                Err(_) => break,
            }
        }
        Ok((d, sigma_sq))
    }
}

/// Maps between `(L, σ²)` and the unconstrained vector
/// `(t_0, l_10, t_1, ..., s)` with `L_jj² = floor + exp(2 t_j)` and
/// `σ² = floor + exp(s)`.
#[derive(Debug, Clone, Copy)]
pub struct Parametrization {
    pub q: usize,
    pub floor: f64,
}

impl Parametrization {
    pub fn len(&self) -> usize {
        self.q * (self.q + 1) / 2 + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_vec(&self, l: &DMatrix<f64>, sigma_sq: f64) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.len());
        for i in 0..self.q {
            for j in 0..=i {
                if i == j {
                    x.push(0.5 * (l[(i, i)].powi(2) - self.floor).max(1e-300).ln());
                } else {
                    x.push(l[(i, j)]);
                }
            }
        }
        x.push((sigma_sq - self.floor).max(1e-300).ln());
        x
    }

    pub fn from_vec(&self, x: &[f64]) -> (DMatrix<f64>, f64) {
        let mut l = DMatrix::zeros(self.q, self.q);
        let mut k = 0;
        for i in 0..self.q {
            for j in 0..=i {
                l[(i, j)] = if i == j {
                    (self.floor + (2.0 * x[k]).exp()).sqrt()
                } else {
                    x[k]
                };
                k += 1;
            }
        }
        (l, self.floor + x[k].exp())
    }

    /// Chain rule from `(∂ℓ/∂D, ∂ℓ/∂σ²)` to the unconstrained vector.
    pub fn gradient(&self, x: &[f64], l: &DMatrix<f64>, grad_d: &DMatrix<f64>, grad_sigma_sq: f64) -> Vec<f64> {
        let gl = grad_d * l * 2.0;
        let mut g = Vec::with_capacity(self.len());
        let mut k = 0;
        for i in 0..self.q {
            for j in 0..=i {
                g.push(if i == j {
                    gl[(i, i)] * (2.0 * x[k]).exp() / l[(i, i)]
                } else {
                    gl[(i, j)]
                });
                k += 1;
            }
        }
        g.push(grad_sigma_sq * x[k].exp());
        g
    }
}

/// Result of maximizing a criterion over the variance components.
#[derive(Debug, Clone)]
pub struct Optimum {
    pub theta: VarianceComponents,
    pub l: DMatrix<f64>,
    pub eval: Evaluation,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    /// Random-effect variances (by index) that ended at the floor.
    pub boundary: Vec<usize>,
    pub residual_at_boundary: bool,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

impl MixedProblem {
    /// Criterion value and unconstrained gradient (of the criterion, not
    /// its negative).
    pub fn value_and_gradient(&self, par: &Parametrization, x: &[f64], criterion: Criterion) -> Result<(f64, Vec<f64>, Evaluation)> {
        let (l, s2) = par.from_vec(x);
        let e = self.evaluate(&l, s2, criterion)?;
        let g = par.gradient(x, &l, &e.grad_d, e.grad_sigma_sq);
        Ok((e.value, g, e))
    }

    /// Maximizes the criterion from an EM warm start (or the supplied
    /// components), then polishes with Newton steps on a
    /// finite-difference Hessian of the analytic gradient.
    pub fn maximize(
        &self,
        criterion: Criterion,
        control: &FitControl,
        start: Option<&VarianceComponents>,
    ) -> Result<Optimum> {
        if self.stats.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "mixed model needs at least 2 subjects, got {}",
                self.stats.len()
            )));
        }
        let par = Parametrization { q: self.q, floor: control.variance_floor };
        let (d0, s0) = match start {
            Some(t) if t.dim() == self.q => (t.d.clone(), t.sigma_sq.max(2.0 * control.variance_floor)),
            _ => self.start(control, criterion)?,
        };
        let mut d0 = d0;
        for k in 0..self.q {
            d0[(k, k)] = d0[(k, k)].max(2.0 * control.variance_floor);
        }
        let x0 = par.to_vec(&psd_cholesky(&d0), s0);
        let neg = |x: &[f64]| match self.value_and_gradient(&par, x, criterion) {
            Ok((v, g, _)) => (-v, g.into_iter().map(|a| -a).collect()),
            Err(_) => (f64::NAN, vec![f64::NAN; x.len()]),
        };
        let opts = BfgsOptions {
            max_iter: control.max_iter,
            grad_tol: control.grad_tol,
            ..BfgsOptions::default()
        };
        let m = bfgs(neg, &x0, &opts)?;
        let mut x = m.x;
        let mut iterations = m.iterations;
        let (mut f, mut g, _) = self.value_and_gradient(&par, &x, criterion)?;
        for _ in 0..50 {
            if inf_norm(&g) < control.grad_tol {
                break;
            }
            match self.newton_step(&par, &x, f, &g, criterion) {
                Some((xn, fnew, gnew)) => {
                    x = xn;
                    f = fnew;
                    g = gnew;
                    iterations += 1;
                }
                None => break,
            }
        }
        // variances drifting towards the floor: snap them if the criterion
        // does not get worse
        let mut boundary = Vec::new();
        let mut residual_at_boundary = false;
        {
            let mut k = 0;
            let mut diag_index = Vec::new();
            for i in 0..self.q {
                for j in 0..=i {
                    if i == j {
                        diag_index.push(k);
                    }
                    k += 1;
                }
            }
            let floor_t = 0.5 * control.variance_floor.ln() - 10.0;
            for (i, &k) in diag_index.iter().enumerate() {
                let (l, s2) = par.from_vec(&x);
                let var: f64 = (0..self.q).map(|j| l[(i, j)].powi(2)).sum();
                if var < 1e-6 * s2.max(1e-300) {
                    let mut xs = x.clone();
                    xs[k] = floor_t;
                    for j in 0..i {
                        // zero the row of L so the variance is exactly the floor
                        let idx = i * (i + 1) / 2 + j;
                        xs[idx] = 0.0;
                    }
                    if let Ok((fs, gs, _)) = self.value_and_gradient(&par, &xs, criterion) {
                        if fs >= f - 1e-9 * (1.0 + f.abs()) {
                            x = xs;
                            f = fs;
                            g = gs;
                        }
                    }
                }
            }
            let (l, s2) = par.from_vec(&x);
            for i in 0..self.q {
                let var: f64 = (0..self.q).map(|j| l[(i, j)].powi(2)).sum();
                if var <= 10.0 * control.variance_floor {
                    boundary.push(i);
                }
            }
            if s2 <= 10.0 * control.variance_floor {
                residual_at_boundary = true;
            }
        }
        let (l, sigma_sq) = par.from_vec(&x);
        let eval = self.evaluate(&l, sigma_sq, criterion)?;
        let grad_norm = inf_norm(&g);
        let converged = grad_norm < control.grad_tol;
        if !converged {
            return Err(Error::NoConvergence { iterations, grad_norm });
        }
        let d = &l * l.transpose();
        let theta = VarianceComponents { d: (&d + d.transpose()) * 0.5, sigma_sq };
        if !boundary.is_empty() || residual_at_boundary {
            log::warn!("variance component estimate at the boundary (indices {boundary:?})");
        }
        Ok(Optimum {
            theta,
            l,
            eval,
            iterations,
            grad_norm,
            converged,
            boundary,
            residual_at_boundary,
        })
    }

    fn newton_step(
        &self,
        par: &Parametrization,
        x: &[f64],
        f: f64,
        g: &[f64],
        criterion: Criterion,
    ) -> Option<(Vec<f64>, f64, Vec<f64>)> {
        let k = x.len();
        // Hessian of the negative criterion by central differences of the gradient
        let mut h = DMatrix::zeros(k, k);
        for j in 0..k {
            let step = 1e-5 * (1.0 + x[j].abs());
            let mut xp = x.to_vec();
            xp[j] += step;
            let mut xm = x.to_vec();
            xm[j] -= step;
            let gp = self.value_and_gradient(par, &xp, criterion).ok()?.1;
            let gm = self.value_and_gradient(par, &xm, criterion).ok()?.1;
            for i in 0..k {
                h[(i, j)] = -(gp[i] - gm[i]) / (2.0 * step);
            }
        }
        let h = (&h + h.transpose()) * 0.5;
        let neg_g = DVector::from_iterator(k, g.iter().copied());
        let mut ridge = 0.0;
        let dir = loop {
            let hr = &h + DMatrix::identity(k, k) * ridge;
            if let Ok(ch) = Cholesky::new(&hr) {
                break ch.solve_vec(&neg_g);
            }
            ridge = if ridge == 0.0 { 1e-8 * (1.0 + h.amax()) } else { ridge * 10.0 };
            if ridge > 1e12 {
                return None;
            }
        };
        let gnorm = inf_norm(g);
        let mut t = 1.0;
        for _ in 0..30 {
            let xn: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, b)| a + t * b).collect();
            if let Ok((fnew, gnew, _)) = self.value_and_gradient(par, &xn, criterion) {
                if fnew.is_finite() && (fnew >= f - 1e-10 * (1.0 + f.abs())) && inf_norm(&gnew) < gnorm {
                    return Some((xn, fnew, gnew));
                }
            }
            t *= 0.5;
        }
        None
    }
}
