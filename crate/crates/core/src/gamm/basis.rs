//! Cubic regression spline parametrized by its values at the knots.
//!
//! With knot values `β` and second derivatives `δ = Fβ`, on `[x_j, x_{j+1}]`
//!
//! ```text
//! f(x) = a⁻ β_j + a⁺ β_{j+1} + c⁻ δ_j + c⁺ δ_{j+1}
//! a⁻ = (x_{j+1} − x)/h,  a⁺ = (x − x_j)/h
//! c⁻ = ((x_{j+1} − x)³/h − h (x_{j+1} − x))/6
//! c⁺ = ((x − x_j)³/h − h (x − x_j))/6
//! ```
//!
//! and `∫ f″² = βᵀ Dᵀ B⁻¹ D β` exactly (natural end conditions).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numeric::linalg::Cholesky;

#[derive(Debug, Clone)]
pub struct SplineBasis {
    /// All `K` knots, ascending; the first and last are the boundary.
    pub knots: Vec<f64>,
    /// Maps knot values to knot second derivatives (`K x K`).
    pub f: DMatrix<f64>,
    /// Second-derivative penalty `DᵀB⁻¹D` (`K x K`).
    pub penalty: DMatrix<f64>,
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Knots at quantiles of the distinct training times.
pub fn build_basis(times: &[f64], k: usize) -> Result<SplineBasis> {
    if k < 4 {
        return Err(Error::InvalidInput(format!("spline needs at least 4 knots, got {k}")));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("spline covariate".into()));
    }
    let mut unique = times.to_vec();
    unique.sort_by(f64::total_cmp);
    unique.dedup();
    if unique.len() < k {
        return Err(Error::InvalidInput(format!(
            "{} distinct time values cannot support {k} knots",
            unique.len()
        )));
    }
    let knots: Vec<f64> = (0..k).map(|j| quantile(&unique, j as f64 / (k - 1) as f64)).collect();
    SplineBasis::from_knots(knots)
}

impl SplineBasis {
    pub fn from_knots(knots: Vec<f64>) -> Result<Self> {
        let k = knots.len();
        if k < 4 || knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("knots must be strictly increasing, at least 4".into()));
        }
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let mut d = DMatrix::zeros(k - 2, k);
        let mut b = DMatrix::zeros(k - 2, k - 2);
        for i in 0..k - 2 {
            d[(i, i)] = 1.0 / h[i];
            d[(i, i + 1)] = -1.0 / h[i] - 1.0 / h[i + 1];
            d[(i, i + 2)] = 1.0 / h[i + 1];
            b[(i, i)] = (h[i] + h[i + 1]) / 3.0;
            if i + 1 < k - 2 {
                b[(i, i + 1)] = h[i + 1] / 6.0;
                b[(i + 1, i)] = h[i + 1] / 6.0;
            }
        }
        let bd = Cholesky::new(&b)?.solve(&d);
        let mut f = DMatrix::zeros(k, k);
        f.view_mut((1, 0), (k - 2, k)).copy_from(&bd);
        let penalty = d.transpose() * &bd;
        let penalty = (&penalty + penalty.transpose()) * 0.5;
        Ok(Self { knots, f, penalty })
    }

    pub fn num_basis(&self) -> usize {
        self.knots.len()
    }

    pub fn boundary(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.knots[1..self.knots.len() - 1]
    }

    fn interval(&self, x: f64) -> usize {
        let k = self.knots.len();
        match self.knots.partition_point(|&kn| kn <= x) {
            0 => 0,
            i if i >= k => k - 2,
            i => i - 1,
        }
    }

    /// Adds `w_minus * (row j of F) + w_plus * (row j+1 of F)` plus the
    /// direct knot weights into `row`.
    fn combine(&self, j: usize, am: f64, ap: f64, cm: f64, cp: f64) -> DVector<f64> {
        let mut row = self.f.row(j).transpose() * cm + self.f.row(j + 1).transpose() * cp;
        row[j] += am;
        row[j + 1] += ap;
        row
    }

    /// Basis row at `x`: `f(x) = row · β`. Linear beyond the boundary.
    pub fn eval(&self, x: f64) -> DVector<f64> {
        let (lo, hi) = self.boundary();
        if x < lo {
            return self.eval(lo) + self.derivative(lo) * (x - lo);
        }
        if x > hi {
            return self.eval(hi) + self.derivative(hi) * (x - hi);
        }
        let j = self.interval(x);
        let (xl, xr) = (self.knots[j], self.knots[j + 1]);
        let h = xr - xl;
        let (u, v) = (xr - x, x - xl);
        self.combine(j, u / h, v / h, (u * u * u / h - h * u) / 6.0, (v * v * v / h - h * v) / 6.0)
    }

    /// First-derivative row at `x` (inside the boundary; constant beyond).
    pub fn derivative(&self, x: f64) -> DVector<f64> {
        let (lo, hi) = self.boundary();
        let x = x.clamp(lo, hi);
        let j = self.interval(x);
        let (xl, xr) = (self.knots[j], self.knots[j + 1]);
        let h = xr - xl;
        let (u, v) = (xr - x, x - xl);
        self.combine(j, -1.0 / h, 1.0 / h, (-3.0 * u * u / h + h) / 6.0, (3.0 * v * v / h - h) / 6.0)
    }

    /// Second-derivative row at `x` (zero beyond the boundary).
    pub fn second_derivative(&self, x: f64) -> DVector<f64> {
        let (lo, hi) = self.boundary();
        if x < lo || x > hi {
            return DVector::zeros(self.num_basis());
        }
        let j = self.interval(x);
        let (xl, xr) = (self.knots[j], self.knots[j + 1]);
        let h = xr - xl;
        self.combine(j, 0.0, 0.0, (xr - x) / h, (x - xl) / h)
    }

    /// Basis rows for many points, one row per point.
    pub fn design(&self, xs: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(xs.len(), self.num_basis());
        for (i, &x) in xs.iter().enumerate() {
            m.row_mut(i).copy_from(&self.eval(x).transpose());
        }
        m
    }
}

/// Orthonormal basis of the null space of the row vector `c`, from a
/// Householder reflection (`K x (K−1)`).
pub fn constraint_null_space(c: &DVector<f64>) -> DMatrix<f64> {
    let k = c.len();
    let norm = c.norm();
    let mut u = c.clone();
    u[0] += if c[0] >= 0.0 { norm } else { -norm };
    let uu = u.norm_squared();
    let h = if uu > 0.0 {
        DMatrix::identity(k, k) - &u * u.transpose() * (2.0 / uu)
    } else {
        DMatrix::identity(k, k)
    };
    h.columns(1, k - 1).into_owned()
}
