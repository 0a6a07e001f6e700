//! Dense symmetric positive-definite kernels.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    let (n, m) = a.shape();
    if n != m {
        return Err(Error::Shape(format!("expected a square matrix, got {n}x{m}")));
    }
    let scale = a.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    for i in 0..n {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::Shape(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

impl Cholesky {
    /// Factors a symmetric positive-definite matrix. Reports the first
    /// pivot that is not strictly positive.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        check_symmetric(a)?;
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix passed to Cholesky".into()));
        }
        let n = a.nrows();
        let mut l = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) {
                return Err(Error::NotPositiveDefinite { pivot: j });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// `log|A| = 2 Σ log L_jj`.
    pub fn logdet(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        let n = self.dim();
        let l = &self.l;
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= l[(i, k)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }

    fn solve_in_place(&self, b: &mut DMatrix<f64>) {
        for c in 0..b.ncols() {
            let col = DVector::from_column_slice(b.column(c).as_slice());
            let sol = self.solve_vec(&col);
            b.column_mut(c).copy_from(&sol);
        }
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve(&DMatrix::identity(self.dim(), self.dim()))
    }
}

/// Solves `A X = B` for symmetric positive-definite `A`.
pub fn cholesky_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::Shape(format!(
            "A is {}x{}, B has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    Ok(Cholesky::new(a)?.solve(b))
}

/// Log-determinant of a symmetric positive-definite matrix.
pub fn logdet_spd(a: &DMatrix<f64>) -> Result<f64> {
    Ok(Cholesky::new(a)?.logdet())
}

/// Cholesky factor of a positive semi-definite matrix. Non-positive
/// pivots give zero columns instead of an error.
pub fn psd_cholesky(d: &DMatrix<f64>) -> DMatrix<f64> {
    let q = d.nrows();
    let mut l = DMatrix::zeros(q, q);
    for j in 0..q {
        let mut p = d[(j, j)];
        for k in 0..j {
            p -= l[(j, k)] * l[(j, k)];
        }
        if p <= 0.0 {
            continue;
        }
        let ljj = p.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..q {
            let mut s = d[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    l
}
