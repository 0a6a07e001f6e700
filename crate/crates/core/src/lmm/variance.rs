use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numeric::linalg::psd_cholesky;

/// Random-effect covariance `D` and residual variance `sigma_sq`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceComponents {
    pub d: DMatrix<f64>,
    pub sigma_sq: f64,
}

impl VarianceComponents {
    pub fn intercept(sigma_b0_sq: f64, sigma_sq: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, sigma_b0_sq), sigma_sq)
    }

    pub fn intercept_slope(sigma_b0_sq: f64, sigma_b1_sq: f64, rho: f64, sigma_sq: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::InvalidInput(format!("correlation {rho} outside [-1, 1]")));
        }
        let c = rho * (sigma_b0_sq * sigma_b1_sq).max(0.0).sqrt();
        Self::new(DMatrix::from_row_slice(2, 2, &[sigma_b0_sq, c, c, sigma_b1_sq]), sigma_sq)
    }

    pub fn new(d: DMatrix<f64>, sigma_sq: f64) -> Result<Self> {
        let v = Self { d, sigma_sq };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_sq > 0.0) || !self.sigma_sq.is_finite() {
            return Err(Error::InvalidInput(format!(
                "residual variance must be positive, got {}",
                self.sigma_sq
            )));
        }
        let q = self.d.nrows();
        if self.d.ncols() != q || self.d.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("random-effect covariance must be square and finite".into()));
        }
        let scale = self.d.amax().max(1e-300);
        for i in 0..q {
            for j in 0..i {
                if (self.d[(i, j)] - self.d[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::InvalidInput("random-effect covariance is not symmetric".into()));
                }
            }
        }
        if q > 0 {
            let eig = self.d.clone().symmetric_eigen();
            if eig.eigenvalues.min() < -1e-10 * scale {
                return Err(Error::InvalidInput(
                    "random-effect covariance is not positive semi-definite".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.d.nrows()
    }

    pub fn sigma_b0_sq(&self) -> f64 {
        self.d[(0, 0)]
    }

    pub fn sigma_b1_sq(&self) -> Option<f64> {
        (self.dim() > 1).then(|| self.d[(1, 1)])
    }

    pub fn rho(&self) -> Option<f64> {
        if self.dim() < 2 {
            return None;
        }
        let denom = (self.d[(0, 0)] * self.d[(1, 1)]).sqrt();
        Some(if denom > 0.0 { self.d[(1, 0)] / denom } else { 0.0 })
    }

    /// Lower-triangular factor `L` with `D = L Lᵀ`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        psd_cholesky(&self.d)
    }

    /// Number of distinct parameters in `D` plus the residual variance.
    pub fn n_params(&self) -> usize {
        let q = self.dim();
        q * (q + 1) / 2 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Criterion {
    Ml,
    Reml,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Ml => "ML",
            Criterion::Reml => "REML",
        })
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ml" => Ok(Criterion::Ml),
            "reml" => Ok(Criterion::Reml),
            _ => Err(Error::InvalidInput(format!("unknown criterion '{s}' (expected ml or reml)"))),
        }
    }
}
