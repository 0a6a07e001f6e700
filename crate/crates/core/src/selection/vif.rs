use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::{PanelDataset, Term};

#[derive(Debug, Clone)]
pub struct VifReport {
    pub names: Vec<String>,
    /// `+inf` marks an exactly collinear column.
    pub values: Vec<f64>,
    pub warnings: Vec<String>,
}

impl VifReport {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn report_text(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::from("variance inflation factors\n");
        for (n, v) in self.names.iter().zip(&self.values) {
            let _ = writeln!(s, "  {n:<24} {v:>10.4}");
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

/// `VIF_j = 1 / (1 − R²_j)` from regressing column `j` on the others
/// with an intercept.
pub fn vif(x: &DMatrix<f64>, names: &[String]) -> Result<VifReport> {
    let (n, p) = x.shape();
    if p < 2 {
        return Err(Error::InvalidInput(format!("VIF needs at least 2 predictors, got {p}")));
    }
    if names.len() != p {
        return Err(Error::Shape(format!("{} names for {p} columns", names.len())));
    }
    for j in 0..p {
        let c = x.column(j);
        if c.iter().all(|&v| v == c[0]) {
            return Err(Error::ZeroVariance(names[j].clone()));
        }
    }
    let mut values = Vec::with_capacity(p);
    let mut warnings = Vec::new();
    for j in 0..p {
        let y = x.column(j).into_owned();
        let mut others = DMatrix::from_element(n, p, 1.0);
        let mut k = 1;
        for c in 0..p {
            if c != j {
                others.set_column(k, &x.column(c));
                k += 1;
            }
        }
        let svd = others.clone().svd(true, true);
        let tol = 1e-12 * svd.singular_values.max() * n.max(p) as f64;
        let beta: DVector<f64> = svd.solve(&y, tol).map_err(|e| Error::Singular(e.to_string()))?;
        let resid = &y - &others * beta;
        let tss = y.add_scalar(-y.mean()).norm_squared();
        let ratio = resid.norm_squared() / tss;
        if ratio < 1e-12 {
            let msg = format!("{} is exactly collinear with the other predictors", names[j]);
            log::warn!("{msg}");
            warnings.push(msg);
            values.push(f64::INFINITY);
        } else {
            values.push((1.0 / ratio).max(1.0));
        }
    }
    Ok(VifReport { names: names.to_vec(), values, warnings })
}

/// VIFs of the given terms evaluated on `data`.
pub fn vif_for_terms(data: &PanelDataset, terms: &[Term]) -> Result<VifReport> {
    let terms: Vec<Term> = terms.iter().copied().filter(|t| *t != Term::Intercept).collect();
    let rows = data.rows();
    let x = DMatrix::from_fn(rows.len(), terms.len(), |i, j| terms[j].eval(&rows[i]));
    let names: Vec<String> = terms.iter().map(|t| t.name()).collect();
    vif(&x, &names)
}
