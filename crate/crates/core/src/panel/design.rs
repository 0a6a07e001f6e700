use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::columns::Column;
use crate::panel::dataset::{ObservationRow, PanelDataset};

/// A model term: the intercept, a column, or a product of two columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    Intercept,
    Column(Column),
    Interaction(Column, Column),
}

impl Term {
    /// Parses `1`/`intercept`, a column name, or `a:b` / `a*b` / `a×b`.
    pub fn parse(text: &str) -> Result<Term> {
        let t = text.trim();
        if t == "1" || t.eq_ignore_ascii_case("intercept") || t.eq_ignore_ascii_case("(intercept)") {
            return Ok(Term::Intercept);
        }
        if let Ok(c) = Column::parse(t) {
            return Ok(Term::Column(c));
        }
        // header names such as `Jitter:PPQ5` contain ':' themselves
        for sep in ['*', '×', ':'] {
            for (a, b) in [t.split_once(sep), t.rsplit_once(sep)].into_iter().flatten() {
                if let (Ok(a), Ok(b)) = (Column::parse(a), Column::parse(b)) {
                    return Ok(Term::Interaction(a, b));
                }
            }
        }
        Err(Error::UnknownTerm(t.to_string()))
    }

    pub fn parse_list(text: &str) -> Result<Vec<Term>> {
        text.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(Term::parse)
            .collect()
    }

    pub fn eval(&self, row: &ObservationRow) -> f64 {
        match *self {
            Term::Intercept => 1.0,
            Term::Column(c) => row.get(c),
            Term::Interaction(a, b) => row.get(a) * row.get(b),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Term::Intercept => "(intercept)".into(),
            Term::Column(c) => c.id().into(),
            Term::Interaction(a, b) => format!("{}:{}", a.id(), b.id()),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |c: &Column| matches!(c, Column::Subject | Column::TotalUpdrs);
        match self {
            Term::Column(c) if bad(c) => Err(Error::UnknownTerm(self.name())),
            Term::Interaction(a, b) if bad(a) || bad(b) => Err(Error::UnknownTerm(self.name())),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Per-subject blocks of the mixed-model design.
#[derive(Debug, Clone)]
pub struct SubjectDesign {
    pub subject: u32,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Rows of the source dataset covered by this block.
    pub rows: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct Design {
    pub blocks: Vec<SubjectDesign>,
    pub fixed_terms: Vec<Term>,
    pub random_terms: Vec<Term>,
    /// Column names of `x`; extra (e.g. spline) columns may follow the terms.
    pub fixed_names: Vec<String>,
}

impl Design {
    pub fn n_obs(&self) -> usize {
        self.blocks.iter().map(|b| b.y.len()).sum()
    }

    pub fn n_fixed(&self) -> usize {
        self.fixed_names.len()
    }

    pub fn n_random(&self) -> usize {
        self.random_terms.len()
    }

    pub fn subjects(&self) -> Vec<u32> {
        self.blocks.iter().map(|b| b.subject).collect()
    }

    /// Appends columns computed from each source row to every `x` block.
    pub fn append_columns(
        &mut self,
        data: &PanelDataset,
        names: &[String],
        f: impl Fn(&ObservationRow) -> Vec<f64>,
    ) {
        let extra = names.len();
        for block in &mut self.blocks {
            let (n, p) = block.x.shape();
            let mut x = DMatrix::zeros(n, p + extra);
            x.columns_mut(0, p).copy_from(&block.x);
            for (i, r) in block.rows.clone().enumerate() {
                let vals = f(&data.rows()[r]);
                for (k, v) in vals.into_iter().enumerate() {
                    x[(i, p + k)] = v;
                }
            }
            block.x = x;
        }
        self.fixed_names.extend(names.iter().cloned());
    }

    /// Stacked fixed-effect matrix and response over all subjects.
    pub fn stacked(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n_obs();
        let p = self.n_fixed();
        let mut x = DMatrix::zeros(n, p);
        let mut y = DVector::zeros(n);
        let mut at = 0;
        for b in &self.blocks {
            let ni = b.y.len();
            x.rows_mut(at, ni).copy_from(&b.x);
            y.rows_mut(at, ni).copy_from(&b.y);
            at += ni;
        }
        (x, y)
    }
}

/// Fixed-effect row: intercept first, then the requested terms.
pub fn fixed_row(row: &ObservationRow, fixed_terms: &[Term]) -> Vec<f64> {
    std::iter::once(1.0)
        .chain(fixed_terms.iter().map(|t| t.eval(row)))
        .collect()
}

pub fn random_row(row: &ObservationRow, random_terms: &[Term]) -> Vec<f64> {
    random_terms.iter().map(|t| t.eval(row)).collect()
}

/// Builds `(X_i, Z_i, y_i)` for every subject. The response is
/// `total_updrs` as stored in `data` (log-transformed if the dataset was).
pub fn design_matrices(
    data: &PanelDataset,
    fixed_terms: &[Term],
    random_terms: &[Term],
) -> Result<Design> {
    let fixed: Vec<Term> = fixed_terms
        .iter()
        .copied()
        .filter(|t| *t != Term::Intercept)
        .collect();
    for t in fixed.iter().chain(random_terms) {
        t.validate()?;
    }
    let p = fixed.len() + 1;
    let q = random_terms.len();
    let blocks = data
        .subjects()
        .iter()
        .zip(data.groups())
        .map(|(&subject, range)| {
            let rows = &data.rows()[range.clone()];
            let n = rows.len();
            let mut x = DMatrix::zeros(n, p);
            let mut z = DMatrix::zeros(n, q);
            let mut y = DVector::zeros(n);
            for (i, row) in rows.iter().enumerate() {
                for (k, v) in fixed_row(row, &fixed).into_iter().enumerate() {
                    x[(i, k)] = v;
                }
                for (k, v) in random_row(row, random_terms).into_iter().enumerate() {
                    z[(i, k)] = v;
                }
                y[i] = row.total_updrs;
            }
            SubjectDesign {
                subject,
                x,
                z,
                y,
                rows: range.clone(),
            }
        })
        .collect();
    let fixed_names = std::iter::once(Term::Intercept.name())
        .chain(fixed.iter().map(|t| t.name()))
        .collect();
    Ok(Design {
        blocks,
        fixed_terms: fixed,
        random_terms: random_terms.to_vec(),
        fixed_names,
    })
}
