use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lmm::{self, Criterion, FitControl, LmmFit};
use crate::panel::{design_matrices, Column, PanelDataset, Term};

#[derive(Debug, Clone)]
pub struct StepwiseStep {
    pub terms: Vec<Term>,
    pub aic: f64,
    /// The term removed to reach this model (`None` for the initial one).
    pub dropped: Option<Term>,
}

#[derive(Debug, Clone)]
pub struct StepwiseTrace {
    pub steps: Vec<StepwiseStep>,
    pub final_terms: Vec<Term>,
    /// AICs of the single-term drops from the final model.
    pub final_neighbors: Vec<(Term, f64)>,
}

impl StepwiseTrace {
    pub fn final_aic(&self) -> f64 {
        self.steps.last().map_or(f64::NAN, |s| s.aic)
    }

    pub fn report_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "backward elimination (ML AIC)");
        for (k, step) in self.steps.iter().enumerate() {
            let what = match step.dropped {
                None => "initial model".to_string(),
                Some(t) => format!("drop {}", t.name()),
            };
            let _ = writeln!(s, "  {k:>2}  {what:<32} AIC {:.4}", step.aic);
        }
        let _ = writeln!(s, "final terms: {}", term_list(&self.final_terms));
        s
    }
}

/// Comma-separated term names, readable by [`Term::parse_list`].
pub fn term_list(terms: &[Term]) -> String {
    terms.iter().map(|t| t.name()).collect::<Vec<_>>().join(", ")
}

pub(crate) fn ml_fit(data: &PanelDataset, fixed: &[Term], random: &[Term], control: &FitControl) -> Result<LmmFit> {
    let design = design_matrices(data, fixed, random)?;
    lmm::fit(&design, Criterion::Ml, control)
}

fn contains(t: &Term, c: Column) -> bool {
    matches!(t, Term::Interaction(a, b) if *a == c || *b == c)
}

/// Terms that may be dropped without leaving an interaction whose main
/// effect is missing.
fn droppable(terms: &[Term]) -> Vec<Term> {
    terms
        .iter()
        .copied()
        .filter(|t| match t {
            Term::Intercept => false,
            Term::Column(c) => !terms.iter().any(|o| contains(o, *c)),
            Term::Interaction(..) => true,
        })
        .collect()
}

/// Repeatedly removes the term whose removal lowers the ML AIC most,
/// holding the random-effects structure fixed.
pub fn stepwise_backward(
    initial: &[Term],
    random: &[Term],
    data: &PanelDataset,
    control: &FitControl,
) -> Result<StepwiseTrace> {
    let mut terms: Vec<Term> = initial.iter().copied().filter(|t| *t != Term::Intercept).collect();
    let start = ml_fit(data, &terms, random, control)?;
    let mut steps = vec![StepwiseStep { terms: terms.clone(), aic: start.aic, dropped: None }];
    let mut current = start.aic;
    loop {
        let candidates = droppable(&terms);
        let scored: Vec<(Term, f64)> = candidates
            .par_iter()
            .map(|&t| {
                let reduced: Vec<Term> = terms.iter().copied().filter(|o| *o != t).collect();
                let aic = ml_fit(data, &reduced, random, control).map_or(f64::INFINITY, |f| f.aic);
                (t, aic)
            })
            .collect();
        let best = scored
            .iter()
            .copied()
            .filter(|(_, a)| a.is_finite())
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((t, aic)) if aic < current => {
                terms.retain(|o| *o != t);
                current = aic;
                steps.push(StepwiseStep { terms: terms.clone(), aic, dropped: Some(t) });
            }
            _ => {
                if steps.windows(2).any(|w| w[1].aic > w[0].aic) {
                    return Err(Error::InvalidInput("stepwise trace AIC increased".into()));
                }
                return Ok(StepwiseTrace { steps, final_terms: terms, final_neighbors: scored });
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct InteractionCandidate {
    pub pair: (Column, Column),
    /// ML AIC of base + this interaction, or the fit failure.
    pub aic: std::result::Result<f64, String>,
}

impl InteractionCandidate {
    pub fn term(&self) -> Term {
        Term::Interaction(self.pair.0, self.pair.1)
    }
}

#[derive(Debug, Clone)]
pub struct InteractionScan {
    pub base_aic: f64,
    /// Successful fits by ascending AIC, then failures.
    pub ranked: Vec<InteractionCandidate>,
}

impl InteractionScan {
    pub fn best(&self) -> Option<&InteractionCandidate> {
        self.ranked.first().filter(|c| c.aic.is_ok())
    }

    pub fn report_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "pairwise interaction scan (base ML AIC {:.4})", self.base_aic);
        for c in &self.ranked {
            match &c.aic {
                Ok(a) => {
                    let _ = writeln!(s, "  {:<32} AIC {:.4}  change {:+.4}", c.term().name(), a, a - self.base_aic);
                }
                Err(e) => {
                    let _ = writeln!(s, "  {:<32} failed: {e}", c.term().name());
                }
            }
        }
        s
    }
}

/// Fits the base model plus each single pairwise interaction of its
/// column terms and ranks them by AIC.
pub fn interaction_scan(
    base: &[Term],
    random: &[Term],
    data: &PanelDataset,
    control: &FitControl,
) -> Result<InteractionScan> {
    let base_terms: Vec<Term> = base.iter().copied().filter(|t| *t != Term::Intercept).collect();
    let base_fit = ml_fit(data, &base_terms, random, control)?;
    let cols: Vec<Column> = base_terms
        .iter()
        .filter_map(|t| match t {
            Term::Column(c) => Some(*c),
            _ => None,
        })
        .collect();
    let mut pairs = Vec::new();
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            let term = Term::Interaction(cols[i], cols[j]);
            if !base_terms.contains(&term) && !base_terms.contains(&Term::Interaction(cols[j], cols[i])) {
                pairs.push((cols[i], cols[j]));
            }
        }
    }
    let mut ranked: Vec<InteractionCandidate> = pairs
        .par_iter()
        .map(|&pair| {
            let mut terms = base_terms.clone();
            terms.push(Term::Interaction(pair.0, pair.1));
            let aic = ml_fit(data, &terms, random, control).map(|f| f.aic).map_err(|e| e.to_string());
            InteractionCandidate { pair, aic }
        })
        .collect();
    ranked.sort_by(|a, b| match (&a.aic, &b.aic) {
        (Ok(x), Ok(y)) => x.total_cmp(y),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => std::cmp::Ordering::Equal,
    });
    Ok(InteractionScan { base_aic: base_fit.aic, ranked })
}
