//! Two-stage fixed-effect selection: cross-validated lasso on the pooled
//! linear model, then backward elimination by ML AIC on the mixed model,
//! with VIF diagnostics and a pairwise interaction scan.

mod lasso;
mod stepwise;
mod vif;

pub use lasso::{lambda_grid, lambda_max, lasso_fit, lasso_select, LambdaRule, LassoOptions, LassoPath};
pub use stepwise::{
    interaction_scan, stepwise_backward, term_list, InteractionCandidate, InteractionScan, StepwiseStep,
    StepwiseTrace,
};
pub use vif::{vif, vif_for_terms, VifReport};

use crate::panel::{Column, Term};

/// The five predictors retained by the published selection.
pub fn paper_preset() -> Vec<Term> {
    [Column::Age, Column::TestTime, Column::JitterPpq5, Column::Nhr, Column::Hnr]
        .into_iter()
        .map(Term::Column)
        .collect()
}

/// Every non-response column: age, sex, test_time and the 16 voice features.
pub fn full_candidates() -> Vec<Term> {
    [Column::Age, Column::Sex, Column::TestTime]
        .into_iter()
        .chain(Column::VOICE)
        .map(Term::Column)
        .collect()
}
