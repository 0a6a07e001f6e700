//! The refinement ledger: full model, lasso, backward elimination with
//! VIF, log response, best interaction and random slope, each scored by
//! ML AIC.

use std::fmt::Write as _;

use longimix_core::lmm::{self, Criterion, FitControl};
use longimix_core::panel::{apply_transforms, design_matrices, Column, PanelDataset, Term, TransformSpec};
use longimix_core::selection::{
    full_candidates, interaction_scan, lasso_select, paper_preset, stepwise_backward, term_list,
    vif_for_terms, InteractionScan, LassoOptions, LassoPath, StepwiseTrace, VifReport,
};

use crate::error::{BenchError, Result};

/// Models whose AICs share a likelihood scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    RawResponse,
    LogResponse,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::RawResponse => "raw ML",
            Regime::LogResponse => "log ML",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LedgerStep {
    pub name: &'static str,
    pub regime: Regime,
    pub aic: f64,
    pub fixed: Vec<Term>,
    pub random: Vec<Term>,
}

#[derive(Debug, Clone)]
pub struct RefinementLedger {
    pub steps: Vec<LedgerStep>,
    pub lasso: LassoPath,
    pub stepwise_raw: StepwiseTrace,
    pub stepwise_log: StepwiseTrace,
    /// `None` when fewer than two predictors survive elimination.
    pub vif: Option<VifReport>,
    /// Scan on the log scale from the terms the pipeline kept.
    pub scan: InteractionScan,
    /// Scan on the log scale from the published five-term preset.
    pub preset_scan: InteractionScan,
}

impl RefinementLedger {
    /// AIC strictly decreases between consecutive steps of each regime.
    pub fn monotone_within_regimes(&self) -> bool {
        self.steps
            .windows(2)
            .filter(|w| w[0].regime == w[1].regime)
            .all(|w| w[1].aic < w[0].aic)
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<4} {:<28} {:<8} {:>14}  fixed terms | random terms", "step", "stage", "regime", "AIC");
        for (k, st) in self.steps.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:<4} {:<28} {:<8} {:>14.4}  {} | {}",
                k + 1,
                st.name,
                st.regime.label(),
                st.aic,
                term_list(&st.fixed),
                term_list(&st.random)
            );
        }
        let _ = writeln!(
            s,
            "AIC strictly decreasing within each regime: {}",
            if self.monotone_within_regimes() { "yes" } else { "no" }
        );
        s
    }

    pub fn report_text(&self) -> String {
        let mut s = self.table();
        s.push('\n');
        s.push_str(&self.lasso.report_text());
        s.push('\n');
        s.push_str(&self.stepwise_raw.report_text());
        s.push_str("\nafter log transform:\n");
        s.push_str(&self.stepwise_log.report_text());
        s.push('\n');
        match &self.vif {
            Some(v) => s.push_str(&v.report_text()),
            None => s.push_str("vif: fewer than two predictors kept\n"),
        }
        s.push('\n');
        s.push_str(&self.scan.report_text());
        s.push_str("\npublished preset terms:\n");
        s.push_str(&self.preset_scan.report_text());
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("step,stage,regime,aic,fixed,random\n");
        for (k, st) in self.steps.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                k + 1,
                st.name,
                st.regime.label(),
                st.aic,
                term_list(&st.fixed).replace(", ", ";"),
                term_list(&st.random).replace(", ", ";")
            );
        }
        s
    }
}

fn ml_aic(data: &PanelDataset, fixed: &[Term], random: &[Term], control: &FitControl) -> longimix_core::Result<f64> {
    let design = design_matrices(data, fixed, random)?;
    Ok(lmm::fit(&design, Criterion::Ml, control)?.aic)
}

/// Runs the whole pipeline on `data` with standardized covariates.
pub fn refinement_ledger(data: &PanelDataset, lasso: &LassoOptions) -> Result<RefinementLedger> {
    let control = FitControl::default();
    let (raw, _, _) = apply_transforms(data, data, &TransformSpec::new(true, false))?;
    let (logged, _, _) = apply_transforms(data, data, &TransformSpec::new(true, true))?;
    let intercept = vec![Term::Intercept];
    let slope = vec![Term::Intercept, Term::Column(Column::TestTime)];
    let stage = |e: longimix_core::Error, what: &str| BenchError::Missing(format!("{what} failed: {e}"));

    let full = full_candidates();
    let full_aic = ml_aic(&raw, &full, &intercept, &control).map_err(|e| BenchError::Missing(format!("full model failed: {e}")))?;
    let lasso_path = lasso_select(&raw, &full, lasso).map_err(|e| stage(e, "lasso"))?;
    if lasso_path.selected.is_empty() {
        return Err(BenchError::Missing("lasso kept no predictors".into()));
    }
    let lasso_aic = ml_aic(&raw, &lasso_path.selected, &intercept, &control)?;
    let stepwise_raw =
        stepwise_backward(&lasso_path.selected, &intercept, &raw, &control).map_err(|e| stage(e, "stepwise"))?;
    let vif = if stepwise_raw.final_terms.len() >= 2 {
        Some(vif_for_terms(&raw, &stepwise_raw.final_terms).map_err(|e| stage(e, "vif"))?)
    } else {
        None
    };

    let stepwise_log = stepwise_backward(&stepwise_raw.final_terms, &intercept, &logged, &control)
        .map_err(|e| stage(e, "stepwise after log transform"))?;
    let kept = stepwise_log.final_terms.clone();
    let scan = interaction_scan(&kept, &intercept, &logged, &control).map_err(|e| stage(e, "interaction scan"))?;
    let best = scan
        .best()
        .ok_or_else(|| BenchError::Missing("interaction scan found no candidate pair".into()))?;
    let mut with_interaction = kept.clone();
    with_interaction.push(best.term());
    let interaction_aic = *best.aic.as_ref().expect("best is a successful fit");
    let slope_aic = ml_aic(&logged, &with_interaction, &slope, &control).map_err(|e| stage(e, "random slope"))?;
    let preset_scan =
        interaction_scan(&paper_preset(), &intercept, &logged, &control).map_err(|e| stage(e, "preset scan"))?;

    let step = |name, regime, aic, fixed: &[Term], random: &[Term]| LedgerStep {
        name,
        regime,
        aic,
        fixed: fixed.to_vec(),
        random: random.to_vec(),
    };
    let steps = vec![
        step("full model", Regime::RawResponse, full_aic, &full, &intercept),
        step("after lasso", Regime::RawResponse, lasso_aic, &lasso_path.selected, &intercept),
        step("after stepwise and vif", Regime::RawResponse, stepwise_raw.final_aic(), &stepwise_raw.final_terms, &intercept),
        step("after log transform", Regime::LogResponse, stepwise_log.final_aic(), &kept, &intercept),
        step("add interaction", Regime::LogResponse, interaction_aic, &with_interaction, &intercept),
        step("add random slope", Regime::LogResponse, slope_aic, &with_interaction, &slope),
    ];
    Ok(RefinementLedger { steps, lasso: lasso_path, stepwise_raw, stepwise_log, vif, scan, preset_scan })
}
