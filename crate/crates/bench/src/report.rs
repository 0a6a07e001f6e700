use std::fmt::Write as _;

use crate::config::ModelKind;

#[derive(Debug, Clone, PartialEq)]
pub enum RowOutcome {
    Scored {
        mse_mean: f64,
        mse_std: f64,
        mae_mean: f64,
        mae_std: f64,
        /// Per-run `(seed, mse, mae)`; the seed is `None` for deterministic models.
        runs: Vec<(Option<u64>, f64, f64)>,
    },
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: ModelKind,
    pub outcome: RowOutcome,
    pub split: String,
    pub wall_seconds: f64,
}

impl ReportRow {
    pub fn mse(&self) -> Option<f64> {
        match &self.outcome {
            RowOutcome::Scored { mse_mean, .. } => Some(*mse_mean),
            RowOutcome::Failed(_) => None,
        }
    }

    pub fn mae(&self) -> Option<f64> {
        match &self.outcome {
            RowOutcome::Scored { mae_mean, .. } => Some(*mae_mean),
            RowOutcome::Failed(_) => None,
        }
    }

    pub fn seeds_used(&self) -> usize {
        match &self.outcome {
            RowOutcome::Scored { runs, .. } => runs.len(),
            RowOutcome::Failed(_) => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<ReportRow>,
    pub dataset: String,
    pub n_train: usize,
    pub n_test: usize,
    pub environment: Vec<(String, String)>,
}

impl BenchReport {
    pub fn row(&self, model: ModelKind) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| matches!(r.outcome, RowOutcome::Failed(_))).count()
    }

    /// The aligned table; identical for identical configurations.
    pub fn body(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dataset: {}", self.dataset);
        let _ = writeln!(s, "train rows: {}  test rows: {}", self.n_train, self.n_test);
        let _ = writeln!(
            s,
            "{:<14} {:>12} {:>10} {:>10} {:>10} {:>6}  {}",
            "model", "mse", "mse_sd", "mae", "mae_sd", "runs", "split"
        );
        for r in &self.rows {
            match &r.outcome {
                RowOutcome::Scored { mse_mean, mse_std, mae_mean, mae_std, runs } => {
                    let _ = writeln!(
                        s,
                        "{:<14} {:>12.4} {:>10.4} {:>10.4} {:>10.4} {:>6}  {}",
                        r.model.name(),
                        mse_mean,
                        mse_std,
                        mae_mean,
                        mae_std,
                        runs.len(),
                        r.split
                    );
                }
                RowOutcome::Failed(msg) => {
                    let _ = writeln!(s, "{:<14} FAILED: {msg}", r.model.name());
                }
            }
        }
        s
    }

    /// Body followed by wall times and environment metadata.
    pub fn text(&self) -> String {
        let mut s = self.body();
        let _ = writeln!(s, "\n[timing]");
        for r in &self.rows {
            let _ = writeln!(s, "{} = {:.2}s", r.model.name(), r.wall_seconds);
        }
        let _ = writeln!(s, "\n[environment]");
        for (k, v) in &self.environment {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("model,status,mse_mean,mse_sd,mae_mean,mae_sd,runs,split,wall_seconds,diagnostic\n");
        for r in &self.rows {
            match &r.outcome {
                RowOutcome::Scored { mse_mean, mse_std, mae_mean, mae_std, runs } => {
                    let _ = writeln!(
                        s,
                        "{},ok,{mse_mean},{mse_std},{mae_mean},{mae_std},{},{},{:.3},",
                        r.model.name(),
                        runs.len(),
                        r.split,
                        r.wall_seconds
                    );
                }
                RowOutcome::Failed(msg) => {
                    let _ = writeln!(
                        s,
                        "{},failed,,,,,0,{},{:.3},{}",
                        r.model.name(),
                        r.split,
                        r.wall_seconds,
                        msg.replace(['\n', ','], " ")
                    );
                }
            }
        }
        s
    }

    /// One line per run, for the per-seed spread.
    pub fn runs_csv(&self) -> String {
        let mut s = String::from("model,seed,mse,mae\n");
        for r in &self.rows {
            if let RowOutcome::Scored { runs, .. } = &r.outcome {
                for (seed, mse, mae) in runs {
                    let seed = seed.map(|v| v.to_string()).unwrap_or_default();
                    let _ = writeln!(s, "{},{seed},{mse},{mae}", r.model.name());
                }
            }
        }
        s
    }
}
