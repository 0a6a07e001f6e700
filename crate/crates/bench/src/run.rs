//! The benchmark: every configured model on one split, neural models
//! once per seed, runs spread over a worker pool.

use std::fmt::Write as _;
use std::time::Instant;

use log::{info, warn};
use longimix_core::panel::{load_csv, PanelDataset};
use rayon::prelude::*;

use crate::artifacts::{emit_plot_data, predictions_csv, sha256_hex, write_file, PlotInputs};
use crate::config::{ModelKind, ModelPlan, RunConfig};
use crate::error::{BenchError, Result};
use crate::metrics::{mean_std, metrics, Metrics};
use crate::models::{fit_model, FittedModel, Partition};
use crate::report::{BenchReport, ReportRow, RowOutcome};

/// One fitted (model, seed) run.
#[derive(Debug)]
pub struct RunRecord {
    pub model: ModelKind,
    pub seed: Option<u64>,
    pub outcome: std::result::Result<(FittedModel, Vec<f64>, Metrics), String>,
    pub wall_seconds: f64,
}

impl RunRecord {
    fn stem(&self) -> String {
        match self.seed {
            Some(s) => format!("{}_seed{s}", self.model),
            None => self.model.to_string(),
        }
    }
}

/// Fits `plan` on the partition's training rows and scores the test rows.
pub fn run_one(plan: &ModelPlan, part: &Partition, seed: Option<u64>) -> RunRecord {
    let start = Instant::now();
    let outcome = (|| -> Result<_> {
        let fit = fit_model(plan, &part.train, seed.unwrap_or(0))?;
        let pred = fit.predict(&part.test)?;
        let m = metrics(&pred, &part.truth())?;
        if !m.mse.is_finite() {
            return Err(BenchError::Config("non-finite test error".into()));
        }
        Ok((fit, pred, m))
    })()
    .map_err(|e| e.to_string());
    let wall_seconds = start.elapsed().as_secs_f64();
    match &outcome {
        Ok((_, _, m)) => info!("{} seed {seed:?}: mse {:.4} mae {:.4} ({wall_seconds:.1}s)", plan.kind, m.mse, m.mae),
        Err(e) => warn!("{} seed {seed:?} failed: {e}", plan.kind),
    }
    RunRecord { model: plan.kind, seed, outcome, wall_seconds }
}

/// All runs of a benchmark, in report order.
pub struct BenchOutcome {
    pub report: BenchReport,
    pub runs: Vec<RunRecord>,
    pub partition: Partition,
}

/// Runs the benchmark on an already loaded dataset without touching the
/// filesystem.
pub fn run_in_memory(config: &RunConfig, data: &PanelDataset) -> Result<BenchOutcome> {
    let partition = Partition::new(data, &config.split)?;
    let mut jobs: Vec<(&ModelPlan, Option<u64>)> = Vec::new();
    for plan in &config.models {
        if plan.kind.is_stochastic() {
            jobs.extend(config.seeds.iter().map(|&s| (plan, Some(s))));
        } else {
            jobs.push((plan, None));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| BenchError::Config(format!("cannot start {} workers: {e}", config.workers)))?;
    let runs: Vec<RunRecord> =
        pool.install(|| jobs.par_iter().map(|(plan, seed)| run_one(plan, &partition, *seed)).collect());

    let split = config.split.to_string().replace(',', ";");
    let rows = config
        .models
        .iter()
        .map(|plan| {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.model == plan.kind).collect();
            let wall_seconds = mine.iter().map(|r| r.wall_seconds).sum();
            let failure = mine.iter().find_map(|r| {
                r.outcome.as_ref().err().map(|e| match r.seed {
                    Some(s) => format!("seed {s}: {e}"),
                    None => e.clone(),
                })
            });
            let outcome = match failure {
                Some(msg) => RowOutcome::Failed(msg),
                None => {
                    let scored: Vec<(Option<u64>, f64, f64)> = mine
                        .iter()
                        .map(|r| {
                            let m = &r.outcome.as_ref().expect("checked").2;
                            (r.seed, m.mse, m.mae)
                        })
                        .collect();
                    let (mse_mean, mse_std) = mean_std(&scored.iter().map(|r| r.1).collect::<Vec<_>>());
                    let (mae_mean, mae_std) = mean_std(&scored.iter().map(|r| r.2).collect::<Vec<_>>());
                    RowOutcome::Scored { mse_mean, mse_std, mae_mean, mae_std, runs: scored }
                }
            };
            ReportRow { model: plan.kind, outcome, split: split.clone(), wall_seconds }
        })
        .collect();
    let report = BenchReport {
        rows,
        dataset: data.provenance.source.clone(),
        n_train: partition.train.len(),
        n_test: partition.test.len(),
        environment: environment(config),
    };
    Ok(BenchOutcome { report, runs, partition })
}

fn environment(config: &RunConfig) -> Vec<(String, String)> {
    vec![
        ("version".into(), env!("CARGO_PKG_VERSION").into()),
        ("os".into(), std::env::consts::OS.into()),
        ("arch".into(), std::env::consts::ARCH.into()),
        ("workers".into(), config.workers.to_string()),
        ("seeds".into(), format!("{:?}", config.seeds)),
    ]
}

/// Loads the dataset, runs every model and writes the run directory:
/// report text and CSV, per-run predictions and fits, plot data and the
/// manifest. Model failures are reported in their rows, not as errors.
pub fn run_benchmark(config: &RunConfig) -> Result<BenchOutcome> {
    let bytes = std::fs::read(&config.dataset).map_err(|e| {
        BenchError::Config(format!("cannot read dataset {}: {e}", config.dataset.display()))
    })?;
    let data = load_csv(&config.dataset).map_err(|e| BenchError::Config(format!("dataset rejected: {e}")))?;
    let outcome = run_in_memory(config, &data)?;
    let dir = &config.output;
    write_file(&dir.join("report.txt"), &outcome.report.text())?;
    write_file(&dir.join("report.csv"), &outcome.report.csv())?;
    write_file(&dir.join("runs.csv"), &outcome.report.runs_csv())?;
    for run in &outcome.runs {
        let stem = run.stem();
        match &run.outcome {
            Ok((fit, pred, _)) => {
                write_file(
                    &dir.join("predictions").join(format!("{stem}.csv")),
                    &predictions_csv(&outcome.partition.test, pred),
                )?;
                write_file(&dir.join("fits").join(format!("{stem}.txt")), &fit.report_text())?;
                write_file(
                    &dir.join("fits").join(format!("{stem}.{}", fit.state_extension())),
                    &fit.serialize()?,
                )?;
            }
            Err(e) => write_file(&dir.join("fits").join(format!("{stem}.error")), &format!("{e}\n"))?,
        }
    }
    let mut plot = PlotInputs { train: &outcome.partition.train, lmm: None, gamm: None };
    for run in &outcome.runs {
        match &run.outcome {
            Ok((FittedModel::Lmm { fit, transform }, _, _)) => plot.lmm = Some((fit, transform)),
            Ok((FittedModel::Gamm { fit, transform }, _, _)) => plot.gamm = Some((fit, transform)),
            _ => {}
        }
    }
    if plot.lmm.is_some() || plot.gamm.is_some() {
        emit_plot_data(&plot, &dir.join("plots"))?;
    }
    let mut manifest = String::new();
    let _ = writeln!(manifest, "dataset = {}", config.dataset.display());
    let _ = writeln!(manifest, "dataset_sha256 = {}", sha256_hex(&bytes));
    let _ = writeln!(manifest, "dataset_rows = {}", data.len());
    let _ = writeln!(manifest, "dataset_subjects = {}", data.subjects().len());
    let _ = writeln!(manifest, "config_sha256 = {}", sha256_hex(config.canonical().as_bytes()));
    let _ = writeln!(manifest, "report_body_sha256 = {}", sha256_hex(outcome.report.body().as_bytes()));
    let _ = writeln!(manifest, "version = {}", env!("CARGO_PKG_VERSION"));
    write_file(&dir.join("manifest.txt"), &manifest)?;
    write_file(&dir.join("config.resolved"), &config.canonical())?;
    Ok(outcome)
}
