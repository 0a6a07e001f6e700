use std::path::PathBuf;

use longimix_bench::artifacts::{emit_plot_data, PlotInputs, SMOOTH_POINTS};
use longimix_bench::config::{ConfigFile, ModelKind, Overrides, RunConfig};
use longimix_bench::ledger::{refinement_ledger, Regime};
use longimix_bench::models::FittedModel;
use longimix_bench::run::{run_benchmark, run_in_memory};
use longimix_bench::study::synthetic_study;
use longimix_bench::{metrics, BenchError, RowOutcome};
use longimix_core::panel::{fixed_row, random_row, Column, PanelDataset, Term, TransformSpec};
use longimix_core::selection::LassoOptions;
use longimix_core::synth::{simulate_panel, SynthConfig};

fn study() -> PanelDataset {
    synthetic_study(20, 12, 9).unwrap()
}

fn config(file: &str, models: &[&str], seeds: Vec<u64>) -> RunConfig {
    let cli = Overrides {
        dataset: Some(PathBuf::from("study.csv")),
        models: Some(models.iter().map(|m| m.to_string()).collect()),
        seeds: Some(seeds),
        epochs: Some(8),
        workers: Some(2),
        ..Overrides::default()
    };
    RunConfig::resolve(&ConfigFile::parse(file).unwrap(), &cli).unwrap()
}

#[test]
fn one_model_config_gives_a_single_row() {
    let out = run_in_memory(&config("", &["lmm_final"], vec![0]), &study()).unwrap();
    assert_eq!(out.report.rows.len(), 1);
    let row = &out.report.rows[0];
    assert_eq!(row.model, ModelKind::LmmFinal);
    assert_eq!(row.seeds_used(), 1);
    assert!(row.mse().unwrap() > 0.0);
    assert_eq!(out.report.n_test, 20);
}

#[test]
fn stochastic_rows_average_their_seeds() {
    let out = run_in_memory(&config("", &["gnmm_1layer"], vec![1, 2, 3]), &study()).unwrap();
    let RowOutcome::Scored { mse_mean, mse_std, runs, .. } = &out.report.rows[0].outcome else {
        panic!("row failed: {:?}", out.report.rows[0].outcome);
    };
    assert_eq!(runs.iter().map(|r| r.0).collect::<Vec<_>>(), [Some(1), Some(2), Some(3)]);
    let mses: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let mean = mses.iter().sum::<f64>() / 3.0;
    let sd = (mses.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    assert!((mse_mean - mean).abs() < 1e-12);
    assert!((mse_std - sd).abs() < 1e-12);
}

#[test]
fn failed_row_does_not_stop_the_others() {
    // two identical columns make the linear model's normal equations singular
    let cfg = SynthConfig {
        n_subjects: 15,
        rows_per_subject: 8,
        duplicate: Some((Column::JitterPct, Column::JitterRap)),
        seed: 4,
        ..Default::default()
    };
    let data = simulate_panel(&cfg, |r| 20.0 + r.get(Column::Hnr)).data;
    let file = "[lmm_final]\nfixed = \"age, jitter_pct, jitter_rap\"\nlog_response = false\n";
    let out = run_in_memory(&config(file, &["lmm_final", "gamm_final", "gnmm_1layer"], vec![0]), &data).unwrap();
    assert_eq!(out.report.failed(), 1);
    match &out.report.rows[0].outcome {
        RowOutcome::Failed(msg) => assert!(msg.contains("singular"), "{msg}"),
        other => panic!("expected a failure, got {other:?}"),
    }
    assert!(out.report.rows[1].mse().is_some());
    assert!(out.report.rows[2].mse().is_some());
    assert!(out.report.body().contains("lmm_final      FAILED"));
    assert!(out.report.csv().lines().nth(1).unwrap().starts_with("lmm_final,failed,"));
}

#[test]
fn empty_seed_list_is_rejected_before_any_work() {
    let cli = Overrides { dataset: Some("missing.csv".into()), seeds: Some(vec![]), ..Overrides::default() };
    let err = RunConfig::resolve(&ConfigFile::default(), &cli).unwrap_err();
    assert!(matches!(err, BenchError::Config(_)), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn metrics_are_on_the_original_scale_whatever_the_transform() {
    let data = study();
    let truth = data.column(Column::TotalUpdrs);
    let preds: Vec<f64> = truth.iter().enumerate().map(|(i, y)| y * (1.0 + 0.05 * ((i % 7) as f64 - 3.0))).collect();
    let plain = metrics(&preds, &truth).unwrap();

    // the same predictions produced by a model working on log UPDRS
    let mut log_spec = TransformSpec::new(true, true);
    let (_, _, fitted) = longimix_core::panel::apply_transforms(&data, &data, &log_spec).unwrap();
    log_spec = fitted;
    let via_log: Vec<f64> = preds.iter().map(|p| log_spec.inverse_response(log_spec.forward_response(*p))).collect();
    let logged = metrics(&via_log, &truth).unwrap();
    assert!((plain.mse - logged.mse).abs() <= 1e-12 * plain.mse);
    assert!((plain.mae - logged.mae).abs() <= 1e-12 * plain.mae);
    assert_eq!(plain.n, logged.n);
}

#[test]
fn plot_data_matches_the_fits() {
    let out = run_in_memory(&config("", &["lmm_final", "gamm_final"], vec![0]), &study()).unwrap();
    let mut inputs = PlotInputs { train: &out.partition.train, lmm: None, gamm: None };
    let empty = emit_plot_data(&inputs, &std::env::temp_dir()).unwrap_err();
    assert!(empty.to_string().contains("gamm_final"), "{empty}");
    for run in &out.runs {
        match &run.outcome {
            Ok((FittedModel::Lmm { fit, transform }, _, _)) => inputs.lmm = Some((fit, transform)),
            Ok((FittedModel::Gamm { fit, transform }, _, _)) => inputs.gamm = Some((fit, transform)),
            other => panic!("unexpected run {other:?}"),
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let written = emit_plot_data(&inputs, dir.path()).unwrap();
    assert_eq!(written.len(), 4);

    let (gamm, transform) = inputs.gamm.unwrap();
    let text = std::fs::read_to_string(dir.path().join("gamm_smooth.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), SMOOTH_POINTS);
    for r in &rows {
        assert_eq!(r[2], gamm.smooth(r[1]));
    }

    // at the training times the smooth is what prediction adds beyond the
    // linear and random parts
    let train = transform.apply(&out.partition.train).unwrap();
    let linear = gamm.predict_linear(&train).unwrap();
    let (lo, hi) = (rows[0][1], rows[SMOOTH_POINTS - 1][1]);
    for (row, p) in train.rows().iter().zip(&linear) {
        let x = fixed_row(row, &gamm.spec.linear);
        let z = random_row(row, &gamm.spec.random);
        let b = &gamm.blups[&row.subject];
        let rest: f64 = x.iter().zip(gamm.beta_linear.iter()).map(|(a, c)| a * c).sum::<f64>()
            + z.iter().zip(b.iter()).map(|(a, c)| a * c).sum::<f64>();
        assert!((p - rest - gamm.smooth(row.test_time)).abs() < 1e-10);
        assert!(row.test_time >= lo - 1e-12 && row.test_time <= hi + 1e-12);
    }

    let traj = std::fs::read_to_string(dir.path().join("trajectories.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + 2 * out.partition.train.len());
    let re = std::fs::read_to_string(dir.path().join("random_effects.csv")).unwrap();
    assert_eq!(re.lines().count(), 1 + 2 * 20);
}

#[test]
fn run_directory_and_repeatable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("study.csv");
    study().save_csv(&data_path).unwrap();
    let run = |sub: &str| {
        let cli = Overrides {
            dataset: Some(data_path.clone()),
            output: Some(dir.path().join(sub)),
            models: Some(vec!["lmm_final".into(), "ann_baseline".into()]),
            seeds: Some(vec![7]),
            epochs: Some(5),
            workers: Some(1),
        };
        let cfg = RunConfig::resolve(&ConfigFile::default(), &cli).unwrap();
        run_benchmark(&cfg).unwrap();
        std::fs::read_to_string(dir.path().join(sub).join("manifest.txt")).unwrap()
    };
    let a = run("a");
    let b = run("b");
    let body_hash = |m: &str| m.lines().find(|l| l.starts_with("report_body_sha256")).unwrap().to_string();
    assert_eq!(body_hash(&a), body_hash(&b));
    assert!(a.contains("dataset_subjects = 20"));
    for f in [
        "report.txt",
        "report.csv",
        "runs.csv",
        "config.resolved",
        "predictions/lmm_final.csv",
        "predictions/ann_baseline_seed7.csv",
        "fits/lmm_final.kv",
        "fits/ann_baseline_seed7.state",
        "plots/trajectories.csv",
    ] {
        assert!(dir.path().join("a").join(f).is_file(), "{f} missing");
    }
    let preds = std::fs::read_to_string(dir.path().join("a/predictions/lmm_final.csv")).unwrap();
    assert_eq!(preds.lines().next().unwrap(), "subject,test_time,truth,prediction");
    assert_eq!(preds.lines().count(), 21);
}

#[test]
fn ledger_steps_and_regimes() {
    let ledger = refinement_ledger(&synthetic_study(30, 20, 3).unwrap(), &LassoOptions::default()).unwrap();
    let regimes: Vec<Regime> = ledger.steps.iter().map(|s| s.regime).collect();
    assert_eq!(regimes[..3], [Regime::RawResponse; 3]);
    assert_eq!(regimes[3..], [Regime::LogResponse; 3]);
    assert!(ledger.monotone_within_regimes(), "{}", ledger.table());
    let last = ledger.steps.last().unwrap();
    assert!(last.fixed.contains(&Term::Interaction(Column::TestTime, Column::Hnr)));
    assert_eq!(last.random, [Term::Intercept, Term::Column(Column::TestTime)]);
    assert_eq!(ledger.csv().lines().count(), 7);
}
