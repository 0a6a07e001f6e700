use std::path::Path;
use std::process::{Command, Output};

use longimix_core::panel::Column;
use longimix_core::synth::{simulate_panel, SynthConfig};

fn longimix(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_longimix"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn with_study() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = longimix(dir.path(), &["simulate", "--out", "study.csv", "--subjects", "20", "--rows", "12"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&longimix(dir.path(), &["--help"])), 0);
    assert_eq!(code(&longimix(dir.path(), &["--version"])), 0);
    assert_eq!(code(&longimix(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&longimix(dir.path(), &["bench", "--seeds", "x"])), 1);
}

#[test]
fn ingest_reports_shape_and_rewrites() {
    let dir = with_study();
    let o = longimix(dir.path(), &["ingest", "study.csv", "--out", "clean.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("rows: 240  subjects: 20"));
    assert!(dir.path().join("clean.csv").is_file());
    assert!(dir.path().join("clean.provenance").is_file());
    let o = longimix(dir.path(), &["ingest", "absent.csv"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn bench_writes_the_run_directory() {
    let dir = with_study();
    let o = longimix(
        dir.path(),
        &["bench", "--data", "study.csv", "--output", "run", "--epochs", "3", "--seeds", "0,1", "--workers", "2"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    for m in ["lmm_final", "gamm_final", "gnmm_1layer", "gnmm_2layer", "ann_baseline", "nme_mlp"] {
        assert!(out.contains(m), "{m} missing from\n{out}");
    }
    let run = dir.path().join("run");
    for f in ["report.txt", "report.csv", "manifest.txt", "plots/gamm_smooth.csv", "predictions/nme_mlp_seed1.csv"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let csv = std::fs::read_to_string(run.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = with_study();
    std::fs::write(dir.path().join("empty_seeds.toml"), "dataset = \"study.csv\"\nseeds = []\n").unwrap();
    std::fs::write(dir.path().join("typo.toml"), "dataset = \"study.csv\"\n[lmm_final]\nfixd = \"age\"\n").unwrap();
    for args in [
        vec!["bench", "--config", "empty_seeds.toml"],
        vec!["bench", "--config", "typo.toml"],
        vec!["bench", "--config", "absent.toml"],
        vec!["bench", "--data", "absent.csv"],
        vec!["bench", "--data", "study.csv", "--models", "svm"],
        vec!["fit", "svm", "--data", "study.csv"],
    ] {
        let o = longimix(dir.path(), &args);
        assert_eq!(code(&o), 1, "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).starts_with("error:"), "{args:?}: {}", stderr(&o));
    }
    assert!(!dir.path().join("bench-out").exists());
}

#[test]
fn model_failure_exits_with_two_and_keeps_other_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        n_subjects: 15,
        rows_per_subject: 8,
        duplicate: Some((Column::JitterPct, Column::JitterRap)),
        seed: 2,
        ..Default::default()
    };
    let data = simulate_panel(&cfg, |r| 20.0 + r.get(Column::Hnr)).data;
    data.save_csv(&dir.path().join("dup.csv")).unwrap();
    std::fs::write(
        dir.path().join("bad.toml"),
        "dataset = \"dup.csv\"\nmodels = [\"lmm_final\", \"gamm_final\"]\n[lmm_final]\nfixed = \"jitter_pct, jitter_rap\"\n",
    )
    .unwrap();
    let o = longimix(dir.path(), &["bench", "--config", "bad.toml", "--output", "run"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let report = std::fs::read_to_string(dir.path().join("run/report.txt")).unwrap();
    assert!(report.contains("lmm_final      FAILED"));
    assert!(report.lines().any(|l| l.starts_with("gamm_final") && !l.contains("FAILED")));
    assert!(dir.path().join("run/fits/lmm_final.error").is_file());
}

#[test]
fn fit_select_and_ledger() {
    let dir = with_study();
    let o = longimix(dir.path(), &["fit", "lmm_final", "--data", "study.csv", "--output", "fit"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("test rows 20"));
    assert!(dir.path().join("fit/lmm_final.kv").is_file());
    assert!(dir.path().join("fit/lmm_final_predictions.csv").is_file());

    let o = longimix(dir.path(), &["fit", "ann_baseline", "--data", "study.csv", "--epochs", "3", "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let o = longimix(dir.path(), &["select", "--data", "study.csv", "--folds", "5", "--rule", "cv1se"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("chosen by cv_1se"));

    let o = longimix(dir.path(), &["ledger", "--data", "study.csv", "--output", "ledger"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("ledger/ledger.csv").is_file());
}
