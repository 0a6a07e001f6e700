use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use longimix_bench::artifacts::{predictions_csv, write_file};
use longimix_bench::config::{ConfigFile, ModelKind, ModelPlan, Overrides, RunConfig};
use longimix_bench::ledger::refinement_ledger;
use longimix_bench::models::Partition;
use longimix_bench::run::{run_benchmark, run_one};
use longimix_bench::study::synthetic_study;
use longimix_bench::{BenchError, Result};
use longimix_core::panel::{apply_transforms, load_csv, TransformSpec};
use longimix_core::selection::{
    full_candidates, lasso_select, stepwise_backward, vif_for_terms, LambdaRule, LassoOptions,
};

#[derive(Parser)]
#[command(name = "longimix", version, about = "Mixed-effects and neural models for longitudinal UPDRS data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    CvMin,
    Cv1se,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset and print its shape.
    Ingest {
        data: PathBuf,
        /// Write the sorted, validated rows here (plus a provenance file).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lasso, backward elimination and VIF on the whole dataset.
    Select {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, value_enum, default_value_t = Rule::CvMin)]
        rule: Rule,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit one model preset on the training split and score the test rows.
    Fit {
        model: String,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the full benchmark described by a config file.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Comma-separated preset names.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        /// Comma-separated seeds for the neural models.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        workers: Option<usize>,
        /// Override the epoch count of every neural model.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// The AIC refinement ledger from full model to random slope.
    Ledger {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic study in the dataset's CSV format.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        subjects: usize,
        #[arg(long, default_value_t = 30)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_file(path: &Option<PathBuf>) -> Result<ConfigFile> {
    match path {
        Some(p) => Ok(ConfigFile::load(p)?.0),
        None => Ok(ConfigFile::default()),
    }
}

fn load_data(path: &std::path::Path) -> Result<longimix_core::panel::PanelDataset> {
    load_csv(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { data, out } => {
            let ds = load_data(&data)?;
            println!("rows: {}  subjects: {}", ds.len(), ds.subjects().len());
            let counts: Vec<usize> = ds.groups().iter().map(|g| g.len()).collect();
            println!(
                "visits per subject: min {} max {}",
                counts.iter().min().copied().unwrap_or(0),
                counts.iter().max().copied().unwrap_or(0)
            );
            if let Some(out) = out {
                ds.save_csv(&out)?;
                ds.save_provenance(&out.with_extension("provenance"))?;
                println!("wrote {}", out.display());
            }
        }
        Command::Select { data, folds, rule, seed } => {
            let ds = load_data(&data)?;
            let (std, _, _) = apply_transforms(&ds, &ds, &TransformSpec::new(true, false))?;
            let opts = LassoOptions {
                folds,
                rule: match rule {
                    Rule::CvMin => LambdaRule::CvMin,
                    Rule::Cv1se => LambdaRule::Cv1se,
                },
                seed,
                ..LassoOptions::default()
            };
            let path = lasso_select(&std, &full_candidates(), &opts)?;
            print!("{}", path.report_text());
            let control = longimix_core::lmm::FitControl::default();
            let trace = stepwise_backward(&path.selected, &[longimix_core::panel::Term::Intercept], &std, &control)?;
            print!("\n{}", trace.report_text());
            if trace.final_terms.len() >= 2 {
                print!("\n{}", vif_for_terms(&std, &trace.final_terms)?.report_text());
            }
        }
        Command::Fit { model, data, config, seed, epochs, output } => {
            let kind: ModelKind = model.parse()?;
            let file = load_file(&config)?;
            let cli = Overrides { dataset: data, models: Some(vec![kind.name().into()]), epochs, ..Overrides::default() };
            let cfg = RunConfig::resolve(&file, &cli)?;
            let plan: &ModelPlan = &cfg.models[0];
            let ds = load_data(&cfg.dataset)?;
            let part = Partition::new(&ds, &cfg.split)?;
            let record = run_one(plan, &part, kind.is_stochastic().then_some(seed));
            let (fit, pred, m) = record.outcome.map_err(|e| BenchError::Missing(format!("{kind}: {e}")))?;
            print!("{}", fit.report_text());
            println!("test rows {}  mse {:.4}  mae {:.4}", m.n, m.mse, m.mae);
            if let Some(dir) = output {
                write_file(&dir.join(format!("{kind}.txt")), &fit.report_text())?;
                write_file(&dir.join(format!("{kind}.{}", fit.state_extension())), &fit.serialize()?)?;
                write_file(&dir.join(format!("{kind}_predictions.csv")), &predictions_csv(&part.test, &pred))?;
            }
        }
        Command::Bench { config, data, output, models, seeds, workers, epochs } => {
            let file = load_file(&config)?;
            let cli = Overrides { dataset: data, output, models, seeds, workers, epochs };
            let cfg = RunConfig::resolve(&file, &cli)?;
            let outcome = run_benchmark(&cfg)?;
            print!("{}", outcome.report.text());
            println!("wrote {}", cfg.output.display());
            let failed = outcome.report.failed();
            if failed > 0 {
                return Err(BenchError::ModelFailures { failed, total: outcome.report.rows.len() });
            }
        }
        Command::Ledger { data, output, seed } => {
            let ds = load_data(&data)?;
            let ledger = refinement_ledger(&ds, &LassoOptions { seed, ..LassoOptions::default() })?;
            print!("{}", ledger.report_text());
            if let Some(dir) = output {
                write_file(&dir.join("ledger.txt"), &ledger.report_text())?;
                write_file(&dir.join("ledger.csv"), &ledger.csv())?;
            }
        }
        Command::Simulate { out, subjects, rows, seed } => {
            let ds = synthetic_study(subjects, rows, seed)?;
            ds.save_csv(&out)?;
            println!("wrote {} rows for {} subjects to {}", ds.len(), subjects, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
