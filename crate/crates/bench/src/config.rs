//! Run configuration: a TOML file with top-level run settings and one
//! optional table per model overriding that model's preset.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use longimix_core::neural::NEURAL_INPUT_DIM;
use longimix_core::nme::{person_mask, ParamGroup};
use longimix_core::numeric::MlpArchitecture;
use longimix_core::panel::{SplitMode, SplitSpec, Term};
use serde::Deserialize;

use crate::error::{BenchError, Result};

/// The six benchmark models, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    LmmFinal,
    GammFinal,
    Gnmm1Layer,
    Gnmm2Layer,
    AnnBaseline,
    NmeMlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::LmmFinal,
        ModelKind::GammFinal,
        ModelKind::Gnmm1Layer,
        ModelKind::Gnmm2Layer,
        ModelKind::AnnBaseline,
        ModelKind::NmeMlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LmmFinal => "lmm_final",
            ModelKind::GammFinal => "gamm_final",
            ModelKind::Gnmm1Layer => "gnmm_1layer",
            ModelKind::Gnmm2Layer => "gnmm_2layer",
            ModelKind::AnnBaseline => "ann_baseline",
            ModelKind::NmeMlp => "nme_mlp",
        }
    }

    /// Neural models are trained once per seed; the others once.
    pub fn is_stochastic(self) -> bool {
        !matches!(self, ModelKind::LmmFinal | ModelKind::GammFinal)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| BenchError::Config(format!("unknown model preset '{s}'")))
    }
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    /// `last_row` or `last_fraction`.
    pub mode: Option<String>,
    pub fraction: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LinearSection {
    pub fixed: Option<String>,
    pub random: Option<String>,
    pub log_response: Option<bool>,
    /// `naive` or `lognormal`.
    pub back_transform: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GammSection {
    pub linear: Option<String>,
    pub random: Option<String>,
    pub k: Option<usize>,
    pub log_response: Option<bool>,
    pub back_transform: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GnmmSection {
    pub hidden: Option<Vec<usize>>,
    pub ridge_lambda: Option<f64>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub laplace_refresh: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NmeSection {
    pub hidden: Option<Vec<usize>>,
    pub person_specific: Option<Vec<String>>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
}

/// The file as written; every field optional.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub models: Option<Vec<String>>,
    pub seeds: Option<Vec<u64>>,
    pub workers: Option<usize>,
    pub split: Option<SplitSection>,
    pub lmm_final: Option<LinearSection>,
    pub gamm_final: Option<GammSection>,
    pub gnmm_1layer: Option<GnmmSection>,
    pub gnmm_2layer: Option<GnmmSection>,
    pub ann_baseline: Option<GnmmSection>,
    pub nme_mlp: Option<NmeSection>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::parse(&text)?, text))
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub models: Option<Vec<String>>,
    pub seeds: Option<Vec<u64>>,
    pub workers: Option<usize>,
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSettings {
    pub fixed: Vec<Term>,
    pub random: Vec<Term>,
    pub log_response: bool,
    pub lognormal_back_transform: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammSettings {
    pub linear: Vec<Term>,
    pub random: Vec<Term>,
    pub k: usize,
    pub log_response: bool,
    pub lognormal_back_transform: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnmmSettings {
    pub hidden: Vec<usize>,
    pub ridge_lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub laplace_refresh: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmeSettings {
    pub hidden: Vec<usize>,
    pub person_specific: Vec<ParamGroup>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

/// Fully resolved settings of one model.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSettings {
    Lmm(LinearSettings),
    Gamm(GammSettings),
    Gnmm(GnmmSettings),
    Nme(NmeSettings),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelPlan {
    pub kind: ModelKind,
    pub settings: ModelSettings,
}

impl ModelPlan {
    /// Preset defaults for a model.
    pub fn preset(kind: ModelKind) -> Self {
        use longimix_core::gnmm::GnmmConfig;
        use longimix_core::nme::NmeConfig;
        let gnmm = |c: GnmmConfig| {
            ModelSettings::Gnmm(GnmmSettings {
                hidden: c.architecture.hidden,
                ridge_lambda: c.ridge_lambda,
                learning_rate: c.learning_rate,
                epochs: c.epochs,
                batch_size: c.batch_size,
                laplace_refresh: c.laplace_refresh,
            })
        };
        let settings = match kind {
            ModelKind::LmmFinal => ModelSettings::Lmm(LinearSettings {
                fixed: final_fixed_terms(),
                random: vec![Term::Intercept, Term::Column(longimix_core::panel::Column::TestTime)],
                log_response: true,
                lognormal_back_transform: false,
            }),
            ModelKind::GammFinal => {
                let s = longimix_core::gamm::GammSpec::default();
                ModelSettings::Gamm(GammSettings {
                    linear: s.linear,
                    random: s.random,
                    k: s.k,
                    log_response: true,
                    lognormal_back_transform: false,
                })
            }
            ModelKind::Gnmm1Layer => gnmm(GnmmConfig::one_layer()),
            ModelKind::Gnmm2Layer => gnmm(GnmmConfig::two_layer()),
            ModelKind::AnnBaseline => gnmm(GnmmConfig::ann_baseline()),
            ModelKind::NmeMlp => {
                let c = NmeConfig::default();
                ModelSettings::Nme(NmeSettings {
                    hidden: c.architecture.hidden,
                    person_specific: c.person_specific,
                    learning_rate: c.adam.lr,
                    epochs: c.epochs,
                    batch_size: c.batch_size,
                })
            }
        };
        Self { kind, settings }
    }

    fn apply(&mut self, file: &ConfigFile) -> Result<()> {
        let name = self.kind.name();
        match &mut self.settings {
            ModelSettings::Lmm(s) => {
                if let Some(sec) = &file.lmm_final {
                    if let Some(t) = &sec.fixed {
                        s.fixed = terms(t, name)?;
                    }
                    if let Some(t) = &sec.random {
                        s.random = terms(t, name)?;
                    }
                    s.log_response = sec.log_response.unwrap_or(s.log_response);
                    if let Some(b) = &sec.back_transform {
                        s.lognormal_back_transform = lognormal(b, name)?;
                    }
                }
            }
            ModelSettings::Gamm(s) => {
                if let Some(sec) = &file.gamm_final {
                    if let Some(t) = &sec.linear {
                        s.linear = terms(t, name)?;
                    }
                    if let Some(t) = &sec.random {
                        s.random = terms(t, name)?;
                    }
                    s.k = sec.k.unwrap_or(s.k);
                    s.log_response = sec.log_response.unwrap_or(s.log_response);
                    if let Some(b) = &sec.back_transform {
                        s.lognormal_back_transform = lognormal(b, name)?;
                    }
                }
            }
            ModelSettings::Gnmm(s) => {
                let sec = match self.kind {
                    ModelKind::Gnmm1Layer => &file.gnmm_1layer,
                    ModelKind::Gnmm2Layer => &file.gnmm_2layer,
                    _ => &file.ann_baseline,
                };
                if let Some(sec) = sec {
                    s.hidden = sec.hidden.clone().unwrap_or_else(|| s.hidden.clone());
                    s.ridge_lambda = sec.ridge_lambda.unwrap_or(s.ridge_lambda);
                    s.learning_rate = sec.learning_rate.unwrap_or(s.learning_rate);
                    s.epochs = sec.epochs.unwrap_or(s.epochs);
                    s.batch_size = sec.batch_size.unwrap_or(s.batch_size);
                    s.laplace_refresh = sec.laplace_refresh.unwrap_or(s.laplace_refresh);
                }
            }
            ModelSettings::Nme(s) => {
                if let Some(sec) = &file.nme_mlp {
                    s.hidden = sec.hidden.clone().unwrap_or_else(|| s.hidden.clone());
                    if let Some(groups) = &sec.person_specific {
                        s.person_specific = groups
                            .iter()
                            .map(|g| g.parse().map_err(|e| BenchError::Config(format!("{name}: {e}"))))
                            .collect::<Result<_>>()?;
                    }
                    s.learning_rate = sec.learning_rate.unwrap_or(s.learning_rate);
                    s.epochs = sec.epochs.unwrap_or(s.epochs);
                    s.batch_size = sec.batch_size.unwrap_or(s.batch_size);
                }
            }
        }
        Ok(())
    }

    fn set_epochs(&mut self, epochs: usize) {
        match &mut self.settings {
            ModelSettings::Gnmm(s) => s.epochs = epochs,
            ModelSettings::Nme(s) => s.epochs = epochs,
            _ => {}
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(BenchError::Config(format!("{}: {msg}", self.kind)));
        match &self.settings {
            ModelSettings::Lmm(s) => {
                if s.random.is_empty() {
                    return bad("needs at least one random term");
                }
            }
            ModelSettings::Gamm(s) => {
                if s.random.is_empty() || s.k < 4 {
                    return bad("needs a random term and at least 4 knots");
                }
            }
            ModelSettings::Gnmm(s) => {
                if s.hidden.is_empty() || s.hidden.contains(&0) || s.epochs == 0 || s.batch_size == 0 {
                    return bad("hidden sizes, epochs and batch size must be positive");
                }
                if !(s.learning_rate > 0.0) || !(s.ridge_lambda >= 0.0) {
                    return bad("learning rate must be > 0 and ridge penalty >= 0");
                }
            }
            ModelSettings::Nme(s) => {
                if s.hidden.is_empty() || s.hidden.contains(&0) || s.epochs == 0 || s.batch_size == 0 {
                    return bad("hidden sizes, epochs and batch size must be positive");
                }
                if !(s.learning_rate > 0.0) {
                    return bad("learning rate must be > 0");
                }
                let arch = MlpArchitecture { input_dim: NEURAL_INPUT_DIM, hidden: s.hidden.clone() };
                if let Err(e) = person_mask(&arch, &s.person_specific) {
                    return bad(&e.to_string());
                }
            }
        }
        Ok(())
    }
}

/// Fixed effects of the refined model: age, time, HNR and time × HNR.
pub fn final_fixed_terms() -> Vec<Term> {
    use longimix_core::panel::Column;
    vec![
        Term::Column(Column::Age),
        Term::Column(Column::TestTime),
        Term::Column(Column::Hnr),
        Term::Interaction(Column::TestTime, Column::Hnr),
    ]
}

fn terms(text: &str, model: &str) -> Result<Vec<Term>> {
    Term::parse_list(text).map_err(|e| BenchError::Config(format!("{model}: {e}")))
}

fn lognormal(text: &str, model: &str) -> Result<bool> {
    match text.trim() {
        "naive" => Ok(false),
        "lognormal" => Ok(true),
        other => Err(BenchError::Config(format!(
            "{model}: back_transform must be 'naive' or 'lognormal', got '{other}'"
        ))),
    }
}

/// Everything a benchmark run needs, validated.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub output: PathBuf,
    pub split: SplitSpec,
    pub models: Vec<ModelPlan>,
    pub seeds: Vec<u64>,
    pub workers: usize,
}

pub const DEFAULT_SEED_COUNT: u64 = 10;

impl RunConfig {
    pub fn resolve(file: &ConfigFile, cli: &Overrides) -> Result<Self> {
        let dataset = cli
            .dataset
            .clone()
            .or_else(|| file.dataset.clone())
            .ok_or_else(|| BenchError::Config("no dataset path given".into()))?;
        let output = cli
            .output
            .clone()
            .or_else(|| file.output.clone())
            .unwrap_or_else(|| PathBuf::from("bench-out"));
        let names = cli
            .models
            .clone()
            .or_else(|| file.models.clone())
            .unwrap_or_else(|| ModelKind::ALL.iter().map(|m| m.name().to_string()).collect());
        let mut kinds = Vec::new();
        for n in &names {
            let k: ModelKind = n.parse()?;
            if kinds.contains(&k) {
                return Err(BenchError::Config(format!("model '{k}' listed twice")));
            }
            kinds.push(k);
        }
        if kinds.is_empty() {
            return Err(BenchError::Config("model list is empty".into()));
        }
        kinds.sort();
        let seeds = cli
            .seeds
            .clone()
            .or_else(|| file.seeds.clone())
            .unwrap_or_else(|| (0..DEFAULT_SEED_COUNT).collect());
        if seeds.is_empty() {
            return Err(BenchError::Config("seed list is empty".into()));
        }
        let workers = cli.workers.or(file.workers).unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        });
        if workers == 0 {
            return Err(BenchError::Config("workers must be at least 1".into()));
        }
        let split = split_spec(file.split.as_ref().cloned().unwrap_or_default())?;
        let mut models = Vec::with_capacity(kinds.len());
        for k in kinds {
            let mut plan = ModelPlan::preset(k);
            plan.apply(file)?;
            if let Some(e) = cli.epochs {
                plan.set_epochs(e);
            }
            plan.validate()?;
            models.push(plan);
        }
        Ok(Self { dataset, output, split, models, seeds, workers })
    }

    /// Canonical text of the resolved configuration, hashed into the
    /// manifest.
    pub fn canonical(&self) -> String {
        let mut s = format!(
            "dataset = {}\nsplit = {}\nseeds = {:?}\n",
            self.dataset.display(),
            self.split,
            self.seeds
        );
        for m in &self.models {
            s.push_str(&format!("{} = {:?}\n", m.kind, m.settings));
        }
        s
    }
}

fn split_spec(sec: SplitSection) -> Result<SplitSpec> {
    let mode = match sec.mode.as_deref().unwrap_or("last_row") {
        "last_row" => {
            if sec.fraction.is_some() {
                return Err(BenchError::Config("split.fraction only applies to last_fraction".into()));
            }
            SplitMode::LastRow
        }
        "last_fraction" => {
            let f = sec
                .fraction
                .ok_or_else(|| BenchError::Config("last_fraction needs split.fraction".into()))?;
            if !(f > 0.0 && f < 1.0) {
                return Err(BenchError::Config(format!("split.fraction must lie in (0, 1), got {f}")));
            }
            SplitMode::LastFraction { fraction: f }
        }
        other => return Err(BenchError::Config(format!("unknown split mode '{other}'"))),
    };
    Ok(SplitSpec { mode, seed: sec.seed.unwrap_or(0) })
}
