//! Fitting one configured model on a training partition and predicting
//! held-out rows on the original UPDRS scale.

use std::fmt::Write as _;

use longimix_core::gamm::{select_lambda, GammDesign, GammFit, GammSpec};
use longimix_core::gnmm::{self, GnmmConfig, GnmmFit};
use longimix_core::lmm::{self, Criterion, FitControl, LmmFit};
use longimix_core::neural::NEURAL_INPUT_DIM;
use longimix_core::nme::{self, NmeConfig, NmeFit};
use longimix_core::numeric::{AdamConfig, MlpArchitecture};
use longimix_core::panel::{
    apply_transforms, design_matrices, split, BackTransform, PanelDataset, SplitSpec, TransformSpec,
};

use crate::config::{ModelKind, ModelPlan, ModelSettings};
use crate::error::Result;

/// A train/test split of the untransformed data.
#[derive(Debug, Clone)]
pub struct Partition {
    pub train: PanelDataset,
    pub test: PanelDataset,
}

impl Partition {
    pub fn new(data: &PanelDataset, spec: &SplitSpec) -> Result<Self> {
        let (train, test) = split(data, spec)?;
        Ok(Self { train, test })
    }

    /// Observed `total_UPDRS` of the test rows.
    pub fn truth(&self) -> Vec<f64> {
        self.test.rows().iter().map(|r| r.total_updrs).collect()
    }
}

#[derive(Debug, Clone)]
pub enum FittedModel {
    Lmm { fit: LmmFit, transform: TransformSpec },
    Gamm { fit: GammFit, transform: TransformSpec },
    Gnmm { fit: GnmmFit, transform: TransformSpec },
    Nme { fit: NmeFit, transform: TransformSpec },
}

/// Standardization fitted on `train` only.
fn fit_transform(train: &PanelDataset, spec: TransformSpec) -> Result<(PanelDataset, TransformSpec)> {
    let (train_t, _, fitted) = apply_transforms(train, train, &spec)?;
    Ok((train_t, fitted))
}

fn architecture(hidden: &[usize]) -> Result<MlpArchitecture> {
    Ok(MlpArchitecture::new(NEURAL_INPUT_DIM, hidden.to_vec())?)
}

/// Fits `plan` on raw training rows. `seed` only matters for the neural
/// models.
pub fn fit_model(plan: &ModelPlan, train: &PanelDataset, seed: u64) -> Result<FittedModel> {
    match &plan.settings {
        ModelSettings::Lmm(s) => {
            let (data, mut transform) = fit_transform(train, TransformSpec::new(true, s.log_response))?;
            let design = design_matrices(&data, &s.fixed, &s.random)?;
            let fit = lmm::fit(&design, Criterion::Reml, &FitControl::default())?;
            if s.lognormal_back_transform {
                transform.back_transform = BackTransform::LognormalMean { sigma_sq: fit.theta.sigma_sq };
            }
            Ok(FittedModel::Lmm { fit, transform })
        }
        ModelSettings::Gamm(s) => {
            let (data, mut transform) = fit_transform(train, TransformSpec::new(true, s.log_response))?;
            let spec = GammSpec { linear: s.linear.clone(), random: s.random.clone(), k: s.k };
            let design = GammDesign::build(&data, &spec)?;
            let fit = select_lambda(&design, &FitControl::default())?;
            if s.lognormal_back_transform {
                transform.back_transform = BackTransform::LognormalMean { sigma_sq: fit.theta.sigma_sq };
            }
            Ok(FittedModel::Gamm { fit, transform })
        }
        ModelSettings::Gnmm(s) => {
            let (data, transform) = fit_transform(train, TransformSpec::new(true, false))?;
            let config = GnmmConfig {
                architecture: architecture(&s.hidden)?,
                ridge_lambda: s.ridge_lambda,
                learning_rate: s.learning_rate,
                epochs: s.epochs,
                batch_size: s.batch_size,
                random_intercept: plan.kind != ModelKind::AnnBaseline,
                laplace_refresh: s.laplace_refresh,
                seed,
            };
            Ok(FittedModel::Gnmm { fit: gnmm::train(&config, &data)?, transform })
        }
        ModelSettings::Nme(s) => {
            let (data, transform) = fit_transform(train, TransformSpec::new(true, false))?;
            let config = NmeConfig {
                architecture: architecture(&s.hidden)?,
                person_specific: s.person_specific.clone(),
                epochs: s.epochs,
                batch_size: s.batch_size,
                adam: AdamConfig { lr: s.learning_rate, ..AdamConfig::default() },
                seed,
            };
            Ok(FittedModel::Nme { fit: nme::train(&config, &data)?, transform })
        }
    }
}

impl FittedModel {
    pub fn transform(&self) -> &TransformSpec {
        match self {
            FittedModel::Lmm { transform, .. }
            | FittedModel::Gamm { transform, .. }
            | FittedModel::Gnmm { transform, .. }
            | FittedModel::Nme { transform, .. } => transform,
        }
    }

    /// Predictions for raw rows of training subjects, original scale.
    pub fn predict(&self, rows: &PanelDataset) -> Result<Vec<f64>> {
        let data = self.transform().apply(rows)?;
        Ok(match self {
            FittedModel::Lmm { fit, transform } => fit.predict(&data, transform)?,
            FittedModel::Gamm { fit, transform } => fit.predict(&data, transform)?,
            FittedModel::Gnmm { fit, .. } => fit.predict(&data)?,
            FittedModel::Nme { fit, .. } => fit.predict(&data)?,
        })
    }

    pub fn report_text(&self) -> String {
        match self {
            FittedModel::Lmm { fit, .. } => fit.report_text(),
            FittedModel::Gamm { fit, .. } => fit.report_text(),
            FittedModel::Gnmm { fit, .. } => fit.report_text(),
            FittedModel::Nme { fit, .. } => fit.report_text(),
        }
    }

    /// Serialized fit: key-value lines for the linear models, the state
    /// file for the neural ones.
    pub fn serialize(&self) -> Result<String> {
        let kv = |pairs: Vec<(String, String)>| {
            let mut s = String::new();
            for (k, v) in pairs {
                let _ = writeln!(s, "{k} = {v}");
            }
            s
        };
        let mut buf = Vec::new();
        match self {
            FittedModel::Lmm { fit, .. } => return Ok(kv(fit.to_key_values())),
            FittedModel::Gamm { fit, .. } => return Ok(kv(fit.to_key_values())),
            FittedModel::Gnmm { fit, .. } => fit.write_state(&mut buf)?,
            FittedModel::Nme { fit, .. } => fit.write_state(&mut buf)?,
        }
        Ok(String::from_utf8(buf).expect("state files are ASCII"))
    }

    pub fn state_extension(&self) -> &'static str {
        match self {
            FittedModel::Lmm { .. } | FittedModel::Gamm { .. } => "kv",
            _ => "state",
        }
    }
}
