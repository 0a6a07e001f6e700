use crate::error::{Error, Result};
use crate::panel::columns::Column;
use crate::panel::dataset::PanelDataset;

/// Mean and standard deviation captured from training rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnStats {
    pub column: Column,
    pub mean: f64,
    pub sd: f64,
}

/// How predictions on the log scale are mapped back to UPDRS units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BackTransform {
    /// `exp(mu)`.
    #[default]
    Naive,
    /// `exp(mu + sigma_sq / 2)`, the lognormal mean.
    LognormalMean { sigma_sq: f64 },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransformSpec {
    pub standardize_features: bool,
    pub log_response: bool,
    /// Filled in by [`apply_transforms`]; empty until then.
    pub stats: Vec<ColumnStats>,
    pub back_transform: BackTransform,
}

impl TransformSpec {
    pub fn new(standardize_features: bool, log_response: bool) -> Self {
        Self {
            standardize_features,
            log_response,
            ..Self::default()
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn is_fitted(&self) -> bool {
        !self.standardize_features || !self.stats.is_empty()
    }

    pub fn stats_for(&self, column: Column) -> Option<&ColumnStats> {
        self.stats.iter().find(|s| s.column == column)
    }

    /// Maps a model-scale response back to the original UPDRS scale.
    pub fn inverse_response(&self, value: f64) -> f64 {
        if !self.log_response {
            return value;
        }
        match self.back_transform {
            BackTransform::Naive => value.exp(),
            BackTransform::LognormalMean { sigma_sq } => (value + 0.5 * sigma_sq).exp(),
        }
    }

    pub fn forward_response(&self, value: f64) -> f64 {
        if self.log_response {
            value.ln()
        } else {
            value
        }
    }

    /// Applies already-fitted statistics to a raw dataset.
    pub fn apply(&self, data: &PanelDataset) -> Result<PanelDataset> {
        if !self.is_fitted() {
            return Err(Error::InvalidInput(
                "standardization statistics have not been fitted".into(),
            ));
        }
        let rows = data.map_rows(|row| {
            if self.standardize_features {
                for s in &self.stats {
                    row.set(s.column, (row.get(s.column) - s.mean) / s.sd);
                }
            }
            if self.log_response {
                row.total_updrs = row.total_updrs.ln();
            }
        });
        let mut out = data.with_rows(rows);
        out.provenance.transforms.push(self.describe());
        Ok(out)
    }

    fn describe(&self) -> String {
        let mut parts = Vec::new();
        if self.standardize_features {
            parts.push(format!("standardize({} columns)", self.stats.len()));
        }
        if self.log_response {
            parts.push("log(total_UPDRS)".to_string());
        }
        if parts.is_empty() {
            "identity".into()
        } else {
            parts.join("+")
        }
    }
}

/// Sample mean and standard deviation with divisor `n - 1`.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Fits standardization statistics on `train` and applies them to both
/// partitions.
pub fn apply_transforms(
    train: &PanelDataset,
    test: &PanelDataset,
    spec: &TransformSpec,
) -> Result<(PanelDataset, PanelDataset, TransformSpec)> {
    let mut fitted = spec.clone();
    fitted.stats.clear();
    if spec.standardize_features {
        for column in Column::STANDARDIZED {
            let (mean, sd) = mean_sd(&train.column(column));
            if !(sd > 0.0) || !sd.is_finite() {
                return Err(Error::ZeroVariance(column.header().to_string()));
            }
            fitted.stats.push(ColumnStats { column, mean, sd });
        }
    }
    let train_t = fitted.apply(train)?;
    let test_t = fitted.apply(test)?;
    Ok((train_t, test_t, fitted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::dataset::ObservationRow;

    fn row(subject: u32, t: f64, total: f64) -> ObservationRow {
        ObservationRow {
            subject,
            age: 50.0 + subject as f64,
            sex: 0.0,
            test_time: t,
            motor_updrs: 5.0,
            total_updrs: total,
            voice: std::array::from_fn(|k| k as f64 + t),
        }
    }

    #[test]
    fn two_row_column_standardizes_to_plus_minus_inverse_sqrt_two() {
        let train = PanelDataset::from_rows(vec![row(1, 0.0, 10.0), row(2, 2.0, 10.0)], "t").unwrap();
        let (tr, _, fitted) = apply_transforms(&train, &train, &TransformSpec::new(true, false)).unwrap();
        let t = tr.column(Column::TestTime);
        // mean 1, sample variance 2 with divisor n - 1
        let x = 1.0 / 2f64.sqrt();
        assert!((t[0] + x).abs() < 1e-15 && (t[1] - x).abs() < 1e-15);
        assert_eq!(fitted.stats_for(Column::TestTime).unwrap().sd, 2f64.sqrt());
    }

    #[test]
    fn constant_column_is_rejected_by_name() {
        let mut a = row(1, 0.0, 10.0);
        let mut b = row(2, 2.0, 10.0);
        a.voice[12] = 3.0;
        b.voice[12] = 3.0;
        let train = PanelDataset::from_rows(vec![a, b], "t").unwrap();
        match apply_transforms(&train, &train, &TransformSpec::new(true, false)) {
            Err(Error::ZeroVariance(name)) => assert_eq!(name, "HNR"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn log_response_of_e_is_one() {
        let ds = PanelDataset::from_rows(vec![row(1, 0.0, std::f64::consts::E)], "t").unwrap();
        let (tr, _, spec) = apply_transforms(&ds, &ds, &TransformSpec::new(false, true)).unwrap();
        assert!((tr.rows()[0].total_updrs - 1.0).abs() < 1e-15);
        assert!((spec.inverse_response(1.0) - std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn test_partition_uses_training_statistics() {
        let train = PanelDataset::from_rows(
            (0..5).map(|k| row(k, k as f64, 10.0 + k as f64)).collect(),
            "t",
        )
        .unwrap();
        let test = PanelDataset::from_rows(vec![row(9, 100.0, 30.0)], "t").unwrap();
        let (tr, te, spec) = apply_transforms(&train, &test, &TransformSpec::new(true, true)).unwrap();
        let s = spec.stats_for(Column::TestTime).unwrap();
        assert!((te.rows()[0].test_time - (100.0 - s.mean) / s.sd).abs() < 1e-12);
        let (m, sd) = mean_sd(&tr.column(Column::Age));
        assert!(m.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        // re-applying the fitted statistics to the raw rows reproduces the output
        assert_eq!(spec.apply(&train).unwrap().rows(), tr.rows());
        assert_eq!(tr.provenance.transforms.len(), 1);
    }
}
