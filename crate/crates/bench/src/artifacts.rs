//! Files written next to the report: predictions, serialized fits,
//! plot-ready CSVs and the provenance manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use longimix_core::gamm::GammFit;
use longimix_core::lmm::LmmFit;
use longimix_core::panel::{Column, PanelDataset, TransformSpec};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{BenchError, Result};

/// Grid size of the smooth curve.
pub const SMOOTH_POINTS: usize = 200;

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| BenchError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// `subject,test_time,truth,prediction` for raw rows.
pub fn predictions_csv(rows: &PanelDataset, predictions: &[f64]) -> String {
    let mut s = String::from("subject,test_time,truth,prediction\n");
    for (r, p) in rows.rows().iter().zip(predictions) {
        let _ = writeln!(s, "{},{},{},{}", r.subject, r.test_time, r.total_updrs, p);
    }
    s
}

/// Fits whose diagnostics can be drawn, with the transform each was
/// trained under and the raw training rows.
pub struct PlotInputs<'a> {
    pub train: &'a PanelDataset,
    pub lmm: Option<(&'a LmmFit, &'a TransformSpec)>,
    pub gamm: Option<(&'a GammFit, &'a TransformSpec)>,
}

/// Blom plotting positions mapped through the standard normal quantile.
pub fn normal_scores(n: usize) -> Vec<f64> {
    let z = Normal::new(0.0, 1.0).expect("unit normal");
    (1..=n)
        .map(|i| z.inverse_cdf((i as f64 - 0.375) / (n as f64 + 0.25)))
        .collect()
}

fn sorted_with_scores(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = normal_scores(v.len());
    v.into_iter().zip(q).collect()
}

/// Model-scale fitted values on the training rows.
fn fitted(model: &str, inputs: &PlotInputs, transform: &TransformSpec) -> Result<(PanelDataset, Vec<f64>)> {
    let data = transform.apply(inputs.train)?;
    let values = match model {
        "lmm_final" => inputs.lmm.expect("caller checked").0.predict_linear(&data)?,
        _ => inputs.gamm.expect("caller checked").0.predict_linear(&data)?,
    };
    Ok((data, values))
}

/// Writes `gamm_smooth.csv`, `trajectories.csv`, `residuals.csv` and
/// `random_effects.csv` under `dir`; returns the paths written.
pub fn emit_plot_data(inputs: &PlotInputs, dir: &Path) -> Result<Vec<PathBuf>> {
    if inputs.lmm.is_none() && inputs.gamm.is_none() {
        return Err(BenchError::Missing(
            "plot data needs an lmm_final or gamm_final fit; neither is present".into(),
        ));
    }
    let mut written = Vec::new();
    if let Some((fit, transform)) = inputs.gamm {
        let time = transform.stats_for(Column::TestTime).copied();
        let mut s = String::from("test_time_days,test_time,smooth\n");
        for (t, f) in fit.smooth_curve(SMOOTH_POINTS) {
            let days = time.map_or(t, |c| t * c.sd + c.mean);
            let _ = writeln!(s, "{days},{t},{f}");
        }
        let path = dir.join("gamm_smooth.csv");
        write_file(&path, &s)?;
        written.push(path);
    }

    let mut traj = String::from("model,subject,test_time,observed,fitted\n");
    let mut resid = String::from("model,fitted,residual,sorted_residual,normal_score\n");
    let mut re = String::from("model,subject,intercept,sorted_intercept,normal_score\n");
    let present: Vec<(&str, &TransformSpec)> = [
        inputs.lmm.map(|(_, t)| ("lmm_final", t)),
        inputs.gamm.map(|(_, t)| ("gamm_final", t)),
    ]
    .into_iter()
    .flatten()
    .collect();
    for (name, transform) in present {
        let (data, values) = fitted(name, inputs, transform)?;
        let mut residuals = Vec::with_capacity(values.len());
        for ((raw, row), v) in inputs.train.rows().iter().zip(data.rows()).zip(&values) {
            let _ = writeln!(
                traj,
                "{name},{},{},{},{}",
                raw.subject,
                raw.test_time,
                raw.total_updrs,
                transform.inverse_response(*v)
            );
            residuals.push(row.total_updrs - v);
        }
        for ((f, r), (sr, q)) in values.iter().zip(&residuals).zip(sorted_with_scores(&residuals)) {
            let _ = writeln!(resid, "{name},{f},{r},{sr},{q}");
        }
        let blups: Vec<(u32, f64)> = match name {
            "lmm_final" => inputs.lmm.expect("present").0.blups.iter().map(|(s, b)| (*s, b[0])).collect(),
            _ => inputs.gamm.expect("present").0.blups.iter().map(|(s, b)| (*s, b[0])).collect(),
        };
        let intercepts: Vec<f64> = blups.iter().map(|b| b.1).collect();
        for ((s, b), (sb, q)) in blups.iter().zip(sorted_with_scores(&intercepts)) {
            let _ = writeln!(re, "{name},{s},{b},{sb},{q}");
        }
    }
    for (file, body) in [("trajectories.csv", traj), ("residuals.csv", resid), ("random_effects.csv", re)] {
        let path = dir.join(file);
        write_file(&path, &body)?;
        written.push(path);
    }
    Ok(written)
}
