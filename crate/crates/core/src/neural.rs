//! Pieces shared by the neural mixed models: input extraction, target
//! scaling, subject slots and shuffled mini-batches.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::numeric::SeededRng;
use crate::panel::{mean_sd, ObservationRow, PanelDataset, VOICE_DIM};

/// `test_time` followed by the 16 voice measures.
pub const NEURAL_INPUT_DIM: usize = VOICE_DIM + 1;

pub fn neural_input(row: &ObservationRow) -> [f64; NEURAL_INPUT_DIM] {
    let mut x = [0.0; NEURAL_INPUT_DIM];
    x[0] = row.test_time;
    x[1..].copy_from_slice(&row.voice);
    x
}

/// Standardization of the response for training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetScaler {
    pub mean: f64,
    pub sd: f64,
}

impl TargetScaler {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput("target scaling needs at least 2 values".into()));
        }
        let (mean, sd) = mean_sd(values);
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(Error::ZeroVariance("total_updrs".into()));
        }
        Ok(Self { mean, sd })
    }

    pub fn identity() -> Self {
        Self { mean: 0.0, sd: 1.0 }
    }

    pub fn scale(&self, y: f64) -> f64 {
        (y - self.mean) / self.sd
    }

    pub fn unscale(&self, y: f64) -> f64 {
        y * self.sd + self.mean
    }
}

/// Rows flattened for training: inputs, scaled targets and subject slots.
#[derive(Debug, Clone)]
pub struct TrainingRows {
    pub inputs: Vec<[f64; NEURAL_INPUT_DIM]>,
    pub targets: Vec<f64>,
    /// Index into `subjects` for each row.
    pub slot: Vec<usize>,
    pub subjects: Vec<u32>,
    /// Rows per subject slot.
    pub counts: Vec<usize>,
}

impl TrainingRows {
    pub fn new(data: &PanelDataset, scaler: &TargetScaler) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidInput("no training rows".into()));
        }
        let subjects = data.subjects().to_vec();
        let index: BTreeMap<u32, usize> = subjects.iter().enumerate().map(|(k, &s)| (s, k)).collect();
        let mut counts = vec![0; subjects.len()];
        let mut slot = Vec::with_capacity(data.len());
        for r in data.rows() {
            let k = index[&r.subject];
            counts[k] += 1;
            slot.push(k);
        }
        Ok(Self {
            inputs: data.rows().iter().map(neural_input).collect(),
            targets: data.rows().iter().map(|r| scaler.scale(r.total_updrs)).collect(),
            slot,
            subjects,
            counts,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// One epoch's shuffled row indices cut into batches (the last may be short).
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}
