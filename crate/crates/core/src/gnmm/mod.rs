//! Neural network mixed model: a ReLU perceptron for the mean plus a
//! Gaussian random intercept per subject, trained by stochastic ascent
//! on the Laplace-approximated quasi-likelihood.
//!
//! Gaussian case throughout: identity output, unit variance function,
//! dispersion `φ = σ²`. The per-batch step is on the batch estimate of
//! the objective divided by the number of training rows.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::neural::{epoch_batches, neural_input, TargetScaler, TrainingRows, NEURAL_INPUT_DIM};
use crate::numeric::mlp::{backward_accumulate, forward_into, BackwardScratch};
use crate::numeric::{seeded_rng, ForwardCache, MlpArchitecture, NetworkParams};
use crate::panel::PanelDataset;

/// Lower bound applied to the per-epoch variance updates.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GnmmConfig {
    pub architecture: MlpArchitecture,
    pub ridge_lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub random_intercept: bool,
    /// Closed-form refresh of every `b_i` after each epoch.
    pub laplace_refresh: bool,
    pub seed: u64,
}

impl GnmmConfig {
    /// Three ReLU nodes, λ = 0.001, learning rate 0.005.
    pub fn one_layer() -> Self {
        Self {
            architecture: MlpArchitecture { input_dim: NEURAL_INPUT_DIM, hidden: vec![3] },
            ridge_lambda: 0.001,
            learning_rate: 0.005,
            epochs: 500,
            batch_size: 64,
            random_intercept: true,
            laplace_refresh: true,
            seed: 0,
        }
    }

    /// Three then two ReLU nodes, λ = 0.002, learning rate 0.005.
    pub fn two_layer() -> Self {
        Self {
            architecture: MlpArchitecture { input_dim: NEURAL_INPUT_DIM, hidden: vec![3, 2] },
            ridge_lambda: 0.002,
            ..Self::one_layer()
        }
    }

    /// Three ReLU nodes, λ = 0.001, learning rate 0.001, no random effect.
    pub fn ann_baseline() -> Self {
        Self { learning_rate: 0.001, random_intercept: false, ..Self::one_layer() }
    }

    pub fn validate(&self) -> Result<()> {
        MlpArchitecture::new(self.architecture.input_dim, self.architecture.hidden.clone())?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidInput("epochs and batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.ridge_lambda >= 0.0) {
            return Err(Error::InvalidInput("learning rate must be > 0 and ridge penalty >= 0".into()));
        }
        Ok(())
    }
}

impl Default for GnmmConfig {
    fn default() -> Self {
        Self::one_layer()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnmmState {
    pub architecture: MlpArchitecture,
    pub params: NetworkParams,
    pub subjects: Vec<u32>,
    /// Random intercepts on the scaled target, one per entry of `subjects`.
    pub b: Vec<f64>,
    pub sigma_sq: f64,
    pub sigma_b_sq: f64,
    pub random_intercept: bool,
    pub scaler: TargetScaler,
}

impl GnmmState {
    pub fn slot(&self, subject: u32) -> Option<usize> {
        self.subjects.binary_search(&subject).ok()
    }

    /// Network output without the random intercept.
    pub fn network_output(&self, x: &[f64]) -> Result<f64> {
        Ok(crate::numeric::mlp_forward(&self.architecture, &self.params, None, x)?.output)
    }

    /// Conditional mean on the scaled target.
    pub fn forward_mean(&self, x: &[f64], subject: u32) -> Result<f64> {
        let b = if self.random_intercept {
            self.b[self.slot(subject).ok_or(Error::UnknownSubject(subject))?]
        } else {
            0.0
        };
        Ok(self.network_output(x)? + b)
    }

    pub fn sigma_sq_original(&self) -> f64 {
        self.sigma_sq * self.scaler.sd * self.scaler.sd
    }

    pub fn sigma_b_sq_original(&self) -> f64 {
        self.sigma_b_sq * self.scaler.sd * self.scaler.sd
    }

    fn b_at(&self, slot: usize) -> f64 {
        if self.random_intercept {
            self.b[slot]
        } else {
            0.0
        }
    }
}

/// `∫_y^μ (y − u) du = −(y − μ)²/2`.
pub fn quasi_deviance(y: f64, mu: f64) -> f64 {
    -0.5 * (y - mu) * (y - mu)
}

fn ridge(params: &NetworkParams, lambda: f64) -> f64 {
    lambda * params.norm_sq()
}

/// `(1/φ) Σ q(y, μ) − Σ b_i²/(2D) − λ(ωᵀω + δᵀδ)` over all rows.
pub fn training_objective(state: &GnmmState, rows: &TrainingRows, lambda: f64) -> Result<f64> {
    let mut cache = ForwardCache::for_params(&state.params);
    let mut data = 0.0;
    for i in 0..rows.len() {
        forward_into(&state.params, None, &rows.inputs[i], &mut cache);
        data += quasi_deviance(rows.targets[i], cache.output + state.b_at(rows.slot[i]));
    }
    let prior = if state.random_intercept { prior_term(&state.b, state.sigma_b_sq)? } else { 0.0 };
    Ok(data / state.sigma_sq - prior - ridge(&state.params, lambda))
}

fn prior_term(b: &[f64], d: f64) -> Result<f64> {
    let ss: f64 = b.iter().map(|v| v * v).sum();
    if d <= 0.0 {
        if ss > 0.0 {
            return Err(Error::InvalidInput("random-intercept variance is zero but intercepts are not".into()));
        }
        return Ok(0.0);
    }
    Ok(ss / (2.0 * d))
}

/// Training objective plus `−(N/2) ln φ − (m/2) ln D`, the terms that
/// make the per-epoch variance updates ascent steps as well.
pub fn traced_objective(state: &GnmmState, rows: &TrainingRows, lambda: f64) -> Result<f64> {
    let mut v = training_objective(state, rows, lambda)? - 0.5 * rows.len() as f64 * state.sigma_sq.ln();
    if state.random_intercept {
        v -= 0.5 * state.b.len() as f64 * state.sigma_b_sq.ln();
    }
    Ok(v)
}

/// Gradients of the batch objective
/// `(1/φ) Σ_B q − Σ_i (N_iB/n_i) b_i²/(2D) − λ(ωᵀω + δᵀδ)`.
#[derive(Debug, Clone)]
pub struct QuasiScore {
    pub params: NetworkParams,
    /// Indexed like `GnmmState::b`; zero for subjects outside the batch.
    pub b: Vec<f64>,
}

pub fn quasi_score_gradients(
    state: &GnmmState,
    rows: &TrainingRows,
    batch: &[usize],
    lambda: f64,
) -> Result<QuasiScore> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if state.b.len() != rows.subjects.len() || !state.params.matches(&state.architecture) {
        return Err(Error::Shape("state does not match the training rows".into()));
    }
    let mut grad = state.params.zeros_like();
    let mut gb = vec![0.0; state.b.len()];
    let mut in_batch = vec![0usize; state.b.len()];
    let mut cache = ForwardCache::for_params(&state.params);
    let mut scratch = BackwardScratch::default();
    for &i in batch {
        let k = rows.slot[i];
        forward_into(&state.params, None, &rows.inputs[i], &mut cache);
        let signal = (rows.targets[i] - cache.output - state.b_at(k)) / state.sigma_sq;
        backward_accumulate(&state.params, None, &cache, signal, &mut grad, &mut scratch);
        gb[k] += signal;
        in_batch[k] += 1;
    }
    if state.random_intercept {
        for k in 0..gb.len() {
            if in_batch[k] > 0 {
                if state.sigma_b_sq <= 0.0 {
                    return Err(Error::InvalidInput("random-intercept variance must be positive".into()));
                }
                gb[k] -= in_batch[k] as f64 / rows.counts[k] as f64 * state.b[k] / state.sigma_b_sq;
            }
        }
    } else {
        gb.fill(0.0);
    }
    grad.add_scaled(&state.params, -2.0 * lambda);
    Ok(QuasiScore { params: grad, b: gb })
}

/// Mode of `κ` for one subject: `D Σ r_j / (φ + n D)`, with `r` the
/// residuals from the network output alone.
pub fn laplace_mode(residuals: &[f64], sigma_sq: f64, sigma_b_sq: f64) -> Result<f64> {
    if !(sigma_b_sq > 0.0) || !(sigma_sq > 0.0) {
        return Err(Error::InvalidInput("Laplace mode needs positive variances".into()));
    }
    let n = residuals.len() as f64;
    Ok(sigma_b_sq * residuals.iter().sum::<f64>() / (sigma_sq + n * sigma_b_sq))
}

/// `κ′(b)` for one subject.
pub fn kappa_prime(residuals: &[f64], b: f64, sigma_sq: f64, sigma_b_sq: f64) -> f64 {
    -residuals.iter().map(|r| r - b).sum::<f64>() / sigma_sq + b / sigma_b_sq
}

/// Terms of the Laplace approximation left out of the training
/// objective: `−½ Σ_i [log D + log(n_i/φ + 1/D)]`.
pub fn laplace_correction(state: &GnmmState, rows: &TrainingRows) -> f64 {
    if !state.random_intercept || state.sigma_b_sq <= 0.0 {
        return 0.0;
    }
    let d = state.sigma_b_sq;
    rows.counts
        .iter()
        .map(|&n| -0.5 * (d.ln() + (n as f64 / state.sigma_sq + 1.0 / d).ln()))
        .sum()
}

#[derive(Debug, Clone)]
pub struct GnmmFit {
    pub config: GnmmConfig,
    pub state: GnmmState,
    /// [`traced_objective`] after each epoch.
    pub objective_trace: Vec<f64>,
}

fn residuals_without_b(state: &GnmmState, rows: &TrainingRows) -> Vec<f64> {
    let mut cache = ForwardCache::for_params(&state.params);
    (0..rows.len())
        .map(|i| {
            forward_into(&state.params, None, &rows.inputs[i], &mut cache);
            rows.targets[i] - cache.output
        })
        .collect()
}

/// Runs the stochastic training loop. Features should already be
/// standardized; the target is standardized here.
pub fn train(config: &GnmmConfig, data: &PanelDataset) -> Result<GnmmFit> {
    config.validate()?;
    if config.architecture.input_dim != NEURAL_INPUT_DIM {
        return Err(Error::Shape(format!(
            "network input must be {NEURAL_INPUT_DIM} wide, got {}",
            config.architecture.input_dim
        )));
    }
    let scaler = TargetScaler::fit(&data.column(crate::panel::Column::TotalUpdrs))?;
    let rows = TrainingRows::new(data, &scaler)?;
    let mut rng = seeded_rng(config.seed);
    let params = NetworkParams::xavier(&config.architecture, &mut rng);
    let mut state = GnmmState {
        architecture: config.architecture.clone(),
        params,
        subjects: rows.subjects.clone(),
        b: vec![0.0; rows.subjects.len()],
        sigma_sq: 1.0,
        sigma_b_sq: 1.0,
        random_intercept: config.random_intercept,
        scaler,
    };
    let n = rows.len() as f64;
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        for batch in epoch_batches(rows.len(), config.batch_size, &mut rng) {
            let g = quasi_score_gradients(&state, &rows, &batch, 0.0)?;
            let bs = batch.len() as f64;
            let lr = config.learning_rate;
            let shrink = 1.0 - lr * 2.0 * config.ridge_lambda / n;
            state.params.scale(shrink);
            state.params.add_scaled(&g.params, lr / bs);
            if state.random_intercept {
                for (b, gb) in state.b.iter_mut().zip(&g.b) {
                    *b += lr * gb / bs;
                }
            }
        }
        if !state.params.all_finite() || !training_objective(&state, &rows, config.ridge_lambda)?.is_finite() {
            return Err(Error::Divergence { epoch });
        }

        let resid = residuals_without_b(&state, &rows);
        if state.random_intercept && config.laplace_refresh {
            let mut per: Vec<Vec<f64>> = vec![Vec::new(); state.b.len()];
            for (i, r) in resid.iter().enumerate() {
                per[rows.slot[i]].push(*r);
            }
            for (k, r) in per.iter().enumerate() {
                state.b[k] = laplace_mode(r, state.sigma_sq, state.sigma_b_sq)?;
            }
        }
        let sse: f64 = resid.iter().enumerate().map(|(i, r)| (r - state.b_at(rows.slot[i])).powi(2)).sum();
        state.sigma_sq = (sse / n).max(VARIANCE_FLOOR);
        if state.random_intercept {
            state.sigma_b_sq = sample_variance(&state.b).max(VARIANCE_FLOOR);
        }
        let objective = traced_objective(&state, &rows, config.ridge_lambda)?;
        if !objective.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        trace.push(objective);
    }
    Ok(GnmmFit { config: config.clone(), state, objective_trace: trace })
}

/// Unbiased sample variance (divisor `n − 1`).
pub fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

impl GnmmFit {
    /// Predictions on the response scale of the training data.
    pub fn predict(&self, rows: &PanelDataset) -> Result<Vec<f64>> {
        rows.rows()
            .iter()
            .map(|r| Ok(self.state.scaler.unscale(self.state.forward_mean(&neural_input(r), r.subject)?)))
            .collect()
    }

    pub fn report_text(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        let _ = writeln!(
            s,
            "neural mixed model, hidden {:?}, ridge {}, learning rate {}, {} epochs, batch {}, random intercept {}",
            c.architecture.hidden, c.ridge_lambda, c.learning_rate, c.epochs, c.batch_size, c.random_intercept
        );
        let _ = writeln!(s, "residual variance {:.6}", self.state.sigma_sq_original());
        if c.random_intercept {
            let _ = writeln!(s, "random intercept variance {:.6}", self.state.sigma_b_sq_original());
        }
        if let Some(last) = self.objective_trace.last() {
            let _ = writeln!(s, "final training objective {last:.4}");
        }
        s
    }

    /// Key-value header, then the flat network parameters, then one
    /// `subject intercept` line per subject.
    pub fn write_state<W: Write>(&self, mut out: W) -> Result<()> {
        let st = &self.state;
        let c = &self.config;
        writeln!(out, "hidden={}", c.architecture.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","))?;
        writeln!(out, "input_dim={}", c.architecture.input_dim)?;
        writeln!(out, "ridge_lambda={}", c.ridge_lambda)?;
        writeln!(out, "learning_rate={}", c.learning_rate)?;
        writeln!(out, "epochs={}", c.epochs)?;
        writeln!(out, "batch_size={}", c.batch_size)?;
        writeln!(out, "random_intercept={}", c.random_intercept)?;
        writeln!(out, "seed={}", c.seed)?;
        writeln!(out, "sigma_sq={:e}", st.sigma_sq)?;
        writeln!(out, "sigma_b_sq={:e}", st.sigma_b_sq)?;
        writeln!(out, "target_mean={:e}", st.scaler.mean)?;
        writeln!(out, "target_sd={:e}", st.scaler.sd)?;
        writeln!(out, "[params]")?;
        for v in st.params.to_flat() {
            writeln!(out, "{v:e}")?;
        }
        writeln!(out, "[intercepts]")?;
        for (s, b) in st.subjects.iter().zip(&st.b) {
            writeln!(out, "{s} {b:e}")?;
        }
        Ok(())
    }

    pub fn read_state<R: BufRead>(input: R) -> Result<Self> {
        let mut kv = std::collections::BTreeMap::new();
        let mut flat = Vec::new();
        let mut subjects = Vec::new();
        let mut b = Vec::new();
        let mut section = "";
        let bad = |m: String| Error::InvalidInput(format!("state file: {m}"));
        for line in input.lines() {
            let line = line?;
            let line = line.trim();
            match line {
                "" => continue,
                "[params]" => section = "params",
                "[intercepts]" => section = "intercepts",
                _ => match section {
                    "" => {
                        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad header line `{line}`")))?;
                        kv.insert(k.to_string(), v.to_string());
                    }
                    "params" => flat.push(line.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                    _ => {
                        let (s, v) = line.split_once(' ').ok_or_else(|| bad(format!("bad intercept line `{line}`")))?;
                        subjects.push(s.parse::<u32>().map_err(|e| bad(e.to_string()))?);
                        b.push(v.parse::<f64>().map_err(|e| bad(e.to_string()))?);
                    }
                },
            }
        }
        let get = |k: &str| kv.get(k).cloned().ok_or_else(|| bad(format!("missing `{k}`")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse::<f64>().map_err(|e| bad(e.to_string())) };
        let int = |k: &str| -> Result<u64> { get(k)?.parse::<u64>().map_err(|e| bad(e.to_string())) };
        let hidden = get("hidden")?
            .split(',')
            .map(|h| h.parse::<usize>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let architecture = MlpArchitecture::new(int("input_dim")? as usize, hidden)?;
        let random_intercept = get("random_intercept")? == "true";
        let config = GnmmConfig {
            architecture: architecture.clone(),
            ridge_lambda: num("ridge_lambda")?,
            learning_rate: num("learning_rate")?,
            epochs: int("epochs")? as usize,
            batch_size: int("batch_size")? as usize,
            random_intercept,
            laplace_refresh: true,
            seed: int("seed")?,
        };
        let params = NetworkParams::from_flat(&architecture, &flat)?;
        let state = GnmmState {
            architecture,
            params,
            subjects,
            b,
            sigma_sq: num("sigma_sq")?,
            sigma_b_sq: num("sigma_b_sq")?,
            random_intercept,
            scaler: TargetScaler { mean: num("target_mean")?, sd: num("target_sd")? },
        };
        Ok(Self { config, state, objective_trace: Vec::new() })
    }
}
