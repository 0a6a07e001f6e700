//! Neural mixed effects: a shared perceptron `θ̄` plus per-subject
//! deviations `η_i` on chosen parameter groups, with a diagonal Gaussian
//! penalty on the deviations.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::neural::{epoch_batches, neural_input, TargetScaler, TrainingRows, NEURAL_INPUT_DIM};
use crate::numeric::mlp::{backward_accumulate, forward_into, BackwardScratch};
use crate::numeric::{adam_step, seeded_rng, AdamConfig, AdamState, ForwardCache, MlpArchitecture, NetworkParams};
use crate::panel::{Column, PanelDataset};

/// Lower bound on every diagonal entry of `Σ` and on `σ²`.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LayerRef {
    /// Hidden layer, 1-based.
    Hidden(usize),
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamPart {
    Weights,
    Bias,
}

/// A block of network parameters that may carry subject deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamGroup {
    pub layer: LayerRef,
    pub part: ParamPart,
}

impl ParamGroup {
    pub const OUTPUT_BIAS: ParamGroup = ParamGroup { layer: LayerRef::Output, part: ParamPart::Bias };

    fn layer_index(&self, arch: &MlpArchitecture) -> Result<usize> {
        match self.layer {
            LayerRef::Output => Ok(arch.hidden.len()),
            LayerRef::Hidden(k) if k >= 1 && k <= arch.hidden.len() => Ok(k - 1),
            LayerRef::Hidden(k) => Err(Error::InvalidInput(format!(
                "hidden layer {k} does not exist ({} hidden layers)",
                arch.hidden.len()
            ))),
        }
    }

    /// Every group of an architecture.
    pub fn all(arch: &MlpArchitecture) -> Vec<ParamGroup> {
        let layers = (1..=arch.hidden.len()).map(LayerRef::Hidden).chain([LayerRef::Output]);
        layers
            .flat_map(|layer| [ParamPart::Weights, ParamPart::Bias].map(|part| ParamGroup { layer, part }))
            .collect()
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let part = match self.part {
            ParamPart::Weights => "weights",
            ParamPart::Bias => "bias",
        };
        match self.layer {
            LayerRef::Hidden(k) => write!(f, "layer{k}.{part}"),
            LayerRef::Output => write!(f, "output.{part}"),
        }
    }
}

impl FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("unknown parameter group `{s}`"));
        let (layer, part) = s.trim().split_once('.').ok_or_else(bad)?;
        let part = match part {
            "weights" => ParamPart::Weights,
            "bias" | "biases" => ParamPart::Bias,
            _ => return Err(bad()),
        };
        let layer = match layer {
            "output" => LayerRef::Output,
            l => LayerRef::Hidden(l.strip_prefix("layer").and_then(|k| k.parse().ok()).ok_or_else(bad)?),
        };
        Ok(ParamGroup { layer, part })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmeConfig {
    pub architecture: MlpArchitecture,
    pub person_specific: Vec<ParamGroup>,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for NmeConfig {
    /// Hidden layers of 32 and 16, deviations on the output bias, 4000
    /// epochs of batch 512.
    fn default() -> Self {
        Self {
            architecture: MlpArchitecture { input_dim: NEURAL_INPUT_DIM, hidden: vec![32, 16] },
            person_specific: vec![ParamGroup::OUTPUT_BIAS],
            epochs: 4000,
            batch_size: 512,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl NmeConfig {
    pub fn validate(&self) -> Result<()> {
        MlpArchitecture::new(self.architecture.input_dim, self.architecture.hidden.clone())?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidInput("epochs and batch size must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::InvalidInput("learning rate must be positive".into()));
        }
        self.mask().map(|_| ())
    }

    /// 1 on person-specific coordinates, 0 elsewhere.
    pub fn mask(&self) -> Result<NetworkParams> {
        person_mask(&self.architecture, &self.person_specific)
    }
}

pub fn person_mask(arch: &MlpArchitecture, groups: &[ParamGroup]) -> Result<NetworkParams> {
    let mut mask = NetworkParams::zeros(arch);
    for g in groups {
        let layer = &mut mask.layers[g.layer_index(arch)?];
        match g.part {
            ParamPart::Weights => layer.weights.fill(1.0),
            ParamPart::Bias => layer.bias.fill(1.0),
        }
    }
    Ok(mask)
}

fn zip_map(a: &NetworkParams, b: &NetworkParams, f: impl Fn(f64, f64) -> f64) -> NetworkParams {
    let mut out = a.clone();
    for (o, (_, bb)) in out.blocks_mut().into_iter().zip(b.blocks()) {
        for (x, y) in o.iter_mut().zip(bb) {
            *x = f(*x, *y);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmeState {
    pub architecture: MlpArchitecture,
    pub theta_bar: NetworkParams,
    pub subjects: Vec<u32>,
    /// Per-subject deviations, zero outside `mask`.
    pub eta: Vec<NetworkParams>,
    pub mask: NetworkParams,
    /// Diagonal of `Σ`; entries outside `mask` are unused and kept at 1.
    pub tau_sq: NetworkParams,
    pub sigma_sq: f64,
    pub scaler: TargetScaler,
}

impl NmeState {
    pub fn slot(&self, subject: u32) -> Option<usize> {
        self.subjects.binary_search(&subject).ok()
    }

    /// Scaled-target prediction. `None` uses the population parameters.
    pub fn predict_one(&self, x: &[f64], subject: Option<u32>) -> Result<f64> {
        let offsets = match subject {
            None => None,
            Some(s) => Some(&self.eta[self.slot(s).ok_or(Error::UnknownSubject(s))?]),
        };
        Ok(crate::numeric::mlp_forward(&self.architecture, &self.theta_bar, offsets, x)?.output)
    }

    /// `η_kᵀ Σ⁻¹ η_k`.
    pub fn eta_quadratic(&self, slot: usize) -> f64 {
        let mut q = 0.0;
        for (((_, e), (_, t)), (_, m)) in self.eta[slot].blocks().into_iter().zip(self.tau_sq.blocks()).zip(self.mask.blocks()) {
            for k in 0..e.len() {
                if m[k] != 0.0 {
                    q += e[k] * e[k] / t[k];
                }
            }
        }
        q
    }

    /// Diagonal of `Σ` on the original target scale for person-specific
    /// coordinates, by block name and index.
    pub fn tau_sq_original(&self) -> Vec<(String, usize, f64)> {
        let s2 = self.scaler.sd * self.scaler.sd;
        let mut out = Vec::new();
        for ((name, t), (_, m)) in self.tau_sq.blocks().into_iter().zip(self.mask.blocks()) {
            for k in 0..t.len() {
                if m[k] != 0.0 {
                    out.push((name.clone(), k, t[k] * s2));
                }
            }
        }
        out
    }

    pub fn sigma_sq_original(&self) -> f64 {
        self.sigma_sq * self.scaler.sd * self.scaler.sd
    }
}

/// Rows per subject in one batch and per subject in the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPenaltyLedger {
    /// `N_{k,B}` by subject slot, for subjects present in the batch.
    pub counts: BTreeMap<usize, usize>,
    /// `m_k` by subject slot.
    pub totals: Vec<usize>,
}

impl BatchPenaltyLedger {
    pub fn for_batch(rows: &TrainingRows, batch: &[usize]) -> Self {
        let mut counts = BTreeMap::new();
        for &i in batch {
            *counts.entry(rows.slot[i]).or_insert(0) += 1;
        }
        Self { counts, totals: rows.counts.clone() }
    }

    /// `N_{k,B} / m_k`.
    pub fn weight(&self, slot: usize) -> f64 {
        self.counts.get(&slot).map_or(0.0, |&n| n as f64 / self.totals[slot] as f64)
    }
}

#[derive(Debug, Clone)]
pub struct NmeGradients {
    pub theta_bar: NetworkParams,
    /// `(slot, gradient)` for every subject with a nonzero penalty weight.
    pub eta: Vec<(usize, NetworkParams)>,
}

/// Loss `data_weight Σ_rows ½(y − μ)²/σ² + Σ_k w_k η_kᵀΣ⁻¹η_k` and its
/// gradient (for minimization).
fn loss_and_gradients(
    state: &NmeState,
    rows: &TrainingRows,
    batch: &[usize],
    data_weight: f64,
    penalty_weight: &BTreeMap<usize, f64>,
) -> (f64, NmeGradients) {
    let mut cache = ForwardCache::for_params(&state.theta_bar);
    let mut scratch = BackwardScratch::default();
    let mut per: BTreeMap<usize, NetworkParams> = BTreeMap::new();
    let mut loss = 0.0;
    for &i in batch {
        let k = rows.slot[i];
        let eta = &state.eta[k];
        forward_into(&state.theta_bar, Some(eta), &rows.inputs[i], &mut cache);
        let r = rows.targets[i] - cache.output;
        loss += data_weight * 0.5 * r * r / state.sigma_sq;
        let g = per.entry(k).or_insert_with(|| state.theta_bar.zeros_like());
        backward_accumulate(&state.theta_bar, Some(eta), &cache, -data_weight * r / state.sigma_sq, g, &mut scratch);
    }
    let mut theta_bar = state.theta_bar.zeros_like();
    for g in per.values() {
        theta_bar.add_scaled(g, 1.0);
    }
    let mut eta = Vec::with_capacity(penalty_weight.len());
    for (&k, &w) in penalty_weight {
        loss += w * state.eta_quadratic(k);
        let data = per.remove(&k).unwrap_or_else(|| state.theta_bar.zeros_like());
        let pen = zip_map(&state.eta[k], &state.tau_sq, |e, t| 2.0 * w * e / t);
        let mut g = zip_map(&data, &pen, |a, b| a + b);
        g = zip_map(&g, &state.mask, |a, m| a * m);
        eta.push((k, g));
    }
    (loss, NmeGradients { theta_bar, eta })
}

fn full_weights(state: &NmeState) -> BTreeMap<usize, f64> {
    (0..state.eta.len()).map(|k| (k, 1.0)).collect()
}

/// `Σ_ij ½(y − μ)²/σ² + Σ_i η_iᵀΣ⁻¹η_i`.
pub fn full_loss(state: &NmeState, rows: &TrainingRows) -> f64 {
    let all: Vec<usize> = (0..rows.len()).collect();
    loss_and_gradients(state, rows, &all, 1.0, &full_weights(state)).0
}

pub fn full_gradients(state: &NmeState, rows: &TrainingRows) -> NmeGradients {
    let all: Vec<usize> = (0..rows.len()).collect();
    loss_and_gradients(state, rows, &all, 1.0, &full_weights(state)).1
}

fn check_ledger(rows: &TrainingRows, batch: &[usize], ledger: &BatchPenaltyLedger) -> Result<BTreeMap<usize, f64>> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if *ledger != BatchPenaltyLedger::for_batch(rows, batch) {
        return Err(Error::InvalidInput("penalty ledger does not match the batch".into()));
    }
    Ok(ledger.counts.keys().map(|&k| (k, ledger.weight(k))).collect())
}

/// `(1/B) Σ_batch ½(y − μ)²/σ² + Σ_k (N_{k,B}/m_k) η_kᵀΣ⁻¹η_k`.
pub fn minibatch_loss(
    state: &NmeState,
    rows: &TrainingRows,
    batch: &[usize],
    ledger: &BatchPenaltyLedger,
) -> Result<f64> {
    let w = check_ledger(rows, batch, ledger)?;
    Ok(loss_and_gradients(state, rows, batch, 1.0 / batch.len() as f64, &w).0)
}

pub fn gradients(
    state: &NmeState,
    rows: &TrainingRows,
    batch: &[usize],
    ledger: &BatchPenaltyLedger,
) -> Result<NmeGradients> {
    let w = check_ledger(rows, batch, ledger)?;
    Ok(loss_and_gradients(state, rows, batch, 1.0 / batch.len() as f64, &w).1)
}

#[derive(Debug, Clone)]
pub struct NmeFit {
    pub config: NmeConfig,
    pub state: NmeState,
    /// [`full_loss`] after each epoch's variance updates.
    pub loss_trace: Vec<f64>,
}

fn variance_updates(state: &mut NmeState, rows: &TrainingRows) {
    let mut cache = ForwardCache::for_params(&state.theta_bar);
    let mut sse = 0.0;
    for i in 0..rows.len() {
        forward_into(&state.theta_bar, Some(&state.eta[rows.slot[i]]), &rows.inputs[i], &mut cache);
        sse += (rows.targets[i] - cache.output).powi(2);
    }
    state.sigma_sq = (sse / rows.len() as f64).max(VARIANCE_FLOOR);
    let mask = state.mask.to_flat();
    let etas: Vec<Vec<f64>> = state.eta.iter().map(NetworkParams::to_flat).collect();
    let mut tau = state.tau_sq.to_flat();
    for k in 0..mask.len() {
        if mask[k] != 0.0 {
            let vals: Vec<f64> = etas.iter().map(|e| e[k]).collect();
            tau[k] = crate::gnmm::sample_variance(&vals).max(VARIANCE_FLOOR);
        }
    }
    state.tau_sq.set_flat(&tau).expect("same shape");
}

/// Adam on `θ̄` and the batch subjects' `η`; `Σ` and `σ²` are refreshed
/// after every epoch. Inputs should already be standardized; the target
/// is standardized here.
pub fn train(config: &NmeConfig, data: &PanelDataset) -> Result<NmeFit> {
    config.validate()?;
    if config.architecture.input_dim != NEURAL_INPUT_DIM {
        return Err(Error::Shape(format!(
            "network input must be {NEURAL_INPUT_DIM} wide, got {}",
            config.architecture.input_dim
        )));
    }
    let scaler = TargetScaler::fit(&data.column(Column::TotalUpdrs))?;
    let rows = TrainingRows::new(data, &scaler)?;
    let mut rng = seeded_rng(config.seed);
    let theta_bar = NetworkParams::xavier(&config.architecture, &mut rng);
    let mask = config.mask()?;
    let mut tau_sq = theta_bar.zeros_like();
    tau_sq.fill(1.0);
    let m = rows.subjects.len();
    let mut state = NmeState {
        architecture: config.architecture.clone(),
        eta: vec![theta_bar.zeros_like(); m],
        theta_bar,
        subjects: rows.subjects.clone(),
        mask,
        tau_sq,
        sigma_sq: 1.0,
        scaler,
    };
    let has_eta = !config.person_specific.is_empty();
    let mut adam_theta = AdamState::new(config.adam, &state.theta_bar);
    let mut adam_eta: Vec<AdamState> = (0..if has_eta { m } else { 0 })
        .map(|_| AdamState::new(config.adam, &state.theta_bar))
        .collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        for batch in epoch_batches(rows.len(), config.batch_size, &mut rng) {
            let ledger = BatchPenaltyLedger::for_batch(&rows, &batch);
            let g = gradients(&state, &rows, &batch, &ledger)?;
            adam_step(&mut adam_theta, &mut state.theta_bar, &g.theta_bar).map_err(|_| Error::Divergence { epoch })?;
            if has_eta {
                for (k, ge) in &g.eta {
                    adam_step(&mut adam_eta[*k], &mut state.eta[*k], ge).map_err(|_| Error::Divergence { epoch })?;
                    state.eta[*k] = zip_map(&state.eta[*k], &state.mask, |e, mk| e * mk);
                }
            }
        }
        if !state.theta_bar.all_finite() || state.eta.iter().any(|e| !e.all_finite()) {
            return Err(Error::Divergence { epoch });
        }
        variance_updates(&mut state, &rows);
        let loss = full_loss(&state, &rows);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        trace.push(loss);
    }
    Ok(NmeFit { config: config.clone(), state, loss_trace: trace })
}

impl NmeFit {
    /// Predictions on the response scale of the training data.
    pub fn predict(&self, rows: &PanelDataset) -> Result<Vec<f64>> {
        rows.rows()
            .iter()
            .map(|r| Ok(self.state.scaler.unscale(self.state.predict_one(&neural_input(r), Some(r.subject))?)))
            .collect()
    }

    /// Predictions with every `η` set to zero.
    pub fn predict_population(&self, rows: &PanelDataset) -> Result<Vec<f64>> {
        rows.rows()
            .iter()
            .map(|r| Ok(self.state.scaler.unscale(self.state.predict_one(&neural_input(r), None)?)))
            .collect()
    }

    pub fn report_text(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        let groups: Vec<String> = c.person_specific.iter().map(|g| g.to_string()).collect();
        let _ = writeln!(
            s,
            "neural mixed effects, hidden {:?}, person-specific [{}], {} epochs, batch {}, learning rate {}",
            c.architecture.hidden,
            groups.join(", "),
            c.epochs,
            c.batch_size,
            c.adam.lr
        );
        let _ = writeln!(s, "residual variance {:.6}", self.state.sigma_sq_original());
        for (name, k, t) in self.state.tau_sq_original() {
            let _ = writeln!(s, "deviation variance {name}[{k}] {t:.6}");
        }
        if let Some(last) = self.loss_trace.last() {
            let _ = writeln!(s, "final training loss {last:.4}");
        }
        s
    }

    /// Key-value header, the flat `θ̄`, then `subject index value` lines
    /// for the person-specific coordinates of every `η`.
    pub fn write_state<W: Write>(&self, mut out: W) -> Result<()> {
        let c = &self.config;
        let st = &self.state;
        let join = |v: Vec<String>| v.join(",");
        writeln!(out, "hidden={}", join(c.architecture.hidden.iter().map(|h| h.to_string()).collect()))?;
        writeln!(out, "input_dim={}", c.architecture.input_dim)?;
        writeln!(out, "person_specific={}", join(c.person_specific.iter().map(|g| g.to_string()).collect()))?;
        writeln!(out, "epochs={}", c.epochs)?;
        writeln!(out, "batch_size={}", c.batch_size)?;
        writeln!(out, "learning_rate={}", c.adam.lr)?;
        writeln!(out, "seed={}", c.seed)?;
        writeln!(out, "subjects={}", join(st.subjects.iter().map(|s| s.to_string()).collect()))?;
        writeln!(out, "sigma_sq={:e}", st.sigma_sq)?;
        writeln!(out, "target_mean={:e}", st.scaler.mean)?;
        writeln!(out, "target_sd={:e}", st.scaler.sd)?;
        let mask = st.mask.to_flat();
        let tau = st.tau_sq.to_flat();
        let sigma: Vec<String> = (0..mask.len()).filter(|&k| mask[k] != 0.0).map(|k| format!("{}:{:e}", k, tau[k])).collect();
        writeln!(out, "tau_sq={}", sigma.join(","))?;
        writeln!(out, "[theta_bar]")?;
        for v in st.theta_bar.to_flat() {
            writeln!(out, "{v:e}")?;
        }
        writeln!(out, "[eta]")?;
        for (s, e) in st.subjects.iter().zip(&st.eta) {
            for (k, v) in e.to_flat().into_iter().enumerate() {
                if mask[k] != 0.0 {
                    writeln!(out, "{s} {k} {v:e}")?;
                }
            }
        }
        Ok(())
    }

    pub fn read_state<R: BufRead>(input: R) -> Result<Self> {
        let bad = |m: String| Error::InvalidInput(format!("state file: {m}"));
        let mut kv = BTreeMap::new();
        let mut flat = Vec::new();
        let mut eta_lines: Vec<(u32, usize, f64)> = Vec::new();
        let mut section = "";
        for line in input.lines() {
            let line = line?;
            let line = line.trim();
            match line {
                "" => continue,
                "[theta_bar]" => section = "theta",
                "[eta]" => section = "eta",
                _ => match section {
                    "" => {
                        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad header line `{line}`")))?;
                        kv.insert(k.to_string(), v.to_string());
                    }
                    "theta" => flat.push(line.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                    _ => {
                        let parts: Vec<&str> = line.split_whitespace().collect();
                        if parts.len() != 3 {
                            return Err(bad(format!("bad deviation line `{line}`")));
                        }
                        eta_lines.push((
                            parts[0].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                            parts[1].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                            parts[2].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                        ));
                    }
                },
            }
        }
        let get = |k: &str| kv.get(k).cloned().ok_or_else(|| bad(format!("missing `{k}`")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse::<f64>().map_err(|e| bad(e.to_string())) };
        let int = |k: &str| -> Result<usize> { get(k)?.parse::<usize>().map_err(|e| bad(e.to_string())) };
        let hidden = get("hidden")?
            .split(',')
            .map(|h| h.parse::<usize>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let architecture = MlpArchitecture::new(int("input_dim")?, hidden)?;
        let groups_text = get("person_specific")?;
        let person_specific = groups_text
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<ParamGroup>>>()?;
        let config = NmeConfig {
            architecture: architecture.clone(),
            person_specific,
            epochs: int("epochs")?,
            batch_size: int("batch_size")?,
            adam: AdamConfig { lr: num("learning_rate")?, ..AdamConfig::default() },
            seed: int("seed")? as u64,
        };
        let theta_bar = NetworkParams::from_flat(&architecture, &flat)?;
        let mask = config.mask()?;
        let mut tau = vec![1.0; theta_bar.len()];
        for item in get("tau_sq")?.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = item.split_once(':').ok_or_else(|| bad(format!("bad variance entry `{item}`")))?;
            let k: usize = k.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
            if k >= tau.len() {
                return Err(bad(format!("variance index {k} out of range")));
            }
            tau[k] = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
        }
        let tau_sq = NetworkParams::from_flat(&architecture, &tau)?;
        let subjects = get("subjects")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<u32>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let mut eta_flat = vec![vec![0.0; theta_bar.len()]; subjects.len()];
        for (s, k, v) in eta_lines {
            let slot = subjects.binary_search(&s).map_err(|_| bad(format!("deviation for unlisted subject {s}")))?;
            if k >= theta_bar.len() {
                return Err(bad(format!("deviation index {k} out of range")));
            }
            eta_flat[slot][k] = v;
        }
        let eta = eta_flat
            .iter()
            .map(|f| NetworkParams::from_flat(&architecture, f))
            .collect::<Result<Vec<_>>>()?;
        let state = NmeState {
            architecture,
            theta_bar,
            subjects,
            eta,
            mask,
            tau_sq,
            sigma_sq: num("sigma_sq")?,
            scaler: TargetScaler { mean: num("target_mean")?, sd: num("target_sd")? },
        };
        Ok(Self { config, state, loss_trace: Vec::new() })
    }
}
