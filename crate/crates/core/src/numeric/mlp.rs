//! Fully connected ReLU network with an identity output unit, plus the
//! hand-derived backward pass.
//!
//! Layers are stored input-first: `layers[0]` maps the input to the first
//! hidden layer and the last layer maps to the single output. Flattened
//! parameter vectors are layer-major, weights before biases, and weight
//! matrices are row-major (`n_out x n_in`).

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>) -> Result<Self> {
        if input_dim == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidInput(format!(
                "layer sizes must be positive (input {input_dim}, hidden {hidden:?})"
            )));
        }
        Ok(Self { input_dim, hidden })
    }

    /// `(n_in, n_out)` for every layer, ending with the output layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut n_in = self.input_dim;
        for &h in &self.hidden {
            dims.push((n_in, h));
            n_in = h;
        }
        dims.push((n_in, 1));
        dims
    }

    pub fn n_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn n_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.n_in + inp]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<Layer>,
}

impl NetworkParams {
    pub fn zeros(arch: &MlpArchitecture) -> Self {
        Self {
            layers: arch
                .layer_dims()
                .into_iter()
                .map(|(n_in, n_out)| Layer {
                    n_in,
                    n_out,
                    weights: vec![0.0; n_in * n_out],
                    bias: vec![0.0; n_out],
                })
                .collect(),
        }
    }

    /// Xavier-uniform weights, zero biases.
    pub fn xavier<R: Rng + ?Sized>(arch: &MlpArchitecture, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        for layer in &mut p.layers {
            let a = (6.0 / (layer.n_in + layer.n_out) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-a..a);
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    n_in: l.n_in,
                    n_out: l.n_out,
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn same_shape(&self, other: &NetworkParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.n_in == b.n_in && a.n_out == b.n_out)
    }

    pub fn matches(&self, arch: &MlpArchitecture) -> bool {
        let dims = arch.layer_dims();
        dims.len() == self.layers.len()
            && dims
                .iter()
                .zip(&self.layers)
                .all(|(&(i, o), l)| l.n_in == i && l.n_out == o && l.weights.len() == i * o && l.bias.len() == o)
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Named parameter blocks in flattening order.
    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (k, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{}.weights", k + 1), l.weights.as_slice()));
            out.push((format!("layer{}.bias", k + 1), l.bias.as_slice()));
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weights);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, network has {}",
                flat.len(),
                self.len()
            )));
        }
        let mut at = 0;
        for block in self.blocks_mut() {
            let n = block.len();
            block.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    pub fn from_flat(arch: &MlpArchitecture, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(arch);
        p.set_flat(flat)?;
        Ok(p)
    }

    pub fn fill(&mut self, value: f64) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|v| *v = value);
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &NetworkParams, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += scale * y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += scale * y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.iter().chain(&l.bias).map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Intermediates from a forward pass, reused by the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    /// Pre-activation of every layer (the last entry holds the output).
    pub preactivations: Vec<Vec<f64>>,
    /// Post-activation of every layer; ReLU for hidden, identity for output.
    pub activations: Vec<Vec<f64>>,
    pub output: f64,
}

impl ForwardCache {
    pub fn for_params(params: &NetworkParams) -> Self {
        Self {
            input: vec![0.0; params.layers.first().map_or(0, |l| l.n_in)],
            preactivations: params.layers.iter().map(|l| vec![0.0; l.n_out]).collect(),
            activations: params.layers.iter().map(|l| vec![0.0; l.n_out]).collect(),
            output: 0.0,
        }
    }
}

fn check_offsets(params: &NetworkParams, offsets: Option<&NetworkParams>) -> Result<()> {
    if let Some(o) = offsets {
        if !params.same_shape(o) {
            return Err(Error::Shape("offsets do not match the parameter shapes".into()));
        }
    }
    Ok(())
}

/// Forward pass with effective parameters `params + offsets`.
pub fn mlp_forward(
    arch: &MlpArchitecture,
    params: &NetworkParams,
    offsets: Option<&NetworkParams>,
    x: &[f64],
) -> Result<ForwardCache> {
    if !params.matches(arch) {
        return Err(Error::Shape("parameters do not match the architecture".into()));
    }
    check_offsets(params, offsets)?;
    if x.len() != arch.input_dim {
        return Err(Error::Shape(format!(
            "input has {} entries, architecture expects {}",
            x.len(),
            arch.input_dim
        )));
    }
    let mut cache = ForwardCache::for_params(params);
    forward_into(params, offsets, x, &mut cache);
    Ok(cache)
}

/// Unchecked forward pass into a preallocated cache.
pub fn forward_into(
    params: &NetworkParams,
    offsets: Option<&NetworkParams>,
    x: &[f64],
    cache: &mut ForwardCache,
) {
    cache.input.clear();
    cache.input.extend_from_slice(x);
    let last = params.layers.len() - 1;
    for (k, layer) in params.layers.iter().enumerate() {
        let (prev, rest) = cache.activations.split_at_mut(k);
        let input: &[f64] = if k == 0 { &cache.input } else { &prev[k - 1] };
        let pre = &mut cache.preactivations[k];
        let act = &mut rest[0];
        let off = offsets.map(|o| &o.layers[k]);
        for o in 0..layer.n_out {
            let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
            let mut s = layer.bias[o];
            match off {
                None => {
                    for (w, v) in row.iter().zip(input) {
                        s += w * v;
                    }
                }
                Some(off) => {
                    let orow = &off.weights[o * layer.n_in..(o + 1) * layer.n_in];
                    s += off.bias[o];
                    for ((w, dw), v) in row.iter().zip(orow).zip(input) {
                        s += (w + dw) * v;
                    }
                }
            }
            pre[o] = s;
            act[o] = if k == last { s } else { s.max(0.0) };
        }
    }
    cache.output = cache.activations[last][0];
}

/// Scratch space for [`backward_accumulate`].
#[derive(Debug, Clone, Default)]
pub struct BackwardScratch {
    delta: Vec<f64>,
    next: Vec<f64>,
}

/// Gradient of `signal * output` with respect to every parameter. The
/// same values are the gradient with respect to the offsets.
pub fn mlp_backward(
    params: &NetworkParams,
    offsets: Option<&NetworkParams>,
    cache: &ForwardCache,
    signal: f64,
) -> Result<NetworkParams> {
    check_offsets(params, offsets)?;
    let consistent = cache.preactivations.len() == params.layers.len()
        && cache.activations.len() == params.layers.len()
        && params
            .layers
            .iter()
            .zip(&cache.preactivations)
            .all(|(l, p)| l.n_out == p.len())
        && params.layers.first().map_or(true, |l| l.n_in == cache.input.len());
    if !consistent {
        return Err(Error::Shape("forward cache does not match the parameters".into()));
    }
    let mut grad = params.zeros_like();
    backward_accumulate(params, offsets, cache, signal, &mut grad, &mut BackwardScratch::default());
    Ok(grad)
}

/// Adds `signal * d(output)/d(param)` into `grad`. ReLU'(0) is taken as 0.
pub fn backward_accumulate(
    params: &NetworkParams,
    offsets: Option<&NetworkParams>,
    cache: &ForwardCache,
    signal: f64,
    grad: &mut NetworkParams,
    scratch: &mut BackwardScratch,
) {
    let last = params.layers.len() - 1;
    scratch.delta.clear();
    scratch.delta.push(signal);
    for k in (0..=last).rev() {
        let layer = &params.layers[k];
        let input: &[f64] = if k == 0 { &cache.input } else { &cache.activations[k - 1] };
        let g = &mut grad.layers[k];
        for o in 0..layer.n_out {
            let d = scratch.delta[o];
            if d == 0.0 {
                continue;
            }
            g.bias[o] += d;
            let grow = &mut g.weights[o * layer.n_in..(o + 1) * layer.n_in];
            for (gw, v) in grow.iter_mut().zip(input) {
                *gw += d * v;
            }
        }
        if k == 0 {
            break;
        }
        let pre_below = &cache.preactivations[k - 1];
        scratch.next.clear();
        scratch.next.resize(layer.n_in, 0.0);
        let off = offsets.map(|o| &o.layers[k]);
        for o in 0..layer.n_out {
            let d = scratch.delta[o];
            if d == 0.0 {
                continue;
            }
            let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
            match off {
                None => {
                    for (n, w) in scratch.next.iter_mut().zip(row) {
                        *n += d * w;
                    }
                }
                Some(off) => {
                    let orow = &off.weights[o * layer.n_in..(o + 1) * layer.n_in];
                    for ((n, w), dw) in scratch.next.iter_mut().zip(row).zip(orow) {
                        *n += d * (w + dw);
                    }
                }
            }
        }
        for (n, &s) in scratch.next.iter_mut().zip(pre_below) {
            if s <= 0.0 {
                *n = 0.0;
            }
        }
        std::mem::swap(&mut scratch.delta, &mut scratch.next);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gradcheck::check_gradient;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_node() -> (MlpArchitecture, NetworkParams) {
        let arch = MlpArchitecture::new(1, vec![1]).unwrap();
        let mut p = NetworkParams::zeros(&arch);
        p.layers[0].weights[0] = 1.0;
        p.layers[0].bias[0] = -1.0;
        p.layers[1].weights[0] = 1.0;
        (arch, p)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let arch = MlpArchitecture::new(3, vec![4, 2]).unwrap();
        let p = NetworkParams::zeros(&arch);
        let out = mlp_forward(&arch, &p, None, &[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(out.output, 0.0);
    }

    #[test]
    fn relu_gating() {
        let (arch, p) = single_node();
        assert_eq!(mlp_forward(&arch, &p, None, &[2.0]).unwrap().output, 1.0);
        assert_eq!(mlp_forward(&arch, &p, None, &[0.0]).unwrap().output, 0.0);
    }

    #[test]
    fn negated_offsets_cancel() {
        let arch = MlpArchitecture::new(3, vec![5, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = NetworkParams::xavier(&arch, &mut rng);
        for l in &mut p.layers {
            l.bias.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        }
        let mut neg = p.clone();
        neg.scale(-1.0);
        let out = mlp_forward(&arch, &p, Some(&neg), &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(out.output, 0.0);
    }

    #[test]
    fn zero_signal_gives_zero_gradient() {
        let (arch, p) = single_node();
        let c = mlp_forward(&arch, &p, None, &[2.0]).unwrap();
        let g = mlp_backward(&p, None, &c, 0.0).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn chain_rule_on_one_one_one_network() {
        let arch = MlpArchitecture::new(1, vec![1]).unwrap();
        let mut p = NetworkParams::zeros(&arch);
        p.layers[0].weights[0] = 0.7;
        p.layers[0].bias[0] = 0.2;
        p.layers[1].weights[0] = 1.5;
        let x = 2.0;
        let c = mlp_forward(&arch, &p, None, &[x]).unwrap();
        let g = mlp_backward(&p, None, &c, 1.0).unwrap();
        // d out / d w1 = w2 * x, d out / d w2 = relu(w1 x + b1)
        assert!((g.layers[0].weights[0] - 1.5 * x).abs() < 1e-15);
        assert!((g.layers[0].bias[0] - 1.5).abs() < 1e-15);
        assert!((g.layers[1].weights[0] - (0.7 * x + 0.2)).abs() < 1e-15);
        assert_eq!(g.layers[1].bias[0], 1.0);
    }

    #[test]
    fn backward_matches_finite_differences_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for depth in [1usize, 2] {
            for width in [1usize, 3, 5] {
                let arch = MlpArchitecture::new(4, vec![width; depth]).unwrap();
                let mut p = NetworkParams::xavier(&arch, &mut rng);
                for l in &mut p.layers {
                    l.bias.iter_mut().for_each(|b| *b = rng.random_range(0.1..0.5));
                }
                let mut off = p.zeros_like();
                for l in &mut off.layers {
                    l.weights.iter_mut().for_each(|w| *w = rng.random_range(-0.1..0.1));
                }
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let c = mlp_forward(&arch, &p, Some(&off), &x).unwrap();
                let signal = 0.8;
                let g = mlp_backward(&p, Some(&off), &c, signal).unwrap();
                let f = |flat: &[f64]| {
                    let q = NetworkParams::from_flat(&arch, flat).unwrap();
                    signal * mlp_forward(&arch, &q, Some(&off), &x).unwrap().output
                };
                let err = check_gradient(f, &p.to_flat(), &g.to_flat()).unwrap();
                assert!(err < 1e-5, "depth {depth} width {width}: {err}");
                // the offset gradient is the same vector
                let fo = |flat: &[f64]| {
                    let o = NetworkParams::from_flat(&arch, flat).unwrap();
                    signal * mlp_forward(&arch, &p, Some(&o), &x).unwrap().output
                };
                let err = check_gradient(fo, &off.to_flat(), &g.to_flat()).unwrap();
                assert!(err < 1e-5);
            }
        }
    }

    #[test]
    fn positively_homogeneous_without_biases() {
        let arch = MlpArchitecture::new(3, vec![4, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = NetworkParams::xavier(&arch, &mut rng);
        let x = [0.4, -0.2, 1.1];
        let f1 = mlp_forward(&arch, &p, None, &x).unwrap().output;
        let x2: Vec<f64> = x.iter().map(|v| v * 2.5).collect();
        let f2 = mlp_forward(&arch, &p, None, &x2).unwrap().output;
        assert!((f2 - 2.5 * f1).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let arch = MlpArchitecture::new(2, vec![3]).unwrap();
        let p = NetworkParams::zeros(&arch);
        assert!(mlp_forward(&arch, &p, None, &[1.0]).is_err());
        let other = NetworkParams::zeros(&MlpArchitecture::new(2, vec![4]).unwrap());
        assert!(mlp_forward(&arch, &p, Some(&other), &[1.0, 2.0]).is_err());
        let c = mlp_forward(&arch, &p, None, &[1.0, 2.0]).unwrap();
        assert!(mlp_backward(&other, None, &c, 1.0).is_err());
        assert!(MlpArchitecture::new(2, vec![0]).is_err());
    }

    #[test]
    fn flat_round_trip_order() {
        let arch = MlpArchitecture::new(2, vec![2]).unwrap();
        let flat: Vec<f64> = (0..arch.n_params()).map(|k| k as f64).collect();
        let p = NetworkParams::from_flat(&arch, &flat).unwrap();
        // weights of layer 1 (row-major 2x2), its bias, then the output layer
        assert_eq!(p.layers[0].weights, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(p.layers[0].bias, vec![4.0, 5.0]);
        assert_eq!(p.layers[1].weights, vec![6.0, 7.0]);
        assert_eq!(p.layers[1].bias, vec![8.0]);
        assert_eq!(p.to_flat(), flat);
    }
}
