//! Conjunction-rule network: three single-hidden-layer subnets (one per
//! feature category) whose sigmoid outputs are aggregated by a linear layer.
//!
//! Hidden weights live in `[0, 1]`. The continuous model uses them as-is
//! with the log-domain activation `1 / (1 - Σ log(1 - w_i (1 - x_i)))`;
//! the discrete model thresholds them at 0.5 and evaluates exact Boolean
//! conjunctions. Output weights are shared by both views.

use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binarizer::BitLayout;
use crate::dataset::Category;
use crate::error::{Error, Result};
use crate::numeric::{exact_sum, sigmoid};

pub const DEFAULT_EPS: f64 = 1e-12;
pub const DISCRETE_THRESHOLD: f64 = 0.5;

fn check_lengths(w: &[f64], x: &[u8]) -> Result<()> {
    if w.len() != x.len() {
        return Err(Error::arg(format!(
            "weight row has {} entries but input has {}",
            w.len(),
            x.len()
        )));
    }
    Ok(())
}

/// Product form `∏ (1 - w_i (1 - x_i))`. With binary weights this is the
/// AND of the inputs selected by `w_i = 1`; an empty selection gives 1.
pub fn conj_activation(w: &[f64], x: &[u8]) -> Result<f64> {
    check_lengths(w, x)?;
    Ok(w.iter()
        .zip(x)
        .map(|(&wi, &xi)| 1.0 - wi * (1.0 - xi as f64))
        .product())
}

/// `∂Conj/∂w_k = (x_k - 1) ∏_{i≠k} (1 - w_i (1 - x_i))`.
pub fn conj_gradient(w: &[f64], x: &[u8], k: usize) -> Result<f64> {
    check_lengths(w, x)?;
    if k >= w.len() {
        return Err(Error::Index { index: k, len: w.len() });
    }
    let rest: f64 = w
        .iter()
        .zip(x)
        .enumerate()
        .filter(|&(i, _)| i != k)
        .map(|(_, (&wi, &xi))| 1.0 - wi * (1.0 - xi as f64))
        .product();
    Ok((x[k] as f64 - 1.0) * rest)
}

/// Maps a log-conjunction value to the improved activation
/// `-1 / (-1 + log Conj)`; `-inf` (a zero factor) maps to 0.
#[inline]
pub fn conj_plus_from_log(log_conj: f64) -> f64 {
    1.0 / (1.0 - log_conj)
}

/// Improved conjunction activation, evaluated as a sum of per-factor logs.
/// A factor that is exactly zero yields 0, so binary weights reproduce the
/// Boolean conjunction; `eps` only bounds the `1/factor` term of the
/// gradient (see [`conj_plus_gradient`]).
pub fn conj_plus_activation(w: &[f64], x: &[u8], eps: f64) -> Result<f64> {
    check_lengths(w, x)?;
    if !(eps > 0.0) {
        return Err(Error::arg(format!("eps must be positive, got {eps}")));
    }
    let log_conj: f64 = w
        .iter()
        .zip(x)
        .filter(|&(_, &xi)| xi == 0)
        .map(|(&wi, _)| (1.0 - wi).ln())
        .sum();
    Ok(conj_plus_from_log(log_conj))
}

/// `∂Conj⁺/∂w_k = -Conj⁺² (1 - x_k) / max(1 - w_k (1 - x_k), eps)`.
pub fn conj_plus_gradient(w: &[f64], x: &[u8], k: usize, eps: f64) -> Result<f64> {
    let a = conj_plus_activation(w, x, eps)?;
    if k >= w.len() {
        return Err(Error::Index { index: k, len: w.len() });
    }
    if x[k] == 1 {
        return Ok(0.0);
    }
    Ok(-a * a / (1.0 - w[k]).max(eps))
}

/// `Σ u_s p_s + b`, in a fixed evaluation order shared by every caller.
#[inline]
pub fn aggregate_logit(weights: &[f64; 3], probs: &[f64; 3], bias: f64) -> f64 {
    weights[0] * probs[0] + weights[1] * probs[1] + weights[2] * probs[2] + bias
}

pub fn discretize(w: &[f64], threshold: f64) -> Vec<u8> {
    w.iter().map(|&v| (v >= threshold) as u8).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubnetParams {
    pub category: Category,
    /// First input bit of this subnet's category.
    pub offset: usize,
    pub width: usize,
    pub hidden: usize,
    /// Row-major `hidden × width`, entries in `[0, 1]`.
    pub weights: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
}

impl SubnetParams {
    pub fn input_range(&self) -> Range<usize> {
        self.offset..self.offset + self.width
    }

    pub fn node_weights(&self, j: usize) -> &[f64] {
        &self.weights[j * self.width..(j + 1) * self.width]
    }

    /// Input bits (relative to `offset`) selected by node `j` in the
    /// discrete view.
    pub fn selected_bits(&self, j: usize) -> Vec<usize> {
        self.node_weights(j)
            .iter()
            .enumerate()
            .filter(|(_, &w)| w >= DISCRETE_THRESHOLD)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn clip(&mut self) {
        for w in &mut self.weights {
            *w = w.clamp(0.0, 1.0);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraftedModel {
    /// Ordered loan, history, soft.
    pub subnets: Vec<SubnetParams>,
    pub agg_weights: [f64; 3],
    pub agg_bias: f64,
    pub width: usize,
    pub layout_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutputs {
    pub hidden: Vec<Vec<f64>>,
    pub subnet_logits: [f64; 3],
    pub subnet_probs: [f64; 3],
    pub final_logit: f64,
    pub final_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteOutputs {
    pub outputs: NetworkOutputs,
    /// Per subnet, which hidden nodes fired.
    pub active: Vec<Vec<bool>>,
}

/// Uniform random hidden weights in `[0, 0.5)` (every discrete rule starts
/// empty), output and aggregation weights in `(-0.1, 0.1)`, zero biases.
pub fn init_model(layout: &BitLayout, hidden_per_subnet: usize, seed: u64) -> Result<GraftedModel> {
    if hidden_per_subnet == 0 {
        return Err(Error::arg("hidden_per_subnet must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subnets = Category::ALL
        .iter()
        .map(|&cat| {
            let range = layout.category_range(cat);
            let width = range.len();
            SubnetParams {
                category: cat,
                offset: range.start,
                width,
                hidden: hidden_per_subnet,
                weights: (0..hidden_per_subnet * width)
                    .map(|_| rng.gen_range(0.0..0.5))
                    .collect(),
                output_weights: (0..hidden_per_subnet)
                    .map(|_| rng.gen_range(-0.1..0.1))
                    .collect(),
                output_bias: 0.0,
            }
        })
        .collect();
    let agg_weights = [0; 3].map(|_| rng.gen_range(-0.1..0.1));
    Ok(GraftedModel {
        subnets,
        agg_weights,
        agg_bias: 0.0,
        width: layout.width(),
        layout_hash: layout.hash(),
    })
}

impl GraftedModel {
    pub fn subnet(&self, cat: Category) -> &SubnetParams {
        &self.subnets[cat.index()]
    }

    pub fn check_layout(&self, layout: &BitLayout) -> Result<()> {
        let found = layout.hash();
        if found != self.layout_hash {
            return Err(Error::Compatibility {
                expected: self.layout_hash.clone(),
                found,
            });
        }
        Ok(())
    }

    fn check_input(&self, x: &[u8]) -> Result<()> {
        if x.len() != self.width {
            return Err(Error::arg(format!(
                "input width {} does not match model width {}",
                x.len(),
                self.width
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.subnets.len() != 3 {
            return Err(Error::Schema(format!("expected 3 subnets, found {}", self.subnets.len())));
        }
        for (s, cat) in self.subnets.iter().zip(Category::ALL) {
            if s.category != cat {
                return Err(Error::Schema(format!("subnet {} out of order", s.category)));
            }
            if s.weights.len() != s.hidden * s.width || s.output_weights.len() != s.hidden {
                return Err(Error::Schema(format!("subnet {cat}: parameter shapes inconsistent")));
            }
            if s.offset + s.width > self.width {
                return Err(Error::Schema(format!("subnet {cat}: inputs exceed model width")));
            }
            if s.weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
                return Err(Error::Schema(format!("subnet {cat}: hidden weight outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn compile(&self, eps: f64) -> CompiledModel<'_> {
        CompiledModel {
            model: self,
            subnets: self.subnets.iter().map(|s| SubnetCache::new(s, eps)).collect(),
        }
    }

    pub fn forward_continuous(&self, x: &[u8]) -> Result<NetworkOutputs> {
        self.check_input(x)?;
        Ok(self.compile(DEFAULT_EPS).continuous(x))
    }

    pub fn forward_discrete(&self, x: &[u8]) -> Result<DiscreteOutputs> {
        self.check_input(x)?;
        Ok(self.compile(DEFAULT_EPS).discrete(x))
    }

    /// Copy of the model with every hidden weight replaced by its 0/1
    /// discretization.
    pub fn binarized(&self) -> GraftedModel {
        let mut m = self.clone();
        for s in &mut m.subnets {
            for w in &mut s.weights {
                *w = if *w >= DISCRETE_THRESHOLD { 1.0 } else { 0.0 };
            }
        }
        m
    }

    pub fn parameter_count(&self) -> usize {
        self.subnets.iter().map(|s| s.weights.len() + s.hidden + 1).sum::<usize>() + 4
    }

    /// All parameters flattened: per subnet `W`, `v`, `c`; then `u`, `b`.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for s in &self.subnets {
            out.extend_from_slice(&s.weights);
            out.extend_from_slice(&s.output_weights);
            out.push(s.output_bias);
        }
        out.extend_from_slice(&self.agg_weights);
        out.push(self.agg_bias);
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::arg("parameter vector has the wrong length"));
        }
        let mut it = params.iter().copied();
        for s in &mut self.subnets {
            for w in s.weights.iter_mut().chain(s.output_weights.iter_mut()) {
                *w = it.next().unwrap();
            }
            s.output_bias = it.next().unwrap();
        }
        for u in &mut self.agg_weights {
            *u = it.next().unwrap();
        }
        self.agg_bias = it.next().unwrap();
        Ok(())
    }

    pub fn clip(&mut self) {
        for s in &mut self.subnets {
            s.clip();
        }
    }

    /// Applies `param -= lr * grad` and clips hidden weights to `[0, 1]`.
    pub fn apply_gradient(&mut self, grad: &ModelGradient, lr: f64) {
        for (s, g) in self.subnets.iter_mut().zip(&grad.subnets) {
            for (w, d) in s.weights.iter_mut().zip(&g.weights) {
                *w -= lr * d;
            }
            for (v, d) in s.output_weights.iter_mut().zip(&g.output_weights) {
                *v -= lr * d;
            }
            s.output_bias -= lr * g.output_bias;
            s.clip();
        }
        for (u, d) in self.agg_weights.iter_mut().zip(&grad.agg_weights) {
            *u -= lr * d;
        }
        self.agg_bias -= lr * grad.agg_bias;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: GraftedModel = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Gradient with the same shape as [`GraftedModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub subnets: Vec<SubnetGradient>,
    pub agg_weights: [f64; 3],
    pub agg_bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubnetGradient {
    pub weights: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
}

impl ModelGradient {
    pub fn zeros_like(model: &GraftedModel) -> Self {
        Self {
            subnets: model
                .subnets
                .iter()
                .map(|s| SubnetGradient {
                    weights: vec![0.0; s.weights.len()],
                    output_weights: vec![0.0; s.hidden],
                    output_bias: 0.0,
                })
                .collect(),
            agg_weights: [0.0; 3],
            agg_bias: 0.0,
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in &mut self.subnets {
            s.weights.iter_mut().for_each(|g| *g *= factor);
            s.output_weights.iter_mut().for_each(|g| *g *= factor);
            s.output_bias *= factor;
        }
        self.agg_weights.iter_mut().for_each(|g| *g *= factor);
        self.agg_bias *= factor;
    }

    /// Flattened in the order of [`GraftedModel::parameters`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for s in &self.subnets {
            out.extend_from_slice(&s.weights);
            out.extend_from_slice(&s.output_weights);
            out.push(s.output_bias);
        }
        out.extend_from_slice(&self.agg_weights);
        out.push(self.agg_bias);
        out
    }
}

/// Which logit a gradient is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// The aggregated final logit.
    Final,
    /// One subnet's own logit (used while pretraining that subnet).
    Subnet(usize),
}

struct SubnetCache {
    /// `ln(1 - w)` per weight.
    log_keep: Vec<f64>,
    /// `1 / max(1 - w, eps)` per weight.
    inv_keep: Vec<f64>,
    /// Bits selected by each node in the discrete view.
    selected: Vec<Vec<usize>>,
}

impl SubnetCache {
    fn new(s: &SubnetParams, eps: f64) -> Self {
        Self {
            log_keep: s.weights.iter().map(|w| (1.0 - w).ln()).collect(),
            inv_keep: s.weights.iter().map(|w| 1.0 / (1.0 - w).max(eps)).collect(),
            selected: (0..s.hidden).map(|j| s.selected_bits(j)).collect(),
        }
    }
}

/// A model with per-weight log terms precomputed; valid until the model
/// changes.
pub struct CompiledModel<'a> {
    model: &'a GraftedModel,
    subnets: Vec<SubnetCache>,
}

impl CompiledModel<'_> {
    fn zeros(s: &SubnetParams, x: &[u8]) -> Vec<usize> {
        x[s.input_range()]
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 0)
            .map(|(k, _)| k)
            .collect()
    }

    fn finish(&self, hidden: Vec<Vec<f64>>, subnet_logits: [f64; 3]) -> NetworkOutputs {
        let m = self.model;
        let subnet_probs = subnet_logits.map(sigmoid);
        let final_logit = aggregate_logit(&m.agg_weights, &subnet_probs, m.agg_bias);
        NetworkOutputs {
            hidden,
            subnet_logits,
            subnet_probs,
            final_logit,
            final_prob: sigmoid(final_logit),
        }
    }

    pub fn continuous(&self, x: &[u8]) -> NetworkOutputs {
        let mut hidden = Vec::with_capacity(3);
        let mut logits = [0.0; 3];
        for (si, (s, cache)) in self.model.subnets.iter().zip(&self.subnets).enumerate() {
            let zeros = Self::zeros(s, x);
            let acts: Vec<f64> = (0..s.hidden)
                .map(|j| {
                    let row = &cache.log_keep[j * s.width..(j + 1) * s.width];
                    conj_plus_from_log(zeros.iter().map(|&k| row[k]).sum())
                })
                .collect();
            logits[si] = s
                .output_weights
                .iter()
                .zip(&acts)
                .map(|(v, a)| v * a)
                .sum::<f64>()
                + s.output_bias;
            hidden.push(acts);
        }
        self.finish(hidden, logits)
    }

    /// Exact Boolean pass. Subnet logits are correctly rounded sums of the
    /// bias and the active nodes' output weights, so the result does not
    /// depend on node order or grouping.
    pub fn discrete(&self, x: &[u8]) -> DiscreteOutputs {
        let mut hidden = Vec::with_capacity(3);
        let mut active = Vec::with_capacity(3);
        let mut logits = [0.0; 3];
        for (si, (s, cache)) in self.model.subnets.iter().zip(&self.subnets).enumerate() {
            let input = &x[s.input_range()];
            let on: Vec<bool> = cache
                .selected
                .iter()
                .map(|sel| sel.iter().all(|&k| input[k] == 1))
                .collect();
            logits[si] = exact_sum(
                std::iter::once(s.output_bias).chain(
                    s.output_weights
                        .iter()
                        .zip(&on)
                        .filter(|(_, &a)| a)
                        .map(|(&v, _)| v),
                ),
            );
            hidden.push(on.iter().map(|&a| a as u8 as f64).collect());
            active.push(on);
        }
        DiscreteOutputs {
            outputs: self.finish(hidden, logits),
            active,
        }
    }

    /// Adds `upstream · ∂(logit)/∂θ` of the continuous pass to `grad`, where
    /// the logit is chosen by `head` and `out` is `self.continuous(x)`.
    pub fn accumulate_gradient(
        &self,
        x: &[u8],
        out: &NetworkOutputs,
        upstream: f64,
        head: Head,
        grad: &mut ModelGradient,
    ) {
        let m = self.model;
        let subnets: Vec<(usize, f64)> = match head {
            Head::Final => {
                for s in 0..3 {
                    grad.agg_weights[s] += upstream * out.subnet_probs[s];
                }
                grad.agg_bias += upstream;
                (0..3)
                    .map(|s| {
                        let p = out.subnet_probs[s];
                        (s, upstream * m.agg_weights[s] * p * (1.0 - p))
                    })
                    .collect()
            }
            Head::Subnet(s) => vec![(s, upstream)],
        };
        for (si, dz) in subnets {
            if dz == 0.0 {
                continue;
            }
            let s = &m.subnets[si];
            let cache = &self.subnets[si];
            let g = &mut grad.subnets[si];
            let acts = &out.hidden[si];
            g.output_bias += dz;
            let zeros = Self::zeros(s, x);
            for j in 0..s.hidden {
                let a = acts[j];
                g.output_weights[j] += dz * a;
                let coef = dz * s.output_weights[j] * a * a;
                if coef == 0.0 {
                    continue;
                }
                let inv = &cache.inv_keep[j * s.width..(j + 1) * s.width];
                let gw = &mut g.weights[j * s.width..(j + 1) * s.width];
                for &k in &zeros {
                    gw[k] -= coef * inv[k];
                }
            }
        }
    }
}

/// Gradient of the continuous logit selected by `head` with respect to
/// every parameter, for a single input.
pub fn continuous_gradient(model: &GraftedModel, x: &[u8], head: Head) -> Result<ModelGradient> {
    model.check_input(x)?;
    let compiled = model.compile(DEFAULT_EPS);
    let out = compiled.continuous(x);
    let mut grad = ModelGradient::zeros_like(model);
    compiled.accumulate_gradient(x, &out, 1.0, head, &mut grad);
    Ok(grad)
}
