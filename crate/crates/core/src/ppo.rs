//! Masked PPO on a small tanh MLP.
//!
//! The network is a shared two-layer trunk feeding a policy head with one
//! logit per action slot (`3n+1`) and a scalar value head. Invalid actions
//! have their logits replaced by [`MASK_SENTINEL`] before the softmax, so
//! their probabilities underflow to exactly zero and no gradient reaches
//! them.
//!
//! # Checkpoint layout
//!
//! Checkpoints are JSON objects:
//!
//! ```text
//! format        "adr-policy"
//! version       1
//! obs_layout    "obs-v1"
//! n_debris      n
//! input_dim     8n+5
//! action_dim    3n+1
//! hidden        [h1, h2]
//! activation    "tanh"
//! seed          u64 used for initialisation and training
//! init          { scheme, gain_hidden, gain_policy, gain_value, bias }
//! hyperparams   PPOHyperparams
//! layers        [{ name, rows, cols, weight: row-major rows*cols, bias: rows }]
//! ```
//!
//! Layers appear in the order `trunk.0`, `trunk.1`, `policy`, `value`; each
//! maps `x -> W x + b` with `W` of shape `rows × cols`. Floats are written
//! with shortest round-trip formatting, so loading is bit exact.

use crate::env::{action_count, observation_len, Action, EnvError, MissionState, OBS_LAYOUT_VERSION};
use crate::rng::{derive_seed, rng_from_seed, uniform01, SimRng};
use crate::scenario::{generate_scenario, MissionParams, Scenario, ScenarioError};
use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis, Zip};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MASK_SENTINEL: f64 = -1e9;
pub const CHECKPOINT_FORMAT: &str = "adr-policy";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const TRAIN_LOG_HEADER: &str = "batch_index,steps,mean_return,mean_ep_len,policy_loss,value_loss,entropy";

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("checkpoint refused: {0}")]
    Refused(String),
    #[error("non-finite loss at batch {batch_index}")]
    NonFinite {
        batch_index: usize,
        /// Parameters before the update that produced the bad loss.
        snapshot: Box<PolicyParameters>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

pub type Result<T> = std::result::Result<T, PpoError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PPOHyperparams {
    pub learning_rate: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub clip_epsilon: f64,
    pub gae_lambda: f64,
    pub entropy_coefficient: f64,
    pub epochs_per_batch: usize,
    pub minibatch_size: usize,
    pub value_loss_coefficient: f64,
    pub max_gradient_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for PPOHyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 5e-6,
            total_steps: 10_000_000,
            batch_size: 2048,
            gamma: 0.99,
            clip_epsilon: 0.2,
            gae_lambda: 0.95,
            entropy_coefficient: 0.01,
            epochs_per_batch: 10,
            minibatch_size: 256,
            value_loss_coefficient: 0.5,
            max_gradient_norm: 0.5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl PPOHyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PpoError::InvalidHyperparams(m.to_string()));
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad("gae_lambda must lie in (0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.total_steps == 0 || self.batch_size == 0 || self.minibatch_size == 0 || self.epochs_per_batch == 0 {
            return bad("step, batch, minibatch and epoch counts must be positive");
        }
        if !(self.max_gradient_norm > 0.0) {
            return bad("max_gradient_norm must be positive");
        }
        if !(self.entropy_coefficient >= 0.0 && self.value_loss_coefficient >= 0.0) {
            return bad("loss coefficients must be non-negative");
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2) && self.adam_epsilon > 0.0) {
            return bad("Adam constants out of range");
        }
        Ok(())
    }

    /// Number of optimisation rounds for the configured step budget.
    pub fn update_count(&self) -> usize {
        self.total_steps.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitRecord {
    pub scheme: String,
    pub gain_hidden: f64,
    pub gain_policy: f64,
    pub gain_value: f64,
    pub bias: f64,
}

impl Default for InitRecord {
    fn default() -> Self {
        Self {
            scheme: "orthogonal".into(),
            gain_hidden: std::f64::consts::SQRT_2,
            gain_policy: 0.01,
            gain_value: 1.0,
            bias: 0.0,
        }
    }
}

/// Affine layer `x -> W x + b`, `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros_like(&self) -> Self {
        Self { w: Array2::zeros(self.w.raw_dim()), b: Array1::zeros(self.b.raw_dim()) }
    }
}

pub const LAYER_NAMES: [&str; 4] = ["trunk.0", "trunk.1", "policy", "value"];

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    pub n_debris: usize,
    pub hidden: [usize; 2],
    pub seed: u64,
    pub init: InitRecord,
    pub hyperparams: PPOHyperparams,
    /// `trunk.0`, `trunk.1`, `policy`, `value`.
    pub layers: Vec<Dense>,
}

fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut SimRng) -> Array2<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let g = DMatrix::<f64>::from_fn(tall, short, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Array2::from_shape_fn((rows, cols), |(i, j)| gain * if rows >= cols { q[(i, j)] } else { q[(j, i)] })
}

/// Forward activations kept for backpropagation.
struct Cache {
    h1: Array2<f64>,
    h2: Array2<f64>,
    logits: Array2<f64>,
    values: Array1<f64>,
}

impl PolicyParameters {
    /// Freshly initialised network for `n_debris` objects.
    pub fn new(n_debris: usize, hidden: [usize; 2], seed: u64) -> Result<Self> {
        if n_debris == 0 || hidden.contains(&0) {
            return Err(PpoError::Contract("network dimensions must be positive".into()));
        }
        let init = InitRecord::default();
        let mut rng = rng_from_seed(derive_seed(seed, &[0]));
        let input = observation_len(n_debris);
        let dims = [
            (hidden[0], input, init.gain_hidden),
            (hidden[1], hidden[0], init.gain_hidden),
            (action_count(n_debris), hidden[1], init.gain_policy),
            (1, hidden[1], init.gain_value),
        ];
        let layers = dims
            .iter()
            .map(|&(r, c, gain)| Dense { w: orthogonal(r, c, gain, &mut rng), b: Array1::from_elem(r, init.bias) })
            .collect();
        Ok(Self { n_debris, hidden, seed, init, hyperparams: PPOHyperparams::default(), layers })
    }

    pub fn input_dim(&self) -> usize {
        observation_len(self.n_debris)
    }

    pub fn action_dim(&self) -> usize {
        action_count(self.n_debris)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|x| x.is_finite()))
    }

    /// All parameters in checkpoint order (each layer's weight then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend(l.w.iter().copied());
            out.extend(l.b.iter().copied());
        }
        out
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(PpoError::Contract("flat parameter length mismatch".into()));
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|x| *x = it.next().unwrap());
        }
        Ok(())
    }

    fn forward_cached(&self, x: &Array2<f64>) -> Cache {
        let affine = |input: &Array2<f64>, l: &Dense| {
            let mut a = input.dot(&l.w.t());
            a += &l.b;
            a
        };
        let h1 = affine(x, &self.layers[0]).mapv_into(f64::tanh);
        let h2 = affine(&h1, &self.layers[1]).mapv_into(f64::tanh);
        let logits = affine(&h2, &self.layers[2]);
        let values = affine(&h2, &self.layers[3]).column(0).to_owned();
        Cache { h1, h2, logits, values }
    }

    /// Raw logits and value estimates for a batch of observations (one per row).
    pub fn forward_batch(&self, observations: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        if observations.ncols() != self.input_dim() {
            return Err(PpoError::Contract(format!(
                "observation width {} does not match network input {}",
                observations.ncols(),
                self.input_dim()
            )));
        }
        let c = self.forward_cached(observations);
        Ok((c.logits, c.values))
    }

    pub fn forward(&self, observation: &[f64]) -> Result<(Vec<f64>, f64)> {
        let x = Array2::from_shape_vec((1, observation.len()), observation.to_vec())
            .map_err(|e| PpoError::Contract(e.to_string()))?;
        let (z, v) = self.forward_batch(&x)?;
        Ok((z.row(0).to_vec(), v[0]))
    }

    pub fn action_probabilities(&self, observation: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
        let (z, _) = self.forward(observation)?;
        masked_softmax(&z, mask)
    }

    /// Deterministic decision: the valid action with the largest logit
    /// (lowest index on ties).
    pub fn greedy_action(&self, observation: &[f64], mask: &[bool]) -> Result<usize> {
        let (z, _) = self.forward(observation)?;
        let m = masked_logits(&z, mask)?;
        let mut best = None::<(usize, f64)>;
        for (i, &x) in m.iter().enumerate() {
            if mask[i] && best.is_none_or(|(_, b)| x > b) {
                best = Some((i, x));
            }
        }
        Ok(best.expect("mask has a set bit").0)
    }

    fn zeros_like(&self) -> Vec<Dense> {
        self.layers.iter().map(Dense::zeros_like).collect()
    }
}

/// Replace invalid logits with [`MASK_SENTINEL`].
pub fn masked_logits(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(PpoError::Contract("logit and mask lengths differ".into()));
    }
    if !mask.iter().any(|&m| m) {
        return Err(PpoError::Contract("all actions are masked".into()));
    }
    Ok(logits.iter().zip(mask).map(|(&z, &m)| if m { z } else { MASK_SENTINEL }).collect())
}

pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let z = masked_logits(logits, mask)?;
    Ok(softmax(&z))
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `log softmax` of an already-masked row.
fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    z.iter().map(|&x| x - lse).collect()
}

/// Per-sample PPO objective `min(r A, clip(r, 1-ε, 1+ε) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Generalised advantage estimation over one contiguous rollout segment.
///
/// `dones[t]` marks that step `t` ended its episode; `last_value` bootstraps
/// the step after the segment when it does not end on a terminal.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(PpoError::Contract("GAE inputs differ in length".into()));
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Collected experience; one entry per environment step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub observations: Vec<Vec<f64>>,
    pub masks: Vec<Vec<bool>>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn push(&mut self, obs: Vec<f64>, mask: Vec<bool>, action: usize, log_prob: f64, reward: f64, value: f64, done: bool) {
        self.observations.push(obs);
        self.masks.push(mask);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.dones.push(done);
    }

    fn append(&mut self, other: RolloutBuffer) {
        self.observations.extend(other.observations);
        self.masks.extend(other.masks);
        self.actions.extend(other.actions);
        self.log_probs.extend(other.log_probs);
        self.rewards.extend(other.rewards);
        self.values.extend(other.values);
        self.dones.extend(other.dones);
        self.advantages.extend(other.advantages);
        self.returns.extend(other.returns);
    }

    /// Shift and scale advantages to zero mean and unit variance.
    pub fn normalize_advantages(&mut self) {
        let n = self.advantages.len();
        if n < 2 {
            return;
        }
        let mean = self.advantages.iter().sum::<f64>() / n as f64;
        let var = self.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = 1.0 / (var.sqrt() + 1e-8);
        self.advantages.iter_mut().for_each(|a| *a = (*a - mean) * scale);
    }

    pub fn minibatch(&self, indices: &[usize]) -> MiniBatch {
        let width = self.observations.first().map_or(0, Vec::len);
        let actions = self.masks.first().map_or(0, Vec::len);
        MiniBatch {
            observations: Array2::from_shape_fn((indices.len(), width), |(i, j)| self.observations[indices[i]][j]),
            masks: Array2::from_shape_fn((indices.len(), actions), |(i, j)| self.masks[indices[i]][j]),
            actions: indices.iter().map(|&i| self.actions[i]).collect(),
            old_log_probs: indices.iter().map(|&i| self.log_probs[i]).collect(),
            advantages: indices.iter().map(|&i| self.advantages[i]).collect(),
            returns: indices.iter().map(|&i| self.returns[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub observations: Array2<f64>,
    pub masks: Array2<bool>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl MiniBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Loss terms of one minibatch; `total = policy + c_v value − c_e entropy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
}

fn masked_rows(logits: &Array2<f64>, masks: &Array2<bool>) -> Array2<f64> {
    let mut z = logits.clone();
    Zip::from(&mut z).and(masks).for_each(|x, &m| {
        if !m {
            *x = MASK_SENTINEL
        }
    });
    z
}

/// Log-probabilities of the chosen actions under `params`.
pub fn action_log_probs(params: &PolicyParameters, batch: &MiniBatch) -> Result<Vec<f64>> {
    let (logits, _) = params.forward_batch(&batch.observations)?;
    let z = masked_rows(&logits, &batch.masks);
    Ok(z.rows()
        .into_iter()
        .zip(&batch.actions)
        .map(|(row, &a)| log_softmax(row.as_slice().expect("standard layout"))[a])
        .collect())
}

/// Loss value only (used by finite-difference checks).
pub fn loss(params: &PolicyParameters, batch: &MiniBatch, hp: &PPOHyperparams) -> Result<LossParts> {
    Ok(loss_and_gradients(params, batch, hp)?.0)
}

/// Minibatch loss and its exact gradient with respect to every parameter.
pub fn loss_and_gradients(
    params: &PolicyParameters,
    batch: &MiniBatch,
    hp: &PPOHyperparams,
) -> Result<(LossParts, Vec<Dense>)> {
    let b = batch.len();
    if b == 0 {
        return Err(PpoError::Contract("empty minibatch".into()));
    }
    if batch.masks.ncols() != params.action_dim() {
        return Err(PpoError::Contract("mask width does not match the policy head".into()));
    }
    let cache = params.forward_cached(&batch.observations);
    let z = masked_rows(&cache.logits, &batch.masks);
    let inv_b = 1.0 / b as f64;
    let eps = hp.clip_epsilon;

    let mut d_logits = Array2::<f64>::zeros(z.raw_dim());
    let mut d_values = Array1::<f64>::zeros(b);
    let (mut policy, mut value, mut entropy) = (0.0, 0.0, 0.0);
    for i in 0..b {
        let row = z.row(i);
        let row = row.as_slice().expect("standard layout");
        let mask = batch.masks.row(i);
        if !mask.iter().any(|&m| m) {
            return Err(PpoError::Contract(format!("sample {i} has no valid action")));
        }
        let logp = log_softmax(row);
        let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let a = batch.actions[i];
        if !mask[a] {
            return Err(PpoError::Contract(format!("sample {i} took a masked action")));
        }
        let ratio = (logp[a] - batch.old_log_probs[i]).exp();
        let adv = batch.advantages[i];
        let s = clipped_surrogate(ratio, adv, eps);
        policy -= s * inv_b;
        // gradient flows only through the unclipped branch
        let unclipped = ratio * adv <= ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
        let g_logp = if unclipped { -ratio * adv * inv_b } else { 0.0 };

        let h: f64 = -(0..p.len()).filter(|&j| mask[j]).map(|j| p[j] * logp[j]).sum::<f64>();
        entropy += h * inv_b;

        for j in 0..p.len() {
            if !mask[j] {
                continue;
            }
            let dlogp = if j == a { 1.0 - p[j] } else { -p[j] };
            let dh = -p[j] * (logp[j] + h);
            d_logits[[i, j]] = g_logp * dlogp - hp.entropy_coefficient * inv_b * dh;
        }

        let err = cache.values[i] - batch.returns[i];
        value += err * err * inv_b;
        d_values[i] = hp.value_loss_coefficient * 2.0 * err * inv_b;
    }
    let total = policy + hp.value_loss_coefficient * value - hp.entropy_coefficient * entropy;

    let (l1, lp, lv) = (&params.layers[1], &params.layers[2], &params.layers[3]);
    let d_values2 = d_values.view().insert_axis(Axis(1));
    let grad_p = Dense { w: d_logits.t().dot(&cache.h2), b: d_logits.sum_axis(Axis(0)) };
    let grad_v = Dense { w: d_values2.t().dot(&cache.h2), b: d_values2.sum_axis(Axis(0)) };
    let mut d_h2 = d_logits.dot(&lp.w) + d_values2.dot(&lv.w);
    Zip::from(&mut d_h2).and(&cache.h2).for_each(|d, &h| *d *= 1.0 - h * h);
    let grad_1 = Dense { w: d_h2.t().dot(&cache.h1), b: d_h2.sum_axis(Axis(0)) };
    let mut d_h1 = d_h2.dot(&l1.w);
    Zip::from(&mut d_h1).and(&cache.h1).for_each(|d, &h| *d *= 1.0 - h * h);
    let grad_0 = Dense { w: d_h1.t().dot(&batch.observations), b: d_h1.sum_axis(Axis(0)) };
    Ok((LossParts { policy, value, entropy, total }, vec![grad_0, grad_1, grad_p, grad_v]))
}

fn global_norm(grads: &[Dense]) -> f64 {
    grads
        .iter()
        .map(|g| g.w.iter().chain(g.b.iter()).map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Dense>,
    v: Vec<Dense>,
    t: i32,
}

impl Adam {
    pub fn new(params: &PolicyParameters) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    pub fn step(&mut self, params: &mut PolicyParameters, grads: &[Dense], hp: &PPOHyperparams) {
        self.t += 1;
        let (b1, b2) = (hp.adam_beta1, hp.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = hp.learning_rate;
        let eps = hp.adam_epsilon;
        let update = |p: &mut f64, &g: &f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((layer, g), m), v) in params.layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            Zip::from(&mut layer.w).and(&g.w).and(&mut m.w).and(&mut v.w).for_each(update);
            Zip::from(&mut layer.b).and(&g.b).and(&mut m.b).and(&mut v.b).for_each(update);
        }
    }
}

/// Clip a gradient to `max_norm` in global L2 norm; returns the pre-clip norm.
pub fn clip_gradients(grads: &mut [Dense], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / (norm + 1e-6);
        for g in grads.iter_mut() {
            g.w.mapv_inplace(|x| x * scale);
            g.b.mapv_inplace(|x| x * scale);
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hyperparams: PPOHyperparams,
    /// Environment settings for the randomly drawn training scenarios.
    pub mission: MissionParams,
    pub hidden: [usize; 2],
    pub seed: u64,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hyperparams: PPOHyperparams::default(),
            mission: MissionParams::default(),
            hidden: [256, 256],
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub batch_index: usize,
    pub steps: usize,
    /// Mean return of episodes finished during the batch; carried over from
    /// the previous batch when none finished.
    pub mean_return: f64,
    pub mean_ep_len: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

pub fn train_log_csv(rows: &[TrainLogRow]) -> String {
    let mut out = String::from(TRAIN_LOG_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.batch_index, r.steps, r.mean_return, r.mean_ep_len, r.policy_loss, r.value_loss, r.entropy
        );
    }
    out
}

pub fn parse_train_log(text: &str) -> std::result::Result<Vec<TrainLogRow>, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == TRAIN_LOG_HEADER => {}
        _ => return Err("missing training log header".into()),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(format!("line {}: expected 7 fields", i + 2));
            }
            let int = |s: &str| s.trim().parse::<usize>().map_err(|e| format!("line {}: {e}", i + 2));
            let float = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2));
            Ok(TrainLogRow {
                batch_index: int(f[0])?,
                steps: int(f[1])?,
                mean_return: float(f[2])?,
                mean_ep_len: float(f[3])?,
                policy_loss: float(f[4])?,
                value_loss: float(f[5])?,
                entropy: float(f[6])?,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: PolicyParameters,
    pub log: Vec<TrainLogRow>,
}

/// One rollout worker: an environment that persists across batches.
struct Worker {
    index: u64,
    rng: SimRng,
    episodes: u64,
    scenario: Scenario,
    state: MissionState,
    ep_len: usize,
}

impl Worker {
    fn new<G>(index: u64, seed: u64, generate: &G) -> Result<Self>
    where
        G: Fn(u64) -> Result<Scenario>,
    {
        let scenario = generate(derive_seed(seed, &[2, index, 0]))?;
        let state = MissionState::reset(&scenario, derive_seed(seed, &[3, index, 0]));
        Ok(Self { index, rng: rng_from_seed(derive_seed(seed, &[1, index])), episodes: 0, scenario, state, ep_len: 0 })
    }

    /// Collect exactly `steps` transitions, finishing GAE for the segment.
    fn collect<G>(
        &mut self,
        policy: &PolicyParameters,
        steps: usize,
        seed: u64,
        generate: &G,
        hp: &PPOHyperparams,
    ) -> Result<(RolloutBuffer, Vec<(f64, usize)>)>
    where
        G: Fn(u64) -> Result<Scenario>,
    {
        let mut buf = RolloutBuffer::default();
        let mut finished = Vec::new();
        for _ in 0..steps {
            let obs = self.state.observation(&self.scenario).values;
            let mask = self.state.action_mask(&self.scenario)?;
            let (logits, value) = policy.forward(&obs)?;
            let z = masked_logits(&logits, &mask)?;
            let p = softmax(&z);
            let action = sample_index(&p, &mut self.rng);
            let logp = log_softmax(&z)[action];
            let act = Action::from_index(action, self.scenario.n()).expect("index within head");
            let out = self.state.step(&self.scenario, act)?;
            self.ep_len += 1;
            buf.push(obs, mask, action, logp, out.reward, value, out.terminal);
            if out.terminal {
                finished.push((self.state.episode_return, self.ep_len));
                self.episodes += 1;
                let e = self.episodes;
                self.scenario = generate(derive_seed(seed, &[2, self.index, e]))?;
                self.state = MissionState::reset(&self.scenario, derive_seed(seed, &[3, self.index, e]));
                self.ep_len = 0;
            }
        }
        let last_value = policy.forward(&self.state.observation(&self.scenario).values)?.1;
        let (adv, ret) = compute_gae(&buf.rewards, &buf.values, &buf.dones, last_value, hp.gamma, hp.gae_lambda)?;
        buf.advantages = adv;
        buf.returns = ret;
        Ok((buf, finished))
    }
}

fn sample_index(p: &[f64], rng: &mut SimRng) -> usize {
    let u = uniform01(rng);
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 {
            acc += pi;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Train on scenarios drawn from `config.mission` with fresh seeds per episode.
pub fn train(config: &TrainConfig) -> Result<TrainOutput> {
    let mission = config.mission.clone();
    train_with(config, |seed| Ok(generate_scenario(seed, &mission)?), |_| {})
}

/// Training loop with a custom scenario source and a per-batch callback.
pub fn train_with<G, F>(config: &TrainConfig, generate: G, mut on_batch: F) -> Result<TrainOutput>
where
    G: Fn(u64) -> Result<Scenario> + Sync,
    F: FnMut(&TrainLogRow),
{
    let hp = &config.hyperparams;
    hp.validate()?;
    config.mission.validate()?;
    if config.workers == 0 {
        return Err(PpoError::Contract("at least one rollout worker is required".into()));
    }
    let n = config.mission.n_debris;
    let mut policy = PolicyParameters::new(n, config.hidden, config.seed)?;
    policy.hyperparams = hp.clone();
    let mut adam = Adam::new(&policy);
    let mut shuffle_rng = rng_from_seed(derive_seed(config.seed, &[4]));
    let mut workers = (0..config.workers as u64)
        .map(|w| Worker::new(w, config.seed, &generate))
        .collect::<Result<Vec<_>>>()?;
    for w in &workers {
        if w.scenario.n() != n {
            return Err(PpoError::Contract("scenario source disagrees with the configured debris count".into()));
        }
    }

    let mut log = Vec::with_capacity(hp.update_count());
    let mut last_return = 0.0;
    let mut last_len = 0.0;
    for batch_index in 0..hp.update_count() {
        let shares: Vec<usize> = (0..config.workers)
            .map(|w| hp.batch_size / config.workers + usize::from(w < hp.batch_size % config.workers))
            .collect();
        let segments: Vec<Result<(RolloutBuffer, Vec<(f64, usize)>)>> = if config.workers == 1 {
            vec![workers[0].collect(&policy, shares[0], config.seed, &generate, hp)]
        } else {
            let policy_ref = &policy;
            let generate_ref = &generate;
            std::thread::scope(|scope| {
                let handles: Vec<_> = workers
                    .iter_mut()
                    .zip(&shares)
                    .map(|(w, &k)| scope.spawn(move || w.collect(policy_ref, k, config.seed, generate_ref, hp)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("rollout worker panicked")).collect()
            })
        };
        let mut buffer = RolloutBuffer::default();
        let mut finished = Vec::new();
        for seg in segments {
            let (b, f) = seg?;
            buffer.append(b);
            finished.extend(f);
        }
        buffer.normalize_advantages();
        if !finished.is_empty() {
            last_return = finished.iter().map(|f| f.0).sum::<f64>() / finished.len() as f64;
            last_len = finished.iter().map(|f| f.1 as f64).sum::<f64>() / finished.len() as f64;
        }

        let snapshot = policy.clone();
        let mut sums = (0.0, 0.0, 0.0);
        let mut count = 0usize;
        let mut order: Vec<usize> = (0..buffer.len()).collect();
        for _ in 0..hp.epochs_per_batch {
            order.shuffle(&mut shuffle_rng);
            for chunk in order.chunks(hp.minibatch_size) {
                let mb = buffer.minibatch(chunk);
                let (parts, mut grads) = loss_and_gradients(&policy, &mb, hp)?;
                if !parts.total.is_finite() {
                    return Err(PpoError::NonFinite { batch_index, snapshot: Box::new(snapshot) });
                }
                clip_gradients(&mut grads, hp.max_gradient_norm);
                adam.step(&mut policy, &grads, hp);
                sums.0 += parts.policy;
                sums.1 += parts.value;
                sums.2 += parts.entropy;
                count += 1;
            }
        }
        if !policy.is_finite() {
            return Err(PpoError::NonFinite { batch_index, snapshot: Box::new(snapshot) });
        }
        let k = count as f64;
        let row = TrainLogRow {
            batch_index,
            steps: (batch_index + 1) * hp.batch_size,
            mean_return: last_return,
            mean_ep_len: last_len,
            policy_loss: sums.0 / k,
            value_loss: sums.1 / k,
            entropy: sums.2 / k,
        };
        on_batch(&row);
        log.push(row);
    }
    Ok(TrainOutput { policy, log })
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    name: String,
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    obs_layout: String,
    n_debris: usize,
    input_dim: usize,
    action_dim: usize,
    hidden: [usize; 2],
    activation: String,
    seed: u64,
    init: InitRecord,
    hyperparams: PPOHyperparams,
    layers: Vec<LayerRecord>,
}

pub fn policy_to_json(params: &PolicyParameters) -> Result<String> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        obs_layout: OBS_LAYOUT_VERSION.into(),
        n_debris: params.n_debris,
        input_dim: params.input_dim(),
        action_dim: params.action_dim(),
        hidden: params.hidden,
        activation: "tanh".into(),
        seed: params.seed,
        init: params.init.clone(),
        hyperparams: params.hyperparams.clone(),
        layers: params
            .layers
            .iter()
            .zip(LAYER_NAMES)
            .map(|(l, name)| LayerRecord {
                name: name.into(),
                rows: l.w.nrows(),
                cols: l.w.ncols(),
                weight: l.w.iter().copied().collect(),
                bias: l.b.to_vec(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&ck)?)
}

/// Parse a checkpoint; `expected_n` refuses a policy trained for another
/// debris count.
pub fn policy_from_json(text: &str, expected_n: Option<usize>) -> Result<PolicyParameters> {
    let ck: Checkpoint = serde_json::from_str(text)?;
    let refuse = |m: String| Err(PpoError::Refused(m));
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return refuse(format!("unsupported checkpoint {} v{}", ck.format, ck.version));
    }
    if ck.obs_layout != OBS_LAYOUT_VERSION {
        return refuse(format!("observation layout {} differs from {}", ck.obs_layout, OBS_LAYOUT_VERSION));
    }
    if let Some(n) = expected_n {
        if n != ck.n_debris {
            return refuse(format!("policy was built for {} debris, scenario has {n}", ck.n_debris));
        }
    }
    let n = ck.n_debris;
    if n == 0 || ck.input_dim != observation_len(n) || ck.action_dim != action_count(n) || ck.activation != "tanh" {
        return refuse("network header is inconsistent".into());
    }
    let shapes = [
        (ck.hidden[0], ck.input_dim),
        (ck.hidden[1], ck.hidden[0]),
        (ck.action_dim, ck.hidden[1]),
        (1, ck.hidden[1]),
    ];
    if ck.layers.len() != 4 {
        return refuse("expected four layers".into());
    }
    let mut layers = Vec::with_capacity(4);
    for ((rec, &(r, c)), name) in ck.layers.into_iter().zip(&shapes).zip(LAYER_NAMES) {
        if rec.name != name || rec.rows != r || rec.cols != c || rec.weight.len() != r * c || rec.bias.len() != r {
            return refuse(format!("layer {name} has an unexpected shape"));
        }
        let w = Array2::from_shape_vec((r, c), rec.weight).map_err(|e| PpoError::Refused(e.to_string()))?;
        layers.push(Dense { w, b: Array1::from(rec.bias) });
    }
    let params = PolicyParameters {
        n_debris: n,
        hidden: ck.hidden,
        seed: ck.seed,
        init: ck.init,
        hyperparams: ck.hyperparams,
        layers,
    };
    if !params.is_finite() {
        return refuse("non-finite weights".into());
    }
    Ok(params)
}

pub fn save_policy(params: &PolicyParameters, path: &Path) -> Result<()> {
    let text = policy_to_json(params)?;
    std::fs::write(path, text).map_err(|source| PpoError::Io { path: path.to_path_buf(), source })
}

pub fn load_policy(path: &Path, expected_n: Option<usize>) -> Result<PolicyParameters> {
    let text = std::fs::read_to_string(path).map_err(|source| PpoError::Io { path: path.to_path_buf(), source })?;
    policy_from_json(&text, expected_n)
}

/// Largest relative disagreement between analytic and central-difference
/// gradients, `|a − f| / max(|a|, |f|, floor)`.
pub fn gradient_check(
    params: &PolicyParameters,
    batch: &MiniBatch,
    hp: &PPOHyperparams,
    step: f64,
    floor: f64,
) -> Result<f64> {
    let (_, grads) = loss_and_gradients(params, batch, hp)?;
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.w.iter().chain(g.b.iter()).copied().collect::<Vec<_>>()).collect();
    let base = params.flatten();
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let mut x = base.clone();
        x[k] = base[k] + step;
        probe.assign_flat(&x)?;
        let up = loss(&probe, batch, hp)?.total;
        x[k] = base[k] - step;
        probe.assign_flat(&x)?;
        let down = loss(&probe, batch, hp)?.total;
        let fd = (up - down) / (2.0 * step);
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(floor);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Random small network and masked minibatch for gradient checks.
pub fn random_check_problem(seed: u64, n_debris: usize, hidden: [usize; 2], samples: usize) -> Result<(PolicyParameters, MiniBatch)> {
    let mut rng = rng_from_seed(derive_seed(seed, &[9]));
    let mut params = PolicyParameters::new(n_debris, hidden, seed)?;
    // move away from the tiny policy-head init so logits are not uniform
    for l in &mut params.layers {
        l.w.mapv_inplace(|_| 2.0 * uniform01(&mut rng) - 1.0);
        l.b.mapv_inplace(|_| 0.5 * (2.0 * uniform01(&mut rng) - 1.0));
    }
    let a = action_count(n_debris);
    let d = observation_len(n_debris);
    let observations = Array2::from_shape_fn((samples, d), |_| 2.0 * uniform01(&mut rng) - 1.0);
    let mut masks = Array2::from_elem((samples, a), false);
    let mut actions = Vec::with_capacity(samples);
    for i in 0..samples {
        for j in 0..a {
            masks[[i, j]] = uniform01(&mut rng) < 0.6;
        }
        let first = (uniform01(&mut rng) * a as f64) as usize % a;
        masks[[i, first]] = true;
        let valid: Vec<usize> = (0..a).filter(|&j| masks[[i, j]]).collect();
        actions.push(valid[(uniform01(&mut rng) * valid.len() as f64) as usize % valid.len()]);
    }
    let mut batch = MiniBatch {
        observations,
        masks,
        actions,
        old_log_probs: vec![0.0; samples],
        advantages: (0..samples).map(|_| 2.0 * uniform01(&mut rng) - 1.0).collect(),
        returns: (0..samples).map(|_| 4.0 * uniform01(&mut rng) - 2.0).collect(),
    };
    // behaviour log-probs near the current ones so some ratios land inside
    // the clip range and some outside
    let current = action_log_probs(&params, &batch)?;
    batch.old_log_probs = current.iter().map(|l| l + 0.6 * (2.0 * uniform01(&mut rng) - 1.0)).collect();
    Ok((params, batch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_hp() -> PPOHyperparams {
        PPOHyperparams { total_steps: 256, batch_size: 128, minibatch_size: 32, epochs_per_batch: 2, learning_rate: 3e-4, ..Default::default() }
    }

    #[test]
    fn masked_softmax_examples() {
        let p = masked_softmax(&[0.0; 4], &[true, true, false, true]).unwrap();
        for (i, want) in [1.0 / 3.0, 1.0 / 3.0, 0.0, 1.0 / 3.0].iter().enumerate() {
            assert_abs_diff_eq!(p[i], want, epsilon = 1e-15);
        }
        let p = masked_softmax(&[3.0, -2.0, 7.0], &[false, true, false]).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
        assert!(masked_softmax(&[1.0, 2.0], &[false, false]).is_err());
        assert!(masked_logits(&[1.0], &[true, true]).is_err());
    }

    #[test]
    fn masked_probability_is_negligible() {
        let mut rng = rng_from_seed(5);
        for _ in 0..10_000 {
            let z: Vec<f64> = (0..7).map(|_| 20.0 * uniform01(&mut rng) - 10.0).collect();
            let mut mask: Vec<bool> = (0..7).map(|_| uniform01(&mut rng) < 0.5).collect();
            mask[3] = true;
            let p = masked_softmax(&z, &mask).unwrap();
            for (pi, m) in p.iter().zip(&mask) {
                if !m {
                    assert!(*pi < 1e-12);
                }
            }
            assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn surrogate_examples() {
        assert_eq!(clipped_surrogate(1.0, 0.7, 0.2), 0.7);
        assert_eq!(clipped_surrogate(1.0, -3.0, 0.2), -3.0);
        assert_abs_diff_eq!(clipped_surrogate(2.0, 1.0, 0.2), 1.2, epsilon = 1e-15);
        assert_abs_diff_eq!(clipped_surrogate(0.5, -1.0, 0.2), -0.8, epsilon = 1e-15);
    }

    #[test]
    fn gae_examples() {
        let (a, r) = compute_gae(&[1.5], &[0.25], &[false], 2.0, 0.9, 0.0).unwrap();
        assert_abs_diff_eq!(a[0], 1.5 + 0.9 * 2.0 - 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(r[0], a[0] + 0.25, epsilon = 1e-15);
        let (a, _) = compute_gae(&[1.5], &[0.25], &[true], 2.0, 0.9, 0.0).unwrap();
        assert_abs_diff_eq!(a[0], 1.25, epsilon = 1e-15);
        let (a, r) = compute_gae(&[0.0; 5], &[0.0; 5], &[false; 5], 0.0, 0.99, 0.95).unwrap();
        assert!(a.iter().chain(&r).all(|&x| x == 0.0));
        // lambda = 1 telescopes to the discounted Monte Carlo return
        let rewards = [1.0, -0.5, 2.0];
        let values = [0.3, -0.2, 0.9];
        let g = 0.97;
        let (a, _) = compute_gae(&rewards, &values, &[false, false, true], 123.0, g, 1.0).unwrap();
        let mc = 1.0 + g * -0.5 + g * g * 2.0;
        assert_abs_diff_eq!(a[0], mc - 0.3, epsilon = 1e-12);
        assert!(compute_gae(&[1.0], &[], &[true], 0.0, 0.9, 0.9).is_err());
    }

    #[test]
    fn gae_cuts_at_episode_boundary() {
        let (a, _) = compute_gae(&[1.0, 1.0], &[0.0, 0.0], &[true, false], 10.0, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(a[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a[1], 11.0, epsilon = 1e-15);
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(PPOHyperparams::default().validate().is_ok());
        for bad in [
            PPOHyperparams { clip_epsilon: 1.0, ..Default::default() },
            PPOHyperparams { gamma: 0.0, ..Default::default() },
            PPOHyperparams { gae_lambda: 1.5, ..Default::default() },
            PPOHyperparams { batch_size: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert_eq!(PPOHyperparams { total_steps: 2048, ..Default::default() }.update_count(), 1);
        assert_eq!(PPOHyperparams { total_steps: 2049, ..Default::default() }.update_count(), 2);
    }

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = rng_from_seed(1);
        let w = orthogonal(4, 9, 1.0, &mut rng);
        let g = w.dot(&w.t());
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(g[[i, j]], if i == j { 1.0 } else { 0.0 }, epsilon = 1e-12);
            }
        }
        let w = orthogonal(9, 4, 2.0, &mut rng);
        let g = w.t().dot(&w);
        assert_abs_diff_eq!(g[[2, 2]], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn network_shapes() {
        let p = PolicyParameters::new(3, [16, 8], 0).unwrap();
        assert_eq!(p.input_dim(), 29);
        assert_eq!(p.action_dim(), 10);
        assert_eq!(p.layers[0].w.dim(), (16, 29));
        assert_eq!(p.layers[3].w.dim(), (1, 8));
        assert_eq!(p.parameter_count(), 16 * 29 + 16 + 8 * 16 + 8 + 10 * 8 + 10 + 8 + 1);
        assert!(p.forward(&[0.0; 28]).is_err());
        let (z, v) = p.forward(&[0.1; 29]).unwrap();
        assert_eq!(z.len(), 10);
        assert!(v.is_finite());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let hp = PPOHyperparams::default();
        for seed in 0..5 {
            let (params, batch) = random_check_problem(seed, 2, [2, 2], 6).unwrap();
            let worst = gradient_check(&params, &batch, &hp, 1e-6, 1e-7).unwrap();
            assert!(worst < 1e-4, "seed {seed}: {worst}");
        }
    }

    #[test]
    fn invalid_logits_receive_no_gradient() {
        let hp = PPOHyperparams::default();
        let (params, batch) = random_check_problem(3, 3, [4, 4], 10).unwrap();
        // gradient on the policy head bias is the per-logit gradient summed
        // over samples; check a column that is masked everywhere
        let mut batch = batch;
        for i in 0..batch.len() {
            batch.masks[[i, 4]] = false;
            if batch.actions[i] == 4 {
                batch.masks[[i, 0]] = true;
                batch.actions[i] = 0;
            }
        }
        let (_, grads) = loss_and_gradients(&params, &batch, &hp).unwrap();
        assert_eq!(grads[2].b[4], 0.0);
        assert!(grads[2].w.row(4).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ratio_is_one_at_behaviour_policy() {
        let (params, mut batch) = random_check_problem(4, 2, [8, 8], 12).unwrap();
        batch.old_log_probs = action_log_probs(&params, &batch).unwrap();
        let mut updated = params.clone();
        let (_, grads) = loss_and_gradients(&params, &batch, &PPOHyperparams::default()).unwrap();
        let mut adam = Adam::new(&updated);
        adam.step(&mut updated, &grads, &PPOHyperparams { learning_rate: 1e-2, ..Default::default() });
        assert_ne!(updated, params);
        // roll back and recompute
        let restored = params.clone();
        for (new, old) in action_log_probs(&restored, &batch).unwrap().iter().zip(&batch.old_log_probs) {
            assert_abs_diff_eq!((new - old).exp(), 1.0, epsilon = 1e-12);
        }
        // batched and single-row forward agree
        for i in 0..batch.len() {
            let (z, _) = params.forward(batch.observations.row(i).as_slice().unwrap()).unwrap();
            let mask: Vec<bool> = batch.masks.row(i).to_vec();
            let l = log_softmax(&masked_logits(&z, &mask).unwrap())[batch.actions[i]];
            assert_abs_diff_eq!(l, batch.old_log_probs[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_clip_bounds_norm() {
        let (params, batch) = random_check_problem(8, 2, [4, 4], 8).unwrap();
        let (_, mut grads) = loss_and_gradients(&params, &batch, &PPOHyperparams::default()).unwrap();
        let before = clip_gradients(&mut grads, 1e-3);
        assert!(before > 1e-3);
        assert!(global_norm(&grads) <= 1e-3);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let p = PolicyParameters::new(4, [12, 7], 99).unwrap();
        let text = policy_to_json(&p).unwrap();
        let q = policy_from_json(&text, Some(4)).unwrap();
        assert_eq!(p.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>(), q.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(p, q);
        let obs: Vec<f64> = (0..p.input_dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        let mask: Vec<bool> = (0..p.action_dim()).map(|i| i % 3 != 1).collect();
        assert_eq!(p.action_probabilities(&obs, &mask).unwrap(), q.action_probabilities(&obs, &mask).unwrap());
        match policy_from_json(&text, Some(5)) {
            Err(PpoError::Refused(m)) => assert!(m.contains("4 debris")),
            other => panic!("expected refusal, got {other:?}"),
        }
        let tampered = text.replace("\"obs-v1\"", "\"obs-v0\"");
        assert!(matches!(policy_from_json(&tampered, None), Err(PpoError::Refused(_))));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let p = PolicyParameters::new(2, [4, 4], 1).unwrap();
        save_policy(&p, &path).unwrap();
        assert_eq!(load_policy(&path, None).unwrap(), p);
        assert!(matches!(load_policy(&dir.path().join("missing.json"), None), Err(PpoError::Io { .. })));
    }

    #[test]
    fn one_batch_gives_one_log_row() {
        let cfg = TrainConfig {
            hyperparams: PPOHyperparams { total_steps: 128, ..small_hp() },
            mission: MissionParams { n_debris: 3, collision_probability: 0.0, ..Default::default() },
            hidden: [16, 16],
            seed: 3,
            workers: 1,
        };
        let out = train(&cfg).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.log[0].steps, 128);
        assert!(out.log[0].mean_return > 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig {
            hyperparams: small_hp(),
            mission: MissionParams { n_debris: 3, collision_probability: 1.0 / 3.0, ..Default::default() },
            hidden: [16, 16],
            seed: 11,
            workers: 1,
        };
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert_eq!(train_log_csv(&a.log), train_log_csv(&b.log));
        assert_eq!(a.policy, b.policy);
        let multi = TrainConfig { workers: 3, ..cfg.clone() };
        let c = train(&multi).unwrap();
        let d = train(&multi).unwrap();
        assert_eq!(train_log_csv(&c.log), train_log_csv(&d.log));
    }

    #[test]
    fn train_log_round_trips() {
        let rows = vec![TrainLogRow { batch_index: 0, steps: 2048, mean_return: 5.5, mean_ep_len: 7.25, policy_loss: -0.01, value_loss: 0.3, entropy: 1.2 }];
        let text = train_log_csv(&rows);
        assert!(text.starts_with(TRAIN_LOG_HEADER));
        assert_eq!(parse_train_log(&text).unwrap(), rows);
        assert!(parse_train_log("nope\n").is_err());
    }
}
