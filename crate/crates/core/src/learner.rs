//! Online one-vs-rest multi-label classifiers trained with Adam on mean
//! per-class binary cross-entropy.
//!
//! Parameters live in one flat vector per model. The per-class output
//! parameters sit at the end of that vector, so growing the class universe
//! only appends zero-initialized rows (and zero optimizer moments).

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::LabeledExample;
use crate::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-4,
        }
    }
}

/// Adam moment estimates for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Adam {
            config,
            first: vec![0.0; len],
            second: vec![0.0; len],
            steps: 0,
        }
    }

    fn grow(&mut self, len: usize) {
        self.first.resize(len, 0.0);
        self.second.resize(len, 0.0);
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.steps += 1;
        let bc1 = 1.0 - beta1.powi(self.steps as i32);
        let bc2 = 1.0 - beta2.powi(self.steps as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-[y ln s(z) + (1 - y) ln(1 - s(z))]` without overflow.
fn bce_with_logit(z: f64, y: bool) -> f64 {
    z.max(0.0) - if y { z } else { 0.0 } + (-z.abs()).exp().ln_1p()
}

/// A differentiable multi-label scorer with a flat parameter vector.
pub trait Network {
    fn num_classes(&self) -> usize;
    fn feature_dim(&self) -> usize;
    /// Appends zero-initialized output rows up to `num_classes`.
    fn grow_classes(&mut self, num_classes: usize);
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn logits(&self, features: &[f64]) -> Vec<f64>;
    /// Accumulates `dL/dparams` into `grad` given `dL/dlogits` for one input.
    fn backprop(&self, features: &[f64], dlogits: &[f64], grad: &mut [f64]);
}

/// Network plus optimizer state.
#[derive(Debug, Clone)]
pub struct Model<N> {
    pub net: N,
    pub optimizer: Adam,
}

/// Linear one-vs-rest classifier.
pub type LinearModel = Model<Linear>;
/// One-hidden-layer ReLU classifier.
pub type MlpModel = Model<Mlp>;

impl<N: Network> Model<N> {
    pub fn from_network(net: N, adam: AdamConfig) -> Self {
        let len = net.params().len();
        Model {
            net,
            optimizer: Adam::new(adam, len),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.net.num_classes()
    }

    /// Per-class probabilities; classes beyond the model's universe score 0.
    pub fn predict(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(features)?;
        Ok(self.net.logits(features).into_iter().map(sigmoid).collect())
    }

    fn check_dim(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.net.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.net.feature_dim(),
                got: features.len(),
            });
        }
        Ok(())
    }

    /// Grows the class universe to cover every label in `examples`.
    pub fn observe_classes<'a>(&mut self, examples: impl IntoIterator<Item = &'a LabeledExample>) {
        let need = examples
            .into_iter()
            .map(|e| e.label.universe_hint())
            .max()
            .unwrap_or(0);
        if need > self.net.num_classes() {
            self.net.grow_classes(need);
            self.optimizer.grow(self.net.params().len());
        }
    }

    /// Mean per-class BCE over `batch` and its gradient.
    pub fn loss_and_grad(&self, batch: &[&LabeledExample]) -> Result<(f64, Vec<f64>)> {
        let c = self.net.num_classes();
        let mut grad = vec![0.0; self.net.params().len()];
        if batch.is_empty() || c == 0 {
            return Ok((0.0, grad));
        }
        let scale = 1.0 / (batch.len() * c) as f64;
        let mut loss = 0.0;
        let mut dlogits = vec![0.0; c];
        for ex in batch {
            self.check_dim(&ex.features)?;
            let z = self.net.logits(&ex.features);
            for (k, (&zk, d)) in z.iter().zip(&mut dlogits).enumerate() {
                let y = ex.label.contains(k);
                loss += bce_with_logit(zk, y);
                *d = (sigmoid(zk) - f64::from(u8::from(y))) * scale;
            }
            self.net.backprop(&ex.features, &dlogits, &mut grad);
        }
        Ok((loss * scale, grad))
    }

    /// One Adam step on the concatenation of `input` and `replay`; returns
    /// the loss before the update.
    pub fn train_step(&mut self, input: &[LabeledExample], replay: &[LabeledExample], lr: f64) -> Result<f64> {
        self.observe_classes(input.iter().chain(replay));
        let batch: Vec<&LabeledExample> = input.iter().chain(replay).collect();
        let (loss, grad) = self.loss_and_grad(&batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(loss));
        }
        self.optimizer.apply(self.net.params_mut(), &grad, lr);
        Ok(loss)
    }
}

impl LinearModel {
    pub fn new(feature_dim: usize, num_classes: usize, adam: AdamConfig) -> Self {
        Model::from_network(Linear::new(feature_dim, num_classes), adam)
    }
}

impl MlpModel {
    pub fn new(feature_dim: usize, hidden: usize, num_classes: usize, adam: AdamConfig, seed: u64) -> Self {
        Model::from_network(Mlp::new(feature_dim, hidden, num_classes, seed), adam)
    }
}

/// Row `c` of `params` is `[w_c (feature_dim), b_c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    feature_dim: usize,
    num_classes: usize,
    params: Vec<f64>,
}

impl Linear {
    pub fn new(feature_dim: usize, num_classes: usize) -> Self {
        Linear {
            feature_dim,
            num_classes,
            params: vec![0.0; num_classes * (feature_dim + 1)],
        }
    }

    pub fn weights(&self, class: usize) -> &[f64] {
        let row = self.feature_dim + 1;
        &self.params[class * row..class * row + self.feature_dim]
    }

    pub fn bias(&self, class: usize) -> f64 {
        self.params[class * (self.feature_dim + 1) + self.feature_dim]
    }

    pub fn set_bias(&mut self, class: usize, b: f64) {
        self.params[class * (self.feature_dim + 1) + self.feature_dim] = b;
    }
}

fn affine_rows(params: &[f64], input: &[f64], rows: usize) -> Vec<f64> {
    let d = input.len();
    params
        .chunks_exact(d + 1)
        .take(rows)
        .map(|r| r[..d].iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + r[d])
        .collect()
}

fn affine_rows_backprop(input: &[f64], dout: &[f64], grad: &mut [f64]) {
    let d = input.len();
    for (g, &dz) in grad.chunks_exact_mut(d + 1).zip(dout) {
        if dz == 0.0 {
            continue;
        }
        for (gi, x) in g[..d].iter_mut().zip(input) {
            *gi += dz * x;
        }
        g[d] += dz;
    }
}

impl Network for Linear {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn grow_classes(&mut self, num_classes: usize) {
        if num_classes > self.num_classes {
            self.num_classes = num_classes;
            self.params.resize(num_classes * (self.feature_dim + 1), 0.0);
        }
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn logits(&self, features: &[f64]) -> Vec<f64> {
        affine_rows(&self.params, features, self.num_classes)
    }

    fn backprop(&self, features: &[f64], dlogits: &[f64], grad: &mut [f64]) {
        affine_rows_backprop(features, dlogits, grad);
    }
}

/// `[hidden rows (feature_dim + 1) x hidden][output rows (hidden + 1) x C]`,
/// ReLU hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    feature_dim: usize,
    hidden: usize,
    num_classes: usize,
    params: Vec<f64>,
}

impl Mlp {
    /// He-initialized hidden layer; output rows start at zero.
    pub fn new(feature_dim: usize, hidden: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let scale = (2.0 / feature_dim.max(1) as f64).sqrt();
        let mut params = Vec::with_capacity(hidden * (feature_dim + 1) + num_classes * (hidden + 1));
        for _ in 0..hidden {
            for _ in 0..feature_dim {
                params.push(scale * rng.sample::<f64, _>(StandardNormal));
            }
            params.push(0.0);
        }
        params.resize(params.len() + num_classes * (hidden + 1), 0.0);
        Mlp {
            feature_dim,
            hidden,
            num_classes,
            params,
        }
    }

    fn split(&self) -> (&[f64], &[f64]) {
        self.params.split_at(self.hidden * (self.feature_dim + 1))
    }

    fn hidden_activations(&self, features: &[f64]) -> Vec<f64> {
        let (first, _) = self.split();
        affine_rows(first, features, self.hidden)
            .into_iter()
            .map(|a| a.max(0.0))
            .collect()
    }
}

impl Network for Mlp {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn grow_classes(&mut self, num_classes: usize) {
        if num_classes > self.num_classes {
            self.num_classes = num_classes;
            let len = self.hidden * (self.feature_dim + 1) + num_classes * (self.hidden + 1);
            self.params.resize(len, 0.0);
        }
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn logits(&self, features: &[f64]) -> Vec<f64> {
        let h = self.hidden_activations(features);
        let (_, second) = self.split();
        affine_rows(second, &h, self.num_classes)
    }

    fn backprop(&self, features: &[f64], dlogits: &[f64], grad: &mut [f64]) {
        let h = self.hidden_activations(features);
        let split = self.hidden * (self.feature_dim + 1);
        let (g_first, g_second) = grad.split_at_mut(split);
        affine_rows_backprop(&h, dlogits, g_second);
        let (_, second) = self.split();
        let mut dh = vec![0.0; self.hidden];
        for (row, &dz) in second.chunks_exact(self.hidden + 1).zip(dlogits) {
            for (d, w) in dh.iter_mut().zip(row) {
                *d += dz * w;
            }
        }
        for (d, &a) in dh.iter_mut().zip(&h) {
            if a <= 0.0 {
                *d = 0.0;
            }
        }
        affine_rows_backprop(features, &dh, g_first);
    }
}
