use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A trainable tensor with its RMSprop state.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub square_avg: Tensor,
    pub momentum: Tensor,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Param {
            value,
            square_avg: Tensor::zeros(shape.clone()),
            momentum: Tensor::zeros(shape),
        }
    }
}

/// Gradients keyed by parameter name.
pub type Grads = BTreeMap<String, Tensor>;

/// Named trainable parameters plus non-trainable buffers (batch-norm running statistics).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: BTreeMap<String, Param>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), Param::new(value));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn set_buffer(&mut self, name: impl Into<String>, value: Tensor) {
        self.buffers.insert(name.into(), value);
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor> {
        self.buffers.get(name)
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Uniform He initialization for a weight whose fan-in is `fan_in`.
    pub fn init_he_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) {
        self.init_uniform(name, shape, (6.0 / fan_in as f64).sqrt() as f32, rng);
    }

    /// Uniform `±1/√fan_in`, the usual framework default for dense and conv layers.
    pub fn init_fan_in_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) {
        self.init_uniform(name, shape, (1.0 / fan_in as f64).sqrt() as f32, rng);
    }

    fn init_uniform(&mut self, name: &str, shape: &[usize], bound: f32, rng: &mut impl Rng) {
        let t = Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-bound..bound));
        self.insert(name, t);
    }

    /// All named tensors (params first, then buffers prefixed with `buffer:`),
    /// the layout used for checkpoints.
    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .params
            .iter()
            .map(|(k, p)| (k.clone(), p.value.clone()))
            .collect();
        out.extend(
            self.buffers
                .iter()
                .map(|(k, v)| (format!("buffer:{k}"), v.clone())),
        );
        out
    }

    pub fn from_named(named: Vec<(String, Tensor)>) -> Self {
        let mut set = ParamSet::new();
        for (name, t) in named {
            match name.strip_prefix("buffer:") {
                Some(b) => set.set_buffer(b, t),
                None => set.insert(name, t),
            }
        }
        set
    }

    /// Checks that every parameter and buffer of `self` also exists in `other` with the same shape.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .all(|(k, p)| other.get(k).is_some_and(|o| o.shape() == p.value.shape()))
            && self.buffers.len() == other.buffers.len()
            && self
                .buffers
                .iter()
                .all(|(k, b)| other.buffer(k).is_some_and(|o| o.shape() == b.shape()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f32,
    pub weight_decay: f32,
    pub momentum: f32,
    /// Decay of the running average of squared gradients.
    pub square_avg_decay: f32,
    pub eps: f32,
    /// Multiplicative learning-rate decay applied every `lr_decay_period` epochs.
    pub lr_decay: f32,
    pub lr_decay_period: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 1e-5,
            weight_decay: 1e-6,
            momentum: 0.9,
            square_avg_decay: 0.99,
            eps: 1e-8,
            lr_decay: 0.3,
            lr_decay_period: 5,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.square_avg_decay > 0.0
            && self.square_avg_decay < 1.0
            && self.eps > 0.0
            && self.lr_decay > 0.0
            && self.lr_decay <= 1.0
            && self.lr_decay_period >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }

    /// Step-decayed learning rate for a zero-based epoch index.
    pub fn lr_at_epoch(&self, epoch: usize) -> f32 {
        let drops = (epoch / self.lr_decay_period) as i32;
        self.learning_rate * self.lr_decay.powi(drops)
    }

    pub fn at_epoch(&self, epoch: usize) -> OptimConfig {
        OptimConfig {
            learning_rate: self.lr_at_epoch(epoch),
            ..*self
        }
    }
}

/// One RMSprop update with momentum and additive weight decay:
///
/// ```text
/// g  = grad + wd·p
/// v  = a·v + (1-a)·g²
/// b  = mu·b + g / (sqrt(v) + eps)
/// p -= lr·b
/// ```
///
/// Parameters without an entry in `grads` are treated as having zero gradient.
pub fn rmsprop_step(params: &mut ParamSet, grads: &Grads, cfg: &OptimConfig) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .params
            .get(name)
            .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter `{name}`")))?;
        g.expect_shape(p.value.shape())?;
    }
    let a = cfg.square_avg_decay;
    for (name, p) in params.params.iter_mut() {
        let grad = grads.get(name).map(Tensor::data);
        let value = p.value.data_mut();
        let sq = p.square_avg.data_mut();
        let buf = p.momentum.data_mut();
        for i in 0..value.len() {
            let g = grad.map_or(0.0, |g| g[i]) + cfg.weight_decay * value[i];
            sq[i] = a * sq[i] + (1.0 - a) * g * g;
            buf[i] = cfg.momentum * buf[i] + g / (sq[i].sqrt() + cfg.eps);
            value[i] -= cfg.learning_rate * buf[i];
        }
    }
    Ok(())
}
