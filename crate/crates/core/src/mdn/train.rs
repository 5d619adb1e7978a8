//! Mini-batch Adam training with seeded initialization and shuffling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{accumulate_gradient, NetworkConfig, NetworkWeights, TrainingSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch_size: 64,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: NetworkConfig,
    pub weights: NetworkWeights,
    /// Mean training loss of each epoch, accumulated over its mini-batches.
    pub loss_trace: Vec<f64>,
    pub seed: u64,
    pub epochs: usize,
    pub options: TrainOptions,
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize, opts: &TrainOptions) -> Self {
        Self {
            lr: opts.learning_rate,
            beta1: opts.beta1,
            beta2: opts.beta2,
            eps: opts.adam_epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Trains from a seeded initialization. Pose targets are canonicalized to
/// `‖r‖ ≤ π` first. The returned weights are rounded to `f32` so they equal
/// what a saved weight file reloads to.
pub fn train(dataset: &[TrainingSample], cfg: &NetworkConfig, opts: &TrainOptions, seed: u64) -> Result<TrainedModel> {
    train_with_progress(dataset, cfg, opts, seed, |_, _| {})
}

pub fn train_with_progress(
    dataset: &[TrainingSample],
    cfg: &NetworkConfig,
    opts: &TrainOptions,
    seed: u64,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainedModel> {
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    if opts.batch_size == 0 || !(opts.learning_rate > 0.0) {
        return Err(Error::invalid("batch size and learning rate must be positive"));
    }
    cfg.validate()?;
    let samples: Vec<TrainingSample> = dataset
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.target.pose = s.target.pose.canonical();
            s
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = NetworkWeights::init(cfg, &mut rng)?;
    let mut adam = Adam::new(weights.len(), opts);
    let mut grad = vec![0.0; weights.len()];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut loss_trace = Vec::with_capacity(opts.epochs);
    let mut batch = Vec::with_capacity(opts.batch_size);

    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(opts.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| samples[i].clone()));
            let loss = accumulate_gradient(&weights, &batch, cfg, &mut grad)?;
            epoch_loss += loss * idx.len() as f64;
            adam.step(weights.params_mut(), &grad);
        }
        if weights.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure(format!("weights diverged in epoch {}", epoch + 1)));
        }
        let mean = epoch_loss / samples.len() as f64;
        loss_trace.push(mean);
        on_epoch(epoch + 1, mean);
    }
    weights.round_to_f32();
    Ok(TrainedModel {
        config: cfg.clone(),
        weights,
        loss_trace,
        seed,
        epochs: opts.epochs,
        options: opts.clone(),
    })
}
