use serde::{Deserialize, Serialize};

use super::{predict, Model, ModelInput};
use crate::rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Uniform on `±sqrt(6 / fan_in)`.
    #[default]
    HeUniform,
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub init: InitScheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            init: InitScheme::HeUniform,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size and epochs must be >= 1"));
        }
        Ok(())
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Optimizer moments, aligned with [`ModelParams::to_flat`](super::ModelParams::to_flat).
#[derive(Clone, Debug, Default)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    /// (epoch, batch) of the current step, for diagnostics.
    pub position: (usize, usize),
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// One optimizer update on `batch`; returns the batch loss before the
    /// update.
    pub fn train_step(
        &mut self,
        model: &mut Model,
        inputs: &[ModelInput],
        labels: &[usize],
        config: &TrainConfig,
    ) -> Result<f64> {
        Ok(self.step(model, inputs, labels, config)?.0)
    }

    fn step(
        &mut self,
        model: &mut Model,
        inputs: &[ModelInput],
        labels: &[usize],
        config: &TrainConfig,
    ) -> Result<(f64, super::Tensor)> {
        let (loss, grads, probs) = model.loss_grad_probs(inputs, labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: self.position.0,
                batch: self.position.1,
            });
        }
        let g = grads.to_flat();
        let mut p = model.params.to_flat();
        let lr = config.learning_rate;
        match config.optimizer {
            Optimizer::Sgd => {
                for (p, g) in p.iter_mut().zip(&g) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam => {
                if self.m.len() != p.len() {
                    self.m = vec![0.0; p.len()];
                    self.v = vec![0.0; p.len()];
                    self.t = 0;
                }
                self.t += 1;
                let c1 = 1.0 - BETA1.powi(self.t as i32);
                let c2 = 1.0 - BETA2.powi(self.t as i32);
                for i in 0..p.len() {
                    self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g[i];
                    self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g[i] * g[i];
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    p[i] -= lr * mh / (vh.sqrt() + EPS);
                }
            }
        }
        if lr != 0.0 {
            model.params.set_flat(&p)?;
        }
        Ok((loss, probs))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    /// Training accuracy measured during the epoch (before each update).
    pub accuracy: f64,
}

/// Mini-batch training with a fresh shuffle per epoch, seeded from
/// `config.seed`.
pub fn fit(
    model: &mut Model,
    inputs: &[ModelInput],
    labels: &[usize],
    config: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    config.validate()?;
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} inputs vs {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    let mut state = OptimizerState::new();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut stream = rng::stream(rng::derive_seed(&[config.seed, epoch as u64]));
        rng::shuffle(&mut stream, &mut order);
        let (mut loss_sum, mut batches, mut correct) = (0.0, 0usize, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            state.position = (epoch, b);
            let xs: Vec<ModelInput> = chunk.iter().map(|&i| inputs[i].clone()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, probs) = state.step(model, &xs, &ys, config)?;
            let m = model.spec.class_count;
            correct += ys
                .iter()
                .enumerate()
                .filter(|(i, &y)| predict(&probs.data[i * m..(i + 1) * m]) == y)
                .count();
            loss_sum += loss;
            batches += 1;
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / batches as f64,
            accuracy: correct as f64 / inputs.len() as f64,
        };
        log::debug!("epoch {epoch}: loss {:.5} acc {:.4}", stats.loss, stats.accuracy);
        history.push(stats);
    }
    Ok(history)
}
