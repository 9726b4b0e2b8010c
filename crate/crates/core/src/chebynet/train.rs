use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState, LrSchedule};
use super::chebyshev::ChebyOperator;
use super::layers::Mode;
use super::model::{GrGcn, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 16,
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

/// Model plus optimizer state; epochs are 0-based.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: GrGcn,
    pub adam: AdamState,
    pub schedule: LrSchedule,
    pub epoch: usize,
}

impl TrainState {
    pub fn new(model: GrGcn, schedule: LrSchedule, adam: AdamConfig) -> Self {
        let adam = AdamState::new(model.params.tensors(), adam);
        Self { model, adam, schedule, epoch: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.schedule.lr_at(self.epoch)
    }

    /// One optimizer step on a batch. Returns the batch loss before the
    /// update and the number of correct train-mode predictions.
    pub fn step(&mut self, op: &ChebyOperator, batch: &[&Sample], rng: &mut ChaCha8Rng) -> Result<(f64, usize)> {
        let labels = labels_of(batch)?;
        let trace = self.model.forward(op, batch, Mode::Train, rng)?;
        let loss = GrGcn::loss(&trace, &labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { context: format!("training loss at epoch {}", self.epoch) });
        }
        let correct = trace
            .probabilities()
            .iter()
            .zip(&labels)
            .filter(|(p, &l)| argmax(p) == l)
            .count();
        let grads = self.model.backward(op, &trace, &labels)?;
        let lr = self.lr();
        let grad_refs = grads.tensors();
        self.adam.step(&mut self.model.params.tensors_mut(), &grad_refs, lr)?;
        self.model.update_running_stats(&trace);
        Ok((loss, correct))
    }
}

pub fn labels_of(batch: &[&Sample]) -> Result<Vec<usize>> {
    batch
        .iter()
        .map(|s| s.label.ok_or_else(|| Error::InvalidData("training sample without label".into())))
        .collect()
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Seeded mini-batch training. Each epoch reshuffles the samples with a
/// stream derived from `config.seed`; `on_epoch` sees each epoch's stats.
pub fn train(
    model: GrGcn,
    op: &ChebyOperator,
    samples: &[Sample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(GrGcn, Vec<EpochStats>)> {
    if samples.is_empty() {
        return Err(Error::InvalidData("no training samples".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut state = TrainState::new(model, config.schedule, config.adam);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        state.epoch = epoch;
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
            let (loss, hits) = state.step(op, &batch, &mut dropout_rng)?;
            loss_sum += loss * batch.len() as f64;
            correct += hits;
        }
        let stats = EpochStats {
            epoch,
            lr: state.lr(),
            mean_loss: loss_sum / samples.len() as f64,
            train_accuracy: correct as f64 / samples.len() as f64,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok((state.model, history))
}

/// Eval-mode argmax predictions.
pub fn predict_all(model: &GrGcn, op: &ChebyOperator, samples: &[Sample]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| model.predict(op, s).map(|p| argmax(&p)))
        .collect()
}
