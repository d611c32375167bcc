use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{LossKind, Network};
use crate::datagen::{top_d_support, Corpus};
use crate::error::{Error, Result};
use crate::model::Matrix;
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_drop_factor: f64,
    pub drop_period_epochs: usize,
    pub total_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn reference() -> Self {
        Self {
            batch_size: 250,
            initial_lr: 0.01,
            lr_drop_factor: 0.1,
            drop_period_epochs: 50,
            total_epochs: 150,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_epochs(mut self, total: usize, drop_period: usize) -> Self {
        self.total_epochs = total;
        self.drop_period_epochs = drop_period;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.batch_size > 0
            && self.initial_lr > 0.0
            && self.drop_period_epochs > 0
            && self.total_epochs > 0
            && self.momentum >= 0.0
            && self.weight_decay >= 0.0;
        if !positive {
            return Err(Error::InvalidConfig(format!("training hyperparameters must be positive: {self:?}")));
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lr_drop_factor must lie in (0, 1), got {}",
                self.lr_drop_factor
            )));
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.initial_lr * self.lr_drop_factor.powi((epoch / self.drop_period_epochs) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
    /// Fraction of training samples whose top-|S| outputs matched the
    /// support exactly, measured on the fly in train mode.
    pub train_accuracy: f64,
    pub batch_losses: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingTrace {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }
}

fn batch_hits(kind: LossKind, logits: &Matrix, targets: &Matrix) -> usize {
    let mut hits = 0;
    for (l, t) in logits.column_iter().zip(targets.column_iter()) {
        let truth: Vec<usize> = (0..t.len()).filter(|&i| t[i] != 0.0).collect();
        let scores: Vec<f64> = match kind {
            LossKind::Multilabel => l.iter().copied().collect(),
            LossKind::Quadratic => l.iter().map(|v| v.abs()).collect(),
        };
        if top_d_support(&scores, truth.len()) == truth {
            hits += 1;
        }
    }
    hits
}

fn gather(source: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(source.nrows(), idx.len(), |i, j| source[(i, idx[j])])
}

/// Mini-batch SGD with momentum `v ← μv − lr(g + λw)`, `w ← w + v`.
/// The objective differentiated is the per-sample loss summed over output
/// coordinates and averaged over the batch, i.e. `output_dim · loss`.
/// Trailing batches with fewer than two samples are skipped.
pub fn train(net: &mut Network, inputs: &Matrix, targets: &Matrix, config: &TrainConfig) -> Result<TrainingTrace> {
    config.validate()?;
    let count = inputs.ncols();
    if count == 0 {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    if targets.ncols() != count || targets.nrows() != net.config().output_dim {
        return Err(Error::ShapeMismatch(format!(
            "{count} inputs but targets are {:?}",
            targets.shape()
        )));
    }
    let kind = net.config().loss;
    let scale = net.config().output_dim as f64;
    let mut velocity: Vec<Vec<f64>> = net.parameters().iter().map(|(_, p)| vec![0.0; p.len()]).collect();
    let shuffle_seed = seeding::derive(config.seed, "train-shuffle");
    let mut order: Vec<usize> = (0..count).collect();
    let mut trace = TrainingTrace::default();

    for epoch in 0..config.total_epochs {
        let lr = config.learning_rate(epoch);
        order.sort_unstable();
        order.shuffle(&mut seeding::stream(shuffle_seed, epoch as u64));
        let mut batch_losses = Vec::new();
        let mut seen = 0usize;
        let mut hits = 0usize;
        let mut weighted_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 && count >= 2 {
                continue;
            }
            let xb = gather(inputs, chunk);
            let tb = gather(targets, chunk);
            let cache = net.forward_cached(&xb, super::Mode::Train)?;
            let value = super::loss(kind, &cache.logits, &tb)?;
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, loss: value });
            }
            hits += batch_hits(kind, &cache.logits, &tb);
            let grads = net.backward(&cache, &tb);
            let moments: Vec<_> = cache.stages.iter().map(|c| (c.mean.clone(), c.var.clone())).collect();
            for ((param, grad), vel) in net.parameters_mut().into_iter().zip(&grads.0).zip(&mut velocity) {
                for ((w, g), v) in param.iter_mut().zip(grad).zip(vel.iter_mut()) {
                    *v = config.momentum * *v - lr * (scale * g + config.weight_decay * *w);
                    *w += *v;
                }
            }
            net.update_running_moments(&moments, chunk.len());
            batch_losses.push(value);
            weighted_loss += value * chunk.len() as f64;
            seen += chunk.len();
        }
        let mean_loss = weighted_loss / seen.max(1) as f64;
        log::debug!("epoch {epoch}: lr {lr:.2e}, loss {mean_loss:.5}, train acc {:.4}", hits as f64 / seen.max(1) as f64);
        trace.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            mean_loss,
            train_accuracy: hits as f64 / seen.max(1) as f64,
            batch_losses,
        });
    }
    Ok(trace)
}

/// Targets for a corpus under the given loss: support labels for the
/// multi-label head, coefficient vectors for the quadratic one.
pub fn corpus_targets(corpus: &Corpus, kind: LossKind) -> Matrix {
    match kind {
        LossKind::Multilabel => corpus.label_matrix(),
        LossKind::Quadratic => corpus.signal_matrix(),
    }
}

pub fn train_on_corpus(net: &mut Network, corpus: &Corpus, config: &TrainConfig) -> Result<TrainingTrace> {
    let targets = corpus_targets(corpus, net.config().loss);
    train(net, &corpus.observations(), &targets, config)
}
