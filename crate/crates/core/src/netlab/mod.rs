//! Fully connected residual support classifier with hand-written
//! backpropagation.
//!
//! Batches are matrices with one sample per column. The network is an input
//! stage `n → h`, hidden stages `h → h` grouped into residual blocks of two,
//! and a head `h → m` whose logits are squashed per coordinate.

mod checkpoint;
mod gradcheck;
mod train;

pub use checkpoint::{load_checkpoint, network_hash, parse_checkpoint, save_checkpoint, to_checkpoint_string};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use train::{corpus_targets, train, train_on_corpus, EpochRecord, TrainConfig, TrainingTrace};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Matrix, Vector};
use crate::seeding;

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the previous running moment in each update.
pub const BN_DECAY: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Piecewise-linear surrogate of hard thresholding at level one.
    Helu { sigma: f64 },
    Identity,
}

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => x.max(0.0),
            Activation::Helu { sigma } => {
                let a = x.abs();
                if a >= 1.0 {
                    x
                } else if a <= 1.0 - sigma {
                    0.0
                } else if x > 0.0 {
                    (x - 1.0 + sigma) / sigma
                } else {
                    (x + 1.0 - sigma) / sigma
                }
            }
            Activation::Identity => x,
        }
    }

    pub fn slope(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Helu { sigma } => {
                let a = x.abs();
                if a >= 1.0 {
                    1.0
                } else if a <= 1.0 - sigma {
                    0.0
                } else {
                    1.0 / sigma
                }
            }
            Activation::Identity => 1.0,
        }
    }

    /// Index of the linear piece containing `x`.
    pub fn region(&self, x: f64) -> u8 {
        match *self {
            Activation::Relu => u8::from(x > 0.0),
            Activation::Helu { sigma } => {
                let a = x.abs();
                let piece = if a >= 1.0 {
                    2
                } else if a <= 1.0 - sigma {
                    0
                } else {
                    1
                };
                if x < 0.0 {
                    piece + 3
                } else {
                    piece
                }
            }
            Activation::Identity => 0,
        }
    }

    /// Distance from `x` to the nearest breakpoint.
    pub fn kink_distance(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => x.abs(),
            Activation::Helu { sigma } => {
                let a = x.abs();
                (a - 1.0).abs().min((a - (1.0 - sigma)).abs())
            }
            Activation::Identity => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean per-coordinate binary cross-entropy against support labels.
    Multilabel,
    /// Mean squared error between head logits and the coefficients `x*`.
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    /// Fully connected stages including the head.
    pub depth: usize,
    pub hidden_width: usize,
    pub residual: bool,
    pub activation: Activation,
    pub loss: LossKind,
    pub batch_norm: bool,
}

impl NetworkConfig {
    /// Residual, batch-normalized ReLU classifier with width `m`.
    pub fn classifier(n: usize, m: usize, depth: usize) -> Self {
        Self {
            input_dim: n,
            output_dim: m,
            depth,
            hidden_width: m,
            residual: true,
            activation: Activation::Relu,
            loss: LossKind::Multilabel,
            batch_norm: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::InvalidConfig("depth must be at least 2".into()));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_width == 0 {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        if let Activation::Helu { sigma } = self.activation {
            if !(sigma > 0.0 && sigma < 1.0) {
                return Err(Error::InvalidConfig(format!("helu needs 0 < sigma < 1, got {sigma}")));
            }
        }
        Ok(())
    }

    /// Hidden stages (input stage included), excluding the head.
    pub fn stage_count(&self) -> usize {
        self.depth - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub w: Matrix,
    pub b: Vector,
    pub gamma: Vector,
    pub beta: Vector,
    pub running_mean: Vector,
    pub running_var: Vector,
}

impl Stage {
    fn he(rng: &mut seeding::Rng, fan_in: usize, width: usize) -> Self {
        Self {
            w: seeding::gaussian_matrix(rng, width, fan_in, (2.0 / fan_in as f64).sqrt()),
            b: Vector::zeros(width),
            gamma: Vector::from_element(width, 1.0),
            beta: Vector::zeros(width),
            running_mean: Vector::zeros(width),
            running_var: Vector::from_element(width, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running moments in batch norm.
    Eval,
}

/// Per-coordinate probabilities that a dictionary column is active.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap(Vector);

impl ProbabilityMap {
    pub fn new(p: Vector) -> Result<Self> {
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig("probabilities must lie in [0, 1]".into()));
        }
        Ok(Self(p))
    }

    pub fn values(&self) -> &Vector {
        &self.0
    }

    pub fn into_vector(self) -> Vector {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Unit {
    Plain(usize),
    Block(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    stages: Vec<Stage>,
    head_w: Matrix,
    head_b: Vector,
}

/// Everything the backward pass needs from one stage.
#[derive(Debug, Clone)]
pub(crate) struct StageCache {
    input: Matrix,
    /// Normalized pre-activations (plain pre-activations without batch norm).
    xhat: Matrix,
    inv_std: Vector,
    mean: Vector,
    var: Vector,
    /// Activation inputs.
    u: Matrix,
}

#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    stages: Vec<StageCache>,
    head_input: Matrix,
    logits: Matrix,
}

/// Gradients laid out like [`Network::parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

/// `softplus(l) − s·l`, the cross-entropy of `σ(l)` against `s`.
fn bce_from_logit(l: f64, s: f64) -> f64 {
    l.max(0.0) + (-l.abs()).exp().ln_1p() - s * l
}

pub fn sigmoid(l: f64) -> f64 {
    if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

fn check_targets(logits: &Matrix, targets: &Matrix) -> Result<()> {
    if logits.shape() != targets.shape() {
        return Err(Error::ShapeMismatch(format!(
            "outputs are {:?}, targets are {:?}",
            logits.shape(),
            targets.shape()
        )));
    }
    Ok(())
}

/// Mean loss over coordinates and batch.
pub fn loss(kind: LossKind, logits: &Matrix, targets: &Matrix) -> Result<f64> {
    check_targets(logits, targets)?;
    let count = logits.len().max(1) as f64;
    let total: f64 = match kind {
        LossKind::Multilabel => logits.iter().zip(targets.iter()).map(|(&l, &s)| bce_from_logit(l, s)).sum(),
        LossKind::Quadratic => logits.iter().zip(targets.iter()).map(|(&a, &t)| (a - t) * (a - t)).sum(),
    };
    Ok(total / count)
}

/// Mean binary cross-entropy of probabilities, clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce_from_probabilities(p: &Matrix, targets: &Matrix) -> Result<f64> {
    check_targets(p, targets)?;
    let total: f64 = p
        .iter()
        .zip(targets.iter())
        .map(|(&p, &s)| {
            let p = p.clamp(1e-7, 1.0 - 1e-7);
            -(s * p.ln() + (1.0 - s) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / p.len().max(1) as f64)
}

fn loss_gradient(kind: LossKind, logits: &Matrix, targets: &Matrix) -> Matrix {
    let scale = 1.0 / logits.len().max(1) as f64;
    logits.zip_map(targets, |l, t| match kind {
        LossKind::Multilabel => (sigmoid(l) - t) * scale,
        LossKind::Quadratic => 2.0 * (l - t) * scale,
    })
}

fn row_means(a: &Matrix) -> Vector {
    a.column_sum() / a.ncols() as f64
}

impl Network {
    /// He initialization: weights `N(0, 2/fan_in)`, zero biases, unit
    /// batch-norm scales.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeding::rng(seeding::derive(seed, "network-init"));
        let h = config.hidden_width;
        let mut stages = Vec::with_capacity(config.stage_count());
        stages.push(Stage::he(&mut rng, config.input_dim, h));
        for _ in 1..config.stage_count() {
            stages.push(Stage::he(&mut rng, h, h));
        }
        let head_w = seeding::gaussian_matrix(&mut rng, config.output_dim, h, (2.0 / h as f64).sqrt());
        Ok(Self {
            config,
            stages,
            head_w,
            head_b: Vector::zeros(config.output_dim),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn stages_mut(&mut self) -> &mut [Stage] {
        &mut self.stages
    }

    pub fn head(&self) -> (&Matrix, &Vector) {
        (&self.head_w, &self.head_b)
    }

    pub(crate) fn from_parts(config: NetworkConfig, stages: Vec<Stage>, head_w: Matrix, head_b: Vector) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_width;
        let ok = stages.len() == config.stage_count()
            && stages.iter().enumerate().all(|(i, s)| {
                let fan_in = if i == 0 { config.input_dim } else { h };
                s.w.shape() == (h, fan_in)
                    && [&s.b, &s.gamma, &s.beta, &s.running_mean, &s.running_var]
                        .iter()
                        .all(|v| v.len() == h)
                    && s.running_mean.iter().chain(s.running_var.iter()).all(|v| v.is_finite())
            })
            && head_w.shape() == (config.output_dim, h)
            && head_b.len() == config.output_dim;
        if !ok {
            return Err(Error::ShapeMismatch("parameters do not match the network config".into()));
        }
        Ok(Self {
            config,
            stages,
            head_w,
            head_b,
        })
    }

    fn units(&self) -> Vec<Unit> {
        let count = self.stages.len();
        let mut units = vec![Unit::Plain(0)];
        let mut i = 1;
        while i < count {
            if self.config.residual && i + 1 < count {
                units.push(Unit::Block(i, i + 1));
                i += 2;
            } else {
                units.push(Unit::Plain(i));
                i += 1;
            }
        }
        units
    }

    /// Named parameter tensors in a fixed order; batch-norm scales and
    /// shifts appear only when batch norm is on.
    pub fn parameters(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            out.push((format!("stage{i}.w"), s.w.as_slice()));
            out.push((format!("stage{i}.b"), s.b.as_slice()));
            if self.config.batch_norm {
                out.push((format!("stage{i}.gamma"), s.gamma.as_slice()));
                out.push((format!("stage{i}.beta"), s.beta.as_slice()));
            }
        }
        out.push(("head.w".into(), self.head_w.as_slice()));
        out.push(("head.b".into(), self.head_b.as_slice()));
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let bn = self.config.batch_norm;
        let mut out: Vec<&mut [f64]> = Vec::new();
        for s in &mut self.stages {
            out.push(s.w.as_mut_slice());
            out.push(s.b.as_mut_slice());
            if bn {
                out.push(s.gamma.as_mut_slice());
                out.push(s.beta.as_mut_slice());
            }
        }
        out.push(self.head_w.as_mut_slice());
        out.push(self.head_b.as_mut_slice());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, p)| p.len()).sum()
    }

    fn stage_forward(&self, idx: usize, input: &Matrix, mode: Mode) -> (Matrix, StageCache) {
        let stage = &self.stages[idx];
        let act = self.config.activation;
        let mut z = &stage.w * input;
        let batch = z.ncols();
        for mut col in z.column_iter_mut() {
            col += &stage.b;
        }
        let width = z.nrows();
        let (xhat, u, mean, var, inv_std) = if self.config.batch_norm {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = row_means(&z);
                    let mut var = Vector::zeros(width);
                    for j in 0..batch {
                        for i in 0..width {
                            let d = z[(i, j)] - mean[i];
                            var[i] += d * d;
                        }
                    }
                    var /= batch as f64;
                    (mean, var)
                }
                Mode::Eval => (stage.running_mean.clone(), stage.running_var.clone()),
            };
            let inv_std = var.map(|v| 1.0 / (v + BN_EPSILON).sqrt());
            let mut xhat = z;
            let mut u = Matrix::zeros(width, batch);
            for j in 0..batch {
                for i in 0..width {
                    let x = (xhat[(i, j)] - mean[i]) * inv_std[i];
                    xhat[(i, j)] = x;
                    u[(i, j)] = stage.gamma[i] * x + stage.beta[i];
                }
            }
            (xhat, u, mean, var, inv_std)
        } else {
            let u = z.clone();
            (z, u, Vector::zeros(0), Vector::zeros(0), Vector::zeros(0))
        };
        let out = u.map(|v| act.apply(v));
        let cache = StageCache {
            input: input.clone(),
            xhat,
            inv_std,
            mean,
            var,
            u,
        };
        (out, cache)
    }

    pub(crate) fn forward_cached(&self, x: &Matrix, mode: Mode) -> Result<ForwardCache> {
        if x.nrows() != self.config.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input has {} rows, network expects {}",
                x.nrows(),
                self.config.input_dim
            )));
        }
        let mut caches: Vec<Option<StageCache>> = vec![None; self.stages.len()];
        let mut a = x.clone();
        for unit in self.units() {
            match unit {
                Unit::Plain(i) => {
                    let (out, cache) = self.stage_forward(i, &a, mode);
                    caches[i] = Some(cache);
                    a = out;
                }
                Unit::Block(i, j) => {
                    let (h1, c1) = self.stage_forward(i, &a, mode);
                    let (h2, c2) = self.stage_forward(j, &h1, mode);
                    caches[i] = Some(c1);
                    caches[j] = Some(c2);
                    a += h2;
                }
            }
        }
        let mut logits = &self.head_w * &a;
        for mut col in logits.column_iter_mut() {
            col += &self.head_b;
        }
        Ok(ForwardCache {
            stages: caches.into_iter().map(|c| c.expect("every stage visited")).collect(),
            head_input: a,
            logits,
        })
    }

    /// Head outputs before squashing, one column per sample.
    pub fn logits(&self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        Ok(self.forward_cached(x, mode)?.logits)
    }

    /// Per-coordinate probabilities, one column per sample.
    pub fn forward(&self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        Ok(self.logits(x, mode)?.map(sigmoid))
    }

    /// Eval-mode probabilities for one observation.
    pub fn predict(&self, y: &Vector) -> Result<ProbabilityMap> {
        let x = Matrix::from_column_slice(y.len(), 1, y.as_slice());
        ProbabilityMap::new(self.forward(&x, Mode::Eval)?.column(0).into_owned())
    }

    /// Activations after the input stage and after each residual unit.
    pub fn unit_outputs(&self, x: &Matrix, mode: Mode) -> Result<Vec<Matrix>> {
        let cache = self.forward_cached(x, mode)?;
        let mut outs = Vec::new();
        let mut a = x.clone();
        for unit in self.units() {
            match unit {
                Unit::Plain(i) => a = cache.stages[i].u.map(|v| self.config.activation.apply(v)),
                Unit::Block(_, j) => a += cache.stages[j].u.map(|v| self.config.activation.apply(v)),
            }
            outs.push(a.clone());
        }
        Ok(outs)
    }

    /// Train-mode loss and gradients on one batch. Running moments are not
    /// touched; see [`Network::update_running_moments`].
    pub fn loss_and_gradients(&self, x: &Matrix, targets: &Matrix) -> Result<(f64, Gradients, Vec<(Vector, Vector)>)> {
        let cache = self.forward_cached(x, Mode::Train)?;
        let value = loss(self.config.loss, &cache.logits, targets)?;
        let grads = self.backward(&cache, targets);
        let moments = cache.stages.iter().map(|c| (c.mean.clone(), c.var.clone())).collect();
        Ok((value, grads, moments))
    }

    fn stage_backward(&self, idx: usize, cache: &StageCache, d_out: &Matrix, grads: &mut StageGrads) -> Matrix {
        let stage = &self.stages[idx];
        let act = self.config.activation;
        let du = d_out.zip_map(&cache.u, |g, u| g * act.slope(u));
        let (width, batch) = du.shape();
        let dz = if self.config.batch_norm {
            let mut dgamma = Vector::zeros(width);
            let mut dbeta = Vector::zeros(width);
            for j in 0..batch {
                for i in 0..width {
                    dgamma[i] += du[(i, j)] * cache.xhat[(i, j)];
                    dbeta[i] += du[(i, j)];
                }
            }
            // dxhat = du·γ; dz = inv_std/B · (B·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
            let bf = batch as f64;
            let mut dz = Matrix::zeros(width, batch);
            for i in 0..width {
                let g = stage.gamma[i];
                let sum_dx = dbeta[i] * g;
                let sum_dx_x = dgamma[i] * g;
                let scale = cache.inv_std[i] / bf;
                for j in 0..batch {
                    let dxhat = du[(i, j)] * g;
                    dz[(i, j)] = scale * (bf * dxhat - sum_dx - cache.xhat[(i, j)] * sum_dx_x);
                }
            }
            grads.gamma = Some(dgamma);
            grads.beta = Some(dbeta);
            dz
        } else {
            du
        };
        grads.w = &dz * cache.input.transpose();
        grads.b = dz.column_sum();
        stage.w.transpose() * dz
    }

    fn backward(&self, cache: &ForwardCache, targets: &Matrix) -> Gradients {
        let d_logits = loss_gradient(self.config.loss, &cache.logits, targets);
        let head_w = &d_logits * cache.head_input.transpose();
        let head_b = d_logits.column_sum();
        let mut d = self.head_w.transpose() * d_logits;
        let mut stage_grads: Vec<StageGrads> = vec![StageGrads::default(); self.stages.len()];
        for unit in self.units().into_iter().rev() {
            match unit {
                Unit::Plain(i) => {
                    d = self.stage_backward(i, &cache.stages[i], &d, &mut stage_grads[i]);
                }
                Unit::Block(i, j) => {
                    let d_h1 = self.stage_backward(j, &cache.stages[j], &d, &mut stage_grads[j]);
                    let d_a = self.stage_backward(i, &cache.stages[i], &d_h1, &mut stage_grads[i]);
                    d += d_a;
                }
            }
        }
        let mut out = Vec::new();
        for g in stage_grads {
            out.push(g.w.as_slice().to_vec());
            out.push(g.b.as_slice().to_vec());
            if self.config.batch_norm {
                out.push(g.gamma.expect("batch norm gradients").as_slice().to_vec());
                out.push(g.beta.expect("batch norm gradients").as_slice().to_vec());
            }
        }
        out.push(head_w.as_slice().to_vec());
        out.push(head_b.as_slice().to_vec());
        Gradients(out)
    }

    /// Folds batch moments into the running moments; the variance is
    /// stored unbiased.
    pub fn update_running_moments(&mut self, moments: &[(Vector, Vector)], batch: usize) {
        if !self.config.batch_norm || batch < 2 {
            return;
        }
        let correction = batch as f64 / (batch as f64 - 1.0);
        for (stage, (mean, var)) in self.stages.iter_mut().zip(moments) {
            stage.running_mean = &stage.running_mean * BN_DECAY + mean * (1.0 - BN_DECAY);
            stage.running_var = &stage.running_var * BN_DECAY + var * ((1.0 - BN_DECAY) * correction);
        }
    }

    /// Region of every activation input in train mode, for detecting kink
    /// crossings.
    pub(crate) fn activation_pattern(&self, x: &Matrix) -> Result<Vec<u8>> {
        let cache = self.forward_cached(x, Mode::Train)?;
        let act = self.config.activation;
        Ok(cache
            .stages
            .iter()
            .flat_map(|c| c.u.iter().map(move |&v| act.region(v)))
            .collect())
    }

    /// Smallest distance of any train-mode activation input to a kink.
    pub fn min_kink_distance(&self, x: &Matrix) -> Result<f64> {
        let cache = self.forward_cached(x, Mode::Train)?;
        let act = self.config.activation;
        Ok(cache
            .stages
            .iter()
            .flat_map(|c| c.u.iter().map(move |&v| act.kink_distance(v)))
            .fold(f64::INFINITY, f64::min))
    }
}

#[derive(Debug, Clone)]
struct StageGrads {
    w: Matrix,
    b: Vector,
    gamma: Option<Vector>,
    beta: Option<Vector>,
}

impl Default for StageGrads {
    fn default() -> Self {
        Self {
            w: Matrix::zeros(0, 0),
            b: Vector::zeros(0),
            gamma: None,
            beta: None,
        }
    }
}
