//! Softmax cross-entropy, SGD with momentum, the epoch loop and the
//! divergence detector.
//!
//! A run is declared non-converged when a loss turns NaN/Inf, or when the
//! training loss stays above `0.98 * ln(K)` (chance level for `K` classes)
//! for five consecutive epochs.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::activations::softmax_inplace;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{backward, forward, predict, Architecture, Parameters};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const PLATEAU_WINDOW: usize = 5;
pub const PLATEAU_FRACTION: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 64,
            epochs: 120,
            seed: 0,
        }
    }
}

impl Hyperparams {
    /// A zero learning rate is accepted: it freezes the parameters.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidInput(format!(
                "momentum {} must lie in [0, 1)",
                self.momentum
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidInput(
                "batch size and epochs must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DivergenceReason {
    #[serde(rename = "NaN_loss")]
    NanLoss,
    #[serde(rename = "plateau_above_threshold")]
    PlateauAboveThreshold,
    #[serde(rename = "completed")]
    Completed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivergenceStatus {
    pub converged: bool,
    pub reason: DivergenceReason,
}

impl DivergenceStatus {
    pub fn completed() -> Self {
        Self {
            converged: true,
            reason: DivergenceReason::Completed,
        }
    }

    fn diverged(reason: DivergenceReason) -> Self {
        Self {
            converged: false,
            reason,
        }
    }
}

/// Mean softmax cross-entropy of `[B, K]` logits and its gradient
/// `(softmax - onehot) / B`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let &[b, k] = logits.shape() else {
        return Err(Error::mismatch("cross_entropy", "[B, K] logits", logits.shape()));
    };
    if labels.len() != b {
        return Err(Error::mismatch("cross_entropy", b, labels.len()));
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::LabelRange {
            label,
            num_classes: k,
            index,
        });
    }
    let inv_b = T::one() / T::from_count(b);
    let mut grad = logits.clone();
    let mut loss = T::zero();
    for (row, (g, &label)) in logits
        .data()
        .chunks_exact(k)
        .zip(grad.data_mut().chunks_exact_mut(k).zip(labels))
    {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum_exp = row.iter().fold(T::zero(), |s, &z| s + (z - max).exp());
        loss += max + sum_exp.ln() - row[label];
        softmax_inplace(g);
        g[label] -= T::one();
        for v in g.iter_mut() {
            *v *= inv_b;
        }
    }
    Ok((loss * inv_b, grad))
}

/// `v <- momentum * v - lr * g; w <- w + v` over every tensor.
///
/// A non-finite gradient aborts the step before anything is modified.
pub fn sgd_step<T: Scalar>(
    params: &mut Parameters<T>,
    grads: &Parameters<T>,
    velocity: &mut Parameters<T>,
    hyper: &Hyperparams,
) -> Result<()> {
    if params.layers.len() != grads.layers.len() || params.layers.len() != velocity.layers.len() {
        return Err(Error::mismatch("sgd_step", params.layers.len(), grads.layers.len()));
    }
    for (p, g) in params.tensors().zip(grads.tensors()) {
        if p.shape() != g.shape() {
            return Err(Error::mismatch("sgd_step", p.shape(), g.shape()));
        }
    }
    if !grads.all_finite() {
        return Err(Error::Divergence("non-finite gradient".into()));
    }
    let lr = T::cast(hyper.learning_rate);
    let mu = T::cast(hyper.momentum);
    for ((w, g), v) in params
        .tensors_mut()
        .zip(grads.tensors())
        .zip(velocity.tensors_mut())
    {
        for ((wi, &gi), vi) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = mu * *vi - lr * gi;
            *wi += *vi;
        }
    }
    Ok(())
}

/// Optimizer state carried across steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T: Scalar = f64> {
    pub velocity: Parameters<T>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(arch: &Architecture) -> Self {
        Self {
            velocity: Parameters::zeros(arch),
        }
    }
}

/// One forward/backward/update on a batch; returns the batch loss measured
/// before the update. A non-finite loss or gradient leaves the parameters
/// untouched and yields [`Error::Divergence`].
pub fn train_step<T: Scalar>(
    arch: &Architecture,
    params: &mut Parameters<T>,
    state: &mut TrainState<T>,
    images: &Tensor<T>,
    labels: &[usize],
    hyper: &Hyperparams,
) -> Result<T> {
    let (logits, cache) = forward(arch, params, images)?;
    let (loss, grad) = cross_entropy(&logits, labels)?;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("batch loss {loss}")));
    }
    let grads = backward(arch, params, &cache, &grad)?;
    sgd_step(params, &grads, &mut state.velocity, hyper)?;
    Ok(loss)
}

/// Mean loss and accuracy over `dataset`, evaluated in fixed-order chunks.
pub fn evaluate<T: Scalar>(
    arch: &Architecture,
    params: &Parameters<T>,
    dataset: &LabeledDataset<T>,
    batch_size: usize,
) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let n = dataset.len();
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, y) = dataset.gather(chunk)?;
        let logits = predict(arch, params, &x)?;
        let (loss, _) = cross_entropy(&logits, &y)?;
        loss_sum += loss.to_f64_lossy() * chunk.len() as f64;
        let k = arch.num_classes;
        for (row, &label) in logits.data().chunks_exact(k).zip(&y) {
            // first maximum wins ties
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            correct += usize::from(best == label);
        }
    }
    Ok((loss_sum / n as f64, correct as f64 / n as f64))
}

/// One seeded, shuffled pass over `train`, then evaluation on `test`.
///
/// If a step diverges the epoch stops there with a NaN training loss; the
/// parameters keep their last finite values and are still evaluated.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch<T: Scalar>(
    arch: &Architecture,
    params: &mut Parameters<T>,
    state: &mut TrainState<T>,
    train: &LabeledDataset<T>,
    test: &LabeledDataset<T>,
    hyper: &Hyperparams,
    epoch_index: usize,
) -> Result<EpochMetrics> {
    hyper.validate()?;
    let start = Instant::now();
    let mut loss_sum = 0.0;
    let mut diverged = false;
    for batch in train.batches(hyper.batch_size, hyper.seed, epoch_index)? {
        let (x, y) = batch?;
        match train_step(arch, params, state, &x, &y, hyper) {
            Ok(loss) => loss_sum += loss.to_f64_lossy() * y.len() as f64,
            Err(Error::Divergence(_)) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let train_loss = if diverged {
        f64::NAN
    } else {
        loss_sum / train.len() as f64
    };
    let (test_loss, test_accuracy) = evaluate(arch, params, test, hyper.batch_size.max(256))?;
    Ok(EpochMetrics {
        epoch: epoch_index + 1,
        train_loss,
        test_loss,
        test_accuracy,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Classifies a training history for a `num_classes`-way problem.
pub fn detect_divergence(history: &[EpochMetrics], num_classes: usize) -> Result<DivergenceStatus> {
    if history.is_empty() {
        return Err(Error::InvalidInput("empty training history".into()));
    }
    if num_classes < 2 {
        return Err(Error::InvalidInput(format!("{num_classes} classes")));
    }
    if history
        .iter()
        .any(|m| !m.train_loss.is_finite() || !m.test_loss.is_finite())
    {
        return Ok(DivergenceStatus::diverged(DivergenceReason::NanLoss));
    }
    let threshold = PLATEAU_FRACTION * (num_classes as f64).ln();
    if history.len() >= PLATEAU_WINDOW
        && history[history.len() - PLATEAU_WINDOW..]
            .iter()
            .all(|m| m.train_loss > threshold)
    {
        return Ok(DivergenceStatus::diverged(DivergenceReason::PlateauAboveThreshold));
    }
    Ok(DivergenceStatus::completed())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub history: Vec<EpochMetrics>,
    pub status: DivergenceStatus,
}

/// Trains for `hyper.epochs` epochs, stopping early once divergence is
/// detected. `on_epoch` sees each epoch's metrics as they are produced.
pub fn run_training<T: Scalar>(
    arch: &Architecture,
    params: &mut Parameters<T>,
    train: &LabeledDataset<T>,
    test: &LabeledDataset<T>,
    hyper: &Hyperparams,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainingRun> {
    hyper.validate()?;
    let mut state = TrainState::new(arch);
    let mut history = Vec::with_capacity(hyper.epochs);
    let mut status = DivergenceStatus::completed();
    for epoch in 0..hyper.epochs {
        let m = train_epoch(arch, params, &mut state, train, test, hyper, epoch)?;
        on_epoch(&m);
        history.push(m);
        status = detect_divergence(&history, arch.num_classes)?;
        if !status.converged {
            break;
        }
    }
    Ok(TrainingRun { history, status })
}
