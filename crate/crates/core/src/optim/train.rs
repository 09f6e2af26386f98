use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{confusion, ConfusionMatrix};
use crate::nn::{absorb_grads, net_forward, zero_grads, Module, ModelParams, TensorRole};
use crate::rng::SeededRng;
use crate::tensor::{GradTape, Scalar, Tensor};

use super::adam::{optimizer_step, OptimState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub accumulation_steps: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub image_size: usize,
    pub seed: u64,
    /// Stop as soon as validation accuracy reaches this value. Off by default.
    pub target_val_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 52,
            accumulation_steps: 4,
            max_epochs: 300,
            patience: 20,
            learning_rate: 8e-4,
            image_size: 62,
            seed: 42,
            target_val_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("accumulation_steps", self.accumulation_steps),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("image_size", self.image_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if let Some(t) = self.target_val_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::invalid(format!("target_val_accuracy must be in [0, 1], got {t}")));
            }
        }
        Ok(())
    }
}

/// A micro-batch: images `[N, 3, S, S]` and 0/1 labels `[N, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub images: Tensor<T>,
    pub labels: Tensor<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Sample-weighted mean of the micro-batch losses.
    pub mean_loss: f64,
    pub samples: usize,
    pub micro_batches: usize,
    /// Updates from complete accumulation windows.
    pub full_steps: usize,
    /// 1 when a trailing partial window was flushed, else 0.
    pub flushed_steps: usize,
}

impl EpochStats {
    pub fn optimizer_steps(&self) -> usize {
        self.full_steps + self.flushed_steps
    }
}

/// Runs forward/backward on one micro-batch and adds `loss_scale * dL/dθ`
/// into the parameters' gradient buffers. Returns the unscaled mean loss.
pub fn accumulate_batch_grads<T: Scalar>(
    model: &mut ModelParams<T>,
    batch: &Batch<T>,
    loss_scale: f64,
    training: bool,
    rng: &mut SeededRng,
) -> Result<f64> {
    let mut tape = GradTape::new();
    let x = tape.constant(batch.images.clone());
    let logits = net_forward(&mut tape, x, model, training, rng)?;
    let loss = tape.bce_with_logits(logits, &batch.labels)?;
    let value = tape.value(loss).data()[0].as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss is {value}")));
    }
    let scaled = tape.scale(loss, T::from_f64(loss_scale));
    tape.backward(scaled)?;
    absorb_grads(model, &tape);
    Ok(value)
}

/// One pass over `batches` in training mode. Each micro-batch loss is scaled
/// by `1/accumulation_steps`; parameters update after every full window. A
/// trailing partial window of `r` micro-batches is rescaled by `accum/r` and
/// flushed as one extra update, so no sample is dropped.
pub fn train_epoch<T, I>(
    model: &mut ModelParams<T>,
    batches: I,
    config: &TrainConfig,
    optim: &mut OptimState<T>,
    rng: &mut SeededRng,
) -> Result<EpochStats>
where
    T: Scalar,
    I: IntoIterator<Item = Result<Batch<T>>>,
{
    let accum = config.accumulation_steps.max(1);
    let scale = 1.0 / accum as f64;
    let mut stats = EpochStats {
        mean_loss: 0.0,
        samples: 0,
        micro_batches: 0,
        full_steps: 0,
        flushed_steps: 0,
    };
    let mut weighted = 0.0;
    let mut window = 0;
    zero_grads(model);
    for batch in batches {
        let batch = batch?;
        let loss = accumulate_batch_grads(model, &batch, scale, true, rng)?;
        weighted += loss * batch.len() as f64;
        stats.samples += batch.len();
        stats.micro_batches += 1;
        window += 1;
        if window == accum {
            optimizer_step(model, optim)?;
            zero_grads(model);
            stats.full_steps += 1;
            window = 0;
        }
    }
    if stats.samples == 0 {
        return Err(Error::EmptyData("training epoch received no batches".into()));
    }
    if window > 0 {
        let factor = T::from_f64(accum as f64 / window as f64);
        model.visit_mut("", &mut |_, t, role| {
            if role == TensorRole::Trainable {
                t.scale_grad(factor);
            }
        });
        optimizer_step(model, optim)?;
        zero_grads(model);
        stats.flushed_steps = 1;
    }
    stats.mean_loss = weighted / stats.samples as f64;
    Ok(stats)
}

/// Loss and confusion counts of a model over evaluation batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOutcome {
    pub mean_loss: f64,
    pub matrix: ConfusionMatrix,
}

/// Eval-mode forward pass (running batch-norm statistics, no dropout) over
/// every batch. Parameters and statistics are left unchanged.
pub fn evaluate<T, I>(model: &mut ModelParams<T>, batches: I, threshold: f64) -> Result<EvalOutcome>
where
    T: Scalar,
    I: IntoIterator<Item = Result<Batch<T>>>,
{
    let mut rng = SeededRng::new(0);
    let mut weighted = 0.0;
    let mut samples = 0;
    let mut matrix = ConfusionMatrix::default();
    for batch in batches {
        let batch = batch?;
        let mut tape = GradTape::new();
        let x = tape.constant(batch.images.clone());
        let logits = net_forward(&mut tape, x, model, false, &mut rng)?;
        let loss = tape.bce_with_logits(logits, &batch.labels)?;
        let value = tape.value(loss).data()[0].as_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("evaluation loss is {value}")));
        }
        weighted += value * batch.len() as f64;
        samples += batch.len();
        matrix.merge(&confusion(tape.value(logits), &batch.labels, threshold)?);
    }
    if samples == 0 {
        return Err(Error::EmptyData("evaluation received no batches".into()));
    }
    Ok(EvalOutcome {
        mean_loss: weighted / samples as f64,
        matrix,
    })
}
