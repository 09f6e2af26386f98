//! Binary cross-entropy training: adaptive-moment updates, gradient
//! accumulation across micro-batches, and early stopping on validation loss.

mod adam;
mod early_stop;
mod loss;
mod train;

pub use adam::{optimizer_step, OptimState};
pub use early_stop::{early_stop_update, EarlyStopState};
pub use loss::bce_with_logits;
pub use train::{accumulate_batch_grads, evaluate, train_epoch, Batch, EpochStats, EvalOutcome, TrainConfig};
