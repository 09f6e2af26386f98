/// Early-stopping bookkeeping over validation loss. `S` is whatever snapshot
/// the caller wants restored at the end (usually a copy of the parameters).
#[derive(Debug, Clone)]
pub struct EarlyStopState<S> {
    pub best_val_loss: f64,
    pub best_epoch: Option<usize>,
    pub epochs_since_improvement: usize,
    pub patience: usize,
    pub best_checkpoint: Option<S>,
    epochs_seen: usize,
}

impl<S: Clone> EarlyStopState<S> {
    pub fn new(patience: usize) -> Self {
        Self {
            best_val_loss: f64::INFINITY,
            best_epoch: None,
            epochs_since_improvement: 0,
            patience,
            best_checkpoint: None,
            epochs_seen: 0,
        }
    }

    pub fn epochs_seen(&self) -> usize {
        self.epochs_seen
    }
}

/// Records one epoch's validation loss. A strictly lower loss snapshots
/// `params` and resets the counter; anything else (ties, NaN) counts against
/// patience. Returns `true` once `patience` consecutive epochs failed to improve.
pub fn early_stop_update<S: Clone>(state: &mut EarlyStopState<S>, val_loss: f64, params: &S) -> bool {
    let epoch = state.epochs_seen;
    state.epochs_seen += 1;
    if val_loss < state.best_val_loss {
        state.best_val_loss = val_loss;
        state.best_epoch = Some(epoch);
        state.best_checkpoint = Some(params.clone());
        state.epochs_since_improvement = 0;
    } else {
        state.epochs_since_improvement += 1;
    }
    state.epochs_since_improvement >= state.patience
}
