use crate::error::Result;
use crate::tensor::{GradTape, Scalar, Tensor, Var};

/// Mean binary cross-entropy of raw logits against 0/1 targets, recorded on
/// the tape. Uses `max(z, 0) - z t + ln(1 + exp(-|z|))`, which never overflows.
pub fn bce_with_logits<T: Scalar>(tape: &mut GradTape<T>, logits: Var, targets: &Tensor<T>) -> Result<Var> {
    tape.bce_with_logits(logits, targets)
}
