use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::{ops, BatchNormState, ConvSpec, GradTape, Scalar, Tensor, Var};

use super::{bn_layer, conv_layer, join, Module, TensorRole};

/// Convolution + batch norm whose output is reweighted by fuzzy memberships.
#[derive(Debug, Clone, PartialEq)]
pub struct FscLayerParams<T> {
    pub conv: ConvSpec<T>,
    pub bn: BatchNormState<T>,
}

impl<T: Scalar> FscLayerParams<T> {
    pub const DEFAULT_KERNEL: usize = 3;
    pub const DEFAULT_DILATION: usize = 2;
    /// Standalone default. The TOFU/MOFU blocks always pass padding 2,
    /// which keeps the spatial size for a dilated 3x3 kernel.
    pub const DEFAULT_PADDING: usize = 1;

    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        dilation: usize,
        padding: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Ok(Self {
            conv: ConvSpec::new(in_channels, out_channels, kernel_size, 1, dilation, padding, rng)?,
            bn: BatchNormState::new(out_channels)?,
        })
    }

    /// Kernel 3, dilation 2, padding 1.
    pub fn with_defaults(in_channels: usize, out_channels: usize, rng: &mut SeededRng) -> Result<Self> {
        Self::new(
            in_channels,
            out_channels,
            Self::DEFAULT_KERNEL,
            Self::DEFAULT_DILATION,
            Self::DEFAULT_PADDING,
            rng,
        )
    }

    pub fn in_channels(&self) -> usize {
        self.conv.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels
    }

    pub fn cast<U: Scalar>(&self) -> FscLayerParams<U> {
        FscLayerParams {
            conv: self.conv.cast(),
            bn: self.bn.cast(),
        }
    }
}

impl<T: Scalar> Module<T> for FscLayerParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>, TensorRole)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.bn.visit(&join(prefix, "bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
    }
}

/// High and low memberships `(sigmoid(x), sigmoid(-x))` recorded on the tape.
pub fn fuzzy_membership<T: Scalar>(tape: &mut GradTape<T>, x: Var) -> (Var, Var) {
    let high = tape.sigmoid(x);
    let neg = tape.neg(x);
    let low = tape.sigmoid(neg);
    (high, low)
}

/// Tape-free memberships.
pub fn fuzzy_membership_eager<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    (ops::sigmoid(x), ops::sigmoid(&ops::neg(x)))
}

/// conv -> batch norm -> `high * x + low * (1 - x)` -> ReLU.
///
/// `x` in the modulation is the batch-norm output, unclamped.
pub fn fsc_forward<T: Scalar>(
    tape: &mut GradTape<T>,
    x: Var,
    params: &mut FscLayerParams<T>,
    training: bool,
    name: &str,
) -> Result<Var> {
    let y = conv_layer(tape, x, &params.conv, &join(name, "conv"))?;
    let y = bn_layer(tape, y, &mut params.bn, &join(name, "bn"), training)?;
    let o = tape.fuzzy_modulate(y);
    Ok(tape.relu(o))
}
