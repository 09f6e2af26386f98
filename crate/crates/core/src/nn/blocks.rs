use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::{BatchNormState, ConvSpec, GradTape, Scalar, Tensor, Var};

use super::fsc::{fsc_forward, FscLayerParams};
use super::{bn_layer, conv_layer, join, Module, TensorRole};

const BLOCK_KERNEL: usize = 3;
const BLOCK_DILATION: usize = 2;
const BLOCK_PADDING: usize = 2;

/// Channel widths of the three inner FSC layers of a TOFU block.
pub const TOFU_WIDTHS: [usize; 3] = [16, 32, 48];
/// Channel widths of the first two FSC layers of a MOFU block.
pub const MOFU_WIDTHS: [usize; 2] = [16, 32];

fn block_fsc<T: Scalar>(cin: usize, cout: usize, rng: &mut SeededRng) -> Result<FscLayerParams<T>> {
    FscLayerParams::new(cin, cout, BLOCK_KERNEL, BLOCK_DILATION, BLOCK_PADDING, rng)
}

/// Top-of-funnel block: three densely concatenated FSC layers and a 1x1 compression.
#[derive(Debug, Clone, PartialEq)]
pub struct TofuParams<T> {
    pub conv1: FscLayerParams<T>,
    pub conv2: FscLayerParams<T>,
    pub conv3: FscLayerParams<T>,
    pub compress: ConvSpec<T>,
    pub bn: BatchNormState<T>,
}

impl<T: Scalar> TofuParams<T> {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut SeededRng) -> Result<Self> {
        let [w1, w2, w3] = TOFU_WIDTHS;
        Ok(Self {
            conv1: block_fsc(in_channels, w1, rng)?,
            conv2: block_fsc(w1, w2, rng)?,
            conv3: block_fsc(w1 + w2, w3, rng)?,
            compress: ConvSpec::new(w1 + w2 + w3, out_channels, 1, 1, 1, 0, rng)?,
            bn: BatchNormState::new(out_channels)?,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.compress.out_channels
    }

    pub fn cast<U: Scalar>(&self) -> TofuParams<U> {
        TofuParams {
            conv1: self.conv1.cast(),
            conv2: self.conv2.cast(),
            conv3: self.conv3.cast(),
            compress: self.compress.cast(),
            bn: self.bn.cast(),
        }
    }
}

impl<T: Scalar> Module<T> for TofuParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>, TensorRole)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.conv3.visit(&join(prefix, "conv3"), f);
        self.compress.visit(&join(prefix, "compress"), f);
        self.bn.visit(&join(prefix, "bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.conv3.visit_mut(&join(prefix, "conv3"), f);
        self.compress.visit_mut(&join(prefix, "compress"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
    }
}

/// `x1 = fsc(x)`, `x2 = fsc(x1)`, `x3 = fsc([x1, x2])`,
/// `out = bn(relu(compress([x1, x2, x3])))`.
pub fn tofu_forward<T: Scalar>(
    tape: &mut GradTape<T>,
    x: Var,
    params: &mut TofuParams<T>,
    training: bool,
    name: &str,
) -> Result<Var> {
    let x1 = fsc_forward(tape, x, &mut params.conv1, training, &join(name, "conv1"))?;
    let x2 = fsc_forward(tape, x1, &mut params.conv2, training, &join(name, "conv2"))?;
    let x12 = tape.concat_channels(&[x1, x2])?;
    let x3 = fsc_forward(tape, x12, &mut params.conv3, training, &join(name, "conv3"))?;
    let all = tape.concat_channels(&[x1, x2, x3])?;
    let c = conv_layer(tape, all, &params.compress, &join(name, "compress"))?;
    let c = tape.relu(c);
    bn_layer(tape, c, &mut params.bn, &join(name, "bn"), training)
}

/// Middle-of-funnel block: three chained FSC layers and a batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct MofuParams<T> {
    pub conv1: FscLayerParams<T>,
    pub conv2: FscLayerParams<T>,
    pub conv3: FscLayerParams<T>,
    pub bn: BatchNormState<T>,
}

impl<T: Scalar> MofuParams<T> {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut SeededRng) -> Result<Self> {
        let [w1, w2] = MOFU_WIDTHS;
        Ok(Self {
            conv1: block_fsc(in_channels, w1, rng)?,
            conv2: block_fsc(w1, w2, rng)?,
            conv3: block_fsc(w2, out_channels, rng)?,
            bn: BatchNormState::new(out_channels)?,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.conv3.out_channels()
    }

    pub fn cast<U: Scalar>(&self) -> MofuParams<U> {
        MofuParams {
            conv1: self.conv1.cast(),
            conv2: self.conv2.cast(),
            conv3: self.conv3.cast(),
            bn: self.bn.cast(),
        }
    }
}

impl<T: Scalar> Module<T> for MofuParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>, TensorRole)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.conv3.visit(&join(prefix, "conv3"), f);
        self.bn.visit(&join(prefix, "bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.conv3.visit_mut(&join(prefix, "conv3"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
    }
}

pub fn mofu_forward<T: Scalar>(
    tape: &mut GradTape<T>,
    x: Var,
    params: &mut MofuParams<T>,
    training: bool,
    name: &str,
) -> Result<Var> {
    let x = fsc_forward(tape, x, &mut params.conv1, training, &join(name, "conv1"))?;
    let x = fsc_forward(tape, x, &mut params.conv2, training, &join(name, "conv2"))?;
    let x = fsc_forward(tape, x, &mut params.conv3, training, &join(name, "conv3"))?;
    bn_layer(tape, x, &mut params.bn, &join(name, "bn"), training)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tofu_channel_constants() {
        let mut rng = SeededRng::new(4);
        let t = TofuParams::<f32>::new(32, 64, &mut rng).unwrap();
        assert_eq!(t.conv1.out_channels(), 16);
        assert_eq!(t.conv2.out_channels(), 32);
        assert_eq!(t.conv3.in_channels(), 48);
        assert_eq!(t.conv3.out_channels(), 48);
        assert_eq!(t.compress.in_channels, 96);
        assert_eq!(t.compress.kernel_size, 1);
        for layer in [&t.conv1, &t.conv2, &t.conv3] {
            assert_eq!((layer.conv.kernel_size, layer.conv.dilation, layer.conv.padding), (3, 2, 2));
        }
    }

    #[test]
    fn mofu_channel_chain() {
        let mut rng = SeededRng::new(4);
        let m = MofuParams::<f32>::new(128, 256, &mut rng).unwrap();
        let chain: Vec<usize> = [&m.conv1, &m.conv2, &m.conv3].iter().map(|l| l.out_channels()).collect();
        assert_eq!(chain, vec![16, 32, 256]);
        assert_eq!(m.conv1.in_channels(), 128);
    }
}
