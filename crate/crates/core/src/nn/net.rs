use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{BatchNormState, ConvSpec, GradTape, Scalar, Tensor, Var};

use super::blocks::{mofu_forward, tofu_forward, MofuParams, TofuParams};
use super::{bn_layer, conv_layer, join, Module, TensorRole};

/// Dropout probability after each hidden fully connected layer.
pub const DROPOUT_P: f64 = 0.2;

const INPUT_CHANNELS: usize = 3;
const STEM_CHANNELS: usize = 32;
const TOFU2_OUT: usize = 128;
const MOFU_OUT: usize = 256;
const FC1_OUT: usize = 256;
const FC2_OUT: usize = 128;

/// Architecture knobs. `dim` is the output width of the first TOFU block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { dim: 64, num_classes: 1 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.num_classes == 0 {
            return Err(Error::invalid(format!(
                "model dim and num_classes must be positive, got dim={} num_classes={}",
                self.dim, self.num_classes
            )));
        }
        Ok(())
    }
}

/// Fully connected layer, weight `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LinearParams<T> {
    /// `U(-1/sqrt(in), 1/sqrt(in))` for weight and bias.
    pub fn new(in_features: usize, out_features: usize, rng: &mut SeededRng) -> Result<Self> {
        let bound = 1.0 / (in_features as f64).sqrt();
        let w = (0..in_features * out_features)
            .map(|_| T::from_f64(rng.uniform(-bound, bound)))
            .collect();
        let b = (0..out_features).map(|_| T::from_f64(rng.uniform(-bound, bound))).collect();
        Ok(Self {
            weight: Tensor::from_vec(vec![out_features, in_features], w)?.with_requires_grad(true),
            bias: Tensor::from_vec(vec![out_features], b)?.with_requires_grad(true),
        })
    }

    pub fn forward(&self, tape: &mut GradTape<T>, x: Var, name: &str) -> Result<Var> {
        let w = tape.param(&join(name, "weight"), &self.weight);
        let b = tape.param(&join(name, "bias"), &self.bias);
        tape.linear(x, w, b)
    }

    pub fn cast<U: Scalar>(&self) -> LinearParams<U> {
        LinearParams {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

impl<T: Scalar> Module<T> for LinearParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>, TensorRole)) {
        f(&join(prefix, "weight"), &self.weight, TensorRole::Trainable);
        f(&join(prefix, "bias"), &self.bias, TensorRole::Trainable);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        f(&join(prefix, "weight"), &mut self.weight, TensorRole::Trainable);
        f(&join(prefix, "bias"), &mut self.bias, TensorRole::Trainable);
    }
}

/// Every tensor of the FSC classifier.
///
/// Visiting order (also the checkpoint order): `initial_conv`, `initial_bn`,
/// `tofu1`, `tofu2`, `mofu`, `fc1`, `fc2`, `classifier`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub initial_conv: ConvSpec<T>,
    pub initial_bn: BatchNormState<T>,
    pub tofu1: TofuParams<T>,
    pub tofu2: TofuParams<T>,
    pub mofu: MofuParams<T>,
    pub fc1: LinearParams<T>,
    pub fc2: LinearParams<T>,
    pub classifier: LinearParams<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            initial_conv: ConvSpec::new(INPUT_CHANNELS, STEM_CHANNELS, 3, 1, 1, 1, rng)?,
            initial_bn: BatchNormState::new(STEM_CHANNELS)?,
            tofu1: TofuParams::new(STEM_CHANNELS, config.dim, rng)?,
            tofu2: TofuParams::new(config.dim, TOFU2_OUT, rng)?,
            mofu: MofuParams::new(TOFU2_OUT, MOFU_OUT, rng)?,
            fc1: LinearParams::new(MOFU_OUT, FC1_OUT, rng)?,
            fc2: LinearParams::new(FC1_OUT, FC2_OUT, rng)?,
            classifier: LinearParams::new(FC2_OUT, config.num_classes, rng)?,
        })
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            initial_conv: self.initial_conv.cast(),
            initial_bn: self.initial_bn.cast(),
            tofu1: self.tofu1.cast(),
            tofu2: self.tofu2.cast(),
            mofu: self.mofu.cast(),
            fc1: self.fc1.cast(),
            fc2: self.fc2.cast(),
            classifier: self.classifier.cast(),
        }
    }

    /// Every batch-norm state in visiting order.
    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNormState<T>> {
        let mut v = vec![&mut self.initial_bn];
        for t in [&mut self.tofu1, &mut self.tofu2] {
            v.push(&mut t.conv1.bn);
            v.push(&mut t.conv2.bn);
            v.push(&mut t.conv3.bn);
            v.push(&mut t.bn);
        }
        v.push(&mut self.mofu.conv1.bn);
        v.push(&mut self.mofu.conv2.bn);
        v.push(&mut self.mofu.conv3.bn);
        v.push(&mut self.mofu.bn);
        v
    }

    /// Copies every tensor (values only) from `other`, which must share the layout.
    pub fn load_from(&mut self, other: &ModelParams<T>) -> Result<()> {
        let mut src = Vec::new();
        other.visit("", &mut |name, t, _| src.push((name.to_string(), t.clone())));
        let mut it = src.into_iter();
        let mut err = None;
        self.visit_mut("", &mut |name, t, _| match it.next() {
            Some((n, v)) if n == name && v.shape() == t.shape() => {
                t.data_mut().copy_from_slice(v.data());
            }
            _ if err.is_none() => err = Some(Error::invalid(format!("layout mismatch at `{name}`"))),
            _ => {}
        });
        err.map_or(Ok(()), Err)
    }
}

impl<T: Scalar> Module<T> for ModelParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>, TensorRole)) {
        self.initial_conv.visit(&join(prefix, "initial_conv"), f);
        self.initial_bn.visit(&join(prefix, "initial_bn"), f);
        self.tofu1.visit(&join(prefix, "tofu1"), f);
        self.tofu2.visit(&join(prefix, "tofu2"), f);
        self.mofu.visit(&join(prefix, "mofu"), f);
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
        self.classifier.visit(&join(prefix, "classifier"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        self.initial_conv.visit_mut(&join(prefix, "initial_conv"), f);
        self.initial_bn.visit_mut(&join(prefix, "initial_bn"), f);
        self.tofu1.visit_mut(&join(prefix, "tofu1"), f);
        self.tofu2.visit_mut(&join(prefix, "tofu2"), f);
        self.mofu.visit_mut(&join(prefix, "mofu"), f);
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
        self.classifier.visit_mut(&join(prefix, "classifier"), f);
    }
}

/// Full forward pass to raw logits `[N, num_classes]`.
///
/// stem conv/bn/ReLU, tofu1, tofu2, mofu, global average pool to 256
/// features, fc1 + ReLU + dropout, fc2 + ReLU + dropout, classifier.
pub fn net_forward<T: Scalar>(
    tape: &mut GradTape<T>,
    x: Var,
    params: &mut ModelParams<T>,
    training: bool,
    rng: &mut SeededRng,
) -> Result<Var> {
    let (_, c, _, _) = tape.value(x).dims4("net_forward")?;
    if c != INPUT_CHANNELS {
        return Err(Error::shape(
            "net_forward",
            "channels",
            format!("expected {INPUT_CHANNELS} input channels, got {c}"),
        ));
    }
    let h = conv_layer(tape, x, &params.initial_conv, "initial_conv")?;
    let h = bn_layer(tape, h, &mut params.initial_bn, "initial_bn", training)?;
    let h = tape.relu(h);
    let h = tofu_forward(tape, h, &mut params.tofu1, training, "tofu1")?;
    let h = tofu_forward(tape, h, &mut params.tofu2, training, "tofu2")?;
    let h = mofu_forward(tape, h, &mut params.mofu, training, "mofu")?;
    let h = tape.adaptive_avg_pool_1x1(h)?;
    let h = params.fc1.forward(tape, h, "fc1")?;
    let h = tape.relu(h);
    let h = tape.dropout(h, DROPOUT_P, training, rng)?;
    let h = params.fc2.forward(tape, h, "fc2")?;
    let h = tape.relu(h);
    let h = tape.dropout(h, DROPOUT_P, training, rng)?;
    params.classifier.forward(tape, h, "classifier")
}
