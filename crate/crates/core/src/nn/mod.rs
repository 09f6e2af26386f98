//! Fuzzy sigmoid convolution layers, the TOFU/MOFU blocks, and the full classifier.
//!
//! Parameters are plain structs of [`Tensor`]s. A forward pass binds each
//! trainable tensor to the tape under its dotted name (for example
//! `tofu1.conv2.bn.gamma`), so gradients can be routed back by name with
//! [`absorb_grads`].

mod blocks;
mod count;
mod fsc;
mod net;

pub use blocks::{mofu_forward, tofu_forward, MofuParams, TofuParams};
pub use count::{count_parameters, ParamReport, ParamRow, REFERENCE_PARAM_COUNT};
pub use fsc::{fsc_forward, fuzzy_membership, fuzzy_membership_eager, FscLayerParams};
pub use net::{net_forward, LinearParams, ModelConfig, ModelParams, DROPOUT_P};

use crate::error::{Error, Result};
use crate::tensor::{BatchNormState, ConvSpec, GradTape, Scalar, Tensor, Var};

/// Whether a tensor is learned or is a tracked statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    Trainable,
    /// Batch-norm running mean/variance: checkpointed, never optimized or counted.
    Statistic,
}

/// Ordered traversal over every named tensor of a parameter struct.
///
/// The visiting order is fixed per type and defines checkpoint layout and
/// optimizer-state order.
pub trait Module<T: Scalar> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>, TensorRole));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T: Scalar> Module<T> for ConvSpec<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>, TensorRole)) {
        f(&join(prefix, "weight"), &self.weight, TensorRole::Trainable);
        f(&join(prefix, "bias"), &self.bias, TensorRole::Trainable);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        f(&join(prefix, "weight"), &mut self.weight, TensorRole::Trainable);
        f(&join(prefix, "bias"), &mut self.bias, TensorRole::Trainable);
    }
}

impl<T: Scalar> Module<T> for BatchNormState<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>, TensorRole)) {
        f(&join(prefix, "gamma"), &self.gamma, TensorRole::Trainable);
        f(&join(prefix, "beta"), &self.beta, TensorRole::Trainable);
        f(&join(prefix, "running_mean"), &self.running_mean, TensorRole::Statistic);
        f(&join(prefix, "running_var"), &self.running_var, TensorRole::Statistic);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>, TensorRole)) {
        f(&join(prefix, "gamma"), &mut self.gamma, TensorRole::Trainable);
        f(&join(prefix, "beta"), &mut self.beta, TensorRole::Trainable);
        f(&join(prefix, "running_mean"), &mut self.running_mean, TensorRole::Statistic);
        f(&join(prefix, "running_var"), &mut self.running_var, TensorRole::Statistic);
    }
}

/// Adds the tape's gradient for every trainable tensor of `module` into the
/// tensor's own gradient buffer. Tensors the loss never reached are left as is.
pub fn absorb_grads<T: Scalar, M: Module<T>>(module: &mut M, tape: &GradTape<T>) {
    module.visit_mut("", &mut |name, t, role| {
        if role == TensorRole::Trainable {
            if let Some(g) = tape.param_grad(name) {
                t.accumulate_grad(g);
            }
        }
    });
}

pub fn zero_grads<T: Scalar, M: Module<T>>(module: &mut M) {
    module.visit_mut("", &mut |_, t, _| t.zero_grad());
}

/// Names of the trainable tensors in visiting order.
pub fn trainable_names<T: Scalar, M: Module<T>>(module: &M) -> Vec<String> {
    let mut names = Vec::new();
    module.visit("", &mut |name, _, role| {
        if role == TensorRole::Trainable {
            names.push(name.to_string());
        }
    });
    names
}

pub(crate) fn conv_layer<T: Scalar>(
    tape: &mut GradTape<T>,
    x: Var,
    spec: &ConvSpec<T>,
    name: &str,
) -> Result<Var> {
    spec.validate()?;
    let w = tape.param(&join(name, "weight"), &spec.weight);
    let b = tape.param(&join(name, "bias"), &spec.bias);
    tape.conv2d(x, w, b, spec.stride, spec.dilation, spec.padding)
        .map_err(|e| match e {
            Error::Shape { dim: "spatial", detail, .. } => Error::InputTooSmall {
                layer: name.to_string(),
                detail,
            },
            Error::Shape { op, dim, detail } => Error::Shape {
                op,
                dim,
                detail: format!("{detail} (layer `{name}`)"),
            },
            other => other,
        })
}

pub(crate) fn bn_layer<T: Scalar>(
    tape: &mut GradTape<T>,
    x: Var,
    state: &mut BatchNormState<T>,
    name: &str,
    training: bool,
) -> Result<Var> {
    state.training = training;
    let g = tape.param(&join(name, "gamma"), &state.gamma);
    let b = tape.param(&join(name, "beta"), &state.beta);
    tape.batch_norm2d(x, g, b, state).map_err(|e| match e {
        Error::Shape { dim: "batch", detail, .. } => Error::InputTooSmall {
            layer: name.to_string(),
            detail,
        },
        other => other,
    })
}
