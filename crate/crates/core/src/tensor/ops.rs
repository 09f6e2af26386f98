//! Forward computations shared by the eager API and the tape.
//!
//! Every function here is a pure forward pass over [`Tensor`] values. The
//! tape records the same calls and adds the matching backward rule, so an
//! eager pipeline and a taped one produce identical values.

use crate::error::{Error, Result};
use crate::rng::SeededRng;

use super::kernels::{self, ConvGeometry};
use super::{sigmoid_pair, sigmoid_scalar, BatchNormState, ConvSpec, Scalar, Tensor};

pub fn conv2d<T: Scalar>(input: &Tensor<T>, spec: &ConvSpec<T>) -> Result<Tensor<T>> {
    spec.validate()?;
    let geom = spec.geometry(input.shape())?;
    conv2d_with(input, &spec.weight, &spec.bias, geom)
}

pub(crate) fn conv2d_with<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let out = kernels::conv2d_forward(&geom, input.data(), weight.data(), bias.data());
    Tensor::from_vec(
        vec![geom.batch, geom.out_channels, geom.out_height, geom.out_width],
        out,
    )
}

/// Geometry for a convolution whose weight is `[out, in, k, k]`.
pub(crate) fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    dilation: usize,
    padding: usize,
) -> Result<ConvGeometry> {
    let [out_c, in_c, k, k2] = *weight.shape() else {
        return Err(Error::shape("conv2d", "weight", format!("expected rank 4, got {:?}", weight.shape())));
    };
    if k != k2 {
        return Err(Error::shape("conv2d", "kernel", format!("kernel must be square, got {k}x{k2}")));
    }
    if bias.shape() != [out_c] {
        return Err(Error::shape("conv2d", "bias", format!("expected [{out_c}], got {:?}", bias.shape())));
    }
    let probe = ConvSpec {
        in_channels: in_c,
        out_channels: out_c,
        kernel_size: k,
        stride,
        dilation,
        padding,
        weight: Tensor::scalar(T::zero()),
        bias: Tensor::scalar(T::zero()),
    };
    probe.geometry(input.shape())
}

/// Saved statistics of a batch-norm forward pass, needed for its backward.
#[derive(Debug, Clone)]
pub(crate) struct BnSaved {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Batch normalization using `state.gamma` / `state.beta`. In training mode
/// the running statistics are updated in place.
pub fn batchnorm2d<T: Scalar>(input: &Tensor<T>, state: &mut BatchNormState<T>) -> Result<Tensor<T>> {
    let gamma = state.gamma.clone();
    let beta = state.beta.clone();
    batchnorm2d_with(input, &gamma, &beta, state).map(|(t, _)| t)
}

pub(crate) fn batchnorm2d_with<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &mut BatchNormState<T>,
) -> Result<(Tensor<T>, BnSaved)> {
    let (n, c, h, w) = input.dims4("batchnorm2d")?;
    if c != state.channels() || gamma.len() != c || beta.len() != c {
        return Err(Error::shape(
            "batchnorm2d",
            "channels",
            format!("input has {c} channels, batch norm has {}", state.channels()),
        ));
    }
    let plane = h * w;
    let (mean, inv_std) = if state.training {
        if n * plane < 2 {
            return Err(Error::shape(
                "batchnorm2d",
                "batch",
                format!("training mode needs N*H*W >= 2, got {}", n * plane),
            ));
        }
        let (mean, var) = kernels::channel_moments(input.data(), n, c, plane);
        let m = state.momentum;
        for ch in 0..c {
            let rm = state.running_mean.data()[ch].as_f64();
            let rv = state.running_var.data()[ch].as_f64();
            state.running_mean.data_mut()[ch] = T::from_f64((1.0 - m) * rm + m * mean[ch]);
            state.running_var.data_mut()[ch] = T::from_f64((1.0 - m) * rv + m * var[ch]);
        }
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        (mean, inv)
    } else {
        let mean: Vec<f64> = state.running_mean.data().iter().map(|v| v.as_f64()).collect();
        let inv: Vec<f64> = state
            .running_var
            .data()
            .iter()
            .map(|v| 1.0 / (v.as_f64().max(0.0) + state.eps).sqrt())
            .collect();
        (mean, inv)
    };

    let mut out = vec![T::zero(); input.len()];
    let x = input.data();
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let scale = T::from_f64(gamma.data()[ch].as_f64() * inv_std[ch]);
            let shift = T::from_f64(beta.data()[ch].as_f64() - gamma.data()[ch].as_f64() * inv_std[ch] * mean[ch]);
            for (o, &v) in out[off..off + plane].iter_mut().zip(&x[off..off + plane]) {
                *o = v * scale + shift;
            }
        }
    }
    Ok((Tensor::from_vec(input.shape().to_vec(), out)?, BnSaved { mean, inv_std }))
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn neg<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| -v)
}

/// `1 - x` elementwise.
pub fn one_minus<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| T::one() - v)
}

pub fn scale<T: Scalar>(input: &Tensor<T>, factor: T) -> Tensor<T> {
    input.map(|v| v * factor)
}

fn zip_same<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, "shape", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Tensor::from_vec(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_same("add", a, b, |x, y| x + y)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_same("mul", a, b, |x, y| x * y)
}

/// Fuzzy modulation `sigmoid(x) * x + sigmoid(-x) * (1 - x)`, elementwise.
pub fn fuzzy_modulate<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(fuzzy_scalar)
}

#[inline]
pub(crate) fn fuzzy_scalar<T: Scalar>(x: T) -> T {
    let (high, low) = sigmoid_pair(x);
    high * x + low * (T::one() - x)
}

/// Derivative of [`fuzzy_scalar`]: `s'(x)(2x - 1) + 2 s(x) - 1`.
#[inline]
pub(crate) fn fuzzy_derivative<T: Scalar>(x: T) -> T {
    let (s, s_neg) = sigmoid_pair(x);
    let ds = s * s_neg;
    let two = T::one() + T::one();
    ds * (two * x - T::one()) + two * s - T::one()
}

/// `input [N, F_in] * weight^T [F_in, F_out] + bias`.
pub fn linear<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, f_in) = input.dims2("linear")?;
    let (f_out, w_in) = weight
        .dims2("linear")
        .map_err(|_| Error::shape("linear", "weight", format!("expected [F_out, F_in], got {:?}", weight.shape())))?;
    if w_in != f_in {
        return Err(Error::shape(
            "linear",
            "in_features",
            format!("input has {f_in} features, weight expects {w_in}"),
        ));
    }
    if bias.shape() != [f_out] {
        return Err(Error::shape("linear", "bias", format!("expected [{f_out}], got {:?}", bias.shape())));
    }
    let mut out = Vec::with_capacity(n * f_out);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    T::gemm(false, true, n, f_out, f_in, T::one(), input.data(), weight.data(), T::one(), &mut out);
    Tensor::from_vec(vec![n, f_out], out)
}

/// Stacks `[N, C_i, H, W]` tensors along the channel axis in argument order.
pub fn concat_channels<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::invalid("concat_channels needs at least one input"))?;
    let (n, _, h, w) = first.dims4("concat_channels")?;
    let mut total_c = 0;
    for t in inputs {
        let (ni, ci, hi, wi) = t.dims4("concat_channels")?;
        if ni != n {
            return Err(Error::shape("concat_channels", "batch", format!("{ni} vs {n}")));
        }
        if (hi, wi) != (h, w) {
            return Err(Error::shape("concat_channels", "spatial", format!("{hi}x{wi} vs {h}x{w}")));
        }
        total_c += ci;
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * total_c * plane);
    for b in 0..n {
        for t in inputs {
            let ci = t.shape()[1];
            out.extend_from_slice(&t.data()[b * ci * plane..(b + 1) * ci * plane]);
        }
    }
    Tensor::from_vec(vec![n, total_c, h, w], out)
}

/// Global average pool `[N, C, H, W] -> [N, C]`.
pub fn adaptive_avg_pool_1x1<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4("adaptive_avg_pool_1x1")?;
    let plane = h * w;
    let inv = 1.0 / plane as f64;
    let out = input
        .data()
        .chunks(plane)
        .map(|ch| T::from_f64(ch.iter().map(|v| v.as_f64()).sum::<f64>() * inv))
        .collect();
    Tensor::from_vec(vec![n, c], out)
}

/// Inverted-dropout mask: 0 with probability `p`, `1/(1-p)` otherwise.
pub(crate) fn dropout_mask<T: Scalar>(len: usize, p: f64, rng: &mut SeededRng) -> Vec<T> {
    let keep = T::from_f64(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.coin(p) { T::zero() } else { keep })
        .collect()
}

pub(crate) fn check_dropout_p(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("dropout probability must be in [0, 1), got {p}")));
    }
    Ok(())
}

/// Identity in eval mode or when `p == 0`; otherwise inverted dropout.
pub fn dropout<T: Scalar>(input: &Tensor<T>, p: f64, training: bool, rng: &mut SeededRng) -> Result<Tensor<T>> {
    check_dropout_p(p)?;
    if !training || p == 0.0 {
        return Ok(input.map(|v| v));
    }
    let mask: Vec<T> = dropout_mask(input.len(), p, rng);
    Tensor::from_vec(
        input.shape().to_vec(),
        input.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect(),
    )
}

pub fn sum<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    Tensor::scalar(T::from_f64(input.data().iter().map(|v| v.as_f64()).sum()))
}

pub fn mean<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    Tensor::scalar(T::from_f64(
        input.data().iter().map(|v| v.as_f64()).sum::<f64>() / input.len() as f64,
    ))
}

/// Per-sample loss `max(z, 0) - z t + ln(1 + exp(-|z|))`.
#[inline]
pub(crate) fn bce_term(z: f64, t: f64) -> f64 {
    z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()
}

pub(crate) fn check_bce_inputs<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<()> {
    if logits.shape() != targets.shape() {
        return Err(Error::shape(
            "bce_with_logits",
            "shape",
            format!("logits {:?} vs targets {:?}", logits.shape(), targets.shape()),
        ));
    }
    if let Some(bad) = targets.data().iter().find(|t| **t != T::zero() && **t != T::one()) {
        return Err(Error::invalid(format!("binary targets must be 0 or 1, found {bad}")));
    }
    Ok(())
}

/// Mean binary cross-entropy over logits.
pub fn bce_with_logits<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<Tensor<T>> {
    check_bce_inputs(logits, targets)?;
    let total: f64 = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(z, t)| bce_term(z.as_f64(), t.as_f64()))
        .sum();
    Ok(Tensor::scalar(T::from_f64(total / logits.len() as f64)))
}
