use crate::error::{Error, Result};
use crate::rng::SeededRng;

use super::kernels::{conv_out_len, ConvGeometry};
use super::{Scalar, Tensor};

/// A 2-D convolution: hyperparameters plus its weight `[out, in, k, k]` and bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvSpec<T> {
    /// Fan-in scaled uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for both weight and bias.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        dilation: usize,
        padding: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel_size == 0 || stride == 0 || dilation == 0 {
            return Err(Error::invalid(format!(
                "conv extents must be positive: in={in_channels} out={out_channels} k={kernel_size} \
                 stride={stride} dilation={dilation}"
            )));
        }
        let fan_in = in_channels * kernel_size * kernel_size;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let wlen = out_channels * fan_in;
        let w: Vec<T> = (0..wlen).map(|_| T::from_f64(rng.uniform(-bound, bound))).collect();
        let b: Vec<T> = (0..out_channels).map(|_| T::from_f64(rng.uniform(-bound, bound))).collect();
        Ok(Self {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            dilation,
            padding,
            weight: Tensor::from_vec(vec![out_channels, in_channels, kernel_size, kernel_size], w)?
                .with_requires_grad(true),
            bias: Tensor::from_vec(vec![out_channels], b)?.with_requires_grad(true),
        })
    }

    /// Checks weight/bias shapes against the channel counts.
    pub fn validate(&self) -> Result<()> {
        let want = [self.out_channels, self.in_channels, self.kernel_size, self.kernel_size];
        if self.weight.shape() != want {
            return Err(Error::shape(
                "conv2d",
                "weight",
                format!("expected {want:?}, got {:?}", self.weight.shape()),
            ));
        }
        if self.bias.shape() != [self.out_channels] {
            return Err(Error::shape(
                "conv2d",
                "bias",
                format!("expected [{}], got {:?}", self.out_channels, self.bias.shape()),
            ));
        }
        Ok(())
    }

    /// Output spatial extent for an `h x w` input, if at least 1x1.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ho = conv_out_len(h, self.kernel_size, self.stride, self.dilation, self.padding)?;
        let wo = conv_out_len(w, self.kernel_size, self.stride, self.dilation, self.padding)?;
        Some((ho, wo))
    }

    pub(crate) fn geometry(&self, input_shape: &[usize]) -> Result<ConvGeometry> {
        let [n, c, h, w] = *input_shape else {
            return Err(Error::shape(
                "conv2d",
                "rank",
                format!("expected [N, C, H, W], got {input_shape:?}"),
            ));
        };
        if c != self.in_channels {
            return Err(Error::shape(
                "conv2d",
                "channels",
                format!("input has {c} channels, conv expects {}", self.in_channels),
            ));
        }
        let (out_height, out_width) = self.output_hw(h, w).ok_or_else(|| {
            Error::shape(
                "conv2d",
                "spatial",
                format!(
                    "{h}x{w} input with kernel {} dilation {} padding {} stride {} yields no output",
                    self.kernel_size, self.dilation, self.padding, self.stride
                ),
            )
        })?;
        Ok(ConvGeometry {
            batch: n,
            in_channels: c,
            height: h,
            width: w,
            out_channels: self.out_channels,
            kernel: self.kernel_size,
            stride: self.stride,
            dilation: self.dilation,
            padding: self.padding,
            out_height,
            out_width,
        })
    }

    pub fn cast<U: Scalar>(&self) -> ConvSpec<U> {
        ConvSpec {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel_size: self.kernel_size,
            stride: self.stride,
            dilation: self.dilation,
            padding: self.padding,
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// Batch normalization over `[N, C, H, W]`: affine parameters plus running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
    pub training: bool,
}

impl<T: Scalar> BatchNormState<T> {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    /// `gamma = 1`, `beta = 0`, running mean 0, running variance 1.
    pub fn new(channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: Tensor::full(vec![channels], T::one())?.with_requires_grad(true),
            beta: Tensor::zeros(vec![channels])?.with_requires_grad(true),
            running_mean: Tensor::zeros(vec![channels])?,
            running_var: Tensor::full(vec![channels], T::one())?,
            eps: Self::DEFAULT_EPS,
            momentum: Self::DEFAULT_MOMENTUM,
            training: true,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        for (name, t) in [
            ("beta", &self.beta),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ] {
            if t.shape() != [c] {
                return Err(Error::invalid(format!(
                    "batch norm `{name}` has shape {:?}, expected [{c}]",
                    t.shape()
                )));
            }
        }
        if self.running_var.data().iter().any(|v| *v < T::zero()) {
            return Err(Error::invalid("batch norm running_var has a negative entry"));
        }
        if !(self.eps > 0.0) || !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::invalid(format!(
                "batch norm eps must be > 0 and momentum in (0,1), got eps={} momentum={}",
                self.eps, self.momentum
            )));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> BatchNormState<U> {
        BatchNormState {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
            eps: self.eps,
            momentum: self.momentum,
            training: self.training,
        }
    }
}
