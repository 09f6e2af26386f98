//! Reverse-mode automatic differentiation over a linear record of operations.
//!
//! Nodes are appended in execution order, so every node's inputs precede it
//! and a single reverse sweep visits each node once. Leaves keep their own
//! gradient buffers, which accumulate across [`GradTape::backward`] calls
//! until [`GradTape::zero_grad`].

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

use super::kernels::{self, ConvGeometry};
use super::ops::{self, BnSaved};
use super::{sigmoid_scalar, BatchNormState, Scalar, Tensor};

/// Handle to a node on a [`GradTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, geom: ConvGeometry },
    BatchNorm { input: Var, gamma: Var, beta: Var, saved: BnSaved, training: bool },
    Linear { input: Var, weight: Var, bias: Var },
    Sigmoid(Var),
    Relu(Var),
    Neg(Var),
    OneMinus(Var),
    Scale(Var, T),
    Add(Var, Var),
    Mul(Var, Var),
    FuzzyModulate(Var),
    Concat(Vec<Var>),
    AvgPool(Var),
    Dropout { input: Var, mask: Vec<T> },
    Sum(Var),
    Mean(Var),
    Bce { logits: Var, targets: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// The record of executed operations for one forward pass.
#[derive(Debug)]
pub struct GradTape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<String, Var>,
}

impl<T: Scalar> Default for GradTape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> GradTape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf; its gradient is tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad();
        let mut value = tensor;
        value.zero_grad();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Named trainable leaf. Repeated calls with the same name return the same node.
    pub fn param(&mut self, name: &str, tensor: &Tensor<T>) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.leaf(tensor.clone().with_requires_grad(true));
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    /// Accumulated gradient of a named parameter, if backward reached it.
    pub fn param_grad(&self, name: &str) -> Option<&[T]> {
        self.params.get(name).and_then(|v| self.grad(*v))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    /// Smallest `|x|` over every ReLU input on the tape, `None` without ReLUs.
    pub fn relu_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => self.nodes[x.0]
                    .value
                    .data()
                    .iter()
                    .map(|v| v.as_f64().abs())
                    .reduce(f64::min),
                _ => None,
            })
            .reduce(f64::min)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<Var> {
        let geom = ops::conv_geometry(self.value(input), self.value(weight), self.value(bias), stride, dilation, padding)?;
        let out = ops::conv2d_with(self.value(input), self.value(weight), self.value(bias), geom)?;
        Ok(self.push(out, Op::Conv2d { input, weight, bias, geom }, &[input, weight, bias]))
    }

    /// Batch norm with affine parameters taken from the `gamma`/`beta` nodes and
    /// statistics/mode from `state` (running statistics update in training mode).
    pub fn batch_norm2d(&mut self, input: Var, gamma: Var, beta: Var, state: &mut BatchNormState<T>) -> Result<Var> {
        let (out, saved) = ops::batchnorm2d_with(self.value(input), self.value(gamma), self.value(beta), state)?;
        let training = state.training;
        Ok(self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                saved,
                training,
            },
            &[input, gamma, beta],
        ))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::linear(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(out, Op::Linear { input, weight, bias }, &[input, weight, bias]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ops::sigmoid(self.value(x));
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let out = ops::neg(self.value(x));
        self.push(out, Op::Neg(x), &[x])
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        let out = ops::one_minus(self.value(x));
        self.push(out, Op::OneMinus(x), &[x])
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = ops::scale(self.value(x), factor);
        self.push(out, Op::Scale(x, factor), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Fused `sigmoid(x) * x + sigmoid(-x) * (1 - x)`.
    pub fn fuzzy_modulate(&mut self, x: Var) -> Var {
        let out = ops::fuzzy_modulate(self.value(x));
        self.push(out, Op::FuzzyModulate(x), &[x])
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
        let out = ops::concat_channels(&values)?;
        Ok(self.push(out, Op::Concat(inputs.to_vec()), inputs))
    }

    pub fn adaptive_avg_pool_1x1(&mut self, x: Var) -> Result<Var> {
        let out = ops::adaptive_avg_pool_1x1(self.value(x))?;
        Ok(self.push(out, Op::AvgPool(x), &[x]))
    }

    /// Inverted dropout; identity (no node) in eval mode or with `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, rng: &mut SeededRng) -> Result<Var> {
        ops::check_dropout_p(p)?;
        if !training || p == 0.0 {
            return Ok(x);
        }
        let mask: Vec<T> = ops::dropout_mask(self.value(x).len(), p, rng);
        let src = self.value(x);
        let out = Tensor::from_vec(
            src.shape().to_vec(),
            src.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect(),
        )?;
        Ok(self.push(out, Op::Dropout { input: x, mask }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = ops::sum(self.value(x));
        self.push(out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let out = ops::mean(self.value(x));
        self.push(out, Op::Mean(x), &[x])
    }

    /// Mean binary cross-entropy of `logits` against constant 0/1 `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        let out = ops::bce_with_logits(self.value(logits), targets)?;
        Ok(self.push(
            out,
            Op::Bce {
                logits,
                targets: targets.data().to_vec(),
            },
            &[logits],
        ))
    }

    /// Propagates `d loss / d node` from a scalar `loss` back to every leaf
    /// that requires a gradient, adding into the leaves' gradient buffers.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                self.nodes[i].value.accumulate_grad(&g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let mut send = |v: Var, contribution: Vec<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(buf) => buf.iter_mut().zip(&contribution).for_each(|(a, &b)| *a += b),
                slot @ None => *slot = Some(contribution),
            }
        };
        let val = |v: Var| self.nodes[v.0].value.data();

        match &node.op {
            Op::Leaf => unreachable!("leaves are handled by the caller"),
            Op::Conv2d { input, weight, bias, geom } => {
                let grads = kernels::conv2d_backward(geom, val(*input), val(*weight), g, self.wants(*input));
                if let Some(gx) = grads.input {
                    send(*input, gx);
                }
                send(*weight, grads.weight);
                send(*bias, grads.bias);
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                saved,
                training,
            } => {
                let x = val(*input);
                let gam = val(*gamma);
                let shape = self.nodes[input.0].value.shape();
                let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
                let m = (n * plane) as f64;
                // per-channel sum(dy) and sum(dy * x), plane partials in T
                let mut sum_dy = vec![0.0f64; c];
                let mut sum_dyx = vec![0.0f64; c];
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * plane;
                        let (gs, xs) = (&g[off..off + plane], &x[off..off + plane]);
                        let (a, p) = kernels::lane_sum_and_dot(gs, xs);
                        sum_dy[ch] += a.as_f64();
                        sum_dyx[ch] += p.as_f64();
                    }
                }
                let dbeta = sum_dy;
                let dgamma: Vec<f64> = (0..c)
                    .map(|ch| (sum_dyx[ch] - saved.mean[ch] * dbeta[ch]) * saved.inv_std[ch])
                    .collect();
                if self.wants(*input) {
                    // dx = gi * dy + k * (x - mu) + c0, per channel
                    let coeffs: Vec<(T, T, T, T)> = (0..c)
                        .map(|ch| {
                            let (mu, inv) = (saved.mean[ch], saved.inv_std[ch]);
                            let gi = gam[ch].as_f64() * inv;
                            let (k, c0) = if *training {
                                (-gi * inv * dgamma[ch] / m, -gi * dbeta[ch] / m)
                            } else {
                                (0.0, 0.0)
                            };
                            (T::from_f64(gi), T::from_f64(k), T::from_f64(c0), T::from_f64(mu))
                        })
                        .collect();
                    let mut dx = vec![T::zero(); x.len()];
                    for b in 0..n {
                        for (ch, &(gi, k, c0, mu)) in coeffs.iter().enumerate() {
                            let off = (b * c + ch) * plane;
                            let (gs, xs) = (&g[off..off + plane], &x[off..off + plane]);
                            for ((o, &dy), &xv) in dx[off..off + plane].iter_mut().zip(gs).zip(xs) {
                                *o = gi * dy + k * (xv - mu) + c0;
                            }
                        }
                    }
                    send(*input, dx);
                }
                send(*gamma, dgamma.into_iter().map(T::from_f64).collect());
                send(*beta, dbeta.into_iter().map(T::from_f64).collect());
            }
            Op::Linear { input, weight, bias } => {
                let xs = self.nodes[input.0].value.shape();
                let (n, f_in) = (xs[0], xs[1]);
                let f_out = self.nodes[weight.0].value.shape()[0];
                if self.wants(*input) {
                    let mut dx = vec![T::zero(); n * f_in];
                    T::gemm(false, false, n, f_in, f_out, T::one(), g, val(*weight), T::zero(), &mut dx);
                    send(*input, dx);
                }
                if self.wants(*weight) {
                    let mut dw = vec![T::zero(); f_out * f_in];
                    T::gemm(true, false, f_out, f_in, n, T::one(), g, val(*input), T::zero(), &mut dw);
                    send(*weight, dw);
                }
                let mut db = vec![T::zero(); f_out];
                for row in g.chunks(f_out) {
                    db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                }
                send(*bias, db);
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                send(*x, g.iter().zip(y).map(|(&d, &s)| d * s * (T::one() - s)).collect());
            }
            Op::Relu(x) => {
                let xv = val(*x);
                send(*x, g.iter().zip(xv).map(|(&d, &v)| if v > T::zero() { d } else { T::zero() }).collect());
            }
            Op::Neg(x) | Op::OneMinus(x) => send(*x, g.iter().map(|&d| -d).collect()),
            Op::Scale(x, f) => send(*x, g.iter().map(|&d| d * *f).collect()),
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                send(*a, g.iter().zip(bv).map(|(&d, &y)| d * y).collect());
                send(*b, g.iter().zip(av).map(|(&d, &x)| d * x).collect());
            }
            Op::FuzzyModulate(x) => {
                let xv = val(*x);
                send(*x, g.iter().zip(xv).map(|(&d, &v)| d * ops::fuzzy_derivative(v)).collect());
            }
            Op::Concat(inputs) => {
                let shape = node.value.shape();
                let (n, total_c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
                let mut offset = 0;
                for v in inputs {
                    let ci = self.nodes[v.0].value.shape()[1];
                    if self.wants(*v) {
                        let mut part = Vec::with_capacity(n * ci * plane);
                        for b in 0..n {
                            let start = (b * total_c + offset) * plane;
                            part.extend_from_slice(&g[start..start + ci * plane]);
                        }
                        send(*v, part);
                    }
                    offset += ci;
                }
            }
            Op::AvgPool(x) => {
                let shape = self.nodes[x.0].value.shape();
                let plane = shape[2] * shape[3];
                let inv = T::from_f64(1.0 / plane as f64);
                let mut dx = Vec::with_capacity(plane * g.len());
                for &d in g {
                    dx.extend(std::iter::repeat_n(d * inv, plane));
                }
                send(*x, dx);
            }
            Op::Dropout { input, mask } => {
                send(*input, g.iter().zip(mask).map(|(&d, &m)| d * m).collect());
            }
            Op::Sum(x) => send(*x, vec![g[0]; self.nodes[x.0].value.len()]),
            Op::Mean(x) => {
                let len = self.nodes[x.0].value.len();
                send(*x, vec![g[0] / T::from_f64(len as f64); len]);
            }
            Op::Bce { logits, targets } => {
                let z = val(*logits);
                let scale = g[0] / T::from_f64(z.len() as f64);
                send(
                    *logits,
                    z.iter().zip(targets).map(|(&zi, &t)| (sigmoid_scalar(zi) - t) * scale).collect(),
                );
            }
        }
    }
}
