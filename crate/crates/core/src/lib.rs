//! Fuzzy sigmoid convolution (FSC) networks for binary image classification.
//!
//! The crate is self-contained: a small dense tensor engine with
//! reverse-mode autodiff ([`tensor`]), the FSC layer and the TOFU/MOFU
//! blocks built on it ([`nn`]), binary cross-entropy training with
//! adaptive-moment updates ([`optim`]), the image pipeline ([`data`]),
//! seeded perturbations for robustness runs ([`robustness`]) and
//! confusion-matrix metrics ([`metrics`]).

pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod robustness;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use tensor::{BatchNormState, ConvSpec, GradTape, Scalar, Tensor, Var};
