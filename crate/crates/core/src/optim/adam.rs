use crate::error::{Error, Result};
use crate::nn::{Module, TensorRole};
use crate::tensor::{Scalar, Tensor};

/// Adaptive-moment optimizer state: one first/second moment tensor per
/// trainable parameter, in the module's visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T> {
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub names: Vec<String>,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimState<T> {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    /// Zeroed moments for every trainable tensor of `params`.
    pub fn new<M: Module<T>>(params: &M, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {learning_rate}")));
        }
        let mut names = Vec::new();
        let mut moments = Vec::new();
        let mut err = None;
        params.visit("", &mut |name, t, role| {
            if role == TensorRole::Trainable {
                names.push(name.to_string());
                match Tensor::zeros(t.shape().to_vec()) {
                    Ok(z) => moments.push(z),
                    Err(e) => err = Some(e),
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        Ok(Self {
            step_count: 0,
            learning_rate,
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            eps: Self::EPS,
            names,
            second_moment: moments.clone(),
            first_moment: moments,
        })
    }
}

/// One bias-corrected adaptive-moment update of every trainable tensor,
/// using the gradients stored on the tensors. Fails without touching any
/// parameter if a gradient is missing.
pub fn optimizer_step<T: Scalar, M: Module<T>>(params: &mut M, state: &mut OptimState<T>) -> Result<()> {
    let mut index = 0;
    let mut problem: Option<Error> = None;
    params.visit("", &mut |name, t, role| {
        if role != TensorRole::Trainable || problem.is_some() {
            return;
        }
        if state.names.get(index).map(String::as_str) != Some(name)
            || state.first_moment[index].shape() != t.shape()
        {
            problem = Some(Error::invalid(format!("optimizer state does not match parameter `{name}`")));
        } else if t.grad().is_none() {
            problem = Some(Error::MissingGradient(name.to_string()));
        }
        index += 1;
    });
    if let Some(e) = problem {
        return Err(e);
    }
    if index != state.names.len() {
        return Err(Error::invalid(format!(
            "optimizer tracks {} tensors, model has {index}",
            state.names.len()
        )));
    }

    state.step_count += 1;
    let t_step = state.step_count as i32;
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.eps, state.learning_rate);
    let bc1 = 1.0 - b1.powi(t_step);
    let bc2 = 1.0 - b2.powi(t_step);
    let mut index = 0;
    params.visit_mut("", &mut |_, t, role| {
        if role != TensorRole::Trainable {
            return;
        }
        let grad: Vec<T> = t.grad().expect("checked above").to_vec();
        let m = state.first_moment[index].data_mut();
        let v = state.second_moment[index].data_mut();
        for (k, p) in t.data_mut().iter_mut().enumerate() {
            let g = grad[k].as_f64();
            let mk = b1 * m[k].as_f64() + (1.0 - b1) * g;
            let vk = b2 * v[k].as_f64() + (1.0 - b2) * g * g;
            m[k] = T::from_f64(mk);
            v[k] = T::from_f64(vk);
            let update = lr * (mk / bc1) / ((vk / bc2).sqrt() + eps);
            *p = T::from_f64(p.as_f64() - update);
        }
        index += 1;
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LinearParams;
    use crate::rng::SeededRng;

    struct Scalar1(Tensor<f64>);

    impl Module<f64> for Scalar1 {
        fn visit<'a>(&'a self, _: &str, f: &mut dyn FnMut(&str, &'a Tensor<f64>, TensorRole)) {
            f("w", &self.0, TensorRole::Trainable);
        }
        fn visit_mut(&mut self, _: &str, f: &mut dyn FnMut(&str, &mut Tensor<f64>, TensorRole)) {
            f("w", &mut self.0, TensorRole::Trainable);
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Scalar1(Tensor::scalar(0.5));
        let mut st = OptimState::new(&p, 0.001).unwrap();
        p.0.accumulate_grad(&[1.0]);
        optimizer_step(&mut p, &mut st).unwrap();
        assert!((p.0.data()[0] - (0.5 - 0.001)).abs() < 1e-9);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut rng = SeededRng::new(2);
        let mut p = LinearParams::<f64>::new(3, 2, &mut rng).unwrap();
        let before = p.clone();
        let mut st = OptimState::new(&p, 0.01).unwrap();
        p.weight.accumulate_grad(&[0.0; 6]);
        p.bias.accumulate_grad(&[0.0; 2]);
        optimizer_step(&mut p, &mut st).unwrap();
        assert_eq!(p.weight.data(), before.weight.data());
        assert_eq!(p.bias.data(), before.bias.data());
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn missing_gradient_rejected_before_any_update() {
        let mut rng = SeededRng::new(2);
        let mut p = LinearParams::<f64>::new(3, 2, &mut rng).unwrap();
        let before = p.clone();
        let mut st = OptimState::new(&p, 0.01).unwrap();
        p.weight.accumulate_grad(&[1.0; 6]);
        let err = optimizer_step(&mut p, &mut st).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(ref n) if n == "bias"));
        assert_eq!(p.weight.data(), before.weight.data());
        assert_eq!(st.step_count, 0);
    }
}
