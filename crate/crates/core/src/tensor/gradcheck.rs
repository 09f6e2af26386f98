//! Central finite differences: the independent oracle for tape gradients.

use super::{Scalar, Tensor};

/// `(f(p + h e_i) - f(p - h e_i)) / 2h` for every coordinate of `params`.
pub fn finite_diff_grad<T, F>(mut f: F, params: &Tensor<T>, h: f64) -> Tensor<T>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> f64,
{
    let all: Vec<usize> = (0..params.len()).collect();
    let g = finite_diff_grad_at(&mut f, params, h, &all);
    Tensor::from_vec(params.shape().to_vec(), g.into_iter().map(T::from_f64).collect())
        .expect("gradient has the parameter shape")
}

/// Central differences at the listed flat coordinates only.
pub fn finite_diff_grad_at<T, F>(mut f: F, params: &Tensor<T>, h: f64, coords: &[usize]) -> Vec<f64>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> f64,
{
    let mut probe = params.clone();
    coords
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = T::from_f64(orig.as_f64() + h);
            let up = f(&probe);
            probe.data_mut()[i] = T::from_f64(orig.as_f64() - h);
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a|| + ||b||, tiny)`: scale-free disagreement of two gradient vectors.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-300)
}
