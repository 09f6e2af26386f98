use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Element type of a tensor: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    Float + Default + Debug + Display + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `e^x` for `x <= 0`. The `f32` version is a branch-free polynomial
    /// that the compiler can vectorize; `f64` defers to the standard library.
    fn exp_nonpositive(self) -> Self;

    /// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
    ///
    /// `op(a)` is `m x k`, `op(b)` is `k x n`, `c` is `m x n`. With
    /// `trans_a` the buffer `a` holds a `k x m` matrix, likewise for `b`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        trans_a: bool,
        trans_b: bool,
        m: usize,
        n: usize,
        k: usize,
        alpha: Self,
        a: &[Self],
        b: &[Self],
        beta: Self,
        c: &mut [Self],
    ) {
        let lda = if trans_a { m } else { k };
        let ldb = if trans_b { k } else { n };
        Self::gemm_ld(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, n);
    }

    /// [`Scalar::gemm`] with explicit leading dimensions (row strides) for
    /// the stored matrices, so sub-blocks of wider buffers can be used.
    #[allow(clippy::too_many_arguments)]
    fn gemm_ld(
        trans_a: bool,
        trans_b: bool,
        m: usize,
        n: usize,
        k: usize,
        alpha: Self,
        a: &[Self],
        lda: usize,
        b: &[Self],
        ldb: usize,
        beta: Self,
        c: &mut [Self],
        ldc: usize,
    );
}

/// Elements a stored `rows x cols` matrix with row stride `ld` spans.
fn span(rows: usize, cols: usize, ld: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * ld + cols
    }
}

// Cephes-style single precision exp: range reduction by ln 2, degree-5 polynomial.
#[inline(always)]
fn exp_nonpositive_f32(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    const ROUND: f32 = 12_582_912.0; // 1.5 * 2^23
    let x = if x < -87.0 { -87.0 } else { x };
    let t = x * LOG2E + ROUND;
    let k = t - ROUND;
    // t has a fixed exponent here, so its low mantissa bits hold round(x * log2 e)
    let k_int = t.to_bits() as i32 - ROUND.to_bits() as i32;
    let r = x - k * LN2_HI - k * LN2_LO;
    let mut p = 1.987_569_1e-4f32;
    p = p * r + 1.398_2e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_5e-1;
    p = p * r + 5.000_000_1e-1;
    let poly = p * r * r + r + 1.0;
    let scale = f32::from_bits(((k_int + 127) as u32) << 23);
    poly * scale
}

fn strides(trans: bool, ld: usize) -> (isize, isize) {
    // (row stride, col stride) of op(X) for a stored matrix with row stride ld
    if trans {
        (1, ld as isize)
    } else {
        (ld as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path, $exp:expr) => {
        impl Scalar for $t {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            #[inline(always)]
            fn exp_nonpositive(self) -> Self {
                $exp(self)
            }

            fn gemm_ld(
                trans_a: bool,
                trans_b: bool,
                m: usize,
                n: usize,
                k: usize,
                alpha: Self,
                a: &[Self],
                lda: usize,
                b: &[Self],
                ldb: usize,
                beta: Self,
                c: &mut [Self],
                ldc: usize,
            ) {
                let (a_rows, a_cols) = if trans_a { (k, m) } else { (m, k) };
                let (b_rows, b_cols) = if trans_b { (n, k) } else { (k, n) };
                assert!(lda >= a_cols && ldb >= b_cols && ldc >= n, "gemm: leading dimension too small");
                assert!(a.len() >= span(a_rows, a_cols, lda), "gemm: lhs buffer too short");
                assert!(b.len() >= span(b_rows, b_cols, ldb), "gemm: rhs buffer too short");
                assert!(c.len() >= span(m, n, ldc), "gemm: output buffer too short");
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(trans_a, lda);
                let (rsb, csb) = strides(trans_b, ldb);
                // SAFETY: the asserts above bound every index the kernel touches
                // by the spans of the stored matrices.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        ldc as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm, exp_nonpositive_f32);
impl_scalar!(f64, matrixmultiply::dgemm, f64::exp);

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(ta: bool, tb: bool, m: usize, n: usize, k: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    let av = if ta { a[p * m + i] } else { a[i * k + p] };
                    let bv = if tb { b[j * k + p] } else { b[p * n + j] };
                    s += av * bv;
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn gemm_all_transpose_combinations() {
        let (m, n, k) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        for ta in [false, true] {
            for tb in [false, true] {
                let want = naive(ta, tb, m, n, k, &a, &b);
                let mut got = vec![1.0; m * n];
                f64::gemm(ta, tb, m, n, k, 1.0, &a, &b, 0.0, &mut got);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gemm_on_sub_block() {
        // c[:, 1..3] of a 2x4 buffer = a (2x3, stored with stride 5) * b (3x2)
        let a = [1.0, 2.0, 3.0, 9.0, 9.0, 4.0, 5.0, 6.0, 9.0, 9.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0f64; 8];
        f64::gemm_ld(false, false, 2, 2, 3, 1.0, &a, 5, &b, 2, 0.0, &mut c[1..], 4);
        assert_eq!(c, [0.0, 4.0, 5.0, 0.0, 0.0, 10.0, 11.0, 0.0]);
    }

    #[test]
    fn fast_exp_matches_std() {
        let mut worst = 0.0f64;
        for i in 0..=20_000 {
            let x = -(i as f32) * 0.0043;
            let got = x.exp_nonpositive() as f64;
            let want = (x as f64).exp();
            if want > 1e-30 {
                worst = worst.max(((got - want) / want).abs());
            }
        }
        assert!(worst < 4e-7, "relative error {worst}");
        assert!((-200.0f32).exp_nonpositive() >= 0.0);
        assert_eq!(0.0f32.exp_nonpositive(), 1.0);
    }
}
