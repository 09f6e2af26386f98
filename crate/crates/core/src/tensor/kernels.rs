//! Slice-level compute kernels behind the tape operations.
//!
//! Convolution lowers each image to a column matrix (im2col) and runs one
//! GEMM per image. Work is split across images with rayon; any reduction
//! over images (weight gradients) is summed over fixed-size chunks in a
//! fixed order, so results do not depend on the number of worker threads.

use rayon::prelude::*;

use super::Scalar;

/// Images per reduction chunk in the convolution backward pass.
const REDUCE_CHUNK: usize = 8;

/// Resolved geometry of one 2-D convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

/// Output extent `floor((len + 2p - d(k-1) - 1)/s) + 1`, or `None` when it would be < 1.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, dilation: usize, padding: usize) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    let padded = len + 2 * padding;
    if padded < span || stride == 0 {
        return None;
    }
    Some((padded - span) / stride + 1)
}

impl ConvGeometry {
    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn out_plane(&self) -> usize {
        self.out_height * self.out_width
    }

    fn in_image(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    fn out_image(&self) -> usize {
        self.out_channels * self.out_plane()
    }

    /// A 1x1, stride 1, unpadded convolution reads the input as its own column matrix.
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    /// Range of output columns whose sampled input column lies inside the image.
    fn valid_range(&self, offset: isize, out_len: usize, in_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        // smallest o with o*s + offset >= 0
        let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
        // largest o with o*s + offset <= in_len - 1
        let last = in_len as isize - 1 - offset;
        let hi = if last < 0 { 0 } else { (last / s + 1).min(out_len as isize) };
        let lo = lo.min(out_len as isize) as usize;
        (lo, (hi as usize).max(lo))
    }
}

/// Target size of one column tile in elements (about 256 KiB of `f32`).
const TILE_ELEMS: usize = 64 * 1024;

impl ConvGeometry {
    /// Output rows per column tile, at least one.
    fn tile_rows(&self) -> usize {
        (TILE_ELEMS / (self.col_rows() * self.out_width).max(1)).clamp(1, self.out_height.max(1))
    }
}

/// Lowers one image `[C, H, W]` into `cols` of shape `[C*k*k, Ho*Wo]`.
pub fn im2col<T: Scalar>(g: &ConvGeometry, image: &[T], cols: &mut [T]) {
    im2col_rows(g, image, 0, g.out_height, cols);
}

/// Scatters-and-adds a column matrix back into an image gradient (adjoint of [`im2col`]).
pub fn col2im<T: Scalar>(g: &ConvGeometry, cols: &[T], image: &mut [T]) {
    col2im_rows(g, cols, 0, g.out_height, image);
}

/// [`im2col`] restricted to output rows `oy0..oy1`; `cols` is `[C*k*k, (oy1-oy0)*Wo]`.
fn im2col_rows<T: Scalar>(g: &ConvGeometry, image: &[T], oy0: usize, oy1: usize, cols: &mut [T]) {
    let k = g.kernel;
    let tile = (oy1 - oy0) * g.out_width;
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let src = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * tile..(row + 1) * tile];
                let x_off = (kj * g.dilation) as isize - pad;
                let (x_lo, x_hi) = g.valid_range(x_off, g.out_width, g.width);
                for oy in oy0..oy1 {
                    let iy = (oy * g.stride + ki * g.dilation) as isize - pad;
                    let out_row = &mut dst[(oy - oy0) * g.out_width..(oy - oy0 + 1) * g.out_width];
                    if iy < 0 || iy >= g.height as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.width..(iy as usize + 1) * g.width];
                    out_row[..x_lo].fill(T::zero());
                    out_row[x_hi..].fill(T::zero());
                    if g.stride == 1 {
                        let a = (x_lo as isize + x_off) as usize;
                        out_row[x_lo..x_hi].copy_from_slice(&src_row[a..a + (x_hi - x_lo)]);
                    } else {
                        for ox in x_lo..x_hi {
                            out_row[ox] = src_row[(ox as isize * g.stride as isize + x_off) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_rows`].
fn col2im_rows<T: Scalar>(g: &ConvGeometry, cols: &[T], oy0: usize, oy1: usize, image: &mut [T]) {
    let k = g.kernel;
    let tile = (oy1 - oy0) * g.out_width;
    let pad = g.padding as isize;
    for c in 0..g.in_channels {
        let dst = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * tile..(row + 1) * tile];
                let x_off = (kj * g.dilation) as isize - pad;
                let (x_lo, x_hi) = g.valid_range(x_off, g.out_width, g.width);
                for oy in oy0..oy1 {
                    let iy = (oy * g.stride + ki * g.dilation) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let src_row = &src[(oy - oy0) * g.out_width..(oy - oy0 + 1) * g.out_width];
                    if g.stride == 1 {
                        let a = (x_lo as isize + x_off) as usize;
                        for (d, &v) in dst_row[a..a + (x_hi - x_lo)].iter_mut().zip(&src_row[x_lo..x_hi]) {
                            *d += v;
                        }
                    } else {
                        for ox in x_lo..x_hi {
                            dst_row[(ox as isize * g.stride as isize + x_off) as usize] += src_row[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution forward: `out[n] = weight * im2col(input[n]) + bias`.
pub fn conv2d_forward<T: Scalar>(g: &ConvGeometry, input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); g.batch * g.out_image()];
    let plane = g.out_plane();
    let rows = g.col_rows();
    let step = g.tile_rows();
    out.par_chunks_mut(g.out_image())
        .zip(input.par_chunks(g.in_image()))
        .for_each(|(o, x)| {
            for (co, row) in o.chunks_mut(plane).enumerate() {
                row.fill(bias[co]);
            }
            if g.is_pointwise() {
                T::gemm(false, false, g.out_channels, plane, g.in_channels, T::one(), weight, x, T::one(), o);
                return;
            }
            let mut cols = vec![T::zero(); rows * step * g.out_width];
            for oy0 in (0..g.out_height).step_by(step) {
                let oy1 = (oy0 + step).min(g.out_height);
                let tile = (oy1 - oy0) * g.out_width;
                im2col_rows(g, x, oy0, oy1, &mut cols[..rows * tile]);
                let c = &mut o[oy0 * g.out_width..];
                T::gemm_ld(false, false, g.out_channels, tile, rows, T::one(), weight, rows, &cols, tile, T::one(), c, plane);
            }
        });
    out
}

/// Gradients of a convolution. `grad_input` is skipped when `need_input` is false.
pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    need_input: bool,
) -> ConvGrads<T> {
    let plane = g.out_plane();
    let rows = g.col_rows();
    let wlen = g.out_channels * rows;
    let step = g.tile_rows();

    let mut grad_input = if need_input {
        Some(vec![T::zero(); g.batch * g.in_image()])
    } else {
        None
    };

    let images: Vec<usize> = (0..g.batch).collect();
    let chunk_index: Vec<&[usize]> = images.chunks(REDUCE_CHUNK).collect();

    // per-chunk weight/bias partials; input gradients are written per image
    let partials: Vec<(Vec<T>, Vec<T>, Vec<(usize, Vec<T>)>)> = chunk_index
        .par_iter()
        .map(|chunk| {
            let mut gw = vec![T::zero(); wlen];
            let mut gb = vec![T::zero(); g.out_channels];
            let mut gx_list = Vec::new();
            let tile_cap = if g.is_pointwise() { 0 } else { rows * step * g.out_width };
            let mut cols = vec![T::zero(); tile_cap];
            let mut dcols = vec![T::zero(); if need_input { tile_cap } else { 0 }];
            for &n in chunk.iter() {
                let x = &input[n * g.in_image()..(n + 1) * g.in_image()];
                let dy = &grad_out[n * g.out_image()..(n + 1) * g.out_image()];
                for (co, row) in dy.chunks(plane).enumerate() {
                    gb[co] += lane_sum(row, |v| v);
                }
                let mut gx = if need_input { vec![T::zero(); g.in_image()] } else { Vec::new() };
                if g.is_pointwise() {
                    // dW += dY (Cout x P) * X^T (P x Cin)
                    T::gemm(false, true, g.out_channels, rows, plane, T::one(), dy, x, T::one(), &mut gw);
                    if need_input {
                        T::gemm(true, false, rows, plane, g.out_channels, T::one(), weight, dy, T::zero(), &mut gx);
                    }
                } else {
                    for oy0 in (0..g.out_height).step_by(step) {
                        let oy1 = (oy0 + step).min(g.out_height);
                        let tile = (oy1 - oy0) * g.out_width;
                        let dy_tile = &dy[oy0 * g.out_width..];
                        im2col_rows(g, x, oy0, oy1, &mut cols[..rows * tile]);
                        T::gemm_ld(false, true, g.out_channels, rows, tile, T::one(), dy_tile, plane, &cols, tile, T::one(), &mut gw, rows);
                        if need_input {
                            let dc = &mut dcols[..rows * tile];
                            T::gemm_ld(true, false, rows, tile, g.out_channels, T::one(), weight, rows, dy_tile, plane, T::zero(), dc, tile);
                            col2im_rows(g, dc, oy0, oy1, &mut gx);
                        }
                    }
                }
                if need_input {
                    gx_list.push((n, gx));
                }
            }
            (gw, gb, gx_list)
        })
        .collect();

    let mut grad_weight = vec![T::zero(); wlen];
    let mut grad_bias = vec![T::zero(); g.out_channels];
    for (gw, gb, gx_list) in partials {
        grad_weight.iter_mut().zip(&gw).for_each(|(a, &b)| *a += b);
        grad_bias.iter_mut().zip(&gb).for_each(|(a, &b)| *a += b);
        if let Some(buf) = grad_input.as_mut() {
            for (n, gx) in gx_list {
                buf[n * g.in_image()..(n + 1) * g.in_image()].copy_from_slice(&gx);
            }
        }
    }
    ConvGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    }
}

const LANES: usize = 8;

/// `sum f(x_i)` with eight independent accumulators, combined in a fixed order.
#[inline]
pub(crate) fn lane_sum<T: Scalar>(xs: &[T], f: impl Fn(T) -> T) -> T {
    let mut acc = [T::zero(); LANES];
    let chunks = xs.chunks_exact(LANES);
    let tail = chunks.remainder().iter().fold(T::zero(), |a, &v| a + f(v));
    for c in chunks {
        for (a, &v) in acc.iter_mut().zip(c) {
            *a += f(v);
        }
    }
    acc.iter().fold(tail, |s, &a| s + a)
}

/// `(sum a_i, sum a_i b_i)` with lane accumulators.
#[inline]
pub(crate) fn lane_sum_and_dot<T: Scalar>(a: &[T], b: &[T]) -> (T, T) {
    let mut s = [T::zero(); LANES];
    let mut d = [T::zero(); LANES];
    let n = a.len() - a.len() % LANES;
    for (ca, cb) in a[..n].chunks_exact(LANES).zip(b[..n].chunks_exact(LANES)) {
        for i in 0..LANES {
            s[i] += ca[i];
            d[i] += ca[i] * cb[i];
        }
    }
    let (mut ts, mut td) = (T::zero(), T::zero());
    for (&x, &y) in a[n..].iter().zip(&b[n..]) {
        ts += x;
        td += x * y;
    }
    (s.iter().fold(ts, |acc, &v| acc + v), d.iter().fold(td, |acc, &v| acc + v))
}

/// Per-channel mean and biased variance over N, H, W. Each plane is summed
/// in `T` and the plane sums are combined in `f64`.
pub fn channel_moments<T: Scalar>(x: &[T], n: usize, c: usize, plane: usize) -> (Vec<f64>, Vec<f64>) {
    let count = (n * plane) as f64;
    let mut mean = vec![0.0f64; c];
    for b in 0..n {
        for (ch, m) in mean.iter_mut().enumerate() {
            let off = (b * c + ch) * plane;
            *m += lane_sum(&x[off..off + plane], |v| v).as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0f64; c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let m = T::from_f64(mean[ch]);
            var[ch] += lane_sum(&x[off..off + plane], |v| (v - m) * (v - m)).as_f64();
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_len_formula() {
        assert_eq!(conv_out_len(5, 3, 1, 2, 2), Some(5));
        assert_eq!(conv_out_len(3, 3, 1, 1, 0), Some(1));
        assert_eq!(conv_out_len(2, 3, 1, 2, 0), None);
        assert_eq!(conv_out_len(7, 3, 2, 1, 1), Some(4));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeometry {
            batch: 1,
            in_channels: 2,
            height: 5,
            width: 4,
            out_channels: 1,
            kernel: 3,
            stride: 2,
            dilation: 2,
            padding: 2,
            out_height: conv_out_len(5, 3, 2, 2, 2).unwrap(),
            out_width: conv_out_len(4, 3, 2, 2, 2).unwrap(),
        };
        let x: Vec<f64> = (0..g.in_image()).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..g.col_rows() * g.out_plane()).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&g, &x, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&g, &y, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
