//! Reference implementations the bitserial path is compared against.
//!
//! These are honest references, not tuned competitors: a naive and a
//! cache-blocked float32 GEMM, a zero-point int8 GEMM with 32-bit
//! accumulation, a direct convolution used as the correctness oracle, and a
//! Winograd F(2x2, 3x3) convolution with cached filter transforms.

mod winograd;

pub use winograd::{winograd_conv_3x3, WinogradConv, WinogradFilters};

use crate::convolution::{lower, ConvShape};
use crate::error::{Error, Result};
use crate::matrix::{Matrix, Tensor3};

fn check_inner(a_cols: usize, b_rows: usize) -> Result<()> {
    if a_cols != b_rows {
        return Err(Error::Shape(format!("inner dimensions differ: {a_cols} vs {b_rows}")));
    }
    Ok(())
}

/// `A (M x K) * B (K x N)`, triple loop.
pub fn gemm_f32_ref(a: &Matrix<f32>, b: &Matrix<f32>) -> Result<Matrix<f32>> {
    check_inner(a.cols(), b.rows())?;
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    Ok(Matrix::from_fn(m, n, |i, j| {
        let mut acc = 0.0f32;
        for t in 0..k {
            acc += a.get(i, t) * b.get(t, j);
        }
        acc
    }))
}

const BLOCK_K: usize = 128;
const BLOCK_N: usize = 256;

/// Cache-blocked `A * B`. Each output sums its terms in the same `t` order as
/// [`gemm_f32_ref`], so the two agree bit for bit.
pub fn gemm_f32_blocked(a: &Matrix<f32>, b: &Matrix<f32>) -> Result<Matrix<f32>> {
    check_inner(a.cols(), b.rows())?;
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut c = vec![0.0f32; m * n];
    let (a, b) = (a.as_slice(), b.as_slice());
    for kb in (0..k).step_by(BLOCK_K) {
        let k_end = (kb + BLOCK_K).min(k);
        for nb in (0..n).step_by(BLOCK_N) {
            let n_end = (nb + BLOCK_N).min(n);
            for i in 0..m {
                let c_row = &mut c[i * n + nb..i * n + n_end];
                for t in kb..k_end {
                    let av = a[i * k + t];
                    let b_row = &b[t * n + nb..t * n + n_end];
                    for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                        *cv += av * bv;
                    }
                }
            }
        }
    }
    Matrix::new(m, n, c)
}

/// Reduction lengths at or beyond this could overflow the 32-bit accumulator.
pub const I8_MAX_K: usize = 1 << 15;

/// Zero-point int8 GEMM: `out[i][j] = sum_t (A[i][t] - a_zero) (B[j][t] - b_zero)`.
///
/// `B` is `N x K` (rows are output channels). Exact in i32 for `K < 2^15`.
pub fn gemm_i8_i32(a: &Matrix<i8>, a_zero: i32, b: &Matrix<i8>, b_zero: i32) -> Result<Matrix<i32>> {
    if a.cols() != b.cols() {
        return Err(Error::Shape(format!("reduction lengths differ: {} vs {}", a.cols(), b.cols())));
    }
    for zero in [a_zero, b_zero] {
        if !(i8::MIN as i32..=i8::MAX as i32).contains(&zero) {
            return Err(Error::InvalidParams(format!("zero point {zero} outside int8 range")));
        }
    }
    if a.cols() >= I8_MAX_K {
        return Err(Error::OverflowRisk { worst_case: 255 * 255 * a.cols() as u128 });
    }
    let k = a.cols();
    let shift = |row: &[i8], zero: i32| -> Vec<i16> { row.iter().map(|&v| (v as i32 - zero) as i16).collect() };
    let b_shifted: Vec<Vec<i16>> = (0..b.rows()).map(|j| shift(b.row(j), b_zero)).collect();
    let mut out = Vec::with_capacity(a.rows() * b.rows());
    for i in 0..a.rows() {
        let a_row = shift(a.row(i), a_zero);
        for b_row in &b_shifted {
            let mut acc = 0i32;
            for t in 0..k {
                acc += a_row[t] as i32 * b_row[t] as i32;
            }
            out.push(acc);
        }
    }
    Matrix::new(a.rows(), b.rows(), out)
}

/// Direct convolution, the oracle for every conv path.
///
/// `weights` is `C_out x (C_in * k * k)` in `(channel, ky, kx)` order. Out-of-
/// bounds input positions read `pad_value`. Accumulates in f64.
pub fn conv_f32_direct(input: &Tensor3, weights: &Matrix<f32>, shape: &ConvShape, pad_value: f32) -> Result<Tensor3> {
    if input.channels != shape.in_channels || input.height != shape.spatial || input.width != shape.spatial {
        return Err(Error::Shape(format!(
            "input {}x{}x{} does not match {shape:?}",
            input.channels, input.height, input.width
        )));
    }
    if weights.rows() != shape.out_channels || weights.cols() != shape.patch_len() {
        return Err(Error::Shape(format!(
            "weights {}x{} do not match {shape:?}",
            weights.rows(),
            weights.cols()
        )));
    }
    let (s, k) = (shape.spatial as isize, shape.kernel);
    let out = shape.out_spatial();
    let mut result = Tensor3::zeros(shape.out_channels, out, out);
    for co in 0..shape.out_channels {
        for oy in 0..out {
            for ox in 0..out {
                let mut acc = 0.0f64;
                for ci in 0..shape.in_channels {
                    for ky in 0..k {
                        for kx in 0..k {
                            let y = (oy * shape.stride + ky) as isize - shape.pad as isize;
                            let x = (ox * shape.stride + kx) as isize - shape.pad as isize;
                            let v = if y >= 0 && y < s && x >= 0 && x < s {
                                input.get(ci, y as usize, x as usize)
                            } else {
                                pad_value
                            };
                            acc += v as f64 * weights.get(co, (ci * k + ky) * k + kx) as f64;
                        }
                    }
                }
                result.set(co, oy, ox, acc as f32);
            }
        }
    }
    Ok(result)
}

/// im2col lowering for int8 tensors (`C x S x S`), padding with `pad_value`.
pub fn im2col_i8(input: &[i8], shape: &ConvShape, pad_value: i8) -> Result<Matrix<i8>> {
    if input.len() != shape.in_channels * shape.spatial * shape.spatial {
        return Err(Error::Shape(format!("int8 input of {} values does not match {shape:?}", input.len())));
    }
    let out = shape.out_spatial();
    Matrix::new(out * out, shape.patch_len(), lower(input, shape, pad_value))
}
