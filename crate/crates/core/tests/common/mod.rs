//! Reference implementations used as test oracles.
//!
//! Everything here is written from the definitions, in plain loops with wide
//! accumulators, and shares no code with the library kernels.
#![allow(dead_code)]

use bitserial::convolution::ConvShape;
use bitserial::{LevelMatrix, QuantParams};
use rand::Rng;

pub fn random_levels<R: Rng>(rng: &mut R, rows: usize, cols: usize, bits: u8) -> LevelMatrix {
    let top = ((1u16 << bits) - 1) as u8;
    let levels = (0..rows * cols).map(|_| rng.random_range(0..=top)).collect();
    LevelMatrix::new(rows, cols, bits, levels).unwrap()
}

/// `C[i][j] = sum_t A[i][t] * B[j][t]` over levels, with checked i64 arithmetic.
pub fn level_gemm(a: &LevelMatrix, b: &LevelMatrix) -> Vec<i64> {
    assert_eq!(a.cols(), b.cols());
    let mut c = vec![0i64; a.rows() * b.rows()];
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            let mut acc = 0i64;
            for t in 0..a.cols() {
                acc = acc.checked_add(a.get(i, t) as i64 * b.get(j, t) as i64).expect("oracle overflow");
            }
            c[i * b.rows() + j] = acc;
        }
    }
    c
}

/// Exact dequantization in f64: `offset + scale * level`.
pub fn dequant_f64(levels: &LevelMatrix, params: QuantParams) -> Vec<f64> {
    levels.levels().iter().map(|&l| params.offset() as f64 + params.scale() as f64 * l as f64).collect()
}

/// `C = A * B^T` for row-major `A` (m x k) and `B` (n x k), f64 throughout.
pub fn real_gemm_abt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            c[i * n + j] = (0..k).map(|t| a[i * k + t] * b[j * k + t]).sum();
        }
    }
    c
}

/// Direct convolution over a `C_in x S x S` input and `C_out x (C_in k k)`
/// weights in `(channel, ky, kx)` order. Out-of-bounds taps read `pad_value`.
pub fn direct_conv(input: &[f64], weights: &[f64], shape: &ConvShape, pad_value: f64) -> Vec<f64> {
    let (s, k) = (shape.spatial as isize, shape.kernel);
    let out = shape.out_spatial();
    let mut result = vec![0.0; shape.out_channels * out * out];
    for co in 0..shape.out_channels {
        for oy in 0..out {
            for ox in 0..out {
                let mut acc = 0.0;
                for ci in 0..shape.in_channels {
                    for ky in 0..k {
                        for kx in 0..k {
                            let y = (oy * shape.stride + ky) as isize - shape.pad as isize;
                            let x = (ox * shape.stride + kx) as isize - shape.pad as isize;
                            let v = if y >= 0 && y < s && x >= 0 && x < s {
                                input[(ci * shape.spatial + y as usize) * shape.spatial + x as usize]
                            } else {
                                pad_value
                            };
                            acc += v * weights[co * shape.patch_len() + (ci * k + ky) * k + kx];
                        }
                    }
                }
                result[(co * out + oy) * out + ox] = acc;
            }
        }
    }
    result
}

/// `max |got - want| / max |want|`; absolute error when `want` is all zero.
pub fn normwise_rel_err(got: &[f32], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let err = got.iter().zip(want).map(|(&g, &w)| (g as f64 - w).abs()).fold(0.0, f64::max);
    let scale = want.iter().map(|w| w.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        err
    } else {
        err / scale
    }
}

/// Sorted samples with prefix sums, for fast quantizer MSE evaluation.
pub struct SortedSamples {
    xs: Vec<f64>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl SortedSamples {
    pub fn new(samples: &[f32]) -> Self {
        let mut xs: Vec<f64> = samples.iter().map(|&v| v as f64).collect();
        xs.sort_by(f64::total_cmp);
        let mut sum = vec![0.0];
        let mut sum_sq = vec![0.0];
        for &x in &xs {
            sum.push(sum.last().unwrap() + x);
            sum_sq.push(sum_sq.last().unwrap() + x * x);
        }
        Self { xs, sum, sum_sq }
    }

    /// MSE of the nearest-level uniform quantizer `offset + scale * L`,
    /// `L in 0..=2^bits - 1`, over all samples.
    pub fn mse(&self, offset: f64, scale: f64, bits: u8) -> f64 {
        let max = (1u32 << bits) - 1;
        let n = self.xs.len();
        let mut total = 0.0;
        let mut lo = 0;
        for level in 0..=max {
            let hi = if level == max {
                n
            } else {
                let threshold = offset + (level as f64 + 0.5) * scale;
                self.xs.partition_point(|&x| x < threshold)
            };
            if hi > lo {
                let q = offset + level as f64 * scale;
                let count = (hi - lo) as f64;
                let s1 = self.sum[hi] - self.sum[lo];
                let s2 = self.sum_sq[hi] - self.sum_sq[lo];
                total += s2 - 2.0 * q * s1 + count * q * q;
            }
            lo = hi.max(lo);
        }
        total / n as f64
    }

    /// Exhaustive search over an `offset x scale` grid; returns `(mse, offset, scale)`.
    pub fn grid_search(&self, bits: u8, offsets: (f64, f64), scales: (f64, f64), steps: usize) -> (f64, f64, f64) {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=steps {
            let offset = offsets.0 + (offsets.1 - offsets.0) * i as f64 / steps as f64;
            for j in 0..=steps {
                let scale = scales.0 + (scales.1 - scales.0) * j as f64 / steps as f64;
                let mse = self.mse(offset, scale, bits);
                if mse < best.0 {
                    best = (mse, offset, scale);
                }
            }
        }
        best
    }
}
