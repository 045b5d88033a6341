//! Affine uniform quantizers.
//!
//! A quantizer with `bits` bits maps a real value onto one of `2^bits` levels
//! spaced `scale` apart starting at `offset`, so the representable range is
//! `[offset, offset + (2^bits - 1) * scale]`. Values outside the range clamp
//! to the end levels. Rounding is half-away-from-zero.
//!
//! [`fit_uniform_quantizer`] fits `(offset, scale)` to a sample set by Lloyd
//! alternation: assign every sample to its nearest level, then re-solve the
//! affine map by least squares over those assignments.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAX_BITS: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    bits: u8,
    offset: f32,
    scale: f32,
}

impl QuantParams {
    /// 1-bit `{-1, +1}` code: level 0 is -1, level 1 is +1.
    pub const BIPOLAR: QuantParams = QuantParams { bits: 1, offset: -1.0, scale: 2.0 };

    pub fn new(bits: u8, offset: f32, scale: f32) -> Result<Self> {
        if !(1..=MAX_BITS).contains(&bits) {
            return Err(Error::InvalidParams(format!("bits must be in 1..=8, got {bits}")));
        }
        if !offset.is_finite() {
            return Err(Error::InvalidParams(format!("offset must be finite, got {offset}")));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidParams(format!("scale must be finite and > 0, got {scale}")));
        }
        Ok(Self { bits, offset, scale })
    }

    /// Offset 0, scale 1: levels dequantize to themselves.
    pub fn identity(bits: u8) -> Result<Self> {
        Self::new(bits, 0.0, 1.0)
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn offset(&self) -> f32 {
        self.offset
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn max_level(&self) -> u8 {
        max_level(self.bits) as u8
    }

    /// Inclusive dequantized range `[offset, offset + (2^bits - 1) * scale]`.
    pub fn range(&self) -> (f64, f64) {
        let lo = self.offset as f64;
        (lo, lo + self.max_level() as f64 * self.scale as f64)
    }

    /// Level of a single finite value.
    #[inline]
    pub fn quantize_value(&self, v: f32) -> u8 {
        nearest_level(v as f64, self.offset as f64, self.scale as f64, self.max_level() as u32) as u8
    }

    #[inline]
    pub fn dequantize_level(&self, level: u8) -> f32 {
        (self.offset as f64 + self.scale as f64 * level as f64) as f32
    }
}

#[inline]
pub(crate) fn max_level(bits: u8) -> u32 {
    (1u32 << bits) - 1
}

/// Nearest level in `0..=max`, i.e. `clamp(round_half_away(( x - offset) / scale))`.
///
/// Evaluated against the decision thresholds `offset + (L - 0.5) * scale` so
/// that thresholds which are exactly representable (0 for the bipolar code)
/// are honored regardless of rounding in the division.
#[inline]
fn nearest_level(x: f64, offset: f64, scale: f64, max: u32) -> u32 {
    let estimate = ((x - offset) / scale).round().clamp(0.0, max as f64);
    let mut level = estimate as u32;
    while level < max && x >= offset + (level as f64 + 0.5) * scale {
        level += 1;
    }
    while level > 0 && x < offset + (level as f64 - 0.5) * scale {
        level -= 1;
    }
    level
}

pub(crate) fn check_finite(values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index, value: values[index] }),
        None => Ok(()),
    }
}

/// Dense matrix of quantization levels, each `< 2^bits`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelMatrix {
    rows: usize,
    cols: usize,
    bits: u8,
    levels: Vec<u8>,
}

impl LevelMatrix {
    pub fn new(rows: usize, cols: usize, bits: u8, levels: Vec<u8>) -> Result<Self> {
        if !(1..=MAX_BITS).contains(&bits) {
            return Err(Error::InvalidParams(format!("bits must be in 1..=8, got {bits}")));
        }
        if rows.checked_mul(cols) != Some(levels.len()) {
            return Err(Error::Shape(format!(
                "{rows}x{cols} level matrix needs {} levels, got {}",
                rows.saturating_mul(cols),
                levels.len()
            )));
        }
        let max = max_level(bits);
        if let Some(index) = levels.iter().position(|&l| l as u32 > max) {
            return Err(Error::CorruptLevel { index, level: levels[index], bits });
        }
        Ok(Self { rows, cols, bits, levels })
    }

    pub fn zeros(rows: usize, cols: usize, bits: u8) -> Result<Self> {
        Self::new(rows, cols, bits, vec![0; rows * cols])
    }

    /// Skips the level-range check. Used by packing to report corrupt input itself.
    pub(crate) fn from_parts_unchecked(rows: usize, cols: usize, bits: u8, levels: Vec<u8>) -> Self {
        Self { rows, cols, bits, levels }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.levels[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.levels[i * self.cols + j]
    }
}

pub fn quantize_uniform(values: &Matrix<f32>, params: QuantParams) -> Result<LevelMatrix> {
    check_finite(values.as_slice())?;
    let levels = values.as_slice().iter().map(|&v| params.quantize_value(v)).collect();
    Ok(LevelMatrix::from_parts_unchecked(values.rows(), values.cols(), params.bits, levels))
}

pub fn dequantize(levels: &LevelMatrix, params: QuantParams) -> Result<Matrix<f32>> {
    if levels.bits != params.bits {
        return Err(Error::Shape(format!(
            "level matrix has {} bits but params have {}",
            levels.bits, params.bits
        )));
    }
    let data = levels.levels.iter().map(|&l| params.dequantize_level(l)).collect();
    Matrix::new(levels.rows, levels.cols, data)
}

/// Result of [`fit_uniform_quantizer`].
#[derive(Debug, Clone)]
pub struct QuantFit {
    pub params: QuantParams,
    /// Empirical MSE at initialization followed by one entry per accepted iteration.
    /// Non-increasing.
    pub mse_history: Vec<f64>,
    pub iterations: usize,
    /// True when the level assignments stopped changing before `max_iters`.
    pub converged: bool,
}

impl QuantFit {
    pub fn final_mse(&self) -> f64 {
        *self.mse_history.last().expect("history holds at least the initial MSE")
    }
}

/// Fits `(offset, scale)` for a `bits`-bit uniform quantizer by Lloyd alternation.
///
/// Initialization is `offset = max(min(samples), 0)`,
/// `scale = (p99(samples) - offset) / (2^bits - 1)`; if that leaves no positive
/// span the full `[min, max]` range is used instead.
pub fn fit_uniform_quantizer(samples: &[f32], bits: u8, max_iters: usize) -> Result<QuantFit> {
    if !(1..=MAX_BITS).contains(&bits) {
        return Err(Error::InvalidParams(format!("bits must be in 1..=8, got {bits}")));
    }
    if samples.is_empty() {
        return Err(Error::Degenerate("no samples".into()));
    }
    check_finite(samples)?;

    let xs: Vec<f64> = samples.iter().map(|&v| v as f64).collect();
    let mut sorted = xs.clone();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    if min == max {
        return Err(Error::Degenerate(format!("all {} samples equal {min}", samples.len())));
    }

    let top = max_level(bits);
    let p99 = sorted[(0.99 * sorted.len() as f64).ceil() as usize - 1];
    let mut offset = min.max(0.0);
    let mut scale = (p99 - offset) / top as f64;
    if !(scale > 0.0) {
        offset = min;
        scale = (max - min) / top as f64;
    }

    let assign = |offset: f64, scale: f64| -> Vec<u8> {
        xs.iter().map(|&x| nearest_level(x, offset, scale, top) as u8).collect()
    };
    let mse = |levels: &[u8], offset: f64, scale: f64| -> f64 {
        let sum: f64 = xs
            .iter()
            .zip(levels)
            .map(|(&x, &l)| {
                let e = x - (offset + scale * l as f64);
                e * e
            })
            .sum();
        sum / xs.len() as f64
    };

    let mut levels = assign(offset, scale);
    let mut current = mse(&levels, offset, scale);
    let mut history = vec![current];
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..max_iters {
        let Some((next_offset, next_scale)) = least_squares_affine(&xs, &levels) else {
            break;
        };
        let next_levels = assign(next_offset, next_scale);
        let next_mse = mse(&next_levels, next_offset, next_scale);
        // Mathematically non-increasing; guards against float noise at the fixed point.
        if !(next_mse <= current) {
            break;
        }
        offset = next_offset;
        scale = next_scale;
        current = next_mse;
        history.push(current);
        iterations += 1;
        if next_levels == levels {
            converged = true;
            break;
        }
        levels = next_levels;
    }

    Ok(QuantFit {
        params: QuantParams::new(bits, offset as f32, scale as f32)?,
        mse_history: history,
        iterations,
        converged,
    })
}

/// Least-squares `x ~ offset + scale * level`. `None` when the assignment has a
/// single distinct level or the slope is not positive.
fn least_squares_affine(xs: &[f64], levels: &[u8]) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    let mean_l = levels.iter().map(|&l| l as f64).sum::<f64>() / n;
    let mean_x = xs.iter().sum::<f64>() / n;
    let (mut cov, mut var) = (0.0, 0.0);
    for (&x, &l) in xs.iter().zip(levels) {
        let dl = l as f64 - mean_l;
        cov += dl * (x - mean_x);
        var += dl * dl;
    }
    if var == 0.0 {
        return None;
    }
    let scale = cov / var;
    if !(scale > 0.0 && scale.is_finite()) {
        return None;
    }
    Some((mean_x - scale * mean_l, scale))
}
