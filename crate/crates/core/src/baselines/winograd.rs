//! Winograd F(2x2, 3x3) convolution.
//!
//! Each 2x2 output tile is computed from a 4x4 input tile `d` and the 3x3
//! filter `g` as `A^T [ (G g G^T) . (B^T d B) ] A`, summed over input
//! channels in the transformed domain. Two twists on the textbook algorithm:
//!
//! - Transformed filters are cached per weight set, so repeated inference
//!   with the same weights never re-transforms them.
//! - Optionally, transformed input and filter tiles are rounded to IEEE
//!   half precision (round-to-nearest-even) before the elementwise product.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use half::f16;

use crate::convolution::ConvShape;
use crate::error::{Error, Result};
use crate::matrix::{Matrix, Tensor3};

const TILE: usize = 4;
const POSITIONS: usize = TILE * TILE;

#[inline]
fn round_half(x: f32) -> f32 {
    f16::from_f32(x).to_f32()
}

/// `G g G^T` for one 3x3 filter (row-major), as 16 values.
fn transform_filter(g: &[f32]) -> [f32; POSITIONS] {
    // G = [[1, 0, 0], [1/2, 1/2, 1/2], [1/2, -1/2, 1/2], [0, 0, 1]]
    let mut tmp = [[0.0f32; 3]; TILE];
    for c in 0..3 {
        let (g0, g1, g2) = (g[c], g[3 + c], g[6 + c]);
        tmp[0][c] = g0;
        tmp[1][c] = 0.5 * (g0 + g1 + g2);
        tmp[2][c] = 0.5 * (g0 - g1 + g2);
        tmp[3][c] = g2;
    }
    let mut u = [0.0f32; POSITIONS];
    for (r, t) in tmp.iter().enumerate() {
        u[r * TILE] = t[0];
        u[r * TILE + 1] = 0.5 * (t[0] + t[1] + t[2]);
        u[r * TILE + 2] = 0.5 * (t[0] - t[1] + t[2]);
        u[r * TILE + 3] = t[2];
    }
    u
}

/// `B^T d B` for one 4x4 input tile.
fn transform_input(d: &[f32; POSITIONS]) -> [f32; POSITIONS] {
    // B^T = [[1, 0, -1, 0], [0, 1, 1, 0], [0, -1, 1, 0], [0, 1, 0, -1]]
    let mut tmp = [0.0f32; POSITIONS];
    for c in 0..TILE {
        let (d0, d1, d2, d3) = (d[c], d[TILE + c], d[2 * TILE + c], d[3 * TILE + c]);
        tmp[c] = d0 - d2;
        tmp[TILE + c] = d1 + d2;
        tmp[2 * TILE + c] = d2 - d1;
        tmp[3 * TILE + c] = d1 - d3;
    }
    let mut v = [0.0f32; POSITIONS];
    for r in 0..TILE {
        let t = &tmp[r * TILE..(r + 1) * TILE];
        v[r * TILE] = t[0] - t[2];
        v[r * TILE + 1] = t[1] + t[2];
        v[r * TILE + 2] = t[2] - t[1];
        v[r * TILE + 3] = t[1] - t[3];
    }
    v
}

/// `A^T m A`, the 2x2 output tile.
fn transform_output(m: &[f32; POSITIONS]) -> [f32; 4] {
    // A^T = [[1, 1, 1, 0], [0, 1, -1, -1]]
    let mut tmp = [[0.0f32; TILE]; 2];
    for c in 0..TILE {
        let (m0, m1, m2, m3) = (m[c], m[TILE + c], m[2 * TILE + c], m[3 * TILE + c]);
        tmp[0][c] = m0 + m1 + m2;
        tmp[1][c] = m1 - m2 - m3;
    }
    let mut y = [0.0f32; 4];
    for (r, t) in tmp.iter().enumerate() {
        y[r * 2] = t[0] + t[1] + t[2];
        y[r * 2 + 1] = t[1] - t[2] - t[3];
    }
    y
}

fn check_shape(shape: &ConvShape) -> Result<()> {
    if shape.kernel != 3 || shape.stride != 1 || shape.pad != 1 {
        return Err(Error::Unsupported(format!(
            "Winograd F(2x2,3x3) needs a 3x3 kernel, stride 1, pad 1; got {shape:?}"
        )));
    }
    Ok(())
}

/// Transformed filter bank, laid out `[position][C_out][C_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WinogradFilters {
    out_channels: usize,
    in_channels: usize,
    half_precision: bool,
    u: Vec<f32>,
}

impl WinogradFilters {
    /// `weights` is `C_out x (C_in * 9)` in `(channel, ky, kx)` order.
    pub fn transform(weights: &Matrix<f32>, shape: &ConvShape, half_precision: bool) -> Result<Self> {
        check_shape(shape)?;
        if weights.rows() != shape.out_channels || weights.cols() != shape.patch_len() {
            return Err(Error::Shape(format!(
                "weights {}x{} do not match {shape:?}",
                weights.rows(),
                weights.cols()
            )));
        }
        let (c_out, c_in) = (shape.out_channels, shape.in_channels);
        let mut u = vec![0.0f32; POSITIONS * c_out * c_in];
        for co in 0..c_out {
            let row = weights.row(co);
            for ci in 0..c_in {
                let tu = transform_filter(&row[ci * 9..(ci + 1) * 9]);
                for (p, &val) in tu.iter().enumerate() {
                    u[(p * c_out + co) * c_in + ci] = if half_precision { round_half(val) } else { val };
                }
            }
        }
        Ok(Self { out_channels: c_out, in_channels: c_in, half_precision, u })
    }

    pub fn half_precision(&self) -> bool {
        self.half_precision
    }

    /// Runs the convolution on `input` (`C_in x S x S`, zero padding).
    pub fn apply(&self, input: &Tensor3) -> Result<Tensor3> {
        if input.channels != self.in_channels || input.height != input.width {
            return Err(Error::Shape(format!(
                "input {}x{}x{} does not match {} input channels",
                input.channels, input.height, input.width, self.in_channels
            )));
        }
        let s = input.height;
        let (c_in, c_out) = (self.in_channels, self.out_channels);
        let tiles = s.div_ceil(2);
        let mut out = Tensor3::zeros(c_out, s, s);
        let mut v = vec![0.0f32; POSITIONS * c_in];
        let mut m = [0.0f32; POSITIONS];

        for ty in 0..tiles {
            for tx in 0..tiles {
                for ci in 0..c_in {
                    let mut d = [0.0f32; POSITIONS];
                    for r in 0..TILE {
                        let y = (2 * ty + r) as isize - 1;
                        if y < 0 || y >= s as isize {
                            continue;
                        }
                        for c in 0..TILE {
                            let x = (2 * tx + c) as isize - 1;
                            if x >= 0 && x < s as isize {
                                d[r * TILE + c] = input.get(ci, y as usize, x as usize);
                            }
                        }
                    }
                    let tv = transform_input(&d);
                    for (p, &val) in tv.iter().enumerate() {
                        v[p * c_in + ci] = if self.half_precision { round_half(val) } else { val };
                    }
                }
                for co in 0..c_out {
                    for (p, mp) in m.iter_mut().enumerate() {
                        let u_row = &self.u[(p * c_out + co) * c_in..][..c_in];
                        let v_row = &v[p * c_in..(p + 1) * c_in];
                        *mp = u_row.iter().zip(v_row).map(|(a, b)| a * b).sum();
                    }
                    let y = transform_output(&m);
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let (oy, ox) = (2 * ty + dy, 2 * tx + dx);
                            if oy < s && ox < s {
                                out.set(co, oy, ox, y[dy * 2 + dx]);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Uncached F(2x2, 3x3) convolution: transforms the filters on every call.
pub fn winograd_conv_3x3(
    input: &Tensor3,
    weights: &Matrix<f32>,
    shape: &ConvShape,
    half_precision_intermediates: bool,
) -> Result<Tensor3> {
    check_input(input, shape)?;
    WinogradFilters::transform(weights, shape, half_precision_intermediates)?.apply(input)
}

fn check_input(input: &Tensor3, shape: &ConvShape) -> Result<()> {
    if input.channels != shape.in_channels || input.height != shape.spatial || input.width != shape.spatial {
        return Err(Error::Shape(format!(
            "input {}x{}x{} does not match {shape:?}",
            input.channels, input.height, input.width
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct FilterKey {
    out_channels: usize,
    in_channels: usize,
    half_precision: bool,
    weight_bits: Vec<u32>,
}

/// Winograd convolution with a filter-transform cache.
///
/// The cache is keyed by the exact weight values. Concurrent misses on the
/// same weights may each transform; the first insertion wins and the others
/// use it.
#[derive(Debug, Default)]
pub struct WinogradConv {
    cache: RwLock<HashMap<FilterKey, Arc<WinogradFilters>>>,
    transforms: AtomicUsize,
}

impl WinogradConv {
    pub fn new() -> Self {
        Self::default()
    }

    /// Total filter transforms performed so far.
    pub fn filter_transforms(&self) -> usize {
        self.transforms.load(Ordering::SeqCst)
    }

    /// Transformed filters for `weights`, from the cache when present.
    pub fn prepare(&self, weights: &Matrix<f32>, shape: &ConvShape, half_precision: bool) -> Result<Arc<WinogradFilters>> {
        check_shape(shape)?;
        let key = FilterKey {
            out_channels: weights.rows(),
            in_channels: shape.in_channels,
            half_precision,
            weight_bits: weights.as_slice().iter().map(|w| w.to_bits()).collect(),
        };
        if let Some(hit) = self.cache.read().expect("cache lock poisoned").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let fresh = Arc::new(WinogradFilters::transform(weights, shape, half_precision)?);
        self.transforms.fetch_add(1, Ordering::SeqCst);
        let mut cache = self.cache.write().expect("cache lock poisoned");
        Ok(Arc::clone(cache.entry(key).or_insert(fresh)))
    }

    pub fn conv(
        &self,
        input: &Tensor3,
        weights: &Matrix<f32>,
        shape: &ConvShape,
        half_precision_intermediates: bool,
    ) -> Result<Tensor3> {
        check_input(input, shape)?;
        self.prepare(weights, shape, half_precision_intermediates)?.apply(input)
    }
}
