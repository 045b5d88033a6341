//! Bit-plane packing.
//!
//! A `bits`-bit level matrix is split into `bits` binary planes; plane `k`
//! holds bit `k` of every element. Each plane row is packed little-endian into
//! 64-bit words (column `j` is bit `j % 64` of word `j / 64`) and zero-padded
//! to a whole number of words, so kernels never need a tail mask.
//!
//! Storage is plane-major: plane, then row, then word.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::quantize::{check_finite, max_level, LevelMatrix, QuantParams};

pub const WORD_BITS: usize = 64;

#[inline]
pub fn words_for(cols: usize) -> usize {
    cols.div_ceil(WORD_BITS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackedBitMatrix {
    rows: usize,
    logical_cols: usize,
    words_per_row: usize,
    params: QuantParams,
    plane_data: Vec<u64>,
    row_weighted_sums: Vec<i64>,
}

impl PackedBitMatrix {
    fn empty(rows: usize, cols: usize, params: QuantParams) -> Self {
        let words_per_row = words_for(cols);
        Self {
            rows,
            logical_cols: cols,
            words_per_row,
            params,
            plane_data: vec![0; params.bits() as usize * rows * words_per_row],
            row_weighted_sums: vec![0; rows],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Reduction length `K`.
    pub fn logical_cols(&self) -> usize {
        self.logical_cols
    }

    pub fn bits(&self) -> u8 {
        self.params.bits()
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn params(&self) -> QuantParams {
        self.params
    }

    /// All rows of plane `k`, row-contiguous.
    #[inline]
    pub fn plane(&self, k: usize) -> &[u64] {
        let stride = self.rows * self.words_per_row;
        &self.plane_data[k * stride..(k + 1) * stride]
    }

    #[inline]
    pub fn plane_row(&self, k: usize, i: usize) -> &[u64] {
        let start = i * self.words_per_row;
        &self.plane(k)[start..start + self.words_per_row]
    }

    #[inline]
    fn plane_row_mut(&mut self, k: usize, i: usize) -> &mut [u64] {
        let stride = self.rows * self.words_per_row;
        let start = k * stride + i * self.words_per_row;
        &mut self.plane_data[start..start + self.words_per_row]
    }

    /// `S[i] = sum_k 2^k * popcount(plane k, row i)`, i.e. the sum of row `i`'s levels.
    pub fn row_weighted_sums(&self) -> &[i64] {
        &self.row_weighted_sums
    }

    /// Mask of the valid bits in the last word of a row.
    fn tail_mask(&self) -> u64 {
        match self.logical_cols % WORD_BITS {
            0 => u64::MAX,
            r => (1u64 << r) - 1,
        }
    }

    fn compute_row_sums(&mut self) {
        for i in 0..self.rows {
            let mut sum = 0i64;
            for k in 0..self.bits() as usize {
                let ones: u32 = self.plane_row(k, i).iter().map(|w| w.count_ones()).sum();
                sum += (ones as i64) << k;
            }
            self.row_weighted_sums[i] = sum;
        }
    }

    /// Text dump used by golden tests: a `logical_cols=<K>` header, then one
    /// `plane=<k> row=<i>: <hex words>` line per plane row.
    pub fn dump(&self) -> String {
        let mut out = format!("logical_cols={}\n", self.logical_cols);
        for k in 0..self.bits() as usize {
            for i in 0..self.rows {
                let words: Vec<String> =
                    self.plane_row(k, i).iter().map(|w| format!("{w:016x}")).collect();
                let _ = writeln!(out, "plane={k} row={i}: {}", words.join(" "));
            }
        }
        out
    }
}

pub fn pack_bit_planes(levels: &LevelMatrix, params: QuantParams) -> Result<PackedBitMatrix> {
    if levels.bits() != params.bits() {
        return Err(Error::Shape(format!(
            "level matrix has {} bits but params have {}",
            levels.bits(),
            params.bits()
        )));
    }
    let max = max_level(params.bits());
    if let Some(index) = levels.levels().iter().position(|&l| l as u32 > max) {
        return Err(Error::CorruptLevel { index, level: levels.levels()[index], bits: params.bits() });
    }

    let mut packed = PackedBitMatrix::empty(levels.rows(), levels.cols(), params);
    for i in 0..levels.rows() {
        pack_row(&mut packed, i, levels.row(i).iter().copied());
    }
    packed.compute_row_sums();
    Ok(packed)
}

/// Quantizes and packs in one pass. Bit-identical to
/// `pack_bit_planes(&quantize_uniform(values, params)?, params)`.
pub fn quantize_and_pack(values: &Matrix<f32>, params: QuantParams) -> Result<PackedBitMatrix> {
    check_finite(values.as_slice())?;
    let mut packed = PackedBitMatrix::empty(values.rows(), values.cols(), params);
    for i in 0..values.rows() {
        pack_row(&mut packed, i, values.row(i).iter().map(|&v| params.quantize_value(v)));
    }
    packed.compute_row_sums();
    Ok(packed)
}

fn pack_row(packed: &mut PackedBitMatrix, row: usize, levels: impl Iterator<Item = u8>) {
    let bits = packed.bits() as usize;
    let wpr = packed.words_per_row;
    // One word per plane at a time, flushed on word boundaries.
    let mut words = [0u64; 8];
    let flush = |packed: &mut PackedBitMatrix, w: usize, words: &mut [u64; 8]| {
        for (k, word) in words.iter_mut().enumerate().take(bits) {
            packed.plane_row_mut(k, row)[w] = *word;
            *word = 0;
        }
    };
    let mut col = 0;
    for level in levels {
        let bit = col % WORD_BITS;
        for (k, word) in words.iter_mut().enumerate().take(bits) {
            *word |= (((level >> k) & 1) as u64) << bit;
        }
        col += 1;
        if col % WORD_BITS == 0 {
            flush(packed, col / WORD_BITS - 1, &mut words);
        }
    }
    if col % WORD_BITS != 0 {
        flush(packed, wpr - 1, &mut words);
    }
}

pub fn unpack_bit_planes(packed: &PackedBitMatrix) -> Result<LevelMatrix> {
    let (rows, cols, bits) = (packed.rows, packed.logical_cols, packed.bits() as usize);
    if packed.words_per_row > 0 {
        let mask = packed.tail_mask();
        for plane in 0..bits {
            for row in 0..rows {
                if packed.plane_row(plane, row)[packed.words_per_row - 1] & !mask != 0 {
                    return Err(Error::NonzeroPad { plane, row });
                }
            }
        }
    }
    let mut levels = vec![0u8; rows * cols];
    for k in 0..bits {
        for i in 0..rows {
            let src = packed.plane_row(k, i);
            for (j, level) in levels[i * cols..(i + 1) * cols].iter_mut().enumerate() {
                *level |= (((src[j / WORD_BITS] >> (j % WORD_BITS)) & 1) as u8) << k;
            }
        }
    }
    LevelMatrix::new(rows, cols, bits as u8, levels)
}

#[cfg(test)]
impl PackedBitMatrix {
    pub(crate) fn plane_row_mut_for_test(&mut self, k: usize, i: usize) -> &mut [u64] {
        self.plane_row_mut(k, i)
    }
}
