//! Binary inner products and the bitserial GEMM.
//!
//! For packed operands `A` (`M x K`, `p` bits) and `B` (`N x K`, `q` bits) the
//! integer product of their levels is
//!
//! ```text
//! C[i][j] = sum_{k < p} sum_{l < q} 2^(k+l) * popcount(A_k[i] & B_l[j])
//! ```
//!
//! The driver walks L1-sized row blocks of both operands, then `m_tile x n_tile`
//! register tiles, then plane pairs. For each plane pair the microkernel
//! accumulates popcounts in 16-bit lanes and spills them into 32-bit totals
//! every `k_block_words` words; a 16-bit lane sees at most `64 * k_block_words`
//! before a spill, so `k_block_words <= 1023` keeps it exact.

use std::thread;

use crate::bitpack::{PackedBitMatrix, WORD_BITS};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Integer GEMM output before affine rescaling.
pub type AccumMatrix = Matrix<i32>;

/// Largest register tile the microkernel accumulates in one pass.
pub const MAX_TILE: usize = 16;

/// Largest spill interval that cannot overflow a 16-bit popcount lane.
pub const MAX_K_BLOCK_WORDS: usize = u16::MAX as usize / WORD_BITS;

pub trait Popcount {
    fn popcount(word: u64) -> u32;
}

/// Hardware popcount (or the compiler's best lowering of it).
pub struct NativePopcount;

/// Byte lookup table, for targets without a popcount instruction.
pub struct TablePopcount;

impl Popcount for NativePopcount {
    #[inline(always)]
    fn popcount(word: u64) -> u32 {
        word.count_ones()
    }
}

const BYTE_POPCOUNT: [u8; 256] = {
    let mut table = [0u8; 256];
    let mut i = 0;
    while i < 256 {
        table[i] = (i & 1) as u8 + table[i / 2];
        i += 1;
    }
    table
};

impl Popcount for TablePopcount {
    #[inline(always)]
    fn popcount(word: u64) -> u32 {
        word.to_le_bytes().iter().map(|&b| BYTE_POPCOUNT[b as usize] as u32).sum()
    }
}

fn check_dot_operands(a: &[u64], b: &[u64], logical_len: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("word counts differ: {} vs {}", a.len(), b.len())));
    }
    if logical_len > a.len() * WORD_BITS {
        return Err(Error::Shape(format!(
            "logical length {logical_len} exceeds {} packed bits",
            a.len() * WORD_BITS
        )));
    }
    Ok(())
}

/// Number of positions where both unsigned `{0,1}` planes are set.
pub fn and_dot(a: &[u64], b: &[u64], logical_len: usize) -> Result<u64> {
    and_dot_with::<NativePopcount>(a, b, logical_len)
}

pub fn and_dot_with<P: Popcount>(a: &[u64], b: &[u64], logical_len: usize) -> Result<u64> {
    check_dot_operands(a, b, logical_len)?;
    Ok(a.iter().zip(b).map(|(&x, &y)| P::popcount(x & y) as u64).sum())
}

/// `{-1,+1}` inner product of two bipolar planes: `K - 2 * popcount(a ^ b)`.
///
/// Pad bits are zero in both operands so they never differ; using
/// `logical_len` rather than the padded length keeps them out of the count.
pub fn xnor_dot(a: &[u64], b: &[u64], logical_len: usize) -> Result<i64> {
    check_dot_operands(a, b, logical_len)?;
    let differing: u64 = a.iter().zip(b).map(|(&x, &y)| (x ^ y).count_ones() as u64).sum();
    Ok(logical_len as i64 - 2 * differing as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileConfig {
    m_tile: usize,
    n_tile: usize,
    k_block_words: usize,
    l1_block_rows: usize,
}

impl TileConfig {
    pub fn new(m_tile: usize, n_tile: usize, k_block_words: usize, l1_block_rows: usize) -> Result<Self> {
        if !(1..=MAX_TILE).contains(&m_tile) || !(1..=MAX_TILE).contains(&n_tile) {
            return Err(Error::Config(format!(
                "register tile {m_tile}x{n_tile} outside 1..={MAX_TILE}"
            )));
        }
        if !(1..=MAX_K_BLOCK_WORDS).contains(&k_block_words) {
            return Err(Error::Config(format!(
                "k_block_words {k_block_words}: {} bits per spill exceeds the 16-bit lane bound {}",
                k_block_words * WORD_BITS,
                u16::MAX
            )));
        }
        if l1_block_rows == 0 {
            return Err(Error::Config("l1_block_rows must be >= 1".into()));
        }
        Ok(Self { m_tile, n_tile, k_block_words, l1_block_rows })
    }

    pub fn m_tile(&self) -> usize {
        self.m_tile
    }

    pub fn n_tile(&self) -> usize {
        self.n_tile
    }

    pub fn k_block_words(&self) -> usize {
        self.k_block_words
    }

    pub fn l1_block_rows(&self) -> usize {
        self.l1_block_rows
    }
}

impl Default for TileConfig {
    fn default() -> Self {
        Self { m_tile: 4, n_tile: 4, k_block_words: 256, l1_block_rows: 64 }
    }
}

type TileAcc = [[u32; MAX_TILE]; MAX_TILE];

/// Popcounts of `a_rows x b_rows` AND-products over `words` words.
///
/// `a` and `b` hold their rows contiguously with stride `words`.
#[inline]
fn tile_counts<P: Popcount>(
    a: &[u64],
    a_rows: usize,
    b: &[u64],
    b_rows: usize,
    words: usize,
    k_block_words: usize,
    acc: &mut TileAcc,
) {
    for row in acc.iter_mut().take(a_rows) {
        row[..b_rows].fill(0);
    }
    let mut lanes = [[0u16; MAX_TILE]; MAX_TILE];
    let mut start = 0;
    while start < words {
        let end = (start + k_block_words).min(words);
        for w in start..end {
            let mut bw = [0u64; MAX_TILE];
            for j in 0..b_rows {
                bw[j] = b[j * words + w];
            }
            for i in 0..a_rows {
                let aw = a[i * words + w];
                let lane = &mut lanes[i];
                for j in 0..b_rows {
                    lane[j] += P::popcount(aw & bw[j]) as u16;
                }
            }
        }
        for i in 0..a_rows {
            for j in 0..b_rows {
                acc[i][j] += lanes[i][j] as u32;
                lanes[i][j] = 0;
            }
        }
        start = end;
    }
}

/// Register-tile kernel for one plane pair: `out[i][j] = and_dot(a row i, b row j)`.
///
/// `a_tile` and `b_tile` are row-contiguous packed planes with
/// `words_per_row` words per row, at most `m_tile` and `n_tile` rows.
pub fn microkernel(a_tile: &[u64], b_tile: &[u64], words_per_row: usize, cfg: &TileConfig) -> Result<AccumMatrix> {
    microkernel_with::<NativePopcount>(a_tile, b_tile, words_per_row, cfg)
}

pub fn microkernel_with<P: Popcount>(
    a_tile: &[u64],
    b_tile: &[u64],
    words_per_row: usize,
    cfg: &TileConfig,
) -> Result<AccumMatrix> {
    if words_per_row == 0 || a_tile.len() % words_per_row != 0 || b_tile.len() % words_per_row != 0 {
        return Err(Error::Shape(format!(
            "tiles of {} and {} words are not whole rows of {words_per_row} words",
            a_tile.len(),
            b_tile.len()
        )));
    }
    let (a_rows, b_rows) = (a_tile.len() / words_per_row, b_tile.len() / words_per_row);
    if a_rows > cfg.m_tile || b_rows > cfg.n_tile {
        return Err(Error::Shape(format!(
            "{a_rows}x{b_rows} tile exceeds configured {}x{}",
            cfg.m_tile, cfg.n_tile
        )));
    }
    let mut acc = [[0u32; MAX_TILE]; MAX_TILE];
    tile_counts::<P>(a_tile, a_rows, b_tile, b_rows, words_per_row, cfg.k_block_words, &mut acc);
    Ok(Matrix::from_fn(a_rows, b_rows, |i, j| acc[i][j] as i32))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GemmOptions {
    pub tile: TileConfig,
    /// Number of threads splitting the output rows. Results do not depend on it.
    pub workers: usize,
}

impl Default for GemmOptions {
    fn default() -> Self {
        Self { tile: TileConfig::default(), workers: 1 }
    }
}

fn check_gemm_operands(a: &PackedBitMatrix, b: &PackedBitMatrix, opts: &GemmOptions) -> Result<()> {
    if a.logical_cols() != b.logical_cols() {
        return Err(Error::Shape(format!(
            "reduction lengths differ: {} vs {}",
            a.logical_cols(),
            b.logical_cols()
        )));
    }
    if opts.workers == 0 {
        return Err(Error::Config("workers must be >= 1".into()));
    }
    // sum_{k,l} 2^(k+l) * K = (2^p - 1)(2^q - 1) K
    let worst_case = ((1u128 << a.bits()) - 1) * ((1u128 << b.bits()) - 1) * a.logical_cols() as u128;
    if worst_case > i32::MAX as u128 {
        return Err(Error::OverflowRisk { worst_case });
    }
    Ok(())
}

/// Integer product of the level matrices of `a` (`M x K`) and `b` (`N x K`), as `M x N`.
pub fn bitserial_gemm(a: &PackedBitMatrix, b: &PackedBitMatrix) -> Result<AccumMatrix> {
    bitserial_gemm_with(a, b, &GemmOptions::default())
}

pub fn bitserial_gemm_with(a: &PackedBitMatrix, b: &PackedBitMatrix, opts: &GemmOptions) -> Result<AccumMatrix> {
    bitserial_gemm_impl::<NativePopcount>(a, b, opts)
}

/// Same as [`bitserial_gemm_with`] with a chosen popcount implementation.
pub fn bitserial_gemm_impl<P: Popcount>(
    a: &PackedBitMatrix,
    b: &PackedBitMatrix,
    opts: &GemmOptions,
) -> Result<AccumMatrix> {
    check_gemm_operands(a, b, opts)?;
    let (m, n) = (a.rows(), b.rows());
    let mut out = vec![0i32; m * n];
    if m == 0 || n == 0 {
        return Matrix::new(m, n, out);
    }

    let rows_per_worker = m.div_ceil(opts.workers.min(m));
    if rows_per_worker >= m {
        gemm_rows::<P>(a, b, 0, &mut out, &opts.tile);
    } else {
        thread::scope(|scope| {
            for (chunk, slice) in out.chunks_mut(rows_per_worker * n).enumerate() {
                let tile = &opts.tile;
                scope.spawn(move || gemm_rows::<P>(a, b, chunk * rows_per_worker, slice, tile));
            }
        });
    }
    Matrix::new(m, n, out)
}

/// Fills `out` with output rows `row0..row0 + out.len() / N`.
fn gemm_rows<P: Popcount>(a: &PackedBitMatrix, b: &PackedBitMatrix, row0: usize, out: &mut [i32], cfg: &TileConfig) {
    let n = b.rows();
    let row_end = row0 + out.len() / n;
    let words = a.words_per_row();
    let mut counts: TileAcc = [[0; MAX_TILE]; MAX_TILE];

    for ib in (row0..row_end).step_by(cfg.l1_block_rows) {
        let ib_end = (ib + cfg.l1_block_rows).min(row_end);
        for jb in (0..n).step_by(cfg.l1_block_rows) {
            let jb_end = (jb + cfg.l1_block_rows).min(n);
            for i0 in (ib..ib_end).step_by(cfg.m_tile) {
                let mr = cfg.m_tile.min(ib_end - i0);
                for j0 in (jb..jb_end).step_by(cfg.n_tile) {
                    let nr = cfg.n_tile.min(jb_end - j0);
                    let mut tile = [[0i32; MAX_TILE]; MAX_TILE];
                    for k in 0..a.bits() as usize {
                        let a_tile = &a.plane(k)[i0 * words..(i0 + mr) * words];
                        for l in 0..b.bits() as usize {
                            let b_tile = &b.plane(l)[j0 * words..(j0 + nr) * words];
                            tile_counts::<P>(a_tile, mr, b_tile, nr, words, cfg.k_block_words, &mut counts);
                            let shift = k + l;
                            for i in 0..mr {
                                for j in 0..nr {
                                    tile[i][j] += (counts[i][j] << shift) as i32;
                                }
                            }
                        }
                    }
                    for i in 0..mr {
                        let dst = &mut out[(i0 + i - row0) * n + j0..][..nr];
                        dst.copy_from_slice(&tile[i][..nr]);
                    }
                }
            }
        }
    }
}

/// Real product of the dequantized operands, `M x N`.
///
/// With `a = oA + sA * LA` and `b = oB + sB * LB` elementwise,
/// `sum_t a[i,t] b[j,t] = K oA oB + oA sB S_B[j] + oB sA S_A[i] + sA sB (LA LB^T)[i,j]`,
/// where `S` are the cached row sums of levels. Combined in f64, rounded once to f32.
pub fn affine_gemm(a: &PackedBitMatrix, b: &PackedBitMatrix) -> Result<Matrix<f32>> {
    affine_gemm_with(a, b, &GemmOptions::default())
}

pub fn affine_gemm_with(a: &PackedBitMatrix, b: &PackedBitMatrix, opts: &GemmOptions) -> Result<Matrix<f32>> {
    let levels = bitserial_gemm_with(a, b, opts)?;
    let (pa, pb) = (a.params(), b.params());
    let (oa, sa) = (pa.offset() as f64, pa.scale() as f64);
    let (ob, sb) = (pb.offset() as f64, pb.scale() as f64);
    let constant = a.logical_cols() as f64 * oa * ob;
    let sum_a = a.row_weighted_sums();
    let sum_b = b.row_weighted_sums();
    let col_terms: Vec<f64> = sum_b.iter().map(|&s| oa * sb * s as f64).collect();
    let data = levels
        .as_slice()
        .chunks(b.rows().max(1))
        .zip(sum_a)
        .flat_map(|(row, &sa_i)| {
            let row_term = constant + ob * sa * sa_i as f64;
            row.iter()
                .zip(&col_terms)
                .map(move |(&g, &c)| (row_term + c + sa * sb * g as f64) as f32)
        })
        .collect();
    Matrix::new(a.rows(), b.rows(), data)
}
