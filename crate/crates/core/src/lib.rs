//! Bitserial linear algebra for low-precision neural-network inference.
//!
//! Multi-bit quantized operands are decomposed into bit planes, packed into
//! 64-bit words, and multiplied with AND/XOR + popcount inner products. Each
//! `{n, m}`-bit product is computed as `n * m` binary products weighted by
//! `2^(k + l)`:
//!
//! ```text
//! x . y = sum_k sum_l 2^(k+l) * popcount(x_k & y_l)
//! ```
//!
//! Modules:
//! - [`quantize`]: affine uniform quantizers and their MSE fit.
//! - [`bitpack`]: bit-plane packing (plain and fused with quantization).
//! - [`kernels`]: binary dot products, the register-tile microkernel and the
//!   blocked bitserial GEMM driver.
//! - [`convolution`]: im2col lowering onto the bitserial GEMM.
//! - [`baselines`]: float32, zero-point int8 and Winograd reference paths.
//! - [`perfmodel`]: per-microarchitecture throughput model.

pub mod baselines;
pub mod bitpack;
pub mod convolution;
mod error;
pub mod kernels;
mod matrix;
pub mod perfmodel;
pub mod quantize;

pub use error::{Error, Result};
pub use matrix::{Matrix, Tensor3};

pub use bitpack::{pack_bit_planes, quantize_and_pack, unpack_bit_planes, PackedBitMatrix};
pub use kernels::{affine_gemm, bitserial_gemm, AccumMatrix, GemmOptions, TileConfig};
pub use quantize::{dequantize, fit_uniform_quantizer, quantize_uniform, LevelMatrix, QuantParams};
