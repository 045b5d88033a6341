//! Convolution by im2col (Toeplitz) lowering onto the bitserial GEMM.
//!
//! Filters are stored as a `C_out x (C_in * k * k)` matrix whose columns run
//! in `(channel, ky, kx)` order, the same order im2col uses for patch rows.
//! Padding is done in level space: a padded position holds level 0, which
//! dequantizes to the activation `offset` (zero only when `offset == 0`).

use crate::bitpack::{pack_bit_planes, quantize_and_pack, PackedBitMatrix};
use crate::error::{Error, Result};
use crate::kernels::{affine_gemm_with, GemmOptions};
use crate::matrix::{Matrix, Tensor3};
use crate::quantize::{dequantize, quantize_uniform, LevelMatrix, QuantParams};

/// Geometry of a square, batch-1 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvShape {
    pub spatial: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn new(
        spatial: usize,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let shape = Self { spatial, in_channels, out_channels, kernel, stride, pad };
        if spatial == 0 || in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
            return Err(Error::Shape(format!("all conv dimensions must be >= 1: {shape:?}")));
        }
        let span = spatial + 2 * pad;
        if span < kernel || (span - kernel) % stride != 0 {
            return Err(Error::Shape(format!("output size is not integral for {shape:?}")));
        }
        Ok(shape)
    }

    /// Stride 1 with `kernel / 2` padding, so odd kernels keep the spatial size.
    pub fn same(spatial: usize, in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self> {
        Self::new(spatial, in_channels, out_channels, kernel, 1, kernel / 2)
    }

    pub fn out_spatial(&self) -> usize {
        (self.spatial + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Reduction length of the lowered GEMM, `C_in * k * k`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Operation count of one convolution, 2 per multiply-accumulate.
pub fn conv_gop_count(shape: &ConvShape) -> u64 {
    let out = shape.out_spatial() as u64;
    2 * out * out * shape.out_channels as u64 * shape.patch_len() as u64
}

/// Quantized activation tensor (`channels x height x width`).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    channels: usize,
    height: usize,
    width: usize,
    /// `channels x (height * width)`.
    levels: LevelMatrix,
    params: QuantParams,
}

impl QuantTensor {
    pub fn new(channels: usize, height: usize, width: usize, levels: LevelMatrix, params: QuantParams) -> Result<Self> {
        if levels.rows() != channels || levels.cols() != height * width {
            return Err(Error::Shape(format!(
                "{}x{} levels do not hold a {channels}x{height}x{width} tensor",
                levels.rows(),
                levels.cols()
            )));
        }
        if levels.bits() != params.bits() {
            return Err(Error::Shape(format!("levels have {} bits, params {}", levels.bits(), params.bits())));
        }
        Ok(Self { channels, height, width, levels, params })
    }

    pub fn quantize(values: &Tensor3, params: QuantParams) -> Result<Self> {
        let flat = Matrix::new(values.channels, values.height * values.width, values.data.clone())?;
        let levels = quantize_uniform(&flat, params)?;
        Self::new(values.channels, values.height, values.width, levels, params)
    }

    pub fn dequantize(&self) -> Tensor3 {
        let data = dequantize(&self.levels, self.params).expect("bits checked at construction").into_vec();
        Tensor3 { channels: self.channels, height: self.height, width: self.width, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn levels(&self) -> &LevelMatrix {
        &self.levels
    }

    pub fn params(&self) -> QuantParams {
        self.params
    }
}

/// Quantized filter bank, `C_out x (C_in * k * k)` in `(channel, ky, kx)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantFilters {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub levels: LevelMatrix,
    pub params: QuantParams,
}

impl QuantFilters {
    pub fn new(in_channels: usize, kernel: usize, levels: LevelMatrix, params: QuantParams) -> Result<Self> {
        if levels.cols() != in_channels * kernel * kernel {
            return Err(Error::Shape(format!(
                "filter rows of {} levels do not match {in_channels}x{kernel}x{kernel}",
                levels.cols()
            )));
        }
        if levels.bits() != params.bits() {
            return Err(Error::Shape(format!("levels have {} bits, params {}", levels.bits(), params.bits())));
        }
        Ok(Self { out_channels: levels.rows(), in_channels, kernel, levels, params })
    }

    pub fn quantize(weights: &Matrix<f32>, in_channels: usize, kernel: usize, params: QuantParams) -> Result<Self> {
        Self::new(in_channels, kernel, quantize_uniform(weights, params)?, params)
    }

    pub fn dequantize(&self) -> Matrix<f32> {
        dequantize(&self.levels, self.params).expect("bits checked at construction")
    }
}

fn check_input(channels: usize, height: usize, width: usize, shape: &ConvShape) -> Result<()> {
    if channels != shape.in_channels || height != shape.spatial || width != shape.spatial {
        return Err(Error::Shape(format!(
            "input {channels}x{height}x{width} does not match {}x{}x{}",
            shape.in_channels, shape.spatial, shape.spatial
        )));
    }
    Ok(())
}

/// Lowers a `C x S x S` channels-major buffer into `(out^2) x (C k k)` patch rows.
pub(crate) fn lower<T: Copy>(data: &[T], shape: &ConvShape, pad_value: T) -> Vec<T> {
    let (s, k, c_in) = (shape.spatial, shape.kernel, shape.in_channels);
    let out = shape.out_spatial();
    let patch = shape.patch_len();
    let mut lowered = vec![pad_value; out * out * patch];
    for oy in 0..out {
        for ox in 0..out {
            let row = &mut lowered[(oy * out + ox) * patch..][..patch];
            for c in 0..c_in {
                let plane = &data[c * s * s..(c + 1) * s * s];
                for ky in 0..k {
                    let y = (oy * shape.stride + ky) as isize - shape.pad as isize;
                    if y < 0 || y >= s as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let x = (ox * shape.stride + kx) as isize - shape.pad as isize;
                        if x >= 0 && x < s as isize {
                            row[(c * k + ky) * k + kx] = plane[y as usize * s + x as usize];
                        }
                    }
                }
            }
        }
    }
    lowered
}

/// im2col in level space; padded positions hold level 0.
pub fn im2col(input: &QuantTensor, shape: &ConvShape) -> Result<LevelMatrix> {
    check_input(input.channels, input.height, input.width, shape)?;
    let out = shape.out_spatial();
    LevelMatrix::new(out * out, shape.patch_len(), input.params.bits(), lower(input.levels.levels(), shape, 0))
}

/// im2col on real values with an explicit pad value.
pub fn im2col_f32(input: &Tensor3, shape: &ConvShape, pad_value: f32) -> Result<Matrix<f32>> {
    check_input(input.channels, input.height, input.width, shape)?;
    let out = shape.out_spatial();
    Matrix::new(out * out, shape.patch_len(), lower(&input.data, shape, pad_value))
}

/// `(out^2) x C_out` GEMM output to a `C_out x out x out` tensor.
pub(crate) fn pixels_to_tensor(m: &Matrix<f32>, out: usize) -> Tensor3 {
    let c_out = m.cols();
    let mut data = vec![0.0; c_out * out * out];
    for (r, row) in m.as_slice().chunks(c_out.max(1)).enumerate() {
        for (c, &v) in row.iter().enumerate() {
            data[c * out * out + r] = v;
        }
    }
    Tensor3 { channels: c_out, height: out, width: out, data }
}

/// Bitserial convolution with filters lowered and packed once.
#[derive(Debug, Clone)]
pub struct BitserialConv {
    shape: ConvShape,
    weights: PackedBitMatrix,
    opts: GemmOptions,
}

impl BitserialConv {
    pub fn new(filters: &QuantFilters, shape: ConvShape) -> Result<Self> {
        Self::with_options(filters, shape, GemmOptions::default())
    }

    pub fn with_options(filters: &QuantFilters, shape: ConvShape, opts: GemmOptions) -> Result<Self> {
        if filters.out_channels != shape.out_channels
            || filters.in_channels != shape.in_channels
            || filters.kernel != shape.kernel
        {
            return Err(Error::Shape(format!(
                "filters {}x{}x{k}x{k} do not match {shape:?}",
                filters.out_channels,
                filters.in_channels,
                k = filters.kernel
            )));
        }
        let weights = pack_bit_planes(&filters.levels, filters.params)?;
        Ok(Self { shape, weights, opts })
    }

    pub fn shape(&self) -> &ConvShape {
        &self.shape
    }

    pub fn packed_weights(&self) -> &PackedBitMatrix {
        &self.weights
    }

    /// im2col -> pack -> affine GEMM -> reshape.
    pub fn forward(&self, input: &QuantTensor) -> Result<Tensor3> {
        let lowered = im2col(input, &self.shape)?;
        let packed = pack_bit_planes(&lowered, input.params)?;
        let out = affine_gemm_with(&packed, &self.weights, &self.opts)?;
        Ok(pixels_to_tensor(&out, self.shape.out_spatial()))
    }

    /// Real activations in: lowers with `act.offset` as the pad value (which
    /// quantizes to level 0) and uses the fused quantize+pack. Same result as
    /// quantizing first and calling [`forward`](Self::forward).
    pub fn forward_f32(&self, input: &Tensor3, act: QuantParams) -> Result<Tensor3> {
        let lowered = im2col_f32(input, &self.shape, act.offset())?;
        let packed = quantize_and_pack(&lowered, act)?;
        let out = affine_gemm_with(&packed, &self.weights, &self.opts)?;
        Ok(pixels_to_tensor(&out, self.shape.out_spatial()))
    }
}

pub fn conv_bitserial(input: &QuantTensor, filters: &QuantFilters, shape: &ConvShape) -> Result<Tensor3> {
    BitserialConv::new(filters, *shape)?.forward(input)
}
