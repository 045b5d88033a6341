mod common;

use bitserial::baselines::{
    conv_f32_direct, gemm_f32_blocked, gemm_f32_ref, gemm_i8_i32, im2col_i8, winograd_conv_3x3, WinogradConv,
};
use bitserial::convolution::{conv_bitserial, im2col_f32, BitserialConv, ConvShape, QuantFilters, QuantTensor};
use bitserial::{GemmOptions, Matrix, QuantParams, Tensor3, TileConfig};
use common::{dequant_f64, direct_conv, normwise_rel_err, random_levels};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_case(
    rng: &mut ChaCha8Rng,
    shape: &ConvShape,
    act: QuantParams,
    wts: QuantParams,
) -> (QuantTensor, QuantFilters) {
    let s = shape.spatial;
    let levels = random_levels(rng, shape.in_channels, s * s, act.bits());
    let input = QuantTensor::new(shape.in_channels, s, s, levels, act).unwrap();
    let wl = random_levels(rng, shape.out_channels, shape.patch_len(), wts.bits());
    (input, QuantFilters::new(shape.in_channels, shape.kernel, wl, wts).unwrap())
}

fn oracle(input: &QuantTensor, filters: &QuantFilters, shape: &ConvShape) -> Vec<f64> {
    let x = dequant_f64(input.levels(), input.params());
    let w = dequant_f64(&filters.levels, filters.params);
    direct_conv(&x, &w, shape, input.params().offset() as f64)
}

fn normal_tensor(rng: &mut ChaCha8Rng, c: usize, s: usize) -> Tensor3 {
    Tensor3::new(c, s, s, (0..c * s * s).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

#[test]
fn bitserial_conv_matches_direct_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for kernel in [1, 3] {
        for s in [5, 14] {
            for c in [4, 16] {
                for bits in 1..=3u8 {
                    let shape = ConvShape::same(s, c, c, kernel).unwrap();
                    // Nonzero activation offset, so padding must dequantize to it.
                    let act = QuantParams::new(bits, 0.35, 0.6).unwrap();
                    let wts = QuantParams::new(bits, -0.8, 1.6 / ((1 << bits) - 1) as f32).unwrap();
                    let (input, filters) = random_case(&mut rng, &shape, act, wts);
                    let got = conv_bitserial(&input, &filters, &shape).unwrap();
                    let err = normwise_rel_err(&got.data, &oracle(&input, &filters, &shape));
                    assert!(err <= 1e-5, "k={kernel} S={s} C={c} bits={bits}: {err:e}");
                }
            }
        }
    }
}

#[test]
fn strided_and_unpadded_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for (s, k, stride, pad) in [(7, 3, 2, 0), (9, 3, 2, 1), (6, 1, 1, 0), (8, 5, 1, 2)] {
        let shape = ConvShape::new(s, 3, 5, k, stride, pad).unwrap();
        let act = QuantParams::new(2, -0.5, 0.5).unwrap();
        let wts = QuantParams::new(2, -1.0, 2.0 / 3.0).unwrap();
        let (input, filters) = random_case(&mut rng, &shape, act, wts);
        let got = conv_bitserial(&input, &filters, &shape).unwrap();
        assert!(normwise_rel_err(&got.data, &oracle(&input, &filters, &shape)) <= 1e-5);
    }
}

#[test]
fn results_independent_of_tiling_and_workers() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let shape = ConvShape::same(9, 12, 10, 3).unwrap();
    let (input, filters) = random_case(&mut rng, &shape, QuantParams::new(2, 0.1, 0.3).unwrap(), QuantParams::BIPOLAR);
    let reference = conv_bitserial(&input, &filters, &shape).unwrap();
    for (tile, workers) in [((1, 1, 1, 1), 1), ((8, 2, 16, 8), 3), ((3, 5, 1023, 64), 4)] {
        let tile = TileConfig::new(tile.0, tile.1, tile.2, tile.3).unwrap();
        let conv = BitserialConv::with_options(&filters, shape, GemmOptions { tile, workers }).unwrap();
        assert_eq!(conv.forward(&input).unwrap(), reference);
    }
}

#[test]
fn zero_offset_padding_is_neutral() {
    // With offset 0, growing the input by a ring of level-0 pixels and
    // convolving without padding is the same as padded convolution.
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let shape = ConvShape::same(6, 3, 4, 3).unwrap();
    let act = QuantParams::new(2, 0.0, 0.5).unwrap();
    let (input, filters) = random_case(&mut rng, &shape, act, QuantParams::new(2, -1.0, 0.7).unwrap());
    let padded = conv_bitserial(&input, &filters, &shape).unwrap();

    let big = 8;
    let mut levels = vec![0u8; 3 * big * big];
    for c in 0..3 {
        for y in 0..6 {
            for x in 0..6 {
                levels[(c * big + y + 1) * big + x + 1] = input.levels().get(c, y * 6 + x);
            }
        }
    }
    let grown = QuantTensor::new(3, big, big, bitserial::LevelMatrix::new(3, big * big, 2, levels).unwrap(), act).unwrap();
    let valid = conv_bitserial(&grown, &filters, &ConvShape::new(big, 3, 4, 3, 1, 0).unwrap()).unwrap();
    assert_eq!(valid, padded);
}

#[test]
fn translation_consistency() {
    // Shifting the input by one pixel shifts interior outputs by one pixel.
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let s = 10;
    let shape = ConvShape::same(s, 2, 3, 3).unwrap();
    let act = QuantParams::new(2, 0.25, 0.5).unwrap();
    let (input, filters) = random_case(&mut rng, &shape, act, QuantParams::new(1, -1.0, 2.0).unwrap());
    let mut shifted = vec![0u8; 2 * s * s];
    for c in 0..2 {
        for y in 0..s {
            for x in 1..s {
                shifted[c * s * s + y * s + x] = input.levels().get(c, y * s + x - 1);
            }
        }
    }
    let shifted =
        QuantTensor::new(2, s, s, bitserial::LevelMatrix::new(2, s * s, 2, shifted).unwrap(), act).unwrap();
    let a = conv_bitserial(&input, &filters, &shape).unwrap();
    let b = conv_bitserial(&shifted, &filters, &shape).unwrap();
    for c in 0..3 {
        for y in 1..s - 1 {
            for x in 2..s - 1 {
                assert_eq!(b.get(c, y, x), a.get(c, y, x - 1));
            }
        }
    }
}

#[test]
fn baselines_agree_with_bitserial_on_grid_values() {
    // 4-bit levels with offset 0 and scale 1 are exact in every baseline format.
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    for kernel in [1, 3] {
        let shape = ConvShape::same(7, 5, 6, kernel).unwrap();
        let params = QuantParams::new(4, 0.0, 1.0).unwrap();
        let (input, filters) = random_case(&mut rng, &shape, params, params);
        let ours = conv_bitserial(&input, &filters, &shape).unwrap();
        let want = oracle(&input, &filters, &shape);
        let x = input.dequantize();
        let w = filters.dequantize();

        let direct = conv_f32_direct(&x, &w, &shape, 0.0).unwrap();
        let patches = im2col_f32(&x, &shape, 0.0).unwrap();
        let naive = gemm_f32_ref(&patches, &w.transpose()).unwrap();
        let blocked = gemm_f32_blocked(&patches, &w.transpose()).unwrap();
        assert_eq!(naive, blocked);

        let xi: Vec<i8> = input.levels().levels().iter().map(|&l| l as i8).collect();
        let wi = Matrix::new(w.rows(), w.cols(), filters.levels.levels().iter().map(|&l| l as i8).collect()).unwrap();
        let int8 = gemm_i8_i32(&im2col_i8(&xi, &shape, 0).unwrap(), 0, &wi, 0).unwrap();

        let out = shape.out_spatial();
        let pixel_major = |v: &[f32]| -> Vec<f32> {
            (0..shape.out_channels).flat_map(|c| (0..out * out).map(move |p| v[p * shape.out_channels + c])).collect()
        };
        let int8_f: Vec<f32> = int8.as_slice().iter().map(|&v| v as f32).collect();
        for (name, got) in [
            ("bitserial", ours.data.clone()),
            ("direct", direct.data),
            ("naive", pixel_major(naive.as_slice())),
            ("i8", pixel_major(&int8_f)),
        ] {
            let err = normwise_rel_err(&got, &want);
            assert!(err <= 1e-5, "k={kernel} {name}: {err:e}");
        }
        if kernel == 3 {
            let wino = winograd_conv_3x3(&x, &w, &shape, false).unwrap();
            assert!(normwise_rel_err(&wino.data, &want) <= 1e-5);
        }
    }
}

#[test]
fn direct_baseline_matches_oracle_with_offset_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let shape = ConvShape::new(9, 4, 3, 3, 2, 1).unwrap();
    let x = normal_tensor(&mut rng, 4, 9);
    let w = Matrix::from_fn(3, 36, |_, _| rng.sample::<f32, _>(StandardNormal));
    let got = conv_f32_direct(&x, &w, &shape, 0.7).unwrap();
    let xd: Vec<f64> = x.data.iter().map(|&v| v as f64).collect();
    let wd: Vec<f64> = w.as_slice().iter().map(|&v| v as f64).collect();
    assert!(normwise_rel_err(&got.data, &direct_conv(&xd, &wd, &shape, 0.7)) <= 1e-6);
}

#[test]
fn winograd_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let shape = ConvShape::same(14, 8, 8, 3).unwrap();
    let x = normal_tensor(&mut rng, 8, 14);
    let w = Matrix::from_fn(8, 72, |_, _| rng.sample::<f32, _>(StandardNormal));
    let xd: Vec<f64> = x.data.iter().map(|&v| v as f64).collect();
    let wd: Vec<f64> = w.as_slice().iter().map(|&v| v as f64).collect();
    let want = direct_conv(&xd, &wd, &shape, 0.0);

    let cache = WinogradConv::new();
    let full = cache.conv(&x, &w, &shape, false).unwrap();
    let half = cache.conv(&x, &w, &shape, true).unwrap();
    let (full_err, half_err) = (normwise_rel_err(&full.data, &want), normwise_rel_err(&half.data, &want));
    assert!(full_err <= 1e-3, "full precision error {full_err:e}");
    assert!(half_err <= 5e-2, "half precision error {half_err:e}");
    assert!(half_err > full_err);

    let transforms = cache.filter_transforms();
    cache.conv(&x, &w, &shape, false).unwrap();
    assert_eq!(cache.filter_transforms(), transforms);
}

#[test]
fn fused_real_input_path_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let shape = ConvShape::same(8, 6, 4, 3).unwrap();
    let act = QuantParams::new(2, -1.5, 1.0).unwrap();
    let (_, filters) = random_case(&mut rng, &shape, act, QuantParams::BIPOLAR);
    let x = normal_tensor(&mut rng, 6, 8);
    let conv = BitserialConv::new(&filters, shape).unwrap();
    let got = conv.forward_f32(&x, act).unwrap();
    let quantized = QuantTensor::quantize(&x, act).unwrap();
    assert!(normwise_rel_err(&got.data, &oracle(&quantized, &filters, &shape)) <= 1e-5);
}
