//! Layer-shape sweep.
//!
//! Every grid point is a batch-1, stride-1, "same"-padded square convolution
//! with `C_in = C_out = C`. Each method is warmed up, then timed `repeats`
//! times on one thread, and the median is reported.
//!
//! Timed region: weight packing, weight transforms and input generation are
//! done before timing. Activation quantization (and packing, for bitserial)
//! is inside the timed region, as are im2col and the output reshape.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use bitserial::baselines::{gemm_f32_blocked, gemm_i8_i32, im2col_i8, WinogradConv};
use bitserial::convolution::{conv_gop_count, im2col_f32, BitserialConv, ConvShape, QuantFilters};
use bitserial::{GemmOptions, LevelMatrix, Matrix, QuantParams, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BenchMethod {
    Bitserial,
    F32Ref,
    I8Ref,
    WinogradRef,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 4] =
        [BenchMethod::Bitserial, BenchMethod::F32Ref, BenchMethod::I8Ref, BenchMethod::WinogradRef];

    pub fn name(&self) -> &'static str {
        match self {
            BenchMethod::Bitserial => "bitserial",
            BenchMethod::F32Ref => "f32_ref",
            BenchMethod::I8Ref => "i8_ref",
            BenchMethod::WinogradRef => "winograd_ref",
        }
    }

    pub fn is_baseline(&self) -> bool {
        *self != BenchMethod::Bitserial
    }

    /// Whether the method can run a `kernel x kernel` convolution.
    pub fn supports_kernel(&self, kernel: usize) -> bool {
        *self != BenchMethod::WinogradRef || kernel == 3
    }

    /// Operand precisions reported in the bits columns for baselines.
    fn baseline_bits(&self) -> (u8, u8) {
        match self {
            BenchMethod::I8Ref => (8, 8),
            _ => (32, 32),
        }
    }
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchMethod {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        BenchMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| BenchError::Config(format!("unknown method {s:?}")))
    }
}

pub fn kernel_label(kernel: usize) -> String {
    format!("{kernel}x{kernel}")
}

/// Parses `AxB` into a pair.
pub fn parse_pair<T: FromStr>(s: &str) -> Result<(T, T)> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| BenchError::Config(format!("expected AxB, got {s:?}")))?;
    let parse = |v: &str| v.trim().parse::<T>().map_err(|_| BenchError::Config(format!("bad number in {s:?}")));
    Ok((parse(a)?, parse(b)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub kernels: Vec<usize>,
    pub spatial_sizes: Vec<usize>,
    pub channel_sizes: Vec<usize>,
    pub bit_pairs: Vec<(u8, u8)>,
    pub methods: Vec<BenchMethod>,
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Grid points whose working set exceeds this are skipped.
    pub mem_budget_mb: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            kernels: vec![1, 3],
            spatial_sizes: vec![14, 28, 56, 104],
            channel_sizes: vec![64, 128, 256, 384, 512, 768, 1024],
            bit_pairs: vec![(1, 1), (2, 2), (3, 3)],
            methods: BenchMethod::ALL.to_vec(),
            repeats: 5,
            warmup: 2,
            seed: 0,
            mem_budget_mb: 512,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BenchError::Config(msg));
        if self.repeats < 3 {
            return bad(format!("repeats must be >= 3, got {}", self.repeats));
        }
        if self.kernels.is_empty() || self.spatial_sizes.is_empty() || self.channel_sizes.is_empty() {
            return bad("kernels, spatial sizes and channel sizes must be non-empty".into());
        }
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        if let Some(k) = self.kernels.iter().find(|&&k| k != 1 && k != 3) {
            return bad(format!("kernel must be 1 or 3, got {k}"));
        }
        if self.spatial_sizes.contains(&0) || self.channel_sizes.contains(&0) {
            return bad("sizes must be >= 1".into());
        }
        if self.methods.contains(&BenchMethod::Bitserial) && self.bit_pairs.is_empty() {
            return bad("bitserial needs at least one bit pair".into());
        }
        if let Some(&(a, w)) = self.bit_pairs.iter().find(|&&(a, w)| !(1..=8).contains(&a) || !(1..=8).contains(&w)) {
            return bad(format!("bit pair {a}x{w} outside 1..=8"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub method: BenchMethod,
    pub kernel: usize,
    pub spatial: usize,
    pub channels: usize,
    pub bits_a: u8,
    pub bits_w: u8,
    pub median_seconds: f64,
    pub gops: f64,
    /// Bitserial rows only: GOP/s over the best baseline at the same point.
    pub ratio_vs_best_baseline: Option<f64>,
    /// FNV-1a of the output values; not serialized.
    pub output_digest: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedPoint {
    pub kernel: usize,
    pub spatial: usize,
    pub channels: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    pub records: Vec<BenchRecord>,
    pub skipped: Vec<SkippedPoint>,
}

/// Times one invocation of a workload, in seconds.
pub trait Clock {
    fn time(&mut self, work: &mut dyn FnMut()) -> f64;
}

pub struct WallClock;

impl Clock for WallClock {
    fn time(&mut self, work: &mut dyn FnMut()) -> f64 {
        let start = Instant::now();
        work();
        start.elapsed().as_secs_f64()
    }
}

/// Runs the workload but reports a fixed duration.
pub struct FakeClock {
    pub seconds: f64,
}

impl Clock for FakeClock {
    fn time(&mut self, work: &mut dyn FnMut()) -> f64 {
        work();
        self.seconds
    }
}

pub fn median(samples: &[f64]) -> f64 {
    assert!(!samples.is_empty(), "median of no samples");
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    }
}

/// Median over `repeats` timed runs after `warmup` untimed ones.
pub fn time_median(clock: &mut dyn Clock, warmup: usize, repeats: usize, work: &mut dyn FnMut()) -> f64 {
    for _ in 0..warmup {
        work();
    }
    let samples: Vec<f64> = (0..repeats).map(|_| clock.time(work)).collect();
    median(&samples)
}

pub fn digest_f32(values: &[f32]) -> u64 {
    digest_bytes(values.iter().flat_map(|v| v.to_bits().to_le_bytes()))
}

pub fn digest_i32(values: &[i32]) -> u64 {
    digest_bytes(values.iter().flat_map(|v| v.to_le_bytes()))
}

fn digest_bytes(bytes: impl Iterator<Item = u8>) -> u64 {
    bytes.fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Approximate peak bytes held for one grid point.
pub fn working_set_bytes(shape: &ConvShape) -> usize {
    let out = shape.out_spatial();
    let input = shape.in_channels * shape.spatial * shape.spatial;
    let lowered = out * out * shape.patch_len();
    let weights = shape.out_channels * shape.patch_len();
    let output = shape.out_channels * out * out;
    // f32 lowering dominates; weights are held as reals and transposed/transformed copies.
    4 * (input + lowered + 3 * weights + output)
}

/// Activation quantizer used for the bitserial rows: `bits` levels over [-2, 2].
pub fn activation_params(bits: u8) -> QuantParams {
    QuantParams::new(bits, -2.0, 4.0 / ((1u32 << bits) - 1) as f32).expect("valid params")
}

/// Weight quantizer: `bits` levels over [-1, 1] (the bipolar code at 1 bit).
pub fn weight_params(bits: u8) -> QuantParams {
    QuantParams::new(bits, -1.0, 2.0 / ((1u32 << bits) - 1) as f32).expect("valid params")
}

const I8_ACT_SCALE: f32 = 32.0;

struct PointInputs {
    input: Tensor3,
    weights: Matrix<f32>,
    weights_i8: Matrix<i8>,
}

fn point_seed(seed: u64, kernel: usize, spatial: usize, channels: usize) -> u64 {
    digest_bytes(
        [seed, kernel as u64, spatial as u64, channels as u64].into_iter().flat_map(|v| v.to_le_bytes()),
    )
}

fn generate_inputs(rng: &mut ChaCha8Rng, shape: &ConvShape) -> PointInputs {
    let (c, s) = (shape.in_channels, shape.spatial);
    let mut normal = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect() };
    let input = Tensor3::new(c, s, s, normal(c * s * s)).expect("sized");
    let weights = Matrix::new(shape.out_channels, shape.patch_len(), normal(shape.out_channels * shape.patch_len()))
        .expect("sized");
    let weights_i8 = Matrix::from_fn(shape.out_channels, shape.patch_len(), |_, _| rng.random::<i8>());
    PointInputs { input, weights, weights_i8 }
}

fn random_levels(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bits: u8) -> LevelMatrix {
    let top = ((1u16 << bits) - 1) as u8;
    let levels = (0..rows * cols).map(|_| rng.random_range(0..=top)).collect();
    LevelMatrix::new(rows, cols, bits, levels).expect("levels in range")
}

pub fn run_sweep(cfg: &SweepConfig, clock: &mut dyn Clock) -> Result<SweepReport> {
    run_sweep_with_progress(cfg, clock, &mut |_| {})
}

/// As [`run_sweep`], reporting each finished record (or skipped point) as text.
pub fn run_sweep_with_progress(
    cfg: &SweepConfig,
    clock: &mut dyn Clock,
    progress: &mut dyn FnMut(&str),
) -> Result<SweepReport> {
    cfg.validate()?;
    let mut report = SweepReport::default();
    let budget = cfg.mem_budget_mb.saturating_mul(1 << 20);
    let single = GemmOptions { workers: 1, ..GemmOptions::default() };

    for &kernel in &cfg.kernels {
        for &spatial in &cfg.spatial_sizes {
            for &channels in &cfg.channel_sizes {
                let shape = ConvShape::same(spatial, channels, channels, kernel)?;
                let needed = working_set_bytes(&shape);
                if needed > budget {
                    let skip = SkippedPoint {
                        kernel,
                        spatial,
                        channels,
                        reason: format!("needs ~{} MB, budget {} MB", needed >> 20, cfg.mem_budget_mb),
                    };
                    progress(&format!(
                        "warning: skipped {} S={spatial} C={channels}: {}",
                        kernel_label(kernel),
                        skip.reason
                    ));
                    report.skipped.push(skip);
                    continue;
                }

                let ops = conv_gop_count(&shape) as f64;
                let mut rng = ChaCha8Rng::seed_from_u64(point_seed(cfg.seed, kernel, spatial, channels));
                let inputs = generate_inputs(&mut rng, &shape);
                let mut point = Vec::new();

                for &method in &cfg.methods {
                    if !method.supports_kernel(kernel) {
                        continue;
                    }
                    let record = |bits: (u8, u8), seconds: f64, digest: u64| BenchRecord {
                        method,
                        kernel,
                        spatial,
                        channels,
                        bits_a: bits.0,
                        bits_w: bits.1,
                        median_seconds: seconds,
                        gops: ops / seconds / 1e9,
                        ratio_vs_best_baseline: None,
                        output_digest: digest,
                    };
                    match method {
                        BenchMethod::Bitserial => {
                            for &(bits_a, bits_w) in &cfg.bit_pairs {
                                let wparams = weight_params(bits_w);
                                let levels = random_levels(&mut rng, shape.out_channels, shape.patch_len(), bits_w);
                                let filters = QuantFilters::new(channels, kernel, levels, wparams)?;
                                let conv = BitserialConv::with_options(&filters, shape, single)?;
                                let act = activation_params(bits_a);
                                let mut out = None;
                                let seconds = time_median(clock, cfg.warmup, cfg.repeats, &mut || {
                                    out = Some(conv.forward_f32(&inputs.input, act));
                                });
                                let out = out.expect("ran at least once")?;
                                point.push(record((bits_a, bits_w), seconds, digest_f32(&out.data)));
                            }
                        }
                        BenchMethod::F32Ref => {
                            let weights_t = inputs.weights.transpose();
                            let mut out = None;
                            let seconds = time_median(clock, cfg.warmup, cfg.repeats, &mut || {
                                out = Some(
                                    im2col_f32(&inputs.input, &shape, 0.0)
                                        .and_then(|patches| gemm_f32_blocked(&patches, &weights_t)),
                                );
                            });
                            let out = out.expect("ran at least once")?;
                            point.push(record(method.baseline_bits(), seconds, digest_f32(out.as_slice())));
                        }
                        BenchMethod::I8Ref => {
                            let (a_zero, b_zero) = (0i32, 0i32);
                            let mut out = None;
                            let seconds = time_median(clock, cfg.warmup, cfg.repeats, &mut || {
                                let q: Vec<i8> = inputs
                                    .input
                                    .data
                                    .iter()
                                    .map(|&v| (v * I8_ACT_SCALE).round().clamp(-128.0, 127.0) as i8)
                                    .collect();
                                out = Some(
                                    im2col_i8(&q, &shape, a_zero as i8)
                                        .and_then(|patches| gemm_i8_i32(&patches, a_zero, &inputs.weights_i8, b_zero)),
                                );
                            });
                            let out = out.expect("ran at least once")?;
                            point.push(record(method.baseline_bits(), seconds, digest_i32(out.as_slice())));
                        }
                        BenchMethod::WinogradRef => {
                            let wino = WinogradConv::new();
                            let filters = wino.prepare(&inputs.weights, &shape, false)?;
                            let mut out = None;
                            let seconds = time_median(clock, cfg.warmup, cfg.repeats, &mut || {
                                out = Some(filters.apply(&inputs.input));
                            });
                            let out = out.expect("ran at least once")?;
                            point.push(record(method.baseline_bits(), seconds, digest_f32(&out.data)));
                        }
                    }
                }

                let best = point
                    .iter()
                    .filter(|r| r.method.is_baseline())
                    .map(|r| r.gops)
                    .fold(None, |best: Option<f64>, g| Some(best.map_or(g, |b| b.max(g))));
                for r in &mut point {
                    if !r.method.is_baseline() {
                        r.ratio_vs_best_baseline = best.map(|b| r.gops / b);
                    }
                    progress(&format!(
                        "{:>12} {} S={:<3} C={:<4} bits={}x{} median={:.3e}s gops={:.3}",
                        r.method.name(),
                        kernel_label(r.kernel),
                        r.spatial,
                        r.channels,
                        r.bits_a,
                        r.bits_w,
                        r.median_seconds,
                        r.gops
                    ));
                }
                report.records.extend(point);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SweepConfig {
        SweepConfig {
            kernels: vec![1, 3],
            spatial_sizes: vec![5],
            channel_sizes: vec![8],
            bit_pairs: vec![(1, 1), (2, 1)],
            methods: BenchMethod::ALL.to_vec(),
            repeats: 3,
            warmup: 0,
            seed: 3,
            mem_budget_mb: 64,
        }
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn pair_parsing() {
        assert_eq!(parse_pair::<u8>("2x3").unwrap(), (2, 3));
        assert_eq!(parse_pair::<usize>("3X3").unwrap(), (3, 3));
        assert!(parse_pair::<u8>("23").is_err());
        assert!(parse_pair::<u8>("ax3").is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in BenchMethod::ALL {
            assert_eq!(m.name().parse::<BenchMethod>().unwrap(), m);
        }
        assert!("nnpack".parse::<BenchMethod>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(tiny().validate().is_ok());
        assert!(SweepConfig { repeats: 2, ..tiny() }.validate().is_err());
        assert!(SweepConfig { kernels: vec![5], ..tiny() }.validate().is_err());
        assert!(SweepConfig { spatial_sizes: vec![0], ..tiny() }.validate().is_err());
        assert!(SweepConfig { bit_pairs: vec![(0, 1)], ..tiny() }.validate().is_err());
        assert!(SweepConfig { methods: vec![], ..tiny() }.validate().is_err());
        assert!(SweepConfig { bit_pairs: vec![], methods: vec![BenchMethod::F32Ref], ..tiny() }.validate().is_ok());
    }

    #[test]
    fn default_grid() {
        let cfg = SweepConfig::default();
        assert_eq!(cfg.spatial_sizes, vec![14, 28, 56, 104]);
        assert_eq!(cfg.channel_sizes, vec![64, 128, 256, 384, 512, 768, 1024]);
        assert!(cfg.repeats >= 5 && cfg.warmup == 2);
    }

    #[test]
    fn record_counts_and_ratios() {
        let report = run_sweep(&tiny(), &mut FakeClock { seconds: 1e-3 }).unwrap();
        // 1x1: 2 bit pairs + f32 + i8; 3x3: 2 bit pairs + f32 + i8 + winograd
        assert_eq!(report.records.len(), 4 + 5);
        for r in &report.records {
            assert_eq!(r.ratio_vs_best_baseline.is_some(), r.method == BenchMethod::Bitserial);
            assert!((r.median_seconds - 1e-3).abs() < 1e-15);
        }
        assert!(report.records.iter().filter_map(|r| r.ratio_vs_best_baseline).all(|x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn single_baseline_point_has_no_ratio() {
        let cfg = SweepConfig {
            kernels: vec![1],
            spatial_sizes: vec![4],
            channel_sizes: vec![4],
            methods: vec![BenchMethod::F32Ref],
            ..tiny()
        };
        let report = run_sweep(&cfg, &mut FakeClock { seconds: 1.0 }).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.records[0].ratio_vs_best_baseline, None);
        assert_eq!(report.records[0].gops, 2.0 * 16.0 * 16.0 / 1e9);
    }

    #[test]
    fn gops_from_op_count() {
        let cfg = SweepConfig {
            kernels: vec![1],
            spatial_sizes: vec![14],
            channel_sizes: vec![64],
            bit_pairs: vec![(1, 1)],
            methods: vec![BenchMethod::Bitserial],
            ..tiny()
        };
        let report = run_sweep(&cfg, &mut FakeClock { seconds: 1e-3 }).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.records[0].gops, 1_605_632.0 / 1e-3 / 1e9);
    }

    #[test]
    fn constant_stub_median_has_no_spread() {
        for repeats in 3..=9 {
            let medians: Vec<f64> =
                (0..4).map(|_| time_median(&mut FakeClock { seconds: 0.25 }, 1, repeats, &mut || {})).collect();
            assert!(medians.iter().all(|&m| m == 0.25), "repeats={repeats}");
        }
    }

    #[test]
    fn memory_budget_skips_points() {
        let cfg = SweepConfig { spatial_sizes: vec![5, 104], channel_sizes: vec![8, 1024], mem_budget_mb: 1, ..tiny() };
        let report = run_sweep(&cfg, &mut FakeClock { seconds: 1.0 }).unwrap();
        assert!(report.skipped.iter().any(|p| p.spatial == 104 && p.channels == 1024));
        assert!(report.records.iter().all(|r| r.channels == 8));
        assert!(report.records.iter().any(|r| r.spatial == 5));
    }

    #[test]
    fn outputs_are_deterministic() {
        let a = run_sweep(&tiny(), &mut FakeClock { seconds: 1.0 }).unwrap();
        let b = run_sweep(&tiny(), &mut WallClock).unwrap();
        let digests = |r: &SweepReport| r.records.iter().map(|r| r.output_digest).collect::<Vec<_>>();
        assert_eq!(digests(&a), digests(&b));
        let other = run_sweep(&SweepConfig { seed: 4, ..tiny() }, &mut FakeClock { seconds: 1.0 }).unwrap();
        assert_ne!(digests(&a), digests(&other));
    }
}
