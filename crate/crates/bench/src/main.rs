use std::path::PathBuf;
use std::process::ExitCode;

use bitserial::perfmodel::{max_bit_product, parse_profiles, predicted_gops, speedup_bound, ArchProfile, Method};
use bitserial_bench::sweep::{kernel_label, parse_pair};
use bitserial_bench::{
    emit_csv, emit_ratio_grid, parse_csv, run_sweep_with_progress, BenchError, BenchMethod, Clock, FakeClock, Result,
    SweepConfig, WallClock,
};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bench", about = "Bitserial convolution sweep harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time every method over a grid of layer shapes and write a CSV.
    Sweep {
        /// Kernel sizes, e.g. 1x1,3x3.
        #[arg(long, value_delimiter = ',', default_values = ["1x1", "3x3"])]
        kernels: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values = ["14", "28", "56", "104"])]
        spatial: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values = ["64", "128", "256", "384", "512", "768", "1024"])]
        channels: Vec<usize>,
        /// Activation x weight bit pairs for the bitserial rows.
        #[arg(long, value_delimiter = ',', default_values = ["1x1", "2x2", "3x3"])]
        bits: Vec<String>,
        /// Methods to run, or `all`.
        #[arg(long, value_delimiter = ',', default_values = ["all"])]
        methods: Vec<String>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Grid points needing more memory than this are skipped with a warning.
        #[arg(long, default_value_t = 512)]
        mem_budget_mb: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print speedup grids from a sweep CSV.
    Ratio {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Print the peak-throughput model for a built-in profile (a7, a53) or a profile file.
    Model {
        #[arg(long)]
        arch: String,
    },
}

fn sweep_config(
    kernels: &[String],
    bits: &[String],
    methods: &[String],
    spatial: Vec<usize>,
    channels: Vec<usize>,
) -> Result<SweepConfig> {
    let kernels = kernels
        .iter()
        .map(|k| match parse_pair::<usize>(k)? {
            (a, b) if a == b => Ok(a),
            _ => Err(BenchError::Config(format!("kernel {k:?} is not square"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let bit_pairs = bits.iter().map(|b| parse_pair::<u8>(b)).collect::<Result<Vec<_>>>()?;
    let methods = if methods.iter().any(|m| m == "all") {
        BenchMethod::ALL.to_vec()
    } else {
        methods.iter().map(|m| m.parse()).collect::<Result<Vec<_>>>()?
    };
    Ok(SweepConfig { kernels, spatial_sizes: spatial, channel_sizes: channels, bit_pairs, methods, ..SweepConfig::default() })
}

fn metadata(cfg: &SweepConfig, fake_time: bool) -> Vec<(String, String)> {
    let mut meta = vec![
        ("timed_region".into(), "activation quantize+pack, im2col, gemm, reshape; weights prepacked".into()),
        ("gop_convention".into(), "2*out^2*C_out*C_in*k^2 ops, batch 1".into()),
        ("padding".into(), "stride 1, same padding (k/2); bitserial pads with the activation offset".into()),
        ("threads".into(), "1".into()),
        ("repeats".into(), cfg.repeats.to_string()),
        ("warmup".into(), cfg.warmup.to_string()),
        ("seed".into(), cfg.seed.to_string()),
    ];
    if fake_time {
        meta.push(("clock".into(), "fake (BENCH_NO_TIME=1)".into()));
    }
    meta
}

fn print_model(profile: &ArchProfile) {
    println!("profile {}", profile.name);
    println!("{:>8} {:>12} {:>10}", "method", "ops/cycle", "GOP/s");
    for m in Method::ALL {
        println!("{:>8} {:>12} {:>10.3}", m.to_string(), profile.ops_per_cycle(m), predicted_gops(profile, m));
    }
    println!("speedup bound over the best baseline (rows activation bits, columns weight bits)");
    print!("{:>8}", "");
    for w in 1..=4 {
        print!("{w:>10}");
    }
    println!();
    for a in 1..=4 {
        print!("{a:>8}");
        for w in 1..=4 {
            print!("{:>10.4}", speedup_bound(profile, a, w));
        }
        println!();
    }
    println!("largest bit product with speedup > 1: {}", max_bit_product(profile));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sweep { kernels, spatial, channels, bits, methods, repeats, warmup, seed, mem_budget_mb, out } => {
            let cfg = SweepConfig {
                repeats,
                warmup,
                seed,
                mem_budget_mb,
                ..sweep_config(&kernels, &bits, &methods, spatial, channels)?
            };
            cfg.validate()?;
            let fake_time = std::env::var("BENCH_NO_TIME").is_ok_and(|v| v == "1");
            let mut clock: Box<dyn Clock> =
                if fake_time { Box::new(FakeClock { seconds: 1e-3 }) } else { Box::new(WallClock) };
            let report = run_sweep_with_progress(&cfg, clock.as_mut(), &mut |line| eprintln!("{line}"))?;
            let mut meta = metadata(&cfg, fake_time);
            for skip in &report.skipped {
                meta.push((
                    "skipped".into(),
                    format!("{} S={} C={}: {}", kernel_label(skip.kernel), skip.spatial, skip.channels, skip.reason),
                ));
            }
            emit_csv(&out, &report.records, &meta)?;
            eprintln!(
                "wrote {} records to {} ({} points skipped)",
                report.records.len(),
                out.display(),
                report.skipped.len()
            );
            Ok(())
        }
        Command::Ratio { input } => {
            let records = parse_csv(&std::fs::read_to_string(&input)?)?;
            if records.is_empty() {
                return Err(BenchError::Config(format!("{} has no records", input.display())));
            }
            print!("{}", emit_ratio_grid(&records));
            Ok(())
        }
        Command::Model { arch } => {
            let profiles = match ArchProfile::builtin(&arch) {
                Some(p) => vec![p],
                None => {
                    let text = std::fs::read_to_string(&arch).map_err(|e| {
                        BenchError::Config(format!("{arch:?} is neither a built-in profile (a7, a53) nor a readable file: {e}"))
                    })?;
                    parse_profiles(&text)?
                }
            };
            for (i, p) in profiles.iter().enumerate() {
                if i > 0 {
                    println!();
                }
                print_model(p);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
