//! CSV output and speedup grids.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{BenchError, Result};
use crate::sweep::{kernel_label, parse_pair, BenchMethod, BenchRecord};

pub const CSV_HEADER: [&str; 9] = [
    "method",
    "kernel",
    "spatial",
    "channels",
    "bits_a",
    "bits_w",
    "median_seconds",
    "gops",
    "ratio_vs_best_baseline",
];

/// Cell text for grid points with no measurement.
pub const MISSING_CELL: &str = "—";

/// Writes `# key=value` lines, then the header and one row per record.
/// Floats use shortest round-trip formatting; baselines leave the ratio empty.
pub fn write_csv<W: Write>(mut out: W, records: &[BenchRecord], metadata: &[(String, String)]) -> Result<()> {
    for (key, value) in metadata {
        writeln!(out, "# {key}={value}")?;
    }
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(CSV_HEADER)?;
    for r in records {
        writer.write_record([
            r.method.name().to_string(),
            kernel_label(r.kernel),
            r.spatial.to_string(),
            r.channels.to_string(),
            r.bits_a.to_string(),
            r.bits_w.to_string(),
            r.median_seconds.to_string(),
            r.gops.to_string(),
            r.ratio_vs_best_baseline.map(|x| x.to_string()).unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn emit_csv(path: &Path, records: &[BenchRecord], metadata: &[(String, String)]) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(file, records, metadata)
}

/// Parses CSV text written by [`write_csv`]. `#` lines are ignored and the
/// header must match exactly. Output digests are not stored and read as 0.
pub fn parse_csv(text: &str) -> Result<Vec<BenchRecord>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(BenchError::Parse { line: 1, msg: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()) });
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let err = |msg: String| BenchError::Parse { line, msg };
        let field = |i: usize| row.get(i).ok_or_else(|| err(format!("missing field {}", CSV_HEADER[i])));
        let num = |i: usize| -> Result<f64> {
            let s = field(i)?;
            s.parse::<f64>().map_err(|_| err(format!("{}: not a number: {s:?}", CSV_HEADER[i])))
        };
        let int = |i: usize| -> Result<usize> {
            let s = field(i)?;
            s.parse::<usize>().map_err(|_| err(format!("{}: not an integer: {s:?}", CSV_HEADER[i])))
        };
        let bits = |i: usize| -> Result<u8> {
            let s = field(i)?;
            s.parse::<u8>().map_err(|_| err(format!("{}: not a bit width: {s:?}", CSV_HEADER[i])))
        };
        let method: BenchMethod = field(0)?.parse().map_err(|e: BenchError| err(e.to_string()))?;
        let (kh, kw) = parse_pair::<usize>(field(1)?).map_err(|e| err(e.to_string()))?;
        if kh != kw {
            return Err(err(format!("non-square kernel {kh}x{kw}")));
        }
        let ratio = match field(8)? {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|_| err(format!("ratio: not a number: {s:?}")))?),
        };
        records.push(BenchRecord {
            method,
            kernel: kh,
            spatial: int(2)?,
            channels: int(3)?,
            bits_a: bits(4)?,
            bits_w: bits(5)?,
            median_seconds: num(6)?,
            gops: num(7)?,
            ratio_vs_best_baseline: ratio,
            output_digest: 0,
        });
    }
    Ok(records)
}

/// Bitserial GOP/s over the fastest baseline at the same point, if both exist.
fn ratio_at(records: &[BenchRecord], kernel: usize, spatial: usize, channels: usize, bits: (u8, u8)) -> Option<f64> {
    let at = |r: &&BenchRecord| r.kernel == kernel && r.spatial == spatial && r.channels == channels;
    let ours = records
        .iter()
        .filter(at)
        .find(|r| r.method == BenchMethod::Bitserial && (r.bits_a, r.bits_w) == bits)?;
    let best = records.iter().filter(at).filter(|r| r.method.is_baseline()).map(|r| r.gops).reduce(f64::max);
    match best {
        Some(b) if b > 0.0 => Some(ours.gops / b),
        _ => ours.ratio_vs_best_baseline,
    }
}

/// One text grid per (kernel, bit pair): rows are channel counts, columns
/// spatial sizes, cells the speedup over the best baseline to 2 decimals.
pub fn emit_ratio_grid(records: &[BenchRecord]) -> String {
    let mut out = String::new();
    let grids: BTreeSet<(usize, u8, u8)> = records
        .iter()
        .filter(|r| r.method == BenchMethod::Bitserial)
        .map(|r| (r.kernel, r.bits_a, r.bits_w))
        .collect();
    for (kernel, bits_a, bits_w) in grids {
        let of_kernel = || records.iter().filter(|r| r.kernel == kernel);
        let spatial: BTreeSet<usize> = of_kernel().map(|r| r.spatial).collect();
        let channels: BTreeSet<usize> = of_kernel().map(|r| r.channels).collect();

        if !out.is_empty() {
            out.push('\n');
        }
        let _ = writeln!(out, "kernel={} bits={bits_a}x{bits_w} speedup vs best baseline", kernel_label(kernel));
        let _ = write!(out, "{:>8}", "C \\ S");
        for s in &spatial {
            let _ = write!(out, "{s:>8}");
        }
        out.push('\n');
        for &c in &channels {
            let _ = write!(out, "{c:>8}");
            for &s in &spatial {
                let cell = ratio_at(records, kernel, s, c, (bits_a, bits_w))
                    .map_or_else(|| MISSING_CELL.to_string(), |x| format!("{x:.2}"));
                let _ = write!(out, "{cell:>8}");
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(method: BenchMethod, kernel: usize, s: usize, c: usize, bits: (u8, u8), gops: f64) -> BenchRecord {
        BenchRecord {
            method,
            kernel,
            spatial: s,
            channels: c,
            bits_a: bits.0,
            bits_w: bits.1,
            median_seconds: 0.1,
            gops,
            ratio_vs_best_baseline: None,
            output_digest: 0,
        }
    }

    #[test]
    fn csv_round_trip_with_metadata() {
        let mut records = vec![
            rec(BenchMethod::Bitserial, 3, 14, 64, (2, 1), 1.0 / 3.0),
            rec(BenchMethod::F32Ref, 3, 14, 64, (32, 32), 0.1 + 0.2),
            rec(BenchMethod::WinogradRef, 3, 14, 64, (32, 32), 1e-300),
        ];
        records[0].ratio_vs_best_baseline = Some(std::f64::consts::PI);
        records[1].median_seconds = 1.2345678901234567e-5;
        let mut buf = Vec::new();
        write_csv(&mut buf, &records, &[("timed_region".into(), "quantize+pack+gemm".into())]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# timed_region=quantize+pack+gemm\n"));
        assert!(text.contains("\nmethod,kernel,spatial,channels,bits_a,bits_w,median_seconds,gops,ratio_vs_best_baseline\n"));
        assert!(text.contains("\nf32_ref,3x3,14,64,32,32,0.0000123456789"));
        assert!(text.lines().nth(3).unwrap().ends_with(','));
        assert_eq!(parse_csv(&text).unwrap(), records);
    }

    #[test]
    fn empty_list_is_header_only() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[], &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
    }

    #[test]
    fn unwritable_path_is_an_io_error() {
        let err = emit_csv(Path::new("/nonexistent-dir/x.csv"), &[], &[]).unwrap_err();
        assert!(matches!(err, BenchError::Io(_)));
    }

    #[test]
    fn parse_rejects_bad_input() {
        let header = CSV_HEADER.join(",");
        assert!(parse_csv("a,b,c\n").is_err());
        assert!(parse_csv(&format!("{header}\nbogus,1x1,1,1,1,1,1,1,\n")).is_err());
        assert!(parse_csv(&format!("{header}\nbitserial,1x3,1,1,1,1,1,1,\n")).is_err());
        assert!(parse_csv(&format!("{header}\nbitserial,1x1,1,1,1,1,fast,1,\n")).is_err());
        assert!(parse_csv(&format!("{header}\nbitserial,1x1,1,1,1,1,1,1\n")).is_err());
        assert_eq!(parse_csv(&format!("# c\n{header}\n")).unwrap(), vec![]);
    }

    #[test]
    fn grid_layout_and_missing_cells() {
        let records = vec![
            rec(BenchMethod::Bitserial, 1, 14, 64, (1, 1), 6.0),
            rec(BenchMethod::F32Ref, 1, 14, 64, (32, 32), 2.0),
            rec(BenchMethod::I8Ref, 1, 14, 64, (8, 8), 3.0),
            rec(BenchMethod::F32Ref, 1, 28, 64, (32, 32), 2.0),
            rec(BenchMethod::Bitserial, 1, 28, 128, (1, 1), 1.0),
            rec(BenchMethod::I8Ref, 1, 28, 128, (8, 8), 3.0),
        ];
        let grid = emit_ratio_grid(&records);
        let expected = "\
kernel=1x1 bits=1x1 speedup vs best baseline
   C \\ S      14      28
      64    2.00       —
     128       —    0.33
";
        assert_eq!(grid, expected);
    }

    #[test]
    fn one_grid_per_kernel_and_bit_pair() {
        let records = vec![
            rec(BenchMethod::Bitserial, 1, 14, 64, (1, 1), 1.0),
            rec(BenchMethod::Bitserial, 1, 14, 64, (2, 2), 1.0),
            rec(BenchMethod::Bitserial, 3, 14, 64, (1, 1), 1.0),
            rec(BenchMethod::F32Ref, 3, 14, 64, (32, 32), 4.0),
        ];
        let grid = emit_ratio_grid(&records);
        assert_eq!(grid.matches("kernel=").count(), 3);
        assert!(grid.contains("kernel=3x3 bits=1x1"));
        assert!(grid.contains("0.25"));
        assert_eq!(emit_ratio_grid(&[]), "");
    }
}
