//! Peak-throughput model for conventional vs bitserial inner loops.
//!
//! Each profile carries the per-cycle throughput of the float32 multiply-add
//! loop, the int8 multiply-accumulate loop and the binary (XOR/AND + popcount)
//! loop, plus a clock frequency. A `p x q`-bit bitserial product costs `p * q`
//! binary products, so its modeled speedup over the best conventional path is
//! `binary / (p * q * max(f32, i8))`. Memory traffic and packing are ignored.
//!
//! Built-in rates (ops per cycle):
//!
//! | profile    | f32 | int8 | binary | GHz |
//! |------------|-----|------|--------|-----|
//! | Cortex-A7  | 2   | 2.5  | 42     | 1.2 |
//! | Cortex-A53 | 8   | 5.3  | 85     | 1.4 |
//!
//! The 1x1-bit bounds are 16.8x (A7) and 10.625x (A53); they are reported
//! unrounded.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ArchProfile {
    pub name: String,
    pub f32_ops_per_cycle: f64,
    pub i8_ops_per_cycle: f64,
    pub binary_ops_per_cycle: f64,
    pub freq_ghz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    F32,
    I8,
    Binary,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::F32, Method::I8, Method::Binary];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::F32 => "f32",
            Method::I8 => "i8",
            Method::Binary => "binary",
        })
    }
}

impl ArchProfile {
    pub fn new(name: impl Into<String>, f32_ops: f64, i8_ops: f64, binary_ops: f64, freq_ghz: f64) -> Result<Self> {
        let name = name.into();
        for (what, v) in [("f32", f32_ops), ("i8", i8_ops), ("binary", binary_ops), ("freq_ghz", freq_ghz)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!("profile {name}: {what} rate must be > 0, got {v}")));
            }
        }
        Ok(Self {
            name,
            f32_ops_per_cycle: f32_ops,
            i8_ops_per_cycle: i8_ops,
            binary_ops_per_cycle: binary_ops,
            freq_ghz,
        })
    }

    pub fn cortex_a7() -> Self {
        Self::new("cortex-a7", 2.0, 2.5, 42.0, 1.2).expect("built-in rates are positive")
    }

    pub fn cortex_a53() -> Self {
        Self::new("cortex-a53", 8.0, 5.3, 85.0, 1.4).expect("built-in rates are positive")
    }

    /// `a7`/`cortex-a7` or `a53`/`cortex-a53`.
    pub fn builtin(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "a7" | "cortex-a7" => Some(Self::cortex_a7()),
            "a53" | "cortex-a53" => Some(Self::cortex_a53()),
            _ => None,
        }
    }

    pub fn ops_per_cycle(&self, method: Method) -> f64 {
        match method {
            Method::F32 => self.f32_ops_per_cycle,
            Method::I8 => self.i8_ops_per_cycle,
            Method::Binary => self.binary_ops_per_cycle,
        }
    }

    /// Best conventional rate, `max(f32, i8)`.
    pub fn best_baseline_ops_per_cycle(&self) -> f64 {
        self.f32_ops_per_cycle.max(self.i8_ops_per_cycle)
    }
}

/// Modeled speedup of a `bits_a x bits_w` bitserial product over the best baseline.
///
/// # Panics
/// If either bit width is zero.
pub fn speedup_bound(profile: &ArchProfile, bits_a: u32, bits_w: u32) -> f64 {
    assert!(bits_a >= 1 && bits_w >= 1, "bit widths must be >= 1");
    profile.binary_ops_per_cycle / ((bits_a * bits_w) as f64 * profile.best_baseline_ops_per_cycle())
}

/// Largest bit product `P` whose modeled speedup is still above 1, i.e.
/// `P * best < binary <= (P + 1) * best`.
pub fn max_bit_product(profile: &ArchProfile) -> u32 {
    let best = profile.best_baseline_ops_per_cycle();
    let binary = profile.binary_ops_per_cycle;
    let mut p = ((binary / best).ceil() as u32).saturating_sub(1);
    // Settle ratios that land within rounding of an integer.
    while p > 0 && p as f64 * best >= binary {
        p -= 1;
    }
    while (p + 1) as f64 * best < binary {
        p += 1;
    }
    p
}

/// Peak GOP/s for `method`: rate times clock.
pub fn predicted_gops(profile: &ArchProfile, method: Method) -> f64 {
    profile.ops_per_cycle(method) * profile.freq_ghz
}

/// Parses profiles, one per line: `name f32 i8 binary freq_ghz`.
/// Blank lines and `#` comments are skipped; commas also separate fields.
pub fn parse_profiles(text: &str) -> Result<Vec<ArchProfile>> {
    let mut profiles = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|f| !f.is_empty()).collect();
        if fields.len() != 5 {
            return Err(Error::InvalidParams(format!(
                "line {}: expected `name f32 i8 binary freq_ghz`, got {} fields",
                lineno + 1,
                fields.len()
            )));
        }
        let mut nums = [0.0f64; 4];
        for (slot, field) in nums.iter_mut().zip(&fields[1..]) {
            *slot = f64::from_str(field)
                .map_err(|e| Error::InvalidParams(format!("line {}: {field:?}: {e}", lineno + 1)))?;
        }
        profiles.push(ArchProfile::new(fields[0], nums[0], nums[1], nums[2], nums[3])?);
    }
    Ok(profiles)
}
