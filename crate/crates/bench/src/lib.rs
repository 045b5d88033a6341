//! Sweep harness for the bitserial convolution and its baselines.
//!
//! [`sweep`] times every method over a grid of layer shapes, [`report`]
//! writes and reads the CSV and renders the speedup grids.

mod error;
pub mod report;
pub mod sweep;

pub use error::{BenchError, Result};
pub use report::{emit_csv, emit_ratio_grid, parse_csv, write_csv, CSV_HEADER};
pub use sweep::{
    run_sweep, run_sweep_with_progress, BenchMethod, BenchRecord, Clock, FakeClock, SweepConfig, SweepReport,
    WallClock,
};
