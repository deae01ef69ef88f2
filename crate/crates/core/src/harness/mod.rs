//! Sweeps, scaling fits and report emission.

pub mod config;
pub mod fit;
pub mod output;
pub mod sweep;

pub use config::{cube_root_ceil, load_json, Axis, Baseline, SweepSpec};
pub use fit::{fit_csv, fit_scaling, iqr, median, quantile, ScalingFit};
pub use sweep::{derive_seeds, run_sweep, Aggregate, SweepReport, SweepRow};
