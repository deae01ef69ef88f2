//! Online multicalibration with adaptively refined dyadic prediction bins.
//!
//! The learner keeps a partition of `[0, 1]` into dyadic bins, splits a bin
//! once its cumulative forecast mass reaches `ln(e·T·|Ḡ|) / width²`, and
//! chooses each forecast from a two-column game whose coefficients come from
//! AdaNormalHedge sleeping experts, one per `(start, group, bin, sign)`.
//!
//! ```
//! use dynacal_core::{run, EnvironmentSpec, RunConfig};
//!
//! let config = RunConfig::new(256, EnvironmentSpec::stationary(0.37, 256, 0));
//! let transcript = run(&config).unwrap();
//! let report = dynacal_core::metrics::calibration(&transcript);
//! assert!(report.calerr >= 0.0);
//! ```

// NaN-rejecting guards are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anh;
pub mod bins;
pub mod env;
pub mod error;
pub mod experts;
pub mod groups;
pub mod harness;
pub mod learner;
pub mod metrics;
pub mod solver;
pub mod transcript;

pub use bins::{BinLabel, DynamicBinTree, Interval, NodeId};
pub use env::{Environment, EnvironmentSpec, Variant};
pub use error::{Error, Result};
pub use experts::{Schedule, WrapperState};
pub use groups::{Context, GroupFamily, GroupId};
pub use learner::{run, run_detailed, PartitionKind, RunConfig, RunOutput, Seeds};
pub use metrics::{calibration, CalibrationReport, MetricsReport};
pub use solver::{solve_forecast, BinCoefficients, Forecast, RoundCoefficients};
pub use transcript::{RecordLevel, Transcript};
