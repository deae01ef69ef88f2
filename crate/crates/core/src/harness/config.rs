//! JSON configuration documents. Unknown keys are rejected.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::env::Variant;
use crate::error::{Error, Result};
use crate::learner::RunConfig;

/// The swept parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    /// Horizon.
    T,
    /// Number of piecewise-constant segments.
    J,
    /// Grid size of the ordered-grid Walsh instance.
    #[serde(rename = "m")]
    M,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::T => "T",
            Axis::J => "J",
            Axis::M => "m",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Baseline {
    #[default]
    None,
    /// Static uniform grid; `n_bins` defaults to `⌈T^{1/3}⌉`.
    FixedGrid {
        #[serde(default)]
        n_bins: Option<u64>,
    },
}

fn default_replicas() -> u32 {
    1
}

fn default_timing() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<u64>,
    #[serde(default = "default_replicas")]
    pub replicas: u32,
    pub base: RunConfig,
    #[serde(default)]
    pub baseline: Baseline,
    #[serde(default)]
    pub master_seed: u64,
    /// Worker threads; `None` uses every core.
    #[serde(default)]
    pub jobs: Option<usize>,
    /// Record wall-clock time per run. Off makes `report.csv` byte-reproducible.
    #[serde(default = "default_timing")]
    pub timing: bool,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("sweep needs at least one axis value"));
        }
        if self.replicas == 0 {
            return Err(Error::invalid("sweep needs at least one replica"));
        }
        if self.jobs == Some(0) {
            return Err(Error::invalid("jobs must be at least 1"));
        }
        for &v in &self.values {
            self.config_for(v)?.validate()?;
        }
        Ok(())
    }

    /// The base config with the axis set to `value` (seeds untouched).
    pub fn config_for(&self, value: u64) -> Result<RunConfig> {
        let mut cfg = self.base.clone();
        match self.axis {
            Axis::T => {
                cfg.horizon = value;
                cfg.environment = cfg.environment.with_horizon(value);
            }
            Axis::J => {
                cfg.environment = cfg.environment.with_segment_count(value as usize, cfg.horizon)?;
            }
            Axis::M => {
                match &mut cfg.environment.variant {
                    Variant::OrderedGridWalsh { m } => *m = value,
                    _ => return Err(Error::invalid("an m sweep needs an ordered_grid_walsh environment")),
                }
                if let Some(rest) = cfg.family.strip_prefix("walsh:") {
                    let suffix = rest.split_once(':').map(|(_, s)| format!(":{s}")).unwrap_or_default();
                    cfg.family = format!("walsh:{value}{suffix}");
                }
            }
        }
        Ok(cfg)
    }
}

/// `⌈T^{1/3}⌉`, exact on integers.
pub fn cube_root_ceil(horizon: u64) -> u64 {
    let mut n = (horizon as f64).cbrt().round() as u64;
    while n.saturating_mul(n).saturating_mul(n) < horizon {
        n += 1;
    }
    while n > 1 && (n - 1) * (n - 1) * (n - 1) >= horizon {
        n -= 1;
    }
    n.max(1)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}
