//! Replicated runs over one axis, with an optional fixed-grid baseline.

use std::path::Path;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{cube_root_ceil, Baseline, SweepSpec};
use super::fit::{fit_scaling, iqr, median, ScalingFit};
use super::output::write_transcript;
use crate::error::{Error, Result};
use crate::learner::{run, PartitionKind, RunConfig, Seeds};
use crate::metrics::{calibration, CalibrationReport};
use crate::transcript::{RecordLevel, Transcript};

/// Seeds for run `index` of a sweep, drawn from a stream keyed by `master`.
pub fn derive_seeds(master: u64, index: u64) -> Seeds {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    let learner = rng.next_u64();
    let mut environment = rng.next_u64();
    if environment == learner {
        environment ^= 1;
    }
    Seeds { learner, environment }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: u64,
    pub replica: u32,
    pub seed: u64,
    pub env_seed: u64,
    pub mcerr: f64,
    pub calerr: f64,
    pub ever_active_total: usize,
    pub max_depth_reached: u32,
    pub runtime_ms: u64,
    pub baseline_mcerr: Option<f64>,
    pub baseline_calerr: Option<f64>,
    pub baseline_bins: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub value: u64,
    pub median_mcerr: f64,
    pub iqr_mcerr: f64,
    pub median_calerr: f64,
    pub iqr_calerr: f64,
    pub median_ever_active: f64,
    pub median_baseline_mcerr: Option<f64>,
    pub median_baseline_calerr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: String,
    pub master_seed: u64,
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<Aggregate>,
    /// Median CalErr against the axis value; absent when undefined.
    pub fit_calerr: Option<ScalingFit>,
    pub fit_mcerr: Option<ScalingFit>,
    pub fit_baseline_calerr: Option<ScalingFit>,
}

impl SweepReport {
    pub fn aggregate(&self, value: u64) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.value == value)
    }

    fn assemble(spec: &SweepSpec, rows: Vec<SweepRow>) -> Self {
        let aggregates: Vec<Aggregate> = spec
            .values
            .iter()
            .map(|&value| {
                let of = |f: &dyn Fn(&SweepRow) -> Option<f64>| -> Vec<f64> {
                    rows.iter().filter(|r| r.value == value).filter_map(f).collect()
                };
                let mcerr = of(&|r| Some(r.mcerr));
                let calerr = of(&|r| Some(r.calerr));
                let base_mc = of(&|r| r.baseline_mcerr);
                let base_cal = of(&|r| r.baseline_calerr);
                Aggregate {
                    value,
                    median_mcerr: median(&mcerr),
                    iqr_mcerr: iqr(&mcerr),
                    median_calerr: median(&calerr),
                    iqr_calerr: iqr(&calerr),
                    median_ever_active: median(&of(&|r| Some(r.ever_active_total as f64))),
                    median_baseline_mcerr: (!base_mc.is_empty()).then(|| median(&base_mc)),
                    median_baseline_calerr: (!base_cal.is_empty()).then(|| median(&base_cal)),
                }
            })
            .collect();
        let fit = |f: &dyn Fn(&Aggregate) -> Option<f64>| {
            let pts: Option<Vec<(f64, f64)>> = aggregates.iter().map(|a| f(a).map(|y| (a.value as f64, y))).collect();
            pts.and_then(|p| fit_scaling(&p).ok())
        };
        SweepReport {
            axis: spec.axis.name().into(),
            master_seed: spec.master_seed,
            fit_calerr: fit(&|a| Some(a.median_calerr)),
            fit_mcerr: fit(&|a| Some(a.median_mcerr)),
            fit_baseline_calerr: fit(&|a| a.median_baseline_calerr),
            rows,
            aggregates,
        }
    }
}

struct Task {
    index: u64,
    value: u64,
    replica: u32,
    config: RunConfig,
}

/// Executes every `(value, replica)` run on a worker pool and assembles the report.
///
/// Full-record transcripts are written to `transcripts` when given, as
/// `<axis>_<value>_r<replica>.jsonl` (and `..._baseline.jsonl`).
pub fn run_sweep(spec: &SweepSpec, transcripts: Option<&Path>) -> Result<SweepReport> {
    spec.validate()?;
    let mut tasks = Vec::new();
    for &value in &spec.values {
        let base = spec.config_for(value)?;
        for replica in 0..spec.replicas {
            let index = tasks.len() as u64;
            let mut config = base.clone();
            config.seeds = derive_seeds(spec.master_seed, index);
            tasks.push(Task { index, value, replica, config });
        }
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = spec.jobs {
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build().map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    log::info!("sweep over {} with {} runs on {} workers", spec.axis.name(), tasks.len(), pool.current_num_threads());

    let rows = pool.install(|| {
        tasks
            .par_iter()
            .map(|task| {
                let label = format!("{}={} replica={}", spec.axis.name(), task.value, task.replica);
                execute(spec, task, transcripts).map_err(|e| e.in_run(label))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(SweepReport::assemble(spec, rows))
}

fn execute(spec: &SweepSpec, task: &Task, transcripts: Option<&Path>) -> Result<SweepRow> {
    log::debug!("run {} starting", task.index);
    let started = Instant::now();
    let transcript = run(&task.config)?;
    let runtime_ms = if spec.timing { started.elapsed().as_millis() as u64 } else { 0 };
    let report = calibration(&transcript);
    let stem = format!("{}_{}_r{}", spec.axis.name(), task.value, task.replica);
    save(&transcript, transcripts, &stem)?;

    let (baseline, baseline_bins) = match spec.baseline {
        Baseline::None => (None, None),
        Baseline::FixedGrid { n_bins } => {
            let bins = n_bins.unwrap_or_else(|| cube_root_ceil(task.config.horizon));
            let mut config = task.config.clone();
            config.partition = PartitionKind::FixedGrid { bins };
            let base = run(&config)?;
            save(&base, transcripts, &format!("{stem}_baseline"))?;
            (Some(calibration(&base)), Some(bins))
        }
    };
    Ok(SweepRow {
        axis: spec.axis.name().into(),
        value: task.value,
        replica: task.replica,
        seed: task.config.seeds.learner,
        env_seed: task.config.seeds.environment,
        mcerr: report.mcerr,
        calerr: report.calerr,
        ever_active_total: transcript.ever_active(),
        max_depth_reached: transcript.max_depth_reached(),
        runtime_ms,
        baseline_mcerr: baseline.as_ref().map(|b: &CalibrationReport| b.mcerr),
        baseline_calerr: baseline.as_ref().map(|b| b.calerr),
        baseline_bins,
    })
}

fn save(transcript: &Transcript, dir: Option<&Path>, stem: &str) -> Result<()> {
    match dir {
        Some(dir) if transcript.header.record_level == RecordLevel::Full => write_transcript(dir, stem, transcript),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvironmentSpec;
    use crate::harness::config::Axis;

    fn spec() -> SweepSpec {
        SweepSpec {
            axis: Axis::T,
            values: vec![128, 256],
            replicas: 2,
            base: RunConfig::new(128, EnvironmentSpec::stationary(0.37, 128, 0)),
            baseline: Baseline::FixedGrid { n_bins: Some(16) },
            master_seed: 11,
            jobs: Some(2),
            timing: false,
        }
    }

    #[test]
    fn seeds_are_distinct_and_reproducible() {
        let a: Vec<Seeds> = (0..50).map(|i| derive_seeds(3, i)).collect();
        assert_eq!(a, (0..50).map(|i| derive_seeds(3, i)).collect::<Vec<_>>());
        assert!(a.iter().all(|s| s.learner != s.environment));
        let mut learners: Vec<u64> = a.iter().map(|s| s.learner).collect();
        learners.sort_unstable();
        learners.dedup();
        assert_eq!(learners.len(), 50);
    }

    #[test]
    fn sweep_populates_rows_and_baseline() {
        let report = run_sweep(&spec(), None).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert!(report.rows.iter().all(|r| r.baseline_calerr.is_some() && r.baseline_bins == Some(16)));
        assert_eq!(report.aggregates.len(), 2);
        assert!(report.fit_calerr.is_some());
        assert_eq!(report, run_sweep(&spec(), None).unwrap());
    }

    #[test]
    fn failures_name_the_run() {
        let mut s = spec();
        s.base.tol = -1.0;
        let err = run_sweep(&s, None).unwrap_err();
        assert!(err.to_string().contains("tolerance"), "{err}");
    }
}
