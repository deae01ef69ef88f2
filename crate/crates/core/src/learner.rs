//! One full run of the dynamic-bin multicalibration learner.
//!
//! Each round: observe `x_t`, spawn the experts starting now, aggregate their
//! weights into `(a_I, b_I)`, solve for a feasible forecast `π_t`, sample the
//! prediction `p_t`, draw `y_t` (adaptive nature sees `π_t` only), update the
//! experts, add `π_t` to the play counters, and split bins that crossed their
//! threshold.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bins::{BinLabel, DynamicBinTree};
use crate::env::{Environment, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::experts::{RoundDiagnostics, Schedule, WrapperState};
use crate::groups::{ContextRequirement, GroupFamily};
use crate::solver::{sample_prediction, solve_forecast, DEFAULT_TOLERANCE};
use crate::transcript::{BiasTable, NodeRecord, Play, RecordLevel, RoundRecord, Transcript, TranscriptHeader};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub learner: u64,
    pub environment: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { learner: 1, environment: 2 }
    }
}

/// How the prediction axis is discretized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionKind {
    /// Adaptive dyadic refinement.
    #[default]
    Dynamic,
    /// Static uniform grid of `bins` leaves.
    FixedGrid { bins: u64 },
}

fn default_family() -> String {
    "all_ones".into()
}

fn default_tol() -> f64 {
    DEFAULT_TOLERANCE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub horizon: u64,
    pub environment: EnvironmentSpec,
    #[serde(default = "default_family")]
    pub family: String,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub record_level: RecordLevel,
    #[serde(default)]
    pub partition: PartitionKind,
    /// Keep per-round wrapper diagnostics.
    #[serde(default)]
    pub diagnostics: bool,
}

impl RunConfig {
    pub fn new(horizon: u64, environment: EnvironmentSpec) -> Self {
        RunConfig {
            horizon,
            environment,
            family: default_family(),
            schedule: Schedule::default(),
            seeds: Seeds::default(),
            tol: DEFAULT_TOLERANCE,
            record_level: RecordLevel::default(),
            partition: PartitionKind::default(),
            diagnostics: false,
        }
    }

    pub fn validate(&self) -> Result<GroupFamily> {
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if self.seeds.learner == self.seeds.environment {
            return Err(Error::invalid("learner and environment seeds must differ"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("tolerance must be nonnegative"));
        }
        let family = GroupFamily::parse(&self.family)?;
        let available = self.environment.context_kind();
        match family.requirement() {
            ContextRequirement::None => {}
            need if need == available => {}
            need => {
                return Err(Error::invalid(format!(
                    "group family {} needs {need:?} contexts, environment provides {available:?}",
                    self.family
                )))
            }
        }
        Ok(family)
    }
}

/// Result of [`run`]: the transcript plus optional per-round wrapper diagnostics.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub transcript: Transcript,
    pub diagnostics: Vec<RoundDiagnostics>,
}

/// Runs the learner for `config.horizon` rounds.
pub fn run(config: &RunConfig) -> Result<Transcript> {
    run_detailed(config).map(|o| o.transcript)
}

pub fn run_detailed(config: &RunConfig) -> Result<RunOutput> {
    let family = config.validate()?;
    run_with_family(config, family)
}

/// Runs with an explicit group family (bypassing name lookup).
pub fn run_with_family(config: &RunConfig, family: GroupFamily) -> Result<RunOutput> {
    let horizon = config.horizon;
    let group_count = family.augmented_len();
    let mut tree = match config.partition {
        PartitionKind::Dynamic => DynamicBinTree::new(horizon, group_count)?,
        PartitionKind::FixedGrid { bins } => DynamicBinTree::uniform_grid(horizon, group_count, bins)?,
    };
    let mut wrapper = WrapperState::for_tree(&tree, config.schedule)?;
    let env_spec = config.environment.with_seed(config.seeds.environment);
    let mut env = Environment::new(&env_spec, horizon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seeds.learner);

    let full = config.record_level == RecordLevel::Full;
    let mut rounds = Vec::with_capacity(if full { horizon as usize } else { 0 });
    let mut diagnostics = Vec::new();
    let mut bias = BiasTable::default();
    let mut partition_changed = true;

    for t in 1..=horizon {
        let context = env.next_context(t);
        let indicators = family.indicators(&context);
        wrapper.spawn_experts(t, &tree);
        let coeffs = wrapper.awake_and_aggregate(t, &tree, &indicators).map_err(|e| e.at_round(t))?;
        debug_assert!(coeffs.bins.iter().all(|c| c.a.abs() <= c.b + 1e-12));
        let mut forecast = solve_forecast(&coeffs, config.tol).map_err(|e| e.at_round(t))?;
        let draw = env.draw_outcome(t, &context, Some(&forecast.support)).map_err(|e| e.at_round(t))?;
        let played = sample_prediction(&mut forecast, &mut rng);
        let diag = wrapper
            .update(t, &forecast, &indicators, draw.outcome, &coeffs)
            .map_err(|e| e.at_round(t))?;
        if diag.phi_hat > config.tol {
            return Err(Error::Infeasible { value: diag.phi_hat, tol: config.tol }.at_round(t));
        }
        tree.accumulate_play(&forecast).map_err(|e| e.at_round(t))?;

        let prediction = tree.node(played.node).interval.label;
        bias.record(prediction, &indicators, draw.outcome);
        if full {
            let partition = partition_changed
                .then(|| tree.active_leaves().iter().map(|&id| tree.node(id).interval.label).collect());
            let plays = forecast
                .support
                .iter()
                .map(|e| Play { bin: tree.node(e.node).interval.label, prob: e.prob })
                .collect();
            rounds.push(RoundRecord {
                t,
                context,
                partition,
                forecast: plays,
                prediction,
                outcome: draw.outcome,
                mean: draw.mean,
                phi_hat: diag.phi_hat,
            });
        }
        if config.diagnostics {
            diagnostics.push(diag);
        }

        // A split after the last round could never be played.
        if t < horizon {
            let split = tree.split_pass(t);
            wrapper.retire(&split);
            partition_changed = !split.is_empty();
        }
    }

    let nodes = tree
        .nodes()
        .iter()
        .filter(|n| n.activated.is_some_and(|b| b <= horizon))
        .map(|n| NodeRecord {
            bin: n.interval.label,
            activated: n.activated.unwrap_or(1),
            deactivated: n.deactivated.unwrap_or(horizon),
            total_play: n.total_play,
            split: n.children.is_some(),
        })
        .collect();

    let header = TranscriptHeader {
        horizon,
        log_term: tree.log_term(),
        max_depth: tree.max_depth(),
        family,
        schedule: config.schedule,
        refinement: tree.refinement(),
        environment: env_spec,
        learner_seed: config.seeds.learner,
        record_level: config.record_level,
    };
    let transcript = Transcript { header, rounds, nodes, bias, experts_spawned: wrapper.spawned() };
    Ok(RunOutput { transcript, diagnostics })
}

/// The label of every bin active at round `t` in a full transcript.
pub fn partition_at(transcript: &Transcript, t: u64) -> Option<Vec<BinLabel>> {
    transcript.rounds.iter().take(t as usize).rev().find_map(|r| r.partition.clone())
}
