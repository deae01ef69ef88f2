//! Sleeping-experts wrapper that steers the forecast toward calibration.
//!
//! Experts are tuples `(s, g, I, σ)`: start round `s`, group `g ∈ Ḡ`, bin `I`
//! and sign `σ ∈ {+, −}`. An expert is awake on round `t` iff `s ≤ t` and `I`
//! is active. Its loss on an awake round is `(G − φ^σ_{g,I}) / (2G)` with
//! `G = 3/2` and the signed bias terms
//!
//! ```text
//! φ⁺_{g,I} = g(x) π_I (y − r_I − w_I)
//! φ⁻_{g,I} = g(x) π_I (r_I − y − w_I)
//! ```
//!
//! Play weights come from AdaNormalHedge ([`crate::anh`]). Experts are
//! materialized when their start round arrives and dropped once their bin
//! splits, since they can never be awake again.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::anh::{play_weights, ExpertState};
use crate::bins::{DynamicBinTree, NodeId};
use crate::error::{Error, Result};
use crate::groups::GroupId;
use crate::solver::{BinCoefficients, Forecast, RoundCoefficients};

/// Uniform bound on `|φ^±|`.
pub const LOSS_BOUND: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Which start rounds get their own expert.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Every round of a bin's lifetime.
    Full,
    /// `β(I)` and `β(I) + 2^k` for `k ≥ 0`.
    #[default]
    Dyadic,
}

impl Schedule {
    /// Whether an expert starting at `t` exists for a bin activated at `activated`.
    pub fn spawns_at(self, activated: u64, t: u64) -> bool {
        match self {
            Schedule::Full => t >= activated,
            Schedule::Dyadic => t == activated || (t > activated && (t - activated).is_power_of_two()),
        }
    }
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Schedule::Full),
            "dyadic" => Ok(Schedule::Dyadic),
            _ => Err(Error::invalid(format!("unknown schedule {s:?} (expected full|dyadic)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExpertKey {
    pub start: u64,
    pub group: GroupId,
    pub node: NodeId,
    pub sign: Sign,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expert {
    pub key: ExpertKey,
    pub state: ExpertState,
}

/// Per-round wrapper diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundDiagnostics {
    pub t: u64,
    pub awake_experts: usize,
    pub max_weight: f64,
    /// `φ̂_t = Σ_I π_I (a_I (y − r_I) − b_I w_I)`.
    pub phi_hat: f64,
    /// `ℓ̂_t = (G − φ̂_t) / (2G)`.
    pub wrapper_loss: f64,
}

#[derive(Clone, Debug)]
pub struct WrapperState {
    group_count: usize,
    /// `M = 2 |D|`, the number of signed bin coordinates.
    coordinates: usize,
    /// `H_{T,2} = Σ_{u ≤ T} 1/u²`.
    harmonic: f64,
    schedule: Schedule,
    /// Materialized experts of each active bin, in spawn order.
    pools: BTreeMap<NodeId, Vec<Expert>>,
    spawned: usize,
    retired: usize,
    last_spawn: u64,
    /// Bins awake at the most recent aggregation and its round.
    awake: Vec<NodeId>,
    awake_round: u64,
    max_weight: f64,
}

impl WrapperState {
    /// `universe_size` is `|D|`, the number of bins the partition can ever use.
    pub fn new(horizon: u64, group_count: usize, universe_size: usize, schedule: Schedule) -> Result<Self> {
        if horizon == 0 || group_count == 0 || universe_size == 0 {
            return Err(Error::invalid("wrapper needs T, |Ḡ| and |D| all positive"));
        }
        let harmonic = (1..=horizon).rev().map(|u| 1.0 / (u as f64 * u as f64)).sum();
        Ok(WrapperState {
            group_count,
            coordinates: 2 * universe_size,
            harmonic,
            schedule,
            pools: BTreeMap::new(),
            spawned: 0,
            retired: 0,
            last_spawn: 0,
            awake: Vec::new(),
            awake_round: 0,
            max_weight: 0.0,
        })
    }

    /// Wrapper sized for `tree`.
    pub fn for_tree(tree: &DynamicBinTree, schedule: Schedule) -> Result<Self> {
        Self::new(tree.horizon(), tree.group_count(), tree.universe_size(), schedule)
    }

    pub fn schedule(&self) -> Schedule {
        self.schedule
    }

    pub fn coordinates(&self) -> usize {
        self.coordinates
    }

    pub fn harmonic(&self) -> f64 {
        self.harmonic
    }

    /// `q = 1 / (|Ḡ| M H_{T,2} s²)`.
    pub fn prior(&self, start: u64) -> f64 {
        let s = start as f64;
        1.0 / (self.group_count as f64 * self.coordinates as f64 * self.harmonic * s * s)
    }

    /// Experts ever created.
    pub fn spawned(&self) -> usize {
        self.spawned
    }

    /// Experts currently stored (those of still-active bins).
    pub fn live(&self) -> usize {
        self.pools.values().map(Vec::len).sum()
    }

    pub fn experts(&self) -> impl Iterator<Item = &Expert> {
        self.pools.values().flatten()
    }

    pub fn experts_of(&self, node: NodeId) -> &[Expert] {
        self.pools.get(&node).map_or(&[], Vec::as_slice)
    }

    /// Creates the experts starting at round `t` for every active bin.
    ///
    /// Call once per round, after the previous round's splits.
    pub fn spawn_experts(&mut self, t: u64, tree: &DynamicBinTree) {
        if t <= self.last_spawn {
            return;
        }
        self.last_spawn = t;
        let prior = self.prior(t);
        for &node in tree.active_leaves() {
            let activated = tree.node(node).activated.unwrap_or(t);
            if !self.schedule.spawns_at(activated, t) {
                continue;
            }
            let pool = self.pools.entry(node).or_default();
            for g in 0..self.group_count {
                for sign in [Sign::Plus, Sign::Minus] {
                    let key = ExpertKey { start: t, group: GroupId(g), node, sign };
                    pool.push(Expert { key, state: ExpertState::new(prior) });
                }
            }
            self.spawned += 2 * self.group_count;
        }
    }

    /// Drops the experts of bins that were deactivated.
    pub fn retire(&mut self, nodes: &[NodeId]) {
        for node in nodes {
            if let Some(pool) = self.pools.remove(node) {
                self.retired += pool.len();
            }
        }
    }

    /// Computes `ω` over awake experts and aggregates it into `(a_I, b_I)` per active bin.
    ///
    /// `indicators[g]` is `g(x_t)` for `g ∈ Ḡ`.
    pub fn awake_and_aggregate(
        &mut self,
        t: u64,
        tree: &DynamicBinTree,
        indicators: &[f64],
    ) -> Result<RoundCoefficients> {
        debug_assert_eq!(indicators.len(), self.group_count);
        let active = tree.active_leaves();
        let awake_states = active
            .iter()
            .flat_map(|n| self.pools.get(n).into_iter().flatten())
            .filter(|e| e.key.start <= t)
            .map(|e| &e.state);
        let weights = play_weights(awake_states);
        if weights.is_empty() {
            return Err(Error::NoAwakeExperts(t));
        }
        self.max_weight = weights.iter().copied().fold(0.0, f64::max);

        let mut bins = Vec::with_capacity(active.len());
        let mut w = weights.iter();
        for &node in active {
            let iv = tree.node(node).interval;
            let (mut a, mut b) = (0.0, 0.0);
            for e in self.pools.get(&node).into_iter().flatten().filter(|e| e.key.start <= t) {
                let omega = *w.next().expect("one weight per awake expert");
                let gated = omega * indicators[e.key.group.0];
                a += e.key.sign.factor() * gated;
                b += gated;
            }
            bins.push(BinCoefficients { node, midpoint: iv.midpoint, width: iv.width, a, b });
        }
        self.awake = active.to_vec();
        self.awake_round = t;
        Ok(RoundCoefficients { bins })
    }

    /// Feeds round `t`'s outcome to every expert awake at the last aggregation.
    pub fn update(
        &mut self,
        t: u64,
        forecast: &Forecast,
        indicators: &[f64],
        outcome: f64,
        coeffs: &RoundCoefficients,
    ) -> Result<RoundDiagnostics> {
        if !(0.0..=1.0).contains(&outcome) {
            return Err(Error::OutcomeOutOfRange(outcome));
        }
        if self.awake_round != t {
            return Err(Error::invalid(format!("update for round {t} without aggregation")));
        }
        let phi_hat = coeffs.violation(forecast, outcome);
        let wrapper_loss = (LOSS_BOUND - phi_hat) / (2.0 * LOSS_BOUND);
        let mut awake_experts = 0;
        for c in &coeffs.bins {
            let prob = forecast.prob(c.node);
            let Some(pool) = self.pools.get_mut(&c.node) else { continue };
            for e in pool.iter_mut().filter(|e| e.key.start <= t) {
                let phi = indicators[e.key.group.0] * prob * (e.key.sign.factor() * (outcome - c.midpoint) - c.width);
                let loss = (LOSS_BOUND - phi) / (2.0 * LOSS_BOUND);
                e.state.record(wrapper_loss - loss);
                awake_experts += 1;
            }
        }
        Ok(RoundDiagnostics { t, awake_experts, max_weight: self.max_weight, phi_hat, wrapper_loss })
    }
}

/// Upper bound on experts created by the dyadic schedule: `2 |Ḡ| |V_T| (⌊log₂ T⌋ + 2)`.
pub fn dyadic_expert_cap(group_count: usize, ever_active: usize, horizon: u64) -> usize {
    let log = (63 - horizon.max(1).leading_zeros()) as usize;
    2 * group_count * ever_active * (log + 2)
}
