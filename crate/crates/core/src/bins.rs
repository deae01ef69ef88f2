//! Adaptive dyadic partition of the prediction axis `[0, 1]`.
//!
//! The tree starts from the single root interval `[0, 1]` and refines a leaf
//! of width `w` into its two dyadic halves at the end of the first round in
//! which the leaf's accumulated play reaches `L / w²`, where
//! `L = ln(e · T · |Ḡ|)` (natural logarithm). Leaves at depth
//! `d_max = ⌊½ log₂ T⌋ + 1` are never refined.
//!
//! Every interval is half-open `[left, right)` except the last interval of
//! each resolution, which is closed on the right so that `1.0` is covered.
//!
//! The same structure also backs the fixed uniform grid used as a baseline:
//! a frozen set of `n` equal-width leaves that never split.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::solver::Forecast;

/// Tolerance on forecast normalization.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Stable index of a node in a [`DynamicBinTree`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Identity of a bin on the prediction axis.
///
/// Dyadic bins serialize as `[depth, k]`; uniform-grid bins as `{"n": n, "k": k}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BinLabel {
    Dyadic(u32, u64),
    Uniform { n: u64, k: u64 },
}

impl BinLabel {
    pub fn depth(&self) -> Option<u32> {
        match *self {
            BinLabel::Dyadic(d, _) => Some(d),
            BinLabel::Uniform { .. } => None,
        }
    }

    pub fn interval(&self) -> Interval {
        match *self {
            BinLabel::Dyadic(d, k) => Interval::dyadic(d, k),
            BinLabel::Uniform { n, k } => Interval::uniform(n, k),
        }
    }
}

impl fmt::Display for BinLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinLabel::Dyadic(d, k) => write!(f, "({d},{k})"),
            BinLabel::Uniform { n, k } => write!(f, "({k}/{n})"),
        }
    }
}

/// A bin `[left, right)` (closed on the right for the last bin of its resolution).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub label: BinLabel,
    pub left: f64,
    pub right: f64,
    pub closed_right: bool,
    pub midpoint: f64,
    pub width: f64,
}

impl Interval {
    /// The depth-`depth` dyadic interval `[k·2^-d, (k+1)·2^-d)`.
    ///
    /// Panics if `k ≥ 2^depth` or `depth > 52`.
    pub fn dyadic(depth: u32, k: u64) -> Self {
        assert!(depth <= 52, "dyadic depth {depth} exceeds f64 resolution");
        let cells = 1u64 << depth;
        assert!(k < cells, "index {k} out of range at depth {depth}");
        let width = (-(depth as f64)).exp2();
        let left = k as f64 * width;
        Interval {
            label: BinLabel::Dyadic(depth, k),
            left,
            right: (k + 1) as f64 * width,
            closed_right: k == cells - 1,
            midpoint: left + width / 2.0,
            width,
        }
    }

    /// The `k`-th of `n` equal-width bins.
    pub fn uniform(n: u64, k: u64) -> Self {
        assert!(n >= 1 && k < n, "uniform bin {k} of {n} out of range");
        let nf = n as f64;
        Interval {
            label: BinLabel::Uniform { n, k },
            left: k as f64 / nf,
            right: (k + 1) as f64 / nf,
            closed_right: k == n - 1,
            midpoint: (2 * k + 1) as f64 / (2.0 * nf),
            width: 1.0 / nf,
        }
    }

    pub fn depth(&self) -> Option<u32> {
        self.label.depth()
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.left && (value < self.right || (self.closed_right && value <= self.right))
    }

    /// The two dyadic halves; `None` for uniform-grid bins.
    pub fn children(&self) -> Option<[Interval; 2]> {
        match self.label {
            BinLabel::Dyadic(d, k) => Some([Interval::dyadic(d + 1, 2 * k), Interval::dyadic(d + 1, 2 * k + 1)]),
            BinLabel::Uniform { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinNode {
    pub interval: Interval,
    /// Running total play `N(I) = Σ π_{t,I}` over the node's lifetime.
    pub total_play: f64,
    /// First round the node is active.
    pub activated: Option<u64>,
    /// Last round the node is active; `None` while it is still a leaf.
    pub deactivated: Option<u64>,
    pub children: Option<[NodeId; 2]>,
    pub parent: Option<NodeId>,
    pub is_active: bool,
}

impl BinNode {
    fn leaf(interval: Interval, parent: Option<NodeId>, activated: u64) -> Self {
        BinNode {
            interval,
            total_play: 0.0,
            activated: Some(activated),
            deactivated: None,
            children: None,
            parent,
            is_active: true,
        }
    }

    /// Whether the node is active on round `t` (leaves stay active through `horizon`).
    pub fn active_at(&self, t: u64, horizon: u64) -> bool {
        match self.activated {
            Some(beta) => beta <= t && t <= self.deactivated.unwrap_or(horizon),
            None => false,
        }
    }
}

/// How the partition evolves over time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refinement {
    /// Split leaves once their play reaches `L / w²`.
    Dyadic,
    /// Never split (fixed-grid baseline).
    Frozen,
}

#[derive(Clone, Debug)]
pub struct DynamicBinTree {
    horizon: u64,
    group_count: usize,
    log_term: f64,
    max_depth: u32,
    refinement: Refinement,
    /// `L / w²` for each depth `0..=max_depth`.
    thresholds: Vec<f64>,
    nodes: Vec<BinNode>,
    /// Active leaves ordered by left endpoint.
    active: Vec<NodeId>,
    round: u64,
}

impl DynamicBinTree {
    /// A fresh tree whose only active leaf is the root `[0, 1]`, active from round 1.
    pub fn new(horizon: u64, group_count: usize) -> Result<Self> {
        let (log_term, max_depth) = Self::parameters(horizon, group_count)?;
        let thresholds = (0..=max_depth).map(|d| log_term * 4f64.powi(d as i32)).collect();
        Ok(DynamicBinTree {
            horizon,
            group_count,
            log_term,
            max_depth,
            refinement: Refinement::Dyadic,
            thresholds,
            nodes: vec![BinNode::leaf(Interval::dyadic(0, 0), None, 1)],
            active: vec![NodeId(0)],
            round: 0,
        })
    }

    /// A frozen partition into `bins` equal-width leaves.
    pub fn uniform_grid(horizon: u64, group_count: usize, bins: u64) -> Result<Self> {
        if bins == 0 {
            return Err(Error::invalid("uniform grid needs at least one bin"));
        }
        let (log_term, max_depth) = Self::parameters(horizon, group_count)?;
        let nodes: Vec<_> = (0..bins).map(|k| BinNode::leaf(Interval::uniform(bins, k), None, 1)).collect();
        Ok(DynamicBinTree {
            horizon,
            group_count,
            log_term,
            max_depth,
            refinement: Refinement::Frozen,
            thresholds: Vec::new(),
            active: (0..nodes.len()).map(NodeId).collect(),
            nodes,
            round: 0,
        })
    }

    fn parameters(horizon: u64, group_count: usize) -> Result<(f64, u32)> {
        if horizon == 0 {
            return Err(Error::invalid("horizon T must be at least 1"));
        }
        if group_count == 0 {
            return Err(Error::invalid("group count must be at least 1"));
        }
        Ok((log_term(horizon, group_count), max_depth(horizon)))
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    /// `L = ln(e · T · |Ḡ|)`.
    pub fn log_term(&self) -> f64 {
        self.log_term
    }

    pub fn max_depth(&self) -> u32 {
        self.max_depth
    }

    pub fn refinement(&self) -> Refinement {
        self.refinement
    }

    /// Last round passed to [`split_pass`](Self::split_pass).
    pub fn round(&self) -> u64 {
        self.round
    }

    /// Split threshold `L / w²` at `depth`.
    pub fn threshold(&self, depth: u32) -> f64 {
        self.thresholds
            .get(depth as usize)
            .copied()
            .unwrap_or_else(|| self.log_term * 4f64.powi(depth as i32))
    }

    /// Number of bins any run of this tree can ever use: `Σ_{d ≤ d_max} 2^d`
    /// for the dyadic tree, `n` for a uniform grid.
    pub fn universe_size(&self) -> usize {
        match self.refinement {
            Refinement::Dyadic => (1usize << (self.max_depth + 1)) - 1,
            Refinement::Frozen => self.nodes.len(),
        }
    }

    pub fn nodes(&self) -> &[BinNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &BinNode {
        &self.nodes[id.0]
    }

    pub fn active_leaves(&self) -> &[NodeId] {
        &self.active
    }

    /// Active intervals in left-to-right order.
    pub fn active_partition(&self) -> Vec<(Interval, NodeId)> {
        self.active.iter().map(|&id| (self.nodes[id.0].interval, id)).collect()
    }

    /// The active leaf containing `value`.
    pub fn locate(&self, value: f64) -> Option<NodeId> {
        if !(0.0..=1.0).contains(&value) {
            return None;
        }
        let pos = self.active.partition_point(|id| self.nodes[id.0].interval.right <= value);
        let pos = pos.min(self.active.len() - 1);
        let id = self.active[pos];
        self.nodes[id.0].interval.contains(value).then_some(id)
    }

    /// Adds each forecast probability to its interval's total play.
    pub fn accumulate_play(&mut self, forecast: &Forecast) -> Result<()> {
        let mut mass = 0.0;
        for entry in &forecast.support {
            let node = self.nodes.get(entry.node.0).ok_or(Error::InactiveSupport(entry.node.0))?;
            if !node.is_active {
                return Err(Error::InactiveSupport(entry.node.0));
            }
            if !(entry.prob >= 0.0) {
                return Err(Error::invalid(format!("negative probability {} on {}", entry.prob, entry.node)));
            }
            mass += entry.prob;
        }
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Unnormalized(mass));
        }
        for entry in &forecast.support {
            self.nodes[entry.node.0].total_play += entry.prob;
        }
        Ok(())
    }

    /// Splits every eligible leaf at the end of round `t`; returns the split nodes.
    ///
    /// Children become active at round `t + 1` with zero play.
    pub fn split_pass(&mut self, t: u64) -> Vec<NodeId> {
        self.round = t;
        if self.refinement == Refinement::Frozen {
            return Vec::new();
        }
        let mut split = Vec::new();
        let mut next = Vec::with_capacity(self.active.len() + 2);
        for idx in 0..self.active.len() {
            let id = self.active[idx];
            let node = &self.nodes[id.0];
            let depth = node.interval.depth().unwrap_or(self.max_depth);
            if depth < self.max_depth && node.total_play >= self.thresholds[depth as usize] {
                let halves = node.interval.children().expect("dyadic node");
                let left = NodeId(self.nodes.len());
                let right = NodeId(self.nodes.len() + 1);
                self.nodes.push(BinNode::leaf(halves[0], Some(id), t + 1));
                self.nodes.push(BinNode::leaf(halves[1], Some(id), t + 1));
                let parent = &mut self.nodes[id.0];
                parent.is_active = false;
                parent.deactivated = Some(t);
                parent.children = Some([left, right]);
                next.push(left);
                next.push(right);
                split.push(id);
            } else {
                next.push(id);
            }
        }
        self.active = next;
        split
    }

    /// Checks that the active leaves tile `[0, 1]` without gaps or overlap.
    pub fn is_partition(&self) -> bool {
        let mut cursor = 0.0;
        for (i, id) in self.active.iter().enumerate() {
            let iv = &self.nodes[id.0].interval;
            let last = i + 1 == self.active.len();
            if iv.left != cursor || iv.closed_right != last {
                return false;
            }
            cursor = iv.right;
        }
        cursor == 1.0
    }
}

/// `ln(e · T · |Ḡ|)`.
pub fn log_term(horizon: u64, group_count: usize) -> f64 {
    1.0 + (horizon as f64).ln() + (group_count as f64).ln()
}

/// `⌊½ log₂ T⌋ + 1`, computed exactly on integers.
pub fn max_depth(horizon: u64) -> u32 {
    (63 - horizon.max(1).leading_zeros()) / 2 + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::ForecastEntry;
    use approx::assert_abs_diff_eq;

    fn forecast(tree: &DynamicBinTree, probs: &[f64]) -> Forecast {
        let support = tree
            .active_partition()
            .into_iter()
            .zip(probs)
            .map(|((iv, node), &prob)| ForecastEntry {
                node,
                midpoint: iv.midpoint,
                width: iv.width,
                prob,
            })
            .collect();
        Forecast { support, sampled: None }
    }

    fn force_split(tree: &mut DynamicBinTree, target: NodeId, t: u64) {
        let depth = tree.node(target).interval.depth().unwrap();
        tree.nodes[target.0].total_play = tree.threshold(depth);
        tree.split_pass(t);
    }

    #[test]
    fn new_tree_parameters() {
        let tree = DynamicBinTree::new(1024, 1).unwrap();
        assert_abs_diff_eq!(tree.log_term(), 7.931471805599453, epsilon = 1e-9);
        assert_eq!(tree.max_depth(), 6);

        let tree = DynamicBinTree::new(1, 1).unwrap();
        assert_eq!(tree.log_term(), 1.0);
        assert_eq!(tree.max_depth(), 1);
        assert_eq!(tree.active_leaves(), &[NodeId(0)]);
        assert_eq!(tree.node(NodeId(0)).activated, Some(1));

        let tree = DynamicBinTree::new(4096, 8).unwrap();
        assert_eq!(tree.max_depth(), 7);
        assert_abs_diff_eq!(tree.log_term(), 11.397_207_708_399_18, epsilon = 1e-9);
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(DynamicBinTree::new(0, 1).is_err());
        assert!(DynamicBinTree::new(10, 0).is_err());
    }

    #[test]
    fn max_depth_matches_float_formula() {
        for t in 1..5000u64 {
            let expected = (0.5 * (t as f64).log2()).floor() as u32 + 1;
            assert_eq!(max_depth(t), expected, "T = {t}");
        }
    }

    #[test]
    fn interval_geometry() {
        let iv = Interval::dyadic(3, 5);
        assert_eq!((iv.left, iv.right, iv.midpoint, iv.width), (0.625, 0.75, 0.6875, 0.125));
        assert!(!iv.closed_right);
        assert!(Interval::dyadic(3, 7).closed_right);
        assert!(Interval::dyadic(3, 7).contains(1.0));
        assert!(!iv.contains(0.75));
        let u = Interval::uniform(3, 1);
        assert_abs_diff_eq!(u.midpoint, 0.5);
        assert!(u.children().is_none());
    }

    #[test]
    fn accumulate_play_examples() {
        let mut tree = DynamicBinTree::new(64, 1).unwrap();
        tree.accumulate_play(&forecast(&tree, &[1.0])).unwrap();
        assert_eq!(tree.node(NodeId(0)).total_play, 1.0);

        let mut tree = DynamicBinTree::new(64, 1).unwrap();
        force_split(&mut tree, NodeId(0), 1);
        let kids = tree.active_leaves().to_vec();
        for _ in 0..3 {
            tree.accumulate_play(&forecast(&tree, &[0.5, 0.5])).unwrap();
        }
        assert_eq!(tree.node(kids[0]).total_play, 1.5);
        assert_eq!(tree.node(kids[1]).total_play, 1.5);

        let mut tree = DynamicBinTree::new(64, 1).unwrap();
        force_split(&mut tree, NodeId(0), 1);
        tree.accumulate_play(&forecast(&tree, &[0.25, 0.75])).unwrap();
        tree.accumulate_play(&forecast(&tree, &[0.75, 0.25])).unwrap();
        for id in tree.active_leaves() {
            assert_eq!(tree.node(*id).total_play, 1.0);
        }
        // Frozen parent keeps its pre-split counter.
        assert_eq!(tree.node(NodeId(0)).total_play, tree.threshold(0));
    }

    #[test]
    fn accumulate_play_rejects_inactive_mass() {
        let mut tree = DynamicBinTree::new(64, 1).unwrap();
        force_split(&mut tree, NodeId(0), 1);
        let bad = Forecast {
            support: vec![ForecastEntry { node: NodeId(0), midpoint: 0.5, width: 1.0, prob: 1.0 }],
            sampled: None,
        };
        assert!(matches!(tree.accumulate_play(&bad), Err(Error::InactiveSupport(0))));
        let short = forecast(&tree, &[0.5, 0.4]);
        assert!(matches!(tree.accumulate_play(&short), Err(Error::Unnormalized(_))));
    }

    /// Walks a tree down to a depth-3 leaf so the split threshold can be probed.
    fn depth_three_leaf() -> (DynamicBinTree, NodeId) {
        let mut tree = DynamicBinTree::new(1024, 1).unwrap();
        let mut target = NodeId(0);
        for t in 1..=3 {
            force_split(&mut tree, target, t);
            target = tree.node(target).children.unwrap()[0];
        }
        (tree, target)
    }

    #[test]
    fn split_threshold_boundary() {
        let (mut tree, leaf) = depth_three_leaf();
        assert_eq!(tree.node(leaf).interval.depth(), Some(3));
        // L · 64 ≈ 507.614
        assert_abs_diff_eq!(tree.threshold(3), 507.614_195_558_365, epsilon = 1e-9);

        tree.nodes[leaf.0].total_play = 507.0;
        assert!(tree.split_pass(4).is_empty());

        tree.nodes[leaf.0].total_play = 507.7;
        assert_eq!(tree.split_pass(5), vec![leaf]);
        let [a, b] = tree.node(leaf).children.unwrap();
        assert_eq!(tree.node(a).interval.label, BinLabel::Dyadic(4, 0));
        assert_eq!(tree.node(b).interval.label, BinLabel::Dyadic(4, 1));
        assert_eq!(tree.node(a).activated, Some(6));
        assert_eq!(tree.node(a).total_play, 0.0);
        assert_eq!(tree.node(leaf).deactivated, Some(5));
        assert!(tree.is_partition());
    }

    #[test]
    fn max_depth_leaves_never_split() {
        let mut tree = DynamicBinTree::new(16, 1).unwrap();
        assert_eq!(tree.max_depth(), 3);
        let mut target = NodeId(0);
        for t in 1..=3 {
            force_split(&mut tree, target, t);
            target = tree.node(target).children.unwrap()[0];
        }
        tree.nodes[target.0].total_play = 16.0 * 1e6;
        assert!(tree.split_pass(4).is_empty());
        assert!(tree.node(target).is_active);
    }

    #[test]
    fn active_partition_examples() {
        let mut tree = DynamicBinTree::new(256, 1).unwrap();
        let bounds = |t: &DynamicBinTree| {
            t.active_partition().iter().map(|(iv, _)| (iv.left, iv.right)).collect::<Vec<_>>()
        };
        assert_eq!(bounds(&tree), vec![(0.0, 1.0)]);
        force_split(&mut tree, NodeId(0), 1);
        assert_eq!(bounds(&tree), vec![(0.0, 0.5), (0.5, 1.0)]);
        let left = tree.active_leaves()[0];
        force_split(&mut tree, left, 2);
        assert_eq!(bounds(&tree), vec![(0.0, 0.25), (0.25, 0.5), (0.5, 1.0)]);
        assert!(tree.active_partition().last().unwrap().0.closed_right);
        assert!(tree.is_partition());
    }

    #[test]
    fn locate_respects_half_open_bins() {
        let mut tree = DynamicBinTree::new(256, 1).unwrap();
        force_split(&mut tree, NodeId(0), 1);
        let [l, r] = tree.node(NodeId(0)).children.unwrap();
        assert_eq!(tree.locate(0.0), Some(l));
        assert_eq!(tree.locate(0.4999), Some(l));
        assert_eq!(tree.locate(0.5), Some(r));
        assert_eq!(tree.locate(1.0), Some(r));
        assert_eq!(tree.locate(1.5), None);
    }

    #[test]
    fn uniform_grid_is_frozen_partition() {
        let mut tree = DynamicBinTree::uniform_grid(1000, 1, 10).unwrap();
        assert!(tree.is_partition());
        assert_eq!(tree.universe_size(), 10);
        tree.nodes[0].total_play = 1e9;
        assert!(tree.split_pass(1).is_empty());
        assert_eq!(tree.locate(1.0), Some(NodeId(9)));
        assert_eq!(tree.locate(0.05), Some(NodeId(0)));
    }
}
