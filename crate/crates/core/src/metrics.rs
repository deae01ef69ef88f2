//! Calibration error, tree diagnostics and audits over a finished transcript.
//!
//! Prediction values are bucketed by bin identity. Sums over values run in
//! increasing midpoint order and sums over rounds in increasing `t`, so the
//! results are reproducible bit for bit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bins::{BinLabel, Interval};
use crate::error::{Error, Result};
use crate::groups::Context;
use crate::transcript::Transcript;

/// Tolerance on ledger row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupBias {
    pub group_id: usize,
    pub name: String,
    /// `Σ_v |Σ_{t: p_t = v} g(x_t)(y_t − v)|`.
    pub bias_sum: f64,
    /// Whether the group is in `G` (as opposed to only in `Ḡ`).
    pub member: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// Max of `bias_sum` over `G`.
    pub mcerr: f64,
    /// `bias_sum` of the all-ones group.
    pub calerr: f64,
    pub per_group: Vec<GroupBias>,
    pub distinct_values: usize,
}

/// Computes MCerr over the transcript's family and the marginal CalErr.
pub fn calibration(transcript: &Transcript) -> CalibrationReport {
    let family = &transcript.header.family;
    let entries = transcript.bias.by_value();
    let per_group: Vec<GroupBias> = family
        .augmented()
        .iter()
        .enumerate()
        .map(|(j, g)| GroupBias {
            group_id: j,
            name: g.name.clone(),
            bias_sum: entries.iter().map(|(_, e)| e.sums[j].abs()).sum(),
            member: !g.augmented,
        })
        .collect();
    let mcerr = per_group.iter().filter(|g| g.member).map(|g| g.bias_sum).fold(0.0, f64::max);
    let calerr = per_group[family.all_ones_id().0].bias_sum;
    CalibrationReport { mcerr, calerr, per_group, distinct_values: entries.len() }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthStats {
    pub depth: u32,
    /// `m_d`: ever-active bins at this depth.
    pub ever_active: usize,
    /// `|A_d|`: bins at this depth that split.
    pub splits: usize,
    /// Largest total play of any bin at this depth.
    pub max_play: f64,
}

/// Per-depth counts from `0` to the deepest dyadic bin seen. Empty for uniform grids.
pub fn depth_profile(transcript: &Transcript) -> Vec<DepthStats> {
    let mut profile: Vec<DepthStats> = Vec::new();
    for node in &transcript.nodes {
        let Some(d) = node.bin.depth() else { continue };
        while profile.len() <= d as usize {
            let depth = profile.len() as u32;
            profile.push(DepthStats { depth, ever_active: 0, splits: 0, max_play: 0.0 });
        }
        let s = &mut profile[d as usize];
        s.ever_active += 1;
        s.splits += node.split as usize;
        s.max_play = s.max_play.max(node.total_play);
    }
    profile
}

/// An inclusive block of rounds `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub start: u64,
    pub end: u64,
}

impl Block {
    pub fn new(start: u64, end: u64) -> Result<Self> {
        if start == 0 || end < start {
            return Err(Error::invalid(format!("invalid block [{start}, {end}]")));
        }
        Ok(Block { start, end })
    }

    pub fn contains(&self, t: u64) -> bool {
        (self.start..=self.end).contains(&t)
    }

    pub fn len(&self) -> u64 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Forecast mass per bin, as `(t, π)` lists in round order.
#[derive(Clone, Debug, Default)]
pub struct PlayLedger {
    plays: BTreeMap<BinLabel, Vec<(u64, f64)>>,
}

impl PlayLedger {
    pub fn from_transcript(transcript: &Transcript) -> Result<Self> {
        require_ledger(transcript)?;
        let mut plays: BTreeMap<BinLabel, Vec<(u64, f64)>> = BTreeMap::new();
        for r in &transcript.rounds {
            for p in &r.forecast {
                plays.entry(p.bin).or_default().push((r.t, p.prob));
            }
        }
        Ok(PlayLedger { plays })
    }

    pub fn plays(&self, bin: BinLabel) -> &[(u64, f64)] {
        self.plays.get(&bin).map_or(&[], |v| v)
    }

    /// `N_S(I) = Σ_{t ∈ S} π_{t,I}`.
    pub fn mass(&self, bin: BinLabel, block: Block) -> f64 {
        self.plays(bin).iter().filter(|(t, _)| block.contains(*t)).map(|(_, p)| p).sum()
    }

    pub fn bins(&self) -> impl Iterator<Item = BinLabel> + '_ {
        self.plays.keys().copied()
    }
}

fn require_ledger(transcript: &Transcript) -> Result<()> {
    if transcript.has_ledger() {
        Ok(())
    } else {
        Err(Error::invalid("operation needs a full transcript with per-round forecasts"))
    }
}

/// `Ξ_d(S) = Σ_{I at depth d} min{1, N_S(I) w_d² / L}`.
pub fn xi(transcript: &Transcript, block: Block, depth: u32) -> Result<f64> {
    let ledger = PlayLedger::from_transcript(transcript)?;
    Ok(xi_from_ledger(&ledger, transcript.header.log_term, block, depth))
}

pub fn xi_from_ledger(ledger: &PlayLedger, log_term: f64, block: Block, depth: u32) -> f64 {
    let w2 = 4f64.powi(-(depth as i32));
    ledger
        .bins()
        .filter(|b| b.depth() == Some(depth))
        .map(|b| (ledger.mass(b, block) * w2 / log_term).min(1.0))
        .sum()
}

/// `Σ_{t ∈ S} (|μ_t − f(x_t)| − w_d)_+`.
pub fn residual<F: Fn(&Context) -> f64>(transcript: &Transcript, block: Block, depth: u32, f: F) -> Result<f64> {
    require_ledger(transcript)?;
    if block.end > transcript.header.horizon {
        return Err(Error::invalid(format!("block ends after the horizon {}", transcript.header.horizon)));
    }
    let w = (-(depth as f64)).exp2();
    let mut total = 0.0;
    for r in &transcript.rounds[(block.start - 1) as usize..block.end as usize] {
        let mu = r.mean.ok_or(Error::MissingMean(r.t))?;
        total += ((mu - f(&r.context)).abs() - w).max(0.0);
    }
    Ok(total)
}

/// Witness values `(B_S, K_S, R_S)` for one block of a temporal partition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockWitness {
    pub block: Block,
    pub b: f64,
    pub k: f64,
    pub r: f64,
}

/// `M = 1 + Σ_S B_S K_S` and `A = Σ_S √(B_S K_S R_S)`.
pub fn segmented_cost(horizon: u64, witnesses: &[BlockWitness]) -> Result<(f64, f64)> {
    let mut next = 1;
    for w in witnesses {
        if w.block.start != next || w.block.end < w.block.start {
            return Err(Error::invalid(format!(
                "blocks must be contiguous and cover [1, {horizon}]; found [{}, {}] where round {next} was expected",
                w.block.start, w.block.end
            )));
        }
        if !(w.b >= 0.0 && w.k >= 0.0 && w.r >= 0.0) {
            return Err(Error::invalid("witness values must be nonnegative"));
        }
        next = w.block.end + 1;
    }
    if next != horizon + 1 {
        return Err(Error::invalid(format!("blocks cover [1, {}] instead of [1, {horizon}]", next - 1)));
    }
    let m = 1.0 + witnesses.iter().map(|w| w.b * w.k).sum::<f64>();
    let a = witnesses.iter().map(|w| (w.b * w.k * w.r).sqrt()).sum();
    Ok((m, a))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditWitness {
    pub group: usize,
    pub bin: BinLabel,
    pub block: Block,
    pub bias: f64,
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasAudit {
    /// Max over audited `(g, I, S)` of `(|bias| − N w) / (√(N L) + L)`, floored at 0.
    pub worst_ratio: f64,
    pub worst: Option<AuditWitness>,
    pub blocks_checked: u64,
}

/// Checks per-bin group bias against `N_S^g(I) w_I + C(√(N_S^g L) + L)` on every
/// dyadic block `[i·2^j + 1, (i+1)·2^j]` and reports the smallest `C` that works.
///
/// Blocks where the bin received no play contribute nothing and are skipped.
pub fn bias_audit(transcript: &Transcript) -> Result<BiasAudit> {
    require_ledger(transcript)?;
    let family = &transcript.header.family;
    let log_term = transcript.header.log_term;
    let horizon = transcript.header.horizon;
    let levels = 64 - horizon.leading_zeros();

    // Per bin: (t, π, y, indicators) for each round with positive mass.
    type Entry = (u64, f64, f64, Vec<f64>);
    let mut per_bin: BTreeMap<BinLabel, Vec<Entry>> = BTreeMap::new();
    for r in &transcript.rounds {
        let g = family.indicators(&r.context);
        for p in &r.forecast {
            per_bin.entry(p.bin).or_default().push((r.t, p.prob, r.outcome, g.clone()));
        }
    }

    let mut audit = BiasAudit { worst_ratio: 0.0, worst: None, blocks_checked: 0 };
    for (bin, plays) in &per_bin {
        let iv: Interval = bin.interval();
        for group in 0..family.augmented_len() {
            for j in 0..=levels {
                let mut i = 0;
                while i < plays.len() {
                    let block_index = (plays[i].0 - 1) >> j;
                    let (mut bias, mut mass) = (0.0, 0.0);
                    while i < plays.len() && (plays[i].0 - 1) >> j == block_index {
                        let (_, pi, y, ref g) = plays[i];
                        bias += g[group] * pi * (y - iv.midpoint);
                        mass += g[group] * pi;
                        i += 1;
                    }
                    audit.blocks_checked += 1;
                    let ratio = ((bias.abs() - mass * iv.width) / ((mass * log_term).sqrt() + log_term)).max(0.0);
                    if ratio > audit.worst_ratio {
                        let start = (block_index << j) + 1;
                        let end = ((block_index + 1) << j).min(horizon);
                        audit.worst_ratio = ratio;
                        audit.worst = Some(AuditWitness { group, bin: *bin, block: Block { start, end }, bias, mass });
                    }
                }
            }
        }
    }
    Ok(audit)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    /// `None` when the transcript lacks the data for this check.
    pub ok: Option<bool>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub checks: Vec<InvariantCheck>,
}

impl InvariantReport {
    /// True when no check failed.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.ok != Some(false))
    }
}

fn check(name: &str, failures: &[String], skipped: bool) -> InvariantCheck {
    let ok = if skipped { None } else { Some(failures.is_empty()) };
    let detail = if skipped {
        "skipped: summary transcript".to_string()
    } else if failures.is_empty() {
        "ok".to_string()
    } else {
        format!("{} violation(s); first: {}", failures.len(), failures[0])
    };
    InvariantCheck { name: name.into(), ok, detail }
}

/// Structural checks: active predictions, ledger rows, feasibility, split
/// thresholds, partition coverage, and depth counts.
pub fn check_invariants(transcript: &Transcript, tol: f64) -> InvariantReport {
    let header = &transcript.header;
    let full = transcript.has_ledger();
    let mut checks = Vec::new();

    let mut predictions = Vec::new();
    let mut rows = Vec::new();
    let mut feasibility = Vec::new();
    let mut coverage = Vec::new();
    if full {
        let mut partition: Vec<BinLabel> = Vec::new();
        for r in &transcript.rounds {
            if let Some(p) = &r.partition {
                partition = p.clone();
                if let Some(gap) = partition_gap(&partition) {
                    coverage.push(format!("t={}: {gap}", r.t));
                }
            }
            let in_support = r.forecast.iter().any(|p| p.bin == r.prediction && p.prob > 0.0);
            if !in_support || partition.binary_search_by(|b| cmp_left(b, &r.prediction)).is_err() {
                predictions.push(format!("t={}: p={} not an active played bin", r.t, r.prediction));
            }
            if r.forecast.iter().any(|p| partition.binary_search_by(|b| cmp_left(b, &p.bin)).is_err()) {
                predictions.push(format!("t={}: forecast mass on an inactive bin", r.t));
            }
            let sum: f64 = r.forecast.iter().map(|p| p.prob).sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE || r.forecast.iter().any(|p| p.prob < 0.0) {
                rows.push(format!("t={}: row sum {sum}", r.t));
            }
            if r.phi_hat > tol {
                feasibility.push(format!("t={}: φ̂ = {:e}", r.t, r.phi_hat));
            }
        }
    }
    checks.push(check("predictions_active", &predictions, !full));
    checks.push(check("ledger_rows_sum_to_one", &rows, !full));
    checks.push(check("feasibility", &feasibility, !full));
    checks.push(check("partition_coverage", &coverage, !full));

    let mut splits = Vec::new();
    for n in transcript.nodes.iter().filter(|n| n.split) {
        let Some(d) = n.bin.depth() else {
            splits.push(format!("{} is not dyadic but split", n.bin));
            continue;
        };
        let threshold = header.log_term * 4f64.powi(d as i32);
        if d >= header.max_depth || n.total_play < threshold || n.total_play > threshold + 1.0 + 1e-9 {
            splits.push(format!("{} split with N={} (threshold {threshold})", n.bin, n.total_play));
        }
    }
    checks.push(check("split_threshold", &splits, false));

    let mut depth = Vec::new();
    let profile = depth_profile(transcript);
    for s in &profile {
        if s.depth > header.max_depth {
            depth.push(format!("depth {} exceeds d_max {}", s.depth, header.max_depth));
        }
        if s.depth < 63 && s.ever_active as u64 > 1u64 << s.depth {
            depth.push(format!("m_{} = {} > 2^{}", s.depth, s.ever_active, s.depth));
        }
        if s.depth >= 1 && s.ever_active > 2 * profile[s.depth as usize - 1].splits {
            depth.push(format!("m_{} = {} > 2|A_{}|", s.depth, s.ever_active, s.depth - 1));
        }
    }
    checks.push(check("depth_profile", &depth, false));
    InvariantReport { checks }
}

fn cmp_left(a: &BinLabel, b: &BinLabel) -> std::cmp::Ordering {
    let (ia, ib) = (a.interval(), b.interval());
    ia.left.total_cmp(&ib.left).then(ia.width.total_cmp(&ib.width).reverse())
}

fn partition_gap(bins: &[BinLabel]) -> Option<String> {
    let mut cursor = 0.0;
    for (i, b) in bins.iter().enumerate() {
        let iv = b.interval();
        if iv.left != cursor {
            return Some(format!("{b} starts at {} instead of {cursor}", iv.left));
        }
        if iv.closed_right != (i + 1 == bins.len()) {
            return Some(format!("{b} has the wrong right endpoint"));
        }
        cursor = iv.right;
    }
    (cursor != 1.0).then(|| format!("partition ends at {cursor}"))
}

/// Everything the harness reports about one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub calibration: CalibrationReport,
    pub depth_profile: Vec<DepthStats>,
    pub ever_active: usize,
    pub max_depth_reached: u32,
    pub experts_spawned: usize,
}

pub fn summarize(transcript: &Transcript) -> MetricsReport {
    MetricsReport {
        calibration: calibration(transcript),
        depth_profile: depth_profile(transcript),
        ever_active: transcript.ever_active(),
        max_depth_reached: transcript.max_depth_reached(),
        experts_spawned: transcript.experts_spawned,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bins::Refinement;
    use crate::env::EnvironmentSpec;
    use crate::experts::Schedule;
    use crate::groups::{GroupFamily, GroupPredicate};
    use crate::transcript::{BiasTable, NodeRecord, Play, RecordLevel, RoundRecord, TranscriptHeader};
    use approx::assert_abs_diff_eq;

    /// Rounds of `(context id, bin, y, μ)` with point-mass forecasts.
    fn transcript(family: GroupFamily, rounds: &[(u64, BinLabel, f64, Option<f64>)]) -> Transcript {
        let horizon = rounds.len() as u64;
        let mut bias = BiasTable::default();
        let records = rounds
            .iter()
            .enumerate()
            .map(|(i, &(id, bin, y, mu))| {
                let context = Context { id, grid_value: None, level: None };
                bias.record(bin, &family.indicators(&context), y);
                RoundRecord {
                    t: i as u64 + 1,
                    context,
                    partition: (i == 0).then(|| vec![BinLabel::Dyadic(0, 0)]),
                    forecast: vec![Play { bin, prob: 1.0 }],
                    prediction: bin,
                    outcome: y,
                    mean: mu,
                    phi_hat: -0.5,
                }
            })
            .collect();
        Transcript {
            header: TranscriptHeader {
                horizon,
                log_term: 2.0,
                max_depth: 3,
                family,
                schedule: Schedule::Dyadic,
                refinement: Refinement::Dyadic,
                environment: EnvironmentSpec::stationary(0.5, horizon.max(1), 0),
                learner_seed: 1,
                record_level: RecordLevel::Full,
            },
            rounds: records,
            nodes: vec![NodeRecord {
                bin: BinLabel::Dyadic(0, 0),
                activated: 1,
                deactivated: horizon,
                total_play: horizon as f64,
                split: false,
            }],
            bias,
            experts_spawned: 0,
        }
    }

    const ROOT: BinLabel = BinLabel::Dyadic(0, 0);

    #[test]
    fn calibration_hand_sums() {
        let cancel = transcript(GroupFamily::all_ones(), &[(0, ROOT, 1.0, None), (0, ROOT, 0.0, None)]);
        assert_eq!(calibration(&cancel).calerr, 0.0);
        let same = transcript(GroupFamily::all_ones(), &[(0, ROOT, 1.0, None), (0, ROOT, 1.0, None)]);
        assert_eq!(calibration(&same).calerr, 1.0);
        assert_eq!(calibration(&same).mcerr, 1.0);

        let family = GroupFamily::new("first", vec![("first".into(), GroupPredicate::Members(vec![1]))]).unwrap();
        let tr = transcript(family, &[(1, ROOT, 1.0, None), (2, ROOT, 0.0, None)]);
        let report = calibration(&tr);
        assert_eq!(report.mcerr, 0.5);
        assert_eq!(report.calerr, 0.0, "augmented all-ones group is not part of MCerr");
        assert_eq!(report.per_group.len(), 2);
    }

    #[test]
    fn depth_profile_counts() {
        let tr = transcript(GroupFamily::all_ones(), &[(0, ROOT, 1.0, None)]);
        let p = depth_profile(&tr);
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].ever_active, p[0].splits), (1, 0));

        let mut tr = tr;
        tr.nodes[0].split = true;
        tr.nodes.push(NodeRecord { bin: BinLabel::Dyadic(1, 0), activated: 2, deactivated: 2, total_play: 0.0, split: false });
        tr.nodes.push(NodeRecord { bin: BinLabel::Dyadic(1, 1), activated: 2, deactivated: 2, total_play: 0.0, split: false });
        let p = depth_profile(&tr);
        assert_eq!((p[0].ever_active, p[0].splits, p[1].ever_active), (1, 1, 2));
    }

    #[test]
    fn xi_clamps_and_scales() {
        // L = 2, depth 0: the clamp hits at N = 2.
        let rounds: Vec<_> = (0..4).map(|_| (0, ROOT, 1.0, None)).collect();
        let tr = transcript(GroupFamily::all_ones(), &rounds);
        assert_eq!(xi(&tr, Block::new(1, 2).unwrap(), 0).unwrap(), 1.0);
        assert_eq!(xi(&tr, Block::new(1, 1).unwrap(), 0).unwrap(), 0.5);
        assert_eq!(xi(&tr, Block::new(1, 4).unwrap(), 0).unwrap(), 1.0);
        assert_eq!(xi(&tr, Block::new(1, 4).unwrap(), 1).unwrap(), 0.0);
    }

    #[test]
    fn residual_examples() {
        let tr = transcript(GroupFamily::all_ones(), &[(0, ROOT, 1.0, Some(0.9)), (0, ROOT, 0.0, Some(0.1))]);
        let all = Block::new(1, 2).unwrap();
        assert_abs_diff_eq!(residual(&tr, all, 2, |_| 0.5).unwrap(), 0.3, epsilon = 1e-15);
        assert_eq!(residual(&tr, all, 1, |_| 0.5).unwrap(), 0.0);
        let missing = transcript(GroupFamily::all_ones(), &[(0, ROOT, 1.0, None)]);
        assert!(matches!(residual(&missing, Block::new(1, 1).unwrap(), 0, |_| 0.5), Err(Error::MissingMean(1))));
    }

    #[test]
    fn segmented_cost_examples() {
        let w = |s, e, b, k, r| BlockWitness { block: Block { start: s, end: e }, b, k, r };
        assert_eq!(segmented_cost(10, &[w(1, 10, 1.0, 1.0, 0.0)]).unwrap(), (2.0, 0.0));
        assert_eq!(segmented_cost(10, &[w(1, 10, 3.0, 4.0, 12.0)]).unwrap(), (13.0, 12.0));
        assert_eq!(segmented_cost(10, &[w(1, 4, 1.0, 1.0, 0.0), w(5, 10, 1.0, 2.0, 0.0)]).unwrap(), (4.0, 0.0));
        assert!(segmented_cost(10, &[w(1, 4, 1.0, 1.0, 0.0), w(6, 10, 1.0, 1.0, 0.0)]).is_err());
        assert!(segmented_cost(10, &[w(1, 9, 1.0, 1.0, 0.0)]).is_err());
    }

    #[test]
    fn bias_audit_zero_when_calibrated() {
        let tr = transcript(GroupFamily::all_ones(), &[(0, ROOT, 0.5, None), (0, ROOT, 0.5, None)]);
        let audit = bias_audit(&tr).unwrap();
        assert_eq!(audit.worst_ratio, 0.0);
        assert!(audit.worst.is_none());
    }

    #[test]
    fn invariants_flag_bad_rows() {
        let mut tr = transcript(GroupFamily::all_ones(), &[(0, ROOT, 1.0, None), (0, ROOT, 0.0, None)]);
        assert!(check_invariants(&tr, 1e-9).passed());
        tr.rounds[1].forecast[0].prob = 0.9;
        let report = check_invariants(&tr, 1e-9);
        assert!(!report.passed());
        assert_eq!(report.checks[1].ok, Some(false));
    }
}
