//! Binary group families over contexts.
//!
//! A family `G` is stored together with its augmentation `Ḡ = G ∪ {1}`:
//! when the all-ones group is not a member of `G` it is appended and flagged
//! as augmented, so [`GroupId`]s always index `Ḡ`. Calibration metrics range
//! over `G` only; the learner works over all of `Ḡ`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Margin parameter used by threshold-representation checks unless overridden.
pub const DEFAULT_MARGIN: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u32>,
}

impl Context {
    /// The context of a context-free (marginal) problem.
    pub fn singleton() -> Self {
        Context { id: 0, grid_value: None, level: None }
    }

    pub fn grid(index: u64, value: f64) -> Self {
        Context { id: index, grid_value: Some(value), level: None }
    }

    pub fn with_level(id: u64, level: u32) -> Self {
        Context { id, grid_value: None, level: Some(level) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupPredicate {
    AllOnes,
    /// `1{level(x) ≥ j}`; contexts without a level are outside the group.
    LevelAtLeast(u32),
    /// `(1 ± ψ_ℓ(id − 1)) / 2` with the Walsh function `ψ_ℓ(i) = (−1)^{popcount(ℓ ∧ i)}`.
    Walsh { ell: u64, positive: bool },
    /// Explicit membership by context id (sorted, deduplicated).
    Members(Vec<u64>),
}

impl GroupPredicate {
    pub fn contains(&self, ctx: &Context) -> bool {
        match self {
            GroupPredicate::AllOnes => true,
            GroupPredicate::LevelAtLeast(j) => ctx.level.is_some_and(|c| c >= *j),
            GroupPredicate::Walsh { ell, positive } => {
                let index = ctx.id.wrapping_sub(1);
                (walsh(*ell, index) > 0) == *positive
            }
            GroupPredicate::Members(ids) => ids.binary_search(&ctx.id).is_ok(),
        }
    }
}

/// The Walsh function `ψ_ℓ(i) = (−1)^{popcount(ℓ ∧ i)}`.
pub fn walsh(ell: u64, i: u64) -> i8 {
    if (ell & i).count_ones().is_multiple_of(2) {
        1
    } else {
        -1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub predicate: GroupPredicate,
    /// True when this is the all-ones group added to form `Ḡ`.
    pub augmented: bool,
}

/// Which Walsh features to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalshSubsample {
    Full,
    Random { size: usize, seed: u64 },
}

/// What a family needs from contexts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextRequirement {
    None,
    Level,
    GridIndex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupFamily {
    pub name: String,
    /// `Ḡ`: the family's groups followed by the augmented all-ones group if needed.
    groups: Vec<Group>,
    pub includes_all_ones: bool,
}

impl GroupFamily {
    /// Builds a family from its member groups, appending the all-ones group if absent.
    pub fn new(name: impl Into<String>, members: Vec<(String, GroupPredicate)>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::invalid("group family must contain at least one group"));
        }
        let includes_all_ones = members.iter().any(|(_, p)| *p == GroupPredicate::AllOnes);
        let mut groups: Vec<Group> = members
            .into_iter()
            .map(|(name, predicate)| {
                let predicate = match predicate {
                    GroupPredicate::Members(mut ids) => {
                        ids.sort_unstable();
                        ids.dedup();
                        GroupPredicate::Members(ids)
                    }
                    p => p,
                };
                Group { name, predicate, augmented: false }
            })
            .collect();
        if !includes_all_ones {
            groups.push(Group { name: "all".into(), predicate: GroupPredicate::AllOnes, augmented: true });
        }
        Ok(GroupFamily { name: name.into(), groups, includes_all_ones })
    }

    /// The marginal family `{1}`.
    pub fn all_ones() -> Self {
        Self::new("all_ones", vec![("all".into(), GroupPredicate::AllOnes)]).expect("nonempty")
    }

    /// `{1} ∪ {g_2, …, g_K}` with `g_j(x) = 1{level(x) ≥ j}`.
    pub fn ordinal_strata(levels: u32) -> Result<Self> {
        if levels < 2 {
            return Err(Error::invalid(format!("ordinal strata need K ≥ 2, got {levels}")));
        }
        let mut members = vec![("all".to_string(), GroupPredicate::AllOnes)];
        members.extend((2..=levels).map(|j| (format!("level>={j}"), GroupPredicate::LevelAtLeast(j))));
        Self::new(format!("ordinal:{levels}"), members)
    }

    /// `{1} ∪ {g⁺_ℓ, g⁻_ℓ : ℓ ∈ S}` over a grid of `m` contexts.
    pub fn walsh(m: u64, subsample: WalshSubsample) -> Result<Self> {
        if m < 2 || !m.is_power_of_two() {
            return Err(Error::invalid(format!("Walsh family needs a power of two m ≥ 2, got {m}")));
        }
        let (features, name): (Vec<u64>, String) = match subsample {
            WalshSubsample::Full => ((1..m).collect(), format!("walsh:{m}")),
            WalshSubsample::Random { size, seed } => {
                let available = (m - 1) as usize;
                if size == 0 || size > available {
                    return Err(Error::invalid(format!("cannot subsample {size} of {available} Walsh features")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut picked: Vec<u64> = sample(&mut rng, available, size).into_iter().map(|i| i as u64 + 1).collect();
                picked.sort_unstable();
                log::info!("Walsh family m={m}: sampled {size} features with seed {seed}: {picked:?}");
                (picked, format!("walsh:{m}:{size}:{seed}"))
            }
        };
        let mut members = vec![("all".to_string(), GroupPredicate::AllOnes)];
        for ell in features {
            members.push((format!("walsh+{ell}"), GroupPredicate::Walsh { ell, positive: true }));
            members.push((format!("walsh-{ell}"), GroupPredicate::Walsh { ell, positive: false }));
        }
        Self::new(name, members)
    }

    /// Parses `all_ones`, `ordinal:K`, `walsh:m`, or `walsh:m:size[:seed]`.
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        let num = |s: &str| -> Result<u64> {
            s.parse().map_err(|_| Error::invalid(format!("bad number {s:?} in group family {spec:?}")))
        };
        match parts.as_slice() {
            ["all_ones"] => Ok(Self::all_ones()),
            ["ordinal", k] => Self::ordinal_strata(num(k)? as u32),
            ["walsh", m] => Self::walsh(num(m)?, WalshSubsample::Full),
            ["walsh", m, size] => Self::walsh(num(m)?, WalshSubsample::Random { size: num(size)? as usize, seed: 0 }),
            ["walsh", m, size, seed] => {
                Self::walsh(num(m)?, WalshSubsample::Random { size: num(size)? as usize, seed: num(seed)? })
            }
            _ => Err(Error::invalid(format!("unknown group family {spec:?}"))),
        }
    }

    /// `|Ḡ|`.
    pub fn augmented_len(&self) -> usize {
        self.groups.len()
    }

    /// All groups of `Ḡ` in id order.
    pub fn augmented(&self) -> &[Group] {
        &self.groups
    }

    pub fn group(&self, id: GroupId) -> &Group {
        &self.groups[id.0]
    }

    /// Ids of the groups in `G` (excluding the augmented all-ones group).
    pub fn member_ids(&self) -> impl Iterator<Item = GroupId> + '_ {
        self.groups.iter().enumerate().filter(|(_, g)| !g.augmented).map(|(i, _)| GroupId(i))
    }

    /// Id of the all-ones group in `Ḡ`.
    pub fn all_ones_id(&self) -> GroupId {
        GroupId(self.groups.iter().position(|g| g.predicate == GroupPredicate::AllOnes).expect("Ḡ contains 1"))
    }

    pub fn contains(&self, id: GroupId, ctx: &Context) -> bool {
        self.groups[id.0].predicate.contains(ctx)
    }

    /// `g(x)` for every `g ∈ Ḡ`, as 0/1 values.
    pub fn indicators(&self, ctx: &Context) -> Vec<f64> {
        self.groups.iter().map(|g| if g.predicate.contains(ctx) { 1.0 } else { 0.0 }).collect()
    }

    pub fn requirement(&self) -> ContextRequirement {
        let mut req = ContextRequirement::None;
        for g in &self.groups {
            match g.predicate {
                GroupPredicate::LevelAtLeast(_) => req = ContextRequirement::Level,
                GroupPredicate::Walsh { .. } => req = ContextRequirement::GridIndex,
                _ => {}
            }
        }
        req
    }
}

/// Outcome of checking a threshold representation on realized contexts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCheck {
    pub ok: bool,
    /// `B = Σ |α_g|`.
    pub cost: f64,
    /// `min_t s_t · h_r(x_t)` with `s_t = +1` when `f(x_t) ≥ r` and `−1` otherwise.
    pub worst_margin: f64,
    /// Context id attaining the worst margin when the check fails.
    pub violating: Option<u64>,
}

/// Checks that `h_r = Σ α_g g` separates `{f ≥ r}` from `{f < r}` with margin `1 − η`
/// on every realized context.
pub fn verify_threshold_representation(
    f_values: &[(Context, f64)],
    threshold: f64,
    coefficients: &[(GroupId, f64)],
    family: &GroupFamily,
    margin_slack: f64,
) -> Result<ThresholdCheck> {
    if let Some((id, _)) = coefficients.iter().find(|(id, _)| id.0 >= family.augmented_len()) {
        return Err(Error::invalid(format!("coefficient references unknown group {}", id.0)));
    }
    let cost = coefficients.iter().map(|(_, a)| a.abs()).sum();
    let required = 1.0 - margin_slack;
    let mut worst_margin = f64::INFINITY;
    let mut worst_ctx = None;
    for (ctx, f) in f_values {
        let h: f64 = coefficients
            .iter()
            .filter(|(id, _)| family.contains(*id, ctx))
            .map(|(_, a)| a)
            .sum();
        let margin = if *f >= threshold { h } else { -h };
        if margin < worst_margin {
            worst_margin = margin;
            worst_ctx = Some(ctx.id);
        }
    }
    let ok = worst_margin >= required;
    Ok(ThresholdCheck { ok, cost, worst_margin, violating: if ok { None } else { worst_ctx } })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn level_ctx(level: u32) -> Context {
        Context::with_level(level as u64, level)
    }

    #[test]
    fn ordinal_strata_examples() {
        let fam = GroupFamily::ordinal_strata(4).unwrap();
        assert_eq!(fam.augmented_len(), 4);
        assert!(fam.includes_all_ones);
        assert_eq!(fam.indicators(&level_ctx(3)), vec![1.0, 1.0, 1.0, 0.0]);
        assert_eq!(fam.indicators(&level_ctx(1)), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(fam.indicators(&level_ctx(4)), vec![1.0, 1.0, 1.0, 1.0]);
        assert!(GroupFamily::ordinal_strata(1).is_err());
    }

    #[test]
    fn walsh_parity_example() {
        assert_eq!((0..4).map(|i| walsh(3, i)).collect::<Vec<_>>(), vec![1, -1, -1, 1]);
        let fam = GroupFamily::walsh(4, WalshSubsample::Full).unwrap();
        let plus3 = fam.augmented().iter().position(|g| g.name == "walsh+3").unwrap();
        let members: Vec<bool> = (1..=4).map(|id| fam.contains(GroupId(plus3), &Context::grid(id, 0.0))).collect();
        assert_eq!(members, vec![true, false, false, true]);
        assert!(fam.augmented().iter().all(|g| !matches!(g.predicate, GroupPredicate::Walsh { ell: 0, .. })));
    }

    #[test]
    fn walsh_m2_full() {
        let fam = GroupFamily::walsh(2, WalshSubsample::Full).unwrap();
        assert_eq!(fam.augmented_len(), 3);
        let plus = GroupId(1);
        let minus = GroupId(2);
        assert_eq!(fam.group(plus).name, "walsh+1");
        assert_eq!(
            (1..=2).map(|id| fam.contains(plus, &Context::grid(id, 0.0))).collect::<Vec<_>>(),
            vec![true, false]
        );
        assert_eq!(
            (1..=2).map(|id| fam.contains(minus, &Context::grid(id, 0.0))).collect::<Vec<_>>(),
            vec![false, true]
        );
    }

    #[test]
    fn walsh_rejects_non_powers_of_two() {
        assert!(GroupFamily::walsh(6, WalshSubsample::Full).is_err());
        assert!(GroupFamily::walsh(1, WalshSubsample::Full).is_err());
    }

    #[test]
    fn walsh_orthogonality_and_complement() {
        for m in [2u64, 4, 8, 16, 32, 64] {
            for a in 0..m {
                for b in 0..m {
                    let dot: i64 = (0..m).map(|i| (walsh(a, i) * walsh(b, i)) as i64).sum();
                    assert_eq!(dot, if a == b { m as i64 } else { 0 });
                }
            }
            let fam = GroupFamily::walsh(m, WalshSubsample::Full).unwrap();
            for id in 1..=m {
                let ind = fam.indicators(&Context::grid(id, 0.0));
                for pair in ind[1..].chunks(2) {
                    assert_eq!(pair[0] + pair[1], 1.0);
                }
            }
        }
    }

    #[test]
    fn walsh_random_subsample_is_reproducible() {
        let a = GroupFamily::walsh(128, WalshSubsample::Random { size: 10, seed: 7 }).unwrap();
        let b = GroupFamily::parse("walsh:128:10:7").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.augmented_len(), 21);
        assert!(GroupFamily::walsh(8, WalshSubsample::Random { size: 8, seed: 0 }).is_err());
    }

    #[test]
    fn parse_names() {
        assert_eq!(GroupFamily::parse("all_ones").unwrap().augmented_len(), 1);
        assert_eq!(GroupFamily::parse("ordinal:3").unwrap().augmented_len(), 3);
        assert_eq!(GroupFamily::parse("walsh:8").unwrap().augmented_len(), 15);
        assert!(GroupFamily::parse("walsh").is_err());
        assert!(GroupFamily::parse("bogus:1").is_err());
    }

    #[test]
    fn augmentation_adds_all_ones_once() {
        let fam = GroupFamily::new("custom", vec![("odd".into(), GroupPredicate::Members(vec![3, 1, 1]))]).unwrap();
        assert_eq!(fam.augmented_len(), 2);
        assert!(!fam.includes_all_ones);
        assert_eq!(fam.member_ids().collect::<Vec<_>>(), vec![GroupId(0)]);
        assert_eq!(fam.all_ones_id(), GroupId(1));
        assert_eq!(fam.group(GroupId(0)).predicate, GroupPredicate::Members(vec![1, 3]));
    }

    #[test]
    fn ordinal_threshold_representation() {
        // f(x) = a_{c(x)} with a = (0.1, 0.3, 0.6, 0.9); r ∈ (a_2, a_3] selects g_3.
        let fam = GroupFamily::ordinal_strata(4).unwrap();
        let a = [0.1, 0.3, 0.6, 0.9];
        let values: Vec<(Context, f64)> = (1..=4).map(|c| (level_ctx(c), a[c as usize - 1])).collect();
        let coeffs = [(GroupId(2), 2.0), (fam.all_ones_id(), -1.0)];
        let check = verify_threshold_representation(&values, 0.5, &coeffs, &fam, DEFAULT_MARGIN).unwrap();
        assert!(check.ok);
        assert_eq!(check.cost, 3.0);
        assert_eq!(check.worst_margin, 1.0);
    }

    #[test]
    fn constant_score_threshold_representation() {
        let fam = GroupFamily::all_ones();
        let values = vec![(Context::singleton(), 0.4)];
        let check = verify_threshold_representation(&values, 0.3, &[(GroupId(0), 1.0)], &fam, DEFAULT_MARGIN).unwrap();
        assert!(check.ok);
        assert_eq!(check.cost, 1.0);
    }

    #[test]
    fn zero_coefficients_fail_margin() {
        let fam = GroupFamily::all_ones();
        let values = vec![(Context::singleton(), 0.4)];
        let check = verify_threshold_representation(&values, 0.3, &[(GroupId(0), 0.0)], &fam, DEFAULT_MARGIN).unwrap();
        assert!(!check.ok);
        assert_eq!(check.worst_margin, 0.0);
        assert_eq!(check.violating, Some(0));
        assert!(verify_threshold_representation(&values, 0.3, &[(GroupId(5), 1.0)], &fam, 0.25).is_err());
    }
}
