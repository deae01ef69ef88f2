//! Confidence-rated AdaNormalHedge for sleeping experts.
//!
//! Each expert carries a cumulative regret `R`, a cumulative absolute regret
//! `C` and a prior `q`. On a round where a set of experts is awake, the
//! learner plays `ω_e ∝ q_e · w(R_e, C_e)` over the awake set, where
//!
//! ```text
//! Φ(R, C) = exp([R]₊² / (3C))            (Φ(R, 0) = 1)
//! w(R, C) = ½ (Φ(R + 1, C + 1) − Φ(R − 1, C + 1))
//! ```
//!
//! After losses are revealed, each awake expert receives the instantaneous
//! regret `r = ℓ̂ − ℓ_e` with `ℓ̂ = Σ ω_e ℓ_e`. Asleep experts are untouched.

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

/// Exponents above this are clamped before `exp` to stay finite.
pub const MAX_EXPONENT: f64 = 700.0;

static CLAMP_LOGGED: AtomicBool = AtomicBool::new(false);

/// `Φ(R, C) = exp([R]₊² / (3C))`, with `Φ = 1` when `C = 0`.
pub fn potential(regret: f64, abs_regret: f64) -> f64 {
    if abs_regret <= 0.0 {
        return 1.0;
    }
    let positive = regret.max(0.0);
    let exponent = positive * positive / (3.0 * abs_regret);
    if exponent > MAX_EXPONENT {
        if !CLAMP_LOGGED.swap(true, Ordering::Relaxed) {
            log::warn!("AdaNormalHedge potential exponent {exponent:.1} clamped to {MAX_EXPONENT}");
        }
        return MAX_EXPONENT.exp();
    }
    exponent.exp()
}

/// `w(R, C) = ½ (Φ(R + 1, C + 1) − Φ(R − 1, C + 1))`.
pub fn raw_weight(regret: f64, abs_regret: f64) -> f64 {
    let hi = potential(regret + 1.0, abs_regret + 1.0);
    let lo = potential(regret - 1.0, abs_regret + 1.0);
    (0.5 * (hi - lo)).max(0.0)
}

/// Per-expert AdaNormalHedge statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertState {
    /// Cumulative regret `R = Σ r_t`.
    pub regret: f64,
    /// Cumulative absolute regret `C = Σ |r_t|`.
    pub abs_regret: f64,
    pub prior: f64,
}

impl ExpertState {
    pub fn new(prior: f64) -> Self {
        ExpertState { regret: 0.0, abs_regret: 0.0, prior }
    }

    pub fn raw_weight(&self) -> f64 {
        raw_weight(self.regret, self.abs_regret)
    }

    pub fn record(&mut self, instantaneous_regret: f64) {
        self.regret += instantaneous_regret;
        self.abs_regret += instantaneous_regret.abs();
    }
}

/// Normalized play weights over a set of awake experts.
///
/// Falls back to prior-proportional weights when every raw weight is zero.
/// Returns an empty vector when `experts` is empty.
pub fn play_weights<'a, I>(experts: I) -> Vec<f64>
where
    I: IntoIterator<Item = &'a ExpertState>,
    I::IntoIter: Clone,
{
    let iter = experts.into_iter();
    let mut weights: Vec<f64> = iter.clone().map(|e| e.prior * e.raw_weight()).collect();
    let mut total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        weights.clear();
        weights.extend(iter.map(|e| e.prior));
        total = weights.iter().sum();
    }
    if total > 0.0 {
        for w in &mut weights {
            *w /= total;
        }
    }
    weights
}

/// A standalone sleeping-experts learner over a fixed expert set.
///
/// The calibration wrapper in [`crate::experts`] manages its own expert
/// universe; this type serves small direct problems and regret checks.
#[derive(Clone, Debug)]
pub struct SleepingHedge {
    experts: Vec<ExpertState>,
}

impl SleepingHedge {
    /// One expert per prior; priors must be positive.
    pub fn new(priors: &[f64]) -> Self {
        assert!(priors.iter().all(|&q| q > 0.0), "priors must be positive");
        SleepingHedge { experts: priors.iter().map(|&q| ExpertState::new(q)).collect() }
    }

    pub fn uniform(count: usize) -> Self {
        Self::new(&vec![1.0 / count as f64; count])
    }

    pub fn experts(&self) -> &[ExpertState] {
        &self.experts
    }

    /// Play distribution over all experts; asleep experts get weight 0.
    pub fn weights(&self, awake: &[bool]) -> Vec<f64> {
        let awake_states: Vec<&ExpertState> =
            self.experts.iter().zip(awake).filter(|(_, &a)| a).map(|(e, _)| e).collect();
        let mut awake_weights = play_weights(awake_states.iter().copied()).into_iter();
        awake.iter().map(|&a| if a { awake_weights.next().unwrap_or(0.0) } else { 0.0 }).collect()
    }

    /// Plays one round and returns the learner's loss `ℓ̂ = Σ ω_e ℓ_e`.
    ///
    /// `losses` entries of asleep experts are ignored. Returns `None` when no
    /// expert is awake.
    pub fn step(&mut self, awake: &[bool], losses: &[f64]) -> Option<f64> {
        assert_eq!(awake.len(), self.experts.len());
        assert_eq!(losses.len(), self.experts.len());
        if !awake.iter().any(|&a| a) {
            return None;
        }
        let weights = self.weights(awake);
        let mixed: f64 = weights.iter().zip(losses).zip(awake).filter(|(_, &a)| a).map(|((w, l), _)| w * l).sum();
        for ((expert, &a), &loss) in self.experts.iter_mut().zip(awake).zip(losses) {
            if a {
                expert.record(mixed - loss);
            }
        }
        Some(mixed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn potential_examples() {
        assert_eq!(potential(0.0, 0.0), 1.0);
        assert_abs_diff_eq!(potential(3.0, 3.0), std::f64::consts::E, epsilon = 1e-12);
        assert_eq!(potential(-5.0, 7.0), 1.0);
    }

    #[test]
    fn potential_clamps_instead_of_overflowing() {
        let p = potential(1e6, 1e6);
        assert!(p.is_finite());
        assert_eq!(p, MAX_EXPONENT.exp());
    }

    #[test]
    fn raw_weight_examples() {
        // ½(e^{1/3} − 1)
        assert_abs_diff_eq!(raw_weight(0.0, 0.0), 0.19780621254304476, epsilon = 1e-12);
        assert_eq!(raw_weight(-10.0, 2.0), 0.0);
        // ½(e − e^{1/9})
        let expected = 0.5 * (std::f64::consts::E - (1.0f64 / 9.0).exp());
        assert_abs_diff_eq!(raw_weight(2.0, 2.0), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(raw_weight(2.0, 2.0), 0.8003813798585907, epsilon = 1e-12);
    }

    #[test]
    fn play_weights_fall_back_to_priors() {
        let experts = [
            ExpertState { regret: -10.0, abs_regret: 10.0, prior: 0.25 },
            ExpertState { regret: -10.0, abs_regret: 10.0, prior: 0.75 },
        ];
        assert_eq!(play_weights(experts.iter()), vec![0.25, 0.75]);
        assert!(play_weights(std::iter::empty::<&ExpertState>()).is_empty());
    }

    #[test]
    fn sleeping_hedge_favors_better_expert() {
        let mut hedge = SleepingHedge::uniform(2);
        for _ in 0..200 {
            hedge.step(&[true, true], &[0.0, 1.0]).unwrap();
        }
        let w = hedge.weights(&[true, true]);
        assert!(w[0] > 0.99, "{w:?}");
        assert!(hedge.step(&[false, false], &[0.0, 0.0]).is_none());
    }

    #[test]
    fn asleep_experts_are_untouched() {
        let mut hedge = SleepingHedge::uniform(3);
        hedge.step(&[true, false, true], &[0.2, 0.9, 0.4]).unwrap();
        assert_eq!(hedge.experts()[1], ExpertState::new(1.0 / 3.0));
        let w = hedge.weights(&[true, false, true]);
        assert_eq!(w[1], 0.0);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }
}
