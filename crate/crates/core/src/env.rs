//! Synthetic outcome processes.
//!
//! Oblivious environments fix their mean path `q_1..q_T` up front; outcome
//! draws use a dedicated seeded stream that never depends on the learner, so
//! two learners run against the same seed see the same outcomes. The adaptive
//! adversary looks at the mixed forecast `π_t`, never at the realized
//! prediction.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{Context, ContextRequirement};
use crate::solver::ForecastEntry;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub length: u64,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Drift {
    /// `q_t = center + amplitude · sin(2π t / period)`.
    Sinusoid { amplitude: f64, period: f64, center: f64 },
    /// `±step` moves from `start`, reflected into `clamp`.
    RandomWalk {
        step: f64,
        #[serde(default = "default_walk_start")]
        start: f64,
        #[serde(default = "default_walk_clamp")]
        clamp: [f64; 2],
    },
}

fn default_walk_start() -> f64 {
    0.5
}

fn default_walk_clamp() -> [f64; 2] {
    [0.05, 0.95]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptiveStrategy {
    /// `y = 1` if `Σ π_I r_I ≤ ½`, else `y = 0`.
    AntiMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Variant {
    PiecewiseBernoulli { segments: Vec<Segment> },
    Drifting { kind: Drift },
    /// Round-robin contexts `x_i = ¼ + (i − 1) / (2(m − 1))`, outcomes `x ± ¼`.
    OrderedGridWalsh { m: u64 },
    Adaptive { strategy: AdaptiveStrategy },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub variant: Variant,
    #[serde(default)]
    pub seed: u64,
}

impl EnvironmentSpec {
    pub fn stationary(mean: f64, horizon: u64, seed: u64) -> Self {
        EnvironmentSpec {
            variant: Variant::PiecewiseBernoulli { segments: vec![Segment { length: horizon, mean }] },
            seed,
        }
    }

    /// `count` equal-length segments cycling through `means`.
    pub fn alternating(means: &[f64], count: usize, horizon: u64, seed: u64) -> Self {
        let lengths = split_evenly(horizon, count);
        let segments = lengths
            .into_iter()
            .enumerate()
            .map(|(j, length)| Segment { length, mean: means[j % means.len()] })
            .collect();
        EnvironmentSpec { variant: Variant::PiecewiseBernoulli { segments }, seed }
    }

    pub fn is_oblivious(&self) -> bool {
        !matches!(self.variant, Variant::Adaptive { .. })
    }

    pub fn context_kind(&self) -> ContextRequirement {
        match self.variant {
            Variant::OrderedGridWalsh { .. } => ContextRequirement::GridIndex,
            _ => ContextRequirement::None,
        }
    }

    /// The same environment stretched to `horizon`; segment lengths are rescaled proportionally.
    pub fn with_horizon(&self, horizon: u64) -> Self {
        let mut out = self.clone();
        if let Variant::PiecewiseBernoulli { segments } = &mut out.variant {
            let weights: Vec<u64> = segments.iter().map(|s| s.length).collect();
            for (s, len) in segments.iter_mut().zip(apportion(horizon, &weights)) {
                s.length = len;
            }
        }
        out
    }

    /// Replaces piecewise segments with `count` equal segments cycling the current means.
    pub fn with_segment_count(&self, count: usize, horizon: u64) -> Result<Self> {
        match &self.variant {
            Variant::PiecewiseBernoulli { segments } if !segments.is_empty() && count >= 1 => {
                let mut means: Vec<f64> = Vec::new();
                for s in segments {
                    if means.last() != Some(&s.mean) {
                        means.push(s.mean);
                    }
                }
                Ok(Self::alternating(&means, count, horizon, self.seed))
            }
            _ => Err(Error::invalid("segment sweeps need a piecewise_bernoulli environment")),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        EnvironmentSpec { seed, ..self.clone() }
    }
}

fn split_evenly(total: u64, parts: usize) -> Vec<u64> {
    apportion(total, &vec![1; parts])
}

/// Integer lengths proportional to `weights` summing to `total` (largest remainder).
fn apportion(total: u64, weights: &[u64]) -> Vec<u64> {
    let sum: u64 = weights.iter().sum();
    if sum == 0 {
        return weights.to_vec();
    }
    let mut out: Vec<u64> = weights.iter().map(|&w| (w as u128 * total as u128 / sum as u128) as u64).collect();
    let mut rema: Vec<(u128, usize)> =
        weights.iter().enumerate().map(|(i, &w)| ((w as u128 * total as u128) % sum as u128, i)).collect();
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = total - out.iter().sum::<u64>();
    for &(_, i) in rema.iter().take(short as usize) {
        out[i] += 1;
    }
    out
}

/// One round of nature's move.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundDraw {
    pub context: Context,
    pub outcome: f64,
    pub mean: Option<f64>,
}

pub struct Environment {
    spec: EnvironmentSpec,
    horizon: u64,
    means: Option<Vec<f64>>,
    rng: ChaCha8Rng,
}

impl Environment {
    pub fn new(spec: &EnvironmentSpec, horizon: u64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        let means = match &spec.variant {
            Variant::PiecewiseBernoulli { segments } => Some(piecewise_path(segments, horizon)?),
            Variant::Drifting { kind } => Some(drift_path(kind, horizon, spec.seed)?),
            Variant::OrderedGridWalsh { m } => {
                if *m < 2 {
                    return Err(Error::invalid(format!("ordered grid needs m ≥ 2, got {m}")));
                }
                Some((1..=horizon).map(|t| grid_point(*m, grid_index(*m, t))).collect())
            }
            Variant::Adaptive { .. } => None,
        };
        Ok(Environment { spec: spec.clone(), horizon, means, rng: ChaCha8Rng::seed_from_u64(spec.seed) })
    }

    pub fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    /// `q_1..q_T` for oblivious variants.
    pub fn mean_path(&self) -> Option<&[f64]> {
        self.means.as_deref()
    }

    pub fn next_context(&self, t: u64) -> Context {
        match self.spec.variant {
            Variant::OrderedGridWalsh { m } => {
                let i = grid_index(m, t);
                Context::grid(i, grid_point(m, i))
            }
            _ => Context::singleton(),
        }
    }

    /// Draws `y_t`. Adaptive variants see the mixed forecast `π_t` (never the realized prediction).
    pub fn draw_outcome(&mut self, t: u64, context: &Context, mixed: Option<&[ForecastEntry]>) -> Result<RoundDraw> {
        let (outcome, mean) = match &self.spec.variant {
            Variant::PiecewiseBernoulli { .. } | Variant::Drifting { .. } => {
                let q = self.mean_at(t);
                let u: f64 = self.rng.random();
                (if u < q { 1.0 } else { 0.0 }, Some(q))
            }
            Variant::OrderedGridWalsh { .. } => {
                let x = context.grid_value.unwrap_or_else(|| self.mean_at(t));
                let up: bool = self.rng.random();
                (if up { x + 0.25 } else { x - 0.25 }, Some(x))
            }
            Variant::Adaptive { strategy: AdaptiveStrategy::AntiMean } => {
                let pi = mixed.ok_or(Error::MissingForecast)?;
                let mean: f64 = pi.iter().map(|e| e.prob * e.midpoint).sum();
                let y = if mean <= 0.5 { 1.0 } else { 0.0 };
                (y, Some(y))
            }
        };
        Ok(RoundDraw { context: context.clone(), outcome, mean })
    }

    fn mean_at(&self, t: u64) -> f64 {
        self.means.as_ref().expect("oblivious mean path")[(t - 1) as usize]
    }

    /// `Σ_t |q_t − median(q)|`, the best ℓ₁ fit of the mean path by a constant.
    pub fn c_stat(&self) -> Result<f64> {
        self.means.as_deref().map(c_stat).ok_or(Error::NotOblivious("c_stat"))
    }
}

/// `inf_c Σ |q_t − c|`, attained at a median of `q`.
pub fn c_stat(means: &[f64]) -> f64 {
    if means.is_empty() {
        return 0.0;
    }
    let mut sorted = means.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[(sorted.len() - 1) / 2];
    means.iter().map(|q| (q - median).abs()).sum()
}

/// 1-based grid index visited at round `t`.
pub fn grid_index(m: u64, t: u64) -> u64 {
    1 + (t - 1) % m
}

/// `x_i = ¼ + (i − 1) / (2(m − 1))`.
pub fn grid_point(m: u64, i: u64) -> f64 {
    0.25 + (i - 1) as f64 / (2.0 * (m - 1) as f64)
}

fn check_mean(q: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&q) {
        Ok(q)
    } else {
        Err(Error::invalid(format!("mean {q} outside [0, 1]")))
    }
}

fn piecewise_path(segments: &[Segment], horizon: u64) -> Result<Vec<f64>> {
    let total: u64 = segments.iter().map(|s| s.length).sum();
    if total != horizon {
        return Err(Error::invalid(format!("segment lengths sum to {total}, horizon is {horizon}")));
    }
    let mut path = Vec::with_capacity(horizon as usize);
    for s in segments {
        let q = check_mean(s.mean)?;
        path.extend(std::iter::repeat_n(q, s.length as usize));
    }
    Ok(path)
}

fn drift_path(kind: &Drift, horizon: u64, seed: u64) -> Result<Vec<f64>> {
    match *kind {
        Drift::Sinusoid { amplitude, period, center } => {
            if !(period > 0.0) {
                return Err(Error::invalid("sinusoid period must be positive"));
            }
            check_mean(center - amplitude.abs())?;
            check_mean(center + amplitude.abs())?;
            Ok((1..=horizon).map(|t| center + amplitude * (2.0 * PI * t as f64 / period).sin()).collect())
        }
        Drift::RandomWalk { step, start, clamp: [lo, hi] } => {
            if !(0.0 <= lo && lo < hi && hi <= 1.0) || step < 0.0 || step > hi - lo {
                return Err(Error::invalid("random walk needs 0 ≤ lo < hi ≤ 1 and 0 ≤ step ≤ hi − lo"));
            }
            // The path has its own stream so it stays fixed regardless of outcome draws.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            let mut q = start.clamp(lo, hi);
            let mut path = Vec::with_capacity(horizon as usize);
            for _ in 0..horizon {
                path.push(q);
                q += if rng.random::<bool>() { step } else { -step };
                if q > hi {
                    q = 2.0 * hi - q;
                }
                if q < lo {
                    q = 2.0 * lo - q;
                }
                q = q.clamp(lo, hi);
            }
            Ok(path)
        }
    }
}
