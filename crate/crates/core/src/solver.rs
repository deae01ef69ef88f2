//! Weighted-feasibility forecasts over the active partition.
//!
//! For coefficients `(a_I, b_I)` with `|a_I| ≤ b_I`, the learner needs a
//! distribution `π` over active bins with
//!
//! ```text
//! Σ_I π_I (a_I (y − r_I) − b_I w_I) ≤ 0   for every y ∈ [0, 1].
//! ```
//!
//! The left side is affine in `y`, so it suffices to check `y = 0` and `y = 1`.
//! That is a zero-sum game with two columns; an optimal mixture needs at most
//! two bins, so the solver enumerates single bins and the equalizing mixture of
//! every pair and keeps the best.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bins::NodeId;
use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Improvements smaller than this do not displace an earlier (smaller or lower-index) candidate.
const TIE_TOLERANCE: f64 = 1e-12;
/// Pairs whose column differences are closer than this are not mixed.
const DEGENERATE_PAIR: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastEntry {
    pub node: NodeId,
    pub midpoint: f64,
    pub width: f64,
    pub prob: f64,
}

/// A mixed forecast over active bins and, once drawn, the realized bin.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    /// Bins with positive probability, in partition order.
    pub support: Vec<ForecastEntry>,
    pub sampled: Option<NodeId>,
}

impl Forecast {
    pub fn prob(&self, node: NodeId) -> f64 {
        self.support.iter().find(|e| e.node == node).map_or(0.0, |e| e.prob)
    }

    /// `Σ_I π_I r_I`.
    pub fn mean(&self) -> f64 {
        self.support.iter().map(|e| e.prob * e.midpoint).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.support.iter().map(|e| e.prob).sum()
    }
}

/// Aggregated wrapper coefficients for one active bin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinCoefficients {
    pub node: NodeId,
    pub midpoint: f64,
    pub width: f64,
    pub a: f64,
    pub b: f64,
}

impl BinCoefficients {
    /// `a (y − r) − b w`.
    pub fn constraint(&self, y: f64) -> f64 {
        self.a * (y - self.midpoint) - self.b * self.width
    }
}

/// Coefficients for every active bin, in partition order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundCoefficients {
    pub bins: Vec<BinCoefficients>,
}

impl RoundCoefficients {
    /// `Σ_I π_I (a_I (y − r_I) − b_I w_I)` for the given forecast.
    pub fn violation(&self, forecast: &Forecast, y: f64) -> f64 {
        forecast
            .support
            .iter()
            .map(|e| {
                let c = self.bins.iter().find(|c| c.node == e.node).map_or(0.0, |c| c.constraint(y));
                e.prob * c
            })
            .sum()
    }

    /// `max(c₀·π, c₁·π)`, the game value of `forecast`.
    pub fn game_value(&self, forecast: &Forecast) -> f64 {
        self.violation(forecast, 0.0).max(self.violation(forecast, 1.0))
    }
}

/// Finds a forecast minimizing `max(c₀·π, c₁·π)`.
///
/// Ties prefer single bins over pairs, then lower partition indices. When every
/// coefficient is zero all forecasts are equivalent and the uniform one is returned.
pub fn solve_forecast(coeffs: &RoundCoefficients, tol: f64) -> Result<Forecast> {
    let bins = &coeffs.bins;
    if bins.is_empty() {
        return Err(Error::invalid("cannot forecast over an empty partition"));
    }
    if bins.iter().all(|c| c.a == 0.0 && c.b == 0.0) {
        let p = 1.0 / bins.len() as f64;
        return Ok(Forecast { support: bins.iter().map(|c| entry(c, p)).collect(), sampled: None });
    }

    let at_zero: Vec<f64> = bins.iter().map(|c| c.constraint(0.0)).collect();
    let at_one: Vec<f64> = bins.iter().map(|c| c.constraint(1.0)).collect();

    let mut best_value = f64::INFINITY;
    let mut best: (usize, Option<(usize, f64)>) = (0, None);
    for i in 0..bins.len() {
        let v = at_zero[i].max(at_one[i]);
        if v < best_value - TIE_TOLERANCE {
            best_value = v;
            best = (i, None);
        }
    }

    // Mixing i and j with weight λ on i equalizes the columns when
    // λ d_i + (1 − λ) d_j = 0, d = c₀ − c₁; only opposite-sign pairs cross inside (0, 1).
    let gaps: Vec<f64> = at_zero.iter().zip(&at_one).map(|(z, o)| z - o).collect();
    for i in 0..bins.len() {
        for j in (i + 1)..bins.len() {
            let (di, dj) = (gaps[i], gaps[j]);
            if !((di > 0.0 && dj < 0.0) || (di < 0.0 && dj > 0.0)) {
                continue;
            }
            let denom = dj - di;
            if denom.abs() < DEGENERATE_PAIR {
                continue;
            }
            let lambda = dj / denom;
            if !(lambda > 0.0 && lambda < 1.0) {
                continue;
            }
            let v0 = lambda * at_zero[i] + (1.0 - lambda) * at_zero[j];
            let v1 = lambda * at_one[i] + (1.0 - lambda) * at_one[j];
            let v = v0.max(v1);
            if v < best_value - TIE_TOLERANCE {
                best_value = v;
                best = (i, Some((j, lambda)));
            }
        }
    }

    if best_value > tol {
        return Err(Error::Infeasible { value: best_value, tol });
    }
    let support = match best {
        (i, None) => vec![entry(&bins[i], 1.0)],
        (i, Some((j, lambda))) => vec![entry(&bins[i], lambda), entry(&bins[j], 1.0 - lambda)],
    };
    Ok(Forecast { support, sampled: None })
}

fn entry(c: &BinCoefficients, prob: f64) -> ForecastEntry {
    ForecastEntry { node: c.node, midpoint: c.midpoint, width: c.width, prob }
}

/// Draws the realized bin `I` with probability `π_I` and records it on the forecast.
pub fn sample_prediction<R: Rng + ?Sized>(forecast: &mut Forecast, rng: &mut R) -> ForecastEntry {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut chosen = *forecast.support.last().expect("forecast has support");
    for e in &forecast.support {
        cumulative += e.prob;
        if u < cumulative {
            chosen = *e;
            break;
        }
    }
    forecast.sampled = Some(chosen.node);
    chosen
}
