//! Log-log least squares and order statistics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `log y ≈ intercept + exponent · log x` (natural logs).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub exponent: f64,
    pub intercept: f64,
    /// Standard error of the exponent; `None` with only two points.
    pub stderr: Option<f64>,
    pub points: usize,
}

pub fn fit_scaling(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::invalid(format!("scaling fit needs positive values, got ({x}, {y})")));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let distinct = {
        let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs.len()
    };
    if distinct < 2 || sxx == 0.0 {
        return Err(Error::invalid("scaling fit needs at least two distinct x values"));
    }
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let stderr = (logs.len() > 2).then(|| {
        let ssr: f64 = logs.iter().map(|p| (p.1 - intercept - exponent * p.0).powi(2)).sum();
        (ssr / (n - 2.0) / sxx).sqrt()
    });
    Ok(ScalingFit { exponent, intercept, stderr, points: logs.len() })
}

/// Linearly interpolated quantile of unsorted data (`q ∈ [0, 1]`).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

pub fn iqr(values: &[f64]) -> f64 {
    quantile(values, 0.75) - quantile(values, 0.25)
}

/// Fits the median of `y_column` per distinct `x_column` value in a CSV file with headers.
pub fn fit_csv(path: &Path, x_column: &str, y_column: &str) -> Result<ScalingFit> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid(format!("{} has no column {name:?}", path.display())))
    };
    let (xi, yi) = (column(x_column)?, column(y_column)?);
    let mut groups: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            let raw = record.get(i).unwrap_or("");
            raw.trim().parse().map_err(|_| Error::invalid(format!("cannot parse {raw:?} as a number")))
        };
        let (x, y) = (parse(xi)?, parse(yi)?);
        groups.entry(x.to_bits()).or_insert((x, Vec::new())).1.push(y);
    }
    let points: Vec<(f64, f64)> = groups.into_values().map(|(x, ys)| (x, median(&ys))).collect();
    fit_scaling(&points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_power_law() {
        let pts: Vec<_> = (10..=14).map(|k| (2f64.powi(k), 2f64.powf(k as f64 / 2.0))).collect();
        let fit = fit_scaling(&pts).unwrap();
        assert_abs_diff_eq!(fit.exponent, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.stderr.unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn linear_recovers_constant() {
        let pts: Vec<_> = [1.0, 3.0, 10.0].iter().map(|&x| (x, 2.5 * x)).collect();
        let fit = fit_scaling(&pts).unwrap();
        assert_abs_diff_eq!(fit.exponent, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.intercept, 2.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn noisy_two_thirds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<_> = (6..=16)
            .map(|k| {
                let x = 2f64.powi(k);
                (x, x.powf(2.0 / 3.0) * (1.0 + rng.random_range(-0.05..0.05)))
            })
            .collect();
        let fit = fit_scaling(&pts).unwrap();
        assert!((fit.exponent - 2.0 / 3.0).abs() < 0.05, "{fit:?}");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_scaling(&[(1.0, 1.0), (2.0, 0.0)]).is_err());
        assert!(fit_scaling(&[(2.0, 1.0), (2.0, 3.0)]).is_err());
        assert!(fit_scaling(&[(1.0, 1.0)]).is_err());
        assert!(fit_scaling(&[(1.0, 1.0), (2.0, 2.0)]).unwrap().stderr.is_none());
    }

    #[test]
    fn quantiles() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(median(&v), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(iqr(&[1.0, 2.0, 3.0, 4.0, 5.0]), 2.0);
    }

    #[test]
    fn fits_csv_medians() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        std::fs::write(&path, "value,calerr\n4,2\n4,100\n4,2\n16,4\n16,4\n").unwrap();
        let fit = fit_csv(&path, "value", "calerr").unwrap();
        assert_abs_diff_eq!(fit.exponent, 0.5, epsilon = 1e-12);
        assert!(fit_csv(&path, "value", "missing").is_err());
    }
}
