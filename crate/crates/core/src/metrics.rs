//! Run statistics: interquartile mean, bootstrap intervals, return
//! normalisation, performance profiles and the tail-risk measure on
//! detrended gradient norms.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("statistic needs at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// One logged scalar, matching a row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run_id: String,
    pub seed: u64,
    pub task: String,
    pub algorithm: String,
    pub step: u64,
    pub metric: String,
    pub value: f64,
}

fn check(values: &[f64], needed: usize) -> Result<()> {
    if values.len() < needed {
        return Err(MetricsError::TooFew {
            needed,
            got: values.len(),
        });
    }
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(MetricsError::NonFinite(i)),
        None => Ok(()),
    }
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn iqm_sorted(v: &[f64]) -> f64 {
    let cut = v.len() / 4;
    let mid = &v[cut..v.len() - cut];
    mid.iter().sum::<f64>() / mid.len() as f64
}

/// Mean after dropping `floor(n / 4)` values from each end.
pub fn iqm(values: &[f64]) -> Result<f64> {
    check(values, 1)?;
    Ok(iqm_sorted(&sorted(values)))
}

pub fn mean(values: &[f64]) -> Result<f64> {
    check(values, 1)?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`).
pub fn mean_and_standard_error(values: &[f64]) -> Result<(f64, f64)> {
    let m = mean(values)?;
    if values.len() < 2 {
        return Ok((m, 0.0));
    }
    let n = values.len() as f64;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((m, (var / n).sqrt()))
}

/// Percentile bootstrap interval of the IQM.
///
/// The percentiles are order statistics of the resampled IQMs. The interval
/// is widened if needed so it always contains the point estimate.
pub fn bootstrap_ci<R: Rng + ?Sized>(values: &[f64], n_resamples: usize, level: f64, rng: &mut R) -> Result<(f64, f64)> {
    check(values, 1)?;
    if n_resamples == 0 {
        return Err(MetricsError::InvalidArgument("n_resamples must be positive".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(MetricsError::InvalidArgument(format!("level must lie in (0, 1), got {level}")));
    }
    let point = iqm(values)?;
    let n = values.len();
    let mut stats = Vec::with_capacity(n_resamples);
    let mut sample = vec![0.0; n];
    for _ in 0..n_resamples {
        for s in sample.iter_mut() {
            *s = values[rng.random_range(0..n)];
        }
        sample.sort_by(f64::total_cmp);
        stats.push(iqm_sorted(&sample));
    }
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let lo = ((alpha * n_resamples as f64).floor() as usize).min(n_resamples - 1);
    let hi = (((1.0 - alpha) * n_resamples as f64).ceil() as usize).clamp(1, n_resamples) - 1;
    Ok((stats[lo].min(point), stats[hi].max(point)))
}

/// `(v - min) / (max - min)` clipped to `[0, 1]`; everything maps to 0 when
/// `max <= min`.
pub fn normalize_returns(values: &[f64], min: f64, max: f64) -> Vec<f64> {
    if !(max > min) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| ((v - min) / (max - min)).clamp(0.0, 1.0)).collect()
}

/// `n + 1` evenly spaced thresholds from 0 to 1.
pub fn tau_grid(n: usize) -> Vec<f64> {
    let n = n.max(1);
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

/// Fraction of scores strictly above each threshold.
pub fn performance_profile(scores: &[f64], taus: &[f64]) -> Vec<f64> {
    if scores.is_empty() {
        return vec![0.0; taus.len()];
    }
    let s = sorted(scores);
    taus.iter()
        .map(|&t| {
            let at_or_below = s.partition_point(|&v| v <= t);
            (s.len() - at_or_below) as f64 / s.len() as f64
        })
        .collect()
}

/// Consecutive differences `g[t + 1] - g[t]`.
pub fn detrend(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Empirical value at risk: the ascending order statistic at `ceil(q * n)`.
pub fn value_at_risk(values: &[f64], quantile: f64) -> Result<f64> {
    check(values, 1)?;
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(MetricsError::InvalidArgument(format!("quantile must lie in (0, 1], got {quantile}")));
    }
    let s = sorted(values);
    let k = ((quantile * s.len() as f64).ceil() as usize).clamp(1, s.len());
    Ok(s[k - 1])
}

/// Conditional value at risk of the detrended sequence: mean of all
/// consecutive differences at or above their value at risk.
pub fn cvar_detrended(grad_norms: &[f64], quantile: f64) -> Result<f64> {
    check(grad_norms, 2)?;
    let diffs = detrend(grad_norms);
    let var = value_at_risk(&diffs, quantile)?;
    let tail: Vec<f64> = diffs.into_iter().filter(|&d| d >= var).collect();
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn iqm_examples() {
        let v: Vec<f64> = (1..=8).map(f64::from).collect();
        assert_eq!(iqm(&v).unwrap(), 4.5);
        assert_eq!(iqm(&[2.5; 7]).unwrap(), 2.5);
        assert!(iqm(&[]).is_err());
    }

    #[test]
    fn iqm_of_uniform_samples_centres_on_half() {
        // The 25%-trimmed mean of U(0, 1) has asymptotic variance
        // (winsorised variance) / (0.5^2 n) = (1/96 + 1/32) / 0.25 / n, so for
        // n = 100 its spread is about 0.041 and a single draw misses
        // 0.5 +/- 0.05 roughly a fifth of the time. Check the estimator over
        // many draws instead.
        let mut rng = stream(0, "u");
        let est: Vec<f64> = (0..1000)
            .map(|_| {
                let u: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
                iqm(&u).unwrap()
            })
            .collect();
        let centre = est.iter().sum::<f64>() / est.len() as f64;
        assert!((centre - 0.5).abs() < 0.005, "{centre}");
        let sd = (est.iter().map(|e| (e - centre).powi(2)).sum::<f64>() / 999.0).sqrt();
        let predicted = ((1.0 / 96.0 + 1.0 / 32.0) / 0.25 / 100.0f64).sqrt();
        assert!((sd / predicted - 1.0).abs() < 0.1, "{sd} vs {predicted}");
    }

    #[test]
    fn small_samples_trim_nothing() {
        // floor(3 / 4) = 0, so three values give the plain mean.
        assert_eq!(iqm(&[0.0, 1.0, 5.0]).unwrap(), 2.0);
        assert_eq!(iqm(&[0.0, 1.0, 2.0, 100.0]).unwrap(), 1.5);
    }

    #[test]
    fn bootstrap_degenerate_and_sandwich() {
        let mut rng = stream(0, "ci");
        assert_eq!(bootstrap_ci(&[3.0], 200, 0.95, &mut rng).unwrap(), (3.0, 3.0));
        let v = [0.1, 5.0, 2.0, 2.0, -1.0, 8.0];
        let (lo, hi) = bootstrap_ci(&v, 2000, 0.95, &mut rng).unwrap();
        let m = iqm(&v).unwrap();
        assert!(lo <= m && m <= hi);
    }

    #[test]
    fn bootstrap_coverage() {
        let mut covered = 0;
        for trial in 0..100 {
            let mut rng = stream(trial, "normal");
            let v: Vec<f64> = (0..50).map(|_| StandardNormal.sample(&mut rng)).collect();
            let (lo, hi) = bootstrap_ci(&v, 2000, 0.95, &mut rng).unwrap();
            if lo <= 0.0 && 0.0 <= hi {
                covered += 1;
            }
        }
        assert!(covered >= 90, "{covered}/100");
    }

    #[test]
    fn normalisation_examples() {
        assert_eq!(normalize_returns(&[-30.0, 11.0, -9.5], -30.0, 11.0), vec![0.0, 1.0, 0.5]);
        assert_eq!(normalize_returns(&[1.0, 2.0], 3.0, 3.0), vec![0.0, 0.0]);
        assert_eq!(normalize_returns(&[20.0, -50.0], -30.0, 11.0), vec![1.0, 0.0]);
    }

    #[test]
    fn profile_examples() {
        assert_eq!(performance_profile(&[1.0; 4], &[0.0, 0.5, 0.99, 1.0]), vec![1.0, 1.0, 1.0, 0.0]);
        assert_eq!(performance_profile(&[0.2, 0.8], &[0.5]), vec![0.5]);
        let mut rng = stream(1, "p");
        let s: Vec<f64> = (0..200).map(|i| if i % 3 == 0 { 0.0 } else { rng.random::<f64>() }).collect();
        let positive = s.iter().filter(|&&v| v > 0.0).count() as f64 / s.len() as f64;
        assert_eq!(performance_profile(&s, &[0.0])[0], positive);
    }

    #[test]
    fn cvar_examples() {
        assert_eq!(cvar_detrended(&[4.0; 30], 0.95).unwrap(), 0.0);
        let line: Vec<f64> = (0..20).map(|t| 1.5 + 0.25 * t as f64).collect();
        assert!((cvar_detrended(&line, 0.95).unwrap() - 0.25).abs() < 1e-12);
        assert!(cvar_detrended(&[1.0], 0.95).is_err());
    }

    #[test]
    fn cvar_crafted_sequence() {
        // 40 values give 39 differences; ceil(0.95 * 39) = 38, so the two largest
        // differences form the tail.
        let mut g = vec![0.0; 40];
        g[3] = 5.0;
        g[11] = 2.0;
        g[20] = 7.0;
        g[30] = 1.0;
        // Rises: +5, +2, +7, +1; the tail is {7, 5}.
        assert_eq!(cvar_detrended(&g, 0.95).unwrap(), 6.0);
    }

    proptest! {
        #[test]
        fn iqm_permutation_and_shift(mut v in prop::collection::vec(-100f64..100.0, 1..40), c in 0.001f64..50.0, seed in 0u64..1000) {
            let base = iqm(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            prop_assert!(iqm(&shifted).unwrap() > base);
            use rand::seq::SliceRandom;
            v.shuffle(&mut stream(seed, "perm"));
            prop_assert!((iqm(&v).unwrap() - base).abs() < 1e-9);
        }

        #[test]
        fn normalisation_is_affine_invariant(v in prop::collection::vec(-10f64..10.0, 1..10), lo in -20f64..0.0, span in 0.1f64..30.0, a in 0.1f64..5.0, b in -5f64..5.0) {
            let hi = lo + span;
            let direct = normalize_returns(&v, lo, hi);
            let mapped: Vec<f64> = v.iter().map(|x| a * x + b).collect();
            let again = normalize_returns(&mapped, a * lo + b, a * hi + b);
            for (x, y) in direct.iter().zip(&again) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn profile_non_increasing(s in prop::collection::vec(0f64..=1.0, 1..50)) {
            let p = performance_profile(&s, &tau_grid(50));
            prop_assert!(p.windows(2).all(|w| w[1] <= w[0]));
        }

        #[test]
        fn cvar_dominates_var(g in prop::collection::vec(0f64..10.0, 2..80)) {
            let var = value_at_risk(&detrend(&g), 0.95).unwrap();
            prop_assert!(cvar_detrended(&g, 0.95).unwrap() >= var);
        }

        #[test]
        fn ci_contains_point(v in prop::collection::vec(-5f64..5.0, 1..20), seed in 0u64..100) {
            let (lo, hi) = bootstrap_ci(&v, 300, 0.95, &mut stream(seed, "ci")).unwrap();
            let m = iqm(&v).unwrap();
            prop_assert!(lo <= m && m <= hi);
        }
    }
}
