//! Summary statistics for the experiment matrix and the acceptance suite.

use rand::Rng;

use crate::seed::rng_from_seed;

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

/// Sample standard deviation (ddof = 1); `None` below two values.
pub fn sample_std(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let m = mean(values)?;
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Some((ss / (n - 1) as f64).sqrt())
}

/// Standard error of the mean.
pub fn standard_error(values: &[f64]) -> Option<f64> {
    sample_std(values).map(|s| s / (values.len() as f64).sqrt())
}

/// Seeded percentile bootstrap confidence interval for the mean.
pub fn bootstrap_mean_ci(
    values: &[f64],
    resamples: usize,
    confidence: f64,
    seed: u64,
) -> Option<(f64, f64)> {
    let n = values.len();
    if n == 0 || resamples == 0 || !(0.0..1.0).contains(&confidence) {
        return None;
    }
    let mut rng = rng_from_seed(seed);
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut sum = 0.0;
        for _ in 0..n {
            sum += values[rng.random_range(0..n)];
        }
        means.push(sum / n as f64);
    }
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - confidence) / 2.0;
    let lo_idx = ((alpha * resamples as f64).floor() as usize).min(resamples - 1);
    let hi_idx = (((1.0 - alpha) * resamples as f64).ceil() as usize)
        .saturating_sub(1)
        .min(resamples - 1);
    Some((means[lo_idx], means[hi_idx]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn basic_moments() {
        let values = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(mean(&values).unwrap(), 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(
            sample_std(&values).unwrap(),
            (5.0_f64 / 3.0).sqrt(),
            epsilon = 1e-12
        );
        assert!(sample_std(&[1.0]).is_none());
    }

    #[test]
    fn bootstrap_brackets_the_mean_and_is_deterministic() {
        let values: Vec<f64> = (0..100).map(|i| (i % 7) as f64).collect();
        let a = bootstrap_mean_ci(&values, 2000, 0.95, 3).unwrap();
        let b = bootstrap_mean_ci(&values, 2000, 0.95, 3).unwrap();
        assert_eq!(a, b);
        let m = mean(&values).unwrap();
        assert!(a.0 <= m && m <= a.1);
    }

    #[test]
    fn bootstrap_separates_clearly_shifted_samples() {
        let lower: Vec<f64> = (0..200).map(|i| (i % 5) as f64 * 0.01).collect();
        let (_, hi) = bootstrap_mean_ci(&lower, 2000, 0.95, 5).unwrap();
        assert!(hi < 1.0);
    }
}
