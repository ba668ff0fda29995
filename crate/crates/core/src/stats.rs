//! Confidence intervals for simulation output.

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Two-sided 95% Student-t quantile with `dof` degrees of freedom.
pub fn t_quantile_95(dof: usize) -> f64 {
    if dof == 0 {
        return f64::NAN;
    }
    StudentsT::new(0.0, 1.0, dof as f64).expect("valid Student-t parameters").inverse_cdf(0.975)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; `NaN` for fewer than two samples.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Mean and 95% half-width. A single sample yields a zero half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub ci95: f64,
}

pub fn mean_ci95(xs: &[f64]) -> Estimate {
    let m = mean(xs);
    if xs.len() < 2 {
        return Estimate { mean: m, ci95: 0.0 };
    }
    let se = (sample_variance(xs) / xs.len() as f64).sqrt();
    Estimate { mean: m, ci95: t_quantile_95(xs.len() - 1) * se }
}

/// Batch-means interval for an autocorrelated series.
pub fn batch_means_ci95(series: &[f64], n_batches: usize) -> Estimate {
    let n_batches = n_batches.max(2);
    let batch = series.len() / n_batches;
    if batch == 0 {
        return mean_ci95(series);
    }
    let means: Vec<f64> = series.chunks_exact(batch).take(n_batches).map(mean).collect();
    Estimate { mean: mean(series), ci95: mean_ci95(&means).ci95 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_quantiles_match_tables() {
        assert!((t_quantile_95(1) - 12.706).abs() < 1e-3);
        assert!((t_quantile_95(9) - 2.262).abs() < 1e-3);
        assert!((t_quantile_95(1000) - 1.962).abs() < 1e-3);
    }

    #[test]
    fn single_sample_has_degenerate_interval() {
        let e = mean_ci95(&[3.5]);
        assert_eq!(e, Estimate { mean: 3.5, ci95: 0.0 });
    }

    #[test]
    fn interval_of_known_sample() {
        let e = mean_ci95(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        let se = (5.0f64 / 3.0 / 4.0).sqrt();
        assert!((e.ci95 - 3.182446 * se).abs() < 1e-5);
    }
}
