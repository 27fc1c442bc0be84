//! Error measures on the common time grid.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no grid points in the window [{t_first}, {t_end}]")]
    EmptyWindow { t_first: f64, t_end: f64 },
    #[error("series lengths differ")]
    LengthMismatch,
}

/// Grid indices `k` with `t_first ≤ times[k] ≤ t_end`.
pub fn window(
    times: &[f64],
    t_first: f64,
    t_end: f64,
) -> Result<std::ops::Range<usize>, MetricError> {
    let eps = 1e-12 * t_end.abs().max(1.0);
    let start = times.partition_point(|&t| t < t_first - eps);
    let end = times.partition_point(|&t| t <= t_end + eps);
    if start >= end {
        return Err(MetricError::EmptyWindow { t_first, t_end });
    }
    Ok(start..end)
}

/// Window average of `sqrt(mean_sq[k])`.
///
/// `mean_sq[k]` is the run-averaged squared deviation at `times[k]`.
/// The rectangle rule on the uniform grid reduces to the mean over the
/// window points.
pub fn norm_rmse_from_mean_sq(
    times: &[f64],
    mean_sq: &[f64],
    t_first: f64,
    t_end: f64,
) -> Result<f64, MetricError> {
    if times.len() != mean_sq.len() {
        return Err(MetricError::LengthMismatch);
    }
    let w = window(times, t_first, t_end)?;
    let n = w.len() as f64;
    Ok(mean_sq[w].iter().map(|m| m.max(0.0).sqrt()).sum::<f64>() / n)
}

/// normRMSE of supply against demand samples, one series per run.
pub fn norm_rmse(
    times: &[f64],
    supplies: &[Vec<f64>],
    demands: &[Vec<f64>],
    t_first: f64,
    t_end: f64,
) -> Result<f64, MetricError> {
    if supplies.len() != demands.len() || supplies.is_empty() {
        return Err(MetricError::LengthMismatch);
    }
    let mut mean_sq = vec![0.0; times.len()];
    for (s, d) in supplies.iter().zip(demands) {
        if s.len() != times.len() || d.len() != times.len() {
            return Err(MetricError::LengthMismatch);
        }
        for k in 0..times.len() {
            mean_sq[k] += (d[k] - s[k]).powi(2);
        }
    }
    let runs = supplies.len() as f64;
    mean_sq.iter_mut().for_each(|m| *m /= runs);
    norm_rmse_from_mean_sq(times, &mean_sq, t_first, t_end)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(n: usize, dt: f64) -> Vec<f64> {
        (0..n).map(|k| k as f64 * dt).collect()
    }

    #[test]
    fn constant_gap() {
        let t = grid(251, 0.01);
        let s = vec![vec![0.3; 251]; 4];
        let d = vec![vec![0.55; 251]; 4];
        assert_relative_eq!(
            norm_rmse(&t, &s, &d, 0.7, 2.5).unwrap(),
            0.25,
            epsilon = 1e-14
        );
    }

    #[test]
    fn perfect_tracking_is_zero() {
        let t = grid(100, 0.01);
        let s = vec![t.iter().map(|x| x.sin()).collect::<Vec<_>>()];
        assert_eq!(norm_rmse(&t, &s, &s, 0.1, 0.99).unwrap(), 0.0);
    }

    #[test]
    fn empty_window() {
        let t = grid(10, 0.1);
        let s = vec![vec![0.0; 10]];
        assert!(matches!(
            norm_rmse(&t, &s, &s, 2.5, 2.5),
            Err(MetricError::EmptyWindow { .. })
        ));
    }

    #[test]
    fn root_of_mean_over_runs() {
        let t = grid(3, 1.0);
        let s = vec![vec![0.0; 3], vec![0.0; 3]];
        let d = vec![vec![1.0; 3], vec![-3.0; 3]];
        assert_relative_eq!(norm_rmse(&t, &s, &d, 0.0, 2.0).unwrap(), 5f64.sqrt());
    }
}
