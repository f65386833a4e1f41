//! Proportional-hazards diagnostics from scaled Schoenfeld residuals.

use serde::{Deserialize, Serialize};

use crate::cox::schoenfeld_residuals;
use crate::km::kaplan_meier;
use crate::{CoxFit, EventRecord, StatsError, TestResult};

/// How event times are transformed before correlating with residuals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeTransform {
    /// Rank among event times, ties averaged.
    #[default]
    Rank,
    /// `1 − KM(t)` of the pooled cohort.
    KaplanMeier,
}

/// Average ranks (1-based) of `values`.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Per-covariate score test for zero slope of the scaled Schoenfeld
/// residuals against transformed time, given unscaled residuals (one row
/// per event), the transformed times and the row-major inverse information.
pub fn schoenfeld_statistics(
    residuals: &[Vec<f64>],
    time: &[f64],
    variance: &[f64],
) -> Result<Vec<TestResult>, StatsError> {
    if residuals.len() != time.len() {
        return Err(StatsError::LengthMismatch(residuals.len(), time.len()));
    }
    let d = residuals.len();
    if d == 0 {
        return Err(StatsError::NoEvents);
    }
    let q = residuals[0].len();
    if variance.len() != q * q {
        return Err(StatsError::LengthMismatch(variance.len(), q * q));
    }
    let mean_t = time.iter().sum::<f64>() / d as f64;
    let centered: Vec<f64> = time.iter().map(|t| t - mean_t).collect();
    let ss: f64 = centered.iter().map(|g| g * g).sum();
    if ss <= 0.0 {
        return Err(StatsError::InvalidArgument("all event times are tied".into()));
    }
    let u: Vec<f64> = (0..q)
        .map(|a| residuals.iter().zip(&centered).map(|(r, g)| g * r[a]).sum())
        .collect();
    let vu: Vec<f64> = (0..q)
        .map(|a| (0..q).map(|b| variance[a * q + b] * u[b]).sum())
        .collect();
    Ok((0..q)
        .map(|j| {
            let stat = d as f64 * vu[j] * vu[j] / (variance[j * q + j] * ss);
            TestResult::chi_square(stat, 1)
        })
        .collect())
}

/// Grambsch–Therneau style test of proportional hazards, one result per
/// covariate.
pub fn schoenfeld_test(
    fit: &CoxFit,
    covariates: &[Vec<f64>],
    records: &[EventRecord],
    transform: TimeTransform,
) -> Result<Vec<TestResult>, StatsError> {
    let events = records.iter().filter(|r| r.event).count();
    if events < 5 {
        return Err(StatsError::InvalidArgument(format!("need at least 5 events, got {events}")));
    }
    let (times, residuals) = schoenfeld_residuals(fit, covariates, records)?;
    let transformed = match transform {
        TimeTransform::Rank => average_ranks(&times),
        TimeTransform::KaplanMeier => {
            let km = kaplan_meier(records)?;
            times.iter().map(|&t| 1.0 - km.value_before(t)).collect()
        }
    };
    schoenfeld_statistics(&residuals, &transformed, &fit.variance()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_ranks_handles_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn residuals_orthogonal_to_rank_give_p_one() {
        // centered ranks -2,-1,0,1,2; residuals 1,-2,0,2,-1 are orthogonal to them
        let residuals: Vec<Vec<f64>> = [1.0, -2.0, 0.0, 2.0, -1.0].iter().map(|&r| vec![r]).collect();
        let ranks = [1.0, 2.0, 3.0, 4.0, 5.0];
        let res = schoenfeld_statistics(&residuals, &ranks, &[0.5]).unwrap();
        assert!(res[0].statistic.abs() < 1e-15);
        assert!((res[0].p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trending_residuals_are_significant() {
        let residuals: Vec<Vec<f64>> = (0..30).map(|k| vec![k as f64 / 10.0 - 1.45]).collect();
        let ranks: Vec<f64> = (1..=30).map(|k| k as f64).collect();
        let res = schoenfeld_statistics(&residuals, &ranks, &[0.05]).unwrap();
        assert!(res[0].p_value < 0.01, "{:?}", res[0]);
    }
}
