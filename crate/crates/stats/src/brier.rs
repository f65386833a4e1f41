//! Censoring-adjusted (IPCW) Brier score and its time integral.

use crate::km::censoring_km;
use crate::{EventRecord, StatsError, SurvCurve, SurvivalFn};

/// Censoring-survival weights below this are unusable.
pub const MIN_CENSOR_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrierScore {
    pub score: f64,
    /// Patients dropped because their censoring weight fell below
    /// [`MIN_CENSOR_WEIGHT`].
    pub excluded: usize,
}

/// Brier score at `t` with inverse-probability-of-censoring weights taken
/// from `censor_km` (the Kaplan–Meier curve of the censoring times).
pub fn brier<S: SurvivalFn>(
    curves: &[S],
    records: &[EventRecord],
    t: f64,
    censor_km: &SurvCurve,
) -> Result<BrierScore, StatsError> {
    if curves.len() != records.len() {
        return Err(StatsError::LengthMismatch(curves.len(), records.len()));
    }
    if records.is_empty() {
        return Err(StatsError::Empty("brier needs at least one record"));
    }
    let g_t = censor_km.survival_at(t);
    let mut total = 0.0;
    let mut used = 0usize;
    let mut excluded = 0usize;
    for (curve, rec) in curves.iter().zip(records) {
        let s = curve.survival_at(t);
        if rec.time <= t {
            if !rec.event {
                used += 1;
                continue;
            }
            let g = censor_km.value_before(rec.time);
            if g < MIN_CENSOR_WEIGHT {
                excluded += 1;
                continue;
            }
            total += s * s / g;
        } else {
            if g_t < MIN_CENSOR_WEIGHT {
                excluded += 1;
                continue;
            }
            total += (1.0 - s) * (1.0 - s) / g_t;
        }
        used += 1;
    }
    if used == 0 {
        return Err(StatsError::Empty("every patient was excluded by the censoring weights"));
    }
    Ok(BrierScore {
        score: total / used as f64,
        excluded,
    })
}

/// Monthly evaluation grid `0, 1, 2, …` ending exactly at `t_max`.
pub fn monthly_grid(t_max: f64) -> Vec<f64> {
    let mut grid: Vec<f64> = (0..=t_max.floor() as usize).map(|m| m as f64).collect();
    if grid.last().is_some_and(|&last| last < t_max) {
        grid.push(t_max);
    }
    grid
}

/// Trapezoidal integral of `f` over [`monthly_grid`], divided by `t_max`.
pub fn integrate_monthly(t_max: f64, mut f: impl FnMut(f64) -> Result<f64, StatsError>) -> Result<f64, StatsError> {
    if !(t_max > 0.0) || !t_max.is_finite() {
        return Err(StatsError::InvalidArgument(format!("t_max must be positive, got {t_max}")));
    }
    let grid = monthly_grid(t_max);
    let mut prev_t = grid[0];
    let mut prev_v = f(prev_t)?;
    let mut area = 0.0;
    for &t in &grid[1..] {
        let v = f(t)?;
        area += 0.5 * (v + prev_v) * (t - prev_t);
        prev_t = t;
        prev_v = v;
    }
    Ok(area / t_max)
}

/// Integrated Brier score over `[0, t_max]` on a monthly grid.
pub fn integrated_brier<S: SurvivalFn>(curves: &[S], records: &[EventRecord], t_max: f64) -> Result<f64, StatsError> {
    let g = censoring_km(records)?;
    integrate_monthly(t_max, |t| Ok(brier(curves, records, t, &g)?.score))
}
