//! Metric reports: concordance and integrated Brier score with bootstrap
//! intervals, and risk-group separation.

use mmsurv_stats::{bootstrap_ci, c_td, dichotomize, integrated_brier, logrank, BootstrapCi, EventRecord, RiskGroup, SurvivalFn};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::split::AuditLog;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub cohort: String,
    pub ctd: f64,
    pub ctd_ci: BootstrapCi,
    pub ibs: f64,
    pub ibs_ci: BootstrapCi,
    /// `None` when one risk group is empty.
    pub logrank_p: Option<f64>,
    pub threshold_months: f64,
    pub horizon_months: f64,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub setup: String,
    pub cohorts: Vec<CohortReport>,
    pub audit: AuditLog,
}

/// 90th percentile (nearest rank) of the observed times.
pub fn brier_horizon(records: &[EventRecord]) -> f64 {
    let mut t: Vec<f64> = records.iter().map(|r| r.time).collect();
    t.sort_by(f64::total_cmp);
    t[(9 * t.len()).div_ceil(10).max(1) - 1]
}

pub fn score_cohort<S: SurvivalFn>(
    cohort: &str,
    curves: &[S],
    records: &[EventRecord],
    threshold_months: f64,
    resamples: usize,
    seed: u64,
) -> Result<CohortReport> {
    if resamples == 0 {
        return Err(HarnessError::Config("bootstrap needs at least one resample".into()));
    }
    let horizon = brier_horizon(records);
    let ctd = c_td(curves, records)?;
    let ibs = integrated_brier(curves, records, horizon)?;
    let resampled = |idx: &[usize]| -> (Vec<&S>, Vec<EventRecord>) { (idx.iter().map(|&i| &curves[i]).collect(), idx.iter().map(|&i| records[i]).collect()) };
    let n = records.len();
    let undefined = || HarnessError::Config(format!("{cohort}: metric undefined on every bootstrap resample"));
    let ctd_ci = bootstrap_ci(n, resamples, seed, |idx| {
        let (c, r) = resampled(idx);
        c_td(&c, &r).ok()
    })
    .ok_or_else(undefined)?;
    let ibs_ci = bootstrap_ci(n, resamples, seed, |idx| {
        let (c, r) = resampled(idx);
        integrated_brier(&c, &r, horizon).ok()
    })
    .ok_or_else(undefined)?;

    let groups = dichotomize(curves, threshold_months);
    let pick = |g: RiskGroup| -> Vec<EventRecord> { records.iter().zip(&groups).filter(|(_, &k)| k == g).map(|(r, _)| *r).collect() };
    let logrank_p = logrank(&pick(RiskGroup::Favorable), &pick(RiskGroup::Unfavorable)).ok().map(|t| t.p_value);
    Ok(CohortReport {
        cohort: cohort.to_string(),
        ctd,
        ctd_ci,
        ibs,
        ibs_ci,
        logrank_p,
        threshold_months,
        horizon_months: horizon,
        n,
        seed,
    })
}

/// Pretty JSON bytes with a trailing newline.
pub fn report_bytes(report: &MetricReport) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(report)?;
    bytes.push(b'\n');
    Ok(bytes)
}
