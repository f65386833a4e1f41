//! Product-limit estimation and the two-group logrank test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::{EventRecord, StatsError, SurvCurve};

/// Risk-table row at one distinct observed time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskRow {
    pub time: f64,
    pub at_risk: usize,
    pub events: usize,
    pub censored: usize,
}

/// Distinct times in increasing order with at-risk counts taken just before
/// each time. Censorings tied with events stay in the risk set for them.
pub fn risk_table(records: &[EventRecord]) -> Vec<RiskRow> {
    let mut sorted: Vec<EventRecord> = records.to_vec();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut rows = Vec::new();
    let mut at_risk = sorted.len();
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].time;
        let (mut events, mut censored) = (0, 0);
        while i < sorted.len() && sorted[i].time == t {
            if sorted[i].event {
                events += 1;
            } else {
                censored += 1;
            }
            i += 1;
        }
        rows.push(RiskRow {
            time: t,
            at_risk,
            events,
            censored,
        });
        at_risk -= events + censored;
    }
    rows
}

/// Kaplan–Meier survival curve. Censored patients leave the risk set
/// without producing a drop.
pub fn kaplan_meier(records: &[EventRecord]) -> Result<SurvCurve, StatsError> {
    if records.is_empty() {
        return Err(StatsError::Empty("kaplan_meier needs at least one record"));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut s = 1.0;
    for row in risk_table(records) {
        if row.events == 0 {
            continue;
        }
        s *= 1.0 - row.events as f64 / row.at_risk as f64;
        times.push(row.time);
        values.push(s);
    }
    Ok(SurvCurve::new(times, values))
}

/// Kaplan–Meier estimate of the censoring survival function `G`.
pub fn censoring_km(records: &[EventRecord]) -> Result<SurvCurve, StatsError> {
    let flipped: Vec<EventRecord> = records.iter().map(|r| r.flipped()).collect();
    kaplan_meier(&flipped)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

impl TestResult {
    pub fn chi_square(statistic: f64, df: usize) -> Self {
        let statistic = statistic.max(0.0);
        let dist = ChiSquared::new(df as f64).expect("df > 0");
        let p_value = dist.sf(statistic).clamp(0.0, 1.0);
        Self {
            statistic,
            df,
            p_value,
        }
    }
}

/// Two-group logrank test (one degree of freedom).
pub fn logrank(group_a: &[EventRecord], group_b: &[EventRecord]) -> Result<TestResult, StatsError> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(StatsError::Empty("logrank needs two nonempty groups"));
    }
    let mut pooled: Vec<(f64, bool, bool)> = group_a
        .iter()
        .map(|r| (r.time, r.event, true))
        .chain(group_b.iter().map(|r| (r.time, r.event, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (mut n_a, mut n) = (group_a.len() as f64, pooled.len() as f64);
    let (mut observed, mut expected, mut variance) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < pooled.len() {
        let t = pooled[i].0;
        let (mut d, mut d_a, mut leave_a, mut leave) = (0.0, 0.0, 0.0, 0.0);
        while i < pooled.len() && pooled[i].0 == t {
            let (_, event, in_a) = pooled[i];
            if event {
                d += 1.0;
                if in_a {
                    d_a += 1.0;
                }
            }
            if in_a {
                leave_a += 1.0;
            }
            leave += 1.0;
            i += 1;
        }
        if d > 0.0 {
            observed += d_a;
            expected += d * n_a / n;
            if n > 1.0 {
                variance += d * (n_a / n) * (1.0 - n_a / n) * (n - d) / (n - 1.0);
            }
        }
        n_a -= leave_a;
        n -= leave;
    }
    if pooled.iter().all(|p| !p.1) {
        return Err(StatsError::NoEvents);
    }
    if variance <= 0.0 {
        return Ok(TestResult::chi_square(0.0, 1));
    }
    Ok(TestResult::chi_square((observed - expected).powi(2) / variance, 1))
}
