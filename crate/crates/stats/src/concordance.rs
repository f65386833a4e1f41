use crate::{EventRecord, StatsError, SurvivalFn};

/// Counts behind a time-dependent concordance value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Concordance {
    pub concordant: f64,
    pub comparable: usize,
}

impl Concordance {
    pub fn value(&self) -> f64 {
        self.concordant / self.comparable as f64
    }
}

/// Time-dependent concordance (Antolini) over pairs `(i, j)` with `i` an
/// observed event and `s_i < s_j`. The pair is concordant when
/// `S_i(s_i) < S_j(s_i)`; equal predicted survival scores one half.
pub fn c_td<S: SurvivalFn>(curves: &[S], records: &[EventRecord]) -> Result<f64, StatsError> {
    Ok(c_td_counts(curves, records)?.value())
}

pub fn c_td_counts<S: SurvivalFn>(curves: &[S], records: &[EventRecord]) -> Result<Concordance, StatsError> {
    if curves.len() != records.len() {
        return Err(StatsError::LengthMismatch(curves.len(), records.len()));
    }
    if records.len() < 2 {
        return Err(StatsError::NoComparablePairs);
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].time.total_cmp(&records[b].time));

    let mut concordant = 0.0;
    let mut comparable = 0usize;
    for (pos, &i) in order.iter().enumerate() {
        if !records[i].event {
            continue;
        }
        let t = records[i].time;
        let own = curves[i].survival_at(t);
        // later entries in `order` have time >= t; skip the ties
        let start = pos + order[pos..].partition_point(|&k| records[k].time <= t);
        for &j in &order[start..] {
            let other = curves[j].survival_at(t);
            comparable += 1;
            if own < other {
                concordant += 1.0;
            } else if own == other {
                concordant += 0.5;
            }
        }
    }
    if comparable == 0 {
        return Err(StatsError::NoComparablePairs);
    }
    Ok(Concordance {
        concordant,
        comparable,
    })
}
