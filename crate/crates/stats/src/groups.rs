use serde::{Deserialize, Serialize};

use crate::SurvivalFn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RiskGroup {
    Favorable,
    Unfavorable,
}

/// Favorable when the predicted survival at `threshold_months` is at
/// least one half.
pub fn dichotomize<S: SurvivalFn>(curves: &[S], threshold_months: f64) -> Vec<RiskGroup> {
    curves
        .iter()
        .map(|c| {
            if c.survival_at(threshold_months) >= 0.5 {
                RiskGroup::Favorable
            } else {
                RiskGroup::Unfavorable
            }
        })
        .collect()
}
