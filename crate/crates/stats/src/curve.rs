use serde::{Deserialize, Serialize};

/// Anything that can report a survival probability at a time.
pub trait SurvivalFn {
    fn survival_at(&self, t: f64) -> f64;
}

impl<T: SurvivalFn + ?Sized> SurvivalFn for &T {
    fn survival_at(&self, t: f64) -> f64 {
        (**self).survival_at(t)
    }
}

/// Right-continuous step function starting at 1: `values[k]` holds on
/// `[times[k], times[k + 1])` and the curve is 1 before `times[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvCurve {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl SurvCurve {
    /// Builds a curve from jump times and post-jump values. Panics when the
    /// inputs break the step-function invariants.
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(times.len(), values.len());
        assert!(times.windows(2).all(|w| w[0] < w[1]), "jump times must increase");
        assert!(values.iter().all(|v| (0.0..=1.0).contains(v)), "survival outside [0, 1]");
        assert!(
            values.windows(2).all(|w| w[1] <= w[0]) && values.first().is_none_or(|&v| v <= 1.0),
            "survival must not increase"
        );
        Self { times, values }
    }

    pub fn constant_one() -> Self {
        Self {
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `S(t⁻)`, the value just before `t`.
    pub fn value_before(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x < t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }

    /// First time at which the curve drops to 0.5 or below.
    pub fn median(&self) -> Option<f64> {
        self.times
            .iter()
            .zip(&self.values)
            .find(|(_, &v)| v <= 0.5)
            .map(|(&t, _)| t)
    }
}

impl SurvivalFn for SurvCurve {
    fn survival_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }
}
