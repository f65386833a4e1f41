use serde::{Deserialize, Serialize};

use crate::StatsError;

/// One observed outcome: follow-up time in months and whether the event
/// (death) was observed (`true`) or the patient was right-censored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub event: bool,
}

impl EventRecord {
    pub fn new(time: f64, event: bool) -> Result<Self, StatsError> {
        if !time.is_finite() || time <= 0.0 {
            return Err(StatsError::InvalidRecord(format!("time must be finite and > 0, got {time}")));
        }
        Ok(Self { time, event })
    }

    pub fn event(time: f64) -> Self {
        Self::new(time, true).expect("valid event time")
    }

    pub fn censored(time: f64) -> Self {
        Self::new(time, false).expect("valid censoring time")
    }

    /// Same time with the event/censoring roles swapped, for estimating the
    /// censoring distribution.
    pub fn flipped(self) -> Self {
        Self {
            time: self.time,
            event: !self.event,
        }
    }
}

pub fn event_count(records: &[EventRecord]) -> usize {
    records.iter().filter(|r| r.event).count()
}
