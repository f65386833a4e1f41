//! Clinical covariate preprocessing: min-max scaling to `[-1, 1]` and
//! one-hot categoricals with an explicit NA level.

use serde::{Deserialize, Serialize};

use crate::cohort::{CohortTable, Mgmt, Patient, Resection, Sex};
use crate::error::{HarnessError, Result};

/// Column names in encoding order.
pub fn column_names() -> Vec<String> {
    let mut names = vec!["age_years".to_string()];
    names.extend(Sex::LEVELS.iter().map(|l| format!("sex={}", l.label())));
    names.extend(Resection::LEVELS.iter().map(|l| format!("resection={}", l.label())));
    names.extend(Mgmt::LEVELS.iter().map(|l| format!("mgmt={}", l.label())));
    names
}

/// Scaler fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClinicalSchema {
    pub age_min: f64,
    pub age_max: f64,
    pub columns: Vec<String>,
}

fn one_hot<T: PartialEq + Copy>(levels: &[T], value: T, out: &mut Vec<f64>) {
    out.extend(levels.iter().map(|&l| if l == value { 1.0 } else { 0.0 }));
}

impl ClinicalSchema {
    pub fn fit(train: &CohortTable) -> Result<Self> {
        if train.is_empty() {
            return Err(HarnessError::Schema("cannot fit a scaler on an empty table".into()));
        }
        let ages = train.patients.iter().map(|p| p.age_years);
        Ok(Self {
            age_min: ages.clone().fold(f64::INFINITY, f64::min),
            age_max: ages.fold(f64::NEG_INFINITY, f64::max),
            columns: column_names(),
        })
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    /// Training-range age maps to `[-1, 1]`; values outside clamp.
    pub fn scale_age(&self, age: f64) -> f64 {
        let span = self.age_max - self.age_min;
        if span <= 0.0 {
            return 0.0;
        }
        (2.0 * (age - self.age_min) / span - 1.0).clamp(-1.0, 1.0)
    }

    pub fn encode(&self, p: &Patient) -> Result<Vec<f64>> {
        if self.columns != column_names() {
            return Err(HarnessError::Schema(format!("checkpoint columns {:?}", self.columns)));
        }
        let mut row = Vec::with_capacity(self.width());
        row.push(self.scale_age(p.age_years));
        one_hot(&Sex::LEVELS, p.sex, &mut row);
        one_hot(&Resection::LEVELS, p.resection, &mut row);
        one_hot(&Mgmt::LEVELS, p.mgmt, &mut row);
        Ok(row)
    }

    pub fn apply(&self, table: &CohortTable) -> Result<Vec<Vec<f64>>> {
        table.patients.iter().map(|p| self.encode(p)).collect()
    }

    /// Column indices for a regression with an implicit baseline: the first
    /// level of every categorical is dropped.
    pub fn reference_coded(&self) -> Vec<usize> {
        let mut keep = vec![0];
        let mut start = 1;
        for levels in [Sex::LEVELS.len(), Resection::LEVELS.len(), Mgmt::LEVELS.len()] {
            keep.extend(start + 1..start + levels);
            start += levels;
        }
        keep
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patient(age: f64, sex: Sex) -> Patient {
        Patient {
            id: format!("p{age}"),
            age_years: age,
            sex,
            resection: Resection::NotAvailable,
            mgmt: Mgmt::Methylated,
            time_months: 3.0,
            event: true,
        }
    }

    #[test]
    fn scaling_and_one_hot() {
        let train = CohortTable::new(vec![patient(40.0, Sex::Male), patient(80.0, Sex::Female)]).unwrap();
        let s = ClinicalSchema::fit(&train).unwrap();
        assert_eq!(s.scale_age(60.0), 0.0);
        assert_eq!(s.scale_age(90.0), 1.0);
        assert_eq!(s.scale_age(10.0), -1.0);
        let row = s.encode(&patient(60.0, Sex::Male)).unwrap();
        assert_eq!(row, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(s.reference_coded(), vec![0, 2, 4, 5, 7, 8]);
    }

    #[test]
    fn foreign_schema_is_rejected() {
        let train = CohortTable::new(vec![patient(40.0, Sex::Male)]).unwrap();
        let mut s = ClinicalSchema::fit(&train).unwrap();
        s.columns.pop();
        assert!(s.apply(&train).is_err());
    }
}
