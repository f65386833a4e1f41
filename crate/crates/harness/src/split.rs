//! Stratified train/validation/test split and the audit log that guards the
//! test partition.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::CohortTable;
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.70,
            validation: 0.15,
            test: 0.15,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|&f| !(f > 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(HarnessError::Config(format!("split fractions {parts:?} must be positive and sum to 1")));
        }
        Ok(())
    }

    /// Partition sizes; held-out parts are rounded and training takes the
    /// remainder.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let validation = (self.validation * n as f64).round() as usize;
        let test = (self.test * n as f64).round() as usize;
        [n.saturating_sub(validation + test), validation, test]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Validation,
    Test,
}

/// Patient identifiers per partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    pub fn ids(&self, part: Part) -> &[String] {
        match part {
            Part::Train => &self.train,
            Part::Validation => &self.validation,
            Part::Test => &self.test,
        }
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.validation.len(), self.test.len()]
    }
}

fn quartile_of(sorted: &[f64], t: f64) -> usize {
    let n = sorted.len();
    let cut = |q: usize| sorted[((q * n) / 4).min(n - 1)];
    (1..4).filter(|&q| t >= cut(q)).count()
}

/// Splits on joint (event, time-quartile) strata: strata are shuffled
/// internally and laid end to end, then positions are dealt to the
/// partition furthest behind its target share.
pub fn stratified_split(table: &CohortTable, fractions: SplitFractions, seed: u64) -> Result<Split> {
    fractions.validate()?;
    let n = table.len();
    let targets = fractions.sizes(n);
    if targets.contains(&0) {
        return Err(HarnessError::Config(format!("{n} patients leave a partition empty ({targets:?})")));
    }
    let mut times: Vec<f64> = table.patients.iter().map(|p| p.time_months).collect();
    times.sort_by(f64::total_cmp);
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); 8];
    for (i, p) in table.patients.iter().enumerate() {
        strata[usize::from(p.event) * 4 + quartile_of(&times, p.time_months)].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(n);
    for s in &mut strata {
        s.shuffle(&mut rng);
        order.extend_from_slice(s);
    }

    let mut parts: [Vec<String>; 3] = Default::default();
    for (k, &i) in order.iter().enumerate() {
        let due = |p: usize| targets[p] as f64 * (k + 1) as f64 / n as f64 - parts[p].len() as f64;
        let pick = (0..3)
            .filter(|&p| parts[p].len() < targets[p])
            .max_by(|&a, &b| due(a).total_cmp(&due(b)).then(b.cmp(&a)))
            .expect("targets sum to n");
        parts[pick].push(table.patients[i].id.clone());
    }
    let [train, validation, test] = parts;
    Ok(Split { train, validation, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Train,
    EarlyStopping,
    Evaluate,
    LateFusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub stage: Stage,
    pub part: Part,
    pub rows: usize,
}

/// Every materialization of a partition, in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditLog {
    pub events: Vec<AuditEvent>,
}

impl AuditLog {
    /// Test-partition reads that happened before the first evaluation.
    pub fn test_reads_before_evaluation(&self) -> usize {
        self.events
            .iter()
            .take_while(|e| e.stage != Stage::Evaluate)
            .filter(|e| e.part == Part::Test)
            .count()
    }

    /// Row indices of `part` in `table`, logged under `stage`. Only
    /// evaluation may read the test partition.
    pub fn read(&mut self, table: &CohortTable, split: &Split, part: Part, stage: Stage) -> Result<Vec<usize>> {
        if part == Part::Test && stage != Stage::Evaluate {
            return Err(HarnessError::Quarantine(format!("{stage:?} attempted to read the test partition")));
        }
        let index: HashMap<&str, usize> = table.patients.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
        let rows = split
            .ids(part)
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| HarnessError::Schema(format!("split id {id} missing from cohort")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.events.push(AuditEvent {
            stage,
            part,
            rows: rows.len(),
        });
        Ok(rows)
    }
}
