//! Clinical cohort table and its CSV form.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use mmsurv_stats::EventRecord;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const COLUMNS: [&str; 7] = ["id", "age_years", "sex", "resection", "mgmt", "time_months", "event"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Resection {
    #[serde(rename = "GTR")]
    Gtr,
    #[serde(rename = "NTR")]
    Ntr,
    #[serde(rename = "NA")]
    NotAvailable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mgmt {
    #[serde(rename = "methylated")]
    Methylated,
    #[serde(rename = "unmethylated")]
    Unmethylated,
    #[serde(rename = "NA")]
    NotAvailable,
}

impl Sex {
    pub const LEVELS: [Sex; 2] = [Sex::Male, Sex::Female];

    pub fn label(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
        }
    }
}

impl Resection {
    pub const LEVELS: [Resection; 3] = [Resection::Gtr, Resection::Ntr, Resection::NotAvailable];

    pub fn label(self) -> &'static str {
        match self {
            Resection::Gtr => "GTR",
            Resection::Ntr => "NTR",
            Resection::NotAvailable => "NA",
        }
    }
}

impl Mgmt {
    pub const LEVELS: [Mgmt; 3] = [Mgmt::Methylated, Mgmt::Unmethylated, Mgmt::NotAvailable];

    pub fn label(self) -> &'static str {
        match self {
            Mgmt::Methylated => "methylated",
            Mgmt::Unmethylated => "unmethylated",
            Mgmt::NotAvailable => "NA",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub id: String,
    pub age_years: f64,
    pub sex: Sex,
    pub resection: Resection,
    pub mgmt: Mgmt,
    pub time_months: f64,
    pub event: bool,
}

impl Patient {
    pub fn record(&self) -> EventRecord {
        EventRecord {
            time: self.time_months,
            event: self.event,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortTable {
    pub patients: Vec<Patient>,
}

impl CohortTable {
    /// Checks identifier uniqueness and time positivity.
    pub fn new(patients: Vec<Patient>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (k, p) in patients.iter().enumerate() {
            if !seen.insert(p.id.as_str()) {
                return Err(parse_error(k + 1, format!("duplicate id {:?}", p.id)));
            }
            if !(p.time_months.is_finite() && p.time_months > 0.0) {
                return Err(parse_error(k + 1, format!("time_months must be > 0, got {}", p.time_months)));
            }
        }
        Ok(Self { patients })
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn records(&self) -> Vec<EventRecord> {
        self.patients.iter().map(Patient::record).collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.patients.iter().map(|p| p.id.as_str()).collect()
    }

    pub fn subset(&self, rows: &[usize]) -> CohortTable {
        CohortTable {
            patients: rows.iter().map(|&r| self.patients[r].clone()).collect(),
        }
    }
}

fn parse_error(row: usize, message: String) -> HarnessError {
    HarnessError::Parse { row, message }
}

fn parse_category<T: Copy>(row: usize, column: &str, cell: &str, levels: &[T], label: fn(T) -> &'static str, na: Option<T>) -> Result<T> {
    let cell = cell.trim();
    if cell.is_empty() {
        return na.ok_or_else(|| parse_error(row, format!("empty {column}")));
    }
    levels
        .iter()
        .copied()
        .find(|&l| label(l) == cell)
        .ok_or_else(|| parse_error(row, format!("{column} {cell:?} is not a known level")))
}

fn parse_number(row: usize, column: &str, cell: &str) -> Result<f64> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Err(parse_error(row, format!("empty {column}")));
    }
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_error(row, format!("malformed {column} {cell:?}")))
}

/// Parses a cohort CSV. Row numbers in errors count data rows from 1.
pub fn read_clinical_csv<R: Read>(reader: R) -> Result<CohortTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let leading: Vec<&str> = headers.iter().take(COLUMNS.len()).collect();
    if leading != COLUMNS {
        let unknown = leading.iter().zip(COLUMNS).find(|(h, c)| *h != c).map_or("<missing>", |(h, _)| *h);
        return Err(parse_error(0, format!("unexpected column {unknown:?}; header must start with {}", COLUMNS.join(","))));
    }
    let extra: Vec<&str> = headers.iter().skip(COLUMNS.len()).collect();
    if !extra.is_empty() {
        log::warn!("ignoring extra columns {extra:?}");
    }

    let mut patients = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let rec = rec?;
        let cell = |c: usize| rec.get(c).unwrap_or("");
        let id = cell(0).to_string();
        if id.is_empty() {
            return Err(parse_error(row, "empty id".into()));
        }
        let event = match cell(6) {
            "1" => true,
            "0" => false,
            other => return Err(parse_error(row, format!("event must be 0 or 1, got {other:?}"))),
        };
        patients.push(Patient {
            id,
            age_years: parse_number(row, "age_years", cell(1))?,
            sex: parse_category(row, "sex", cell(2), &Sex::LEVELS, Sex::label, None)?,
            resection: parse_category(row, "resection", cell(3), &Resection::LEVELS, Resection::label, Some(Resection::NotAvailable))?,
            mgmt: parse_category(row, "mgmt", cell(4), &Mgmt::LEVELS, Mgmt::label, Some(Mgmt::NotAvailable))?,
            time_months: parse_number(row, "time_months", cell(5))?,
            event,
        });
    }
    CohortTable::new(patients)
}

pub fn load_clinical_csv(path: &Path) -> Result<CohortTable> {
    read_clinical_csv(std::fs::File::open(path)?)
}

pub fn write_clinical_csv<W: Write>(table: &CohortTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COLUMNS)?;
    for p in &table.patients {
        w.write_record([
            p.id.clone(),
            p.age_years.to_string(),
            p.sex.label().to_string(),
            p.resection.label().to_string(),
            p.mgmt.label().to_string(),
            p.time_months.to_string(),
            if p.event { "1" } else { "0" }.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_clinical_csv(table: &CohortTable, path: &Path) -> Result<()> {
    write_clinical_csv(table, std::fs::File::create(path)?)
}
