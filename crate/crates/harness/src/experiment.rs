//! Pretraining, evaluation, late fusion, prediction and embedding export.

use std::io::Write;

use mmsurv_core::volume::preprocess_volume;
use mmsurv_core::{EncoderConfig, HistogramLandmarks, Modality, ModelConfig, Volume, VolumeEncoder};
use mmsurv_stats::{fit_coxph, CoxFit, CoxOptions, SurvCurve};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::pipeline::{train_model, Dataset, ImagingSetup, TrainedModel, TrainingConfig};
use crate::report::{score_cohort, MetricReport};
use crate::split::{AuditLog, Part, Split, Stage};

/// Month at which the late-fusion image index is read off.
pub const INDEX_MONTH: f64 = 12.0;

/// Fits intensity landmarks on `volumes`, standardizes them and runs
/// self-supervised pretraining.
pub fn pretrain_encoder(volumes: &[Volume], config: EncoderConfig, seed: u64) -> Result<VolumeEncoder> {
    if volumes.is_empty() {
        return Err(HarnessError::Config("pretraining corpus is empty".into()));
    }
    let landmarks = HistogramLandmarks::fit(volumes)?;
    let prepared = volumes.iter().map(|v| preprocess_volume(v, &landmarks)).collect::<std::result::Result<Vec<_>, _>>()?;
    let mut encoder = VolumeEncoder::new(config, seed)?;
    encoder.landmarks = Some(landmarks);
    encoder.pretrain(&prepared, seed)?;
    Ok(encoder)
}

/// Scores a model on the test partition of its training cohort and on any
/// external cohorts, each in full.
pub fn evaluate_model(
    model: &mut TrainedModel,
    data: &Dataset,
    external: &[(&str, Dataset)],
    resamples: usize,
    seed: u64,
) -> Result<MetricReport> {
    let rows = model.partition(data.table, Part::Test, Stage::Evaluate)?;
    let inputs = model.inputs(data, &rows)?;
    let curves = model.predict(&inputs)?;
    let mut cohorts = vec![score_cohort("test", &curves, &inputs.records, model.threshold_months, resamples, seed)?];
    for (name, ext) in external {
        let all: Vec<usize> = (0..ext.table.len()).collect();
        let inputs = model.inputs(ext, &all)?;
        let curves = model.predict(&inputs)?;
        cohorts.push(score_cohort(name, &curves, &inputs.records, model.threshold_months, resamples, seed)?);
    }
    Ok(MetricReport {
        setup: format!("{:?}", model.modality()).to_lowercase(),
        cohorts,
        audit: model.audit.clone(),
    })
}

/// Image-only survival model whose predicted 12-month survival, negated,
/// enters a Cox model next to the clinical covariates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LateFusionModel {
    pub image_model: TrainedModel,
    pub cox: CoxFit,
    /// Reference-coded clinical columns kept in the Cox design.
    pub clinical_columns: Vec<usize>,
}

impl LateFusionModel {
    fn design(image_model: &TrainedModel, columns: &[usize], data: &Dataset, rows: &[usize]) -> Result<Vec<Vec<f64>>> {
        let inputs = image_model.inputs(data, rows)?;
        let curves = image_model.predict(&inputs)?;
        let clinical = image_model.schema.apply(&data.table.subset(rows))?;
        Ok(curves
            .iter()
            .zip(clinical)
            .map(|(c, x)| {
                let mut row = vec![-c.survival(INDEX_MONTH)];
                row.extend(columns.iter().map(|&k| x[k]));
                row
            })
            .collect())
    }

    pub fn predict(&self, data: &Dataset, rows: &[usize]) -> Result<Vec<SurvCurve>> {
        let design = Self::design(&self.image_model, &self.clinical_columns, data, rows)?;
        Ok(design.iter().map(|x| self.cox.predict_curve(x)).collect())
    }

    pub fn audit(&mut self) -> &mut AuditLog {
        &mut self.image_model.audit
    }
}

pub fn train_late_fusion(
    data: &Dataset,
    split: Split,
    encoder: &VolumeEncoder,
    model: &ModelConfig,
    training: &TrainingConfig,
    seed: u64,
) -> Result<LateFusionModel> {
    let mut image_model = train_model(data, split, Modality::Imaging, Some(ImagingSetup::Frozen(encoder)), model, training, seed)?;
    let rows = image_model.partition(data.table, Part::Train, Stage::LateFusion)?;
    let clinical = image_model.schema.apply(&data.table.subset(&rows))?;
    let candidates = image_model.schema.reference_coded();
    let clinical_columns: Vec<usize> = candidates
        .into_iter()
        .filter(|&k| clinical.iter().any(|x| x[k] != clinical[0][k]))
        .collect();
    let design = LateFusionModel::design(&image_model, &clinical_columns, data, &rows)?;
    let records = data.table.subset(&rows).records();
    let cox = fit_coxph(&design, &records, CoxOptions::default())?;
    Ok(LateFusionModel {
        image_model,
        cox,
        clinical_columns,
    })
}

pub fn evaluate_late_fusion(model: &mut LateFusionModel, data: &Dataset, resamples: usize, seed: u64) -> Result<MetricReport> {
    let rows = model.image_model.partition(data.table, Part::Test, Stage::Evaluate)?;
    let curves = model.predict(data, &rows)?;
    let records = data.table.subset(&rows).records();
    let report = score_cohort("test", &curves, &records, model.image_model.threshold_months, resamples, seed)?;
    Ok(MetricReport {
        setup: "latefusion".into(),
        cohorts: vec![report],
        audit: model.image_model.audit.clone(),
    })
}

/// One patient's predicted monthly survival.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientCurve {
    pub id: String,
    pub months: Vec<f64>,
    pub survival: Vec<f64>,
}

/// Monthly curves up to the last grid edge for every patient of `data`.
pub fn predict_curves(model: &TrainedModel, data: &Dataset) -> Result<Vec<PatientCurve>> {
    let rows: Vec<usize> = (0..data.table.len()).collect();
    let inputs = model.inputs(data, &rows)?;
    let horizon = model.grid.edges().last().copied().unwrap_or(0.0).ceil() as usize;
    Ok(model
        .predict(&inputs)?
        .iter()
        .zip(&data.table.patients)
        .map(|(d, p)| PatientCurve {
            id: p.id.clone(),
            months: (0..=horizon).map(|m| m as f64).collect(),
            survival: d.monthly(horizon),
        })
        .collect())
}

/// Writes `id, e0..e{d-1}, mgmt, resection` per patient.
pub fn export_embeddings<W: Write>(model: &TrainedModel, data: &Dataset, writer: W) -> Result<()> {
    let rows: Vec<usize> = (0..data.table.len()).collect();
    let embeddings = model.embeddings(&model.inputs(data, &rows)?)?;
    let d = model.net.config.width;
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string()];
    header.extend((0..d).map(|k| format!("e{k}")));
    header.extend(["mgmt".to_string(), "resection".to_string()]);
    w.write_record(&header)?;
    for (p, e) in data.table.patients.iter().zip(&embeddings) {
        let mut rec = vec![p.id.clone()];
        rec.extend(e.iter().map(|x| x.to_string()));
        rec.extend([p.mgmt.label().to_string(), p.resection.label().to_string()]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
