//! Survival-model training with early stopping, checkpoints and inference.

use std::path::Path;

use mmsurv_autodiff::{Adam, Graph, ParamStore, Tensor};
use mmsurv_core::volume::{patchify, preprocess_volume};
use mmsurv_core::{
    total_loss, Batch, EncoderConfig, HistogramLandmarks, ImagingSource, Modality, ModelConfig, SurvivalDistribution,
    SurvivalNet, TimeGrid, Volume, VolumeEncoder,
};
use mmsurv_stats::{c_td, kaplan_meier, resample_seed, EventRecord};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::CohortTable;
use crate::covariates::ClinicalSchema;
use crate::error::{HarnessError, Result};
use crate::split::{AuditLog, Part, Split, Stage};
use crate::volume_io::load_volume;

const PREDICT_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            batch_size: 32,
            patience: 20,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size < 2 {
            return Err(HarnessError::Config("need max_epochs ≥ 1 and batch_size ≥ 2".into()));
        }
        Ok(())
    }
}

/// Where patient volumes live.
#[derive(Debug, Clone, Copy)]
pub enum Volumes<'a> {
    None,
    /// Aligned with the cohort rows.
    Memory(&'a [Volume]),
    /// `<dir>/<id>.mmgs`.
    Directory(&'a Path),
}

impl Volumes<'_> {
    pub fn load(&self, table: &CohortTable, rows: &[usize]) -> Result<Vec<Volume>> {
        match self {
            Volumes::None => Err(HarnessError::Config("imaging model needs volumes".into())),
            Volumes::Memory(all) => {
                if all.len() != table.len() {
                    return Err(HarnessError::Schema(format!("{} volumes for {} patients", all.len(), table.len())));
                }
                Ok(rows.iter().map(|&r| all[r].clone()).collect())
            }
            Volumes::Directory(dir) => rows
                .iter()
                .map(|&r| load_volume(&dir.join(format!("{}.mmgs", table.patients[r].id))))
                .collect(),
        }
    }
}

/// A cohort with its volumes.
#[derive(Debug, Clone, Copy)]
pub struct Dataset<'a> {
    pub table: &'a CohortTable,
    pub volumes: Volumes<'a>,
}

/// How the imaging branch is fed.
#[derive(Debug, Clone)]
pub enum ImagingSetup<'a> {
    Frozen(&'a VolumeEncoder),
    EndToEnd(EncoderConfig),
}

/// Volume-to-model-input conversion stored with a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ImagingPipeline {
    Frozen { encoder: VolumeEncoder },
    EndToEnd { landmarks: HistogramLandmarks, patch: usize },
}

impl ImagingPipeline {
    pub fn inputs(&self, volumes: &[Volume]) -> Result<Vec<Tensor>> {
        match self {
            ImagingPipeline::Frozen { encoder } => {
                let landmarks = encoder
                    .landmarks
                    .as_ref()
                    .ok_or_else(|| HarnessError::Config("encoder checkpoint has no intensity landmarks".into()))?;
                let prepared = volumes.iter().map(|v| preprocess_volume(v, landmarks)).collect::<std::result::Result<Vec<_>, _>>()?;
                Ok(encoder.encode_batch(&prepared)?)
            }
            ImagingPipeline::EndToEnd { landmarks, patch } => volumes
                .iter()
                .map(|v| Ok(patchify(&preprocess_volume(v, landmarks)?, *patch)?))
                .collect(),
        }
    }
}

/// Per-patient model inputs.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub clinical: Option<Vec<Vec<f64>>>,
    pub imaging: Option<Vec<Tensor>>,
    pub records: Vec<EventRecord>,
}

impl Inputs {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn batch(&self, rows: &[usize]) -> Result<Batch> {
        let clinical = match &self.clinical {
            Some(x) => Some(Tensor::from_rows(&rows.iter().map(|&r| x[r].clone()).collect::<Vec<_>>())?),
            None => None,
        };
        let imaging: Option<Vec<&Tensor>> = self.imaging.as_ref().map(|t| rows.iter().map(|&r| &t[r]).collect());
        Ok(Batch::new(clinical, imaging.as_deref())?)
    }

    pub fn records_of(&self, rows: &[usize]) -> Vec<EventRecord> {
        rows.iter().map(|&r| self.records[r]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_ctd: f64,
}

/// Everything needed to reproduce predictions of a trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub seed: u64,
    pub net: SurvivalNet,
    pub grid: TimeGrid,
    pub schema: ClinicalSchema,
    pub imaging: Option<ImagingPipeline>,
    pub split: Split,
    pub audit: AuditLog,
    /// Median survival of the training partition, used for risk groups.
    pub threshold_months: f64,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Median of the training Kaplan–Meier curve, or of the observed times when
/// the curve never reaches one half.
pub fn median_threshold(records: &[EventRecord]) -> Result<f64> {
    if let Some(m) = kaplan_meier(records)?.median() {
        return Ok(m);
    }
    let mut t: Vec<f64> = records.iter().map(|r| r.time).collect();
    t.sort_by(f64::total_cmp);
    Ok(t[(t.len() - 1) / 2])
}

fn build_inputs(
    modality: Modality,
    schema: &ClinicalSchema,
    imaging: Option<&ImagingPipeline>,
    data: &Dataset,
    rows: &[usize],
) -> Result<Inputs> {
    let table = data.table.subset(rows);
    let clinical = if modality.uses_clinical() { Some(schema.apply(&table)?) } else { None };
    let imaging = match (modality.uses_imaging(), imaging) {
        (true, Some(p)) => Some(p.inputs(&data.volumes.load(data.table, rows)?)?),
        (true, None) => return Err(HarnessError::Config("imaging model without an imaging pipeline".into())),
        (false, _) => None,
    };
    Ok(Inputs {
        clinical,
        imaging,
        records: table.records(),
    })
}

fn predict_with(net: &SurvivalNet, store: Option<&ParamStore>, grid: &TimeGrid, inputs: &Inputs) -> Result<Vec<SurvivalDistribution>> {
    let rows: Vec<usize> = (0..inputs.len()).collect();
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(PREDICT_CHUNK) {
        let batch = inputs.batch(chunk)?;
        let mut g = Graph::new();
        let logits = net.logits_with(&mut g, store.unwrap_or(&net.store), &batch)?;
        let t = g.value(logits);
        for r in 0..t.rows() {
            out.push(SurvivalDistribution::from_logits(t.row_slice(r), grid)?);
        }
    }
    Ok(out)
}

fn event_times(records: &[EventRecord]) -> Vec<f64> {
    records.iter().filter(|r| r.event).map(|r| r.time).collect()
}

/// Trains one modality setup on the training partition, early-stopping on
/// validation concordance. The test partition is never read.
#[allow(clippy::too_many_arguments)]
pub fn train_model(
    data: &Dataset,
    split: Split,
    modality: Modality,
    imaging: Option<ImagingSetup>,
    model: &ModelConfig,
    training: &TrainingConfig,
    seed: u64,
) -> Result<TrainedModel> {
    training.validate()?;
    let mut audit = AuditLog::default();
    let train_rows = audit.read(data.table, &split, Part::Train, Stage::Train)?;
    let val_rows = audit.read(data.table, &split, Part::Validation, Stage::EarlyStopping)?;
    let schema = ClinicalSchema::fit(&data.table.subset(&train_rows))?;

    let (pipeline, source) = match (modality.uses_imaging(), imaging) {
        (false, _) => (None, None),
        (true, None) => return Err(HarnessError::Config(format!("{modality:?} needs an imaging setup"))),
        (true, Some(ImagingSetup::Frozen(encoder))) => {
            let source = ImagingSource::Frozen {
                tokens: encoder.layers.tokens,
                width: encoder.config.width,
            };
            (Some(ImagingPipeline::Frozen { encoder: encoder.clone() }), Some(source))
        }
        (true, Some(ImagingSetup::EndToEnd(config))) => {
            config.validate()?;
            let landmarks = HistogramLandmarks::fit(&data.volumes.load(data.table, &train_rows)?)?;
            let pipeline = ImagingPipeline::EndToEnd {
                landmarks,
                patch: config.patch,
            };
            (Some(pipeline), Some(ImagingSource::end_to_end(config)?))
        }
    };

    let train = build_inputs(modality, &schema, pipeline.as_ref(), data, &train_rows)?;
    let val = build_inputs(modality, &schema, pipeline.as_ref(), data, &val_rows)?;
    let mut times = event_times(&train.records);
    if times.len() < model.bins {
        times = train.records.iter().map(|r| r.time).collect();
    }
    let grid = TimeGrid::from_times(&times, model.bins)?;
    let threshold_months = median_threshold(&train.records)?;

    let config = ModelConfig { seed, ..model.clone() };
    let mut net = SurvivalNet::new(config, modality, schema.width(), source)?;
    let loss_cfg = net.config.loss();
    let trainable = net.params();
    let mut opt = Adam::new(net.config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(resample_seed(seed, 0x7261_696E));
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best = (f64::NEG_INFINITY, 0usize, net.store.clone());
    let mut history = Vec::new();
    for epoch in 1..=training.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(training.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch = train.batch(chunk)?;
            let mut g = Graph::new();
            let logits = net.logits(&mut g, &batch)?;
            let loss = total_loss(&mut g, logits, &train.records_of(chunk), &grid, loss_cfg)?;
            loss_sum += g.value(loss).item();
            batches += 1;
            let grads = g.backward(loss)?;
            opt.step(&mut net.store, &grads, &trainable);
        }
        let curves = predict_with(&net, None, &grid, &val)?;
        let ctd = c_td(&curves, &val.records).unwrap_or(0.5);
        history.push(EpochLog {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            validation_ctd: ctd,
        });
        log::debug!("epoch {epoch}: loss {:.4} val ctd {ctd:.4}", loss_sum / batches.max(1) as f64);
        if ctd > best.0 {
            best = (ctd, epoch, net.store.clone());
        } else if epoch - best.1 >= training.patience {
            break;
        }
    }
    net.store = best.2;
    Ok(TrainedModel {
        seed,
        net,
        grid,
        schema,
        imaging: pipeline,
        split,
        audit,
        threshold_months,
        history,
        best_epoch: best.1,
    })
}

impl TrainedModel {
    pub fn modality(&self) -> Modality {
        self.net.modality
    }

    pub fn inputs(&self, data: &Dataset, rows: &[usize]) -> Result<Inputs> {
        build_inputs(self.modality(), &self.schema, self.imaging.as_ref(), data, rows)
    }

    pub fn predict(&self, inputs: &Inputs) -> Result<Vec<SurvivalDistribution>> {
        predict_with(&self.net, None, &self.grid, inputs)
    }

    /// Pooled representations, one row per patient.
    pub fn embeddings(&self, inputs: &Inputs) -> Result<Vec<Vec<f64>>> {
        let rows: Vec<usize> = (0..inputs.len()).collect();
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(PREDICT_CHUNK) {
            let batch = inputs.batch(chunk)?;
            let mut g = Graph::new();
            let pooled = self.net.pooled(&mut g, &batch)?;
            let t = g.value(pooled);
            out.extend((0..t.rows()).map(|r| t.row_slice(r).to_vec()));
        }
        Ok(out)
    }

    /// Rows of a partition of the training cohort, logged in the audit.
    pub fn partition(&mut self, table: &CohortTable, part: Part, stage: Stage) -> Result<Vec<usize>> {
        self.audit.read(table, &self.split, part, stage)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
