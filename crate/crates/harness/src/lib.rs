//! Cohort formats, synthetic data and the experiment pipeline behind the
//! `mmsurv` command line.

pub mod cohort;
pub mod config;
pub mod covariates;
mod error;
pub mod experiment;
pub mod pipeline;
pub mod report;
pub mod split;
pub mod synthetic;
pub mod volume_io;

pub use cohort::{load_clinical_csv, read_clinical_csv, save_clinical_csv, write_clinical_csv, CohortTable, Mgmt, Patient, Resection, Sex};
pub use config::RunConfig;
pub use covariates::ClinicalSchema;
pub use error::{HarnessError, Result};
pub use experiment::{evaluate_late_fusion, evaluate_model, export_embeddings, predict_curves, pretrain_encoder, train_late_fusion, LateFusionModel, PatientCurve};
pub use pipeline::{train_model, Dataset, ImagingSetup, Inputs, TrainedModel, TrainingConfig, Volumes};
pub use report::{report_bytes, score_cohort, CohortReport, MetricReport};
pub use split::{stratified_split, AuditLog, Part, Split, SplitFractions, Stage};
pub use synthetic::{generate_synthetic_cohort, volume_corpus, Effects, GroundTruth, SyntheticCohort, SyntheticConfig};
pub use volume_io::{decode_volume, encode_volume, load_volume, read_volume, save_volume, write_volume};
