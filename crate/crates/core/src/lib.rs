//! Multimodal discrete-time survival modelling: the survival head, the
//! cross-attention fusion network and the self-supervised volume encoder.

pub mod encoder;
mod error;
pub mod fusion;
pub mod nn;
pub mod survival;
pub mod volume;

pub use encoder::{EncoderConfig, SslObjective, VolumeEncoder};
pub use error::{CoreError, Result};
pub use fusion::{Batch, ImagingSource, Modality, ModelConfig, SurvivalNet};
pub use survival::{likelihood_loss, ranking_loss, total_loss, LossConfig, SurvivalDistribution, TimeGrid};
pub use volume::{HistogramLandmarks, Volume};
