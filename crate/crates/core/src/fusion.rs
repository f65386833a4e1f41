//! Multimodal survival network: clinical encoder, bidirectional
//! cross-attention, clinical-query final attention, attention pooling and
//! the prediction head, plus the single-modality self-attention variants.

use mmsurv_autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderLayers};
use crate::nn::{AttentionBlock, AttentionPool, FeedForwardBlock, Linear, Seq, TransformerBlock};
use crate::survival::{LossConfig, SurvivalDistribution, TimeGrid, DEFAULT_BINS};
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Clinical,
    Imaging,
    Multimodal,
}

impl Modality {
    pub fn uses_clinical(self) -> bool {
        self != Modality::Imaging
    }

    pub fn uses_imaging(self) -> bool {
        self != Modality::Clinical
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub width: usize,
    pub heads: usize,
    pub clinical_tokens: usize,
    pub bins: usize,
    pub lambda: f64,
    pub sigma: f64,
    pub learning_rate: f64,
    pub seed: u64,
    /// Bidirectional cross-attention rounds.
    pub fusion_rounds: usize,
    /// Also query the concatenated sequence from the imaging side.
    pub symmetric_final: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 64,
            heads: 4,
            clinical_tokens: 4,
            bins: DEFAULT_BINS,
            lambda: 0.5,
            sigma: 0.1,
            learning_rate: 1e-3,
            seed: 0,
            fusion_rounds: 1,
            symmetric_final: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(CoreError::Config(format!("width {} must be a positive multiple of heads {}", self.width, self.heads)));
        }
        if self.clinical_tokens == 0 || self.bins == 0 {
            return Err(CoreError::Config("token and bin counts must be positive".into()));
        }
        if !(self.sigma > 0.0) || !(self.lambda >= 0.0) || !(self.learning_rate > 0.0) {
            return Err(CoreError::Config("sigma and learning rate must be positive, lambda non-negative".into()));
        }
        Ok(())
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            sigma: self.sigma,
        }
    }
}

/// Two fully connected layers expanding a covariate vector into
/// `clinical_tokens` tokens.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClinicalEncoder {
    pub hidden: Linear,
    pub expand: Linear,
    pub tokens: usize,
    pub inputs: usize,
}

impl ClinicalEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, inputs: usize, cfg: &ModelConfig) -> Self {
        let d = cfg.width;
        Self {
            hidden: Linear::new(store, rng, "clinical.fc1", inputs, d, true),
            expand: Linear::new(store, rng, "clinical.fc2", d, cfg.clinical_tokens * d, true),
            tokens: cfg.clinical_tokens,
            inputs,
        }
    }

    /// `[B, p]` → stacked `[B·n_c, d]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Seq> {
        let [b, p] = g.shape(x).try_into().map_err(|_| CoreError::Shape("clinical input must be 2-D".into()))?;
        if p != self.inputs {
            return Err(CoreError::Shape(format!("{p} covariates, schema has {}", self.inputs)));
        }
        let h = self.hidden.forward(g, store, x)?;
        let h = g.gelu(h)?;
        let t = self.expand.forward(g, store, h)?;
        let width = g.shape(t)[1] / self.tokens;
        Ok(Seq::new(g.reshape(t, vec![b * self.tokens, width])?, self.tokens))
    }
}

/// Where imaging tokens come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ImagingSource {
    /// Precomputed tokens of a frozen encoder, `width` wide.
    Frozen { tokens: usize, width: usize },
    /// Raw patches through encoder layers trained with the survival loss.
    EndToEnd { config: EncoderConfig, layers: EncoderLayers },
}

impl ImagingSource {
    /// End-to-end source for `config`; [`SurvivalNet::new`] registers fresh
    /// encoder layers in the network's own store.
    pub fn end_to_end(config: EncoderConfig) -> Result<Self> {
        let layers = EncoderLayers::new(&mut ParamStore::new(), &mut ChaCha8Rng::seed_from_u64(0), "encoder", &config)?;
        Ok(Self::EndToEnd { config, layers })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImagingBranch {
    pub source: ImagingSource,
    pub adapter: Linear,
}

impl ImagingBranch {
    pub fn tokens(&self) -> usize {
        match &self.source {
            ImagingSource::Frozen { tokens, .. } => *tokens,
            ImagingSource::EndToEnd { layers, .. } => layers.tokens,
        }
    }

    /// Expected column count of the stacked imaging input.
    pub fn input_width(&self) -> usize {
        match &self.source {
            ImagingSource::Frozen { width, .. } => *width,
            ImagingSource::EndToEnd { config, .. } => config.patch_width(),
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, input: Var) -> Result<Seq> {
        let tokens = match &self.source {
            ImagingSource::Frozen { tokens, .. } => Seq::new(input, *tokens),
            ImagingSource::EndToEnd { layers, .. } => layers.forward(g, store, input)?,
        };
        Ok(Seq::new(self.adapter.forward(g, store, tokens.var)?, tokens.len))
    }
}

/// One bidirectional cross-attention round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionRound {
    pub clinical_from_imaging: AttentionBlock,
    pub imaging_from_clinical: AttentionBlock,
    pub clinical_ff: FeedForwardBlock,
    pub imaging_ff: FeedForwardBlock,
}

impl FusionRound {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, r: usize, cfg: &ModelConfig) -> Result<Self> {
        let (d, h) = (cfg.width, cfg.heads);
        Ok(Self {
            clinical_from_imaging: AttentionBlock::new(store, rng, &format!("fuse{r}.c_from_i"), d, h)?,
            imaging_from_clinical: AttentionBlock::new(store, rng, &format!("fuse{r}.i_from_c"), d, h)?,
            clinical_ff: FeedForwardBlock::new(store, rng, &format!("fuse{r}.c"), d, 2 * d),
            imaging_ff: FeedForwardBlock::new(store, rng, &format!("fuse{r}.i"), d, 2 * d),
        })
    }

    /// Returns `(clinical′, imaging′)`; both directions read the round's
    /// inputs.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, clinical: Seq, imaging: Seq) -> Result<(Seq, Seq)> {
        let c = self.clinical_from_imaging.forward(g, store, clinical, &[imaging])?;
        let i = self.imaging_from_clinical.forward(g, store, imaging, &[clinical])?;
        Ok((self.clinical_ff.forward(g, store, c)?, self.imaging_ff.forward(g, store, i)?))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionHead {
    pub hidden: Linear,
    pub output: Linear,
}

impl PredictionHead {
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, pooled: Var) -> Result<Var> {
        let h = self.hidden.forward(g, store, pooled)?;
        let h = g.gelu(h)?;
        self.output.forward(g, store, h)
    }
}

/// Model inputs for a batch of `size` patients.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    /// `[B, p]` preprocessed covariates.
    pub clinical: Option<Tensor>,
    /// Stacked `[B·tokens, width]` frozen tokens or raw patches.
    pub imaging: Option<Tensor>,
}

impl Batch {
    pub fn new(clinical: Option<Tensor>, imaging: Option<&[&Tensor]>) -> Result<Self> {
        let imaging = match imaging {
            Some(parts) => {
                let first = parts.first().ok_or_else(|| CoreError::InsufficientData("empty imaging batch".into()))?;
                let (rows, cols) = (first.rows(), first.cols());
                let mut data = Vec::with_capacity(parts.len() * rows * cols);
                for t in parts {
                    if t.shape() != first.shape() {
                        return Err(CoreError::Shape(format!("imaging input {:?} vs {:?}", t.shape(), first.shape())));
                    }
                    data.extend_from_slice(t.data());
                }
                Some((parts.len(), Tensor::matrix(parts.len() * rows, cols, data)?))
            }
            None => None,
        };
        let size = match (&clinical, &imaging) {
            (Some(c), Some((n, _))) if c.rows() != *n => {
                return Err(CoreError::Shape(format!("{} clinical rows vs {n} imaging inputs", c.rows())))
            }
            (Some(c), _) => c.rows(),
            (None, Some((n, _))) => *n,
            (None, None) => return Err(CoreError::InsufficientData("batch has no inputs".into())),
        };
        Ok(Self {
            size,
            clinical,
            imaging: imaging.map(|(_, t)| t),
        })
    }
}

/// The survival network for one modality setup.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurvivalNet {
    pub config: ModelConfig,
    pub modality: Modality,
    pub store: ParamStore,
    pub clinical: Option<ClinicalEncoder>,
    pub imaging: Option<ImagingBranch>,
    pub fusion: Vec<FusionRound>,
    pub final_attention: Option<AttentionBlock>,
    pub final_ff: Option<FeedForwardBlock>,
    pub imaging_final_attention: Option<AttentionBlock>,
    pub self_attention: Option<TransformerBlock>,
    pub pool: AttentionPool,
    pub head: PredictionHead,
}

impl SurvivalNet {
    /// `clinical_inputs` is the preprocessed covariate count; `imaging` is
    /// required unless the modality is clinical-only.
    pub fn new(config: ModelConfig, modality: Modality, clinical_inputs: usize, imaging: Option<ImagingSource>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.width;

        let clinical = if modality.uses_clinical() {
            if clinical_inputs == 0 {
                return Err(CoreError::Config("clinical modality needs at least one covariate".into()));
            }
            Some(ClinicalEncoder::new(&mut store, &mut rng, clinical_inputs, &config))
        } else {
            None
        };
        let imaging = match (modality.uses_imaging(), imaging) {
            (true, Some(source)) => {
                let source = match source {
                    ImagingSource::EndToEnd { config: enc, .. } => {
                        let layers = EncoderLayers::new(&mut store, &mut rng, "encoder", &enc)?;
                        ImagingSource::EndToEnd { config: enc, layers }
                    }
                    frozen => frozen,
                };
                let input = match &source {
                    ImagingSource::Frozen { width, .. } => *width,
                    ImagingSource::EndToEnd { config, .. } => config.width,
                };
                let adapter = Linear::new(&mut store, &mut rng, "imaging.adapter", input, d, true);
                Some(ImagingBranch { source, adapter })
            }
            (true, None) => return Err(CoreError::Config(format!("{modality:?} model needs an imaging source"))),
            (false, _) => None,
        };

        let (mut fusion, mut final_attention, mut final_ff, mut imaging_final_attention, mut self_attention) =
            (Vec::new(), None, None, None, None);
        if modality == Modality::Multimodal {
            for r in 0..config.fusion_rounds {
                fusion.push(FusionRound::new(&mut store, &mut rng, r, &config)?);
            }
            final_attention = Some(AttentionBlock::new(&mut store, &mut rng, "final", d, config.heads)?);
            final_ff = Some(FeedForwardBlock::new(&mut store, &mut rng, "final", d, 2 * d));
            if config.symmetric_final {
                imaging_final_attention = Some(AttentionBlock::new(&mut store, &mut rng, "final_img", d, config.heads)?);
            }
        } else {
            self_attention = Some(TransformerBlock::new(&mut store, &mut rng, "self", d, config.heads)?);
        }
        let pool = AttentionPool::new(&mut store, &mut rng, "pool", d);
        let head = PredictionHead {
            hidden: Linear::new(&mut store, &mut rng, "head.fc1", d, d, true),
            output: Linear::new(&mut store, &mut rng, "head.fc2", d, config.bins, true),
        };
        Ok(Self {
            config,
            modality,
            store,
            clinical,
            imaging,
            fusion,
            final_attention,
            final_ff,
            imaging_final_attention,
            self_attention,
            pool,
            head,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }

    fn inputs(&self, g: &mut Graph, store: &ParamStore, batch: &Batch) -> Result<(Option<Seq>, Option<Seq>)> {
        let clinical = match (&self.clinical, &batch.clinical) {
            (Some(enc), Some(x)) => {
                let x = g.constant(x.clone());
                Some(enc.forward(g, store, x)?)
            }
            (Some(_), None) => return Err(CoreError::Shape("batch lacks clinical covariates".into())),
            (None, _) => None,
        };
        let imaging = match (&self.imaging, &batch.imaging) {
            (Some(branch), Some(t)) => {
                if t.cols() != branch.input_width() || t.rows() != batch.size * branch.tokens() {
                    return Err(CoreError::Shape(format!(
                        "imaging input {:?} for {} patients of {}×{}",
                        t.shape(),
                        batch.size,
                        branch.tokens(),
                        branch.input_width()
                    )));
                }
                let x = g.constant(t.clone());
                Some(branch.forward(g, store, x)?)
            }
            (Some(_), None) => return Err(CoreError::Shape("batch lacks imaging input".into())),
            (None, _) => None,
        };
        Ok((clinical, imaging))
    }

    /// Pooled representation `[B, d]`.
    pub fn pooled(&self, g: &mut Graph, batch: &Batch) -> Result<Var> {
        self.pooled_with(g, &self.store, batch)
    }

    /// [`Self::pooled`] with parameter values taken from `store`, which must
    /// share this model's layout.
    pub fn pooled_with(&self, g: &mut Graph, store: &ParamStore, batch: &Batch) -> Result<Var> {
        let (clinical, imaging) = self.inputs(g, store, batch)?;
        match self.modality {
            Modality::Multimodal => {
                let (mut c, mut i) = (clinical.expect("clinical"), imaging.expect("imaging"));
                for round in &self.fusion {
                    (c, i) = round.forward(g, store, c, i)?;
                }
                let fin = self.final_attention.as_ref().expect("final attention");
                let fused = fin.forward(g, store, c, &[c, i])?;
                let fused = self.final_ff.as_ref().expect("final ff").forward(g, store, fused)?;
                let pooled = self.pool.forward(g, store, fused)?;
                match &self.imaging_final_attention {
                    Some(block) => {
                        let other = block.forward(g, store, i, &[c, i])?;
                        let other = self.pool.forward(g, store, other)?;
                        let sum = g.add(pooled, other)?;
                        Ok(g.scale(sum, 0.5)?)
                    }
                    None => Ok(pooled),
                }
            }
            Modality::Clinical | Modality::Imaging => {
                let seq = clinical.or(imaging).expect("one modality");
                let block = self.self_attention.as_ref().expect("self attention");
                let out = block.forward(g, store, seq)?;
                self.pool.forward(g, store, out)
            }
        }
    }

    /// Logits `[B, bins]`.
    pub fn logits(&self, g: &mut Graph, batch: &Batch) -> Result<Var> {
        self.logits_with(g, &self.store, batch)
    }

    pub fn logits_with(&self, g: &mut Graph, store: &ParamStore, batch: &Batch) -> Result<Var> {
        let pooled = self.pooled_with(g, store, batch)?;
        self.head.forward(g, store, pooled)
    }

    /// Forward pass without gradients.
    pub fn predict(&self, batch: &Batch, grid: &TimeGrid) -> Result<Vec<SurvivalDistribution>> {
        let mut g = Graph::new();
        let logits = self.logits(&mut g, batch)?;
        let t = g.value(logits);
        (0..t.rows()).map(|r| SurvivalDistribution::from_logits(t.row_slice(r), grid)).collect()
    }
}
