//! Patch-transformer volume encoder with self-supervised pretraining by
//! context restoration and contrastive learning.

use mmsurv_autodiff::{Adam, Graph, ParamId, ParamStore, Tensor, Var};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{uniform_init, Linear, Seq, TransformerBlock};
use crate::volume::{augment, patchify, token_count, AugmentConfig, HistogramLandmarks, Volume, CHANNELS};
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SslObjective {
    /// `recon + w_c · contrastive`
    #[default]
    Additive,
    /// `recon · (1 + contrastive)`
    Multiplicative,
    ReconstructionOnly,
    ContrastiveOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub dims: [usize; 3],
    pub patch: usize,
    pub width: usize,
    pub blocks: usize,
    pub heads: usize,
    pub projection: usize,
    pub temperature: f64,
    pub objective: SslObjective,
    pub contrastive_weight: f64,
    pub augment: AugmentConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dims: [16, 16, 16],
            patch: 4,
            width: 64,
            blocks: 2,
            heads: 4,
            projection: 32,
            temperature: 0.1,
            objective: SslObjective::Additive,
            contrastive_weight: 1.0,
            augment: AugmentConfig::default(),
            learning_rate: 1e-3,
            batch_size: 8,
            steps: 200,
        }
    }
}

impl EncoderConfig {
    pub fn tokens(&self) -> Result<usize> {
        token_count(self.dims, self.patch)
    }

    pub fn patch_width(&self) -> usize {
        CHANNELS * self.patch.pow(3)
    }

    pub fn validate(&self) -> Result<()> {
        self.tokens()?;
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(CoreError::Config(format!("width {} and heads {}", self.width, self.heads)));
        }
        if !(self.temperature > 0.0) {
            return Err(CoreError::Config(format!("temperature {} must be positive", self.temperature)));
        }
        if self.contrastive_weight < 0.0 {
            return Err(CoreError::Config("contrastive weight must be non-negative".into()));
        }
        if self.batch_size < 2 {
            return Err(CoreError::Config("contrastive pretraining needs at least 2 subjects per batch".into()));
        }
        Ok(())
    }
}

/// Patch embedding, learned positional encodings and transformer blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderLayers {
    pub embed: Linear,
    pub position: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub tokens: usize,
}

impl EncoderLayers {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let tokens = cfg.tokens()?;
        let embed = Linear::new(store, rng, &format!("{name}.embed"), cfg.patch_width(), cfg.width, true);
        let position = store.add(format!("{name}.position"), uniform_init(rng, tokens, cfg.width, cfg.width));
        let blocks = (0..cfg.blocks)
            .map(|l| TransformerBlock::new(store, rng, &format!("{name}.block{l}"), cfg.width, cfg.heads))
            .collect::<Result<_>>()?;
        Ok(Self {
            embed,
            position,
            blocks,
            tokens,
        })
    }

    /// Stacked patches `[B·tokens, 4p³]` → stacked tokens `[B·tokens, d]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, patches: Var) -> Result<Seq> {
        let rows = g.shape(patches)[0];
        if rows % self.tokens != 0 {
            return Err(CoreError::Shape(format!("{rows} patch rows for {} tokens", self.tokens)));
        }
        let x = self.embed.forward(g, store, patches)?;
        let pos = g.param(store, self.position);
        let batch = rows / self.tokens;
        let pos = if batch == 1 { pos } else { g.concat_rows(&vec![pos; batch])? };
        let mut seq = Seq::new(g.add(x, pos)?, self.tokens);
        for block in &self.blocks {
            seq = block.forward(g, store, seq)?;
        }
        Ok(seq)
    }

    pub fn params(&self, store: &ParamStore, prefix: &str) -> Vec<ParamId> {
        store.ids_with_prefix(prefix).collect()
    }
}

/// Reconstruction decoder and contrastive projection head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SslHeads {
    pub decoder: Linear,
    pub project_hidden: Linear,
    pub project_out: Linear,
}

/// Mean absolute voxel error.
pub fn reconstruction_loss(g: &mut Graph, decoded: Var, original: Var) -> Result<Var> {
    if g.shape(decoded) != g.shape(original) {
        return Err(CoreError::Shape(format!(
            "decoded {:?} vs original {:?}",
            g.shape(decoded),
            g.shape(original)
        )));
    }
    let diff = g.sub(decoded, original)?;
    let abs = g.abs(diff)?;
    Ok(g.mean(abs)?)
}

/// Normalized-temperature cross-entropy over `2B` embeddings where row `i`
/// and row `(i + B) mod 2B` are views of the same subject.
pub fn contrastive_loss(g: &mut Graph, embeddings: Var, temperature: f64) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(CoreError::Config(format!("temperature {temperature} must be positive")));
    }
    let rows = g.shape(embeddings)[0];
    if rows < 4 || rows % 2 != 0 {
        return Err(CoreError::Config(format!("need 2B ≥ 4 view embeddings, got {rows}")));
    }
    let b = rows / 2;
    let z = g.normalize_rows(embeddings)?;
    let sim = g.matmul_nt(z, z)?;
    let sim = g.scale(sim, 1.0 / temperature)?;
    let mask = g.constant(Tensor::new(
        vec![rows, rows],
        (0..rows * rows).map(|k| if k / rows == k % rows { -1e9 } else { 0.0 }).collect(),
    )?);
    let logits = g.add(sim, mask)?;
    let logp = g.log_softmax_rows(logits)?;
    let positives = g.gather(logp, (0..rows).map(|i| (i, (i + b) % rows)).collect())?;
    let mean = g.mean(positives)?;
    Ok(g.neg(mean)?)
}

/// Averages each run of `len` rows: `[B·len, d]` → `[B, d]`.
pub fn mean_tokens(g: &mut Graph, seq: Seq) -> Result<Var> {
    let batch = seq.batch(g);
    let n = batch * seq.len;
    let mut avg = vec![0.0; batch * n];
    for b in 0..batch {
        for t in 0..seq.len {
            avg[b * n + b * seq.len + t] = 1.0 / seq.len as f64;
        }
    }
    let a = g.constant(Tensor::matrix(batch, n, avg)?);
    Ok(g.matmul(a, seq.var)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SslLoss {
    pub total: f64,
    pub reconstruction: f64,
    pub contrastive: f64,
}

/// Pretrainable encoder with its own parameters and preprocessing
/// landmarks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeEncoder {
    pub config: EncoderConfig,
    pub store: ParamStore,
    pub layers: EncoderLayers,
    pub heads: SslHeads,
    pub landmarks: Option<HistogramLandmarks>,
    /// Training loss per pretraining step.
    pub history: Vec<f64>,
}

pub const ENCODER_PREFIX: &str = "encoder.";

impl VolumeEncoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let layers = EncoderLayers::new(&mut store, &mut rng, "encoder", &config)?;
        let d = config.width;
        let heads = SslHeads {
            decoder: Linear::new(&mut store, &mut rng, "ssl.decoder", d, config.patch_width(), true),
            project_hidden: Linear::new(&mut store, &mut rng, "ssl.project1", d, d, true),
            project_out: Linear::new(&mut store, &mut rng, "ssl.project2", d, config.projection, true),
        };
        Ok(Self {
            config,
            store,
            layers,
            heads,
            landmarks: None,
            history: Vec::new(),
        })
    }

    pub fn encoder_params(&self) -> Vec<ParamId> {
        self.store.ids_with_prefix(ENCODER_PREFIX).collect()
    }

    fn stack_patches(&self, volumes: &[&Volume]) -> Result<Tensor> {
        let mut data = Vec::new();
        for v in volumes {
            if v.dims() != self.config.dims {
                return Err(CoreError::Shape(format!("volume {:?} vs encoder {:?}", v.dims(), self.config.dims)));
            }
            data.extend(patchify(v, self.config.patch)?.into_data());
        }
        Ok(Tensor::matrix(volumes.len() * self.layers.tokens, self.config.patch_width(), data)?)
    }

    /// Builds the combined SSL loss for `views` (`2B` volumes, the second
    /// half pairing the first) reconstructing `originals` (`B` volumes).
    pub fn ssl_loss(&self, g: &mut Graph, views: &[Volume], originals: &[Volume]) -> Result<(Var, Option<Var>, Option<Var>)> {
        self.ssl_loss_with(g, &self.store, views, originals)
    }

    /// [`Self::ssl_loss`] with parameter values from `store`.
    pub fn ssl_loss_with(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        views: &[Volume],
        originals: &[Volume],
    ) -> Result<(Var, Option<Var>, Option<Var>)> {
        let b = originals.len();
        if views.len() != 2 * b || b < 2 {
            return Err(CoreError::Config(format!("{} views for {b} subjects", views.len())));
        }
        let cfg = &self.config;
        let view_refs: Vec<&Volume> = views.iter().collect();
        let patches = g.constant(self.stack_patches(&view_refs)?);
        let tokens = self.layers.forward(g, store, patches)?;

        let use_recon = cfg.objective != SslObjective::ContrastiveOnly;
        let use_contrastive = match cfg.objective {
            SslObjective::Additive => cfg.contrastive_weight > 0.0,
            SslObjective::Multiplicative | SslObjective::ContrastiveOnly => true,
            SslObjective::ReconstructionOnly => false,
        };
        let recon = if use_recon {
            let target_refs: Vec<&Volume> = originals.iter().chain(originals).collect();
            let target = g.constant(self.stack_patches(&target_refs)?);
            let decoded = self.heads.decoder.forward(g, store, tokens.var)?;
            Some(reconstruction_loss(g, decoded, target)?)
        } else {
            None
        };
        let contrastive = if use_contrastive {
            let pooled = mean_tokens(g, tokens)?;
            let h = self.heads.project_hidden.forward(g, store, pooled)?;
            let h = g.gelu(h)?;
            let z = self.heads.project_out.forward(g, store, h)?;
            Some(contrastive_loss(g, z, cfg.temperature)?)
        } else {
            None
        };
        let total = match (cfg.objective, recon, contrastive) {
            (SslObjective::Multiplicative, Some(r), Some(c)) => {
                let one_plus = g.affine(c, 1.0, 1.0)?;
                g.mul(r, one_plus)?
            }
            (_, Some(r), Some(c)) => {
                let wc = g.scale(c, cfg.contrastive_weight)?;
                g.add(r, wc)?
            }
            (_, Some(r), None) => r,
            (_, None, Some(c)) => c,
            (_, None, None) => unreachable!("objective uses at least one term"),
        };
        Ok((total, recon, contrastive))
    }

    fn make_views(&self, subjects: &[&Volume], rng: &mut ChaCha8Rng) -> Result<Vec<Volume>> {
        let mut first = Vec::with_capacity(subjects.len());
        let mut second = Vec::with_capacity(subjects.len());
        for v in subjects {
            first.push(augment(v, rng, self.config.patch, self.config.augment)?);
            second.push(augment(v, rng, self.config.patch, self.config.augment)?);
        }
        first.extend(second);
        Ok(first)
    }

    /// SSL loss of `volumes` under augmentations drawn from `seed`.
    pub fn evaluate(&self, volumes: &[Volume], seed: u64) -> Result<SslLoss> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let refs: Vec<&Volume> = volumes.iter().collect();
        let views = self.make_views(&refs, &mut rng)?;
        let mut g = Graph::new();
        let (total, r, c) = self.ssl_loss(&mut g, &views, volumes)?;
        Ok(SslLoss {
            total: g.value(total).item(),
            reconstruction: r.map_or(0.0, |v| g.value(v).item()),
            contrastive: c.map_or(0.0, |v| g.value(v).item()),
        })
    }

    /// Runs `config.steps` Adam steps on random batches of preprocessed
    /// volumes. Appends each step's loss to `history`.
    pub fn pretrain(&mut self, volumes: &[Volume], seed: u64) -> Result<()> {
        let b = self.config.batch_size;
        if volumes.len() < b {
            return Err(CoreError::InsufficientData(format!("{} volumes for batch size {b}", volumes.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut opt = Adam::new(self.config.learning_rate);
        let trainable: Vec<ParamId> = self.store.ids().collect();
        for _ in 0..self.config.steps {
            let idx = sample(&mut rng, volumes.len(), b).into_vec();
            let subjects: Vec<&Volume> = idx.iter().map(|&i| &volumes[i]).collect();
            let originals: Vec<Volume> = subjects.iter().map(|&v| v.clone()).collect();
            let views = self.make_views(&subjects, &mut rng)?;
            let mut g = Graph::new();
            let (loss, _, _) = self.ssl_loss(&mut g, &views, &originals)?;
            self.history.push(g.value(loss).item());
            let grads = g.backward(loss)?;
            opt.step(&mut self.store, &grads, &trainable);
        }
        Ok(())
    }

    /// Encoder tokens `[tokens, d]` of one volume.
    pub fn encode(&self, v: &Volume) -> Result<Tensor> {
        Ok(self.encode_batch(std::slice::from_ref(v))?.remove(0))
    }

    pub fn encode_batch(&self, volumes: &[Volume]) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(volumes.len());
        for chunk in volumes.chunks(16) {
            let refs: Vec<&Volume> = chunk.iter().collect();
            let mut g = Graph::new();
            let patches = g.constant(self.stack_patches(&refs)?);
            let seq = self.layers.forward(&mut g, &self.store, patches)?;
            let all = g.value(seq.var);
            let per = self.layers.tokens * self.config.width;
            for k in 0..chunk.len() {
                out.push(Tensor::matrix(
                    self.layers.tokens,
                    self.config.width,
                    all.data()[k * per..(k + 1) * per].to_vec(),
                )?);
            }
        }
        Ok(out)
    }

    /// Token-averaged embedding of each volume.
    pub fn pooled(&self, volumes: &[Volume]) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .encode_batch(volumes)?
            .iter()
            .map(|t| {
                let mut m = vec![0.0; t.cols()];
                for r in 0..t.rows() {
                    for (acc, x) in m.iter_mut().zip(t.row_slice(r)) {
                        *acc += x / t.rows() as f64;
                    }
                }
                m
            })
            .collect())
    }
}
