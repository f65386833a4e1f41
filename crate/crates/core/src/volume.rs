//! Four-channel voxel volumes: patch tokenization, augmentations and
//! intensity standardization.

use mmsurv_autodiff::Tensor;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

pub const CHANNELS: usize = 4;

/// Channel-major, row-major (z, y, x) within each channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Volume {
    dims: [usize; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(CoreError::Shape(format!("volume dims {dims:?} must be positive")));
        }
        let want = CHANNELS * dims.iter().product::<usize>();
        if data.len() != want {
            return Err(CoreError::Shape(format!("{} voxels for dims {dims:?} (need {want})", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self::new(dims, vec![0.0; CHANNELS * dims.iter().product::<usize>()]).expect("consistent size")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn voxels_per_channel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.voxels_per_channel();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.voxels_per_channel();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn index(&self, c: usize, z: usize, y: usize, x: usize) -> usize {
        let [_, h, w] = self.dims;
        ((c * self.dims[0] + z) * h + y) * w + x
    }

    pub fn get(&self, c: usize, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, z, y, x)]
    }

    pub fn set(&mut self, c: usize, z: usize, y: usize, x: usize, value: f32) {
        let i = self.index(c, z, y, x);
        self.data[i] = value;
    }
}

/// Patch grid of a volume: blocks per axis for patch size `p`.
pub fn patch_grid(dims: [usize; 3], p: usize) -> Result<[usize; 3]> {
    if p == 0 || dims.iter().any(|d| d % p != 0) {
        return Err(CoreError::Shape(format!("dims {dims:?} not divisible by patch size {p}")));
    }
    Ok(dims.map(|d| d / p))
}

pub fn token_count(dims: [usize; 3], p: usize) -> Result<usize> {
    Ok(patch_grid(dims, p)?.iter().product())
}

fn block_origin(grid: [usize; 3], p: usize, block: usize) -> [usize; 3] {
    let bx = block % grid[2];
    let by = (block / grid[2]) % grid[1];
    let bz = block / (grid[1] * grid[2]);
    [bz * p, by * p, bx * p]
}

/// `[tokens, 4·p³]`: blocks in raster order, each flattened channel-major
/// then (z, y, x).
pub fn patchify(v: &Volume, p: usize) -> Result<Tensor> {
    let grid = patch_grid(v.dims, p)?;
    let tokens: usize = grid.iter().product();
    let width = CHANNELS * p * p * p;
    let mut data = Vec::with_capacity(tokens * width);
    for block in 0..tokens {
        let [z0, y0, x0] = block_origin(grid, p, block);
        for c in 0..CHANNELS {
            for z in z0..z0 + p {
                for y in y0..y0 + p {
                    let start = v.index(c, z, y, x0);
                    data.extend(v.data[start..start + p].iter().map(|&x| x as f64));
                }
            }
        }
    }
    Ok(Tensor::matrix(tokens, width, data)?)
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Tensor, dims: [usize; 3], p: usize) -> Result<Volume> {
    let grid = patch_grid(dims, p)?;
    let tokens: usize = grid.iter().product();
    let width = CHANNELS * p * p * p;
    if patches.shape() != [tokens, width] {
        return Err(CoreError::Shape(format!("patches {:?} for {tokens}×{width}", patches.shape())));
    }
    let mut v = Volume::zeros(dims);
    let mut k = 0;
    for block in 0..tokens {
        let [z0, y0, x0] = block_origin(grid, p, block);
        for c in 0..CHANNELS {
            for z in z0..z0 + p {
                for y in y0..y0 + p {
                    let start = v.index(c, z, y, x0);
                    for (dst, src) in v.data[start..start + p].iter_mut().zip(&patches.data()[k..k + p]) {
                        *dst = *src as f32;
                    }
                    k += p;
                }
            }
        }
    }
    Ok(v)
}

/// Axis-aligned box `[start, start + size)` per axis (z, y, x).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutoutBox {
    pub start: [usize; 3],
    pub size: [usize; 3],
}

impl CutoutBox {
    pub fn contains(&self, z: usize, y: usize, x: usize) -> bool {
        [z, y, x]
            .iter()
            .zip(self.start.iter().zip(&self.size))
            .all(|(&i, (&s, &n))| i >= s && i < s + n)
    }

    pub fn voxels(&self) -> usize {
        self.size.iter().product()
    }
}

/// Zeroes one random box spanning `fraction` of each axis in all channels.
pub fn cutout(v: &Volume, rng: &mut ChaCha8Rng, fraction: f64) -> Result<(Volume, CutoutBox)> {
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(CoreError::Config(format!("cutout fraction {fraction} outside (0, 0.5]")));
    }
    let size = v.dims.map(|d| ((d as f64 * fraction).round() as usize).clamp(1, d));
    let mut start = [0; 3];
    for a in 0..3 {
        start[a] = rng.random_range(0..=v.dims[a] - size[a]);
    }
    let bx = CutoutBox { start, size };
    let mut out = v.clone();
    for c in 0..CHANNELS {
        for z in start[0]..start[0] + size[0] {
            for y in start[1]..start[1] + size[1] {
                let i = out.index(c, z, y, start[2]);
                out.data[i..i + size[2]].fill(0.0);
            }
        }
    }
    Ok((out, bx))
}

/// Exchanges two `p³` blocks (all channels) in place.
pub fn swap_blocks(v: &mut Volume, p: usize, a: usize, b: usize) -> Result<()> {
    let grid = patch_grid(v.dims, p)?;
    let blocks: usize = grid.iter().product();
    if a >= blocks || b >= blocks {
        return Err(CoreError::Shape(format!("block {} out of {blocks}", a.max(b))));
    }
    if a == b {
        return Ok(());
    }
    let (oa, ob) = (block_origin(grid, p, a), block_origin(grid, p, b));
    for c in 0..CHANNELS {
        for dz in 0..p {
            for dy in 0..p {
                let ia = v.index(c, oa[0] + dz, oa[1] + dy, oa[2]);
                let ib = v.index(c, ob[0] + dz, ob[1] + dy, ob[2]);
                for dx in 0..p {
                    v.data.swap(ia + dx, ib + dx);
                }
            }
        }
    }
    Ok(())
}

/// Swaps `n_swaps` disjoint pairs of random `p³` blocks. Returns the pairs.
pub fn patch_swap(v: &Volume, rng: &mut ChaCha8Rng, p: usize, n_swaps: usize) -> Result<(Volume, Vec<(usize, usize)>)> {
    if n_swaps == 0 {
        return Err(CoreError::Config("patch swap needs at least one swap".into()));
    }
    let blocks = token_count(v.dims, p)?;
    if 2 * n_swaps > blocks {
        return Err(CoreError::Config(format!("{n_swaps} disjoint swaps need {} blocks, have {blocks}", 2 * n_swaps)));
    }
    let chosen = sample(rng, blocks, 2 * n_swaps).into_vec();
    let pairs: Vec<(usize, usize)> = chosen.chunks(2).map(|c| (c[0], c[1])).collect();
    let mut out = v.clone();
    for &(a, b) in &pairs {
        swap_blocks(&mut out, p, a, b)?;
    }
    Ok((out, pairs))
}

/// Augmentation settings for self-supervised views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub cutout_fraction: f64,
    pub swaps: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            cutout_fraction: 0.25,
            swaps: 8,
        }
    }
}

/// Patch swap followed by cutout.
pub fn augment(v: &Volume, rng: &mut ChaCha8Rng, p: usize, cfg: AugmentConfig) -> Result<Volume> {
    let blocks = token_count(v.dims, p)?;
    let swaps = cfg.swaps.min(blocks / 2);
    let swapped = if swaps > 0 { patch_swap(v, rng, p, swaps)?.0 } else { v.clone() };
    Ok(cutout(&swapped, rng, cfg.cutout_fraction)?.0)
}

pub const LANDMARKS: usize = 11;

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn deciles(mut values: Vec<f64>) -> Option<[f64; LANDMARKS]> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(std::array::from_fn(|k| quantile(&values, k as f64 / 10.0)))
}

fn nonzero(channel: &[f32]) -> impl Iterator<Item = f64> + '_ {
    channel.iter().filter(|&&x| x != 0.0).map(|&x| x as f64)
}

/// Reference intensity landmarks (0 %, 10 %, …, 100 % quantiles of pooled
/// nonzero voxels) per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramLandmarks {
    pub channels: Vec<[f64; LANDMARKS]>,
}

impl HistogramLandmarks {
    pub fn fit(volumes: &[Volume]) -> Result<Self> {
        let channels = (0..CHANNELS)
            .map(|c| {
                let pooled: Vec<f64> = volumes.iter().flat_map(|v| nonzero(v.channel(c))).collect();
                deciles(pooled).ok_or_else(|| CoreError::Degenerate(format!("channel {c} has no nonzero voxels")))
            })
            .collect::<Result<_>>()?;
        Ok(Self { channels })
    }
}

/// Piecewise-linear map from `from` landmarks onto `to`, extended linearly
/// beyond the end segments.
fn landmark_map(x: f64, from: &[f64; LANDMARKS], to: &[f64; LANDMARKS]) -> f64 {
    let k = from[1..LANDMARKS - 1].partition_point(|&l| l < x);
    let (f0, f1, t0, t1) = (from[k], from[k + 1], to[k], to[k + 1]);
    if f1 > f0 {
        t0 + (x - f0) * (t1 - t0) / (f1 - f0)
    } else {
        t0
    }
}

/// Histogram standardization onto `reference` followed by z-normalization,
/// both over nonzero voxels; background stays zero.
pub fn preprocess_volume(v: &Volume, reference: &HistogramLandmarks) -> Result<Volume> {
    let mut out = v.clone();
    for c in 0..CHANNELS {
        let own = deciles(nonzero(v.channel(c)).collect())
            .ok_or_else(|| CoreError::Degenerate(format!("channel {c} is empty")))?;
        if own[LANDMARKS - 1] <= own[0] {
            return Err(CoreError::Degenerate(format!("channel {c} is constant")));
        }
        let mapped: Vec<f64> = v
            .channel(c)
            .iter()
            .map(|&x| if x == 0.0 { 0.0 } else { landmark_map(x as f64, &own, &reference.channels[c]) })
            .collect();
        let (mut n, mut sum) = (0usize, 0.0);
        for (m, &x) in mapped.iter().zip(v.channel(c)) {
            if x != 0.0 {
                n += 1;
                sum += m;
            }
        }
        let mean = sum / n as f64;
        let var = mapped
            .iter()
            .zip(v.channel(c))
            .filter(|(_, &x)| x != 0.0)
            .map(|(m, _)| (m - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        if !(var > 0.0) {
            return Err(CoreError::Degenerate(format!("channel {c} has zero variance after standardization")));
        }
        let sd = var.sqrt();
        for (dst, (m, &x)) in out.channel_mut(c).iter_mut().zip(mapped.iter().zip(v.channel(c))) {
            *dst = if x == 0.0 { 0.0 } else { ((m - mean) / sd) as f32 };
        }
    }
    Ok(out)
}
