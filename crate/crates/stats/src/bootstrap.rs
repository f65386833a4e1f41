use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    /// Resamples on which the statistic was defined.
    pub used: usize,
}

impl BootstrapCi {
    /// Half-width, for "mean ± margin" reporting.
    pub fn margin(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }
}

/// Seed of the `index`-th resample, independent of evaluation order.
pub fn resample_seed(master: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Nonparametric bootstrap of a statistic over `n` items with a 95 %
/// percentile interval. `statistic` receives resampled indices and may
/// return `None` when undefined on that resample.
pub fn bootstrap_ci(
    n: usize,
    resamples: usize,
    seed: u64,
    mut statistic: impl FnMut(&[usize]) -> Option<f64>,
) -> Option<BootstrapCi> {
    if n == 0 || resamples == 0 {
        return None;
    }
    let mut values = Vec::with_capacity(resamples);
    let mut idx = vec![0usize; n];
    for b in 0..resamples {
        let mut rng = ChaCha8Rng::seed_from_u64(resample_seed(seed, b as u64));
        for slot in idx.iter_mut() {
            *slot = rng.random_range(0..n);
        }
        if let Some(v) = statistic(&idx) {
            values.push(v);
        }
    }
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Some(BootstrapCi {
        mean,
        lower: percentile(&values, 0.025),
        upper: percentile(&values, 0.975),
        used: values.len(),
    })
}
