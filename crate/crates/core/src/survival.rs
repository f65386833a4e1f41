//! Discrete-time survival head: percentile time grid, softmax PMF over
//! bins, cumulative incidence, interpolated monthly survival and the
//! likelihood + ranking training loss.

use mmsurv_autodiff::{Graph, Tensor, Var};
use mmsurv_stats::{EventRecord, SurvivalFn};
use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

pub const DEFAULT_BINS: usize = 5;
/// Nudge applied to tied grid edges.
pub const EDGE_EPSILON: f64 = 1e-6;
pub const LOG_FLOOR: f64 = 1e-12;

/// Upper bin edges in months; the origin is implicitly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    edges: Vec<f64>,
}

impl TimeGrid {
    /// Nearest-rank percentiles of the training times at `k/bins` for
    /// `k = 1..=bins`, nudged upward where ties would repeat an edge.
    pub fn from_times(times: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(CoreError::Config("grid needs at least one bin".into()));
        }
        if times.len() < bins {
            return Err(CoreError::InsufficientData(format!(
                "{} training times for {bins} bins",
                times.len()
            )));
        }
        if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(CoreError::Config(format!("training time {t} is not positive")));
        }
        let mut sorted = times.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mut edges: Vec<f64> = Vec::with_capacity(bins);
        for k in 1..=bins {
            // nearest rank: ceil(p·n) with p = k/bins, computed exactly in integers
            let rank = (k * n).div_ceil(bins);
            let mut e = sorted[rank - 1];
            if let Some(&prev) = edges.last() {
                if e <= prev {
                    e = prev + EDGE_EPSILON;
                }
            }
            edges.push(e);
        }
        Ok(Self { edges })
    }

    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.is_empty() || edges[0] <= 0.0 || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CoreError::Config(format!("edges {edges:?} must be positive and strictly increasing")));
        }
        Ok(Self { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn bins(&self) -> usize {
        self.edges.len()
    }

    /// First bin whose upper edge is at or beyond `time`; later times fall in
    /// the last bin.
    pub fn bin_of(&self, time: f64) -> usize {
        self.edges.partition_point(|&e| e < time).min(self.edges.len() - 1)
    }
}

/// PMF over the grid bins with its derived CIF and survival curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDistribution {
    pmf: Vec<f64>,
    edges: Vec<f64>,
}

impl SurvivalDistribution {
    pub fn from_logits(logits: &[f64], grid: &TimeGrid) -> Result<Self> {
        if logits.len() != grid.bins() {
            return Err(CoreError::Shape(format!("{} logits for {} bins", logits.len(), grid.bins())));
        }
        let pmf = Tensor::row(logits.to_vec())?.softmax_rows()?.into_data();
        Ok(Self {
            pmf,
            edges: grid.edges.clone(),
        })
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn cif_at_bin(&self, m: usize) -> Result<f64> {
        if m >= self.pmf.len() {
            return Err(CoreError::BinIndex {
                index: m,
                len: self.pmf.len(),
            });
        }
        Ok(self.pmf[..=m].iter().sum())
    }

    pub fn cif(&self) -> Vec<f64> {
        self.pmf
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect()
    }

    /// `S(t)` interpolated linearly through `(0, 1)` and `(eₘ, 1 − CIF(m))`,
    /// constant after the last edge.
    pub fn survival(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        let cif = self.cif();
        let mut prev = (0.0, 1.0);
        for (e, f) in self.edges.iter().zip(&cif) {
            let s = (1.0 - f).max(0.0);
            if t <= *e {
                let w = (t - prev.0) / (e - prev.0);
                return prev.1 + w * (s - prev.1);
            }
            prev = (*e, s);
        }
        prev.1
    }

    /// Survival at months `0, 1, …, horizon`.
    pub fn monthly(&self, horizon: usize) -> Vec<f64> {
        (0..=horizon).map(|m| self.survival(m as f64)).collect()
    }
}

impl SurvivalFn for SurvivalDistribution {
    fn survival_at(&self, t: f64) -> f64 {
        self.survival(t)
    }
}

/// Loss weights for [`total_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub sigma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            sigma: 0.1,
        }
    }
}

fn check_batch(g: &Graph, logits: Var, records: &[EventRecord], grid: &TimeGrid) -> Result<()> {
    let shape = g.shape(logits);
    if records.is_empty() {
        return Err(CoreError::InsufficientData("empty batch".into()));
    }
    if shape != [records.len(), grid.bins()] {
        return Err(CoreError::Shape(format!(
            "logits {shape:?} for {} records and {} bins",
            records.len(),
            grid.bins()
        )));
    }
    Ok(())
}

fn cif_rows(g: &mut Graph, pmf: Var, bins: usize) -> Result<Var> {
    let upper = Tensor::new(
        vec![bins, bins],
        (0..bins * bins).map(|k| if k / bins <= k % bins { 1.0 } else { 0.0 }).collect(),
    )?;
    let u = g.constant(upper);
    Ok(g.matmul(pmf, u)?)
}

/// Mean negative log-likelihood: `−log pmf[m]` for events and
/// `−log(1 − CIF(m))` for censored patients.
pub fn likelihood_loss(g: &mut Graph, logits: Var, records: &[EventRecord], grid: &TimeGrid) -> Result<Var> {
    check_batch(g, logits, records, grid)?;
    let pmf = g.softmax_rows(logits)?;
    let cif = cif_rows(g, pmf, grid.bins())?;
    let mut terms = Vec::with_capacity(2);
    let events: Vec<(usize, usize)> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.event)
        .map(|(i, r)| (i, grid.bin_of(r.time)))
        .collect();
    let censored: Vec<(usize, usize)> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.event)
        .map(|(i, r)| (i, grid.bin_of(r.time)))
        .collect();
    if !events.is_empty() {
        let p = g.gather(pmf, events)?;
        let lp = g.log_floor(p, LOG_FLOOR)?;
        terms.push(g.sum(lp)?);
    }
    if !censored.is_empty() {
        let f = g.gather(cif, censored)?;
        let s = g.affine(f, -1.0, 1.0)?;
        let ls = g.log_floor(s, LOG_FLOOR)?;
        terms.push(g.sum(ls)?);
    }
    let total = match terms[..] {
        [a] => a,
        [a, b] => g.add(a, b)?,
        _ => unreachable!(),
    };
    Ok(g.scale(total, -1.0 / records.len() as f64)?)
}

/// Acceptable pairs `(i, j)`: `i` had the event and `sᵢ < sⱼ`.
pub fn acceptable_pairs(records: &[EventRecord]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, ri) in records.iter().enumerate() {
        if !ri.event {
            continue;
        }
        for (j, rj) in records.iter().enumerate() {
            if ri.time < rj.time {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Mean of `exp(−(Fᵢ(m(sᵢ)) − Fⱼ(m(sᵢ)))/σ)` over acceptable pairs; zero
/// when there are none.
pub fn ranking_loss(g: &mut Graph, logits: Var, records: &[EventRecord], grid: &TimeGrid, sigma: f64) -> Result<Var> {
    if !(sigma > 0.0) {
        return Err(CoreError::Config(format!("sigma must be positive, got {sigma}")));
    }
    check_batch(g, logits, records, grid)?;
    let pairs = acceptable_pairs(records);
    if pairs.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let pmf = g.softmax_rows(logits)?;
    let cif = cif_rows(g, pmf, grid.bins())?;
    let own: Vec<_> = pairs.iter().map(|&(i, _)| (i, grid.bin_of(records[i].time))).collect();
    let other: Vec<_> = pairs.iter().map(|&(i, j)| (j, grid.bin_of(records[i].time))).collect();
    let fi = g.gather(cif, own)?;
    let fj = g.gather(cif, other)?;
    let diff = g.sub(fi, fj)?;
    let scaled = g.scale(diff, -1.0 / sigma)?;
    let e = g.exp(scaled)?;
    Ok(g.mean(e)?)
}

/// `likelihood + λ·ranking`.
pub fn total_loss(g: &mut Graph, logits: Var, records: &[EventRecord], grid: &TimeGrid, cfg: LossConfig) -> Result<Var> {
    if !(cfg.lambda >= 0.0) {
        return Err(CoreError::Config(format!("lambda must be non-negative, got {}", cfg.lambda)));
    }
    let nll = likelihood_loss(g, logits, records, grid)?;
    if cfg.lambda == 0.0 {
        return Ok(nll);
    }
    let rank = ranking_loss(g, logits, records, grid, cfg.sigma)?;
    let weighted = g.scale(rank, cfg.lambda)?;
    Ok(g.add(nll, weighted)?)
}
