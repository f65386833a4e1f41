//! Synthetic cohorts: clinical covariates with realistic marginals, 4-channel
//! volumes with a spherical lesion, and survival drawn from a known hazard.

use mmsurv_core::volume::CHANNELS;
use mmsurv_core::Volume;
use mmsurv_stats::{resample_seed, SurvivalFn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::{CohortTable, Mgmt, Patient, Resection, Sex};
use crate::error::{HarnessError, Result};

const AGE_MEAN: f64 = 63.0;
const AGE_SD: f64 = 11.0;
const MALE: f64 = 0.6;
const RESECTION: [(Resection, f64); 3] = [(Resection::Gtr, 0.566), (Resection::Ntr, 0.386), (Resection::NotAvailable, 0.048)];
const MGMT: [(Mgmt, f64); 3] = [(Mgmt::Unmethylated, 0.368), (Mgmt::Methylated, 0.19), (Mgmt::NotAvailable, 0.442)];

// log-hazard contributions before standardization
const W_AGE: f64 = 0.04;
const W_MALE: f64 = 0.15;
const W_GTR: f64 = -0.5;
const W_METHYLATED: f64 = -0.8;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Effects {
    pub beta_clinical: f64,
    pub beta_image: f64,
    pub beta_interaction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n: usize,
    pub effects: Effects,
    pub censor_rate: f64,
    pub dims: [usize; 3],
    /// Monthly baseline hazard.
    pub baseline_hazard: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 200,
            effects: Effects {
                beta_clinical: 0.8,
                beta_image: 0.8,
                beta_interaction: 0.0,
            },
            censor_rate: 0.3,
            dims: [16, 16, 16],
            baseline_hazard: std::f64::consts::LN_2 / 12.0,
        }
    }
}

/// Per-patient generating quantities, kept for audits and oracles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub id: String,
    pub clinical_score: f64,
    pub image_score: f64,
    pub radius: f64,
    /// Log-hazard ratio.
    pub risk: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub table: CohortTable,
    pub volumes: Vec<Volume>,
    pub truth: Vec<GroundTruth>,
    pub baseline_hazard: f64,
}

impl SyntheticCohort {
    /// True survival curves implied by the generating hazard.
    pub fn truth_curves(&self) -> Vec<ExponentialSurvival> {
        self.truth
            .iter()
            .map(|t| ExponentialSurvival {
                rate: self.baseline_hazard * t.risk.exp(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialSurvival {
    pub rate: f64,
}

impl SurvivalFn for ExponentialSurvival {
    fn survival_at(&self, t: f64) -> f64 {
        (-self.rate * t.max(0.0)).exp()
    }
}

fn draw<T: Copy>(rng: &mut ChaCha8Rng, table: &[(T, f64)]) -> T {
    let mut u: f64 = rng.random();
    for &(level, p) in table {
        if u < p {
            return level;
        }
        u -= p;
    }
    table[table.len() - 1].0
}

fn probability<T: PartialEq + Copy>(table: &[(T, f64)], level: T) -> f64 {
    table.iter().find(|(l, _)| *l == level).map_or(0.0, |(_, p)| *p)
}

/// Raw clinical log-hazard and its population mean and standard deviation.
fn clinical_raw(age: f64, sex: Sex, resection: Resection, mgmt: Mgmt) -> f64 {
    W_AGE * (age - AGE_MEAN)
        + if sex == Sex::Male { W_MALE } else { 0.0 }
        + if resection == Resection::Gtr { W_GTR } else { 0.0 }
        + if mgmt == Mgmt::Methylated { W_METHYLATED } else { 0.0 }
}

fn clinical_moments() -> (f64, f64) {
    let p_gtr = probability(&RESECTION, Resection::Gtr);
    let p_meth = probability(&MGMT, Mgmt::Methylated);
    let mean = W_MALE * MALE + W_GTR * p_gtr + W_METHYLATED * p_meth;
    let var = (W_AGE * AGE_SD).powi(2)
        + W_MALE.powi(2) * MALE * (1.0 - MALE)
        + W_GTR.powi(2) * p_gtr * (1.0 - p_gtr)
        + W_METHYLATED.powi(2) * p_meth * (1.0 - p_meth);
    (mean, var.sqrt())
}

/// Lesion radius for a standardized image score.
pub fn lesion_radius(dims: [usize; 3], image_score: f64) -> f64 {
    let m = *dims.iter().min().expect("three dims") as f64;
    m * (0.22 + 0.06 * image_score).clamp(0.08, 0.34)
}

/// One phantom: ellipsoidal brain with a spherical lesion (bright rim,
/// dark core) whose radius and rim intensity grow with `image_score`.
pub fn synthetic_volume(seed: u64, dims: [usize; 3], image_score: f64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).expect("valid sd");
    let base = [1.0, 1.3, 0.8, 1.1];
    let core = [0.6, 2.0, 0.5, 1.6];
    let gain: f64 = 1.0 + 0.05 * rng.sample::<f64, _>(StandardNormal);
    let centre = dims.map(|d| d as f64 / 2.0);
    let semi = dims.map(|d| 0.45 * d as f64);
    let lesion: [f64; 3] = std::array::from_fn(|a| centre[a] + rng.random_range(-1.0..1.0));
    let radius = lesion_radius(dims, image_score);
    let rim_gain = 1.8 + 0.3 * image_score;

    let mut v = Volume::zeros(dims);
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let p = [z as f64 + 0.5, y as f64 + 0.5, x as f64 + 0.5];
                let inside: f64 = (0..3).map(|a| ((p[a] - centre[a]) / semi[a]).powi(2)).sum();
                if inside > 1.0 {
                    continue;
                }
                let dist = (0..3).map(|a| (p[a] - lesion[a]).powi(2)).sum::<f64>().sqrt();
                for c in 0..CHANNELS {
                    let level = if dist < radius - 1.0 {
                        core[c]
                    } else if dist < radius {
                        base[c] * rim_gain
                    } else {
                        base[c]
                    };
                    let value = (gain * level + noise.sample(&mut rng)).max(0.01);
                    v.set(c, z, y, x, value as f32);
                }
            }
        }
    }
    v
}

/// Unlabelled volumes with their standardized image scores and radii.
pub fn volume_corpus(seed: u64, n: usize, dims: [usize; 3]) -> (Vec<Volume>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let volumes = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| synthetic_volume(resample_seed(seed, i as u64), dims, s))
        .collect();
    let radii = scores.iter().map(|&s| lesion_radius(dims, s)).collect();
    (volumes, scores, radii)
}

/// Largest uniform censoring bound giving the requested expected censored
/// fraction for whole-month event times.
fn censoring_bound(event_months: &[f64], rate: f64) -> Result<f64> {
    let censored = |cmax: f64| event_months.iter().map(|&t| ((t - 1.0) / cmax).min(1.0)).sum::<f64>() / event_months.len() as f64;
    let ceiling = event_months.iter().filter(|&&t| t > 1.0).count() as f64 / event_months.len() as f64;
    if rate >= ceiling {
        return Err(HarnessError::Generation(format!(
            "censoring rate {rate} unreachable: only {ceiling:.3} of patients survive past the first month"
        )));
    }
    let (mut lo, mut hi) = (1e-6f64, 1e9f64);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if censored(mid) > rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

pub fn generate_synthetic_cohort(seed: u64, cfg: &SyntheticConfig) -> Result<SyntheticCohort> {
    if cfg.n < 20 {
        return Err(HarnessError::Config(format!("cohort size {} below 20", cfg.n)));
    }
    if !(0.0..=0.9).contains(&cfg.censor_rate) {
        return Err(HarnessError::Config(format!("censor rate {} outside [0, 0.9]", cfg.censor_rate)));
    }
    if !(cfg.baseline_hazard > 0.0) {
        return Err(HarnessError::Config("baseline hazard must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let age_dist = Normal::new(AGE_MEAN, AGE_SD).expect("valid sd");
    let (c_mean, c_sd) = clinical_moments();
    let e = cfg.effects;

    let mut patients = Vec::with_capacity(cfg.n);
    let mut truth = Vec::with_capacity(cfg.n);
    let mut event_months = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let age = age_dist.sample(&mut rng).clamp(18.0, 95.0);
        let age = (age * 10.0).round() / 10.0;
        let sex = if rng.random_bool(MALE) { Sex::Male } else { Sex::Female };
        let resection = draw(&mut rng, &RESECTION);
        let mgmt = draw(&mut rng, &MGMT);
        let clinical = (clinical_raw(age, sex, resection, mgmt) - c_mean) / c_sd;
        let image: f64 = rng.sample(StandardNormal);
        let risk = e.beta_clinical * clinical + e.beta_image * image + e.beta_interaction * clinical * image;
        let rate = cfg.baseline_hazard * risk.exp();
        let u: f64 = rng.random();
        let t = -(1.0 - u).ln() / rate;
        event_months.push(t.ceil().max(1.0));
        let id = format!("P{i:04}");
        truth.push(GroundTruth {
            id: id.clone(),
            clinical_score: clinical,
            image_score: image,
            radius: lesion_radius(cfg.dims, image),
            risk,
        });
        patients.push(Patient {
            id,
            age_years: age,
            sex,
            resection,
            mgmt,
            time_months: 0.0,
            event: true,
        });
    }

    let bound = if cfg.censor_rate > 0.0 {
        Some(censoring_bound(&event_months, cfg.censor_rate)?)
    } else {
        None
    };
    for (p, &t) in patients.iter_mut().zip(&event_months) {
        let c = bound.map_or(f64::INFINITY, |b| rng.random_range(0.0..b).ceil().max(1.0));
        p.time_months = t.min(c);
        p.event = t <= c;
    }
    if patients.iter().all(|p| !p.event) {
        return Err(HarnessError::Generation("every patient is censored".into()));
    }

    let volumes = truth
        .iter()
        .enumerate()
        .map(|(i, t)| synthetic_volume(resample_seed(seed ^ 0x5EED_0F_1A6E, i as u64), cfg.dims, t.image_score))
        .collect();
    Ok(SyntheticCohort {
        table: CohortTable::new(patients)?,
        volumes,
        truth,
        baseline_hazard: cfg.baseline_hazard,
    })
}
