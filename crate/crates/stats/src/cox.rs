//! Cox proportional-hazards regression by Newton–Raphson on the log
//! partial likelihood.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{EventRecord, StatsError, SurvCurve};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TieMethod {
    #[default]
    Breslow,
    Efron,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoxOptions {
    pub ties: TieMethod,
    /// Convergence threshold on the max-norm of the score.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for CoxOptions {
    fn default() -> Self {
        Self {
            ties: TieMethod::Breslow,
            tolerance: 1e-8,
            max_iterations: 50,
        }
    }
}

/// Log partial likelihood with its gradient and Hessian at one `beta`.
#[derive(Debug, Clone)]
pub struct PartialLikelihood {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Row-major `q × q` Hessian (negative semi-definite).
    pub hessian: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoxFit {
    pub coefficients: Vec<f64>,
    /// Observed information (negative Hessian), row-major `q × q`.
    pub information: Vec<f64>,
    pub log_partial_likelihood: f64,
    pub iterations: usize,
    pub gradient_max_norm: f64,
    pub ties: TieMethod,
    /// Breslow cumulative baseline hazard: distinct event times and the
    /// running sum at each.
    pub baseline_times: Vec<f64>,
    pub baseline_cumhaz: Vec<f64>,
}

fn check_inputs(covariates: &[Vec<f64>], records: &[EventRecord]) -> Result<usize, StatsError> {
    if covariates.len() != records.len() {
        return Err(StatsError::LengthMismatch(covariates.len(), records.len()));
    }
    let q = covariates.first().map(Vec::len).ok_or(StatsError::Empty("no patients"))?;
    if q == 0 {
        return Err(StatsError::DegenerateDesign("no covariates".into()));
    }
    if covariates.iter().any(|row| row.len() != q) {
        return Err(StatsError::DegenerateDesign("ragged covariate rows".into()));
    }
    Ok(q)
}

fn linear_predictor(row: &[f64], beta: &[f64]) -> f64 {
    row.iter().zip(beta).map(|(x, b)| x * b).sum()
}

/// Indices grouped by distinct time, groups in decreasing time order.
fn groups_descending(records: &[EventRecord]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[b].time.total_cmp(&records[a].time));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if records[g[0]].time == records[i].time => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Evaluates the log partial likelihood, score and Hessian.
pub fn partial_likelihood(
    covariates: &[Vec<f64>],
    records: &[EventRecord],
    beta: &[f64],
    ties: TieMethod,
) -> Result<PartialLikelihood, StatsError> {
    let q = check_inputs(covariates, records)?;
    if beta.len() != q {
        return Err(StatsError::LengthMismatch(beta.len(), q));
    }
    let eta: Vec<f64> = covariates.iter().map(|r| linear_predictor(r, beta)).collect();
    let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();

    let mut value = 0.0;
    let mut gradient = vec![0.0; q];
    let mut hessian = vec![0.0; q * q];
    let (mut s0, mut s1, mut s2) = (0.0, vec![0.0; q], vec![0.0; q * q]);

    for group in groups_descending(records) {
        let (mut e0, mut e1, mut e2) = (0.0, vec![0.0; q], vec![0.0; q * q]);
        let mut deaths = 0usize;
        for &i in &group {
            let x = &covariates[i];
            s0 += w[i];
            for a in 0..q {
                s1[a] += w[i] * x[a];
                for b in 0..q {
                    s2[a * q + b] += w[i] * x[a] * x[b];
                }
            }
            if records[i].event {
                deaths += 1;
                value += eta[i];
                e0 += w[i];
                for a in 0..q {
                    gradient[a] += x[a];
                    e1[a] += w[i] * x[a];
                    for b in 0..q {
                        e2[a * q + b] += w[i] * x[a] * x[b];
                    }
                }
            }
        }
        if deaths == 0 {
            continue;
        }
        let d = deaths as f64;
        let steps: Vec<f64> = match ties {
            TieMethod::Breslow => vec![0.0; 1],
            TieMethod::Efron => (0..deaths).map(|l| l as f64 / d).collect(),
        };
        let mult = match ties {
            TieMethod::Breslow => d,
            TieMethod::Efron => 1.0,
        };
        for f in steps {
            let a0 = s0 - f * e0;
            value -= mult * (a0.ln() + shift);
            for a in 0..q {
                let m_a = (s1[a] - f * e1[a]) / a0;
                gradient[a] -= mult * m_a;
                for b in 0..q {
                    let m_b = (s1[b] - f * e1[b]) / a0;
                    let second = (s2[a * q + b] - f * e2[a * q + b]) / a0;
                    hessian[a * q + b] -= mult * (second - m_a * m_b);
                }
            }
        }
    }
    Ok(PartialLikelihood {
        value,
        gradient,
        hessian,
    })
}

/// Log partial likelihood alone.
pub fn log_partial_likelihood(
    covariates: &[Vec<f64>],
    records: &[EventRecord],
    beta: &[f64],
    ties: TieMethod,
) -> Result<f64, StatsError> {
    Ok(partial_likelihood(covariates, records, beta, ties)?.value)
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Fits a Cox model. Starts at zero, takes Newton steps with step halving,
/// and stops once the score max-norm drops below the tolerance.
pub fn fit_coxph(covariates: &[Vec<f64>], records: &[EventRecord], options: CoxOptions) -> Result<CoxFit, StatsError> {
    let q = check_inputs(covariates, records)?;
    let n = records.len();
    if n <= q {
        return Err(StatsError::DegenerateDesign(format!("need more patients ({n}) than covariates ({q})")));
    }
    for j in 0..q {
        let first = covariates[0][j];
        if covariates.iter().all(|r| r[j] == first) {
            return Err(StatsError::DegenerateDesign(format!("covariate {j} is constant")));
        }
    }
    if !records.iter().any(|r| r.event) {
        return Err(StatsError::NoEvents);
    }

    let mut beta = vec![0.0; q];
    let mut current = partial_likelihood(covariates, records, &beta, options.ties)?;
    let initial_info: Vec<f64> = (0..q).map(|j| -current.hessian[j * q + j]).collect();
    let mut iterations = 0;
    while max_norm(&current.gradient) >= options.tolerance {
        if iterations == options.max_iterations {
            return Err(StatsError::NonConvergence {
                iterations,
                reason: format!("score max-norm {:.3e}", max_norm(&current.gradient)),
            });
        }
        iterations += 1;
        let info = DMatrix::from_row_slice(q, q, &current.hessian) * -1.0;
        let chol = info
            .cholesky()
            .ok_or_else(|| StatsError::DegenerateDesign("information matrix is singular".into()))?;
        let step = chol.solve(&DVector::from_column_slice(&current.gradient));

        let mut scale = 1.0;
        loop {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let next = partial_likelihood(covariates, records, &trial, options.ties)?;
            if next.value.is_finite() && next.value >= current.value - 1e-12 * current.value.abs().max(1.0) {
                beta = trial;
                current = next;
                break;
            }
            scale *= 0.5;
            if scale < 1e-10 {
                return Err(StatsError::NonConvergence {
                    iterations,
                    reason: "step halving failed to increase the likelihood".into(),
                });
            }
        }
    }
    // A likelihood that keeps rising toward infinity flattens out: the
    // score vanishes together with the information.
    for j in 0..q {
        let info_jj = -current.hessian[j * q + j];
        if info_jj < 1e-6 * initial_info[j] {
            return Err(StatsError::NonConvergence {
                iterations,
                reason: format!("monotone likelihood; coefficient {j} diverges"),
            });
        }
    }

    let (baseline_times, baseline_cumhaz) = breslow_baseline(covariates, records, &beta);
    Ok(CoxFit {
        gradient_max_norm: max_norm(&current.gradient),
        information: current.hessian.iter().map(|h| -h).collect(),
        log_partial_likelihood: current.value,
        coefficients: beta,
        iterations,
        ties: options.ties,
        baseline_times,
        baseline_cumhaz,
    })
}

fn breslow_baseline(covariates: &[Vec<f64>], records: &[EventRecord], beta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let risk: Vec<f64> = covariates.iter().map(|r| linear_predictor(r, beta).exp()).collect();
    let mut at_risk = 0.0;
    let mut jumps = Vec::new();
    for group in groups_descending(records) {
        at_risk += group.iter().map(|&i| risk[i]).sum::<f64>();
        let d = group.iter().filter(|&&i| records[i].event).count();
        if d > 0 {
            jumps.push((records[group[0]].time, d as f64 / at_risk));
        }
    }
    jumps.reverse();
    let mut cum = 0.0;
    let mut times = Vec::with_capacity(jumps.len());
    let mut values = Vec::with_capacity(jumps.len());
    for (t, dh) in jumps {
        cum += dh;
        times.push(t);
        values.push(cum);
    }
    (times, values)
}

impl CoxFit {
    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    /// Inverse information, row-major.
    pub fn variance(&self) -> Result<Vec<f64>, StatsError> {
        let q = self.dim();
        let info = DMatrix::from_row_slice(q, q, &self.information);
        let inv = info
            .try_inverse()
            .ok_or_else(|| StatsError::DegenerateDesign("information matrix is singular".into()))?;
        Ok(inv.transpose().as_slice().to_vec())
    }

    pub fn standard_errors(&self) -> Result<Vec<f64>, StatsError> {
        let q = self.dim();
        let v = self.variance()?;
        Ok((0..q).map(|j| v[j * q + j].sqrt()).collect())
    }

    pub fn z_scores(&self) -> Result<Vec<f64>, StatsError> {
        Ok(self
            .coefficients
            .iter()
            .zip(self.standard_errors()?)
            .map(|(b, se)| b / se)
            .collect())
    }

    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        linear_predictor(row, &self.coefficients)
    }

    /// Predicted survival `exp(−H₀(t)·exp(xβ))` as a step curve.
    pub fn predict_curve(&self, row: &[f64]) -> SurvCurve {
        let rr = self.linear_predictor(row).exp();
        let values: Vec<f64> = self
            .baseline_cumhaz
            .iter()
            .map(|h| (-h * rr).exp().clamp(0.0, 1.0))
            .collect();
        SurvCurve::new(self.baseline_times.clone(), values)
    }
}

/// Per-event Schoenfeld residuals `x_i − x̄(t_i)` with the risk-set mean
/// weighted by `exp(xβ)`. Returned in increasing event-time order together
/// with the event times.
pub fn schoenfeld_residuals(
    fit: &CoxFit,
    covariates: &[Vec<f64>],
    records: &[EventRecord],
) -> Result<(Vec<f64>, Vec<Vec<f64>>), StatsError> {
    let q = check_inputs(covariates, records)?;
    if q != fit.dim() {
        return Err(StatsError::LengthMismatch(q, fit.dim()));
    }
    let eta: Vec<f64> = covariates.iter().map(|r| fit.linear_predictor(r)).collect();
    let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut s0, mut s1) = (0.0, vec![0.0; q]);
    let mut out: Vec<(f64, Vec<f64>)> = Vec::new();
    for group in groups_descending(records) {
        for &i in &group {
            let w = (eta[i] - shift).exp();
            s0 += w;
            for a in 0..q {
                s1[a] += w * covariates[i][a];
            }
        }
        for &i in group.iter().filter(|&&i| records[i].event) {
            let resid = (0..q).map(|a| covariates[i][a] - s1[a] / s0).collect();
            out.push((records[i].time, resid));
        }
    }
    out.reverse();
    Ok(out.into_iter().unzip())
}
