//! Central finite-difference verification of analytic gradients.

use crate::{Graph, ParamId, ParamStore, TensorError, Var};

/// `|analytic − numeric| / max(1, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Central-difference gradient of a plain function of a vector.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = work[i];
            work[i] = orig + step;
            let plus = f(&work);
            work[i] = orig - step;
            let minus = f(&work);
            work[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Largest [`relative_error`] between two gradient vectors.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Compares backward-pass gradients of the scalar built by `f` with central
/// differences over every entry of `params`. Returns the largest relative
/// error.
pub fn grad_check<F, E>(store: &ParamStore, params: &[ParamId], step: f64, f: F) -> Result<f64, E>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, E>,
    E: From<TensorError>,
{
    let coords: Vec<(ParamId, usize)> = params
        .iter()
        .flat_map(|&id| (0..store.get(id).len()).map(move |k| (id, k)))
        .collect();
    grad_check_coords(store, &coords, step, f)
}

/// Like [`grad_check`] but only probes the listed `(param, flat index)`
/// coordinates.
pub fn grad_check_coords<F, E>(store: &ParamStore, coords: &[(ParamId, usize)], step: f64, f: F) -> Result<f64, E>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, E>,
    E: From<TensorError>,
{
    let eval = |s: &ParamStore| -> Result<f64, E> {
        let mut g = Graph::new();
        let out = f(&mut g, s)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let grads = g.backward(loss)?;

    let mut work = store.clone();
    let mut worst = 0.0f64;
    for &(id, k) in coords {
        let orig = work.get(id).data()[k];
        work.get_mut(id).data_mut()[k] = orig + step;
        let plus = eval(&work)?;
        work.get_mut(id).data_mut()[k] = orig - step;
        let minus = eval(&work)?;
        work.get_mut(id).data_mut()[k] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let analytic = grads.get(id).map_or(0.0, |t| t.data()[k]);
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok(worst)
}
