//! Central-difference gradient verification in 64-bit precision.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::ParamSet;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub per_parameter_errors: BTreeMap<String, f64>,
    pub epsilon: f64,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<F>(params: &ParamSet<f64>, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &BTreeMap<String, Var>) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = g.params(params);
    let out = f(&mut g, &vars)?;
    let v = g.value(out).item()?;
    if !v.is_finite() {
        return Err(Error::Numeric(format!("closure returned non-finite value {v}")));
    }
    Ok(v)
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences `(f(θ+ε) - f(θ-ε)) / 2ε`, one coordinate at a time.
///
/// `f` receives a fresh graph with every entry of `params` registered under
/// its name and must return a scalar node. It is called `2·n + 1` times for
/// `n` total coordinates, so keep the configuration small.
pub fn finite_diff_gradcheck<F>(params: &ParamSet<f64>, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &BTreeMap<String, Var>) -> Result<Var>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("epsilon must be positive, got {eps}")));
    }
    let analytic = {
        let mut g = Graph::new();
        let vars = g.params(params);
        let out = f(&mut g, &vars)?;
        let v = g.value(out).item()?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("closure returned non-finite value {v}")));
        }
        g.backward(out)?.params()
    };

    let mut per_parameter_errors = BTreeMap::new();
    let mut probe = params.clone();
    for (name, tensor) in params {
        let grad = &analytic[name];
        let mut worst = 0.0f64;
        for k in 0..tensor.len() {
            let base = tensor.data()[k];
            probe.get_mut(name).expect("present").data_mut()[k] = base + eps;
            let up = evaluate(&probe, &f)?;
            probe.get_mut(name).expect("present").data_mut()[k] = base - eps;
            let down = evaluate(&probe, &f)?;
            probe.get_mut(name).expect("present").data_mut()[k] = base;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(grad.data()[k], numeric));
        }
        per_parameter_errors.insert(name.clone(), worst);
    }
    let max_relative_error = per_parameter_errors.values().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_relative_error,
        per_parameter_errors,
        epsilon: eps,
    })
}
