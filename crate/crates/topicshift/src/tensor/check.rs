//! Central-difference gradient checking.
//!
//! `grad_check` re-evaluates a scalar loss while nudging every coordinate of
//! every named parameter by ±eps and compares the finite-difference slope
//! against the gradient produced by `backward`. The comparison is the usual
//! relative error with an absolute floor, so tiny gradients near zero do not
//! blow the ratio up.

use std::collections::BTreeMap;

use super::{Tensor, TensorError, TensorResult};

/// Outcome of one [`grad_check`] run.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GradCheckReport {
    /// Worst relative error seen across every coordinate of every parameter.
    pub max_relative_error: f64,
    /// Worst relative error per parameter name.
    pub per_parameter_errors: BTreeMap<String, f64>,
    /// Parameter name and flat index of the worst coordinate — the first
    /// place to look when a kink or a wrong backward rule is suspected.
    pub worst_coordinate: Option<(String, usize)>,
    /// True when `max_relative_error <= tolerance`.
    pub passed: bool,
    pub tolerance: f64,
    pub eps: f64,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Checks the analytic gradient of `f` with respect to every tensor in
/// `params` against central finite differences.
///
/// `f` must rebuild the loss from the parameters' *current* data each time it
/// is called; the checker perturbs the stored values in place, calls `f`, and
/// restores them. A non-finite loss value during probing is reported as an
/// error naming the parameter being perturbed.
pub fn grad_check<F>(
    f: F,
    params: &[(String, Tensor)],
    eps: f64,
    tolerance: f64,
) -> TensorResult<GradCheckReport>
where
    F: Fn() -> TensorResult<Tensor>,
{
    // Analytic pass.
    for (_, p) in params {
        p.zero_grad();
    }
    let loss = f()?;
    if loss.numel() != 1 {
        return Err(TensorError::NonScalarRoot {
            shape: loss.shape().to_vec(),
        });
    }
    if !loss.item().is_finite() {
        return Err(TensorError::NonFinite {
            context: "grad_check baseline loss".to_string(),
        });
    }
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|(_, p)| p.grad_vec().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    // Numeric pass: two probes per coordinate.
    let mut per_param = BTreeMap::new();
    let mut max_err = 0.0f64;
    let mut worst = None;
    for ((name, p), grad) in params.iter().zip(&analytic) {
        let mut param_max = 0.0f64;
        for (idx, &analytic_slope) in grad.iter().enumerate() {
            let original = p.value_at(idx);

            p.set_value_at(idx, original + eps);
            let plus = f()?.item();
            p.set_value_at(idx, original - eps);
            let minus = f()?.item();
            p.set_value_at(idx, original);

            if !plus.is_finite() || !minus.is_finite() {
                return Err(TensorError::NonFinite {
                    context: format!("grad_check probe of parameter '{name}' index {idx}"),
                });
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic_slope, numeric);
            if err > param_max {
                param_max = err;
            }
            if err > max_err {
                max_err = err;
                worst = Some((name.clone(), idx));
            }
        }
        per_param.insert(name.clone(), param_max);
    }

    Ok(GradCheckReport {
        max_relative_error: max_err,
        per_parameter_errors: per_param,
        worst_coordinate: worst,
        passed: max_err <= tolerance,
        tolerance,
        eps,
    })
}
