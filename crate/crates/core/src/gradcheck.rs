//! Central finite-difference verification of taped gradients.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, flat element index) of the largest error.
    pub worst_coordinate: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates_checked: usize,
    pub passed: bool,
}

/// Relative error with a `1e-8` floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<F>(loss_fn: &F, params: &[Matrix]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = loss_fn(&tape, &vars)?;
    let v = out.scalar();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {v}")));
    }
    Ok(v)
}

/// Compares the taped gradient of `loss_fn` against
/// `(f(θ+ε) - f(θ-ε)) / 2ε`, one coordinate at a time.
///
/// `loss_fn` must be deterministic and return a `1 × 1` node.
pub fn grad_check<F>(
    loss_fn: &F,
    params: &[Matrix],
    config: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if config.epsilon.is_nan() || config.epsilon <= 0.0 {
        return Err(Error::invalid("grad_check epsilon must be positive"));
    }

    let analytic: Vec<Matrix> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = loss_fn(&tape, &vars)?;
        if !out.scalar().is_finite() {
            return Err(Error::NonFinite(format!(
                "loss evaluated to {}",
                out.scalar()
            )));
        }
        let grads = tape.backward(out)?;
        vars.iter().map(|v| grads.wrt(*v)).collect()
    };

    let mut work: Vec<Matrix> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_coordinate: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates_checked: 0,
        passed: true,
    };
    let eps = config.epsilon;
    for (pi, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let orig = work[pi].data()[k];
            work[pi].data_mut()[k] = orig + eps;
            let plus = evaluate(loss_fn, &work)?;
            work[pi].data_mut()[k] = orig - eps;
            let minus = evaluate(loss_fn, &work)?;
            work[pi].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[k];
            let err = relative_error(a, numeric);
            report.coordinates_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_coordinate = (pi, k);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_error <= config.tolerance;
    Ok(report)
}
