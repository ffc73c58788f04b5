//! Central finite-difference verification of analytic gradients.

use crate::error::{ensure, Result};
use crate::tensor::Module;

/// Default floor of the relative-error denominator.
pub const REL_ERR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Denominator floor `max_rel_err` was computed with.
    pub floor: f64,
    /// Parameter holding the worst coordinate.
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// Relative error with the denominator floored at [`REL_ERR_FLOOR`].
pub fn rel_err(a: f64, n: f64) -> f64 {
    rel_err_floored(a, n, REL_ERR_FLOOR)
}

pub fn rel_err_floored(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares analytic gradients against `(f(θ+h) - f(θ-h)) / 2h` for every
/// parameter coordinate of `model`.
///
/// `f` must evaluate the scalar objective and accumulate its gradient into
/// the parameters' `grad` tensors; gradients are zeroed before each call.
pub fn finite_diff_check<M, F>(model: &mut M, f: F, step: f64) -> Result<GradCheck>
where
    M: Module,
    F: FnMut(&mut M) -> Result<f64>,
{
    finite_diff_check_floored(model, f, step, REL_ERR_FLOOR)
}

/// [`finite_diff_check`] with an explicit relative-error floor. Central
/// differences of an O(1) objective carry roughly `1e-11` of rounding noise
/// at step `1e-5`, so gradients that are exactly zero (or nearly so) need a
/// floor well above that noise to be judged fairly.
pub fn finite_diff_check_floored<M, F>(model: &mut M, mut f: F, step: f64, floor: f64) -> Result<GradCheck>
where
    M: Module,
    F: FnMut(&mut M) -> Result<f64>,
{
    ensure!(floor > 0.0, "relative-error floor must be positive");
    ensure!(
        (1e-6..=1e-4).contains(&step),
        "finite-difference step {step} outside [1e-6, 1e-4]"
    );
    model.zero_grad();
    f(model)?;
    let analytic: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();

    let mut report = GradCheck {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        floor,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    for (pi, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = model.params()[pi].value.data()[i];
            let mut eval_at = |model: &mut M, v: f64| -> Result<f64> {
                model.params_mut()[pi].value.data_mut()[i] = v;
                model.zero_grad();
                f(model)
            };
            let plus = eval_at(model, orig + step)?;
            let minus = eval_at(model, orig - step)?;
            model.params_mut()[pi].value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = rel_err_floored(a, numeric, floor);
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            report.coords_checked += 1;
            if err > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = err;
                report.worst_param = model.params()[pi].name.clone();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    model.zero_grad();
    Ok(report)
}
