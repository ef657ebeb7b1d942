//! Central finite-difference checking for tape gradients.
//!
//! A check builds the loss twice per perturbed coordinate, so callers should
//! keep parameter counts small. Any structural choice made while building the
//! loss (an assignment, a top-k selection, sampled noise) must be held fixed
//! across rebuilds or the difference quotient straddles a discontinuity.

use crate::autodiff::{Tape, Tensor, Var};

/// Outcome of one parameter-tensor comparison.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

/// Relative error with an absolute floor: tiny gradients compare by absolute
/// difference instead of blowing up the ratio.
pub fn rel_err(analytic: f64, numeric: f64, atol: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    if scale < atol {
        0.0
    } else {
        diff / scale.max(atol)
    }
}

/// Checks the gradient of `build` with respect to every entry of `params`.
///
/// `build` receives a fresh tape plus the leaf vars for the current parameter
/// values (same order as `params`) and returns the scalar loss var. The
/// closure runs `1 + 2 * total_entries` times.
pub fn check<F>(
    params: &[(&str, Tensor)],
    step: f64,
    atol: f64,
    mut build: F,
) -> Vec<GradReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Var,
{
    let eval = |values: &[Tensor], build: &mut F| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        let loss_val = tape.value(loss).item();
        let grads = tape.backward(loss);
        let out = vars
            .iter()
            .zip(values)
            .map(|(v, t)| {
                grads
                    .get_opt(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.rows, t.cols))
            })
            .collect();
        (loss_val, out)
    };

    let base: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let (_, analytic) = eval(&base, &mut build);

    let mut reports = Vec::new();
    for (pi, (name, tensor)) in params.iter().enumerate() {
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for idx in 0..tensor.data.len() {
            let mut plus = base.clone();
            plus[pi].data[idx] += step;
            let (lp, _) = eval(&plus, &mut build);

            let mut minus = base.clone();
            minus[pi].data[idx] -= step;
            let (lm, _) = eval(&minus, &mut build);

            let numeric = (lp - lm) / (2.0 * step);
            let a = analytic[pi].data[idx];
            max_rel = max_rel.max(rel_err(a, numeric, atol));
            max_abs = max_abs.max((a - numeric).abs());
        }
        reports.push(GradReport {
            name: name.to_string(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
            checked: tensor.data.len(),
        });
    }
    reports
}

/// Compares caller-supplied analytic gradients against central differences
/// of a plain value function. Useful when the loss is built through model
/// plumbing that owns its own tape: compute the analytic gradients once,
/// then hand this a closure that re-evaluates the loss for given parameter
/// values.
pub fn check_against<F>(
    params: &[(&str, Tensor)],
    analytic: &[Tensor],
    step: f64,
    atol: f64,
    mut value: F,
) -> Vec<GradReport>
where
    F: FnMut(&[Tensor]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    let base: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut reports = Vec::new();
    for (pi, (name, tensor)) in params.iter().enumerate() {
        assert_eq!(
            (tensor.rows, tensor.cols),
            (analytic[pi].rows, analytic[pi].cols),
            "analytic gradient shape for {name}"
        );
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for idx in 0..tensor.data.len() {
            let mut plus = base.clone();
            plus[pi].data[idx] += step;
            let lp = value(&plus);

            let mut minus = base.clone();
            minus[pi].data[idx] -= step;
            let lm = value(&minus);

            let numeric = (lp - lm) / (2.0 * step);
            let a = analytic[pi].data[idx];
            max_rel = max_rel.max(rel_err(a, numeric, atol));
            max_abs = max_abs.max((a - numeric).abs());
        }
        reports.push(GradReport {
            name: name.to_string(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
            checked: tensor.data.len(),
        });
    }
    reports
}

/// Largest relative error across all parameter reports.
pub fn worst(reports: &[GradReport]) -> f64 {
    reports.iter().fold(0.0, |m, r| m.max(r.max_rel_err))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_checks_out() {
        // loss = sum((x - 3)^2), gradient 2(x - 3)
        let x = Tensor::from_vec(2, 2, vec![1.0, -2.0, 0.5, 4.0]);
        let reports = check(&[("x", x)], 1e-5, 1e-8, |tape, vars| {
            let shifted = tape.add_const(vars[0], -3.0);
            let sq = tape.square(shifted);
            tape.sum_all(sq)
        });
        assert!(worst(&reports) < 1e-7, "{reports:?}");
        assert_eq!(reports[0].checked, 4);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // Loss reads x through value() for the forward number but the tape
        // never sees it, so the analytic gradient is zero and the check must
        // flag the mismatch.
        let x = Tensor::from_vec(1, 1, vec![2.0]);
        let reports = check(&[("x", x)], 1e-5, 1e-8, |tape, vars| {
            let v = tape.value(vars[0]).item();
            tape.scalar(v * v)
        });
        assert!(worst(&reports) > 0.5);
    }

    #[test]
    fn rel_err_floor_handles_tiny_values() {
        assert_eq!(rel_err(0.0, 1e-12, 1e-8), 0.0);
        assert!(rel_err(1.0, 1.1, 1e-8) > 0.09);
    }
}
