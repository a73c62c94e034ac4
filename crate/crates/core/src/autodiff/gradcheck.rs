use alloc::vec::Vec;

use super::{Tape, Tensor, Var};
use crate::math;
use crate::{Error, Result};

/// Outcome of a central-difference gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Worst relative error over every checked element.
    pub max_rel_error: f64,
    /// Worst relative error per checked parameter tensor (same order as `which`).
    pub per_param: Vec<f64>,
    /// Worst absolute difference `|analytic - numeric|` per checked tensor.
    pub per_param_abs: Vec<f64>,
    /// `(param, element)` where the worst error occurred.
    pub worst: Option<(usize, usize)>,
}

/// Relative error with denominator `max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = math::abs(analytic).max(math::abs(numeric)).max(1e-8);
    math::abs(analytic - numeric) / denom
}

/// Checks reverse-mode gradients of the scalar built by `f` against central
/// differences with `h = 1e-6 * max(1, |p|)`, for every element of every
/// parameter.
pub fn finite_diff_check<F>(params: &[Tensor], f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let all: Vec<usize> = (0..params.len()).collect();
    finite_diff_check_subset(params, &all, f)
}

/// As [`finite_diff_check`], restricted to the parameters listed in `which`.
pub fn finite_diff_check_subset<F>(params: &[Tensor], which: &[usize], f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = ps.iter().map(|p| t.constant(p.clone())).collect();
        let l = f(&mut t, &vs)?;
        let v = t.value(l);
        if v.numel() != 1 {
            return Err(Error::shape("finite_diff_check", "objective is not scalar"));
        }
        Ok(v.data()[0])
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        per_param: Vec::with_capacity(which.len()),
        per_param_abs: Vec::with_capacity(which.len()),
        worst: None,
    };
    for &pi in which {
        let analytic = grads.wrt(vars[pi]);
        let mut worst_here = 0.0f64;
        let mut worst_abs = 0.0f64;
        for e in 0..params[pi].numel() {
            let x = params[pi].data()[e];
            let h = 1e-6 * math::abs(x).max(1.0);
            let (up, down) = (x + h, x - h);
            work[pi].data_mut()[e] = up;
            let fp = eval(&work)?;
            work[pi].data_mut()[e] = down;
            let fm = eval(&work)?;
            work[pi].data_mut()[e] = x;
            // Divide by the step actually taken after rounding.
            let numeric = (fp - fm) / (up - down);
            let err = relative_error(analytic.data()[e], numeric);
            worst_here = worst_here.max(err);
            worst_abs = worst_abs.max(math::abs(analytic.data()[e] - numeric));
            if err > out.max_rel_error || out.worst.is_none() {
                out.max_rel_error = err;
                out.worst = Some((pi, e));
            }
        }
        out.per_param.push(worst_here);
        out.per_param_abs.push(worst_abs);
    }
    Ok(out)
}
