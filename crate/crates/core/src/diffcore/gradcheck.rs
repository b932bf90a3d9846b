//! Central finite-difference gradient checking.
//!
//! The numerical side only ever runs forward passes, so it stays independent
//! of the backward rules it checks.

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;
/// Acceptance bound on the maximum relative error.
pub const MAX_REL_ERR: f64 = 1e-4;
/// Denominator floor of the relative error; below it the comparison is
/// effectively absolute.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < MAX_REL_ERR
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences with respect to every element of every input.
pub fn check<F>(inputs: &[Tensor<f64>], f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |probe: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = probe.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut report = GradCheck {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for ei in 0..t.numel() {
            let x0 = t.data()[ei];
            probe[ti].data_mut()[ei] = x0 + FD_STEP;
            let fp = eval(&probe)?;
            probe[ti].data_mut()[ei] = x0 - FD_STEP;
            let fm = eval(&probe)?;
            probe[ti].data_mut()[ei] = x0;
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            let a = analytic[ti].data()[ei];
            report.max_rel_err = report.max_rel_err.max(rel_err(a, numeric));
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            report.checked += 1;
        }
    }
    Ok(report)
}
