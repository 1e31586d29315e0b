//! Central finite-difference comparison against the tape's gradients.

use crate::error::Result;

use super::graph::{Graph, Var};
use super::params::{BoundParams, ParamSet};

/// Gradients smaller than this are compared on an absolute scale. Central
/// differences at step 1e-5 carry round-off near `1e-16 * |loss| / 1e-5`,
/// about 1e-9 for losses of order ten.
pub const GRAD_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failed: usize,
    pub max_rel_err: f64,
    /// `name[index]` of the worst scalar.
    pub worst: String,
    /// Analytic and numeric gradient at the worst scalar.
    pub worst_pair: (f64, f64),
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failed == 0
    }
}

/// Checks every scalar of every parameter. A scalar that disagrees at
/// `step` gets a second chance at `step / 10`, where the left or right
/// slope alone may match.
///
/// `loss` builds a scalar on a fresh graph from the bound parameters.
pub fn check_params(
    params: &ParamSet,
    loss: impl Fn(&mut Graph, &BoundParams) -> Result<Var>,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let bp = params.bind(&mut g);
    let l = loss(&mut g, &bp)?;
    g.backward(l)?;
    let grads = bp.grads(&g);

    let eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let bp = p.bind_frozen(&mut g);
        let l = loss(&mut g, &bp)?;
        Ok(g.value(l).item())
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        checked: 0,
        failed: 0,
        max_rel_err: 0.0,
        worst: String::new(),
        worst_pair: (0.0, 0.0),
    };
    for (pi, name) in params.names().iter().enumerate() {
        for i in 0..params.values()[pi].len() {
            let orig = params.values()[pi].data()[i];
            let mut at = |v: f64| -> Result<f64> {
                work.values_mut()[pi].data_mut()[i] = v;
                let l = eval(&work);
                work.values_mut()[pi].data_mut()[i] = orig;
                l
            };
            let analytic = grads[pi].data()[i];
            let mut numeric = (at(orig + step)? - at(orig - step)?) / (2.0 * step);
            let mut err = relative_error(analytic, numeric);
            if !(err < tol) {
                // A kink (ReLU, a PIT tie) within one step of the point spoils
                // the central difference. Retry closer in, accepting either
                // one-sided slope.
                let h = step / 10.0;
                let (up, mid, down) = (at(orig + h)?, at(orig)?, at(orig - h)?);
                for candidate in [(up - down) / (2.0 * h), (up - mid) / h, (mid - down) / h] {
                    let e = relative_error(analytic, candidate);
                    if e < err {
                        (numeric, err) = (candidate, e);
                    }
                }
            }
            report.checked += 1;
            if !(err < tol) {
                report.failed += 1;
            }
            if !(err <= report.max_rel_err) {
                report.max_rel_err = err;
                report.worst = format!("{name}[{i}]");
                report.worst_pair = (analytic, numeric);
            }
        }
    }
    Ok(report)
}
