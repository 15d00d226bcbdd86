//! Central finite-difference gradient checking.
//!
//! The numeric side only ever reads forward values, so it stays independent
//! of the backward rules it validates.

use super::graph::{Graph, Var};
use super::params::{ParamId, Params};
use crate::error::Result;

/// Step used for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative errors are measured against `max(|analytic|, |numeric|, FLOOR)`.
///
/// Near-zero gradients are dominated by the `~1e-16 / h` roundoff of the
/// difference quotient, which no implementation can beat; the floor turns
/// those entries into an absolute comparison.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }

    pub fn merge(self, other: GradCheckReport) -> GradCheckReport {
        let checked = self.checked + other.checked;
        let mut best = if other.max_rel_err > self.max_rel_err {
            other
        } else {
            self
        };
        best.checked = checked;
        best
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares backward gradients of `loss_fn` against central differences for
/// every element of every non-frozen parameter.
///
/// `loss_fn` receives the bound parameter vars (in `Params` order) and must
/// return a scalar on the given graph.
pub fn check<F>(params: &Params<f64>, h: f64, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let loss = loss_fn(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let eval = |p: &Params<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let l = loss_fn(&mut g, &vars)?;
        Ok(g.value(l).item())
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut work = params.clone();
    let ids: Vec<ParamId> = params.ids().filter(|&id| !params.is_frozen(id)).collect();
    for id in ids {
        let analytic = grads.get(vars[id.index()]);
        for k in 0..params.get(id).len() {
            let orig = params.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + h;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig - h;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[k];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.checked == 1 {
                report.max_rel_err = err;
                report.worst_param = params.name(id).to_string();
                report.worst_index = k;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
