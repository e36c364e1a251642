//! Central finite-difference checks for reverse-mode gradients.
//!
//! The checker only evaluates the forward pass, so it is independent of the
//! backward rules it verifies.

use super::{Graph, NodeId, ParamStore, Tensor};

/// Worst mismatch found by a check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<String>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }

    fn record(&mut self, label: String, analytic: f64, numeric: f64) {
        self.checked += 1;
        let err = rel_error(analytic, numeric);
        if err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst = Some(format!(
                "{label}: analytic {analytic:.9e} vs numeric {numeric:.9e}"
            ));
        }
    }
}

/// `|a − n| / max(|a|, |n|, 1e-3)`: relative for ordinary magnitudes and
/// absolute near zero, where finite differences carry only rounding noise.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

pub const DEFAULT_STEP: f64 = 1e-5;

/// Checks the gradients of every parameter of `store` for the scalar loss
/// built by `loss`.
pub fn check_params<F>(store: &ParamStore, step: f64, loss: F) -> GradCheckReport
where
    F: Fn(&mut Graph, &ParamStore) -> NodeId,
{
    let mut g = Graph::new();
    let l = loss(&mut g, store);
    let grads = g.backward(l).expect("backward on scalar loss");
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let eval = |s: &ParamStore| {
        let mut g = Graph::new();
        let l = loss(&mut g, s);
        g.scalar(l)
    };
    let mut probe = store.clone();
    for id in store.ids() {
        let n = store.get(id).len();
        for k in 0..n {
            let orig = store.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = orig + step;
            let up = eval(&probe);
            probe.get_mut(id).data_mut()[k] = orig - step;
            let down = eval(&probe);
            probe.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = grads.param(id).map_or(0.0, |t| t.data()[k]);
            report.record(format!("{}[{k}]", store.name(id)), analytic, numeric);
        }
    }
    report
}

/// Checks gradients with respect to graph inputs built from `inputs`.
pub fn check_inputs<F>(inputs: &[Tensor], step: f64, loss: F) -> GradCheckReport
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let build = |vals: &[Tensor]| {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = vals.iter().map(|t| g.input(t.clone())).collect();
        let l = loss(&mut g, &ids);
        (g, ids, l)
    };
    let (g, ids, l) = build(inputs);
    let grads = g.backward(l).expect("backward on scalar loss");
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let mut probe = inputs.to_vec();
    for (j, t) in inputs.iter().enumerate() {
        for k in 0..t.len() {
            let orig = t.data()[k];
            probe[j].data_mut()[k] = orig + step;
            let (gu, _, lu) = build(&probe);
            probe[j].data_mut()[k] = orig - step;
            let (gd, _, ld) = build(&probe);
            probe[j].data_mut()[k] = orig;
            let numeric = (gu.scalar(lu) - gd.scalar(ld)) / (2.0 * step);
            let analytic = grads.wrt(ids[j]).map_or(0.0, |t| t.data()[k]);
            report.record(format!("input{j}[{k}]"), analytic, numeric);
        }
    }
    report
}
