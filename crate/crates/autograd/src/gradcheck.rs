//! Central finite-difference checks against the tape's gradients.

use crate::{Graph, ParamId, ParamStore, Var};

/// One probed scalar inside a parameter tensor.
#[derive(Clone, Debug)]
pub struct Probe {
    pub param: ParamId,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    /// `|a − n| / max(|a|, |n|, floor)`.
    pub fn relative_error(&self, floor: f64) -> f64 {
        let denom = self.analytic.abs().max(self.numeric.abs()).max(floor);
        (self.analytic - self.numeric).abs() / denom
    }
}

/// Compares the tape gradient of the scalar built by `forward` with a
/// central difference of step `h` at each `(param, flat index)` probe.
/// The store is restored exactly after every perturbation.
pub fn check_params<F>(store: &mut ParamStore, forward: F, probes: &[(ParamId, usize)], h: f64) -> Vec<Probe>
where
    F: Fn(&ParamStore) -> (Graph, Var),
{
    let (graph, out) = forward(store);
    let grads = graph.backward(out);
    let analytic: Vec<(ParamId, crate::Matrix)> = grads.param_grads();

    probes
        .iter()
        .map(|&(param, index)| {
            let a = analytic
                .iter()
                .find(|(id, _)| *id == param)
                .map_or(0.0, |(_, g)| g.data()[index]);
            let original = store.get(param).data()[index];
            store.get_mut(param).data_mut()[index] = original + h;
            let plus = eval(store, &forward);
            store.get_mut(param).data_mut()[index] = original - h;
            let minus = eval(store, &forward);
            store.get_mut(param).data_mut()[index] = original;
            Probe { param, index, analytic: a, numeric: (plus - minus) / (2.0 * h) }
        })
        .collect()
}

fn eval<F: Fn(&ParamStore) -> (Graph, Var)>(store: &ParamStore, forward: &F) -> f64 {
    let (g, out) = forward(store);
    g.value(out).item()
}
