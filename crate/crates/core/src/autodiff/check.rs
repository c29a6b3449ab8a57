use super::{Graph, NodeId, ParamStore};
use crate::error::{invalid, Error, Result};

/// Compares reverse-mode gradients against central differences.
///
/// `f` must build a scalar root from the current parameter values and be
/// deterministic. Returns the maximum over every parameter entry of
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`. Parameter values
/// are restored before returning; gradients are left holding the analytic
/// result.
pub fn grad_check<F>(f: F, store: &mut ParamStore, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(invalid(format!("grad_check eps must lie in (0, 1e-2], got {eps}")));
    }
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let root = f(&mut g, store)?;
        let v = g.value(root).item();
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("grad_check objective = {v}")));
        }
        Ok(v)
    };

    store.zero_grad();
    {
        let mut g = Graph::new();
        let root = f(&mut g, store)?;
        if !g.value(root).is_finite() {
            return Err(Error::NonFinite("grad_check objective".into()));
        }
        g.backward(root, store)?;
    }

    let mut worst: f64 = 0.0;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for j in 0..store.value(id).len() {
            let original = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = original + eps;
            let plus = eval(store);
            store.value_mut(id).data_mut()[j] = original - eps;
            let minus = eval(store);
            store.value_mut(id).data_mut()[j] = original;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let analytic = store.grad(id).data()[j];
            let denom = 1f64.max(analytic.abs()).max(numeric.abs());
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
