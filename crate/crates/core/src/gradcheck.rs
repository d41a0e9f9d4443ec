//! Central finite-difference comparison for gradients over a [`ParamStore`].

use crate::model::ParamStore;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `name[index]` of the entry with the largest error.
    pub worst: String,
}

/// Compares `analytic` (one gradient vector per tensor) with central
/// differences of `loss` on up to `per_tensor` evenly spaced entries of
/// each tensor. Entries where both gradients are below `1e-8` are compared
/// absolutely.
pub fn check_gradients(
    store: &ParamStore,
    analytic: &[Vec<f64>],
    per_tensor: usize,
    h: f64,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> GradCheck {
    assert_eq!(store.len(), analytic.len());
    let mut work = store.clone();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        worst: String::new(),
    };
    for (ti, grad) in analytic.iter().enumerate() {
        let n = grad.len();
        let stride = n.div_ceil(per_tensor.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = work.tensors[ti].data[i];
            work.tensors[ti].data[i] = orig + h;
            let up = loss(&work);
            work.tensors[ti].data[i] = orig - h;
            let down = loss(&work);
            work.tensors[ti].data[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad[i];
            let scale = a.abs().max(numeric.abs());
            let err = if scale < 1e-8 {
                (a - numeric).abs()
            } else {
                (a - numeric).abs() / scale
            };
            out.checked += 1;
            if err > out.max_rel_error {
                out.max_rel_error = err;
                out.worst = format!("{}[{i}]", store.names[ti]);
            }
        }
    }
    out
}
