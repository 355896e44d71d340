use crate::nn::{ParamId, ParamStore};

/// Central-difference gradient of `f` at `theta`, one coordinate at a time.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, theta: &[f64], eps: f64) -> Vec<f64> {
    let mut point = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = point[i];
            point[i] = orig + eps;
            let plus = f(&point);
            point[i] = orig - eps;
            let minus = f(&point);
            point[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// [`finite_diff_grad`] over selected entries of a parameter store. The store is
/// restored exactly before returning.
pub fn finite_diff_params(
    store: &mut ParamStore,
    ids: &[ParamId],
    mut f: impl FnMut(&ParamStore) -> f64,
    eps: f64,
) -> Vec<Vec<f64>> {
    ids.iter()
        .map(|&id| {
            let n = store.get(id).tensor.numel();
            (0..n)
                .map(|i| {
                    let orig = store.get(id).tensor.data()[i];
                    store.get_mut(id).tensor.data_mut()[i] = orig + eps;
                    let plus = f(store);
                    store.get_mut(id).tensor.data_mut()[i] = orig - eps;
                    let minus = f(store);
                    store.get_mut(id).tensor.data_mut()[i] = orig;
                    (plus - minus) / (2.0 * eps)
                })
                .collect()
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, 1e-6)`.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient lengths differ");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
