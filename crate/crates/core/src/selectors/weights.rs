/// Softmax of `lambda * delta` over the competitors, shifted by the maximum so
/// large `lambda` cannot overflow.
pub fn exp_weights(delta: &[f64], lambda: f64) -> Vec<f64> {
    let top = delta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = delta.iter().map(|d| (lambda * (d - top)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}
