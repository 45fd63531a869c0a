/// Central-difference gradient of a scalar function, one coordinate at a
/// time: `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`.
///
/// Used throughout the test suite to validate hand-written backward passes.
pub fn finite_diff_gradient<F>(mut f: F, params: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let saved = work[i];
        work[i] = saved + eps;
        let up = f(&work);
        work[i] = saved - eps;
        let down = f(&work);
        work[i] = saved;
        grad.push((up - down) / (2.0 * eps));
    }
    grad
}
