//! Exact Wasserstein-1 distance between 1-D empirical distributions.

use super::EvalError;

/// W1 between the empirical distributions of two sample lists (any sizes):
/// the integral of |F_a - F_b| over the merged support, which equals the
/// quantile-function L1 distance. For equal counts this reduces to the mean
/// absolute difference of sorted samples.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::Domain("wasserstein1 needs nonempty samples".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(EvalError::Domain("wasserstein1 needs finite samples".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut all: Vec<f64> = Vec::with_capacity(sa.len() + sb.len());
    all.extend_from_slice(&sa);
    all.extend_from_slice(&sb);
    all.sort_by(|x, y| x.partial_cmp(y).unwrap());

    let na = sa.len() as f64;
    let nb = sb.len() as f64;
    let mut total = 0.0f64;
    for w in all.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        if x1 <= x0 {
            continue;
        }
        // CDF values on [x0, x1): count of samples <= x0
        let fa = sa.partition_point(|&v| v <= x0) as f64 / na;
        let fb = sb.partition_point(|&v| v <= x0) as f64 / nb;
        total += (fa - fb).abs() * (x1 - x0);
    }
    Ok(total)
}
