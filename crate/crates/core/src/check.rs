//! Forward-evaluation verification helpers.
//!
//! `numeric_gradient` never touches the reverse pass: it re-runs the given
//! scalar function with perturbed inputs, so it stays an independent check
//! of whatever backward rule it is compared against.

/// Central finite differences of `f` at `x` with step `h`.
pub fn numeric_gradient<F>(f: &mut F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Worst relative disagreement between two gradient vectors, with an
/// absolute floor so that near-zero pairs compare by absolute difference.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let denom = x.abs().max(y.abs());
        let err = if denom < 1e-6 {
            (x - y).abs()
        } else {
            (x - y).abs() / denom
        };
        worst = worst.max(err);
    }
    worst
}

/// Worst absolute elementwise difference.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_gradient_of_quadratic() {
        let g = numeric_gradient(&mut |v: &[f64]| v[0] * v[0] + 3.0 * v[1], &[2.0, 5.0], 1e-6);
        assert!((g[0] - 4.0).abs() < 1e-6);
        assert!((g[1] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn rel_err_uses_absolute_floor_near_zero() {
        assert!(max_rel_err(&[1e-9], &[2e-9]) < 1e-6);
        assert!(max_rel_err(&[1.0], &[1.1]) > 0.05);
    }
}
