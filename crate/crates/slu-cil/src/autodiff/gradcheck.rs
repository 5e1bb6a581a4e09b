//! Central finite-difference gradient checking.
//!
//! This is the independent oracle used by the test suites: it never touches
//! the tape's backward rules, only repeated forward evaluations.

/// Numerical gradient of `f` at `x` by central differences with step `h`.
pub fn finite_difference<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Worst relative error between analytic and numeric gradients.
///
/// Per component the error is |a−n| / max(|a|,|n|), with an absolute floor:
/// components where both magnitudes fall below `atol` are considered exact.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64], atol: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let diff = (a - n).abs();
        if diff <= atol {
            continue;
        }
        let denom = a.abs().max(n.abs());
        if denom > 0.0 {
            worst = worst.max(diff / denom);
        }
    }
    worst
}

/// Convenience assertion: checks analytic against central differences.
pub fn assert_gradients_close<F>(f: F, x: &[f64], analytic: &[f64], h: f64, rel_tol: f64)
where
    F: FnMut(&[f64]) -> f64,
{
    let numeric = finite_difference(f, x, h);
    let err = max_rel_error(analytic, &numeric, 1e-8);
    assert!(
        err < rel_tol,
        "gradient mismatch: max relative error {} >= {}\nanalytic: {:?}\nnumeric:  {:?}",
        err,
        rel_tol,
        &analytic[..analytic.len().min(16)],
        &numeric[..numeric.len().min(16)]
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_recovered() {
        // f(x) = Σ x_i², df/dx_i = 2 x_i
        let x = [0.5, -1.25, 2.0];
        let g = finite_difference(|v| v.iter().map(|a| a * a).sum(), &x, 1e-5);
        for (gi, xi) in g.iter().zip(&x) {
            assert!((gi - 2.0 * xi).abs() < 1e-8);
        }
    }

    #[test]
    fn rel_error_floors_tiny_components() {
        assert_eq!(max_rel_error(&[1e-12], &[0.0], 1e-8), 0.0);
        assert!(max_rel_error(&[1.0], &[1.1], 1e-8) > 0.09);
    }
}
