//! Central finite differences.
//!
//! These helpers are the independent reference used throughout the test
//! suite to verify the hand-rolled analytic derivatives in [`crate::nets`],
//! [`crate::envs`] and [`crate::rollout`]. They know nothing about networks
//! or dynamics: they only probe closures.
//!
//! The default step is `cbrt(eps) * (1 + |x_i|)`, which balances truncation
//! (`O(h²)`) against round-off (`O(eps/h)`) for central differences. With
//! f64 that puts the attainable accuracy near `1e-10 * |f|`, which is why
//! gradient checks use a small absolute floor in addition to a relative
//! tolerance.

/// Default relative step for central differences: `cbrt(f64::EPSILON)`.
pub const DEFAULT_STEP: f64 = 6.055454452393343e-6;

/// Central-difference derivative of a scalar function at `x`.
pub fn central_diff<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central-difference gradient of `f` at `x`, one coordinate at a time.
///
/// The step for coordinate `i` is `step * (1 + |x[i]|)`.
pub fn central_diff_grad<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let h = step * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Central-difference Jacobian of a vector-valued function (rows index
/// outputs, flattened row-major as `out_dim` × `x.len()`).
pub fn central_diff_jacobian<F: FnMut(&[f64]) -> Vec<f64>>(
    mut f: F,
    x: &[f64],
    out_dim: usize,
    step: f64,
) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut jac = vec![0.0; out_dim * x.len()];
    for j in 0..x.len() {
        let h = step * (1.0 + x[j].abs());
        probe[j] = x[j] + h;
        let fp = f(&probe);
        probe[j] = x[j] - h;
        let fm = f(&probe);
        probe[j] = x[j];
        assert_eq!(fp.len(), out_dim, "probe output dimension changed");
        for i in 0..out_dim {
            jac[i * x.len() + j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Worst-case mismatch between an analytic gradient and a reference one.
///
/// For each coordinate the error is `|a - b| / max(|a|, |b|, floor)`; the
/// floor guards coordinates whose true value is dominated by the round-off
/// noise of the reference. Returns `(max_rel_err, argmax_index)`.
pub fn max_rel_err(analytic: &[f64], reference: &[f64], floor: f64) -> (f64, usize) {
    assert_eq!(analytic.len(), reference.len());
    let mut worst = 0.0;
    let mut at = 0;
    for (i, (&a, &b)) in analytic.iter().zip(reference).enumerate() {
        let scale = a.abs().max(b.abs()).max(floor);
        let err = (a - b).abs() / scale;
        if err > worst {
            worst = err;
            at = i;
        }
    }
    (worst, at)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_matches_hand_value() {
        // f(x) = x0² + 3 x0 x1, ∇f = [2 x0 + 3 x1, 3 x0].
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[0] * x[1];
        let g = central_diff_grad(f, &[1.0, 2.0], DEFAULT_STEP);
        assert!((g[0] - 8.0).abs() < 1e-9, "g0 = {}", g[0]);
        assert!((g[1] - 3.0).abs() < 1e-9, "g1 = {}", g[1]);
    }

    #[test]
    fn jacobian_of_linear_map_is_its_matrix() {
        let f = |x: &[f64]| vec![2.0 * x[0] + x[1], -x[0]];
        let j = central_diff_jacobian(f, &[0.3, -0.7], 2, DEFAULT_STEP);
        for (got, want) in j.iter().zip([2.0, 1.0, -1.0, 0.0]) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn rel_err_uses_floor_for_tiny_entries() {
        let (err, _) = max_rel_err(&[1e-14], &[0.0], 1e-8);
        assert!(err < 1e-5);
    }
}
