//! Central finite-difference helpers for verifying analytic gradients.
//! These evaluate only the forward path of whatever closure they are
//! given, so they stay independent of the reverse pass they check.

/// Central difference of `f` along coordinate `i` of `x`, step `h`.
pub fn central_diff<F>(f: &mut F, x: &mut [f64], i: usize, h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let orig = x[i];
    x[i] = orig + h;
    let fp = f(x);
    x[i] = orig - h;
    let fm = f(x);
    x[i] = orig;
    (fp - fm) / (2.0 * h)
}

/// `|a - b| / max(|a|, |b|, floor)`. The floor sits above the
/// cancellation noise of a central difference with step ~1e-5 on O(1)
/// objectives (~1e-10), so near-zero gradients compare as equal instead
/// of amplifying rounding error.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / denom
}

/// Checks analytic gradients against central differences on the listed
/// coordinates. Returns the first offending coordinate with both values.
pub fn compare_gradient<F>(
    f: &mut F,
    x: &mut [f64],
    analytic: &[f64],
    coords: &[usize],
    step: f64,
    tol: f64,
) -> Result<(), String>
where
    F: FnMut(&[f64]) -> f64,
{
    for &i in coords {
        let numeric = central_diff(f, x, i, step);
        let err = relative_error(analytic[i], numeric);
        if err > tol {
            return Err(format!(
                "coordinate {i}: analytic {} vs numeric {} (rel err {err:.3e})",
                analytic[i], numeric
            ));
        }
    }
    Ok(())
}
