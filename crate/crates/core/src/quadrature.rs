//! Adaptive Simpson quadrature.
//!
//! Used as the independent oracle for the closed-form KL divergences and
//! kernel moments. It only ever sees densities, never the closed forms.

use crate::kernels::{Kernel, Prior};

const MAX_DEPTH: u32 = 48;

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    recurse(&f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// `x log x` with the `0 log 0 = 0` convention.
fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Numerical `KL(q || p)` for a location-scale kernel proposal against a
/// factorized prior (one dimension). The integration range is the proposal
/// support, split at `mu`; the Gaussian proposal is truncated at 12 sigma.
pub fn kl_quadrature(kernel: Kernel, prior: Prior, mu: f64, sigma: f64, tol: f64) -> f64 {
    let half = if kernel.is_bounded() { sigma } else { 12.0 * sigma };
    let q = |z: f64| kernel.density((z - mu) / sigma) / sigma;
    let p = |z: f64| prior.density(z);
    let integrand = |z: f64| {
        let qz = q(z);
        if qz == 0.0 {
            0.0
        } else {
            xlogy(qz, qz / p(z))
        }
    };
    adaptive_simpson(integrand, mu - half, mu, 0.5 * tol)
        + adaptive_simpson(integrand, mu, mu + half, 0.5 * tol)
}

/// `∫ ε^k K(ε) dε` over the kernel support.
pub fn kernel_moment(kernel: Kernel, k: i32, tol: f64) -> f64 {
    let half = if kernel.is_bounded() { 1.0 } else { 12.0 };
    let f = |e: f64| e.powi(k) * kernel.density(e);
    adaptive_simpson(f, -half, 0.0, 0.5 * tol) + adaptive_simpson(f, 0.0, half, 0.5 * tol)
}
