//! Scalar helpers for pointwise power terms and their monotone resolvents.

use crate::error::{Result, Solver, WedError};
use crate::grid::p_flux;

/// Smallest |s| at which curvature of a sub-quadratic power is evaluated.
const CURVATURE_FLOOR: f64 = 1e-8;

#[inline]
pub(crate) fn power_value(s: f64, r: f64) -> f64 {
    if r == 2.0 {
        0.5 * s * s
    } else {
        s.abs().powf(r) / r
    }
}

#[inline]
pub(crate) fn power_derivative(s: f64, r: f64) -> f64 {
    p_flux(s, r)
}

#[inline]
pub(crate) fn power_curvature(s: f64, r: f64) -> f64 {
    if r == 2.0 {
        1.0
    } else if r < 2.0 {
        (r - 1.0) * s.abs().max(CURVATURE_FLOOR).powf(r - 2.0)
    } else {
        (r - 1.0) * s.abs().powf(r - 2.0)
    }
}

/// Solves `x + lambda * dpsi(x) = a` for an odd, nondecreasing `dpsi`.
///
/// The root lies between 0 and `a`; Newton steps are taken when they stay
/// inside the current bracket, otherwise the bracket is bisected. The
/// derivative is never evaluated at 0, so sub-quadratic powers are safe.
pub(crate) fn solve_monotone(
    a: f64,
    lambda: f64,
    dpsi: impl Fn(f64) -> f64,
    ddpsi: impl Fn(f64) -> f64,
) -> Result<f64> {
    if a == 0.0 {
        return Ok(0.0);
    }
    let sign = a.signum();
    let target = a.abs();
    let g = |x: f64| x + lambda * dpsi(x) - target;

    let (mut lo, mut hi) = (0.0_f64, target);
    let mut x = target / (1.0 + lambda * ddpsi(target).max(0.0));
    if !(x > lo && x < hi) {
        x = 0.5 * target;
    }
    let tol = 4.0 * f64::EPSILON * (1.0 + target);
    // bisect whenever two steps fail to halve the bracket (guards slow Newton)
    let mut checkpoint = hi - lo;
    for iteration in 0..300 {
        let gx = g(x);
        if gx.abs() <= tol {
            return Ok(sign * x);
        }
        if gx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if hi - lo <= 2.0 * f64::EPSILON * hi {
            return Ok(sign * 0.5 * (lo + hi));
        }
        let stalled = iteration % 2 == 1 && hi - lo > 0.5 * checkpoint;
        if iteration % 2 == 1 {
            checkpoint = hi - lo;
        }
        let slope = 1.0 + lambda * ddpsi(x);
        let newton = x - gx / slope;
        x = if !stalled && slope.is_finite() && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    Err(WedError::NonConvergence {
        solver: Solver::Resolvent,
        iterations: 300,
        residual: g(x).abs(),
        history: vec![],
        best: None,
    })
}
