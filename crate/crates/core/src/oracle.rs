//! Independent references: semi-implicit Euler for the gradient flow, the
//! closed-form scalar Euler–Lagrange solution, and a brute-force proximal point.

use crate::energy::perturbation_gradient;
use crate::error::{Result, WedError};
use crate::grid::Field;
use crate::trajectory::Trajectory;
use crate::wed::{ProblemSpec, SubgradientRecord};

/// `u_{n+1} = J^{φ₁}_{dt}(u_n + dt(f(u_n) + η(u_n)))` on `steps` uniform steps.
///
/// The returned record holds `ξ_{n+1} = (u_n + dt(f + η) − u_{n+1})/dt` (the
/// subgradient selected by the resolvent) and the explicit `η_n`.
pub fn implicit_euler(problem: &ProblemSpec, steps: usize, lambda: f64) -> Result<(Trajectory, SubgradientRecord)> {
    if steps < 2 {
        return Err(WedError::param("need at least 2 time steps"));
    }
    if !problem.energy.phi2.is_zero() && !(lambda > 0.0) {
        return Err(WedError::param("a nonzero phi2 needs a positive envelope parameter"));
    }
    let dt = problem.horizon / steps as f64;
    let phi1 = &problem.energy.phi1;
    let mut states = Vec::with_capacity(steps + 1);
    let mut xi = Vec::with_capacity(steps + 1);
    let mut eta = Vec::with_capacity(steps + 1);
    states.push(problem.initial.clone());
    xi.push(phi1.subgradient(&problem.initial));
    for n in 0..steps {
        let u = &states[n];
        let e = perturbation_gradient(&problem.energy.phi2, lambda, u)?;
        let mut w = problem.reaction.eval(u)?;
        w += &e;
        let w = {
            let mut x = u.clone();
            x.axpy(dt, &w);
            x
        };
        let next = if phi1.is_zero() { w.clone() } else { phi1.resolvent(dt, &w)? };
        xi.push((&w - &next).scaled(1.0 / dt));
        eta.push(e);
        states.push(next);
    }
    eta.push(perturbation_gradient(&problem.energy.phi2, lambda, &states[steps])?);
    Ok((Trajectory::new(problem.horizon, states)?, SubgradientRecord { xi, eta }))
}

/// Restricts a fine trajectory to every `factor`-th node.
pub fn restrict(fine: &Trajectory, factor: usize) -> Result<Trajectory> {
    if factor == 0 || !fine.steps().is_multiple_of(factor) {
        return Err(WedError::shape(format!("{} steps are not divisible by {factor}", fine.steps())));
    }
    let states: Vec<Field> = fine.states().iter().step_by(factor).cloned().collect();
    Trajectory::new(fine.horizon(), states)
}

/// Solution of `−εu″ + u′ + (1−a)u = 0`, `u(0) = u₀`, `u′(T) = 0`.
///
/// `u = A e^{r₋t} + B e^{r₊(t−T)}` with `r± = (1 ± √(1+4ε(1−a)))/(2ε)`; the
/// growing mode is anchored at `T` so nothing overflows for small `ε`.
pub fn exact_scalar_wed(eps: f64, a: f64, u0: f64, horizon: f64, t: f64) -> f64 {
    let (coef_a, coef_b, r_minus, r_plus) = scalar_wed_coefficients(eps, a, u0, horizon);
    coef_a * (r_minus * t).exp() + coef_b * (r_plus * (t - horizon)).exp()
}

pub(crate) fn scalar_wed_coefficients(eps: f64, a: f64, u0: f64, horizon: f64) -> (f64, f64, f64, f64) {
    let c = 1.0 - a;
    let root = (1.0 + 4.0 * eps * c).sqrt();
    let r_plus = (1.0 + root) / (2.0 * eps);
    // written to avoid cancellation: (1 − √(1+4εc))/(2ε) = −2c/(1 + √(1+4εc))
    let r_minus = -2.0 * c / (1.0 + root);
    // A + B e^{−r₊T} = u₀,  A r₋ e^{r₋T} + B r₊ = 0
    let decay = (-r_plus * horizon).exp();
    let tail = r_minus * (r_minus * horizon).exp();
    let coef_a = u0 / (1.0 - decay * tail / r_plus);
    let coef_b = -coef_a * tail / r_plus;
    (coef_a, coef_b, r_minus, r_plus)
}

/// Minimizes `(w − v)²/(2λ) + φ(v)` over `[lo, hi]` by a dense scan followed
/// by golden-section refinement.
pub fn brute_force_prox(phi: impl Fn(f64) -> f64, lambda: f64, w: f64, lo: f64, hi: f64, points: usize) -> f64 {
    let objective = |v: f64| (w - v).powi(2) / (2.0 * lambda) + phi(v);
    let points = points.max(3);
    let h = (hi - lo) / (points - 1) as f64;
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for i in 0..points {
        let val = objective(lo + h * i as f64);
        if val < best_val {
            best_val = val;
            best = i;
        }
    }
    let (mut a, mut b) = (lo + h * best.saturating_sub(1) as f64, lo + h * (best + 1).min(points - 1) as f64);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (objective(c), objective(d));
    for _ in 0..200 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = objective(d);
        }
        if b - a < 1e-15 * (1.0 + a.abs()) {
            break;
        }
    }
    0.5 * (a + b)
}
