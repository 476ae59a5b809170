//! Direct minimization of the discrete functional for small convex
//! instances, used to cross-check the Euler–Lagrange solver.
//!
//! The gradient and Hessian are assembled from the functional itself (not
//! from the Euler–Lagrange rows) and the Newton system is solved after
//! symmetric Jacobi scaling, which absorbs the decaying time weights.

use nalgebra::{DMatrix, DVector};

use super::{wed_value, ProblemSpec, Stencil};
use crate::error::{Result, Solver, WedError};
use crate::grid::Field;
use crate::trajectory::Trajectory;

/// Largest number of unknowns accepted by the dense solver.
const MAX_UNKNOWNS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectOptions {
    /// Stop when the weight-normalized gradient is below `tol·(1 + ‖u₀‖)`.
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for DirectOptions {
    fn default() -> Self {
        DirectOptions { tol: 1e-11, max_iterations: 100 }
    }
}

struct Assembly<'a> {
    problem: &'a ProblemSpec,
    st: Stencil,
    forcing: Vec<Field>,
    weights: Vec<f64>,
    size: usize,
}

impl Assembly<'_> {
    fn kinetic(&self, n: usize) -> f64 {
        self.st.interval_weight(n) * self.st.eps / (self.st.dt * self.st.dt)
    }

    /// Euclidean gradient with respect to `u_1..u_N`, flattened.
    fn gradient(&self, u: &[Field]) -> DVector<f64> {
        let (n_steps, size) = (self.st.steps, self.size);
        let mut g = DVector::zeros(n_steps * size);
        for n in 1..=n_steps {
            let xi = self.problem.energy.phi1.subgradient(&u[n]);
            let omega = self.st.node_weight(n);
            let kn = self.kinetic(n);
            let kn1 = if n < n_steps { self.kinetic(n + 1) } else { 0.0 };
            for k in 0..size {
                let w = self.weights[k];
                let mut val = kn * w * (u[n].values()[k] - u[n - 1].values()[k]);
                if n < n_steps {
                    val -= kn1 * w * (u[n + 1].values()[k] - u[n].values()[k]);
                }
                val += omega * w * (xi.values()[k] - self.forcing[n].values()[k]);
                g[(n - 1) * size + k] = val;
            }
        }
        g
    }

    /// `‖∂I/∂u_n‖` divided by the node weights, root-sum-squared in the H-norm.
    fn normalized_gradient_norm(&self, g: &DVector<f64>) -> f64 {
        let mut total = 0.0;
        for n in 1..=self.st.steps {
            let omega = self.st.node_weight(n);
            for k in 0..self.size {
                let w = self.weights[k];
                let r = g[(n - 1) * self.size + k] / (omega * w);
                total += w * r * r;
            }
        }
        total.sqrt()
    }

    fn hessian(&self, u: &[Field]) -> DMatrix<f64> {
        let (n_steps, size) = (self.st.steps, self.size);
        let mut h = DMatrix::zeros(n_steps * size, n_steps * size);
        for n in 1..=n_steps {
            let base = (n - 1) * size;
            let local = self.problem.energy.phi1.hessian(&u[n]);
            let omega = self.st.node_weight(n);
            for i in 0..size {
                for j in 0..size {
                    h[(base + i, base + j)] += omega * self.weights[i] * local[(i, j)];
                }
            }
            // kinetic term of interval n couples u_{n−1} and u_n
            let kn = self.kinetic(n);
            for k in 0..size {
                let c = kn * self.weights[k];
                h[(base + k, base + k)] += c;
                if n > 1 {
                    let prev = base - size;
                    h[(prev + k, prev + k)] += c;
                    h[(prev + k, base + k)] -= c;
                    h[(base + k, prev + k)] -= c;
                }
            }
        }
        h
    }
}

/// Minimizes the discrete functional with `u_0 = u₀` by Newton's method with
/// an Armijo line search. Requires `φ₂ = 0`.
pub fn minimize_wed_direct(
    problem: &ProblemSpec,
    eps: f64,
    v: &Trajectory,
    guess: &Trajectory,
    options: &DirectOptions,
) -> Result<Trajectory> {
    if !problem.energy.phi2.is_zero() {
        return Err(WedError::param("direct minimization needs a convex energy (phi2 = zero)"));
    }
    problem.check_trajectory("guess", guess)?;
    if !guess.same_time_grid(v) {
        return Err(WedError::shape("guess and v must share a time grid"));
    }
    let st = Stencil::new(eps, guess.horizon(), guess.steps())?;
    let size = problem.initial.len();
    if size * st.steps > MAX_UNKNOWNS {
        return Err(WedError::param(format!("direct minimization is limited to {MAX_UNKNOWNS} unknowns")));
    }
    let m = problem.grid.node_count();
    let weights: Vec<f64> = (0..size).map(|k| problem.grid.weights()[k % m]).collect();
    let (forcing, _) = problem.forcing(v)?;
    let asm = Assembly { problem, st, forcing, weights, size };
    let tolerance = options.tol * (1.0 + problem.initial.norm());

    let mut u: Vec<Field> = guess.states().to_vec();
    u[0] = problem.initial.clone();
    let mut value = wed_value(problem, &st, 0.0, &asm.forcing, &u)?;
    let mut grad = asm.gradient(&u);
    let mut gnorm = asm.normalized_gradient_norm(&grad);

    for iteration in 0..options.max_iterations {
        if gnorm <= tolerance {
            return Trajectory::new(guess.horizon(), u);
        }
        let h = asm.hessian(&u);
        let scale = DVector::from_iterator(h.nrows(), h.diagonal().iter().map(|d| 1.0 / d.abs().max(f64::MIN_POSITIVE).sqrt()));
        let scaled = DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| scale[i] * h[(i, j)] * scale[j]);
        let rhs = -grad.component_mul(&scale);
        let y = match scaled.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => scaled.lu().solve(&rhs).ok_or(WedError::LineSearch { solver: Solver::DirectMinimizer, iteration })?,
        };
        let step = y.component_mul(&scale);
        let slope = grad.dot(&step);

        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<Field> = u
                .iter()
                .enumerate()
                .map(|(n, s)| {
                    if n == 0 {
                        return s.clone();
                    }
                    let mut t = s.clone();
                    for (k, x) in t.values_mut().iter_mut().enumerate() {
                        *x += alpha * step[(n - 1) * size + k];
                    }
                    t
                })
                .collect();
            let tv = wed_value(problem, &st, 0.0, &asm.forcing, &trial)?;
            let tg = asm.gradient(&trial);
            let tgn = asm.normalized_gradient_norm(&tg);
            let armijo = tv <= value + 1e-4 * alpha * slope;
            // near the minimum the value is flat to rounding; fall back on the gradient
            let flat = (tv - value).abs() <= 1e-13 * value.abs().max(1e-300) && tgn < gnorm;
            if tv.is_finite() && (armijo || flat) {
                u = trial;
                value = tv;
                grad = tg;
                gnorm = tgn;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(WedError::LineSearch { solver: Solver::DirectMinimizer, iteration });
        }
    }
    if gnorm <= tolerance {
        return Trajectory::new(guess.horizon(), u);
    }
    Err(WedError::NonConvergence {
        solver: Solver::DirectMinimizer,
        iterations: options.max_iterations,
        residual: gnorm,
        history: vec![],
        best: Some(Box::new(Trajectory::from_parts_unchecked(guess.horizon(), u))),
    })
}
