//! Newton's method for the Euler–Lagrange system, with block-tridiagonal
//! elimination in time and a residual-norm line search.

use nalgebra::{DMatrix, DVector};

use super::{residual_norm, residual_rows, ProblemSpec, SolveReport, Stencil, SubgradientRecord};
use crate::energy::perturbation_jacobian;
use crate::error::{Result, Solver, WedError};
use crate::grid::Field;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvpOptions {
    /// Target is `tol·(1 + ‖u₀‖)` on the root-sum-square residual.
    pub tol: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for BvpOptions {
    fn default() -> Self {
        BvpOptions { tol: 1e-9, max_iterations: 50, max_halvings: 30 }
    }
}

/// Solves `−εu″ + u′ + ∂φ₁(u) − η(u) = f(v)`, `u(0) = u₀`, `u′(T) = 0` on the
/// time grid of `guess`, where `η` is the envelope gradient of `φ₂` (`λ > 0`)
/// or its exact gradient (`λ = 0`).
pub fn solve_bvp(
    problem: &ProblemSpec,
    eps: f64,
    lambda: f64,
    v: &Trajectory,
    guess: &Trajectory,
    options: &BvpOptions,
) -> Result<(Trajectory, SubgradientRecord, SolveReport)> {
    problem.check_trajectory("guess", guess)?;
    problem.check_trajectory("v", v)?;
    if !guess.same_time_grid(v) {
        return Err(WedError::shape("guess and v must share a time grid"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(WedError::param(format!("envelope parameter must be nonnegative, got {lambda}")));
    }
    let st = Stencil::new(eps, guess.horizon(), guess.steps())?;
    let (forcing, clamped_nodes) = problem.forcing(v)?;
    let tolerance = options.tol * (1.0 + problem.initial.norm());

    let mut u: Vec<Field> = guess.states().to_vec();
    u[0] = problem.initial.clone();
    let mut rows = residual_rows(problem, &st, lambda, &forcing, &u)?;
    let mut rnorm = residual_norm(&rows);
    let mut history = vec![rnorm];
    let mut iterations = 0;

    while rnorm > tolerance {
        if iterations == options.max_iterations {
            return Err(non_convergence(guess, u, iterations, rnorm, history));
        }
        iterations += 1;
        let step = newton_step(problem, &st, lambda, &u, &rows)?;

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let trial: Vec<Field> = u
                .iter()
                .zip(&step)
                .map(|(a, d)| {
                    let mut t = a.clone();
                    t.axpy(alpha, d);
                    t
                })
                .collect();
            if let Ok(tr) = residual_rows(problem, &st, lambda, &forcing, &trial) {
                let tn = residual_norm(&tr);
                if tn.is_finite() && tn <= (1.0 - 1e-4 * alpha) * rnorm {
                    accepted = Some((trial, tr, tn));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, tr, tn)) => {
                u = trial;
                rows = tr;
                rnorm = tn;
                history.push(rnorm);
            }
            None => return Err(non_convergence(guess, u, iterations, rnorm, history)),
        }
    }

    let u = Trajectory::new(guess.horizon(), u)?;
    let record = SubgradientRecord::compute(problem, lambda, &u)?;
    let report = SolveReport { iterations, residual: rnorm, tolerance, residual_history: history, clamped_nodes };
    Ok((u, record, report))
}

fn non_convergence(guess: &Trajectory, u: Vec<Field>, iterations: usize, residual: f64, history: Vec<f64>) -> WedError {
    let best = u.iter().all(Field::is_finite).then(|| Box::new(Trajectory::from_parts_unchecked(guess.horizon(), u)));
    WedError::NonConvergence { solver: Solver::Newton, iterations, residual, history, best }
}

/// Solves `J δ = −R` for rows `1..=N` (row 0 is enforced exactly).
///
/// Off-diagonal blocks are multiples of the identity, so elimination only
/// needs one dense factorization per time step.
fn newton_step(problem: &ProblemSpec, st: &Stencil, lambda: f64, u: &[Field], rows: &[Field]) -> Result<Vec<Field>> {
    let n_steps = st.steps;
    let size = u[0].len();
    let singular = || WedError::param("singular Newton block; the energy may be too nonconvex for this time step");

    let block = |n: usize| -> Result<DMatrix<f64>> {
        let mut d = problem.energy.phi1.hessian(&u[n]);
        if !problem.energy.phi2.is_zero() {
            d -= perturbation_jacobian(&problem.energy.phi2, lambda, &u[n])?;
        }
        let shift = if n < n_steps { st.diagonal() } else { st.terminal() };
        for k in 0..size {
            d[(k, k)] += shift;
        }
        Ok(d)
    };
    let lower = |n: usize| if n < n_steps { st.lower() } else { -st.terminal() };
    let upper = st.upper();

    // forward sweep: D'_n = D_n − l_n·u·D'_{n−1}⁻¹, r'_n = r_n − l_n·D'_{n−1}⁻¹ r'_{n−1}
    let mut factors = Vec::with_capacity(n_steps);
    let mut reduced: Vec<DVector<f64>> = Vec::with_capacity(n_steps);
    for n in 1..=n_steps {
        let mut d = block(n)?;
        let mut r = -DVector::from_column_slice(rows[n].values());
        if n > 1 {
            let prev: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn> = &factors[n - 2];
            let l = lower(n);
            let inv_upper = prev.try_inverse().ok_or_else(singular)?;
            d -= inv_upper * (l * upper);
            let carried = prev.solve(&reduced[n - 2]).ok_or_else(singular)?;
            r -= carried * l;
        }
        factors.push(d.lu());
        reduced.push(r);
    }

    let mut step = vec![DVector::zeros(size); n_steps + 1];
    for n in (1..=n_steps).rev() {
        let mut r = reduced[n - 1].clone();
        if n < n_steps {
            r -= &step[n + 1] * upper;
        }
        step[n] = factors[n - 1].solve(&r).ok_or_else(singular)?;
    }

    let grid = u[0].grid();
    let species = u[0].species();
    step.into_iter()
        .map(|d| Field::from_values(grid, species, d.as_slice().to_vec()).map_err(|_| singular()))
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::energy::{ConvexPotential, EnergyPair};
    use crate::grid::SpatialGrid;
    use crate::reaction::{Kinetics, ReactionModel};
    use crate::wed::el_residual;

    fn scalar(u0: f64, reaction: ReactionModel) -> ProblemSpec {
        let g = Arc::new(SpatialGrid::point());
        let energy = EnergyPair::convex(ConvexPotential::QPower { q: 2.0 }, &g, 1).unwrap();
        ProblemSpec::new(energy, reaction, Field::constant(&g, 1, u0), 1.0).unwrap()
    }

    #[test]
    fn stationary_forcing_gives_constant() {
        let c = 0.7;
        let p = scalar(c, ReactionModel::new(Kinetics::Affine { matrix: vec![vec![0.0]], offset: vec![c] }));
        let guess = p.constant_trajectory(32).unwrap();
        let (u, _, report) = solve_bvp(&p, 0.1, 0.0, &guess, &guess, &BvpOptions::default()).unwrap();
        assert_eq!(report.iterations, 0);
        assert!(u.states().iter().all(|s| s.values()[0] == c));
    }

    #[test]
    fn linear_scalar_matches_three_term_recurrence() {
        // Solve the scalar linear recurrence independently with a dense solve.
        let p = scalar(1.0, ReactionModel::zero());
        let (eps, steps) = (0.1, 40);
        let guess = p.constant_trajectory(steps).unwrap();
        let (u, _, _) = solve_bvp(&p, eps, 0.0, &guess, &guess, &BvpOptions::default()).unwrap();

        let dt = 1.0 / steps as f64;
        let mut a = DMatrix::<f64>::zeros(steps, steps);
        let mut b = DVector::<f64>::zeros(steps);
        for row in 0..steps {
            let n = row + 1;
            if n < steps {
                a[(row, row)] = 2.0 * eps / (dt * dt) + 1.0;
                a[(row, row + 1)] = -eps / (dt * dt) + 0.5 / dt;
                if row > 0 {
                    a[(row, row - 1)] = -eps / (dt * dt) - 0.5 / dt;
                } else {
                    b[row] = eps / (dt * dt) + 0.5 / dt;
                }
            } else {
                a[(row, row)] = 2.0 * eps / (dt * dt) + 1.0 / dt + 1.0;
                a[(row, row - 1)] = -(2.0 * eps / (dt * dt) + 1.0 / dt);
            }
        }
        let x = a.lu().solve(&b).unwrap();
        for n in 1..=steps {
            assert!((u.state(n).values()[0] - x[n - 1]).abs() < 1e-12);
        }
        let rows = el_residual(&p, eps, 0.0, &guess, &u).unwrap();
        assert!(super::residual_norm(&rows) < 1e-9);
    }

    #[test]
    fn prey_predator_converges_quickly() {
        let g = Arc::new(SpatialGrid::interval(1.0, 32).unwrap());
        let energy = EnergyPair::convex(ConvexPotential::QuadraticDirichlet { d1: 0.1, d2: 0.1 }, &g, 2).unwrap();
        let reaction = ReactionModel::new(Kinetics::prey_predator_default()).with_mass_shift(1.0);
        let init = Field::from_fn(&g, 2, |s, x| {
            if s == 0 {
                0.5 + 0.25 * (std::f64::consts::PI * x[0]).cos()
            } else {
                0.3 + 0.1 * (2.0 * std::f64::consts::PI * x[0]).cos()
            }
        });
        let p = ProblemSpec::new(energy, reaction, init, 1.0).unwrap();
        let v = p.constant_trajectory(64).unwrap();
        let (_, _, report) = solve_bvp(&p, 0.05, 0.0, &v, &v, &BvpOptions::default()).unwrap();
        assert!(report.iterations <= 25);
        assert!(report.residual <= report.tolerance);
    }

    #[test]
    fn nonconvex_envelope_solve_converges() {
        let g = Arc::new(SpatialGrid::point());
        let energy = EnergyPair::with_defaults(
            ConvexPotential::PDirichletMPower { d1: 1.0, d2: 1.0, p: 2.0, m: 4.0 },
            ConvexPotential::QPower { q: 2.0 },
            &g,
            1,
        )
        .unwrap();
        let p = ProblemSpec::new(energy, ReactionModel::zero(), Field::constant(&g, 1, 0.5), 1.0).unwrap();
        let guess = p.constant_trajectory(64).unwrap();
        for lambda in [0.0, 0.05] {
            let (u, rec, report) = solve_bvp(&p, 0.1, lambda, &guess, &guess, &BvpOptions::default()).unwrap();
            assert!(report.residual <= report.tolerance);
            assert_eq!(rec.xi.len(), u.steps() + 1);
        }
    }
}
