//! The discrete weighted energy-dissipation functional and its
//! Euler–Lagrange system.
//!
//! On `t_n = n·dt` the functional is
//!
//! ```text
//!   I(u) = Σ_{n=1..N} dt(1−a)ρ^{n−1} (ε/2)|(u_n − u_{n−1})/dt|²
//!        + Σ_{n=0..N} dt c_n ρ^n (φ(u_n) − ⟨f(v_n), u_n⟩)
//! ```
//!
//! with `a = dt/(2ε)`, `ρ = (1−a)/(1+a)` (a Padé approximant of `e^{−dt/ε}`)
//! and trapezoid end weights `c_0 = c_N = ½`. Dividing `∂I/∂u_n` by
//! `dt c_n ρ^n` gives the weight-free rows
//!
//! ```text
//!   n < N:  −ε(u_{n+1} − 2u_n + u_{n−1})/dt² + (u_{n+1} − u_{n−1})/(2dt) + ξ_n − η_n − f(v_n)
//!   n = N:  (2ε/dt² + 1/dt)(u_N − u_{N−1}) + ξ_N − η_N − f(v_N)
//! ```
//!
//! which is a second-order accurate discretization of
//! `−εu″ + u′ + ξ − η = f(v)`, `u(0) = u₀`, `u′(T) = 0`. The scheme needs
//! `dt < 2ε`.

mod direct;
mod newton;

pub use direct::{minimize_wed_direct, DirectOptions};
pub use newton::{solve_bvp, BvpOptions};

use std::sync::Arc;

use crate::energy::{perturbation_gradient, EnergyPair};
use crate::error::{Result, WedError};
use crate::grid::{Field, SpatialGrid};
use crate::reaction::ReactionModel;
use crate::trajectory::Trajectory;

/// Everything that defines an instance apart from `ε`, `λ` and the time grid.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub grid: Arc<SpatialGrid>,
    pub energy: EnergyPair,
    pub reaction: ReactionModel,
    pub initial: Field,
    pub horizon: f64,
}

impl ProblemSpec {
    pub fn new(energy: EnergyPair, reaction: ReactionModel, initial: Field, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(WedError::param(format!("horizon must be positive, got {horizon}")));
        }
        if !initial.is_finite() {
            return Err(WedError::param("initial datum must be finite"));
        }
        reaction.validate(initial.species())?;
        energy.validate()?;
        if !energy.phi1.eval(&initial).is_finite() {
            return Err(WedError::param("initial datum has infinite energy"));
        }
        Ok(ProblemSpec { grid: Arc::clone(initial.grid()), energy, reaction, initial, horizon })
    }

    pub fn species(&self) -> usize {
        self.initial.species()
    }

    /// Constant trajectory `u_n ≡ u₀` with `steps` steps.
    pub fn constant_trajectory(&self, steps: usize) -> Result<Trajectory> {
        Trajectory::constant(self.horizon, steps, &self.initial)
    }

    /// `f(v_n)` for every time node, plus the total number of clamped node evaluations.
    pub fn forcing(&self, v: &Trajectory) -> Result<(Vec<Field>, usize)> {
        let mut clamps = 0;
        let forcing = v
            .states()
            .iter()
            .map(|state| {
                let (f, c) = self.reaction.eval_counting(state)?;
                clamps += c;
                Ok(f)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((forcing, clamps))
    }

    pub(crate) fn check_trajectory(&self, name: &str, tr: &Trajectory) -> Result<()> {
        if !tr.state(0).compatible(&self.initial) {
            return Err(WedError::shape(format!("{name} does not live on the problem grid")));
        }
        if (tr.horizon() - self.horizon).abs() > 1e-12 * self.horizon {
            return Err(WedError::shape(format!("{name} horizon {} differs from problem horizon {}", tr.horizon(), self.horizon)));
        }
        Ok(())
    }
}

/// Time-grid coefficients shared by the functional and its Euler–Lagrange rows.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stencil {
    pub eps: f64,
    pub dt: f64,
    pub steps: usize,
}

impl Stencil {
    pub fn new(eps: f64, horizon: f64, steps: usize) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(WedError::param(format!("epsilon must be positive, got {eps}")));
        }
        let dt = horizon / steps as f64;
        if dt >= 2.0 * eps {
            return Err(WedError::param(format!(
                "time step {dt:.3e} must be below 2·epsilon = {:.3e}; increase the step count",
                2.0 * eps
            )));
        }
        Ok(Stencil { eps, dt, steps })
    }

    pub fn half_ratio(&self) -> f64 {
        self.dt / (2.0 * self.eps)
    }

    /// `ρ`, the per-step decay factor of the weight.
    pub fn decay(&self) -> f64 {
        let a = self.half_ratio();
        (1.0 - a) / (1.0 + a)
    }

    /// Coefficient of `u_{n−1}` in an interior row.
    pub fn lower(&self) -> f64 {
        -(self.eps / (self.dt * self.dt) + 0.5 / self.dt)
    }

    /// Coefficient of `u_{n+1}` in an interior row.
    pub fn upper(&self) -> f64 {
        -(self.eps / (self.dt * self.dt) - 0.5 / self.dt)
    }

    /// Coefficient of `u_N − u_{N−1}` in the terminal row.
    pub fn terminal(&self) -> f64 {
        2.0 * self.eps / (self.dt * self.dt) + 1.0 / self.dt
    }

    pub fn diagonal(&self) -> f64 {
        2.0 * self.eps / (self.dt * self.dt)
    }

    /// Quadrature weight `dt·c_n·ρⁿ` of the potential term at node `n`.
    pub fn node_weight(&self, n: usize) -> f64 {
        let c = if n == 0 || n == self.steps { 0.5 } else { 1.0 };
        self.dt * c * self.decay().powi(n as i32)
    }

    /// Weight `dt(1−a)ρ^{n−1}` of the kinetic term on interval `n`.
    pub fn interval_weight(&self, n: usize) -> f64 {
        self.dt * (1.0 - self.half_ratio()) * self.decay().powi(n as i32 - 1)
    }
}

/// `ξ_n ∈ ∂φ₁(u_n)` and the gradients `η_n` standing in for `∂φ₂(u_n)`.
#[derive(Debug, Clone)]
pub struct SubgradientRecord {
    pub xi: Vec<Field>,
    pub eta: Vec<Field>,
}

impl SubgradientRecord {
    pub fn compute(problem: &ProblemSpec, lambda: f64, u: &Trajectory) -> Result<Self> {
        let xi = u.states().iter().map(|s| problem.energy.phi1.subgradient(s)).collect();
        let eta = u
            .states()
            .iter()
            .map(|s| perturbation_gradient(&problem.energy.phi2, lambda, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(SubgradientRecord { xi, eta })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub tolerance: f64,
    pub residual_history: Vec<f64>,
    /// Node evaluations of the reaction where an input clamp fired.
    pub clamped_nodes: usize,
}

/// Euler–Lagrange rows `0..=N`; row 0 is `u_0 − u₀`.
pub fn el_residual(problem: &ProblemSpec, eps: f64, lambda: f64, v: &Trajectory, u: &Trajectory) -> Result<Vec<Field>> {
    problem.check_trajectory("u", u)?;
    problem.check_trajectory("v", v)?;
    if !u.same_time_grid(v) {
        return Err(WedError::shape("u and v must share a time grid"));
    }
    let stencil = Stencil::new(eps, u.horizon(), u.steps())?;
    let (forcing, _) = problem.forcing(v)?;
    residual_rows(problem, &stencil, lambda, &forcing, u.states())
}

pub(crate) fn residual_rows(
    problem: &ProblemSpec,
    st: &Stencil,
    lambda: f64,
    forcing: &[Field],
    u: &[Field],
) -> Result<Vec<Field>> {
    let n_steps = st.steps;
    let mut rows = Vec::with_capacity(n_steps + 1);
    rows.push(&u[0] - &problem.initial);
    for n in 1..=n_steps {
        let mut r = problem.energy.phi1.subgradient(&u[n]);
        r -= &perturbation_gradient(&problem.energy.phi2, lambda, &u[n])?;
        r -= &forcing[n];
        if n < n_steps {
            r.axpy(st.lower(), &u[n - 1]);
            r.axpy(st.diagonal(), &u[n]);
            r.axpy(st.upper(), &u[n + 1]);
        } else {
            let c = st.terminal();
            r.axpy(c, &u[n]);
            r.axpy(-c, &u[n - 1]);
        }
        rows.push(r);
    }
    Ok(rows)
}

/// `√(Σ_n ‖R_n‖²)`, each row in the H-norm.
pub fn residual_norm(rows: &[Field]) -> f64 {
    rows.iter().map(|r| r.dot(r)).sum::<f64>().sqrt()
}

/// The discrete functional. `λ > 0` uses the Moreau–Yosida envelope of `φ₂`,
/// `λ = 0` the exact `φ₂`.
pub fn discrete_wed_value(problem: &ProblemSpec, eps: f64, lambda: f64, v: &Trajectory, u: &Trajectory) -> Result<f64> {
    problem.check_trajectory("u", u)?;
    if !u.same_time_grid(v) {
        return Err(WedError::shape("u and v must share a time grid"));
    }
    let st = Stencil::new(eps, u.horizon(), u.steps())?;
    let (forcing, _) = problem.forcing(v)?;
    wed_value(problem, &st, lambda, &forcing, u.states())
}

pub(crate) fn wed_value(problem: &ProblemSpec, st: &Stencil, lambda: f64, forcing: &[Field], u: &[Field]) -> Result<f64> {
    let mut total = 0.0;
    for n in 1..=st.steps {
        let d = &u[n] - &u[n - 1];
        total += st.interval_weight(n) * 0.5 * st.eps * d.dot(&d) / (st.dt * st.dt);
    }
    for n in 0..=st.steps {
        total += st.node_weight(n) * (pointwise_energy(problem, lambda, &u[n])? - forcing[n].dot(&u[n]));
    }
    Ok(total)
}

/// `φ₁(u) − φ₂(u)`, or with `φ₂` replaced by its envelope when `λ > 0`.
pub fn pointwise_energy(problem: &ProblemSpec, lambda: f64, u: &Field) -> Result<f64> {
    let phi2 = &problem.energy.phi2;
    let e2 = if phi2.is_zero() {
        0.0
    } else if lambda > 0.0 {
        phi2.moreau_envelope(lambda, u)?.value
    } else {
        phi2.eval(u)
    };
    Ok(problem.energy.phi1.eval(u) - e2)
}

/// `(u_N − u_{N−1})/dt`, the discrete terminal slope.
pub fn terminal_slope(u: &Trajectory) -> Field {
    u.derivative(u.steps())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::ConvexPotential;
    use crate::reaction::Kinetics;

    fn scalar_problem(u0: f64, kinetics: Kinetics) -> ProblemSpec {
        let g = Arc::new(SpatialGrid::point());
        let energy = EnergyPair::convex(ConvexPotential::QPower { q: 2.0 }, &g, 1).unwrap();
        ProblemSpec::new(energy, ReactionModel::new(kinetics), Field::constant(&g, 1, u0), 1.0).unwrap()
    }

    #[test]
    fn zero_energy_constant_path_has_zero_value() {
        let g = Arc::new(SpatialGrid::interval(1.0, 5).unwrap());
        let energy = EnergyPair::convex(ConvexPotential::QPower { q: 2.0 }, &g, 1).unwrap();
        let energy = EnergyPair::new_unchecked(ConvexPotential::Zero, ConvexPotential::Zero, energy.constants);
        let p = ProblemSpec { grid: Arc::clone(&g), energy, reaction: ReactionModel::zero(), initial: Field::constant(&g, 1, 0.3), horizon: 1.0 };
        let u = p.constant_trajectory(8).unwrap();
        assert_eq!(discrete_wed_value(&p, 0.5, 0.0, &u, &u).unwrap(), 0.0);
    }

    #[test]
    fn constant_path_matches_closed_integral() {
        // ½u₀² Σ dt c_n ρⁿ → ½u₀² ε(1 − e^{−T/ε}) with O(dt²) error
        let p = scalar_problem(1.3, Kinetics::Zero);
        let eps: f64 = 0.2;
        let exact = 0.5 * 1.69 * eps * (1.0 - (-1.0 / eps).exp());
        let mut errs = vec![];
        for steps in [64, 128] {
            let u = p.constant_trajectory(steps).unwrap();
            let val = discrete_wed_value(&p, eps, 0.0, &u, &u).unwrap();
            errs.push((val - exact).abs());
        }
        assert!(errs[0] < 1e-4 && errs[1] < errs[0] / 3.5, "{errs:?}");
    }

    #[test]
    fn independent_summation_small_instance() {
        let p = scalar_problem(0.4, Kinetics::Affine { matrix: vec![vec![0.5]], offset: vec![0.1] });
        let g = Arc::clone(&p.grid);
        let eps = 0.3;
        let (t, steps) = (1.0, 4);
        let us = [0.4, -0.2, 0.9, 0.3, 0.1];
        let vs = [0.7, 0.2, -0.5, 1.1, 0.6];
        let tr = |vals: &[f64]| Trajectory::new(t, vals.iter().map(|&x| Field::constant(&g, 1, x)).collect()).unwrap();
        let got = discrete_wed_value(&p, eps, 0.0, &tr(&vs), &tr(&us)).unwrap();

        let dt = t / steps as f64;
        let a = dt / (2.0 * eps);
        let rho = (1.0 - a) / (1.0 + a);
        let mut want = 0.0;
        for n in 1..=steps {
            let slope = (us[n] - us[n - 1]) / dt;
            want += dt * (1.0 - a) * rho.powi(n as i32 - 1) * eps / 2.0 * slope * slope;
        }
        for n in 0..=steps {
            let c = if n == 0 || n == steps { 0.5 } else { 1.0 };
            let f = 0.5 * vs[n] + 0.1;
            want += dt * c * rho.powi(n as i32) * (0.5 * us[n] * us[n] - f * us[n]);
        }
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
    }

    #[test]
    fn stationary_point_has_zero_residual() {
        let u0 = 0.8;
        let p = scalar_problem(u0, Kinetics::Affine { matrix: vec![vec![0.0]], offset: vec![u0] });
        let u = p.constant_trajectory(16).unwrap();
        let rows = el_residual(&p, 0.2, 0.0, &u, &u).unwrap();
        assert!(residual_norm(&rows) < 1e-12);
    }

    #[test]
    fn rows_are_scaled_gradient_of_functional() {
        let g = Arc::new(SpatialGrid::interval(1.0, 4).unwrap());
        let energy = EnergyPair::with_defaults(
            ConvexPotential::PDirichletMPower { d1: 0.3, d2: 0.5, p: 3.0, m: 4.0 },
            ConvexPotential::QPower { q: 2.0 },
            &g,
            2,
        )
        .unwrap();
        let reaction = ReactionModel::new(Kinetics::prey_predator_default());
        let init = Field::from_fn(&g, 2, |s, x| 0.5 + 0.2 * (x[0] + s as f64).cos());
        let p = ProblemSpec::new(energy, reaction, init.clone(), 0.5).unwrap();
        let steps = 5;
        let states: Vec<Field> = (0..=steps)
            .map(|n| if n == 0 { init.clone() } else { Field::from_fn(&g, 2, |s, x| 0.4 + 0.1 * n as f64 * (3.0 * x[0] - s as f64).sin()) })
            .collect();
        let u = Trajectory::new(0.5, states).unwrap();
        let v = u.resample(steps).unwrap();
        let (eps, lambda) = (0.2, 0.1);
        let rows = el_residual(&p, eps, lambda, &v, &u).unwrap();
        let st = Stencil::new(eps, 0.5, steps).unwrap();
        let w = g.weights().to_vec();
        let m = g.node_count();
        for n in 1..=steps {
            for k in 0..u.state(n).len() {
                let h = 1e-6;
                let bump = |sign: f64| {
                    let mut states = u.states().to_vec();
                    states[n].values_mut()[k] += sign * h;
                    discrete_wed_value(&p, eps, lambda, &v, &Trajectory::new(0.5, states).unwrap()).unwrap()
                };
                let fd = (bump(1.0) - bump(-1.0)) / (2.0 * h);
                let exact = st.node_weight(n) * w[k % m] * rows[n].values()[k];
                assert!((fd - exact).abs() <= 1e-6 * (1.0 + exact.abs()), "n={n} k={k}: {fd} vs {exact}");
            }
        }
    }

    #[test]
    fn coarse_steps_are_rejected() {
        let p = scalar_problem(1.0, Kinetics::Zero);
        let u = p.constant_trajectory(4).unwrap();
        assert!(el_residual(&p, 0.1, 0.0, &u, &u).is_err());
        assert!(el_residual(&p, 0.0, 0.0, &u, &u).is_err());
    }
}
