//! The map `S: v ↦ argmin I_{ε,v}` and the damped Picard iteration for its
//! fixed points, plus a decreasing-`λ` schedule for nonconvex energies.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::energy::perturbation_gradient;
use crate::error::{Result, Solver, WedError};
use crate::trajectory::Trajectory;
use crate::wed::{el_residual, residual_norm, solve_bvp, BvpOptions, ProblemSpec, SolveReport, SubgradientRecord};

/// Smallest damping the iteration will fall back to.
const MIN_THETA: f64 = 1.0 / 16.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WedConfig {
    pub eps: f64,
    /// Envelope parameter; `None` means `min(0.1, ε)` when `φ₂ ≠ 0` and `0` otherwise.
    pub lambda: Option<f64>,
    pub steps: usize,
    pub theta: f64,
    pub tol_fp: f64,
    pub max_fp_iterations: usize,
    pub tol_bvp: f64,
    pub max_newton_iterations: usize,
    /// Record wall-clock time per iteration (makes histories nondeterministic).
    pub record_wall_time: bool,
}

impl Default for WedConfig {
    fn default() -> Self {
        WedConfig {
            eps: 0.1,
            lambda: None,
            steps: 64,
            theta: 1.0,
            tol_fp: 1e-10,
            max_fp_iterations: 200,
            tol_bvp: 1e-9,
            max_newton_iterations: 50,
            record_wall_time: false,
        }
    }
}

impl WedConfig {
    pub fn new(eps: f64, steps: usize) -> Self {
        WedConfig { eps, steps, ..Default::default() }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn lambda_for(&self, problem: &ProblemSpec) -> f64 {
        match self.lambda {
            Some(l) => l,
            None if problem.energy.phi2.is_zero() => 0.0,
            None => self.eps.min(0.1),
        }
    }

    pub fn bvp_options(&self) -> BvpOptions {
        BvpOptions { tol: self.tol_bvp, max_iterations: self.max_newton_iterations, ..Default::default() }
    }

    pub fn validate(&self, problem: &ProblemSpec) -> Result<()> {
        let bad = |msg: String| Err(WedError::param(msg));
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return bad(format!("damping theta must lie in (0, 1], got {}", self.theta));
        }
        if !(self.tol_fp > 0.0 && self.tol_bvp > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.steps < 2 {
            return bad("need at least 2 time steps".into());
        }
        let dt = problem.horizon / self.steps as f64;
        if dt >= 2.0 * self.eps {
            return bad(format!("time step {dt:.3e} must be below 2·eps = {:.3e}; increase steps", 2.0 * self.eps));
        }
        let lambda = self.lambda_for(problem);
        if !(lambda.is_finite() && lambda >= 0.0) {
            return bad(format!("lambda must be nonnegative, got {lambda}"));
        }
        if lambda == 0.0 && !problem.energy.phi2.is_zero() {
            return bad("lambda = 0 is only allowed when phi2 is the zero potential".into());
        }
        Ok(())
    }
}

/// One application of `S`: the Euler–Lagrange solve with forcing frozen along `v`,
/// started from `guess` (or from `v`).
pub fn apply_s(
    problem: &ProblemSpec,
    config: &WedConfig,
    v: &Trajectory,
    guess: Option<&Trajectory>,
) -> Result<(Trajectory, SubgradientRecord, SolveReport)> {
    config.validate(problem)?;
    solve_bvp(problem, config.eps, config.lambda_for(problem), v, guess.unwrap_or(v), &config.bvp_options())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `‖S(v^k) − v^k‖` in the dt-weighted `ℓ²(H)` norm.
    pub update_norm: f64,
    pub bvp_residual: f64,
    pub newton_steps: usize,
    pub theta: f64,
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FixedPointOutcome {
    pub u: Trajectory,
    pub record: SubgradientRecord,
    pub last_solve: SolveReport,
    pub history: Vec<IterationRecord>,
    /// Euler–Lagrange residual with the forcing evaluated along `u` itself.
    pub self_consistent_residual: f64,
    pub lambda: f64,
}

impl FixedPointOutcome {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    pub fn total_newton_steps(&self) -> usize {
        self.history.iter().map(|h| h.newton_steps).sum()
    }
}

/// Damped Picard iteration `v ← (1−θ)v + θS(v)` from `initial` (default `v ≡ u₀`).
///
/// Stops when `‖S(v) − v‖ ≤ tol_fp(1 + ‖v‖)` and the self-consistent
/// residual is at most `10·tol_bvp(1 + ‖u₀‖)`; returns `u = S(v)`.
pub fn fixed_point_solve(problem: &ProblemSpec, config: &WedConfig, initial: Option<&Trajectory>) -> Result<FixedPointOutcome> {
    config.validate(problem)?;
    let lambda = config.lambda_for(problem);
    let mut v = match initial {
        Some(tr) => {
            problem.check_trajectory("initial iterate", tr)?;
            if tr.steps() != config.steps {
                return Err(WedError::shape(format!("initial iterate has {} steps, config asks for {}", tr.steps(), config.steps)));
            }
            tr.clone()
        }
        None => problem.constant_trajectory(config.steps)?,
    };
    let u0_norm = problem.initial.norm();
    let limit = 1e6 * (1.0 + u0_norm);
    let self_tol = 10.0 * config.tol_bvp * (1.0 + u0_norm);

    let start = Instant::now();
    let mut theta = config.theta;
    let mut increases = 0;
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut guess = v.clone();

    for iteration in 1..=config.max_fp_iterations {
        let (u, record, report) = match solve_bvp(problem, config.eps, lambda, &v, &guess, &config.bvp_options()) {
            Ok(out) => out,
            Err(e) => return Err(attach_history(e, &history)),
        };
        let update = u.l2_distance_squared(&v).sqrt();
        let u_norm = u.l2_norm();
        history.push(IterationRecord {
            iteration,
            update_norm: update,
            bvp_residual: report.residual,
            newton_steps: report.iterations,
            theta,
            wall_time: config.record_wall_time.then(|| start.elapsed().as_secs_f64()),
        });
        if !u_norm.is_finite() || u_norm > limit {
            return Err(WedError::Divergence { iteration, norm: u_norm, limit, history: update_history(&history) });
        }

        if update <= config.tol_fp * (1.0 + v.l2_norm()) {
            let self_residual = residual_norm(&el_residual(problem, config.eps, lambda, &u, &u)?);
            if self_residual <= self_tol {
                return Ok(FixedPointOutcome {
                    u,
                    record,
                    last_solve: report,
                    history,
                    self_consistent_residual: self_residual,
                    lambda,
                });
            }
        }

        if let [.., a, b] = history.as_slice() {
            if b.update_norm > a.update_norm {
                increases += 1;
                if increases >= 2 {
                    theta = (theta * 0.5).max(MIN_THETA);
                    increases = 0;
                }
            } else {
                increases = 0;
            }
        }

        let mut next = Vec::with_capacity(v.steps() + 1);
        for (a, b) in v.states().iter().zip(u.states()) {
            let mut s = a.scaled(1.0 - theta);
            s.axpy(theta, b);
            next.push(s);
        }
        v = Trajectory::new(v.horizon(), next)?;
        guess = u;
    }

    let last = history.last().map_or(f64::NAN, |h| h.update_norm);
    Err(WedError::NonConvergence {
        solver: Solver::FixedPoint,
        iterations: config.max_fp_iterations,
        residual: last,
        history: update_history(&history),
        best: Some(Box::new(guess)),
    })
}

fn update_history(history: &[IterationRecord]) -> Vec<f64> {
    history.iter().map(|h| h.update_norm).collect()
}

fn attach_history(err: WedError, history: &[IterationRecord]) -> WedError {
    match err {
        WedError::NonConvergence { solver, iterations, residual, best, .. } if !history.is_empty() => WedError::NonConvergence {
            solver,
            iterations,
            residual,
            history: update_history(history),
            best,
        },
        other => other,
    }
}

#[derive(Debug, Clone)]
pub struct LambdaStage {
    pub lambda: f64,
    pub outcome: FixedPointOutcome,
    /// Sup-in-time distance to the previous stage's solution.
    pub cauchy_difference: Option<f64>,
    /// `Σ_n dt (φ₂(u_n) + ‖η_n‖²)`.
    pub envelope_monitor: f64,
}

/// Runs the fixed-point solve for each `λ` in a strictly decreasing list,
/// warm-starting every stage from the previous solution.
pub fn lambda_schedule_solve(problem: &ProblemSpec, config: &WedConfig, lambdas: &[f64]) -> Result<Vec<LambdaStage>> {
    if lambdas.is_empty() || lambdas.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(WedError::param("lambda schedule must be nonempty and positive"));
    }
    if lambdas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(WedError::param("lambda schedule must be strictly decreasing"));
    }
    let mut stages: Vec<LambdaStage> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let cfg = config.clone().with_lambda(lambda);
        let warm = stages.last().map(|s| &s.outcome.u);
        let outcome = fixed_point_solve(problem, &cfg, warm)?;
        let cauchy_difference = stages.last().map(|s| s.outcome.u.sup_distance(&outcome.u));
        let dt = outcome.u.dt();
        let mut envelope_monitor = 0.0;
        for n in 1..=outcome.u.steps() {
            let state = outcome.u.state(n);
            let eta = perturbation_gradient(&problem.energy.phi2, lambda, state)?;
            envelope_monitor += dt * (problem.energy.phi2.eval(state) + eta.dot(&eta));
        }
        stages.push(LambdaStage { lambda, outcome, cauchy_difference, envelope_monitor });
    }
    Ok(stages)
}
