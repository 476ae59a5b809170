//! Causal-limit sweeps in `ε`, log-log rate fits, a-priori estimate
//! monitors and a discrete Gronwall bound.

use serde::Serialize;

use crate::error::{Result, WedError};
use crate::fixed_point::{fixed_point_solve, FixedPointOutcome, WedConfig};
use crate::trajectory::Trajectory;
use crate::wed::{ProblemSpec, SubgradientRecord};

/// Discrete `C([0,T];H)` distance: the largest H-norm gap over time nodes.
pub fn sup_error(u: &Trajectory, reference: &Trajectory) -> Result<f64> {
    if !u.same_time_grid(reference) {
        return Err(WedError::shape("trajectory and reference must share a time grid"));
    }
    Ok(u.sup_distance(reference))
}

/// Quantities the a-priori estimates bound uniformly in `ε`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorRecord {
    pub eps: f64,
    /// `ε² Σ dt‖u″‖²` over interior nodes.
    pub eps2_second_derivative: f64,
    /// `Σ dt‖u′‖²`.
    pub derivative: f64,
    /// `Σ dt‖ξ‖²`.
    pub subgradient: f64,
    /// `φ₁(u_N)`.
    pub terminal_energy: f64,
    /// `max_n ε‖u′_n‖²`.
    pub eps_sup_derivative: f64,
    /// `Σ dt φ₂(u_n)`.
    pub perturbation_energy: f64,
    /// `Σ dt‖η_n‖²`.
    pub perturbation_gradient: f64,
}

impl MonitorRecord {
    pub const COLUMNS: [&'static str; 7] = [
        "eps2_second_derivative",
        "derivative",
        "subgradient",
        "terminal_energy",
        "eps_sup_derivative",
        "perturbation_energy",
        "perturbation_gradient",
    ];

    pub fn compute(problem: &ProblemSpec, eps: f64, u: &Trajectory, record: &SubgradientRecord) -> Self {
        let dt = u.dt();
        let n_steps = u.steps();
        let mut second = 0.0;
        for n in 1..n_steps {
            let d = u.second_derivative(n);
            second += dt * d.dot(&d);
        }
        let mut derivative = 0.0;
        let mut sup_derivative: f64 = 0.0;
        for n in 1..=n_steps {
            let d = u.derivative(n);
            let sq = d.dot(&d);
            derivative += dt * sq;
            sup_derivative = sup_derivative.max(eps * sq);
        }
        let sum_sq = |fields: &[crate::grid::Field]| fields.iter().skip(1).map(|f| dt * f.dot(f)).sum::<f64>();
        let perturbation_energy = u.states().iter().skip(1).map(|s| dt * problem.energy.phi2.eval(s)).sum();
        MonitorRecord {
            eps,
            eps2_second_derivative: eps * eps * second,
            derivative,
            subgradient: sum_sq(&record.xi),
            terminal_energy: problem.energy.phi1.eval(u.final_state()),
            eps_sup_derivative: sup_derivative,
            perturbation_energy,
            perturbation_gradient: sum_sq(&record.eta),
        }
    }

    pub fn values(&self) -> [f64; 7] {
        [
            self.eps2_second_derivative,
            self.derivative,
            self.subgradient,
            self.terminal_energy,
            self.eps_sup_derivative,
            self.perturbation_energy,
            self.perturbation_gradient,
        ]
    }

    pub fn is_valid(&self) -> bool {
        self.values().iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// Checks `monitor(ε) ≤ factor·monitor(ε_max)` for every column; returns the
/// names of violated columns.
pub fn monitor_uniformity(records: &[MonitorRecord], factor: f64) -> Vec<&'static str> {
    let Some(first) = records.first() else {
        return vec![];
    };
    let base = first.values();
    let mut bad = Vec::new();
    for (j, name) in MonitorRecord::COLUMNS.iter().enumerate() {
        let tol = factor * base[j] + 1e-12;
        if records.iter().any(|r| !r.is_valid() || r.values()[j] > tol) {
            bad.push(*name);
        }
    }
    bad
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub eps: f64,
    /// `None` when the solve failed; the failure text is in `failure`.
    pub outcome: Option<FixedPointOutcome>,
    pub failure: Option<String>,
    pub error: Option<f64>,
    pub monitors: Option<MonitorRecord>,
}

/// Solves for each `ε` (strictly decreasing), warm-starting from the previous
/// solution, and measures the sup error against `reference`.
pub fn epsilon_sweep(problem: &ProblemSpec, template: &WedConfig, eps_list: &[f64], reference: Option<&Trajectory>) -> Result<Vec<SweepEntry>> {
    if eps_list.is_empty() || eps_list.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(WedError::param("epsilon list must be nonempty and positive"));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(WedError::param("epsilon list must be strictly decreasing"));
    }
    let mut entries = Vec::with_capacity(eps_list.len());
    let mut warm: Option<Trajectory> = None;
    for &eps in eps_list {
        let cfg = WedConfig { eps, ..template.clone() };
        entries.push(match fixed_point_solve(problem, &cfg, warm.as_ref()) {
            Ok(outcome) => {
                let error = reference.map(|r| sup_error(&outcome.u, r)).transpose()?;
                let monitors = MonitorRecord::compute(problem, eps, &outcome.u, &outcome.record);
                warm = Some(outcome.u.clone());
                SweepEntry { eps, outcome: Some(outcome), failure: None, error, monitors: Some(monitors) }
            }
            Err(e) if e.is_convergence_failure() => {
                SweepEntry { eps, outcome: None, failure: Some(e.to_string()), error: None, monitors: None }
            }
            Err(e) => return Err(e),
        });
    }
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateEstimate {
    pub eps: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the log-log fit.
    pub fit_residual: f64,
    /// Points excluded because their error was not positive.
    pub dropped: Vec<usize>,
    /// Every error was zero: the method is exact on this data.
    pub exact: bool,
}

/// Least-squares fit of `log(error) = slope·log(ε) + intercept`.
pub fn estimate_rate(eps: &[f64], errors: &[f64]) -> Result<RateEstimate> {
    if eps.len() != errors.len() {
        return Err(WedError::shape("epsilon and error lists differ in length"));
    }
    if eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) || errors.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(WedError::param("epsilons must be positive and errors nonnegative"));
    }
    if !errors.is_empty() && errors.iter().all(|e| *e == 0.0) {
        return Ok(RateEstimate {
            eps: eps.to_vec(),
            errors: errors.to_vec(),
            slope: f64::INFINITY,
            intercept: f64::NEG_INFINITY,
            fit_residual: 0.0,
            dropped: vec![],
            exact: true,
        });
    }
    let dropped: Vec<usize> = (0..errors.len()).filter(|&i| errors[i] <= 0.0).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        eps.iter().zip(errors).filter(|(_, e)| **e > 0.0).map(|(e, r)| (e.ln(), r.ln())).unzip();
    if xs.len() < 3 {
        return Err(WedError::param(format!("rate fit needs at least 3 positive points, got {}", xs.len())));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(WedError::param("rate fit needs distinct epsilons"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let fit_residual = (xs.iter().zip(&ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum::<f64>() / n).sqrt();
    Ok(RateEstimate { eps: eps.to_vec(), errors: errors.to_vec(), slope, intercept, fit_residual, dropped, exact: false })
}

/// `α(t) + ∫₀ᵗ Bα(s)e^{B(t−s)} ds` on the sample times, by the trapezoid rule.
pub fn gronwall_bound(times: &[f64], alpha: &[f64], b: f64) -> Result<Vec<f64>> {
    if times.len() != alpha.len() {
        return Err(WedError::shape("times and alpha differ in length"));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(WedError::param(format!("Gronwall constant must be positive, got {b}")));
    }
    Ok((0..times.len())
        .map(|k| {
            let t = times[k];
            let integrand = |j: usize| b * alpha[j] * (b * (t - times[j])).exp();
            let integral: f64 = (1..=k).map(|j| 0.5 * (times[j] - times[j - 1]) * (integrand(j) + integrand(j - 1))).sum();
            alpha[k] + integral
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum GronwallStatus {
    Pass,
    BoundViolated,
    HypothesisFail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GronwallReport {
    pub status: GronwallStatus,
    /// `min (bound − u)` over the samples (only meaningful when the hypothesis holds).
    pub worst_slack: f64,
}

/// Checks `u ≤ α + ∫₀ᵗ Bu` at every sample (within `slack`), then `u ≤ bound + slack`.
pub fn check_gronwall(times: &[f64], u: &[f64], alpha: &[f64], b: f64, slack: f64) -> Result<GronwallReport> {
    if u.len() != times.len() {
        return Err(WedError::shape("times and u differ in length"));
    }
    let mut integral = 0.0;
    for k in 0..times.len() {
        if k > 0 {
            integral += 0.5 * (times[k] - times[k - 1]) * b * (u[k] + u[k - 1]);
        }
        if u[k] > alpha[k] + integral + slack {
            return Ok(GronwallReport { status: GronwallStatus::HypothesisFail, worst_slack: f64::NAN });
        }
    }
    let bound = gronwall_bound(times, alpha, b)?;
    let worst = bound.iter().zip(u).map(|(bd, x)| bd - x).fold(f64::INFINITY, f64::min);
    let status = if worst >= -slack { GronwallStatus::Pass } else { GronwallStatus::BoundViolated };
    Ok(GronwallReport { status, worst_slack: worst })
}
