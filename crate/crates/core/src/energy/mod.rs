//! Convex potentials: evaluation, gradients, resolvents and Moreau–Yosida
//! envelopes, plus the pairing `φ = φ₁ − φ₂` with its structural constants.
//!
//! Gradients are taken with respect to the grid's weighted inner product,
//! so for a potential `φ` the subgradient `ξ` satisfies
//! `d/dt φ(u + t z)|₀ = ⟨ξ, z⟩` for every direction `z`. Every catalog entry
//! is differentiable on the grid, hence the subdifferential is a singleton.

mod scalar;
pub mod verify;

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, Solver, WedError};
use crate::grid::{gradient_p_sum, p_laplacian_into, Field, SpatialGrid};

pub(crate) use scalar::{power_curvature, power_derivative, power_value};

/// Catalog of nonnegative convex functionals on node fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvexPotential {
    /// `φ ≡ 0`.
    Zero,
    /// `½∫ D₁|∇u|² + D₂|∇v|² + |u|² + |v|²`.
    QuadraticDirichlet { d1: f64, d2: f64 },
    /// `∫ (D₁/p)|∇u|^p + (D₂/p)|∇v|^p + (1/m)|u|^m + (1/m)|v|^m`.
    PDirichletMPower { d1: f64, d2: f64, p: f64, m: f64 },
    /// `(1/q)∫ |u|^q + |v|^q`.
    QPower { q: f64 },
}

/// Value, gradient and proximal point of a Moreau–Yosida envelope.
#[derive(Debug, Clone)]
pub struct Envelope {
    pub value: f64,
    pub gradient: Field,
    pub resolvent: Field,
}

const RESOLVENT_MAX_ITERATIONS: usize = 60;

impl ConvexPotential {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(WedError::param(format!("{name} must be positive and finite, got {v}")))
            }
        };
        let exponent = |name: &str, v: f64| {
            if v.is_finite() && v > 1.0 {
                Ok(())
            } else {
                Err(WedError::param(format!("exponent {name} must exceed 1, got {v}")))
            }
        };
        match *self {
            ConvexPotential::Zero => Ok(()),
            ConvexPotential::QuadraticDirichlet { d1, d2 } => {
                positive("d1", d1)?;
                positive("d2", d2)
            }
            ConvexPotential::PDirichletMPower { d1, d2, p, m } => {
                positive("d1", d1)?;
                positive("d2", d2)?;
                exponent("p", p)?;
                exponent("m", m)
            }
            ConvexPotential::QPower { q } => exponent("q", q),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ConvexPotential::Zero => "zero",
            ConvexPotential::QuadraticDirichlet { .. } => "quadratic_dirichlet",
            ConvexPotential::PDirichletMPower { .. } => "p_dirichlet_m_power",
            ConvexPotential::QPower { .. } => "q_power",
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ConvexPotential::Zero)
    }

    /// Gradient-energy coefficient and exponent for species `s`, if any.
    fn dirichlet_term(&self, s: usize) -> Option<(f64, f64)> {
        let pick = |d1: f64, d2: f64| if s == 0 { d1 } else { d2 };
        match *self {
            ConvexPotential::QuadraticDirichlet { d1, d2 } => Some((pick(d1, d2), 2.0)),
            ConvexPotential::PDirichletMPower { d1, d2, p, .. } => Some((pick(d1, d2), p)),
            _ => None,
        }
    }

    /// Exponent `r` of the pointwise term `|s|^r / r`, if any.
    pub(crate) fn nodal_exponent(&self) -> Option<f64> {
        match *self {
            ConvexPotential::Zero => None,
            ConvexPotential::QuadraticDirichlet { .. } => Some(2.0),
            ConvexPotential::PDirichletMPower { m, .. } => Some(m),
            ConvexPotential::QPower { q } => Some(q),
        }
    }

    /// True when the potential acts node by node on this grid.
    pub fn is_pointwise_on(&self, grid: &SpatialGrid) -> bool {
        grid.faces().is_empty() || matches!(self, ConvexPotential::Zero | ConvexPotential::QPower { .. })
    }

    /// True when the gradient is affine in the state.
    pub fn is_quadratic(&self) -> bool {
        matches!(
            self,
            ConvexPotential::Zero | ConvexPotential::QuadraticDirichlet { .. } | ConvexPotential::QPower { q: 2.0 }
        )
    }

    /// Pointwise restriction `x ↦ |x|^r / r` (what the potential is on a single node of unit weight).
    pub fn nodal_value(&self, x: f64) -> f64 {
        self.nodal_exponent().map_or(0.0, |r| power_value(x, r))
    }

    pub fn nodal_derivative(&self, x: f64) -> f64 {
        self.nodal_exponent().map_or(0.0, |r| power_derivative(x, r))
    }

    pub fn nodal_curvature(&self, x: f64) -> f64 {
        self.nodal_exponent().map_or(0.0, |r| power_curvature(x, r))
    }

    /// Quadrature of the discrete energy density.
    pub fn eval(&self, u: &Field) -> f64 {
        let grid = u.grid();
        let mut total = 0.0;
        if let Some(r) = self.nodal_exponent() {
            let w = grid.weights();
            let m = w.len();
            total += u.values().iter().enumerate().map(|(k, &x)| w[k % m] * power_value(x, r)).sum::<f64>();
        }
        for s in 0..u.species() {
            if let Some((d, p)) = self.dirichlet_term(s) {
                total += d / p * gradient_p_sum(grid, u.species_values(s), p);
            }
        }
        total
    }

    /// Gradient of [`eval`](Self::eval) in the weighted inner product.
    pub fn subgradient(&self, u: &Field) -> Field {
        let mut out = Field::zeros(u.grid(), u.species());
        if let Some(r) = self.nodal_exponent() {
            for (o, &x) in out.values_mut().iter_mut().zip(u.values()) {
                *o = power_derivative(x, r);
            }
        }
        let m = u.grid().node_count();
        let mut scratch = vec![0.0; m];
        for s in 0..u.species() {
            if let Some((d, p)) = self.dirichlet_term(s) {
                p_laplacian_into(u.grid(), u.species_values(s), p, &mut scratch);
                for (o, l) in out.species_values_mut(s).iter_mut().zip(&scratch) {
                    *o -= d * l;
                }
            }
        }
        out
    }

    /// Jacobian of [`subgradient`](Self::subgradient) as a dense matrix over
    /// the flat species-major node ordering.
    pub fn hessian(&self, u: &Field) -> DMatrix<f64> {
        let n = u.len();
        let mut h = DMatrix::zeros(n, n);
        if let Some(r) = self.nodal_exponent() {
            for (k, &x) in u.values().iter().enumerate() {
                h[(k, k)] = power_curvature(x, r);
            }
        }
        let grid = u.grid();
        let w = grid.weights();
        let m = grid.node_count();
        for s in 0..u.species() {
            if let Some((d, p)) = self.dirichlet_term(s) {
                let vals = u.species_values(s);
                for face in grid.faces() {
                    let g = (vals[face.hi] - vals[face.lo]) / face.spacing;
                    let stiffness = if p == 2.0 { 1.0 } else { (p - 1.0) * power_curvature_abs(g, p) };
                    let c = d * stiffness * face.area / (face.spacing * face.spacing);
                    let (lo, hi) = (s * m + face.lo, s * m + face.hi);
                    h[(lo, lo)] += c / w[face.lo];
                    h[(lo, hi)] -= c / w[face.lo];
                    h[(hi, hi)] += c / w[face.hi];
                    h[(hi, lo)] -= c / w[face.hi];
                }
            }
        }
        h
    }

    /// Resolvent `J_λ w = (id + λ∂φ)⁻¹ w`, i.e. the proximal point of `λφ`.
    pub fn resolvent(&self, lambda: f64, w: &Field) -> Result<Field> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(WedError::param(format!("resolvent parameter must be positive, got {lambda}")));
        }
        match self.nodal_exponent() {
            None => Ok(w.clone()),
            Some(r) if self.is_pointwise_on(w.grid()) => {
                let mut out = w.clone();
                for x in out.values_mut() {
                    *x = scalar::solve_monotone(*x, lambda, |s| power_derivative(s, r), |s| power_curvature(s, r))?;
                }
                Ok(out)
            }
            Some(_) => self.resolvent_newton(lambda, w),
        }
    }

    /// Damped Newton on `v + λ∇φ(v) = w` for potentials with gradient terms.
    fn resolvent_newton(&self, lambda: f64, w: &Field) -> Result<Field> {
        let scale = 1.0 + w.norm();
        let residual = |v: &Field| -> Field {
            let mut r = v - w;
            r.axpy(lambda, &self.subgradient(v));
            r
        };
        let mut v = w.clone();
        let mut r = residual(&v);
        let mut rnorm = r.norm();
        let mut history = vec![rnorm];
        let mut best = rnorm;
        let mut stalled = 0;
        for _ in 0..RESOLVENT_MAX_ITERATIONS {
            if rnorm <= 1e-13 * scale {
                return Ok(v);
            }
            let mut jac = self.hessian(&v) * lambda;
            for k in 0..jac.nrows() {
                jac[(k, k)] += 1.0;
            }
            let rhs = nalgebra::DVector::from_column_slice(r.values());
            let step = jac
                .lu()
                .solve(&rhs)
                .ok_or_else(|| WedError::param("singular resolvent Jacobian"))?;
            let step = Field::from_values(w.grid(), w.species(), (-step).as_slice().to_vec())?;

            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let mut trial = v.clone();
                trial.axpy(alpha, &step);
                let tr = residual(&trial);
                let tn = tr.norm();
                if tn.is_finite() && tn <= (1.0 - 1e-4 * alpha) * rnorm {
                    v = trial;
                    r = tr;
                    rnorm = tn;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            history.push(rnorm);
            if !accepted || rnorm >= 0.5 * best {
                stalled += 1;
            } else {
                stalled = 0;
            }
            best = best.min(rnorm);
            if !accepted || stalled >= 3 {
                break;
            }
        }
        if rnorm <= 1e-10 * scale {
            Ok(v)
        } else {
            Err(WedError::NonConvergence {
                solver: Solver::Resolvent,
                iterations: history.len() - 1,
                residual: rnorm,
                history,
                best: None,
            })
        }
    }

    /// Moreau–Yosida envelope `φ^λ(w) = |w − J_λw|²/(2λ) + φ(J_λw)` and its gradient `(w − J_λw)/λ`.
    pub fn moreau_envelope(&self, lambda: f64, w: &Field) -> Result<Envelope> {
        let j = self.resolvent(lambda, w)?;
        let diff = w - &j;
        let value = diff.dot(&diff) / (2.0 * lambda) + self.eval(&j);
        Ok(Envelope { value, gradient: diff.scaled(1.0 / lambda), resolvent: j })
    }

    /// Jacobian of the envelope gradient, by central differences.
    ///
    /// Pointwise potentials get one scalar difference per node; otherwise each
    /// column is differenced through a full resolvent solve.
    pub fn envelope_jacobian(&self, lambda: f64, w: &Field) -> Result<DMatrix<f64>> {
        let n = w.len();
        let mut jac = DMatrix::zeros(n, n);
        let Some(r) = self.nodal_exponent() else {
            return Ok(jac);
        };
        if self.is_pointwise_on(w.grid()) {
            let grad = |x: f64| -> Result<f64> {
                let j = scalar::solve_monotone(x, lambda, |s| power_derivative(s, r), |s| power_curvature(s, r))?;
                Ok((x - j) / lambda)
            };
            for (k, &x) in w.values().iter().enumerate() {
                let h = 1e-6 * (1.0 + x.abs());
                jac[(k, k)] = (grad(x + h)? - grad(x - h)?) / (2.0 * h);
            }
        } else {
            for k in 0..n {
                let h = 1e-6 * (1.0 + w.values()[k].abs());
                let mut plus = w.clone();
                plus.values_mut()[k] += h;
                let mut minus = w.clone();
                minus.values_mut()[k] -= h;
                let gp = self.moreau_envelope(lambda, &plus)?.gradient;
                let gm = self.moreau_envelope(lambda, &minus)?.gradient;
                for i in 0..n {
                    jac[(i, k)] = (gp.values()[i] - gm.values()[i]) / (2.0 * h);
                }
            }
        }
        Ok(jac)
    }

    /// Squared "X-norm" that the coercivity check measures.
    ///
    /// Quadratic Dirichlet: `Σ_s ‖∇u_s‖² + ‖u_s‖²` (the H¹ norm).
    /// p-Dirichlet/m-power: `Σ_s ‖∇u_s‖_p² + ‖u_s‖_m²`.
    /// Pointwise powers: `Σ_s ‖u_s‖_r²`.
    pub fn x_norm_squared(&self, u: &Field) -> f64 {
        let grid = u.grid();
        let w = grid.weights();
        let lebesgue = |vals: &[f64], r: f64| -> f64 {
            let s: f64 = vals.iter().zip(w).map(|(x, wi)| wi * x.abs().powf(r)).sum();
            s.powf(2.0 / r)
        };
        let mut total = 0.0;
        for s in 0..u.species() {
            let vals = u.species_values(s);
            let r = self.nodal_exponent().unwrap_or(2.0);
            total += lebesgue(vals, r);
            if let Some((_, p)) = self.dirichlet_term(s) {
                total += gradient_p_sum(grid, vals, p).powf(2.0 / p);
            }
        }
        total
    }
}

#[inline]
fn power_curvature_abs(g: f64, p: f64) -> f64 {
    // |g|^{p-2} with the same floor used for sub-quadratic nodal powers
    power_curvature(g, p) / (p - 1.0)
}

/// Gradient `η` standing in for `∂φ₂`: the envelope gradient when `λ > 0`,
/// the exact gradient when `λ = 0`.
pub fn perturbation_gradient(phi2: &ConvexPotential, lambda: f64, u: &Field) -> Result<Field> {
    if phi2.is_zero() {
        Ok(Field::zeros(u.grid(), u.species()))
    } else if lambda == 0.0 {
        Ok(phi2.subgradient(u))
    } else {
        Ok(phi2.moreau_envelope(lambda, u)?.gradient)
    }
}

pub(crate) fn perturbation_jacobian(phi2: &ConvexPotential, lambda: f64, u: &Field) -> Result<DMatrix<f64>> {
    if phi2.is_zero() {
        Ok(DMatrix::zeros(u.len(), u.len()))
    } else if lambda == 0.0 {
        Ok(phi2.hessian(u))
    } else {
        phi2.envelope_jacobian(lambda, u)
    }
}

/// Nondecreasing piecewise-linear function given by `(x, y)` knots, extended
/// by constants outside the knot range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PiecewiseLinear {
    knots: Vec<[f64; 2]>,
}

impl PiecewiseLinear {
    pub fn new(knots: Vec<[f64; 2]>) -> Result<Self> {
        if knots.is_empty() {
            return Err(WedError::param("piecewise-linear table needs at least one knot"));
        }
        for pair in knots.windows(2) {
            if !(pair[1][0] > pair[0][0]) {
                return Err(WedError::param("piecewise-linear knots must have increasing x"));
            }
            if pair[1][1] < pair[0][1] {
                return Err(WedError::param("piecewise-linear table must be nondecreasing"));
            }
        }
        if knots.iter().flatten().any(|v| !v.is_finite()) || knots[0][1] < 0.0 {
            return Err(WedError::param("piecewise-linear table must be finite and nonnegative"));
        }
        Ok(PiecewiseLinear { knots })
    }

    pub fn constant(c: f64) -> Self {
        PiecewiseLinear { knots: vec![[0.0, c]] }
    }

    pub fn knots(&self) -> &[[f64; 2]] {
        &self.knots
    }

    pub fn eval(&self, x: f64) -> f64 {
        let first = self.knots[0];
        let last = self.knots[self.knots.len() - 1];
        if x <= first[0] {
            return first[1];
        }
        if x >= last[0] {
            return last[1];
        }
        let i = self.knots.partition_point(|k| k[0] <= x);
        let (a, b) = (self.knots[i - 1], self.knots[i]);
        a[1] + (b[1] - a[1]) * (x - a[0]) / (b[0] - a[0])
    }
}

/// Constants of the structural inequalities tying `φ₂` to `φ₁`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairConstants {
    /// `φ₂ ≤ k₁φ₁ + C₂`
    pub k1: f64,
    pub c2: f64,
    /// `|∂φ₂|² ≤ k₂|∂φ₁|² + ℓ(|u|)(φ₁ + 1)`
    pub k2: f64,
    pub ell: PiecewiseLinear,
    /// `φ₁ ≥ c_X|u|_X² − C₃`
    pub c_x: f64,
    pub c3: f64,
}

/// The split `φ = φ₁ − φ₂` with declared structural constants.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyPair {
    pub phi1: ConvexPotential,
    pub phi2: ConvexPotential,
    pub constants: PairConstants,
}

impl EnergyPair {
    pub fn new(phi1: ConvexPotential, phi2: ConvexPotential, constants: PairConstants) -> Result<Self> {
        let pair = Self::new_unchecked(phi1, phi2, constants);
        pair.validate()?;
        Ok(pair)
    }

    /// Skips the structural checks; for falsification experiments only.
    pub fn new_unchecked(phi1: ConvexPotential, phi2: ConvexPotential, constants: PairConstants) -> Self {
        EnergyPair { phi1, phi2, constants }
    }

    /// Pair with constants derived from the closed-form scalar bounds.
    pub fn with_defaults(phi1: ConvexPotential, phi2: ConvexPotential, grid: &SpatialGrid, species: usize) -> Result<Self> {
        let constants = default_constants(&phi1, &phi2, grid, species);
        Self::new(phi1, phi2, constants)
    }

    /// Convex energy `φ₁` with `φ₂ = 0`.
    pub fn convex(phi1: ConvexPotential, grid: &SpatialGrid, species: usize) -> Result<Self> {
        Self::with_defaults(phi1, ConvexPotential::Zero, grid, species)
    }

    pub fn validate(&self) -> Result<()> {
        self.phi1.validate()?;
        self.phi2.validate()?;
        let c = &self.constants;
        if !(0.0..1.0).contains(&c.k1) || !(0.0..1.0).contains(&c.k2) {
            return Err(WedError::param(format!("k1 and k2 must lie in [0, 1), got {} and {}", c.k1, c.k2)));
        }
        if !(c.c2 >= 0.0 && c.c3 >= 0.0 && c.c2.is_finite() && c.c3.is_finite()) {
            return Err(WedError::param("C2 and C3 must be finite and nonnegative"));
        }
        if !(c.c_x > 0.0 && c.c_x.is_finite()) {
            return Err(WedError::param("c_X must be positive"));
        }
        if let (Some(q), Some(m)) = (self.phi2.nodal_exponent(), self.phi1.nodal_exponent()) {
            if matches!(self.phi2, ConvexPotential::QPower { .. }) && q >= m {
                return Err(WedError::param(format!(
                    "the subtracted power must grow slower than the leading one: need q < m, got q = {q}, m = {m}"
                )));
            }
        }
        Ok(())
    }

    /// `φ₁(u) − φ₂(u)`.
    pub fn energy(&self, u: &Field) -> f64 {
        self.phi1.eval(u) - self.phi2.eval(u)
    }
}

/// `max_{x ≥ 0} f(x)` for a unimodal-ish `f`, by a log grid plus golden refinement.
pub(crate) fn scalar_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let n = 2000;
    let (llo, lhi) = (lo.ln(), hi.ln());
    let mut best_i = 0;
    let mut best = f64::NEG_INFINITY;
    let xs: Vec<f64> = (0..=n).map(|i| (llo + (lhi - llo) * i as f64 / n as f64).exp()).collect();
    for (i, &x) in xs.iter().enumerate() {
        let v = f(x);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let (mut a, mut b) = (xs[best_i.saturating_sub(1)], xs[(best_i + 1).min(n)]);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    best.max(f(0.5 * (a + b))).max(f(0.0))
}

/// Closed-form defaults for the structural constants.
///
/// * `k₁ = ½`, `C₂ = s|Ω| max_x (x^q/q − k₁x^r/r)` for a power `φ₂` against a
///   leading power `r` in `φ₁`.
/// * `k₂ = 0`, `ℓ ≡ sup_x x^{2q−2} / (x^r/r + 1/(s|Ω|))`.
/// * `c_X = ½min(D, 1)`; `C₃` from `max_y (c y² − (D/p) y^p)` per term.
pub fn default_constants(phi1: &ConvexPotential, phi2: &ConvexPotential, grid: &SpatialGrid, species: usize) -> PairConstants {
    let mass = grid.measure().max(f64::MIN_POSITIVE) * species as f64;
    let r1 = phi1.nodal_exponent();

    let (k1, c2, ell) = match (phi2, r1) {
        (ConvexPotential::Zero, _) => (0.0, 0.0, PiecewiseLinear::constant(0.0)),
        (ConvexPotential::QPower { q }, Some(r)) if *q < r => {
            let k1: f64 = 0.5;
            let xstar = k1.powf(-1.0 / (r - q));
            let c2 = mass * xstar.powf(*q) * (1.0 / q - 1.0 / r);
            let beta = 1.0 / mass;
            let ell = scalar_max(|x| x.powf(2.0 * q - 2.0) / (power_value(x, r) + beta), 1e-8, 1e4);
            (k1, c2 * (1.0 + 1e-9), PiecewiseLinear::constant(ell * (1.0 + 1e-9)))
        }
        _ => (0.5, 0.0, PiecewiseLinear::constant(1.0)),
    };

    let (c_x, c3) = match *phi1 {
        ConvexPotential::QuadraticDirichlet { d1, d2 } => {
            let d = if species == 1 { d1 } else { d1.min(d2) };
            (0.5 * d.min(1.0), 0.0)
        }
        ConvexPotential::PDirichletMPower { d1, d2, p, m } => {
            let d = if species == 1 { d1 } else { d1.min(d2) };
            let c = 0.5 * d.min(1.0);
            // max_y (c y² − (D/r) y^r) = c(1 − 2/r)(2c/D)^{2/(r−2)}; zero when r = 2 and c ≤ D/2.
            let excess = |dd: f64, r: f64| -> f64 {
                if r > 2.0 {
                    c * (1.0 - 2.0 / r) * (2.0 * c / dd).powf(2.0 / (r - 2.0))
                } else {
                    0.0
                }
            };
            let grad = if grid.faces().is_empty() { 0.0 } else { excess(d, p) };
            (c, species as f64 * (grad + excess(1.0, m)) * (1.0 + 1e-9))
        }
        ConvexPotential::QPower { q } => {
            let c = 0.5;
            let excess = if q > 2.0 { c * (1.0 - 2.0 / q) * (2.0 * c).powf(2.0 / (q - 2.0)) } else { 0.0 };
            (c, species as f64 * excess * (1.0 + 1e-9))
        }
        ConvexPotential::Zero => (1.0, 0.0),
    };

    PairConstants { k1, c2, k2: 0.0, ell, c_x, c3 }
}

/// Shared handle used by the solvers.
pub type GridRef = Arc<SpatialGrid>;
