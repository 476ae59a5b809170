//! Nonpotential reaction terms `f` and sampling checks of their growth and
//! Lipschitz/monotone structure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WedError};
use crate::grid::Field;

/// Reaction kinetics acting node by node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kinetics {
    Zero,
    /// `z ↦ matrix·z + offset`; the matrix is row-major, `s × s`.
    Affine { matrix: Vec<Vec<f64>>, offset: Vec<f64> },
    /// Prey-predator kinetics with `U = (min{u,K})⁺`, `V = v⁺`:
    /// `(AU(1−U/K) − BUV/(1+EU), CUV/(1+EU) − DV)`.
    PreyPredator {
        #[serde(rename = "A", alias = "a")]
        a: f64,
        #[serde(rename = "B", alias = "b")]
        b: f64,
        #[serde(rename = "C", alias = "c")]
        c: f64,
        #[serde(rename = "D", alias = "d")]
        d: f64,
        #[serde(rename = "E", alias = "e")]
        e: f64,
        #[serde(rename = "K", alias = "k")]
        k: f64,
    },
    /// Pattern-forming kinetics `(α − u − h, γ(β − v) − h)` with
    /// `h = ρuv/(1 + u⁺ + δu²)`.
    AnimalCoating { alpha: f64, beta: f64, gamma: f64, delta: f64, rho: f64 },
    /// Thermal-runaway kinetics `(p − u·g(v), k(u·g(v) − v))`,
    /// `g(v) = exp(v/(1+δv))`.
    Combustion { p: f64, k: f64, delta: f64 },
}

/// Which part of the Lipschitz-plus-monotone decomposition the whole model is declared as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// `f` is Lipschitz (the monotone part vanishes).
    Lipschitz,
    /// `−f` is monotone (the Lipschitz part vanishes).
    Monotone,
    #[default]
    Undeclared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionModel {
    #[serde(flatten)]
    pub kinetics: Kinetics,
    /// Adds `mass_shift·z` to the kinetics; pairs a unit mass term in the energy
    /// with an unshifted reaction–diffusion system.
    #[serde(default)]
    pub mass_shift: f64,
    #[serde(default)]
    pub split: Split,
    /// Declared growth constant: `|f(z)| ≤ C₁(1 + |z|)`.
    #[serde(default)]
    pub growth_constant: Option<f64>,
    /// Declared Lipschitz constant of the Lipschitz part.
    #[serde(default)]
    pub lipschitz_constant: Option<f64>,
}

impl Kinetics {
    /// Reference parameter sets shipped with the library (not calibrated to any data).
    pub fn prey_predator_default() -> Self {
        Kinetics::PreyPredator { a: 5.0, b: 1.0, c: 1.0, d: 1.0, e: 0.1, k: 1.0 }
    }

    pub fn animal_coating_default() -> Self {
        Kinetics::AnimalCoating { alpha: 92.0, beta: 64.0, gamma: 1.5, delta: 1.0, rho: 18.5 }
    }

    pub fn combustion_default() -> Self {
        Kinetics::Combustion { p: 1.0, k: 2.0, delta: 0.2 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kinetics::Zero => "zero",
            Kinetics::Affine { .. } => "affine",
            Kinetics::PreyPredator { .. } => "prey_predator",
            Kinetics::AnimalCoating { .. } => "animal_coating",
            Kinetics::Combustion { .. } => "combustion",
        }
    }

    /// Species count the kinetics needs, if fixed.
    pub fn species(&self) -> Option<usize> {
        match self {
            Kinetics::Zero => None,
            Kinetics::Affine { offset, .. } => Some(offset.len()),
            _ => Some(2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
        let ok = match self {
            Kinetics::Zero => true,
            Kinetics::Affine { matrix, offset } => {
                let s = offset.len();
                if !(s == 1 || s == 2) || matrix.len() != s || matrix.iter().any(|r| r.len() != s) {
                    return Err(WedError::param("affine kinetics need an s x s matrix and length-s offset, s in {1, 2}"));
                }
                finite(offset) && matrix.iter().all(|r| finite(r))
            }
            &Kinetics::PreyPredator { a, b, c, d, e, k } => finite(&[a, b, c, d, e, k]) && [a, b, c, d, e].iter().all(|x| *x >= 0.0) && k > 0.0,
            &Kinetics::AnimalCoating { alpha, beta, gamma, delta, rho } => {
                let v = [alpha, beta, gamma, delta, rho];
                finite(&v) && v.iter().all(|x| *x > 0.0)
            }
            &Kinetics::Combustion { p, k, delta } => {
                let v = [p, k, delta];
                finite(&v) && v.iter().all(|x| *x > 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(WedError::param(format!("invalid {} parameters", self.name())))
        }
    }

    /// Evaluates at one node; returns whether the combustion exponent clamp fired.
    pub fn eval_node(&self, z: &[f64], out: &mut [f64]) -> bool {
        match self {
            Kinetics::Zero => {
                out.fill(0.0);
                false
            }
            Kinetics::Affine { matrix, offset } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = offset[i] + matrix[i].iter().zip(z).map(|(m, x)| m * x).sum::<f64>();
                }
                false
            }
            &Kinetics::PreyPredator { a, b, c, d, e, k } => {
                let u = z[0].min(k).max(0.0);
                let v = z[1].max(0.0);
                let interaction = u * v / (1.0 + e * u);
                out[0] = a * u * (1.0 - u / k) - b * interaction;
                out[1] = c * interaction - d * v;
                false
            }
            &Kinetics::AnimalCoating { alpha, beta, gamma, delta, rho } => {
                let (u, v) = (z[0], z[1]);
                let h = rho * u * v / (1.0 + u.max(0.0) + delta * u * u);
                out[0] = alpha - u - h;
                out[1] = gamma * (beta - v) - h;
                false
            }
            &Kinetics::Combustion { p, k, delta } => {
                let (exponent, clamped) = combustion_exponent(z[1], delta);
                let ug = z[0] * exponent.exp();
                out[0] = p - ug;
                out[1] = k * (ug - z[1]);
                clamped
            }
        }
    }

    /// Closed-form `C` with `|f(z)| ≤ C(1 + |z|)` for every `z`.
    pub fn growth_bound(&self) -> f64 {
        match self {
            Kinetics::Zero => 0.0,
            Kinetics::Affine { matrix, offset } => {
                let frob = matrix.iter().flatten().map(|m| m * m).sum::<f64>().sqrt();
                let off = offset.iter().map(|b| b * b).sum::<f64>().sqrt();
                frob.max(off)
            }
            // |f₁| ≤ AK/4 + BK·V, |f₂| ≤ max(CK, D)·V
            &Kinetics::PreyPredator { a, b, c, d, k, .. } => a * k / 4.0 + b * k + (c * k).max(d),
            // |h| ≤ ρ|v|/(2√δ) and 1 + 2√δ ≥ 2√δ covers u ≥ 0
            &Kinetics::AnimalCoating { alpha, beta, gamma, delta, rho } => {
                let ch = 1.0 / (2.0 * delta.sqrt());
                (alpha + gamma * beta).max(1.0 + gamma + 2.0 * rho * ch)
            }
            &Kinetics::Combustion { p, k, delta } => {
                let g = (1.0 / delta).exp();
                p.max(g * (1.0 + k) + k)
            }
        }
    }
}

/// Saturated exponent `v/(1+δv)` made total on `v ≤ −1/δ`.
///
/// For `v` below `v* = −0.99/(1.99δ)` the exponent is held at `−0.99/δ`,
/// which is its value at `v*`, so `g` stays continuous. Returns whether the
/// clamp was active.
pub fn combustion_exponent(v: f64, delta: f64) -> (f64, bool) {
    let v_star = -0.99 / (1.99 * delta);
    if v < v_star {
        (-0.99 / delta, true)
    } else {
        ((v / (1.0 + delta * v)).min(1.0 / delta), false)
    }
}

impl ReactionModel {
    pub fn new(kinetics: Kinetics) -> Self {
        ReactionModel { kinetics, mass_shift: 0.0, split: Split::Undeclared, growth_constant: None, lipschitz_constant: None }
    }

    pub fn zero() -> Self {
        Self::new(Kinetics::Zero)
    }

    pub fn with_mass_shift(mut self, shift: f64) -> Self {
        self.mass_shift = shift;
        self
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn validate(&self, species: usize) -> Result<()> {
        self.kinetics.validate()?;
        if let Some(s) = self.kinetics.species() {
            if s != species {
                return Err(WedError::shape(format!("{} kinetics act on {s} species, state has {species}", self.kinetics.name())));
            }
        }
        let nonneg = |c: Option<f64>| c.is_none_or(|c| c.is_finite() && c >= 0.0);
        if !self.mass_shift.is_finite() || !nonneg(self.growth_constant) || !nonneg(self.lipschitz_constant) {
            return Err(WedError::param("reaction constants must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Declared growth constant, or the closed-form bound when none is declared.
    pub fn growth_constant(&self) -> f64 {
        self.growth_constant.unwrap_or_else(|| self.kinetics.growth_bound() + self.mass_shift.abs())
    }

    pub fn eval_node(&self, z: &[f64], out: &mut [f64]) -> bool {
        let clamped = self.kinetics.eval_node(z, out);
        if self.mass_shift != 0.0 {
            for (o, x) in out.iter_mut().zip(z) {
                *o += self.mass_shift * x;
            }
        }
        clamped
    }

    /// Nodewise `f(state)` together with the number of nodes where a clamp fired.
    pub fn eval_counting(&self, state: &Field) -> Result<(Field, usize)> {
        let s = state.species();
        if let Some(k) = self.kinetics.species() {
            if k != s {
                return Err(WedError::shape(format!("{} kinetics act on {k} species, state has {s}", self.kinetics.name())));
            }
        }
        let m = state.grid().node_count();
        let mut out = Field::zeros(state.grid(), s);
        let mut clamps = 0;
        let (mut z, mut fz) = ([0.0; 2], [0.0; 2]);
        for i in 0..m {
            for c in 0..s {
                z[c] = state.species_values(c)[i];
            }
            if self.eval_node(&z[..s], &mut fz[..s]) {
                clamps += 1;
            }
            let vals = out.values_mut();
            for c in 0..s {
                vals[c * m + i] = fz[c];
            }
        }
        Ok((out, clamps))
    }

    pub fn eval(&self, state: &Field) -> Result<Field> {
        Ok(self.eval_counting(state)?.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub growth_estimate: f64,
    pub declared: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitReport {
    pub lipschitz_estimate: f64,
    pub declared_lipschitz: Option<f64>,
    pub monotone_violations: usize,
    pub pass: bool,
}

fn euclid(z: &[f64]) -> f64 {
    z.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `max |f(z)|/(1+|z|)` over the samples, compared with the declared constant.
pub fn verify_linear_growth(model: &ReactionModel, samples: &[Vec<f64>]) -> GrowthReport {
    let mut worst: f64 = 0.0;
    let mut fz = [0.0; 2];
    for z in samples {
        let out = &mut fz[..z.len()];
        model.eval_node(z, out);
        worst = worst.max(euclid(out) / (1.0 + euclid(z)));
    }
    let declared = model.growth_constant();
    GrowthReport { growth_estimate: worst, declared, pass: worst <= declared * (1.0 + 1e-12) }
}

/// Difference-quotient estimate of the Lipschitz part and count of sampled
/// pairs where the monotone part fails `⟨f(a) − f(b), a − b⟩ ≤ 0`.
pub fn verify_lipschitz_split(model: &ReactionModel, pairs: &[(Vec<f64>, Vec<f64>)]) -> SplitReport {
    let mut lip: f64 = 0.0;
    let mut violations = 0;
    let (mut fa, mut fb) = ([0.0; 2], [0.0; 2]);
    for (a, b) in pairs {
        let s = a.len();
        model.eval_node(a, &mut fa[..s]);
        model.eval_node(b, &mut fb[..s]);
        let dz: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let df: Vec<f64> = fa[..s].iter().zip(&fb[..s]).map(|(x, y)| x - y).collect();
        let dist = euclid(&dz);
        if dist == 0.0 {
            continue;
        }
        match model.split {
            Split::Monotone => {
                let inner: f64 = df.iter().zip(&dz).map(|(x, y)| x * y).sum();
                if inner > 1e-12 {
                    violations += 1;
                }
            }
            Split::Lipschitz | Split::Undeclared => lip = lip.max(euclid(&df) / dist),
        }
    }
    let pass = violations == 0 && model.lipschitz_constant.is_none_or(|l| lip <= l * (1.0 + 1e-12));
    SplitReport { lipschitz_estimate: lip, declared_lipschitz: model.lipschitz_constant, monotone_violations: violations, pass }
}

/// Node states drawn from a box `[-radius, radius]^s`, mixing uniform points
/// with points on a log-radius ladder.
pub fn sample_nodes(species: usize, count: usize, radius: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let scale = if k % 2 == 0 { radius } else { radius * 10f64.powf(-rng.random_range(0.0..6.0)) };
            (0..species).map(|_| scale * rng.random_range(-1.0..=1.0)).collect()
        })
        .collect()
}

/// Pairs of nearby and far-apart node states from the same box.
pub fn sample_pairs(species: usize, count: usize, radius: f64, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let points = sample_nodes(species, count, radius, seed);
    points
        .into_iter()
        .map(|a| {
            let spread = if rng.random_bool(0.5) { radius } else { radius * 1e-4 };
            let b = a.iter().map(|x| (x + spread * rng.random_range(-1.0..=1.0)).clamp(-radius, radius)).collect();
            (a, b)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpatialGrid;
    use std::sync::Arc;

    fn at(model: &ReactionModel, z: [f64; 2]) -> [f64; 2] {
        let mut out = [0.0; 2];
        model.eval_node(&z, &mut out);
        out
    }

    #[test]
    fn prey_predator_clamps() {
        let m = ReactionModel::new(Kinetics::PreyPredator { a: 1.0, b: 1.0, c: 1.0, d: 1.0, e: 1.0, k: 1.0 });
        assert_eq!(at(&m, [0.0, 3.0]), [0.0, -3.0]);
        assert_eq!(at(&m, [1.0, 0.0]), [0.0, 0.0]);
        // capacity and positivity clamps: values beyond the box act like the box edge
        assert_eq!(at(&m, [5.0, 0.4]), at(&m, [1.0, 0.4]));
        assert_eq!(at(&m, [-2.0, -1.0]), [0.0, 0.0]);
    }

    #[test]
    fn combustion_substitution() {
        let m = ReactionModel::new(Kinetics::Combustion { p: 1.0, k: 3.0, delta: 0.2 });
        assert_eq!(at(&m, [2.0, 0.0]), [-1.0, 6.0]);
    }

    #[test]
    fn combustion_clamp_is_continuous_and_counted() {
        let delta = 0.2;
        let v_star = -0.99 / (1.99 * delta);
        let (below, c1) = combustion_exponent(v_star - 1e-12, delta);
        let (above, c2) = combustion_exponent(v_star + 1e-12, delta);
        assert!(c1 && !c2);
        assert!((below - above).abs() < 1e-9);
        assert!(combustion_exponent(1e9, delta).0 <= 1.0 / delta);

        let g = Arc::new(SpatialGrid::interval(1.0, 4).unwrap());
        let state = Field::from_values(&g, 2, vec![1.0, 1.0, 1.0, 1.0, 0.0, -10.0, -20.0, 3.0]).unwrap();
        let model = ReactionModel::new(Kinetics::Combustion { p: 1.0, k: 2.0, delta });
        let (f, clamps) = model.eval_counting(&state).unwrap();
        assert_eq!(clamps, 2);
        assert!(f.is_finite());
    }

    #[test]
    fn animal_coating_written_form() {
        let m = ReactionModel::new(Kinetics::AnimalCoating { alpha: 2.0, beta: 3.0, gamma: 0.5, delta: 1.0, rho: 4.0 });
        // h(1,2) = 4·2/(1+1+1) = 8/3
        let out = at(&m, [1.0, 2.0]);
        assert!((out[0] - (2.0 - 1.0 - 8.0 / 3.0)).abs() < 1e-15);
        assert!((out[1] - (0.5 * 1.0 - 8.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn mass_shift_adds_identity() {
        let m = ReactionModel::new(Kinetics::prey_predator_default()).with_mass_shift(1.0);
        let base = ReactionModel::new(Kinetics::prey_predator_default());
        let z = [0.3, 0.7];
        let (a, b) = (at(&m, z), at(&base, z));
        assert!((a[0] - b[0] - 0.3).abs() < 1e-15 && (a[1] - b[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn growth_of_zero_and_affine() {
        let samples = sample_nodes(2, 2000, 1e3, 4);
        let r = verify_linear_growth(&ReactionModel::zero(), &samples);
        assert_eq!(r.growth_estimate, 0.0);
        let affine = ReactionModel::new(Kinetics::Affine { matrix: vec![vec![2.0, 0.0], vec![0.0, -2.0]], offset: vec![0.0, 0.0] });
        let far: Vec<Vec<f64>> = (0..50).map(|k| vec![1e8 * (k as f64).cos(), 1e8 * (k as f64).sin()]).collect();
        let est = verify_linear_growth(&affine, &far).growth_estimate;
        assert!((est - 2.0).abs() < 1e-7, "{est}");
    }

    #[test]
    fn catalog_growth_bounds_hold_on_samples() {
        for kin in [Kinetics::prey_predator_default(), Kinetics::animal_coating_default(), Kinetics::combustion_default()] {
            let model = ReactionModel::new(kin);
            let r = verify_linear_growth(&model, &sample_nodes(2, 20_000, 1e3, 11));
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn negative_definite_affine_is_monotone() {
        let model = ReactionModel::new(Kinetics::Affine { matrix: vec![vec![-2.0, 0.5], vec![0.5, -1.0]], offset: vec![1.0, 0.0] })
            .with_split(Split::Monotone);
        let r = verify_lipschitz_split(&model, &sample_pairs(2, 5000, 10.0, 2));
        assert_eq!(r.monotone_violations, 0);
        let bad = ReactionModel::new(Kinetics::Affine { matrix: vec![vec![1.0, 0.0], vec![0.0, 1.0]], offset: vec![0.0, 0.0] })
            .with_split(Split::Monotone);
        assert!(verify_lipschitz_split(&bad, &sample_pairs(2, 100, 10.0, 2)).monotone_violations > 0);
    }

    #[test]
    fn shape_checks() {
        let g = Arc::new(SpatialGrid::interval(1.0, 3).unwrap());
        let model = ReactionModel::new(Kinetics::prey_predator_default());
        assert!(model.eval(&Field::zeros(&g, 1)).is_err());
        assert!(model.validate(1).is_err());
        let bad = ReactionModel::new(Kinetics::PreyPredator { a: 1.0, b: 1.0, c: 1.0, d: 1.0, e: 1.0, k: 0.0 });
        assert!(bad.validate(2).is_err());
    }
}
