//! Sampling-based checks of the structural inequalities of an [`EnergyPair`].
//!
//! These are falsification tests, not proofs: each verifier evaluates both
//! sides on the supplied fields and reports the smallest slack found.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::EnergyPair;
use crate::grid::{Field, SpatialGrid};

/// Relative slack tolerated before a sample counts as a violation.
const RELATIVE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub assumption: &'static str,
    pub pass: bool,
    /// `min (rhs − lhs)` over the samples; negative means violated.
    pub worst_slack: f64,
    pub samples: usize,
}

fn report(assumption: &'static str, sides: impl Iterator<Item = (f64, f64)>) -> AssumptionReport {
    let mut worst = f64::INFINITY;
    let mut pass = true;
    let mut samples = 0;
    for (lhs, rhs) in sides {
        samples += 1;
        let slack = rhs - lhs;
        worst = worst.min(slack);
        if !(slack >= -RELATIVE_TOLERANCE * (1.0 + lhs.abs().max(rhs.abs()))) {
            pass = false;
        }
    }
    AssumptionReport { assumption, pass, worst_slack: worst, samples }
}

/// `φ₂(u) ≤ k₁φ₁(u) + C₂`.
pub fn verify_energy_control(pair: &EnergyPair, samples: &[Field]) -> AssumptionReport {
    let c = &pair.constants;
    report(
        "energy_control",
        samples.iter().map(|u| (pair.phi2.eval(u), c.k1 * pair.phi1.eval(u) + c.c2)),
    )
}

/// `‖∂φ₂(u)‖² ≤ k₂‖∂φ₁(u)‖² + ℓ(‖u‖)(φ₁(u) + 1)`.
pub fn verify_gradient_control(pair: &EnergyPair, samples: &[Field]) -> AssumptionReport {
    let c = &pair.constants;
    report(
        "gradient_control",
        samples.iter().map(|u| {
            let lhs = pair.phi2.subgradient(u).norm().powi(2);
            let rhs = c.k2 * pair.phi1.subgradient(u).norm().powi(2) + c.ell.eval(u.norm()) * (pair.phi1.eval(u) + 1.0);
            (lhs, rhs)
        }),
    )
}

/// `φ₁(u) ≥ c_X|u|²_X − C₃`.
pub fn verify_coercivity(pair: &EnergyPair, samples: &[Field]) -> AssumptionReport {
    let c = &pair.constants;
    report(
        "coercivity",
        samples.iter().map(|u| (c.c_x * pair.phi1.x_norm_squared(u) - c.c3, pair.phi1.eval(u))),
    )
}

/// All three checks in a fixed order.
pub fn verify_all(pair: &EnergyPair, samples: &[Field]) -> Vec<AssumptionReport> {
    vec![
        verify_energy_control(pair, samples),
        verify_gradient_control(pair, samples),
        verify_coercivity(pair, samples),
    ]
}

/// Deterministic mix of random and structured fields.
///
/// Cycles through smooth cosine modes, i.i.d. noise, constants on a log
/// amplitude ladder up to `max_amplitude`, single-node spikes and
/// checkerboard patterns, each with a random amplitude.
pub fn sample_fields(grid: &Arc<SpatialGrid>, species: usize, count: usize, max_amplitude: f64, seed: u64) -> Vec<Field> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = grid.node_count();
    let ladder = |k: usize| max_amplitude * 10f64.powf(-4.0 * ((k * 7919) % 97) as f64 / 96.0);
    (0..count)
        .map(|k| {
            let amp = ladder(k) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            match k % 5 {
                0 => {
                    let modes: Vec<(f64, f64, f64)> = (0..3)
                        .map(|_| (rng.random_range(0..4) as f64, rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0 * PI)))
                        .collect();
                    Field::from_fn(grid, species, |s, x| {
                        let mut v = 0.0;
                        for (j, &(freq, a, phase)) in modes.iter().enumerate() {
                            let arg: f64 = x.iter().zip(grid.extents()).map(|(xi, l)| freq * PI * xi / l).sum();
                            v += a * (arg + phase + (s + j) as f64).cos();
                        }
                        amp * v / 3.0
                    })
                }
                1 => Field::from_fn(grid, species, |_, _| amp * rng.random_range(-1.0..1.0)),
                2 => Field::constant(grid, species, amp),
                3 => {
                    let hit = rng.random_range(0..m * species);
                    Field::from_fn(grid, species, |s, x| {
                        let node = s * m + node_of(grid, x);
                        if node == hit {
                            amp
                        } else {
                            0.0
                        }
                    })
                }
                _ => Field::from_fn(grid, species, |_, x| {
                    let parity = grid.axis_indices(node_of(grid, x)).iter().sum::<usize>() % 2;
                    if parity == 0 {
                        amp
                    } else {
                        -amp
                    }
                }),
            }
        })
        .collect()
}

fn node_of(grid: &SpatialGrid, x: &[f64]) -> usize {
    let mut idx = 0;
    let mut stride = 1;
    for ((xi, h), n) in x.iter().zip(grid.spacing()).zip(grid.nodes_per_axis()) {
        idx += stride * (xi / h).round() as usize;
        stride *= n;
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{ConvexPotential, EnergyPair, PairConstants, PiecewiseLinear};

    fn grid() -> Arc<SpatialGrid> {
        Arc::new(SpatialGrid::interval(1.0, 12).unwrap())
    }

    fn nonconvex_pair(g: &SpatialGrid, species: usize) -> EnergyPair {
        EnergyPair::with_defaults(
            ConvexPotential::PDirichletMPower { d1: 1.0, d2: 1.0, p: 2.0, m: 4.0 },
            ConvexPotential::QPower { q: 2.0 },
            g,
            species,
        )
        .unwrap()
    }

    #[test]
    fn samples_are_deterministic_and_bounded() {
        let g = grid();
        let a = sample_fields(&g, 2, 40, 10.0, 7);
        let b = sample_fields(&g, 2, 40, 10.0, 7);
        assert_eq!(a, b);
        assert!(a.iter().all(|f| f.sup_norm() <= 10.0 + 1e-12));
        assert!(a.iter().any(|f| f.sup_norm() > 5.0));
    }

    #[test]
    fn zero_perturbation_passes_with_margin_c2() {
        let g = grid();
        let pair = EnergyPair::convex(ConvexPotential::QuadraticDirichlet { d1: 1.0, d2: 1.0 }, &g, 2).unwrap();
        let samples = sample_fields(&g, 2, 50, 10.0, 1);
        let r = verify_energy_control(&pair, &samples);
        assert!(r.pass);
        assert!(verify_gradient_control(&pair, &samples).pass);
        let zero = vec![Field::zeros(&g, 2)];
        assert_eq!(verify_energy_control(&pair, &zero).worst_slack, pair.constants.c2);
    }

    #[test]
    fn nonconvex_pair_passes_all_checks() {
        let g = grid();
        for species in [1, 2] {
            let pair = nonconvex_pair(&g, species);
            let samples = sample_fields(&g, species, 500, 10.0, 3);
            for r in verify_all(&pair, &samples) {
                assert!(r.pass, "{r:?}");
            }
        }
    }

    #[test]
    fn quadratic_coercivity_is_tight() {
        let g = grid();
        let pair = EnergyPair::convex(ConvexPotential::QuadraticDirichlet { d1: 1.0, d2: 1.0 }, &g, 2).unwrap();
        assert_eq!(pair.constants.c_x, 0.5);
        assert_eq!(pair.constants.c3, 0.0);
        let samples = sample_fields(&g, 2, 100, 10.0, 5);
        let r = verify_coercivity(&pair, &samples);
        assert!(r.pass);
        assert!(r.worst_slack.abs() < 1e-10);
    }

    #[test]
    fn reversed_exponents_fail_energy_control() {
        let g = grid();
        let constants = PairConstants { k1: 0.5, c2: 1.0, k2: 0.0, ell: PiecewiseLinear::constant(1.0), c_x: 0.5, c3: 0.0 };
        let pair = EnergyPair::new_unchecked(
            ConvexPotential::PDirichletMPower { d1: 1.0, d2: 1.0, p: 2.0, m: 2.0 },
            ConvexPotential::QPower { q: 4.0 },
            constants,
        );
        let big = vec![Field::constant(&g, 1, 10.0)];
        assert!(!verify_energy_control(&pair, &big).pass);
    }

    #[test]
    fn equal_exponents_with_tiny_ell_fail_gradient_control() {
        let g = grid();
        let constants = PairConstants { k1: 0.5, c2: 1.0, k2: 0.0, ell: PiecewiseLinear::constant(1e-3), c_x: 0.5, c3: 1.0 };
        let pair = EnergyPair::new_unchecked(
            ConvexPotential::PDirichletMPower { d1: 1.0, d2: 1.0, p: 2.0, m: 4.0 },
            ConvexPotential::QPower { q: 4.0 },
            constants,
        );
        let big = vec![Field::constant(&g, 1, 50.0)];
        assert!(!verify_gradient_control(&pair, &big).pass);
    }
}
