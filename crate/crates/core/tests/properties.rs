use std::io::BufReader;
use std::sync::Arc;

use proptest::prelude::*;
use wedflow::config::ExperimentConfig;
use wedflow::energy::ConvexPotential;
use wedflow::grid::{Field, SpatialGrid};
use wedflow::limits::{estimate_rate, gronwall_bound};
use wedflow::reaction::{combustion_exponent, sample_nodes, verify_linear_growth, Kinetics, ReactionModel};
use wedflow::trajectory::Trajectory;

const NODES: usize = 6;

fn grid() -> Arc<SpatialGrid> {
    Arc::new(SpatialGrid::interval(1.0, NODES).unwrap())
}

fn catalog() -> Vec<ConvexPotential> {
    vec![
        ConvexPotential::Zero,
        ConvexPotential::QuadraticDirichlet { d1: 0.3, d2: 0.7 },
        ConvexPotential::PDirichletMPower { d1: 1.0, d2: 0.5, p: 2.0, m: 4.0 },
        ConvexPotential::PDirichletMPower { d1: 0.2, d2: 0.4, p: 3.0, m: 2.5 },
        ConvexPotential::QPower { q: 1.5 },
        ConvexPotential::QPower { q: 3.0 },
    ]
}

fn field(values: Vec<f64>) -> Field {
    Field::from_values(&grid(), 2, values).unwrap()
}

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, 2 * NODES)
}

fn potential() -> impl Strategy<Value = ConvexPotential> {
    prop::sample::select(catalog())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn potentials_are_convex(phi in potential(), a in values(), b in values(), theta in 0.01..0.99f64) {
        let (a, b) = (field(a), field(b));
        let mut mid = a.scaled(theta);
        mid.axpy(1.0 - theta, &b);
        let (va, vb) = (phi.eval(&a), phi.eval(&b));
        prop_assert!(phi.eval(&mid) <= theta * va + (1.0 - theta) * vb + 1e-10 * (1.0 + va + vb));
    }

    #[test]
    fn subgradient_matches_directional_derivative(phi in potential(), u in values(), d in values()) {
        let (u, d) = (field(u), field(d));
        let h = 1e-6;
        let mut plus = u.clone();
        plus.axpy(h, &d);
        let mut minus = u.clone();
        minus.axpy(-h, &d);
        let fd = (phi.eval(&plus) - phi.eval(&minus)) / (2.0 * h);
        let exact = phi.subgradient(&u).dot(&d);
        prop_assert!((fd - exact).abs() <= 1e-5 * (1.0 + exact.abs() + phi.eval(&u)), "fd {} exact {}", fd, exact);
    }

    #[test]
    fn resolvent_is_nonexpansive(phi in potential(), a in values(), b in values(), lambda in 0.01..5.0f64) {
        let (a, b) = (field(a), field(b));
        let ja = phi.resolvent(lambda, &a).unwrap();
        let jb = phi.resolvent(lambda, &b).unwrap();
        prop_assert!((&ja - &jb).norm() <= (&a - &b).norm() * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn envelope_lies_below_and_decreases_in_lambda(phi in potential(), w in values(), l1 in 0.01..2.0f64, ratio in 1.1..4.0f64) {
        let w = field(w);
        let small = phi.moreau_envelope(l1, &w).unwrap();
        let large = phi.moreau_envelope(l1 * ratio, &w).unwrap();
        let value = phi.eval(&w);
        prop_assert!(small.value <= value * (1.0 + 1e-12) + 1e-12);
        prop_assert!(large.value <= small.value * (1.0 + 1e-12) + 1e-12);
        // the envelope gradient is the subgradient at the proximal point
        let at_prox = phi.subgradient(&small.resolvent);
        prop_assert!((&at_prox - &small.gradient).norm() <= 1e-7 * (1.0 + small.gradient.norm()));
    }

    #[test]
    fn combustion_exponent_is_monotone_and_continuous(delta in 0.01..2.0f64, a in -50.0..50.0f64, b in -50.0..50.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(combustion_exponent(lo, delta).0 <= combustion_exponent(hi, delta).0 + 1e-12);
        let v_star = -0.99 / (1.99 * delta);
        let (left, clamped) = combustion_exponent(v_star - 1e-12, delta);
        let (right, free) = combustion_exponent(v_star, delta);
        prop_assert!(clamped && !free);
        prop_assert!((left - right).abs() < 1e-9 / delta);
    }

    #[test]
    fn closed_form_growth_bounds_hold(a in 0.1..10.0f64, b in 0.1..5.0f64, c in 0.1..5.0f64, d in 0.1..5.0f64, e in 0.0..2.0f64, k in 0.1..5.0f64, seed in any::<u64>()) {
        let model = ReactionModel::new(Kinetics::PreyPredator { a, b, c, d, e, k });
        let report = verify_linear_growth(&model, &sample_nodes(2, 200, 50.0, seed));
        prop_assert!(report.pass, "estimate {} declared {}", report.growth_estimate, report.declared);
    }

    #[test]
    fn gronwall_bound_dominates_alpha(alpha in prop::collection::vec(0.0..10.0f64, 2..40), b in 0.01..5.0f64) {
        let times: Vec<f64> = (0..alpha.len()).map(|k| k as f64 / alpha.len() as f64).collect();
        let bound = gronwall_bound(&times, &alpha, b).unwrap();
        for (x, y) in bound.iter().zip(&alpha) {
            prop_assert!(x >= y);
        }
    }

    #[test]
    fn rate_fit_recovers_power_laws(c in 0.01..100.0f64, rate in 0.1..2.0f64) {
        let eps = [0.2, 0.1, 0.05, 0.025];
        let errors: Vec<f64> = eps.iter().map(|e: &f64| c * e.powf(rate)).collect();
        let fit = estimate_rate(&eps, &errors).unwrap();
        prop_assert!((fit.slope - rate).abs() < 1e-10);
    }

    #[test]
    fn trajectory_csv_round_trips(states in prop::collection::vec(values(), 3..6)) {
        let tr = Trajectory::new(2.0, states.into_iter().map(field).collect()).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let back = Trajectory::read_csv(BufReader::new(&buf[..]), &grid(), 2).unwrap();
        prop_assert_eq!(back.steps(), tr.steps());
        for (x, y) in back.states().iter().zip(tr.states()) {
            prop_assert_eq!(x.values(), y.values());
        }
    }

    #[test]
    fn config_round_trips(t in 0.1..10.0f64, value in -5.0..5.0f64, amplitude in 0.0..1.0f64, seed in any::<u32>()) {
        let text = format!(
            r#"
[problem]
T = {t}
grid = {{ extents = [2.0], nodes = [9] }}
energy.phi1 = {{ kind = "quadratic_dirichlet", d1 = 0.5, d2 = 0.25 }}
reaction = {{ kind = "affine", matrix = [[0.1, 0.0], [0.2, -0.3]], offset = [{value}, 0.0] }}
initial = [{{ kind = "constant", value = {value} }}, {{ kind = "cosine", offset = 1.0, modes = [{{ amplitude = {amplitude}, wavenumbers = [3.0] }}] }}]

[solver]
eps = 0.5
steps = 200

[run]
mode = "verify"
seed = {seed}
"#
        );
        let config = ExperimentConfig::parse(&text).unwrap();
        let again = ExperimentConfig::parse(&config.to_toml().unwrap()).unwrap();
        prop_assert_eq!(&config, &again);
        prop_assert_eq!(config.to_toml().unwrap(), again.to_toml().unwrap());
    }
}
