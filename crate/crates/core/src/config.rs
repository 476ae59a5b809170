//! Experiment configuration: a TOML file with `[problem]`, `[solver]` and `[run]` tables.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::energy::{ConvexPotential, EnergyPair, PairConstants};
use crate::error::{Result, WedError};
use crate::fixed_point::WedConfig;
use crate::grid::{Field, SpatialGrid};
use crate::reaction::ReactionModel;
use crate::wed::ProblemSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: WedConfig,
    #[serde(default)]
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Final time.
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Omitted: a single spatial point.
    #[serde(default)]
    pub grid: GridConfig,
    pub energy: EnergyConfig,
    #[serde(default = "ReactionModel::zero")]
    pub reaction: ReactionModel,
    /// One profile per species; a single profile is used for every species.
    pub initial: Vec<Profile>,
    /// Number of species; inferred from the reaction or the profile count when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub species: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub extents: Vec<f64>,
    #[serde(default)]
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    pub phi1: ConvexPotential,
    #[serde(default = "zero_potential")]
    pub phi2: ConvexPotential,
    /// Omitted: the closed-form defaults for the pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<PairConstants>,
}

fn zero_potential() -> ConvexPotential {
    ConvexPotential::Zero
}

/// Initial profile of one species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant { value: f64 },
    /// `Σ_k c_k x^k` in the coordinate along `axis`.
    Polynomial {
        coefficients: Vec<f64>,
        #[serde(default)]
        axis: usize,
    },
    /// `offset + Σ amplitude·Π_d cos(π k_d x_d / L_d)`.
    Cosine {
        #[serde(default)]
        offset: f64,
        modes: Vec<CosineMode>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineMode {
    pub amplitude: f64,
    /// One wavenumber per axis.
    pub wavenumbers: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Solve,
    Sweep,
    Verify,
    Oracle,
    Rate,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Solve => "solve",
            Mode::Sweep => "sweep",
            Mode::Verify => "verify",
            Mode::Oracle => "oracle",
            Mode::Rate => "rate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Strictly decreasing list for `sweep` and `rate`.
    pub eps: Vec<f64>,
    /// Strictly decreasing envelope parameters; used by `solve` when nonempty.
    pub lambda_schedule: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub seed: u64,
    /// Samples drawn by each verifier.
    pub samples: usize,
    /// Largest amplitude of sampled fields.
    pub sample_amplitude: f64,
    /// Half-width of the box sampled by the reaction verifiers.
    pub sample_radius: f64,
    /// The oracle runs on `oracle_refinement` times as many steps as the solver.
    pub oracle_refinement: usize,
    /// Allowed growth of each monitor across a sweep.
    pub monitor_factor: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Solve,
            eps: Vec::new(),
            lambda_schedule: Vec::new(),
            output_dir: None,
            seed: 0,
            samples: 500,
            sample_amplitude: 10.0,
            sample_radius: 10.0,
            oracle_refinement: 8,
            monitor_factor: 4.0,
        }
    }
}

fn config_error(msg: impl Into<String>) -> WedError {
    WedError::Config(msg.into())
}

fn check_decreasing(name: &str, list: &[f64]) -> Result<()> {
    if list.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(config_error(format!("run.{name} must contain positive numbers")));
    }
    if list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(config_error(format!("run.{name} must be strictly decreasing")));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Parses and validates; every error is a [`WedError::Config`] naming the offending field.
    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| config_error(e.to_string().trim_end().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_error(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let problem = self.build_problem()?;
        self.solver.validate(&problem).map_err(|e| config_error(format!("solver: {e}")))?;
        let run = &self.run;
        check_decreasing("eps", &run.eps)?;
        check_decreasing("lambda_schedule", &run.lambda_schedule)?;
        if matches!(run.mode, Mode::Sweep | Mode::Rate) && run.eps.is_empty() {
            return Err(config_error(format!("run.eps is required in {} mode", run.mode.name())));
        }
        if matches!(run.mode, Mode::Sweep | Mode::Rate) {
            let smallest = WedConfig { eps: *run.eps.last().unwrap_or(&self.solver.eps), ..self.solver.clone() };
            smallest.validate(&problem).map_err(|e| config_error(format!("run.eps: {e}")))?;
        }
        if run.mode == Mode::Rate && run.eps.len() < 2 {
            return Err(config_error("run.eps needs at least two values in rate mode"));
        }
        if run.samples == 0 || run.oracle_refinement == 0 {
            return Err(config_error("run.samples and run.oracle_refinement must be positive"));
        }
        if !(run.sample_amplitude > 0.0 && run.sample_radius > 0.0 && run.monitor_factor >= 1.0) {
            return Err(config_error("run.sample_amplitude and run.sample_radius must be positive, run.monitor_factor at least 1"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Arc<SpatialGrid>> {
        let g = &self.problem.grid;
        if g.extents.is_empty() && g.nodes.is_empty() {
            return Ok(Arc::new(SpatialGrid::point()));
        }
        SpatialGrid::new(&g.extents, &g.nodes).map(Arc::new).map_err(|e| config_error(format!("problem.grid: {e}")))
    }

    pub fn species(&self) -> Result<usize> {
        let p = &self.problem;
        let species = p.species.or(p.reaction.kinetics.species()).unwrap_or(p.initial.len().max(1));
        if !(1..=2).contains(&species) {
            return Err(config_error(format!("problem.species must be 1 or 2, got {species}")));
        }
        if p.initial.len() != 1 && p.initial.len() != species {
            return Err(config_error(format!("problem.initial has {} profiles for {species} species", p.initial.len())));
        }
        Ok(species)
    }

    pub fn build_problem(&self) -> Result<ProblemSpec> {
        let p = &self.problem;
        let grid = self.grid()?;
        let species = self.species()?;
        let energy = match &p.energy.constants {
            Some(c) => EnergyPair::new(p.energy.phi1.clone(), p.energy.phi2.clone(), c.clone()),
            None => EnergyPair::with_defaults(p.energy.phi1.clone(), p.energy.phi2.clone(), &grid, species),
        }
        .map_err(|e| config_error(format!("problem.energy: {e}")))?;
        for (k, profile) in p.initial.iter().enumerate() {
            profile.validate(&grid).map_err(|e| config_error(format!("problem.initial[{k}]: {e}")))?;
        }
        let initial = Field::from_fn(&grid, species, |s, x| {
            let profile = p.initial.get(s).unwrap_or(&p.initial[0]);
            profile.eval(x, grid.extents())
        });
        ProblemSpec::new(energy, p.reaction.clone(), initial, p.horizon).map_err(|e| config_error(format!("problem: {e}")))
    }
}

impl Profile {
    fn validate(&self, grid: &SpatialGrid) -> Result<()> {
        let dim = grid.dimension();
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match self {
            Profile::Constant { value } if !value.is_finite() => Err(config_error("value must be finite")),
            Profile::Polynomial { coefficients, axis } => {
                if !finite(coefficients) {
                    Err(config_error("coefficients must be finite"))
                } else if dim == 0 && coefficients.len() > 1 {
                    Err(config_error("a point grid has no coordinate; use a constant profile"))
                } else if dim > 0 && *axis >= dim {
                    Err(config_error(format!("axis {axis} out of range for a {dim}-dimensional grid")))
                } else {
                    Ok(())
                }
            }
            Profile::Cosine { offset, modes } => {
                if !offset.is_finite() {
                    return Err(config_error("offset must be finite"));
                }
                for m in modes {
                    if m.wavenumbers.len() != dim || !finite(&m.wavenumbers) || !m.amplitude.is_finite() {
                        return Err(config_error(format!("each mode needs a finite amplitude and {dim} wavenumbers")));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64], extents: &[f64]) -> f64 {
        match self {
            Profile::Constant { value } => *value,
            Profile::Polynomial { coefficients, axis } => {
                let t = x.get(*axis).copied().unwrap_or(0.0);
                coefficients.iter().rev().fold(0.0, |acc, c| acc * t + c)
            }
            Profile::Cosine { offset, modes } => {
                offset
                    + modes
                        .iter()
                        .map(|m| {
                            m.amplitude
                                * m.wavenumbers
                                    .iter()
                                    .zip(x.iter().zip(extents))
                                    .map(|(k, (xd, l))| (PI * k * xd / l).cos())
                                    .product::<f64>()
                        })
                        .sum::<f64>()
            }
        }
    }
}

/// Annotated template describing every key the parser accepts.
pub const CONFIG_SCHEMA: &str = r#"# wedflow experiment configuration (TOML)
#
# Required keys are marked (required); everything else shows its default.

[problem]
T = 1.0                      # (required) final time, > 0
# species = 2                # 1 or 2; inferred from the reaction or the profile count

[problem.grid]               # omit the table for a single spatial point
extents = [1.0]              # side lengths, one per axis (0, 1 or 2 axes)
nodes = [32]                 # node counts per axis, each >= 2

[problem.energy.phi1]        # (required) convex potential
kind = "quadratic_dirichlet" # zero | quadratic_dirichlet | p_dirichlet_m_power | q_power
d1 = 0.1                     # quadratic_dirichlet: diffusion d1, d2 > 0 per species
d2 = 0.1                     # p_dirichlet_m_power: d1, d2 > 0, p > 1, m > 1
                             # q_power: q > 1

[problem.energy.phi2]        # perturbation potential, default kind = "zero"
kind = "zero"

# [problem.energy.constants] # omitted: closed-form defaults for the pair
# k1 = 0.0                   # phi2 <= k1*phi1 + c2
# c2 = 0.0
# k2 = 0.0                   # |grad phi2|^2 <= k2 |grad phi1|^2 + ell(|u|)(phi1 + 1)
# ell = [[0.0, 0.0]]         # piecewise-linear knots [x, value], nondecreasing
# c_x = 1.0                  # phi1 >= c_x |u|_X^2 - c3
# c3 = 0.0

[problem.reaction]           # default kind = "zero"
kind = "prey_predator"       # zero | affine | prey_predator | animal_coating | combustion
A = 5.0                      # see `wedflow list-models` for every parameter
B = 1.0
C = 1.0
D = 1.0
E = 0.1
K = 1.0
mass_shift = 1.0             # adds mass_shift*z to the kinetics
split = "lipschitz"          # lipschitz | monotone | undeclared
# growth_constant = 7.0      # omitted: closed-form bound
# lipschitz_constant = 8.6   # omitted: estimate reported without a bound

[[problem.initial]]          # (required) one profile per species, or one for all
kind = "cosine"              # constant {value} | polynomial {coefficients, axis}
offset = 0.5                 # cosine {offset, modes}
modes = [{ amplitude = 0.25, wavenumbers = [1.0] }]

[[problem.initial]]
kind = "constant"
value = 0.3

[solver]
eps = 0.1                    # > 0, with T/steps < 2*eps
# lambda = 0.1               # omitted: min(0.1, eps) if phi2 is nonzero, else 0
steps = 64                   # time steps, >= 2
theta = 1.0                  # fixed-point damping in (0, 1]
tol_fp = 1e-10
max_fp_iterations = 200
tol_bvp = 1e-9
max_newton_iterations = 50
record_wall_time = false     # true makes the history CSV nondeterministic

[run]
mode = "solve"               # solve | sweep | verify | oracle | rate
eps = []                     # strictly decreasing; required by sweep and rate
lambda_schedule = []         # strictly decreasing; solve runs the schedule when nonempty
# output_dir = "out"         # overridden by --out
seed = 0                     # overridden by --seed
samples = 500
sample_amplitude = 10.0
sample_radius = 10.0
oracle_refinement = 8
monitor_factor = 4.0
"#;
