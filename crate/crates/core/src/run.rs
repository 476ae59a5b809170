//! Experiment runner: dispatches a parsed config and writes CSV artifacts plus
//! a manifest of content hashes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub use crate::config::{ExperimentConfig, Mode};
use crate::energy::verify::{sample_fields, verify_all};
use crate::error::{Result, WedError};
use crate::fixed_point::{fixed_point_solve, lambda_schedule_solve, FixedPointOutcome, IterationRecord, WedConfig};
use crate::limits::{epsilon_sweep, estimate_rate, monitor_uniformity, sup_error, MonitorRecord, SweepEntry};
use crate::oracle::{implicit_euler, restrict};
use crate::reaction::{sample_nodes, sample_pairs, verify_linear_growth, verify_lipschitz_split};
use crate::trajectory::Trajectory;
use crate::wed::ProblemSpec;

pub const MANIFEST: &str = "manifest.csv";

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads for cold-start sweeps; `0` or `1` runs the warm-started sequential sweep.
    pub parallel: usize,
    /// Overrides `run.seed`.
    pub seed: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { out_dir: PathBuf::from("wedflow-out"), parallel: 1, seed: None }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub mode: Mode,
    pub config_hash: String,
    /// Written files, manifest last.
    pub files: Vec<PathBuf>,
    /// False when a solve stopped without converging; partial outputs are still written.
    pub converged: bool,
    /// False when a verifier flagged a violated assumption.
    pub checks_passed: bool,
    pub messages: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

struct Outputs {
    dir: PathBuf,
    config_hash: String,
    written: Vec<(String, String)>,
}

impl Outputs {
    fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), contents)?;
        self.written.push((name.to_string(), sha256_hex(contents)));
        Ok(())
    }

    fn trajectory(&mut self, name: &str, u: &Trajectory) -> Result<()> {
        let mut buf = Vec::new();
        u.write_csv(&mut buf)?;
        self.write(name, &buf)
    }

    fn finish(self) -> Result<Vec<PathBuf>> {
        let mut manifest = String::from("file,sha256,config_hash\n");
        for (name, hash) in &self.written {
            writeln!(manifest, "{name},{hash},{}", self.config_hash).unwrap();
        }
        fs::write(self.dir.join(MANIFEST), manifest)?;
        let mut files: Vec<PathBuf> = self.written.iter().map(|(n, _)| self.dir.join(n)).collect();
        files.push(self.dir.join(MANIFEST));
        Ok(files)
    }
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    problem: ProblemSpec,
    options: &'a RunOptions,
    seed: u64,
    out: Outputs,
    converged: bool,
    checks_passed: bool,
    messages: Vec<String>,
}

/// Runs the configured mode, writing every artifact into `options.out_dir`.
///
/// Solver non-convergence is not an error: partial outputs are written and
/// [`RunSummary::converged`] is false.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    let seed = options.seed.unwrap_or(config.run.seed);
    let mut effective = config.clone();
    effective.run.seed = seed;
    effective.run.output_dir = None;
    let canonical = effective.to_toml()?;
    let config_hash = sha256_hex(canonical.as_bytes());
    fs::create_dir_all(&options.out_dir)?;
    let mut out = Outputs { dir: options.out_dir.clone(), config_hash: config_hash.clone(), written: Vec::new() };
    out.write("config.toml", canonical.as_bytes())?;
    let mut ctx = Context {
        config,
        problem: config.build_problem()?,
        options,
        seed,
        out,
        converged: true,
        checks_passed: true,
        messages: Vec::new(),
    };
    match config.run.mode {
        Mode::Solve => run_solve(&mut ctx)?,
        Mode::Sweep => run_sweep(&mut ctx, false)?,
        Mode::Rate => run_sweep(&mut ctx, true)?,
        Mode::Verify => run_verify(&mut ctx)?,
        Mode::Oracle => run_oracle(&mut ctx)?,
    }
    let Context { out, converged, checks_passed, messages, .. } = ctx;
    Ok(RunSummary { mode: config.run.mode, config_hash, files: out.finish()?, converged, checks_passed, messages })
}

/// Reads, parses and runs a config file.
pub fn run_file(path: &Path, options: &RunOptions) -> Result<RunSummary> {
    let text = fs::read_to_string(path).map_err(|e| WedError::Config(format!("cannot read {}: {e}", path.display())))?;
    run_experiment(&ExperimentConfig::parse(&text)?, options)
}

const HISTORY_HEADER: &str = "iteration,update_norm,bvp_residual,newton_steps,theta,wall_time";

fn history_rows(csv: &mut String, prefix: &str, history: &[IterationRecord]) {
    for h in history {
        writeln!(
            csv,
            "{prefix}{},{},{},{},{},{}",
            h.iteration,
            num(h.update_norm),
            num(h.bvp_residual),
            h.newton_steps,
            num(h.theta),
            opt(h.wall_time)
        )
        .unwrap();
    }
}

fn monitor_header() -> String {
    format!("eps,{}", MonitorRecord::COLUMNS.join(","))
}

fn monitor_row(prefix: &str, m: &MonitorRecord) -> String {
    let cols: Vec<String> = m.values().iter().map(|v| num(*v)).collect();
    format!("{prefix}{},{}", num(m.eps), cols.join(","))
}

/// Writes whatever a failed solve left behind and records the failure.
fn record_failure(ctx: &mut Context, tag: &str, err: WedError) -> Result<()> {
    if !err.is_convergence_failure() {
        return Err(err);
    }
    let history = match &err {
        WedError::NonConvergence { history, best, .. } => {
            if let Some(best) = best {
                ctx.out.trajectory(&format!("{tag}_partial.csv"), best)?;
            }
            history.clone()
        }
        WedError::Divergence { history, .. } => history.clone(),
        _ => Vec::new(),
    };
    let mut csv = String::from("iteration,residual\n");
    for (k, r) in history.iter().enumerate() {
        writeln!(csv, "{},{}", k + 1, num(*r)).unwrap();
    }
    ctx.out.write(&format!("{tag}_failure_history.csv"), csv.as_bytes())?;
    ctx.converged = false;
    ctx.messages.push(format!("{tag}: {err}"));
    Ok(())
}

fn write_outcome(ctx: &mut Context, tag: &str, eps: f64, outcome: &FixedPointOutcome) -> Result<()> {
    ctx.out.trajectory(&format!("{tag}.csv"), &outcome.u)?;
    let mut csv = format!("{HISTORY_HEADER}\n");
    history_rows(&mut csv, "", &outcome.history);
    ctx.out.write(&format!("{tag}_history.csv"), csv.as_bytes())?;
    let monitors = MonitorRecord::compute(&ctx.problem, eps, &outcome.u, &outcome.record);
    let csv = format!("{}\n{}\n", monitor_header(), monitor_row("", &monitors));
    ctx.out.write(&format!("{tag}_monitors.csv"), csv.as_bytes())
}

fn run_solve(ctx: &mut Context) -> Result<()> {
    let solver = &ctx.config.solver;
    let schedule = &ctx.config.run.lambda_schedule;
    if schedule.is_empty() {
        return match fixed_point_solve(&ctx.problem, solver, None) {
            Ok(outcome) => write_outcome(ctx, "solution", solver.eps, &outcome),
            Err(e) => record_failure(ctx, "solution", e),
        };
    }
    let stages = match lambda_schedule_solve(&ctx.problem, solver, schedule) {
        Ok(stages) => stages,
        Err(e) => return record_failure(ctx, "lambda", e),
    };
    let mut csv = String::from("stage,lambda,cauchy_difference,envelope_monitor,iterations,self_consistent_residual\n");
    for (k, s) in stages.iter().enumerate() {
        writeln!(
            csv,
            "{k},{},{},{},{},{}",
            num(s.lambda),
            opt(s.cauchy_difference),
            num(s.envelope_monitor),
            s.outcome.iterations(),
            num(s.outcome.self_consistent_residual)
        )
        .unwrap();
        write_outcome(ctx, &format!("solution_lambda{k}"), solver.eps, &s.outcome)?;
    }
    ctx.out.write("lambda_schedule.csv", csv.as_bytes())
}

fn reference(ctx: &Context) -> Result<Trajectory> {
    let refinement = ctx.config.run.oracle_refinement;
    let lambda = ctx.config.solver.lambda_for(&ctx.problem);
    let (fine, _) = implicit_euler(&ctx.problem, ctx.config.solver.steps * refinement, lambda)?;
    restrict(&fine, refinement)
}

fn cold_sweep(ctx: &Context, reference: &Trajectory, threads: usize) -> Result<Vec<SweepEntry>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| WedError::Config(format!("cannot start {threads} worker threads: {e}")))?;
    let problem = &ctx.problem;
    let template = &ctx.config.solver;
    pool.install(|| {
        ctx.config
            .run
            .eps
            .par_iter()
            .map(|&eps| {
                let cfg = WedConfig { eps, ..template.clone() };
                match fixed_point_solve(problem, &cfg, None) {
                    Ok(outcome) => {
                        let error = sup_error(&outcome.u, reference)?;
                        let monitors = MonitorRecord::compute(problem, eps, &outcome.u, &outcome.record);
                        Ok(SweepEntry { eps, outcome: Some(outcome), failure: None, error: Some(error), monitors: Some(monitors) })
                    }
                    Err(e) if e.is_convergence_failure() => {
                        Ok(SweepEntry { eps, outcome: None, failure: Some(e.to_string()), error: None, monitors: None })
                    }
                    Err(e) => Err(e),
                }
            })
            .collect()
    })
}

fn run_sweep(ctx: &mut Context, fit_rate: bool) -> Result<()> {
    let reference = reference(ctx)?;
    ctx.out.trajectory("reference.csv", &reference)?;
    let entries = if ctx.options.parallel > 1 {
        cold_sweep(ctx, &reference, ctx.options.parallel)?
    } else {
        epsilon_sweep(&ctx.problem, &ctx.config.solver, &ctx.config.run.eps, Some(&reference))?
    };
    let mut sweep = String::from("eps,error,iterations,self_consistent_residual,failure\n");
    let mut monitors = format!("{}\n", monitor_header());
    let mut records = Vec::new();
    for (k, e) in entries.iter().enumerate() {
        let (iterations, residual) = match &e.outcome {
            Some(o) => (o.iterations().to_string(), num(o.self_consistent_residual)),
            None => (String::new(), String::new()),
        };
        let failure = e.failure.as_deref().unwrap_or("").replace([',', '\n'], ";");
        writeln!(sweep, "{},{},{iterations},{residual},{failure}", num(e.eps), opt(e.error)).unwrap();
        if let Some(m) = &e.monitors {
            writeln!(monitors, "{}", monitor_row("", m)).unwrap();
            records.push(m.clone());
        }
        if let Some(o) = &e.outcome {
            ctx.out.trajectory(&format!("solution_eps{k}.csv"), &o.u)?;
        }
        if let Some(f) = &e.failure {
            ctx.converged = false;
            ctx.messages.push(format!("eps = {}: {f}", e.eps));
        }
    }
    ctx.out.write("sweep.csv", sweep.as_bytes())?;
    ctx.out.write("monitors.csv", monitors.as_bytes())?;
    let violated = monitor_uniformity(&records, ctx.config.run.monitor_factor);
    let mut uniformity = String::from("monitor,within_factor\n");
    for name in MonitorRecord::COLUMNS {
        writeln!(uniformity, "{name},{}", !violated.contains(&name)).unwrap();
    }
    ctx.out.write("uniformity.csv", uniformity.as_bytes())?;
    if !violated.is_empty() {
        ctx.checks_passed = false;
        ctx.messages.push(format!("monitors grew beyond the allowed factor: {}", violated.join(", ")));
    }
    if fit_rate {
        let (eps, errors): (Vec<f64>, Vec<f64>) = entries.iter().filter_map(|e| e.error.map(|err| (e.eps, err))).unzip();
        let mut csv = String::from("slope,intercept,fit_residual,points,dropped,exact\n");
        match estimate_rate(&eps, &errors) {
            Ok(r) => {
                writeln!(csv, "{},{},{},{},{},{}", num(r.slope), num(r.intercept), num(r.fit_residual), r.eps.len(), r.dropped.len(), r.exact)
                    .unwrap();
            }
            Err(e) => ctx.messages.push(format!("rate fit skipped: {e}")),
        }
        ctx.out.write("rate.csv", csv.as_bytes())?;
    }
    Ok(())
}

fn run_verify(ctx: &mut Context) -> Result<()> {
    let run = &ctx.config.run;
    let problem = &ctx.problem;
    let species = problem.species();
    let fields = sample_fields(&problem.grid, species, run.samples, run.sample_amplitude, ctx.seed);
    let pair = format!("{}+{}", problem.energy.phi1.name(), problem.energy.phi2.name());
    let mut csv = String::from("pair,assumption,worst_slack,samples,pass\n");
    let mut all = true;
    for r in verify_all(&problem.energy, &fields) {
        writeln!(csv, "{pair},{},{},{},{}", r.assumption, num(r.worst_slack), r.samples, r.pass).unwrap();
        all &= r.pass;
    }
    ctx.out.write("verify_energy.csv", csv.as_bytes())?;

    let model = &problem.reaction;
    let name = model.kinetics.name();
    let growth = verify_linear_growth(model, &sample_nodes(species, run.samples, run.sample_radius, ctx.seed));
    let split = verify_lipschitz_split(model, &sample_pairs(species, run.samples, run.sample_radius, ctx.seed));
    let mut csv = String::from("model,check,estimate,declared,violations,pass\n");
    writeln!(csv, "{name},linear_growth,{},{},0,{}", num(growth.growth_estimate), num(growth.declared), growth.pass).unwrap();
    writeln!(
        csv,
        "{name},lipschitz_split,{},{},{},{}",
        num(split.lipschitz_estimate),
        opt(split.declared_lipschitz),
        split.monotone_violations,
        split.pass
    )
    .unwrap();
    all &= growth.pass && split.pass;
    ctx.out.write("verify_reaction.csv", csv.as_bytes())?;
    if !all {
        ctx.checks_passed = false;
        ctx.messages.push("at least one verifier failed; see verify_*.csv".into());
    }
    Ok(())
}

fn run_oracle(ctx: &mut Context) -> Result<()> {
    let refinement = ctx.config.run.oracle_refinement;
    let lambda = ctx.config.solver.lambda_for(&ctx.problem);
    let (fine, _) = implicit_euler(&ctx.problem, ctx.config.solver.steps * refinement, lambda)?;
    ctx.out.trajectory("oracle.csv", &fine)?;
    ctx.out.trajectory("oracle_restricted.csv", &restrict(&fine, refinement)?)
}

/// Catalog of potentials and reaction models with their parameters.
pub fn list_models() -> String {
    let rows: [(&str, &str, &str); 9] = [
        ("energy", "zero", "no parameters"),
        ("energy", "quadratic_dirichlet", "d1, d2 > 0: 1/2 sum of d|grad|^2 plus unit mass term"),
        ("energy", "p_dirichlet_m_power", "d1, d2 > 0, p > 1, m > 1; as phi1 paired with q_power phi2 needs 1 < q < m"),
        ("energy", "q_power", "q > 1: (1/q) sum |u|^q"),
        ("reaction", "zero", "no parameters"),
        ("reaction", "affine", "matrix (s x s), offset (s)"),
        (
            "reaction",
            "prey_predator",
            "A=5 B=1 C=1 D=1 E=0.1 K=1 (artifact default); prey capped at K, predator at 0",
        ),
        (
            "reaction",
            "animal_coating",
            "alpha=92 beta=64 gamma=1.5 delta=1 rho=18.5 (artifact default)",
        ),
        (
            "reaction",
            "combustion",
            "p=1 k=2 delta=0.2 (artifact default); exponent v/(1+delta v) saturates: held at -0.99/delta below v = -0.99/(1.99 delta)",
        ),
    ];
    let mut text = format!("{:<9} {:<20} parameters\n", "family", "kind");
    for (family, kind, params) in rows {
        writeln!(text, "{family:<9} {kind:<20} {params}").unwrap();
    }
    text.push_str("\nevery reaction also accepts mass_shift, split (lipschitz | monotone | undeclared), growth_constant, lipschitz_constant\n");
    text
}
