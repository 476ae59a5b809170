//! Discrete trajectories on a uniform time grid and their CSV form.

use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Result, WedError};
use crate::grid::{Field, SpatialGrid};

/// States `u₀ … u_N` at times `t_n = n·dt`, `dt = T/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    horizon: f64,
    states: Vec<Field>,
}

impl Trajectory {
    pub fn new(horizon: f64, states: Vec<Field>) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(WedError::param(format!("horizon must be positive, got {horizon}")));
        }
        if states.len() < 3 {
            return Err(WedError::param(format!("need at least 2 time steps, got {}", states.len().saturating_sub(1))));
        }
        for (n, s) in states.iter().enumerate().skip(1) {
            if !s.compatible(&states[0]) {
                return Err(WedError::shape(format!("state {n} lives on a different grid or species count")));
            }
        }
        if let Some(n) = states.iter().position(|s| !s.is_finite()) {
            return Err(WedError::param(format!("state {n} is not finite")));
        }
        Ok(Trajectory { horizon, states })
    }

    /// `u_n ≡ state` for `n = 0..=steps`.
    pub fn constant(horizon: f64, steps: usize, state: &Field) -> Result<Self> {
        Self::new(horizon, vec![state.clone(); steps + 1])
    }

    pub(crate) fn from_parts_unchecked(horizon: f64, states: Vec<Field>) -> Self {
        Trajectory { horizon, states }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps() {
            self.horizon
        } else {
            n as f64 * self.dt()
        }
    }

    pub fn state(&self, n: usize) -> &Field {
        &self.states[n]
    }

    pub fn states(&self) -> &[Field] {
        &self.states
    }

    pub fn into_states(self) -> Vec<Field> {
        self.states
    }

    pub fn grid(&self) -> &Arc<SpatialGrid> {
        self.states[0].grid()
    }

    pub fn species(&self) -> usize {
        self.states[0].species()
    }

    pub fn final_state(&self) -> &Field {
        &self.states[self.steps()]
    }

    pub fn same_time_grid(&self, other: &Trajectory) -> bool {
        self.steps() == other.steps() && self.horizon == other.horizon && self.states[0].compatible(&other.states[0])
    }

    /// Backward difference `(u_n − u_{n−1})/dt` for `n = 1..=N`.
    pub fn derivative(&self, n: usize) -> Field {
        (&self.states[n] - &self.states[n - 1]).scaled(1.0 / self.dt())
    }

    /// Second difference `(u_{n+1} − 2u_n + u_{n−1})/dt²` for interior `n`.
    pub fn second_derivative(&self, n: usize) -> Field {
        let dt = self.dt();
        let mut d = &self.states[n + 1] + &self.states[n - 1];
        d.axpy(-2.0, &self.states[n]);
        d.scaled(1.0 / (dt * dt))
    }

    /// `Σ_n dt‖a_n − b_n‖²` (states 1..=N), the discrete `L²(0,T;H)` distance squared.
    pub fn l2_distance_squared(&self, other: &Trajectory) -> f64 {
        let dt = self.dt();
        self.states.iter().zip(&other.states).skip(1).map(|(a, b)| dt * (a - b).norm().powi(2)).sum()
    }

    /// `max_n ‖a_n − b_n‖` over all time nodes.
    pub fn sup_distance(&self, other: &Trajectory) -> f64 {
        self.states.iter().zip(&other.states).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// `√(Σ_n dt‖u_n‖²)` over states 1..=N.
    pub fn l2_norm(&self) -> f64 {
        let dt = self.dt();
        self.states.iter().skip(1).map(|a| dt * a.dot(a)).sum::<f64>().sqrt()
    }

    /// Linear interpolation in time onto `steps` uniform steps.
    pub fn resample(&self, steps: usize) -> Result<Trajectory> {
        let n_old = self.steps() as f64;
        let states = (0..=steps)
            .map(|k| {
                let s = k as f64 * n_old / steps as f64;
                let i = (s.floor() as usize).min(self.steps() - 1);
                let theta = s - i as f64;
                let mut f = self.states[i].scaled(1.0 - theta);
                f.axpy(theta, &self.states[i + 1]);
                f
            })
            .collect();
        Trajectory::new(self.horizon, states)
    }

    /// Writes `t,node,[i,j,]species,value` rows with 17 significant digits.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let grid = self.grid();
        let axes = ["i", "j"];
        let mut header = String::from("t,node");
        for a in axes.iter().take(grid.dimension()) {
            header.push(',');
            header.push_str(a);
        }
        header.push_str(",species,value");
        writeln!(out, "{header}")?;
        let m = grid.node_count();
        for (n, state) in self.states.iter().enumerate() {
            let t = self.time(n);
            for s in 0..state.species() {
                for (i, v) in state.species_values(s).iter().enumerate() {
                    let idx: String = grid.axis_indices(i).iter().map(|a| format!(",{a}")).collect();
                    writeln!(out, "{t:.16e},{i}{idx},{s},{v:.16e}")?;
                }
            }
            debug_assert_eq!(state.len(), m * state.species());
        }
        Ok(())
    }

    /// Reads the format produced by [`write_csv`](Self::write_csv).
    pub fn read_csv(input: impl BufRead, grid: &Arc<SpatialGrid>, species: usize) -> Result<Trajectory> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| WedError::Config("empty trajectory CSV".into()))??;
        let columns: Vec<&str> = header.split(',').map(str::trim).collect();
        let col = |name: &str| {
            columns
                .iter()
                .position(|c| *c == name)
                .ok_or_else(|| WedError::Config(format!("trajectory CSV lacks column '{name}'")))
        };
        let (ct, cn, cs, cv) = (col("t")?, col("node")?, col("species")?, col("value")?);
        let m = grid.node_count();
        let mut times: Vec<f64> = Vec::new();
        let mut values: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || WedError::Config(format!("malformed trajectory CSV row {}", lineno + 2));
            let get = |c: usize| parts.get(c).copied().ok_or_else(bad);
            let t: f64 = get(ct)?.parse().map_err(|_| bad())?;
            let node: usize = get(cn)?.parse().map_err(|_| bad())?;
            let s: usize = get(cs)?.parse().map_err(|_| bad())?;
            let v: f64 = get(cv)?.parse().map_err(|_| bad())?;
            if node >= m || s >= species {
                return Err(bad());
            }
            if times.last() != Some(&t) {
                times.push(t);
                values.push(vec![f64::NAN; m * species]);
            }
            values.last_mut().expect("pushed above")[s * m + node] = v;
        }
        let horizon = *times.last().ok_or_else(|| WedError::Config("trajectory CSV has no rows".into()))?;
        let states = values.into_iter().map(|v| Field::from_values(grid, species, v)).collect::<Result<Vec<_>>>()?;
        Trajectory::new(horizon, states)
    }
}
