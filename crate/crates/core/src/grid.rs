//! Uniform tensor grids, node-collocated fields, and the zero-flux
//! difference operators that act on them.
//!
//! Fields live on the nodes of a uniform grid. The discrete `L²` inner
//! product uses composite-trapezoid weights, and every difference operator
//! is written in flux form over the faces joining neighbouring nodes, so the
//! discrete integration-by-parts identity holds to rounding:
//!
//! ```text
//!   Σ_i w_i (Δu)_i v_i = −Σ_faces A_f (u_hi − u_lo)(v_hi − v_lo) / h_f²
//! ```
//!
//! Dividing the face sums by the nodal weight reproduces the usual
//! second-difference stencil with reflected ghost nodes at the boundary.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::sync::Arc;

use crate::error::{Result, WedError};

/// A face joins two neighbouring nodes along one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub lo: usize,
    pub hi: usize,
    /// Node spacing along the face normal.
    pub spacing: f64,
    /// Control "volume" of the face: spacing times the transverse trapezoid weight.
    pub area: f64,
}

/// A uniform grid on an interval, a rectangle, or a single point.
///
/// The point grid (dimension 0) carries one node with unit weight and no
/// faces; it is the discrete stand-in for a scalar state space.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    extents: Vec<f64>,
    nodes: Vec<usize>,
    spacing: Vec<f64>,
    weights: Vec<f64>,
    faces: Vec<Face>,
}

fn trapezoid_weights(nodes: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; nodes];
    w[0] = 0.5 * h;
    w[nodes - 1] = 0.5 * h;
    w
}

impl SpatialGrid {
    /// Builds a grid with the given extent and node count per axis.
    pub fn new(extents: &[f64], nodes: &[usize]) -> Result<Self> {
        if extents.len() != nodes.len() {
            return Err(WedError::param("extents and node counts must have one entry per axis"));
        }
        if extents.len() > 2 {
            return Err(WedError::param("only 0-, 1- and 2-dimensional grids are supported"));
        }
        if extents.is_empty() {
            return Ok(Self::point());
        }
        for (&len, &n) in extents.iter().zip(nodes) {
            if !(len.is_finite() && len > 0.0) {
                return Err(WedError::param(format!("grid extent must be positive, got {len}")));
            }
            if n < 2 {
                return Err(WedError::param(format!("each axis needs at least 2 nodes, got {n}")));
            }
        }
        let spacing: Vec<f64> = extents
            .iter()
            .zip(nodes)
            .map(|(&len, &n)| len / (n - 1) as f64)
            .collect();

        let axis_weights: Vec<Vec<f64>> =
            nodes.iter().zip(&spacing).map(|(&n, &h)| trapezoid_weights(n, h)).collect();

        let total: usize = nodes.iter().product();
        let mut weights = vec![0.0; total];
        let mut faces = Vec::new();
        match nodes.len() {
            1 => {
                weights.copy_from_slice(&axis_weights[0]);
                let h = spacing[0];
                for i in 0..nodes[0] - 1 {
                    faces.push(Face { lo: i, hi: i + 1, spacing: h, area: h });
                }
            }
            2 => {
                let (nx, ny) = (nodes[0], nodes[1]);
                let (hx, hy) = (spacing[0], spacing[1]);
                for j in 0..ny {
                    for i in 0..nx {
                        weights[i + nx * j] = axis_weights[0][i] * axis_weights[1][j];
                    }
                }
                for j in 0..ny {
                    for i in 0..nx - 1 {
                        let k = i + nx * j;
                        faces.push(Face { lo: k, hi: k + 1, spacing: hx, area: hx * axis_weights[1][j] });
                    }
                }
                for j in 0..ny - 1 {
                    for i in 0..nx {
                        let k = i + nx * j;
                        faces.push(Face { lo: k, hi: k + nx, spacing: hy, area: hy * axis_weights[0][i] });
                    }
                }
            }
            _ => unreachable!(),
        }

        Ok(SpatialGrid { extents: extents.to_vec(), nodes: nodes.to_vec(), spacing, weights, faces })
    }

    pub fn interval(length: f64, nodes: usize) -> Result<Self> {
        Self::new(&[length], &[nodes])
    }

    pub fn rectangle(extents: [f64; 2], nodes: [usize; 2]) -> Result<Self> {
        Self::new(&extents, &nodes)
    }

    /// Single-node grid with unit measure.
    pub fn point() -> Self {
        SpatialGrid { extents: vec![], nodes: vec![], spacing: vec![], weights: vec![1.0], faces: vec![] }
    }

    pub fn dimension(&self) -> usize {
        self.extents.len()
    }

    pub fn node_count(&self) -> usize {
        self.weights.len()
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents
    }

    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.nodes
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Composite-trapezoid quadrature weights, one per node.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Domain measure |Ω| (1 for the point grid).
    pub fn measure(&self) -> f64 {
        self.extents.iter().product()
    }

    /// Per-axis indices of a flat node index.
    pub fn axis_indices(&self, node: usize) -> Vec<usize> {
        match self.dimension() {
            0 => vec![],
            1 => vec![node],
            _ => vec![node % self.nodes[0], node / self.nodes[0]],
        }
    }

    /// Physical coordinates of a node; empty for the point grid.
    pub fn coordinates(&self, node: usize) -> Vec<f64> {
        self.axis_indices(node)
            .iter()
            .zip(&self.spacing)
            .map(|(&i, &h)| i as f64 * h)
            .collect()
    }
}

/// Node values of one or two species on a shared grid.
///
/// Storage is species-major: all nodes of species 0, then species 1.
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<SpatialGrid>,
    species: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Arc<SpatialGrid>, species: usize) -> Self {
        assert!(species == 1 || species == 2, "species count must be 1 or 2");
        Field { grid: Arc::clone(grid), species, values: vec![0.0; grid.node_count() * species] }
    }

    pub fn constant(grid: &Arc<SpatialGrid>, species: usize, value: f64) -> Self {
        let mut f = Self::zeros(grid, species);
        f.values.fill(value);
        f
    }

    pub fn from_values(grid: &Arc<SpatialGrid>, species: usize, values: Vec<f64>) -> Result<Self> {
        if species != 1 && species != 2 {
            return Err(WedError::shape(format!("species count must be 1 or 2, got {species}")));
        }
        if values.len() != grid.node_count() * species {
            return Err(WedError::shape(format!(
                "expected {} values ({} nodes x {} species), got {}",
                grid.node_count() * species,
                grid.node_count(),
                species,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(WedError::param(format!("non-finite field value at index {bad}")));
        }
        Ok(Field { grid: Arc::clone(grid), species, values })
    }

    /// Samples `f(species, coordinates)` at every node.
    pub fn from_fn(grid: &Arc<SpatialGrid>, species: usize, mut f: impl FnMut(usize, &[f64]) -> f64) -> Self {
        let mut out = Self::zeros(grid, species);
        let m = grid.node_count();
        for s in 0..species {
            for i in 0..m {
                out.values[s * m + i] = f(s, &grid.coordinates(i));
            }
        }
        out
    }

    pub fn grid(&self) -> &Arc<SpatialGrid> {
        &self.grid
    }

    pub fn species(&self) -> usize {
        self.species
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn species_values(&self, s: usize) -> &[f64] {
        let m = self.grid.node_count();
        &self.values[s * m..(s + 1) * m]
    }

    pub(crate) fn species_values_mut(&mut self, s: usize) -> &mut [f64] {
        let m = self.grid.node_count();
        &mut self.values[s * m..(s + 1) * m]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Same grid and species count.
    pub fn compatible(&self, other: &Field) -> bool {
        self.species == other.species && (Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid)
    }

    pub(crate) fn check_compatible(&self, other: &Field) -> Result<()> {
        if self.compatible(other) {
            Ok(())
        } else {
            Err(WedError::shape("fields live on different grids or species counts"))
        }
    }

    fn expect_compatible(&self, other: &Field) {
        assert!(self.compatible(other), "fields live on different grids or species counts");
    }

    /// Weighted inner product; panics on incompatible shapes.
    pub fn dot(&self, other: &Field) -> f64 {
        self.expect_compatible(other);
        let w = self.grid.weights();
        let m = w.len();
        self.values
            .iter()
            .zip(&other.values)
            .enumerate()
            .map(|(k, (a, b))| w[k % m] * (a * b))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &Field) {
        self.expect_compatible(x);
        for (a, b) in self.values.iter_mut().zip(&x.values) {
            *a += alpha * b;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Field {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    /// Quadrature of the node values of every species: Σ_s Σ_i w_i u_{s,i}.
    pub fn integral(&self) -> f64 {
        let w = self.grid.weights();
        let m = w.len();
        self.values.iter().enumerate().map(|(k, v)| w[k % m] * v).sum()
    }
}

impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        self.species == other.species
            && self.values == other.values
            && (Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid)
    }
}

impl Add<&Field> for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub<&Field> for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl AddAssign<&Field> for Field {
    fn add_assign(&mut self, rhs: &Field) {
        self.axpy(1.0, rhs);
    }
}

impl SubAssign<&Field> for Field {
    fn sub_assign(&mut self, rhs: &Field) {
        self.axpy(-1.0, rhs);
    }
}

impl Mul<&Field> for f64 {
    type Output = Field;
    fn mul(self, rhs: &Field) -> Field {
        rhs.scaled(self)
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.scaled(-1.0)
    }
}

/// Discrete `L²(Ω)` inner product over all species.
pub fn inner_product(a: &Field, b: &Field) -> Result<f64> {
    a.check_compatible(b)?;
    Ok(a.dot(b))
}

pub fn norm(a: &Field) -> f64 {
    a.norm()
}

/// Signed flux `|g|^{p-2} g` with the removable singularity at 0 filled in.
#[inline]
pub(crate) fn p_flux(g: f64, p: f64) -> f64 {
    if g == 0.0 {
        0.0
    } else if p == 2.0 {
        g
    } else {
        g.abs().powf(p - 2.0) * g
    }
}

/// Writes `div(|∇u|^{p-2}∇u)` of one species into `out` (overwrites).
pub(crate) fn p_laplacian_into(grid: &SpatialGrid, u: &[f64], p: f64, out: &mut [f64]) {
    out.fill(0.0);
    for face in grid.faces() {
        let g = (u[face.hi] - u[face.lo]) / face.spacing;
        let flux = face.area * p_flux(g, p) / face.spacing;
        out[face.lo] += flux;
        out[face.hi] -= flux;
    }
    for (o, w) in out.iter_mut().zip(grid.weights()) {
        *o /= w;
    }
}

/// Σ_faces A_f |g_f|^p for one species.
pub(crate) fn gradient_p_sum(grid: &SpatialGrid, u: &[f64], p: f64) -> f64 {
    grid.faces()
        .iter()
        .map(|face| {
            let g = (u[face.hi] - u[face.lo]) / face.spacing;
            face.area * g.abs().powf(p)
        })
        .sum()
}

/// Zero-flux Laplacian applied to each species.
pub fn neumann_laplacian(u: &Field) -> Field {
    let mut out = Field::zeros(u.grid(), u.species());
    for s in 0..u.species() {
        p_laplacian_into(u.grid(), u.species_values(s), 2.0, out.species_values_mut(s));
    }
    out
}

/// Zero-flux p-Laplacian applied to each species.
pub fn p_laplacian(u: &Field, p: f64) -> Result<Field> {
    if !(p.is_finite() && p > 1.0) {
        return Err(WedError::param(format!("p-Laplacian exponent must exceed 1, got {p}")));
    }
    let mut out = Field::zeros(u.grid(), u.species());
    for s in 0..u.species() {
        p_laplacian_into(u.grid(), u.species_values(s), p, out.species_values_mut(s));
    }
    Ok(out)
}
