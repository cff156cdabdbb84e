//! Uniform periodic grids on the unit hypercube and the scalar fields that live on them.
//!
//! Storage is row-major with axis 0 slowest. Sample points are cell centres,
//! `x_a = (i_a + 1/2) / n`, so block-averaging a refined grid lands exactly on
//! the coarse sample locations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial part of a grid: `n` points per axis in `dim` dimensions, periodic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mesh {
    dim: usize,
    n: usize,
}

impl Mesh {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::validation(
                "dim",
                format!("must be 1, 2 or 3, got {dim}"),
            ));
        }
        if n < 2 {
            return Err(Error::validation(
                "n",
                format!("need at least 2 points per axis, got {n}"),
            ));
        }
        Ok(Self { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of grid points, `n^dim`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid spacing `c_x = 1/n`.
    pub fn dx(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Flat-index stride of `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    /// Integer coordinates of a flat index.
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for (axis, slot) in out.iter_mut().enumerate().take(self.dim) {
            *slot = (index / self.stride(axis)) % self.n;
        }
        out
    }

    /// Physical position of the cell centre at `index`.
    pub fn point(&self, index: usize) -> [f64; 3] {
        let c = self.coords(index);
        let h = self.dx();
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = (c[axis] as f64 + 0.5) * h;
        }
        x
    }

    /// Flat index reached from `index` by moving `offset` cells along `axis`, wrapping periodically.
    pub fn shifted(&self, index: usize, axis: usize, offset: isize) -> usize {
        let stride = self.stride(axis);
        let c = (index / stride) % self.n;
        let n = self.n as isize;
        let moved = (c as isize + offset).rem_euclid(n) as usize;
        index - c * stride + moved * stride
    }

    /// The mesh refined by an integer factor along every axis.
    pub fn refined(&self, factor: usize) -> Result<Mesh> {
        if factor == 0 {
            return Err(Error::validation("factor", "must be at least 1"));
        }
        Mesh::new(self.dim, self.n * factor)
    }
}

/// Precomputed periodic neighbour tables, one `(plus, minus)` pair per axis.
#[derive(Clone, Debug)]
pub struct Neighbors {
    plus: Vec<Vec<u32>>,
    minus: Vec<Vec<u32>>,
}

impl Neighbors {
    pub fn new(mesh: &Mesh) -> Self {
        let len = mesh.len();
        let mut plus = Vec::with_capacity(mesh.dim());
        let mut minus = Vec::with_capacity(mesh.dim());
        for axis in 0..mesh.dim() {
            plus.push((0..len).map(|i| mesh.shifted(i, axis, 1) as u32).collect());
            minus.push((0..len).map(|i| mesh.shifted(i, axis, -1) as u32).collect());
        }
        Self { plus, minus }
    }

    #[inline]
    pub fn plus(&self, axis: usize) -> &[u32] {
        &self.plus[axis]
    }

    #[inline]
    pub fn minus(&self, axis: usize) -> &[u32] {
        &self.minus[axis]
    }
}

/// Space-time grid descriptor: spatial mesh, Euler step size, and output slicing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub mesh: Mesh,
    /// Euler time step `c_t`.
    pub dt: f64,
    /// Number of stored output slices after the initial condition.
    pub t_slices: usize,
    /// Euler steps between stored slices.
    pub steps_per_slice: usize,
}

impl Grid {
    pub fn new(
        dim: usize,
        n: usize,
        dt: f64,
        t_slices: usize,
        steps_per_slice: usize,
    ) -> Result<Self> {
        let grid = Self {
            mesh: Mesh::new(dim, n)?,
            dt,
            t_slices,
            steps_per_slice,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        Mesh::new(self.mesh.dim, self.mesh.n)?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::validation(
                "dt",
                format!("must be finite and > 0, got {}", self.dt),
            ));
        }
        if self.t_slices < 1 {
            return Err(Error::validation("t_slices", "must be at least 1"));
        }
        if self.steps_per_slice < 1 {
            return Err(Error::validation("steps_per_slice", "must be at least 1"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim
    }

    pub fn dx(&self) -> f64 {
        self.mesh.dx()
    }

    /// Total number of Euler steps in a rollout.
    pub fn total_steps(&self) -> usize {
        self.t_slices * self.steps_per_slice
    }

    /// Physical time between stored slices.
    pub fn slice_dt(&self) -> f64 {
        self.dt * self.steps_per_slice as f64
    }

    /// Physical time of stored slice `s` (slice 0 is the initial condition).
    pub fn slice_time(&self, s: usize) -> f64 {
        self.dt * (s * self.steps_per_slice) as f64
    }
}

/// A scalar function sampled on a mesh. Values are finite by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    mesh: Mesh,
    values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

impl Field {
    pub fn new(mesh: Mesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.len() {
            return Err(Error::Shape(format!(
                "field has {} values, mesh {}^{} needs {}",
                values.len(),
                mesh.n(),
                mesh.dim(),
                mesh.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(
                "values",
                format!("non-finite value at index {i}"),
            ));
        }
        Ok(Self { mesh, values })
    }

    /// Wraps values already known to be finite and of the right length.
    pub(crate) fn from_vec_unchecked(mesh: Mesh, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), mesh.len());
        Self { mesh, values }
    }

    pub fn zeros(mesh: Mesh) -> Self {
        Self::constant(mesh, 0.0)
    }

    pub fn constant(mesh: Mesh, value: f64) -> Self {
        assert!(value.is_finite(), "constant field value must be finite");
        Self {
            mesh,
            values: vec![value; mesh.len()],
        }
    }

    /// Samples `f` at every cell centre.
    pub fn from_fn(mesh: Mesh, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let dim = mesh.dim();
        let values = (0..mesh.len()).map(|i| f(&mesh.point(i)[..dim])).collect();
        Self::new(mesh, values)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_same_mesh(&self, other: &Field) -> Result<()> {
        if self.mesh != other.mesh {
            return Err(Error::Shape(format!(
                "fields live on different meshes ({:?} vs {:?})",
                self.mesh, other.mesh
            )));
        }
        Ok(())
    }

    pub fn elementwise(&self, other: &Field, op: BinaryOp) -> Result<Field> {
        self.check_same_mesh(other)?;
        let f: fn(f64, f64) -> f64 = match op {
            BinaryOp::Add => |a, b| a + b,
            BinaryOp::Sub => |a, b| a - b,
            BinaryOp::Mul => |a, b| a * b,
        };
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Field::new(self.mesh, values)
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.elementwise(other, BinaryOp::Add)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.elementwise(other, BinaryOp::Sub)
    }

    pub fn mul(&self, other: &Field) -> Result<Field> {
        self.elementwise(other, BinaryOp::Mul)
    }

    pub fn scale(&self, alpha: f64) -> Result<Field> {
        Field::new(self.mesh, self.values.iter().map(|v| alpha * v).collect())
    }

    /// Sum of all entries, accumulated sequentially in storage order.
    pub fn reduce_sum(&self) -> f64 {
        reduce_sum(&self.values)
    }

    pub fn mean(&self) -> f64 {
        self.reduce_sum() / self.len() as f64
    }

    /// Population variance over grid points.
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        reduce_sum_map(&self.values, |v| (v - mean) * (v - mean)) / self.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `‖U‖_X = sqrt(h^dim Σ U²)`, the Riemann-sum L² norm on the unit hypercube.
    pub fn grid_norm(&self) -> f64 {
        grid_norm_sq(&self.mesh, &self.values).sqrt()
    }
}

/// Sequential left-to-right sum. Fixing the order keeps results bit-identical run to run.
pub fn reduce_sum(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc + v)
}

pub(crate) fn reduce_sum_map(values: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    values.iter().fold(0.0, |acc, &v| acc + f(v))
}

/// Squared grid norm of raw values on `mesh`.
pub fn grid_norm_sq(mesh: &Mesh, values: &[f64]) -> f64 {
    let cell = mesh.dx().powi(mesh.dim() as i32);
    cell * reduce_sum_map(values, |v| v * v)
}

/// Squared grid norm of the difference `a - b`.
pub(crate) fn grid_dist_sq(mesh: &Mesh, a: &[f64], b: &[f64]) -> f64 {
    let cell = mesh.dx().powi(mesh.dim() as i32);
    cell * a
        .iter()
        .zip(b)
        .fold(0.0, |acc, (x, y)| acc + (x - y) * (x - y))
}

/// Initial condition plus `t_slices` stored solution snapshots.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    mesh: Mesh,
    slices: Vec<Field>,
}

impl Trajectory {
    pub fn new(slices: Vec<Field>) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::Shape("trajectory needs at least one slice".into()))?;
        let mesh = *first.mesh();
        if let Some(s) = slices.iter().position(|f| *f.mesh() != mesh) {
            return Err(Error::Shape(format!("slice {s} lives on a different mesh")));
        }
        Ok(Self { mesh, slices })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn slices(&self) -> &[Field] {
        &self.slices
    }

    pub fn initial(&self) -> &Field {
        &self.slices[0]
    }

    pub fn final_slice(&self) -> &Field {
        self.slices.last().expect("non-empty by construction")
    }

    /// Number of slices including the initial condition.
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub(crate) fn check_compatible(&self, other: &Trajectory) -> Result<()> {
        if self.mesh != other.mesh || self.len() != other.len() {
            return Err(Error::Shape(format!(
                "trajectories differ: {} slices on {:?} vs {} slices on {:?}",
                self.len(),
                self.mesh,
                other.len(),
                other.mesh
            )));
        }
        Ok(())
    }
}
