//! Truncated space-time lattices and grid-valued fields.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Point, MAX_DIM};
use crate::rational::Rational;

/// How the artificial box boundary is treated.
///
/// `ValueExtrapolation` copies the nearest interior update onto boundary
/// nodes and clamps off-box lookups to the box. `ReflectedDrift` keeps a full
/// stencil on the boundary with mirrored ghost nodes and the outward drift
/// component removed, and reflects off-box lookups back into the box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryPolicy {
    #[default]
    ValueExtrapolation,
    ReflectedDrift,
}

/// Uniform tensor lattice on `[lo, hi]` (one axis per state dimension).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpaceGrid {
    dim: usize,
    lo: Point,
    hi: Point,
    nodes: [usize; MAX_DIM],
    boundary: BoundaryPolicy,
}

impl SpaceGrid {
    pub fn new(lo: &[f64], hi: &[f64], nodes: &[usize], boundary: BoundaryPolicy) -> Result<Self> {
        let dim = lo.len();
        if dim == 0 || dim > MAX_DIM || hi.len() != dim || nodes.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "box and node counts must share a dimension in 1..={MAX_DIM}"
            )));
        }
        let mut g = SpaceGrid {
            dim,
            lo: [0.0; MAX_DIM],
            hi: [0.0; MAX_DIM],
            nodes: [1; MAX_DIM],
            boundary,
        };
        for a in 0..dim {
            if !(lo[a].is_finite() && hi[a].is_finite() && lo[a] < hi[a]) {
                return Err(Error::InvalidGrid(format!("axis {a}: need finite lo < hi")));
            }
            if nodes[a] < 3 {
                return Err(Error::InvalidGrid(format!(
                    "axis {a}: need at least 3 nodes"
                )));
            }
            g.lo[a] = lo[a];
            g.hi[a] = hi[a];
            g.nodes[a] = nodes[a];
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lo(&self) -> &Point {
        &self.lo
    }

    pub fn hi(&self) -> &Point {
        &self.hi
    }

    pub fn nodes(&self, axis: usize) -> usize {
        self.nodes[axis]
    }

    pub fn boundary(&self) -> BoundaryPolicy {
        self.boundary
    }

    pub fn with_boundary(mut self, boundary: BoundaryPolicy) -> Self {
        self.boundary = boundary;
        self
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.nodes[0] * self.nodes[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.nodes[axis] - 1) as f64
    }

    /// Largest spatial step over all active axes.
    pub fn max_step(&self) -> f64 {
        (0..self.dim).map(|a| self.step(a)).fold(0.0, f64::max)
    }

    /// Coordinate of the `i`-th node on `axis`. Symmetric boxes give exactly
    /// mirrored coordinates.
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        let n = (self.nodes[axis] - 1) as f64;
        (self.lo[axis] * (n - i as f64) + self.hi[axis] * i as f64) / n
    }

    /// Per-axis indices of a flat node index (axis 0 varies fastest).
    pub fn unflatten(&self, idx: usize) -> [usize; MAX_DIM] {
        [idx % self.nodes[0], idx / self.nodes[0]]
    }

    pub fn flatten(&self, ij: [usize; MAX_DIM]) -> usize {
        ij[0] + self.nodes[0] * ij[1]
    }

    /// Offset between flat indices of neighbours along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        if axis == 0 {
            1
        } else {
            self.nodes[0]
        }
    }

    pub fn point(&self, idx: usize) -> Point {
        let ij = self.unflatten(idx);
        let mut p = [0.0; MAX_DIM];
        for a in 0..self.dim {
            p[a] = self.coord(a, ij[a]);
        }
        p
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let ij = self.unflatten(idx);
        (0..self.dim).any(|a| ij[a] == 0 || ij[a] == self.nodes[a] - 1)
    }

    /// Nearest node that is interior along every axis.
    pub fn inward_neighbour(&self, idx: usize) -> usize {
        let mut ij = self.unflatten(idx);
        for a in 0..self.dim {
            ij[a] = ij[a].clamp(1, self.nodes[a] - 2);
        }
        self.flatten(ij)
    }

    /// Maps an arbitrary coordinate into the box according to the boundary policy.
    pub fn fold(&self, axis: usize, x: f64) -> f64 {
        let (lo, hi) = (self.lo[axis], self.hi[axis]);
        match self.boundary {
            BoundaryPolicy::ValueExtrapolation => x.clamp(lo, hi),
            BoundaryPolicy::ReflectedDrift => {
                if (lo..=hi).contains(&x) {
                    return x;
                }
                if !x.is_finite() {
                    return x.clamp(lo, hi);
                }
                let width = hi - lo;
                let mut r = libm::fmod(x - lo, 2.0 * width);
                if r < 0.0 {
                    r += 2.0 * width;
                }
                if r > width {
                    r = 2.0 * width - r;
                }
                lo + r
            }
        }
    }

    /// Cell index and local weight of a coordinate after folding into the box.
    fn locate(&self, axis: usize, x: f64) -> (usize, f64) {
        let n = self.nodes[axis];
        let s = (self.fold(axis, x) - self.lo[axis]) / self.step(axis);
        let s = s.clamp(0.0, (n - 1) as f64);
        let i = (libm::floor(s) as usize).min(n - 2);
        (i, s - i as f64)
    }

    /// Multilinear interpolation of nodal `values` at `x`.
    pub fn interpolate(&self, values: &[f64], x: &Point) -> f64 {
        let (i, w) = self.locate(0, x[0]);
        if self.dim == 1 {
            let a = values[i];
            return a + w * (values[i + 1] - a);
        }
        let (j, v) = self.locate(1, x[1]);
        let n0 = self.nodes[0];
        let u00 = values[i + n0 * j];
        let u10 = values[i + 1 + n0 * j];
        let u01 = values[i + n0 * (j + 1)];
        let u11 = values[i + 1 + n0 * (j + 1)];
        u00 + w * (u10 - u00) + v * (u01 - u00) + w * v * (u11 - u10 - u01 + u00)
    }

    /// Flat index of the node closest to `x` (after folding into the box).
    pub fn nearest_node(&self, x: &Point) -> usize {
        let mut ij = [0; MAX_DIM];
        for a in 0..self.dim {
            let s = (self.fold(a, x[a]) - self.lo[a]) / self.step(a);
            let s = s.clamp(0.0, (self.nodes[a] - 1) as f64);
            ij[a] = libm::round(s) as usize;
        }
        self.flatten(ij)
    }

    /// Whether the coarse grid's nodes are every other node of `self`.
    pub fn refines(&self, coarse: &SpaceGrid) -> bool {
        self.dim == coarse.dim
            && self.lo == coarse.lo
            && self.hi == coarse.hi
            && (0..self.dim).all(|a| self.nodes[a] - 1 == 2 * (coarse.nodes[a] - 1))
    }
}

/// Uniform time partition `t_k = k T / N_t` of `[0, T]`; every node is rational.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeGrid {
    horizon: Rational,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: Rational, steps: usize) -> Result<Self> {
        if !horizon.is_positive() {
            return Err(Error::InvalidGrid("horizon must be positive".into()));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("need at least one time step".into()));
        }
        horizon.partition_node(steps, steps)?;
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> Rational {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon.to_f64() / self.steps as f64
    }

    /// Exact grid time `t_k`.
    pub fn time(&self, k: usize) -> Rational {
        self.horizon
            .partition_node(k, self.steps)
            .expect("grid time representable; checked at construction")
    }

    pub fn time_f64(&self, k: usize) -> f64 {
        if k == self.steps {
            return self.horizon.to_f64();
        }
        self.time(k).to_f64()
    }

    /// Index `k` with `t_k == t`, if `t` is a grid time.
    pub fn index_of(&self, t: Rational) -> Option<usize> {
        (0..=self.steps).find(|&k| self.time(k) == t)
    }
}

/// Space-time lattice used by the solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub space: SpaceGrid,
    pub time: TimeGrid,
}

impl Grid {
    pub fn new(space: SpaceGrid, time: TimeGrid) -> Self {
        Grid { space, time }
    }
}

/// Nodal values over a [`SpaceGrid`], read off-node by multilinear interpolation.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueField {
    grid: SpaceGrid,
    values: Vec<f64>,
}

impl ValueField {
    pub fn new(grid: SpaceGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "field has {} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(ValueField { grid, values })
    }

    pub fn constant(grid: SpaceGrid, value: f64) -> Self {
        ValueField {
            grid,
            values: alloc::vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: SpaceGrid, f: impl Fn(&Point) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        ValueField { grid, values }
    }

    pub fn grid(&self) -> &SpaceGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn interpolate(&self, x: &Point) -> f64 {
        self.grid.interpolate(&self.values, x)
    }

    /// First non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<(usize, f64)> {
        self.values
            .iter()
            .copied()
            .enumerate()
            .find(|(_, v)| !v.is_finite())
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ValueField {
        ValueField {
            grid: self.grid,
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ValueField, f: impl Fn(f64, f64) -> f64) -> ValueField {
        ValueField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }
}
