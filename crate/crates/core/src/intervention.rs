//! The intervention operator `Mu(t, x) = sup_z { u(t, x + Gamma(t, z)) + K(t, z) }`
//! over a finite impulse lattice.

use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::grid::ValueField;
use crate::model::{add, norm, GameModel, Point, MAX_DIM};
use crate::problem::{truncation_radius, ProblemSpec};

/// Finite impulse candidates, stored in scan order: increasing `|z|`, then
/// lexicographically. Maximizers are taken as the first candidate reaching the
/// maximum, which realizes the tie-break rule.
#[derive(Clone, Debug, PartialEq)]
pub struct ImpulseGrid {
    dim: usize,
    points: Vec<Point>,
    radius: f64,
    step: f64,
}

fn scan_order(dim: usize) -> impl Fn(&Point, &Point) -> Ordering {
    move |a, b| {
        norm(a, dim)
            .total_cmp(&norm(b, dim))
            .then_with(|| a[0].total_cmp(&b[0]))
            .then_with(|| a[1].total_cmp(&b[1]))
    }
}

impl ImpulseGrid {
    /// Uniform lattice with `counts[a]` points per axis on
    /// `Z ∩ [-r, r]^d`, keeping points with `|z| <= r`. `r` is the truncation
    /// radius unless a smaller override is given.
    pub fn new(spec: &ProblemSpec, counts: &[usize], radius: Option<f64>) -> Result<Self> {
        let d = spec.dim;
        if counts.len() != d || counts.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "impulse lattice needs {d} positive per-axis counts"
            )));
        }
        let r_max = truncation_radius(spec)?;
        let r = match radius {
            Some(r) if !(r >= 0.0 && r <= r_max) => {
                return Err(Error::InvalidArgument(format!(
                    "impulse radius override {r} not in [0, {r_max}]"
                )))
            }
            Some(r) => r,
            None => r_max,
        };
        let mut lo = [0.0; MAX_DIM];
        let mut hi = [0.0; MAX_DIM];
        for a in 0..d {
            lo[a] = spec.impulse_range.lo[a].max(-r);
            hi[a] = spec.impulse_range.hi[a].min(r);
            if lo[a] > hi[a] {
                return Err(Error::EmptyImpulseGrid);
            }
        }
        let axis = |a: usize, i: usize| -> f64 {
            let n = counts[a];
            if n == 1 || lo[a] == hi[a] {
                return 0.5 * (lo[a] + hi[a]);
            }
            let m = (n - 1) as f64;
            (lo[a] * (m - i as f64) + hi[a] * i as f64) / m
        };
        let total: usize = counts.iter().product();
        let mut points = Vec::with_capacity(total);
        for flat in 0..total {
            let mut z = [0.0; MAX_DIM];
            let mut rest = flat;
            for a in 0..d {
                z[a] = axis(a, rest % counts[a]);
                rest /= counts[a];
            }
            if norm(&z, d) <= r * (1.0 + 1e-12) {
                points.push(z);
            }
        }
        let step = (0..d)
            .map(|a| {
                if counts[a] > 1 {
                    (hi[a] - lo[a]) / (counts[a] - 1) as f64
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        Self::finish(d, points, r, step)
    }

    /// Lattice whose spacing is at most `step` along each axis.
    pub fn with_step(spec: &ProblemSpec, step: f64, radius: Option<f64>) -> Result<Self> {
        Self::new(spec, &Self::step_counts(spec, step, radius)?, radius)
    }

    /// Per-axis point counts used by [`ImpulseGrid::with_step`].
    pub fn step_counts(spec: &ProblemSpec, step: f64, radius: Option<f64>) -> Result<Vec<usize>> {
        if !(step > 0.0) {
            return Err(Error::InvalidArgument(
                "impulse lattice step must be positive".into(),
            ));
        }
        let r = match radius {
            Some(r) => r,
            None => truncation_radius(spec)?,
        };
        let counts: Vec<usize> = (0..spec.dim)
            .map(|a| {
                let lo = spec.impulse_range.lo[a].max(-r);
                let hi = spec.impulse_range.hi[a].min(r);
                let cells = libm::ceil((hi - lo).max(0.0) / step - 1e-9);
                cells as usize + 1
            })
            .collect();
        Ok(counts)
    }

    /// Explicit candidate list (reordered into scan order, duplicates removed).
    pub fn from_points(dim: usize, points: &[Point]) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidArgument(format!(
                "dimension {dim} not in 1..={MAX_DIM}"
            )));
        }
        let radius = points.iter().map(|z| norm(z, dim)).fold(0.0, f64::max);
        Self::finish(dim, points.to_vec(), radius, 0.0)
    }

    fn finish(dim: usize, mut points: Vec<Point>, radius: f64, step: f64) -> Result<Self> {
        for z in &mut points {
            for v in &mut z[dim..] {
                *v = 0.0;
            }
            // Normalize -0.0 so ordering and output are sign-stable.
            for v in &mut z[..dim] {
                *v += 0.0;
            }
        }
        points.sort_by(scan_order(dim));
        points.dedup();
        if points.is_empty() {
            return Err(Error::EmptyImpulseGrid);
        }
        Ok(ImpulseGrid {
            dim,
            points,
            radius,
            step,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point {
        self.points[i]
    }

    /// Truncation radius the lattice was built for.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Largest per-axis lattice spacing (0 for explicit point lists).
    pub fn step(&self) -> f64 {
        self.step
    }
}

/// `Mu` with its maximizers.
#[derive(Clone, Debug, PartialEq)]
pub struct InterventionResult {
    pub values: ValueField,
    /// Index into the impulse grid of the maximizing `z*` at each node.
    pub argmax: Vec<usize>,
    /// `Mu(x) - u(x)` at each node.
    pub gain: Vec<f64>,
}

impl InterventionResult {
    pub fn impulse(&self, zg: &ImpulseGrid, node: usize) -> Point {
        zg.point(self.argmax[node])
    }
}

pub(crate) struct Candidates {
    shift: Vec<Point>,
    cost: Vec<f64>,
}

impl Candidates {
    pub(crate) fn new<M: GameModel + ?Sized>(model: &M, t: f64, zg: &ImpulseGrid) -> Result<Self> {
        if zg.is_empty() {
            return Err(Error::EmptyImpulseGrid);
        }
        if zg.dim() != model.dim() {
            return Err(Error::InvalidArgument(
                "impulse grid dimension differs from the model".into(),
            ));
        }
        Ok(Candidates {
            shift: zg
                .points()
                .iter()
                .map(|z| model.displacement(t, z))
                .collect(),
            cost: zg
                .points()
                .iter()
                .map(|z| model.impulse_cost(t, z))
                .collect(),
        })
    }

    /// `(max_i { u(x + Gamma_i) + K_i }, first maximizing i)`.
    pub(crate) fn best(&self, u: &ValueField, x: &Point) -> (f64, usize) {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (i, (dx, k)) in self.shift.iter().zip(&self.cost).enumerate() {
            let v = u.interpolate(&add(x, dx)) + k;
            if v > best {
                best = v;
                arg = i;
            }
        }
        (best, arg)
    }
}

fn check_finite(u: &ValueField) -> Result<()> {
    match u.first_non_finite() {
        Some((node, value)) => Err(Error::NonFinite { node, value }),
        None => Ok(()),
    }
}

pub fn apply_intervention<M: GameModel + ?Sized>(
    model: &M,
    u: &ValueField,
    t: f64,
    zg: &ImpulseGrid,
) -> Result<InterventionResult> {
    apply_intervention_in(&Sequential, model, u, t, zg)
}

/// [`apply_intervention`] with per-node work spread over `exec`.
pub fn apply_intervention_in<E: Executor, M: GameModel + ?Sized>(
    exec: &E,
    model: &M,
    u: &ValueField,
    t: f64,
    zg: &ImpulseGrid,
) -> Result<InterventionResult> {
    check_finite(u)?;
    let cand = Candidates::new(model, t, zg)?;
    Ok(intervene(exec, &cand, u))
}

pub(crate) fn intervene<E: Executor>(
    exec: &E,
    cand: &Candidates,
    u: &ValueField,
) -> InterventionResult {
    let grid = *u.grid();
    let best = exec.map(grid.len(), |n| cand.best(u, &grid.point(n)));
    let mut values = Vec::with_capacity(best.len());
    let mut argmax = Vec::with_capacity(best.len());
    let mut gain = Vec::with_capacity(best.len());
    for (n, (v, i)) in best.into_iter().enumerate() {
        values.push(v);
        argmax.push(i);
        gain.push(v - u.values()[n]);
    }
    InterventionResult {
        values: ValueField::new(grid, values).expect("one value per node"),
        argmax,
        gain,
    }
}

/// Best single impulse from an arbitrary point `x` inside the box:
/// `(z*, Mu(t, x) - u(t, x))`.
pub fn best_impulse<M: GameModel + ?Sized>(
    model: &M,
    u: &ValueField,
    t: f64,
    x: &Point,
    zg: &ImpulseGrid,
) -> Result<(Point, f64)> {
    check_finite(u)?;
    let g = u.grid();
    if (0..g.dim()).any(|a| !(g.lo()[a] <= x[a] && x[a] <= g.hi()[a])) {
        return Err(Error::InvalidArgument(
            "point lies outside the grid box".into(),
        ));
    }
    let cand = Candidates::new(model, t, zg)?;
    let (v, i) = cand.best(u, x);
    Ok((zg.point(i), v - u.interpolate(x)))
}
