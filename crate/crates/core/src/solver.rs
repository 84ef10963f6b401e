//! Backward solver for the discrete quasi-variational inequality
//!
//! ```text
//! min{ -min_b [ (u_{k+1} - u_k)/dt + L^b u_k - rho u_k + f_rho^b ],  u_k - M u_k } = 0
//! ```
//!
//! with upwind drift and central diffusion differences (a monotone scheme).
//! Each step runs the obstacle fixed point `psi <- M u`, and for a frozen
//! obstacle solves `min{ PDE(u), u - psi } = 0` exactly: implicit steps use
//! Howard iteration over the act/hold choice wrapped around Howard iteration
//! over the sampled control set, explicit steps reduce to `max(C, psi)`.
//! For `rho > 0` the data are replaced by `e^{rho t} f`, `e^{rho T} g` and
//! `e^{rho t} K`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::grid::{BoundaryPolicy, Grid, SpaceGrid, TimeGrid, ValueField};
use crate::intervention::{intervene, Candidates, ImpulseGrid, InterventionResult};
use crate::linalg::Banded;
use crate::model::{Discounted, GameModel, Point};
use crate::problem::ProblemSpec;

/// Cap on Howard rounds in each policy-iteration loop.
pub const POLICY_ROUNDS_CAP: usize = 100;
/// Nodewise change at which the obstacle fixed point stops.
pub const OBSTACLE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeStepping {
    #[default]
    Implicit,
    Explicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scheme {
    pub stepping: TimeStepping,
    /// Policy-iteration tolerance; also the slack in the act flag `u <= Mu + tol`.
    pub pi_tol: f64,
    /// Cap on obstacle fixed-point iterations per layer.
    pub obstacle_cap: usize,
    /// Discount `rho >= 0`.
    pub rho: f64,
}

impl Default for Scheme {
    fn default() -> Self {
        Scheme {
            stepping: TimeStepping::Implicit,
            pi_tol: 1e-10,
            obstacle_cap: 1000,
            rho: 0.0,
        }
    }
}

impl Scheme {
    pub fn explicit() -> Self {
        Scheme {
            stepping: TimeStepping::Explicit,
            ..Scheme::default()
        }
    }

    pub fn with_rho(self, rho: f64) -> Self {
        Scheme { rho, ..self }
    }

    fn check(&self) -> Result<()> {
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "discount must be finite and >= 0, got {}",
                self.rho
            )));
        }
        if !(self.pi_tol >= 0.0) || self.obstacle_cap == 0 {
            return Err(Error::InvalidArgument(
                "need pi_tol >= 0 and obstacle_cap >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Generator row `L^b u_i = sum_j c_j (u_j - u_i)` for one node and control.
#[derive(Clone, Copy, Debug, Default)]
struct Row {
    nbr: [usize; 4],
    coef: [f64; 4],
    len: usize,
    total: f64,
}

/// Finite-difference generator for every (node, control) pair.
///
/// Under `ValueExtrapolation` boundary nodes carry the row
/// `u_i - u_inward = 0` instead of a generator row.
#[derive(Clone, Debug)]
pub struct Stencil {
    grid: SpaceGrid,
    controls: usize,
    copy: Vec<Option<usize>>,
    rows: Vec<Row>,
    bandwidth: usize,
}

impl Stencil {
    pub fn new<M: GameModel + ?Sized>(model: &M, grid: &SpaceGrid) -> Result<Self> {
        if model.dim() != grid.dim() {
            return Err(Error::InvalidGrid(
                "grid and model dimensions differ".into(),
            ));
        }
        let nb = model.control_count();
        if nb == 0 {
            return Err(Error::InvalidProblem("empty control sample".into()));
        }
        let n = grid.len();
        let d = grid.dim();
        let copy: Vec<Option<usize>> = (0..n)
            .map(|i| match grid.boundary() {
                BoundaryPolicy::ValueExtrapolation if grid.is_boundary(i) => {
                    Some(grid.inward_neighbour(i))
                }
                _ => None,
            })
            .collect();
        let mut rows = vec![Row::default(); n * nb];
        for i in 0..n {
            if copy[i].is_some() {
                continue;
            }
            let x = grid.point(i);
            let ij = grid.unflatten(i);
            for b in 0..nb {
                let ctl = model.control(b);
                let mu = model.drift(&x, &ctl);
                let sig = model.diffusion(&x, &ctl);
                let row = &mut rows[i * nb + b];
                for a in 0..d {
                    let h = grid.step(a);
                    let s = grid.stride(a);
                    let last = grid.nodes(a) - 1;
                    let diff = 0.5 * sig[a] * sig[a] / (h * h);
                    let up = mu[a].max(0.0) / h;
                    let down = (-mu[a]).max(0.0) / h;
                    // Ghost nodes mirror the first interior node; the outward drift is dropped.
                    let (plus, cplus) = if ij[a] < last {
                        (i + s, diff + up)
                    } else {
                        (i - s, diff)
                    };
                    let (minus, cminus) = if ij[a] > 0 {
                        (i - s, diff + down)
                    } else {
                        (i + s, diff)
                    };
                    for (j, c) in [(plus, cplus), (minus, cminus)] {
                        row.nbr[row.len] = j;
                        row.coef[row.len] = c;
                        row.len += 1;
                        row.total += c;
                    }
                }
                if !row.total.is_finite() {
                    return Err(Error::NonFinite {
                        node: i,
                        value: row.total,
                    });
                }
            }
        }
        let bandwidth = if d == 1 { 1 } else { grid.stride(1) + 1 };
        Ok(Stencil {
            grid: *grid,
            controls: nb,
            copy,
            rows,
            bandwidth,
        })
    }

    pub fn grid(&self) -> &SpaceGrid {
        &self.grid
    }

    /// Inward node whose value a boundary node copies, if any.
    pub fn copy_source(&self, i: usize) -> Option<usize> {
        self.copy[i]
    }

    /// `L^b u` at node `i` (zero on copy rows).
    pub fn generator(&self, u: &[f64], i: usize, b: usize) -> f64 {
        let row = &self.rows[i * self.controls + b];
        let ui = u[i];
        let mut s = 0.0;
        for k in 0..row.len {
            s += row.coef[k] * (u[row.nbr[k]] - ui);
        }
        s
    }

    /// Largest total jump rate `sum_j c_j` over all rows.
    pub fn max_rate(&self) -> f64 {
        self.rows.iter().map(|r| r.total).fold(0.0, f64::max)
    }
}

/// `(min_b H_b(u)_i, first minimizing b)` with `H_b = L^b u + f^b`.
fn min_hamiltonian(st: &Stencil, fvals: &[f64], u: &[f64], i: usize) -> (f64, usize) {
    let nb = st.controls;
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for b in 0..nb {
        let h = st.generator(u, i, b) + fvals[i * nb + b];
        if h < best {
            best = h;
            arg = b;
        }
    }
    (best, arg)
}

/// Data shared by all computations on one time layer.
struct Layer<'a> {
    st: &'a Stencil,
    dt: f64,
    rho: f64,
    pi_tol: f64,
    step: usize,
    /// `f_rho(t_k, x_i, b)` at index `i * nb + b`.
    fvals: Vec<f64>,
}

impl<'a> Layer<'a> {
    fn new<E: Executor, M: GameModel + ?Sized>(
        exec: &E,
        model: &M,
        st: &'a Stencil,
        time: &TimeGrid,
        scheme: &Scheme,
        k: usize,
    ) -> Self {
        let t = time.time_f64(k);
        let nb = st.controls;
        let grid = st.grid;
        let per_node = exec.map(grid.len(), |i| {
            let x = grid.point(i);
            (0..nb)
                .map(|b| model.running_gain(t, &x, &model.control(b)))
                .collect::<Vec<f64>>()
        });
        Layer {
            st,
            dt: time.dt(),
            rho: scheme.rho,
            pi_tol: scheme.pi_tol,
            step: k,
            fvals: per_node.concat(),
        }
    }

    /// Argmin controls at `u`; copy rows take the inward node's control.
    fn controls<E: Executor>(&self, exec: &E, u: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let st = self.st;
        let pairs = exec.map(u.len(), |i| match st.copy[i] {
            Some(_) => (0.0, 0),
            None => min_hamiltonian(st, &self.fvals, u, i),
        });
        let (mut h, mut b): (Vec<f64>, Vec<usize>) = pairs.into_iter().unzip();
        for i in 0..u.len() {
            if let Some(j) = st.copy[i] {
                h[i] = h[j];
                b[i] = b[j];
            }
        }
        (h, b)
    }

    /// Hold-branch residual `max_b X_b(u)_i`, scaled by `dt` (copy rows: `u_i - u_inward`).
    fn hold_residual(&self, u: &[f64], u_next: &[f64], minh: &[f64], i: usize) -> f64 {
        match self.st.copy[i] {
            Some(j) => u[i] - u[j],
            None => (1.0 + self.rho * self.dt) * u[i] - u_next[i] - self.dt * minh[i],
        }
    }

    /// Solves the linear system of a fixed (act, control) policy in
    /// correction form `A (u - u_next) = r`, so constant data stay exact.
    fn solve_policy(
        &self,
        u_next: &[f64],
        psi: Option<&[f64]>,
        act: &[bool],
        b: &[usize],
    ) -> Result<Vec<f64>> {
        let st = self.st;
        let n = u_next.len();
        let nb = st.controls;
        let mut a = Banded::zeros(n, st.bandwidth);
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            if act[i] {
                a.add(i, i, 1.0);
                rhs[i] = psi.expect("act rows need an obstacle")[i] - u_next[i];
                continue;
            }
            match st.copy[i] {
                Some(j) => {
                    a.add(i, i, 1.0);
                    a.add(i, j, -1.0);
                    rhs[i] = u_next[j] - u_next[i];
                }
                None => {
                    let row = &st.rows[i * nb + b[i]];
                    a.add(i, i, 1.0 + self.rho * self.dt + self.dt * row.total);
                    for k in 0..row.len {
                        a.add(i, row.nbr[k], -self.dt * row.coef[k]);
                    }
                    let h = st.generator(u_next, i, b[i]) + self.fvals[i * nb + b[i]];
                    rhs[i] = self.dt * h - self.rho * self.dt * u_next[i];
                }
            }
        }
        a.solve(&mut rhs)?;
        let mut u: Vec<f64> = u_next.iter().zip(&rhs).map(|(u, d)| u + d).collect();
        if let Some(psi) = psi {
            for i in 0..n {
                if act[i] {
                    u[i] = psi[i];
                }
            }
        }
        Ok(u)
    }

    /// Solves `min{ max_b X_b(u), u - psi } = 0` (no obstacle when `psi` is
    /// `None`), warm-started from `act` and `b`, which are updated in place.
    /// Returns the solution and the number of linear solves.
    fn implicit_local<E: Executor>(
        &self,
        exec: &E,
        u_next: &[f64],
        psi: Option<&[f64]>,
        act: &mut Vec<bool>,
        b: &mut Vec<usize>,
    ) -> Result<(Vec<f64>, usize)> {
        let n = u_next.len();
        if psi.is_none() {
            act.iter_mut().for_each(|a| *a = false);
        }
        let mut solves = 0;
        let mut prev_outer: Option<Vec<f64>> = None;
        for _ in 0..POLICY_ROUNDS_CAP {
            // Howard iteration over the control sample with the act set frozen.
            let mut prev: Option<Vec<f64>> = None;
            let mut converged = None;
            for _ in 0..POLICY_ROUNDS_CAP {
                let u = self.solve_policy(u_next, psi, act, b)?;
                solves += 1;
                let (minh, nb) = self.controls(exec, &u);
                let unchanged = (0..n).all(|i| act[i] || b[i] == nb[i]);
                let small = prev
                    .as_ref()
                    .is_some_and(|p| sup_diff(p, &u) <= self.pi_tol);
                *b = nb;
                if unchanged || small {
                    converged = Some((u, minh));
                    break;
                }
                prev = Some(u);
            }
            let Some((u, minh)) = converged else {
                return Err(Error::PolicyIterationNotConverged {
                    step: self.step,
                    rounds: POLICY_ROUNDS_CAP,
                });
            };
            let Some(psi) = psi else {
                return Ok((u, solves));
            };
            let new_act: Vec<bool> = (0..n)
                .map(|i| u[i] - psi[i] < self.hold_residual(&u, u_next, &minh, i))
                .collect();
            let small = prev_outer
                .as_ref()
                .is_some_and(|p| sup_diff(p, &u) <= self.pi_tol);
            let unchanged = new_act == *act;
            *act = new_act;
            if unchanged || small {
                return Ok((u, solves));
            }
            prev_outer = Some(u);
        }
        Err(Error::PolicyIterationNotConverged {
            step: self.step,
            rounds: POLICY_ROUNDS_CAP,
        })
    }

    /// Explicit PDE update `C = (u_next + dt min_b H_b(u_next)) / (1 + rho dt)`.
    fn explicit_update<E: Executor>(
        &self,
        exec: &E,
        u_next: &[f64],
    ) -> Result<(Vec<f64>, Vec<usize>)> {
        let limit = 1.0 / self.st.max_rate();
        if self.dt > limit {
            return Err(Error::CflViolated { dt: self.dt, limit });
        }
        let (minh, b) = self.controls(exec, u_next);
        let mut c: Vec<f64> = (0..u_next.len())
            .map(|i| (u_next[i] + self.dt * minh[i]) / (1.0 + self.rho * self.dt))
            .collect();
        for i in 0..c.len() {
            if let Some(j) = self.st.copy[i] {
                c[i] = c[j];
            }
        }
        Ok((c, b))
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(node) => Err(Error::NonFinite {
            node,
            value: values[node],
        }),
        None => Ok(()),
    }
}

/// Runs `u <- local(M u)` from `init` until the nodewise change is at most
/// [`OBSTACLE_TOL`]. Returns the fixed point, `M` of it and the iteration count.
fn obstacle_fixed_point<E: Executor>(
    exec: &E,
    cand: &Candidates,
    grid: SpaceGrid,
    cap: usize,
    init: Vec<f64>,
    mut local: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<(Vec<f64>, InterventionResult, usize)> {
    let mut u = init;
    let mut change = f64::INFINITY;
    for it in 1..=cap {
        let field = ValueField::new(grid, u).expect("layer length matches grid");
        let m = intervene(exec, cand, &field);
        let next = local(m.values.values())?;
        check_finite(&next)?;
        u = field.into_values();
        change = sup_diff(&u, &next);
        if change <= OBSTACLE_TOL {
            let m = if change == 0.0 {
                m
            } else {
                intervene(
                    exec,
                    cand,
                    &ValueField::new(grid, next.clone()).expect("length"),
                )
            };
            return Ok((next, m, it));
        }
        u = next;
    }
    Err(Error::ObstacleNotConverged {
        iterations: cap,
        residual: change,
    })
}

/// Result of one backward step (or of the terminal layer).
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub values: ValueField,
    /// Index of the minimizing control per node (empty for the terminal layer).
    pub controls: Vec<usize>,
    /// `u <= Mu + pi_tol`.
    pub act: Vec<bool>,
    /// Index of the maximizing impulse per node.
    pub impulse: Vec<usize>,
    /// `M u` of the returned layer.
    pub intervention: ValueField,
    pub linear_solves: usize,
    pub obstacle_iterations: usize,
}

fn finish_step(
    u: Vec<f64>,
    m: InterventionResult,
    controls: Vec<usize>,
    tol: f64,
    solves: usize,
    its: usize,
) -> Step {
    let act = u
        .iter()
        .zip(m.values.values())
        .map(|(u, mu)| *u <= mu + tol)
        .collect();
    let grid = *m.values.grid();
    Step {
        values: ValueField::new(grid, u).expect("length"),
        controls,
        act,
        impulse: m.argmax,
        intervention: m.values,
        linear_solves: solves,
        obstacle_iterations: its,
    }
}

fn check_setup<M: GameModel + ?Sized>(
    model: &M,
    grid: &Grid,
    zg: &ImpulseGrid,
    scheme: &Scheme,
) -> Result<()> {
    scheme.check()?;
    if grid.space.dim() != model.dim() || zg.dim() != model.dim() {
        return Err(Error::InvalidGrid(
            "grid, impulse lattice and model dimensions differ".into(),
        ));
    }
    if grid.time.horizon() != model.horizon() {
        return Err(Error::InvalidGrid(format!(
            "time grid horizon {} differs from the model horizon {}",
            grid.time.horizon(),
            model.horizon()
        )));
    }
    Ok(())
}

fn terminal_step<E: Executor, M: GameModel + ?Sized>(
    exec: &E,
    dm: &M,
    grid: &Grid,
    zg: &ImpulseGrid,
    scheme: &Scheme,
) -> Result<Step> {
    let space = grid.space;
    let t = grid.time.horizon().to_f64();
    let g: Vec<f64> = exec.map(space.len(), |i| dm.terminal_gain(&space.point(i)));
    check_finite(&g)?;
    let cand = Candidates::new(dm, t, zg)?;
    let (u, m, its) =
        obstacle_fixed_point(exec, &cand, space, scheme.obstacle_cap, g.clone(), |psi| {
            Ok(g.iter().zip(psi).map(|(g, p)| g.max(*p)).collect())
        })?;
    Ok(finish_step(u, m, Vec::new(), scheme.pi_tol, 0, its))
}

fn backward_step<E: Executor, M: GameModel + ?Sized>(
    exec: &E,
    dm: &M,
    st: &Stencil,
    grid: &Grid,
    zg: &ImpulseGrid,
    scheme: &Scheme,
    u_next: &[f64],
    k: usize,
) -> Result<Step> {
    check_finite(u_next)?;
    let layer = Layer::new(exec, dm, st, &grid.time, scheme, k);
    let cand = Candidates::new(dm, grid.time.time_f64(k), zg)?;
    let n = u_next.len();
    match scheme.stepping {
        TimeStepping::Implicit => {
            let mut act = vec![false; n];
            let mut b = vec![0; n];
            let (u0, mut solves) = layer.implicit_local(exec, u_next, None, &mut act, &mut b)?;
            check_finite(&u0)?;
            let (u, m, its) =
                obstacle_fixed_point(exec, &cand, grid.space, scheme.obstacle_cap, u0, |psi| {
                    let (u, s) = layer.implicit_local(exec, u_next, Some(psi), &mut act, &mut b)?;
                    solves += s;
                    Ok(u)
                })?;
            let (_, controls) = layer.controls(exec, &u);
            Ok(finish_step(u, m, controls, scheme.pi_tol, solves, its))
        }
        TimeStepping::Explicit => {
            let (c, controls) = layer.explicit_update(exec, u_next)?;
            check_finite(&c)?;
            let (u, m, its) = obstacle_fixed_point(
                exec,
                &cand,
                grid.space,
                scheme.obstacle_cap,
                c.clone(),
                |psi| {
                    let mut u: Vec<f64> = c.iter().zip(psi).map(|(c, p)| c.max(*p)).collect();
                    for i in 0..n {
                        if let Some(j) = st.copy[i] {
                            u[i] = u[j].max(psi[i]);
                        }
                    }
                    Ok(u)
                },
            )?;
            Ok(finish_step(u, m, controls, scheme.pi_tol, 0, its))
        }
    }
}

/// `u(T, .)`: the limit of `u <- max(g, M u)` from `u = g` (with `g_rho`).
pub fn terminal_condition<M: GameModel + ?Sized>(
    model: &M,
    grid: &Grid,
    zg: &ImpulseGrid,
    scheme: &Scheme,
) -> Result<ValueField> {
    check_setup(model, grid, zg, scheme)?;
    let dm = Discounted::new(model, scheme.rho);
    Ok(terminal_step(&Sequential, &dm, grid, zg, scheme)?.values)
}

/// One backward step from layer `k + 1` (`u_next`) to layer `k`.
pub fn step_backward<M: GameModel + ?Sized>(
    model: &M,
    grid: &Grid,
    zg: &ImpulseGrid,
    scheme: &Scheme,
    u_next: &ValueField,
    k: usize,
) -> Result<Step> {
    check_setup(model, grid, zg, scheme)?;
    if k >= grid.time.steps() {
        return Err(Error::InvalidArgument(format!(
            "step index {k} must be below {}",
            grid.time.steps()
        )));
    }
    if *u_next.grid() != grid.space {
        return Err(Error::InvalidGrid(
            "u_next lives on a different spatial grid".into(),
        ));
    }
    let dm = Discounted::new(model, scheme.rho);
    let st = Stencil::new(&dm, &grid.space)?;
    backward_step(&Sequential, &dm, &st, grid, zg, scheme, u_next.values(), k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StepDiagnostics {
    pub linear_solves: usize,
    pub obstacle_iterations: usize,
}

/// Every layer of a solve together with the recorded policies.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub grid: Grid,
    pub impulses: ImpulseGrid,
    pub scheme: Scheme,
    /// `u(t_k, .)` for `k = 0..=N`.
    pub layers: Vec<ValueField>,
    /// Minimizing control index per node for `k = 0..N`.
    pub controls: Vec<Vec<usize>>,
    /// Act flags for `k = 0..=N`.
    pub act: Vec<Vec<bool>>,
    /// Maximizing impulse index per node for `k = 0..=N`.
    pub impulse: Vec<Vec<usize>>,
    /// `M u(t_k, .)` for `k = 0..=N`.
    pub intervention: Vec<ValueField>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// FNV-1a hash of the grid sizes and every layer's bits.
    pub id: u64,
}

impl Solution {
    pub fn rho(&self) -> f64 {
        self.scheme.rho
    }

    pub fn steps(&self) -> usize {
        self.grid.time.steps()
    }

    pub fn layer(&self, k: usize) -> &ValueField {
        &self.layers[k]
    }

    /// `u(t_k, x)` by interpolation.
    pub fn value(&self, k: usize, x: &Point) -> f64 {
        self.layers[k].interpolate(x)
    }

    pub fn check_complete(&self) -> Result<()> {
        let n = self.steps();
        let len = self.grid.space.len();
        let ok = self.layers.len() == n + 1
            && self.controls.len() == n
            && self.act.len() == n + 1
            && self.impulse.len() == n + 1
            && self.intervention.len() == n + 1
            && self.layers.iter().all(|l| *l.grid() == self.grid.space)
            && self.controls.iter().all(|c| c.len() == len)
            && self.act.iter().all(|c| c.len() == len)
            && self
                .impulse
                .iter()
                .all(|c| c.len() == len && c.iter().all(|i| *i < self.impulses.len()));
        if ok {
            Ok(())
        } else {
            Err(Error::IncompleteSolution(format!(
                "expected {} layers with {} nodes each",
                n + 1,
                len
            )))
        }
    }

    fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for byte in x.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(self.grid.space.len() as u64);
        eat(self.steps() as u64);
        eat(self.impulses.len() as u64);
        eat(self.scheme.rho.to_bits());
        for layer in &self.layers {
            for v in layer.values() {
                eat(v.to_bits());
            }
        }
        h
    }
}

pub fn solve<M: GameModel + ?Sized>(
    model: &M,
    grid: &Grid,
    zg: &ImpulseGrid,
    scheme: &Scheme,
) -> Result<Solution> {
    solve_in(&Sequential, model, grid, zg, scheme)
}

/// Terminal layer, then backward steps `k = N-1, ..., 0`.
pub fn solve_in<E: Executor, M: GameModel + ?Sized>(
    exec: &E,
    model: &M,
    grid: &Grid,
    zg: &ImpulseGrid,
    scheme: &Scheme,
) -> Result<Solution> {
    check_setup(model, grid, zg, scheme)?;
    let dm = Discounted::new(model, scheme.rho);
    let st = Stencil::new(&dm, &grid.space)?;
    let n = grid.time.steps();
    let mut steps = Vec::with_capacity(n + 1);
    steps.push(terminal_step(exec, &dm, grid, zg, scheme)?);
    for k in (0..n).rev() {
        let next = steps.last().expect("terminal layer pushed").values.values();
        let s = backward_step(exec, &dm, &st, grid, zg, scheme, next, k)?;
        steps.push(s);
    }
    steps.reverse();
    let mut sol = Solution {
        grid: *grid,
        impulses: zg.clone(),
        scheme: *scheme,
        layers: Vec::with_capacity(n + 1),
        controls: Vec::with_capacity(n),
        act: Vec::with_capacity(n + 1),
        impulse: Vec::with_capacity(n + 1),
        intervention: Vec::with_capacity(n + 1),
        diagnostics: Vec::with_capacity(n + 1),
        id: 0,
    };
    for (k, s) in steps.into_iter().enumerate() {
        sol.layers.push(s.values);
        if k < n {
            sol.controls.push(s.controls);
        }
        sol.act.push(s.act);
        sol.impulse.push(s.impulse);
        sol.intervention.push(s.intervention);
        sol.diagnostics.push(StepDiagnostics {
            linear_solves: s.linear_solves,
            obstacle_iterations: s.obstacle_iterations,
        });
    }
    sol.id = sol.fingerprint();
    Ok(sol)
}

/// Per-node residuals of a layer pair under the scheme's own stencils.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerResidual {
    /// `-min_b[(u_{k+1} - u_k)/dt + L^b u - rho u_k + f_rho^b]`, with `L^b`
    /// applied to `u_k` (implicit) or `u_{k+1}` (explicit). Copy rows report
    /// `u_i - u_inward`.
    pub pde: Vec<f64>,
    /// `u_k - M_rho u_k`.
    pub obstacle: Vec<f64>,
    /// Minimizing control index per node.
    pub controls: Vec<usize>,
}

impl LayerResidual {
    pub fn qvi(&self, i: usize) -> f64 {
        self.pde[i].min(self.obstacle[i])
    }
}

/// Evaluates the discrete operator of layer `k < N` on arbitrary fields.
pub fn layer_residual<M: GameModel + ?Sized>(
    model: &M,
    grid: &Grid,
    zg: &ImpulseGrid,
    scheme: &Scheme,
    u_k: &ValueField,
    u_next: &ValueField,
    k: usize,
) -> Result<LayerResidual> {
    check_setup(model, grid, zg, scheme)?;
    if k >= grid.time.steps() {
        return Err(Error::InvalidArgument(format!(
            "step index {k} must be below {}",
            grid.time.steps()
        )));
    }
    let dm = Discounted::new(model, scheme.rho);
    let st = Stencil::new(&dm, &grid.space)?;
    let layer = Layer::new(&Sequential, &dm, &st, &grid.time, scheme, k);
    let (u, un) = (u_k.values(), u_next.values());
    let at = match scheme.stepping {
        TimeStepping::Implicit => u,
        TimeStepping::Explicit => un,
    };
    let (minh, controls) = layer.controls(&Sequential, at);
    let dt = layer.dt;
    let pde = (0..u.len())
        .map(|i| match st.copy[i] {
            Some(j) => u[i] - u[j],
            None => (u[i] - un[i]) / dt + scheme.rho * u[i] - minh[i],
        })
        .collect();
    let m = crate::intervention::apply_intervention(&dm, u_k, grid.time.time_f64(k), zg)?;
    let obstacle = u
        .iter()
        .zip(m.values.values())
        .map(|(u, mu)| u - mu)
        .collect();
    Ok(LayerResidual {
        pde,
        obstacle,
        controls,
    })
}

/// One resolution of a convergence study.
#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub grid: Grid,
    pub impulses: ImpulseGrid,
}

/// `levels` nested levels starting at `base`, each doubling the cell count,
/// the step count and the impulse-lattice cell count.
pub fn refinement_levels(
    spec: &ProblemSpec,
    base: &Grid,
    impulse_counts: &[usize],
    radius: Option<f64>,
    levels: usize,
) -> Result<Vec<Level>> {
    let mut out = Vec::with_capacity(levels);
    let d = base.space.dim();
    for l in 0..levels {
        let f = 1usize << l;
        let nodes: Vec<usize> = (0..d).map(|a| (base.space.nodes(a) - 1) * f + 1).collect();
        let counts: Vec<usize> = impulse_counts.iter().map(|c| (c - 1) * f + 1).collect();
        let space = SpaceGrid::new(
            &base.space.lo()[..d],
            &base.space.hi()[..d],
            &nodes,
            base.space.boundary(),
        )?;
        let time = TimeGrid::new(base.time.horizon(), base.time.steps() * f)?;
        out.push(Level {
            grid: Grid::new(space, time),
            impulses: ImpulseGrid::new(spec, &counts, radius)?,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub nodes: usize,
    pub steps: usize,
    pub impulses: usize,
    pub h: f64,
    pub dt: f64,
    pub dz: f64,
    pub u0_center: f64,
    /// Sup difference to the next finer level over the common space-time nodes.
    pub diff: Option<f64>,
    /// `log2(diff_{l-1} / diff_l)`.
    pub order: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn diffs(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.diff).collect()
    }

    pub fn orders(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.order).collect()
    }
}

fn nested(coarse: &Level, fine: &Level) -> bool {
    fine.grid.space.refines(&coarse.grid.space)
        && fine.grid.time.horizon() == coarse.grid.time.horizon()
        && fine.grid.time.steps() == 2 * coarse.grid.time.steps()
        && coarse
            .impulses
            .points()
            .iter()
            .all(|z| fine.impulses.points().contains(z))
}

/// Sup over coarse layers `k` and coarse nodes of `|u_c(t_k) - u_f(t_2k)|`.
fn common_node_diff(coarse: &Solution, fine: &Solution) -> f64 {
    let cg = coarse.grid.space;
    let fg = fine.grid.space;
    let mut worst = 0.0f64;
    for k in 0..=coarse.steps() {
        let (cu, fu) = (coarse.layers[k].values(), fine.layers[2 * k].values());
        for i in 0..cg.len() {
            let mut ij = cg.unflatten(i);
            for a in 0..cg.dim() {
                ij[a] *= 2;
            }
            worst = worst.max((cu[i] - fu[fg.flatten(ij)]).abs());
        }
    }
    worst
}

pub fn convergence_study<M: GameModel + ?Sized>(
    model: &M,
    scheme: &Scheme,
    levels: &[Level],
) -> Result<ConvergenceTable> {
    convergence_study_in(&Sequential, model, scheme, levels)
}

/// Solves every level and tabulates self-convergence differences and orders.
pub fn convergence_study_in<E: Executor, M: GameModel + ?Sized>(
    exec: &E,
    model: &M,
    scheme: &Scheme,
    levels: &[Level],
) -> Result<ConvergenceTable> {
    if levels.len() < 3 {
        return Err(Error::NotNested(format!(
            "need at least 3 levels, got {}",
            levels.len()
        )));
    }
    for (l, w) in levels.windows(2).enumerate() {
        if !nested(&w[0], &w[1]) {
            return Err(Error::NotNested(format!(
                "level {} does not refine level {l} by a factor of 2",
                l + 1
            )));
        }
    }
    let mut sols = Vec::with_capacity(levels.len());
    for lv in levels {
        sols.push(solve_in(exec, model, &lv.grid, &lv.impulses, scheme)?);
    }
    let diffs: Vec<f64> = sols
        .windows(2)
        .map(|w| common_node_diff(&w[0], &w[1]))
        .collect();
    let rows = levels
        .iter()
        .zip(&sols)
        .enumerate()
        .map(|(l, (lv, sol))| {
            let center = [
                0.5 * (lv.grid.space.lo()[0] + lv.grid.space.hi()[0]),
                0.5 * (lv.grid.space.lo()[1] + lv.grid.space.hi()[1]),
            ];
            let diff = diffs.get(l).copied();
            let order = match (l.checked_sub(1).map(|p| diffs[p]), diff) {
                (Some(prev), Some(cur)) if prev > 0.0 && cur > 0.0 => Some(libm::log2(prev / cur)),
                _ => None,
            };
            ConvergenceRow {
                nodes: lv.grid.space.len(),
                steps: lv.grid.time.steps(),
                impulses: lv.impulses.len(),
                h: lv.grid.space.max_step(),
                dt: lv.grid.time.dt(),
                dz: lv.impulses.step(),
                u0_center: sol.value(0, &center),
                diff,
                order,
            }
        })
        .collect();
    Ok(ConvergenceTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::Rational;

    fn canonical(spec: &ProblemSpec) -> (Grid, ImpulseGrid) {
        let space =
            SpaceGrid::new(&[-4.0], &[4.0], &[161], BoundaryPolicy::ValueExtrapolation).unwrap();
        let time = TimeGrid::new(spec.horizon, 80).unwrap();
        (
            Grid::new(space, time),
            ImpulseGrid::new(spec, &[321], None).unwrap(),
        )
    }

    fn small(spec: &ProblemSpec, nodes: usize, steps: usize, z: usize) -> (Grid, ImpulseGrid) {
        let space = SpaceGrid::new(
            &[-4.0],
            &[4.0],
            &[nodes],
            BoundaryPolicy::ValueExtrapolation,
        )
        .unwrap();
        let time = TimeGrid::new(spec.horizon, steps).unwrap();
        (
            Grid::new(space, time),
            ImpulseGrid::new(spec, &[z], None).unwrap(),
        )
    }

    #[test]
    fn tp2_terminal_layer_is_g_after_one_iteration() {
        let spec = ProblemSpec::tp2();
        let (grid, zg) = canonical(&spec);
        let dm = Discounted::new(&spec, 0.0);
        let s = terminal_step(&Sequential, &dm, &grid, &zg, &Scheme::default()).unwrap();
        assert_eq!(s.obstacle_iterations, 1);
        assert!(s.values.values().iter().all(|v| *v == 1.0));
        assert!(s.act.iter().all(|a| !a));
        assert!(s
            .intervention
            .values()
            .iter()
            .all(|v| (*v - 0.9).abs() < 1e-15));
    }

    #[test]
    fn tp0_step_keeps_zero_with_first_control() {
        let spec = ProblemSpec::tp0();
        let (grid, zg) = small(&spec, 41, 10, 41);
        let u = ValueField::constant(grid.space, 0.0);
        let s = step_backward(&spec, &grid, &zg, &Scheme::default(), &u, 9).unwrap();
        assert!(s.values.values().iter().all(|v| *v == 0.0));
        assert!(s.controls.iter().all(|b| *b == 0));
        assert!(s.act.iter().all(|a| !a));
    }

    #[test]
    fn tp2_step_preserves_the_constant() {
        let spec = ProblemSpec::tp2();
        let (grid, zg) = small(&spec, 41, 20, 41);
        let u = ValueField::constant(grid.space, 1.0);
        for scheme in [Scheme::default(), Scheme::explicit()] {
            let s = step_backward(&spec, &grid, &zg, &scheme, &u, 0).unwrap();
            assert!(
                s.values.values().iter().all(|v| (*v - 1.0).abs() <= 1e-14),
                "{scheme:?}"
            );
        }
    }

    #[test]
    fn explicit_step_reports_cfl_violation() {
        let spec = ProblemSpec::tp1();
        let (grid, zg) = small(&spec, 161, 4, 11);
        let u = ValueField::constant(grid.space, 0.0);
        let err = step_backward(&spec, &grid, &zg, &Scheme::explicit(), &u, 0).unwrap_err();
        assert!(matches!(err, Error::CflViolated { .. }));
    }

    #[test]
    fn tp1_layers_satisfy_the_discrete_qvi() {
        let spec = ProblemSpec::tp1();
        let (grid, zg) = small(&spec, 81, 20, 81);
        let scheme = Scheme::default();
        let sol = solve(&spec, &grid, &zg, &scheme).unwrap();
        sol.check_complete().unwrap();
        for k in 0..grid.time.steps() {
            let r = layer_residual(
                &spec,
                &grid,
                &zg,
                &scheme,
                &sol.layers[k],
                &sol.layers[k + 1],
                k,
            )
            .unwrap();
            for i in 0..grid.space.len() {
                // pde is scaled by 1/dt relative to the solved rows.
                let q = r.pde[i].min(r.obstacle[i] / grid.time.dt());
                assert!(q.abs() < 1e-7, "k={k} i={i} residual {q}");
            }
        }
        // With f = 0 and translation-invariant dynamics every impulse can be
        // postponed to T, where it is chosen with more information.
        assert!(sol.act[grid.time.steps()].iter().any(|a| *a));
        assert!(sol.act[0].iter().all(|a| !a));
    }

    #[test]
    fn explicit_solution_stays_close_to_implicit() {
        let spec = ProblemSpec::tp1();
        let (grid, zg) = small(&spec, 41, 40, 81);
        let a = solve(&spec, &grid, &zg, &Scheme::default()).unwrap();
        let b = solve(&spec, &grid, &zg, &Scheme::explicit()).unwrap();
        let d = sup_diff(a.layers[0].values(), b.layers[0].values());
        assert!(d < 0.05, "implicit vs explicit sup difference {d}");
    }

    #[test]
    fn horizon_mismatch_is_rejected() {
        let spec = ProblemSpec::tp1();
        let (mut grid, zg) = small(&spec, 21, 4, 11);
        grid.time = TimeGrid::new(Rational::integer(2), 4).unwrap();
        assert!(solve(&spec, &grid, &zg, &Scheme::default()).is_err());
    }

    #[test]
    fn solution_id_tracks_content() {
        let spec = ProblemSpec::tp1();
        let (grid, zg) = small(&spec, 21, 4, 21);
        let a = solve(&spec, &grid, &zg, &Scheme::default()).unwrap();
        let b = solve(&spec, &grid, &zg, &Scheme::default()).unwrap();
        let c = solve(&ProblemSpec::tp2(), &grid, &zg, &Scheme::default()).unwrap();
        assert_eq!(a.id, b.id);
        assert_ne!(a.id, c.id);
    }

    #[test]
    fn non_nested_levels_are_rejected() {
        let spec = ProblemSpec::tp2();
        let base = small(&spec, 11, 4, 11).0;
        let mut levels = refinement_levels(&spec, &base, &[11], None, 3).unwrap();
        levels[2].grid.time = TimeGrid::new(spec.horizon, 15).unwrap();
        assert!(matches!(
            convergence_study(&spec, &Scheme::default(), &levels),
            Err(Error::NotNested(_))
        ));
    }

    #[test]
    fn tp2_convergence_study_has_zero_differences() {
        let spec = ProblemSpec::tp2();
        let base = small(&spec, 11, 4, 11).0;
        let levels = refinement_levels(&spec, &base, &[11], None, 3).unwrap();
        let table = convergence_study(&spec, &Scheme::default(), &levels).unwrap();
        assert_eq!(table.diffs(), vec![0.0, 0.0]);
        assert!(table.orders().is_empty());
    }
}
