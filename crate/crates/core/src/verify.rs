//! Executable structural checks: properties of `M`, the a-priori bound, the
//! obstacle inequality, discrete comparison and the strict supersolution
//! family `w_lambda = (1 - lambda) u + lambda c_rho` of the discounted problem.
//!
//! Nodewise tolerances are `tol = C (h + dt + dz)` with [`TOL_CONSTANT`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{Executor, Sequential};
use crate::grid::{Grid, ValueField};
use crate::intervention::{apply_intervention, ImpulseGrid};
use crate::model::{Control, Discounted, GameModel, Point};
use crate::problem::{global_bound, ProblemSpec};
use crate::rational::Rational;
use crate::solver::{layer_residual, solve_in, Scheme, Solution};

/// `C` in `tol = C (h + dt + dz)`.
///
/// Calibrated on TP1 from the self-convergence study with levels of 41, 81,
/// 161 and 321 nodes (20 to 160 steps, 81 to 641 impulse points): the
/// largest `diff / (h + dt + dz)` over the levels is 0.0848, doubled to bound
/// the distance to the limit of a first-order scheme, and rounded up.
pub const TOL_CONSTANT: f64 = 0.17;

/// Relative slack for comparisons that hold exactly in real arithmetic.
pub const ROUNDOFF: f64 = 1e-12;

pub fn tolerance(h: f64, dt: f64, dz: f64) -> f64 {
    TOL_CONSTANT * (h + dt + dz)
}

pub fn solution_tolerance(sol: &Solution) -> f64 {
    tolerance(
        sol.grid.space.max_step(),
        sol.grid.time.dt(),
        sol.impulses.step(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WorstNode {
    pub layer: Option<usize>,
    pub node: usize,
    pub x: Vec<f64>,
}

/// `{check, pass, worst_node, margin}`; `margin` is the smallest slack of the
/// checked inequality (negative when violated).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub check: String,
    pub pass: bool,
    pub worst_node: Option<WorstNode>,
    pub margin: f64,
    pub violations: usize,
}

/// Running minimum of a nodewise margin.
struct Tally {
    check: String,
    allowance: f64,
    margin: f64,
    worst: Option<(Option<usize>, usize, Point)>,
    violations: usize,
    dim: usize,
}

impl Tally {
    fn new(check: impl Into<String>, allowance: f64, dim: usize) -> Self {
        Tally {
            check: check.into(),
            allowance,
            margin: f64::INFINITY,
            worst: None,
            violations: 0,
            dim,
        }
    }

    /// Records `margin >= -allowance` at one node.
    fn see(&mut self, layer: Option<usize>, node: usize, x: Point, margin: f64) {
        if !(margin >= -self.allowance) {
            self.violations += 1;
        }
        if margin < self.margin || margin.is_nan() {
            self.margin = margin;
            self.worst = Some((layer, node, x));
        }
    }

    fn verdict(self) -> Verdict {
        Verdict {
            check: self.check,
            pass: self.violations == 0,
            worst_node: self.worst.map(|(layer, node, x)| WorstNode {
                layer,
                node,
                x: x[..self.dim].to_vec(),
            }),
            margin: self.margin,
            violations: self.violations,
        }
    }
}

fn scale(fields: &[&ValueField]) -> f64 {
    1.0 + fields.iter().map(|f| f.sup_norm()).fold(0.0, f64::max)
}

/// Monotonicity on `(u ∧ w, u ∨ w)`, convexity for each `lambda`, and
/// covariance under constant shifts `kappa ∈ {-1, 0, 2}`.
pub fn intervention_properties<M: GameModel + ?Sized>(
    model: &M,
    u: &ValueField,
    w: &ValueField,
    t: f64,
    zg: &ImpulseGrid,
    lambdas: &[f64],
) -> Result<Vec<Verdict>> {
    if u.grid() != w.grid() {
        return Err(Error::InvalidGrid("fields live on different grids".into()));
    }
    let grid = *u.grid();
    let d = grid.dim();
    let slack = ROUNDOFF * (scale(&[u, w]) + 2.0);
    let m = |f: &ValueField| apply_intervention(model, f, t, zg).map(|r| r.values);

    let lo = u.zip_map(w, f64::min);
    let hi = u.zip_map(w, f64::max);
    let (mlo, mhi) = (m(&lo)?, m(&hi)?);
    let mut mono = Tally::new("intervention-monotone", slack, d);
    for i in 0..grid.len() {
        mono.see(None, i, grid.point(i), mhi.values()[i] - mlo.values()[i]);
    }

    let (mu, mw) = (m(u)?, m(w)?);
    let mut convex = Tally::new("intervention-convex", slack, d);
    for &lam in lambdas {
        if !(0.0..=1.0).contains(&lam) {
            return Err(Error::InvalidArgument(format!(
                "lambda {lam} not in [0, 1]"
            )));
        }
        let mix = m(&u.zip_map(w, |a, b| lam * a + (1.0 - lam) * b))?;
        for i in 0..grid.len() {
            let rhs = lam * mu.values()[i] + (1.0 - lam) * mw.values()[i];
            convex.see(None, i, grid.point(i), rhs - mix.values()[i]);
        }
    }

    let mut shift = Tally::new("intervention-shift", slack, d);
    for kappa in [-1.0, 0.0, 2.0] {
        let ms = m(&u.map(|v| v + kappa))?;
        for i in 0..grid.len() {
            let err = (ms.values()[i] - mu.values()[i] - kappa).abs();
            shift.see(None, i, grid.point(i), -err);
        }
    }
    Ok(alloc::vec![
        mono.verdict(),
        convex.verdict(),
        shift.verdict()
    ])
}

/// Constants of the strict supersolution family for discount `rho > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DiscountedConstants {
    pub rho: f64,
    /// `max{ (||f_rho|| + 1) / rho, ||g_rho|| + 1 }`.
    pub c: f64,
    /// `min{1, K0}`.
    pub xi: f64,
}

impl DiscountedConstants {
    pub fn new(spec: &ProblemSpec, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "discount must be positive, got {rho}"
            )));
        }
        let growth = libm::exp(rho * spec.horizon.to_f64());
        let f = growth * spec.running_gain_sup();
        let g = growth * spec.terminal_gain_sup();
        if !(f.is_finite() && g.is_finite()) {
            return Err(Error::NonConforming("unbounded gains".into()));
        }
        Ok(DiscountedConstants {
            rho,
            c: ((f + 1.0) / rho).max(g + 1.0),
            xi: spec.cost_floor.min(1.0),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SupersolutionReport {
    pub lambda: f64,
    /// Smallest discrete residual of `w_lambda` over interior nodes and the terminal branch.
    pub min_residual: f64,
    /// `lambda xi - tol`.
    pub threshold: f64,
    pub verdict: Verdict,
}

/// Minimum over all layers of the discrete `F_rho` residual of
/// `w_lambda = (1 - lambda) u + lambda c`: `min{PDE, w - M_rho w}` at interior
/// nodes for `k < N`, `min{w - g_rho, w - M_rho w}` at every node for `k = N`.
pub fn strict_supersolution_residual<M: GameModel + ?Sized>(
    model: &M,
    sol: &Solution,
    lambda: f64,
    consts: &DiscountedConstants,
) -> Result<SupersolutionReport> {
    sol.check_complete()?;
    if sol.rho() != consts.rho {
        return Err(Error::DiscountMismatch {
            solution: sol.rho(),
            expected: consts.rho,
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "lambda {lambda} not in [0, 1]"
        )));
    }
    let grid = sol.grid;
    let space = grid.space;
    let n = grid.time.steps();
    let w: Vec<ValueField> = sol
        .layers
        .iter()
        .map(|u| u.map(|v| (1.0 - lambda) * v + lambda * consts.c))
        .collect();
    let tol = solution_tolerance(sol);
    let threshold = lambda * consts.xi - tol;
    let mut tally = Tally::new(
        format!("strict-supersolution(lambda={lambda})"),
        0.0,
        space.dim(),
    );
    for k in 0..n {
        let r = layer_residual(
            model,
            &grid,
            &sol.impulses,
            &sol.scheme,
            &w[k],
            &w[k + 1],
            k,
        )?;
        for i in (0..space.len()).filter(|i| !space.is_boundary(*i)) {
            tally.see(Some(k), i, space.point(i), r.qvi(i) - threshold);
        }
    }
    let dm = Discounted::new(model, sol.rho());
    let t = grid.time.horizon().to_f64();
    let mw = apply_intervention(&dm, &w[n], t, &sol.impulses)?;
    for i in 0..space.len() {
        let x = space.point(i);
        let wi = w[n].values()[i];
        let r = (wi - dm.terminal_gain(&x)).min(wi - mw.values.values()[i]);
        tally.see(Some(n), i, x, r - threshold);
    }
    let verdict = tally.verdict();
    Ok(SupersolutionReport {
        lambda,
        min_residual: verdict.margin + threshold,
        threshold,
        verdict,
    })
}

/// `||u||_inf <= T ||f|| + ||g|| + tol` and `u >= Mu - tol` on every layer.
pub fn bound_and_obstacle_check(spec: &ProblemSpec, sol: &Solution) -> Result<Vec<Verdict>> {
    sol.check_complete()?;
    if sol.rho() != 0.0 {
        return Err(Error::DiscountMismatch {
            solution: sol.rho(),
            expected: 0.0,
        });
    }
    let tol = solution_tolerance(sol);
    let c = global_bound(spec);
    let space = sol.grid.space;
    let d = space.dim();
    let mut bound = Tally::new("global-bound", tol, d);
    let mut obstacle = Tally::new("obstacle", tol, d);
    for (k, u) in sol.layers.iter().enumerate() {
        let mu = apply_intervention(spec, u, sol.grid.time.time_f64(k), &sol.impulses)?;
        for i in 0..space.len() {
            let x = space.point(i);
            bound.see(Some(k), i, x, c - u.values()[i].abs());
            obstacle.see(Some(k), i, x, u.values()[i] - mu.values.values()[i]);
        }
    }
    Ok(alloc::vec![bound.verdict(), obstacle.verdict()])
}

/// A model whose terminal gain is replaced by nodal data.
struct TerminalOverride<'a, M: ?Sized> {
    inner: &'a M,
    g: &'a ValueField,
}

impl<M: GameModel + ?Sized> GameModel for TerminalOverride<'_, M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn horizon(&self) -> Rational {
        self.inner.horizon()
    }
    fn control_count(&self) -> usize {
        self.inner.control_count()
    }
    fn control(&self, index: usize) -> Control {
        self.inner.control(index)
    }
    fn drift(&self, x: &Point, b: &Control) -> Point {
        self.inner.drift(x, b)
    }
    fn diffusion(&self, x: &Point, b: &Control) -> Point {
        self.inner.diffusion(x, b)
    }
    fn running_gain(&self, t: f64, x: &Point, b: &Control) -> f64 {
        self.inner.running_gain(t, x, b)
    }
    fn terminal_gain(&self, x: &Point) -> f64 {
        let grid = self.g.grid();
        let i = grid.nearest_node(x);
        if grid.point(i) == *x {
            self.g.values()[i]
        } else {
            self.g.interpolate(x)
        }
    }
    fn displacement(&self, t: f64, z: &Point) -> Point {
        self.inner.displacement(t, z)
    }
    fn impulse_cost(&self, t: f64, z: &Point) -> f64 {
        self.inner.impulse_cost(t, z)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    /// `u1 <= u2` at every node of every layer, with no tolerance.
    pub ordered: Verdict,
    /// `u2 - u1 <= max(g2 - g1)` at every node of every layer.
    pub contraction: Verdict,
}

/// Solves with terminal data `g1 <= g2` (same everything else) and compares.
pub fn discrete_comparison<M: GameModel + ?Sized>(
    model: &M,
    grid: &Grid,
    zg: &ImpulseGrid,
    scheme: &Scheme,
    g1: &ValueField,
    g2: &ValueField,
) -> Result<ComparisonReport> {
    discrete_comparison_in(&Sequential, model, grid, zg, scheme, g1, g2)
}

pub fn discrete_comparison_in<E: Executor, M: GameModel + ?Sized>(
    exec: &E,
    model: &M,
    grid: &Grid,
    zg: &ImpulseGrid,
    scheme: &Scheme,
    g1: &ValueField,
    g2: &ValueField,
) -> Result<ComparisonReport> {
    if *g1.grid() != grid.space || *g2.grid() != grid.space {
        return Err(Error::InvalidGrid(
            "terminal data must live on the solver grid".into(),
        ));
    }
    if let Some(i) = (0..grid.space.len()).find(|&i| g1.values()[i] > g2.values()[i]) {
        return Err(Error::InvalidArgument(format!(
            "terminal data not ordered at node {i}"
        )));
    }
    let gap = g1
        .zip_map(g2, |a, b| b - a)
        .values()
        .iter()
        .copied()
        .fold(0.0, f64::max);
    let s1 = solve_in(
        exec,
        &TerminalOverride {
            inner: model,
            g: g1,
        },
        grid,
        zg,
        scheme,
    )?;
    let s2 = solve_in(
        exec,
        &TerminalOverride {
            inner: model,
            g: g2,
        },
        grid,
        zg,
        scheme,
    )?;
    let space = grid.space;
    let d = space.dim();
    let mut ordered = Tally::new("comparison-ordered", 0.0, d);
    let growth = if scheme.rho > 0.0 {
        libm::exp(scheme.rho * grid.time.horizon().to_f64())
    } else {
        1.0
    };
    let mut contraction = Tally::new("comparison-contraction", ROUNDOFF * (1.0 + gap), d);
    for k in 0..=grid.time.steps() {
        let (a, b) = (s1.layers[k].values(), s2.layers[k].values());
        for i in 0..space.len() {
            let x = space.point(i);
            ordered.see(Some(k), i, x, b[i] - a[i]);
            contraction.see(Some(k), i, x, growth * gap - (b[i] - a[i]));
        }
    }
    Ok(ComparisonReport {
        ordered: ordered.verdict(),
        contraction: contraction.verdict(),
    })
}
