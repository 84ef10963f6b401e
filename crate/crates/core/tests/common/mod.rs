//! Shared fixtures: the canonical TP1 discretization and the toy instance with
//! its exhaustive backward-induction oracle.
#![allow(dead_code, clippy::needless_range_loop)]

use impulse_core::problem::{Profile, RunningGain};
use impulse_core::*;

pub const CANONICAL_NODES: usize = 161;
pub const CANONICAL_STEPS: usize = 80;
pub const CANONICAL_IMPULSES: usize = 321;

pub fn canonical(spec: &ProblemSpec) -> (Grid, ImpulseGrid) {
    let space = SpaceGrid::new(
        &[-4.0],
        &[4.0],
        &[CANONICAL_NODES],
        BoundaryPolicy::ValueExtrapolation,
    )
    .unwrap();
    let grid = Grid::new(space, TimeGrid::new(spec.horizon, CANONICAL_STEPS).unwrap());
    (
        grid,
        ImpulseGrid::new(spec, &[CANONICAL_IMPULSES], None).unwrap(),
    )
}

/// TP1 dynamics with `f = 0.5 cos x + 0.3 b`, `g = cos 2x`, two controls
/// `b = ±1`, three nodes `x ∈ {-1, 0, 1}`, three steps and `z ∈ {-1, 0, 1}`.
pub fn toy() -> (ProblemSpec, Grid, ImpulseGrid) {
    let mut spec = ProblemSpec::tp1();
    spec.running_gain = RunningGain {
        profile: Profile::Cosine {
            amplitude: 0.5,
            frequency: vec![1.0],
            phase: 0.0,
        },
        control_weight: vec![0.3],
    };
    spec.terminal_gain = Profile::Cosine {
        amplitude: 1.0,
        frequency: vec![2.0],
        phase: 0.0,
    };
    spec.controls.points = vec![2];
    let space = SpaceGrid::new(&[-1.0], &[1.0], &[3], BoundaryPolicy::ReflectedDrift).unwrap();
    let grid = Grid::new(space, TimeGrid::new(spec.horizon, 3).unwrap());
    let zg = ImpulseGrid::from_points(1, &[[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]]).unwrap();
    (spec, grid, zg)
}

const XS: [f64; 3] = [-1.0, 0.0, 1.0];
const BS: [f64; 2] = [-1.0, 1.0];
const ZS: [f64; 3] = [-1.0, 0.0, 1.0];
const SIGMA: f64 = 0.5;
const H: f64 = 1.0;
const DT: f64 = 1.0 / 3.0;

fn f(x: f64, b: f64) -> f64 {
    0.5 * x.cos() + 0.3 * b
}

fn g(x: f64) -> f64 {
    (2.0 * x).cos()
}

fn k(z: f64) -> f64 {
    -0.1 - 0.05 * z.abs()
}

/// Node reached from node `i` by the shift `z`, reflecting off `±1`.
fn dest(i: usize, z: f64) -> usize {
    let mut y = XS[i] + z;
    while !(-1.0..=1.0).contains(&y) {
        y = if y > 1.0 { 2.0 - y } else { -2.0 - y };
    }
    (y + 1.0).round() as usize
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve3(mut a: [[f64; 3]; 3], mut r: [f64; 3]) -> Option<[f64; 3]> {
    for c in 0..3 {
        let p = (c..3)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        if a[p][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, p);
        r.swap(c, p);
        for i in c + 1..3 {
            let m = a[i][c] / a[c][c];
            for j in c..3 {
                a[i][j] -= m * a[c][j];
            }
            r[i] -= m * r[c];
        }
    }
    let mut u = [0.0; 3];
    for i in (0..3).rev() {
        let s: f64 = (i + 1..3).map(|j| a[i][j] * u[j]).sum();
        u[i] = (r[i] - s) / a[i][i];
    }
    Some(u)
}

/// Impulse choice per node: `None` holds, `Some(z)` acts with `ZS[z]`.
fn impulse_policies() -> Vec<[Option<usize>; 3]> {
    let opts = [None, Some(0), Some(1), Some(2)];
    let mut out = Vec::new();
    for a in opts {
        for b in opts {
            for c in opts {
                out.push([a, b, c]);
            }
        }
    }
    out
}

fn act_row(a: &mut [[f64; 3]; 3], r: &mut [f64; 3], i: usize, z: usize) {
    a[i] = [0.0; 3];
    a[i][i] += 1.0;
    a[i][dest(i, ZS[z])] -= 1.0;
    r[i] = k(ZS[z]);
}

/// Upwind row of `(1 + dt sum c) u_i - dt sum c_j u_j = u_next_i + dt f` with
/// mirrored ghost nodes at both ends and the outward drift dropped.
fn hold_row(a: &mut [[f64; 3]; 3], r: &mut [f64; 3], i: usize, b: f64, u_next: &[f64; 3]) {
    let diff = 0.5 * SIGMA * SIGMA / (H * H);
    let (up, down) = (b.max(0.0) / H, (-b).max(0.0) / H);
    let (right, cr) = if i < 2 {
        (i + 1, diff + up)
    } else {
        (i - 1, diff)
    };
    let (left, cl) = if i > 0 {
        (i - 1, diff + down)
    } else {
        (i + 1, diff)
    };
    a[i] = [0.0; 3];
    a[i][i] = 1.0 + DT * (cr + cl);
    a[i][right] -= DT * cr;
    a[i][left] -= DT * cl;
    r[i] = u_next[i] + DT * f(XS[i], b);
}

fn max_into(best: &mut [f64; 3], v: &[f64; 3]) {
    for i in 0..3 {
        best[i] = best[i].max(v[i]);
    }
}

/// Terminal layer: max over impulse policies of `u_i = g_i` / `u_i - u_dest = K`.
pub fn oracle_terminal() -> [f64; 3] {
    let mut best = [f64::NEG_INFINITY; 3];
    for alpha in impulse_policies() {
        let (mut a, mut r) = ([[0.0; 3]; 3], [0.0; 3]);
        for i in 0..3 {
            match alpha[i] {
                None => {
                    a[i][i] = 1.0;
                    r[i] = g(XS[i]);
                }
                Some(z) => act_row(&mut a, &mut r, i, z),
            }
        }
        if let Some(v) = solve3(a, r) {
            max_into(&mut best, &v);
        }
    }
    best
}

/// One implicit step: max over impulse policies of the componentwise min over
/// control policies of the linear solve.
pub fn oracle_step(u_next: &[f64; 3]) -> [f64; 3] {
    let mut best = [f64::NEG_INFINITY; 3];
    for alpha in impulse_policies() {
        let mut inner = [f64::INFINITY; 3];
        let mut feasible = true;
        for beta in 0..8usize {
            let (mut a, mut r) = ([[0.0; 3]; 3], [0.0; 3]);
            for i in 0..3 {
                match alpha[i] {
                    None => hold_row(&mut a, &mut r, i, BS[(beta >> i) & 1], u_next),
                    Some(z) => act_row(&mut a, &mut r, i, z),
                }
            }
            match solve3(a, r) {
                Some(v) => (0..3).for_each(|i| inner[i] = inner[i].min(v[i])),
                None => {
                    feasible = false;
                    break;
                }
            }
        }
        if feasible {
            max_into(&mut best, &inner);
        }
    }
    best
}

/// All four layers, `k = 0..=3`.
pub fn oracle_layers() -> Vec<[f64; 3]> {
    let mut layers = vec![oracle_terminal()];
    for _ in 0..3 {
        let next = oracle_step(layers.last().unwrap());
        layers.push(next);
    }
    layers.reverse();
    layers
}
