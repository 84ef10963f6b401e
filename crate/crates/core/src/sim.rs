//! Euler-Maruyama simulation of the impulse-controlled SDE and Monte Carlo
//! estimates of the gain functional
//! `J = int_t^T f(s, X_s, b_s) ds + sum_j K(tau_j, z_j) + g(X_T)`.
//!
//! Impulses happen only at grid times, several per grid time if the policy
//! keeps acting, and a budget `q` allows at most `q - 1` of them.
//!
//! Path `i` of a run with root seed `s` draws from
//! `ChaCha8Rng::seed_from_u64(s)` on stream `i`; every step consumes `d`
//! standard normals whether or not the path is still moving, so paths started
//! from different points with the same seed share their noise.

use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{mean_and_std_error, pairwise_sum, Executor, Sequential};
use crate::grid::TimeGrid;
use crate::model::{add, norm, Control, GameModel, Point, MAX_DIM};
use crate::rational::Rational;

/// Impulses applied at one grid time beyond which a policy is declared to cycle.
pub const MAX_IMPULSES_PER_TIME: usize = 1000;

/// Feedback control of the diffusion player.
pub trait DiffusionPolicy: Sync {
    fn control(&self, k: usize, x: &Point) -> Control;
}

/// Feedback impulse decision: `Some(z)` to jump by `Gamma(t_k, z)` now.
pub trait ImpulsePolicy: Sync {
    fn impulse(&self, k: usize, x: &Point) -> Option<Point>;
}

/// Always plays the same control value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantControl(pub Control);

impl DiffusionPolicy for ConstantControl {
    fn control(&self, _k: usize, _x: &Point) -> Control {
        self.0
    }
}

/// Never intervenes.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NoImpulse;

impl ImpulsePolicy for NoImpulse {
    fn impulse(&self, _k: usize, _x: &Point) -> Option<Point> {
        None
    }
}

/// Intervenes with `z` at every opportunity (so exactly `q - 1` times).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlwaysImpulse(pub Point);

impl ImpulsePolicy for AlwaysImpulse {
    fn impulse(&self, _k: usize, _x: &Point) -> Option<Point> {
        Some(self.0)
    }
}

impl<F: Fn(usize, &Point) -> Control + Sync> DiffusionPolicy for F {
    fn control(&self, k: usize, x: &Point) -> Control {
        self(k, x)
    }
}

/// Start time, time lattice and impulse budget of a rollout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Horizon {
    pub time: TimeGrid,
    /// Index of the start time `t0 = t_{k0}`.
    pub k0: usize,
    /// Budget: at most `q - 1` impulses.
    pub q: usize,
}

impl Horizon {
    pub fn new(time: TimeGrid, t0: Rational, q: usize) -> Result<Self> {
        let k0 = time.index_of(t0).ok_or(Error::NotOnGrid(t0))?;
        if q == 0 {
            return Err(Error::InvalidArgument(
                "impulse budget q must be at least 1".into(),
            ));
        }
        Ok(Horizon { time, k0, q })
    }

    pub fn from_start(time: TimeGrid, q: usize) -> Result<Self> {
        Self::new(time, Rational::ZERO, q)
    }
}

/// One grid time of a simulated path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathRecord {
    pub k: usize,
    pub t: Rational,
    pub x_pre: Point,
    pub x_post: Point,
    /// Control used on `[t_k, t_{k+1})`; `None` at the final record.
    pub b: Option<Control>,
    /// Brownian increment on `[t_k, t_{k+1})`.
    pub dw: Point,
    /// Impulses applied at `t_k`, in order.
    pub impulses: Vec<Point>,
    /// `int_{t0}^{t_k} f ds` by the left-endpoint rule.
    pub f_acc: f64,
    /// Sum of impulse costs up to and including `t_k`.
    pub k_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SamplePath {
    pub dim: usize,
    pub seed: u64,
    pub records: Vec<PathRecord>,
    pub running: f64,
    pub costs: f64,
    pub terminal: f64,
}

impl SamplePath {
    pub fn gain(&self) -> f64 {
        self.running + self.costs + self.terminal
    }

    pub fn impulse_count(&self) -> usize {
        self.records.iter().map(|r| r.impulses.len()).sum()
    }

    pub fn final_state(&self) -> Point {
        self.records
            .last()
            .map(|r| r.x_post)
            .unwrap_or([0.0; MAX_DIM])
    }
}

/// Per-path totals of a rollout.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct Outcome {
    pub running: f64,
    pub costs: f64,
    /// `g(X_T)`; zero for stopped paths.
    pub terminal: f64,
    pub impulses: usize,
    /// `(k, X_{t_k}^+)` where a stopping rule fired.
    pub stopped: Option<(usize, Point)>,
}

impl Outcome {
    pub fn gain(&self) -> f64 {
        self.running + self.costs + self.terminal
    }
}

pub(crate) fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Simulates from `(t_{k0}, x0)` until `T`, or until `stop(k, X_{t_k}^-)`
/// returns true (impulses at that time are still applied).
pub(crate) fn rollout<M, B, I, S>(
    model: &M,
    hz: &Horizon,
    x0: &Point,
    bpol: &B,
    ipol: &I,
    rng: &mut ChaCha8Rng,
    mut stop: S,
    mut record: Option<&mut Vec<PathRecord>>,
) -> Result<Outcome>
where
    M: GameModel + ?Sized,
    B: DiffusionPolicy + ?Sized,
    I: ImpulsePolicy + ?Sized,
    S: FnMut(usize, &Point) -> bool,
{
    let d = model.dim();
    let n = hz.time.steps();
    let dt = hz.time.dt();
    let sqdt = libm::sqrt(dt);
    let cap = hz.q - 1;
    let mut out = Outcome::default();
    let mut x = *x0;
    for k in hz.k0..=n {
        let t = hz.time.time_f64(k);
        let x_pre = x;
        let stopping = k < n && stop(k, &x_pre);
        let mut applied = Vec::new();
        let mut at_time = 0;
        while out.impulses < cap {
            let Some(z) = ipol.impulse(k, &x) else { break };
            x = add(&x, &model.displacement(t, &z));
            out.costs += model.impulse_cost(t, &z);
            out.impulses += 1;
            at_time += 1;
            if record.is_some() {
                applied.push(z);
            }
            if at_time > MAX_IMPULSES_PER_TIME {
                return Err(Error::InvalidArgument(format!(
                    "impulse policy keeps acting at grid time {k}"
                )));
            }
        }
        if !(0..d).all(|a| x[a].is_finite()) {
            return Err(Error::BlowUp { step: k });
        }
        let mut b = None;
        let mut dw = [0.0; MAX_DIM];
        if k == n {
            out.terminal = model.terminal_gain(&x);
        } else if stopping {
            out.stopped = Some((k, x));
        } else {
            let ctl = bpol.control(k, &x);
            for v in dw.iter_mut().take(d) {
                let z: f64 = StandardNormal.sample(rng);
                *v = sqdt * z;
            }
            b = Some(ctl);
        }
        if let Some(rec) = record.as_deref_mut() {
            rec.push(PathRecord {
                k,
                t: hz.time.time(k),
                x_pre,
                x_post: x,
                b,
                dw,
                impulses: applied,
                f_acc: out.running,
                k_acc: out.costs,
            });
        }
        let Some(ctl) = b else { break };
        out.running += model.running_gain(t, &x, &ctl) * dt;
        let mu = model.drift(&x, &ctl);
        let sig = model.diffusion(&x, &ctl);
        for a in 0..d {
            x[a] += mu[a] * dt + sig[a] * dw[a];
        }
        if !(0..d).all(|a| x[a].is_finite()) {
            return Err(Error::BlowUp { step: k + 1 });
        }
    }
    Ok(out)
}

/// Path 0 of the run with root seed `seed`, with every grid time recorded.
pub fn simulate_path<M, B, I>(
    model: &M,
    hz: &Horizon,
    x0: &Point,
    bpol: &B,
    ipol: &I,
    seed: u64,
) -> Result<SamplePath>
where
    M: GameModel + ?Sized,
    B: DiffusionPolicy + ?Sized,
    I: ImpulsePolicy + ?Sized,
{
    let mut records = Vec::with_capacity(hz.time.steps() + 1 - hz.k0);
    let mut rng = path_rng(seed, 0);
    let out = rollout(
        model,
        hz,
        x0,
        bpol,
        ipol,
        &mut rng,
        |_, _| false,
        Some(&mut records),
    )?;
    Ok(SamplePath {
        dim: model.dim(),
        seed,
        records,
        running: out.running,
        costs: out.costs,
        terminal: out.terminal,
    })
}

/// Monte Carlo estimate of `J` with its decomposition.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GainEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
    pub seed: u64,
    pub running_mean: f64,
    pub cost_mean: f64,
    pub terminal_mean: f64,
    pub impulses_mean: f64,
}

fn summarize(outcomes: &[Outcome], seed: u64) -> GainEstimate {
    let n = outcomes.len();
    let gains: Vec<f64> = outcomes.iter().map(Outcome::gain).collect();
    let (mean, std_error) = mean_and_std_error(&gains);
    let avg = |f: &dyn Fn(&Outcome) -> f64| {
        let v: Vec<f64> = outcomes.iter().map(f).collect();
        pairwise_sum(&v) / n as f64
    };
    GainEstimate {
        mean,
        std_error,
        n,
        seed,
        running_mean: avg(&|o| o.running),
        cost_mean: avg(&|o| o.costs),
        terminal_mean: avg(&|o| o.terminal),
        impulses_mean: avg(&|o| o.impulses as f64),
    }
}

/// Runs `n` paths and returns their outcomes in path order.
pub(crate) fn run_paths<E, M, B, I>(
    exec: &E,
    model: &M,
    hz: &Horizon,
    x0: &Point,
    bpol: &B,
    ipol: &I,
    n: usize,
    seed: u64,
) -> Result<Vec<Outcome>>
where
    E: Executor,
    M: GameModel + ?Sized,
    B: DiffusionPolicy + ?Sized,
    I: ImpulsePolicy + ?Sized,
{
    exec.map(n, |i| {
        let mut rng = path_rng(seed, i);
        rollout(model, hz, x0, bpol, ipol, &mut rng, |_, _| false, None)
    })
    .into_iter()
    .collect()
}

pub fn estimate_gain<M, B, I>(
    model: &M,
    hz: &Horizon,
    x0: &Point,
    bpol: &B,
    ipol: &I,
    n: usize,
    seed: u64,
) -> Result<GainEstimate>
where
    M: GameModel + ?Sized,
    B: DiffusionPolicy + ?Sized,
    I: ImpulsePolicy + ?Sized,
{
    estimate_gain_in(&Sequential, model, hz, x0, bpol, ipol, n, seed)
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_gain_in<E, M, B, I>(
    exec: &E,
    model: &M,
    hz: &Horizon,
    x0: &Point,
    bpol: &B,
    ipol: &I,
    n: usize,
    seed: u64,
) -> Result<GainEstimate>
where
    E: Executor,
    M: GameModel + ?Sized,
    B: DiffusionPolicy + ?Sized,
    I: ImpulsePolicy + ?Sized,
{
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 paths, got {n}"
        )));
    }
    let outcomes = run_paths(exec, model, hz, x0, bpol, ipol, n, seed)?;
    Ok(summarize(&outcomes, seed))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LipschitzProbe {
    /// `|J(t, x) - J(t, x_hat)| / |x - x_hat|` from paired paths.
    pub ratio: f64,
    /// Standard error of the paired differences, divided by `|x - x_hat|`.
    pub noise: f64,
}

/// Difference quotient of `x -> J(t, x)` using common random numbers.
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_probe_in<E, M, B, I>(
    exec: &E,
    model: &M,
    hz: &Horizon,
    x: &Point,
    x_hat: &Point,
    bpol: &B,
    ipol: &I,
    n: usize,
    seed: u64,
) -> Result<LipschitzProbe>
where
    E: Executor,
    M: GameModel + ?Sized,
    B: DiffusionPolicy + ?Sized,
    I: ImpulsePolicy + ?Sized,
{
    let d = model.dim();
    let dist = norm(&[x[0] - x_hat[0], x[1] - x_hat[1]], d);
    if !(dist > 0.0) {
        return Err(Error::InvalidArgument("probe points must differ".into()));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 paths, got {n}"
        )));
    }
    let a = run_paths(exec, model, hz, x, bpol, ipol, n, seed)?;
    let b = run_paths(exec, model, hz, x_hat, bpol, ipol, n, seed)?;
    let diffs: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a.gain() - b.gain()).collect();
    let (mean, se) = mean_and_std_error(&diffs);
    Ok(LipschitzProbe {
        ratio: mean.abs() / dist,
        noise: se / dist,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn lipschitz_probe<M, B, I>(
    model: &M,
    hz: &Horizon,
    x: &Point,
    x_hat: &Point,
    bpol: &B,
    ipol: &I,
    n: usize,
    seed: u64,
) -> Result<LipschitzProbe>
where
    M: GameModel + ?Sized,
    B: DiffusionPolicy + ?Sized,
    I: ImpulsePolicy + ?Sized,
{
    lipschitz_probe_in(&Sequential, model, hz, x, x_hat, bpol, ipol, n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Diffusion, ProblemSpec};
    use alloc::vec;

    fn horizon(spec: &ProblemSpec, steps: usize, q: usize) -> Horizon {
        Horizon::from_start(TimeGrid::new(spec.horizon, steps).unwrap(), q).unwrap()
    }

    fn frozen() -> ProblemSpec {
        let mut spec = ProblemSpec::tp1();
        spec.diffusion = Diffusion::Constant { scale: vec![0.0] };
        spec
    }

    #[test]
    fn frozen_dynamics_stay_put() {
        let spec = frozen();
        let hz = horizon(&spec, 10, 1);
        let p = simulate_path(
            &spec,
            &hz,
            &[1.0, 0.0],
            &ConstantControl([0.0; 2]),
            &NoImpulse,
            3,
        )
        .unwrap();
        assert_eq!(p.records.len(), 11);
        assert!(p
            .records
            .iter()
            .all(|r| r.x_pre[0] == 1.0 && r.x_post[0] == 1.0));
    }

    #[test]
    fn unit_drift_moves_by_the_horizon() {
        let spec = frozen();
        let hz = horizon(&spec, 8, 1);
        let p = simulate_path(
            &spec,
            &hz,
            &[0.25, 0.0],
            &ConstantControl([1.0, 0.0]),
            &NoImpulse,
            3,
        )
        .unwrap();
        assert_eq!(p.final_state()[0], 1.25);
        assert_eq!(p.terminal, libm::cos(1.25));
    }

    #[test]
    fn budget_caps_impulses_below_q() {
        let spec = ProblemSpec::tp2();
        for q in 1..5 {
            let hz = horizon(&spec, 5, q);
            let p = simulate_path(
                &spec,
                &hz,
                &[0.0; 2],
                &ConstantControl([0.0; 2]),
                &AlwaysImpulse([0.0; 2]),
                1,
            )
            .unwrap();
            assert_eq!(p.impulse_count(), q - 1);
        }
    }

    #[test]
    fn accumulators_match_the_stored_path() {
        let spec = ProblemSpec::tp1();
        let hz = horizon(&spec, 20, 3);
        let pol = |_k: usize, x: &Point| -> Option<Point> { (x[0] > 0.5).then_some([-x[0], 0.0]) };
        struct P<F>(F);
        impl<F: Fn(usize, &Point) -> Option<Point> + Sync> ImpulsePolicy for P<F> {
            fn impulse(&self, k: usize, x: &Point) -> Option<Point> {
                (self.0)(k, x)
            }
        }
        let p = simulate_path(
            &spec,
            &hz,
            &[0.4, 0.0],
            &ConstantControl([1.0, 0.0]),
            &P(pol),
            11,
        )
        .unwrap();
        let mut costs = 0.0;
        for r in &p.records {
            let mut x = r.x_pre;
            for z in &r.impulses {
                x[0] += z[0];
                costs += spec.impulse_cost.eval(z[0].abs());
            }
            assert_eq!(x, r.x_post);
            assert_eq!(costs, r.k_acc);
        }
        assert_eq!(p.costs, costs);
        assert_eq!(p.running, 0.0);
        assert_eq!(p.terminal, libm::cos(p.final_state()[0]));
    }

    #[test]
    fn seeds_are_reproducible() {
        let spec = ProblemSpec::tp1();
        let hz = horizon(&spec, 16, 2);
        let b = ConstantControl([0.5, 0.0]);
        let a1 = simulate_path(&spec, &hz, &[0.0; 2], &b, &NoImpulse, 9).unwrap();
        let a2 = simulate_path(&spec, &hz, &[0.0; 2], &b, &NoImpulse, 9).unwrap();
        let a3 = simulate_path(&spec, &hz, &[0.0; 2], &b, &NoImpulse, 10).unwrap();
        assert_eq!(a1, a2);
        assert_ne!(a1, a3);
    }

    #[test]
    fn constant_payoffs_are_exact() {
        let spec = ProblemSpec::tp2();
        let hz = horizon(&spec, 10, 2);
        let b = ConstantControl([1.0, 0.0]);
        let hold = estimate_gain(&spec, &hz, &[0.0; 2], &b, &NoImpulse, 100, 5).unwrap();
        assert_eq!((hold.mean, hold.std_error), (1.0, 0.0));
        let once =
            estimate_gain(&spec, &hz, &[0.0; 2], &b, &AlwaysImpulse([0.0; 2]), 100, 5).unwrap();
        assert_eq!(once.mean, 0.9);
        assert_eq!(once.std_error, 0.0);
        assert_eq!(once.impulses_mean, 1.0);
    }

    #[test]
    fn start_time_must_be_on_the_grid() {
        let time = TimeGrid::new(Rational::integer(1), 4).unwrap();
        assert!(Horizon::new(time, Rational::new(1, 3).unwrap(), 2).is_err());
        assert_eq!(
            Horizon::new(time, Rational::new(1, 2).unwrap(), 2)
                .unwrap()
                .k0,
            2
        );
    }

    #[test]
    fn deterministic_flow_probe_is_the_secant_slope() {
        let spec = frozen();
        let hz = horizon(&spec, 4, 1);
        let p = lipschitz_probe(
            &spec,
            &hz,
            &[0.3, 0.0],
            &[0.9, 0.0],
            &ConstantControl([0.0; 2]),
            &NoImpulse,
            10,
            2,
        )
        .unwrap();
        let secant = (libm::cos(0.3) - libm::cos(0.9)).abs() / 0.6;
        assert!((p.ratio - secant).abs() < 1e-12);
        assert_eq!(p.noise, 0.0);
        assert!(p.ratio <= 1.0);
    }
}
