//! Closing the loop between the solver and the simulator: feedback policies
//! read off a [`Solution`], Monte Carlo upper/lower value estimates, budget
//! sweeps and a sampled dynamic-programming residual.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{mean_and_std_error, Executor, Sequential};
use crate::grid::{SpaceGrid, TimeGrid};
use crate::model::{Control, GameModel, Point};
use crate::rational::Rational;
use crate::sim::{
    path_rng, rollout, run_paths, ConstantControl, DiffusionPolicy, Horizon, ImpulsePolicy,
    NoImpulse,
};
use crate::solver::Solution;

/// Feedback policies recorded by the solver, looked up at the nearest node.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackPolicyPair {
    pub grid: SpaceGrid,
    pub time: TimeGrid,
    /// `b*(t_k, x_i)` for `k < N`.
    pub controls: Vec<Vec<Control>>,
    /// Act flags for `k <= N`.
    pub act: Vec<Vec<bool>>,
    /// `z*(t_k, x_i)` for `k <= N` (meaningful where `act` is set).
    pub impulse: Vec<Vec<Point>>,
    /// Id of the source solution.
    pub source: u64,
}

impl FeedbackPolicyPair {
    /// The diffusion half of the pair.
    pub fn diffusion(&self) -> QviControl<'_> {
        QviControl(self)
    }

    /// Number of nodes in the act region at layer `k`.
    pub fn act_count(&self, k: usize) -> usize {
        self.act[k].iter().filter(|a| **a).count()
    }
}

/// The recorded control `b*` as a feedback policy.
#[derive(Clone, Copy, Debug)]
pub struct QviControl<'a>(&'a FeedbackPolicyPair);

impl DiffusionPolicy for QviControl<'_> {
    fn control(&self, k: usize, x: &Point) -> Control {
        let p = self.0;
        p.controls[k.min(p.controls.len() - 1)][p.grid.nearest_node(x)]
    }
}

impl ImpulsePolicy for FeedbackPolicyPair {
    fn impulse(&self, k: usize, x: &Point) -> Option<Point> {
        let i = self.grid.nearest_node(x);
        self.act[k][i].then(|| self.impulse[k][i])
    }
}

/// Policies of a complete solution: `b*` and `(act, z*)` per node and layer.
pub fn extract_policies<M: GameModel + ?Sized>(
    model: &M,
    sol: &Solution,
) -> Result<FeedbackPolicyPair> {
    sol.check_complete()?;
    if sol.steps() == 0 {
        return Err(Error::IncompleteSolution("no time steps".into()));
    }
    let controls = sol
        .controls
        .iter()
        .map(|layer| layer.iter().map(|b| model.control(*b)).collect())
        .collect();
    let impulse = sol
        .impulse
        .iter()
        .map(|layer| layer.iter().map(|i| sol.impulses.point(*i)).collect())
        .collect();
    Ok(FeedbackPolicyPair {
        grid: sol.grid.space,
        time: sol.grid.time,
        controls,
        act: sol.act.clone(),
        impulse,
        source: sol.id,
    })
}

/// A diffusion-player feedback policy in the adversary family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Adversary {
    /// The `i`-th control of the sample, played at every time and state.
    Constant(usize),
    /// The solver's `b*`.
    Qvi,
}

/// Every constant control of the sample followed by `b*`.
pub fn default_adversaries<M: GameModel + ?Sized>(model: &M) -> Vec<Adversary> {
    let mut v: Vec<Adversary> = (0..model.control_count())
        .map(Adversary::Constant)
        .collect();
    v.push(Adversary::Qvi);
    v
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdversaryResult {
    pub adversary: Adversary,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValuePairEstimate {
    /// Gain with both players following the solver's policies.
    pub upper: f64,
    pub upper_se: f64,
    /// Smallest gain over the adversary family against the solver's impulse policy.
    pub lower: f64,
    pub lower_se: f64,
    pub lower_adversary: Adversary,
    pub q: usize,
    pub n: usize,
    pub seed: u64,
    pub source: u64,
    pub family: Vec<AdversaryResult>,
}

fn horizon(policies: &FeedbackPolicyPair, q: usize) -> Result<Horizon> {
    Horizon::from_start(policies.time, q)
}

#[allow(clippy::too_many_arguments)]
fn against<E, M>(
    exec: &E,
    model: &M,
    policies: &FeedbackPolicyPair,
    adversary: Adversary,
    hz: &Horizon,
    x0: &Point,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)>
where
    E: Executor,
    M: GameModel + ?Sized,
{
    let outcomes = match adversary {
        Adversary::Constant(i) => {
            if i >= model.control_count() {
                return Err(Error::InvalidArgument(format!(
                    "adversary control index {i} out of range"
                )));
            }
            run_paths(
                exec,
                model,
                hz,
                x0,
                &ConstantControl(model.control(i)),
                policies,
                n,
                seed,
            )?
        }
        Adversary::Qvi => run_paths(
            exec,
            model,
            hz,
            x0,
            &policies.diffusion(),
            policies,
            n,
            seed,
        )?,
    };
    let gains: Vec<f64> = outcomes.iter().map(|o| o.gain()).collect();
    Ok(mean_and_std_error(&gains))
}

/// `v^-`: min over `adversaries` of the gain against the solver's impulse
/// policy capped at `q - 1` impulses; `v^+`: the gain under both solver
/// policies. All members share the same noise.
#[allow(clippy::too_many_arguments)]
pub fn estimate_value_pair_in<E, M>(
    exec: &E,
    model: &M,
    x0: &Point,
    policies: &FeedbackPolicyPair,
    q: usize,
    adversaries: &[Adversary],
    n: usize,
    seed: u64,
) -> Result<ValuePairEstimate>
where
    E: Executor,
    M: GameModel + ?Sized,
{
    if adversaries.is_empty() {
        return Err(Error::InvalidArgument("adversary family is empty".into()));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 paths, got {n}"
        )));
    }
    let hz = horizon(policies, q)?;
    let (upper, upper_se) = against(exec, model, policies, Adversary::Qvi, &hz, x0, n, seed)?;
    let mut family = Vec::with_capacity(adversaries.len());
    for &adversary in adversaries {
        let (mean, std_error) = if adversary == Adversary::Qvi {
            (upper, upper_se)
        } else {
            against(exec, model, policies, adversary, &hz, x0, n, seed)?
        };
        family.push(AdversaryResult {
            adversary,
            mean,
            std_error,
        });
    }
    let best = family.iter().fold(
        &family[0],
        |best, r| if r.mean < best.mean { r } else { best },
    );
    Ok(ValuePairEstimate {
        upper,
        upper_se,
        lower: best.mean,
        lower_se: best.std_error,
        lower_adversary: best.adversary,
        q,
        n,
        seed,
        source: policies.source,
        family,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_value_pair<M: GameModel + ?Sized>(
    model: &M,
    x0: &Point,
    policies: &FeedbackPolicyPair,
    q: usize,
    adversaries: &[Adversary],
    n: usize,
    seed: u64,
) -> Result<ValuePairEstimate> {
    estimate_value_pair_in(&Sequential, model, x0, policies, q, adversaries, n, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub q: usize,
    pub lower: f64,
    pub lower_se: f64,
    /// `lower(q) - lower(previous q)`.
    pub increment: Option<f64>,
}

/// `v^-(q)` for each budget in an increasing list.
#[allow(clippy::too_many_arguments)]
pub fn precommitment_sweep_in<E, M>(
    exec: &E,
    model: &M,
    x0: &Point,
    policies: &FeedbackPolicyPair,
    budgets: &[usize],
    adversaries: &[Adversary],
    n: usize,
    seed: u64,
) -> Result<Vec<SweepRow>>
where
    E: Executor,
    M: GameModel + ?Sized,
{
    if budgets.is_empty() || budgets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "budgets must be a nonempty increasing list".into(),
        ));
    }
    let mut rows: Vec<SweepRow> = Vec::with_capacity(budgets.len());
    for &q in budgets {
        let est = estimate_value_pair_in(exec, model, x0, policies, q, adversaries, n, seed)?;
        let increment = rows.last().map(|r| est.lower - r.lower);
        rows.push(SweepRow {
            q,
            lower: est.lower,
            lower_se: est.lower_se,
            increment,
        });
    }
    Ok(rows)
}

/// Grid-time stopping rules; each decision uses only the current pre-impulse state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StoppingRule {
    /// Stop at the given grid time.
    FixedTime { time: Rational },
    /// Stop at the first grid time whose state lies outside `[lo, hi]`.
    ExitBox { lo: Vec<f64>, hi: Vec<f64> },
}

impl StoppingRule {
    fn check(&self, time: &TimeGrid, dim: usize) -> Result<()> {
        match self {
            StoppingRule::FixedTime { time: t } => {
                time.index_of(*t).map(|_| ()).ok_or(Error::NotOnGrid(*t))
            }
            StoppingRule::ExitBox { lo, hi } if lo.len() != dim || hi.len() != dim => Err(
                Error::InvalidArgument("exit box dimension differs from the state".into()),
            ),
            StoppingRule::ExitBox { .. } => Ok(()),
        }
    }

    /// Whether the rule stops at grid time `k` with state `x`.
    pub fn stops(&self, time: &TimeGrid, k: usize, x: &Point) -> bool {
        match self {
            StoppingRule::FixedTime { time: t } => time.time(k) == *t,
            StoppingRule::ExitBox { lo, hi } => (0..lo.len()).any(|a| x[a] < lo[a] || x[a] > hi[a]),
        }
    }

    /// The stopping index along a recorded sequence of pre-impulse states
    /// `(k, x)`, or `None` if it never fires.
    pub fn first_stop(&self, time: &TimeGrid, states: &[(usize, Point)]) -> Option<usize> {
        states
            .iter()
            .find(|(k, x)| self.stops(time, *k, x))
            .map(|(k, _)| *k)
    }
}

/// How the impulse player behaves in a residual probe.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DppPlay {
    #[default]
    Optimal,
    /// Never intervene; the diffusion player still plays `b*`.
    HoldAlways,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DppResidual {
    /// Mean of `J_0(0, x0; theta) + u(theta, X_theta) - u(0, x0)`.
    pub delta: f64,
    pub std_error: f64,
    pub u0: f64,
    /// Fraction of paths stopped before `T`.
    pub stopped_fraction: f64,
    pub n: usize,
    pub seed: u64,
}

/// Sampled residual of the dynamic programming principle under the
/// solver's policies, stopped by `rule` (or at `T`).
#[allow(clippy::too_many_arguments)]
pub fn dpp_residual_in<E, M>(
    exec: &E,
    model: &M,
    sol: &Solution,
    policies: &FeedbackPolicyPair,
    x0: &Point,
    rule: &StoppingRule,
    play: DppPlay,
    q: usize,
    n: usize,
    seed: u64,
) -> Result<DppResidual>
where
    E: Executor,
    M: GameModel + ?Sized,
{
    sol.check_complete()?;
    if sol.rho() != 0.0 {
        return Err(Error::DiscountMismatch {
            solution: sol.rho(),
            expected: 0.0,
        });
    }
    if policies.source != sol.id {
        return Err(Error::InvalidArgument(
            "policies were extracted from a different solution".into(),
        ));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 paths, got {n}"
        )));
    }
    let time = sol.grid.time;
    rule.check(&time, model.dim())?;
    let hz = Horizon::from_start(time, q)?;
    let u0 = sol.value(0, x0);
    let bpol = policies.diffusion();
    let samples: Vec<Result<(f64, bool)>> = exec.map(n, |i| {
        let mut rng = path_rng(seed, i);
        let stop = |k: usize, x: &Point| rule.stops(&time, k, x);
        let out = match play {
            DppPlay::Optimal => rollout(model, &hz, x0, &bpol, policies, &mut rng, stop, None)?,
            DppPlay::HoldAlways => {
                rollout(model, &hz, x0, &bpol, &NoImpulse, &mut rng, stop, None)?
            }
        };
        Ok(match out.stopped {
            Some((k, x)) => (out.running + out.costs + sol.value(k, &x) - u0, true),
            None => (out.gain() - u0, false),
        })
    });
    let mut deltas = Vec::with_capacity(n);
    let mut stopped = 0usize;
    for s in samples {
        let (d, st) = s?;
        deltas.push(d);
        stopped += st as usize;
    }
    let (delta, std_error) = mean_and_std_error(&deltas);
    Ok(DppResidual {
        delta,
        std_error,
        u0,
        stopped_fraction: stopped as f64 / n as f64,
        n,
        seed,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn dpp_residual<M: GameModel + ?Sized>(
    model: &M,
    sol: &Solution,
    policies: &FeedbackPolicyPair,
    x0: &Point,
    rule: &StoppingRule,
    play: DppPlay,
    q: usize,
    n: usize,
    seed: u64,
) -> Result<DppResidual> {
    dpp_residual_in(
        &Sequential,
        model,
        sol,
        policies,
        x0,
        rule,
        play,
        q,
        n,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoundaryPolicy, Grid};
    use crate::intervention::ImpulseGrid;
    use crate::problem::ProblemSpec;
    use crate::solver::{solve, Scheme};
    use alloc::vec;

    fn solved(spec: &ProblemSpec) -> Solution {
        let space =
            SpaceGrid::new(&[-4.0], &[4.0], &[41], BoundaryPolicy::ValueExtrapolation).unwrap();
        let grid = Grid::new(space, TimeGrid::new(spec.horizon, 20).unwrap());
        let zg = ImpulseGrid::new(spec, &[81], None).unwrap();
        solve(spec, &grid, &zg, &Scheme::default()).unwrap()
    }

    #[test]
    fn tp0_policies_hold_with_the_first_control() {
        let spec = ProblemSpec::tp0();
        let p = extract_policies(&spec, &solved(&spec)).unwrap();
        assert!(p.act.iter().flatten().all(|a| !a));
        assert!(p
            .controls
            .iter()
            .flatten()
            .all(|b| *b == spec.controls.sample(0)));
    }

    #[test]
    fn constant_games_have_exact_values() {
        for (spec, v) in [(ProblemSpec::tp0(), 0.0), (ProblemSpec::tp2(), 1.0)] {
            let sol = solved(&spec);
            let p = extract_policies(&spec, &sol).unwrap();
            assert!(p.act.iter().flatten().all(|a| !a));
            let est = estimate_value_pair(
                &spec,
                &[0.5, 0.0],
                &p,
                2,
                &default_adversaries(&spec),
                50,
                1,
            )
            .unwrap();
            assert_eq!(
                (est.lower, est.lower_se, est.upper, est.upper_se),
                (v, 0.0, v, 0.0)
            );
            let sweep = precommitment_sweep_in(
                &Sequential,
                &spec,
                &[0.5, 0.0],
                &p,
                &[1, 2, 3],
                &[Adversary::Qvi],
                20,
                1,
            )
            .unwrap();
            assert!(sweep.iter().all(|r| r.lower == v));
            let rule = StoppingRule::ExitBox {
                lo: vec![-1.0],
                hi: vec![1.0],
            };
            let r = dpp_residual(
                &spec,
                &sol,
                &p,
                &[0.0; 2],
                &rule,
                DppPlay::Optimal,
                4,
                50,
                3,
            )
            .unwrap();
            assert_eq!(r.delta, 0.0);
        }
    }

    #[test]
    fn lower_value_never_exceeds_upper() {
        let spec = ProblemSpec::tp1();
        let sol = solved(&spec);
        let p = extract_policies(&spec, &sol).unwrap();
        let est = estimate_value_pair(
            &spec,
            &[3.0, 0.0],
            &p,
            3,
            &default_adversaries(&spec),
            200,
            4,
        )
        .unwrap();
        assert!(est.lower <= est.upper);
        assert_eq!(est.family.len(), 22);
    }

    #[test]
    fn off_grid_stopping_time_is_rejected() {
        let spec = ProblemSpec::tp2();
        let sol = solved(&spec);
        let p = extract_policies(&spec, &sol).unwrap();
        let rule = StoppingRule::FixedTime {
            time: Rational::new(1, 3).unwrap(),
        };
        let err = dpp_residual(
            &spec,
            &sol,
            &p,
            &[0.0; 2],
            &rule,
            DppPlay::Optimal,
            2,
            10,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotOnGrid(_)));
    }

    #[test]
    fn stopping_decisions_depend_on_the_prefix_only() {
        let time = TimeGrid::new(Rational::integer(1), 10).unwrap();
        let rule = StoppingRule::ExitBox {
            lo: vec![-1.0],
            hi: vec![1.0],
        };
        let states: Vec<(usize, Point)> =
            (0..=10).map(|k| (k, [0.3 * k as f64 - 0.5, 0.0])).collect();
        let full = rule.first_stop(&time, &states);
        assert_eq!(full, Some(6));
        for cut in 7..=11 {
            assert_eq!(rule.first_stop(&time, &states[..cut]), full);
        }
    }
}
