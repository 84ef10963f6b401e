//! The five batch commands. Each validates the instance, writes its outputs
//! and returns whether every check it ran passed.

use std::path::PathBuf;
use std::time::Instant;

use impulse_core::game::{
    default_adversaries, dpp_residual_in, estimate_value_pair_in, extract_policies,
    precommitment_sweep_in, Adversary, DppPlay, FeedbackPolicyPair, StoppingRule,
};
use impulse_core::sim::{
    estimate_gain_in, simulate_path, ConstantControl, DiffusionPolicy, Horizon, ImpulsePolicy,
    NoImpulse,
};
use impulse_core::solver::{convergence_study_in, refinement_levels, solve_in};
use impulse_core::verify::{
    bound_and_obstacle_check, discrete_comparison_in, intervention_properties, solution_tolerance,
    strict_supersolution_residual, DiscountedConstants, Verdict, WorstNode,
};
use impulse_core::{
    validate_problem, GameModel, Grid, ImpulseGrid, Point, ProblemSpec, Solution, ValueField,
    MAX_DIM,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Config, ControlChoice, ImpulseChoice};
use crate::error::LabError;
use crate::exec::Pool;
use crate::output::{axes, num, nums, OutDir, RunManifest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Solve,
    Simulate,
    Game,
    Verify,
    Converge,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Simulate => "simulate",
            Command::Game => "game",
            Command::Verify => "verify",
            Command::Converge => "converge",
        }
    }
}

/// Command-line overrides; each replaces the matching config entry.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub q: Option<usize>,
    pub rho: Option<f64>,
    pub lambda: Option<f64>,
    pub workers: Option<usize>,
}

impl Overrides {
    /// `--rho` sets the scheme discount for `solve` and the checked discount for `verify`.
    pub fn apply(&self, cmd: Command, cfg: &mut Config) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(q) = self.q {
            cfg.simulate.q = q;
            cfg.game.q = q;
        }
        if let Some(rho) = self.rho {
            match cmd {
                Command::Verify => cfg.verify.rho = rho,
                _ => cfg.scheme.rho = rho,
            }
        }
        if let Some(lambda) = self.lambda {
            cfg.verify.lambdas = vec![lambda];
        }
        if let Some(workers) = self.workers {
            cfg.workers = workers;
        }
    }
}

pub struct RunReport {
    pub manifest: RunManifest,
    pub out: PathBuf,
}

struct Ctx {
    cfg: Config,
    spec: ProblemSpec,
    grid: Grid,
    zg: ImpulseGrid,
    pool: Pool,
    out: OutDir,
    solution_id: Option<u64>,
}

impl Ctx {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn solve(&mut self, rho: f64) -> Result<Solution, LabError> {
        let scheme = self.cfg.scheme.with_rho(rho);
        let sol = solve_in(&self.pool, &self.spec, &self.grid, &self.zg, &scheme)?;
        if self.solution_id.is_none() {
            self.solution_id = Some(sol.id);
        }
        Ok(sol)
    }

    fn point(&self, x: &[f64]) -> Result<Point, LabError> {
        if x.len() != self.dim() {
            return Err(LabError::Invalid(format!(
                "point {x:?} does not have dimension {}",
                self.dim()
            )));
        }
        let mut p = [0.0; MAX_DIM];
        p[..x.len()].copy_from_slice(x);
        Ok(p)
    }
}

/// Loads the config, applies overrides and runs `cmd`, writing into `out`.
pub fn run(
    cmd: Command,
    config: &std::path::Path,
    out: &std::path::Path,
    overrides: &Overrides,
) -> Result<RunReport, LabError> {
    let mut cfg = Config::load(config)?;
    overrides.apply(cmd, &mut cfg);
    run_config(cmd, cfg, out)
}

pub fn run_config(cmd: Command, cfg: Config, out: &std::path::Path) -> Result<RunReport, LabError> {
    let start = Instant::now();
    let spec = cfg.spec();
    spec.check_shape()?;
    let grid = cfg.grid(&spec)?;
    let zg = cfg.impulse_grid(&spec, &grid)?;
    let pool = Pool::new(cfg.workers)?;
    let mut ctx = Ctx {
        out: OutDir::create(out)?,
        cfg,
        spec,
        grid,
        zg,
        pool,
        solution_id: None,
    };

    let report = validate_problem(&ctx.spec, ctx.cfg.verify.samples, ctx.cfg.seed)?;
    ctx.out.json("validation.json", &report)?;
    let valid = report.passed();
    let passed = valid
        && match cmd {
            Command::Solve => solve_cmd(&mut ctx)?,
            Command::Simulate => simulate_cmd(&mut ctx)?,
            Command::Game => game_cmd(&mut ctx)?,
            Command::Verify => verify_cmd(&mut ctx)?,
            Command::Converge => converge_cmd(&mut ctx)?,
        };
    let manifest = RunManifest {
        command: cmd.name().to_string(),
        config_hash: ctx.cfg.hash(),
        seed: ctx.cfg.seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        workers: ctx.pool.workers(),
        solution_id: ctx.solution_id.map(|id| format!("{id:016x}")),
        passed,
        timing_ms: start.elapsed().as_secs_f64() * 1e3,
        outputs: ctx.out.files().to_vec(),
    };
    manifest.write(ctx.out.path())?;
    if !valid {
        let failed: Vec<&str> = report.failures().map(|c| c.name).collect();
        return Err(LabError::Validation(format!(
            "assumption checks failed: {}",
            failed.join(", ")
        )));
    }
    Ok(RunReport {
        manifest,
        out: out.to_path_buf(),
    })
}

fn solve_cmd(ctx: &mut Ctx) -> Result<bool, LabError> {
    let sol = ctx.solve(ctx.cfg.scheme.rho)?;
    let d = ctx.dim();
    let space = sol.grid.space;

    let mut header = axes("x", d);
    header.push("u".into());
    let rows: Vec<Vec<String>> = (0..space.len())
        .map(|i| {
            let mut r = nums(&space.point(i)[..d]);
            r.push(num(sol.layers[0].values()[i]));
            r
        })
        .collect();
    ctx.out.csv("layer0.csv", &header, &rows)?;

    let mut header: Vec<String> = vec!["k".into(), "t".into(), "node".into()];
    header.extend(axes("x", d));
    header.extend(["u".into(), "mu".into(), "act".into()]);
    header.extend(axes("z", d));
    header.extend(axes("b", d));
    let n = sol.steps();
    let mut rows = Vec::with_capacity((n + 1) * space.len());
    for k in 0..=n {
        for i in 0..space.len() {
            let mut r = vec![
                k.to_string(),
                sol.grid.time.time(k).to_string(),
                i.to_string(),
            ];
            r.extend(nums(&space.point(i)[..d]));
            r.push(num(sol.layers[k].values()[i]));
            r.push(num(sol.intervention[k].values()[i]));
            r.push(u8::from(sol.act[k][i]).to_string());
            r.extend(nums(&sol.impulses.point(sol.impulse[k][i])[..d]));
            if k < n {
                r.extend(nums(&ctx.spec.control(sol.controls[k][i])[..d]));
            } else {
                r.extend((0..d).map(|_| String::new()));
            }
            rows.push(r);
        }
    }
    ctx.out.csv("values.csv", &header, &rows)?;

    let summary = serde_json::json!({
        "id": format!("{:016x}", sol.id),
        "rho": sol.rho(),
        "nodes": space.len(),
        "steps": n,
        "impulses": sol.impulses.len(),
        "impulse_step": sol.impulses.step(),
        "impulse_radius": sol.impulses.radius(),
        "tolerance": solution_tolerance(&sol),
        "act_counts": sol.act.iter().map(|a| a.iter().filter(|&&x| x).count()).collect::<Vec<_>>(),
        "linear_solves": sol.diagnostics.iter().map(|s| s.linear_solves).sum::<usize>(),
        "max_obstacle_iterations": sol.diagnostics.iter().map(|s| s.obstacle_iterations).max().unwrap_or(0),
    });
    ctx.out.json("solution.json", &summary)?;
    Ok(true)
}

fn adversary_name(a: &Adversary) -> String {
    match a {
        Adversary::Qvi => "qvi".into(),
        Adversary::Constant(i) => format!("constant:{i}"),
    }
}

fn simulate_cmd(ctx: &mut Ctx) -> Result<bool, LabError> {
    let sim = ctx.cfg.simulate.clone();
    let needs_solution = sim.impulse == ImpulseChoice::Qvi
        || sim.control == ControlChoice::Named(ImpulseChoice::Qvi);
    let policies = if needs_solution {
        let sol = ctx.solve(ctx.cfg.scheme.rho)?;
        Some(extract_policies(&ctx.spec, &sol)?)
    } else {
        None
    };
    let constant;
    let qvi_control;
    let bpol: &dyn DiffusionPolicy = match sim.control {
        ControlChoice::Constant(i) if i < ctx.spec.control_count() => {
            constant = ConstantControl(ctx.spec.control(i));
            &constant
        }
        ControlChoice::Constant(i) => {
            return Err(LabError::Invalid(format!("control index {i} out of range")))
        }
        ControlChoice::Named(ImpulseChoice::Qvi) => {
            qvi_control = policies.as_ref().expect("solved").diffusion();
            &qvi_control
        }
        ControlChoice::Named(ImpulseChoice::None) => {
            return Err(LabError::Invalid(
                "simulate.control must be \"qvi\" or a control index".into(),
            ))
        }
    };
    let ipol: &dyn ImpulsePolicy = match sim.impulse {
        ImpulseChoice::Qvi => policies.as_ref().expect("solved"),
        ImpulseChoice::None => &NoImpulse,
    };
    let hz = Horizon::from_start(ctx.grid.time, sim.q)?;
    let d = ctx.dim();
    let seed = ctx.cfg.seed;

    let mut header = axes("x", d);
    header.extend(["mean", "se", "n", "running", "cost", "terminal", "impulses"].map(String::from));
    let mut rows = Vec::new();
    for x in &sim.x0 {
        let x0 = ctx.point(x)?;
        let est = estimate_gain_in(&ctx.pool, &ctx.spec, &hz, &x0, bpol, ipol, sim.paths, seed)?;
        let mut r = nums(&x0[..d]);
        r.extend([num(est.mean), num(est.std_error), est.n.to_string()]);
        r.extend(nums(&[
            est.running_mean,
            est.cost_mean,
            est.terminal_mean,
            est.impulses_mean,
        ]));
        rows.push(r);
    }
    ctx.out.csv("gain.csv", &header, &rows)?;

    if let Some(x) = sim.x0.first() {
        let path = simulate_path(&ctx.spec, &hz, &ctx.point(x)?, bpol, ipol, seed)?;
        let mut header: Vec<String> = vec!["k".into(), "t".into()];
        header.extend(axes("x_pre", d));
        header.extend(axes("x_post", d));
        header.extend(axes("b", d));
        header.extend(["impulses".into(), "running".into(), "costs".into()]);
        let rows: Vec<Vec<String>> = path
            .records
            .iter()
            .map(|rec| {
                let mut r = vec![rec.k.to_string(), rec.t.to_string()];
                r.extend(nums(&rec.x_pre[..d]));
                r.extend(nums(&rec.x_post[..d]));
                match rec.b {
                    Some(b) => r.extend(nums(&b[..d])),
                    None => r.extend((0..d).map(|_| String::new())),
                }
                r.extend([
                    rec.impulses.len().to_string(),
                    num(rec.f_acc),
                    num(rec.k_acc),
                ]);
                r
            })
            .collect();
        ctx.out.csv("path.csv", &header, &rows)?;
    }
    Ok(true)
}

fn game_cmd(ctx: &mut Ctx) -> Result<bool, LabError> {
    if ctx.cfg.scheme.rho != 0.0 {
        return Err(LabError::Invalid(
            "the game command needs scheme.rho = 0".into(),
        ));
    }
    let sol = ctx.solve(0.0)?;
    let policies: FeedbackPolicyPair = extract_policies(&ctx.spec, &sol)?;
    let game = ctx.cfg.game.clone();
    let adversaries = game
        .adversaries
        .clone()
        .unwrap_or_else(|| default_adversaries(&ctx.spec));
    let d = ctx.dim();
    let seed = ctx.cfg.seed;

    let mut bounds_header = axes("x", d);
    bounds_header.extend(
        [
            "u0",
            "v_lower",
            "se_lower",
            "v_upper",
            "se_upper",
            "lower_adversary",
            "q",
            "n",
        ]
        .map(String::from),
    );
    let mut family_header = axes("x", d);
    family_header.extend(["adversary", "mean", "se"].map(String::from));
    let (mut bounds, mut family) = (Vec::new(), Vec::new());
    for x in &game.x0 {
        let x0 = ctx.point(x)?;
        let est = estimate_value_pair_in(
            &ctx.pool,
            &ctx.spec,
            &x0,
            &policies,
            game.q,
            &adversaries,
            game.paths,
            seed,
        )?;
        let mut r = nums(&x0[..d]);
        r.extend(nums(&[
            sol.value(0, &x0),
            est.lower,
            est.lower_se,
            est.upper,
            est.upper_se,
        ]));
        r.extend([
            adversary_name(&est.lower_adversary),
            est.q.to_string(),
            est.n.to_string(),
        ]);
        bounds.push(r);
        for m in &est.family {
            let mut r = nums(&x0[..d]);
            r.extend([adversary_name(&m.adversary), num(m.mean), num(m.std_error)]);
            family.push(r);
        }
    }
    ctx.out.csv("value_pair.csv", &bounds_header, &bounds)?;
    ctx.out.csv("adversaries.csv", &family_header, &family)?;

    if !game.budgets.is_empty() {
        let x0 = ctx.point(&game.sweep_x0)?;
        let sweep = precommitment_sweep_in(
            &ctx.pool,
            &ctx.spec,
            &x0,
            &policies,
            &game.budgets,
            &adversaries,
            game.paths,
            seed,
        )?;
        let rows: Vec<Vec<String>> = sweep
            .iter()
            .map(|r| {
                vec![
                    r.q.to_string(),
                    num(r.lower),
                    num(r.lower_se),
                    r.increment.map(num).unwrap_or_default(),
                ]
            })
            .collect();
        ctx.out.csv(
            "sweep.csv",
            &["q", "v_lower", "se", "increment"].map(String::from),
            &rows,
        )?;
    }

    let mut header: Vec<String> = vec!["rule".into(), "play".into()];
    header.extend(axes("x", d));
    header.extend(["delta", "se", "stopped_fraction", "u0"].map(String::from));
    let mut rows = Vec::new();
    for p in &game.dpp {
        let x0 = ctx.point(&p.x0)?;
        let r = dpp_residual_in(
            &ctx.pool, &ctx.spec, &sol, &policies, &x0, &p.rule, p.play, game.q, game.paths, seed,
        )?;
        let mut row = vec![rule_name(&p.rule), play_name(p.play).into()];
        row.extend(nums(&x0[..d]));
        row.extend(nums(&[r.delta, r.std_error, r.stopped_fraction, r.u0]));
        rows.push(row);
    }
    ctx.out.csv("dpp.csv", &header, &rows)?;
    Ok(true)
}

fn rule_name(rule: &StoppingRule) -> String {
    match rule {
        StoppingRule::FixedTime { time } => format!("fixed-time:{time}"),
        StoppingRule::ExitBox { lo, hi } => format!("exit-box:{lo:?}:{hi:?}"),
    }
}

fn play_name(play: DppPlay) -> &'static str {
    match play {
        DppPlay::Optimal => "optimal",
        DppPlay::HoldAlways => "hold-always",
    }
}

/// Folds per-trial verdicts of one check into a single record.
fn merge(check: String, verdicts: &[Verdict]) -> Verdict {
    let worst = verdicts.iter().min_by(|a, b| a.margin.total_cmp(&b.margin));
    Verdict {
        check,
        pass: verdicts.iter().all(|v| v.pass),
        worst_node: worst.and_then(|v| v.worst_node.clone()),
        margin: worst.map_or(f64::INFINITY, |v| v.margin),
        violations: verdicts.iter().map(|v| v.violations).sum(),
    }
}

fn verify_cmd(ctx: &mut Ctx) -> Result<bool, LabError> {
    let v = ctx.cfg.verify.clone();
    let seed = ctx.cfg.seed;
    let sol = ctx.solve(0.0)?;
    let space = ctx.grid.space;
    let d = ctx.dim();
    let horizon = ctx.spec.horizon.to_f64();
    let mut verdicts = bound_and_obstacle_check(&ctx.spec, &sol)?;

    // Intervention-operator properties on seeded random field pairs.
    let lambdas = [0.0, 0.25, 0.5, 0.75, 1.0];
    let amplitude = 1.0 + impulse_core::global_bound(&ctx.spec);
    let mut per_check: Vec<Vec<Verdict>> = vec![Vec::new(); 3];
    for pair in 0..v.random_pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(pair as u64);
        let mut field = || {
            let vals = (0..space.len())
                .map(|_| rng.random_range(-amplitude..amplitude))
                .collect();
            ValueField::new(space, vals)
        };
        let (u, w) = (field()?, field()?);
        let t = rng.random_range(0.0..=horizon);
        for (j, r) in intervention_properties(&ctx.spec, &u, &w, t, &ctx.zg, &lambdas)?
            .into_iter()
            .enumerate()
        {
            per_check[j].push(r);
        }
    }
    for (j, name) in [
        "intervention-monotone",
        "intervention-convex",
        "intervention-shift",
    ]
    .iter()
    .enumerate()
    {
        verdicts.push(merge(
            format!("{name} ({} random pairs)", v.random_pairs),
            &per_check[j],
        ));
    }

    let g2 = ValueField::from_fn(space, |x| ctx.spec.terminal_gain(x));
    let g1 = g2.map(|g| g - v.comparison_shift);
    let cmp = discrete_comparison_in(
        &ctx.pool,
        &ctx.spec,
        &ctx.grid,
        &ctx.zg,
        &ctx.cfg.scheme.with_rho(0.0),
        &g1,
        &g2,
    )?;
    verdicts.push(cmp.ordered);
    verdicts.push(cmp.contraction);

    let discounted = ctx.solve(v.rho)?;
    let consts = DiscountedConstants::new(&ctx.spec, v.rho)?;
    for &lambda in &v.lambdas {
        verdicts
            .push(strict_supersolution_residual(&ctx.spec, &discounted, lambda, &consts)?.verdict);
    }
    verdicts.push(discount_transform(&sol, &discounted, d));

    ctx.out.jsonl("verdicts.jsonl", &verdicts)?;
    Ok(verdicts.iter().all(|v| v.pass))
}

/// `sup |u_rho - e^{rho t} u_0| <= tol` over every node and layer.
fn discount_transform(plain: &Solution, discounted: &Solution, d: usize) -> Verdict {
    let tol = solution_tolerance(plain);
    let rho = discounted.rho();
    let space = plain.grid.space;
    let mut worst = (0.0f64, 0usize, 0usize);
    for k in 0..=plain.steps() {
        let e = (rho * plain.grid.time.time_f64(k)).exp();
        for i in 0..space.len() {
            let err = (discounted.layers[k].values()[i] - e * plain.layers[k].values()[i]).abs();
            if err > worst.0 || err.is_nan() {
                worst = (err, k, i);
            }
        }
    }
    Verdict {
        check: format!("discount-transform(rho={rho})"),
        pass: worst.0 <= tol,
        worst_node: Some(WorstNode {
            layer: Some(worst.1),
            node: worst.2,
            x: space.point(worst.2)[..d].to_vec(),
        }),
        margin: tol - worst.0,
        violations: usize::from(worst.0 > tol || worst.0.is_nan()),
    }
}

fn converge_cmd(ctx: &mut Ctx) -> Result<bool, LabError> {
    let z = &ctx.cfg.impulses;
    let counts = match (&z.counts, z.step) {
        (Some(c), _) => c.clone(),
        (None, step) => ImpulseGrid::step_counts(
            &ctx.spec,
            step.unwrap_or(ctx.grid.space.max_step()),
            z.radius,
        )?,
    };
    let levels = refinement_levels(
        &ctx.spec,
        &ctx.grid,
        &counts,
        ctx.cfg.impulses.radius,
        ctx.cfg.converge.levels,
    )?;
    let table = convergence_study_in(&ctx.pool, &ctx.spec, &ctx.cfg.scheme, &levels)?;
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.nodes.to_string(),
                r.steps.to_string(),
                r.impulses.to_string(),
            ];
            row.extend(nums(&[r.h, r.dt, r.dz, r.u0_center]));
            row.push(r.diff.map(num).unwrap_or_default());
            row.push(r.order.map(num).unwrap_or_default());
            row
        })
        .collect();
    let header = [
        "nodes",
        "steps",
        "impulses",
        "h",
        "dt",
        "dz",
        "u0_center",
        "diff",
        "order",
    ]
    .map(String::from);
    ctx.out.csv("convergence.csv", &header, &rows)?;
    let diffs = table.diffs();
    Ok(diffs.windows(2).all(|w| w[1] < w[0]))
}
