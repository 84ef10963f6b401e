//! Game instances drawn from a closed parametric catalog, assumption checks
//! and a-priori constants.
//!
//! Every catalog family carries analytic sup-norm and Lipschitz formulas, so
//! the bounds used elsewhere (`global_bound`, `truncation_radius`) are exact
//! rather than sampled.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{norm, Control, GameModel, Point, MAX_DIM};
use crate::rational::Rational;

/// Scalar profile over the state, used for the terminal gain and the state
/// part of the running gain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// `amplitude * cos(<frequency, x> + phase)`
    Cosine {
        amplitude: f64,
        frequency: Vec<f64>,
        phase: f64,
    },
    /// `amplitude * exp(-|x - center|^2 / (2 width^2))`
    Gaussian {
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
    },
    /// `<slope, x> + intercept`; unbounded unless the slope vanishes.
    Affine {
        slope: Vec<f64>,
        intercept: f64,
    },
}

fn dot(a: &[f64], x: &Point) -> f64 {
    a.iter().zip(x).map(|(a, x)| a * x).sum()
}

fn euclid(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

impl Profile {
    pub fn eval(&self, x: &Point) -> f64 {
        match self {
            Profile::Constant { value } => *value,
            Profile::Cosine {
                amplitude,
                frequency,
                phase,
            } => amplitude * libm::cos(dot(frequency, x) + phase),
            Profile::Gaussian {
                amplitude,
                center,
                width,
            } => {
                let r2: f64 = center.iter().zip(x).map(|(c, x)| (x - c) * (x - c)).sum();
                amplitude * libm::exp(-r2 / (2.0 * width * width))
            }
            Profile::Affine { slope, intercept } => dot(slope, x) + intercept,
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match self {
            Profile::Constant { value } => value.abs(),
            Profile::Cosine { amplitude, .. } | Profile::Gaussian { amplitude, .. } => {
                amplitude.abs()
            }
            Profile::Affine { slope, intercept } => {
                if slope.iter().all(|s| *s == 0.0) {
                    intercept.abs()
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            Profile::Constant { .. } => 0.0,
            Profile::Cosine {
                amplitude,
                frequency,
                ..
            } => amplitude.abs() * euclid(frequency),
            Profile::Gaussian {
                amplitude, width, ..
            } => amplitude.abs() * libm::exp(-0.5) / width.abs(),
            Profile::Affine { slope, .. } => euclid(slope),
        }
    }

    fn check(&self, dim: usize, what: &str) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidProblem(format!("{what}: {m}")));
        match self {
            Profile::Cosine { frequency, .. } if frequency.len() != dim => {
                bad("frequency length != dim")
            }
            Profile::Gaussian { center, .. } if center.len() != dim => bad("center length != dim"),
            Profile::Gaussian { width, .. } if !(*width > 0.0) => bad("width must be positive"),
            Profile::Affine { slope, .. } if slope.len() != dim => bad("slope length != dim"),
            _ => Ok(()),
        }
    }
}

/// `mu(x, b) = A x + C b + m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Drift {
    Affine {
        state: Vec<Vec<f64>>,
        control: Vec<Vec<f64>>,
        offset: Vec<f64>,
    },
}

impl Drift {
    pub fn eval(&self, x: &Point, b: &Control) -> Point {
        let Drift::Affine {
            state,
            control,
            offset,
        } = self;
        let mut out = [0.0; MAX_DIM];
        for (i, o) in offset.iter().enumerate() {
            out[i] = dot(&state[i], x) + dot(&control[i], b) + o;
        }
        out
    }

    /// Frobenius norm of `A`, an upper bound on the Lipschitz constant in `x`.
    pub fn lipschitz(&self) -> f64 {
        let Drift::Affine { state, .. } = self;
        libm::sqrt(state.iter().flatten().map(|a| a * a).sum())
    }
}

/// Diagonal diffusion, `sigma_i(x, b) = s_i + l_i x_i + <e_i, b>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Diffusion {
    Constant {
        scale: Vec<f64>,
    },
    Affine {
        scale: Vec<f64>,
        state: Vec<f64>,
        control: Vec<Vec<f64>>,
    },
}

impl Diffusion {
    pub fn eval(&self, x: &Point, b: &Control) -> Point {
        let mut out = [0.0; MAX_DIM];
        match self {
            Diffusion::Constant { scale } => {
                out[..scale.len()].copy_from_slice(scale);
            }
            Diffusion::Affine {
                scale,
                state,
                control,
            } => {
                for i in 0..scale.len() {
                    out[i] = scale[i] + state[i] * x[i] + dot(&control[i], b);
                }
            }
        }
        out
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            Diffusion::Constant { .. } => 0.0,
            Diffusion::Affine { state, .. } => euclid(state),
        }
    }
}

/// `f(t, x, b) = profile(x) + <control_weight, b>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunningGain {
    pub profile: Profile,
    pub control_weight: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Displacement {
    /// `Gamma(t, z) = z`
    #[default]
    Shift,
}

/// `K(t, z) = -fixed - proportional * |z|^exponent`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulseCost {
    pub fixed: f64,
    pub proportional: f64,
    pub exponent: f64,
}

impl ImpulseCost {
    pub fn eval(&self, z_norm: f64) -> f64 {
        -self.fixed - self.proportional * libm::pow(z_norm, self.exponent)
    }
}

/// Sampled control set: a uniform lattice on the box `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSet {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points: Vec<usize>,
}

impl ControlSet {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn count(&self) -> usize {
        self.points.iter().product()
    }

    pub fn sample(&self, mut index: usize) -> Control {
        let mut b = [0.0; MAX_DIM];
        for a in 0..self.dim() {
            let n = self.points[a];
            let i = index % n;
            index /= n;
            b[a] = if n == 1 {
                0.5 * (self.lo[a] + self.hi[a])
            } else {
                let m = (n - 1) as f64;
                (self.lo[a] * (m - i as f64) + self.hi[a] * i as f64) / m
            };
        }
        b
    }
}

/// Closed impulse set `Z`, a (possibly unbounded) box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulseRange {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ImpulseRange {
    pub fn contains(&self, z: &Point) -> bool {
        (0..self.lo.len()).all(|a| self.lo[a] <= z[a] && z[a] <= self.hi[a])
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.iter().chain(&self.hi).all(|v| v.is_finite())
    }
}

/// A game instance from the catalog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub horizon: Rational,
    pub dim: usize,
    pub drift: Drift,
    pub diffusion: Diffusion,
    pub running_gain: RunningGain,
    pub terminal_gain: Profile,
    #[serde(default)]
    pub displacement: Displacement,
    pub impulse_cost: ImpulseCost,
    pub controls: ControlSet,
    pub impulse_range: ImpulseRange,
    /// `K0 > 0` with `K <= -K0`.
    pub cost_floor: f64,
}

impl ProblemSpec {
    /// TP1: `d = 1`, `T = 1`, `mu = b`, `B = [-1, 1]` (21 samples),
    /// `sigma = 0.5`, `f = 0`, `g = cos`, `Gamma(t, z) = z`,
    /// `K(t, z) = -0.1 - 0.05 |z|`, `Z = R`, `K0 = 0.1`.
    pub fn tp1() -> Self {
        ProblemSpec {
            horizon: Rational::integer(1),
            dim: 1,
            drift: Drift::Affine {
                state: vec![vec![0.0]],
                control: vec![vec![1.0]],
                offset: vec![0.0],
            },
            diffusion: Diffusion::Constant { scale: vec![0.5] },
            running_gain: RunningGain {
                profile: Profile::Constant { value: 0.0 },
                control_weight: vec![0.0],
            },
            terminal_gain: Profile::Cosine {
                amplitude: 1.0,
                frequency: vec![1.0],
                phase: 0.0,
            },
            displacement: Displacement::Shift,
            impulse_cost: ImpulseCost {
                fixed: 0.1,
                proportional: 0.05,
                exponent: 1.0,
            },
            controls: ControlSet {
                lo: vec![-1.0],
                hi: vec![1.0],
                points: vec![21],
            },
            impulse_range: ImpulseRange {
                lo: vec![f64::NEG_INFINITY],
                hi: vec![f64::INFINITY],
            },
            cost_floor: 0.1,
        }
    }

    /// TP0: TP1 with `g = 0`; the value is identically zero.
    pub fn tp0() -> Self {
        ProblemSpec {
            terminal_gain: Profile::Constant { value: 0.0 },
            ..Self::tp1()
        }
    }

    /// TP2: TP1 with `g = 1`; the value is identically one.
    pub fn tp2() -> Self {
        ProblemSpec {
            terminal_gain: Profile::Constant { value: 1.0 },
            ..Self::tp1()
        }
    }

    /// Checks dimensions and parameter domains.
    pub fn check_shape(&self) -> Result<()> {
        let d = self.dim;
        let bad = |m: String| Err(Error::InvalidProblem(m));
        if d == 0 || d > MAX_DIM {
            return bad(format!("state dimension {d} not in 1..={MAX_DIM}"));
        }
        if !self.horizon.is_positive() {
            return bad("horizon must be positive".into());
        }
        let db = self.controls.dim();
        if db == 0 || db > MAX_DIM {
            return bad(format!("control dimension {db} not in 1..={MAX_DIM}"));
        }
        if self.controls.hi.len() != db || self.controls.points.len() != db {
            return bad("control set lo/hi/points lengths differ".into());
        }
        if self.controls.points.contains(&0) {
            return bad("control set needs at least one sample per axis".into());
        }
        let Drift::Affine {
            state,
            control,
            offset,
        } = &self.drift;
        if state.len() != d
            || control.len() != d
            || offset.len() != d
            || state.iter().any(|r| r.len() != d)
            || control.iter().any(|r| r.len() != db)
        {
            return bad("drift shape must be A: d x d, C: d x dB, m: d".into());
        }
        match &self.diffusion {
            Diffusion::Constant { scale } if scale.len() != d => {
                return bad("diffusion scale length != dim".into())
            }
            Diffusion::Affine {
                scale,
                state,
                control,
            } if scale.len() != d
                || state.len() != d
                || control.len() != d
                || control.iter().any(|r| r.len() != db) =>
            {
                return bad("affine diffusion shape must be s: d, l: d, E: d x dB".into())
            }
            _ => {}
        }
        if self.running_gain.control_weight.len() != db {
            return bad("running gain control weight length != control dim".into());
        }
        self.running_gain.profile.check(d, "running gain")?;
        self.terminal_gain.check(d, "terminal gain")?;
        if self.impulse_range.lo.len() != d || self.impulse_range.hi.len() != d {
            return bad("impulse range length != dim".into());
        }
        let ImpulseCost {
            fixed,
            proportional,
            exponent,
        } = self.impulse_cost;
        if !(fixed.is_finite() && proportional.is_finite() && exponent > 0.0) {
            return bad("impulse cost needs finite coefficients and a positive exponent".into());
        }
        let all_params = [self.cost_floor, fixed, proportional];
        if all_params.iter().any(|v| v.is_nan()) {
            return bad("NaN parameter".into());
        }
        Ok(())
    }

    /// Analytic `||f||_inf` (profile sup plus the largest control term on the box).
    pub fn running_gain_sup(&self) -> f64 {
        let w = &self.running_gain.control_weight;
        let control_part: f64 = (0..w.len())
            .map(|j| w[j].abs() * self.controls.lo[j].abs().max(self.controls.hi[j].abs()))
            .sum();
        self.running_gain.profile.sup_norm() + control_part
    }

    pub fn terminal_gain_sup(&self) -> f64 {
        self.terminal_gain.sup_norm()
    }

    /// `sup |K|` over `[0, T] x cl B(0; radius)`.
    pub fn cost_sup(&self, radius: f64) -> f64 {
        (-self.impulse_cost.eval(radius))
            .max(-self.impulse_cost.eval(0.0))
            .max(0.0)
    }

    /// Lipschitz bound of `x -> J(t, x; a, b)` for open-loop controls, from
    /// `E|dX_s|^2 <= |dx|^2 exp((2 L_mu + L_sigma^2)(s - t))`.
    pub fn functional_lipschitz_bound(&self, t: f64) -> f64 {
        let lmu = self.drift.lipschitz();
        let lsig = self.diffusion.lipschitz();
        let kappa = 0.5 * (2.0 * lmu + lsig * lsig);
        let rem = self.horizon.to_f64() - t;
        let lf = self.running_gain.profile.lipschitz();
        let lg = self.terminal_gain.lipschitz();
        let integral = if kappa == 0.0 {
            rem
        } else {
            (libm::exp(kappa * rem) - 1.0) / kappa
        };
        lf * integral + lg * libm::exp(kappa * rem)
    }
}

impl GameModel for ProblemSpec {
    fn dim(&self) -> usize {
        self.dim
    }

    fn horizon(&self) -> Rational {
        self.horizon
    }

    fn control_count(&self) -> usize {
        self.controls.count()
    }

    fn control(&self, index: usize) -> Control {
        self.controls.sample(index)
    }

    fn drift(&self, x: &Point, b: &Control) -> Point {
        self.drift.eval(x, b)
    }

    fn diffusion(&self, x: &Point, b: &Control) -> Point {
        self.diffusion.eval(x, b)
    }

    fn running_gain(&self, _t: f64, x: &Point, b: &Control) -> f64 {
        self.running_gain.profile.eval(x) + dot(&self.running_gain.control_weight, b)
    }

    fn terminal_gain(&self, x: &Point) -> f64 {
        self.terminal_gain.eval(x)
    }

    fn displacement(&self, _t: f64, z: &Point) -> Point {
        match self.displacement {
            Displacement::Shift => *z,
        }
    }

    fn impulse_cost(&self, _t: f64, z: &Point) -> f64 {
        self.impulse_cost.eval(norm(z, self.dim))
    }
}

/// `c = T ||f||_inf + ||g||_inf`, the a-priori bound on both value functions.
pub fn global_bound(spec: &ProblemSpec) -> f64 {
    spec.horizon.to_f64() * spec.running_gain_sup() + spec.terminal_gain_sup()
}

/// Smallest `r` with `K(t, z) <= -2c` whenever `|z| > r`; optimal impulses
/// never leave `cl B(0; r)`.
pub fn truncation_radius(spec: &ProblemSpec) -> Result<f64> {
    let ImpulseCost {
        fixed,
        proportional,
        exponent,
    } = spec.impulse_cost;
    if !(proportional > 0.0) {
        return Err(Error::NoTruncationRadius);
    }
    let excess = 2.0 * global_bound(spec) - fixed;
    if excess <= 0.0 {
        return Ok(0.0);
    }
    Ok(libm::pow(excess / proportional, 1.0 / exponent))
}

/// Coordinate label and value of a sample point that falsified a check.
pub type Witness = Vec<(&'static str, f64)>;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Largest sampled quantity (quotient, norm, cost) relevant to the check.
    pub measured: f64,
    /// Catalog constant the measurement is compared against.
    pub bound: f64,
    pub samples: usize,
    pub witness: Option<Witness>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub samples: usize,
    pub running_gain_sup: f64,
    pub terminal_gain_sup: f64,
    pub global_bound: f64,
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub(crate) fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

const SAMPLE_BOX: f64 = 10.0;

fn sample_box(rng: &mut impl RngCore, dim: usize, half_width: f64) -> Point {
    let mut p = [0.0; MAX_DIM];
    for v in p.iter_mut().take(dim) {
        *v = half_width * (2.0 * unit_f64(rng) - 1.0);
    }
    p
}

fn sample_impulse(
    rng: &mut impl RngCore,
    range: &ImpulseRange,
    dim: usize,
    half_width: f64,
) -> Point {
    let mut z = [0.0; MAX_DIM];
    for a in 0..dim {
        let lo = range.lo[a].max(-half_width);
        let hi = range.hi[a].min(half_width);
        z[a] = if lo <= hi {
            lo + (hi - lo) * unit_f64(rng)
        } else {
            range.lo[a]
        };
    }
    z
}

fn tag(
    prefix: [&'static str; 2],
    p: Point,
    dim: usize,
) -> impl Iterator<Item = (&'static str, f64)> {
    (0..dim).map(move |a| (prefix[a], p[a]))
}

struct QuotientCheck {
    max: f64,
    witness: Option<Witness>,
}

impl QuotientCheck {
    fn new() -> Self {
        QuotientCheck {
            max: 0.0,
            witness: None,
        }
    }

    fn record(&mut self, q: f64, witness: impl FnOnce() -> Witness) {
        if q > self.max || q.is_nan() {
            self.max = q;
            self.witness = Some(witness());
        }
    }

    fn finish(self, name: &'static str, bound: f64, samples: usize) -> AssumptionCheck {
        let passed = self.max <= bound * (1.0 + 1e-9) + 1e-12;
        AssumptionCheck {
            name,
            passed,
            measured: self.max,
            bound,
            samples,
            witness: if passed { None } else { self.witness },
        }
    }
}

/// Sample-based falsification of the standing assumptions.
///
/// Deterministic given `seed`. Returns an error only for malformed specs and
/// for catalog members whose reported sup norm of `f` or `g` is infinite.
pub fn validate_problem(spec: &ProblemSpec, samples: usize, seed: u64) -> Result<ValidationReport> {
    spec.check_shape()?;
    if samples < 100 {
        return Err(Error::InvalidArgument(format!(
            "need at least 100 samples, got {samples}"
        )));
    }
    let f_sup = spec.running_gain_sup();
    let g_sup = spec.terminal_gain_sup();
    if !f_sup.is_finite() {
        return Err(Error::NonConforming("running gain is unbounded".into()));
    }
    if !g_sup.is_finite() {
        return Err(Error::NonConforming("terminal gain is unbounded".into()));
    }

    let d = spec.dim;
    let horizon = spec.horizon.to_f64();
    let c = global_bound(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = spec.control_count();
    let mut checks = Vec::new();

    let b_ok = (0..spec.controls.dim()).all(|a| {
        spec.controls.lo[a].is_finite()
            && spec.controls.hi[a].is_finite()
            && spec.controls.lo[a] <= spec.controls.hi[a]
    });
    checks.push(AssumptionCheck {
        name: "controls-compact",
        passed: b_ok && nb > 0,
        measured: nb as f64,
        bound: f64::INFINITY,
        samples: nb,
        witness: None,
    });

    let mut mu = QuotientCheck::new();
    let mut sig = QuotientCheck::new();
    let mut fl = QuotientCheck::new();
    let mut gl = QuotientCheck::new();
    let mut fmax = QuotientCheck::new();
    let mut gmax = QuotientCheck::new();
    for _ in 0..samples {
        let x = sample_box(&mut rng, d, SAMPLE_BOX);
        let y = sample_box(&mut rng, d, SAMPLE_BOX);
        let bi = (rng.next_u64() % nb as u64) as usize;
        let t = horizon * unit_f64(&mut rng);
        let b = spec.control(bi);
        let dx = norm(&[x[0] - y[0], x[1] - y[1]], d);
        if dx == 0.0 {
            continue;
        }
        let wit = || -> Witness {
            let mut w: Witness = tag(["x0", "x1"], x, d)
                .chain(tag(["y0", "y1"], y, d))
                .collect();
            w.extend(tag(["b0", "b1"], b, spec.controls.dim()));
            w
        };
        let (mx, my) = (spec.drift(&x, &b), spec.drift(&y, &b));
        mu.record(norm(&[mx[0] - my[0], mx[1] - my[1]], d) / dx, wit);
        let (sx, sy) = (spec.diffusion(&x, &b), spec.diffusion(&y, &b));
        sig.record(norm(&[sx[0] - sy[0], sx[1] - sy[1]], d) / dx, wit);
        let (fx, fy) = (spec.running_gain(t, &x, &b), spec.running_gain(t, &y, &b));
        fl.record((fx - fy).abs() / dx, wit);
        fmax.record(fx.abs(), wit);
        let (gx, gy) = (spec.terminal_gain(&x), spec.terminal_gain(&y));
        gl.record((gx - gy).abs() / dx, wit);
        gmax.record(gx.abs(), wit);
    }
    checks.push(mu.finish("drift-lipschitz", spec.drift.lipschitz(), samples));
    checks.push(sig.finish("diffusion-lipschitz", spec.diffusion.lipschitz(), samples));
    checks.push(fmax.finish("running-gain-bounded", f_sup, samples));
    checks.push(gmax.finish("terminal-gain-bounded", g_sup, samples));
    checks.push(fl.finish(
        "running-gain-lipschitz",
        spec.running_gain.profile.lipschitz(),
        samples,
    ));
    checks.push(gl.finish(
        "terminal-gain-lipschitz",
        spec.terminal_gain.lipschitz(),
        samples,
    ));

    let z_ok = (0..d).all(|a| spec.impulse_range.lo[a] <= spec.impulse_range.hi[a]);
    checks.push(AssumptionCheck {
        name: "impulse-set-nonempty",
        passed: z_ok,
        measured: d as f64,
        bound: f64::INFINITY,
        samples: 1,
        witness: None,
    });

    // Costs are sampled over Z intersected with a box wide enough to cover the truncation ball.
    let z_half = truncation_radius(spec)
        .map(|r| (2.0 * r).max(SAMPLE_BOX))
        .unwrap_or(SAMPLE_BOX);
    let k0 = spec.cost_floor;
    let mut worst_cost = f64::NEG_INFINITY;
    let mut cost_witness = None;
    let mut probe_cost = |t: f64, z: Point| {
        let k = spec.impulse_cost(t, &z);
        if k > worst_cost || k.is_nan() {
            worst_cost = k;
            cost_witness = Some(
                core::iter::once(("t", t))
                    .chain(tag(["z0", "z1"], z, d))
                    .collect::<Witness>(),
            );
        }
    };
    let mut origin = [0.0; MAX_DIM];
    for a in 0..d {
        origin[a] = 0.0f64.clamp(spec.impulse_range.lo[a], spec.impulse_range.hi[a]);
    }
    probe_cost(0.0, origin);
    for _ in 0..samples {
        let t = horizon * unit_f64(&mut rng);
        let z = sample_impulse(&mut rng, &spec.impulse_range, d, z_half);
        probe_cost(t, z);
    }
    let floor_ok = k0 > 0.0 && worst_cost <= -k0;
    checks.push(AssumptionCheck {
        name: "cost-floor",
        passed: floor_ok,
        measured: worst_cost,
        bound: -k0,
        samples: samples + 1,
        witness: if floor_ok { None } else { cost_witness },
    });

    // Growth: along every unbounded coordinate direction K must decrease
    // strictly on the geometric radii 2^j and fall below -2c.
    let mut growth_ok = true;
    let mut growth_witness = None;
    let mut growth_measured = f64::NEG_INFINITY;
    let mut growth_samples = 0;
    for a in 0..d {
        for sign in [1.0, -1.0] {
            let unbounded = if sign > 0.0 {
                spec.impulse_range.hi[a] == f64::INFINITY
            } else {
                spec.impulse_range.lo[a] == f64::NEG_INFINITY
            };
            if !unbounded {
                continue;
            }
            let mut prev = f64::INFINITY;
            let mut last = f64::INFINITY;
            for j in 0..=30 {
                let mut z = origin;
                z[a] = sign * libm::ldexp(1.0, j);
                let k = spec.impulse_cost(0.0, &z);
                growth_samples += 1;
                if !(k < prev) && growth_ok {
                    growth_ok = false;
                    growth_witness = Some(tag(["z0", "z1"], z, d).collect());
                }
                prev = k;
                last = k;
            }
            growth_measured = growth_measured.max(last);
            if !(last <= -2.0 * c) && growth_ok {
                growth_ok = false;
                let mut z = origin;
                z[a] = sign * libm::ldexp(1.0, 30);
                growth_witness = Some(tag(["z0", "z1"], z, d).collect());
            }
        }
    }
    checks.push(AssumptionCheck {
        name: "cost-growth",
        passed: growth_ok,
        measured: growth_measured,
        bound: -2.0 * c,
        samples: growth_samples,
        witness: growth_witness,
    });

    // Merged impulses: Gamma additive and K superadditive on sampled pairs.
    let mut merge_ok = true;
    let mut merge_witness = None;
    let mut merge_worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let t = horizon * unit_f64(&mut rng);
        let z1 = sample_impulse(&mut rng, &spec.impulse_range, d, z_half);
        let z2 = sample_impulse(&mut rng, &spec.impulse_range, d, z_half);
        let zs = [z1[0] + z2[0], z1[1] + z2[1]];
        let g1 = spec.displacement(t, &z1);
        let g2 = spec.displacement(t, &z2);
        let gs = spec.displacement(t, &zs);
        let additive = (0..d).all(|a| g1[a] + g2[a] == gs[a]);
        let deficit =
            spec.impulse_cost(t, &z1) + spec.impulse_cost(t, &z2) - spec.impulse_cost(t, &zs);
        merge_worst = merge_worst.max(deficit);
        let ok = spec.impulse_range.contains(&zs)
            && additive
            && deficit <= 1e-12 * (1.0 + deficit.abs());
        if !ok && merge_ok {
            merge_ok = false;
            merge_witness = Some(
                core::iter::once(("t", t))
                    .chain(tag(["z1_0", "z1_1"], z1, d))
                    .chain(tag(["z2_0", "z2_1"], z2, d))
                    .collect(),
            );
        }
    }
    checks.push(AssumptionCheck {
        name: "merge-suboptimal",
        passed: merge_ok,
        measured: merge_worst,
        bound: 0.0,
        samples,
        witness: merge_witness,
    });

    Ok(ValidationReport {
        seed,
        samples,
        running_gain_sup: f_sup,
        terminal_gain_sup: g_sup,
        global_bound: c,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tp1_passes_every_check() {
        let report = validate_problem(&ProblemSpec::tp1(), 1000, 7).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{} failed: {:?}", c.name, c);
        }
        assert_eq!(report.terminal_gain_sup, 1.0);
        let g = report.check("terminal-gain-bounded").unwrap();
        assert!(g.measured <= 1.0 && g.measured > 0.99);
    }

    #[test]
    fn positive_cost_fails_with_witness() {
        let mut spec = ProblemSpec::tp1();
        spec.impulse_cost = ImpulseCost {
            fixed: -1.0,
            proportional: 0.0,
            exponent: 1.0,
        };
        let report = validate_problem(&spec, 200, 1).unwrap();
        let check = report.check("cost-floor").unwrap();
        assert!(!check.passed);
        assert_eq!(check.measured, 1.0);
        let w = check.witness.as_ref().unwrap();
        assert_eq!(w[0].0, "t");
        assert_eq!(w[1].0, "z0");
    }

    #[test]
    fn affine_terminal_gain_is_rejected() {
        let mut spec = ProblemSpec::tp1();
        spec.terminal_gain = Profile::Affine {
            slope: vec![1.0],
            intercept: 0.0,
        };
        assert!(matches!(
            validate_problem(&spec, 200, 1),
            Err(Error::NonConforming(_))
        ));
    }

    #[test]
    fn too_few_samples_is_an_error() {
        assert!(validate_problem(&ProblemSpec::tp1(), 99, 1).is_err());
    }

    #[test]
    fn validation_is_seed_deterministic() {
        let a = validate_problem(&ProblemSpec::tp1(), 300, 42).unwrap();
        let b = validate_problem(&ProblemSpec::tp1(), 300, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn superlinear_cost_breaks_merge_property() {
        let mut spec = ProblemSpec::tp1();
        spec.impulse_cost.exponent = 2.0;
        let report = validate_problem(&spec, 500, 3).unwrap();
        assert!(!report.check("merge-suboptimal").unwrap().passed);
        assert!(report.check("cost-growth").unwrap().passed);
    }

    #[test]
    fn constant_cost_breaks_growth() {
        let mut spec = ProblemSpec::tp1();
        spec.impulse_cost.proportional = 0.0;
        let report = validate_problem(&spec, 200, 3).unwrap();
        let growth = report.check("cost-growth").unwrap();
        assert!(!growth.passed);
        assert!(growth.witness.is_some());
    }

    #[test]
    fn global_bound_examples() {
        assert_eq!(global_bound(&ProblemSpec::tp1()), 1.0);
        assert_eq!(global_bound(&ProblemSpec::tp2()), 1.0);
        assert_eq!(global_bound(&ProblemSpec::tp0()), 0.0);
        let mut spec = ProblemSpec::tp1();
        spec.horizon = Rational::integer(2);
        spec.running_gain.profile = Profile::Constant { value: 0.5 };
        assert_eq!(global_bound(&spec), 2.0);
    }

    #[test]
    fn truncation_radius_examples() {
        assert!((truncation_radius(&ProblemSpec::tp1()).unwrap() - 38.0).abs() < 1e-12);

        let mut spec = ProblemSpec::tp1();
        spec.impulse_cost = ImpulseCost {
            fixed: 2.5,
            proportional: 1.0,
            exponent: 1.0,
        };
        assert_eq!(truncation_radius(&spec).unwrap(), 0.0);

        spec.impulse_cost = ImpulseCost {
            fixed: 0.1,
            proportional: 1.0,
            exponent: 2.0,
        };
        assert!((truncation_radius(&spec).unwrap() - libm::sqrt(1.9)).abs() < 1e-12);

        spec.impulse_cost.proportional = 0.0;
        assert_eq!(truncation_radius(&spec), Err(Error::NoTruncationRadius));
    }

    #[test]
    fn tp0_has_zero_truncation_radius() {
        assert_eq!(truncation_radius(&ProblemSpec::tp0()).unwrap(), 0.0);
    }

    #[test]
    fn control_samples_cover_the_box() {
        let spec = ProblemSpec::tp1();
        assert_eq!(spec.control_count(), 21);
        assert_eq!(spec.control(0)[0], -1.0);
        assert_eq!(spec.control(10)[0], 0.0);
        assert_eq!(spec.control(20)[0], 1.0);
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut spec = ProblemSpec::tp1();
        spec.diffusion = Diffusion::Constant {
            scale: vec![0.5, 0.5],
        };
        assert!(matches!(spec.check_shape(), Err(Error::InvalidProblem(_))));
    }
}
