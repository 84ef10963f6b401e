//! The coefficient interface consumed by the solver and the simulator.

use crate::rational::Rational;

/// Largest supported state (and control, and impulse) dimension.
pub const MAX_DIM: usize = 2;

/// A state, impulse or control vector. Entries at and beyond the active
/// dimension are kept at zero.
pub type Point = [f64; MAX_DIM];

/// A diffusion-player control value from the sampled control set `B`.
pub type Control = [f64; MAX_DIM];

/// Euclidean norm of the first `dim` entries.
pub fn norm(p: &Point, dim: usize) -> f64 {
    let mut s = 0.0;
    for v in &p[..dim] {
        s += v * v;
    }
    libm::sqrt(s)
}

pub fn add(a: &Point, b: &Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

/// Coefficients of the game: dynamics `dX = mu(X, b) dt + sigma(X, b) dW`
/// between impulses, jumps `X -> X + Gamma(t, z)` with cost `K(t, z)`, running
/// gain `f` and terminal gain `g`.
///
/// The diffusion matrix is diagonal with `dW = dim`. The control set is a
/// finite sample, addressed by index. [`ProblemSpec`](crate::ProblemSpec)
/// is the catalog implementation; tests may implement the trait directly.
pub trait GameModel: Sync {
    fn dim(&self) -> usize;
    fn horizon(&self) -> Rational;
    fn control_count(&self) -> usize;
    fn control(&self, index: usize) -> Control;
    fn drift(&self, x: &Point, b: &Control) -> Point;
    /// Diagonal entries of `sigma(x, b)`.
    fn diffusion(&self, x: &Point, b: &Control) -> Point;
    fn running_gain(&self, t: f64, x: &Point, b: &Control) -> f64;
    fn terminal_gain(&self, x: &Point) -> f64;
    fn displacement(&self, t: f64, z: &Point) -> Point;
    fn impulse_cost(&self, t: f64, z: &Point) -> f64;
}

/// The discounted transform of a model: `f_rho = e^{rho t} f`,
/// `g_rho = e^{rho T} g`, `K_rho = e^{rho t} K`; dynamics unchanged.
#[derive(Clone, Copy, Debug)]
pub struct Discounted<'a, M: ?Sized> {
    pub inner: &'a M,
    pub rho: f64,
}

impl<'a, M: GameModel + ?Sized> Discounted<'a, M> {
    pub fn new(inner: &'a M, rho: f64) -> Self {
        Discounted { inner, rho }
    }

    pub fn factor(&self, t: f64) -> f64 {
        if self.rho == 0.0 {
            1.0
        } else {
            libm::exp(self.rho * t)
        }
    }
}

impl<M: GameModel + ?Sized> GameModel for Discounted<'_, M> {
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
        self.factor(t) * self.inner.running_gain(t, x, b)
    }

    fn terminal_gain(&self, x: &Point) -> f64 {
        self.factor(self.inner.horizon().to_f64()) * self.inner.terminal_gain(x)
    }

    fn displacement(&self, t: f64, z: &Point) -> Point {
        self.inner.displacement(t, z)
    }

    fn impulse_cost(&self, t: f64, z: &Point) -> f64 {
        self.factor(t) * self.inner.impulse_cost(t, z)
    }
}
