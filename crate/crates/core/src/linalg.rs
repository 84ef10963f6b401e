//! Banded Gaussian elimination for the implicit step.
//!
//! The systems assembled by the solver are M-matrices (positive diagonal,
//! nonpositive off-diagonals, weakly chained diagonally dominant), for which
//! elimination without pivoting is stable.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub(crate) struct Banded {
    n: usize,
    bw: usize,
    a: Vec<f64>,
}

impl Banded {
    pub(crate) fn zeros(n: usize, bw: usize) -> Self {
        Banded {
            n,
            bw,
            a: vec![0.0; n * (2 * bw + 1)],
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        i * (2 * self.bw + 1) + (j + self.bw - i)
    }

    /// Adds `v` to entry `(i, j)`; `|i - j|` must not exceed the bandwidth.
    pub(crate) fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.at(i, j);
        self.a[k] += v;
    }

    /// Solves in place; `rhs` holds the solution on return.
    pub(crate) fn solve(mut self, rhs: &mut [f64]) -> Result<()> {
        let (n, bw) = (self.n, self.bw);
        for k in 0..n {
            let pivot = self.a[self.at(k, k)];
            if pivot.abs() < 1e-300 || !pivot.is_finite() {
                return Err(Error::SingularSystem { row: k });
            }
            let last = (k + bw).min(n - 1);
            for i in k + 1..=last {
                let ik = self.at(i, k);
                let factor = self.a[ik] / pivot;
                if factor == 0.0 {
                    continue;
                }
                self.a[ik] = 0.0;
                for j in k + 1..=last {
                    let kj = self.a[self.at(k, j)];
                    if kj != 0.0 {
                        let ij = self.at(i, j);
                        self.a[ij] -= factor * kj;
                    }
                }
                rhs[i] -= factor * rhs[k];
            }
        }
        for k in (0..n).rev() {
            let last = (k + bw).min(n - 1);
            let mut s = rhs[k];
            for j in k + 1..=last {
                s -= self.a[self.at(k, j)] * rhs[j];
            }
            rhs[k] = s / self.a[self.at(k, k)];
        }
        Ok(())
    }
}
