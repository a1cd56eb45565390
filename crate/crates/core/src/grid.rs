//! Uniform delay grids and the rounding map `η`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Relative tolerance used to snap near-integers (alignment checks, `η` on nodes).
pub const SNAP_TOL: f64 = 1e-9;

/// Uniform mesh `t_k = k h`, `k = -n ..= N`, with `h = r / n` and `T = N h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayGrid {
    r: f64,
    n: usize,
    h: f64,
    horizon: f64,
    steps: usize,
}

/// Snap `x` to the nearest integer when it is within `SNAP_TOL` (relative).
pub(crate) fn snap(x: f64) -> Option<f64> {
    let k = x.round();
    if (x - k).abs() <= SNAP_TOL * x.abs().max(1.0) {
        Some(k)
    } else {
        None
    }
}

/// Floor with snapping, so that values a rounding error below an integer map to it.
pub(crate) fn snapped_floor(x: f64) -> f64 {
    snap(x).unwrap_or_else(|| x.floor())
}

impl DelayGrid {
    /// Grid with `n` steps per delay interval of length `r` up to horizon `T`.
    pub fn new(r: f64, n: usize, horizon: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(invalid("r", format!("delay length must be positive, got {r}")));
        }
        if n == 0 {
            return Err(invalid("n", "steps per delay interval must be positive"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("T", format!("horizon must be positive, got {horizon}")));
        }
        let h = r / n as f64;
        let steps = snap(horizon / h).ok_or(Error::HorizonNotAligned { horizon, step: h })?;
        if steps < 1.0 {
            return Err(Error::HorizonNotAligned { horizon, step: h });
        }
        Ok(Self {
            r,
            n,
            h,
            horizon,
            steps: steps as usize,
        })
    }

    /// Pure-diffusion grid: the delay interval is the whole horizon.
    pub fn diffusion(horizon: f64, steps: usize) -> Result<Self> {
        Self::new(horizon, steps, horizon)
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `N`, the number of steps on `[0, T]`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `N + n + 1`.
    pub fn node_count(&self) -> usize {
        self.steps + self.n + 1
    }

    /// Storage offset of node `k` (node `-n` is stored at 0).
    pub fn offset(&self, k: isize) -> usize {
        (k + self.n as isize) as usize
    }

    /// `t_k`; the end nodes are exactly `-r` and `T`.
    pub fn time(&self, k: isize) -> f64 {
        if k == -(self.n as isize) {
            -self.r
        } else if k == self.steps as isize {
            self.horizon
        } else {
            k as f64 * self.h
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (-(self.n as isize)..=self.steps as isize)
            .map(|k| self.time(k))
            .collect()
    }

    fn check_range(&self, s: f64) -> Result<()> {
        let slack = SNAP_TOL * self.r.max(self.horizon);
        if s < -self.r - slack || s > self.horizon + slack || s.is_nan() {
            return Err(Error::TimeOutOfRange {
                time: s,
                lower: -self.r,
                upper: self.horizon,
            });
        }
        Ok(())
    }

    /// Index `k` with `t_k = η(s)`.
    pub fn eta_index(&self, s: f64) -> Result<isize> {
        self.check_range(s)?;
        let k = snapped_floor(self.n as f64 * s / self.r) as isize;
        Ok(k.clamp(-(self.n as isize), self.steps as isize))
    }

    /// `η(s) = ⌊n s / r⌋ r / n`.
    pub fn eta(&self, s: f64) -> Result<f64> {
        Ok(self.time(self.eta_index(s)?))
    }

    /// Number of steps `ℓ ≥ 0` with `η(u) = -ℓ h`, for `u ∈ [-r, 0]`.
    pub fn lag(&self, u: f64) -> Result<usize> {
        if u > 0.0 {
            return Err(Error::TimeOutOfRange {
                time: u,
                lower: -self.r,
                upper: 0.0,
            });
        }
        let k = self.eta_index(u)?;
        Ok((-k) as usize)
    }

    /// Same delay and horizon with `n · factor` steps per delay interval.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(invalid("factor", "refinement factor must be positive"));
        }
        Self::new(self.r, self.n * factor, self.horizon)
    }

    /// Same delay and horizon with `n / factor` steps per delay interval.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.n % factor != 0 {
            return Err(Error::NotDivisible {
                factor,
                divisor_of: self.n,
            });
        }
        Self::new(self.r, self.n / factor, self.horizon)
    }
}

/// Free-function form of [`DelayGrid::new`].
pub fn make_grid(r: f64, n: usize, horizon: f64) -> Result<DelayGrid> {
    DelayGrid::new(r, n, horizon)
}

/// Free-function form of [`DelayGrid::eta`].
pub fn eta(s: f64, grid: &DelayGrid) -> Result<f64> {
    grid.eta(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basic_grid() {
        let g = make_grid(1.0, 4, 2.0).unwrap();
        assert_eq!(g.h(), 0.25);
        assert_eq!(g.steps(), 8);
        let nodes = g.nodes();
        assert_eq!(nodes.len(), 13);
        assert_eq!(nodes[0], -1.0);
        assert_eq!(nodes[1], -0.75);
        assert_eq!(*nodes.last().unwrap(), 2.0);
        assert!(nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn misaligned_horizon_rejected() {
        assert!(matches!(
            make_grid(1.0, 4, 2.1),
            Err(Error::HorizonNotAligned { .. })
        ));
        assert!(make_grid(1.0, 0, 1.0).is_err());
        assert!(make_grid(-1.0, 2, 1.0).is_err());
        assert!(make_grid(1.0, 2, 0.0).is_err());
    }

    #[test]
    fn single_step() {
        let g = make_grid(1.0, 1, 1.0).unwrap();
        assert_eq!(g.h(), 1.0);
        assert_eq!(g.steps(), 1);
        assert_eq!(g.nodes(), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn thirds_are_aligned() {
        let g = make_grid(1.0, 3, 2.0).unwrap();
        assert_eq!(g.steps(), 6);
        assert_eq!(g.time(6), 2.0);
        assert_eq!(g.eta_index(2.0 / 3.0).unwrap(), 2);
    }

    #[test]
    fn eta_examples() {
        let g = make_grid(1.0, 4, 2.0).unwrap();
        assert_eq!(eta(0.3, &g).unwrap(), 0.25);
        assert_eq!(eta(-0.3, &g).unwrap(), -0.5);
        assert_eq!(eta(0.25, &g).unwrap(), 0.25);
        assert_eq!(eta(-1.0, &g).unwrap(), -1.0);
        assert_eq!(eta(2.0, &g).unwrap(), 2.0);
        assert!(eta(2.5, &g).is_err());
        assert!(eta(-1.5, &g).is_err());
    }

    #[test]
    fn lags() {
        let g = make_grid(1.0, 4, 2.0).unwrap();
        assert_eq!(g.lag(0.0).unwrap(), 0);
        assert_eq!(g.lag(-1.0).unwrap(), 4);
        assert_eq!(g.lag(-std::f64::consts::FRAC_1_SQRT_2).unwrap(), 3);
    }

    proptest! {
        #[test]
        fn eta_properties(s in -1.0f64..2.0, n in 1usize..64) {
            let g = make_grid(1.0, n, 2.0).unwrap();
            let e = g.eta(s).unwrap();
            prop_assert!(e <= s + 1e-12);
            prop_assert!(s - e < g.h() + 1e-12);
            prop_assert_eq!(g.eta(e).unwrap(), e);
            prop_assert!((-1.0..=2.0).contains(&e));
        }
    }
}
