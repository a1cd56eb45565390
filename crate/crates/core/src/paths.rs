//! Brownian increments at the finest resolution and their exact coarsening.
//!
//! Increments come from ChaCha8 keyed by `(seed, path)`: the seed selects the
//! key, the path index the stream, and the increment index is the position in
//! the stream. Each draw is rounded to a multiple of `2^-42`; every partial sum
//! below `2^11` in magnitude is then exact in `f64`, so coarse increments are
//! bit-exact sums of their fine sub-increments in any grouping.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::grid::DelayGrid;

/// Quantum of every generated increment.
pub const INCREMENT_QUANTUM: f64 = 1.0 / (1u64 << 42) as f64;

fn quantize(x: f64) -> f64 {
    (x / INCREMENT_QUANTUM).round() * INCREMENT_QUANTUM
}

/// Fine-mesh Brownian increments over `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    coarse: DelayGrid,
    fine: DelayGrid,
    refinement: usize,
    seed: u64,
    path: u64,
    increments: Vec<f64>,
}

impl BrownianPath {
    /// Increments on `grid.refine(refinement)` for path number `path`.
    pub fn sample(grid: &DelayGrid, refinement: usize, seed: u64, path: u64) -> Result<Self> {
        if refinement == 0 {
            return Err(invalid("kappa", "refinement must be at least 1"));
        }
        let fine = grid.refine(refinement)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        let scale = fine.h().sqrt();
        let increments = (0..fine.steps())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                quantize(z * scale)
            })
            .collect();
        Ok(Self {
            coarse: *grid,
            fine,
            refinement,
            seed,
            path,
            increments,
        })
    }

    /// Path from explicit fine increments (no quantization).
    pub fn from_increments(grid: &DelayGrid, refinement: usize, increments: Vec<f64>) -> Result<Self> {
        if refinement == 0 {
            return Err(invalid("kappa", "refinement must be at least 1"));
        }
        let fine = grid.refine(refinement)?;
        if increments.len() != fine.steps() {
            return Err(invalid(
                "increments",
                format!("expected {} increments, got {}", fine.steps(), increments.len()),
            ));
        }
        Ok(Self {
            coarse: *grid,
            fine,
            refinement,
            seed: 0,
            path: 0,
            increments,
        })
    }

    /// Sum consecutive groups of `factor` increments; the refinement drops by `factor`.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.refinement % factor != 0 {
            return Err(Error::NotDivisible {
                factor,
                divisor_of: self.refinement,
            });
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let increments = self
            .increments
            .chunks_exact(factor)
            .map(|c| {
                let mut s = c[0];
                for v in &c[1..] {
                    s += v;
                }
                s
            })
            .collect();
        Ok(Self {
            coarse: self.coarse,
            fine: self.fine.coarsen(factor)?,
            refinement: self.refinement / factor,
            seed: self.seed,
            path: self.path,
            increments,
        })
    }

    /// The path at the coarse grid resolution.
    pub fn to_coarse(&self) -> Result<Self> {
        self.coarsen(self.refinement)
    }

    /// Grid the path was requested on.
    pub fn coarse_grid(&self) -> &DelayGrid {
        &self.coarse
    }

    /// Grid of the stored increments.
    pub fn fine_grid(&self) -> &DelayGrid {
        &self.fine
    }

    pub fn refinement(&self) -> usize {
        self.refinement
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `W` at the fine nodes `0..=N_fine`.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.increments.len() + 1);
        let mut s = 0.0;
        w.push(s);
        for dw in &self.increments {
            s += dw;
            w.push(s);
        }
        w
    }

    /// `W_T`.
    pub fn terminal(&self) -> f64 {
        let mut s = 0.0;
        for dw in &self.increments {
            s += dw;
        }
        s
    }
}

/// Path number 0 of the stream keyed by `seed`.
pub fn sample_path(grid: &DelayGrid, refinement: usize, seed: u64) -> Result<BrownianPath> {
    BrownianPath::sample(grid, refinement, seed, 0)
}

/// Free-function form of [`BrownianPath::coarsen`].
pub fn coarsen(path: &BrownianPath, factor: usize) -> Result<BrownianPath> {
    path.coarsen(factor)
}
