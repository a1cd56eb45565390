//! Euler schemes, fine-mesh references, coupled pairs and frozen coefficients.

use std::borrow::Cow;

use crate::error::{invalid, Error, Result};
use crate::grid::DelayGrid;
use crate::models::{DelayMeasure, DelayModel, SmoothFn1D};
use crate::paths::BrownianPath;
use crate::quadrature::GaussLegendre;

/// Values of a path on the nodes `t_{-n} ..= t_N` of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathValues {
    grid: DelayGrid,
    values: Vec<f64>,
}

impl PathValues {
    pub fn new(grid: DelayGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(invalid(
                "values",
                format!("expected {} node values, got {}", grid.node_count(), values.len()),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &DelayGrid {
        &self.grid
    }

    /// All node values, starting at `t_{-n}`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at node `k ∈ [-n, N]`.
    #[inline]
    pub fn at(&self, k: isize) -> f64 {
        self.values[self.grid.offset(k)]
    }

    /// Values at nodes `0 ..= N`.
    pub fn forward(&self) -> &[f64] {
        &self.values[self.grid.n()..]
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("grids have at least one node")
    }

    /// `max_k |x_k|` over all nodes.
    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// One term `w · x_{k − lag}` of a discretized `ν`-integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub lag: usize,
    pub weight: f64,
}

/// Taps of `∫ X_{η(t) + η(u)} dν(u)` on `grid`.
pub fn rounded_taps(nu: &DelayMeasure, grid: &DelayGrid) -> Result<Vec<Tap>> {
    nu.atoms()
        .iter()
        .map(|a| {
            let lag = grid.lag(a.location)?;
            if lag > grid.n() {
                return Err(Error::InvalidModel(format!(
                    "atom at {} reaches below -r",
                    a.location
                )));
            }
            Ok(Tap {
                lag,
                weight: a.weight,
            })
        })
        .collect()
}

/// `Σ w x[base − lag]`; `x` is indexed by storage offset.
#[inline]
pub(crate) fn tap_sum(taps: &[Tap], x: &[f64], base: usize) -> f64 {
    let mut a = taps[0].weight * x[base - taps[0].lag];
    for t in &taps[1..] {
        a += t.weight * x[base - t.lag];
    }
    a
}

/// Increments of `path` at the resolution of `grid`, coarsening if needed.
pub fn increments_on<'a>(path: &'a BrownianPath, grid: &DelayGrid) -> Result<Cow<'a, [f64]>> {
    let fine = path.fine_grid();
    if fine.r() != grid.r() || fine.horizon() != grid.horizon() || fine.n() % grid.n() != 0 {
        return Err(invalid(
            "grid",
            format!(
                "path mesh (r = {}, n = {}, T = {}) does not refine grid (r = {}, n = {}, T = {})",
                fine.r(),
                fine.n(),
                fine.horizon(),
                grid.r(),
                grid.n(),
                grid.horizon()
            ),
        ));
    }
    let factor = fine.n() / grid.n();
    if factor == 1 {
        Ok(Cow::Borrowed(path.increments()))
    } else {
        Ok(Cow::Owned(path.coarsen(factor)?.increments().to_vec()))
    }
}

fn check_finite(v: f64, step: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { step, value: v })
    }
}

/// `X̄_{k+1} = X̄_k + σ(X̄_k) ΔW_k + b(X̄_k) h` on the mesh of `path`.
pub fn euler_diffusion(sigma: &SmoothFn1D, b: &SmoothFn1D, x0: f64, path: &BrownianPath) -> Result<PathValues> {
    let grid = *path.fine_grid();
    let h = grid.h();
    let n = grid.n();
    let mut x = vec![x0; grid.node_count()];
    for (k, dw) in path.increments().iter().enumerate() {
        let xk = x[n + k];
        let next = xk + sigma.eval(xk) * dw + b.eval(xk) * h;
        check_finite(next, k)?;
        x[n + k + 1] = next;
    }
    PathValues::new(grid, x)
}

pub(crate) fn euler_delay_values(model: &DelayModel, increments: &[f64], grid: &DelayGrid) -> Result<Vec<f64>> {
    let taps = rounded_taps(&model.nu, grid)?;
    let h = grid.h();
    let n = grid.n();
    let mut x = Vec::with_capacity(grid.node_count());
    for k in -(n as isize)..=0 {
        x.push(model.xi.eval(grid.time(k)));
    }
    for (k, dw) in increments.iter().enumerate() {
        let a = tap_sum(&taps, &x, n + k);
        let next = x[n + k] + model.sigma.eval(a) * dw + model.b.eval(a) * h;
        check_finite(next, k)?;
        x.push(next);
    }
    Ok(x)
}

/// Delay Euler scheme on `grid`; `path` may be finer than `grid`.
pub fn euler_delay(model: &DelayModel, path: &BrownianPath, grid: &DelayGrid) -> Result<PathValues> {
    let inc = increments_on(path, grid)?;
    PathValues::new(*grid, euler_delay_values(model, &inc, grid)?)
}

/// Delay Euler on the full resolution of `fine_path`, the stand-in for the exact solution.
pub fn reference_solution(model: &DelayModel, fine_path: &BrownianPath) -> Result<PathValues> {
    euler_delay(model, fine_path, fine_path.fine_grid())
}

/// Terminal value of the scheme on `grid` without keeping the path.
pub fn terminal_value(model: &DelayModel, path: &BrownianPath, grid: &DelayGrid) -> Result<f64> {
    let inc = increments_on(path, grid)?;
    Ok(*euler_delay_values(model, &inc, grid)?.last().expect("nonempty"))
}

/// Fine reference `X`, coarse scheme `X̄`, and `X̄` continued to the fine nodes by
/// its own Euler interpolation (exact coarse values at coarse nodes).
#[derive(Debug, Clone)]
pub struct CoupledPair {
    pub fine: PathValues,
    pub coarse: PathValues,
    pub coarse_on_fine: PathValues,
    pub kappa: usize,
    pub fine_increments: Vec<f64>,
}

impl CoupledPair {
    /// Fine mesh = `path.fine_grid()`, coarse mesh = `path.coarse_grid()`.
    pub fn simulate(model: &DelayModel, path: &BrownianPath) -> Result<Self> {
        let fine_grid = *path.fine_grid();
        let coarse_grid = *path.coarse_grid();
        let kappa = path.refinement();
        let fine = euler_delay(model, path, &fine_grid)?;
        let coarse = euler_delay(model, path, &coarse_grid)?;
        let ctaps = rounded_taps(&model.nu, &coarse_grid)?;
        let nf = fine_grid.n();
        let nc = coarse_grid.n();
        let delta = fine_grid.h();
        let inc = path.increments();
        let mut ext = Vec::with_capacity(fine_grid.node_count());
        for k in -(nf as isize)..=0 {
            ext.push(model.xi.eval(fine_grid.time(k)));
        }
        let cv = coarse.values();
        for c in 0..coarse_grid.steps() {
            let a = tap_sum(&ctaps, cv, nc + c);
            let s = model.sigma.eval(a);
            let bb = model.b.eval(a);
            let base = cv[nc + c];
            let mut dw = 0.0;
            for i in 1..kappa {
                dw += inc[c * kappa + i - 1];
                ext.push(base + s * dw + bb * (i as f64 * delta));
            }
            ext.push(cv[nc + c + 1]);
        }
        Ok(Self {
            coarse_on_fine: PathValues::new(fine_grid, ext)?,
            fine,
            coarse,
            kappa,
            fine_increments: inc.to_vec(),
        })
    }

    pub fn fine_grid(&self) -> &DelayGrid {
        self.fine.grid()
    }

    pub fn coarse_grid(&self) -> &DelayGrid {
        self.coarse.grid()
    }

    /// `X − X̄` at the fine nodes `0 ..= N_fine`.
    pub fn difference(&self) -> Vec<f64> {
        self.fine
            .forward()
            .iter()
            .zip(self.coarse_on_fine.forward())
            .map(|(x, y)| x - y)
            .collect()
    }
}

/// Frozen coefficients on the fine mesh, one value per fine step `j`.
///
/// `A_j` is the fine scheme's delay argument, `Ā_j` the coarse scheme's argument
/// on the coarse cell containing `j`. `σ̃_j = σ(Ā_j)`, `σ₁_j = ∫₀¹ σ′(a A_j + (1 − a) Ā_j) da`,
/// and likewise for `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenCoefficients {
    pub sigma_tilde: Vec<f64>,
    pub b_tilde: Vec<f64>,
    pub sigma1: Vec<f64>,
    pub b1: Vec<f64>,
    pub fine_argument: Vec<f64>,
    pub coarse_argument: Vec<f64>,
}

pub fn frozen_coefficients(model: &DelayModel, pair: &CoupledPair) -> Result<FrozenCoefficients> {
    let fg = pair.fine_grid();
    let cg = pair.coarse_grid();
    let ftaps = rounded_taps(&model.nu, fg)?;
    let ctaps = rounded_taps(&model.nu, cg)?;
    let q = GaussLegendre::unit16();
    let steps = fg.steps();
    let mut out = FrozenCoefficients {
        sigma_tilde: Vec::with_capacity(steps),
        b_tilde: Vec::with_capacity(steps),
        sigma1: Vec::with_capacity(steps),
        b1: Vec::with_capacity(steps),
        fine_argument: Vec::with_capacity(steps),
        coarse_argument: Vec::with_capacity(steps),
    };
    let xf = pair.fine.values();
    let xc = pair.coarse.values();
    for j in 0..steps {
        let c = j / pair.kappa;
        let a = tap_sum(&ftaps, xf, fg.n() + j);
        let abar = tap_sum(&ctaps, xc, cg.n() + c);
        out.sigma_tilde.push(model.sigma.eval(abar));
        out.b_tilde.push(model.b.eval(abar));
        out.sigma1.push(q.mean_value(|z| model.sigma.d1(z), a, abar));
        out.b1.push(q.mean_value(|z| model.b.d1(z), a, abar));
        out.fine_argument.push(a);
        out.coarse_argument.push(abar);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::models::{builtin_catalog, catalog_model, Params};
    use crate::paths::BrownianPath;

    #[test]
    fn delay_with_dirac_at_zero_is_diffusion() {
        let cat = builtin_catalog();
        for name in ["gbm", "bounded", "constant"] {
            let m = &cat.model(name).unwrap().model;
            let g = make_grid(1.0, 16, 1.0).unwrap();
            for p in 0..20 {
                let path = BrownianPath::sample(&g, 1, 5, p).unwrap();
                let a = euler_delay(m, &path, &g).unwrap();
                let b = euler_diffusion(&m.sigma, &m.b, m.x0(), &path).unwrap();
                for (x, y) in a.values().iter().zip(b.values()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn negative_nodes_hold_initial_segment() {
        let m = catalog_model("delay", &Params::new()).unwrap().model;
        let g = make_grid(1.0, 4, 2.0).unwrap();
        let path = BrownianPath::sample(&g, 1, 1, 0).unwrap();
        let x = euler_delay(&m, &path, &g).unwrap();
        assert_eq!(x.values().len(), 13);
        for k in -4..=0 {
            assert_eq!(x.at(k), 1.0 + 0.1 * g.time(k));
        }
    }

    #[test]
    fn constant_coefficients_are_exact() {
        let mut p = Params::new();
        p.insert("c".into(), 0.7);
        p.insert("x0".into(), 0.2);
        let m = catalog_model("constant", &p).unwrap().model;
        let g = make_grid(1.0, 8, 1.0).unwrap();
        for n in [1usize, 2, 8] {
            let path = BrownianPath::sample(&g, 1, 9, n as u64).unwrap();
            let x = euler_delay(&m, &path, &g).unwrap();
            let w = path.terminal();
            assert!((x.terminal() - (0.2 + 0.7 * w)).abs() < 1e-14);
        }
    }

    #[test]
    fn coarse_scheme_from_fine_path_matches_direct_sampling() {
        let m = catalog_model("two-atom", &Params::new()).unwrap().model;
        let g = make_grid(1.0, 4, 2.0).unwrap();
        let path = BrownianPath::sample(&g, 8, 3, 0).unwrap();
        let coarse = path.to_coarse().unwrap();
        let a = euler_delay(&m, &path, &g).unwrap();
        let b = euler_delay(&m, &coarse, &g).unwrap();
        assert_eq!(a, b);
        let kappa1 = BrownianPath::sample(&g, 1, 3, 0).unwrap();
        assert_eq!(reference_solution(&m, &kappa1).unwrap(), euler_delay(&m, &kappa1, &g).unwrap());
    }

    #[test]
    fn extension_hits_coarse_nodes() {
        let m = catalog_model("misaligned", &Params::new()).unwrap().model;
        let g = make_grid(1.0, 4, 2.0).unwrap();
        let path = BrownianPath::sample(&g, 4, 3, 1).unwrap();
        let pair = CoupledPair::simulate(&m, &path).unwrap();
        for c in 0..=8isize {
            assert_eq!(pair.coarse_on_fine.at(4 * c), pair.coarse.at(c));
        }
    }

    #[test]
    fn frozen_sigma1_degenerate_cases() {
        let g = make_grid(1.0, 8, 1.0).unwrap();
        let path = BrownianPath::sample(&g, 4, 3, 1).unwrap();
        let gbm = catalog_model("gbm", &Params::new()).unwrap().model;
        let pair = CoupledPair::simulate(&gbm, &path).unwrap();
        let fr = frozen_coefficients(&gbm, &pair).unwrap();
        assert!(fr.sigma1.iter().all(|&s| s == 1.0));
        let bounded = catalog_model("bounded", &Params::new()).unwrap().model;
        let p1 = BrownianPath::sample(&g, 1, 3, 1).unwrap();
        let pair = CoupledPair::simulate(&bounded, &p1).unwrap();
        let fr = frozen_coefficients(&bounded, &pair).unwrap();
        for (j, s1) in fr.sigma1.iter().enumerate() {
            let want = bounded.sigma.d1(pair.fine.at(j as isize));
            assert!((s1 - want).abs() < 1e-15);
        }
    }
}
