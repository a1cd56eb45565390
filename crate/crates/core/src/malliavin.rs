//! Discrete Malliavin derivatives of Euler functionals.
//!
//! `D[k][m]` is the partial derivative of `X̄_{t_k}` with respect to the
//! increment on cell `(t_{m−1}, t_m]`, i.e. the Malliavin derivative `D_u X̄_{t_k}`
//! for `u` in that cell.

use crate::error::{invalid, Result};
use serde::{Deserialize, Serialize};

use crate::euler::{euler_delay, increments_on, rounded_taps, tap_sum, PathValues};
use crate::grid::DelayGrid;
use crate::models::{DelayModel, SmoothFn1D};
use crate::paths::BrownianPath;

/// Lower-triangular array `D[k][m]`, `1 ≤ m ≤ k ≤ N`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationTableau {
    grid: DelayGrid,
    rows: Vec<Vec<f64>>,
}

impl VariationTableau {
    pub fn grid(&self) -> &DelayGrid {
        &self.grid
    }

    /// `D[k][m]`; zero for `m > k` or `m = 0`.
    pub fn get(&self, k: usize, m: usize) -> f64 {
        if m == 0 || m > k {
            0.0
        } else {
            self.rows[k][m - 1]
        }
    }

    /// `D[k][1..=k]`.
    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k]
    }

    pub fn steps(&self) -> usize {
        self.rows.len() - 1
    }
}

fn variation_rows(
    sigma: &SmoothFn1D,
    b: &SmoothFn1D,
    args: &[f64],
    taps: &[crate::euler::Tap],
    inc: &[f64],
    h: f64,
) -> Vec<Vec<f64>> {
    let steps = inc.len();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    rows.push(Vec::new());
    for k in 0..steps {
        let a = args[k];
        let sp = sigma.d1(a);
        let bp = b.d1(a);
        let dw = inc[k];
        let mut next = Vec::with_capacity(k + 1);
        for m in 1..=k {
            let d = rows[k][m - 1];
            let mut s = 0.0;
            let mut first = true;
            for t in taps {
                if k >= t.lag && k - t.lag >= m {
                    let v = t.weight * rows[k - t.lag][m - 1];
                    if first {
                        s = v;
                        first = false;
                    } else {
                        s += v;
                    }
                }
            }
            next.push(d + sp * s * dw + bp * s * h);
        }
        next.push(sigma.eval(a));
        rows.push(next);
    }
    rows
}

/// First variation of `X̄_{k+1} = X̄_k + σ(X̄_k)ΔW_k + b(X̄_k)h`.
pub fn first_variation_diffusion(
    sigma: &SmoothFn1D,
    b: &SmoothFn1D,
    xbar: &PathValues,
    path: &BrownianPath,
) -> Result<VariationTableau> {
    let grid = *xbar.grid();
    let inc = increments_on(path, &grid)?;
    let h = grid.h();
    let x = xbar.forward();
    let steps = inc.len();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    rows.push(Vec::new());
    for k in 0..steps {
        let sp = sigma.d1(x[k]);
        let bp = b.d1(x[k]);
        let dw = inc[k];
        let mut next: Vec<f64> = rows[k].iter().map(|&d| d + sp * d * dw + bp * d * h).collect();
        next.push(sigma.eval(x[k]));
        rows.push(next);
    }
    Ok(VariationTableau { grid, rows })
}

/// Delay arguments `A_k = Σ w X̄_{k − lag}` for `k = 0..N`.
fn delay_arguments(model: &DelayModel, xbar: &PathValues) -> Result<Vec<f64>> {
    let grid = xbar.grid();
    let taps = rounded_taps(&model.nu, grid)?;
    Ok((0..grid.steps())
        .map(|k| tap_sum(&taps, xbar.values(), grid.n() + k))
        .collect())
}

/// First variation of the delay scheme; `D ≡ 0` on negative nodes.
pub fn first_variation_delay(model: &DelayModel, xbar: &PathValues, path: &BrownianPath) -> Result<VariationTableau> {
    let grid = *xbar.grid();
    let inc = increments_on(path, &grid)?;
    let taps = rounded_taps(&model.nu, &grid)?;
    let args = delay_arguments(model, xbar)?;
    Ok(VariationTableau {
        grid,
        rows: variation_rows(&model.sigma, &model.b, &args, &taps, &inc, grid.h()),
    })
}

/// `D[N][1..=N]` by a backward adjoint sweep, `O(N · atoms)`.
pub fn terminal_gradient(model: &DelayModel, xbar: &PathValues, path: &BrownianPath) -> Result<Vec<f64>> {
    let grid = *xbar.grid();
    let inc = increments_on(path, &grid)?;
    let taps = rounded_taps(&model.nu, &grid)?;
    let args = delay_arguments(model, xbar)?;
    let steps = grid.steps();
    let h = grid.h();
    let mut lambda = vec![0.0; steps + 1];
    lambda[steps] = 1.0;
    for k in (0..steps).rev() {
        let l = lambda[k + 1];
        let c = l * (model.sigma.d1(args[k]) * inc[k] + model.b.d1(args[k]) * h);
        lambda[k] += l;
        for t in &taps {
            if k >= t.lag {
                lambda[k - t.lag] += c * t.weight;
            }
        }
    }
    Ok((1..=steps)
        .map(|m| lambda[m] * model.sigma.eval(args[m - 1]))
        .collect())
}

/// `D²[k][m1][m2]` for the diffusion scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondVariationTableau {
    grid: DelayGrid,
    /// `layers[k]` is a row-major `k × k` block.
    layers: Vec<Vec<f64>>,
}

impl SecondVariationTableau {
    pub fn grid(&self) -> &DelayGrid {
        &self.grid
    }

    /// `D²[k][m1][m2]`; zero outside `1 ≤ m1, m2 ≤ k`.
    pub fn get(&self, k: usize, m1: usize, m2: usize) -> f64 {
        if m1 == 0 || m2 == 0 || m1 > k || m2 > k {
            0.0
        } else {
            self.layers[k][(m1 - 1) * k + (m2 - 1)]
        }
    }
}

/// Second variation of the diffusion scheme, `O(N³)` memory and time.
pub fn second_variation_diffusion(
    sigma: &SmoothFn1D,
    b: &SmoothFn1D,
    xbar: &PathValues,
    tableau: &VariationTableau,
    path: &BrownianPath,
) -> Result<SecondVariationTableau> {
    let grid = *xbar.grid();
    if tableau.grid() != &grid {
        return Err(invalid("tableau", "first variation is on a different grid"));
    }
    let inc = increments_on(path, &grid)?;
    let h = grid.h();
    let x = xbar.forward();
    let steps = inc.len();
    let mut layers: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    layers.push(Vec::new());
    for k in 0..steps {
        let (sp, spp) = (sigma.d1(x[k]), sigma.d2(x[k]));
        let (bp, bpp) = (b.d1(x[k]), b.d2(x[k]));
        let dw = inc[k];
        let curv = spp * dw + bpp * h;
        let d = tableau.row(k);
        let k1 = k + 1;
        let mut next = vec![0.0; k1 * k1];
        for m1 in 0..k {
            for m2 in 0..k {
                let v = layers[k][m1 * k + m2];
                next[m1 * k1 + m2] = v + sp * v * dw + bp * v * h + curv * (d[m1] * d[m2]);
            }
            next[m1 * k1 + k] = sp * d[m1];
            next[k * k1 + m1] = sp * d[m1];
        }
        layers.push(next);
    }
    Ok(SecondVariationTableau { grid, layers })
}

/// `γ = Σ_m D[k][m]² h`.
pub fn malliavin_cov(tableau: &VariationTableau, k: usize) -> f64 {
    covariance(tableau.row(k), tableau.grid().h())
}

/// `Σ d_m² h` for a derivative row on a mesh of step `h`.
pub fn covariance(row: &[f64], h: f64) -> f64 {
    let mut s = 0.0;
    for d in row {
        s += d * d;
    }
    s * h
}

/// Discrete stochastic exponential kept in log form.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentialPath {
    log: Vec<f64>,
}

impl ExponentialPath {
    /// `𝓔_{t_k}`.
    pub fn value(&self, k: usize) -> f64 {
        self.log[k].exp()
    }

    /// `𝓔_{t_k}^{-1}`.
    pub fn inverse(&self, k: usize) -> f64 {
        (-self.log[k]).exp()
    }

    /// `𝓔_{t_k} 𝓔_{t_l}^{-1}`, evaluated in log space (so `ratio(k, k) = 1`).
    pub fn ratio(&self, k: usize, l: usize) -> f64 {
        (self.log[k] - self.log[l]).exp()
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log
    }
}

/// `𝓔_{t_k} = exp(Σ_{j<k} σ₁_j ΔW_j − ½ Σ_{j<k} σ₁_j² h)`.
pub fn stochastic_exponential(sigma1: &[f64], increments: &[f64], h: f64) -> Result<ExponentialPath> {
    if sigma1.len() < increments.len() {
        return Err(invalid("sigma1", "one value per step is required"));
    }
    let mut log = Vec::with_capacity(increments.len() + 1);
    let mut s = 0.0;
    log.push(s);
    for (s1, dw) in sigma1.iter().zip(increments) {
        s += s1 * dw - 0.5 * s1 * s1 * h;
        log.push(s);
    }
    Ok(ExponentialPath { log })
}

/// Worst relative disagreement `|a − b| / max(1, |a|, |b|)` between the variation
/// tableaux and central differences of the scheme in each increment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub first_variation: f64,
    /// Adjoint terminal row against the tableau's last row.
    pub adjoint: f64,
    /// Diffusions only.
    pub second_variation: Option<f64>,
}

impl GradientCheck {
    pub fn worst(&self) -> f64 {
        self.first_variation.max(self.adjoint).max(self.second_variation.unwrap_or(0.0))
    }
}

fn bumped(path: &BrownianPath, m: usize, e: f64) -> Result<BrownianPath> {
    let mut inc = path.increments().to_vec();
    inc[m] += e;
    BrownianPath::from_increments(path.coarse_grid(), path.refinement(), inc)
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Central differences with step `eps` on the fine grid of `path`. The second
/// variation costs `O(N⁴)`; keep `N` small.
pub fn gradient_check(model: &DelayModel, path: &BrownianPath, eps: f64) -> Result<GradientCheck> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(invalid("eps", "must be positive"));
    }
    let g = *path.fine_grid();
    let n = g.steps();
    let x = euler_delay(model, path, &g)?;
    let tab = first_variation_delay(model, &x, path)?;
    let mut first: f64 = 0.0;
    for m in 1..=n {
        let up = euler_delay(model, &bumped(path, m - 1, eps)?, &g)?;
        let dn = euler_delay(model, &bumped(path, m - 1, -eps)?, &g)?;
        for (k, (a, b)) in up.forward().iter().zip(dn.forward()).enumerate() {
            first = first.max(rel_gap(tab.get(k, m), (a - b) / (2.0 * eps)));
        }
    }
    let adj = terminal_gradient(model, &x, path)?;
    let adjoint = adj.iter().zip(tab.row(n)).fold(0.0_f64, |w, (a, b)| w.max(rel_gap(*a, *b)));
    let second_variation = if model.is_diffusion() {
        let s2 = second_variation_diffusion(&model.sigma, &model.b, &x, &tab, path)?;
        let tab_at = |p: &BrownianPath| -> Result<VariationTableau> {
            let x = euler_delay(model, p, &g)?;
            first_variation_delay(model, &x, p)
        };
        let mut worst: f64 = 0.0;
        for m2 in 1..=n {
            let up = tab_at(&bumped(path, m2 - 1, eps)?)?;
            let dn = tab_at(&bumped(path, m2 - 1, -eps)?)?;
            for k in 1..=n {
                for m1 in 1..=k {
                    let fd = (up.get(k, m1) - dn.get(k, m1)) / (2.0 * eps);
                    worst = worst.max(rel_gap(s2.get(k, m1, m2), fd));
                }
            }
        }
        Some(worst)
    } else {
        None
    };
    Ok(GradientCheck {
        first_variation: first,
        adjoint,
        second_variation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::euler::euler_diffusion;
    use crate::grid::make_grid;
    use crate::models::{builtin_catalog, catalog_model, Params};

    const EPS: f64 = 1e-5;

    fn bump(path: &BrownianPath, m: usize, e: f64) -> BrownianPath {
        let mut inc = path.increments().to_vec();
        inc[m] += e;
        BrownianPath::from_increments(path.coarse_grid(), path.refinement(), inc).unwrap()
    }

    /// Central difference of the whole scheme in `ΔW_m`.
    fn fd_column(model: &DelayModel, path: &BrownianPath, m: usize) -> Vec<f64> {
        let g = *path.fine_grid();
        let up = euler_delay(model, &bump(path, m, EPS), &g).unwrap();
        let dn = euler_delay(model, &bump(path, m, -EPS), &g).unwrap();
        up.forward()
            .iter()
            .zip(dn.forward())
            .map(|(a, b)| (a - b) / (2.0 * EPS))
            .collect()
    }

    fn max_rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn tableaux_match_finite_differences_on_catalog() {
        for entry in builtin_catalog().models {
            let g = make_grid(entry.model.r, 8, entry.horizon).unwrap();
            let path = BrownianPath::sample(&g, 1, 21, 4).unwrap();
            let x = euler_delay(&entry.model, &path, &g).unwrap();
            let tab = first_variation_delay(&entry.model, &x, &path).unwrap();
            let mut worst: f64 = 0.0;
            for m in 1..=g.steps() {
                let col = fd_column(&entry.model, &path, m - 1);
                for k in 0..=g.steps() {
                    worst = worst.max(max_rel(tab.get(k, m), col[k]));
                }
            }
            assert!(worst < 1e-6, "{}: {worst:e}", entry.name);
        }
    }

    #[test]
    fn public_gradient_check_on_catalog() {
        for entry in builtin_catalog().models {
            let g = make_grid(entry.model.r, 6, entry.horizon).unwrap();
            let path = BrownianPath::sample(&g, 1, 8, 1).unwrap();
            let c = gradient_check(&entry.model, &path, EPS).unwrap();
            assert!(c.worst() < 1e-6, "{}: {c:?}", entry.name);
            assert_eq!(c.second_variation.is_some(), entry.model.is_diffusion());
        }
    }

    #[test]
    fn diffusion_and_delay_tableaux_agree_for_dirac_at_zero() {
        let m = catalog_model("bounded", &Params::new()).unwrap().model;
        let g = make_grid(1.0, 10, 1.0).unwrap();
        let path = BrownianPath::sample(&g, 1, 2, 0).unwrap();
        let x = euler_diffusion(&m.sigma, &m.b, m.x0(), &path).unwrap();
        let a = first_variation_diffusion(&m.sigma, &m.b, &x, &path).unwrap();
        let b = first_variation_delay(&m, &x, &path).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_sigma_tableau() {
        let mut p = Params::new();
        p.insert("c".into(), 0.8);
        let m = catalog_model("constant", &p).unwrap().model;
        let g = make_grid(1.0, 6, 1.0).unwrap();
        let path = BrownianPath::sample(&g, 1, 2, 0).unwrap();
        let x = euler_diffusion(&m.sigma, &m.b, m.x0(), &path).unwrap();
        let t = first_variation_diffusion(&m.sigma, &m.b, &x, &path).unwrap();
        for k in 1..=6 {
            for mm in 1..=k {
                assert_eq!(t.get(k, mm), 0.8);
            }
            assert_eq!(t.get(k, k + 1), 0.0);
        }
        assert!((malliavin_cov(&t, 6) - 0.64).abs() < 1e-15);
        let s2 = second_variation_diffusion(&m.sigma, &m.b, &x, &t, &path).unwrap();
        for m1 in 1..=6 {
            for m2 in 1..=6 {
                assert_eq!(s2.get(6, m1, m2), 0.0);
            }
        }
    }

    #[test]
    fn gbm_terminal_row_closed_form() {
        let m = catalog_model("gbm", &Params::new()).unwrap().model;
        let g = make_grid(1.0, 10, 1.0).unwrap();
        let path = BrownianPath::sample(&g, 1, 8, 3).unwrap();
        let x = euler_diffusion(&m.sigma, &m.b, 1.0, &path).unwrap();
        let t = first_variation_diffusion(&m.sigma, &m.b, &x, &path).unwrap();
        let inc = path.increments();
        for mm in 1..=10 {
            let prod: f64 = inc[mm..].iter().map(|d| 1.0 + d).product();
            let want = x.at(mm as isize - 1) * prod;
            assert!(max_rel(t.get(10, mm), want) < 1e-13);
        }
    }

    #[test]
    fn adjoint_row_matches_tableau() {
        for entry in builtin_catalog().models {
            let g = make_grid(entry.model.r, 8, entry.horizon).unwrap();
            let path = BrownianPath::sample(&g, 1, 5, 9).unwrap();
            let x = euler_delay(&entry.model, &path, &g).unwrap();
            let tab = first_variation_delay(&entry.model, &x, &path).unwrap();
            let row = terminal_gradient(&entry.model, &x, &path).unwrap();
            for (a, b) in row.iter().zip(tab.row(g.steps())) {
                assert!(max_rel(*a, *b) < 1e-12, "{}", entry.name);
            }
        }
    }

    #[test]
    fn second_variation_matches_finite_differences() {
        for name in ["gbm", "bounded"] {
            let m = catalog_model(name, &Params::new()).unwrap().model;
            let g = make_grid(1.0, 8, 1.0).unwrap();
            let path = BrownianPath::sample(&g, 1, 13, 2).unwrap();
            let x = euler_diffusion(&m.sigma, &m.b, m.x0(), &path).unwrap();
            let t = first_variation_diffusion(&m.sigma, &m.b, &x, &path).unwrap();
            let s2 = second_variation_diffusion(&m.sigma, &m.b, &x, &t, &path).unwrap();
            let tab_at = |p: &BrownianPath| {
                let x = euler_diffusion(&m.sigma, &m.b, m.x0(), p).unwrap();
                first_variation_diffusion(&m.sigma, &m.b, &x, p).unwrap()
            };
            for m2 in 1..=8 {
                let up = tab_at(&bump(&path, m2 - 1, EPS));
                let dn = tab_at(&bump(&path, m2 - 1, -EPS));
                for k in 1..=8 {
                    for m1 in 1..=k {
                        let fd = (up.get(k, m1) - dn.get(k, m1)) / (2.0 * EPS);
                        assert!(max_rel(s2.get(k, m1, m2), fd) < 1e-6, "{name} {k} {m1} {m2}");
                    }
                }
            }
            for k in 1..=8 {
                for m1 in 1..=k {
                    for m2 in 1..=k {
                        assert!((s2.get(k, m1, m2) - s2.get(k, m2, m1)).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn covariance_matches_fd_built_row() {
        let m = catalog_model("delay", &Params::new()).unwrap().model;
        let g = make_grid(1.0, 4, 2.0).unwrap();
        let path = BrownianPath::sample(&g, 1, 1, 1).unwrap();
        let x = euler_delay(&m, &path, &g).unwrap();
        let tab = first_variation_delay(&m, &x, &path).unwrap();
        let fd_row: Vec<f64> = (0..g.steps()).map(|j| fd_column(&m, &path, j)[g.steps()]).collect();
        let a = malliavin_cov(&tab, g.steps());
        let b = covariance(&fd_row, g.h());
        assert!((a - b).abs() / a < 1e-5);
        assert!(a > 0.0);
    }

    #[test]
    fn stochastic_exponential_basics() {
        let inc = [0.1, -0.3, 0.2];
        let e = stochastic_exponential(&[0.0; 3], &inc, 0.1).unwrap();
        assert!((0..4).all(|k| e.value(k) == 1.0));
        let e = stochastic_exponential(&[0.5, -1.0, 2.0], &inc, 0.1).unwrap();
        assert_eq!(e.value(0), 1.0);
        for k in 0..4 {
            assert!(e.value(k) > 0.0);
            assert_eq!(e.ratio(k, k), 1.0);
            assert!((e.value(k) * e.inverse(k) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn stochastic_exponential_has_unit_mean() {
        let g = make_grid(1.0, 20, 1.0).unwrap();
        let s1: Vec<f64> = (0..20).map(|k| 0.5 + 0.02 * k as f64).collect();
        let vals: Vec<f64> = (0..20_000)
            .map(|p| {
                let path = BrownianPath::sample(&g, 1, 77, p).unwrap();
                stochastic_exponential(&s1, path.increments(), g.h()).unwrap().value(20)
            })
            .collect();
        let m = crate::stats::Moments::from_slice(&vals);
        assert!((m.mean - 1.0).abs() < 4.0 * m.stderr(), "{} ± {}", m.mean, m.stderr());
    }
}
