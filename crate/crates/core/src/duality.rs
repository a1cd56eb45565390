//! Duality checks for the error equation.
//!
//! Three routes: a linear case where the dual process solves two scalar ODEs,
//! the pathwise integration-by-parts chain for driftless diffusions, and a
//! least-squares Monte Carlo estimate of the dual process for general models.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::error_equation::{build_forcing, solve_triangular, ForcingPath, LinearOperatorSpec};
use crate::euler::{frozen_coefficients, rounded_taps, tap_sum, CoupledPair, Tap};
use crate::grid::DelayGrid;
use crate::mc;
use crate::models::{DelayModel, TestFunction};
use crate::paths::BrownianPath;
use crate::quadrature::GaussLegendre;
use crate::stats::{pairwise_sum, Estimate, Moments};

// ---------------------------------------------------------------------------
// Linear case: α(Y) = a Y, β(Y) = b̄ Y, G = g W, Φ = W_T.

/// Both sides of the duality identity for one linear case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityCaseResult {
    /// Monte Carlo `E[Φ Y_T]`.
    pub lhs: f64,
    /// Monte Carlo `E[Φ G_T] + E ∫ θ̂ G dt`.
    pub rhs: f64,
    pub closed_form: Option<f64>,
    pub stderr_lhs: f64,
    pub stderr_rhs: f64,
}

/// Closed-form values of the two sides, each from its own ODE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormSides {
    /// `c(T)` for `c′ = b̄ c + g`, `c(0) = 0`.
    pub lhs: f64,
    /// `g T + ∫ g b̄ p(t) t dt`.
    pub rhs: f64,
    /// `g (e^{b̄T} − 1) / b̄`, or `g T` at `b̄ = 0`.
    pub formula: f64,
}

/// `p` and `q` of the dual process `θ̂_t = a p(t) + b̄ (p(t) W_t + q(t))` at the
/// nodes `t_k = kT/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaCoefficients {
    pub a: f64,
    pub bbar: f64,
    pub times: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl ThetaCoefficients {
    pub fn eval(&self, k: usize, w: f64) -> f64 {
        self.a * self.p[k] + self.bbar * (self.p[k] * w + self.q[k])
    }
}

const ODE_STEPS: usize = 4096;

fn rk4_step<const D: usize>(y: [f64; D], t: f64, dt: f64, f: &impl Fn(f64, &[f64; D]) -> [f64; D]) -> [f64; D] {
    let add = |y: &[f64; D], k: &[f64; D], s: f64| {
        let mut out = *y;
        for i in 0..D {
            out[i] += s * k[i];
        }
        out
    };
    let k1 = f(t, &y);
    let k2 = f(t + dt / 2.0, &add(&y, &k1, dt / 2.0));
    let k3 = f(t + dt / 2.0, &add(&y, &k2, dt / 2.0));
    let k4 = f(t + dt, &add(&y, &k3, dt));
    let mut out = y;
    for i in 0..D {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn check_linear_case(bbar: f64, g: f64, horizon: f64, a: f64) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("horizon", "must be positive and finite"));
    }
    if !(a.is_finite() && bbar.is_finite() && g.is_finite()) {
        return Err(invalid("a, bbar, g", "must be finite"));
    }
    Ok(())
}

/// Backward RK4 for `p′ = −b̄p`, `q′ = −ap − b̄q`, `p(T) = 1`, `q(T) = 0`,
/// sampled at `n + 1` nodes.
pub fn theta_coefficients(a: f64, bbar: f64, horizon: f64, n: usize) -> Result<ThetaCoefficients> {
    check_linear_case(bbar, 0.0, horizon, a)?;
    if n == 0 {
        return Err(invalid("n", "must be positive"));
    }
    let sub = ODE_STEPS.div_ceil(n);
    let dt = horizon / (n * sub) as f64;
    let rhs = |_t: f64, y: &[f64; 2]| [-bbar * y[0], -a * y[0] - bbar * y[1]];
    let mut p = vec![0.0; n + 1];
    let mut q = vec![0.0; n + 1];
    let mut y = [1.0, 0.0];
    p[n] = y[0];
    q[n] = y[1];
    for k in (0..n).rev() {
        for s in 0..sub {
            let t = horizon * (k + 1) as f64 / n as f64 - s as f64 * dt;
            y = rk4_step(y, t, -dt, &rhs);
        }
        p[k] = y[0];
        q[k] = y[1];
    }
    Ok(ThetaCoefficients {
        a,
        bbar,
        times: (0..=n).map(|k| horizon * k as f64 / n as f64).collect(),
        p,
        q,
    })
}

/// Both sides in closed form. The left side uses `E[W_t Y_t]`, the right side
/// `E[W_T G_T] = gT` and `E[θ̂_t g W_t] = g b̄ p(t) t`.
pub fn closed_form_sides(a: f64, bbar: f64, g: f64, horizon: f64) -> Result<ClosedFormSides> {
    check_linear_case(bbar, g, horizon, a)?;
    let dt = horizon / ODE_STEPS as f64;
    let mut c = [0.0];
    for i in 0..ODE_STEPS {
        c = rk4_step(c, i as f64 * dt, dt, &|_t, y: &[f64; 1]| [bbar * y[0] + g]);
    }
    // p, q and the accumulated integral J with J′ = −g b̄ p t, J(T) = 0.
    let mut y = [1.0, 0.0, 0.0];
    let f = |t: f64, y: &[f64; 3]| [-bbar * y[0], -a * y[0] - bbar * y[1], -g * bbar * y[0] * t];
    for i in 0..ODE_STEPS {
        y = rk4_step(y, horizon - i as f64 * dt, -dt, &f);
    }
    let formula = if bbar == 0.0 {
        g * horizon
    } else {
        g * (bbar * horizon).exp_m1() / bbar
    };
    Ok(ClosedFormSides {
        lhs: c[0],
        rhs: g * horizon + y[2],
        formula,
    })
}

/// Monte Carlo on `n` steps and `paths` paths against the closed form.
pub fn closed_form_duality(
    a: f64,
    bbar: f64,
    g: f64,
    horizon: f64,
    n: usize,
    paths: u64,
    seed: u64,
) -> Result<DualityCaseResult> {
    if n < 8 {
        return Err(invalid("n", "need at least 8 steps"));
    }
    if paths < 2 {
        return Err(invalid("paths", "need at least 2 paths"));
    }
    let sides = closed_form_sides(a, bbar, g, horizon)?;
    let theta = theta_coefficients(a, bbar, horizon, n)?;
    let grid = DelayGrid::diffusion(horizon, n)?;
    let h = grid.h();
    let alpha = LinearOperatorSpec::scalar_kernel(vec![a; n]);
    let beta = LinearOperatorSpec::scalar_kernel(vec![bbar; n]);
    let m = mc::moments(paths, 2, |p, out| {
        let path = BrownianPath::sample(&grid, 1, seed, p)?;
        let w = path.cumulative();
        let forcing = ForcingPath {
            g: w.iter().map(|x| g * x).collect(),
        };
        let y = solve_triangular(&alpha, &beta, &forcing, path.increments(), h)?;
        let wt = w[n];
        out[0] = wt * y[n];
        let integral: Vec<f64> = (0..n).map(|k| theta.eval(k, w[k]) * g * w[k]).collect();
        out[1] = wt * forcing.g[n] + h * pairwise_sum(&integral);
        Ok(())
    })?;
    Ok(DualityCaseResult {
        lhs: m[0].mean,
        rhs: m[1].mean,
        closed_form: Some(sides.rhs),
        stderr_lhs: m[0].stderr(),
        stderr_rhs: m[1].stderr(),
    })
}

// ---------------------------------------------------------------------------
// Integration-by-parts chain for driftless diffusions.

/// One path of the chain: `F Y_T`, the single and double duality forms, and the
/// direct difference `f(X_T) − f(X̄_T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Section2Sample {
    pub lhs: f64,
    pub mid: f64,
    #[serde(rename = "final")]
    pub final_: f64,
    pub direct: f64,
}

/// Monte Carlo means of the chain with paired standard errors of the gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section2Report {
    pub lhs: Estimate,
    pub mid: Estimate,
    #[serde(rename = "final")]
    pub final_: Estimate,
    pub direct: Estimate,
    pub lhs_minus_mid: Estimate,
    pub lhs_minus_final: Estimate,
    pub mid_minus_final: Estimate,
}

impl Section2Report {
    /// Every gap within `z` paired standard errors plus `slack`.
    pub fn consistent(&self, z: f64, slack: f64) -> bool {
        [self.lhs_minus_mid, self.lhs_minus_final, self.mid_minus_final]
            .iter()
            .all(|g| g.within(0.0, z, slack))
    }
}

type Vec3 = [f64; 3];
type Mat3 = [[f64; 3]; 3];

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn driftless(model: &DelayModel) -> Result<()> {
    if !model.is_diffusion() {
        return Err(invalid("model", "the chain needs a diffusion (nu = delta at 0)"));
    }
    if !(model.b.is_constant() && model.b.eval(0.0) == 0.0) {
        return Err(invalid("model", "the chain needs b = 0"));
    }
    Ok(())
}

/// Per-node integrals of `σ′, σ″, σ‴` along `a X + (1 − a) Z`.
struct SigmaIntegrals {
    s1: f64,
    s1x: f64,
    s1z: f64,
    txx: f64,
    txz: f64,
    tzz: f64,
}

fn sigma_integrals(model: &DelayModel, q: &GaussLegendre, x: f64, z: f64) -> SigmaIntegrals {
    let sigma = &model.sigma;
    let mut out = SigmaIntegrals {
        s1: 0.0,
        s1x: 0.0,
        s1z: 0.0,
        txx: 0.0,
        txz: 0.0,
        tzz: 0.0,
    };
    if sigma.is_constant() {
        return out;
    }
    for (a, w) in q.nodes().iter().zip(q.weights()) {
        let y = a * x + (1.0 - a) * z;
        let (d1, d2, d3) = (sigma.d1(y), sigma.d2(y), sigma.d3(y));
        let b = 1.0 - a;
        out.s1 += w * d1;
        out.s1x += w * a * d2;
        out.s1z += w * b * d2;
        out.txx += w * a * a * d3;
        out.txz += w * a * b * d3;
        out.tzz += w * b * b * d3;
    }
    out
}

/// The chain on one coupled path; `path` carries the coarse grid and refinement.
pub fn section2_sample(model: &DelayModel, f: &TestFunction, path: &BrownianPath) -> Result<Section2Sample> {
    driftless(model)?;
    let fs = f
        .smooth()
        .ok_or_else(|| invalid("f", "the chain needs a smooth test function"))?;
    let pair = CoupledPair::simulate(model, path)?;
    let kappa = pair.kappa;
    let fg = *pair.fine_grid();
    let nf = fg.steps();
    let delta = fg.h();
    let x = pair.fine.forward();
    let xe = pair.coarse_on_fine.forward();
    let xc = pair.coarse.forward();
    let xi = &pair.fine_increments;
    let q = GaussLegendre::unit16();
    let sigma = &model.sigma;

    // Forward: Y by its recursion, S (summed D X within the cell) and W − W_{cell start}.
    let mut y = 0.0;
    let mut s = vec![0.0; nf];
    let mut dw = vec![0.0; nf];
    let mut ints = Vec::with_capacity(nf);
    for j in 0..nf {
        let c = j / kappa;
        let z = xc[c];
        if j % kappa != 0 {
            let prev = j - 1;
            s[j] = (1.0 + sigma.d1(x[prev]) * xi[prev]) * s[prev] + sigma.eval(x[prev]);
            dw[j] = dw[prev] + xi[prev];
        }
        let si = sigma_integrals(model, q, x[j], z);
        y = (1.0 + si.s1 * xi[j]) * y + si.s1 * (xe[j] - z) * xi[j];
        ints.push(si);
    }

    // Terminal functional F and its derivatives in (X_N, X̄_N).
    let (xn, xbn) = (x[nf], xe[nf]);
    let mut v = 0.0;
    let mut g: Vec3 = [0.0; 3];
    let mut hm: Mat3 = [[0.0; 3]; 3];
    for (a, w) in q.nodes().iter().zip(q.weights()) {
        let u = a * xn + (1.0 - a) * xbn;
        let b = 1.0 - a;
        let (d1, d2, d3) = (fs.d1(u), fs.d2(u), fs.d3(u));
        v += w * d1;
        g[0] += w * a * d2;
        g[1] += w * b * d2;
        hm[0][0] += w * a * a * d3;
        hm[0][1] += w * a * b * d3;
        hm[1][1] += w * b * b * d3;
    }
    hm[1][0] = hm[0][1];
    let lhs = v * y;

    let mut mid = 0.0;
    let mut fin = 0.0;
    for j in (0..nf).rev() {
        let c = j / kappa;
        let z = xc[c];
        let xj = x[j];
        let e = xi[j];
        let coarse_next = (j + 1) % kappa == 0;
        let c1 = if coarse_next { 1.0 } else { 0.0 };
        let si = &ints[j];
        let (sx, sz) = (sigma.eval(xj), sigma.eval(z));
        let (dsx, dsz) = (sigma.d1(xj), sigma.d1(z));
        let bvec: Vec3 = [sx, sz, c1 * sz];
        let gb = dot(&g, &bvec);
        let tau = 1.0 + dsx * e;

        let u = si.s1 * sz * gb;
        mid += u * dw[j];
        let alpha = sz * (si.s1x * gb + si.s1 * (tau * dot(&hm[0], &bvec) + g[0] * dsx));
        let hrow = [hm[1][0] + c1 * hm[2][0], hm[1][1] + c1 * hm[2][1], hm[1][2] + c1 * hm[2][2]];
        let beta = sz * si.s1 * sz * dot(&hrow, &bvec);
        fin += alpha * s[j] + beta * (j - c * kappa) as f64;

        // Step the value, gradient and Hessian of V back to node j.
        let m = 1.0 + si.s1 * e;
        let grad_m: Vec3 = [e * si.s1x, 0.0, e * si.s1z];
        let hess_m: Mat3 = [[e * si.txx, 0.0, e * si.txz], [0.0; 3], [e * si.txz, 0.0, e * si.tzz]];
        let zrow: Vec3 = if coarse_next { [0.0, 1.0, dsz * e] } else { [0.0, 0.0, 1.0] };
        let jac: Mat3 = [[tau, 0.0, 0.0], [0.0, 1.0, dsz * e], zrow];
        let mut jtg: Vec3 = [0.0; 3];
        for (col, out) in jtg.iter_mut().enumerate() {
            *out = (0..3).map(|r| jac[r][col] * g[r]).sum();
        }
        let mut hj: Mat3 = [[0.0; 3]; 3];
        for r in 0..3 {
            for col in 0..3 {
                hj[r][col] = (0..3).map(|k| hm[r][k] * jac[k][col]).sum();
            }
        }
        let mut jthj: Mat3 = [[0.0; 3]; 3];
        for r in 0..3 {
            for col in 0..3 {
                jthj[r][col] = (0..3).map(|k| jac[k][r] * hj[k][col]).sum();
            }
        }
        // Σ_k g_k ∇²φ_k: σ″(X) ξ at (0,0); σ″(Z) ξ at (2,2) from X̄ and, on coarse steps, Z.
        let d2z = sigma.d2(z) * e;
        jthj[0][0] += g[0] * sigma.d2(xj) * e;
        jthj[2][2] += (g[1] + c1 * g[2]) * d2z;
        let mut hn: Mat3 = [[0.0; 3]; 3];
        for r in 0..3 {
            for col in 0..3 {
                hn[r][col] = v * hess_m[r][col] + grad_m[r] * jtg[col] + jtg[r] * grad_m[col] + m * jthj[r][col];
            }
        }
        for k in 0..3 {
            g[k] = v * grad_m[k] + m * jtg[k];
        }
        hm = hn;
        v *= m;
    }

    let direct = f.eval(xn) - f.eval(xbn);
    Ok(Section2Sample {
        lhs,
        mid: delta * mid,
        final_: delta * delta * fin,
        direct,
    })
}

/// Monte Carlo of the chain with `n` coarse steps and refinement `kappa`.
pub fn section2_chain(
    model: &DelayModel,
    f: &TestFunction,
    n: usize,
    kappa: usize,
    paths: u64,
    seed: u64,
) -> Result<Section2Report> {
    driftless(model)?;
    let grid = DelayGrid::diffusion(model.r, n)?;
    let m = mc::moments(paths, 7, |p, out| {
        let path = BrownianPath::sample(&grid, kappa, seed, p)?;
        let s = section2_sample(model, f, &path)?;
        out[0] = s.lhs;
        out[1] = s.mid;
        out[2] = s.final_;
        out[3] = s.direct;
        out[4] = s.lhs - s.mid;
        out[5] = s.lhs - s.final_;
        out[6] = s.mid - s.final_;
        Ok(())
    })?;
    let e: Vec<Estimate> = m.into_iter().map(Estimate::from).collect();
    Ok(Section2Report {
        lhs: e[0],
        mid: e[1],
        final_: e[2],
        direct: e[3],
        lhs_minus_mid: e[4],
        lhs_minus_final: e[5],
        mid_minus_final: e[6],
    })
}

/// `E[F Y_T]` with `F = ∫ f′(a X_T + (1 − a) X̄_T) da`. Uses the model's exact
/// solution when it has one, else the fine Euler scheme with refinement `kappa`.
pub fn section2_lhs(
    model: &DelayModel,
    f: &TestFunction,
    n: usize,
    kappa: usize,
    paths: u64,
    seed: u64,
) -> Result<Estimate> {
    driftless(model)?;
    let fs = f
        .smooth()
        .ok_or_else(|| invalid("f", "needs a smooth test function"))?
        .clone();
    let grid = DelayGrid::diffusion(model.r, n)?;
    let q = GaussLegendre::unit16();
    let m = mc::moments(paths, 1, |p, out| {
        let (x, xbar) = match &model.exact {
            Some(exact) => {
                let path = BrownianPath::sample(&grid, kappa, seed, p)?;
                let pair = CoupledPair::simulate(model, &path)?;
                (exact.terminal(model.x0(), path.terminal(), model.r), pair.coarse.terminal())
            }
            None => {
                let path = BrownianPath::sample(&grid, kappa, seed, p)?;
                let pair = CoupledPair::simulate(model, &path)?;
                (pair.fine.terminal(), pair.coarse.terminal())
            }
        };
        out[0] = q.mean_value(|u| fs.d1(u), x, xbar) * (x - xbar);
        Ok(())
    })?;
    Ok(m[0].into())
}

// ---------------------------------------------------------------------------
// Least-squares Monte Carlo estimate of the dual process.

/// Regression settings: polynomials of total degree `degree` in the state variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsmcConfig {
    pub degree: usize,
    pub paths: u64,
    pub ridge: f64,
}

impl LsmcConfig {
    pub fn new(degree: usize, paths: u64, ridge: f64) -> Result<Self> {
        if degree == 0 || degree > 3 {
            return Err(invalid("degree", "must be 1, 2 or 3"));
        }
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(invalid("ridge", "must be nonnegative"));
        }
        Ok(Self { degree, paths, ridge })
    }

    /// Number of monomials of degree at most `degree` in `vars` variables.
    pub fn basis_size(&self, vars: usize) -> usize {
        monomials(vars, self.degree).len()
    }

    fn check(&self, vars: usize) -> Result<()> {
        let need = 10 * self.basis_size(vars) as u64;
        if self.paths < need {
            return Err(invalid("paths", format!("need at least {need} paths for this basis")));
        }
        Ok(())
    }
}

fn monomials(vars: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; vars]];
    let mut frontier = out.clone();
    for _ in 0..degree {
        let mut next = Vec::new();
        for m in &frontier {
            let last = m.iter().rposition(|&e| e > 0).unwrap_or(0);
            for v in last..vars {
                let mut e = m.clone();
                e[v] += 1;
                next.push(e);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Simulated paths in step-major columns, ready for the backward regression.
#[derive(Debug, Clone)]
pub struct DualPaths {
    steps: usize,
    h: f64,
    taps: Vec<Tap>,
    vars: usize,
    /// `steps · vars` columns.
    state: Vec<Vec<f64>>,
    alpha: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
    increments: Vec<Vec<f64>>,
    /// `steps + 1` columns.
    forcing: Vec<Vec<f64>>,
    phi: Vec<f64>,
    /// `Y_N` from the coupled pair.
    terminal_error: Vec<f64>,
}

impl DualPaths {
    fn from_columns(steps: usize, h: f64, taps: Vec<Tap>, vars: usize, cols: Vec<Vec<f64>>) -> Self {
        let mut it = cols.into_iter();
        let mut take = |k: usize| -> Vec<Vec<f64>> { it.by_ref().take(k).collect() };
        let state = take(steps * vars);
        let alpha = take(steps);
        let beta = take(steps);
        let increments = take(steps);
        let forcing = take(steps + 1);
        let mut last = take(2);
        let terminal_error = last.pop().unwrap_or_default();
        let phi = last.pop().unwrap_or_default();
        Self {
            steps,
            h,
            taps,
            vars,
            state,
            alpha,
            beta,
            increments,
            forcing,
            phi,
            terminal_error,
        }
    }

    /// Coupled pairs of `model` on `grid` refined by `kappa`, with `Φ = phi(X̄_T)`.
    /// State variables at fine node `k`: `X̄_k` and `Σ w X̄_{k − lag}`.
    pub fn from_model(
        model: &DelayModel,
        phi: &TestFunction,
        grid: &DelayGrid,
        kappa: usize,
        paths: u64,
        seed: u64,
        first_path: u64,
    ) -> Result<Self> {
        let fg = grid.refine(kappa)?;
        let steps = fg.steps();
        let taps = rounded_taps(&model.nu, &fg)?;
        let vars = 2;
        let width = steps * (vars + 3) + steps + 1 + 2;
        let cols = mc::collect(paths, width, |p, out| {
            let path = BrownianPath::sample(grid, kappa, seed, first_path + p)?;
            let pair = CoupledPair::simulate(model, &path)?;
            let frozen = frozen_coefficients(model, &pair)?;
            let g = build_forcing(model, &pair, &frozen)?;
            let xe = pair.coarse_on_fine.values();
            let mut o = 0;
            for k in 0..steps {
                out[o] = xe[fg.n() + k];
                out[o + 1] = tap_sum(&taps, xe, fg.n() + k);
                o += vars;
            }
            out[o..o + steps].copy_from_slice(&frozen.sigma1);
            o += steps;
            out[o..o + steps].copy_from_slice(&frozen.b1);
            o += steps;
            out[o..o + steps].copy_from_slice(&pair.fine_increments);
            o += steps;
            out[o..o + steps + 1].copy_from_slice(&g.g);
            o += steps + 1;
            out[o] = phi.eval(pair.coarse.terminal());
            out[o + 1] = pair.fine.terminal() - pair.coarse_on_fine.terminal();
            Ok(())
        })?;
        Ok(Self::from_columns(steps, fg.h(), taps, vars, cols))
    }

    /// The linear case `α = a`, `β = b̄`, `G = gW`, `Φ = W_T` with state `W_k`.
    pub fn linear(a: f64, bbar: f64, g: f64, horizon: f64, n: usize, paths: u64, seed: u64, first_path: u64) -> Result<Self> {
        let grid = DelayGrid::diffusion(horizon, n)?;
        let alpha = LinearOperatorSpec::scalar_kernel(vec![a; n]);
        let beta = LinearOperatorSpec::scalar_kernel(vec![bbar; n]);
        let width = n * 4 + n + 1 + 2;
        let cols = mc::collect(paths, width, |p, out| {
            let path = BrownianPath::sample(&grid, 1, seed, first_path + p)?;
            let w = path.cumulative();
            let forcing = ForcingPath {
                g: w.iter().map(|x| g * x).collect(),
            };
            let y = solve_triangular(&alpha, &beta, &forcing, path.increments(), grid.h())?;
            out[..n].copy_from_slice(&w[..n]);
            out[n..2 * n].fill(a);
            out[2 * n..3 * n].fill(bbar);
            out[3 * n..4 * n].copy_from_slice(path.increments());
            out[4 * n..5 * n + 1].copy_from_slice(&forcing.g);
            out[5 * n + 1] = w[n];
            out[5 * n + 2] = y[n];
            Ok(())
        })?;
        Ok(Self::from_columns(n, grid.h(), vec![Tap { lag: 0, weight: 1.0 }], 1, cols))
    }

    pub fn paths(&self) -> usize {
        self.phi.len()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    fn state_row(&self, k: usize, p: usize, out: &mut [f64]) {
        for (v, o) in out.iter_mut().enumerate() {
            *o = self.state[k * self.vars + v][p];
        }
    }
}

/// A fitted regression at one step: standardized polynomial features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRegression {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Indices of the state variables that vary across paths.
    pub active: Vec<usize>,
    pub exponents: Vec<Vec<usize>>,
    pub coef: Vec<f64>,
    pub ridge: f64,
    /// `max diag / min diag` of the Cholesky factor, squared.
    pub condition: f64,
}

impl StepRegression {
    fn features(&self, state: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let z: Vec<f64> = self
            .active
            .iter()
            .map(|&v| (state[v] - self.mean[v]) / self.scale[v])
            .collect();
        for e in &self.exponents {
            let mut t = 1.0;
            for (zi, &p) in z.iter().zip(e) {
                t *= zi.powi(p as i32);
            }
            out.push(t);
        }
    }

    pub fn eval(&self, state: &[f64]) -> f64 {
        let mut f = Vec::with_capacity(self.exponents.len());
        self.features(state, &mut f);
        f.iter().zip(&self.coef).map(|(a, b)| a * b).sum()
    }
}

fn fit_step(paths: &DualPaths, k: usize, target: &[f64], cfg: &LsmcConfig) -> Result<StepRegression> {
    let m = paths.paths();
    let vars = paths.vars;
    let mut mean = vec![0.0; vars];
    let mut scale = vec![1.0; vars];
    let mut active = Vec::new();
    for v in 0..vars {
        let col = &paths.state[k * vars + v];
        let mo = Moments::from_slice(col);
        mean[v] = mo.mean;
        let sd = mo.std_dev();
        let duplicate = active.iter().any(|&u: &usize| paths.state[k * vars + u] == *col);
        if sd > 1e-12 * (1.0 + mo.mean.abs()) && !duplicate {
            scale[v] = sd;
            active.push(v);
        }
    }
    let exponents = monomials(active.len(), cfg.degree);
    let nb = exponents.len();
    let mut reg = StepRegression {
        mean,
        scale,
        active,
        exponents,
        coef: vec![0.0; nb],
        ridge: cfg.ridge,
        condition: 1.0,
    };
    let mut xtx = DMatrix::<f64>::zeros(nb, nb);
    let mut xty = DVector::<f64>::zeros(nb);
    let mut row = vec![0.0; vars];
    let mut feat = Vec::with_capacity(nb);
    for (p, t) in target.iter().enumerate() {
        paths.state_row(k, p, &mut row);
        reg.features(&row, &mut feat);
        for i in 0..nb {
            xty[i] += feat[i] * t;
            for j in 0..=i {
                xtx[(i, j)] += feat[i] * feat[j];
            }
        }
    }
    for i in 0..nb {
        for j in 0..i {
            xtx[(j, i)] = xtx[(i, j)];
        }
    }
    xtx /= m as f64;
    xty /= m as f64;
    let mut ridge = cfg.ridge;
    for _ in 0..16 {
        let mut a = xtx.clone();
        for i in 0..nb {
            a[(i, i)] += ridge;
        }
        if let Some(ch) = a.cholesky() {
            let d = ch.l().diagonal();
            let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), x| (lo.min(*x), hi.max(*x)));
            reg.coef = ch.solve(&xty).iter().copied().collect();
            reg.ridge = ridge;
            reg.condition = (hi / lo).powi(2);
            if reg.coef.iter().all(|c| c.is_finite()) {
                return Ok(reg);
            }
        }
        ridge = (ridge * 10.0).max(1e-12);
    }
    Err(Error::Regression {
        step: k,
        reason: format!("normal equations singular up to ridge {ridge:e}"),
    })
}

/// Backward regressions for `Ỹ`, `Ẑ` and the delayed part of `θ̂`, one per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualFit {
    pub y: Vec<StepRegression>,
    pub z: Vec<StepRegression>,
    /// Regression of `Σ_{lag > 0} w E[A_{k+lag} | F_k]`; `None` when every lag is 0.
    pub delayed: Vec<Option<StepRegression>>,
    /// Weight of the lag-0 taps.
    pub instant_weight: f64,
}

impl DualFit {
    fn a_value(&self, paths: &DualPaths, k: usize, p: usize, row: &[f64]) -> f64 {
        paths.alpha[k][p] * self.z[k].eval(row) + paths.beta[k][p] * self.y[k].eval(row)
    }

    /// `θ̂_k` on path `p` of `paths`.
    pub fn theta(&self, paths: &DualPaths, k: usize, p: usize) -> f64 {
        let mut row = vec![0.0; paths.vars];
        paths.state_row(k, p, &mut row);
        let mut t = 0.0;
        if self.instant_weight != 0.0 {
            t += self.instant_weight * self.a_value(paths, k, p, &row);
        }
        if let Some(r) = &self.delayed[k] {
            t += r.eval(&row);
        }
        t
    }

    pub fn max_ridge(&self) -> f64 {
        self.y
            .iter()
            .chain(&self.z)
            .chain(self.delayed.iter().flatten())
            .fold(0.0, |m, r| m.max(r.ridge))
    }
}

/// Backward recursion `R_N = Φ`, `Ỹ_k = E[R_{k+1}|F_k]`, `Ẑ_k = E[(R_{k+1} − Ỹ_k) ΔW_k|F_k]/h`,
/// `A_k = α_k Ẑ_k + β_k Ỹ_k`, `θ̂_k = Σ w E[A_{k+lag}|F_k]`, `R_k = R_{k+1} + h θ̂_k`.
pub fn fit_dual(paths: &DualPaths, cfg: &LsmcConfig) -> Result<DualFit> {
    cfg.check(paths.vars)?;
    let m = paths.paths();
    let n = paths.steps;
    let h = paths.h;
    let instant_weight: f64 = paths.taps.iter().filter(|t| t.lag == 0).map(|t| t.weight).sum();
    let delayed_taps: Vec<Tap> = paths.taps.iter().copied().filter(|t| t.lag > 0).collect();
    let max_lag = delayed_taps.iter().map(|t| t.lag).max().unwrap_or(0);
    let mut r = paths.phi.clone();
    // A_k per path for the last `max_lag + 1` steps, indexed by k mod (max_lag + 1).
    let mut a_hist = vec![vec![0.0; m]; max_lag + 1];
    let mut fit = DualFit {
        y: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
        delayed: Vec::with_capacity(n),
        instant_weight,
    };
    let mut row = vec![0.0; paths.vars];
    let mut target = vec![0.0; m];
    for k in (0..n).rev() {
        let ry = fit_step(paths, k, &r, cfg)?;
        for (p, t) in target.iter_mut().enumerate() {
            paths.state_row(k, p, &mut row);
            *t = (r[p] - ry.eval(&row)) * paths.increments[k][p] / h;
        }
        let rz = fit_step(paths, k, &target, cfg)?;
        let slot = k % (max_lag + 1);
        let mut theta = vec![0.0; m];
        for p in 0..m {
            paths.state_row(k, p, &mut row);
            let a = paths.alpha[k][p] * rz.eval(&row) + paths.beta[k][p] * ry.eval(&row);
            a_hist[slot][p] = a;
            theta[p] = instant_weight * a;
        }
        let mut delayed = None;
        if !delayed_taps.is_empty() {
            target.fill(0.0);
            let mut any = false;
            for t in &delayed_taps {
                if k + t.lag < n {
                    any = true;
                    let src = &a_hist[(k + t.lag) % (max_lag + 1)];
                    for (o, a) in target.iter_mut().zip(src) {
                        *o += t.weight * a;
                    }
                }
            }
            if any {
                let rd = fit_step(paths, k, &target, cfg)?;
                for (p, th) in theta.iter_mut().enumerate() {
                    paths.state_row(k, p, &mut row);
                    *th += rd.eval(&row);
                }
                delayed = Some(rd);
            }
        }
        for (rv, th) in r.iter_mut().zip(&theta) {
            *rv += h * th;
        }
        fit.y.push(ry);
        fit.z.push(rz);
        fit.delayed.push(delayed);
    }
    fit.y.reverse();
    fit.z.reverse();
    fit.delayed.reverse();
    Ok(fit)
}

/// The duality identity evaluated with a fitted `θ̂` on a path set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualResidual {
    /// `E[Φ Y_T]`.
    pub lhs: Estimate,
    /// `E[Φ G_T] + h Σ E[θ̂_k G_k]`.
    pub rhs: Estimate,
    /// Paired `lhs − rhs`.
    pub gap: Estimate,
    /// `h Σ E[θ̂_k G_k]` alone.
    pub theta_term: Estimate,
    /// `|gap| / |lhs|`.
    pub relative: f64,
}

pub fn dual_residual(fit: &DualFit, paths: &DualPaths) -> Result<DualResidual> {
    if fit.y.len() != paths.steps {
        return Err(invalid("paths", "step count differs from the fit"));
    }
    let m = paths.paths();
    let mut lhs = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    let mut gap = Vec::with_capacity(m);
    let mut dual = Vec::with_capacity(m);
    let mut terms = vec![0.0; paths.steps];
    for p in 0..m {
        for (k, t) in terms.iter_mut().enumerate() {
            *t = fit.theta(paths, k, p) * paths.forcing[k][p];
        }
        let l = paths.phi[p] * paths.terminal_error[p];
        let d = paths.h * pairwise_sum(&terms);
        let r = paths.phi[p] * paths.forcing[paths.steps][p] + d;
        dual.push(d);
        lhs.push(l);
        rhs.push(r);
        gap.push(l - r);
    }
    let lhs: Estimate = Moments::from_slice(&lhs).into();
    let rhs: Estimate = Moments::from_slice(&rhs).into();
    let gap: Estimate = Moments::from_slice(&gap).into();
    Ok(DualResidual {
        lhs,
        rhs,
        gap,
        theta_term: Moments::from_slice(&dual).into(),
        relative: gap.value.abs() / lhs.value.abs(),
    })
}

/// Fitted dual process and the identity residual on an independent path set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsmcReport {
    pub steps: usize,
    pub h: f64,
    /// Mean of `θ̂_k` over the independent paths.
    pub theta_mean: Vec<f64>,
    pub residual: DualResidual,
    pub basis_size: usize,
    pub max_ridge: f64,
    pub max_condition: f64,
}

/// Fit on `cfg.paths` paths, evaluate on the next `cfg.paths`.
pub fn estimate_theta_lsmc(
    model: &DelayModel,
    phi: &TestFunction,
    cfg: &LsmcConfig,
    grid: &DelayGrid,
    kappa: usize,
    seed: u64,
) -> Result<LsmcReport> {
    let train = DualPaths::from_model(model, phi, grid, kappa, cfg.paths, seed, 0)?;
    let fit = fit_dual(&train, cfg)?;
    drop(train);
    let test = DualPaths::from_model(model, phi, grid, kappa, cfg.paths, seed, cfg.paths)?;
    let residual = dual_residual(&fit, &test)?;
    let m = test.paths();
    let theta_mean = (0..test.steps)
        .map(|k| {
            let v: Vec<f64> = (0..m).map(|p| fit.theta(&test, k, p)).collect();
            pairwise_sum(&v) / m as f64
        })
        .collect();
    let max_condition = fit.y.iter().chain(&fit.z).chain(fit.delayed.iter().flatten()).fold(0.0, |a: f64, r| a.max(r.condition));
    Ok(LsmcReport {
        steps: test.steps,
        h: test.h,
        theta_mean,
        residual,
        basis_size: cfg.basis_size(test.vars),
        max_ridge: fit.max_ridge(),
        max_condition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{catalog_model, Params, SmoothFn1D};

    #[test]
    fn closed_forms_agree() {
        for a in [0.0, 0.5, -0.5] {
            for bbar in [0.0, 1.0, -1.0] {
                let s = closed_form_sides(a, bbar, 1.0, 1.0).unwrap();
                assert!((s.lhs - s.formula).abs() < 1e-10, "{a} {bbar}: {s:?}");
                assert!((s.rhs - s.formula).abs() < 1e-10, "{a} {bbar}: {s:?}");
            }
        }
        let s = closed_form_sides(0.0, 1.0, 1.0, 1.0).unwrap();
        assert!((s.lhs - (std::f64::consts::E - 1.0)).abs() < 1e-10);
        let r1 = closed_form_sides(0.5, 1.0, 2.0, 1.5).unwrap().rhs;
        let r2 = closed_form_sides(-0.5, 1.0, 2.0, 1.5).unwrap().rhs;
        assert!((r1 - r2).abs() < 1e-10);
    }

    #[test]
    fn theta_coefficients_match_exponentials() {
        let (a, b, t) = (0.5, -1.0, 1.0);
        let th = theta_coefficients(a, b, t, 10).unwrap();
        for k in 0..=10 {
            let s = t - th.times[k];
            let p = (b * s).exp();
            // q(t) = a (T − t) e^{b̄ (T − t)}
            let q = a * s * (b * s).exp();
            assert!((th.p[k] - p).abs() < 1e-12);
            assert!((th.q[k] - q).abs() < 1e-12);
        }
    }

    #[test]
    fn trivial_linear_case_by_monte_carlo() {
        let r = closed_form_duality(0.0, 0.0, 1.0, 1.0, 16, 20_000, 5).unwrap();
        assert_eq!(r.closed_form, Some(1.0));
        assert!((r.lhs - 1.0).abs() < 4.0 * r.stderr_lhs);
        assert!((r.rhs - 1.0).abs() < 4.0 * r.stderr_rhs);
    }

    #[test]
    fn constant_sigma_chain_is_zero() {
        let model = catalog_model("constant", &Params::new()).unwrap().model;
        let g = DelayGrid::diffusion(1.0, 4).unwrap();
        for p in 0..5 {
            let path = BrownianPath::sample(&g, 4, 1, p).unwrap();
            let s = section2_sample(&model, &TestFunction::sin(1.0), &path).unwrap();
            assert_eq!((s.lhs, s.mid, s.final_), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn chain_lhs_matches_direct_difference() {
        let mut p = Params::new();
        p.insert("drift".into(), 0.0);
        let model = catalog_model("bounded", &p).unwrap().model;
        let g = DelayGrid::diffusion(1.0, 4).unwrap();
        for i in 0..20 {
            let path = BrownianPath::sample(&g, 4, 2, i).unwrap();
            let s = section2_sample(&model, &TestFunction::sin(1.0), &path).unwrap();
            assert!((s.lhs - s.direct).abs() < 1e-12, "{s:?}");
        }
    }

    /// On a four-step mesh with a strongly curved payoff any slip in the
    /// derivative recursions shows up as a gap of many standard errors.
    #[test]
    fn chain_on_tiny_mesh() {
        let mut p = Params::new();
        p.insert("drift".into(), 0.0);
        let model = catalog_model("bounded", &p).unwrap().model;
        let r = section2_chain(&model, &TestFunction::sin(3.0), 2, 2, 200_000, 8).unwrap();
        assert!(r.consistent(4.0, 0.0), "{r:?}");
        assert!(r.mid.value.abs() > 4.0 * r.mid.stderr, "{r:?}");
    }

    #[test]
    fn chain_agrees_by_monte_carlo() {
        let mut p = Params::new();
        p.insert("drift".into(), 0.0);
        let model = catalog_model("bounded", &p).unwrap().model;
        let r = section2_chain(&model, &TestFunction::sin(1.0), 4, 4, 20_000, 3).unwrap();
        assert!(r.consistent(4.0, 0.0), "{r:?}");
        assert!(r.lhs_minus_mid.stderr > 0.0);
    }

    #[test]
    fn gbm_square_lhs() {
        let model = catalog_model("gbm", &Params::new()).unwrap().model;
        let e = section2_lhs(&model, &TestFunction::square(), 10, 1, 100_000, 11).unwrap();
        let want = std::f64::consts::E - 1.1f64.powi(10);
        assert!(e.within(want, 4.0, 0.0), "{e:?} vs {want}");
    }

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials(1, 3).len(), 4);
        assert_eq!(monomials(2, 2).len(), 6);
        assert_eq!(monomials(2, 3).len(), 10);
        assert_eq!(monomials(3, 2).len(), 10);
        let cfg = LsmcConfig::new(2, 50, 0.0).unwrap();
        assert!(cfg.check(2).is_err());
    }

    #[test]
    fn lsmc_without_operators_is_exact() {
        let paths = DualPaths::linear(0.0, 0.0, 1.0, 1.0, 16, 4000, 2, 0).unwrap();
        let cfg = LsmcConfig::new(3, 4000, 0.0).unwrap();
        let fit = fit_dual(&paths, &cfg).unwrap();
        for k in 0..16 {
            for p in 0..10 {
                assert_eq!(fit.theta(&paths, k, p), 0.0);
            }
        }
        let res = dual_residual(&fit, &paths).unwrap();
        assert!(res.gap.value.abs() < 1e-12);
    }

    #[test]
    fn lsmc_recovers_linear_theta() {
        let (a, bbar, n) = (0.5, 1.0, 64);
        let train = DualPaths::linear(a, bbar, 1.0, 1.0, n, 100_000, 4, 0).unwrap();
        let cfg = LsmcConfig::new(3, 100_000, 0.0).unwrap();
        let fit = fit_dual(&train, &cfg).unwrap();
        let test = DualPaths::linear(a, bbar, 1.0, 1.0, n, 5_000, 4, 200_000).unwrap();
        let th = theta_coefficients(a, bbar, 1.0, n).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..n {
            for p in 0..test.paths() {
                let w = test.state[k][p];
                let exact = th.eval(k, w);
                let d = fit.theta(&test, k, p) - exact;
                num += d * d;
                den += exact * exact;
            }
        }
        let rel = (num / den).sqrt();
        assert!(rel < 0.05, "relative L2 error {rel}");
    }

    #[test]
    fn lsmc_rejects_small_samples() {
        let model = DelayModel::diffusion("c", SmoothFn1D::constant(0.3), SmoothFn1D::constant(0.0), 0.0, 1.0).unwrap();
        let cfg = LsmcConfig::new(2, 20, 0.0).unwrap();
        let g = DelayGrid::diffusion(1.0, 4).unwrap();
        assert!(estimate_theta_lsmc(&model, &TestFunction::cos(1.0), &cfg, &g, 2, 0).is_err());
    }
}
