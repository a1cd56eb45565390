//! The linear error equation
//! `Y_{k+1} = Y_k + α(Y)_k ΔW_k + β(Y)_k h + (G_{k+1} − G_k)`, `Y = 0` before time 0.
//!
//! For a coupled pair (fine reference `X`, coarse scheme `X̄`) the equation is
//! posed on the fine mesh with `X̄` continued by its Euler interpolation; then
//! `Y = X − X̄` holds at every fine node up to rounding.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::euler::{frozen_coefficients, rounded_taps, CoupledPair, FrozenCoefficients, Tap};
use crate::grid::{snapped_floor, DelayGrid};
use crate::models::{DelayMeasure, DelayModel};
use crate::paths::BrownianPath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorKind {
    /// `σ₁(t) ∫ Y_{t+u} dν(u)`.
    DelayAlpha,
    /// `b₁(t) ∫ Y_{t+u} dν(u)`.
    DelayBeta,
    /// `c(t) Y_t`.
    ScalarKernel,
}

/// How `Y_{t+u}` is read when `t + u` is not a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShiftRule {
    /// `Y_{t + η(u)}`, the convention of the Euler scheme.
    Rounded,
    /// Linear interpolation between the two neighbouring nodes.
    Interpolated,
}

/// Causal linear operator `Y ↦ c_k Σ w Y_{k − lag}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperatorSpec {
    pub kind: OperatorKind,
    pub coefficients: Vec<f64>,
    pub taps: Vec<Tap>,
}

fn taps_for(nu: &DelayMeasure, grid: &DelayGrid, rule: ShiftRule) -> Result<Vec<Tap>> {
    match rule {
        ShiftRule::Rounded => rounded_taps(nu, grid),
        ShiftRule::Interpolated => {
            let mut taps = Vec::new();
            for a in nu.atoms() {
                let x = -a.location * grid.n() as f64 / grid.r();
                let lo = snapped_floor(x);
                let frac = x - lo;
                let lo = lo as usize;
                if frac <= 0.0 {
                    taps.push(Tap { lag: lo, weight: a.weight });
                } else {
                    taps.push(Tap {
                        lag: lo,
                        weight: a.weight * (1.0 - frac),
                    });
                    taps.push(Tap {
                        lag: lo + 1,
                        weight: a.weight * frac,
                    });
                }
            }
            Ok(taps)
        }
    }
}

impl LinearOperatorSpec {
    pub fn delay_alpha(sigma1: Vec<f64>, nu: &DelayMeasure, grid: &DelayGrid, rule: ShiftRule) -> Result<Self> {
        Ok(Self {
            kind: OperatorKind::DelayAlpha,
            coefficients: sigma1,
            taps: taps_for(nu, grid, rule)?,
        })
    }

    pub fn delay_beta(b1: Vec<f64>, nu: &DelayMeasure, grid: &DelayGrid, rule: ShiftRule) -> Result<Self> {
        Ok(Self {
            kind: OperatorKind::DelayBeta,
            coefficients: b1,
            taps: taps_for(nu, grid, rule)?,
        })
    }

    pub fn scalar_kernel(coefficients: Vec<f64>) -> Self {
        Self {
            kind: OperatorKind::ScalarKernel,
            coefficients,
            taps: vec![Tap { lag: 0, weight: 1.0 }],
        }
    }

    pub fn zero(steps: usize) -> Self {
        Self::scalar_kernel(vec![0.0; steps])
    }

    /// Output at node `k`; `y` holds nodes `0 ..`, earlier nodes are zero.
    #[inline]
    pub fn at(&self, k: usize, y: &[f64]) -> f64 {
        let mut s = 0.0;
        for t in &self.taps {
            if k >= t.lag {
                s += t.weight * y[k - t.lag];
            }
        }
        self.coefficients[k] * s
    }

    /// Output at every node where a coefficient is defined.
    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        (0..self.coefficients.len().min(y.len()))
            .map(|k| self.at(k, y))
            .collect()
    }
}

/// Free-function form of [`LinearOperatorSpec::apply`].
pub fn apply_operator(spec: &LinearOperatorSpec, y: &[f64]) -> Vec<f64> {
    spec.apply(y)
}

/// Forcing `G` at the nodes `0 ..= N`, `G_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingPath {
    pub g: Vec<f64>,
}

/// `G_{j+1} = G_j + σ₁_j B_j ΔW_j + b₁_j B_j δ` with
/// `B_j = Σ w (X̄(t_j + η(u)) − X̄(η(t_j) + η(u)))` on the fine mesh.
pub fn build_forcing(model: &DelayModel, pair: &CoupledPair, frozen: &FrozenCoefficients) -> Result<ForcingPath> {
    let fg = pair.fine_grid();
    let cg = pair.coarse_grid();
    let ftaps = rounded_taps(&model.nu, fg)?;
    let ctaps = rounded_taps(&model.nu, cg)?;
    let xe = pair.coarse_on_fine.values();
    let xc = pair.coarse.values();
    let delta = fg.h();
    let mut g = Vec::with_capacity(fg.steps() + 1);
    let mut acc = 0.0;
    g.push(acc);
    for (j, dw) in pair.fine_increments.iter().enumerate() {
        let c = j / pair.kappa;
        let mut bracket = 0.0;
        for (ft, ct) in ftaps.iter().zip(&ctaps) {
            bracket += ft.weight * (xe[fg.n() + j - ft.lag] - xc[cg.n() + c - ct.lag]);
        }
        acc += frozen.sigma1[j] * bracket * dw + frozen.b1[j] * bracket * delta;
        g.push(acc);
    }
    Ok(ForcingPath { g })
}

fn check_shapes(alpha: &LinearOperatorSpec, beta: &LinearOperatorSpec, g: &ForcingPath, inc: &[f64]) -> Result<()> {
    let n = inc.len();
    if g.g.len() != n + 1 || alpha.coefficients.len() < n || beta.coefficients.len() < n {
        return Err(invalid(
            "operators",
            format!(
                "shape mismatch: {} increments, {} forcing values, {}/{} coefficients",
                n,
                g.g.len(),
                alpha.coefficients.len(),
                beta.coefficients.len()
            ),
        ));
    }
    Ok(())
}

/// Forward substitution; exact because causal operators make the system lower triangular.
pub fn solve_triangular(
    alpha: &LinearOperatorSpec,
    beta: &LinearOperatorSpec,
    g: &ForcingPath,
    increments: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    check_shapes(alpha, beta, g, increments)?;
    let mut y = Vec::with_capacity(increments.len() + 1);
    y.push(g.g[0]);
    for (k, dw) in increments.iter().enumerate() {
        let next = y[k] + alpha.at(k, &y) * dw + beta.at(k, &y) * h + (g.g[k + 1] - g.g[k]);
        y.push(next);
    }
    Ok(y)
}

/// `Y^{j+1} = G + Σ α(Y^j) ΔW + Σ β(Y^j) h` from `Y⁰ = G`, until the sup-node
/// change is at most `tol`. Returns the solution and the number of sweeps.
pub fn solve_picard(
    alpha: &LinearOperatorSpec,
    beta: &LinearOperatorSpec,
    g: &ForcingPath,
    increments: &[f64],
    h: f64,
    max_iter: usize,
    tol: f64,
) -> Result<(Vec<f64>, usize)> {
    check_shapes(alpha, beta, g, increments)?;
    let mut y = g.g.clone();
    let mut next = vec![0.0; y.len()];
    let mut change = f64::INFINITY;
    for it in 1..=max_iter {
        next[0] = g.g[0];
        for (k, dw) in increments.iter().enumerate() {
            next[k + 1] = next[k] + alpha.at(k, &y) * dw + beta.at(k, &y) * h + (g.g[k + 1] - g.g[k]);
        }
        change = y.iter().zip(&next).fold(0.0, |m, (a, b)| m.max((a - b).abs()));
        std::mem::swap(&mut y, &mut next);
        if change <= tol {
            return Ok((y, it));
        }
    }
    Err(Error::PicardNotConverged {
        iterations: max_iter,
        last_change: change,
    })
}

/// Outcome of [`verify_error_identity`] on one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// `max_j |Y_j − (X_j − X̄_j)|` over fine nodes.
    pub max_residual: f64,
    /// Same, restricted to coarse nodes.
    pub coarse_residual: f64,
    /// `1 + max |X|`.
    pub scale: f64,
    pub picard_iterations: usize,
    pub steps: usize,
    /// `max |Y_triangular − Y_picard|`.
    pub solver_gap: f64,
}

impl IdentityReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_residual < tol * self.scale && self.picard_iterations <= self.steps && self.solver_gap <= 1e-12
    }
}

/// Build `α`, `β`, `G` from the coupled pair on `path`, solve, and compare with `X − X̄`.
pub fn verify_error_identity(model: &DelayModel, path: &BrownianPath) -> Result<IdentityReport> {
    let pair = CoupledPair::simulate(model, path)?;
    let frozen = frozen_coefficients(model, &pair)?;
    let fg = *pair.fine_grid();
    let g = build_forcing(model, &pair, &frozen)?;
    let alpha = LinearOperatorSpec::delay_alpha(frozen.sigma1.clone(), &model.nu, &fg, ShiftRule::Rounded)?;
    let beta = LinearOperatorSpec::delay_beta(frozen.b1.clone(), &model.nu, &fg, ShiftRule::Rounded)?;
    let inc = &pair.fine_increments;
    let y = solve_triangular(&alpha, &beta, &g, inc, fg.h())?;
    let steps = fg.steps();
    let (yp, iterations) = solve_picard(&alpha, &beta, &g, inc, fg.h(), steps + 1, 0.0)?;
    let diff = pair.difference();
    let mut max_residual: f64 = 0.0;
    let mut coarse_residual: f64 = 0.0;
    for (j, (a, b)) in y.iter().zip(&diff).enumerate() {
        let r = (a - b).abs();
        max_residual = max_residual.max(r);
        if j % pair.kappa == 0 {
            coarse_residual = coarse_residual.max(r);
        }
    }
    let solver_gap = y.iter().zip(&yp).fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
    Ok(IdentityReport {
        max_residual,
        coarse_residual,
        scale: 1.0 + pair.fine.sup_abs(),
        picard_iterations: iterations,
        steps,
        solver_gap,
    })
}
