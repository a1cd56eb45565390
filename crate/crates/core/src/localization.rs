//! Localization of the Malliavin covariance and the indicator-payoff rate study.
//!
//! `D_u X_T` is taken from the fine scheme, one value per fine cell. `D_u X̄_T`
//! is the derivative in the coarse increment containing `u`, repeated over the
//! fine cells of that coarse cell.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::euler::{terminal_value, CoupledPair};
use crate::grid::make_grid;
use crate::malliavin::terminal_gradient;
use crate::mc;
use crate::models::{DelayModel, TestFunction};
use crate::paths::BrownianPath;
use crate::stats::{fit_log_log, RatePoint};
use crate::weak_error::{convergence_study, StudyConfig, WeakErrorReport};

/// Smooth non-increasing cutoff, 1 below `lower` and 0 above `upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothCutoff {
    pub lower: f64,
    pub upper: f64,
}

fn bump(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

impl SmoothCutoff {
    /// `ρ((x − l)/(u − l))` with `ρ(t) = q(1 − t)/(q(t) + q(1 − t))`, `q(t) = e^{−1/t}`.
    pub fn eval(&self, x: f64) -> f64 {
        let t = (x - self.lower) / (self.upper - self.lower);
        if t <= 0.0 {
            1.0
        } else if t >= 1.0 {
            0.0
        } else {
            let a = bump(1.0 - t);
            a / (bump(t) + a)
        }
    }
}

impl Default for SmoothCutoff {
    fn default() -> Self {
        smooth_cutoff()
    }
}

/// The cutoff on `[1/8, 1/4]`.
pub fn smooth_cutoff() -> SmoothCutoff {
    SmoothCutoff {
        lower: 0.125,
        upper: 0.25,
    }
}

/// `ψ = cutoff(discrepancy / γ_X)` on one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSample {
    pub psi_value: f64,
    /// `∫ (D_u X_T)² du`.
    pub gamma_x: f64,
    /// `∫ (D_u X_T − D_u X̄_T)² du`.
    pub discrepancy: f64,
    /// Smallest `γ` of `a X_T + (1 − a) X̄_T` over `a ∈ {0, ¼, ½, ¾, 1}`.
    pub gamma_min_grid: f64,
    /// Same over all `a ∈ [0, 1]`.
    pub gamma_min_exact: f64,
}

impl LocalizationSample {
    /// Where `ψ ≠ 0`, the covariance of every convex combination is at least `γ_X/4`.
    pub fn inclusion_holds(&self, slack: f64) -> bool {
        self.psi_value == 0.0
            || (self.gamma_min_grid >= self.gamma_x / 4.0 - slack && self.gamma_min_exact >= self.gamma_x / 4.0 - slack)
    }
}

/// The five-point `a` grid of the inclusion check.
pub const A_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Covariances from terminal gradients on the fine cells (`fine`, length `N_f`)
/// and coarse cells (`coarse`, length `N_f / kappa`).
pub fn psi_from_gradients(fine: &[f64], coarse: &[f64], delta: f64, kappa: usize, path: u64) -> Result<LocalizationSample> {
    if kappa == 0 || fine.len() != coarse.len() * kappa {
        return Err(invalid("gradients", "fine length must be kappa times coarse length"));
    }
    // γ(a) = δ Σ (v + a u)² with u = D X − D X̄, v = D X̄.
    let (mut uu, mut uv, mut vv) = (0.0, 0.0, 0.0);
    for (j, df) in fine.iter().enumerate() {
        let v = coarse[j / kappa];
        let u = df - v;
        uu += u * u;
        uv += u * v;
        vv += v * v;
    }
    let gamma = |a: f64| delta * (vv + 2.0 * a * uv + a * a * uu);
    let gamma_x = gamma(1.0);
    let discrepancy = delta * uu;
    if gamma_x.is_nan() || gamma_x < 1e-14 {
        return Err(Error::DegenerateCovariance { gamma: gamma_x, path });
    }
    let gamma_min_grid = A_GRID.iter().map(|&a| gamma(a)).fold(f64::INFINITY, f64::min);
    let a_star = if uu > 0.0 { (-uv / uu).clamp(0.0, 1.0) } else { 0.0 };
    let gamma_min_exact = gamma(a_star).min(gamma(0.0)).min(gamma(1.0));
    Ok(LocalizationSample {
        psi_value: smooth_cutoff().eval(discrepancy / gamma_x),
        gamma_x,
        discrepancy,
        gamma_min_grid,
        gamma_min_exact,
    })
}

/// `ψ` on one coupled path; `path` carries the coarse grid and refinement.
pub fn psi_sample(model: &DelayModel, path: &BrownianPath) -> Result<LocalizationSample> {
    let pair = CoupledPair::simulate(model, path)?;
    let fine = terminal_gradient(model, &pair.fine, path)?;
    let coarse = terminal_gradient(model, &pair.coarse, path)?;
    psi_from_gradients(&fine, &coarse, pair.fine_grid().h(), pair.kappa, path.path_index())
}

/// Empirical `P(ψ ≠ 1)` at one mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiPoint {
    pub n: usize,
    pub h: f64,
    pub fraction: f64,
    pub stderr: f64,
    pub mean_psi: f64,
    /// Paths where the inclusion check failed.
    pub inclusion_failures: u64,
    /// 1% quantile of `γ_X` over the paths.
    pub gamma_q01: f64,
    pub gamma_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiDecayReport {
    pub points: Vec<PsiPoint>,
    pub paths: u64,
    /// `10 / M`.
    pub resolution_floor: f64,
    pub non_increasing: bool,
    /// Log-log slope of the fraction against `h` over the resolvable points.
    pub slope: Option<f64>,
    pub resolvable: usize,
    /// Every fraction is below the resolution floor.
    pub faster_than_resolvable: bool,
    pub inclusion_failures: u64,
    pub passed: bool,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

/// `P(ψ ≠ 1)` for each `n` with refinement `kappa`.
pub fn psi_decay_study(
    model: &DelayModel,
    horizon: f64,
    n_ladder: &[usize],
    kappa: usize,
    paths: u64,
    seed: u64,
) -> Result<PsiDecayReport> {
    if paths < 2 {
        return Err(invalid("paths", "need at least 2 paths"));
    }
    let mut ladder = n_ladder.to_vec();
    ladder.sort_unstable();
    ladder.dedup();
    let mut points = Vec::new();
    for &n in &ladder {
        let grid = make_grid(model.r, n, horizon)?;
        let cols = mc::collect(paths, 4, |p, out| {
            let path = BrownianPath::sample(&grid, kappa, seed, p)?;
            let s = psi_sample(model, &path)?;
            out[0] = if s.psi_value < 1.0 { 1.0 } else { 0.0 };
            out[1] = s.psi_value;
            out[2] = if s.inclusion_holds(1e-12) { 0.0 } else { 1.0 };
            out[3] = s.gamma_x;
            Ok(())
        })?;
        let frac = crate::stats::Moments::from_slice(&cols[0]);
        let psi = crate::stats::Moments::from_slice(&cols[1]);
        let failures = cols[2].iter().filter(|&&v| v > 0.0).count() as u64;
        let mut gamma = cols[3].clone();
        gamma.sort_by(f64::total_cmp);
        points.push(PsiPoint {
            n,
            h: grid.h(),
            fraction: frac.mean,
            stderr: frac.stderr(),
            mean_psi: psi.mean,
            inclusion_failures: failures,
            gamma_q01: quantile(&gamma, 0.01),
            gamma_median: quantile(&gamma, 0.5),
        });
    }
    let floor = 10.0 / paths as f64;
    let non_increasing = points.windows(2).all(|w| w[1].fraction <= w[0].fraction);
    let usable: Vec<RatePoint> = points
        .iter()
        .filter(|p| p.fraction > floor)
        .map(|p| RatePoint {
            h: p.h,
            error: p.fraction,
            stderr: p.stderr,
        })
        .collect();
    let resolvable = usable.len();
    let slope = if resolvable >= 2 { fit_log_log(&usable).map(|f| f.slope) } else { None };
    let inclusion_failures = points.iter().map(|p| p.inclusion_failures).sum();
    let faster_than_resolvable = resolvable == 0;
    let passed = non_increasing && inclusion_failures == 0 && slope.map_or(true, |s| s > 1.0);
    Ok(PsiDecayReport {
        points,
        paths,
        resolution_floor: floor,
        non_increasing,
        slope,
        resolvable,
        faster_than_resolvable,
        inclusion_failures,
        passed,
    })
}

/// Median of `X_T` from the reference scheme on a separate stream.
pub fn median_terminal(model: &DelayModel, horizon: f64, n: usize, paths: u64, seed: u64) -> Result<f64> {
    let grid = make_grid(model.r, n, horizon)?;
    let cols = mc::collect(paths, 1, |p, out| {
        let path = BrownianPath::sample(&grid, 1, seed, p)?;
        out[0] = terminal_value(model, &path, &grid)?;
        Ok(())
    })?;
    let mut v = cols.into_iter().next().unwrap_or_default();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m == 0 {
        return Err(invalid("paths", "need at least one path"));
    }
    Ok(if m % 2 == 1 { v[m / 2] } else { 0.5 * (v[m / 2 - 1] + v[m / 2]) })
}

/// Indicator-payoff ladder and the threshold used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrregularRateReport {
    pub threshold: f64,
    pub report: WeakErrorReport,
}

/// Convergence study for `1{X_T > K}`. Without a threshold, `K` is the median of
/// the reference `X_T` over `min(M, 10⁵)` paths with a seed derived from `cfg.seed`.
pub fn irregular_rate_study(model: &DelayModel, threshold: Option<f64>, cfg: &StudyConfig) -> Result<IrregularRateReport> {
    let k = match threshold {
        Some(k) => k,
        None => {
            let hi = *cfg.n_ladder.iter().max().ok_or_else(|| invalid("n_ladder", "empty"))?;
            let seed = cfg.seed ^ 0xA5A5_A5A5_5A5A_5A5A;
            median_terminal(model, cfg.horizon, hi * cfg.kappa_ref, cfg.paths.min(100_000), seed)?
        }
    };
    let report = convergence_study(model, &TestFunction::indicator(k), cfg)?;
    Ok(IrregularRateReport { threshold: k, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::malliavin::first_variation_diffusion;
    use crate::models::{catalog_model, Params};

    #[test]
    fn cutoff_values() {
        let c = smooth_cutoff();
        assert_eq!(c.eval(0.1), 1.0);
        assert_eq!(c.eval(0.3), 0.0);
        assert!((c.eval(3.0 / 16.0) - 0.5).abs() < 1e-15);
        let mut prev = 1.0;
        for i in 0..=4000 {
            let x = i as f64 * 1e-4;
            let v = c.eval(x);
            let lo = if x <= 0.125 { 1.0 } else { 0.0 };
            let hi = if x < 0.25 { 1.0 } else { 0.0 };
            assert!(lo <= v && v <= hi, "{x} {v}");
            assert!(v <= prev);
            assert!((prev - v).abs() < 0.01, "jump at {x}");
            prev = v;
        }
    }

    /// `γ(a)` is a convex quadratic in `a`. Whenever `ψ ≠ 0`, `‖D X − D X̄‖² < γ_X/4`,
    /// so `‖a D X + (1 − a) D X̄‖ ≥ ‖D X‖ − (1 − a)‖D X − D X̄‖ ≥ ‖D X‖/2` for all `a`.
    /// The sample reports both the five-point minimum and the exact vertex minimum.
    #[test]
    fn inclusion_on_paths() {
        let model = catalog_model("bounded", &Params::new()).unwrap().model;
        let g = make_grid(1.0, 4, 1.0).unwrap();
        let mut nonunit = 0;
        for p in 0..2000 {
            let path = BrownianPath::sample(&g, 8, 3, p).unwrap();
            let s = psi_sample(&model, &path).unwrap();
            assert!(s.inclusion_holds(1e-12), "{s:?}");
            assert!(s.gamma_min_exact <= s.gamma_min_grid + 1e-15);
            if s.psi_value < 1.0 {
                nonunit += 1;
            }
        }
        assert!(nonunit < 2000);
    }

    #[test]
    fn identical_schemes_give_unit_psi() {
        let model = catalog_model("bounded", &Params::new()).unwrap().model;
        let g = make_grid(1.0, 8, 1.0).unwrap();
        let path = BrownianPath::sample(&g, 1, 3, 0).unwrap();
        let s = psi_sample(&model, &path).unwrap();
        assert_eq!(s.discrepancy, 0.0);
        assert_eq!(s.psi_value, 1.0);
        let c = catalog_model("constant", &Params::new()).unwrap().model;
        let path = BrownianPath::sample(&g, 8, 3, 0).unwrap();
        let s = psi_sample(&c, &path).unwrap();
        assert_eq!(s.discrepancy, 0.0);
        assert_eq!(s.psi_value, 1.0);
    }

    #[test]
    fn gradients_match_tableau_rows() {
        let model = catalog_model("bounded", &Params::new()).unwrap().model;
        let g = make_grid(1.0, 4, 1.0).unwrap();
        let path = BrownianPath::sample(&g, 4, 1, 2).unwrap();
        let pair = CoupledPair::simulate(&model, &path).unwrap();
        let tab = first_variation_diffusion(&model.sigma, &model.b, &pair.fine, &path).unwrap();
        let adj = terminal_gradient(&model, &pair.fine, &path).unwrap();
        for (a, b) in tab.row(tab.steps()).iter().zip(&adj) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_covariance_is_reported() {
        let err = psi_from_gradients(&[0.0, 0.0], &[0.0], 0.5, 2, 7).unwrap_err();
        assert!(matches!(err, Error::DegenerateCovariance { path: 7, .. }));
    }

    #[test]
    fn psi_concentrates() {
        let model = catalog_model("bounded", &Params::new()).unwrap().model;
        let g = make_grid(1.0, 16, 1.0).unwrap();
        let m = mc::moments(10_000, 1, |p, out| {
            let path = BrownianPath::sample(&g, 32, 4, p)?;
            out[0] = psi_sample(&model, &path)?.psi_value;
            Ok(())
        })
        .unwrap();
        assert!(m[0].mean > 0.99, "{}", m[0].mean);
    }

    #[test]
    fn constant_model_decay_is_zero() {
        let model = catalog_model("constant", &Params::new()).unwrap().model;
        let r = psi_decay_study(&model, 1.0, &[2, 4, 8], 4, 500, 1).unwrap();
        assert!(r.points.iter().all(|p| p.fraction == 0.0));
        assert!(r.faster_than_resolvable && r.passed);
    }

    #[test]
    fn trivial_indicator_thresholds() {
        let model = catalog_model("bounded", &Params::new()).unwrap().model;
        let cfg = StudyConfig::new(1.0, vec![2, 4, 8], 4, 2000, 1);
        let r = irregular_rate_study(&model, Some(-100.0), &cfg).unwrap();
        assert!(r.report.inconclusive);
        assert!(r.report.ladder.iter().all(|p| p.error == 0.0));
        let c = catalog_model("constant", &Params::new()).unwrap().model;
        let r = irregular_rate_study(&c, None, &cfg).unwrap();
        assert!(r.report.ladder.iter().all(|p| p.error == 0.0 && p.stderr == 0.0));
    }

    #[test]
    fn median_of_symmetric_model() {
        let c = catalog_model("constant", &Params::new()).unwrap().model;
        let m = median_terminal(&c, 1.0, 8, 20_001, 3).unwrap();
        assert!(m.abs() < 0.02, "{m}");
    }
}
