//! Weak-error estimation: paired Monte Carlo against a reference, rate fits,
//! Richardson extrapolation and the first-order constant.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::euler::terminal_value;
use crate::grid::{make_grid, DelayGrid};
use crate::mc;
use crate::models::{DelayModel, ExactSolution, TestFunction};
use crate::paths::BrownianPath;
use crate::stats::{fit_log_log, Estimate, LineFit, RatePoint};

/// What stands in for `X_T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    /// Exact solution when the model has one, else fine Euler.
    Auto,
    /// Euler on the finest ladder mesh refined by `kappa_ref`.
    Fine,
    /// `2 f(X^{2m}) − f(X^m)` with `m` the fine reference mesh.
    Extrapolated,
    /// Closed-form solution driven by the same Brownian path.
    Exact,
}

/// Payoff evaluation at several meshes on one Brownian path per sample.
#[derive(Debug, Clone)]
struct Ladder {
    levels: Vec<usize>,
    base: DelayGrid,
    refinement: usize,
    reference: Resolved,
    horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Resolved {
    Exact(ExactSolution),
    Fine(usize),
    Extrapolated(usize),
}

impl Ladder {
    fn new(model: &DelayModel, horizon: f64, levels: &[usize], kappa_ref: usize, kind: ReferenceKind) -> Result<Self> {
        let mut levels = levels.to_vec();
        levels.sort_unstable();
        levels.dedup();
        if levels.is_empty() || levels[0] == 0 {
            return Err(invalid("n_ladder", "needs positive mesh parameters"));
        }
        if kappa_ref == 0 {
            return Err(invalid("kappa_ref", "must be positive"));
        }
        let lo = levels[0];
        let hi = *levels.last().expect("nonempty");
        for &n in &levels {
            if n % lo != 0 || hi % n != 0 {
                return Err(invalid("n_ladder", "every level must divide the finest and be a multiple of the coarsest"));
            }
        }
        let reference = match (kind, model.exact) {
            (ReferenceKind::Auto, Some(e)) | (ReferenceKind::Exact, Some(e)) => Resolved::Exact(e),
            (ReferenceKind::Exact, None) => {
                return Err(invalid("reference", format!("model `{}` has no exact solution", model.name)))
            }
            (ReferenceKind::Auto, None) | (ReferenceKind::Fine, _) => Resolved::Fine(hi * kappa_ref),
            (ReferenceKind::Extrapolated, _) => Resolved::Extrapolated(hi * kappa_ref),
        };
        let finest = match reference {
            Resolved::Exact(_) => hi,
            Resolved::Fine(m) => m,
            Resolved::Extrapolated(m) => 2 * m,
        };
        let base = make_grid(model.r, lo, horizon)?;
        for &n in &levels {
            make_grid(model.r, n, horizon)?;
        }
        Ok(Self {
            levels,
            base,
            refinement: finest / lo,
            reference,
            horizon,
        })
    }

    fn grid(&self, model: &DelayModel, n: usize) -> Result<DelayGrid> {
        make_grid(model.r, n, self.horizon)
    }

    fn level_index(&self, n: usize) -> usize {
        self.levels.iter().position(|&m| m == n).expect("level present")
    }

    fn path(&self, seed: u64, p: u64) -> Result<BrownianPath> {
        BrownianPath::sample(&self.base, self.refinement, seed, p)
    }

    /// `f` at the reference, and at every level.
    fn evaluate(&self, model: &DelayModel, f: &TestFunction, path: &BrownianPath, out: &mut [f64]) -> Result<()> {
        out[0] = match self.reference {
            Resolved::Exact(e) => f.eval(e.terminal(model.x0(), path.terminal(), self.horizon)),
            Resolved::Fine(m) => f.eval(terminal_value(model, path, &self.grid(model, m)?)?),
            Resolved::Extrapolated(m) => {
                let a = f.eval(terminal_value(model, path, &self.grid(model, m)?)?);
                let b = f.eval(terminal_value(model, path, &self.grid(model, 2 * m)?)?);
                2.0 * b - a
            }
        };
        for (i, &n) in self.levels.iter().enumerate() {
            out[1 + i] = f.eval(terminal_value(model, path, &self.grid(model, n)?)?);
        }
        Ok(())
    }

    fn describe(&self) -> String {
        match self.reference {
            Resolved::Exact(_) => "exact".into(),
            Resolved::Fine(m) => format!("fine Euler, n = {m}"),
            Resolved::Extrapolated(m) => format!("extrapolated Euler, n = {m} and {}", 2 * m),
        }
    }
}

fn check_paths(paths: u64) -> Result<()> {
    if paths < 2 {
        return Err(invalid("paths", "need at least 2 paths"));
    }
    Ok(())
}

/// Paired estimate of `E f(X_T) − E f(X̄_T)` at mesh parameter `n`.
pub fn estimate_weak_error(
    model: &DelayModel,
    horizon: f64,
    f: &TestFunction,
    n: usize,
    kappa_ref: usize,
    paths: u64,
    seed: u64,
) -> Result<Estimate> {
    check_paths(paths)?;
    let ladder = Ladder::new(model, horizon, &[n], kappa_ref, ReferenceKind::Auto)?;
    let m = mc::moments(paths, 1, |p, out| {
        let path = ladder.path(seed, p)?;
        let mut v = [0.0; 2];
        ladder.evaluate(model, f, &path, &mut v)?;
        out[0] = v[0] - v[1];
        Ok(())
    })?;
    Ok(m[0].into())
}

/// Extrapolated error `E f(X_T) − [2 E f(X̄^{2n}_T) − E f(X̄^n_T)]`, all on one path.
pub fn richardson(
    model: &DelayModel,
    horizon: f64,
    f: &TestFunction,
    n: usize,
    kappa_ref: usize,
    paths: u64,
    seed: u64,
) -> Result<Estimate> {
    check_paths(paths)?;
    let ladder = Ladder::new(model, horizon, &[n, 2 * n], kappa_ref, ReferenceKind::Auto)?;
    let m = mc::moments(paths, 1, |p, out| {
        let path = ladder.path(seed, p)?;
        let mut v = [0.0; 3];
        ladder.evaluate(model, f, &path, &mut v)?;
        out[0] = v[0] - (2.0 * v[2] - v[1]);
        Ok(())
    })?;
    Ok(m[0].into())
}

/// Settings shared by the ladder studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub horizon: f64,
    pub n_ladder: Vec<usize>,
    pub kappa_ref: usize,
    pub paths: u64,
    pub seed: u64,
    pub reference: ReferenceKind,
    /// Paths for the reference-bias pilot; `None` skips it.
    pub pilot_paths: Option<u64>,
}

impl StudyConfig {
    pub fn new(horizon: f64, n_ladder: Vec<usize>, kappa_ref: usize, paths: u64, seed: u64) -> Self {
        Self {
            horizon,
            n_ladder,
            kappa_ref,
            paths,
            seed,
            reference: ReferenceKind::Auto,
            pilot_paths: None,
        }
    }

    pub fn with_reference(mut self, reference: ReferenceKind) -> Self {
        self.reference = reference;
        self
    }

    pub fn with_pilot(mut self, paths: u64) -> Self {
        self.pilot_paths = Some(paths);
        self
    }
}

/// One rung of a ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderPoint {
    pub n: usize,
    pub h: f64,
    pub error: f64,
    pub stderr: f64,
    pub paths: u64,
    pub excluded: bool,
    /// `var(f(X) − f(X̄)) / var(f(X))`; zero for analytic ladders.
    pub variance_ratio: f64,
}

/// A ladder with its log-log fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakErrorReport {
    pub ladder: Vec<LadderPoint>,
    pub slope: Option<f64>,
    pub slope_ci: Option<(f64, f64)>,
    pub slope_stderr: Option<f64>,
    pub intercept: Option<f64>,
    /// `n` of every point left out of the fit.
    pub excluded_points: Vec<usize>,
    pub inconclusive: bool,
    pub reference: String,
}

/// Exclude zero errors and points with `|error| < 3·stderr`, then fit. Fewer than
/// three usable points leaves the report inconclusive.
pub fn fit_ladder(mut ladder: Vec<LadderPoint>, reference: impl Into<String>) -> WeakErrorReport {
    ladder.sort_by(|a, b| b.h.total_cmp(&a.h));
    for p in &mut ladder {
        p.excluded = p.error == 0.0 || !p.error.is_finite() || p.error.abs() < 3.0 * p.stderr;
    }
    let excluded_points = ladder.iter().filter(|p| p.excluded).map(|p| p.n).collect();
    let usable: Vec<RatePoint> = ladder
        .iter()
        .filter(|p| !p.excluded)
        .map(|p| RatePoint {
            h: p.h,
            error: p.error,
            stderr: p.stderr,
        })
        .collect();
    let fit: Option<LineFit> = if usable.len() >= 3 { fit_log_log(&usable) } else { None };
    WeakErrorReport {
        ladder,
        inconclusive: fit.is_none(),
        slope: fit.as_ref().map(|f| f.slope),
        slope_ci: fit.as_ref().map(|f| f.slope_ci),
        slope_stderr: fit.as_ref().map(|f| f.slope_stderr),
        intercept: fit.as_ref().map(|f| f.intercept),
        excluded_points,
        reference: reference.into(),
    }
}

/// Reference-bias pilot: the reference at `kappa_ref` against `2·kappa_ref`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasCheck {
    /// Estimated bias of the reference at `kappa_ref`.
    pub bias: Estimate,
    /// Half the smallest stderr of the study.
    pub allowance: f64,
    pub passed: bool,
    pub suggested_kappa: usize,
}

impl BiasCheck {
    pub fn into_result(self) -> Result<Self> {
        if self.passed {
            Ok(self)
        } else {
            Err(Error::ReferenceBias {
                bias: self.bias.value,
                stderr: 2.0 * self.allowance,
                suggested_kappa: self.suggested_kappa,
            })
        }
    }
}

fn derived_seed(seed: u64, salt: u64) -> u64 {
    seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// The reference at `n_max·kappa_ref` and at twice that, on a separate stream.
/// With reference order `q` (1 for fine Euler, 2 extrapolated) the bias
/// `E f(X_T) − E f(X_ref)` is `2^q/(2^q − 1)` times the mean of `f(X_2ref) − f(X_ref)`. Passes unless the bias exceeds
/// `target_stderr / 2` by more than two of its own standard errors.
pub fn pilot_bias_check(
    model: &DelayModel,
    f: &TestFunction,
    cfg: &StudyConfig,
    target_stderr: f64,
) -> Result<BiasCheck> {
    let paths = cfg.pilot_paths.unwrap_or(cfg.paths / 10).max(2);
    let hi = *cfg.n_ladder.iter().max().ok_or_else(|| invalid("n_ladder", "empty"))?;
    let kind = cfg.reference;
    let a = Ladder::new(model, cfg.horizon, &[hi], cfg.kappa_ref, kind)?;
    let b = Ladder::new(model, cfg.horizon, &[hi], 2 * cfg.kappa_ref, kind)?;
    let order = match a.reference {
        Resolved::Exact(_) => {
            return Ok(BiasCheck {
                bias: Estimate::new(0.0, 0.0),
                allowance: target_stderr / 2.0,
                passed: true,
                suggested_kappa: cfg.kappa_ref,
            })
        }
        Resolved::Fine(_) => 1,
        Resolved::Extrapolated(_) => 2,
    };
    let seed = derived_seed(cfg.seed, 1);
    let m = mc::moments(paths, 1, |p, out| {
        let path = b.path(seed, p)?;
        let mut va = [0.0; 2];
        let mut vb = [0.0; 2];
        a.evaluate(model, f, &path, &mut va)?;
        b.evaluate(model, f, &path, &mut vb)?;
        out[0] = vb[0] - va[0];
        Ok(())
    })?;
    let scale = f64::from(1 << order) / f64::from((1 << order) - 1);
    let bias = Estimate::new(scale * m[0].mean, scale * m[0].stderr());
    let allowance = target_stderr / 2.0;
    let passed = bias.value.abs() - 2.0 * bias.stderr <= allowance;
    let mut suggested = cfg.kappa_ref;
    if !passed {
        let excess = bias.value.abs() / allowance.max(f64::MIN_POSITIVE);
        suggested = cfg.kappa_ref * (excess.powf(1.0 / order as f64).ceil() as usize).next_power_of_two();
    }
    Ok(BiasCheck {
        bias,
        allowance,
        passed,
        suggested_kappa: suggested,
    })
}

fn ladder_columns(
    model: &DelayModel,
    f: &TestFunction,
    cfg: &StudyConfig,
    levels: &[usize],
) -> Result<(Ladder, Vec<crate::stats::Moments>)> {
    check_paths(cfg.paths)?;
    let ladder = Ladder::new(model, cfg.horizon, levels, cfg.kappa_ref, cfg.reference)?;
    let l = ladder.levels.len();
    let m = mc::moments(cfg.paths, 1 + 2 * l, |p, out| {
        let path = ladder.path(cfg.seed, p)?;
        let mut v = vec![0.0; 1 + l];
        ladder.evaluate(model, f, &path, &mut v)?;
        out[0] = v[0];
        for i in 0..l {
            out[1 + i] = v[0] - v[1 + i];
            // Richardson against the next level when it is exactly twice as fine.
            out[1 + l + i] = match ladder.levels.get(i + 1) {
                Some(&n2) if n2 == 2 * ladder.levels[i] => v[0] - (2.0 * v[2 + i] - v[1 + i]),
                _ => f64::NAN,
            };
        }
        Ok(())
    })?;
    Ok((ladder, m))
}

fn point(model: &DelayModel, ladder: &Ladder, n: usize, m: &crate::stats::Moments, reference_var: f64, paths: u64) -> Result<LadderPoint> {
    Ok(LadderPoint {
        n,
        h: ladder.grid(model, n)?.h(),
        error: m.mean,
        stderr: m.stderr(),
        paths,
        excluded: false,
        variance_ratio: if reference_var > 0.0 { m.variance() / reference_var } else { 0.0 },
    })
}

fn run_pilot(model: &DelayModel, f: &TestFunction, cfg: &StudyConfig, report: &WeakErrorReport) -> Result<()> {
    if cfg.pilot_paths.is_none() {
        return Ok(());
    }
    let target = report
        .ladder
        .iter()
        .filter(|p| !p.excluded)
        .map(|p| p.stderr)
        .fold(f64::INFINITY, f64::min);
    if target.is_finite() && target > 0.0 {
        pilot_bias_check(model, f, cfg, target)?.into_result()?;
    }
    Ok(())
}

/// Paired errors at every ladder level with a shared reference, and the rate fit.
pub fn convergence_study(model: &DelayModel, f: &TestFunction, cfg: &StudyConfig) -> Result<WeakErrorReport> {
    if cfg.n_ladder.len() < 3 {
        return Err(invalid("n_ladder", "need at least 3 levels"));
    }
    let (ladder, m) = ladder_columns(model, f, cfg, &cfg.n_ladder)?;
    let rv = m[0].variance();
    let pts = ladder
        .levels
        .iter()
        .enumerate()
        .map(|(i, &n)| point(model, &ladder, n, &m[1 + i], rv, cfg.paths))
        .collect::<Result<Vec<_>>>()?;
    let report = fit_ladder(pts, ladder.describe());
    run_pilot(model, f, cfg, &report)?;
    Ok(report)
}

/// Plain and extrapolated ladders from the same paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RichardsonReport {
    pub plain: WeakErrorReport,
    pub extrapolated: WeakErrorReport,
    /// Extrapolated slope minus plain slope.
    pub gain: Option<f64>,
}

/// Richardson study: levels `n` and `2n` for every `n` in the ladder.
pub fn richardson_study(model: &DelayModel, f: &TestFunction, cfg: &StudyConfig) -> Result<RichardsonReport> {
    if cfg.n_ladder.len() < 3 {
        return Err(invalid("n_ladder", "need at least 3 levels"));
    }
    let mut levels: Vec<usize> = cfg.n_ladder.iter().flat_map(|&n| [n, 2 * n]).collect();
    levels.sort_unstable();
    levels.dedup();
    let (ladder, m) = ladder_columns(model, f, cfg, &levels)?;
    let l = ladder.levels.len();
    let rv = m[0].variance();
    let mut plain = Vec::new();
    let mut extra = Vec::new();
    for &n in &cfg.n_ladder {
        let i = ladder.level_index(n);
        plain.push(point(model, &ladder, n, &m[1 + i], rv, cfg.paths)?);
        extra.push(point(model, &ladder, n, &m[1 + l + i], rv, cfg.paths)?);
    }
    let plain = fit_ladder(plain, ladder.describe());
    let extrapolated = fit_ladder(extra, ladder.describe());
    run_pilot(model, f, cfg, &plain)?;
    let gain = match (plain.slope, extrapolated.slope) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };
    Ok(RichardsonReport {
        plain,
        extrapolated,
        gain,
    })
}

/// `Ĉ(h) = error(h)/h` along a ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionEstimate {
    /// `(h, Ĉ(h), stderr)` in order of decreasing `h`.
    pub c_hat: Vec<(f64, f64, f64)>,
    /// `2 Ĉ(h_min) − Ĉ(2 h_min)` when the two finest points are a halving, else `Ĉ(h_min)`.
    pub limit_estimate: f64,
    /// `|Ĉ(h) − Ĉ(h/2)|` for consecutive points.
    pub differences: Vec<f64>,
    /// Some difference grew by more than two combined standard errors.
    pub flagged: bool,
}

/// Build the estimate from `(n, h, error, stderr)` points.
pub fn expansion_from_ladder(points: &[LadderPoint]) -> ExpansionEstimate {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| b.h.total_cmp(&a.h));
    let c_hat: Vec<(f64, f64, f64)> = pts.iter().map(|p| (p.h, p.error / p.h, p.stderr / p.h)).collect();
    let mut differences = Vec::new();
    let mut diff_se = Vec::new();
    for w in c_hat.windows(2) {
        differences.push((w[0].1 - w[1].1).abs());
        diff_se.push((w[0].2 * w[0].2 + w[1].2 * w[1].2).sqrt());
    }
    let flagged = differences
        .windows(2)
        .zip(diff_se.windows(2))
        .any(|(d, s)| d[1] > d[0] + 2.0 * (s[0] * s[0] + s[1] * s[1]).sqrt());
    let limit_estimate = match c_hat.len() {
        0 => f64::NAN,
        1 => c_hat[0].1,
        k => {
            let (a, b) = (c_hat[k - 2], c_hat[k - 1]);
            if (a.0 / b.0 - 2.0).abs() < 1e-9 {
                2.0 * b.1 - a.1
            } else {
                b.1
            }
        }
    };
    ExpansionEstimate {
        c_hat,
        limit_estimate,
        differences,
        flagged,
    }
}

/// MC ladder, then `Ĉ(h) = error/h`.
pub fn expansion_constant(model: &DelayModel, f: &TestFunction, cfg: &StudyConfig) -> Result<(WeakErrorReport, ExpansionEstimate)> {
    let report = convergence_study(model, f, cfg)?;
    let est = expansion_from_ladder(&report.ladder);
    Ok((report, est))
}

/// `Ĉ` sequences for a grid-aligned and a misaligned model side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub aligned: ExpansionEstimate,
    pub misaligned: ExpansionEstimate,
    /// `max Ĉ − min Ĉ` over each ladder.
    pub aligned_oscillation: f64,
    pub misaligned_oscillation: f64,
    /// `max |Ĉ|` over each ladder.
    pub aligned_bound: f64,
    pub misaligned_bound: f64,
}

fn spread(e: &ExpansionEstimate) -> (f64, f64) {
    let (lo, hi, mx) = e.c_hat.iter().fold((f64::INFINITY, f64::NEG_INFINITY, 0.0_f64), |(lo, hi, mx), c| {
        (lo.min(c.1), hi.max(c.1), mx.max(c.1.abs()))
    });
    (hi - lo, mx)
}

pub fn alignment_experiment(
    aligned: &DelayModel,
    misaligned: &DelayModel,
    f: &TestFunction,
    cfg: &StudyConfig,
) -> Result<AlignmentReport> {
    let (_, a) = expansion_constant(aligned, f, cfg)?;
    let (_, m) = expansion_constant(misaligned, f, cfg)?;
    let (ao, ab) = spread(&a);
    let (mo, mb) = spread(&m);
    Ok(AlignmentReport {
        aligned: a,
        misaligned: m,
        aligned_oscillation: ao,
        misaligned_oscillation: mo,
        aligned_bound: ab,
        misaligned_bound: mb,
    })
}

/// Closed-form weak error when the model and payoff allow it:
/// geometric model with `f(x) = x²` (`x0²(e^{σ0²T} − (1 + σ0²h)^N)`) or `f(x) = x` (0),
/// and constant-coefficient models (0 for any `f`).
pub fn analytic_weak_error(model: &DelayModel, horizon: f64, f: &TestFunction, n: usize) -> Result<Option<f64>> {
    let grid = make_grid(model.r, n, horizon)?;
    let steps = grid.steps() as i32;
    Ok(match (model.exact, f.name().as_str()) {
        (Some(ExactSolution::Arithmetic { .. }), _) => Some(0.0),
        (Some(ExactSolution::Geometric { .. }), "identity") => Some(0.0),
        (Some(ExactSolution::Geometric { sigma0 }), "square") => {
            let x0 = model.x0();
            let s2 = sigma0 * sigma0;
            Some(x0 * x0 * ((s2 * horizon).exp() - (1.0 + s2 * grid.h()).powi(steps)))
        }
        _ => None,
    })
}

/// Closed-form extrapolated error, where [`analytic_weak_error`] applies.
pub fn analytic_richardson_error(model: &DelayModel, horizon: f64, f: &TestFunction, n: usize) -> Result<Option<f64>> {
    let e1 = analytic_weak_error(model, horizon, f, n)?;
    let e2 = analytic_weak_error(model, horizon, f, 2 * n)?;
    Ok(match (e1, e2) {
        (Some(a), Some(b)) => Some(2.0 * b - a),
        _ => None,
    })
}

/// The fit pipeline on closed-form errors (standard errors zero).
pub fn analytic_study(model: &DelayModel, horizon: f64, f: &TestFunction, n_ladder: &[usize]) -> Result<WeakErrorReport> {
    let mut pts = Vec::new();
    for &n in n_ladder {
        let e = analytic_weak_error(model, horizon, f, n)?
            .ok_or_else(|| invalid("f", "no closed-form weak error for this model and payoff"))?;
        pts.push(LadderPoint {
            n,
            h: make_grid(model.r, n, horizon)?.h(),
            error: e,
            stderr: 0.0,
            paths: 0,
            excluded: false,
            variance_ratio: 0.0,
        });
    }
    Ok(fit_ladder(pts, "closed form"))
}
