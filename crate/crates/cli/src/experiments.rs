//! One runner per experiment. Each returns tables and checks; core errors
//! raised mid-run become a failed check rather than an abort.

use serde::Serialize;
use serde_json::{json, Value};
use weak_euler::{
    alignment_experiment, analytic_study, analytic_weak_error, closed_form_duality, closed_form_sides,
    convergence_study, estimate_theta_lsmc, estimate_weak_error, expansion_constant, expansion_from_ladder,
    irregular_rate_study, make_grid, mc, pilot_bias_check, psi_decay_study, richardson_study, section2_chain,
    smooth_cutoff, verify_error_identity, BrownianPath, ExpansionEstimate, LsmcConfig, ReferenceKind,
    StudyConfig, WeakErrorReport,
};

use crate::config::{Experiment, ExperimentConfig, Mode};
use crate::CliError;

/// CSV-ready table; cells are pre-formatted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

/// Shortest round-trip formatting.
pub fn num(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    pub limit: String,
    /// Advisory checks are reported but do not affect the verdict.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub advisory: bool,
}

impl Check {
    pub fn new(name: &str, passed: bool, value: Option<f64>, limit: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            value,
            limit: limit.into(),
            advisory: false,
        }
    }

    pub fn advisory(mut self) -> Self {
        self.advisory = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub results: Table,
    pub plot: Table,
    pub estimates: Value,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().filter(|c| !c.advisory).all(|c| c.passed)
    }

    fn aborted(message: String) -> Self {
        Outcome {
            results: Table::default(),
            plot: Table::default(),
            estimates: json!({ "error": message }),
            checks: vec![Check::new("completed", false, None, "run finishes without error")],
        }
    }
}

fn core(e: weak_euler::Error) -> CliError {
    CliError::Core(e)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let out = match cfg.experiment {
        Experiment::Convergence => convergence(cfg),
        Experiment::Richardson => richardson(cfg),
        Experiment::Expansion => expansion(cfg),
        Experiment::Alignment => alignment(cfg),
        Experiment::DualityClosed => duality_closed(cfg),
        Experiment::DualityLsmc => duality_lsmc(cfg),
        Experiment::Section2 => section2(cfg),
        Experiment::PsiDecay => psi_decay(cfg),
        Experiment::IrregularRate => irregular_rate(cfg),
        Experiment::ErrorIdentity => error_identity(cfg),
    };
    match out {
        Err(CliError::Core(e)) => Ok(Outcome::aborted(e.to_string())),
        other => other,
    }
}

fn study_config(cfg: &ExperimentConfig, horizon: f64) -> Result<StudyConfig, CliError> {
    let mut s = StudyConfig::new(horizon, cfg.n_ladder.clone(), cfg.kappa_ref()?, cfg.m()?, cfg.seed)
        .with_reference(cfg.reference.unwrap_or(ReferenceKind::Auto));
    // The pilot is run separately so that it reports instead of aborting.
    s.pilot_paths = None;
    Ok(s)
}

fn ladder_table(report: &WeakErrorReport) -> (Table, Table) {
    let mut results = Table::new(&["n", "h", "error", "stderr", "M", "excluded"]);
    let mut plot = Table::new(&["h", "abs_error", "stderr"]);
    for p in &report.ladder {
        results.push(vec![
            p.n.to_string(),
            num(p.h),
            num(p.error),
            num(p.stderr),
            p.paths.to_string(),
            p.excluded.to_string(),
        ]);
        plot.push(vec![num(p.h), num(p.error.abs()), num(p.stderr)]);
    }
    (results, plot)
}

fn slope_check(report: &WeakErrorReport, lo: f64, hi: f64) -> Check {
    let passed = report.slope.is_some_and(|s| (lo..=hi).contains(&s));
    Check::new("slope", passed, report.slope, format!("[{lo}, {hi}]"))
}

fn report_json(report: &WeakErrorReport) -> Value {
    json!({
        "slope": report.slope,
        "slope_ci": report.slope_ci,
        "slope_stderr": report.slope_stderr,
        "intercept": report.intercept,
        "excluded_points": report.excluded_points,
        "inconclusive": report.inconclusive,
        "reference": report.reference,
    })
}

fn pilot(
    cfg: &ExperimentConfig,
    model: &weak_euler::DelayModel,
    f: &weak_euler::TestFunction,
    study: &StudyConfig,
    report: &WeakErrorReport,
    estimates: &mut Value,
    checks: &mut Vec<Check>,
) -> Result<(), CliError> {
    let Some(paths) = cfg.pilot_paths else {
        return Ok(());
    };
    let target = report
        .ladder
        .iter()
        .filter(|p| !p.excluded)
        .map(|p| p.stderr)
        .fold(f64::INFINITY, f64::min);
    if !(target.is_finite() && target > 0.0) {
        return Ok(());
    }
    let b = pilot_bias_check(model, f, &study.clone().with_pilot(paths), target).map_err(core)?;
    estimates["reference_bias"] = serde_json::to_value(b).expect("serializable");
    checks.push(
        Check::new("reference_bias", b.passed, Some(b.bias.value), format!("|bias| - 2 se <= {}", b.allowance))
            .advisory(),
    );
    Ok(())
}

fn convergence(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let entry = cfg.model_entry()?;
    let f = cfg.function()?;
    let t = &cfg.thresholds;
    let (lo, hi) = (t.slope_min.unwrap_or(0.8), t.slope_max.unwrap_or(1.2));
    if cfg.mode == Mode::Analytic {
        let report = analytic_study(&entry.model, entry.horizon, &f, &cfg.n_ladder).map_err(core)?;
        let (mut results, plot) = ladder_table(&report);
        let mut checks = vec![slope_check(&report, lo, hi)];
        let mut estimates = report_json(&report);
        if let Some(m) = cfg.paths {
            let z = t.z.unwrap_or(4.0);
            results.header.extend(["mc_error", "mc_stderr", "z"].map(String::from));
            let mut worst: f64 = 0.0;
            let mut mc_rows = Vec::new();
            for (row, p) in results.rows.iter_mut().zip(&report.ladder) {
                let e = estimate_weak_error(&entry.model, entry.horizon, &f, p.n, cfg.kappa_ref.unwrap_or(1), m, cfg.seed)
                    .map_err(core)?;
                let zs = if e.stderr > 0.0 { (e.value - p.error).abs() / e.stderr } else if e.value == p.error { 0.0 } else { f64::INFINITY };
                worst = worst.max(zs);
                row.extend([num(e.value), num(e.stderr), num(zs)]);
                mc_rows.push(json!({ "n": p.n, "analytic": p.error, "mc": e }));
            }
            estimates["monte_carlo"] = Value::Array(mc_rows);
            checks.push(Check::new("mc_matches_closed_form", worst <= z, Some(worst), format!("z <= {z}")));
        }
        return Ok(Outcome {
            results,
            plot,
            estimates,
            checks,
        });
    }
    let study = study_config(cfg, entry.horizon)?;
    let report = convergence_study(&entry.model, &f, &study).map_err(core)?;
    let (results, plot) = ladder_table(&report);
    let mut checks = vec![slope_check(&report, lo, hi)];
    let mut estimates = report_json(&report);
    pilot(cfg, &entry.model, &f, &study, &report, &mut estimates, &mut checks)?;
    Ok(Outcome {
        results,
        plot,
        estimates,
        checks,
    })
}

fn richardson(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let entry = cfg.model_entry()?;
    let f = cfg.function()?;
    let study = study_config(cfg, entry.horizon)?;
    let r = richardson_study(&entry.model, &f, &study).map_err(core)?;
    let mut results = Table::new(&[
        "n",
        "h",
        "plain_error",
        "plain_stderr",
        "extrapolated_error",
        "extrapolated_stderr",
        "M",
        "plain_excluded",
        "extrapolated_excluded",
    ]);
    let mut plot = Table::new(&["h", "abs_plain", "abs_extrapolated"]);
    for (p, e) in r.plain.ladder.iter().zip(&r.extrapolated.ladder) {
        results.push(vec![
            p.n.to_string(),
            num(p.h),
            num(p.error),
            num(p.stderr),
            num(e.error),
            num(e.stderr),
            p.paths.to_string(),
            p.excluded.to_string(),
            e.excluded.to_string(),
        ]);
        plot.push(vec![num(p.h), num(p.error.abs()), num(e.error.abs())]);
    }
    let gain_min = cfg.thresholds.gain_min.unwrap_or(0.5);
    let checks = vec![Check::new(
        "slope_gain",
        r.gain.is_some_and(|g| g >= gain_min),
        r.gain,
        format!(">= {gain_min}"),
    )];
    Ok(Outcome {
        results,
        plot,
        estimates: json!({
            "plain": report_json(&r.plain),
            "extrapolated": report_json(&r.extrapolated),
            "gain": r.gain,
        }),
        checks,
    })
}

fn expansion_table(label: Option<&str>, report: &[weak_euler::LadderPoint], est: &ExpansionEstimate, t: &mut Table, plot: &mut Table) {
    for (p, c) in report.iter().zip(&est.c_hat) {
        let mut row = Vec::new();
        if let Some(l) = label {
            row.push(l.to_string());
        }
        row.extend([p.n.to_string(), num(p.h), num(p.error), num(p.stderr), num(c.1), num(c.2)]);
        t.push(row);
        let mut prow = Vec::new();
        if let Some(l) = label {
            prow.push(l.to_string());
        }
        prow.extend([num(c.0), num(c.1), num(c.2)]);
        plot.push(prow);
    }
}

fn expansion(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let entry = cfg.model_entry()?;
    let f = cfg.function()?;
    let (report, est) = if cfg.mode == Mode::Analytic {
        let r = analytic_study(&entry.model, entry.horizon, &f, &cfg.n_ladder).map_err(core)?;
        let e = expansion_from_ladder(&r.ladder);
        (r, e)
    } else {
        expansion_constant(&entry.model, &f, &study_config(cfg, entry.horizon)?).map_err(core)?
    };
    let mut results = Table::new(&["n", "h", "error", "stderr", "c_hat", "c_hat_stderr"]);
    let mut plot = Table::new(&["h", "c_hat", "c_hat_stderr"]);
    expansion_table(None, &report.ladder, &est, &mut results, &mut plot);
    let mut checks = vec![Check::new("no_divergence", !est.flagged, None, "differences do not grow")];
    let finest = est.c_hat.last().map(|c| c.1);
    if let (Some(want), Some(c)) = (cfg.thresholds.expected, finest) {
        let rel = cfg.thresholds.relative.unwrap_or(0.02);
        let gap = (c - want).abs() / want.abs().max(f64::MIN_POSITIVE);
        checks.push(Check::new("finest_c_hat_relative_gap", gap <= rel, Some(gap), format!("<= {rel} of {want}")));
    }
    Ok(Outcome {
        results,
        plot,
        estimates: json!({
            "c_hat_finest": finest,
            "limit_estimate": est.limit_estimate,
            "differences": est.differences,
            "flagged": est.flagged,
            "fit": report_json(&report),
        }),
        checks,
    })
}

fn alignment(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let aligned = cfg.model_entry()?;
    let misaligned = cfg.misaligned_entry()?;
    let f = cfg.function()?;
    let study = study_config(cfg, aligned.horizon)?;
    let r = alignment_experiment(&aligned.model, &misaligned.model, &f, &study).map_err(core)?;
    let mut results = Table::new(&["model", "h", "c_hat", "c_hat_stderr"]);
    let mut plot = Table::new(&["model", "h", "c_hat"]);
    for (label, e) in [("aligned", &r.aligned), ("misaligned", &r.misaligned)] {
        for c in &e.c_hat {
            results.push(vec![label.to_string(), num(c.0), num(c.1), num(c.2)]);
            plot.push(vec![label.to_string(), num(c.0), num(c.1)]);
        }
    }
    Ok(Outcome {
        results,
        plot,
        estimates: serde_json::to_value(&r).expect("serializable"),
        checks: vec![Check::new("aligned_settles", !r.aligned.flagged, Some(r.aligned_oscillation), "differences do not grow")],
    })
}

fn duality_closed(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let a_values = cfg.a_values.clone().unwrap_or_else(|| vec![0.0, 0.5, -0.5]);
    let bbar_values = cfg.bbar_values.clone().unwrap_or_else(|| vec![0.0, 1.0, -1.0]);
    let g = cfg.g.unwrap_or(1.0);
    let horizon = cfg.horizon.unwrap_or(1.0);
    let n = cfg.first_n()?;
    let m = cfg.m()?;
    let tol = cfg.thresholds.tolerance.unwrap_or(1e-10);
    let z = cfg.thresholds.z.unwrap_or(4.0);
    let mut results = Table::new(&[
        "a", "bbar", "lhs_closed", "rhs_closed", "formula", "mc_lhs", "mc_lhs_stderr", "mc_rhs", "mc_rhs_stderr",
    ]);
    let mut plot = Table::new(&["a", "bbar", "closed", "mc_lhs", "mc_rhs"]);
    let (mut sides_gap, mut a_gap, mut worst_z): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut cases = Vec::new();
    for &bbar in &bbar_values {
        let mut rhs_range = (f64::INFINITY, f64::NEG_INFINITY);
        for &a in &a_values {
            let s = closed_form_sides(a, bbar, g, horizon).map_err(core)?;
            let mc = closed_form_duality(a, bbar, g, horizon, n, m, cfg.seed).map_err(core)?;
            sides_gap = sides_gap.max((s.lhs - s.rhs).abs()).max((s.lhs - s.formula).abs());
            rhs_range = (rhs_range.0.min(s.rhs), rhs_range.1.max(s.rhs));
            let zl = (mc.lhs - s.lhs).abs() / mc.stderr_lhs;
            let zr = (mc.rhs - s.rhs).abs() / mc.stderr_rhs;
            worst_z = worst_z.max(zl).max(zr);
            results.push(vec![
                num(a),
                num(bbar),
                num(s.lhs),
                num(s.rhs),
                num(s.formula),
                num(mc.lhs),
                num(mc.stderr_lhs),
                num(mc.rhs),
                num(mc.stderr_rhs),
            ]);
            plot.push(vec![num(a), num(bbar), num(s.formula), num(mc.lhs), num(mc.rhs)]);
            cases.push(json!({ "a": a, "bbar": bbar, "closed": s, "monte_carlo": mc }));
        }
        a_gap = a_gap.max(rhs_range.1 - rhs_range.0);
    }
    let checks = vec![
        Check::new("closed_forms_agree", sides_gap <= tol, Some(sides_gap), format!("<= {tol}")),
        Check::new("rhs_independent_of_a", a_gap <= tol, Some(a_gap), format!("<= {tol}")),
        Check::new("mc_within_z", worst_z <= z, Some(worst_z), format!("z <= {z}")),
    ];
    Ok(Outcome {
        results,
        plot,
        estimates: json!({ "cases": cases, "n": n, "g": g, "horizon": horizon }),
        checks,
    })
}

fn duality_lsmc(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let entry = cfg.model_entry()?;
    let phi = cfg.function()?;
    let lsmc = LsmcConfig::new(cfg.degree.unwrap_or(2), cfg.m()?, cfg.ridge.unwrap_or(0.0)).map_err(core)?;
    let grid = make_grid(entry.model.r, cfg.first_n()?, entry.horizon).map_err(core)?;
    let r = estimate_theta_lsmc(&entry.model, &phi, &lsmc, &grid, cfg.kappa()?, cfg.seed).map_err(core)?;
    let mut results = Table::new(&["k", "t", "theta_mean"]);
    let mut plot = Table::new(&["t", "theta_mean"]);
    for (k, th) in r.theta_mean.iter().enumerate() {
        let t = k as f64 * r.h;
        results.push(vec![k.to_string(), num(t), num(*th)]);
        plot.push(vec![num(t), num(*th)]);
    }
    let rel = cfg.thresholds.relative.unwrap_or(0.05);
    let checks = vec![Check::new(
        "relative_residual",
        r.residual.relative < rel,
        Some(r.residual.relative),
        format!("< {rel}"),
    )];
    Ok(Outcome {
        results,
        plot,
        estimates: json!({
            "residual": r.residual,
            "basis_size": r.basis_size,
            "max_ridge": r.max_ridge,
            "max_condition": r.max_condition,
            "steps": r.steps,
        }),
        checks,
    })
}

fn section2(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let entry = cfg.model_entry()?;
    let f = cfg.function()?;
    let r = section2_chain(&entry.model, &f, cfg.first_n()?, cfg.kappa()?, cfg.m()?, cfg.seed).map_err(core)?;
    let z = cfg.thresholds.z.unwrap_or(4.0);
    let slack = cfg.thresholds.tolerance.unwrap_or(1e-12);
    let mut results = Table::new(&["quantity", "value", "stderr"]);
    let rows = [
        ("lhs", r.lhs),
        ("mid", r.mid),
        ("final", r.final_),
        ("direct", r.direct),
        ("lhs_minus_mid", r.lhs_minus_mid),
        ("lhs_minus_final", r.lhs_minus_final),
        ("mid_minus_final", r.mid_minus_final),
    ];
    let mut plot = Table::new(&["quantity", "value", "stderr"]);
    for (name, e) in rows {
        results.push(vec![name.to_string(), num(e.value), num(e.stderr)]);
        if rows[..4].iter().any(|(n, _)| *n == name) {
            plot.push(vec![name.to_string(), num(e.value), num(e.stderr)]);
        }
    }
    let worst = [r.lhs_minus_mid, r.lhs_minus_final, r.mid_minus_final]
        .iter()
        .map(|g| if g.stderr > 0.0 { g.value.abs() / g.stderr } else if g.value.abs() <= slack { 0.0 } else { f64::INFINITY })
        .fold(0.0, f64::max);
    Ok(Outcome {
        results,
        plot,
        checks: vec![Check::new("chain_consistent", r.consistent(z, slack), Some(worst), format!("z <= {z}"))],
        estimates: serde_json::to_value(r).expect("serializable"),
    })
}

/// Worst violation of `1{x ≤ lower} ≤ ψ(x) ≤ 1{x < upper}` on a dense grid.
pub fn cutoff_sandwich_violations(points: usize) -> usize {
    let c = smooth_cutoff();
    let top = 2.0 * c.upper;
    (0..=points)
        .filter(|&i| {
            let x = top * i as f64 / points as f64;
            let v = c.eval(x);
            let lo = if x <= c.lower { 1.0 } else { 0.0 };
            let hi = if x < c.upper { 1.0 } else { 0.0 };
            !(lo <= v && v <= hi)
        })
        .count()
}

fn psi_decay(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let entry = cfg.model_entry()?;
    let r = psi_decay_study(&entry.model, entry.horizon, &cfg.n_ladder, cfg.kappa()?, cfg.m()?, cfg.seed).map_err(core)?;
    let mut results = Table::new(&[
        "n",
        "h",
        "fraction",
        "stderr",
        "mean_psi",
        "inclusion_failures",
        "gamma_q01",
        "gamma_median",
    ]);
    let mut plot = Table::new(&["h", "fraction", "stderr"]);
    for p in &r.points {
        results.push(vec![
            p.n.to_string(),
            num(p.h),
            num(p.fraction),
            num(p.stderr),
            num(p.mean_psi),
            p.inclusion_failures.to_string(),
            num(p.gamma_q01),
            num(p.gamma_median),
        ]);
        plot.push(vec![num(p.h), num(p.fraction), num(p.stderr)]);
    }
    let sandwich = cutoff_sandwich_violations(100_000);
    let slope_min = cfg.thresholds.slope_min.unwrap_or(1.0);
    let slope_ok = r.slope.map_or(true, |s| s > slope_min);
    let slope_limit = if r.slope.is_some() {
        format!("> {slope_min}")
    } else {
        format!("> {slope_min}, fewer than 2 points above the floor {}", r.resolution_floor)
    };
    let checks = vec![
        Check::new("cutoff_sandwich", sandwich == 0, Some(sandwich as f64), "0 violations"),
        Check::new("non_increasing", r.non_increasing, None, "fraction non-increasing in n"),
        Check::new("resolvable_slope", slope_ok, r.slope, slope_limit),
        Check::new("inclusion", r.inclusion_failures == 0, Some(r.inclusion_failures as f64), "0 failures"),
    ];
    Ok(Outcome {
        results,
        plot,
        estimates: json!({
            "slope": r.slope,
            "resolvable": r.resolvable,
            "resolution_floor": r.resolution_floor,
            "faster_than_resolvable": r.faster_than_resolvable,
            "non_increasing": r.non_increasing,
            "inclusion_failures": r.inclusion_failures,
        }),
        checks,
    })
}

fn irregular_rate(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let entry = cfg.model_entry()?;
    let study = study_config(cfg, entry.horizon)?;
    let r = irregular_rate_study(&entry.model, cfg.threshold, &study).map_err(core)?;
    let (results, plot) = ladder_table(&r.report);
    let t = &cfg.thresholds;
    let mut estimates = report_json(&r.report);
    estimates["threshold"] = json!(r.threshold);
    Ok(Outcome {
        results,
        plot,
        estimates,
        checks: vec![slope_check(&r.report, t.slope_min.unwrap_or(0.7), t.slope_max.unwrap_or(1.3))],
    })
}

fn error_identity(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let entry = cfg.model_entry()?;
    let grid = make_grid(entry.model.r, cfg.first_n()?, entry.horizon).map_err(core)?;
    let kappa = cfg.kappa()?;
    let model = &entry.model;
    let cols = mc::collect(cfg.m()?, 5, |p, out| {
        let path = BrownianPath::sample(&grid, kappa, cfg.seed, p)?;
        let r = verify_error_identity(model, &path)?;
        out[0] = r.max_residual;
        out[1] = r.scale;
        out[2] = r.picard_iterations as f64;
        out[3] = r.steps as f64;
        out[4] = r.solver_gap;
        Ok(())
    })
    .map_err(core)?;
    let tol = cfg.thresholds.tolerance.unwrap_or(1e-9);
    let mut results = Table::new(&["path", "max_residual", "scale", "picard_iterations", "steps", "solver_gap"]);
    let mut plot = Table::new(&["path", "relative_residual"]);
    let (mut worst_rel, mut worst_gap, mut picard_over): (f64, f64, u64) = (0.0, 0.0, 0);
    for p in 0..cols[0].len() {
        let rel = cols[0][p] / cols[1][p];
        worst_rel = worst_rel.max(rel);
        worst_gap = worst_gap.max(cols[4][p]);
        if cols[2][p] > cols[3][p] {
            picard_over += 1;
        }
        results.push(vec![
            p.to_string(),
            num(cols[0][p]),
            num(cols[1][p]),
            num(cols[2][p]),
            num(cols[3][p]),
            num(cols[4][p]),
        ]);
        plot.push(vec![p.to_string(), num(rel)]);
    }
    let max_iter = cols[2].iter().copied().fold(0.0, f64::max);
    Ok(Outcome {
        results,
        plot,
        estimates: json!({
            "max_relative_residual": worst_rel,
            "max_solver_gap": worst_gap,
            "max_picard_iterations": max_iter,
            "steps": cols[3].first(),
        }),
        checks: vec![
            Check::new("residual", worst_rel < tol, Some(worst_rel), format!("< {tol} (1 + sup|X|)")),
            Check::new("picard_within_steps", picard_over == 0, Some(max_iter), "<= fine steps"),
            Check::new("solver_agreement", worst_gap <= 1e-12, Some(worst_gap), "<= 1e-12"),
        ],
    })
}

pub fn analytic_available(cfg: &ExperimentConfig) -> Result<bool, CliError> {
    let entry = cfg.model_entry()?;
    let f = cfg.function()?;
    for &n in &cfg.n_ladder {
        if analytic_weak_error(&entry.model, entry.horizon, &f, n).map_err(|e| CliError::Config(e.to_string()))?.is_none() {
            return Ok(false);
        }
    }
    Ok(true)
}
