//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary so the
//! lines are always printed; exits nonzero if any criterion fails.

use std::time::Instant;

use weak_euler::{builtin_catalog, gradient_check, make_grid, BrownianPath};
use weak_euler_cli::{run, CatalogSpec, Experiment, ExperimentConfig, Mode, RunOutput};

struct Line {
    id: usize,
    passed: bool,
    detail: String,
}

fn cfg(e: Experiment, model: Option<CatalogSpec>, f: Option<CatalogSpec>, ladder: &[usize], m: u64, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(e);
    c.model = model;
    c.f = f;
    c.n_ladder = ladder.to_vec();
    c.paths = Some(m);
    c.seed = seed;
    c
}

fn execute(c: &ExperimentConfig) -> Result<RunOutput, String> {
    run(c, None).map_err(|e| e.to_string())
}

fn check_value(out: &RunOutput, name: &str) -> Option<f64> {
    out.summary.checks.iter().find(|c| c.name == name).and_then(|c| c.value)
}

fn estimate(out: &RunOutput, pointer: &str) -> f64 {
    out.summary.estimates.pointer(pointer).and_then(|v| v.as_f64()).unwrap_or(f64::NAN)
}

/// Weak error of Euler for dX = X dW, f(x) = x², from E X̄²_{k+1} = (1 + h) E X̄²_k.
fn gbm_square_oracle(n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let mut m2 = 1.0;
    for _ in 0..n {
        m2 *= 1.0 + h;
    }
    std::f64::consts::E - m2
}

fn c1() -> Result<Line, String> {
    let t = Instant::now();
    let mut c = cfg(
        Experiment::Convergence,
        Some(CatalogSpec::new("gbm")),
        Some(CatalogSpec::new("square")),
        &[10, 20, 40],
        100_000,
        101,
    );
    c.mode = Mode::Analytic;
    let out = execute(&c)?;
    let secs = t.elapsed().as_secs_f64();
    let analytic = out.outcome.results.rows[0][2].parse::<f64>().map_err(|e| e.to_string())?;
    let oracle = gbm_square_oracle(10);
    let closed = std::f64::consts::E - 1.1f64.powi(10);
    let mc = &out.outcome.results.rows[0];
    let z10: f64 = mc[8].parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
    let passed = (analytic - oracle).abs() < 1e-12
        && (oracle - closed).abs() < 1e-12
        && check_value(&out, "mc_matches_closed_form").is_some_and(|z| z <= 4.0)
        && secs < 30.0;
    Ok(Line {
        id: 1,
        passed,
        detail: format!(
            "gbm x^2 n=10: analytic {analytic:.6} oracle {oracle:.6}, MC {} (z = {z10:.2}), {secs:.1} s",
            mc[6]
        ),
    })
}

fn c2() -> Result<Line, String> {
    let t = Instant::now();
    let mut c = cfg(
        Experiment::Convergence,
        Some(CatalogSpec::new("delay")),
        Some(CatalogSpec::new("sin")),
        &[4, 8, 16, 32, 64],
        1_000_000,
        102,
    );
    c.kappa_ref = Some(16);
    c.pilot_paths = Some(250_000);
    let out = execute(&c)?;
    let secs = t.elapsed().as_secs_f64();
    let slope = estimate(&out, "/slope");
    let ci = out.summary.estimates.pointer("/slope_ci").cloned().unwrap_or_default();
    let bias = estimate(&out, "/reference_bias/bias/value");
    let bias_se = estimate(&out, "/reference_bias/bias/stderr");
    let passed = (0.8..=1.2).contains(&slope) && secs < 600.0;
    Ok(Line {
        id: 2,
        passed,
        detail: format!(
            "delay sin: slope {slope:.3} ci {ci}, reference bias pilot {bias:.2e} +- {bias_se:.1e} (advisory), {secs:.0} s"
        ),
    })
}

fn c3() -> Result<Line, String> {
    // Oracle: the closed-form ladder evaluated directly, and its limit located numerically.
    let e = std::f64::consts::E;
    let c_hat = |n: usize| (e - (n as f64 * (1.0 / n as f64).ln_1p()).exp()) * n as f64;
    let mut prev = c_hat(1 << 12);
    let mut limit = prev;
    for k in 13..=20 {
        let cur = c_hat(1 << k);
        limit = 2.0 * cur - prev;
        prev = cur;
    }
    let oracle_ok = (limit - e / 2.0).abs() < 1e-6;
    let mut c = ExperimentConfig::new(Experiment::Expansion);
    c.model = Some(CatalogSpec::new("gbm"));
    c.f = Some(CatalogSpec::new("square"));
    c.n_ladder = vec![16, 32, 64, 128, 256];
    c.mode = Mode::Analytic;
    c.thresholds.expected = Some(e / 2.0);
    c.thresholds.relative = Some(0.02);
    let out = execute(&c)?;
    let finest = estimate(&out, "/c_hat_finest");
    let direct = c_hat(256);
    let passed = oracle_ok && out.summary.passed && (finest - direct).abs() < 1e-9 * direct;
    Ok(Line {
        id: 3,
        passed,
        detail: format!(
            "C(h) at n=256 {finest:.5} vs e/2 = {:.5} (gap {:.2}%), numerical limit {limit:.7}",
            e / 2.0,
            100.0 * (finest - e / 2.0).abs() / (e / 2.0)
        ),
    })
}

fn c4() -> Result<Line, String> {
    let mut parts = Vec::new();
    let mut passed = true;
    let cases = [
        (
            CatalogSpec::new("gbm").with("sigma0", 0.5),
            CatalogSpec::new("cos").with("frequency", 3.0),
            weak_euler::ReferenceKind::Exact,
        ),
        (
            CatalogSpec::new("bounded"),
            CatalogSpec::new("sin").with("frequency", 3.0),
            weak_euler::ReferenceKind::Extrapolated,
        ),
    ];
    for (i, (model, f, reference)) in cases.into_iter().enumerate() {
        let name = model.name.clone();
        let mut c = cfg(Experiment::Richardson, Some(model), Some(f), &[1, 2, 4, 8, 16], 1_000_000, 104 + i as u64);
        c.kappa_ref = Some(16);
        c.reference = Some(reference);
        let out = execute(&c)?;
        let plain = estimate(&out, "/plain/slope");
        let extra = estimate(&out, "/extrapolated/slope");
        let gain = estimate(&out, "/gain");
        passed &= gain >= 0.5;
        parts.push(format!("{name}: plain {plain:.2} extrapolated {extra:.2} gain {gain:.2}"));
    }
    Ok(Line {
        id: 4,
        passed,
        detail: parts.join("; "),
    })
}

fn c5() -> Result<Line, String> {
    let mut passed = true;
    let mut worst: f64 = 0.0;
    let mut names = Vec::new();
    for entry in builtin_catalog().models {
        let mut c = cfg(Experiment::ErrorIdentity, Some(CatalogSpec::new(entry.name)), None, &[8], 1000, 105);
        c.kappa = Some(4);
        let out = execute(&c)?;
        passed &= out.summary.passed;
        worst = worst.max(check_value(&out, "residual").unwrap_or(f64::INFINITY));
        names.push(entry.name);
    }
    Ok(Line {
        id: 5,
        passed,
        detail: format!("{} models x 1000 paths, worst residual / (1 + sup|X|) {worst:.1e}", names.len()),
    })
}

/// `c′ = b̄ c + g`, `c(0) = 0`, by RK4.
fn moment_oracle(bbar: f64, g: f64, horizon: f64) -> f64 {
    let steps = 10_000;
    let h = horizon / steps as f64;
    let f = |c: f64| bbar * c + g;
    let mut c = 0.0;
    for _ in 0..steps {
        let k1 = f(c);
        let k2 = f(c + 0.5 * h * k1);
        let k3 = f(c + 0.5 * h * k2);
        let k4 = f(c + h * k3);
        c += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    c
}

fn c6() -> Result<Line, String> {
    let c = cfg(Experiment::DualityClosed, None, None, &[512], 100_000, 106);
    let out = execute(&c)?;
    let mut oracle_gap: f64 = 0.0;
    for row in &out.outcome.results.rows {
        let bbar: f64 = row[1].parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
        let lhs: f64 = row[2].parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
        let rhs: f64 = row[3].parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
        let want = moment_oracle(bbar, 1.0, 1.0);
        oracle_gap = oracle_gap.max((lhs - want).abs()).max((rhs - want).abs());
    }
    let passed = out.summary.passed && oracle_gap < 1e-10 && out.outcome.results.rows.len() == 9;
    Ok(Line {
        id: 6,
        passed,
        detail: format!(
            "9 cases: sides gap {:.1e}, a-spread {:.1e}, moment-ODE gap {oracle_gap:.1e}, worst MC z {:.2}",
            check_value(&out, "closed_forms_agree").unwrap_or(f64::NAN),
            check_value(&out, "rhs_independent_of_a").unwrap_or(f64::NAN),
            check_value(&out, "mc_within_z").unwrap_or(f64::NAN)
        ),
    })
}

fn c7() -> Result<Line, String> {
    let mut c = cfg(
        Experiment::Section2,
        Some(CatalogSpec::new("bounded").with("drift", 0.0)),
        Some(CatalogSpec::new("sin")),
        &[16],
        200_000,
        107,
    );
    c.kappa = Some(32);
    let out = execute(&c)?;
    let mut k = c.clone();
    k.model = Some(CatalogSpec::new("constant"));
    k.paths = Some(2_000);
    let constant = execute(&k)?;
    let zero = ["/lhs/value", "/mid/value", "/final/value"]
        .iter()
        .all(|p| estimate(&constant, p).abs() <= 1e-14);
    let passed = out.summary.passed && constant.summary.passed && zero;
    Ok(Line {
        id: 7,
        passed,
        detail: format!(
            "lhs {:.3e} mid {:.3e} final {:.3e}, worst gap z {:.2}; constant sigma all zero: {zero}",
            estimate(&out, "/lhs/value"),
            estimate(&out, "/mid/value"),
            estimate(&out, "/final/value"),
            check_value(&out, "chain_consistent").unwrap_or(f64::NAN)
        ),
    })
}

fn c8() -> Result<Line, String> {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for entry in builtin_catalog().models {
        let grid = make_grid(entry.model.r, 6, entry.horizon).map_err(|e| e.to_string())?;
        for p in 0..3 {
            let path = BrownianPath::sample(&grid, 2, 108, p).map_err(|e| e.to_string())?;
            let g = gradient_check(&entry.model, &path, 1e-5).map_err(|e| e.to_string())?;
            worst = worst.max(g.worst());
            count += 1;
        }
    }
    Ok(Line {
        id: 8,
        passed: worst < 1e-6,
        detail: format!("{count} paths over the catalog, worst relative gap {worst:.1e}"),
    })
}

fn c9() -> Result<Line, String> {
    let mut c = cfg(Experiment::PsiDecay, Some(CatalogSpec::new("bounded")), None, &[4, 8, 16, 32], 100_000, 109);
    c.kappa = Some(32);
    let out = execute(&c)?;
    let fractions: Vec<&str> = out.outcome.results.rows.iter().map(|r| r[2].as_str()).collect();
    let resolvable = estimate(&out, "/resolvable");
    Ok(Line {
        id: 9,
        passed: out.summary.passed,
        detail: format!(
            "P(psi != 1) by n: [{}], {resolvable} points above the floor, slope {}, sandwich and inclusion ok: {}",
            fractions.join(", "),
            out.summary.estimates["slope"],
            check_value(&out, "cutoff_sandwich") == Some(0.0) && check_value(&out, "inclusion") == Some(0.0)
        ),
    })
}

fn c10() -> Result<Line, String> {
    let t = Instant::now();
    let mut c = cfg(Experiment::IrregularRate, Some(CatalogSpec::new("bounded")), None, &[4, 8, 16, 32, 64], 1_000_000, 110);
    c.kappa_ref = Some(16);
    let out = execute(&c)?;
    let secs = t.elapsed().as_secs_f64();
    let slope = estimate(&out, "/slope");
    Ok(Line {
        id: 10,
        passed: (0.7..=1.3).contains(&slope) && secs < 900.0,
        detail: format!(
            "indicator at median K = {:.4}: slope {slope:.3}, excluded {}, {secs:.0} s",
            estimate(&out, "/threshold"),
            out.summary.estimates["excluded_points"]
        ),
    })
}

fn c11() -> Result<Line, String> {
    let mut c = cfg(Experiment::DualityLsmc, Some(CatalogSpec::new("delay")), Some(CatalogSpec::new("cos")), &[4], 100_000, 111);
    c.kappa = Some(4);
    c.degree = Some(2);
    let out = execute(&c)?;
    let rel = estimate(&out, "/residual/relative");
    Ok(Line {
        id: 11,
        passed: rel < 0.05,
        detail: format!(
            "relative residual {rel:.2e}, theta term {:.3e} +- {:.1e}, basis {}",
            estimate(&out, "/residual/theta_term/value"),
            estimate(&out, "/residual/theta_term/stderr"),
            out.summary.estimates["basis_size"]
        ),
    })
}

fn c12() -> Result<Line, String> {
    let mut configs = Vec::new();
    let mut a = cfg(Experiment::Convergence, Some(CatalogSpec::new("delay")), Some(CatalogSpec::new("sin")), &[2, 4, 8], 20_000, 112);
    a.kappa_ref = Some(4);
    a.pilot_paths = Some(5_000);
    configs.push(a);
    let mut b = cfg(Experiment::Section2, Some(CatalogSpec::new("bounded").with("drift", 0.0)), Some(CatalogSpec::new("cos")), &[4], 10_000, 113);
    b.kappa = Some(4);
    configs.push(b);
    let mut d = cfg(Experiment::DualityLsmc, Some(CatalogSpec::new("delay")), Some(CatalogSpec::new("cos")), &[4], 5_000, 114);
    d.kappa = Some(2);
    configs.push(d);
    let mut identical = 0;
    for c in &configs {
        let one = run(c, Some(1)).map_err(|e| e.to_string())?;
        let four = run(c, Some(4)).map_err(|e| e.to_string())?;
        let again = run(c, Some(4)).map_err(|e| e.to_string())?;
        if one.summary_json() == four.summary_json() && four.summary_json() == again.summary_json() {
            identical += 1;
        }
    }
    Ok(Line {
        id: 12,
        passed: identical == configs.len(),
        detail: format!("{identical}/{} experiments byte-identical across 1 and 4 threads and reruns", configs.len()),
    })
}

fn main() {
    let criteria: [fn() -> Result<Line, String>; 12] = [c1, c2, c3, c4, c5, c6, c7, c8, c9, c10, c11, c12];
    let mut failed = 0;
    for (i, c) in criteria.iter().enumerate() {
        let t = Instant::now();
        let line = c().unwrap_or_else(|e| Line {
            id: i + 1,
            passed: false,
            detail: format!("error: {e}"),
        });
        if !line.passed {
            failed += 1;
        }
        println!(
            "{} criterion {:>2}: {} [{:.1} s]",
            if line.passed { "PASS" } else { "FAIL" },
            line.id,
            line.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
