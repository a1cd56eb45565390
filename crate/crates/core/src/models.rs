//! Coefficients, delay measures, initial segments, payoffs and the model catalog.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Step of the central differences used by the derivative checks.
pub const FD_STEP: f64 = 1e-5;
/// Tolerance of the derivative checks, relative to `max(1, |derivative|)`.
pub const FD_TOL: f64 = 1e-6;

/// Points at which coefficient derivatives are checked.
pub const PROBES: [f64; 11] = [-3.0, -2.0, -1.3, -0.7, -0.2, 0.0, 0.3, 0.8, 1.5, 2.5, 4.0];

fn arc(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ScalarFn {
    Arc::new(f)
}

/// A `C³` scalar function with its first three derivatives.
#[derive(Clone)]
pub struct SmoothFn1D {
    name: String,
    f: [ScalarFn; 4],
    bounded_derivs: bool,
    ellipticity_floor: f64,
    constant: bool,
}

impl fmt::Debug for SmoothFn1D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothFn1D")
            .field("name", &self.name)
            .field("bounded_derivs", &self.bounded_derivs)
            .field("ellipticity_floor", &self.ellipticity_floor)
            .finish()
    }
}

impl SmoothFn1D {
    pub fn new(
        name: impl Into<String>,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d3: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            f: [arc(eval), arc(d1), arc(d2), arc(d3)],
            bounded_derivs: true,
            ellipticity_floor: 0.0,
            constant: false,
        }
    }

    pub fn constant(c: f64) -> Self {
        let mut s = Self::new(format!("{c}"), move |_| c, |_| 0.0, |_| 0.0, |_| 0.0);
        s.constant = true;
        if c > 0.0 {
            s.ellipticity_floor = c;
        }
        s
    }

    /// `slope · x + intercept`; flagged as not having bounded derivatives
    /// only through the caller (the derivatives themselves are bounded, the
    /// function is not).
    pub fn linear(slope: f64, intercept: f64) -> Self {
        if slope == 0.0 {
            return Self::constant(intercept);
        }
        Self::new(
            format!("{slope}x+{intercept}"),
            move |x| slope * x + intercept,
            move |_| slope,
            |_| 0.0,
            |_| 0.0,
        )
        .with_bounded_derivs(false)
    }

    pub fn with_bounded_derivs(mut self, flag: bool) -> Self {
        self.bounded_derivs = flag;
        self
    }

    pub fn with_ellipticity_floor(mut self, floor: f64) -> Self {
        self.ellipticity_floor = floor;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn bounded_derivs(&self) -> bool {
        self.bounded_derivs
    }

    pub fn ellipticity_floor(&self) -> f64 {
        self.ellipticity_floor
    }

    /// True when built by [`SmoothFn1D::constant`].
    pub fn is_constant(&self) -> bool {
        self.constant
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.f[0])(x)
    }

    #[inline]
    pub fn d1(&self, x: f64) -> f64 {
        (self.f[1])(x)
    }

    #[inline]
    pub fn d2(&self, x: f64) -> f64 {
        (self.f[2])(x)
    }

    #[inline]
    pub fn d3(&self, x: f64) -> f64 {
        (self.f[3])(x)
    }

    /// `k`-th derivative, `k ≤ 3`.
    #[inline]
    pub fn derivative(&self, k: usize, x: f64) -> f64 {
        (self.f[k])(x)
    }

    /// Largest relative mismatch between each derivative and the central
    /// difference of the one below it, over `probes`.
    pub fn fd_deviation(&self, probes: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for &x in probes {
            for k in 0..3 {
                let fd = (self.derivative(k, x + FD_STEP) - self.derivative(k, x - FD_STEP))
                    / (2.0 * FD_STEP);
                let d = self.derivative(k + 1, x);
                let dev = (fd - d).abs() / d.abs().max(1.0);
                worst = worst.max(if dev.is_nan() { f64::INFINITY } else { dev });
            }
        }
        worst
    }
}

/// One atom `w δ_u` of the delay measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub weight: f64,
}

/// Finite atomic measure on `[-r, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayMeasure {
    atoms: Vec<Atom>,
}

impl DelayMeasure {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(invalid("nu", "delay measure needs at least one atom"));
        }
        for a in &atoms {
            if !(a.weight >= 0.0 && a.weight.is_finite()) {
                return Err(invalid("nu", format!("negative or non-finite weight {}", a.weight)));
            }
            if !(a.location <= 0.0 && a.location.is_finite()) {
                return Err(invalid("nu", format!("atom location {} is not in [-r, 0]", a.location)));
            }
        }
        Ok(Self { atoms })
    }

    /// Measure without validation, for building deliberately broken models.
    pub fn new_unchecked(atoms: Vec<Atom>) -> Self {
        Self { atoms }
    }

    pub fn dirac(location: f64) -> Result<Self> {
        Self::new(vec![Atom {
            location,
            weight: 1.0,
        }])
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// `ν = δ_0`.
    pub fn is_dirac_at_zero(&self) -> bool {
        self.atoms.len() == 1 && self.atoms[0].location == 0.0 && self.atoms[0].weight == 1.0
    }
}

/// Deterministic `C¹` initial segment on `[-r, 0]`.
#[derive(Clone)]
pub struct InitialSegment {
    xi: ScalarFn,
    xi_prime: ScalarFn,
}

impl fmt::Debug for InitialSegment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InitialSegment")
            .field("xi(0)", &self.eval(0.0))
            .finish()
    }
}

impl InitialSegment {
    pub fn new(
        xi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        xi_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            xi: arc(xi),
            xi_prime: arc(xi_prime),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c, |_| 0.0)
    }

    /// `ξ(s) = value + slope · s`.
    pub fn affine(value: f64, slope: f64) -> Self {
        Self::new(move |s| value + slope * s, move |_| slope)
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        (self.xi)(s)
    }

    #[inline]
    pub fn derivative(&self, s: f64) -> f64 {
        (self.xi_prime)(s)
    }

    pub fn fd_deviation(&self, r: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 1..16 {
            let s = -r * i as f64 / 16.0;
            let fd = (self.eval(s + FD_STEP) - self.eval(s - FD_STEP)) / (2.0 * FD_STEP);
            let d = self.derivative(s);
            worst = worst.max((fd - d).abs() / d.abs().max(1.0));
        }
        worst
    }
}

/// Closed-form terminal values for driftless diffusions with `ν = δ_0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ExactSolution {
    /// `σ(x) = σ₀ x`: `X_T = x₀ exp(σ₀ W_T − σ₀² T / 2)`.
    Geometric { sigma0: f64 },
    /// `σ(x) = c`: `X_T = x₀ + c W_T`.
    Arithmetic { c: f64 },
}

impl ExactSolution {
    pub fn terminal(&self, x0: f64, w: f64, t: f64) -> f64 {
        match *self {
            ExactSolution::Geometric { sigma0 } => x0 * (sigma0 * w - 0.5 * sigma0 * sigma0 * t).exp(),
            ExactSolution::Arithmetic { c } => x0 + c * w,
        }
    }
}

/// `dX_t = σ(∫X_{t+u} dν(u)) dW_t + b(∫X_{t+u} dν(u)) dt`, `X = ξ` on `[-r, 0]`.
#[derive(Debug, Clone)]
pub struct DelayModel {
    pub name: String,
    pub sigma: SmoothFn1D,
    pub b: SmoothFn1D,
    pub nu: DelayMeasure,
    pub xi: InitialSegment,
    pub r: f64,
    pub exact: Option<ExactSolution>,
}

impl DelayModel {
    pub fn new(
        name: impl Into<String>,
        sigma: SmoothFn1D,
        b: SmoothFn1D,
        nu: DelayMeasure,
        xi: InitialSegment,
        r: f64,
    ) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(invalid("r", format!("delay length must be positive, got {r}")));
        }
        for a in nu.atoms() {
            if a.location < -r * (1.0 + 1e-12) {
                return Err(Error::InvalidModel(format!(
                    "atom at {} lies below -r = {}",
                    a.location, -r
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            sigma,
            b,
            nu,
            xi,
            r,
            exact: None,
        })
    }

    /// Diffusion `dX = σ(X) dW + b(X) dt`, `X_0 = x0`, embedded with `r = horizon`.
    pub fn diffusion(name: impl Into<String>, sigma: SmoothFn1D, b: SmoothFn1D, x0: f64, horizon: f64) -> Result<Self> {
        Self::new(
            name,
            sigma,
            b,
            DelayMeasure::dirac(0.0)?,
            InitialSegment::constant(x0),
            horizon,
        )
    }

    pub fn with_exact(mut self, exact: ExactSolution) -> Self {
        self.exact = Some(exact);
        self
    }

    pub fn x0(&self) -> f64 {
        self.xi.eval(0.0)
    }

    pub fn is_diffusion(&self) -> bool {
        self.nu.is_dirac_at_zero()
    }
}

/// Payoff `f` in `E f(X_T)`.
#[derive(Clone)]
pub enum TestFunction {
    Smooth(SmoothFn1D),
    /// `1{x > threshold}`.
    Indicator { threshold: f64 },
    Bounded { name: String, f: ScalarFn },
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TestFunction({})", self.name())
    }
}

impl TestFunction {
    pub fn identity() -> Self {
        TestFunction::Smooth(SmoothFn1D::new("identity", |x| x, |_| 1.0, |_| 0.0, |_| 0.0).with_bounded_derivs(false))
    }

    pub fn square() -> Self {
        TestFunction::Smooth(
            SmoothFn1D::new("square", |x| x * x, |x| 2.0 * x, |_| 2.0, |_| 0.0).with_bounded_derivs(false),
        )
    }

    /// `sin(k x)`.
    pub fn sin(k: f64) -> Self {
        TestFunction::Smooth(SmoothFn1D::new(
            if k == 1.0 { "sin".to_string() } else { format!("sin({k}x)") },
            move |x| (k * x).sin(),
            move |x| k * (k * x).cos(),
            move |x| -k * k * (k * x).sin(),
            move |x| -k * k * k * (k * x).cos(),
        ))
    }

    /// `cos(k x)`.
    pub fn cos(k: f64) -> Self {
        TestFunction::Smooth(SmoothFn1D::new(
            if k == 1.0 { "cos".to_string() } else { format!("cos({k}x)") },
            move |x| (k * x).cos(),
            move |x| -k * (k * x).sin(),
            move |x| -k * k * (k * x).cos(),
            move |x| k * k * k * (k * x).sin(),
        ))
    }

    pub fn indicator(threshold: f64) -> Self {
        TestFunction::Indicator { threshold }
    }

    pub fn bounded(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        TestFunction::Bounded {
            name: name.into(),
            f: arc(f),
        }
    }

    pub fn name(&self) -> String {
        match self {
            TestFunction::Smooth(s) => s.name().to_string(),
            TestFunction::Indicator { threshold } => format!("indicator({threshold})"),
            TestFunction::Bounded { name, .. } => name.clone(),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            TestFunction::Smooth(s) => s.eval(x),
            TestFunction::Indicator { threshold } => {
                if x > *threshold {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::Bounded { f, .. } => f(x),
        }
    }

    pub fn smooth(&self) -> Option<&SmoothFn1D> {
        match self {
            TestFunction::Smooth(s) => Some(s),
            _ => None,
        }
    }
}

/// Outcome of one validation check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub model: String,
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&ValidationCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Run every model invariant; never fails, reports instead.
pub fn validate(model: &DelayModel) -> ValidationReport {
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        checks.push(ValidationCheck {
            name: name.to_string(),
            passed,
            detail,
        })
    };
    let atoms = model.nu.atoms();
    push("nu_nonempty", !atoms.is_empty(), format!("{} atoms", atoms.len()));
    let bad_loc: Vec<f64> = atoms
        .iter()
        .map(|a| a.location)
        .filter(|&u| !(u <= 0.0 && u >= -model.r * (1.0 + 1e-12)))
        .collect();
    push(
        "nu_locations",
        bad_loc.is_empty(),
        if bad_loc.is_empty() {
            format!("all atoms in [{}, 0]", -model.r)
        } else {
            format!("atoms outside [{}, 0]: {bad_loc:?}", -model.r)
        },
    );
    let bad_w = atoms.iter().any(|a| !(a.weight >= 0.0 && a.weight.is_finite()));
    push("nu_weights", !bad_w, format!("total mass {}", model.nu.total_mass()));
    for (label, f) in [("sigma", &model.sigma), ("b", &model.b)] {
        let dev = f.fd_deviation(&PROBES);
        push(
            &format!("{label}_derivatives"),
            dev < FD_TOL,
            format!("max relative deviation {dev:.3e}"),
        );
    }
    let floor = model.sigma.ellipticity_floor();
    if floor > 0.0 {
        let min = (-400..=400)
            .map(|i| model.sigma.eval(i as f64 * 0.025))
            .fold(f64::INFINITY, f64::min);
        push(
            "sigma_ellipticity",
            min >= floor,
            format!("min sigma on [-10, 10] is {min:.6}, floor {floor}"),
        );
    }
    let dev = model.xi.fd_deviation(model.r);
    push(
        "xi_derivative",
        dev < FD_TOL,
        format!("max relative deviation {dev:.3e}"),
    );
    ValidationReport {
        model: model.name.clone(),
        checks,
    }
}

/// Checks on a payoff: derivative consistency for smooth ones, `{0, 1}` values
/// for indicators.
pub fn validate_test_function(f: &TestFunction) -> ValidationCheck {
    match f {
        TestFunction::Smooth(s) => {
            let dev = s.fd_deviation(&PROBES);
            ValidationCheck {
                name: "derivatives".into(),
                passed: dev < FD_TOL,
                detail: format!("max relative deviation {dev:.3e}"),
            }
        }
        TestFunction::Indicator { .. } => {
            let ok = (-400..=400)
                .map(|i| f.eval(i as f64 * 0.025))
                .all(|v| v == 0.0 || v == 1.0);
            ValidationCheck {
                name: "indicator_values".into(),
                passed: ok,
                detail: "values in {0, 1}".into(),
            }
        }
        TestFunction::Bounded { .. } => {
            let ok = (-400..=400).map(|i| f.eval(i as f64 * 0.025)).all(f64::is_finite);
            ValidationCheck {
                name: "finite_values".into(),
                passed: ok,
                detail: "finite on [-10, 10]".into(),
            }
        }
    }
}

/// A catalog model with its default horizon.
#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub model: DelayModel,
    pub horizon: f64,
}

/// Named parameters for catalog lookups.
pub type Params = BTreeMap<String, f64>;

pub const MODEL_NAMES: [&str; 6] = ["gbm", "bounded", "delay", "two-atom", "misaligned", "constant"];
pub const FUNCTION_NAMES: [&str; 6] = ["identity", "square", "sin", "cos", "indicator", "clip"];

fn take(params: &Params, allowed: &[&str], key: &str, default: f64) -> Result<f64> {
    for k in params.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(invalid("params", format!("unknown parameter `{k}`, expected one of {allowed:?}")));
        }
    }
    let v = params.get(key).copied().unwrap_or(default);
    if !v.is_finite() {
        return Err(invalid("params", format!("`{key}` must be finite")));
    }
    Ok(v)
}

fn delay_coefficients() -> (SmoothFn1D, SmoothFn1D) {
    let sigma = SmoothFn1D::new(
        "0.5+0.25tanh(y)",
        |y| 0.5 + 0.25 * y.tanh(),
        |y| {
            let c = 1.0 / y.cosh();
            0.25 * c * c
        },
        |y| {
            let c = 1.0 / y.cosh();
            -0.5 * c * c * y.tanh()
        },
        |y| {
            let t = y.tanh();
            let c2 = 1.0 / (y.cosh() * y.cosh());
            -0.5 * c2 * (c2 - 2.0 * t * t)
        },
    )
    .with_ellipticity_floor(0.25);
    let b = SmoothFn1D::new(
        "0.1y/(1+y^2)",
        |y| 0.1 * y / (1.0 + y * y),
        |y| {
            let q = 1.0 + y * y;
            0.1 * (1.0 - y * y) / (q * q)
        },
        |y| {
            let q = 1.0 + y * y;
            0.2 * y * (y * y - 3.0) / (q * q * q)
        },
        |y| {
            let q = 1.0 + y * y;
            let y2 = y * y;
            -0.6 * (y2 * y2 - 6.0 * y2 + 1.0) / (q * q * q * q)
        },
    );
    (sigma, b)
}

/// Catalog model `name` with parameter overrides.
///
/// | name | parameters (defaults) |
/// |---|---|
/// | `gbm` | `sigma0` (1), `x0` (1), `horizon` (1) |
/// | `bounded` | `drift` (1, scales `b`), `x0` (0), `horizon` (1) |
/// | `delay`, `two-atom` | `r` (1), `horizon` (2) |
/// | `misaligned` | `r` (1), `horizon` (2), `u0` (`-r/√2`) |
/// | `constant` | `c` (0.5), `drift` (0), `x0` (0), `horizon` (1) |
pub fn catalog_model(name: &str, params: &Params) -> Result<CatalogEntry> {
    match name {
        "gbm" => {
            let allowed = ["sigma0", "x0", "horizon"];
            let s0 = take(params, &allowed, "sigma0", 1.0)?;
            let x0 = take(params, &allowed, "x0", 1.0)?;
            let horizon = take(params, &allowed, "horizon", 1.0)?;
            let model = DelayModel::diffusion("gbm", SmoothFn1D::linear(s0, 0.0), SmoothFn1D::constant(0.0), x0, horizon)?
                .with_exact(ExactSolution::Geometric { sigma0: s0 });
            Ok(CatalogEntry {
                name: "gbm",
                description: "geometric martingale, sigma(x) = sigma0 x, b = 0",
                model,
                horizon,
            })
        }
        "bounded" => {
            let allowed = ["drift", "x0", "horizon"];
            let d = take(params, &allowed, "drift", 1.0)?;
            let x0 = take(params, &allowed, "x0", 0.0)?;
            let horizon = take(params, &allowed, "horizon", 1.0)?;
            let sigma = SmoothFn1D::new(
                "0.4+0.1sin(x)",
                |x| 0.4 + 0.1 * x.sin(),
                |x| 0.1 * x.cos(),
                |x| -0.1 * x.sin(),
                |x| -0.1 * x.cos(),
            )
            .with_ellipticity_floor(0.3);
            let b = if d == 0.0 {
                SmoothFn1D::constant(0.0)
            } else {
                SmoothFn1D::new(
                    "0.1cos(x)",
                    move |x| 0.1 * d * x.cos(),
                    move |x| -0.1 * d * x.sin(),
                    move |x| -0.1 * d * x.cos(),
                    move |x| 0.1 * d * x.sin(),
                )
            };
            Ok(CatalogEntry {
                name: "bounded",
                description: "elliptic diffusion, sigma = 0.4 + 0.1 sin x, b = 0.1 cos x",
                model: DelayModel::diffusion("bounded", sigma, b, x0, horizon)?,
                horizon,
            })
        }
        "delay" | "two-atom" | "misaligned" => {
            let allowed: &[&str] = if name == "misaligned" {
                &["r", "horizon", "u0"]
            } else {
                &["r", "horizon"]
            };
            let r = take(params, allowed, "r", 1.0)?;
            let horizon = take(params, allowed, "horizon", 2.0)?;
            let (sigma, b) = delay_coefficients();
            let (nu, description, label) = match name {
                "delay" => (
                    DelayMeasure::dirac(-r)?,
                    "delay SDE, nu = delta at -r",
                    "delay",
                ),
                "two-atom" => (
                    DelayMeasure::new(vec![
                        Atom { location: 0.0, weight: 0.5 },
                        Atom { location: -r, weight: 0.5 },
                    ])?,
                    "delay SDE, nu = (delta at 0 + delta at -r) / 2",
                    "two-atom",
                ),
                _ => {
                    let u0 = take(params, allowed, "u0", -r * std::f64::consts::FRAC_1_SQRT_2)?;
                    (
                        DelayMeasure::dirac(u0)?,
                        "delay SDE, nu = delta at an off-grid point",
                        "misaligned",
                    )
                }
            };
            let model = DelayModel::new(label, sigma, b, nu, InitialSegment::affine(1.0, 0.1), r)?;
            Ok(CatalogEntry {
                name: label,
                description,
                model,
                horizon,
            })
        }
        "constant" => {
            let allowed = ["c", "drift", "x0", "horizon"];
            let c = take(params, &allowed, "c", 0.5)?;
            let d = take(params, &allowed, "drift", 0.0)?;
            let x0 = take(params, &allowed, "x0", 0.0)?;
            let horizon = take(params, &allowed, "horizon", 1.0)?;
            let mut model = DelayModel::diffusion("constant", SmoothFn1D::constant(c), SmoothFn1D::constant(d), x0, horizon)?;
            if d == 0.0 {
                model = model.with_exact(ExactSolution::Arithmetic { c });
            }
            Ok(CatalogEntry {
                name: "constant",
                description: "constant coefficients, Euler is exact",
                model,
                horizon,
            })
        }
        _ => Err(invalid("model", format!("unknown model `{name}`, expected one of {MODEL_NAMES:?}"))),
    }
}

/// Payoff `name` with parameters: `sin`/`cos` take `frequency` (1),
/// `indicator` takes `threshold` (0).
pub fn catalog_function(name: &str, params: &Params) -> Result<TestFunction> {
    match name {
        "identity" => {
            take(params, &[], "", 0.0)?;
            Ok(TestFunction::identity())
        }
        "square" => {
            take(params, &[], "", 0.0)?;
            Ok(TestFunction::square())
        }
        "sin" => Ok(TestFunction::sin(take(params, &["frequency"], "frequency", 1.0)?)),
        "cos" => Ok(TestFunction::cos(take(params, &["frequency"], "frequency", 1.0)?)),
        "indicator" => Ok(TestFunction::indicator(take(params, &["threshold"], "threshold", 0.0)?)),
        "clip" => {
            take(params, &[], "", 0.0)?;
            Ok(TestFunction::bounded("clip", |x| x.clamp(-1.0, 1.0)))
        }
        _ => Err(invalid("f", format!("unknown test function `{name}`, expected one of {FUNCTION_NAMES:?}"))),
    }
}

/// Every catalog model and payoff with default parameters.
#[derive(Debug, Clone)]
pub struct Catalog {
    pub models: Vec<CatalogEntry>,
    pub functions: Vec<(String, TestFunction)>,
}

impl Catalog {
    pub fn model(&self, name: &str) -> Option<&CatalogEntry> {
        self.models.iter().find(|e| e.name == name)
    }

    pub fn function(&self, name: &str) -> Option<&TestFunction> {
        self.functions.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }
}

pub fn builtin_catalog() -> Catalog {
    let empty = Params::new();
    Catalog {
        models: MODEL_NAMES
            .iter()
            .map(|n| catalog_model(n, &empty).expect("catalog defaults are valid"))
            .collect(),
        functions: FUNCTION_NAMES
            .iter()
            .map(|n| (n.to_string(), catalog_function(n, &empty).expect("catalog defaults are valid")))
            .collect(),
    }
}
