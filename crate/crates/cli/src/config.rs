//! Experiment configuration files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use weak_euler::{catalog_function, catalog_model, CatalogEntry, ReferenceKind, TestFunction};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Convergence,
    Richardson,
    Expansion,
    Alignment,
    DualityClosed,
    DualityLsmc,
    Section2,
    PsiDecay,
    IrregularRate,
    ErrorIdentity,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Experiment::Convergence,
        Experiment::Richardson,
        Experiment::Expansion,
        Experiment::Alignment,
        Experiment::DualityClosed,
        Experiment::DualityLsmc,
        Experiment::Section2,
        Experiment::PsiDecay,
        Experiment::IrregularRate,
        Experiment::ErrorIdentity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Convergence => "convergence",
            Experiment::Richardson => "richardson",
            Experiment::Expansion => "expansion",
            Experiment::Alignment => "alignment",
            Experiment::DualityClosed => "duality-closed",
            Experiment::DualityLsmc => "duality-lsmc",
            Experiment::Section2 => "section2",
            Experiment::PsiDecay => "psi-decay",
            Experiment::IrregularRate => "irregular-rate",
            Experiment::ErrorIdentity => "error-identity",
        }
    }

    /// Fields the experiment reads besides `experiment` and `seed`.
    pub fn fields(self) -> &'static str {
        match self {
            Experiment::Convergence => "model, f, n_ladder, M, kappa_ref [mode, reference, pilot_paths]",
            Experiment::Richardson => "model, f, n_ladder, M, kappa_ref [reference]",
            Experiment::Expansion => "model, f, n_ladder [mode, M, kappa_ref, reference]",
            Experiment::Alignment => "model, misaligned, f, n_ladder, M, kappa_ref",
            Experiment::DualityClosed => "n_ladder (first entry), M [a_values, bbar_values, g, horizon]",
            Experiment::DualityLsmc => "model, f, n_ladder (first entry), kappa, M [degree, ridge]",
            Experiment::Section2 => "model, f, n_ladder (first entry), kappa, M",
            Experiment::PsiDecay => "model, n_ladder, kappa, M",
            Experiment::IrregularRate => "model, n_ladder, M, kappa_ref [threshold, reference]",
            Experiment::ErrorIdentity => "model, n_ladder (first entry), kappa, M",
        }
    }

    /// The claim the experiment checks.
    pub fn claim(self) -> &'static str {
        match self {
            Experiment::Convergence => "Euler weak error is first order in h for smooth payoffs on delay equations",
            Experiment::Richardson => "Richardson extrapolation removes the first-order term of the error expansion",
            Experiment::Expansion => "the error divided by h converges to the expansion constant",
            Experiment::Alignment => "the expansion constant settles on grid-aligned delays but may oscillate otherwise",
            Experiment::DualityClosed => "duality identity in the linear constant-coefficient case, where both sides are explicit",
            Experiment::DualityLsmc => "duality identity with the dual process estimated by regression",
            Experiment::Section2 => "integration by parts chain for driftless diffusions",
            Experiment::PsiDecay => "the localization set where the covariances disagree shrinks faster than h",
            Experiment::IrregularRate => "first-order weak error persists for bounded measurable payoffs under ellipticity",
            Experiment::ErrorIdentity => "the error X minus its Euler scheme solves a linear equation with explicit forcing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Mc,
    /// Closed-form error ladder; with `M` set, Monte Carlo is checked against it.
    Analytic,
}

/// Catalog name with parameter overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

impl CatalogSpec {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }
}

/// Pass/fail thresholds; unset fields take the experiment's default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope_max: Option<f64>,
    /// Richardson slope gain.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain_min: Option<f64>,
    /// Monte Carlo agreement in standard errors.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    /// Absolute tolerance for closed forms; relative (to `1 + sup|X|`) for the error identity.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Relative tolerance of the expansion limit or the dual residual.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative: Option<f64>,
    /// Target of the expansion constant.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<CatalogSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<CatalogSpec>,
    #[serde(default)]
    pub n_ladder: Vec<usize>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_ref: Option<usize>,
    /// Refinement of the fine scheme in coupled-pair experiments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Not part of the recorded config.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot_paths: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub misaligned: Option<CatalogSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbar_values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub thresholds: Thresholds,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            model: None,
            f: None,
            n_ladder: Vec::new(),
            paths: None,
            kappa_ref: None,
            kappa: None,
            seed: 0,
            output_dir: None,
            mode: Mode::Mc,
            reference: None,
            pilot_paths: None,
            misaligned: None,
            threshold: None,
            degree: None,
            ridge: None,
            a_values: None,
            bbar_values: None,
            g: None,
            horizon: None,
            thresholds: Thresholds::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn model_entry(&self) -> Result<CatalogEntry, CliError> {
        let spec = self.model.as_ref().ok_or_else(|| bad("`model` is required"))?;
        catalog_model(&spec.name, &spec.params).map_err(|e| bad(e.to_string()))
    }

    pub fn misaligned_entry(&self) -> Result<CatalogEntry, CliError> {
        let spec = self.misaligned.as_ref().ok_or_else(|| bad("`misaligned` is required"))?;
        catalog_model(&spec.name, &spec.params).map_err(|e| bad(e.to_string()))
    }

    pub fn function(&self) -> Result<TestFunction, CliError> {
        let spec = self.f.as_ref().ok_or_else(|| bad("`f` is required"))?;
        catalog_function(&spec.name, &spec.params).map_err(|e| bad(e.to_string()))
    }

    pub fn m(&self) -> Result<u64, CliError> {
        self.paths.ok_or_else(|| bad("`M` is required"))
    }

    pub fn first_n(&self) -> Result<usize, CliError> {
        self.n_ladder.first().copied().ok_or_else(|| bad("`n_ladder` is required"))
    }

    pub fn kappa_ref(&self) -> Result<usize, CliError> {
        self.kappa_ref.ok_or_else(|| bad("`kappa_ref` is required"))
    }

    pub fn kappa(&self) -> Result<usize, CliError> {
        self.kappa.ok_or_else(|| bad("`kappa` is required"))
    }

    /// Names resolve, numbers are positive, and the fields the experiment needs are present.
    pub fn validate(&self) -> Result<(), CliError> {
        use Experiment::*;
        let e = self.experiment;
        if self.n_ladder.contains(&0) {
            return Err(bad("`n_ladder` entries must be positive"));
        }
        for (name, v) in [("M", self.paths), ("pilot_paths", self.pilot_paths)] {
            if v == Some(0) {
                return Err(bad(format!("`{name}` must be positive")));
            }
        }
        for (name, v) in [("kappa_ref", self.kappa_ref), ("kappa", self.kappa), ("degree", self.degree)] {
            if v == Some(0) {
                return Err(bad(format!("`{name}` must be positive")));
            }
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(bad("`horizon` must be positive"));
            }
        }
        if let Some(r) = self.ridge {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(bad("`ridge` must be non-negative"));
            }
        }
        if e != DualityClosed {
            self.model_entry()?;
        }
        if matches!(e, Convergence | Richardson | Expansion | Alignment | DualityLsmc | Section2) || self.f.is_some() {
            self.function()?;
        }
        if e == Alignment {
            self.misaligned_entry()?;
        }
        if self.n_ladder.is_empty() {
            return Err(bad("`n_ladder` is required"));
        }
        let ladder_study = matches!(e, Convergence | Richardson | Alignment | IrregularRate | PsiDecay)
            || (e == Expansion && self.mode == Mode::Mc);
        if ladder_study && self.n_ladder.len() < 3 && e != PsiDecay {
            return Err(bad("`n_ladder` needs at least 3 levels"));
        }
        let needs_m = match e {
            Convergence | Expansion => self.mode == Mode::Mc,
            _ => true,
        };
        if needs_m {
            self.m()?;
        }
        let needs_kappa_ref = match e {
            Convergence | Expansion => self.mode == Mode::Mc,
            Richardson | Alignment | IrregularRate => true,
            _ => false,
        };
        if needs_kappa_ref {
            self.kappa_ref()?;
        }
        if matches!(e, DualityLsmc | Section2 | PsiDecay | ErrorIdentity) {
            self.kappa()?;
        }
        if self.mode == Mode::Analytic {
            if !matches!(e, Convergence | Expansion) {
                return Err(bad("`mode: analytic` applies to convergence and expansion only"));
            }
            if !crate::experiments::analytic_available(self)? {
                return Err(bad("no closed-form weak error for this model and payoff"));
            }
        }
        if e != DualityClosed {
            let entry = self.model_entry()?;
            for &n in &self.n_ladder {
                weak_euler::make_grid(entry.model.r, n, entry.horizon).map_err(|err| bad(format!("n = {n}: {err}")))?;
            }
        }
        Ok(())
    }
}
