//! Euler schemes for one-dimensional diffusions and stochastic delay equations,
//! with tools to measure and explain their weak error: coupled Monte Carlo,
//! the linear error equation, duality identities, discrete Malliavin
//! derivatives and localization for irregular payoffs.

pub mod duality;
pub mod error;
pub mod error_equation;
pub mod euler;
pub mod grid;
pub mod localization;
pub mod malliavin;
pub mod mc;
pub mod models;
pub mod paths;
pub mod quadrature;
pub mod stats;
pub mod weak_error;

pub use error::{Error, Result};
pub use euler::{
    euler_delay, euler_diffusion, frozen_coefficients, reference_solution, CoupledPair,
    FrozenCoefficients, PathValues, Tap,
};
pub use grid::{eta, make_grid, DelayGrid};
pub use models::{
    builtin_catalog, catalog_function, catalog_model, validate, Atom, Catalog, CatalogEntry,
    DelayMeasure, DelayModel, ExactSolution, InitialSegment, Params, SmoothFn1D, TestFunction,
    ValidationReport, FUNCTION_NAMES, MODEL_NAMES,
};
pub use paths::{coarsen, sample_path, BrownianPath};
pub use stats::{fit_log_log, Estimate, LineFit, Moments, RatePoint};
pub use malliavin::{
    first_variation_delay, first_variation_diffusion, gradient_check, malliavin_cov, second_variation_diffusion,
    stochastic_exponential, terminal_gradient, ExponentialPath, GradientCheck, SecondVariationTableau,
    VariationTableau,
};
pub use error_equation::{
    apply_operator, build_forcing, solve_picard, solve_triangular, verify_error_identity,
    ForcingPath, IdentityReport, LinearOperatorSpec, OperatorKind, ShiftRule,
};
pub use duality::{
    closed_form_duality, closed_form_sides, dual_residual, estimate_theta_lsmc, fit_dual, section2_chain,
    section2_lhs, section2_sample, theta_coefficients, ClosedFormSides, DualFit, DualPaths, DualResidual,
    DualityCaseResult, LsmcConfig, LsmcReport, Section2Report, Section2Sample, ThetaCoefficients,
};
pub use weak_error::{
    alignment_experiment, analytic_richardson_error, analytic_study, analytic_weak_error, convergence_study,
    estimate_weak_error, expansion_constant, expansion_from_ladder, fit_ladder, pilot_bias_check, richardson,
    richardson_study, AlignmentReport, BiasCheck, ExpansionEstimate, LadderPoint, ReferenceKind, RichardsonReport,
    StudyConfig, WeakErrorReport,
};
pub use localization::{
    irregular_rate_study, median_terminal, psi_decay_study, psi_from_gradients, psi_sample, smooth_cutoff,
    IrregularRateReport, LocalizationSample, PsiDecayReport, PsiPoint, SmoothCutoff, A_GRID,
};
