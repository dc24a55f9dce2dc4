//! Additive mixed-model engine for grouped trajectory data.
//!
//! The crate fits penalized-regression-spline models to long-format time
//! series: population smooths (cubic regression splines, P-splines, thin
//! plate splines), random intercepts/slopes, per-group random smooths,
//! ordered-factor difference smooths, and tensor-product interactions,
//! with an optional AR1 error model handled by row whitening. Smoothing
//! parameters are selected by GCV, ML, or REML; inference tools cover
//! summary tables, nested-model comparison, AIC, prediction grids with
//! pointwise confidence intervals, difference smooths, and residual
//! autocorrelation diagnostics. A simulation module generates synthetic
//! two-word trajectory data and drives a false-positive/power harness
//! over six significance-testing strategies.
//!
//! Pipeline: [`formula::parse_formula`] → [`engine::assemble`] →
//! (optional [`engine::ar1_whiten`]) → [`engine::optimize_lambda`] →
//! [`inference`]/[`diagnostics`].

pub mod basis;
pub mod dataset;
pub mod diagnostics;
pub mod engine;
pub mod formula;
pub mod inference;
pub mod simgen;

mod numeric;
