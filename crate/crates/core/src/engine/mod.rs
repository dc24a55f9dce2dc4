//! Penalized-least-squares fitting engine.
//!
//! [`assemble`] realizes a parsed formula against a dataset into a design
//! matrix with diagonal penalty blocks (see the basis module for why the
//! working parameterization is always diagonal). [`fit`] optionally AR1-
//! whitens the rows, selects smoothing parameters by minimizing the chosen
//! criterion (GCV, ML, or REML), and returns a self-contained
//! [`FittedModel`] that can predict, summarize, and serialize without the
//! training data.

mod ar1;
mod assemble;
mod criterion;
mod optimize;
mod solve;

pub use ar1::ar1_whiten;
pub use assemble::{assemble, ModelMatrices, PenaltyBlock, TermInfo};
pub use criterion::criterion;
pub use optimize::{optimize_lambda, Optimized};
pub use solve::{pls_solve, PlsSolution};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

use crate::basis::{BasisError, BlockEval, EvalError, PredictorRow};
use crate::dataset::{DataError, Dataset, SeriesIndex};
use crate::formula::{format_formula, ModelFormula};
use crate::numeric::{median_sorted, serde_matrix};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("term {label}: {source}")]
    Basis {
        label: String,
        #[source]
        source: BasisError,
    },
    #[error("response `{0}` must be numeric")]
    ResponseNotNumeric(String),
    #[error("difference smooth `{label}` needs a companion reference smooth s({var})")]
    MissingReferenceSmooth { label: String, var: String },
    #[error("difference smooth `{label}` needs the parametric term `{factor}` alongside it")]
    MissingParametricDummy { label: String, factor: String },
    #[error("random-effect smooth takes the grouping factor first: write s({factor}, {slope}, bs=\"re\")")]
    ReArgumentOrder { factor: String, slope: String },
    #[error("factor smooth takes the continuous variable first: write s({var}, {factor}, bs=\"fs\")")]
    FsArgumentOrder { var: String, factor: String },
    #[error("AR1 rho must satisfy |rho| < 1, found {0}")]
    BadRho(f64),
    #[error("an AR1 rho needs a series index; pass the series and order columns")]
    RhoNeedsSeries,
    #[error("series index covers {index_rows} rows, data has {data_rows}")]
    SeriesMismatch { index_rows: usize, data_rows: usize },
    #[error("expected {expected} smoothing parameters, got {got}")]
    LambdaCount { expected: usize, got: usize },
    #[error("smoothing parameters must be finite and non-negative")]
    BadLambda,
    #[error("penalized least squares system is singular: terms {0:?} appear confounded (their unpenalized directions overlap)")]
    Singular(Vec<String>),
    #[error("model saturates the data: effective degrees of freedom {edf:.2} with {n} observations")]
    Saturated { edf: f64, n: usize },
    #[error("degenerate scale estimate: residual variance is zero")]
    DegenerateScale,
    #[error("no smoothing-parameter value produced a finite score")]
    NoFiniteScore,
    #[error("not a model file this version can read: {0}")]
    BadModelFile(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Smoothing-parameter selection criterion. `fREML` is an alias of REML
/// (identical score by construction) kept distinct only for display.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "GCV")]
    Gcv,
    #[serde(rename = "ML")]
    Ml,
    #[serde(rename = "REML")]
    Reml,
    #[serde(rename = "fREML")]
    Freml,
}

impl Method {
    /// Label used in summary footers, e.g. `-ML = 5908.6`.
    pub fn score_label(self) -> &'static str {
        match self {
            Method::Gcv => "GCV",
            Method::Ml => "-ML",
            Method::Reml => "-REML",
            Method::Freml => "-fREML",
        }
    }

    pub fn is_ml(self) -> bool {
        matches!(self, Method::Ml)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Gcv => "GCV",
            Method::Ml => "ML",
            Method::Reml => "REML",
            Method::Freml => "fREML",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gcv" => Ok(Method::Gcv),
            "ml" => Ok(Method::Ml),
            "reml" => Ok(Method::Reml),
            "freml" => Ok(Method::Freml),
            other => Err(format!(
                "unknown method `{other}` (expected gcv, ml, reml, or freml)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Parametric,
    Smooth,
    Random,
}

/// One fitted term: label, coefficient range, and evaluation recipe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RealizedTerm {
    pub label: String,
    pub range: Range<usize>,
    pub kind: TermKind,
    pub edf: f64,
    pub eval: BlockEval,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaEntry {
    pub label: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArInfo {
    pub rho: f64,
}

/// Prediction defaults for one numeric covariate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NumericMeta {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub median: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorMeta {
    pub name: String,
    pub levels: Vec<String>,
    pub reference: usize,
    pub ordered: bool,
}

pub const MODEL_SCHEMA: &str = "gamm-model";
pub const MODEL_VERSION: u32 = 1;

/// A fitted model: everything needed for summaries, comparison, prediction,
/// and residual diagnostics, with no reference to the training data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModel {
    pub schema: String,
    pub version: u32,
    pub formula: String,
    pub response: String,
    pub method: Method,
    pub n: usize,
    /// Stable hash of the response column; two saved models prove they
    /// were fitted to the same data by matching fingerprints.
    pub data_fingerprint: u64,
    pub converged: bool,
    pub coef_names: Vec<String>,
    pub beta: Vec<f64>,
    pub terms: Vec<RealizedTerm>,
    pub lambda: Vec<LambdaEntry>,
    /// Scale estimate φ = RSS / (n − τ) in the working (whitened) metric.
    pub phi: f64,
    /// Minimized selection score (AR models: in the original-data metric).
    pub score: f64,
    pub edf_total: f64,
    /// Residual sum of squares in the working metric.
    pub rss: f64,
    /// log |det W| of the AR1 whitening transform (0 without AR).
    pub logdet_w: f64,
    /// Posterior coefficient covariance (XᵀX + S_λ)⁻¹ φ.
    #[serde(with = "serde_matrix")]
    pub vb: DMatrix<f64>,
    pub ar: Option<ArInfo>,
    pub series: Option<SeriesIndex>,
    pub residuals_raw: Vec<f64>,
    /// Whitened residuals; present only for AR fits.
    pub residuals_white: Option<Vec<f64>>,
    pub numeric_meta: Vec<NumericMeta>,
    pub factor_meta: Vec<FactorMeta>,
}

impl FittedModel {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    /// Number of parametric coefficients (intercept included).
    pub fn parametric_width(&self) -> usize {
        self.terms
            .iter()
            .filter(|t| t.kind == TermKind::Parametric)
            .map(|t| t.range.len())
            .sum()
    }

    pub fn numeric_meta(&self, name: &str) -> Option<&NumericMeta> {
        self.numeric_meta.iter().find(|m| m.name == name)
    }

    pub fn factor_meta(&self, name: &str) -> Option<&FactorMeta> {
        self.factor_meta.iter().find(|m| m.name == name)
    }

    /// Build one model-matrix row at `env`. With `exclude_random`, random
    /// terms contribute zero columns, removing them from both the linear
    /// predictor and any variance computed from the row.
    pub fn design_row(
        &self,
        env: &dyn PredictorRow,
        exclude_random: bool,
        out: &mut DVector<f64>,
    ) -> Result<(), EvalError> {
        assert_eq!(out.len(), self.p());
        out.fill(0.0);
        for term in &self.terms {
            if exclude_random && term.kind == TermKind::Random {
                continue;
            }
            term.eval
                .row_into(env, &mut out.as_mut_slice()[term.range.clone()])?;
        }
        Ok(())
    }

    /// Linear predictor and its standard error at one point.
    pub fn predict_point(
        &self,
        env: &dyn PredictorRow,
        exclude_random: bool,
    ) -> Result<(f64, f64), EvalError> {
        let mut row = DVector::zeros(self.p());
        self.design_row(env, exclude_random, &mut row)?;
        let fit = row
            .iter()
            .zip(&self.beta)
            .map(|(x, b)| x * b)
            .sum::<f64>();
        let var = (&self.vb * &row).dot(&row);
        Ok((fit, var.max(0.0).sqrt()))
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<FittedModel, ModelError> {
        let model: FittedModel = serde_json::from_str(text)?;
        if model.schema != MODEL_SCHEMA {
            return Err(ModelError::BadModelFile(format!(
                "schema `{}`, expected `{MODEL_SCHEMA}`",
                model.schema
            )));
        }
        if model.version != MODEL_VERSION {
            return Err(ModelError::BadModelFile(format!(
                "version {}, expected {MODEL_VERSION}",
                model.version
            )));
        }
        Ok(model)
    }
}

/// Fit configuration beyond the formula and data.
#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    pub method: Method,
    /// AR1 coefficient for row whitening; requires `series`.
    pub rho: Option<f64>,
    /// Series boundaries; stored on the model for residual diagnostics
    /// even when no `rho` is given.
    pub series: Option<SeriesIndex>,
}

impl Default for Method {
    fn default() -> Self {
        Method::Reml
    }
}

/// Assemble, optionally whiten, select smoothing parameters, and package
/// the result. The returned model is deterministic in all inputs.
pub fn fit(
    formula: &ModelFormula,
    data: &Dataset,
    opts: &FitOptions,
) -> Result<FittedModel, ModelError> {
    let mm = assemble(formula, data)?;
    if opts.rho.is_some() && opts.series.is_none() {
        return Err(ModelError::RhoNeedsSeries);
    }
    let whitened = match (opts.rho, &opts.series) {
        (Some(rho), Some(series)) => Some(ar1_whiten(&mm, rho, series)?),
        _ => None,
    };
    let work = whitened.as_ref().unwrap_or(&mm);

    let opt = optimize_lambda(work, opts.method)?;
    let sol = pls_solve(work, &opt.lambda)?;

    let vb = &sol.h_inv * sol.phi;
    let fitted_raw = &mm.x * &sol.beta;
    let residuals_raw: Vec<f64> = mm
        .y
        .iter()
        .zip(fitted_raw.iter())
        .map(|(y, f)| y - f)
        .collect();
    let residuals_white = whitened
        .is_some()
        .then(|| sol.residuals.as_slice().to_vec());

    let terms = mm
        .terms
        .iter()
        .zip(&sol.edf_terms)
        .map(|(t, &edf)| RealizedTerm {
            label: t.label.clone(),
            range: t.range.clone(),
            kind: t.kind,
            edf,
            eval: t.eval.clone(),
        })
        .collect();
    let lambda = mm
        .penalties
        .iter()
        .zip(&opt.lambda)
        .map(|(p, &value)| LambdaEntry {
            label: p.label.clone(),
            value,
        })
        .collect();

    let (numeric_meta, factor_meta) = covariate_meta(formula, data);

    Ok(FittedModel {
        schema: MODEL_SCHEMA.to_string(),
        version: MODEL_VERSION,
        formula: format_formula(formula),
        response: mm.response.clone(),
        method: opts.method,
        n: mm.n(),
        data_fingerprint: data_fingerprint(&mm.response, &mm.y),
        converged: opt.converged,
        coef_names: mm.coef_names.clone(),
        beta: sol.beta.as_slice().to_vec(),
        terms,
        lambda,
        phi: sol.phi,
        score: opt.score,
        edf_total: sol.edf_total,
        rss: sol.rss,
        logdet_w: work.logdet_w,
        vb,
        ar: opts.rho.map(|rho| ArInfo { rho }),
        series: opts.series.clone(),
        residuals_raw,
        residuals_white,
        numeric_meta,
        factor_meta,
    })
}

/// FNV-1a over the response name and value bits. Deterministic across
/// processes, so fingerprints persisted in separate model files compare.
fn data_fingerprint(response: &str, y: &DVector<f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in response
        .bytes()
        .chain(y.iter().flat_map(|v| v.to_bits().to_le_bytes()))
    {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Ranges, medians, and level tables for every covariate the formula
/// references, in first-use order; these are the prediction defaults.
fn covariate_meta(formula: &ModelFormula, data: &Dataset) -> (Vec<NumericMeta>, Vec<FactorMeta>) {
    let mut seen: Vec<&str> = Vec::new();
    let mut numeric = Vec::new();
    let mut factor = Vec::new();
    for term in &formula.terms {
        for name in term.referenced_names() {
            if seen.contains(&name) {
                continue;
            }
            seen.push(name);
            if let Ok(values) = data.numeric(name) {
                let mut sorted = values.to_vec();
                sorted.sort_by(f64::total_cmp);
                numeric.push(NumericMeta {
                    name: name.to_string(),
                    min: sorted[0],
                    max: sorted[sorted.len() - 1],
                    median: median_sorted(&sorted),
                });
            } else if let Ok(f) = data.factor(name) {
                factor.push(FactorMeta {
                    name: name.to_string(),
                    levels: f.levels.to_vec(),
                    reference: f.reference,
                    ordered: f.ordered,
                });
            }
        }
    }
    (numeric, factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::RowValues;
    use crate::dataset::{mark_series_starts, to_ordered_treatment};
    use crate::formula::parse_formula;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Small smooth-signal dataset: y = sin(4x) + noise.
    fn sine_data(n: usize, sd: f64, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = Dataset::new();
        let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| (4.0 * v).sin() + sd * rng.gen_range(-1.0..1.0))
            .collect();
        d.add_numeric("x", x, None).unwrap();
        d.add_numeric("y", y, None).unwrap();
        d
    }

    fn reml_fit(d: &Dataset, text: &str) -> FittedModel {
        let f = parse_formula(text).unwrap();
        fit(&f, d, &FitOptions::default()).unwrap()
    }

    #[test]
    fn fitted_plus_residuals_reconstruct_response() {
        let d = sine_data(60, 0.2, 1);
        let m = reml_fit(&d, "y ~ s(x, k=8)");
        let y = d.numeric("y").unwrap();
        let beta = DVector::from_column_slice(&m.beta);
        let mut row = DVector::zeros(m.p());
        let mut env = RowValues::default();
        let x = d.numeric("x").unwrap();
        for i in 0..d.n() {
            env.numerics.insert("x".into(), x[i]);
            m.design_row(&env, false, &mut row).unwrap();
            let fitted = row.dot(&beta);
            assert!((fitted + m.residuals_raw[i] - y[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn vb_is_symmetric_psd_and_edf_in_range() {
        let d = sine_data(60, 0.2, 2);
        let m = reml_fit(&d, "y ~ s(x, k=8)");
        let p = m.p();
        for i in 0..p {
            for j in 0..p {
                assert!((m.vb[(i, j)] - m.vb[(j, i)]).abs() < 1e-10 * m.phi);
            }
        }
        let (vals, _) = crate::numeric::eigh_descending(&m.vb, 0.0);
        assert!(vals[p - 1] >= -1e-8 * vals[0].max(1e-300));
        assert!(m.edf_total >= m.parametric_width() as f64 - 1e-8);
        assert!(m.edf_total <= p as f64 + 1e-8);
    }

    #[test]
    fn freml_is_an_alias_of_reml() {
        let d = sine_data(50, 0.3, 3);
        let f = parse_formula("y ~ s(x, k=8)").unwrap();
        let a = fit(
            &f,
            &d,
            &FitOptions {
                method: Method::Reml,
                ..Default::default()
            },
        )
        .unwrap();
        let b = fit(
            &f,
            &d,
            &FitOptions {
                method: Method::Freml,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((a.score - b.score).abs() <= 1e-9 * a.score.abs().max(1.0));
        for (x, y) in a.beta.iter().zip(&b.beta) {
            assert!((x - y).abs() < 1e-9);
        }
        assert_eq!(a.method.score_label(), "-REML");
        assert_eq!(b.method.score_label(), "-fREML");
    }

    #[test]
    fn rho_zero_matches_plain_fit_exactly() {
        // Two series of 30 rows each.
        let mut d = sine_data(60, 0.25, 4);
        let series: Vec<String> = (0..60)
            .map(|i| if i < 30 { "a".into() } else { "b".into() })
            .collect();
        let t: Vec<f64> = (0..60).map(|i| (i % 30) as f64).collect();
        d.add_factor_from_strings("traj", &series).unwrap();
        d.add_numeric("t", t, None).unwrap();
        let idx = mark_series_starts(&d, "traj", "t").unwrap();
        let f = parse_formula("y ~ s(x, k=8)").unwrap();
        let plain = fit(&f, &d, &FitOptions::default()).unwrap();
        let ar0 = fit(
            &f,
            &d,
            &FitOptions {
                method: Method::Reml,
                rho: Some(0.0),
                series: Some(idx),
            },
        )
        .unwrap();
        assert!((plain.score - ar0.score).abs() < 1e-10);
        for (a, b) in plain.beta.iter().zip(&ar0.beta) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((plain.phi - ar0.phi).abs() < 1e-10 * plain.phi);
        assert!(ar0.residuals_white.is_some());
    }

    #[test]
    fn rho_without_series_is_an_error() {
        let d = sine_data(30, 0.2, 5);
        let f = parse_formula("y ~ s(x, k=6)").unwrap();
        let err = fit(
            &f,
            &d,
            &FitOptions {
                method: Method::Reml,
                rho: Some(0.4),
                series: None,
            },
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::RhoNeedsSeries));
    }

    #[test]
    fn model_json_round_trip_preserves_predictions() {
        let mut d = sine_data(40, 0.2, 6);
        let w: Vec<String> = (0..40)
            .map(|i| if i % 2 == 0 { "A".into() } else { "B".into() })
            .collect();
        d.add_factor_from_strings("w", &w).unwrap();
        let d = to_ordered_treatment(&d, "w", "A").unwrap();
        let m = reml_fit(&d, "y ~ w + s(x, k=6) + s(x, by=w, k=6)");
        let text = m.to_json().unwrap();
        let back = FittedModel::from_json(&text).unwrap();
        let mut env = RowValues::default();
        env.numerics.insert("x".into(), 0.37);
        env.levels.insert("w".into(), "B".into());
        let (f1, s1) = m.predict_point(&env, false).unwrap();
        let (f2, s2) = back.predict_point(&env, false).unwrap();
        assert!((f1 - f2).abs() < 1e-12);
        assert!((s1 - s2).abs() < 1e-12);
        assert_eq!(back.schema, MODEL_SCHEMA);
    }

    #[test]
    fn bad_schema_is_rejected() {
        let d = sine_data(30, 0.2, 7);
        let m = reml_fit(&d, "y ~ s(x, k=6)");
        let text = m.to_json().unwrap().replace("gamm-model", "other-model");
        assert!(matches!(
            FittedModel::from_json(&text),
            Err(ModelError::BadModelFile(_))
        ));
    }

    #[test]
    fn method_labels_and_parsing() {
        assert_eq!("gcv".parse::<Method>().unwrap(), Method::Gcv);
        assert_eq!("REML".parse::<Method>().unwrap(), Method::Reml);
        assert_eq!("fREML".parse::<Method>().unwrap(), Method::Freml);
        assert!("pql".parse::<Method>().is_err());
        assert_eq!(Method::Ml.score_label(), "-ML");
        assert_eq!(Method::Gcv.score_label(), "GCV");
    }

    #[test]
    fn exclude_random_zeroes_random_contributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut d = Dataset::new();
        let n_g = 6usize;
        let per = 8usize;
        let g: Vec<String> = (0..n_g)
            .flat_map(|l| std::iter::repeat(format!("g{l}")).take(per))
            .collect();
        let x: Vec<f64> = (0..n_g * per)
            .map(|i| (i % per) as f64 / (per - 1) as f64)
            .collect();
        let y: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| v + 0.3 * ((i / per) as f64) + 0.05 * rng.gen_range(-1.0..1.0))
            .collect();
        d.add_factor_from_strings("g", &g).unwrap();
        d.add_numeric("x", x, None).unwrap();
        d.add_numeric("y", y, None).unwrap();
        let m = reml_fit(&d, "y ~ s(x, k=5) + s(g, bs=\"re\")");
        let mut env = RowValues::default();
        env.numerics.insert("x".into(), 0.5);
        env.levels.insert("g".into(), "g3".into());
        let (with_re, se_with) = m.predict_point(&env, false).unwrap();
        let (without_re, se_without) = m.predict_point(&env, true).unwrap();
        assert!((with_re - without_re).abs() > 1e-6); // g3 effect present
        // the gap is exactly the g3 random-intercept coefficient
        let term = m
            .terms
            .iter()
            .find(|t| t.kind == TermKind::Random)
            .unwrap();
        let fv = d.factor("g").unwrap();
        let code = fv.levels.iter().position(|l| l == "g3").unwrap();
        let expected = m.beta[term.range.start + code];
        assert!((with_re - without_re - expected).abs() < 1e-10);
        assert!(se_with.is_finite() && se_with > 0.0);
        assert!(se_without.is_finite() && se_without > 0.0);
    }
}
