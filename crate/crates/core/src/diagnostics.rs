//! Residual extraction and split-series autocorrelation.
//!
//! The ACF here is the split-then-average kind: computed independently per
//! series (each with its own mean and lag-0 denominator), then averaged
//! across series with equal weights regardless of length. Everything is
//! pure; per-series passes are independent.

use std::io::Write;

use thiserror::Error;

use crate::dataset::SeriesIndex;
use crate::engine::FittedModel;

#[derive(Debug, Error)]
pub enum DiagError {
    #[error("normalized residuals require a model fitted with an AR1 rho")]
    NoArModel,
    #[error("the model records no series index; refit with series/order columns")]
    NoSeries,
    #[error("max_lag {max_lag} must be smaller than the shortest series ({shortest} rows)")]
    LagTooLarge { max_lag: usize, shortest: usize },
    #[error("autocorrelation needs series of at least 2 points")]
    SeriesTooShort,
    #[error("values cover {values} rows, series index covers {rows}")]
    LengthMismatch { values: usize, rows: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualKind {
    Raw,
    /// AR1-whitened residuals; only defined for models fitted with a rho.
    Normalized,
}

/// Residual vector of a fitted model, aligned with the training rows.
pub fn residuals(fit: &FittedModel, kind: ResidualKind) -> Result<&[f64], DiagError> {
    match kind {
        ResidualKind::Raw => Ok(&fit.residuals_raw),
        ResidualKind::Normalized => fit
            .residuals_white
            .as_deref()
            .ok_or(DiagError::NoArModel),
    }
}

#[derive(Debug, Clone)]
pub struct AcfTable {
    pub max_lag: usize,
    /// `mean[k]` is the equal-weight cross-series average at lag k;
    /// `mean[0]` is exactly 1.
    pub mean: Vec<f64>,
    /// Per-series autocorrelations, one row per series in index order.
    pub per_series: Vec<Vec<f64>>,
    /// ±1.96/√n̄ with n̄ the mean series length.
    pub ci_limit: f64,
    pub warnings: Vec<String>,
}

impl AcfTable {
    pub fn emit_csv(&self, mut w: impl Write) -> Result<(), DiagError> {
        writeln!(w, "lag,mean_acf,ci_limit")?;
        for (lag, value) in self.mean.iter().enumerate() {
            writeln!(w, "{lag},{value},{}", self.ci_limit)?;
        }
        Ok(())
    }

    /// Plain-text bar sketch for terminal use.
    pub fn sketch(&self) -> String {
        const WIDTH: usize = 32;
        let mut out = String::new();
        for (lag, &value) in self.mean.iter().enumerate() {
            let bar = "#".repeat((value.abs().min(1.0) * WIDTH as f64).round() as usize);
            out.push_str(&format!("{lag:>3} {value:>7.3} {bar}\n"));
        }
        out.push_str(&format!("      ±{:.3} white-noise limit\n", self.ci_limit));
        out
    }
}

/// Autocorrelation per series, averaged across series.
///
/// Per series: r_k = Σ_t (e_t − ē)(e_{t+k} − ē) / Σ_t (e_t − ē)², with ē
/// the series mean and the lag-0 sum as the shared denominator. A
/// zero-variance series keeps r_0 = 1 (definitional) and contributes 0 at
/// the positive lags, with a warning. Default max_lag is
/// min(10, shortest − 1).
pub fn acf_split(
    values: &[f64],
    series: &SeriesIndex,
    max_lag: Option<usize>,
) -> Result<AcfTable, DiagError> {
    if values.len() != series.n_rows() {
        return Err(DiagError::LengthMismatch {
            values: values.len(),
            rows: series.n_rows(),
        });
    }
    let shortest = series.shortest();
    if shortest < 2 {
        return Err(DiagError::SeriesTooShort);
    }
    let max_lag = max_lag.unwrap_or_else(|| 10.min(shortest - 1));
    if max_lag >= shortest {
        return Err(DiagError::LagTooLarge { max_lag, shortest });
    }

    let mut warnings = Vec::new();
    let mut per_series = Vec::with_capacity(series.ranges.len());
    for (i, r) in series.ranges.iter().enumerate() {
        let e = &values[r.clone()];
        let mean = e.iter().sum::<f64>() / e.len() as f64;
        let centered: Vec<f64> = e.iter().map(|v| v - mean).collect();
        let denom: f64 = centered.iter().map(|c| c * c).sum();
        let mut rk = vec![0.0; max_lag + 1];
        rk[0] = 1.0;
        if denom == 0.0 {
            warnings.push(format!(
                "series {i} (rows {}..{}) has zero variance; its autocorrelations were recorded as 0",
                r.start, r.end
            ));
        } else {
            for (k, slot) in rk.iter_mut().enumerate().skip(1) {
                let num: f64 = centered[..centered.len() - k]
                    .iter()
                    .zip(&centered[k..])
                    .map(|(a, b)| a * b)
                    .sum();
                *slot = num / denom;
            }
        }
        per_series.push(rk);
    }

    let n_series = per_series.len() as f64;
    let mean = (0..=max_lag)
        .map(|k| per_series.iter().map(|s| s[k]).sum::<f64>() / n_series)
        .collect();

    Ok(AcfTable {
        max_lag,
        mean,
        per_series,
        ci_limit: 1.96 / series.mean_length().sqrt(),
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct RhoStart {
    pub value: f64,
    pub warnings: Vec<String>,
}

/// Lag-1 split-series autocorrelation of the raw residuals: the documented
/// rough starting value for the AR1 rho. Zero residuals give 0 with a
/// degenerate-variance warning.
pub fn start_value_rho(fit: &FittedModel) -> Result<RhoStart, DiagError> {
    let series = fit.series.as_ref().ok_or(DiagError::NoSeries)?;
    let table = acf_split(&fit.residuals_raw, series, Some(1))?;
    Ok(RhoStart {
        value: table.mean[1],
        warnings: table.warnings,
    })
}
