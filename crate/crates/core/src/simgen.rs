//! Synthetic two-word trajectory data and the false-positive/power
//! harness over six significance-testing strategies.
//!
//! The generator draws paired trajectories: pair i of word A and word B
//! share a duration, so effect-size sweeps with a common seed are exactly
//! paired. The underlying curve is a logistic transition between two
//! plateaus; duration scales the excursion ("longer vowels travel
//! further"), the word effect ramps in smoothly and reaches its full size
//! at the final measurement, and each trajectory adds a seeded smooth
//! deviation plus stationary AR1 noise.
//!
//! Harness replicates run in parallel on independent ChaCha streams of the
//! base seed, so reports are bit-identical for a given seed regardless of
//! thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::RowValues;
use crate::dataset::{copy_factor, mark_series_starts, to_ordered_treatment, Dataset};
use crate::engine::{fit, FitOptions, FittedModel, Method};
use crate::formula::parse_formula;
use crate::inference::{compare_ml, predict_diff, predict_smooth, summarize};

/// Rejection threshold used throughout the harness.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    BadConfig(String),
    #[error("unknown method {0}; methods are numbered 1..=6")]
    UnknownMethod(u8),
    #[error("at least one method is required")]
    NoMethods,
    #[error("replicates must be >= 1")]
    NoReplicates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Trajectories per word (total trajectories = 2 × n_traj).
    pub n_traj: usize,
    /// Measurements per trajectory.
    pub n_points: usize,
    /// End-of-trajectory separation between the words, in response units.
    pub effect: f64,
    /// Strength of the duration modulation of the trajectory excursion.
    pub dur_scale: f64,
    /// Scale of the per-trajectory smooth deviation.
    pub amplitude: f64,
    /// AR1 coefficient of the within-trajectory noise.
    pub rho: f64,
    /// Stationary standard deviation of the noise.
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_traj: 25,
            n_points: 11,
            effect: 100.0,
            dur_scale: 0.25,
            amplitude: 30.0,
            rho: 0.6,
            noise_sd: 20.0,
            seed: 1,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<(), SimError> {
        if self.n_traj < 1 || self.n_points < 1 {
            return Err(SimError::BadConfig(
                "n_traj and n_points must be at least 1".into(),
            ));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(SimError::BadConfig("noise_sd must be >= 0".into()));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(SimError::BadConfig("rho must lie in (-1, 1)".into()));
        }
        if !(self.amplitude >= 0.0) {
            return Err(SimError::BadConfig("amplitude must be >= 0".into()));
        }
        if !self.effect.is_finite() || !self.dur_scale.is_finite() {
            return Err(SimError::BadConfig(
                "effect and dur_scale must be finite".into(),
            ));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Population curve before duration modulation: two plateaus joined by a
/// fairly sudden transition near the middle.
fn base_curve(u: f64) -> f64 {
    1650.0 + 350.0 * sigmoid((u - 0.5) / 0.11)
}

/// Excursion-from-start scaled by duration; durations run 0.08..0.16 s
/// with 0.12 as the neutral point.
fn word_curve(u: f64, duration: f64, dur_scale: f64) -> f64 {
    let start = base_curve(0.0);
    start + (base_curve(u) - start) * (1.0 + dur_scale * (duration - 0.12) / 0.04)
}

/// 0 at u = 0 and exactly 1 at u = 1, with flat ends.
fn smoothstep(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

/// Smooth per-trajectory deviation spanned by intercept, slope, and two
/// curvature modes.
fn deviation(u: f64, z: &[f64; 4]) -> f64 {
    let pu = std::f64::consts::PI * u;
    0.5 * z[0] + z[1] * (u - 0.5) + 0.5 * z[2] * pu.sin() + 0.5 * z[3] * pu.cos()
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos()
}

/// Generate a long-format two-word trajectory dataset
/// (columns traj, word, measurement.no, f2, duration).
pub fn gen_words(cfg: &SimConfig) -> Result<Dataset, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(gen_words_rng(cfg, &mut rng))
}

fn gen_words_rng(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Dataset {
    let m = cfg.n_points;
    let rows = 2 * cfg.n_traj * m;
    let mut traj = Vec::with_capacity(rows);
    let mut word = Vec::with_capacity(rows);
    let mut mno = Vec::with_capacity(rows);
    let mut f2 = Vec::with_capacity(rows);
    let mut dur = Vec::with_capacity(rows);

    // one duration per pair, so the words stay exactly matched
    let durations: Vec<f64> = (0..cfg.n_traj).map(|_| rng.gen_range(0.08..=0.16)).collect();
    let innov_sd = cfg.noise_sd * (1.0 - cfg.rho * cfg.rho).sqrt();

    for i in 0..cfg.n_traj {
        for label in ["A", "B"] {
            let z: [f64; 4] = std::array::from_fn(|_| gauss(rng));
            let mut e = cfg.noise_sd * gauss(rng);
            for j in 0..m {
                let u = if m > 1 { j as f64 / (m - 1) as f64 } else { 0.0 };
                let mut val = word_curve(u, durations[i], cfg.dur_scale);
                if label == "B" {
                    val += cfg.effect * smoothstep(u);
                }
                val += cfg.amplitude * deviation(u, &z);
                val += e;
                traj.push(format!("{label}_{i}"));
                word.push(label.to_string());
                mno.push((j + 1) as f64);
                f2.push(val);
                dur.push(durations[i]);
                if j + 1 < m {
                    e = cfg.rho * e + innov_sd * gauss(rng);
                }
            }
        }
    }

    let mut d = Dataset::new();
    d.add_factor_from_strings("traj", &traj).unwrap();
    d.add_factor_from_strings("word", &word).unwrap();
    d.add_numeric("measurement.no", mno, None).unwrap();
    d.add_numeric("f2", f2, Some("Hz")).unwrap();
    d.add_numeric("duration", dur, Some("s")).unwrap();
    d
}

// ---------------------------------------------------------------------------
// Harness

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelVariant {
    /// Bare model: no error model, no random smooths.
    None,
    /// Bare model + AR1 error model at the config's rho.
    Ar1,
    /// Bare model + per-trajectory random smooths.
    Fs,
}

impl std::str::FromStr for ModelVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(ModelVariant::None),
            "ar1" => Ok(ModelVariant::Ar1),
            "fs" => Ok(ModelVariant::Fs),
            other => Err(format!("unknown variant `{other}` (none|ar1|fs)")),
        }
    }
}

impl std::fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelVariant::None => "none",
            ModelVariant::Ar1 => "ar1",
            ModelVariant::Fs => "fs",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodRate {
    pub method: u8,
    pub rejections: usize,
    /// Rejections over successful replicates.
    pub rate: f64,
    /// Binomial Monte-Carlo standard error of `rate`.
    pub mc_se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarnessReport {
    pub config: SimConfig,
    pub variant: ModelVariant,
    pub replicates: usize,
    /// Replicates where a model failed to fit; excluded from the rates.
    pub fit_failures: usize,
    pub rates: Vec<MethodRate>,
}

impl HarnessReport {
    pub fn rate(&self, method: u8) -> Option<f64> {
        self.rates.iter().find(|r| r.method == method).map(|r| r.rate)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<HarnessReport, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// False-positive harness: requires a null config (effect = 0).
pub fn run_type1_harness(
    cfg: &SimConfig,
    replicates: usize,
    methods: &[u8],
    variant: ModelVariant,
) -> Result<HarnessReport, SimError> {
    if cfg.effect != 0.0 {
        return Err(SimError::BadConfig(
            "the type-I harness requires effect = 0".into(),
        ));
    }
    run_harness(cfg, replicates, methods, variant)
}

/// Power harness: same machinery with any effect size. At effect = 0 it
/// reduces exactly to the type-I harness.
pub fn run_power_harness(
    cfg: &SimConfig,
    replicates: usize,
    methods: &[u8],
    variant: ModelVariant,
) -> Result<HarnessReport, SimError> {
    run_harness(cfg, replicates, methods, variant)
}

fn run_harness(
    cfg: &SimConfig,
    replicates: usize,
    methods: &[u8],
    variant: ModelVariant,
) -> Result<HarnessReport, SimError> {
    cfg.validate()?;
    if replicates == 0 {
        return Err(SimError::NoReplicates);
    }
    if methods.is_empty() {
        return Err(SimError::NoMethods);
    }
    if let Some(&bad) = methods.iter().find(|m| !(1..=6).contains(*m)) {
        return Err(SimError::UnknownMethod(bad));
    }
    let mut methods: Vec<u8> = methods.to_vec();
    methods.sort_unstable();
    methods.dedup();

    let outcomes: Vec<Option<Vec<bool>>> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(rep as u64 + 1);
            let data = gen_words_rng(cfg, &mut rng);
            replicate_decisions(&data, cfg, &methods, variant)
        })
        .collect();

    let mut fit_failures = 0usize;
    let mut rejections = vec![0usize; methods.len()];
    for o in &outcomes {
        match o {
            Some(decisions) => {
                for (slot, &hit) in rejections.iter_mut().zip(decisions) {
                    *slot += hit as usize;
                }
            }
            None => fit_failures += 1,
        }
    }
    let n_ok = replicates - fit_failures;
    let rates = methods
        .iter()
        .zip(&rejections)
        .map(|(&method, &rej)| {
            let rate = if n_ok > 0 { rej as f64 / n_ok as f64 } else { 0.0 };
            let mc_se = if n_ok > 0 {
                (rate * (1.0 - rate) / n_ok as f64).sqrt()
            } else {
                0.0
            };
            MethodRate {
                method,
                rejections: rej,
                rate,
                mc_se,
            }
        })
        .collect();

    Ok(HarnessReport {
        config: cfg.clone(),
        variant,
        replicates,
        fit_failures,
        rates,
    })
}

fn harness_formulas(variant: ModelVariant) -> (String, String) {
    let full = "f2 ~ word.ord + s(measurement.no, k=10) \
                + s(measurement.no, by=word.ord, k=10)";
    let reduced = "f2 ~ s(measurement.no, k=10)";
    match variant {
        ModelVariant::None | ModelVariant::Ar1 => (full.into(), reduced.into()),
        ModelVariant::Fs => {
            let fs = " + s(measurement.no, traj, bs=\"fs\", m=1, k=5)";
            (format!("{full}{fs}"), format!("{reduced}{fs}"))
        }
    }
}

/// One replicate's accept/reject decision per requested method, in the
/// order of `methods`. `None` marks a replicate whose fits failed.
fn replicate_decisions(
    data: &Dataset,
    cfg: &SimConfig,
    methods: &[u8],
    variant: ModelVariant,
) -> Option<Vec<bool>> {
    let with_ord = copy_factor(data, "word", "word.ord").ok()?;
    let d = to_ordered_treatment(&with_ord, "word.ord", "A").ok()?;
    let series = mark_series_starts(&d, "traj", "measurement.no").ok()?;
    let opts = FitOptions {
        method: Method::Ml,
        rho: (variant == ModelVariant::Ar1).then_some(cfg.rho),
        series: Some(series),
    };
    let (full_text, reduced_text) = harness_formulas(variant);
    let full = fit(&parse_formula(&full_text).ok()?, &d, &opts).ok()?;

    let summary = methods
        .iter()
        .any(|m| matches!(m, 1..=3))
        .then(|| summarize(&full));
    let parametric_hit = summary.as_ref().map(|s| {
        s.parametric
            .iter()
            .filter(|r| r.label.starts_with("word.ord"))
            .any(|r| r.p_value < ALPHA)
    });
    let smooth_hit = summary.as_ref().map(|s| {
        s.smooth
            .iter()
            .filter(|r| r.label.contains(":word.ord"))
            .any(|r| r.p_value < ALPHA)
    });

    let mut out = Vec::with_capacity(methods.len());
    for &m in methods {
        let hit = match m {
            1 => parametric_hit.unwrap(),
            2 => smooth_hit.unwrap(),
            3 => parametric_hit.unwrap() || smooth_hit.unwrap(),
            4 => {
                let reduced = fit(&parse_formula(&reduced_text).ok()?, &d, &opts).ok()?;
                let cmp = compare_ml(&full, &reduced).ok()?;
                cmp.p_value.is_some_and(|p| p < ALPHA)
            }
            5 => {
                let ga = per_level_grid(&full, "A")?;
                let gb = per_level_grid(&full, "B")?;
                (0..ga.x.len())
                    .any(|i| ga.lower[i] > gb.upper[i] || gb.lower[i] > ga.upper[i])
            }
            6 => {
                let diff = predict_diff(
                    &full,
                    "measurement.no",
                    "word.ord",
                    "B",
                    "A",
                    &RowValues::default(),
                    true,
                    100,
                )
                .ok()?;
                diff.sig.iter().any(|&s| s)
            }
            _ => unreachable!("methods validated"),
        };
        out.push(hit);
    }
    Some(out)
}

fn per_level_grid(full: &FittedModel, level: &str) -> Option<crate::inference::PredictionGrid> {
    predict_smooth(
        full,
        "measurement.no",
        &RowValues::default(),
        Some(("word.ord", level)),
        true,
        100,
    )
    .ok()
}
