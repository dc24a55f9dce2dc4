//! Smoothing-parameter selection scores.
//!
//! All three criteria are minimized. With diagonal working penalties the
//! combined penalty log-determinant is a plain sum of logs, and the
//! Gaussian ML/REML scores need only the Cholesky factor the solver
//! already produced:
//!
//! - GCV(λ) = n·RSS / (n − τ)²
//! - REML(λ) = Dp/(2φ) + ½(log|H| − log|S_λ|₊) + ((n−Mp)/2)·log(2πφ),
//!   with Dp = RSS + β̂ᵀS_λβ̂, φ = Dp/(n−Mp), H = XᵀX + S_λ, and Mp the
//!   number of unpenalized coefficients.
//! - ML(λ) = (n/2)·log(2πφ̂) + n/2 + ½(log|H_rr| − log|S_λ|₊), with
//!   φ̂ = Dp/n and H_rr the penalized-coordinate block of H (unpenalized
//!   effects are profiled out rather than integrated).
//!
//! AR models subtract log|det W| so scores stay comparable across ρ.

use std::f64::consts::TAU as TWO_PI;

use super::solve::{eval_at, Workspace};
use super::{Method, ModelError, ModelMatrices};

/// Evaluate the selection score for one λ vector.
pub fn criterion(m: &ModelMatrices, lambda: &[f64], method: Method) -> Result<f64, ModelError> {
    let ws = Workspace::new(m);
    criterion_ws(m, &ws, lambda, method)
}

pub(crate) fn criterion_ws(
    m: &ModelMatrices,
    ws: &Workspace,
    lambda: &[f64],
    method: Method,
) -> Result<f64, ModelError> {
    let n = m.n() as f64;
    let ev = eval_at(m, ws, lambda, matches!(method, Method::Gcv))?;
    let score = match method {
        Method::Gcv => {
            let tau = ev.tau.expect("gcv path computes tau");
            if tau >= n - 1e-7 {
                return Err(ModelError::Saturated {
                    edf: tau,
                    n: m.n(),
                });
            }
            let denom = n - tau;
            n * ev.rss / (denom * denom)
        }
        Method::Reml | Method::Freml => {
            let dp = ev.rss + ev.bsb;
            let div = n - ev.mp as f64;
            if div <= 0.0 {
                return Err(ModelError::Saturated {
                    edf: ev.mp as f64,
                    n: m.n(),
                });
            }
            let phi = dp / div;
            if !(phi.is_finite() && phi > 0.0) {
                return Err(ModelError::DegenerateScale);
            }
            dp / (2.0 * phi)
                + 0.5 * (ev.logdet_h - ev.logdet_s_plus)
                + 0.5 * div * (TWO_PI * phi).ln()
                - m.logdet_w
        }
        Method::Ml => {
            let dp = ev.rss + ev.bsb;
            let phi = dp / n;
            if !(phi.is_finite() && phi > 0.0) {
                return Err(ModelError::DegenerateScale);
            }
            0.5 * n * (TWO_PI * phi).ln() + 0.5 * n
                + 0.5 * (ev.logdet_h_rr - ev.logdet_s_plus)
                - m.logdet_w
        }
    };
    Ok(score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::engine::{assemble, pls_solve};
    use crate::formula::parse_formula;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Balanced one-way layout: g groups × per observations, group effects
    /// sd_b, residual sd_e.
    fn one_way(g: usize, per: usize, sd_b: f64, sd_e: f64, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = Dataset::new();
        let mut grp = Vec::new();
        let mut y = Vec::new();
        for i in 0..g {
            let b: f64 = sd_b * gauss(&mut rng);
            for _ in 0..per {
                grp.push(format!("g{i}"));
                y.push(10.0 + b + sd_e * gauss(&mut rng));
            }
        }
        d.add_factor_from_strings("g", &grp).unwrap();
        d.add_numeric("y", y, None).unwrap();
        d
    }

    fn gauss(rng: &mut ChaCha8Rng) -> f64 {
        // Box–Muller; plenty for test data.
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (TWO_PI * u2).cos()
    }

    /// Dense profile REML score for y ~ 1 + random intercept with
    /// correlation V₀ = I + ZZᵀ/λ:
    /// −ℓ_R(λ) = ½[(n−1)·ln φ̂ + ln|V₀| + ln(1ᵀV₀⁻¹1) + q/φ̂ + (n−1)·ln 2π]
    /// with q = yᵀP₀y and φ̂ = q/(n−1).
    fn dense_reml(z: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> f64 {
        let n = y.len();
        let v0 = DMatrix::identity(n, n) + z * z.transpose() / lambda;
        let v0inv = v0.clone().try_inverse().unwrap();
        let ones = DVector::from_element(n, 1.0);
        let a = (v0inv.clone() * &ones).dot(&ones);
        let v0iy = &v0inv * y;
        let q = v0iy.dot(y) - (ones.dot(&v0iy)).powi(2) / a;
        let phi = q / (n as f64 - 1.0);
        let logdet_v0 = v0
            .cholesky()
            .unwrap()
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| 2.0 * v.ln())
            .sum::<f64>();
        0.5 * ((n as f64 - 1.0) * phi.ln()
            + logdet_v0
            + a.ln()
            + q / phi
            + (n as f64 - 1.0) * TWO_PI.ln())
    }

    /// Dense profile ML score for the same layout:
    /// −ℓ_ML(λ) = ½[n·ln φ̂ + ln|V₀| + n + n·ln 2π], φ̂ = rᵀV₀⁻¹r/n.
    fn dense_ml(z: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> f64 {
        let n = y.len();
        let v0 = DMatrix::identity(n, n) + z * z.transpose() / lambda;
        let v0inv = v0.clone().try_inverse().unwrap();
        let ones = DVector::from_element(n, 1.0);
        let a = (v0inv.clone() * &ones).dot(&ones);
        let beta = (ones.dot(&(&v0inv * y))) / a;
        let r = y - &ones * beta;
        let q = (&v0inv * &r).dot(&r);
        let phi = q / n as f64;
        let logdet_v0 = v0
            .cholesky()
            .unwrap()
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| 2.0 * v.ln())
            .sum::<f64>();
        0.5 * (n as f64 * phi.ln() + logdet_v0 + n as f64 + n as f64 * TWO_PI.ln())
    }

    fn re_model(d: &Dataset) -> (ModelMatrices, DMatrix<f64>) {
        let f = parse_formula("y ~ s(g, bs=\"re\")").unwrap();
        let m = assemble(&f, d).unwrap();
        // Z = the random-effect indicator block
        let t = m.terms.iter().find(|t| t.label == "s(g)").unwrap();
        let z = m
            .x
            .columns(t.range.start, t.range.len())
            .clone_owned();
        (m, z)
    }

    #[test]
    fn reml_matches_dense_mixed_model_score() {
        let d = one_way(6, 5, 2.0, 1.0, 11);
        let (m, z) = re_model(&d);
        let y = DVector::from_column_slice(d.numeric("y").unwrap());
        for lambda in [0.3, 1.0, 3.7] {
            let ours = criterion(&m, &[lambda], Method::Reml).unwrap();
            let dense = dense_reml(&z, &y, lambda);
            assert!(
                (ours - dense).abs() < 1e-6 * dense.abs().max(1.0),
                "λ={lambda}: {ours} vs {dense}"
            );
        }
    }

    #[test]
    fn ml_matches_dense_mixed_model_score() {
        let d = one_way(6, 5, 2.0, 1.0, 12);
        let (m, z) = re_model(&d);
        let y = DVector::from_column_slice(d.numeric("y").unwrap());
        for lambda in [0.3, 1.0, 3.7] {
            let ours = criterion(&m, &[lambda], Method::Ml).unwrap();
            let dense = dense_ml(&z, &y, lambda);
            assert!(
                (ours - dense).abs() < 1e-6 * dense.abs().max(1.0),
                "λ={lambda}: {ours} vs {dense}"
            );
        }
    }

    #[test]
    fn freml_score_is_identical_to_reml() {
        let d = one_way(5, 4, 1.0, 0.7, 13);
        let (m, _) = re_model(&d);
        for lambda in [0.5, 2.0] {
            let a = criterion(&m, &[lambda], Method::Reml).unwrap();
            let b = criterion(&m, &[lambda], Method::Freml).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn gcv_matches_its_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut d = Dataset::new();
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| (5.0 * v).cos() + 0.2 * rng.gen_range(-1.0..1.0))
            .collect();
        d.add_numeric("x", x, None).unwrap();
        d.add_numeric("y", y, None).unwrap();
        let f = parse_formula("y ~ s(x, k=8)").unwrap();
        let m = assemble(&f, &d).unwrap();
        for lambda in [0.01, 1.0, 100.0] {
            let sol = pls_solve(&m, &[lambda]).unwrap();
            let n = m.n() as f64;
            let by_hand = n * sol.rss / (n - sol.edf_total).powi(2);
            let score = criterion(&m, &[lambda], Method::Gcv).unwrap();
            assert!((score - by_hand).abs() < 1e-10 * by_hand);
        }
    }

    #[test]
    fn gcv_saturation_is_an_error() {
        let mut d = Dataset::new();
        let x: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&v| (v * 0.9).sin()).collect();
        d.add_numeric("x", x, None).unwrap();
        d.add_numeric("y", y, None).unwrap();
        let f = parse_formula("y ~ s(x, k=8)").unwrap(); // p = n = 8
        let m = assemble(&f, &d).unwrap();
        assert!(matches!(
            criterion(&m, &[0.0], Method::Gcv),
            Err(ModelError::Saturated { .. })
        ));
    }

    #[test]
    fn perfect_fit_degenerates_the_scale() {
        let mut d = Dataset::new();
        d.add_numeric("x", vec![0.0, 1.0, 2.0, 3.0], None).unwrap();
        d.add_numeric("y", vec![1.0, 3.0, 5.0, 7.0], None).unwrap(); // exactly linear
        let f = parse_formula("y ~ x").unwrap();
        let m = assemble(&f, &d).unwrap();
        assert!(matches!(
            criterion(&m, &[], Method::Reml),
            Err(ModelError::DegenerateScale)
        ));
    }

    #[test]
    fn unpenalized_model_reml_equals_classic_linear_reml() {
        // With no penalties the REML score must reduce to the classic
        // restricted likelihood of the fixed-effects linear model.
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut d = Dataset::new();
        let x: Vec<f64> = (0..25).map(|i| i as f64 / 24.0).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| 2.0 + v + 0.4 * rng.gen_range(-1.0..1.0))
            .collect();
        d.add_numeric("x", x, None).unwrap();
        d.add_numeric("y", y, None).unwrap();
        let f = parse_formula("y ~ x").unwrap();
        let m = assemble(&f, &d).unwrap();
        let score = criterion(&m, &[], Method::Reml).unwrap();

        let n = m.n() as f64;
        let p = m.p() as f64;
        let sol = pls_solve(&m, &[]).unwrap();
        let phi = sol.rss / (n - p);
        let xtx = m.x.tr_mul(&m.x);
        let logdet_xtx = xtx
            .cholesky()
            .unwrap()
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| 2.0 * v.ln())
            .sum::<f64>();
        // −ℓ_R(σ̂²) = ½[(n−p)·ln(2πσ̂²) + ln|XᵀX| + RSS/σ̂²]: the σ^(−2p)
        // factor inside |XᵀV⁻¹X| cancels p of the n lnσ² terms from |V|.
        let classic = 0.5 * ((n - p) * (TWO_PI * phi).ln() + logdet_xtx + sol.rss / phi);
        assert!(
            (score - classic).abs() < 1e-8 * classic.abs().max(1.0),
            "{score} vs {classic}"
        );
    }
}
