//! Smoothing-parameter optimization.
//!
//! Derivative-free cyclic coordinate descent on log λ over [−12, 12],
//! restarted from three fixed points (all-coordinates −4, 0, +4) to escape
//! shallow local minima. Each coordinate step brackets downhill from the
//! current point and then golden-sections the bracket; early cycles use a
//! coarse tolerance, switching to a fine one as steps shrink. Everything
//! is deterministic: fixed starts, fixed search order, no randomness.

use std::collections::HashMap;

use super::criterion::criterion_ws;
use super::solve::Workspace;
use super::{Method, ModelError, ModelMatrices};

pub(crate) const LOG_LO: f64 = -12.0;
pub(crate) const LOG_HI: f64 = 12.0;
const MAX_CYCLES: usize = 60;
const COARSE_TOL: f64 = 1e-3;
const FINE_TOL: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct Optimized {
    pub lambda: Vec<f64>,
    pub score: f64,
    /// False when the cycle cap was reached before the step/score
    /// tolerances; the returned point is then best-so-far.
    pub converged: bool,
}

struct Searcher<'a> {
    m: &'a ModelMatrices,
    ws: &'a Workspace,
    method: Method,
    cache: HashMap<Vec<u64>, f64>,
    first_err: Option<ModelError>,
}

impl Searcher<'_> {
    /// Score at a log-λ point; evaluation failures (saturation, degenerate
    /// scale) become +∞ so the search simply avoids that region.
    fn score(&mut self, logl: &[f64]) -> f64 {
        let key: Vec<u64> = logl.iter().map(|v| v.to_bits()).collect();
        if let Some(&s) = self.cache.get(&key) {
            return s;
        }
        let lambda: Vec<f64> = logl.iter().map(|v| v.exp()).collect();
        let s = match criterion_ws(self.m, self.ws, &lambda, self.method) {
            Ok(v) if v.is_finite() => v,
            Ok(_) => f64::INFINITY,
            Err(e) => {
                if self.first_err.is_none() {
                    self.first_err = Some(e);
                }
                f64::INFINITY
            }
        };
        self.cache.insert(key, s);
        s
    }

    fn score_coord(&mut self, base: &[f64], j: usize, t: f64) -> f64 {
        let mut pt = base.to_vec();
        pt[j] = t;
        self.score(&pt)
    }
}

/// Golden-section search on coordinate `j` over [lo, hi]; returns the best
/// point found once the bracket is narrower than `tol`.
fn golden(
    s: &mut Searcher,
    base: &[f64],
    j: usize,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_8;
    const INVPHI2: f64 = 0.381_966_011_250_105_2;
    let mut x1 = lo + INVPHI2 * (hi - lo);
    let mut x2 = lo + INVPHI * (hi - lo);
    let mut f1 = s.score_coord(base, j, x1);
    let mut f2 = s.score_coord(base, j, x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = lo + INVPHI2 * (hi - lo);
            f1 = s.score_coord(base, j, x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INVPHI * (hi - lo);
            f2 = s.score_coord(base, j, x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Line minimization on coordinate `j`: expand a bracket downhill from the
/// current point, then golden-section it. Never returns a worse point than
/// (t0, f0).
fn line_min(s: &mut Searcher, base: &[f64], j: usize, f0: f64, tol: f64) -> (f64, f64) {
    let t0 = base[j];
    let mut step = 0.5;
    let mut a = (t0 - step).max(LOG_LO);
    let mut b = t0;
    let mut fa = s.score_coord(base, j, a);
    let mut fb = f0;
    let mut c = (t0 + step).min(LOG_HI);
    let mut fc = s.score_coord(base, j, c);
    // Walk the triple downhill until the middle is lowest or a bound stops
    // the expansion.
    while !(fb <= fa && fb <= fc) {
        if fa < fc {
            if a <= LOG_LO {
                break;
            }
            c = b;
            fc = fb;
            b = a;
            fb = fa;
            step *= 2.0;
            a = (b - step).max(LOG_LO);
            fa = s.score_coord(base, j, a);
        } else {
            if c >= LOG_HI {
                break;
            }
            a = b;
            fa = fb;
            b = c;
            fb = fc;
            step *= 2.0;
            c = (b + step).min(LOG_HI);
            fc = s.score_coord(base, j, c);
        }
    }
    let (t, f) = golden(s, base, j, a, c, tol);
    if f <= fb {
        (t, f)
    } else {
        (b, fb)
    }
}

/// One multi-cycle coordinate descent from a fixed start.
fn descend(s: &mut Searcher, start: Vec<f64>) -> (Vec<f64>, f64, bool) {
    let d = start.len();
    let mut t = start;
    let mut f_cur = s.score(&t);
    let mut fine = false;
    for _ in 0..MAX_CYCLES {
        let f_prev = f_cur;
        let mut max_step = 0.0f64;
        for j in 0..d {
            let tol = if fine { FINE_TOL } else { COARSE_TOL };
            let (tj, fj) = line_min(s, &t, j, f_cur, tol);
            if fj < f_cur {
                max_step = max_step.max((tj - t[j]).abs());
                t[j] = tj;
                f_cur = fj;
            }
        }
        let rel = (f_prev - f_cur).abs() / f_cur.abs().max(1.0);
        if fine && max_step < 1e-4 && rel < 1e-7 {
            return (t, f_cur, true);
        }
        if !fine && max_step < 5.0 * COARSE_TOL {
            fine = true;
        }
    }
    (t, f_cur, false)
}

/// Select λ by minimizing the criterion. Models with no penalties reduce
/// to a single plain solve.
pub fn optimize_lambda(m: &ModelMatrices, method: Method) -> Result<Optimized, ModelError> {
    let ws = Workspace::new(m);
    optimize_ws(m, &ws, method)
}

pub(crate) fn optimize_ws(
    m: &ModelMatrices,
    ws: &Workspace,
    method: Method,
) -> Result<Optimized, ModelError> {
    let d = m.penalties.len();
    if d == 0 {
        let score = criterion_ws(m, ws, &[], method)?;
        return Ok(Optimized {
            lambda: vec![],
            score,
            converged: true,
        });
    }
    let mut s = Searcher {
        m,
        ws,
        method,
        cache: HashMap::new(),
        first_err: None,
    };
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for start in [-4.0, 0.0, 4.0] {
        let (t, f, ok) = descend(&mut s, vec![start; d]);
        if best.as_ref().map_or(true, |(_, fb, _)| f < *fb) {
            best = Some((t, f, ok));
        }
    }
    let (t, score, converged) = best.expect("three starts ran");
    if !score.is_finite() {
        return Err(s.first_err.unwrap_or(ModelError::NoFiniteScore));
    }
    Ok(Optimized {
        lambda: t.iter().map(|v| v.exp()).collect(),
        score,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::engine::{assemble, criterion, pls_solve};
    use crate::formula::parse_formula;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data_with(n: usize, seed: u64, f: impl Fn(f64) -> f64, sd: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = Dataset::new();
        let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| f(v) + sd * rng.gen_range(-1.0..1.0))
            .collect();
        d.add_numeric("x", x, None).unwrap();
        d.add_numeric("y", y, None).unwrap();
        d
    }

    #[test]
    fn optimization_is_deterministic() {
        let d = data_with(60, 21, |v| (7.0 * v).sin(), 0.3);
        let f = parse_formula("y ~ s(x, k=12)").unwrap();
        let m = assemble(&f, &d).unwrap();
        let a = optimize_lambda(&m, Method::Reml).unwrap();
        let b = optimize_lambda(&m, Method::Reml).unwrap();
        assert_eq!(a.lambda, b.lambda);
        assert_eq!(a.score, b.score);
        assert!(a.converged);
    }

    #[test]
    fn optimum_beats_a_lambda_grid() {
        let d = data_with(50, 22, |v| (4.0 * v).sin(), 0.25);
        let f = parse_formula("y ~ s(x, k=10)").unwrap();
        let m = assemble(&f, &d).unwrap();
        for method in [Method::Gcv, Method::Ml, Method::Reml] {
            let opt = optimize_lambda(&m, method).unwrap();
            for i in 0..25 {
                let lam = (-11.0 + i as f64).exp();
                let grid = criterion(&m, &[lam], method).unwrap();
                assert!(
                    opt.score <= grid + 1e-7 * grid.abs().max(1.0),
                    "{method:?}: grid λ={lam} scored {grid} < {}",
                    opt.score
                );
            }
        }
    }

    #[test]
    fn linear_truth_shrinks_to_line() {
        let d = data_with(60, 23, |v| 2.0 - 3.0 * v, 0.2);
        let f = parse_formula("y ~ s(x, k=10)").unwrap();
        let m = assemble(&f, &d).unwrap();
        let opt = optimize_lambda(&m, Method::Reml).unwrap();
        let sol = pls_solve(&m, &opt.lambda).unwrap();
        assert!(
            sol.edf_terms[1] < 1.3,
            "smooth EDF {} on linear truth",
            sol.edf_terms[1]
        );
    }

    #[test]
    fn no_penalties_short_circuits() {
        let d = data_with(30, 24, |v| 1.0 + v, 0.2);
        let f = parse_formula("y ~ x").unwrap();
        let m = assemble(&f, &d).unwrap();
        let opt = optimize_lambda(&m, Method::Reml).unwrap();
        assert!(opt.lambda.is_empty());
        assert!(opt.converged);
        assert!(opt.score.is_finite());
    }

    #[test]
    fn two_penalty_model_optimizes_both_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let mut d = Dataset::new();
        let n = 80;
        let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .zip(&z)
            .map(|(&a, &b)| (6.0 * a).sin() + 2.0 * b + 0.3 * rng.gen_range(-1.0..1.0))
            .collect();
        d.add_numeric("x", x, None).unwrap();
        d.add_numeric("z", z, None).unwrap();
        d.add_numeric("y", y, None).unwrap();
        let f = parse_formula("y ~ s(x, k=8) + s(z, k=8)").unwrap();
        let m = assemble(&f, &d).unwrap();
        let opt = optimize_lambda(&m, Method::Reml).unwrap();
        assert!(opt.converged);
        let sol = pls_solve(&m, &opt.lambda).unwrap();
        // wiggly signal keeps several EDF; the linear-in-z term shrinks
        assert!(sol.edf_terms[1] > 3.0);
        assert!(sol.edf_terms[2] < 1.5);
    }
}
