//! Raw univariate bases: cubic regression splines (value-at-knot natural
//! splines), P-splines (cubic B-splines with difference penalties), and
//! rank-reduced 1-D thin-plate splines.

use nalgebra::{DMatrix, DVector};

use super::{BasisError, BlockEval, TermBlock, UniEval};
use crate::numeric::{orth_complement_two, quantile_sorted};

pub(crate) fn uniq_sorted(x: &[f64]) -> Result<Vec<f64>, BasisError> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(BasisError::NonFinite);
    }
    let mut u = x.to_vec();
    u.sort_by(f64::total_cmp);
    u.dedup();
    Ok(u)
}

// ---------------------------------------------------------------------------
// Cubic regression spline

/// Natural cubic spline in value-at-knot form: coefficient j is the curve's
/// value at knot j. Default knots at quantiles of the unique covariate
/// values, endpoints pinned at min/max. One integrated-second-derivative
/// penalty (the classic banded construction).
pub fn cr_basis(x: &[f64], k: usize, knots: Option<&[f64]>) -> Result<TermBlock, BasisError> {
    cr_basis_impl(x, k, knots, 2)
}

pub(crate) fn cr_basis_impl(
    x: &[f64],
    k: usize,
    knots: Option<&[f64]>,
    m: usize,
) -> Result<TermBlock, BasisError> {
    if k < 2 {
        return Err(BasisError::KTooSmall {
            class: "cr",
            k,
            min: 2,
        });
    }
    if !matches!(m, 1 | 2) {
        return Err(BasisError::BadPenaltyOrder(m));
    }
    let uniq = uniq_sorted(x)?;
    if uniq.len() < k {
        return Err(BasisError::TooFewUnique {
            unique: uniq.len(),
            k,
        });
    }
    let knots: Vec<f64> = match knots {
        Some(given) => {
            if given.len() != k
                || given.windows(2).any(|w| w[1] <= w[0])
                || given.iter().any(|v| !v.is_finite())
            {
                return Err(BasisError::BadKnots);
            }
            given.to_vec()
        }
        None => (0..k)
            .map(|i| quantile_sorted(&uniq, i as f64 / (k - 1) as f64))
            .collect(),
    };
    let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();

    // D maps knot values to scaled second differences; B is the tridiagonal
    // Gram matrix of the natural-spline second-derivative interpolation.
    let mut d = DMatrix::zeros(k.saturating_sub(2), k);
    let mut b = DMatrix::zeros(k.saturating_sub(2), k.saturating_sub(2));
    for i in 0..k.saturating_sub(2) {
        d[(i, i)] = 1.0 / h[i];
        d[(i, i + 1)] = -1.0 / h[i] - 1.0 / h[i + 1];
        d[(i, i + 2)] = 1.0 / h[i + 1];
        b[(i, i)] = (h[i] + h[i + 1]) / 3.0;
        if i + 1 < k - 2 {
            b[(i, i + 1)] = h[i + 1] / 6.0;
            b[(i + 1, i)] = h[i + 1] / 6.0;
        }
    }
    let f = if k > 2 {
        b.clone()
            .cholesky()
            .expect("natural-spline Gram matrix is SPD")
            .solve(&d)
    } else {
        DMatrix::zeros(0, k)
    };
    let mut f_full = DMatrix::zeros(k, k);
    for i in 0..k.saturating_sub(2) {
        for j in 0..k {
            f_full[(i + 1, j)] = f[(i, j)];
        }
    }

    let penalty = match m {
        2 => {
            let mut s = d.transpose() * &f;
            let st = s.transpose();
            s = (s + st) * 0.5;
            s
        }
        _ => {
            // ∫ f′² of the linear interpolant: Σ (β_{i+1}−β_i)²/h_i
            let mut s = DMatrix::zeros(k, k);
            for i in 0..k - 1 {
                let w = 1.0 / h[i];
                s[(i, i)] += w;
                s[(i + 1, i + 1)] += w;
                s[(i, i + 1)] -= w;
                s[(i + 1, i)] -= w;
            }
            s
        }
    };

    let mut columns = DMatrix::zeros(x.len(), k);
    for (i, &xi) in x.iter().enumerate() {
        let row = cr_row(&knots, &f_full, xi);
        for j in 0..k {
            columns[(i, j)] = row[j];
        }
    }
    Ok(TermBlock {
        label: "cr".into(),
        columns,
        penalties: vec![penalty],
        is_random: false,
        eval: BlockEval::RawUnivariate {
            var: String::new(),
            basis: UniEval::Cr { knots, f_full },
        },
    })
}

/// One basis row of the value-at-knot natural cubic spline. Exact cubic
/// interpolation between knots; linear extrapolation outside the boundary.
pub(crate) fn cr_row(knots: &[f64], f_full: &DMatrix<f64>, x: f64) -> DVector<f64> {
    let k = knots.len();
    let mut row = DVector::zeros(k);
    if x < knots[0] {
        // f(ξ₀) + (x−ξ₀)·f′(ξ₀), with γ₀ = 0
        let h = knots[1] - knots[0];
        let dx = x - knots[0];
        row[0] = 1.0 - dx / h;
        row[1] = dx / h;
        for j in 0..k {
            row[j] -= dx * h / 6.0 * f_full[(1, j)];
        }
        return row;
    }
    if x > knots[k - 1] {
        let h = knots[k - 1] - knots[k - 2];
        let dx = x - knots[k - 1];
        row[k - 1] = 1.0 + dx / h;
        row[k - 2] = -dx / h;
        for j in 0..k {
            row[j] += dx * h / 6.0 * f_full[(k - 2, j)];
        }
        return row;
    }
    let j = knots
        .partition_point(|&t| t <= x)
        .saturating_sub(1)
        .min(k - 2);
    let h = knots[j + 1] - knots[j];
    let below = knots[j + 1] - x;
    let above = x - knots[j];
    let cm = (below.powi(3) / h - h * below) / 6.0;
    let cp = (above.powi(3) / h - h * above) / 6.0;
    row[j] = below / h;
    row[j + 1] = above / h;
    for t in 0..k {
        row[t] += cm * f_full[(j, t)] + cp * f_full[(j + 1, t)];
    }
    row
}

// ---------------------------------------------------------------------------
// P-spline

/// Cubic B-splines on equally spaced knots spanning the covariate range,
/// with an order-`diff_order` coefficient-difference penalty.
pub fn ps_basis(
    x: &[f64],
    k: usize,
    degree: usize,
    diff_order: usize,
) -> Result<TermBlock, BasisError> {
    if degree != 3 {
        return Err(BasisError::PsDegree(degree));
    }
    if !matches!(diff_order, 1 | 2) {
        return Err(BasisError::BadPenaltyOrder(diff_order));
    }
    // k cubic B-splines need k+4 knots; the interior span has k−3 intervals.
    if k < 4 {
        return Err(BasisError::KTooSmall {
            class: "ps",
            k,
            min: 4,
        });
    }
    let uniq = uniq_sorted(x)?;
    if uniq.len() < k {
        return Err(BasisError::TooFewUnique {
            unique: uniq.len(),
            k,
        });
    }
    let (xmin, xmax) = (uniq[0], uniq[uniq.len() - 1]);
    let mut columns = DMatrix::zeros(x.len(), k);
    for (i, &xi) in x.iter().enumerate() {
        let row = ps_row(xmin, xmax, k, xi);
        for j in 0..k {
            columns[(i, j)] = row[j];
        }
    }
    let rows = k - diff_order;
    let mut dmat = DMatrix::zeros(rows, k);
    for i in 0..rows {
        match diff_order {
            1 => {
                dmat[(i, i)] = -1.0;
                dmat[(i, i + 1)] = 1.0;
            }
            _ => {
                dmat[(i, i)] = 1.0;
                dmat[(i, i + 1)] = -2.0;
                dmat[(i, i + 2)] = 1.0;
            }
        }
    }
    let penalty = dmat.transpose() * &dmat;
    Ok(TermBlock {
        label: "ps".into(),
        columns,
        penalties: vec![penalty],
        is_random: false,
        eval: BlockEval::RawUnivariate {
            var: String::new(),
            basis: UniEval::Ps { xmin, xmax, k },
        },
    })
}

/// One row of the cubic B-spline basis; x is clamped to the training range.
pub(crate) fn ps_row(xmin: f64, xmax: f64, k: usize, x: f64) -> DVector<f64> {
    let x = x.clamp(xmin, xmax);
    let d = (xmax - xmin) / (k - 3) as f64;
    let knot = |j: isize| xmin + (j - 3) as f64 * d;
    // interior interval index μ ∈ [3, k−1] with t_μ ≤ x < t_{μ+1}
    let mu = (((x - xmin) / d).floor() as isize + 3).clamp(3, k as isize - 1) as usize;
    // Cox–de Boor (de Boor's algorithm for all active functions)
    let p = 3;
    let mut values = [0.0f64; 4];
    let mut left = [0.0f64; 4];
    let mut right = [0.0f64; 4];
    values[0] = 1.0;
    for j in 1..=p {
        left[j] = x - knot(mu as isize + 1 - j as isize);
        right[j] = knot(mu as isize + j as isize) - x;
        let mut saved = 0.0;
        for r in 0..j {
            let tmp = values[r] / (right[r + 1] + left[j - r]);
            values[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        values[j] = saved;
    }
    let mut row = DVector::zeros(k);
    for (i, &v) in values.iter().enumerate() {
        row[mu - 3 + i] = v;
    }
    row
}

// ---------------------------------------------------------------------------
// Thin-plate regression spline (1-D)

/// Rank-reduced thin-plate spline: radial basis r³ about the unique
/// covariate values, constrained orthogonal to {1, x}, eigen-reduced to the
/// k−2 leading penalty modes, plus the 2-dimensional {1, x} null space.
/// The penalty is diagonal in these coordinates.
pub fn tp_basis(x: &[f64], k: usize) -> Result<TermBlock, BasisError> {
    if k < 2 {
        return Err(BasisError::KTooSmall {
            class: "tp",
            k,
            min: 2,
        });
    }
    let uniq = uniq_sorted(x)?;
    let mu = uniq.len();
    if mu < k {
        return Err(BasisError::TooFewUnique { unique: mu, k });
    }
    let eta = |r: f64| r.powi(3);
    let kr = k - 2; // radial (penalized) dimension
    let (w, lambda) = if kr > 0 {
        let e = DMatrix::from_fn(mu, mu, |i, j| eta((uniq[i] - uniq[j]).abs()));
        let ones = DVector::from_element(mu, 1.0);
        let uvec = DVector::from_column_slice(&uniq);
        let z = orth_complement_two(&ones, &uvec);
        let m = z.tr_mul(&e) * &z;
        let (vals, vecs) = crate::numeric::eigh_descending(&m, 1e-12);
        let v = vecs.columns(0, kr).into_owned();
        let w = &z * v;
        let lambda = DVector::from_fn(kr, |i, _| vals[i].max(0.0));
        (w, lambda)
    } else {
        (DMatrix::zeros(mu, 0), DVector::zeros(0))
    };

    let e_data = DMatrix::from_fn(x.len(), mu, |i, j| eta((x[i] - uniq[j]).abs()));
    let mut radial = &e_data * &w;

    // rescale radial columns to RMS 1 on the data; penalty follows ∝ 1/s²
    let mut w = w;
    let mut lambda = lambda;
    for j in 0..kr {
        let s = (radial.column(j).norm_squared() / x.len() as f64).sqrt();
        if s > 0.0 {
            radial.column_mut(j).scale_mut(1.0 / s);
            w.column_mut(j).scale_mut(1.0 / s);
            lambda[j] /= s * s;
        }
    }

    let n = x.len();
    let mut columns = DMatrix::zeros(n, k);
    columns.view_mut((0, 0), (n, kr)).copy_from(&radial);
    for i in 0..n {
        columns[(i, kr)] = 1.0;
        columns[(i, kr + 1)] = x[i];
    }
    let mut diag = DVector::zeros(k);
    for j in 0..kr {
        diag[j] = lambda[j];
    }
    Ok(TermBlock {
        label: "tp".into(),
        columns,
        penalties: vec![DMatrix::from_diagonal(&diag)],
        is_random: false,
        eval: BlockEval::RawUnivariate {
            var: String::new(),
            basis: UniEval::Tp { points: uniq, w },
        },
    })
}

pub(crate) fn tp_row(points: &[f64], w: &DMatrix<f64>, x: f64) -> DVector<f64> {
    let kr = w.ncols();
    let k = kr + 2;
    let mut row = DVector::zeros(k);
    if kr > 0 {
        let r = DVector::from_fn(points.len(), |j, _| (x - points[j]).abs().powi(3));
        let radial = w.tr_mul(&r);
        for j in 0..kr {
            row[j] = radial[j];
        }
    }
    row[kr] = 1.0;
    row[kr + 1] = x;
    row
}
