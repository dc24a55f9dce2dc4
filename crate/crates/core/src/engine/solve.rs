//! Penalized least-squares solutions.
//!
//! The selection criteria evaluate hundreds of candidate λ vectors per fit,
//! so the hot path works from a cached Gram matrix with coefficients
//! permuted penalized-first: one Cholesky of the permuted H = XᵀX + S_λ
//! then yields β̂, log|H| (all diagonal entries), and log|H_pen,pen| (the
//! leading block's entries — Cholesky factors of leading principal
//! submatrices are themselves leading blocks of the factor). The public
//! [`pls_solve`] takes the cold path in the original coefficient order and
//! additionally returns H⁻¹ for EDF accounting and posterior covariance.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{ModelError, ModelMatrices};

/// Cached per-model quantities reused across λ evaluations.
pub(crate) struct Workspace {
    pub p: usize,
    /// Permuted order: structurally penalized coordinates first.
    perm: Vec<usize>,
    xtx_p: DMatrix<f64>,
    xty_p: DVector<f64>,
    /// Per penalty: (permuted index, diagonal value) for its nonzeros.
    pen_p: Vec<Vec<(usize, f64)>>,
    /// Count of structurally penalized coordinates.
    pub n_pen: usize,
    /// Labels of terms owning unpenalized coordinates, for singularity
    /// reporting: only those directions can make H lose rank at λ > 0.
    unpenalized_labels: Vec<String>,
}

impl Workspace {
    pub fn new(m: &ModelMatrices) -> Self {
        let p = m.p();
        let ones = vec![1.0; m.penalties.len()];
        let s_struct = m.total_diag(&ones);
        let mut perm: Vec<usize> = (0..p).filter(|&i| s_struct[i] > 0.0).collect();
        let n_pen = perm.len();
        perm.extend((0..p).filter(|&i| s_struct[i] == 0.0));
        let mut inv_perm = vec![0usize; p];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }

        let xtx = m.x.tr_mul(&m.x);
        let xty = m.x.tr_mul(&m.y);
        let xtx_p = DMatrix::from_fn(p, p, |i, j| xtx[(perm[i], perm[j])]);
        let xty_p = DVector::from_fn(p, |i, _| xty[perm[i]]);

        let pen_p = m
            .penalties
            .iter()
            .map(|pen| {
                pen.range
                    .clone()
                    .zip(pen.diag.iter())
                    .filter(|(_, &d)| d != 0.0)
                    .map(|(idx, &d)| (inv_perm[idx], d))
                    .collect()
            })
            .collect();

        let unpenalized_labels = m
            .terms
            .iter()
            .filter(|t| t.range.clone().any(|i| s_struct[i] == 0.0))
            .map(|t| t.label.clone())
            .collect();

        Workspace {
            p,
            perm,
            xtx_p,
            xty_p,
            pen_p,
            n_pen,
            unpenalized_labels,
        }
    }
}

/// One criterion-path evaluation at a fixed λ.
pub(crate) struct Eval {
    /// β̂ in the original coefficient order. The criterion path doesn't read
    /// it, but the agreement tests against the cold path do.
    #[allow(dead_code)]
    pub beta: DVector<f64>,
    pub rss: f64,
    /// β̂ᵀ S_λ β̂.
    pub bsb: f64,
    pub logdet_h: f64,
    /// log determinant of the penalized-coordinate sub-block of H.
    pub logdet_h_rr: f64,
    /// log |S_λ|₊ (product over positive combined-penalty entries).
    pub logdet_s_plus: f64,
    /// Number of coordinates with zero combined penalty at this λ.
    pub mp: usize,
    /// tr[(XᵀX + S_λ)⁻¹ XᵀX]; computed only on request.
    pub tau: Option<f64>,
}

pub(crate) fn eval_at(
    m: &ModelMatrices,
    ws: &Workspace,
    lambda: &[f64],
    want_tau: bool,
) -> Result<Eval, ModelError> {
    m.check_lambda(lambda)?;
    let p = ws.p;

    // Combined penalty diagonal in permuted order.
    let mut s_p: DVector<f64> = DVector::zeros(p);
    for (pen, &l) in ws.pen_p.iter().zip(lambda) {
        if l == 0.0 {
            continue;
        }
        for &(idx, d) in pen {
            s_p[idx] += l * d;
        }
    }
    let n_pos = (0..ws.n_pen).filter(|&i| s_p[i] > 0.0).count();
    let mp = p - n_pos;
    let logdet_s_plus = (0..ws.n_pen)
        .filter(|&i| s_p[i] > 0.0)
        .map(|i| s_p[i].ln())
        .sum();

    let mut h = ws.xtx_p.clone();
    for i in 0..ws.n_pen {
        h[(i, i)] += s_p[i];
    }
    // A zero λ can empty part of the leading block; the leading-submatrix
    // shortcut for log|H_rr| then no longer applies.
    let pattern_intact = n_pos == ws.n_pen;
    let logdet_h_rr_slow = if !pattern_intact {
        let idx: Vec<usize> = (0..ws.n_pen).filter(|&i| s_p[i] > 0.0).collect();
        let h_rr = h.select_rows(idx.iter()).select_columns(idx.iter());
        let chol = Cholesky::new(h_rr)
            .ok_or_else(|| ModelError::Singular(ws.unpenalized_labels.clone()))?;
        Some(
            chol.l_dirty()
                .diagonal()
                .iter()
                .map(|v| 2.0 * v.ln())
                .sum::<f64>(),
        )
    } else {
        None
    };

    let chol = Cholesky::new(h).ok_or_else(|| singular_error(m, ws))?;
    let ldiag = chol.l_dirty().diagonal();
    let logdet_h = ldiag.iter().map(|v| 2.0 * v.ln()).sum::<f64>();
    let logdet_h_rr = logdet_h_rr_slow
        .unwrap_or_else(|| (0..ws.n_pen).map(|i| 2.0 * ldiag[i].ln()).sum());

    let beta_p = chol.solve(&ws.xty_p);
    let mut beta = DVector::zeros(p);
    for (new, &old) in ws.perm.iter().enumerate() {
        beta[old] = beta_p[new];
    }
    // Residuals computed directly from the data so near-interpolating fits
    // keep full relative accuracy in the RSS.
    let r = &m.y - &m.x * &beta;
    let rss = r.norm_squared();
    let bsb = (0..p).map(|i| s_p[i] * beta_p[i] * beta_p[i]).sum();

    let tau = want_tau.then(|| {
        let hinv = chol.inverse();
        p as f64 - (0..p).map(|i| s_p[i] * hinv[(i, i)]).sum::<f64>()
    });

    Ok(Eval {
        beta,
        rss,
        bsb,
        logdet_h,
        logdet_h_rr,
        logdet_s_plus,
        mp,
        tau,
    })
}

fn singular_error(m: &ModelMatrices, ws: &Workspace) -> ModelError {
    let labels = if ws.unpenalized_labels.is_empty() {
        m.terms.iter().map(|t| t.label.clone()).collect()
    } else {
        ws.unpenalized_labels.clone()
    };
    ModelError::Singular(labels)
}

/// Full penalized least-squares solution at a fixed λ.
#[derive(Debug, Clone)]
pub struct PlsSolution {
    pub beta: DVector<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
    pub rss: f64,
    /// φ = RSS / (n − τ).
    pub phi: f64,
    /// Total effective degrees of freedom τ = tr[(XᵀX+S_λ)⁻¹XᵀX].
    pub edf_total: f64,
    /// Per-term partial traces, aligned with the model's term table.
    pub edf_terms: Vec<f64>,
    /// (XᵀX + S_λ)⁻¹ in the original coefficient order.
    pub h_inv: DMatrix<f64>,
}

/// Solve the penalized normal equations in the original coefficient order,
/// with the full EDF breakdown and H⁻¹. Cold path: one call per fit.
pub fn pls_solve(m: &ModelMatrices, lambda: &[f64]) -> Result<PlsSolution, ModelError> {
    m.check_lambda(lambda)?;
    let n = m.n();
    let p = m.p();
    let s = m.total_diag(lambda);
    let mut h = m.x.tr_mul(&m.x);
    for i in 0..p {
        h[(i, i)] += s[i];
    }
    let xty = m.x.tr_mul(&m.y);
    let chol = Cholesky::new(h).ok_or_else(|| {
        let ws = Workspace::new(m);
        singular_error(m, &ws)
    })?;
    let beta = chol.solve(&xty);
    let h_inv = chol.inverse();
    let fitted = &m.x * &beta;
    let residuals = &m.y - &fitted;
    let rss = residuals.norm_squared();

    // Coordinate-wise EDF: 1 − s_i·(H⁻¹)_ii sums to the trace because S_λ
    // is diagonal in the working parameterization.
    let edf_terms: Vec<f64> = m
        .terms
        .iter()
        .map(|t| {
            t.range
                .clone()
                .map(|i| 1.0 - s[i] * h_inv[(i, i)])
                .sum()
        })
        .collect();
    let edf_total: f64 = (0..p).map(|i| 1.0 - s[i] * h_inv[(i, i)]).sum();
    // τ = n (a saturated, interpolating fit) leaves φ undefined; selection
    // criteria reject that region, but a direct solve still returns.
    let phi = rss / (n as f64 - edf_total);

    Ok(PlsSolution {
        beta,
        fitted,
        residuals,
        rss,
        phi,
        edf_total,
        edf_terms,
        h_inv,
    })
}
