//! Small numeric helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// Type-7 quantile (linear interpolation) of an ascending-sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let p = p.clamp(0.0, 1.0);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = lo.min(sorted.len() - 2) + 1;
    let w = h - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

pub fn median_sorted(sorted: &[f64]) -> f64 {
    quantile_sorted(sorted, 0.5)
}

/// `n` equally spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Symmetric eigendecomposition with eigenvalues sorted descending and
/// tiny values (relative to the largest magnitude) clamped to exactly 0.
pub fn eigh_descending(m: &DMatrix<f64>, rel_tol: f64) -> (DVector<f64>, DMatrix<f64>) {
    let dim = m.nrows();
    if dim == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let se = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| se.eigenvalues[b].total_cmp(&se.eigenvalues[a]));
    let scale = se.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut vals = DVector::zeros(dim);
    let mut vecs = DMatrix::zeros(dim, dim);
    for (j, &src) in order.iter().enumerate() {
        let v = se.eigenvalues[src];
        vals[j] = if v.abs() <= rel_tol * scale { 0.0 } else { v };
        vecs.set_column(j, &se.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Householder reflector sending `c` to a multiple of e₁:
/// H = I − beta·v·vᵀ, with the LAPACK sign convention (no cancellation).
/// Returns `(v, beta)`; beta = 0 when `c` is already a multiple of e₁.
pub fn householder_reflector(c: &DVector<f64>) -> (DVector<f64>, f64) {
    let mut v = c.clone();
    let norm = c.norm();
    let tail = c.rows(1, c.len() - 1).norm();
    if tail == 0.0 {
        v.fill(0.0);
        return (v, 0.0);
    }
    // sign chosen so v[0] = c[0] + sign(c[0])·‖c‖ avoids cancellation
    let sigma = if c[0] >= 0.0 { norm } else { -norm };
    v[0] = c[0] + sigma;
    let beta = 2.0 / v.norm_squared();
    (v, beta)
}

/// Orthonormal basis of the complement of span{c}: a k×(k−1) matrix Z with
/// ZᵀZ = I and cᵀZ = 0. Built from the Householder reflector of `c`.
pub fn orth_complement(c: &DVector<f64>) -> DMatrix<f64> {
    let k = c.len();
    let (v, beta) = householder_reflector(c);
    let mut z = DMatrix::zeros(k, k - 1);
    for j in 0..k - 1 {
        for i in 0..k {
            let e = if i == j + 1 { 1.0 } else { 0.0 };
            z[(i, j)] = e - beta * v[i] * v[j + 1];
        }
    }
    z
}

/// Orthonormal basis of the complement of span{c1, c2} (k×(k−2)), via two
/// nested Householder reflections. `c1`, `c2` must be linearly independent.
pub fn orth_complement_two(c1: &DVector<f64>, c2: &DVector<f64>) -> DMatrix<f64> {
    let k = c1.len();
    let (v1, b1) = householder_reflector(c1);
    // H1·c2, then reflect its tail onto e2
    let h1c2 = c2 - &v1 * (b1 * v1.dot(c2));
    let tail = DVector::from_fn(k - 1, |i, _| h1c2[i + 1]);
    let (v2t, b2) = householder_reflector(&tail);
    let mut z = DMatrix::zeros(k, k - 2);
    for j in 0..k - 2 {
        // start from e_{j+2}, apply H2 (embedded in rows 1..), then H1
        let mut col = DVector::zeros(k);
        col[j + 2] = 1.0;
        let dot2 = b2 * v2t[j + 1];
        for i in 1..k {
            col[i] -= dot2 * v2t[i - 1];
        }
        let dot1 = b1 * v1.dot(&col);
        for i in 0..k {
            col[i] -= dot1 * v1[i];
        }
        z.set_column(j, &col);
    }
    z
}

/// Matrix payload for serialization: row-major, with dimensions.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MatrixData {
    pub nrows: usize,
    pub ncols: usize,
    pub data: Vec<f64>,
}

impl MatrixData {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        MatrixData {
            nrows: m.nrows(),
            ncols: m.ncols(),
            data,
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.nrows, self.ncols, &self.data)
    }
}

/// serde adapter: store a `DMatrix<f64>` as row-major [`MatrixData`].
pub mod serde_matrix {
    use super::*;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        MatrixData::from_matrix(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        Ok(MatrixData::deserialize(d)?.to_matrix())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_endpoints_pinned() {
        let v = [1.0, 2.0, 5.0, 9.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 9.0);
        assert_eq!(quantile_sorted(&v, 0.5), 3.5);
    }

    #[test]
    fn linspace_inclusive() {
        let g = linspace(0.0, 10.0, 11);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[10], 10.0);
        assert_eq!(g.len(), 11);
    }

    #[test]
    fn eigh_sorts_and_clamps() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1e-14]);
        let (vals, _) = eigh_descending(&m, 1e-9);
        assert_eq!(vals[0], 2.0);
        assert_eq!(vals[1], 0.0);
    }

    #[test]
    fn matrix_data_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(MatrixData::from_matrix(&m).to_matrix(), m);
    }

    #[test]
    fn complement_is_orthonormal_and_annihilates() {
        let c = DVector::from_vec(vec![3.0, -1.0, 2.0, 0.5]);
        let z = orth_complement(&c);
        assert_eq!(z.shape(), (4, 3));
        assert!(((&z).transpose() * &z - DMatrix::identity(3, 3)).norm() < 1e-12);
        assert!((c.transpose() * &z).norm() < 1e-12);

        let c2 = DVector::from_vec(vec![1.0, 1.0, -4.0, 2.0]);
        let z2 = orth_complement_two(&c, &c2);
        assert_eq!(z2.shape(), (4, 2));
        assert!(((&z2).transpose() * &z2 - DMatrix::identity(2, 2)).norm() < 1e-12);
        assert!((c.transpose() * &z2).norm() < 1e-12);
        assert!((c2.transpose() * &z2).norm() < 1e-12);
    }
}
