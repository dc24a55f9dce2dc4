//! Design-matrix blocks and penalties for every smooth class.
//!
//! Raw univariate constructors ([`cr_basis`], [`ps_basis`], [`tp_basis`])
//! return pre-constraint blocks. [`apply_centering_constraint`] absorbs the
//! sum-to-zero identifiability constraint and simultaneously rotates the
//! block so its penalty becomes diagonal; grouped and tensor constructors
//! return blocks already in that working parameterization. Downstream code
//! relies on the invariant that every assembled block's penalties are
//! diagonal, which keeps the smoothing-criterion log-determinants cheap.
//! Fitted values, EDF, and selection scores are unchanged by these
//! within-block orthogonal reparameterizations; each block records the
//! transform needed to evaluate itself at new covariate values.

mod grouped;
mod tensor;
mod univariate;

pub use grouped::{by_factor_smooth, by_ordered_difference_smooth, fs_basis, re_basis, UniSpec};
pub use tensor::{ti_block, ti_block_by};
pub use univariate::{cr_basis, ps_basis, tp_basis};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::formula::BasisKind;
use crate::numeric::{eigh_descending, orth_complement, serde_matrix};

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("{unique} unique covariate values are too few measurements to support k = {k} basis functions")]
    TooFewUnique { unique: usize, k: usize },
    #[error("k = {k} is too small for a {class} basis (minimum {min})")]
    KTooSmall {
        class: &'static str,
        k: usize,
        min: usize,
    },
    #[error("m must be 1 or 2, found {0}")]
    BadPenaltyOrder(usize),
    #[error("bs=\"tp\" supports m = 2 only")]
    TpPenaltyOrder,
    #[error("ps degree is fixed at 3, found {0}")]
    PsDegree(usize),
    #[error("explicit knots must be strictly increasing and match k")]
    BadKnots,
    #[error("random-effect factor `{0}` has a single level")]
    SingleLevel(String),
    #[error("factor-smooth level `{level}` has fewer than 2 distinct `{var}` values")]
    LevelTooThin { level: String, var: String },
    #[error("non-finite covariate value")]
    NonFinite,
}

/// One design-matrix block plus its penalties and evaluation recipe.
///
/// Penalties are stored as full symmetric PSD matrices; for constrained
/// (working-coordinate) blocks they are diagonal by construction.
#[derive(Debug, Clone)]
pub struct TermBlock {
    pub label: String,
    pub columns: DMatrix<f64>,
    pub penalties: Vec<DMatrix<f64>>,
    pub is_random: bool,
    pub eval: BlockEval,
}

impl TermBlock {
    pub fn ncols(&self) -> usize {
        self.columns.ncols()
    }

    /// Rename the covariate in the evaluation recipe and the display label.
    pub fn with_var(mut self, var: &str) -> Self {
        match &mut self.eval {
            BlockEval::Smooth { var: v, .. } => *v = var.to_string(),
            BlockEval::RawUnivariate { var: v, .. } => *v = var.to_string(),
            _ => {}
        }
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

/// Restriction of a block to one factor level (by-smooth masking).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByLevel {
    pub factor: String,
    pub level: String,
}

/// Raw univariate basis evaluator: rebuilds one pre-constraint basis row at
/// an arbitrary covariate value. Serializable so fitted models can predict
/// without the training data.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "lowercase")]
pub enum UniEval {
    /// Cubic regression spline in value-at-knot form. `f_full` maps knot
    /// values to knot second derivatives (first/last rows zero). Linear
    /// extrapolation beyond the boundary knots.
    Cr {
        knots: Vec<f64>,
        #[serde(with = "serde_matrix")]
        f_full: DMatrix<f64>,
    },
    /// Cubic B-splines on equally spaced knots; inputs clamped to the
    /// training range.
    Ps { xmin: f64, xmax: f64, k: usize },
    /// Rank-reduced thin-plate: radial part r³ about the training points,
    /// projected by `w`, plus the {1, x} null space.
    Tp {
        points: Vec<f64>,
        #[serde(with = "serde_matrix")]
        w: DMatrix<f64>,
    },
}

impl UniEval {
    /// Basis dimension k of the pre-constraint block.
    pub fn k(&self) -> usize {
        match self {
            UniEval::Cr { knots, .. } => knots.len(),
            UniEval::Ps { k, .. } => *k,
            UniEval::Tp { w, .. } => w.ncols() + 2,
        }
    }

    pub fn row(&self, x: f64) -> DVector<f64> {
        match self {
            UniEval::Cr { knots, f_full } => univariate::cr_row(knots, f_full, x),
            UniEval::Ps { xmin, xmax, k } => univariate::ps_row(*xmin, *xmax, *k, x),
            UniEval::Tp { points, w } => univariate::tp_row(points, w, x),
        }
    }
}

/// How to rebuild one block of a model-matrix row for prediction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockEval {
    Intercept,
    Linear {
        var: String,
    },
    /// Treatment dummies: one column per non-reference level, level order.
    FactorDummies {
        factor: String,
        levels: Vec<String>,
        reference: usize,
    },
    /// Pre-constraint univariate basis (intermediate; not used in models).
    RawUnivariate {
        var: String,
        basis: UniEval,
    },
    /// Constrained smooth: row = basis.row(x)ᵀ · transform, optionally
    /// masked by a factor level.
    Smooth {
        var: String,
        basis: UniEval,
        #[serde(with = "serde_matrix")]
        transform: DMatrix<f64>,
        by: Option<ByLevel>,
    },
    /// Random intercept (or × slope) indicators, one column per level.
    RandomEffect {
        factor: String,
        levels: Vec<String>,
        slope_var: Option<String>,
    },
    /// Per-level inner basis rotated by `rotation`, level-major layout.
    FactorSmooth {
        var: String,
        factor: String,
        levels: Vec<String>,
        basis: UniEval,
        #[serde(with = "serde_matrix")]
        rotation: DMatrix<f64>,
    },
    /// Tensor interaction of two constrained margins.
    Tensor {
        var1: String,
        basis1: UniEval,
        #[serde(with = "serde_matrix")]
        transform1: DMatrix<f64>,
        var2: String,
        basis2: UniEval,
        #[serde(with = "serde_matrix")]
        transform2: DMatrix<f64>,
        by: Option<ByLevel>,
    },
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction needs a value for `{0}`")]
    MissingValue(String),
    #[error("prediction needs a level for factor `{0}`")]
    MissingLevel(String),
    #[error("factor `{factor}` has no level `{level}`")]
    UnknownLevel { factor: String, level: String },
}

/// One virtual data row for prediction: name → value / level.
pub trait PredictorRow {
    fn numeric(&self, name: &str) -> Option<f64>;
    fn level(&self, name: &str) -> Option<&str>;
}

impl BlockEval {
    /// Number of columns the block contributes.
    pub fn width(&self) -> usize {
        match self {
            BlockEval::Intercept | BlockEval::Linear { .. } => 1,
            BlockEval::FactorDummies { levels, .. } => levels.len() - 1,
            BlockEval::RawUnivariate { basis, .. } => basis.k(),
            BlockEval::Smooth { transform, .. } => transform.ncols(),
            BlockEval::RandomEffect { levels, .. } => levels.len(),
            BlockEval::FactorSmooth { levels, basis, .. } => levels.len() * basis.k(),
            BlockEval::Tensor {
                transform1,
                transform2,
                ..
            } => transform1.ncols() * transform2.ncols(),
        }
    }

    /// Fill `out` (length `width()`) with this block's row at `env`.
    pub fn row_into(&self, env: &dyn PredictorRow, out: &mut [f64]) -> Result<(), EvalError> {
        debug_assert_eq!(out.len(), self.width());
        out.fill(0.0);
        let need_num = |name: &str| {
            env.numeric(name)
                .ok_or_else(|| EvalError::MissingValue(name.to_string()))
        };
        let need_level = |name: &str| {
            env.level(name)
                .ok_or_else(|| EvalError::MissingLevel(name.to_string()))
        };
        let find_level = |levels: &[String], factor: &str, level: &str| {
            levels
                .iter()
                .position(|l| l == level)
                .ok_or_else(|| EvalError::UnknownLevel {
                    factor: factor.to_string(),
                    level: level.to_string(),
                })
        };
        match self {
            BlockEval::Intercept => out[0] = 1.0,
            BlockEval::Linear { var } => out[0] = need_num(var)?,
            BlockEval::FactorDummies {
                factor,
                levels,
                reference,
            } => {
                let lev = find_level(levels, factor, need_level(factor)?)?;
                if lev != *reference {
                    let pos = lev - usize::from(lev > *reference);
                    out[pos] = 1.0;
                }
            }
            BlockEval::RawUnivariate { var, basis } => {
                let row = basis.row(need_num(var)?);
                out.copy_from_slice(row.as_slice());
            }
            BlockEval::Smooth {
                var,
                basis,
                transform,
                by,
            } => {
                let mask = match by {
                    None => 1.0,
                    Some(b) => {
                        // unknown levels simply do not activate the block
                        f64::from(need_level(&b.factor)? == b.level)
                    }
                };
                if mask != 0.0 {
                    let raw = basis.row(need_num(var)?);
                    let row = transform.tr_mul(&raw);
                    out.copy_from_slice(row.as_slice());
                }
            }
            BlockEval::RandomEffect {
                factor,
                levels,
                slope_var,
            } => {
                let lev = find_level(levels, factor, need_level(factor)?)?;
                out[lev] = match slope_var {
                    None => 1.0,
                    Some(v) => need_num(v)?,
                };
            }
            BlockEval::FactorSmooth {
                var,
                factor,
                levels,
                basis,
                rotation,
            } => {
                let lev = find_level(levels, factor, need_level(factor)?)?;
                let raw = basis.row(need_num(var)?);
                let rotated = rotation.tr_mul(&raw);
                let k = basis.k();
                out[lev * k..(lev + 1) * k].copy_from_slice(rotated.as_slice());
            }
            BlockEval::Tensor {
                var1,
                basis1,
                transform1,
                var2,
                basis2,
                transform2,
                by,
            } => {
                let mask = match by {
                    None => 1.0,
                    Some(b) => f64::from(need_level(&b.factor)? == b.level),
                };
                if mask != 0.0 {
                    let m1 = transform1.tr_mul(&basis1.row(need_num(var1)?));
                    let m2 = transform2.tr_mul(&basis2.row(need_num(var2)?));
                    for i in 0..m1.len() {
                        for j in 0..m2.len() {
                            out[i * m2.len() + j] = m1[i] * m2[j];
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// A plain map-backed [`PredictorRow`].
#[derive(Debug, Default, Clone)]
pub struct RowValues {
    pub numerics: std::collections::HashMap<String, f64>,
    pub levels: std::collections::HashMap<String, String>,
}

impl PredictorRow for RowValues {
    fn numeric(&self, name: &str) -> Option<f64> {
        self.numerics.get(name).copied()
    }
    fn level(&self, name: &str) -> Option<&str> {
        self.levels.get(name).map(String::as_str)
    }
}

/// An actual dataset row as a [`PredictorRow`].
pub struct DatasetRow<'a> {
    pub data: &'a Dataset,
    pub row: usize,
}

impl PredictorRow for DatasetRow<'_> {
    fn numeric(&self, name: &str) -> Option<f64> {
        self.data.numeric(name).ok().map(|v| v[self.row])
    }
    fn level(&self, name: &str) -> Option<&str> {
        self.data
            .factor(name)
            .ok()
            .map(|f| f.levels[f.codes[self.row] as usize].as_str())
    }
}

/// Absorb the sum-to-zero constraint Σᵢ f(xᵢ) = 0 into a pre-constraint
/// univariate block and rotate the result so the penalty is diagonal.
/// One column is removed; the combined k×(k−1) transform is recorded for
/// prediction. Masked (by-level) blocks pass their mask through `by`.
pub fn apply_centering_constraint(block: TermBlock) -> TermBlock {
    constrain_with_by(block, None, None)
}

/// Core of constraint absorption: mask rows (optional), absorb the
/// sum-to-zero constraint over the surviving rows, rotate to a diagonal
/// penalty. Returns (transformed columns, penalty diagonal, k×(k−1)
/// transform).
pub(crate) fn center_pieces(
    columns: &DMatrix<f64>,
    penalty: &DMatrix<f64>,
    mask: Option<&[bool]>,
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let k = columns.ncols();
    assert!(k >= 2, "cannot center a {k}-column block");
    let mut masked = columns.clone();
    if let Some(keep) = mask {
        for (i, &flag) in keep.iter().enumerate() {
            if !flag {
                masked.row_mut(i).fill(0.0);
            }
        }
    }
    let mut colsums = DVector::zeros(k);
    for j in 0..k {
        colsums[j] = masked.column(j).sum();
    }
    let z = orth_complement(&colsums);
    let s_z = z.tr_mul(penalty) * &z;
    let (d, u) = eigh_descending(&s_z, 1e-12);
    let transform = &z * &u;
    let out = &masked * &transform;
    (out, d, transform)
}

pub(crate) fn constrain_with_by(
    block: TermBlock,
    mask: Option<&[bool]>,
    by: Option<ByLevel>,
) -> TermBlock {
    assert_eq!(block.penalties.len(), 1, "univariate blocks have 1 penalty");
    let (columns, d, transform) = center_pieces(&block.columns, &block.penalties[0], mask);
    let (var, basis) = match block.eval {
        BlockEval::RawUnivariate { var, basis } => (var, basis),
        other => panic!("centering applies to raw univariate blocks, got {other:?}"),
    };
    TermBlock {
        label: block.label,
        columns,
        penalties: vec![DMatrix::from_diagonal(&d)],
        is_random: false,
        eval: BlockEval::Smooth {
            var,
            basis,
            transform,
            by,
        },
    }
}

/// Build the raw (pre-constraint) univariate block for a basis class.
pub(crate) fn raw_univariate(
    kind: BasisKind,
    x: &[f64],
    k: usize,
    m: usize,
) -> Result<TermBlock, BasisError> {
    match kind {
        BasisKind::Cr => cr_basis_m(x, k, None, m),
        BasisKind::Ps => ps_basis(x, k, 3, m),
        BasisKind::Tp => {
            if m != 2 {
                return Err(BasisError::TpPenaltyOrder);
            }
            tp_basis(x, k)
        }
    }
}

/// cr with explicit penalty order (m = 1 for first-derivative penalties).
pub(crate) fn cr_basis_m(
    x: &[f64],
    k: usize,
    knots: Option<&[f64]>,
    m: usize,
) -> Result<TermBlock, BasisError> {
    univariate::cr_basis_impl(x, k, knots, m)
}
