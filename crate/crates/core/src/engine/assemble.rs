//! Formula × dataset → design matrix, penalty diagonals, and term table.

use nalgebra::{DMatrix, DVector};
use std::ops::Range;

use super::{ModelError, TermKind};
use crate::basis::{
    apply_centering_constraint, by_factor_smooth, by_ordered_difference_smooth, fs_basis,
    raw_univariate, re_basis, ti_block, ti_block_by, BasisError, BlockEval, TermBlock, UniSpec,
};
use crate::dataset::Dataset;
use crate::formula::{ModelFormula, Term};

/// One realized term: a contiguous block of design columns.
#[derive(Debug, Clone)]
pub struct TermInfo {
    pub label: String,
    pub range: Range<usize>,
    pub kind: TermKind,
    pub eval: BlockEval,
    /// Indices into [`ModelMatrices::penalties`] (contiguous per term).
    pub penalty_ids: Range<usize>,
}

/// One penalty: a diagonal acting on a contiguous coefficient range.
/// Working-parameterization blocks always have diagonal penalties, which
/// keeps every per-evaluation determinant a sum of logs.
#[derive(Debug, Clone)]
pub struct PenaltyBlock {
    pub label: String,
    pub range: Range<usize>,
    pub diag: DVector<f64>,
}

/// Assembled (and possibly row-whitened) model matrices.
#[derive(Debug, Clone)]
pub struct ModelMatrices {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub response: String,
    pub coef_names: Vec<String>,
    pub terms: Vec<TermInfo>,
    pub penalties: Vec<PenaltyBlock>,
    /// AR1 coefficient the rows were whitened with (0 = none).
    pub rho: f64,
    /// log |det W| of the whitening transform (0 = none).
    pub logdet_w: f64,
}

impl ModelMatrices {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Combined penalty diagonal Σ λ_j S_j as a length-p vector.
    pub fn total_diag(&self, lambda: &[f64]) -> DVector<f64> {
        let mut s = DVector::zeros(self.p());
        for (pen, &l) in self.penalties.iter().zip(lambda) {
            for (offset, idx) in pen.range.clone().enumerate() {
                s[idx] += l * pen.diag[offset];
            }
        }
        s
    }

    pub fn check_lambda(&self, lambda: &[f64]) -> Result<(), ModelError> {
        if lambda.len() != self.penalties.len() {
            return Err(ModelError::LambdaCount {
                expected: self.penalties.len(),
                got: lambda.len(),
            });
        }
        if lambda.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(ModelError::BadLambda);
        }
        Ok(())
    }
}

/// Accumulates realized blocks, then lays them out left to right.
struct Builder {
    n: usize,
    p: usize,
    blocks: Vec<(TermBlock, TermKind, Vec<String>)>,
}

impl Builder {
    fn push(&mut self, block: TermBlock, kind: TermKind, names: Vec<String>) {
        debug_assert_eq!(block.ncols(), names.len());
        debug_assert_eq!(block.columns.nrows(), self.n);
        self.p += block.ncols();
        self.blocks.push((block, kind, names));
    }

    fn finish(self, response: String, y: DVector<f64>) -> ModelMatrices {
        let mut x = DMatrix::zeros(self.n, self.p);
        let mut coef_names = Vec::with_capacity(self.p);
        let mut terms = Vec::with_capacity(self.blocks.len());
        let mut penalties = Vec::new();
        let mut col = 0usize;
        for (block, kind, names) in self.blocks {
            let w = block.ncols();
            let range = col..col + w;
            x.view_mut((0, col), (self.n, w)).copy_from(&block.columns);
            coef_names.extend(names);
            let pen_start = penalties.len();
            let multi = block.penalties.len() > 1;
            for (i, s) in block.penalties.iter().enumerate() {
                let label = if multi {
                    format!("{}[{}]", block.label, i + 1)
                } else {
                    block.label.clone()
                };
                penalties.push(PenaltyBlock {
                    label,
                    range: range.clone(),
                    diag: s.diagonal(),
                });
            }
            terms.push(TermInfo {
                label: block.label,
                range,
                kind,
                eval: block.eval,
                penalty_ids: pen_start..penalties.len(),
            });
            col += w;
        }
        ModelMatrices {
            x,
            y,
            response,
            coef_names,
            terms,
            penalties,
            rho: 0.0,
            logdet_w: 0.0,
        }
    }
}

fn coef_names_for(block: &TermBlock) -> Vec<String> {
    match &block.eval {
        BlockEval::Intercept => vec!["(Intercept)".to_string()],
        BlockEval::Linear { var } => vec![var.clone()],
        BlockEval::FactorDummies {
            factor,
            levels,
            reference,
        } => levels
            .iter()
            .enumerate()
            .filter(|(i, _)| i != reference)
            .map(|(_, l)| format!("{factor}{l}"))
            .collect(),
        _ => (1..=block.ncols())
            .map(|i| format!("{}.{i}", block.label))
            .collect(),
    }
}

/// Realize a formula against a dataset: intercept first, parametric terms
/// (treatment contrasts) next, then smooth blocks in formula order. Every
/// coefficient belongs to exactly one term; every penalty is diagonal on
/// its term's range.
pub fn assemble(formula: &ModelFormula, data: &Dataset) -> Result<ModelMatrices, ModelError> {
    let y_slice = match data.numeric(&formula.response) {
        Ok(v) => v,
        Err(crate::dataset::DataError::NotNumeric(_)) => {
            return Err(ModelError::ResponseNotNumeric(formula.response.clone()))
        }
        Err(e) => return Err(e.into()),
    };
    let y = DVector::from_column_slice(y_slice);
    let n = data.n();

    validate_difference_smooths(formula, data)?;

    let wrap = |label: String| move |source: BasisError| ModelError::Basis { label, source };

    let mut b = Builder {
        n,
        p: 0,
        blocks: Vec::new(),
    };
    b.push(
        TermBlock {
            label: "(Intercept)".to_string(),
            columns: DMatrix::from_element(n, 1, 1.0),
            penalties: vec![],
            is_random: false,
            eval: BlockEval::Intercept,
        },
        TermKind::Parametric,
        vec!["(Intercept)".to_string()],
    );

    // Parametric terms first, keeping their relative order, then smooths in
    // formula order.
    let (parametric, smooths): (Vec<&Term>, Vec<&Term>) = formula
        .terms
        .iter()
        .partition(|t| matches!(t, Term::Parametric { .. }));

    for term in parametric {
        let Term::Parametric { name } = term else {
            unreachable!()
        };
        let block = if let Ok(values) = data.numeric(name) {
            TermBlock {
                label: name.clone(),
                columns: DMatrix::from_column_slice(n, 1, values),
                penalties: vec![],
                is_random: false,
                eval: BlockEval::Linear { var: name.clone() },
            }
        } else {
            let f = data.factor(name)?;
            let mut columns = DMatrix::zeros(n, f.levels.len() - 1);
            for (i, &code) in f.codes.iter().enumerate() {
                let lev = code as usize;
                if lev != f.reference {
                    columns[(i, lev - usize::from(lev > f.reference))] = 1.0;
                }
            }
            TermBlock {
                label: name.clone(),
                columns,
                penalties: vec![],
                is_random: false,
                eval: BlockEval::FactorDummies {
                    factor: name.clone(),
                    levels: f.levels.to_vec(),
                    reference: f.reference,
                },
            }
        };
        let names = coef_names_for(&block);
        b.push(block, TermKind::Parametric, names);
    }

    for term in smooths {
        match term {
            Term::Parametric { .. } => unreachable!(),
            Term::Smooth {
                var,
                basis,
                k,
                m,
                by: None,
            } => {
                let x = data.numeric(var)?;
                let raw = raw_univariate(*basis, x, *k, *m)
                    .map_err(wrap(term.label()))?
                    .with_var(var);
                let block = apply_centering_constraint(raw).with_label(term.label());
                let names = coef_names_for(&block);
                b.push(block, TermKind::Smooth, names);
            }
            Term::Smooth {
                var,
                basis,
                k,
                m,
                by: Some(w),
            } => {
                let x = data.numeric(var)?;
                let f = data.factor(w)?;
                let spec = UniSpec {
                    kind: *basis,
                    k: *k,
                    m: *m,
                };
                let blocks = if f.ordered {
                    by_ordered_difference_smooth(spec, var, x, w, f)
                } else {
                    by_factor_smooth(spec, var, x, w, f)
                }
                .map_err(wrap(term.label()))?;
                for block in blocks {
                    let names = coef_names_for(&block);
                    b.push(block, TermKind::Smooth, names);
                }
            }
            Term::RandomEffect { group, slope } => {
                if let Some(s) = slope {
                    if data.numeric(group).is_ok() && data.factor(s).is_ok() {
                        return Err(ModelError::ReArgumentOrder {
                            factor: s.clone(),
                            slope: group.clone(),
                        });
                    }
                }
                let f = data.factor(group)?;
                let slope_vals = match slope {
                    None => None,
                    Some(s) => Some((s.as_str(), data.numeric(s)?)),
                };
                let block = re_basis(group, f, slope_vals).map_err(wrap(term.label()))?;
                let names = coef_names_for(&block);
                b.push(block, TermKind::Random, names);
            }
            Term::FactorSmooth {
                var,
                group,
                xt,
                k,
                m,
            } => {
                if data.factor(var).is_ok() && data.numeric(group).is_ok() {
                    return Err(ModelError::FsArgumentOrder {
                        var: group.clone(),
                        factor: var.clone(),
                    });
                }
                let x = data.numeric(var)?;
                let f = data.factor(group)?;
                let block = fs_basis(var, x, group, f, *k, *m, *xt).map_err(wrap(term.label()))?;
                let names = coef_names_for(&block);
                b.push(block, TermKind::Random, names);
            }
            Term::TensorInteraction {
                var1,
                var2,
                k1,
                k2,
                by,
            } => {
                let x1 = data.numeric(var1)?;
                let x2 = data.numeric(var2)?;
                let blocks = match by {
                    None => vec![ti_block(var1, x1, *k1, var2, x2, *k2)
                        .map_err(wrap(term.label()))?],
                    Some(w) => {
                        let f = data.factor(w)?;
                        ti_block_by(var1, x1, *k1, var2, x2, *k2, w, f)
                            .map_err(wrap(term.label()))?
                    }
                };
                for block in blocks {
                    let names = coef_names_for(&block);
                    b.push(block, TermKind::Smooth, names);
                }
            }
        }
    }

    Ok(b.finish(formula.response.clone(), y))
}

/// A difference smooth (ordered `by=`) models a deviation from a reference
/// curve; it is only identified when the reference smooth and the factor's
/// parametric offset are both present.
fn validate_difference_smooths(
    formula: &ModelFormula,
    data: &Dataset,
) -> Result<(), ModelError> {
    for term in &formula.terms {
        let Term::Smooth {
            var, by: Some(w), ..
        } = term
        else {
            continue;
        };
        if !data.factor(w).map(|f| f.ordered).unwrap_or(false) {
            continue;
        }
        let has_reference = formula.terms.iter().any(
            |o| matches!(o, Term::Smooth { var: v, by: None, .. } if v == var),
        );
        if !has_reference {
            return Err(ModelError::MissingReferenceSmooth {
                label: term.label(),
                var: var.clone(),
            });
        }
        let has_parametric = formula
            .terms
            .iter()
            .any(|o| matches!(o, Term::Parametric { name } if name == w));
        if !has_parametric {
            return Err(ModelError::MissingParametricDummy {
                label: term.label(),
                factor: w.clone(),
            });
        }
    }
    Ok(())
}
