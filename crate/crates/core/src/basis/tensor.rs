//! Tensor-product interaction blocks: the row-wise product of two centered
//! cr margins, excluding both main effects by construction.

use nalgebra::{DMatrix, DVector};

use super::{center_pieces, BasisError, BlockEval, ByLevel, TermBlock, UniEval};
use crate::dataset::FactorView;

struct Margin {
    cols: DMatrix<f64>,
    diag: DVector<f64>,
    transform: DMatrix<f64>,
    basis: UniEval,
}

fn build_margin(x: &[f64], k: usize, mask: Option<&[bool]>) -> Result<Margin, BasisError> {
    let raw = super::cr_basis(x, k, None)?;
    let (cols, diag, transform) = center_pieces(&raw.columns, &raw.penalties[0], mask);
    let basis = match raw.eval {
        BlockEval::RawUnivariate { basis, .. } => basis,
        _ => unreachable!(),
    };
    Ok(Margin {
        cols,
        diag,
        transform,
        basis,
    })
}

fn product_block(
    var1: &str,
    m1: Margin,
    var2: &str,
    m2: Margin,
    by: Option<ByLevel>,
    label: String,
) -> TermBlock {
    let n = m1.cols.nrows();
    let (p1, p2) = (m1.cols.ncols(), m2.cols.ncols());
    let mut columns = DMatrix::zeros(n, p1 * p2);
    for i in 0..n {
        for a in 0..p1 {
            let va = m1.cols[(i, a)];
            if va == 0.0 {
                continue;
            }
            for b in 0..p2 {
                columns[(i, a * p2 + b)] = va * m2.cols[(i, b)];
            }
        }
    }
    // S₁⊗I and I⊗S₂ in the rotated margin coordinates are both diagonal
    let mut pen1 = DVector::zeros(p1 * p2);
    let mut pen2 = DVector::zeros(p1 * p2);
    for a in 0..p1 {
        for b in 0..p2 {
            pen1[a * p2 + b] = m1.diag[a];
            pen2[a * p2 + b] = m2.diag[b];
        }
    }
    TermBlock {
        label,
        columns,
        penalties: vec![
            DMatrix::from_diagonal(&pen1),
            DMatrix::from_diagonal(&pen2),
        ],
        is_random: false,
        eval: BlockEval::Tensor {
            var1: var1.to_string(),
            basis1: m1.basis,
            transform1: m1.transform,
            var2: var2.to_string(),
            basis2: m2.basis,
            transform2: m2.transform,
            by,
        },
    }
}

/// Pure-interaction smooth over (x1, x2): (k1−1)(k2−1) columns, two
/// penalties (one per margin's wiggliness). Main effects must be supplied
/// as separate s() terms.
pub fn ti_block(
    var1: &str,
    x1: &[f64],
    k1: usize,
    var2: &str,
    x2: &[f64],
    k2: usize,
) -> Result<TermBlock, BasisError> {
    let m1 = build_margin(x1, k1, None)?;
    let m2 = build_margin(x2, k2, None)?;
    Ok(product_block(
        var1,
        m1,
        var2,
        m2,
        None,
        format!("ti({var1},{var2})"),
    ))
}

/// Per-level tensor interactions: one block per factor level (per
/// non-reference level when the factor is ordered), margins centered over
/// the level's rows, columns masked outside them.
pub fn ti_block_by(
    var1: &str,
    x1: &[f64],
    k1: usize,
    var2: &str,
    x2: &[f64],
    k2: usize,
    by_name: &str,
    by: FactorView,
) -> Result<Vec<TermBlock>, BasisError> {
    let mut blocks = Vec::new();
    for (lev, level_name) in by.levels.iter().enumerate() {
        if by.ordered && lev == by.reference {
            continue;
        }
        let mask: Vec<bool> = by.codes.iter().map(|&c| c as usize == lev).collect();
        let m1 = build_margin(x1, k1, Some(&mask))?;
        let m2 = build_margin(x2, k2, Some(&mask))?;
        blocks.push(product_block(
            var1,
            m1,
            var2,
            m2,
            Some(ByLevel {
                factor: by_name.to_string(),
                level: level_name.clone(),
            }),
            format!("ti({var1},{var2}):{by_name}{level_name}"),
        ));
    }
    Ok(blocks)
}
