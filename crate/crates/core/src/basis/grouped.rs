//! Group-structured blocks: random intercepts/slopes, factor smooths
//! (one inner smooth per level, shared penalties), and by-factor smooths
//! (plain per-level and ordered-factor difference variants).

use nalgebra::{DMatrix, DVector};

use super::{
    constrain_with_by, raw_univariate, BasisError, BlockEval, ByLevel, TermBlock,
};
use crate::dataset::FactorView;
use crate::formula::BasisKind;
use crate::numeric::eigh_descending;

/// Random intercepts (one indicator column per level) or random slopes
/// (indicator × `slope`), with a single identity ridge penalty.
pub fn re_basis(
    group_name: &str,
    group: FactorView,
    slope: Option<(&str, &[f64])>,
) -> Result<TermBlock, BasisError> {
    let levels = group.levels.len();
    if levels < 2 {
        return Err(BasisError::SingleLevel(group_name.to_string()));
    }
    let n = group.codes.len();
    let mut columns = DMatrix::zeros(n, levels);
    for (i, &code) in group.codes.iter().enumerate() {
        columns[(i, code as usize)] = match slope {
            None => 1.0,
            Some((_, values)) => values[i],
        };
    }
    let label = match slope {
        None => format!("s({group_name})"),
        Some((var, _)) => format!("s({group_name},{var})"),
    };
    Ok(TermBlock {
        label,
        columns,
        penalties: vec![DMatrix::identity(levels, levels)],
        is_random: true,
        eval: BlockEval::RandomEffect {
            factor: group_name.to_string(),
            levels: group.levels.to_vec(),
            slope_var: slope.map(|(var, _)| var.to_string()),
        },
    })
}

/// Factor smooth: one copy of the inner basis per group level (block
/// diagonal, no centering), sharing two penalties across all levels — the
/// inner wiggliness penalty of order `m` and a global ridge. The inner
/// basis is rotated once so both penalties are diagonal.
pub fn fs_basis(
    var_name: &str,
    x: &[f64],
    group_name: &str,
    group: FactorView,
    k: usize,
    m: usize,
    xt: BasisKind,
) -> Result<TermBlock, BasisError> {
    let nlev = group.levels.len();
    if nlev < 2 {
        return Err(BasisError::SingleLevel(group_name.to_string()));
    }
    for (lev, name) in group.levels.iter().enumerate() {
        let mut vals: Vec<f64> = group
            .codes
            .iter()
            .zip(x)
            .filter(|(&c, _)| c as usize == lev)
            .map(|(_, &v)| v)
            .collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        if vals.len() < 2 {
            return Err(BasisError::LevelTooThin {
                level: name.clone(),
                var: var_name.to_string(),
            });
        }
    }
    let inner = raw_univariate(xt, x, k, m)?;
    let basis = match inner.eval {
        BlockEval::RawUnivariate { basis, .. } => basis,
        _ => unreachable!(),
    };
    // One rotation diagonalizes the replicated wiggliness penalty; the
    // ridge is rotation-invariant, so both working penalties are diagonal.
    let (inner_diag, rotation) = eigh_descending(&inner.penalties[0], 1e-12);
    let rotated = &inner.columns * &rotation;

    let n = x.len();
    let p = k * nlev;
    let mut columns = DMatrix::zeros(n, p);
    for (i, &code) in group.codes.iter().enumerate() {
        let offset = code as usize * k;
        for j in 0..k {
            columns[(i, offset + j)] = rotated[(i, j)];
        }
    }
    let mut wiggle = DVector::zeros(p);
    for lev in 0..nlev {
        for j in 0..k {
            wiggle[lev * k + j] = inner_diag[j];
        }
    }
    Ok(TermBlock {
        label: format!("s({var_name},{group_name})"),
        columns,
        penalties: vec![
            DMatrix::from_diagonal(&wiggle),
            DMatrix::identity(p, p),
        ],
        is_random: true,
        eval: BlockEval::FactorSmooth {
            var: var_name.to_string(),
            factor: group_name.to_string(),
            levels: group.levels.to_vec(),
            basis,
            rotation,
        },
    })
}

/// Shared spec for the by-smooth constructors.
#[derive(Debug, Clone, Copy)]
pub struct UniSpec {
    pub kind: BasisKind,
    pub k: usize,
    pub m: usize,
}

/// One centered smooth per factor level, columns zeroed outside the
/// level's rows; each block carries its own smoothing parameter.
pub fn by_factor_smooth(
    spec: UniSpec,
    var_name: &str,
    x: &[f64],
    by_name: &str,
    by: FactorView,
) -> Result<Vec<TermBlock>, BasisError> {
    by_smooth_impl(spec, var_name, x, by_name, by, None)
}

/// Difference smooths for an ordered factor: one centered, level-masked
/// smooth per non-reference level. The model must also contain the plain
/// reference smooth and the parametric treatment dummy; that completeness
/// rule is enforced at assembly, where the full term list is visible.
pub fn by_ordered_difference_smooth(
    spec: UniSpec,
    var_name: &str,
    x: &[f64],
    by_name: &str,
    by: FactorView,
) -> Result<Vec<TermBlock>, BasisError> {
    debug_assert!(by.ordered, "difference smooths need an ordered factor");
    by_smooth_impl(spec, var_name, x, by_name, by, Some(by.reference))
}

fn by_smooth_impl(
    spec: UniSpec,
    var_name: &str,
    x: &[f64],
    by_name: &str,
    by: FactorView,
    skip: Option<usize>,
) -> Result<Vec<TermBlock>, BasisError> {
    let raw = raw_univariate(spec.kind, x, spec.k, spec.m)?.with_var(var_name);
    let mut blocks = Vec::new();
    for (lev, level_name) in by.levels.iter().enumerate() {
        if skip == Some(lev) {
            continue;
        }
        let mask: Vec<bool> = by.codes.iter().map(|&c| c as usize == lev).collect();
        let block = constrain_with_by(
            raw.clone(),
            Some(&mask),
            Some(ByLevel {
                factor: by_name.to_string(),
                level: level_name.clone(),
            }),
        );
        blocks.push(block.with_label(format!("s({var_name}):{by_name}{level_name}")));
    }
    Ok(blocks)
}
