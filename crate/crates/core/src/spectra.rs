//! Truncated symmetric eigendecomposition with deterministic ordering and signs.
//!
//! Every eigenvector column is returned with its first numerically nonzero entry
//! positive, which is the sign rule the loadings, the spline coefficient blocks and
//! the simulation truth all share.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, FafpcaError, Result};

/// Relative gap below which two eigenvalues are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Entries at or below this fraction of the column max-norm count as zero for the
/// sign rule.
pub const SIGN_ZERO_TOLERANCE: f64 = 1e-8;

/// Leading eigenpairs of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    /// Nonincreasing eigenvalues.
    pub values: Vec<f64>,
    /// Unit-norm eigenvectors, one per column, in the order of `values`.
    pub vectors: DMatrix<f64>,
}

impl EigenResult {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Top-`k` eigenpairs of `a`, which is symmetrized as `(A + A')/2` first.
pub fn top_eigen(a: &DMatrix<f64>, k: usize) -> Result<EigenResult> {
    let m = a.nrows();
    if a.ncols() != m {
        return Err(FafpcaError::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m,
            a.ncols()
        )));
    }
    if k == 0 || k > m {
        return Err(invalid!("number of eigenpairs {k} must lie in 1..={m}"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(FafpcaError::NonFinite("matrix passed to top_eigen".into()));
    }

    let sym = symmetrize(a);
    let eig = SymmetricEigen::new(sym);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    break_ties(&mut order, &eig);

    let mut values = Vec::with_capacity(k);
    let mut vectors = DMatrix::zeros(m, k);
    for (out, &src) in order.iter().take(k).enumerate() {
        values.push(eig.eigenvalues[src]);
        let mut col = eig.eigenvectors.column(src).into_owned();
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
        fix_sign(col.as_mut_slice());
        vectors.set_column(out, &col);
    }
    Ok(EigenResult { values, vectors })
}

/// All eigenvalues of a symmetric matrix, nonincreasing.
pub fn spectrum(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.nrows() != a.ncols() {
        return Err(FafpcaError::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(FafpcaError::NonFinite("matrix passed to spectrum".into()));
    }
    let mut values: Vec<f64> = SymmetricEigen::new(symmetrize(a))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    values.sort_by(|x, y| y.total_cmp(x));
    Ok(values)
}

/// Smallest count `j` whose cumulative share of the (nonnegative part of the)
/// spectrum strictly exceeds `threshold`.
pub fn explained_variance_count(eigenvalues: &[f64], threshold: f64) -> Result<usize> {
    let curve = cumulative_ratios(eigenvalues)?;
    Ok(count_from_curve(&curve, threshold))
}

/// Cumulative explained-variance ratios; negative eigenvalues are clamped to zero.
pub fn cumulative_ratios(eigenvalues: &[f64]) -> Result<Vec<f64>> {
    if eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(FafpcaError::NonFinite("eigenvalues".into()));
    }
    let total: f64 = eigenvalues.iter().map(|&v| v.max(0.0)).sum();
    if total <= 0.0 {
        return Err(FafpcaError::NoVariance);
    }
    let mut acc = 0.0;
    Ok(eigenvalues
        .iter()
        .map(|&v| {
            acc += v.max(0.0);
            (acc / total).min(1.0)
        })
        .collect())
}

pub(crate) fn count_from_curve(curve: &[f64], threshold: f64) -> usize {
    curve
        .iter()
        .position(|&r| r > threshold)
        .map(|i| i + 1)
        .unwrap_or(curve.len())
}

/// Numerical rank from a nonincreasing spectrum of a PSD matrix of size `dim`.
pub fn numerical_rank(eigenvalues: &[f64], dim: usize) -> usize {
    let top = eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    if top == 0.0 {
        return 0;
    }
    let tol = top * dim as f64 * f64::EPSILON * 16.0;
    eigenvalues.iter().filter(|&&v| v > tol).count()
}

/// Flip `v` so its first entry above the relative zero threshold is positive.
pub fn fix_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return;
    }
    if let Some(first) = v.iter().find(|x| x.abs() > SIGN_ZERO_TOLERANCE * max) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn argmax_abs(eig: &SymmetricEigen<f64, nalgebra::Dyn>, col: usize) -> usize {
    eig.eigenvectors
        .column(col)
        .iter()
        .enumerate()
        .fold((0, -1.0), |(bi, bv), (i, v)| {
            if v.abs() > bv {
                (i, v.abs())
            } else {
                (bi, bv)
            }
        })
        .0
}

// Tied neighbours are ordered by the position of each vector's largest entry.
fn break_ties(order: &mut [usize], eig: &SymmetricEigen<f64, nalgebra::Dyn>) {
    if order.is_empty() {
        return;
    }
    let scale = eig.eigenvalues[order[0]].abs();
    let tol = TIE_TOLERANCE * scale;
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 {
            let (a, b) = (order[j - 1], order[j]);
            let tied = (eig.eigenvalues[a] - eig.eigenvalues[b]).abs() <= tol;
            if tied && argmax_abs(eig, b) < argmax_abs(eig, a) {
                order.swap(j - 1, j);
                j -= 1;
            } else {
                break;
            }
        }
    }
}
