//! Explained-variance selection of the number of factors `q` and of eigenfunctions `K`.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::OrthoSplineBasis;
use crate::data::{center, FunctionalDataset};
use crate::error::{FafpcaError, Result};
use crate::estimator::{build_response, estimate_loadings, pooled_cross_product};
use crate::spectra::{count_from_curve, cumulative_ratios, spectrum};

pub const DEFAULT_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSelection {
    pub q: usize,
    /// Cumulative explained-variance ratios of the pooled cross-product (length p).
    pub curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    /// Common `K`: the smallest count crossing the threshold in every block.
    pub k: usize,
    /// Smallest crossing count of each block on its own.
    pub per_block: Vec<usize>,
    /// Cumulative ratios of each `W_k'W_k` (length τ each).
    pub curves: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub q_chosen: usize,
    pub k_chosen: usize,
    pub k_per_block: Vec<usize>,
    pub q_curve: Vec<f64>,
    pub k_curves: Vec<Vec<f64>>,
    pub threshold: f64,
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(FafpcaError::InvalidArgument(format!(
            "threshold must lie in [0, 1), got {threshold}"
        )));
    }
    Ok(())
}

fn centered(dataset: &FunctionalDataset) -> std::borrow::Cow<'_, FunctionalDataset> {
    if dataset.is_centered() {
        std::borrow::Cow::Borrowed(dataset)
    } else {
        std::borrow::Cow::Owned(center(dataset))
    }
}

/// Smallest `q` whose leading eigenvalues of the pooled cross-product explain more
/// than `threshold` of its trace.
pub fn select_q(dataset: &FunctionalDataset, threshold: f64) -> Result<QSelection> {
    check_threshold(threshold)?;
    let data = centered(dataset);
    let values = spectrum(&pooled_cross_product(&data))?;
    let curve = cumulative_ratios(&values)?;
    Ok(QSelection {
        q: count_from_curve(&curve, threshold),
        curve,
    })
}

/// Cumulative explained-variance ratios of `W'W`.
pub fn response_curve(w: &DMatrix<f64>) -> Result<Vec<f64>> {
    cumulative_ratios(&spectrum(&w.tr_mul(w))?)
}

/// Smallest `K` such that every block's leading `K` eigenvalues of `W_k'W_k` explain
/// more than `threshold`.
pub fn select_k(
    dataset: &FunctionalDataset,
    q: usize,
    basis: &OrthoSplineBasis,
    ridge: f64,
    threshold: f64,
) -> Result<KSelection> {
    check_threshold(threshold)?;
    let data = centered(dataset);
    let loadings = estimate_loadings(&data, q)?;
    let responses = build_response(&data, &loadings, basis, ridge)?;
    let curves = responses
        .iter()
        .map(response_curve)
        .collect::<Result<Vec<_>>>()?;
    let per_block: Vec<usize> = curves
        .iter()
        .map(|c| count_from_curve(c, threshold))
        .collect();
    Ok(KSelection {
        k: per_block.iter().copied().max().unwrap_or(1),
        per_block,
        curves,
    })
}

pub fn select(
    dataset: &FunctionalDataset,
    basis: &OrthoSplineBasis,
    ridge: f64,
    threshold: f64,
) -> Result<SelectionReport> {
    let qs = select_q(dataset, threshold)?;
    let ks = select_k(dataset, qs.q, basis, ridge, threshold)?;
    Ok(SelectionReport {
        q_chosen: qs.q,
        k_chosen: ks.k,
        k_per_block: ks.per_block,
        q_curve: qs.curve,
        k_curves: ks.curves,
        threshold,
    })
}

impl SelectionReport {
    /// Scree curves in long form: `curve,component,cumulative_ratio`, where `curve` is
    /// `q` for the factor curve and `K<j>` for block `j` (1-based).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["curve", "component", "cumulative_ratio"])?;
        for (i, r) in self.q_curve.iter().enumerate() {
            w.write_record(["q".to_string(), (i + 1).to_string(), r.to_string()])?;
        }
        for (j, curve) in self.k_curves.iter().enumerate() {
            for (i, r) in curve.iter().enumerate() {
                w.write_record([format!("K{}", j + 1), (i + 1).to_string(), r.to_string()])?;
            }
        }
        w.flush()
            .map_err(|e| FafpcaError::io("<selection writer>", e))?;
        Ok(())
    }
}
