//! Estimation-error and prediction-error metrics against simulation truth.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use crate::basis::{self, OrthoSplineBasis};
use crate::data::FunctionalDataset;
use crate::error::{FafpcaError, Result};
use crate::estimator::FaFpcaModel;
use crate::quadrature::Quadrature;

/// True eigenfunctions of a simulated model, as functions on the unit interval.
#[derive(Debug, Clone, PartialEq)]
pub enum TruthEigenfunctions {
    /// The sine/cosine family on the raw domain `(0, 10)`, evaluated at `t = 10 s`.
    Trig,
    /// `φ_jk(s) = theta[j][k,:] · M̃(s)`.
    Spline {
        basis: OrthoSplineBasis,
        theta: Vec<DMatrix<f64>>,
    },
}

/// Scenario-2 trig eigenfunction `φ_jk` with 1-based `j` and `k`, at raw time `t`.
pub fn trig_eigenfunction(j: usize, k: usize, t: f64) -> f64 {
    let second = j == 2;
    if k % 2 == 1 {
        let freq = if second { k as f64 } else { 2.0 * k as f64 };
        SQRT_2 * (freq * PI * t / 10.0).sin()
    } else {
        let freq = if second {
            2.0 * k as f64 + 1.0
        } else {
            2.0 * k as f64
        };
        SQRT_2 * (freq * PI * t / 10.0).cos()
    }
}

/// Everything a Scenario-2 generator knows about the data it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    /// `p × q` loadings.
    pub b0: DMatrix<f64>,
    /// `n × Kq` scores, factor-major.
    pub zeta0: DMatrix<f64>,
    pub k: usize,
    pub eigenfunctions: TruthEigenfunctions,
    pub sigma: f64,
}

impl SimTruth {
    pub fn q(&self) -> usize {
        self.b0.ncols()
    }

    /// `φ_jk(s)` with 0-based indices and `s` on `[0, 1]`.
    pub fn eigenfunction(&self, j: usize, k: usize, s: f64) -> Result<f64> {
        match &self.eigenfunctions {
            TruthEigenfunctions::Trig => Ok(trig_eigenfunction(j + 1, k + 1, 10.0 * s)),
            TruthEigenfunctions::Spline { basis, theta } => {
                Ok(theta[j].row(k).transpose().dot(&basis.eval(s)?))
            }
        }
    }
}

fn check_shape(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(FafpcaError::DimensionMismatch(format!(
            "{what}: estimate is {:?}, truth is {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Flip each column of `estimate` whose inner product with the matching truth column
/// is negative. Returns the aligned matrix and the number of flips.
pub fn align_signs(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    check_shape(estimate, truth, "sign alignment")?;
    let mut out = estimate.clone();
    let mut flips = 0;
    for c in 0..out.ncols() {
        if out.column(c).dot(&truth.column(c)) < 0.0 {
            out.column_mut(c).neg_mut();
            flips += 1;
        }
    }
    Ok((out, flips))
}

/// Flip eigenfunctions (rows of every `Θ_j`, with their score columns) whose
/// quadrature inner product with the truth is negative.
pub fn align_eigenfunctions(
    model: &FaFpcaModel,
    truth: &SimTruth,
    n_quad: usize,
) -> Result<(FaFpcaModel, usize)> {
    check_truth_dims(model, truth)?;
    let quad = Quadrature::composite_gauss2(n_quad);
    let mut out = model.clone();
    let mut flips = 0;
    for j in 0..model.q() {
        for k in 0..model.k() {
            let mut dot = 0.0;
            for (&s, &w) in quad.nodes.iter().zip(&quad.weights) {
                dot += w * model.eval_eigenfunction_unit(j, k, s)? * truth.eigenfunction(j, k, s)?;
            }
            if dot < 0.0 {
                out.blocks[j].theta.row_mut(k).neg_mut();
                out.blocks[j].scores.column_mut(k).neg_mut();
                flips += 1;
            }
        }
    }
    Ok((out, flips))
}

fn check_truth_dims(model: &FaFpcaModel, truth: &SimTruth) -> Result<()> {
    if model.q() != truth.q() || model.k() != truth.k {
        return Err(FafpcaError::DimensionMismatch(format!(
            "model has (q, K) = ({}, {}), truth has ({}, {})",
            model.q(),
            model.k(),
            truth.q(),
            truth.k
        )));
    }
    Ok(())
}

/// `p^{-1/2} ‖B̂ − B₀‖_F`.
pub fn rmse_loadings(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    check_shape(estimate, truth, "loadings")?;
    Ok((estimate - truth).norm() / (truth.nrows() as f64).sqrt())
}

/// `n^{-1/2} ‖ζ̂ − ζ₀‖_F`.
pub fn rmse_factors(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    check_shape(estimate, truth, "factors")?;
    Ok((estimate - truth).norm() / (truth.nrows() as f64).sqrt())
}

/// `(Σ_jk ∫₀¹ (φ̂_jk − φ_jk)²)^{1/2}` by quadrature. No sign alignment is applied.
pub fn rmse_eigenfunctions(model: &FaFpcaModel, truth: &SimTruth, n_quad: usize) -> Result<f64> {
    check_truth_dims(model, truth)?;
    if n_quad < basis::MIN_N_QUAD {
        return Err(FafpcaError::InvalidArgument(format!(
            "n_quad must be at least {}",
            basis::MIN_N_QUAD
        )));
    }
    let quad = Quadrature::composite_gauss2(n_quad);
    let mut total = 0.0;
    for (&s, &w) in quad.nodes.iter().zip(&quad.weights) {
        let m = model.basis.eval(s)?;
        for (j, block) in model.blocks.iter().enumerate() {
            let phi = &block.theta * &m;
            for k in 0..block.k() {
                let d = phi[k] - truth.eigenfunction(j, k, s)?;
                total += w * d * d;
            }
        }
    }
    Ok(total.sqrt())
}

/// `Σ_i nᵢ⁻¹ Σ_l ‖X̂ − X‖² / Σ_i nᵢ⁻¹ Σ_l ‖X − c‖²` where `X` are the raw test values,
/// `c` the centers and `predictions[i]` the reconstruction of subject `i`.
pub fn normalized_error(
    test: &FunctionalDataset,
    centers: &[f64],
    predictions: &[DMatrix<f64>],
) -> Result<f64> {
    if predictions.len() != test.n() || centers.len() != test.p() {
        return Err(FafpcaError::DimensionMismatch(
            "predictions do not match the test set".into(),
        ));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, pred) in predictions.iter().enumerate() {
        let raw = test.raw_values(i);
        if pred.shape() != raw.shape() {
            return Err(FafpcaError::DimensionMismatch(format!(
                "prediction for subject {i} is {:?}, observations are {:?}",
                pred.shape(),
                raw.shape()
            )));
        }
        let w = 1.0 / raw.nrows() as f64;
        num += w * (pred - &raw).norm_squared();
        let mut centered = raw;
        for (j, c) in centers.iter().enumerate() {
            centered.column_mut(j).add_scalar_mut(-c);
        }
        den += w * centered.norm_squared();
    }
    if !(den > 0.0) {
        return Err(FafpcaError::NoVariance);
    }
    Ok(num / den)
}

/// Normalized prediction error of `model` on a held-out dataset, scoring every test
/// subject out of sample.
pub fn prediction_error(model: &FaFpcaModel, test: &FunctionalDataset) -> Result<f64> {
    let predictions = model.predict(test)?;
    normalized_error(test, &model.centers, &predictions)
}
