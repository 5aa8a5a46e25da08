//! Closed-form FaFPCA fit.
//!
//! The loadings come from the leading eigenvectors of the pooled cross-product
//! `S = n⁻¹ Σᵢ nᵢ⁻¹ Σₗ Xᵢ(tᵢₗ) Xᵢ(tᵢₗ)'`. Each factor process is then projected onto the
//! spline basis subject by subject, giving a response matrix `W_k` (n × τ), whose
//! principal components supply the spline coefficients `Θ_k` and scores `ζ_[k]`.
//!
//! Scaling conventions:
//! * `p⁻¹ B'B = I_q`;
//! * `Θ_k = √τ · V_k'` with `V_k` the unit-norm eigenvectors of `W_k'W_k`, so
//!   `τ⁻¹ Θ_k Θ_k' = I_K` and `φ_jk(t) = Θ_jk · M̃(t)` has unit L² norm on `[0, 1]`;
//! * `ζ_[k] = τ^{-1/2} W_k V_k`, so that `W_k ≈ ζ_[k] Θ_k`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{self, OrthoSplineBasis};
use crate::data::{center, FunctionalDataset, TimeMap};
use crate::error::{invalid, FafpcaError, Result};
use crate::spectra::{self, top_eigen};

/// Absolute threshold below which an eigenfunction value counts as zero for the sign pass.
pub const SIGN_PASS_ZERO: f64 = 1e-8;

/// Largest per-subject cross-product condition number accepted in [`build_response`].
pub const MAX_SUBJECT_CONDITION: f64 = 1e12;

/// Relative ridge used when none is configured: `λ = 1e-6 · τ`.
pub const DEFAULT_RIDGE_PER_BASIS: f64 = 1e-6;

/// Subjects per partial sum in the covariance accumulation.
const REDUCTION_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub degree: usize,
    /// Defaults to `ceil(n^{1/3})` clamped to `[4, 30]`.
    pub interior_knots: Option<usize>,
    /// Defaults to `1e-6 · τ`.
    pub ridge: Option<f64>,
    pub n_quad: usize,
    /// Recorded in the model for provenance only.
    pub seed: Option<u64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            degree: basis::DEFAULT_DEGREE,
            interior_knots: None,
            ridge: None,
            n_quad: basis::DEFAULT_N_QUAD,
            seed: None,
        }
    }
}

impl FitConfig {
    pub fn resolved_knots(&self, n_subjects: usize) -> usize {
        self.interior_knots
            .unwrap_or_else(|| basis::default_interior_knots(n_subjects))
    }

    pub fn resolved_ridge(&self, tau_n: usize) -> f64 {
        self.ridge
            .unwrap_or(DEFAULT_RIDGE_PER_BASIS * tau_n as f64)
    }
}

/// `p × q` loading matrix with `p⁻¹ B'B = I_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingMatrix {
    pub b: DMatrix<f64>,
    /// Leading eigenvalues of the pooled cross-product the loadings came from.
    pub eigvals: Vec<f64>,
}

impl LoadingMatrix {
    pub fn p(&self) -> usize {
        self.b.nrows()
    }

    pub fn q(&self) -> usize {
        self.b.ncols()
    }
}

/// Spline coefficients and scores of one factor process.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorBlock {
    /// `K × τ` coefficients; row `k` gives `φ_k(t) = theta[k,:] · M̃(t)`.
    pub theta: DMatrix<f64>,
    /// `n × K` scores.
    pub scores: DMatrix<f64>,
    /// Leading eigenvalues of `W'W`, nonincreasing.
    pub eigvals: Vec<f64>,
}

impl FactorBlock {
    pub fn k(&self) -> usize {
        self.theta.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaFpcaModel {
    pub loadings: LoadingMatrix,
    pub basis: OrthoSplineBasis,
    pub blocks: Vec<FactorBlock>,
    pub ridge: f64,
    pub time_map: TimeMap,
    pub centers: Vec<f64>,
    pub var_labels: Vec<String>,
    pub subject_ids: Vec<String>,
    pub config: FitConfig,
}

/// Pooled cross-product `n⁻¹ Σᵢ nᵢ⁻¹ Σₗ Xᵢ(tᵢₗ) Xᵢ(tᵢₗ)'`.
///
/// Subjects are summed in fixed-size chunks whose partial sums are added in order, so
/// the result does not depend on the number of worker threads.
pub fn pooled_cross_product(dataset: &FunctionalDataset) -> DMatrix<f64> {
    let p = dataset.p();
    let n = dataset.n();
    let partials: Vec<DMatrix<f64>> = dataset
        .subjects()
        .par_chunks(REDUCTION_CHUNK)
        .map(|chunk| {
            let rows: usize = chunk.iter().map(|s| s.n_obs()).sum();
            let mut y = DMatrix::zeros(rows, p);
            let mut r = 0;
            for s in chunk {
                let w = (1.0 / (n as f64 * s.n_obs() as f64)).sqrt();
                y.rows_mut(r, s.n_obs()).copy_from(&(&s.values * w));
                r += s.n_obs();
            }
            y.tr_mul(&y)
        })
        .collect();
    let mut out = DMatrix::zeros(p, p);
    for part in partials {
        out += part;
    }
    (&out + out.transpose()) * 0.5
}

/// `B̂ = √p · (top-q eigenvectors of the pooled cross-product)`.
pub fn estimate_loadings(dataset: &FunctionalDataset, q: usize) -> Result<LoadingMatrix> {
    let p = dataset.p();
    let max_q = p.min(dataset.total_observations());
    if q == 0 || q > max_q {
        return Err(invalid!("number of factors q = {q} must lie in 1..={max_q}"));
    }
    let s = pooled_cross_product(dataset);
    let eig = top_eigen(&s, q)?;
    let rank_tol = eig.values[0].max(0.0) * p as f64 * f64::EPSILON * 16.0;
    if eig.values[0] <= 0.0 || eig.values[q - 1] <= rank_tol {
        let rank = spectra::numerical_rank(&spectra::spectrum(&s)?, p);
        return Err(FafpcaError::RankDeficient { requested: q, rank });
    }
    Ok(LoadingMatrix {
        b: eig.vectors * (p as f64).sqrt(),
        eigvals: eig.values,
    })
}

/// Basis design matrix (rows `M̃(t_l)'`) for times already on `[0, 1]`.
fn design(basis: &OrthoSplineBasis, times: &[f64]) -> Result<DMatrix<f64>> {
    let tau = basis.tau_n();
    let mut m = DMatrix::zeros(times.len(), tau);
    for (l, &t) in times.iter().enumerate() {
        m.row_mut(l).copy_from(&basis.eval(t)?.transpose());
    }
    Ok(m)
}

/// Per-factor least-squares spline coefficients for one subject: column `k` of the
/// result is `w_k = (Σ M̃M̃' + λI)⁻¹ Σ M̃ · p⁻¹ Σ_j b_jk X_j`.
fn subject_response(
    id: &str,
    times: &[f64],
    values: &DMatrix<f64>,
    loadings: &DMatrix<f64>,
    basis: &OrthoSplineBasis,
    ridge: f64,
) -> Result<DMatrix<f64>> {
    let p = loadings.nrows() as f64;
    let m = design(basis, times)?;
    let tau = basis.tau_n();
    let mut a = m.tr_mul(&m);
    for d in 0..tau {
        a[(d, d)] += ridge;
    }
    let eig = SymmetricEigen::new(a.clone());
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_SUBJECT_CONDITION) {
        return Err(FafpcaError::SingularSubject {
            subject: id.to_string(),
            condition,
        });
    }
    let factor_paths = values * loadings / p;
    let rhs = m.tr_mul(&factor_paths);
    let chol = a.cholesky().ok_or_else(|| FafpcaError::SingularSubject {
        subject: id.to_string(),
        condition,
    })?;
    Ok(chol.solve(&rhs))
}

/// The `q` response matrices `W_k` (each `n × τ`).
pub fn build_response(
    dataset: &FunctionalDataset,
    loadings: &LoadingMatrix,
    basis: &OrthoSplineBasis,
    ridge: f64,
) -> Result<Vec<DMatrix<f64>>> {
    if loadings.p() != dataset.p() {
        return Err(FafpcaError::DimensionMismatch(format!(
            "loadings have {} rows, dataset has p = {}",
            loadings.p(),
            dataset.p()
        )));
    }
    if !(ridge >= 0.0) {
        return Err(invalid!("ridge must be nonnegative, got {ridge}"));
    }
    let per_subject: Vec<DMatrix<f64>> = dataset
        .subjects()
        .par_iter()
        .map(|s| subject_response(&s.id, &s.times, &s.values, &loadings.b, basis, ridge))
        .collect::<Result<_>>()?;
    let n = dataset.n();
    let tau = basis.tau_n();
    Ok((0..loadings.q())
        .map(|k| {
            let mut w = DMatrix::zeros(n, tau);
            for (i, r) in per_subject.iter().enumerate() {
                w.row_mut(i).copy_from(&r.column(k).transpose());
            }
            w
        })
        .collect())
}

/// Principal components of one response matrix.
pub fn estimate_block(w: &DMatrix<f64>, k: usize) -> Result<FactorBlock> {
    let (n, tau) = w.shape();
    if k == 0 || k > n.min(tau) {
        return Err(invalid!(
            "number of components K = {k} must lie in 1..={}",
            n.min(tau)
        ));
    }
    let g = w.tr_mul(w);
    let eig = top_eigen(&g, k)?;
    let rank_tol = eig.values[0].max(0.0) * tau as f64 * f64::EPSILON * 16.0;
    if eig.values[0] <= 0.0 || eig.values[k - 1] <= rank_tol {
        let rank = spectra::numerical_rank(&spectra::spectrum(&g)?, tau);
        return Err(FafpcaError::RankDeficient { requested: k, rank });
    }
    let root_tau = (tau as f64).sqrt();
    Ok(FactorBlock {
        theta: eig.vectors.transpose() * root_tau,
        scores: w * &eig.vectors / root_tau,
        eigvals: eig.values,
    })
}

/// Value used to orient `φ`: `φ(0)` unless it is numerically zero, in which case the
/// first quadrature node where `|φ|` exceeds the threshold.
fn orientation_value(theta_row: &DVector<f64>, basis: &OrthoSplineBasis) -> Result<f64> {
    let at_zero = theta_row.dot(&basis.eval(0.0)?);
    if at_zero.abs() >= SIGN_PASS_ZERO {
        return Ok(at_zero);
    }
    for &t in &basis.quadrature().nodes {
        let v = theta_row.dot(&basis.eval(t)?);
        if v.abs() > SIGN_PASS_ZERO {
            return Ok(v);
        }
    }
    Ok(0.0)
}

/// Flip `Θ` rows and matching score columns so every eigenfunction starts positive.
fn orient_block(block: &mut FactorBlock, basis: &OrthoSplineBasis) -> Result<()> {
    for k in 0..block.k() {
        let row = block.theta.row(k).transpose();
        if orientation_value(&row, basis)? < 0.0 {
            block.theta.row_mut(k).neg_mut();
            block.scores.column_mut(k).neg_mut();
        }
    }
    Ok(())
}

/// Fit the model with `q` factors and `K` eigenfunctions per factor. The dataset is
/// centered first unless it already is.
pub fn fit(
    dataset: &FunctionalDataset,
    q: usize,
    k: usize,
    config: &FitConfig,
) -> Result<FaFpcaModel> {
    if q == 0 {
        return Err(invalid!("number of factors q must be positive"));
    }
    if k == 0 {
        return Err(invalid!("number of components K must be positive"));
    }
    if q > dataset.p() {
        return Err(invalid!("q = {q} exceeds p = {}", dataset.p()));
    }
    if k * q > dataset.n() {
        return Err(invalid!(
            "K·q = {} exceeds the number of subjects n = {}",
            k * q,
            dataset.n()
        ));
    }
    let centered;
    let data = if dataset.is_centered() {
        dataset
    } else {
        centered = center(dataset);
        &centered
    };

    let raw = basis::make_raw_basis(config.degree, config.resolved_knots(data.n()))?;
    let basis = basis::orthonormalize(&raw, config.n_quad)?;
    let ridge = config.resolved_ridge(basis.tau_n());

    let loadings = estimate_loadings(data, q)?;
    let responses = build_response(data, &loadings, &basis, ridge)?;
    let blocks = responses
        .par_iter()
        .map(|w| {
            let mut block = estimate_block(w, k)?;
            orient_block(&mut block, &basis)?;
            Ok(block)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(FaFpcaModel {
        loadings,
        basis,
        blocks,
        ridge,
        time_map: data.time_map(),
        centers: data.centers().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; data.p()]),
        var_labels: data.var_labels().to_vec(),
        subject_ids: data.subjects().iter().map(|s| s.id.clone()).collect(),
        config: config.clone(),
    })
}

impl FaFpcaModel {
    pub fn p(&self) -> usize {
        self.loadings.p()
    }

    pub fn q(&self) -> usize {
        self.loadings.q()
    }

    /// Components per factor.
    pub fn k(&self) -> usize {
        self.blocks.first().map_or(0, FactorBlock::k)
    }

    pub fn tau_n(&self) -> usize {
        self.basis.tau_n()
    }

    /// Training scores stacked as `n × Kq`, factor-major.
    pub fn scores(&self) -> DMatrix<f64> {
        let n = self.blocks.first().map_or(0, |b| b.scores.nrows());
        let k = self.k();
        let mut out = DMatrix::zeros(n, k * self.q());
        for (j, b) in self.blocks.iter().enumerate() {
            out.columns_mut(j * k, k).copy_from(&b.scores);
        }
        out
    }

    fn unit_time(&self, t: f64, extrapolate: bool) -> Result<f64> {
        if extrapolate {
            Ok(self.time_map.forward(t))
        } else {
            self.time_map.to_unit(t)
        }
    }

    fn basis_at_unit(&self, s: f64) -> Result<DVector<f64>> {
        if (0.0..=1.0).contains(&s) {
            self.basis.eval(s)
        } else {
            Ok(self.basis.transform() * self.basis.raw().eval_extended(s))
        }
    }

    /// `φ̂_jk(t)` at a time in original units.
    pub fn eval_eigenfunction(&self, j: usize, k: usize, t: f64, extrapolate: bool) -> Result<f64> {
        let block = self
            .blocks
            .get(j)
            .ok_or_else(|| invalid!("factor index {j} out of range 0..{}", self.q()))?;
        if k >= block.k() {
            return Err(invalid!("component index {k} out of range 0..{}", block.k()));
        }
        let m = self.basis_at_unit(self.unit_time(t, extrapolate)?)?;
        Ok(block.theta.row(k).transpose().dot(&m))
    }

    /// `φ̂_jk(s)` with `s` already on `[0, 1]`.
    pub fn eval_eigenfunction_unit(&self, j: usize, k: usize, s: f64) -> Result<f64> {
        let m = self.basis.eval(s)?;
        Ok(self.blocks[j].theta.row(k).transpose().dot(&m))
    }

    /// Subtract the training centers from raw observations.
    pub fn center_values(&self, values: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_p(values.ncols())?;
        let mut out = values.clone();
        for (j, c) in self.centers.iter().enumerate() {
            out.column_mut(j).add_scalar_mut(-c);
        }
        Ok(out)
    }

    fn check_p(&self, p: usize) -> Result<()> {
        if p != self.p() {
            return Err(FafpcaError::DimensionMismatch(format!(
                "data has {p} variables, model has {}",
                self.p()
            )));
        }
        Ok(())
    }

    /// Scores of a new subject: `ζ_k = τ⁻¹ Θ_k w_k` per factor, stacked factor-major.
    ///
    /// `times` are in original units and `values` (`n_obs × p`) must already be
    /// centered with the training centers.
    pub fn score_subject(&self, times: &[f64], values: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_p(values.ncols())?;
        if values.nrows() != times.len() {
            return Err(FafpcaError::DimensionMismatch(format!(
                "{} times but {} observation rows",
                times.len(),
                values.nrows()
            )));
        }
        let unit: Vec<f64> = times
            .iter()
            .map(|&t| self.time_map.to_unit(t))
            .collect::<Result<_>>()?;
        self.score_unit(&unit, values, "<new subject>")
    }

    pub(crate) fn score_unit(
        &self,
        unit_times: &[f64],
        values: &DMatrix<f64>,
        id: &str,
    ) -> Result<DVector<f64>> {
        let w = subject_response(id, unit_times, values, &self.loadings.b, &self.basis, self.ridge)?;
        let k = self.k();
        let tau = self.tau_n() as f64;
        let mut out = DVector::zeros(k * self.q());
        for (j, block) in self.blocks.iter().enumerate() {
            let z = &block.theta * w.column(j) / tau;
            out.rows_mut(j * k, k).copy_from(&z);
        }
        Ok(out)
    }

    /// `X̂(t) = B̂ Φ̂'(t) ζ + centers` at a time in original units.
    pub fn reconstruct(&self, score: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        let s = self.time_map.to_unit(t)?;
        self.reconstruct_unit(score, s)
    }

    pub(crate) fn reconstruct_unit(&self, score: &DVector<f64>, s: f64) -> Result<DVector<f64>> {
        let k = self.k();
        if score.len() != k * self.q() {
            return Err(FafpcaError::DimensionMismatch(format!(
                "score has length {}, model expects {}",
                score.len(),
                k * self.q()
            )));
        }
        let m = self.basis.eval(s)?;
        let h = DVector::from_iterator(
            self.q(),
            self.blocks.iter().enumerate().map(|(j, block)| {
                let phi = &block.theta * &m;
                phi.dot(&score.rows(j * k, k))
            }),
        );
        let mut x = &self.loadings.b * h;
        for (xj, c) in x.iter_mut().zip(&self.centers) {
            *xj += c;
        }
        Ok(x)
    }

    /// Out-of-sample reconstruction of every observation in `dataset`; one `n_i × p`
    /// matrix per subject, in original units.
    pub fn predict(&self, dataset: &FunctionalDataset) -> Result<Vec<DMatrix<f64>>> {
        self.check_p(dataset.p())?;
        (0..dataset.n())
            .into_par_iter()
            .map(|i| {
                let s = &dataset.subjects()[i];
                let unit = self.dataset_unit_times(dataset, &s.times)?;
                let values = self.center_values(&dataset.raw_values(i))?;
                let score = self.score_unit(&unit, &values, &s.id)?;
                let mut out = DMatrix::zeros(unit.len(), self.p());
                for (l, &u) in unit.iter().enumerate() {
                    out.row_mut(l)
                        .copy_from(&self.reconstruct_unit(&score, u)?.transpose());
                }
                Ok(out)
            })
            .collect()
    }

    /// Dataset times re-expressed on this model's unit interval.
    pub(crate) fn dataset_unit_times(
        &self,
        dataset: &FunctionalDataset,
        times: &[f64],
    ) -> Result<Vec<f64>> {
        if dataset.time_map() == self.time_map {
            return Ok(times.to_vec());
        }
        let map = dataset.time_map();
        times
            .iter()
            .map(|&s| self.time_map.to_unit(map.inverse(s)))
            .collect()
    }

    /// In-sample reconstruction from the stored training scores.
    pub fn fitted_values(&self, dataset: &FunctionalDataset) -> Result<Vec<DMatrix<f64>>> {
        let scores = self.scores();
        if scores.nrows() != dataset.n() {
            return Err(FafpcaError::DimensionMismatch(format!(
                "model was fitted on {} subjects, dataset has {}",
                scores.nrows(),
                dataset.n()
            )));
        }
        dataset
            .subjects()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let z = scores.row(i).transpose();
                let unit = self.dataset_unit_times(dataset, &s.times)?;
                let mut out = DMatrix::zeros(unit.len(), self.p());
                for (l, &u) in unit.iter().enumerate() {
                    out.row_mut(l).copy_from(&self.reconstruct_unit(&z, u)?.transpose());
                }
                Ok(out)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SubjectRecord;

    fn basis(knots: usize) -> OrthoSplineBasis {
        basis::orthonormalize(&basis::make_raw_basis(3, knots).unwrap(), 256).unwrap()
    }

    fn dataset_from(rows: Vec<(Vec<f64>, DMatrix<f64>)>) -> FunctionalDataset {
        let p = rows[0].1.ncols();
        let subjects = rows
            .into_iter()
            .enumerate()
            .map(|(i, (times, values))| SubjectRecord {
                id: format!("s{i}"),
                times,
                values,
            })
            .collect();
        FunctionalDataset::new(p, subjects, TimeMap::identity(), None).unwrap()
    }

    #[test]
    fn scalar_loading_is_one() {
        let d = dataset_from(vec![
            (vec![0.1, 0.4], DMatrix::from_column_slice(2, 1, &[-2.0, 1.0])),
            (vec![0.3], DMatrix::from_column_slice(1, 1, &[0.5])),
        ]);
        let l = estimate_loadings(&d, 1).unwrap();
        assert_eq!(l.b.shape(), (1, 1));
        assert!((l.b[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rank_one_loadings() {
        let b = DVector::from_vec(vec![0.6, 0.0, -0.8]);
        let rows = (0..5)
            .map(|i| {
                let times = vec![0.1, 0.5, 0.9];
                let z = DVector::from_fn(3, |l, _| ((i * 3 + l) as f64 * 0.7).sin() + 0.1);
                (times, &z * b.transpose())
            })
            .collect();
        let d = dataset_from(rows);
        let l = estimate_loadings(&d, 1).unwrap();
        for j in 0..3 {
            assert!((l.b[(j, 0)] - 3f64.sqrt() * b[j]).abs() < 1e-12);
        }
        assert!(matches!(
            estimate_loadings(&d, 2),
            Err(FafpcaError::RankDeficient { requested: 2, rank: 1 })
        ));
        assert!(estimate_loadings(&d, 0).is_err());
    }

    #[test]
    fn response_recovers_spline_coefficients() {
        let ob = basis(3);
        let tau = ob.tau_n();
        let coef = DVector::from_fn(tau, |a, _| (a as f64 + 1.0).ln() - 0.7);
        let times: Vec<f64> = (0..2 * tau).map(|l| (l as f64 + 0.5) / (2 * tau) as f64).collect();
        // p = 2 with loadings (1, 1): p⁻¹ Σ_j b_j X_j = h when X_j = h
        let vals = DMatrix::from_fn(times.len(), 2, |l, _| coef.dot(&ob.eval(times[l]).unwrap()));
        let loadings = LoadingMatrix {
            b: DMatrix::from_element(2, 1, 1.0),
            eigvals: vec![1.0],
        };
        let w = subject_response("x", &times, &vals, &loadings.b, &ob, 0.0).unwrap();
        assert!((w.column(0) - &coef).amax() < 1e-8);

        let big = subject_response("x", &times, &vals, &loadings.b, &ob, 1e12).unwrap();
        assert!(big.amax() < 1e-8);
    }

    #[test]
    fn singular_subject_is_named() {
        let ob = basis(6);
        let vals = DMatrix::from_element(2, 1, 1.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        let err = subject_response("lonely", &[0.2, 0.3], &vals, &b, &ob, 0.0).unwrap_err();
        match err {
            FafpcaError::SingularSubject { subject, .. } => assert_eq!(subject, "lonely"),
            other => panic!("unexpected {other}"),
        }
        assert!(subject_response("lonely", &[0.2, 0.3], &vals, &b, &ob, 1e-3).is_ok());
    }

    #[test]
    fn single_column_block() {
        let tau = 5;
        let c = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let mut w = DMatrix::zeros(4, tau);
        w.set_column(2, &c);
        let b = estimate_block(&w, 1).unwrap();
        let root = (tau as f64).sqrt();
        for a in 0..tau {
            let want = if a == 2 { root } else { 0.0 };
            assert!((b.theta[(0, a)] - want).abs() < 1e-12);
        }
        let scale = b.scores[(0, 0)] / c[0];
        assert!((b.scores.column(0) - &c * scale).amax() < 1e-12);
        assert!(estimate_block(&w, 2).is_err());
        assert!(estimate_block(&w, 0).is_err());
    }

    #[test]
    fn block_identities() {
        let w = DMatrix::from_fn(12, 7, |i, j| ((i * 7 + j) as f64 * 1.3).sin() + 0.2 * i as f64);
        let b = estimate_block(&w, 3).unwrap();
        let tau = 7.0;
        let tt = &b.theta * b.theta.transpose() / tau;
        assert!((tt - DMatrix::identity(3, 3)).amax() < 1e-10);
        let zz = b.scores.transpose() * &b.scores;
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { b.eigvals[r] / tau } else { 0.0 };
                assert!((zz[(r, c)] - want).abs() < 1e-8 * b.eigvals[0]);
            }
        }
    }

    #[test]
    fn fit_guards() {
        let d = dataset_from(vec![(vec![0.1, 0.5], DMatrix::from_element(2, 2, 1.0))]);
        assert!(fit(&d, 0, 1, &FitConfig::default()).is_err());
        assert!(fit(&d, 1, 0, &FitConfig::default()).is_err());
        assert!(fit(&d, 3, 1, &FitConfig::default()).is_err());
        assert!(fit(&d, 1, 2, &FitConfig::default()).is_err());
    }
}
