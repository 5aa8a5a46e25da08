//! Data-generating processes for the two simulation scenarios, plus a replicate
//! driver that fits and scores every draw.
//!
//! Randomness: every draw comes from a ChaCha8 generator seeded with the replicate
//! seed. Each logical source (loading design rows, score draws, observation times,
//! noise, ...) and each subject gets its own ChaCha stream, so the data for subject
//! `i` does not depend on how many subjects were generated before it or on thread
//! scheduling. Stream ids are `purpose << 40 | role << 32 | index`.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis;
use crate::data::{FunctionalDataset, SubjectRecord, TimeMap};
use crate::error::{invalid, FafpcaError, Result};
use crate::estimator::{fit, FitConfig};
use crate::metrics::{self, SimTruth, TruthEigenfunctions};
use crate::selection;
use crate::spectra::{fix_sign, top_eigen};

/// Raw time domain of both scenarios.
pub const DOMAIN: (f64, f64) = (0.0, 10.0);
pub const DEFAULT_N_OBS: usize = 20;
/// Off-diagonal correlation of the correlated-noise case.
pub const EQUICORRELATION: f64 = 0.3;
/// Lag-one correlation of the AR(1)-type covariance `0.5^{|i-j|}`.
pub const AR_RHO: f64 = 0.5;

const DUPLICATE_NUDGE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
enum Purpose {
    LoadingDesign = 1,
    Scores = 2,
    Times = 3,
    Noise = 4,
    SplineTruth = 5,
}

/// Whether a draw is the fitted sample or an independent hold-out sample from the
/// same model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

fn stream(seed: u64, purpose: Purpose, role: Role, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let role_bit = match role {
        Role::Train => 0,
        Role::Test => 1,
    };
    rng.set_stream(((purpose as u64) << 40) | (role_bit << 32) | index);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// One draw from `N(0, Σ)` with `Σ_ij = ρ^{|i-j|}`.
fn ar1_vector(rng: &mut ChaCha8Rng, p: usize, rho: f64) -> DVector<f64> {
    let innov = (1.0 - rho * rho).sqrt();
    let mut out = DVector::zeros(p);
    let mut prev = 0.0;
    for j in 0..p {
        prev = if j == 0 {
            normal(rng)
        } else {
            rho * prev + innov * normal(rng)
        };
        out[j] = prev;
    }
    out
}

/// `n_obs` sorted times on the raw domain.
fn uniform_times(rng: &mut ChaCha8Rng, n_obs: usize) -> Vec<f64> {
    let (lo, hi) = DOMAIN;
    let mut t: Vec<f64> = (0..n_obs).map(|_| rng.random_range(lo..hi)).collect();
    t.sort_by(f64::total_cmp);
    for l in 1..t.len() {
        if t[l] <= t[l - 1] {
            t[l] = t[l - 1] + DUPLICATE_NUDGE;
        }
    }
    t
}

fn grid_times(n_obs: usize) -> Vec<f64> {
    let (lo, hi) = DOMAIN;
    (0..n_obs)
        .map(|l| lo + (hi - lo) * (l as f64 + 0.5) / n_obs as f64)
        .collect()
}

/// Noise covariance of Scenario 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaCase {
    /// `Σ = I`.
    Identity,
    /// Unit variances with all correlations equal to 0.3.
    Equicorrelated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario1Config {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub sigma_case: SigmaCase,
    pub n_obs: usize,
    pub seed: u64,
}

impl Scenario1Config {
    pub fn new(n: usize, p: usize, k: usize, sigma_case: SigmaCase, seed: u64) -> Self {
        Scenario1Config {
            n,
            p,
            k,
            sigma_case,
            n_obs: DEFAULT_N_OBS,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(invalid!("scenario 1 needs K >= 2, got {}", self.k));
        }
        if self.n == 0 || self.p == 0 || self.n_obs == 0 {
            return Err(invalid!("n, p and n_i must be positive"));
        }
        Ok(())
    }
}

/// Diagonal of `Σ_{ζ,k}` for 1-based `k`: `3 − (k−1)/(K−1)`.
pub fn scenario1_score_variance(k: usize, big_k: usize) -> f64 {
    3.0 - (k as f64 - 1.0) / (big_k as f64 - 1.0)
}

/// `φ_k(t) = sin((2k−1)πt/10)` for 1-based `k` on the raw domain.
pub fn scenario1_eigenfunction(k: usize, t: f64) -> f64 {
    ((2.0 * k as f64 - 1.0) * std::f64::consts::PI * t / 10.0).sin()
}

/// Draw `ζ_ik ∈ R^p` from `N(0, Σ_{ζ,k})`.
fn scenario1_scores(rng: &mut ChaCha8Rng, p: usize, k: usize, big_k: usize) -> DVector<f64> {
    let extra = (scenario1_score_variance(k, big_k) - 1.0).sqrt();
    let mut z = ar1_vector(rng, p, AR_RHO);
    for v in z.iter_mut() {
        *v += extra * normal(rng);
    }
    z
}

fn scenario1_noise(rng: &mut ChaCha8Rng, p: usize, case: SigmaCase) -> DVector<f64> {
    match case {
        SigmaCase::Identity => DVector::from_fn(p, |_, _| normal(rng)),
        SigmaCase::Equicorrelated => {
            let common = EQUICORRELATION.sqrt() * normal(rng);
            let own = (1.0 - EQUICORRELATION).sqrt();
            DVector::from_fn(p, |_, _| common + own * normal(rng))
        }
    }
}

/// Scenario 1: `X_i(t) = Σ_k ζ_ik φ_k(t) + ε_i(t)`, noise independent across times.
pub fn generate_scenario1(cfg: &Scenario1Config) -> Result<FunctionalDataset> {
    generate_scenario1_role(cfg, Role::Train)
}

pub fn generate_scenario1_role(cfg: &Scenario1Config, role: Role) -> Result<FunctionalDataset> {
    cfg.validate()?;
    let subjects: Vec<SubjectRecord> = (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let idx = i as u64;
            let mut score_rng = stream(cfg.seed, Purpose::Scores, role, idx);
            let scores: Vec<DVector<f64>> = (1..=cfg.k)
                .map(|k| scenario1_scores(&mut score_rng, cfg.p, k, cfg.k))
                .collect();
            let times = uniform_times(&mut stream(cfg.seed, Purpose::Times, role, idx), cfg.n_obs);
            let mut noise_rng = stream(cfg.seed, Purpose::Noise, role, idx);
            let mut values = DMatrix::zeros(cfg.n_obs, cfg.p);
            for (l, &t) in times.iter().enumerate() {
                let mut x = scenario1_noise(&mut noise_rng, cfg.p, cfg.sigma_case);
                for (k, z) in scores.iter().enumerate() {
                    x.axpy(scenario1_eigenfunction(k + 1, t), z, 1.0);
                }
                values.row_mut(l).copy_from(&x.transpose());
            }
            SubjectRecord {
                id: format!("{i}"),
                times,
                values,
            }
        })
        .collect();
    FunctionalDataset::from_raw_times(
        cfg.p,
        subjects,
        TimeMap::from_range(DOMAIN.0, DOMAIN.1),
        None,
    )
}

/// Eigenfunction family of Scenario 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum EigenFamily {
    /// Sine/cosine functions on the raw domain.
    Trig,
    /// Random orthonormal functions inside a cubic-spline span (exactly representable
    /// by a model using the same basis).
    Spline {
        degree: usize,
        interior_knots: usize,
        n_quad: usize,
    },
}

/// Observation-time design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeDesign {
    /// Independent `U(0, 10)` times per subject.
    Uniform,
    /// The same equispaced midpoint grid for every subject.
    CommonGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario2Config {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub k: usize,
    pub n_obs: usize,
    pub noise_sd: f64,
    pub eigen: EigenFamily,
    pub design: TimeDesign,
    pub seed: u64,
}

impl Scenario2Config {
    pub fn new(n: usize, p: usize, q: usize, k: usize, seed: u64) -> Self {
        Scenario2Config {
            n,
            p,
            q,
            k,
            n_obs: DEFAULT_N_OBS,
            noise_sd: 1.0,
            eigen: EigenFamily::Trig,
            design: TimeDesign::Uniform,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.q == 0 || self.k == 0 || self.n == 0 || self.p == 0 || self.n_obs == 0 {
            return Err(invalid!("n, p, q, K and n_i must be positive"));
        }
        if self.k * self.q > self.n {
            return Err(invalid!(
                "K·q = {} exceeds n = {}: the score construction needs Kq <= n",
                self.k * self.q,
                self.n
            ));
        }
        if self.q > self.p {
            return Err(invalid!("q = {} exceeds p = {}", self.q, self.p));
        }
        if self.q > self.n {
            return Err(invalid!("q = {} exceeds n = {}", self.q, self.n));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(invalid!("noise standard deviation must be nonnegative"));
        }
        Ok(())
    }
}

/// `B = √p Q` where `Q` comes from the QR factorization of `K'K_q`, `K_q` holding the
/// top-`q` eigenvectors of `KK'` for an `n × p` Gaussian design `K`.
fn scenario2_loadings(cfg: &Scenario2Config) -> Result<DMatrix<f64>> {
    let mut design = DMatrix::zeros(cfg.n, cfg.p);
    for i in 0..cfg.n {
        let mut rng = stream(cfg.seed, Purpose::LoadingDesign, Role::Train, i as u64);
        design
            .row_mut(i)
            .copy_from(&ar1_vector(&mut rng, cfg.p, AR_RHO).transpose());
    }
    let gram = &design * design.transpose();
    let top = top_eigen(&gram, cfg.q)?;
    let bn = design.tr_mul(&top.vectors);
    let q_factor = bn.qr().q();
    let mut b = q_factor.columns(0, cfg.q).into_owned() * (cfg.p as f64).sqrt();
    for mut col in b.column_iter_mut() {
        fix_sign(col.as_mut_slice());
    }
    Ok(b)
}

/// `ζ = ζ* M` with `M` the eigenvectors of `ζ*'ζ*`, so `ζ'ζ` is diagonal and decreasing.
/// Column `c` (0-based) of `ζ*` has variance `Kq/(c+1)`.
fn scenario2_scores(cfg: &Scenario2Config, role: Role) -> Result<DMatrix<f64>> {
    let kq = cfg.k * cfg.q;
    let sd: Vec<f64> = (1..=kq).map(|c| (kq as f64 / c as f64).sqrt()).collect();
    let mut raw = DMatrix::zeros(cfg.n, kq);
    for i in 0..cfg.n {
        let mut rng = stream(cfg.seed, Purpose::Scores, role, i as u64);
        for (c, s) in sd.iter().enumerate() {
            raw[(i, c)] = s * normal(&mut rng);
        }
    }
    let eig = top_eigen(&raw.tr_mul(&raw), kq)?;
    Ok(raw * eig.vectors)
}

/// Random orthonormal spline eigenfunctions, `K` per factor, oriented positive at the
/// start of the domain.
fn spline_truth(
    cfg: &Scenario2Config,
    degree: usize,
    interior_knots: usize,
    n_quad: usize,
) -> Result<TruthEigenfunctions> {
    let raw = basis::make_raw_basis(degree, interior_knots)?;
    let ortho = basis::orthonormalize(&raw, n_quad)?;
    let tau = ortho.tau_n();
    if cfg.k > tau {
        return Err(invalid!("K = {} exceeds the spline dimension {tau}", cfg.k));
    }
    let nodes = ortho.quadrature().nodes;
    let mut theta = Vec::with_capacity(cfg.q);
    for j in 0..cfg.q {
        let mut rng = stream(cfg.seed, Purpose::SplineTruth, Role::Train, j as u64);
        let g = DMatrix::from_fn(tau, cfg.k, |_, _| normal(&mut rng));
        let q = g.qr().q();
        let mut t = q.columns(0, cfg.k).transpose() * (tau as f64).sqrt();
        for k in 0..cfg.k {
            let row = t.row(k).transpose();
            let mut lead = row.dot(&ortho.eval(0.0)?);
            if lead.abs() < crate::estimator::SIGN_PASS_ZERO {
                for &s in &nodes {
                    lead = row.dot(&ortho.eval(s)?);
                    if lead.abs() > crate::estimator::SIGN_PASS_ZERO {
                        break;
                    }
                }
            }
            if lead < 0.0 {
                t.row_mut(k).neg_mut();
            }
        }
        theta.push(t);
    }
    Ok(TruthEigenfunctions::Spline {
        basis: ortho,
        theta,
    })
}

/// Truth shared by the training and hold-out draws: loadings and eigenfunctions.
#[derive(Debug, Clone)]
pub struct Scenario2Structure {
    pub b0: DMatrix<f64>,
    pub eigenfunctions: TruthEigenfunctions,
}

pub fn scenario2_structure(cfg: &Scenario2Config) -> Result<Scenario2Structure> {
    cfg.validate()?;
    let b0 = scenario2_loadings(cfg)?;
    let eigenfunctions = match cfg.eigen {
        EigenFamily::Trig => TruthEigenfunctions::Trig,
        EigenFamily::Spline {
            degree,
            interior_knots,
            n_quad,
        } => spline_truth(cfg, degree, interior_knots, n_quad)?,
    };
    Ok(Scenario2Structure { b0, eigenfunctions })
}

/// Scenario 2: `X_i(t) = B h_i(t) + u_i(t)` with `h_ij(t) = Σ_k ξ_ijk φ_jk(t)`.
pub fn generate_scenario2(cfg: &Scenario2Config) -> Result<(FunctionalDataset, SimTruth)> {
    let structure = scenario2_structure(cfg)?;
    generate_scenario2_with(cfg, &structure, Role::Train)
}

/// Draw scores, times and noise for `role` on top of a fixed structure.
pub fn generate_scenario2_with(
    cfg: &Scenario2Config,
    structure: &Scenario2Structure,
    role: Role,
) -> Result<(FunctionalDataset, SimTruth)> {
    cfg.validate()?;
    let zeta = scenario2_scores(cfg, role)?;
    let truth = SimTruth {
        b0: structure.b0.clone(),
        zeta0: zeta,
        k: cfg.k,
        eigenfunctions: structure.eigenfunctions.clone(),
        sigma: cfg.noise_sd,
    };
    let map = TimeMap::from_range(DOMAIN.0, DOMAIN.1);
    let kk = cfg.k;
    let subjects: Vec<SubjectRecord> = (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let idx = i as u64;
            let times = match cfg.design {
                TimeDesign::Uniform => {
                    uniform_times(&mut stream(cfg.seed, Purpose::Times, role, idx), cfg.n_obs)
                }
                TimeDesign::CommonGrid => grid_times(cfg.n_obs),
            };
            let mut noise_rng = stream(cfg.seed, Purpose::Noise, role, idx);
            let mut values = DMatrix::zeros(cfg.n_obs, cfg.p);
            for (l, &t) in times.iter().enumerate() {
                let s = map.forward(t);
                let mut h = DVector::zeros(cfg.q);
                for j in 0..cfg.q {
                    for k in 0..kk {
                        h[j] += truth.zeta0[(i, j * kk + k)] * truth.eigenfunction(j, k, s)?;
                    }
                }
                let mut x = &truth.b0 * h;
                if cfg.noise_sd > 0.0 {
                    for v in x.iter_mut() {
                        *v += cfg.noise_sd * normal(&mut noise_rng);
                    }
                }
                values.row_mut(l).copy_from(&x.transpose());
            }
            Ok(SubjectRecord {
                id: format!("{i}"),
                times,
                values,
            })
        })
        .collect::<Result<_>>()?;
    let data = FunctionalDataset::from_raw_times(cfg.p, subjects, map, None)?;
    Ok((data, truth))
}

/// Scenario to replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "lowercase")]
pub enum ScenarioSpec {
    #[serde(rename = "1")]
    One(Scenario1Config),
    #[serde(rename = "2")]
    Two(Scenario2Config),
}

impl ScenarioSpec {
    /// The same scenario drawn with another seed.
    pub fn with_seed(&self, seed: u64) -> ScenarioSpec {
        match self {
            ScenarioSpec::One(c) => ScenarioSpec::One(Scenario1Config { seed, ..c.clone() }),
            ScenarioSpec::Two(c) => ScenarioSpec::Two(Scenario2Config { seed, ..c.clone() }),
        }
    }

    fn dims(&self) -> (usize, usize) {
        match self {
            ScenarioSpec::One(c) => (c.n, c.p),
            ScenarioSpec::Two(c) => (c.n, c.p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicateOptions {
    pub fit: FitConfig,
    /// Number of factors; chosen by explained variance when absent (Scenario 2 falls
    /// back to its generating `q`).
    pub q: Option<usize>,
    /// Components per factor; same fallback rules as `q`.
    pub k: Option<usize>,
    pub threshold: f64,
    /// Draw an independent test sample of the same size for the prediction error.
    pub test_set: bool,
    /// Record wall-clock fit time. Off makes the metrics file byte-reproducible.
    pub record_timing: bool,
    pub metric_n_quad: usize,
}

impl Default for ReplicateOptions {
    fn default() -> Self {
        ReplicateOptions {
            fit: FitConfig::default(),
            q: None,
            k: None,
            threshold: selection::DEFAULT_THRESHOLD,
            test_set: true,
            record_timing: true,
            metric_n_quad: basis::DEFAULT_N_QUAD,
        }
    }
}

/// One line of the metrics file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub q: Option<usize>,
    pub k: Option<usize>,
    pub rmse_l: Option<f64>,
    pub rmse_f: Option<f64>,
    pub rmse_e: Option<f64>,
    pub pe: Option<f64>,
    pub fit_seconds: Option<f64>,
    /// Sign flips applied while aligning loadings, scores and eigenfunctions.
    pub flips: Option<usize>,
    pub error: Option<String>,
}

pub const METRICS_HEADER: [&str; 13] = [
    "replicate",
    "seed",
    "n",
    "p",
    "q",
    "K",
    "rmse_l",
    "rmse_f",
    "rmse_e",
    "pe",
    "fit_seconds",
    "flips",
    "error",
];

/// Choose `(q, K)` by explained variance, shrinking `K` (then `q`) until `Kq <= n`.
pub fn auto_dimensions(
    data: &FunctionalDataset,
    fit_cfg: &FitConfig,
    threshold: f64,
    fixed_q: Option<usize>,
    fixed_k: Option<usize>,
) -> Result<(usize, usize)> {
    let n = data.n();
    let q = match fixed_q {
        Some(q) => q,
        None => {
            let cap = fixed_k.map_or(n, |k| (n / k.max(1)).max(1));
            selection::select_q(data, threshold)?.q.min(cap)
        }
    };
    let k = match fixed_k {
        Some(k) => k,
        None => {
            let raw = basis::make_raw_basis(fit_cfg.degree, fit_cfg.resolved_knots(n))?;
            let ortho = basis::orthonormalize(&raw, fit_cfg.n_quad)?;
            let ridge = fit_cfg.resolved_ridge(ortho.tau_n());
            let k = selection::select_k(data, q, &ortho, ridge, threshold)?.k;
            k.min((n / q).max(1))
        }
    };
    Ok((q, k))
}

fn run_one(spec: &ScenarioSpec, opts: &ReplicateOptions) -> Result<ReplicateRow> {
    let (n, p) = spec.dims();
    let mut row = ReplicateRow {
        n,
        p,
        ..Default::default()
    };
    let mut fit_cfg = opts.fit.clone();
    match spec {
        ScenarioSpec::One(cfg) => {
            fit_cfg.seed = Some(cfg.seed);
            let train = crate::data::center(&generate_scenario1_role(cfg, Role::Train)?);
            let (q, k) = auto_dimensions(&train, &fit_cfg, opts.threshold, opts.q, opts.k)?;
            row.q = Some(q);
            row.k = Some(k);
            let start = Instant::now();
            let model = fit(&train, q, k, &fit_cfg)?;
            let elapsed = start.elapsed().as_secs_f64();
            if opts.record_timing {
                row.fit_seconds = Some(elapsed);
            }
            if opts.test_set {
                let test = generate_scenario1_role(cfg, Role::Test)?;
                row.pe = Some(metrics::prediction_error(&model, &test)?);
            }
        }
        ScenarioSpec::Two(cfg) => {
            fit_cfg.seed = Some(cfg.seed);
            let structure = scenario2_structure(cfg)?;
            let (train, truth) = generate_scenario2_with(cfg, &structure, Role::Train)?;
            let q = opts.q.unwrap_or(cfg.q);
            let k = opts.k.unwrap_or(cfg.k);
            row.q = Some(q);
            row.k = Some(k);
            let start = Instant::now();
            let model = fit(&train, q, k, &fit_cfg)?;
            let elapsed = start.elapsed().as_secs_f64();
            if opts.record_timing {
                row.fit_seconds = Some(elapsed);
            }
            if q == cfg.q && k == cfg.k {
                let (b, fl) = metrics::align_signs(&model.loadings.b, &truth.b0)?;
                let (z, fz) = metrics::align_signs(&model.scores(), &truth.zeta0)?;
                let (aligned, fe) =
                    metrics::align_eigenfunctions(&model, &truth, opts.metric_n_quad)?;
                row.rmse_l = Some(metrics::rmse_loadings(&b, &truth.b0)?);
                row.rmse_f = Some(metrics::rmse_factors(&z, &truth.zeta0)?);
                row.rmse_e = Some(metrics::rmse_eigenfunctions(
                    &aligned,
                    &truth,
                    opts.metric_n_quad,
                )?);
                row.flips = Some(fl + fz + fe);
            }
            if opts.test_set {
                let (test, _) = generate_scenario2_with(cfg, &structure, Role::Test)?;
                row.pe = Some(metrics::prediction_error(&model, &test)?);
            }
        }
    }
    Ok(row)
}

/// Run `r` replicates with seeds `base_seed + 1, …, base_seed + r`. Failures become
/// rows carrying the error message. Rows come back in replicate order whatever the
/// thread count.
pub fn run_replicates(
    spec: &ScenarioSpec,
    r: usize,
    base_seed: u64,
    opts: &ReplicateOptions,
) -> Result<Vec<ReplicateRow>> {
    if r == 0 {
        return Err(invalid!("number of replicates must be at least 1"));
    }
    let (n, p) = spec.dims();
    Ok((1..=r)
        .into_par_iter()
        .map(|rep| {
            let seed = base_seed.wrapping_add(rep as u64);
            let seeded = spec.with_seed(seed);
            match run_one(&seeded, opts) {
                Ok(mut row) => {
                    row.replicate = rep;
                    row.seed = seed;
                    row
                }
                Err(e) => ReplicateRow {
                    replicate: rep,
                    seed,
                    n,
                    p,
                    error: Some(format!("{}: {e}", e.kind())),
                    ..Default::default()
                },
            }
        })
        .collect())
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

pub fn write_metrics_csv<W: Write>(rows: &[ReplicateRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.replicate.to_string(),
            r.seed.to_string(),
            r.n.to_string(),
            r.p.to_string(),
            opt(&r.q),
            opt(&r.k),
            opt(&r.rmse_l),
            opt(&r.rmse_f),
            opt(&r.rmse_e),
            opt(&r.pe),
            opt(&r.fit_seconds),
            opt(&r.flips),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()
        .map_err(|e| FafpcaError::io("<metrics writer>", e))?;
    Ok(())
}

/// Median of the finite values of a column.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario1_variances() {
        assert_eq!(scenario1_score_variance(1, 2), 3.0);
        assert_eq!(scenario1_score_variance(2, 2), 2.0);
        assert_eq!(scenario1_score_variance(10, 10), 2.0);
        assert!(Scenario1Config::new(5, 3, 1, SigmaCase::Identity, 0)
            .validate()
            .is_err());
    }

    #[test]
    fn score_draws_match_covariance() {
        // 10⁴ draws put the 5e-2 band within two standard errors of the
        // variance-3 entries; 10⁵ keeps it beyond five.
        let p = 4;
        let n = 100_000;
        for (k, big_k) in [(1, 2), (2, 2)] {
            let mut rng = stream(11, Purpose::Scores, Role::Train, k as u64);
            let draws: Vec<DVector<f64>> =
                (0..n).map(|_| scenario1_scores(&mut rng, p, k, big_k)).collect();
            for a in 0..p {
                for b in 0..p {
                    let cov: f64 = draws.iter().map(|z| z[a] * z[b]).sum::<f64>() / n as f64;
                    let want = if a == b {
                        scenario1_score_variance(k, big_k)
                    } else {
                        AR_RHO.powi((a as i32 - b as i32).abs())
                    };
                    assert!((cov - want).abs() < 5e-2, "k={k} ({a},{b}) {cov} vs {want}");
                }
            }
        }
    }

    #[test]
    fn equicorrelated_noise_covariance() {
        let p = 3;
        let n = 20_000;
        let mut rng = stream(5, Purpose::Noise, Role::Train, 0);
        let draws: Vec<DVector<f64>> = (0..n)
            .map(|_| scenario1_noise(&mut rng, p, SigmaCase::Equicorrelated))
            .collect();
        for a in 0..p {
            for b in 0..p {
                let cov: f64 = draws.iter().map(|z| z[a] * z[b]).sum::<f64>() / n as f64;
                let want = if a == b { 1.0 } else { EQUICORRELATION };
                assert!((cov - want).abs() < 3e-2);
            }
        }
    }

    #[test]
    fn uniform_times_sorted_in_domain() {
        let mut rng = stream(1, Purpose::Times, Role::Train, 0);
        let t = uniform_times(&mut rng, 50);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert!(t.iter().all(|&x| (0.0..10.0).contains(&x)));
    }

    #[test]
    fn scenario2_construction_identities() {
        let cfg = Scenario2Config::new(60, 40, 3, 2, 4);
        let (data, truth) = generate_scenario2(&cfg).unwrap();
        assert_eq!((data.n(), data.p()), (60, 40));
        let btb = truth.b0.tr_mul(&truth.b0) / 40.0;
        assert!((btb - DMatrix::identity(3, 3)).amax() < 1e-10);
        let ztz = truth.zeta0.tr_mul(&truth.zeta0);
        let top = ztz[(0, 0)];
        for a in 0..6 {
            for b in 0..6 {
                if a != b {
                    assert!(ztz[(a, b)].abs() < 1e-8 * top);
                }
            }
            if a > 0 {
                assert!(ztz[(a, a)] <= ztz[(a - 1, a - 1)]);
            }
        }
        for c in 0..3 {
            let col: Vec<f64> = truth.b0.column(c).iter().copied().collect();
            let first = col.iter().find(|v| v.abs() > 1e-8).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn scenario2_rejects_too_many_scores() {
        let cfg = Scenario2Config::new(5, 10, 3, 2, 0);
        assert!(generate_scenario2(&cfg).is_err());
    }

    #[test]
    fn streams_independent_of_sample_size() {
        let small = generate_scenario1(&Scenario1Config::new(3, 4, 2, SigmaCase::Identity, 9)).unwrap();
        let big = generate_scenario1(&Scenario1Config::new(6, 4, 2, SigmaCase::Identity, 9)).unwrap();
        for i in 0..3 {
            assert_eq!(small.subjects()[i], big.subjects()[i]);
        }
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median([3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median([4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median([f64::NAN]), None);
    }
}
