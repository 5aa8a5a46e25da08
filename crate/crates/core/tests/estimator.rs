mod common;

use fafpca::basis::{make_raw_basis, orthonormalize};
use fafpca::data::center;
use fafpca::estimator::{build_response, estimate_loadings, fit};
use fafpca::quadrature::Quadrature;
use fafpca::simulate::{generate_scenario2, Scenario2Config};
use fafpca::{FafpcaError, FitConfig, FunctionalDataset, SubjectRecord};
use nalgebra::{DMatrix, DVector};

fn small_dataset(seed: u64) -> FunctionalDataset {
    let cfg = Scenario2Config::new(40, 12, 2, 2, seed);
    generate_scenario2(&cfg).unwrap().0
}

/// Least squares by SVD of the stacked system `[M; √λ I] c = [y; 0]`.
fn least_squares_oracle(m: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> DVector<f64> {
    let (rows, tau) = m.shape();
    let mut a = DMatrix::zeros(rows + tau, tau);
    a.rows_mut(0, rows).copy_from(m);
    for d in 0..tau {
        a[(rows + d, d)] = ridge.sqrt();
    }
    let mut rhs = DVector::zeros(rows + tau);
    rhs.rows_mut(0, rows).copy_from(y);
    a.svd(true, true).solve(&rhs, 1e-14).unwrap()
}

#[test]
fn response_matches_least_squares_oracle() {
    let data = center(&small_dataset(3));
    let loadings = estimate_loadings(&data, 2).unwrap();
    let basis = orthonormalize(&make_raw_basis(3, 4).unwrap(), 1024).unwrap();
    for ridge in [1e-6, 1e-3, 0.5] {
        let w = build_response(&data, &loadings, &basis, ridge).unwrap();
        for (i, s) in data.subjects().iter().enumerate() {
            let m = DMatrix::from_fn(s.n_obs(), basis.tau_n(), |l, c| basis.eval(s.times[l]).unwrap()[c]);
            let paths = &s.values * &loadings.b / data.p() as f64;
            for k in 0..2 {
                let c = least_squares_oracle(&m, &paths.column(k).into_owned(), ridge);
                let got = w[k].row(i).transpose();
                assert!((got - c).amax() < 1e-8, "subject {i} factor {k} ridge {ridge}");
            }
        }
    }
}

#[test]
fn response_interpolates_spline_paths() {
    let basis = orthonormalize(&make_raw_basis(3, 3).unwrap(), 1024).unwrap();
    let tau = basis.tau_n();
    let c = DVector::from_fn(tau, |i, _| (i as f64 * 0.7).cos());
    let b = DMatrix::from_fn(5, 1, |i, _| [1.0, -1.0, 1.0, 1.0, -1.0][i]);
    let subjects = (0..3)
        .map(|i| {
            let times: Vec<f64> = (0..tau + 3).map(|l| (l as f64 + 0.3 + 0.1 * i as f64) / (tau + 4) as f64).collect();
            let values = DMatrix::from_fn(times.len(), 5, |l, j| b[(j, 0)] * c.dot(&basis.eval(times[l]).unwrap()));
            SubjectRecord { id: i.to_string(), times, values }
        })
        .collect();
    let data = FunctionalDataset::new(5, subjects, fafpca::TimeMap::identity(), None)
        .unwrap()
        .centered_with(&[0.0; 5])
        .unwrap();
    let loadings = estimate_loadings(&data, 1).unwrap();
    let sign = if loadings.b[(0, 0)] > 0.0 { 1.0 } else { -1.0 };
    let w = build_response(&data, &loadings, &basis, 0.0).unwrap();
    let scale = (loadings.b.column(0).dot(&b.column(0)) / 5.0).abs();
    for i in 0..3 {
        let got = w[0].row(i).transpose() * sign;
        assert!((got - &c * scale).amax() < 1e-8);
    }
}

#[test]
fn huge_ridge_shrinks_response_to_zero() {
    let data = center(&small_dataset(4));
    let loadings = estimate_loadings(&data, 2).unwrap();
    let basis = orthonormalize(&make_raw_basis(3, 4).unwrap(), 1024).unwrap();
    let w = build_response(&data, &loadings, &basis, 1e12).unwrap();
    assert!(w.iter().all(|m| m.amax() < 1e-9));
}

#[test]
fn singular_subject_is_reported() {
    let data = center(&small_dataset(5));
    let mut subjects = data.uncentered().subjects().to_vec();
    subjects[0].times.truncate(2);
    subjects[0].values = subjects[0].values.rows(0, 2).into_owned();
    let thin = FunctionalDataset::new(12, subjects, data.time_map(), None).unwrap();
    let cfg = FitConfig {
        ridge: Some(0.0),
        ..FitConfig::default()
    };
    match fit(&thin, 2, 2, &cfg) {
        Err(FafpcaError::SingularSubject { subject, .. }) => assert_eq!(subject, "0"),
        other => panic!("expected a singular subject, got {other:?}"),
    }
}

#[test]
fn invalid_dimensions_are_rejected() {
    let data = small_dataset(6);
    let cfg = FitConfig::default();
    assert!(fit(&data, 0, 1, &cfg).is_err());
    assert!(fit(&data, 1, 0, &cfg).is_err());
    assert!(fit(&data, 13, 1, &cfg).is_err());
    assert!(fit(&data, 5, 9, &cfg).is_err());
}

#[test]
fn subject_order_does_not_change_the_fit() {
    let data = small_dataset(7);
    let model = fit(&data, 2, 2, &FitConfig::default()).unwrap();
    let order: Vec<usize> = (0..data.n()).rev().collect();
    let permuted = data.select(&order);
    let other = fit(&permuted, 2, 2, &FitConfig::default()).unwrap();
    assert!((&model.loadings.b - &other.loadings.b).amax() < 1e-10);
    for (a, b) in model.blocks.iter().zip(&other.blocks) {
        assert!((&a.theta - &b.theta).amax() < 1e-9);
        for (r, &src) in order.iter().enumerate() {
            assert!((a.scores.row(src) - b.scores.row(r)).amax() < 1e-9);
        }
    }
}

#[test]
fn variable_permutation_permutes_loading_rows() {
    let data = small_dataset(8);
    let model = fit(&data, 2, 2, &FitConfig::default()).unwrap();
    let p = data.p();
    let perm: Vec<usize> = (0..p).map(|j| (j * 5 + 3) % p).collect();
    let subjects = data
        .subjects()
        .iter()
        .map(|s| SubjectRecord {
            id: s.id.clone(),
            times: s.times.clone(),
            values: DMatrix::from_fn(s.n_obs(), p, |l, j| s.values[(l, perm[j])]),
        })
        .collect();
    let shuffled = FunctionalDataset::new(p, subjects, data.time_map(), None).unwrap();
    let other = fit(&shuffled, 2, 2, &FitConfig::default()).unwrap();
    let expected = DMatrix::from_fn(p, 2, |j, c| model.loadings.b[(perm[j], c)]);
    assert!(common::aligned_max_diff(&other.loadings.b, &expected) < 1e-9);
    // A flipped loading column flips the response, which leaves `Θ` unchanged.
    for (a, b) in model.blocks.iter().zip(&other.blocks) {
        assert!((&a.theta - &b.theta).amax() < 1e-8);
    }
}

#[test]
fn new_subject_scores_match_in_sample_scores() {
    let data = small_dataset(9);
    let model = fit(&data, 2, 2, &FitConfig::default()).unwrap();
    let scores = model.scores();
    for (i, s) in data.subjects().iter().enumerate().take(10) {
        let times: Vec<f64> = s.times.iter().map(|&u| data.time_map().inverse(u)).collect();
        let centered = model.center_values(&data.raw_values(i)).unwrap();
        let got = model.score_subject(&times, &centered).unwrap();
        assert!((got - scores.row(i).transpose()).amax() < 1e-9, "subject {i}");
    }
}

#[test]
fn scoring_is_linear_and_zero_preserving() {
    let data = small_dataset(10);
    let model = fit(&data, 2, 2, &FitConfig::default()).unwrap();
    let s = &data.subjects()[0];
    let t = &data.subjects()[1];
    let times: Vec<f64> = s.times.iter().map(|&u| data.time_map().inverse(u)).collect();
    let other = DMatrix::from_fn(s.n_obs(), data.p(), |l, j| t.values[(l % t.n_obs(), j)]);
    let a = model.score_subject(&times, &s.values).unwrap();
    let b = model.score_subject(&times, &other).unwrap();
    let combo = model
        .score_subject(&times, &(&s.values * 2.0 - &other * 0.5))
        .unwrap();
    assert!((combo - (a * 2.0 - b * 0.5)).amax() < 1e-9);
    let zero = model
        .score_subject(&times, &DMatrix::zeros(s.n_obs(), data.p()))
        .unwrap();
    assert_eq!(zero.amax(), 0.0);
}

#[test]
fn eigenfunctions_are_orthonormal() {
    let data = small_dataset(11);
    let model = fit(&data, 2, 2, &FitConfig::default()).unwrap();
    let (lo, hi) = model.time_map.range();
    let quad = Quadrature::composite_gauss2(2048);
    for j in 0..2 {
        for a in 0..2 {
            for b in 0..2 {
                // Inner product on the unit interval, evaluated through raw times.
                let ip = quad.integrate(|s| {
                    let t = lo + s * (hi - lo);
                    model.eval_eigenfunction(j, a, t, false).unwrap()
                        * model.eval_eigenfunction(j, b, t, false).unwrap()
                });
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((ip - expected).abs() < 1e-6, "block {j} ({a},{b}): {ip}");
            }
        }
    }
}

#[test]
fn out_of_range_times_need_extrapolation() {
    let data = small_dataset(12);
    let model = fit(&data, 2, 2, &FitConfig::default()).unwrap();
    let (_, hi) = model.time_map.range();
    assert!(model.eval_eigenfunction(0, 0, hi + 1.0, false).is_err());
    assert!(model.eval_eigenfunction(0, 0, hi + 1.0, true).unwrap().is_finite());
}

#[test]
fn predictions_on_training_data_match_fitted_values() {
    let data = small_dataset(13);
    let model = fit(&data, 2, 2, &FitConfig::default()).unwrap();
    let fitted = model.fitted_values(&data).unwrap();
    let predicted = model.predict(&data).unwrap();
    for (a, b) in fitted.iter().zip(&predicted) {
        assert!((a - b).amax() < 1e-9);
    }
}

#[test]
fn fit_is_deterministic_across_thread_counts() {
    let data = small_dataset(14);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| fit(&data, 2, 2, &FitConfig::default()).unwrap());
    let b = four.install(|| fit(&data, 2, 2, &FitConfig::default()).unwrap());
    assert_eq!(a, b);
}
