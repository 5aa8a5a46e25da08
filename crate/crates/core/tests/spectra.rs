mod common;

use fafpca::spectra::{cumulative_ratios, fix_sign, spectrum, top_eigen};
use nalgebra::DMatrix;
use rand::Rng;

#[test]
fn top_eigen_agrees_with_jacobi() {
    let mut rng = common::rng(11);
    for _ in 0..200 {
        let n = rng.random_range(1..=10);
        let a = common::random_symmetric(&mut rng, n);
        let (values, vectors) = common::jacobi_eigen(&a);
        let got = top_eigen(&a, n).unwrap();
        for (g, e) in got.values.iter().zip(&values) {
            assert!((g - e).abs() < 1e-10);
        }
        assert!(common::aligned_max_diff(&got.vectors, &vectors) < 1e-8);
    }
}

#[test]
fn spectrum_agrees_with_jacobi() {
    let mut rng = common::rng(12);
    for _ in 0..100 {
        let n = rng.random_range(1..=10);
        let a = common::random_symmetric(&mut rng, n);
        let (values, _) = common::jacobi_eigen(&a);
        for (g, e) in spectrum(&a).unwrap().iter().zip(&values) {
            assert!((g - e).abs() < 1e-10);
        }
    }
}

#[test]
fn eigenvectors_follow_the_sign_rule() {
    let mut rng = common::rng(13);
    for _ in 0..100 {
        let n = rng.random_range(2..=8);
        let a = common::random_symmetric(&mut rng, n);
        let got = top_eigen(&a, n).unwrap();
        for c in 0..n {
            let mut col: Vec<f64> = got.vectors.column(c).iter().copied().collect();
            let before = col.clone();
            fix_sign(&mut col);
            assert_eq!(col, before);
        }
    }
}

#[test]
fn repeated_eigenvalues_are_ordered_deterministically() {
    let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 3.0, 3.0, 2.0]));
    let got = top_eigen(&a, 3).unwrap();
    assert_eq!(got.values, vec![3.0, 3.0, 2.0]);
    assert_eq!(got.vectors[(1, 0)], 1.0);
    assert_eq!(got.vectors[(2, 1)], 1.0);
    assert_eq!(got.vectors[(3, 2)], 1.0);
}

#[test]
fn cumulative_ratios_are_monotone_and_end_at_one() {
    let mut rng = common::rng(14);
    for _ in 0..50 {
        let n = rng.random_range(2..=10);
        let g = DMatrix::from_fn(n + 3, n, |_, _| rng.random_range(-1.0..1.0));
        let curve = cumulative_ratios(&spectrum(&g.tr_mul(&g)).unwrap()).unwrap();
        assert!(curve.windows(2).all(|w| w[0] <= w[1] + 1e-15));
        assert!((curve.last().unwrap() - 1.0).abs() < 1e-12);
    }
}
