use fafpca::estimator::fit;
use fafpca::simulate::{generate_scenario2, Scenario2Config};
use fafpca::FitConfig;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn max_dev_from_identity(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    (m - DMatrix::<f64>::identity(n, n)).amax()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fits_satisfy_identification(
        seed in 0u64..10_000,
        p in 3usize..20,
        q in 1usize..3,
        k in 1usize..3,
        n_obs in 8usize..25,
    ) {
        let mut cfg = Scenario2Config::new(30, p, q, k, seed);
        cfg.n_obs = n_obs;
        let (data, _) = generate_scenario2(&cfg).unwrap();
        let fc = FitConfig { ridge: Some(1e-3), ..FitConfig::default() };
        let model = fit(&data, q, k, &fc).unwrap();
        let b = &model.loadings.b;
        prop_assert!(max_dev_from_identity(&(b.tr_mul(b) / p as f64)) < 1e-8);
        let tau = model.tau_n() as f64;
        for block in &model.blocks {
            prop_assert!(max_dev_from_identity(&(&block.theta * block.theta.transpose() / tau)) < 1e-8);
            let zz = block.scores.tr_mul(&block.scores);
            for a in 0..k {
                prop_assert!((zz[(a, a)] - block.eigvals[a] / tau).abs() < 1e-8 * (1.0 + zz[(a, a)]));
                for c in 0..k {
                    if a != c {
                        prop_assert!(zz[(a, c)].abs() < 1e-6 * zz[(0, 0)]);
                    }
                }
            }
            prop_assert!(block.eigvals.windows(2).all(|w| w[0] >= w[1]));
        }
        for j in 0..q {
            for kk in 0..k {
                prop_assert!(model.eval_eigenfunction_unit(j, kk, 0.0).unwrap() > -1e-8);
            }
        }
    }

    #[test]
    fn predictions_scale_with_the_data(seed in 0u64..10_000, c in 0.1f64..10.0) {
        let (data, _) = generate_scenario2(&Scenario2Config::new(25, 6, 1, 1, seed)).unwrap();
        let model = fit(&data, 1, 1, &FitConfig::default()).unwrap();
        let s = &data.subjects()[0];
        let times: Vec<f64> = s.times.iter().map(|&u| data.time_map().inverse(u)).collect();
        let values = model.center_values(&data.raw_values(0)).unwrap();
        let a = model.score_subject(&times, &values).unwrap();
        let b = model.score_subject(&times, &(&values * c)).unwrap();
        prop_assert!((b - a * c).amax() < 1e-8 * (1.0 + c));
    }
}
