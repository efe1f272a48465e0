mod common;

use common::{cart_oracle, flat_snapshot, plan_oracle, random_dataset, to_oracle, TablePredictor};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sardino::pipeline::{collect_profile, split_profile, BackgroundLoadModel, ProfileGrid};
use sardino::planner::{
    fit_linear, fit_tree, plan_size, read_profile_csv, write_profile_csv, ModelKind, PredictorModel, TreeParams,
};

#[test]
fn tree_matches_exhaustive_cart() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let (xs, ys) = random_dataset(&mut rng);
        let params = TreeParams { max_depth: rng.random_range(1..=12), min_leaf: rng.random_range(1..=3) };
        let got = fit_tree(&xs, &ys, params).unwrap();
        got.check().unwrap();
        assert_eq!(to_oracle(&got), cart_oracle(&xs, &ys, params), "case {case}");
    }
}

#[test]
fn linear_fit_matches_pseudoinverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let (m, d) = (rng.random_range(30..80), rng.random_range(1..8));
        let xs: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.iter().sum::<f64>() + rng.random_range(-1.0..1.0)).collect();
        let a = DMatrix::from_fn(m, d + 1, |i, j| if j == 0 { 1.0 } else { xs[i][j - 1] });
        let beta = a.clone().pseudo_inverse(1e-12).unwrap() * DVector::from_vec(ys.clone());
        let fit = fit_linear(&xs, &ys).unwrap();
        assert!((fit.intercept - beta[0]).abs() < 1e-5, "{} vs {}", fit.intercept, beta[0]);
        for j in 0..d {
            assert!((fit.coef[j] - beta[j + 1]).abs() < 1e-5);
        }
    }
}

#[test]
fn profile_csv_round_trip_and_predictor_quality() {
    let model = BackgroundLoadModel::default();
    let samples = collect_profile(&model, &ProfileGrid::default(), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("profile.csv");
    write_profile_csv(&samples, &path).unwrap();
    assert_eq!(read_profile_csv(&path).unwrap(), samples);
    let (train, test) = split_profile(&samples, 4, 4);
    let dt = PredictorModel::fit(ModelKind::Dt, &train, true, TreeParams::default()).unwrap();
    let lr = PredictorModel::fit(ModelKind::Lr, &train, true, TreeParams::default()).unwrap();
    let (e_dt, e_lr) = (dt.rmse(&test).unwrap(), lr.rmse(&test).unwrap());
    assert!(e_dt <= 1.5 * model.sigma, "DT RMSE {e_dt}");
    assert!(e_dt <= e_lr, "DT {e_dt} LR {e_lr}");
}

#[test]
fn plan_size_edge_cases() {
    let t = flat_snapshot();
    // Non-monotone predictor: the largest feasible N wins even with infeasible ones below.
    let mut table = vec![0.0; 11];
    table[3] = 5.0;
    table[4] = 1.0;
    table[5] = 9.0;
    assert_eq!(plan_size(&TablePredictor(table), &t, 2.0, 3, 5).unwrap(), (4, true));
    assert_eq!(plan_size(&TablePredictor(vec![0.0; 11]), &t, 0.0, 10, 10).unwrap(), (10, true));
}

proptest! {
    #[test]
    fn plan_size_is_exhaustive_scan(table in prop::collection::vec(0.0f64..50.0, 101), deadline in 0.0f64..50.0,
                                    lo in 1usize..=100, span in 0usize..100) {
        let hi = (lo + span).min(100);
        let p = TablePredictor(table);
        let t = flat_snapshot();
        prop_assert_eq!(plan_size(&p, &t, deadline, lo, hi).unwrap(), plan_oracle(&p, &t, deadline, lo, hi));
    }

    #[test]
    fn tree_predictions_are_leaf_means(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (xs, ys) = random_dataset(&mut rng);
        let t = fit_tree(&xs, &ys, TreeParams::default()).unwrap();
        let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for x in &xs {
            let v = t.predict(x).unwrap();
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
    }
}
