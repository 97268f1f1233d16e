use std::collections::BTreeMap;

use gridpop_core::evaluation::r2;
use gridpop_core::features::TileKey;
use gridpop_core::regression::{
    fit_huber_l1, inner_folds, lambda_max, nested_cv_train, objective, spatial_kfold, CvSettings, FittedModel,
    ModelHyperparams, SolverOptions, TileLocation, TrainingData,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two 6×6 ROIs; counts depend on the first two of `p` features.
fn synthetic(seed: u64, p: usize) -> (TrainingData, Vec<TileLocation>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys = Vec::new();
    let mut locations = Vec::new();
    for roi in ["a", "b"] {
        for id in 0..36u32 {
            let key = TileKey::new(roi, id);
            locations.push(TileLocation {
                key: key.clone(),
                x: f64::from(id % 6) * 100.0 + 50.0,
                y: 550.0 - f64::from(id / 6) * 100.0,
            });
            keys.push(key);
        }
    }
    let n = keys.len();
    let x = Array2::from_shape_fn((n, p), |(_, j)| rng.gen_range(0.0..10.0) * (j + 1) as f64);
    let counts = (0..n)
        .map(|i| {
            let eta = 1.0 + 0.25 * x[[i, 0]] + 0.05 * x[[i, 1]] + rng.gen_range(-0.1..0.1);
            eta.exp_m1().round()
        })
        .collect();
    let names = (0..p).map(|j| format!("f{j}")).collect();
    (TrainingData { keys, names, x, counts }, locations)
}

fn small_settings() -> CvSettings {
    CvSettings {
        grid: ModelHyperparams {
            deltas: vec![0.5, 1.35],
            lambda_factors: vec![0.001, 0.1],
        },
        ..CvSettings::default()
    }
}

#[test]
fn nested_cv_recovers_signal() {
    let (data, locations) = synthetic(1, 4);
    let folds = spatial_kfold(&locations, 4).unwrap();
    let out = nested_cv_train(&data, &folds, &small_settings()).unwrap();
    assert_eq!(out.models.len(), 4);
    assert_eq!(out.predictions.len(), data.keys.len());
    let observed: Vec<f64> = out.predictions.iter().map(|p| p.observed).collect();
    let predicted: Vec<f64> = out.predictions.iter().map(|p| p.predicted).collect();
    let score = r2(&observed, &predicted).unwrap();
    assert!(score > 0.8, "pooled R2 {score}");
    for (f, m) in out.models.iter().enumerate() {
        assert_eq!(m.fold, Some(f));
        assert!(m.coefficients[0] > 0.0);
    }
}

#[test]
fn single_candidate_is_plain_cv() {
    let (data, locations) = synthetic(2, 3);
    let folds = spatial_kfold(&locations, 4).unwrap();
    let settings = CvSettings {
        grid: ModelHyperparams {
            deltas: vec![1.0],
            lambda_factors: vec![0.01],
        },
        ..CvSettings::default()
    };
    let out = nested_cv_train(&data, &folds, &settings).unwrap();
    for f in 0..4 {
        let train: Vec<usize> = (0..data.keys.len())
            .filter(|&i| folds.fold_of(&data.keys[i]) != Some(f))
            .collect();
        let x = data.x.select(ndarray::Axis(0), &train);
        let c: Vec<f64> = train.iter().map(|&i| data.counts[i]).collect();
        let plain = FittedModel::fit(&data.names, x.view(), &c, 1.0, 0.01, &SolverOptions::default()).unwrap();
        for p in out.predictions.iter().filter(|p| p.fold == f) {
            let i = data.keys.iter().position(|k| *k == p.key()).unwrap();
            let row: Vec<f64> = data.x.row(i).to_vec();
            assert_eq!(p.predicted, plain.predict_count(&row));
        }
    }
}

#[test]
fn rescaling_a_feature_leaves_predictions_unchanged() {
    let (data, locations) = synthetic(3, 4);
    let folds = spatial_kfold(&locations, 4).unwrap();
    let mut scaled = data.clone();
    scaled.x.column_mut(1).mapv_inplace(|v| v * 10.0);
    let a = nested_cv_train(&data, &folds, &small_settings()).unwrap();
    let b = nested_cv_train(&scaled, &folds, &small_settings()).unwrap();
    for (p, q) in a.predictions.iter().zip(&b.predictions) {
        assert!(
            (p.predicted - q.predicted).abs() <= 1e-6 * p.predicted.max(1.0),
            "{p:?} vs {q:?}"
        );
    }
}

#[test]
fn same_seed_same_bytes() {
    let (data, locations) = synthetic(4, 5);
    let folds = spatial_kfold(&locations, 4).unwrap();
    let a = nested_cv_train(&data, &folds, &small_settings()).unwrap();
    let b = nested_cv_train(&data, &folds, &small_settings()).unwrap();
    for (m, n) in a.models.iter().zip(&b.models) {
        assert_eq!(m.to_json(), n.to_json());
    }
    assert_eq!(a.predictions, b.predictions);
}

#[test]
fn missing_fold_is_an_error() {
    let (data, locations) = synthetic(5, 2);
    let mut folds = spatial_kfold(&locations, 4).unwrap();
    folds.folds.remove(&data.keys[0]);
    assert!(nested_cv_train(&data, &folds, &small_settings()).is_err());
}

fn locations() -> impl Strategy<Value = Vec<TileLocation>> {
    prop::collection::vec((0usize..3, -50i32..50, -50i32..50), 1..80).prop_map(|v| {
        let mut next: BTreeMap<usize, u32> = BTreeMap::new();
        v.into_iter()
            .map(|(roi, x, y)| {
                let id = next.entry(roi).or_insert(0);
                *id += 1;
                TileLocation {
                    key: TileKey::new(format!("r{roi}"), *id),
                    x: f64::from(x) * 10.0,
                    y: f64::from(y) * 10.0,
                }
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn spatial_folds_partition_and_balance(tiles in locations(), k in 2usize..6) {
        let mut per_roi: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &tiles {
            *per_roi.entry(t.key.roi.as_str()).or_default() += 1;
        }
        let result = spatial_kfold(&tiles, k);
        if per_roi.values().any(|&n| n < k) {
            prop_assert!(result.is_err());
        } else {
            let folds = result.unwrap();
            prop_assert_eq!(folds.folds.len(), tiles.len());
            for roi in per_roi.keys() {
                let mut sizes = vec![0usize; k];
                for t in tiles.iter().filter(|t| t.key.roi == *roi) {
                    sizes[folds.fold_of(&t.key).unwrap()] += 1;
                }
                let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
                prop_assert!(hi - lo <= 2, "{:?}", sizes);
                prop_assert!(*lo >= 1);
            }
        }
    }

    #[test]
    fn inner_folds_stratify(n_a in 0usize..20, n_b in 0usize..20, seed in any::<u64>()) {
        let keys: Vec<TileKey> = (0..n_a).map(|i| TileKey::new("a", i as u32))
            .chain((0..n_b).map(|i| TileKey::new("b", i as u32)))
            .collect();
        match inner_folds(&keys, 3, seed) {
            Err(_) => prop_assert!(keys.len() < 3),
            Ok(folds) => {
                for roi in ["a", "b"] {
                    let mut sizes = [0usize; 3];
                    for (k, f) in keys.iter().zip(&folds) {
                        if k.roi == roi {
                            sizes[*f] += 1;
                        }
                    }
                    prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
                }
                let mut total = [0usize; 3];
                folds.iter().for_each(|&f| total[f] += 1);
                prop_assert!(total.iter().max().unwrap() - total.iter().min().unwrap() <= 1);
            }
        }
    }

    #[test]
    fn solver_is_monotone_and_locally_optimal(seed in any::<u64>(), delta in 0.2..3.0f64, frac in 0.0..1.2f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(5..40);
        let p = rng.gen_range(1..6);
        let x = Array2::from_shape_fn((n, p), |_| rng.gen_range(-2.0..2.0));
        let y: Vec<f64> = (0..n).map(|i| x[[i, 0]] * 1.5 + rng.gen_range(-3.0..3.0)).collect();
        let lambda = frac * lambda_max(x.view(), &y, delta);
        let fit = fit_huber_l1(x.view(), &y, delta, lambda, &SolverOptions::default()).unwrap();
        prop_assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        let best = objective(x.view(), &y, fit.intercept, &fit.coefficients, delta, lambda);
        for _ in 0..20 {
            let b = fit.intercept + rng.gen_range(-1e-3..1e-3);
            let beta: Vec<f64> = fit.coefficients.iter().map(|c| c + rng.gen_range(-1e-3..1e-3)).collect();
            prop_assert!(objective(x.view(), &y, b, &beta, delta, lambda) >= best - 1e-9);
        }
    }
}
