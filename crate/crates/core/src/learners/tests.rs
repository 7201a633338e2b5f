use super::*;
use proptest::prelude::*;

fn fv(values: &[f64]) -> FeatureVector<f64> {
    FeatureVector::from_dense(values)
}

fn separable_1d() -> (Vec<FeatureVector<f64>>, Vec<u8>) {
    (vec![fv(&[-1.0]), fv(&[1.0])], vec![0, 1])
}

fn blobs(n: usize, seed: u64) -> (Vec<FeatureVector<f64>>, Vec<u8>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let label = (i % 2) as u8;
        let shift = if label == 1 { 1.0 } else { -1.0 };
        let row: Vec<f64> = (0..4).map(|_| shift + rng.random_range(-1.5..1.5)).collect();
        x.push(fv(&row));
        y.push(label);
    }
    (x, y)
}

fn all_configs() -> Vec<LearnerConfig> {
    let quick = OptimSettings { tol: 1e-6, max_epochs: 300 };
    let mut out: Vec<LearnerConfig> = vec![
        LearnerParams::Logistic { penalty: Penalty::L2, c: 1.0 },
        LearnerParams::Logistic { penalty: Penalty::L1, c: 1.0 },
        LearnerParams::SgdModifiedHuber { penalty: Penalty::L2, alpha: 1e-3 },
        LearnerParams::SgdModifiedHuber { penalty: Penalty::L1, alpha: 1e-3 },
        LearnerParams::DecisionTree { max_depth: 5, min_impurity_decrease: 0.0 },
        LearnerParams::RandomForest {
            n_estimators: 7,
            max_depth: 4,
            bootstrap: true,
            max_features: MaxFeatures::Sqrt,
        },
        LearnerParams::Knn { n_neighbors: 3, weights: KnnWeights::Uniform },
        LearnerParams::Knn { n_neighbors: 3, weights: KnnWeights::Distance },
        LearnerParams::Mlp {
            hidden_layer_sizes: vec![8],
            activation: Activation::Relu,
            alpha: 0.01,
        },
        LearnerParams::LinearSvm { c: 1.0 },
    ]
    .into_iter()
    .map(|p| LearnerConfig::new(p, 11))
    .collect();
    for c in &mut out {
        c.optim = quick;
    }
    out
}

#[test]
fn logistic_separates_1d_points() {
    let (x, y) = separable_1d();
    let cfg = LearnerConfig::new(LearnerParams::Logistic { penalty: Penalty::L2, c: 1.0 }, 0);
    let m = fit(&cfg, &x, &y).unwrap();
    // brute-force check on the training points and the implied boundary
    for (xi, &yi) in x.iter().zip(&y) {
        assert_eq!(m.predict(xi, 0.5).unwrap(), yi);
    }
    let ModelState::Linear { weights, bias, .. } = &m.state else {
        panic!("expected linear state");
    };
    let boundary = -bias / weights[0];
    assert!(boundary.abs() < 1e-6, "boundary {boundary}");
}

#[test]
fn every_family_fits_separable_blobs() {
    let (x, y) = blobs(60, 3);
    for cfg in all_configs() {
        let m = fit(&cfg, &x, &y).unwrap();
        let correct = x
            .iter()
            .zip(&y)
            .filter(|(xi, &yi)| m.predict(xi, 0.5).unwrap() == yi)
            .count();
        assert!(correct >= 48, "{}: {correct}/60", cfg.label());
    }
}

#[test]
fn single_class_gives_degenerate_constant() {
    let x = vec![fv(&[0.3]), fv(&[-2.0]), fv(&[5.0])];
    for label in [0u8, 1] {
        let y = vec![label; 3];
        for cfg in all_configs() {
            let m = fit(&cfg, &x, &y).unwrap();
            assert!(m.degenerate);
            assert_eq!(m.training_prevalence, label as f64);
            for probe in [-9.0, 0.0, 9.0] {
                assert_eq!(m.score(&fv(&[probe])).unwrap(), label as f64);
                assert_eq!(m.predict(&fv(&[probe]), 0.5).unwrap(), label);
            }
        }
    }
}

#[test]
fn predict_threshold_is_inclusive() {
    let x = vec![fv(&[0.0]), fv(&[1.0])];
    let cfg = LearnerConfig::new(LearnerParams::Knn { n_neighbors: 2, weights: KnnWeights::Uniform }, 0);
    let m = fit(&cfg, &x, &[0, 1]).unwrap();
    let probe = fv(&[0.4]);
    assert_eq!(m.score(&probe).unwrap(), 0.5);
    assert_eq!(m.predict(&probe, 0.5).unwrap(), 1);
    assert_eq!(m.predict(&probe, 0.51).unwrap(), 0);
}

#[test]
fn knn_clamps_and_handles_exact_matches() {
    let x = vec![fv(&[0.0]), fv(&[1.0]), fv(&[1.0]), fv(&[3.0])];
    let y = vec![0, 1, 0, 1];
    let cfg = LearnerConfig::new(LearnerParams::Knn { n_neighbors: 50, weights: KnnWeights::Distance }, 0);
    let m = fit(&cfg, &x, &y).unwrap();
    let ModelState::Knn { k, .. } = &m.state else { panic!() };
    assert_eq!(*k, 4);
    // two stored points coincide with the probe: their mean label wins
    assert_eq!(m.score(&fv(&[1.0])).unwrap(), 0.5);
    assert_eq!(m.score(&fv(&[3.0])).unwrap(), 1.0);
    // inverse-distance weights by hand at x = 2: d = 2, 1, 1, 1
    let s = m.score(&fv(&[2.0])).unwrap();
    let (w0, w1) = (0.5, 1.0);
    let expected = (w1 + w1) / (w0 + 3.0 * w1);
    assert!((s - expected).abs() < 1e-12);
}

#[test]
fn stump_on_four_points() {
    // Hand trace: root gini 0.5; the only split separating the classes sits
    // between -0.5 and 0.5 and leaves both children pure.
    let x = vec![fv(&[-2.0]), fv(&[-0.5]), fv(&[0.5]), fv(&[2.0])];
    let y = vec![0, 0, 1, 1];
    let cfg = LearnerConfig::new(
        LearnerParams::DecisionTree { max_depth: 1, min_impurity_decrease: 0.0 },
        0,
    );
    let m = fit(&cfg, &x, &y).unwrap();
    let ModelState::Tree { tree } = &m.state else { panic!() };
    assert_eq!(tree.nodes.len(), 3);
    let Node::Split { feature, threshold, .. } = tree.nodes[0] else { panic!() };
    assert_eq!(feature, 0);
    assert_eq!(threshold, 0.0);
    assert_eq!(m.score(&fv(&[1.0])).unwrap(), 1.0);
    assert_eq!(m.score(&fv(&[-1.0])).unwrap(), 0.0);
}

#[test]
fn min_impurity_decrease_blocks_weak_splits() {
    let x = vec![fv(&[-2.0]), fv(&[-0.5]), fv(&[0.5]), fv(&[2.0])];
    let y = vec![0, 0, 1, 1];
    // the perfect split reduces weighted impurity by exactly 0.5
    let cfg = LearnerConfig::new(
        LearnerParams::DecisionTree { max_depth: 3, min_impurity_decrease: 0.6 },
        0,
    );
    let m = fit(&cfg, &x, &y).unwrap();
    let ModelState::Tree { tree } = &m.state else { panic!() };
    assert_eq!(tree.nodes.len(), 1);
    assert_eq!(m.score(&fv(&[2.0])).unwrap(), 0.5);
}

#[test]
fn tree_handles_sparse_zero_block() {
    // feature 1 is nonzero only for positives; the zero block must count
    let x = vec![
        FeatureVector::from_pairs(3, vec![(0, 1.0)]),
        FeatureVector::from_pairs(3, vec![(0, 2.0)]),
        FeatureVector::from_pairs(3, vec![(1, 0.7)]),
        FeatureVector::from_pairs(3, vec![(1, 0.9), (2, -1.0)]),
    ];
    let y = vec![0, 0, 1, 1];
    let cfg = LearnerConfig::new(
        LearnerParams::DecisionTree { max_depth: 4, min_impurity_decrease: 0.0 },
        0,
    );
    let m = fit(&cfg, &x, &y).unwrap();
    for (xi, &yi) in x.iter().zip(&y) {
        assert_eq!(m.score(xi).unwrap(), yi as f64);
    }
}

#[test]
fn fitting_is_deterministic() {
    let (x, y) = blobs(40, 9);
    for cfg in all_configs() {
        let a = fit(&cfg, &x, &y).unwrap();
        let b = fit(&cfg, &x, &y).unwrap();
        assert_eq!(a, b, "{}", cfg.label());
    }
}

#[test]
fn forest_of_one_unbagged_tree_equals_tree() {
    let (x, y) = blobs(50, 5);
    for depth in [1, 3, 8] {
        let tree = fit(
            &LearnerConfig::new(LearnerParams::DecisionTree { max_depth: depth, min_impurity_decrease: 0.0 }, 4),
            &x,
            &y,
        )
        .unwrap();
        let forest = fit(
            &LearnerConfig::new(
                LearnerParams::RandomForest {
                    n_estimators: 1,
                    max_depth: depth,
                    bootstrap: false,
                    max_features: MaxFeatures::All,
                },
                4,
            ),
            &x,
            &y,
        )
        .unwrap();
        let (ModelState::Tree { tree: t }, ModelState::Forest { trees }) = (&tree.state, &forest.state) else {
            panic!()
        };
        assert_eq!(&trees[0], t);
        for xi in &x {
            assert_eq!(tree.score(xi).unwrap(), forest.score(xi).unwrap());
        }
    }
}

#[test]
fn logistic_weights_shrink_as_c_vanishes() {
    let (x, y) = blobs(40, 1);
    let mut last = f64::INFINITY;
    for c in [10.0, 1.0, 1e-2, 1e-4, 1e-6] {
        for penalty in [Penalty::L1, Penalty::L2] {
            let m = fit(&LearnerConfig::new(LearnerParams::Logistic { penalty, c }, 0), &x, &y).unwrap();
            let norm = m.weight_norm().unwrap();
            if penalty == Penalty::L2 {
                assert!(norm <= last + 1e-9, "C={c}: {norm} > {last}");
                last = norm;
            }
            if c <= 1e-6 {
                assert!(norm < 1e-3, "C={c} {penalty:?}: {norm}");
            }
        }
    }
}

#[test]
fn l1_logistic_zeroes_irrelevant_features() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..200 {
        let label = (i % 2) as u8;
        let signal = if label == 1 { 1.0 } else { -1.0 } + rng.random_range(-0.8..0.8);
        let noise: Vec<f64> = (0..5).map(|_| rng.random_range(-0.05..0.05)).collect();
        let mut row = vec![signal];
        row.extend(noise);
        x.push(fv(&row));
        y.push(label);
    }
    let m = fit(&LearnerConfig::new(LearnerParams::Logistic { penalty: Penalty::L1, c: 0.05 }, 0), &x, &y).unwrap();
    let ModelState::Linear { weights, .. } = &m.state else { panic!() };
    assert!(weights[0] > 0.1);
    assert!(weights[1..].iter().all(|&w| w == 0.0), "{weights:?}");
}

#[test]
fn dimension_mismatch_is_rejected() {
    let (x, y) = separable_1d();
    let cfg = LearnerConfig::new(LearnerParams::Logistic { penalty: Penalty::L2, c: 1.0 }, 0);
    let m = fit(&cfg, &x, &y).unwrap();
    assert!(matches!(m.score(&fv(&[1.0, 2.0])), Err(Error::DimensionMismatch { .. })));
    let bad = vec![fv(&[1.0]), fv(&[1.0, 2.0])];
    assert!(matches!(fit(&cfg, &bad, &y), Err(Error::DimensionMismatch { .. })));
    assert!(fit(&cfg, &x, &[0]).is_err());
}

#[test]
fn model_round_trips_through_json() {
    let (x, y) = blobs(30, 8);
    for cfg in all_configs() {
        let m = fit(&cfg, &x, &y).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: TrainedModel<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(m, back);
    }
}

#[test]
fn f32_models_fit() {
    let x: Vec<FeatureVector<f32>> = vec![
        FeatureVector::from_dense(&[-1.0f32]),
        FeatureVector::from_dense(&[1.0f32]),
    ];
    let cfg = LearnerConfig::new(LearnerParams::Logistic { penalty: Penalty::L2, c: 1.0 }, 0);
    let m = fit(&cfg, &x, &[0, 1]).unwrap();
    assert_eq!(m.predict(&x[1], 0.5).unwrap(), 1);
}

#[test]
fn gradients_match_finite_differences() {
    let inst = GradCheckInstance::default();
    for seed in 1..=5 {
        assert!(loss_gradient_check(GradCheckFamily::Logistic, &inst, seed) < 1e-4);
        assert!(loss_gradient_check(GradCheckFamily::LinearSvm, &inst, seed) < 1e-4);
        assert!(loss_gradient_check(GradCheckFamily::Mlp, &inst, seed) < 1e-4);
    }
}

#[test]
fn logistic_bias_gradient_at_zero() {
    // symmetric data, zero parameters: every margin is 0 and sigmoid(0) = 1/2,
    // so d(loss)/d(bias) = 0.5 - mean(y); ascent direction is mean(y) - 0.5
    let x = vec![fv(&[1.0]), fv(&[-1.0]), fv(&[2.0]), fv(&[-2.0]), fv(&[0.5])];
    let y = vec![1, 1, 0, 1, 0];
    let obj = LogisticObjective { x: &x, y: &y, dim: 1, l2: 0.0 };
    let mut g = vec![0.0; 2];
    obj.value_grad(&[0.0, 0.0], &mut g);
    let mean_y = 3.0 / 5.0;
    assert!((-g[1] - (mean_y - 0.5)).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scores_stay_in_unit_interval(
        seed in 0u64..1000,
        probes in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 4), 1..8),
    ) {
        let (x, y) = blobs(20, seed);
        for cfg in all_configs() {
            let m = fit(&cfg, &x, &y).unwrap();
            for p in &probes {
                let s = m.score(&fv(p)).unwrap();
                prop_assert!((0.0..=1.0).contains(&s), "{} gave {}", cfg.label(), s);
            }
            let mean_pred = x.iter().map(|xi| m.predict(xi, 0.5).unwrap() as f64).sum::<f64>() / x.len() as f64;
            prop_assert!((0.0..=1.0).contains(&mean_pred));
        }
    }
}
