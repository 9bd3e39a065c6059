use proptest::prelude::*;
use rand::Rng;
use satcause::evaluation::{self, Grid};
use satcause::learners::{
    self, label_for, Family, Fitted, HyperParam, Hyperparameters, ModelSpec, Node, TrainedModel,
};
use satcause::preprocess::FeatureMatrix;
use satcause::{seed, Matrix};

fn random_features(n: usize, p: usize, seed_value: u64) -> Matrix {
    let mut rng = seed::rng(seed_value);
    let data = (0..n * p).map(|_| rng.random::<f64>()).collect();
    Matrix::new(n, p, data).unwrap()
}

fn noisy_labels(x: &Matrix, seed_value: u64) -> Vec<u8> {
    let mut rng = seed::rng(seed_value);
    x.rows()
        .map(|r| u8::from(r[0] + 0.5 * r[1] + 0.3 * rng.random::<f64>() > 0.9))
        .collect()
}

fn dataset(n: usize, p: usize, seed_value: u64) -> FeatureMatrix {
    let x = random_features(n, p, seed_value);
    let y = noisy_labels(&x, seed_value + 1);
    let names = (0..p).map(|j| format!("f{j}")).collect();
    FeatureMatrix::new(names, x, y).unwrap()
}

fn training_accuracy(model: &TrainedModel, data: &FeatureMatrix) -> f64 {
    let labels = model.predict_labels(&data.rows).unwrap();
    evaluation::accuracy(&data.target, &labels).unwrap()
}

fn forest(
    max_depth: usize,
    n_trees: usize,
    features_per_split: Option<usize>,
    bootstrap: bool,
    seed: u64,
) -> ModelSpec {
    ModelSpec::new(
        Hyperparameters::RandomForest {
            max_depth,
            n_trees,
            features_per_split,
            bootstrap,
        },
        seed,
    )
}

#[test]
fn unrestricted_tree_fits_duplicate_free_data() {
    // random uniform rows are distinct with probability one
    let data = dataset(2_000, 4, 11);
    let model = learners::fit(&ModelSpec::decision_tree(usize::MAX), &data).unwrap();
    assert_eq!(training_accuracy(&model, &data), 1.0);
}

#[test]
fn separable_logistic_reproduces_training_labels() {
    let x = random_features(400, 2, 5);
    // margin band removed so the classes are strictly separated
    let keep: Vec<usize> = (0..400)
        .filter(|&i| (x.get(i, 0) + x.get(i, 1) - 1.0).abs() > 0.1)
        .collect();
    let x = x.select_rows(&keep);
    let y: Vec<u8> = x.rows().map(|r| u8::from(r[0] + r[1] > 1.0)).collect();
    let data = FeatureMatrix::new(vec!["a".into(), "b".into()], x, y).unwrap();
    let (model, trace) = learners::fit_traced(&ModelSpec::logistic(100.0), &data).unwrap();
    let trace = trace.unwrap();
    assert!(trace.converged);
    assert!(trace.gradient_norm <= 1e-6);
    assert!(trace.objective.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(model.predict_labels(&data.rows).unwrap(), data.target);
}

#[test]
fn logistic_objective_is_monotone_on_noisy_data() {
    for c in [0.01, 1.0, 10_000.0] {
        let data = dataset(3_000, 5, 21);
        let (_, trace) = learners::fit_traced(&ModelSpec::logistic(c), &data).unwrap();
        let trace = trace.unwrap();
        assert!(trace.objective.windows(2).all(|w| w[1] <= w[0]), "C = {c}");
        if trace.converged {
            assert!(trace.gradient_norm <= 1e-6);
        }
    }
}

#[test]
fn single_class_cases() {
    let x = random_features(20, 2, 1);
    let data = FeatureMatrix::new(vec!["a".into(), "b".into()], x.clone(), vec![1; 20]).unwrap();
    let tree = learners::fit(&ModelSpec::decision_tree(5), &data).unwrap();
    assert_eq!(tree.trees().unwrap()[0].depth(), 0);
    assert!(tree
        .predict_scores(&random_features(7, 2, 2))
        .unwrap()
        .iter()
        .all(|&s| s == 1.0));
    assert!(learners::fit(&ModelSpec::logistic(1.0), &data).is_err());
    assert!(learners::fit(&Family::GradientBoosting.default_spec(), &data).is_err());
}

#[test]
fn empty_feature_set_is_rejected() {
    let data = FeatureMatrix::new(vec![], Matrix::zeros(4, 0), vec![0, 1, 0, 1]).unwrap();
    for family in Family::ALL {
        assert!(learners::fit(&family.default_spec(), &data).is_err(), "{family}");
    }
}

#[test]
fn zero_logistic_scores_one_half() {
    let model = TrainedModel {
        format_version: learners::MODEL_FORMAT_VERSION,
        spec: ModelSpec::logistic(1.0),
        feature_names: vec!["a".into(), "b".into()],
        fitted: Fitted::Logistic {
            weights: vec![0.0, 0.0],
            intercept: 0.0,
            iterations: 0,
            converged: true,
            gradient_norm: 0.0,
        },
    };
    let scores = model.predict_scores(&random_features(10, 2, 3)).unwrap();
    assert!(scores.iter().all(|&s| s == 0.5));
    assert!(model
        .predict_labels(&random_features(3, 2, 3))
        .unwrap()
        .iter()
        .all(|&l| l == 1));
}

#[test]
fn label_threshold() {
    assert_eq!(label_for(0.6), 1);
    assert_eq!(label_for(0.4), 0);
    assert_eq!(label_for(0.5), 1);
}

#[test]
fn knn_scores_neighbour_fraction() {
    // five nearest of the origin: three positives
    let rows = vec![
        vec![0.1, 0.0],
        vec![0.0, 0.2],
        vec![0.3, 0.0],
        vec![0.0, 0.4],
        vec![0.5, 0.0],
        vec![0.9, 0.9],
        vec![0.8, 0.9],
    ];
    let data = FeatureMatrix::new(
        vec!["a".into(), "b".into()],
        Matrix::from_rows(&rows).unwrap(),
        vec![1, 0, 1, 0, 1, 0, 0],
    )
    .unwrap();
    let model = learners::fit(&Family::Knn.default_spec(), &data).unwrap();
    let score = model
        .predict_scores(&Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap())
        .unwrap();
    assert!((score[0] - 0.6).abs() < 1e-15);
}

#[test]
fn one_tree_forest_without_bootstrap_is_the_tree() {
    let data = dataset(1_500, 5, 4);
    let tree = learners::fit(&ModelSpec::decision_tree(8), &data).unwrap();
    let forest = learners::fit(&forest(8, 1, Some(5), false, 99), &data).unwrap();
    assert_eq!(tree.trees().unwrap(), forest.trees().unwrap());
    let probe = random_features(300, 5, 8);
    assert_eq!(
        tree.predict_scores(&probe).unwrap(),
        forest.predict_scores(&probe).unwrap()
    );
}

#[test]
fn fitting_is_deterministic() {
    let data = dataset(1_000, 4, 6);
    let probe = random_features(200, 4, 7);
    let specs = [
        ModelSpec::decision_tree(6),
        forest(6, 20, None, true, 3),
        ModelSpec::new(
            Hyperparameters::GradientBoosting {
                max_depth: 3,
                n_stages: 20,
                learning_rate: 0.1,
            },
            0,
        ),
        Family::Knn.default_spec(),
        ModelSpec::logistic(1.0),
    ];
    for spec in specs {
        let a = learners::fit(&spec, &data).unwrap();
        let b = learners::fit(&spec, &data).unwrap();
        assert_eq!(
            a.predict_scores(&probe).unwrap(),
            b.predict_scores(&probe).unwrap()
        );
        let restored = TrainedModel::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(
            restored.predict_scores(&probe).unwrap(),
            a.predict_scores(&probe).unwrap()
        );
    }
    let a = learners::fit(&forest(6, 20, None, true, 3), &data).unwrap();
    let c = learners::fit(&forest(6, 20, None, true, 4), &data).unwrap();
    assert_ne!(
        a.predict_scores(&probe).unwrap(),
        c.predict_scores(&probe).unwrap()
    );
}

fn assert_gini_non_increasing(node: &Node) {
    if let Node::Split {
        n_samples,
        impurity,
        left,
        right,
        ..
    } = node
    {
        let n = *n_samples as f64;
        let children =
            (left.n_samples() as f64 * left.impurity() + right.n_samples() as f64 * right.impurity()) / n;
        assert!(
            children <= impurity + 1e-12,
            "children {children} > parent {impurity}"
        );
        assert_gini_non_increasing(left);
        assert_gini_non_increasing(right);
    }
}

#[test]
fn split_impurity_never_increases() {
    let data = dataset(3_000, 6, 9);
    let tree = learners::fit(&ModelSpec::decision_tree(12), &data).unwrap();
    assert_gini_non_increasing(&tree.trees().unwrap()[0].root);
    let forest = learners::fit(&forest(10, 10, None, true, 1), &data).unwrap();
    for t in forest.trees().unwrap() {
        assert_gini_non_increasing(&t.root);
    }
}

#[test]
fn scores_lie_in_unit_interval() {
    let data = dataset(800, 3, 12);
    let probe = random_features(500, 3, 13);
    for family in Family::ALL {
        let mut spec = family.default_spec();
        if family == Family::RandomForest {
            spec = forest(8, 10, None, true, 0);
        }
        if family == Family::GradientBoosting {
            spec = spec.with_param(HyperParam::NStages, 10.0).unwrap();
        }
        let model = learners::fit(&spec, &data).unwrap();
        assert!(model
            .predict_scores(&probe)
            .unwrap()
            .iter()
            .all(|s| (0.0..=1.0).contains(s)));
        assert!(model.predict_scores(&random_features(2, 4, 0)).is_err());
    }
}

#[test]
fn boosting_learns_a_threshold() {
    let x = random_features(1_000, 2, 30);
    let y: Vec<u8> = x.rows().map(|r| u8::from(r[1] > 0.3)).collect();
    let data = FeatureMatrix::new(vec!["a".into(), "b".into()], x, y).unwrap();
    let spec = ModelSpec::new(
        Hyperparameters::GradientBoosting {
            max_depth: 2,
            n_stages: 50,
            learning_rate: 0.1,
        },
        0,
    );
    let model = learners::fit(&spec, &data).unwrap();
    assert_eq!(training_accuracy(&model, &data), 1.0);
}

#[test]
fn depth_two_target_selects_depth_two() {
    // a conjunction of two thresholds is fit exactly by greedy splitting at depth 2
    let x = random_features(600, 2, 40);
    let y: Vec<u8> = x.rows().map(|r| u8::from(r[0] > 0.5 && r[1] > 0.3)).collect();
    let data = FeatureMatrix::new(vec!["a".into(), "b".into()], x, y).unwrap();
    let grid = Grid::new(
        ModelSpec::decision_tree(1),
        HyperParam::MaxDepth,
        vec![5.0, 1.0, 4.0, 2.0, 3.0],
    );
    let outcome = evaluation::grid_search(&grid, &data, 5, 1).unwrap();
    let report = &outcome.report;
    assert_eq!(report.selected_value, 2.0);
    for c in &report.candidates {
        if c.value >= 2.0 {
            assert_eq!(c.mean_accuracy, report.cv_accuracy);
        } else {
            assert!(c.mean_accuracy < report.cv_accuracy);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tree_fits_distinct_rows(seed_value in 0u64..10_000, n in 2usize..200) {
        let data = dataset(n, 3, seed_value);
        let model = learners::fit(&ModelSpec::decision_tree(usize::MAX), &data).unwrap();
        prop_assert_eq!(training_accuracy(&model, &data), 1.0);
    }
}
