//! Binary classifiers behind one fit/score interface.
//!
//! Every family is implemented here from scratch: CART with Gini impurity,
//! a bagged forest, logistic-loss gradient boosting, brute-force k nearest
//! neighbours and L2-regularized logistic regression. The same models serve
//! as propensity estimators in [`crate::causal`].

mod boosting;
mod forest;
mod knn;
pub mod logistic;
pub mod tree;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par;
use crate::preprocess::FeatureMatrix;
use crate::stats::sigmoid;

pub use logistic::LogisticTrace;
pub use tree::{Node, Tree};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    DecisionTree,
    RandomForest,
    GradientBoosting,
    Knn,
    LogisticRegression,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::DecisionTree,
        Family::RandomForest,
        Family::GradientBoosting,
        Family::Knn,
        Family::LogisticRegression,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::DecisionTree => "decision_tree",
            Family::RandomForest => "random_forest",
            Family::GradientBoosting => "gradient_boosting",
            Family::Knn => "knn",
            Family::LogisticRegression => "logistic_regression",
        }
    }

    pub fn is_tree_based(self) -> bool {
        matches!(
            self,
            Family::DecisionTree | Family::RandomForest | Family::GradientBoosting
        )
    }

    /// Hyperparameter tuned when a configuration gives no explicit grid.
    pub fn primary_param(self) -> HyperParam {
        match self {
            Family::DecisionTree | Family::RandomForest | Family::GradientBoosting => HyperParam::MaxDepth,
            Family::Knn => HyperParam::NNeighbors,
            Family::LogisticRegression => HyperParam::CInverseRegularization,
        }
    }

    /// Defaults used when a family is requested without hyperparameters.
    pub fn default_spec(self) -> ModelSpec {
        let params = match self {
            Family::DecisionTree => Hyperparameters::DecisionTree { max_depth: 14 },
            Family::RandomForest => Hyperparameters::RandomForest {
                max_depth: 25,
                n_trees: default_n_trees(),
                features_per_split: None,
                bootstrap: true,
            },
            Family::GradientBoosting => Hyperparameters::GradientBoosting {
                max_depth: 9,
                n_stages: default_n_stages(),
                learning_rate: default_learning_rate(),
            },
            Family::Knn => Hyperparameters::Knn { n_neighbors: 5 },
            Family::LogisticRegression => Hyperparameters::LogisticRegression {
                c_inverse_regularization: 1.0,
                max_iterations: default_max_iterations(),
                tolerance: default_tolerance(),
            },
        };
        ModelSpec { params, seed: 0 }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown model family {s:?}")))
    }
}

fn default_n_trees() -> usize {
    100
}
fn default_n_stages() -> usize {
    100
}
fn default_learning_rate() -> f64 {
    0.1
}
fn default_max_iterations() -> usize {
    10_000
}
fn default_tolerance() -> f64 {
    1e-6
}
fn default_bootstrap() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Hyperparameters {
    DecisionTree {
        max_depth: usize,
    },
    RandomForest {
        max_depth: usize,
        #[serde(default = "default_n_trees")]
        n_trees: usize,
        /// `None` means ⌊√p⌋.
        #[serde(default)]
        features_per_split: Option<usize>,
        #[serde(default = "default_bootstrap")]
        bootstrap: bool,
    },
    GradientBoosting {
        max_depth: usize,
        #[serde(default = "default_n_stages")]
        n_stages: usize,
        #[serde(default = "default_learning_rate")]
        learning_rate: f64,
    },
    Knn {
        n_neighbors: usize,
    },
    LogisticRegression {
        c_inverse_regularization: f64,
        #[serde(default = "default_max_iterations")]
        max_iterations: usize,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
    },
}

/// A model family, its hyperparameters and the seed for any randomness it
/// uses (forest bootstraps and feature sampling).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub params: Hyperparameters,
    #[serde(default)]
    pub seed: u64,
}

/// Hyperparameter axis a grid search can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperParam {
    MaxDepth,
    NTrees,
    FeaturesPerSplit,
    NStages,
    LearningRate,
    NNeighbors,
    CInverseRegularization,
}

impl HyperParam {
    pub fn as_str(self) -> &'static str {
        match self {
            HyperParam::MaxDepth => "max_depth",
            HyperParam::NTrees => "n_trees",
            HyperParam::FeaturesPerSplit => "features_per_split",
            HyperParam::NStages => "n_stages",
            HyperParam::LearningRate => "learning_rate",
            HyperParam::NNeighbors => "n_neighbors",
            HyperParam::CInverseRegularization => "c_inverse_regularization",
        }
    }
}

fn as_count(param: HyperParam, value: f64) -> Result<usize> {
    if value >= 0.0 && value.fract() == 0.0 && value <= usize::MAX as f64 {
        Ok(value as usize)
    } else {
        Err(Error::InvalidSpec(format!(
            "{} must be a non-negative integer, got {value}",
            param.as_str()
        )))
    }
}

impl ModelSpec {
    pub fn new(params: Hyperparameters, seed: u64) -> Self {
        ModelSpec { params, seed }
    }

    pub fn decision_tree(max_depth: usize) -> Self {
        ModelSpec::new(Hyperparameters::DecisionTree { max_depth }, 0)
    }

    pub fn logistic(c: f64) -> Self {
        ModelSpec::new(
            Hyperparameters::LogisticRegression {
                c_inverse_regularization: c,
                max_iterations: default_max_iterations(),
                tolerance: default_tolerance(),
            },
            0,
        )
    }

    pub fn family(&self) -> Family {
        match self.params {
            Hyperparameters::DecisionTree { .. } => Family::DecisionTree,
            Hyperparameters::RandomForest { .. } => Family::RandomForest,
            Hyperparameters::GradientBoosting { .. } => Family::GradientBoosting,
            Hyperparameters::Knn { .. } => Family::Knn,
            Hyperparameters::LogisticRegression { .. } => Family::LogisticRegression,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidSpec(msg));
        match self.params {
            Hyperparameters::DecisionTree { max_depth }
            | Hyperparameters::RandomForest { max_depth, .. }
            | Hyperparameters::GradientBoosting { max_depth, .. }
                if max_depth < 1 =>
            {
                fail(format!("max_depth must be >= 1, got {max_depth}"))
            }
            Hyperparameters::RandomForest { n_trees, .. } if n_trees < 1 => {
                fail(format!("n_trees must be >= 1, got {n_trees}"))
            }
            Hyperparameters::RandomForest {
                features_per_split: Some(0),
                ..
            } => fail("features_per_split must be >= 1".into()),
            Hyperparameters::GradientBoosting {
                learning_rate,
                n_stages,
                ..
            } => {
                if !(learning_rate > 0.0 && learning_rate <= 1.0) {
                    fail(format!("learning_rate must lie in (0, 1], got {learning_rate}"))
                } else if n_stages < 1 {
                    fail("n_stages must be >= 1".into())
                } else {
                    Ok(())
                }
            }
            Hyperparameters::Knn { n_neighbors } if n_neighbors < 1 => {
                fail(format!("n_neighbors must be >= 1, got {n_neighbors}"))
            }
            Hyperparameters::LogisticRegression {
                c_inverse_regularization,
                tolerance,
                ..
            } => {
                if !(c_inverse_regularization > 0.0 && c_inverse_regularization.is_finite()) {
                    fail(format!(
                        "c_inverse_regularization must be > 0, got {c_inverse_regularization}"
                    ))
                } else if !(tolerance >= 0.0) {
                    fail(format!("tolerance must be >= 0, got {tolerance}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Current value of `param`, if the family has it.
    pub fn param_value(&self, param: HyperParam) -> Option<f64> {
        match (&self.params, param) {
            (Hyperparameters::DecisionTree { max_depth }, HyperParam::MaxDepth)
            | (Hyperparameters::RandomForest { max_depth, .. }, HyperParam::MaxDepth)
            | (Hyperparameters::GradientBoosting { max_depth, .. }, HyperParam::MaxDepth) => {
                Some(*max_depth as f64)
            }
            (Hyperparameters::RandomForest { n_trees, .. }, HyperParam::NTrees) => Some(*n_trees as f64),
            (
                Hyperparameters::RandomForest {
                    features_per_split, ..
                },
                HyperParam::FeaturesPerSplit,
            ) => features_per_split.map(|v| v as f64),
            (Hyperparameters::GradientBoosting { n_stages, .. }, HyperParam::NStages) => {
                Some(*n_stages as f64)
            }
            (Hyperparameters::GradientBoosting { learning_rate, .. }, HyperParam::LearningRate) => {
                Some(*learning_rate)
            }
            (Hyperparameters::Knn { n_neighbors }, HyperParam::NNeighbors) => Some(*n_neighbors as f64),
            (
                Hyperparameters::LogisticRegression {
                    c_inverse_regularization,
                    ..
                },
                HyperParam::CInverseRegularization,
            ) => Some(*c_inverse_regularization),
            _ => None,
        }
    }

    /// Copy with one hyperparameter replaced. Fails when the family has no
    /// such parameter or the value is not representable.
    pub fn with_param(&self, param: HyperParam, value: f64) -> Result<ModelSpec> {
        let mut out = self.clone();
        let mismatch = || {
            Error::InvalidSpec(format!(
                "{} has no hyperparameter {}",
                self.family(),
                param.as_str()
            ))
        };
        match (&mut out.params, param) {
            (Hyperparameters::DecisionTree { max_depth }, HyperParam::MaxDepth)
            | (Hyperparameters::RandomForest { max_depth, .. }, HyperParam::MaxDepth)
            | (Hyperparameters::GradientBoosting { max_depth, .. }, HyperParam::MaxDepth) => {
                *max_depth = as_count(param, value)?
            }
            (Hyperparameters::RandomForest { n_trees, .. }, HyperParam::NTrees) => {
                *n_trees = as_count(param, value)?
            }
            (
                Hyperparameters::RandomForest {
                    features_per_split, ..
                },
                HyperParam::FeaturesPerSplit,
            ) => *features_per_split = Some(as_count(param, value)?),
            (Hyperparameters::GradientBoosting { n_stages, .. }, HyperParam::NStages) => {
                *n_stages = as_count(param, value)?
            }
            (Hyperparameters::GradientBoosting { learning_rate, .. }, HyperParam::LearningRate) => {
                *learning_rate = value
            }
            (Hyperparameters::Knn { n_neighbors }, HyperParam::NNeighbors) => {
                *n_neighbors = as_count(param, value)?
            }
            (
                Hyperparameters::LogisticRegression {
                    c_inverse_regularization,
                    ..
                },
                HyperParam::CInverseRegularization,
            ) => *c_inverse_regularization = value,
            _ => return Err(mismatch()),
        }
        out.validate()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fitted {
    Tree {
        tree: Tree,
    },
    Forest {
        trees: Vec<Tree>,
    },
    Boosting {
        init: f64,
        stages: Vec<Tree>,
    },
    Knn {
        k: usize,
        rows: Matrix,
        target: Vec<u8>,
    },
    Logistic {
        weights: Vec<f64>,
        intercept: f64,
        iterations: usize,
        converged: bool,
        gradient_norm: f64,
    },
}

/// A fitted model. Serializes to a versioned JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub feature_names: Vec<String>,
    pub fitted: Fitted,
}

pub fn fit(spec: &ModelSpec, train: &FeatureMatrix) -> Result<TrainedModel> {
    Ok(fit_traced(spec, train)?.0)
}

/// As [`fit`], also returning the optimizer trace for logistic regression.
pub fn fit_traced(spec: &ModelSpec, train: &FeatureMatrix) -> Result<(TrainedModel, Option<LogisticTrace>)> {
    spec.validate()?;
    let n = train.n_rows();
    let p = train.n_features();
    if n == 0 {
        return Err(Error::Data("training set is empty".into()));
    }
    if p == 0 {
        return Err(Error::Data("training set has no features".into()));
    }
    let positives = train.target.iter().filter(|&&t| t == 1).count();
    let single_class = positives == 0 || positives == n;
    let x = &train.rows;
    let y: Vec<f64> = train.target.iter().map(|&t| f64::from(t)).collect();
    let mut trace = None;

    let fitted = match spec.params {
        Hyperparameters::DecisionTree { max_depth } => {
            let counts = vec![1u32; n];
            let tree = tree::build(
                x,
                &y,
                &counts,
                tree::TreeParams {
                    max_depth,
                    features_per_split: None,
                    criterion: tree::Criterion::Gini,
                },
                &mut crate::seed::rng(spec.seed),
                |rows| tree::weighted_mean(rows, &y, &counts),
            );
            Fitted::Tree { tree }
        }
        Hyperparameters::RandomForest {
            max_depth,
            n_trees,
            features_per_split,
            bootstrap,
        } => {
            let fps = features_per_split
                .unwrap_or_else(|| ((p as f64).sqrt().floor() as usize).max(1))
                .min(p);
            let trees = forest::fit(
                x,
                &y,
                &forest::ForestParams {
                    max_depth,
                    n_trees,
                    features_per_split: fps,
                    bootstrap,
                    seed: spec.seed,
                },
            );
            Fitted::Forest { trees }
        }
        Hyperparameters::GradientBoosting {
            max_depth,
            n_stages,
            learning_rate,
        } => {
            if single_class {
                return Err(Error::Data(
                    "gradient boosting needs both classes in the training set".into(),
                ));
            }
            let b = boosting::fit(
                x,
                &y,
                &boosting::BoostParams {
                    max_depth,
                    n_stages,
                    learning_rate,
                },
            );
            Fitted::Boosting {
                init: b.init,
                stages: b.stages,
            }
        }
        Hyperparameters::Knn { n_neighbors } => Fitted::Knn {
            k: n_neighbors,
            rows: x.clone(),
            target: train.target.clone(),
        },
        Hyperparameters::LogisticRegression {
            c_inverse_regularization,
            max_iterations,
            tolerance,
        } => {
            if single_class {
                return Err(Error::Data(
                    "logistic regression needs both classes in the training set".into(),
                ));
            }
            let fit = logistic::fit(
                x,
                &train.target,
                c_inverse_regularization,
                max_iterations,
                tolerance,
            );
            let fitted = Fitted::Logistic {
                weights: fit.weights,
                intercept: fit.intercept,
                iterations: fit.trace.iterations,
                converged: fit.trace.converged,
                gradient_norm: fit.trace.gradient_norm,
            };
            trace = Some(fit.trace);
            fitted
        }
    };

    Ok((
        TrainedModel {
            format_version: MODEL_FORMAT_VERSION,
            spec: spec.clone(),
            feature_names: train.feature_names.clone(),
            fitted,
        },
        trace,
    ))
}

impl TrainedModel {
    pub fn family(&self) -> Family {
        self.spec.family()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Trees of a tree-based model, in ensemble order.
    pub fn trees(&self) -> Option<&[Tree]> {
        match &self.fitted {
            Fitted::Tree { tree } => Some(std::slice::from_ref(tree)),
            Fitted::Forest { trees } => Some(trees),
            Fitted::Boosting { stages, .. } => Some(stages),
            _ => None,
        }
    }

    /// Positive-class score of one row. The caller guarantees the width.
    #[inline]
    pub fn score_row(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(row.len(), self.n_features());
        match &self.fitted {
            Fitted::Tree { tree } => tree.predict(row),
            Fitted::Forest { trees } => forest::predict(trees, row),
            Fitted::Boosting { init, stages } => sigmoid(boosting::raw_score(*init, stages, row)),
            Fitted::Knn { k, rows, target } => knn::score(rows, target, *k, row),
            Fitted::Logistic {
                weights, intercept, ..
            } => sigmoid(intercept + row.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>()),
        }
    }

    fn check_width(&self, rows: &Matrix) -> Result<()> {
        if rows.n_cols() != self.n_features() {
            return Err(Error::Argument(format!(
                "rows have {} features, model expects {}",
                rows.n_cols(),
                self.n_features()
            )));
        }
        Ok(())
    }

    pub fn predict_scores(&self, rows: &Matrix) -> Result<Vec<f64>> {
        self.check_width(rows)?;
        Ok(par::map_range(rows.n_rows(), |i| self.score_row(rows.row(i))))
    }

    pub fn predict_labels(&self, rows: &Matrix) -> Result<Vec<u8>> {
        Ok(self.predict_scores(rows)?.into_iter().map(label_for).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: TrainedModel = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        Ok(model)
    }
}

/// Label for a score; exactly 0.5 maps to 1.
#[inline]
pub fn label_for(score: f64) -> u8 {
    u8::from(score >= 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(rows: &[Vec<f64>], target: &[u8]) -> FeatureMatrix {
        let names = (0..rows[0].len()).map(|j| format!("f{j}")).collect();
        FeatureMatrix::new(names, Matrix::from_rows(rows).unwrap(), target.to_vec()).unwrap()
    }

    #[test]
    fn single_class_tree_is_a_stump_of_certainty() {
        let data = fm(&[vec![0.1], vec![0.7], vec![0.4]], &[1, 1, 1]);
        let model = fit(&ModelSpec::decision_tree(5), &data).unwrap();
        assert_eq!(model.trees().unwrap()[0].depth(), 0);
        let probe = Matrix::from_rows(&[vec![-3.0], vec![42.0]]).unwrap();
        assert_eq!(model.predict_scores(&probe).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn single_class_logistic_and_boosting_fail() {
        let data = fm(&[vec![0.1], vec![0.7]], &[0, 0]);
        assert!(fit(&ModelSpec::logistic(1.0), &data).is_err());
        assert!(fit(&Family::GradientBoosting.default_spec(), &data).is_err());
    }

    #[test]
    fn zero_logistic_scores_one_half() {
        let model = TrainedModel {
            format_version: MODEL_FORMAT_VERSION,
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
        let rows = Matrix::from_rows(&[vec![0.3, 0.9], vec![1.0, 0.0]]).unwrap();
        assert_eq!(model.predict_scores(&rows).unwrap(), vec![0.5, 0.5]);
        assert_eq!(model.predict_labels(&rows).unwrap(), vec![1, 1]);
        let narrow = Matrix::from_rows(&[vec![0.3]]).unwrap();
        assert!(model.predict_scores(&narrow).is_err());
    }

    #[test]
    fn label_threshold() {
        assert_eq!(label_for(0.6), 1);
        assert_eq!(label_for(0.4), 0);
        assert_eq!(label_for(0.5), 1);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(ModelSpec::decision_tree(0).validate().is_err());
        assert!(ModelSpec::logistic(0.0).validate().is_err());
        assert!(ModelSpec::new(Hyperparameters::Knn { n_neighbors: 0 }, 0)
            .validate()
            .is_err());
        let gb = Family::GradientBoosting.default_spec();
        assert!(gb.with_param(HyperParam::LearningRate, 1.5).is_err());
        assert!(gb.with_param(HyperParam::NNeighbors, 3.0).is_err());
        assert!(gb.with_param(HyperParam::MaxDepth, 2.5).is_err());
    }

    #[test]
    fn spec_json_uses_family_tag() {
        let spec: ModelSpec =
            serde_json::from_str(r#"{"family":"random_forest","max_depth":7,"seed":3}"#).unwrap();
        assert_eq!(spec.family(), Family::RandomForest);
        assert_eq!(
            spec.params,
            Hyperparameters::RandomForest {
                max_depth: 7,
                n_trees: 100,
                features_per_split: None,
                bootstrap: true
            }
        );
        assert_eq!(spec.seed, 3);
    }
}
