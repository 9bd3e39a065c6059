//! Accuracy, k-fold cross-validation, grid search, learning curves and ROC.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{self, Family, HyperParam, ModelSpec, TrainedModel};
use crate::par;
use crate::preprocess::FeatureMatrix;
use crate::seed;

pub fn accuracy(labels: &[u8], predictions: &[u8]) -> Result<f64> {
    if labels.len() != predictions.len() {
        return Err(Error::Argument(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Argument("accuracy of an empty sequence".into()));
    }
    let correct = labels.iter().zip(predictions).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Seeded shuffle of `0..n` cut into `k` contiguous folds. The first
/// `n % k` folds hold one extra row. Each fold is returned sorted.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Argument(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::Argument(format!("{k} folds requested for {n} rows")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(seed));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold = perm[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(folds)
}

/// Rows outside fold `f`, ascending.
fn complement(n: usize, folds: &[Vec<usize>], f: usize) -> Vec<usize> {
    let mut held = vec![false; n];
    for &i in &folds[f] {
        held[i] = true;
    }
    (0..n).filter(|&i| !held[i]).collect()
}

fn holdout_accuracy(model: &TrainedModel, data: &FeatureMatrix) -> Result<f64> {
    let predicted = model.predict_labels(&data.rows)?;
    accuracy(&data.target, &predicted)
}

/// One varying hyperparameter over a base specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub base: ModelSpec,
    pub param: HyperParam,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn new(base: ModelSpec, param: HyperParam, values: Vec<f64>) -> Self {
        Grid { base, param, values }
    }

    /// All candidate specifications, validated.
    pub fn candidates(&self) -> Result<Vec<ModelSpec>> {
        if self.values.is_empty() {
            return Err(Error::InvalidSpec("grid has no candidate values".into()));
        }
        self.values
            .iter()
            .map(|&v| self.base.with_param(self.param, v))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub value: f64,
    pub spec: ModelSpec,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub family: Family,
    pub param: HyperParam,
    pub k: usize,
    pub candidates: Vec<CandidateResult>,
    pub selected: usize,
    pub selected_value: f64,
    pub cv_accuracy: f64,
    pub holdout_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GridSearchOutcome {
    pub report: CvReport,
    /// Selected candidate refit on the whole training set.
    pub model: TrainedModel,
}

impl GridSearchOutcome {
    pub fn score_holdout(&mut self, test: &FeatureMatrix) -> Result<f64> {
        let acc = holdout_accuracy(&self.model, test)?;
        self.report.holdout_accuracy = Some(acc);
        Ok(acc)
    }
}

/// Evaluates every candidate on the same `k` folds and refits the best on
/// all of `train`. Ties in mean accuracy go to the smallest value.
pub fn grid_search(grid: &Grid, train: &FeatureMatrix, k: usize, seed: u64) -> Result<GridSearchOutcome> {
    let specs = grid.candidates()?;
    let n = train.n_rows();
    let folds = kfold_split(n, k, seed)?;
    let splits: Vec<(FeatureMatrix, FeatureMatrix)> = (0..k)
        .map(|f| {
            (
                train.select_rows(&complement(n, &folds, f)),
                train.select_rows(&folds[f]),
            )
        })
        .collect();

    let jobs: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|c| (0..k).map(move |f| (c, f)))
        .collect();
    let scores: Vec<Result<f64>> = par::map_slice(&jobs, |&(c, f)| {
        let (fit_rows, val_rows) = &splits[f];
        let model = learners::fit(&specs[c], fit_rows)?;
        holdout_accuracy(&model, val_rows)
    });

    let mut candidates = Vec::with_capacity(specs.len());
    let mut scores = scores.into_iter();
    for (c, spec) in specs.iter().enumerate() {
        let fold_accuracies = scores.by_ref().take(k).collect::<Result<Vec<f64>>>()?;
        let mean_accuracy = fold_accuracies.iter().sum::<f64>() / k as f64;
        candidates.push(CandidateResult {
            value: grid.values[c],
            spec: spec.clone(),
            fold_accuracies,
            mean_accuracy,
        });
    }

    let mut selected = 0;
    for (c, cand) in candidates.iter().enumerate().skip(1) {
        let best = &candidates[selected];
        if cand.mean_accuracy > best.mean_accuracy
            || (cand.mean_accuracy == best.mean_accuracy && cand.value < best.value)
        {
            selected = c;
        }
    }

    let model = learners::fit(&specs[selected], train)?;
    Ok(GridSearchOutcome {
        report: CvReport {
            family: grid.base.family(),
            param: grid.param,
            k,
            selected_value: candidates[selected].value,
            cv_accuracy: candidates[selected].mean_accuracy,
            candidates,
            selected,
            holdout_accuracy: None,
        },
        model,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningCurvePoint {
    pub fraction: f64,
    /// Mean training-subsample size over folds, rounded.
    pub training_size: usize,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<LearningCurvePoint>,
}

/// For each fraction, fits on a prefix of one seeded shuffle of each
/// training fold and scores on that prefix and on the held-out fold. Folds
/// match [`grid_search`] for the same `seed`.
pub fn learning_curve(
    spec: &ModelSpec,
    train: &FeatureMatrix,
    sizes: &[f64],
    k: usize,
    seed: u64,
) -> Result<LearningCurve> {
    spec.validate()?;
    if sizes.is_empty() {
        return Err(Error::Argument("no learning-curve sizes given".into()));
    }
    if let Some(bad) = sizes.iter().find(|s| !(**s > 0.0 && **s <= 1.0)) {
        return Err(Error::Argument(format!(
            "learning-curve fraction {bad} outside (0, 1]"
        )));
    }
    let n = train.n_rows();
    let folds = kfold_split(n, k, seed)?;
    let shuffled: Vec<Vec<usize>> = (0..k)
        .map(|f| {
            let mut rows = complement(n, &folds, f);
            rows.shuffle(&mut seed::rng(seed::derive_indexed(
                seed,
                "learning_curve",
                f as u64,
            )));
            rows
        })
        .collect();

    let mut points = Vec::with_capacity(sizes.len());
    for &fraction in sizes {
        let subsets: Vec<Vec<usize>> = shuffled
            .iter()
            .map(|rows| {
                let s = (rows.len() as f64 * fraction).round() as usize;
                let mut subset = rows[..s.min(rows.len())].to_vec();
                subset.sort_unstable();
                subset
            })
            .collect();
        if let Some(small) = subsets.iter().find(|s| s.len() < 2) {
            return Err(Error::Argument(format!(
                "fraction {fraction} leaves {} training row(s)",
                small.len()
            )));
        }
        let results: Vec<Result<(f64, f64)>> = par::map_range(k, |f| {
            let fit_rows = train.select_rows(&subsets[f]);
            let model = learners::fit(spec, &fit_rows)?;
            let tr = holdout_accuracy(&model, &fit_rows)?;
            let va = holdout_accuracy(&model, &train.select_rows(&folds[f]))?;
            Ok((tr, va))
        });
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;
        let mean_size = subsets.iter().map(Vec::len).sum::<usize>() as f64 / k as f64;
        points.push(LearningCurvePoint {
            fraction,
            training_size: mean_size.round() as usize,
            train_accuracy: results.iter().map(|r| r.0).sum::<f64>() / k as f64,
            validation_accuracy: results.iter().map(|r| r.1).sum::<f64>() / k as f64,
        });
    }
    if points
        .windows(2)
        .any(|w| w[1].training_size <= w[0].training_size)
    {
        return Err(Error::Argument(
            "learning-curve sizes must map to strictly increasing training sizes".into(),
        ));
    }
    Ok(LearningCurve { points })
}

impl LearningCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,training_size,train_accuracy,validation_accuracy\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.fraction, p.training_size, p.train_accuracy, p.validation_accuracy
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub false_positive_rate: f64,
    pub true_positive_rate: f64,
    /// Scores at or above this value are called positive; infinite for the
    /// origin.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC over thresholds at each distinct score, descending. Equal scores
/// move the curve in one diagonal step, which makes the trapezoidal area
/// equal to the Mann-Whitney statistic.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Argument("ROC needs both classes among the labels".into()));
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Argument(format!("score {bad} is not a number")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        false_positive_rate: 0.0,
        true_positive_rate: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            false_positive_rate: fp as f64 / negatives as f64,
            true_positive_rate: tp as f64 / positives as f64,
            threshold: s,
        });
    }
    let auc = trapezoid_area(&points);
    Ok(RocResult { points, auc })
}

pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| {
            (w[1].false_positive_rate - w[0].false_positive_rate)
                * (w[0].true_positive_rate + w[1].true_positive_rate)
                / 2.0
        })
        .sum()
}

impl RocResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("false_positive_rate,true_positive_rate,threshold\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{}\n",
                p.false_positive_rate, p.true_positive_rate, p.threshold
            ));
        }
        out
    }
}
