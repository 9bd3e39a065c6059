//! Feature attribution: impurity-decrease importance for tree models and
//! interventional Shapley values for any model.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{Node, TrainedModel};
use crate::matrix::Matrix;
use crate::par;
use crate::seed;

/// Largest feature count accepted by [`ShapleyMode::Exhaustive`].
pub const MAX_EXHAUSTIVE_FEATURES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMethod {
    Gini,
    ShapleyMeanAbsolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceTable {
    pub method: ImportanceMethod,
    pub features: Vec<FeatureImportance>,
    /// False when every raw importance was zero and no rescaling happened.
    pub normalized: bool,
}

impl ImportanceTable {
    /// Feature names by decreasing importance; ties keep feature order.
    pub fn ranking(&self) -> Vec<String> {
        let mut idx: Vec<usize> = (0..self.features.len()).collect();
        idx.sort_by(|&a, &b| {
            self.features[b]
                .importance
                .total_cmp(&self.features[a].importance)
                .then(a.cmp(&b))
        });
        idx.into_iter()
            .map(|i| self.features[i].feature.clone())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,importance\n");
        for f in &self.features {
            out.push_str(&format!("{},{}\n", csv_field(&f.feature), f.importance));
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Mean decrease in impurity, weighted by node sample fraction, averaged
/// over the model's trees and normalized to sum to one.
pub fn gini_importance(model: &TrainedModel) -> Result<ImportanceTable> {
    let trees = model.trees().ok_or_else(|| {
        Error::Argument(format!(
            "impurity importance needs a tree-based model, got {}",
            model.family()
        ))
    })?;
    let p = model.n_features();
    let mut raw = vec![0.0; p];
    for tree in trees {
        let root_n = tree.root.n_samples() as f64;
        tree.root.visit(&mut |node| {
            if let Node::Split {
                feature,
                n_samples,
                impurity,
                left,
                right,
                ..
            } = node
            {
                let n = *n_samples as f64;
                let children = (left.n_samples() as f64 * left.impurity()
                    + right.n_samples() as f64 * right.impurity())
                    / n;
                raw[*feature] += (n / root_n) * (impurity - children).max(0.0);
            }
        });
    }
    for v in raw.iter_mut() {
        *v /= trees.len() as f64;
    }
    let total: f64 = raw.iter().sum();
    let normalized = total > 0.0;
    if normalized {
        for v in raw.iter_mut() {
            *v /= total;
        }
    }
    Ok(ImportanceTable {
        method: ImportanceMethod::Gini,
        features: model
            .feature_names
            .iter()
            .zip(raw)
            .map(|(f, importance)| FeatureImportance {
                feature: f.clone(),
                importance,
            })
            .collect(),
        normalized,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapleyMode {
    /// Exact enumeration of all 2^p coalitions.
    Exhaustive,
    /// Seeded random permutations in antithetic pairs.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionVector {
    pub contributions: Vec<f64>,
    /// Monte-Carlo standard error per feature (sampled mode only).
    pub standard_errors: Option<Vec<f64>>,
    /// Mean model score over the background rows.
    pub baseline_value: f64,
    pub instance_value: f64,
    pub mode: ShapleyMode,
}

/// Coalition value: mean score over background rows with the coalition's
/// features taken from the instance.
struct Game<'a> {
    model: &'a TrainedModel,
    instance: &'a [f64],
    background: &'a Matrix,
}

impl Game<'_> {
    fn value(&self, in_coalition: &[bool], buf: &mut [f64]) -> f64 {
        let b = self.background.n_rows();
        let mut total = 0.0;
        for r in 0..b {
            let row = self.background.row(r);
            for j in 0..buf.len() {
                buf[j] = if in_coalition[j] { self.instance[j] } else { row[j] };
            }
            total += self.model.score_row(buf);
        }
        total / b as f64
    }

    fn value_of_mask(&self, mask: usize, buf: &mut [f64]) -> f64 {
        let members: Vec<bool> = (0..buf.len()).map(|j| mask >> j & 1 == 1).collect();
        self.value(&members, buf)
    }
}

pub fn shapley_values(
    model: &TrainedModel,
    instance: &[f64],
    background: &Matrix,
    n_samples: usize,
    seed: u64,
    mode: ShapleyMode,
) -> Result<AttributionVector> {
    let p = model.n_features();
    if instance.len() != p {
        return Err(Error::Argument(format!(
            "instance has {} features, model expects {p}",
            instance.len()
        )));
    }
    if background.n_rows() == 0 {
        return Err(Error::Argument("Shapley background set is empty".into()));
    }
    if background.n_cols() != p {
        return Err(Error::Argument(format!(
            "background has {} features, model expects {p}",
            background.n_cols()
        )));
    }
    let game = Game {
        model,
        instance,
        background,
    };
    let instance_value = model.score_row(instance);
    match mode {
        ShapleyMode::Exhaustive => exhaustive(&game, p, instance_value),
        ShapleyMode::Sampled => {
            if n_samples == 0 {
                return Err(Error::Argument("sampled Shapley needs n_samples >= 1".into()));
            }
            Ok(sampled(&game, p, n_samples, seed, instance_value))
        }
    }
}

fn exhaustive(game: &Game<'_>, p: usize, instance_value: f64) -> Result<AttributionVector> {
    if p > MAX_EXHAUSTIVE_FEATURES {
        return Err(Error::Argument(format!(
            "exhaustive Shapley supports at most {MAX_EXHAUSTIVE_FEATURES} features, model has {p}"
        )));
    }
    let values = par::map_range(1usize << p, |mask| {
        let mut buf = vec![0.0; p];
        game.value_of_mask(mask, &mut buf)
    });
    // weight(s) = s! (p - s - 1)! / p!
    let mut fact = vec![1.0f64; p + 1];
    for i in 1..=p {
        fact[i] = fact[i - 1] * i as f64;
    }
    let weight: Vec<f64> = (0..p).map(|s| fact[s] * fact[p - s - 1] / fact[p]).collect();
    let mut contributions = vec![0.0; p];
    for (j, phi) in contributions.iter_mut().enumerate() {
        let bit = 1usize << j;
        for mask in 0..(1usize << p) {
            if mask & bit == 0 {
                let s = mask.count_ones() as usize;
                *phi += weight[s] * (values[mask | bit] - values[mask]);
            }
        }
    }
    Ok(AttributionVector {
        contributions,
        standard_errors: None,
        baseline_value: values[0],
        instance_value,
        mode: ShapleyMode::Exhaustive,
    })
}

fn sampled(game: &Game<'_>, p: usize, n_samples: usize, seed: u64, instance_value: f64) -> AttributionVector {
    let mut rng = seed::rng(seed);
    let mut perms: Vec<Vec<usize>> = Vec::with_capacity(n_samples);
    while perms.len() < n_samples {
        let mut perm: Vec<usize> = (0..p).collect();
        perm.shuffle(&mut rng);
        let reversed: Vec<usize> = perm.iter().rev().copied().collect();
        perms.push(perm);
        if perms.len() < n_samples {
            perms.push(reversed);
        }
    }

    let baseline_value = {
        let mut buf = vec![0.0; p];
        game.value(&vec![false; p], &mut buf)
    };
    let marginals: Vec<Vec<f64>> = par::map_slice(&perms, |perm| {
        let mut buf = vec![0.0; p];
        let mut members = vec![false; p];
        let mut prev = baseline_value;
        let mut out = vec![0.0; p];
        for &j in perm {
            members[j] = true;
            let v = game.value(&members, &mut buf);
            out[j] = v - prev;
            prev = v;
        }
        out
    });

    // antithetic pairs are the independent sampling units
    let units: Vec<Vec<f64>> = marginals
        .chunks(2)
        .map(|pair| {
            (0..p)
                .map(|j| pair.iter().map(|m| m[j]).sum::<f64>() / pair.len() as f64)
                .collect()
        })
        .collect();
    let mut contributions = vec![0.0; p];
    for m in &marginals {
        for j in 0..p {
            contributions[j] += m[j];
        }
    }
    for c in contributions.iter_mut() {
        *c /= n_samples as f64;
    }
    let standard_errors = (0..p)
        .map(|j| {
            let k = units.len();
            if k < 2 {
                return f64::INFINITY;
            }
            let mean = units.iter().map(|u| u[j]).sum::<f64>() / k as f64;
            let var = units.iter().map(|u| (u[j] - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
            (var / k as f64).sqrt()
        })
        .collect();
    AttributionVector {
        contributions,
        standard_errors: Some(standard_errors),
        baseline_value,
        instance_value,
        mode: ShapleyMode::Sampled,
    }
}

/// Attributions for each row of `instances` plus their mean absolute value
/// per feature. Row `i` uses the seed derived from `(seed, i)`.
pub fn shapley_summary(
    model: &TrainedModel,
    instances: &Matrix,
    background: &Matrix,
    n_samples: usize,
    seed: u64,
    mode: ShapleyMode,
) -> Result<(ImportanceTable, Vec<AttributionVector>)> {
    let vectors = par::map_range(instances.n_rows(), |i| {
        shapley_values(
            model,
            instances.row(i),
            background,
            n_samples,
            seed::derive_indexed(seed, "shapley_instance", i as u64),
            mode,
        )
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let p = model.n_features();
    let mut mean_abs = vec![0.0; p];
    for v in &vectors {
        for (m, c) in mean_abs.iter_mut().zip(&v.contributions) {
            *m += c.abs();
        }
    }
    let count = vectors.len().max(1) as f64;
    let table = ImportanceTable {
        method: ImportanceMethod::ShapleyMeanAbsolute,
        features: model
            .feature_names
            .iter()
            .zip(mean_abs)
            .map(|(f, total)| FeatureImportance {
                feature: f.clone(),
                importance: total / count,
            })
            .collect(),
        normalized: false,
    };
    Ok((table, vectors))
}

/// One line per instance: row index, baseline, prediction, then one column
/// per feature.
pub fn attributions_to_csv(
    feature_names: &[String],
    rows: &[usize],
    vectors: &[AttributionVector],
) -> String {
    let mut out = String::from("row,baseline_value,instance_value");
    for f in feature_names {
        out.push(',');
        out.push_str(&csv_field(f));
    }
    out.push('\n');
    for (row, v) in rows.iter().zip(vectors) {
        out.push_str(&format!("{row},{},{}", v.baseline_value, v.instance_value));
        for c in &v.contributions {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
    }
    out
}
