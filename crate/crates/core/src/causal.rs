//! Treatment dichotomization, propensity estimation, inverse-propensity
//! weighting and covariate balance.

use serde::{Deserialize, Serialize};

use crate::attribution::csv_field;
use crate::error::{Error, Result};
use crate::learners::{self, Family, Hyperparameters, ModelSpec, TrainedModel};
use crate::matrix::Matrix;
use crate::preprocess::FeatureMatrix;
use crate::stats::pairwise_sum;
use crate::tabular::{ColumnKind, Dataset};

/// Propensities are always clamped into `[EPSILON, 1 - EPSILON]`.
pub const EPSILON: f64 = 1e-6;

/// Default treated level: ratings at or above it count as treated.
pub const DEFAULT_THRESHOLD: u32 = 4;

/// Pooled variance below which a covariate is reported as constant.
pub const CONSTANT_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentAssignment {
    pub source_column: String,
    pub threshold: u32,
    pub assigned: Vec<u8>,
    pub n_treated: usize,
    pub n_control: usize,
}

/// `assigned[i] = 1` iff `column[i] >= threshold`.
pub fn dichotomize(data: &Dataset, column: &str, threshold: u32) -> Result<TreatmentAssignment> {
    let spec = data
        .spec(column)
        .ok_or_else(|| Error::Argument(format!("treatment column {column:?} not in dataset")))?;
    if !matches!(spec.kind, ColumnKind::Ordinal { .. }) {
        return Err(Error::Argument(format!(
            "treatment column {column:?} is not ordinal"
        )));
    }
    let values = data.numeric(column).expect("ordinal columns are numeric");
    let dense: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.ok_or_else(|| Error::Data(format!("treatment column {column:?} is missing at row {}", i + 1)))
        })
        .collect::<Result<_>>()?;
    dichotomize_values(column, &dense, threshold)
}

pub fn dichotomize_values(column: &str, values: &[f64], threshold: u32) -> Result<TreatmentAssignment> {
    let assigned: Vec<u8> = values.iter().map(|&v| u8::from(v >= threshold as f64)).collect();
    let n_treated = assigned.iter().filter(|&&a| a == 1).count();
    let n_control = assigned.len() - n_treated;
    if n_treated == 0 || n_control == 0 {
        return Err(Error::DegenerateTreatment(format!(
            "{column:?} at threshold {threshold}: {n_treated} treated, {n_control} control"
        )));
    }
    Ok(TreatmentAssignment {
        source_column: column.to_string(),
        threshold,
        assigned,
        n_treated,
        n_control,
    })
}

/// Propensity model used when a treatment names only a family.
pub fn default_propensity_spec(family: Family, seed: u64) -> Result<ModelSpec> {
    let params = match family {
        Family::LogisticRegression => return Ok(ModelSpec::logistic(1.0).with_seed(seed)),
        Family::RandomForest => Hyperparameters::RandomForest {
            max_depth: 10,
            n_trees: 100,
            features_per_split: None,
            bootstrap: true,
        },
        Family::GradientBoosting => Hyperparameters::GradientBoosting {
            max_depth: 3,
            n_stages: 100,
            learning_rate: 0.1,
        },
        other => {
            return Err(Error::Argument(format!(
                "{other} is not a supported propensity family"
            )))
        }
    };
    Ok(ModelSpec::new(params, seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityResult {
    pub model: TrainedModel,
    pub scores: Vec<f64>,
    pub covariate_names: Vec<String>,
}

/// True when `name` is the treatment source or one of its indicators.
pub fn derived_from(name: &str, source: &str) -> bool {
    name == source
        || name
            .strip_prefix(source)
            .is_some_and(|rest| rest.starts_with('='))
}

pub fn fit_propensity(
    spec: &ModelSpec,
    covariates: &Matrix,
    covariate_names: &[String],
    treatment: &TreatmentAssignment,
) -> Result<PropensityResult> {
    if !matches!(
        spec.family(),
        Family::LogisticRegression | Family::RandomForest | Family::GradientBoosting
    ) {
        return Err(Error::Argument(format!(
            "{} is not a supported propensity family",
            spec.family()
        )));
    }
    if covariates.n_cols() == 0 {
        return Err(Error::Argument(
            "propensity model needs at least one covariate".into(),
        ));
    }
    if let Some(bad) = covariate_names
        .iter()
        .find(|n| derived_from(n, &treatment.source_column))
    {
        return Err(Error::Argument(format!(
            "covariate {bad:?} derives from treatment column {:?}",
            treatment.source_column
        )));
    }
    let data = FeatureMatrix::new(
        covariate_names.to_vec(),
        covariates.clone(),
        treatment.assigned.clone(),
    )?;
    let model = learners::fit(spec, &data)?;
    let scores = model
        .predict_scores(covariates)?
        .into_iter()
        .map(|e| e.clamp(EPSILON, 1.0 - EPSILON))
        .collect();
    Ok(PropensityResult {
        model,
        scores,
        covariate_names: covariate_names.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipBounds {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub min: f64,
    pub max: f64,
    pub sum: f64,
    /// `(sum w)^2 / sum w^2`
    pub effective_sample_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub clip: Option<ClipBounds>,
    pub summary: WeightSummary,
}

impl WeightVector {
    /// Wraps arbitrary positive weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Argument("weight vector is empty".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::Argument(format!(
                "weights must be positive and finite, got {w}"
            )));
        }
        let sq: Vec<f64> = weights.iter().map(|w| w * w).collect();
        let sum = pairwise_sum(&weights);
        let summary = WeightSummary {
            min: weights.iter().copied().fold(f64::INFINITY, f64::min),
            max: weights.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            sum,
            effective_sample_size: sum * sum / pairwise_sum(&sq),
        };
        Ok(WeightVector {
            weights,
            clip: None,
            summary,
        })
    }
}

/// Treated rows get `1/e`, control rows `1/(1-e)`. With `clip`, propensities
/// are clamped into the bounds before inversion.
pub fn ipw_weights(propensities: &[f64], treatment: &[u8], clip: Option<ClipBounds>) -> Result<WeightVector> {
    if propensities.len() != treatment.len() {
        return Err(Error::Argument(format!(
            "{} propensities for {} treatment indicators",
            propensities.len(),
            treatment.len()
        )));
    }
    if let Some(c) = clip {
        if !(c.min < c.max) {
            return Err(Error::Argument(format!(
                "clip_min {} must be below clip_max {}",
                c.min, c.max
            )));
        }
        if !(c.min > 0.0 && c.max < 1.0) {
            return Err(Error::Argument(format!(
                "clip bounds [{}, {}] must lie inside (0, 1)",
                c.min, c.max
            )));
        }
    }
    let weights = propensities
        .iter()
        .zip(treatment)
        .map(|(&e, &a)| {
            let mut e = e.clamp(EPSILON, 1.0 - EPSILON);
            if let Some(c) = clip {
                e = e.clamp(c.min, c.max);
            }
            if a == 1 {
                1.0 / e
            } else {
                1.0 / (1.0 - e)
            }
        })
        .collect();
    let mut w = WeightVector::from_weights(weights)?;
    w.clip = clip;
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalReport {
    pub ht_mean_treated: f64,
    pub ht_mean_control: f64,
    pub ate: f64,
    pub marginal_effect: f64,
    pub n_treated: usize,
    pub n_control: usize,
    pub weights: WeightSummary,
}

/// Within-group weighted outcome means and their difference.
pub fn estimate_effects(y: &[u8], treatment: &[u8], weights: &WeightVector) -> Result<CausalReport> {
    let w = &weights.weights;
    if y.len() != treatment.len() || w.len() != y.len() {
        return Err(Error::Argument(format!(
            "lengths differ: {} outcomes, {} treatment indicators, {} weights",
            y.len(),
            treatment.len(),
            w.len()
        )));
    }
    let mut groups: [(Vec<f64>, Vec<f64>, Vec<f64>); 2] = Default::default();
    for i in 0..y.len() {
        let g = &mut groups[usize::from(treatment[i] == 1)];
        g.0.push(w[i] * f64::from(y[i]));
        g.1.push(w[i]);
        g.2.push(f64::from(y[i]));
    }
    let [control, treated] = &groups;
    if treated.1.is_empty() || control.1.is_empty() {
        return Err(Error::DegenerateTreatment(format!(
            "{} treated, {} control rows",
            treated.1.len(),
            control.1.len()
        )));
    }
    let ratio = |g: &(Vec<f64>, Vec<f64>, Vec<f64>), name: &str| -> Result<f64> {
        let total = pairwise_sum(&g.1);
        if !(total > 0.0) {
            return Err(Error::Data(format!("{name} group has zero total weight")));
        }
        Ok(pairwise_sum(&g.0) / total)
    };
    let ht_mean_treated = ratio(treated, "treated")?;
    let ht_mean_control = ratio(control, "control")?;
    let marginal_effect =
        pairwise_sum(&treated.2) / treated.2.len() as f64 - pairwise_sum(&control.2) / control.2.len() as f64;
    Ok(CausalReport {
        ht_mean_treated,
        ht_mean_control,
        ate: ht_mean_treated - ht_mean_control,
        marginal_effect,
        n_treated: treated.1.len(),
        n_control: control.1.len(),
        weights: weights.summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRecord {
    pub covariate: String,
    pub smd_unweighted: f64,
    pub smd_weighted: f64,
    pub constant: bool,
}

fn weighted_moments(x: &[f64], w: &[f64]) -> (f64, f64) {
    let total = pairwise_sum(w);
    let wx: Vec<f64> = x.iter().zip(w).map(|(a, b)| a * b).collect();
    let mean = pairwise_sum(&wx) / total;
    let dev: Vec<f64> = x
        .iter()
        .zip(w)
        .map(|(a, b)| b * (a - mean) * (a - mean))
        .collect();
    (mean, pairwise_sum(&dev) / total)
}

fn smd(x: &[f64], treatment: &[u8], w: &[f64]) -> (f64, f64) {
    let mut t = (Vec::new(), Vec::new());
    let mut c = (Vec::new(), Vec::new());
    for i in 0..x.len() {
        let g = if treatment[i] == 1 { &mut t } else { &mut c };
        g.0.push(x[i]);
        g.1.push(w[i]);
    }
    let (mt, vt) = weighted_moments(&t.0, &t.1);
    let (mc, vc) = weighted_moments(&c.0, &c.1);
    ((mt - mc).abs(), (vt + vc) / 2.0)
}

/// Absolute standardized mean difference per covariate, before and after
/// weighting. Without `weights` the weighted column repeats the unweighted
/// one.
pub fn smd_balance(
    covariates: &Matrix,
    names: &[String],
    treatment: &[u8],
    weights: Option<&WeightVector>,
) -> Result<Vec<BalanceRecord>> {
    let n = covariates.n_rows();
    if names.len() != covariates.n_cols() || treatment.len() != n {
        return Err(Error::Argument(format!(
            "{} names and {} treatment indicators for a {n}x{} covariate matrix",
            names.len(),
            treatment.len(),
            covariates.n_cols()
        )));
    }
    if let Some(w) = weights {
        if w.weights.len() != n {
            return Err(Error::Argument(format!(
                "{} weights for {n} rows",
                w.weights.len()
            )));
        }
    }
    let ones = vec![1.0; n];
    let n_treated = treatment.iter().filter(|&&a| a == 1).count();
    if n_treated == 0 || n_treated == n {
        return Err(Error::DegenerateTreatment(format!(
            "{n_treated} treated of {n} rows"
        )));
    }
    Ok((0..covariates.n_cols())
        .map(|j| {
            let x = covariates.column(j);
            let (diff, pooled) = smd(&x, treatment, &ones);
            let constant = pooled < CONSTANT_VARIANCE;
            let smd_unweighted = if constant { 0.0 } else { diff / pooled.sqrt() };
            let smd_weighted = match weights {
                None => smd_unweighted,
                Some(w) => {
                    let (diff, pooled) = smd(&x, treatment, &w.weights);
                    if constant || pooled < CONSTANT_VARIANCE {
                        0.0
                    } else {
                        diff / pooled.sqrt()
                    }
                }
            };
            BalanceRecord {
                covariate: names[j].clone(),
                smd_unweighted,
                smd_weighted,
                constant,
            }
        })
        .collect())
}

/// Love-plot table, largest unweighted imbalance first.
pub fn balance_to_csv(records: &[BalanceRecord]) -> String {
    let mut sorted: Vec<&BalanceRecord> = records.iter().collect();
    sorted.sort_by(|a, b| b.smd_unweighted.total_cmp(&a.smd_unweighted));
    let mut out = String::from("covariate,smd_unweighted,smd_weighted,constant\n");
    for r in sorted {
        out.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(&r.covariate),
            r.smd_unweighted,
            r.smd_weighted,
            r.constant
        ));
    }
    out
}

pub fn propensity_to_csv(treatment: &[u8], propensities: &[f64], weights: &WeightVector) -> String {
    let mut out = String::from("row,treatment,propensity,weight\n");
    for i in 0..treatment.len() {
        out.push_str(&format!(
            "{i},{},{},{}\n",
            treatment[i], propensities[i], weights.weights[i]
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dichotomize_examples() {
        let a = dichotomize_values("r", &[1.0, 3.0, 4.0, 5.0], 4).unwrap();
        assert_eq!(a.assigned, vec![0, 0, 1, 1]);
        assert_eq!((a.n_treated, a.n_control), (2, 2));
        assert_eq!(
            dichotomize_values("r", &[0.0, 5.0], 4).unwrap().assigned,
            vec![0, 1]
        );
        assert!(matches!(
            dichotomize_values("r", &[1.0, 2.0, 5.0], 1),
            Err(Error::DegenerateTreatment(_))
        ));
    }

    #[test]
    fn weight_arithmetic() {
        let w = ipw_weights(&[0.5, 0.25], &[1, 0], None).unwrap();
        assert_eq!(w.weights[0], 2.0);
        assert!((w.weights[1] - 1.0 / 0.75).abs() < 1e-15);
        let clip = Some(ClipBounds { min: 0.05, max: 0.95 });
        let w = ipw_weights(&[0.01], &[1], clip).unwrap();
        assert!((w.weights[0] - 20.0).abs() < 1e-12);
        assert!(ipw_weights(&[0.5], &[1], Some(ClipBounds { min: 0.5, max: 0.5 })).is_err());
        assert!(ipw_weights(&[0.5, 0.5], &[1], None).is_err());
        let w = ipw_weights(&[0.0, 1.0], &[1, 0], None).unwrap();
        assert_eq!(w.weights[0], 1e6);
        assert!((w.weights[1] - 1e6).abs() < 1e-2);
    }

    #[test]
    fn horvitz_thompson_hand_example() {
        let w = WeightVector::from_weights(vec![2.0, 1.0, 1.0]).unwrap();
        let r = estimate_effects(&[1, 0, 0], &[1, 1, 0], &w).unwrap();
        assert!((r.ht_mean_treated - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.ht_mean_control, 0.0);
        assert!((r.ate - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.marginal_effect, 0.5);
    }

    #[test]
    fn uniform_weights_reduce_to_marginal() {
        let y = [1, 0, 1, 1, 0, 0, 1];
        let a = [1, 1, 1, 0, 0, 0, 0];
        let w = WeightVector::from_weights(vec![3.0; 7]).unwrap();
        let r = estimate_effects(&y, &a, &w).unwrap();
        assert!((r.ate - r.marginal_effect).abs() <= 1e-12);
    }

    #[test]
    fn smd_examples() {
        // treated {0, 2} mean 1 var 1; control {-1, 1} mean 0 var 1
        let x =
            Matrix::from_rows(&[vec![0.0, 7.0], vec![2.0, 7.0], vec![-1.0, 7.0], vec![1.0, 7.0]]).unwrap();
        let names = vec!["x".to_string(), "k".to_string()];
        let b = smd_balance(&x, &names, &[1, 1, 0, 0], None).unwrap();
        assert_eq!(b[0].smd_unweighted, 1.0);
        assert!(!b[0].constant);
        assert!(b[1].constant && b[1].smd_unweighted == 0.0);
        let ones = WeightVector::from_weights(vec![1.0; 4]).unwrap();
        let bw = smd_balance(&x, &names, &[1, 1, 0, 0], Some(&ones)).unwrap();
        assert!((bw[0].smd_weighted - bw[0].smd_unweighted).abs() <= 1e-12);
        let csv = balance_to_csv(&b);
        assert!(csv.lines().nth(1).unwrap().starts_with("x,"));
    }

    #[test]
    fn derived_columns_are_recognized() {
        assert!(derived_from("Online boarding", "Online boarding"));
        assert!(derived_from("Online boarding=3", "Online boarding"));
        assert!(!derived_from("Online boarding time", "Online boarding"));
    }
}
