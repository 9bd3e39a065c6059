//! Transformation chain from a typed [`Dataset`] to a fully numeric,
//! `[0, 1]`-scaled [`FeatureMatrix`].
//!
//! Each step exists as a stand-alone operation and as a fitted transform
//! (`*::fit` on training rows, `apply` on any rows) so held-out data is
//! processed with training statistics only. [`FittedPipeline`] bundles the
//! fitted steps and serializes to a JSON sidecar.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;
use crate::stats;
use crate::tabular::{Column, ColumnKind, ColumnSpec, Dataset};

/// Default |r| at or above which a pair of predictors counts as collinear.
pub const DEFAULT_COLLINEARITY_THRESHOLD: f64 = 0.9;

/// Numeric features with a binary target (1 = positive label).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub feature_names: Vec<String>,
    pub rows: Matrix,
    pub target: Vec<u8>,
}

impl FeatureMatrix {
    pub fn new(feature_names: Vec<String>, rows: Matrix, target: Vec<u8>) -> Result<Self> {
        if feature_names.len() != rows.n_cols() {
            return Err(Error::Argument(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                rows.n_cols()
            )));
        }
        if target.len() != rows.n_rows() {
            return Err(Error::Argument(format!(
                "{} targets for {} rows",
                target.len(),
                rows.n_rows()
            )));
        }
        if target.iter().any(|&t| t > 1) {
            return Err(Error::Argument("target values must be 0 or 1".into()));
        }
        Ok(FeatureMatrix {
            feature_names,
            rows,
            target,
        })
    }

    /// Converts an all-numeric dataset (the output of [`encode_features`]
    /// after imputation) into a matrix. Fails on any missing cell.
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        let (target_spec, target) = data
            .target()
            .ok_or_else(|| Error::Data("dataset has no binary target column".into()))?;
        let mut names = Vec::new();
        let mut columns = Vec::new();
        for (spec, col) in data.schema().iter().zip(data.columns()) {
            if spec.name == target_spec.name {
                continue;
            }
            match col {
                Column::Numeric(values) => {
                    let dense: Option<Vec<f64>> = values.iter().copied().collect();
                    let dense = dense.ok_or_else(|| {
                        Error::Data(format!("column {:?} still has missing cells", spec.name))
                    })?;
                    names.push(spec.name.clone());
                    columns.push(dense);
                }
                _ => {
                    return Err(Error::Data(format!(
                        "column {:?} is not numeric; encode features first",
                        spec.name
                    )))
                }
            }
        }
        let rows = if columns.is_empty() {
            Matrix::zeros(data.n_rows(), 0)
        } else {
            Matrix::from_columns(&columns)?
        };
        FeatureMatrix::new(names, rows, target.iter().map(|&t| u8::from(t)).collect())
    }

    pub fn n_rows(&self) -> usize {
        self.rows.n_rows()
    }

    pub fn n_features(&self) -> usize {
        self.rows.n_cols()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            feature_names: self.feature_names.clone(),
            rows: self.rows.select_rows(indices),
            target: indices.iter().map(|&i| self.target[i]).collect(),
        }
    }

    /// Copy without the named features; unknown names are ignored.
    pub fn without_features(&self, drop: &[String]) -> FeatureMatrix {
        let keep: Vec<usize> = (0..self.n_features())
            .filter(|&j| !drop.contains(&self.feature_names[j]))
            .collect();
        FeatureMatrix {
            feature_names: keep.iter().map(|&j| self.feature_names[j].clone()).collect(),
            rows: self.rows.select_columns(&keep),
            target: self.target.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum CellKey {
    Missing,
    Number(u64),
    Text(String),
    Flag(bool),
}

/// Removes exact duplicate rows, keeping the first occurrence.
pub fn deduplicate(data: &Dataset) -> (Dataset, usize) {
    let mut seen = HashSet::with_capacity(data.n_rows());
    let mut keep = Vec::with_capacity(data.n_rows());
    for i in 0..data.n_rows() {
        let key: Vec<CellKey> = data
            .columns()
            .iter()
            .map(|c| match c {
                Column::Numeric(v) => match v[i] {
                    // +0.0 and -0.0 compare equal
                    Some(x) => CellKey::Number(if x == 0.0 { 0 } else { x.to_bits() }),
                    None => CellKey::Missing,
                },
                Column::Nominal(v) => match &v[i] {
                    Some(s) => CellKey::Text(s.clone()),
                    None => CellKey::Missing,
                },
                Column::Target(v) => CellKey::Flag(v[i]),
            })
            .collect();
        if seen.insert(key) {
            keep.push(i);
        }
    }
    let removed = data.n_rows() - keep.len();
    if removed == 0 {
        (data.clone(), 0)
    } else {
        (data.select_rows(&keep), removed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationRecord {
    pub column: String,
    pub median: f64,
    /// Cells filled when the imputer was applied to the training rows.
    pub filled: usize,
}

/// Per-column medians fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianImputer {
    pub medians: Vec<(String, f64)>,
}

impl MedianImputer {
    pub fn fit(data: &Dataset, columns: &[String]) -> Result<Self> {
        let mut medians = Vec::with_capacity(columns.len());
        for name in columns {
            let spec = data
                .spec(name)
                .ok_or_else(|| Error::Argument(format!("unknown column {name:?}")))?;
            if !spec.is_numeric_like() {
                return Err(Error::Argument(format!(
                    "median imputation needs a numeric or ordinal column, {name:?} is not"
                )));
            }
            let observed: Vec<f64> = data
                .numeric(name)
                .expect("numeric storage")
                .iter()
                .flatten()
                .copied()
                .collect();
            let median = stats::median(&observed)
                .ok_or_else(|| Error::Data(format!("column {name:?} has no observed values")))?;
            medians.push((name.clone(), median));
        }
        Ok(MedianImputer { medians })
    }

    /// Fills missing cells; returns the new dataset and the fill count per
    /// fitted column.
    pub fn apply(&self, data: &Dataset) -> Result<(Dataset, Vec<ImputationRecord>)> {
        let mut out = data.clone();
        let mut records = Vec::with_capacity(self.medians.len());
        for (name, median) in &self.medians {
            let j = data
                .column_index(name)
                .ok_or_else(|| Error::Argument(format!("unknown column {name:?}")))?;
            let values = data
                .numeric(name)
                .ok_or_else(|| Error::Argument(format!("column {name:?} is not numeric")))?;
            let filled = values.iter().filter(|v| v.is_none()).count();
            if filled > 0 {
                let column = values.iter().map(|v| Some(v.unwrap_or(*median))).collect();
                out = out.with_column(j, Column::Numeric(column))?;
            }
            records.push(ImputationRecord {
                column: name.clone(),
                median: *median,
                filled,
            });
        }
        Ok((out, records))
    }
}

/// Replaces missing cells in `columns` by each column's observed median.
pub fn impute_median(data: &Dataset, columns: &[String]) -> Result<(Dataset, Vec<ImputationRecord>)> {
    MedianImputer::fit(data, columns)?.apply(data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Encoding {
    /// Level codes pass through unchanged.
    Ordinal {
        column: String,
        levels: Vec<u32>,
    },
    /// One indicator per category, categories in lexicographic order.
    OneHot {
        column: String,
        categories: Vec<String>,
        indicators: Vec<String>,
    },
    Passthrough {
        column: String,
    },
    Target {
        column: String,
        positive_label: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingMap {
    pub columns: Vec<Encoding>,
}

pub fn indicator_name(column: &str, category: &str) -> String {
    format!("{column}={category}")
}

impl EncodingMap {
    pub fn for_schema(schema: &[ColumnSpec]) -> Self {
        let columns = schema
            .iter()
            .map(|spec| match &spec.kind {
                ColumnKind::Numeric => Encoding::Passthrough {
                    column: spec.name.clone(),
                },
                ColumnKind::Ordinal { max } => Encoding::Ordinal {
                    column: spec.name.clone(),
                    levels: (0..=*max).collect(),
                },
                ColumnKind::Nominal { categories } => {
                    let mut sorted = categories.clone();
                    sorted.sort();
                    Encoding::OneHot {
                        column: spec.name.clone(),
                        indicators: sorted.iter().map(|c| indicator_name(&spec.name, c)).collect(),
                        categories: sorted,
                    }
                }
                ColumnKind::BinaryTarget { positive_label, .. } => Encoding::Target {
                    column: spec.name.clone(),
                    positive_label: positive_label.clone(),
                },
            })
            .collect();
        EncodingMap { columns }
    }

    /// Encodes `data`. Nominal cells that are missing become an all-zero
    /// indicator block; the second return value counts them.
    pub fn apply(&self, data: &Dataset) -> Result<(Dataset, usize)> {
        let mut schema = Vec::new();
        let mut columns = Vec::new();
        let mut missing_nominal = 0usize;
        for enc in &self.columns {
            match enc {
                Encoding::Passthrough { column } | Encoding::Ordinal { column, .. } => {
                    let values = data
                        .numeric(column)
                        .ok_or_else(|| Error::Argument(format!("column {column:?} is not numeric")))?;
                    schema.push(ColumnSpec::numeric(column));
                    columns.push(Column::Numeric(values.to_vec()));
                }
                Encoding::OneHot {
                    column,
                    categories,
                    indicators,
                } => {
                    let values = match data.column(column) {
                        Some(Column::Nominal(v)) => v,
                        _ => return Err(Error::Argument(format!("column {column:?} is not nominal"))),
                    };
                    let mut blocks = vec![vec![Some(0.0); data.n_rows()]; categories.len()];
                    for (i, v) in values.iter().enumerate() {
                        match v {
                            Some(value) => {
                                let c = categories.binary_search(value).map_err(|_| {
                                    Error::Data(format!("unseen category {value:?} in column {column:?}"))
                                })?;
                                blocks[c][i] = Some(1.0);
                            }
                            None => missing_nominal += 1,
                        }
                    }
                    for (name, block) in indicators.iter().zip(blocks) {
                        schema.push(ColumnSpec::numeric(name));
                        columns.push(Column::Numeric(block));
                    }
                }
                Encoding::Target { column, .. } => {
                    let spec = data
                        .spec(column)
                        .ok_or_else(|| Error::Argument(format!("unknown column {column:?}")))?;
                    schema.push(spec.clone());
                    columns.push(data.column(column).expect("spec found").clone());
                }
            }
        }
        if missing_nominal > 0 {
            log::warn!("{missing_nominal} missing nominal cell(s) encoded as all-zero indicators");
        }
        Ok((Dataset::new(schema, columns)?, missing_nominal))
    }
}

/// Ordinal columns keep their level codes, nominal columns expand to
/// one-hot indicators and the binary target is kept (positive label = 1).
pub fn encode_features(data: &Dataset) -> Result<(Dataset, EncodingMap)> {
    let map = EncodingMap::for_schema(data.schema());
    let (encoded, _) = map.apply(data)?;
    Ok((encoded, map))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub column: String,
    pub min: f64,
    pub max: f64,
}

impl ScalingParams {
    pub fn is_degenerate(&self) -> bool {
        self.max <= self.min
    }

    /// Scaled value and whether it had to be clamped into `[0, 1]`.
    #[inline]
    pub fn scale(&self, x: f64) -> (f64, bool) {
        if self.is_degenerate() {
            return (0.0, false);
        }
        let z = (x - self.min) / (self.max - self.min);
        if z < 0.0 {
            (0.0, true)
        } else if z > 1.0 {
            (1.0, true)
        } else {
            (z, false)
        }
    }
}

/// Min-max scaler fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub params: Vec<ScalingParams>,
}

impl MinMaxScaler {
    pub fn fit(data: &Dataset, columns: &[String]) -> Result<Self> {
        let mut params = Vec::with_capacity(columns.len());
        for name in columns {
            let values = data
                .numeric(name)
                .ok_or_else(|| Error::Argument(format!("column {name:?} is not numeric")))?;
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for v in values {
                let v = v.ok_or_else(|| {
                    Error::Data(format!(
                        "column {name:?} has missing cells; impute before scaling"
                    ))
                })?;
                min = min.min(v);
                max = max.max(v);
            }
            if values.is_empty() {
                return Err(Error::Data(format!("column {name:?} has no rows")));
            }
            if max <= min {
                log::warn!("column {name:?} is constant; it scales to 0");
            }
            params.push(ScalingParams {
                column: name.clone(),
                min,
                max,
            });
        }
        Ok(MinMaxScaler { params })
    }

    /// Scales fitted columns; returns the dataset and the number of clamped cells.
    pub fn apply(&self, data: &Dataset) -> Result<(Dataset, usize)> {
        let mut out = data.clone();
        let mut clamped = 0usize;
        for p in &self.params {
            let j = data
                .column_index(&p.column)
                .ok_or_else(|| Error::Argument(format!("unknown column {:?}", p.column)))?;
            let values = data
                .numeric(&p.column)
                .ok_or_else(|| Error::Argument(format!("column {:?} is not numeric", p.column)))?;
            let mut scaled = Vec::with_capacity(values.len());
            for v in values {
                let v = v.ok_or_else(|| Error::Data(format!("column {:?} has missing cells", p.column)))?;
                let (z, c) = p.scale(v);
                clamped += usize::from(c);
                scaled.push(Some(z));
            }
            out = out.with_column(j, Column::Numeric(scaled))?;
        }
        if clamped > 0 {
            log::info!("{clamped} cell(s) outside the fitted range clamped into [0, 1]");
        }
        Ok((out, clamped))
    }
}

pub fn scale_minmax(data: &Dataset, columns: &[String]) -> Result<(Dataset, Vec<ScalingParams>)> {
    let scaler = MinMaxScaler::fit(data, columns)?;
    let (out, _) = scaler.apply(data)?;
    Ok((out, scaler.params))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollinearPair {
    pub col_a: String,
    pub col_b: String,
    pub pearson_r: f64,
    /// The later of the two in schema order; excluded from linear models.
    pub drop_for_linear: String,
}

/// Flags all numeric/ordinal pairs with |r| ≥ `threshold`.
pub fn correlation_screen(data: &Dataset, threshold: f64) -> Result<Vec<CollinearPair>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Argument(format!(
            "collinearity threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let numeric: Vec<(&str, &[Option<f64>])> = data
        .schema()
        .iter()
        .zip(data.columns())
        .filter_map(|(s, c)| match c {
            Column::Numeric(v) if s.is_numeric_like() => Some((s.name.as_str(), v.as_slice())),
            _ => None,
        })
        .collect();
    let mut pairs = Vec::new();
    for a in 0..numeric.len() {
        for b in a + 1..numeric.len() {
            if let Some(r) = stats::pearson_pairwise(numeric[a].1, numeric[b].1) {
                if r.abs() >= threshold {
                    pairs.push(CollinearPair {
                        col_a: numeric[a].0.to_string(),
                        col_b: numeric[b].0.to_string(),
                        pearson_r: r,
                        drop_for_linear: numeric[b].0.to_string(),
                    });
                }
            }
        }
    }
    Ok(pairs)
}

/// Columns to exclude from linear models, in first-flagged order.
pub fn linear_drop_set(pairs: &[CollinearPair]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for p in pairs {
        if !out.contains(&p.drop_for_linear) {
            out.push(p.drop_for_linear.clone());
        }
    }
    out
}

/// Seeded train/test partition of `0..n`. The test part receives
/// `round(n * test_fraction)` rows (half away from zero); both parts come
/// back in ascending index order.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    if n < 2 {
        return Err(Error::Argument(format!("cannot split {n} row(s)")));
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(Error::Argument(format!(
            "test fraction {test_fraction} leaves an empty partition for {n} rows"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(seed));
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

pub fn train_test_split(
    data: &FeatureMatrix,
    test_fraction: f64,
    seed: u64,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let (train, test) = split_indices(data.n_rows(), test_fraction, seed)?;
    Ok((data.select_rows(&train), data.select_rows(&test)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub duplicates_removed: usize,
    pub imputation: Vec<ImputationRecord>,
    pub scaling: Vec<ScalingParams>,
    pub encoding: EncodingMap,
    pub missing_nominal_cells: usize,
    pub collinearity_threshold: f64,
    pub collinear_pairs: Vec<CollinearPair>,
    pub dropped_for_linear: Vec<String>,
}

/// Fitted imputation, encoding and scaling, replayable on any rows with the
/// same schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPipeline {
    pub format_version: u32,
    pub schema: Vec<ColumnSpec>,
    pub imputer: MedianImputer,
    pub encoding: EncodingMap,
    pub scaler: MinMaxScaler,
    pub dropped_for_linear: Vec<String>,
}

pub const PIPELINE_FORMAT_VERSION: u32 = 1;

impl FittedPipeline {
    /// Fits every step on `train` (already deduplicated).
    pub fn fit(train: &Dataset, collinearity_threshold: f64) -> Result<(Self, PreprocessReport)> {
        let numeric_columns: Vec<String> = train
            .schema()
            .iter()
            .filter(|s| s.is_numeric_like())
            .map(|s| s.name.clone())
            .collect();
        let imputer = MedianImputer::fit(train, &numeric_columns)?;
        let (imputed, imputation) = imputer.apply(train)?;
        let collinear_pairs = correlation_screen(&imputed, collinearity_threshold)?;
        let dropped_for_linear = linear_drop_set(&collinear_pairs);
        let encoding = EncodingMap::for_schema(train.schema());
        let (encoded, missing_nominal_cells) = encoding.apply(&imputed)?;
        let features: Vec<String> = encoded
            .schema()
            .iter()
            .filter(|s| s.is_numeric_like())
            .map(|s| s.name.clone())
            .collect();
        let scaler = MinMaxScaler::fit(&encoded, &features)?;
        let report = PreprocessReport {
            duplicates_removed: 0,
            imputation,
            scaling: scaler.params.clone(),
            encoding: encoding.clone(),
            missing_nominal_cells,
            collinearity_threshold,
            collinear_pairs,
            dropped_for_linear: dropped_for_linear.clone(),
        };
        Ok((
            FittedPipeline {
                format_version: PIPELINE_FORMAT_VERSION,
                schema: train.schema().to_vec(),
                imputer,
                encoding,
                scaler,
                dropped_for_linear,
            },
            report,
        ))
    }

    pub fn impute(&self, data: &Dataset) -> Result<Dataset> {
        if data.schema() != self.schema.as_slice() {
            return Err(Error::Schema(
                "dataset schema differs from the fitted pipeline".into(),
            ));
        }
        Ok(self.imputer.apply(data)?.0)
    }

    /// Full transform. Also returns the count of cells clamped by scaling.
    pub fn transform(&self, data: &Dataset) -> Result<(FeatureMatrix, usize)> {
        let imputed = self.impute(data)?;
        let (encoded, _) = self.encoding.apply(&imputed)?;
        let (scaled, clamped) = self.scaler.apply(&encoded)?;
        Ok((FeatureMatrix::from_dataset(&scaled)?, clamped))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: FittedPipeline = serde_json::from_str(text)?;
        if p.format_version != PIPELINE_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported pipeline format version {}",
                p.format_version
            )));
        }
        Ok(p)
    }
}
