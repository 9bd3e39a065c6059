//! Confounded synthetic data with a Monte-Carlo ground-truth ATE.
//!
//! Structural model, with `x ~ U[0,1]^p` i.i.d.:
//!
//! ```text
//! a ~ Bernoulli(sigmoid(intercept_treatment + alpha . x))
//! y ~ Bernoulli(sigmoid(intercept_outcome + beta . x + tau * a))
//! ```

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par;
use crate::seed;
use crate::stats::sigmoid;
use crate::tabular::{Column, ColumnSpec, Dataset};

/// Monte-Carlo draws used for [`SynthDataset::true_ate`].
pub const DEFAULT_ORACLE_DRAWS: usize = 1_000_000;

pub const MIN_ORACLE_DRAWS: usize = 10_000;

/// Name of the exported treatment column.
pub const TREATMENT_COLUMN: &str = "Treatment Rating";

pub const TARGET_COLUMN: &str = "satisfaction";

const ROWS_PER_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_rows: usize,
    pub p: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub tau: f64,
    pub intercept_treatment: f64,
    pub intercept_outcome: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p < 1 {
            return Err(Error::InvalidSpec("synthetic p must be at least 1".into()));
        }
        if self.n_rows < 100 {
            return Err(Error::InvalidSpec(format!(
                "synthetic n_rows must be at least 100, got {}",
                self.n_rows
            )));
        }
        if self.alpha.len() != self.p || self.beta.len() != self.p {
            return Err(Error::InvalidSpec(format!(
                "alpha has {} and beta {} coefficients for p = {}",
                self.alpha.len(),
                self.beta.len(),
                self.p
            )));
        }
        let finite = self.alpha.iter().chain(&self.beta).all(|v| v.is_finite())
            && self.tau.is_finite()
            && self.intercept_treatment.is_finite()
            && self.intercept_outcome.is_finite();
        if !finite {
            return Err(Error::InvalidSpec("synthetic coefficients must be finite".into()));
        }
        Ok(())
    }

    fn outcome_logit(&self, x: &[f64]) -> f64 {
        self.intercept_outcome + dot(&self.beta, x)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub value: f64,
    pub standard_error: f64,
    pub n_mc: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub covariates: Matrix,
    pub treatment: Vec<u8>,
    pub outcome: Vec<u8>,
    pub true_ate: OracleEstimate,
}

impl SynthDataset {
    pub fn covariate_names(&self) -> Vec<String> {
        (1..=self.config.p).map(|j| format!("x{j}")).collect()
    }

    pub fn schema(&self) -> Vec<ColumnSpec> {
        let mut schema: Vec<ColumnSpec> = self
            .covariate_names()
            .iter()
            .map(|n| ColumnSpec::numeric(n))
            .collect();
        schema.push(ColumnSpec::ordinal(TREATMENT_COLUMN, 5));
        schema.push(ColumnSpec::target(
            TARGET_COLUMN,
            "satisfied",
            "neutral or dissatisfied",
        ));
        schema
    }

    /// Survey-shaped dataset: treated rows rate the treatment column 5,
    /// control rows rate it 1.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let mut columns: Vec<Column> = (0..self.config.p)
            .map(|j| Column::Numeric(self.covariates.column(j).into_iter().map(Some).collect()))
            .collect();
        columns.push(Column::Numeric(
            self.treatment
                .iter()
                .map(|&a| Some(if a == 1 { 5.0 } else { 1.0 }))
                .collect(),
        ));
        columns.push(Column::Target(self.outcome.iter().map(|&y| y == 1).collect()));
        Dataset::new(self.schema(), columns)
    }
}

/// Samples a dataset. Rows are drawn in fixed-size chunks, each from its own
/// derived seed, so the result does not depend on thread count.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let p = config.p;
    let n_chunks = config.n_rows.div_ceil(ROWS_PER_CHUNK);
    let chunks = par::map_range(n_chunks, |c| {
        let mut rng = seed::rng(seed::derive_indexed(config.seed, "synth_rows", c as u64));
        let start = c * ROWS_PER_CHUNK;
        let end = (start + ROWS_PER_CHUNK).min(config.n_rows);
        let mut x = Vec::with_capacity((end - start) * p);
        let mut a = Vec::with_capacity(end - start);
        let mut y = Vec::with_capacity(end - start);
        for _ in start..end {
            let row: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
            let e = sigmoid(config.intercept_treatment + dot(&config.alpha, &row));
            let treated = rng.random::<f64>() < e;
            let logit = config.outcome_logit(&row) + if treated { config.tau } else { 0.0 };
            let positive = rng.random::<f64>() < sigmoid(logit);
            x.extend_from_slice(&row);
            a.push(u8::from(treated));
            y.push(u8::from(positive));
        }
        (x, a, y)
    });
    let mut data = Vec::with_capacity(config.n_rows * p);
    let mut treatment = Vec::with_capacity(config.n_rows);
    let mut outcome = Vec::with_capacity(config.n_rows);
    for (x, a, y) in chunks {
        data.extend(x);
        treatment.extend(a);
        outcome.extend(y);
    }
    Ok(SynthDataset {
        config: config.clone(),
        covariates: Matrix::new(config.n_rows, p, data)?,
        treatment,
        outcome,
        true_ate: oracle_ate(config, DEFAULT_ORACLE_DRAWS)?,
    })
}

/// `E_x[sigmoid(b0 + beta.x + tau) - sigmoid(b0 + beta.x)]` over fresh
/// covariate draws, with its Monte-Carlo standard error.
pub fn oracle_ate(config: &SynthConfig, n_mc: usize) -> Result<OracleEstimate> {
    config.validate()?;
    if n_mc < MIN_ORACLE_DRAWS {
        return Err(Error::InvalidSpec(format!(
            "oracle needs at least {MIN_ORACLE_DRAWS} draws, got {n_mc}"
        )));
    }
    let n_chunks = n_mc.div_ceil(ROWS_PER_CHUNK);
    let partials = par::map_range(n_chunks, |c| {
        let mut rng = seed::rng(seed::derive_indexed(config.seed, "oracle_ate", c as u64));
        let start = c * ROWS_PER_CHUNK;
        let end = (start + ROWS_PER_CHUNK).min(n_mc);
        let mut x = vec![0.0; config.p];
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in start..end {
            for v in x.iter_mut() {
                *v = rng.random::<f64>();
            }
            let z = config.outcome_logit(&x);
            let d = sigmoid(z + config.tau) - sigmoid(z);
            s += d;
            s2 += d * d;
        }
        (s, s2)
    });
    let (s, s2) = partials
        .into_iter()
        .fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
    let n = n_mc as f64;
    let value = s / n;
    let var = ((s2 - n * value * value) / (n - 1.0)).max(0.0);
    Ok(OracleEstimate {
        value,
        standard_error: (var / n).sqrt(),
        n_mc,
    })
}
