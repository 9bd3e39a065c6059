//! Config-driven batch runs.
//!
//! [`run`] goes from a raw CSV to a report bundle: ingest, deduplicate,
//! split, preprocess, tune each configured model, attribute, then estimate
//! each configured treatment effect on all rows. [`run_causal`] and
//! [`simulate`] expose the causal stage and the synthetic generator on
//! their own.
//!
//! Every CSV in a bundle starts with a `# seed=<seed> sha256=<hash>` line,
//! where the hash covers the remaining bytes. JSON files are wrapped in an
//! envelope `{format_version, seed, content_sha256, content}` whose hash
//! covers the compact serialization of `content`. Nothing time- or
//! machine-dependent is written, so identical inputs give identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::attribution::{self, ImportanceTable, ShapleyMode};
use crate::causal::{self, BalanceRecord, CausalReport, ClipBounds};
use crate::error::{Error, Result, StageExt};
use crate::evaluation::{self, CvReport, Grid};
use crate::learners::{Family, HyperParam, ModelSpec, TrainedModel};
use crate::matrix::Matrix;
use crate::preprocess::{self, FeatureMatrix, FittedPipeline, PreprocessReport};
use crate::seed;
use crate::synth::{self, OracleEstimate, SynthConfig};
use crate::tabular::{self, ColumnKind, ColumnSpec, Dataset, SummaryReport};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Subdirectory receiving partial outputs of a failed run.
pub const QUARANTINE_DIR: &str = "quarantine";

const STAGING_DIR: &str = ".staging";

fn default_test_fraction() -> f64 {
    0.2
}
fn default_k_folds() -> usize {
    5
}
fn default_collinearity_threshold() -> f64 {
    preprocess::DEFAULT_COLLINEARITY_THRESHOLD
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_true() -> bool {
    true
}
fn default_fractions() -> Vec<f64> {
    vec![0.1, 0.25, 0.5, 0.75, 1.0]
}
fn default_permutations() -> usize {
    100
}
fn default_background_rows() -> usize {
    100
}
fn default_instance_rows() -> usize {
    500
}
fn default_treatment_threshold() -> u32 {
    causal::DEFAULT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub param: HyperParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Used in output file names; defaults to the family name.
    #[serde(default)]
    pub name: Option<String>,
    /// Base hyperparameters. The seed is always re-derived from the run seed.
    #[serde(flatten)]
    pub spec: ModelSpec,
    /// Without a grid the family's primary hyperparameter is fixed at its
    /// base value.
    #[serde(default)]
    pub grid: Option<GridConfig>,
}

impl ModelConfig {
    pub fn name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.spec.family().as_str().to_string())
    }

    fn grid(&self, seed: u64) -> Result<Grid> {
        let base = self.spec.clone().with_seed(seed);
        match &self.grid {
            Some(g) => Ok(Grid::new(base, g.param, g.values.clone())),
            None => {
                let param = self.spec.family().primary_param();
                let value = self.spec.param_value(param).ok_or_else(|| {
                    Error::Config(format!("model {:?} needs an explicit grid", self.name()))
                })?;
                Ok(Grid::new(base, param, vec![value]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningCurveConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    /// Model names to trace; all models when absent.
    #[serde(default)]
    pub models: Option<Vec<String>>,
}

impl Default for LearningCurveConfig {
    fn default() -> Self {
        LearningCurveConfig {
            enabled: true,
            fractions: default_fractions(),
            models: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Model to explain; defaults to the first tree-based model.
    #[serde(default)]
    pub model: Option<String>,
    /// Defaults to exhaustive for at most 10 features, sampled otherwise.
    #[serde(default)]
    pub mode: Option<ShapleyMode>,
    #[serde(default = "default_permutations")]
    pub n_permutations: usize,
    #[serde(default = "default_background_rows")]
    pub background_rows: usize,
    #[serde(default = "default_instance_rows")]
    pub instance_rows: usize,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig {
            enabled: true,
            model: None,
            mode: None,
            n_permutations: default_permutations(),
            background_rows: default_background_rows(),
            instance_rows: default_instance_rows(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PropensityConfig {
    Family(Family),
    Spec(ModelSpec),
}

impl Default for PropensityConfig {
    fn default() -> Self {
        PropensityConfig::Family(Family::LogisticRegression)
    }
}

impl PropensityConfig {
    fn spec(&self, seed: u64) -> Result<ModelSpec> {
        match self {
            PropensityConfig::Family(f) => causal::default_propensity_spec(*f, seed),
            PropensityConfig::Spec(s) => Ok(s.clone().with_seed(seed)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreatmentConfig {
    /// Used in output file names; defaults to the column name.
    #[serde(default)]
    pub name: Option<String>,
    pub column: String,
    #[serde(default = "default_treatment_threshold")]
    pub threshold: u32,
    #[serde(default)]
    pub propensity: PropensityConfig,
    #[serde(default)]
    pub clip: Option<ClipBounds>,
}

impl TreatmentConfig {
    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.column.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: PathBuf,
    /// JSON column list; the built-in airline schema when absent.
    #[serde(default)]
    pub schema: Option<PathBuf>,
    pub seed: u64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_k_folds")]
    pub k_folds: usize,
    #[serde(default = "default_collinearity_threshold")]
    pub collinearity_threshold: f64,
    #[serde(default)]
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub learning_curve: LearningCurveConfig,
    #[serde(default)]
    pub attribution: AttributionConfig,
    #[serde(default)]
    pub treatments: Vec<TreatmentConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

/// Causal stage alone, on every row of an input table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CausalConfig {
    pub input: PathBuf,
    #[serde(default)]
    pub schema: Option<PathBuf>,
    /// `pipeline.json` from an earlier run; otherwise a pipeline is fitted
    /// on all rows of `input`.
    #[serde(default)]
    pub pipeline: Option<PathBuf>,
    pub seed: u64,
    pub treatments: Vec<TreatmentConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub n_rows: usize,
    pub p: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub tau: f64,
    pub intercept_treatment: f64,
    pub intercept_outcome: f64,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl SimulateConfig {
    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_rows: self.n_rows,
            p: self.p,
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
            tau: self.tau,
            intercept_treatment: self.intercept_treatment,
            intercept_outcome: self.intercept_outcome,
            seed: self.seed,
        }
    }
}

/// Reads a JSON config, resolving relative paths inside it against the
/// config file's directory. Any failure is a config error.
pub fn load_config<T: serde::de::DeserializeOwned + HasPaths>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut config: T =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    config.resolve_paths(base);
    Ok(config)
}

/// Configs whose relative paths are anchored at the config file.
pub trait HasPaths {
    fn resolve_paths(&mut self, base: &Path);
}

fn anchor(path: &mut PathBuf, base: &Path) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

impl HasPaths for RunConfig {
    fn resolve_paths(&mut self, base: &Path) {
        anchor(&mut self.input, base);
        if let Some(s) = self.schema.as_mut() {
            anchor(s, base);
        }
        anchor(&mut self.output_dir, base);
    }
}

impl HasPaths for CausalConfig {
    fn resolve_paths(&mut self, base: &Path) {
        anchor(&mut self.input, base);
        if let Some(s) = self.schema.as_mut() {
            anchor(s, base);
        }
        if let Some(p) = self.pipeline.as_mut() {
            anchor(p, base);
        }
        anchor(&mut self.output_dir, base);
    }
}

impl HasPaths for SimulateConfig {
    fn resolve_paths(&mut self, base: &Path) {
        anchor(&mut self.output_dir, base);
    }
}

/// Lowercase ASCII alphanumerics with single underscores elsewhere.
pub fn slug(name: &str) -> String {
    let mut out = String::new();
    for ch in name.chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

fn resolve_schema(path: Option<&Path>) -> Result<Vec<ColumnSpec>> {
    match path {
        None => Ok(tabular::airline_schema()),
        Some(p) => tabular::load_schema(p).map_err(|e| Error::Config(format!("schema {}: {e}", p.display()))),
    }
}

fn validate_treatments(treatments: &[TreatmentConfig], schema: &[ColumnSpec]) -> Result<()> {
    let mut names = Vec::new();
    for t in treatments {
        let spec = schema
            .iter()
            .find(|s| s.name == t.column)
            .ok_or_else(|| Error::Config(format!("treatment column {:?} not in schema", t.column)))?;
        let ColumnKind::Ordinal { max } = spec.kind else {
            return Err(Error::Config(format!(
                "treatment column {:?} is not ordinal",
                t.column
            )));
        };
        if t.threshold < 1 || t.threshold > max {
            return Err(Error::Config(format!(
                "treatment threshold {} outside 1..={max} for {:?}",
                t.threshold, t.column
            )));
        }
        let spec = t.propensity.spec(0).map_err(|e| Error::Config(e.to_string()))?;
        if !matches!(
            spec.family(),
            Family::LogisticRegression | Family::RandomForest | Family::GradientBoosting
        ) {
            return Err(Error::Config(format!(
                "{} is not a supported propensity family",
                spec.family()
            )));
        }
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(c) = t.clip {
            if !(c.min < c.max && c.min > 0.0 && c.max < 1.0) {
                return Err(Error::Config(format!(
                    "clip bounds [{}, {}] must satisfy 0 < min < max < 1",
                    c.min, c.max
                )));
            }
        }
        let name = slug(&t.name());
        if name.is_empty() || names.contains(&name) {
            return Err(Error::Config(format!(
                "treatment name {:?} is empty or repeated",
                t.name()
            )));
        }
        names.push(name);
    }
    Ok(())
}

impl RunConfig {
    /// Checks everything that can be checked without reading the input.
    pub fn validate(&self, schema: &[ColumnSpec]) -> Result<()> {
        tabular::validate_schema(schema).map_err(|e| Error::Config(e.to_string()))?;
        if self.k_folds < 2 {
            return Err(Error::Config(format!(
                "k_folds must be at least 2, got {}",
                self.k_folds
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if !(self.collinearity_threshold > 0.0 && self.collinearity_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "collinearity_threshold must lie in (0, 1], got {}",
                self.collinearity_threshold
            )));
        }
        if !schema
            .iter()
            .any(|s| matches!(s.kind, ColumnKind::BinaryTarget { .. }))
        {
            return Err(Error::Config("schema declares no binary target".into()));
        }
        let mut names = Vec::new();
        for m in &self.models {
            let name = slug(&m.name());
            if name.is_empty() || names.contains(&name) {
                return Err(Error::Config(format!(
                    "model name {:?} is empty or repeated",
                    m.name()
                )));
            }
            names.push(name);
            m.grid(0)?
                .candidates()
                .map_err(|e| Error::Config(format!("model {:?}: {e}", m.name())))?;
        }
        let lc = &self.learning_curve;
        if lc.enabled {
            if lc.fractions.is_empty() {
                return Err(Error::Config("learning_curve.fractions is empty".into()));
            }
            if let Some(bad) = lc.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
                return Err(Error::Config(format!(
                    "learning-curve fraction {bad} outside (0, 1]"
                )));
            }
            for m in lc.models.iter().flatten() {
                if !self.models.iter().any(|c| &c.name() == m) {
                    return Err(Error::Config(format!("learning_curve names unknown model {m:?}")));
                }
            }
        }
        let at = &self.attribution;
        if at.enabled {
            if let Some(m) = &at.model {
                if !self.models.iter().any(|c| &c.name() == m) {
                    return Err(Error::Config(format!("attribution names unknown model {m:?}")));
                }
            }
            if at.n_permutations == 0 || at.background_rows == 0 || at.instance_rows == 0 {
                return Err(Error::Config(
                    "attribution counts (n_permutations, background_rows, instance_rows) must be positive"
                        .into(),
                ));
            }
        }
        validate_treatments(&self.treatments, schema)
    }
}

impl CausalConfig {
    pub fn validate(&self, schema: &[ColumnSpec]) -> Result<()> {
        tabular::validate_schema(schema).map_err(|e| Error::Config(e.to_string()))?;
        if self.treatments.is_empty() {
            return Err(Error::Config("no treatments configured".into()));
        }
        validate_treatments(&self.treatments, schema)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Output files held in memory until the run finishes.
#[derive(Debug, Default)]
pub struct Bundle {
    seed: u64,
    files: Vec<(String, Vec<u8>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub format_version: u32,
    pub seed: u64,
    pub content_sha256: String,
    pub content: Value,
}

impl Bundle {
    pub fn new(seed: u64) -> Self {
        Bundle {
            seed,
            files: Vec::new(),
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.files.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
    }

    fn push(&mut self, name: String, bytes: Vec<u8>) {
        debug_assert!(self.get(&name).is_none(), "duplicate output {name}");
        self.files.push((name, bytes));
    }

    pub fn add_csv(&mut self, name: &str, body: &str) {
        let mut out = format!("# seed={} sha256={}\n", self.seed, sha256_hex(body.as_bytes()));
        out.push_str(body);
        self.push(name.to_string(), out.into_bytes());
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, content: &T) -> Result<()> {
        let content = serde_json::to_value(content)?;
        let envelope = Envelope {
            format_version: REPORT_FORMAT_VERSION,
            seed: self.seed,
            content_sha256: sha256_hex(serde_json::to_string(&content)?.as_bytes()),
            content,
        };
        let mut text = serde_json::to_string_pretty(&envelope)?;
        text.push('\n');
        self.push(name.to_string(), text.into_bytes());
        Ok(())
    }

    fn write_all(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Writes into a staging directory inside `out_dir`, then moves every
    /// file into place.
    pub fn commit(&self, out_dir: &Path) -> Result<()> {
        let staging = out_dir.join(STAGING_DIR);
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        self.write_all(&staging)?;
        for (name, _) in &self.files {
            let to = out_dir.join(name);
            fs::rename(staging.join(name), &to).map_err(|e| Error::io(&to, e))?;
        }
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        Ok(())
    }

    /// Writes whatever was produced, plus the error text, under
    /// `out_dir/quarantine`.
    pub fn quarantine(&self, out_dir: &Path, error: &Error) -> Result<PathBuf> {
        let dir = out_dir.join(QUARANTINE_DIR);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        self.write_all(&dir)?;
        let path = dir.join("error.txt");
        fs::write(&path, format!("{error}\n")).map_err(|e| Error::io(&path, e))?;
        Ok(dir)
    }
}

/// Parses a bundle CSV, checking its header hash. Returns the seed and
/// the body.
pub fn read_hashed_csv(text: &str) -> Result<(u64, &str)> {
    let (first, body) = text
        .split_once('\n')
        .ok_or_else(|| Error::Data("empty bundle file".into()))?;
    let bad = || Error::Data(format!("malformed header line {first:?}"));
    let rest = first.strip_prefix("# seed=").ok_or_else(bad)?;
    let (seed, hash) = rest.split_once(" sha256=").ok_or_else(bad)?;
    let seed: u64 = seed.parse().map_err(|_| bad())?;
    if sha256_hex(body.as_bytes()) != hash {
        return Err(Error::Data("content hash mismatch".into()));
    }
    Ok((seed, body))
}

pub fn read_envelope(text: &str) -> Result<Envelope> {
    let envelope: Envelope = serde_json::from_str(text)?;
    if sha256_hex(serde_json::to_string(&envelope.content)?.as_bytes()) != envelope.content_sha256 {
        return Err(Error::Data("content hash mismatch".into()));
    }
    Ok(envelope)
}

/// Checks the hash of every file a report lists. Returns the file names.
pub fn verify_bundle(dir: &Path) -> Result<Vec<String>> {
    let report_path = dir.join("report.json");
    let text = fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?;
    let report = read_envelope(&text)?;
    let files: Vec<String> = serde_json::from_value(
        report
            .content
            .get("files")
            .cloned()
            .ok_or_else(|| Error::Data("report lists no files".into()))?,
    )?;
    for name in &files {
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let checked = if name.ends_with(".json") {
            read_envelope(&text).map(|e| e.seed)
        } else {
            read_hashed_csv(&text).map(|(s, _)| s)
        };
        let seed = checked.map_err(|e| Error::Data(format!("{name}: {e}")))?;
        if seed != report.seed {
            return Err(Error::Data(format!(
                "{name} carries seed {seed}, report has {}",
                report.seed
            )));
        }
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub name: String,
    pub family: Family,
    pub features: Vec<String>,
    pub cv: CvReport,
    pub holdout_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GiniResult {
    pub model: String,
    pub importance: ImportanceTable,
    pub ranking: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyResult {
    pub model: String,
    pub mode: ShapleyMode,
    pub n_permutations: usize,
    pub background_rows: usize,
    pub instance_rows: usize,
    pub importance: ImportanceTable,
    pub ranking: Vec<String>,
    /// Largest `|sum(contributions) - (instance - baseline)|` over instances.
    pub max_efficiency_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentResult {
    pub name: String,
    pub column: String,
    pub threshold: u32,
    pub propensity_model: ModelSpec,
    pub propensity_auc: f64,
    pub clip: Option<ClipBounds>,
    pub covariates: Vec<String>,
    pub effects: CausalReport,
    pub max_smd_unweighted: f64,
    pub max_smd_weighted: f64,
    pub balance: Vec<BalanceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub input_sha256: String,
    pub rows_read: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub test_fraction: f64,
    pub k_folds: usize,
    pub test_cells_clamped: usize,
    pub preprocess: PreprocessReport,
    pub models: Vec<ModelResult>,
    pub gini_importance: Vec<GiniResult>,
    pub shapley: Option<ShapleyResult>,
    pub treatments: Vec<TreatmentResult>,
    /// Every other file in the bundle.
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalRunReport {
    pub seed: u64,
    pub input_sha256: String,
    pub rows: usize,
    pub treatments: Vec<TreatmentResult>,
    pub files: Vec<String>,
}

/// Where a finished run put its files.
#[derive(Debug, Clone)]
pub struct RunOutcome<R> {
    pub out_dir: PathBuf,
    pub report: R,
    pub files: Vec<String>,
}

fn read_input(path: &Path, schema: &[ColumnSpec]) -> Result<(Dataset, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let data = tabular::read_csv(bytes.as_slice(), schema)?;
    Ok((data, sha256_hex(&bytes)))
}

/// Seeded sorted subsample of `take` indices out of `0..n` (all when
/// `take >= n`).
fn subsample(n: usize, take: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if take < n {
        idx.shuffle(&mut seed::rng(seed));
        idx.truncate(take);
        idx.sort_unstable();
    }
    idx
}

fn finish<R: Serialize>(
    mut bundle: Bundle,
    out_dir: &Path,
    produce: impl FnOnce(&mut Bundle) -> Result<R>,
) -> Result<RunOutcome<R>> {
    match produce(&mut bundle) {
        Ok(report) => {
            bundle.commit(out_dir).stage("report")?;
            info!("wrote {} files to {}", bundle.files.len(), out_dir.display());
            Ok(RunOutcome {
                out_dir: out_dir.to_path_buf(),
                report,
                files: bundle.names(),
            })
        }
        Err(e) => {
            if let Ok(dir) = bundle.quarantine(out_dir, &e) {
                log::error!("partial outputs quarantined in {}", dir.display());
            }
            Err(e)
        }
    }
}

/// Full pipeline; see the module docs for the bundle format.
pub fn run(config: &RunConfig) -> Result<RunOutcome<RunReport>> {
    let schema = resolve_schema(config.schema.as_deref()).stage("config")?;
    config.validate(&schema).stage("config")?;
    finish(Bundle::new(config.seed), &config.output_dir, |bundle| {
        execute_run(config, &schema, bundle)
    })
}

fn execute_run(config: &RunConfig, schema: &[ColumnSpec], bundle: &mut Bundle) -> Result<RunReport> {
    let seed = config.seed;
    info!("reading {}", config.input.display());
    let (raw, input_sha256) = read_input(&config.input, schema).stage("ingest")?;
    let rows_read = raw.n_rows();
    let (data, duplicates) = preprocess::deduplicate(&raw);
    info!("{rows_read} rows read, {duplicates} duplicates removed");

    let (train_idx, test_idx) =
        preprocess::split_indices(data.n_rows(), config.test_fraction, seed::derive(seed, "split"))
            .stage("preprocess")?;
    let train_ds = data.select_rows(&train_idx);
    let test_ds = data.select_rows(&test_idx);
    let (pipeline, mut prep_report) =
        FittedPipeline::fit(&train_ds, config.collinearity_threshold).stage("preprocess")?;
    prep_report.duplicates_removed = duplicates;
    let (train, _) = pipeline.transform(&train_ds).stage("preprocess")?;
    let (test, test_cells_clamped) = pipeline.transform(&test_ds).stage("preprocess")?;
    bundle.add_json("pipeline.json", &pipeline)?;

    let fold_seed = seed::derive(seed, "folds");
    let mut models = Vec::new();
    let mut fitted: Vec<(String, TrainedModel, FeatureMatrix, FeatureMatrix)> = Vec::new();
    let mut metrics =
        String::from("model,family,param,selected_value,cv_accuracy,holdout_accuracy,holdout_auc\n");
    for (i, m) in config.models.iter().enumerate() {
        let name = m.name();
        let file = slug(&name);
        let family = m.spec.family();
        let (tr, te) = if family == Family::LogisticRegression {
            (
                train.without_features(&pipeline.dropped_for_linear),
                test.without_features(&pipeline.dropped_for_linear),
            )
        } else {
            (train.clone(), test.clone())
        };
        info!(
            "tuning {name} on {} rows x {} features",
            tr.n_rows(),
            tr.n_features()
        );
        let grid = m.grid(seed::derive_indexed(seed, "model", i as u64))?;
        let mut outcome = evaluation::grid_search(&grid, &tr, config.k_folds, fold_seed).stage("train")?;
        let holdout = outcome.score_holdout(&te).stage("evaluate")?;
        let scores = outcome.model.predict_scores(&te.rows).stage("evaluate")?;
        let roc = evaluation::roc_curve(&scores, &te.target).stage("evaluate")?;
        bundle.add_csv(&format!("roc_{file}.csv"), &roc.to_csv());
        let lc = &config.learning_curve;
        if lc.enabled && lc.models.as_ref().is_none_or(|names| names.contains(&name)) {
            let curve = evaluation::learning_curve(
                &outcome.model.spec,
                &tr,
                &lc.fractions,
                config.k_folds,
                fold_seed,
            )
            .stage("evaluate")?;
            bundle.add_csv(&format!("learning_curve_{file}.csv"), &curve.to_csv());
        }
        bundle.add_json(&format!("model_{file}.json"), &outcome.model)?;
        metrics.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            attribution::csv_field(&name),
            family,
            grid.param.as_str(),
            outcome.report.selected_value,
            outcome.report.cv_accuracy,
            holdout,
            roc.auc
        ));
        models.push(ModelResult {
            name: name.clone(),
            family,
            features: tr.feature_names.clone(),
            cv: outcome.report.clone(),
            holdout_auc: roc.auc,
        });
        fitted.push((name, outcome.model, tr, te));
    }
    bundle.add_csv("metrics.csv", &metrics);

    let mut gini = Vec::new();
    for (name, model, _, _) in &fitted {
        if model.family().is_tree_based() {
            let importance = attribution::gini_importance(model).stage("attribution")?;
            bundle.add_csv(&format!("importance_{}.csv", slug(name)), &importance.to_csv());
            gini.push(GiniResult {
                model: name.clone(),
                ranking: importance.ranking(),
                importance,
            });
        }
    }
    let shapley = if config.attribution.enabled && !fitted.is_empty() {
        Some(shapley_stage(&config.attribution, &fitted, &test_idx, seed, bundle).stage("attribution")?)
    } else {
        None
    };

    let all = pipeline.transform(&data).stage("causal")?.0;
    let imputed = pipeline.impute(&data).stage("causal")?;
    let treatments = causal_stage(&config.treatments, &imputed, &all, seed, bundle)?;

    let report = RunReport {
        seed,
        input_sha256,
        rows_read,
        n_train: train.n_rows(),
        n_test: test.n_rows(),
        test_fraction: config.test_fraction,
        k_folds: config.k_folds,
        test_cells_clamped,
        preprocess: prep_report,
        models,
        gini_importance: gini,
        shapley,
        treatments,
        files: bundle.names(),
    };
    bundle.add_json("report.json", &report)?;
    Ok(report)
}

fn shapley_stage(
    config: &AttributionConfig,
    fitted: &[(String, TrainedModel, FeatureMatrix, FeatureMatrix)],
    test_rows: &[usize],
    seed: u64,
    bundle: &mut Bundle,
) -> Result<ShapleyResult> {
    let (name, model, train, test) = match &config.model {
        Some(m) => fitted.iter().find(|f| &f.0 == m).expect("validated model name"),
        None => fitted
            .iter()
            .find(|f| f.1.family().is_tree_based())
            .unwrap_or(&fitted[0]),
    };
    let mode = config.mode.unwrap_or(if model.n_features() <= 10 {
        ShapleyMode::Exhaustive
    } else {
        ShapleyMode::Sampled
    });
    let background = train.rows.select_rows(&subsample(
        train.n_rows(),
        config.background_rows,
        seed::derive(seed, "shapley_background"),
    ));
    let chosen = subsample(
        test.n_rows(),
        config.instance_rows,
        seed::derive(seed, "shapley_instances"),
    );
    let instances: Matrix = test.rows.select_rows(&chosen);
    info!(
        "Shapley values for {name}: {} instances, {} background rows, {mode:?}",
        instances.n_rows(),
        background.n_rows()
    );
    let (importance, vectors) = attribution::shapley_summary(
        model,
        &instances,
        &background,
        config.n_permutations,
        seed::derive(seed, "shapley"),
        mode,
    )?;
    let max_efficiency_gap = vectors
        .iter()
        .map(|v| (v.contributions.iter().sum::<f64>() - (v.instance_value - v.baseline_value)).abs())
        .fold(0.0, f64::max);
    let rows: Vec<usize> = chosen.iter().map(|&i| test_rows[i]).collect();
    bundle.add_csv(
        "attributions.csv",
        &attribution::attributions_to_csv(&model.feature_names, &rows, &vectors),
    );
    bundle.add_csv("shapley_importance.csv", &importance.to_csv());
    Ok(ShapleyResult {
        model: name.clone(),
        mode,
        n_permutations: config.n_permutations,
        background_rows: background.n_rows(),
        instance_rows: instances.n_rows(),
        ranking: importance.ranking(),
        importance,
        max_efficiency_gap,
    })
}

/// Dichotomizes on `imputed` (unscaled ratings) and adjusts for every
/// feature of `features` not derived from the treatment column.
fn causal_stage(
    treatments: &[TreatmentConfig],
    imputed: &Dataset,
    features: &FeatureMatrix,
    seed: u64,
    bundle: &mut Bundle,
) -> Result<Vec<TreatmentResult>> {
    let mut out = Vec::new();
    for (t_index, t) in treatments.iter().enumerate() {
        let name = t.name();
        let file = slug(&name);
        let assignment = causal::dichotomize(imputed, &t.column, t.threshold).stage("causal")?;
        let keep: Vec<usize> = (0..features.n_features())
            .filter(|&j| !causal::derived_from(&features.feature_names[j], &t.column))
            .collect();
        let names: Vec<String> = keep.iter().map(|&j| features.feature_names[j].clone()).collect();
        let covariates = features.rows.select_columns(&keep);
        let spec = t
            .propensity
            .spec(seed::derive_indexed(seed, "propensity", t_index as u64))?;
        info!(
            "treatment {name}: {} treated, {} control, {} covariates",
            assignment.n_treated,
            assignment.n_control,
            names.len()
        );
        let propensity = causal::fit_propensity(&spec, &covariates, &names, &assignment).stage("causal")?;
        let weights =
            causal::ipw_weights(&propensity.scores, &assignment.assigned, t.clip).stage("causal")?;
        let effects =
            causal::estimate_effects(&features.target, &assignment.assigned, &weights).stage("causal")?;
        let balance =
            causal::smd_balance(&covariates, &names, &assignment.assigned, Some(&weights)).stage("causal")?;
        let auc = evaluation::roc_curve(&propensity.scores, &assignment.assigned)
            .stage("causal")?
            .auc;
        bundle.add_csv(&format!("love_{file}.csv"), &causal::balance_to_csv(&balance));
        bundle.add_csv(
            &format!("propensity_{file}.csv"),
            &causal::propensity_to_csv(&assignment.assigned, &propensity.scores, &weights),
        );
        info!(
            "treatment {name}: ate {:.4}, marginal {:.4}",
            effects.ate, effects.marginal_effect
        );
        out.push(TreatmentResult {
            name,
            column: t.column.clone(),
            threshold: t.threshold,
            propensity_model: spec,
            propensity_auc: auc,
            clip: t.clip,
            covariates: names,
            effects,
            max_smd_unweighted: balance.iter().map(|b| b.smd_unweighted).fold(0.0, f64::max),
            max_smd_weighted: balance.iter().map(|b| b.smd_weighted).fold(0.0, f64::max),
            balance,
        });
    }
    Ok(out)
}

fn load_pipeline(path: &Path) -> Result<FittedPipeline> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match read_envelope(&text) {
        Ok(env) => FittedPipeline::from_json(&env.content.to_string()),
        Err(_) => FittedPipeline::from_json(&text),
    }
}

/// Causal stage only, on every row of the input.
pub fn run_causal(config: &CausalConfig) -> Result<RunOutcome<CausalRunReport>> {
    let schema = resolve_schema(config.schema.as_deref()).stage("config")?;
    config.validate(&schema).stage("config")?;
    finish(Bundle::new(config.seed), &config.output_dir, |bundle| {
        let (data, input_sha256) = read_input(&config.input, &schema).stage("ingest")?;
        let pipeline = match &config.pipeline {
            Some(p) => load_pipeline(p).stage("preprocess")?,
            None => {
                FittedPipeline::fit(&data, preprocess::DEFAULT_COLLINEARITY_THRESHOLD)
                    .stage("preprocess")?
                    .0
            }
        };
        let features = pipeline.transform(&data).stage("preprocess")?.0;
        let imputed = pipeline.impute(&data).stage("preprocess")?;
        let treatments = causal_stage(&config.treatments, &imputed, &features, config.seed, bundle)?;
        let report = CausalRunReport {
            seed: config.seed,
            input_sha256,
            rows: data.n_rows(),
            treatments,
            files: bundle.names(),
        };
        bundle.add_json("report.json", &report)?;
        Ok(report)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub config: SynthConfig,
    pub true_ate: OracleEstimate,
    pub n_treated: usize,
    pub marginal_effect: f64,
}

/// Writes `data.csv`, `schema.json`, `truth.json` and a ready-to-use
/// `run.json` for the synthetic dataset.
pub fn simulate(config: &SimulateConfig) -> Result<RunOutcome<Truth>> {
    let synth_config = config.synth();
    synth_config
        .validate()
        .map_err(|e| Error::Config(e.to_string()))
        .stage("config")?;
    finish(Bundle::new(config.seed), &config.output_dir, |bundle| {
        let data = synth::generate(&synth_config).stage("simulate")?;
        let dataset = data.to_dataset().stage("simulate")?;
        let mut csv = Vec::new();
        tabular::write_csv(&dataset, &mut csv).stage("simulate")?;
        bundle.add_csv("data.csv", &String::from_utf8(csv).expect("csv output is utf-8"));
        let mut schema = serde_json::to_string_pretty(&data.schema())?;
        schema.push('\n');
        bundle.push("schema.json".into(), schema.into_bytes());

        let n_treated = data.treatment.iter().filter(|&&a| a == 1).count();
        let mean = |group: u8| {
            let ys: Vec<f64> = data
                .treatment
                .iter()
                .zip(&data.outcome)
                .filter(|(a, _)| **a == group)
                .map(|(_, y)| f64::from(*y))
                .collect();
            crate::stats::mean(&ys).unwrap_or(f64::NAN)
        };
        let truth = Truth {
            config: synth_config.clone(),
            true_ate: data.true_ate.clone(),
            n_treated,
            marginal_effect: mean(1) - mean(0),
        };
        bundle.add_json("truth.json", &truth)?;

        let run = serde_json::json!({
            "input": "data.csv",
            "schema": "schema.json",
            "seed": config.seed,
            "output_dir": "run",
            "models": [
                {"family": "decision_tree", "max_depth": 6,
                 "grid": {"param": "max_depth", "values": [2, 4, 6, 8]}},
                {"family": "logistic_regression", "c_inverse_regularization": 1.0,
                 "grid": {"param": "c_inverse_regularization", "values": [0.01, 1.0, 100.0]}}
            ],
            "treatments": [
                {"column": synth::TREATMENT_COLUMN, "threshold": 4, "propensity": "logistic_regression"}
            ]
        });
        let mut run = serde_json::to_string_pretty(&run)?;
        run.push('\n');
        bundle.push("run.json".into(), run.into_bytes());
        Ok(truth)
    })
}

/// Per-group column summaries of an input table.
pub fn inspect(input: &Path, schema: Option<&Path>, group_by: Option<&str>) -> Result<SummaryReport> {
    let schema = resolve_schema(schema).stage("config")?;
    let (data, _) = read_input(input, &schema).stage("ingest")?;
    let group = match group_by {
        Some(g) => g.to_string(),
        None => data
            .target()
            .map(|(s, _)| s.name.clone())
            .ok_or_else(|| Error::Config("no target column to group by".into()))?,
    };
    tabular::summarize(&data, &group).stage("inspect")
}
