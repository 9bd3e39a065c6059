//! Typed in-memory tables, CSV ingestion against a declared schema, and
//! grouped descriptive summaries.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// How a column is typed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    /// Integer rating levels `0..=max`.
    Ordinal {
        max: u32,
    },
    Nominal {
        categories: Vec<String>,
    },
    BinaryTarget {
        positive_label: String,
        negative_label: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn numeric(name: &str) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind: ColumnKind::Numeric,
        }
    }

    pub fn ordinal(name: &str, max: u32) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind: ColumnKind::Ordinal { max },
        }
    }

    pub fn nominal(name: &str, categories: &[&str]) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind: ColumnKind::Nominal {
                categories: categories.iter().map(|c| c.to_string()).collect(),
            },
        }
    }

    pub fn target(name: &str, positive_label: &str, negative_label: &str) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind: ColumnKind::BinaryTarget {
                positive_label: positive_label.to_string(),
                negative_label: negative_label.to_string(),
            },
        }
    }

    pub fn is_numeric_like(&self) -> bool {
        matches!(self.kind, ColumnKind::Numeric | ColumnKind::Ordinal { .. })
    }
}

/// Checks schema invariants: unique names, valid ordinal and nominal
/// declarations, at most one binary target.
pub fn validate_schema(schema: &[ColumnSpec]) -> Result<()> {
    let mut seen = HashSet::new();
    let mut targets = 0;
    for col in schema {
        if !seen.insert(col.name.as_str()) {
            return Err(Error::Schema(format!("duplicate column name {:?}", col.name)));
        }
        match &col.kind {
            ColumnKind::Numeric => {}
            ColumnKind::Ordinal { max } => {
                if *max < 1 {
                    return Err(Error::Schema(format!(
                        "ordinal column {:?} must declare max >= 1",
                        col.name
                    )));
                }
            }
            ColumnKind::Nominal { categories } => {
                if categories.is_empty() {
                    return Err(Error::Schema(format!(
                        "nominal column {:?} has no categories",
                        col.name
                    )));
                }
                let distinct: HashSet<_> = categories.iter().collect();
                if distinct.len() != categories.len() {
                    return Err(Error::Schema(format!(
                        "nominal column {:?} repeats a category",
                        col.name
                    )));
                }
            }
            ColumnKind::BinaryTarget {
                positive_label,
                negative_label,
            } => {
                targets += 1;
                if positive_label == negative_label {
                    return Err(Error::Schema(format!(
                        "target {:?} uses the same label for both classes",
                        col.name
                    )));
                }
            }
        }
    }
    if targets > 1 {
        return Err(Error::Schema("more than one binary target column".into()));
    }
    Ok(())
}

/// Column of the public airline passenger satisfaction survey. Ratings use
/// 0 for "not applicable" and 1..5 otherwise.
pub fn airline_schema() -> Vec<ColumnSpec> {
    let mut schema = vec![
        ColumnSpec::nominal("Gender", &["Female", "Male"]),
        ColumnSpec::nominal("Customer Type", &["Loyal Customer", "disloyal Customer"]),
        ColumnSpec::numeric("Age"),
        ColumnSpec::nominal("Type of Travel", &["Business travel", "Personal Travel"]),
        ColumnSpec::nominal("Class", &["Business", "Eco", "Eco Plus"]),
        ColumnSpec::numeric("Flight Distance"),
    ];
    for rating in [
        "Inflight wifi service",
        "Departure/Arrival time convenient",
        "Ease of Online booking",
        "Gate location",
        "Food and drink",
        "Online boarding",
        "Seat comfort",
        "Inflight entertainment",
        "On-board service",
        "Leg room service",
        "Baggage handling",
        "Checkin service",
        "Inflight service",
        "Cleanliness",
    ] {
        schema.push(ColumnSpec::ordinal(rating, 5));
    }
    schema.push(ColumnSpec::numeric("Departure Delay in Minutes"));
    schema.push(ColumnSpec::numeric("Arrival Delay in Minutes"));
    schema.push(ColumnSpec::target(
        "satisfaction",
        "satisfied",
        "neutral or dissatisfied",
    ));
    schema
}

pub fn load_schema(path: &Path) -> Result<Vec<ColumnSpec>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let schema: Vec<ColumnSpec> = serde_json::from_reader(file)?;
    validate_schema(&schema)?;
    Ok(schema)
}

/// Per-column storage. Numeric and ordinal columns share `Numeric` storage;
/// `None` is the missing marker.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    Nominal(Vec<Option<String>>),
    Target(Vec<bool>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Nominal(v) => v.len(),
            Column::Target(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, indices: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(indices.iter().map(|&i| v[i]).collect()),
            Column::Nominal(v) => Column::Nominal(indices.iter().map(|&i| v[i].clone()).collect()),
            Column::Target(v) => Column::Target(indices.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Immutable typed table.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Vec<ColumnSpec>,
    columns: Vec<Column>,
    n_rows: usize,
}

impl Dataset {
    pub fn new(schema: Vec<ColumnSpec>, columns: Vec<Column>) -> Result<Self> {
        validate_schema(&schema)?;
        if schema.len() != columns.len() {
            return Err(Error::Schema(format!(
                "{} columns supplied for a schema of {}",
                columns.len(),
                schema.len()
            )));
        }
        let n_rows = columns.first().map_or(0, Column::len);
        for (spec, col) in schema.iter().zip(&columns) {
            if col.len() != n_rows {
                return Err(Error::Schema(format!(
                    "column {:?} has {} rows, expected {n_rows}",
                    spec.name,
                    col.len()
                )));
            }
            let storage_ok = matches!(
                (&spec.kind, col),
                (ColumnKind::Numeric, Column::Numeric(_))
                    | (ColumnKind::Ordinal { .. }, Column::Numeric(_))
                    | (ColumnKind::Nominal { .. }, Column::Nominal(_))
                    | (ColumnKind::BinaryTarget { .. }, Column::Target(_))
            );
            if !storage_ok {
                return Err(Error::Schema(format!(
                    "column {:?} storage does not match its declared kind",
                    spec.name
                )));
            }
            if let (ColumnKind::Ordinal { max }, Column::Numeric(values)) = (&spec.kind, col) {
                let max = f64::from(*max);
                if values.iter().flatten().any(|v| !(0.0..=max).contains(v)) {
                    return Err(Error::Schema(format!(
                        "ordinal column {:?} holds a value outside 0..={max}",
                        spec.name
                    )));
                }
            }
        }
        Ok(Dataset {
            schema,
            columns,
            n_rows,
        })
    }

    pub fn schema(&self) -> &[ColumnSpec] {
        &self.schema
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    pub fn spec(&self, name: &str) -> Option<&ColumnSpec> {
        self.schema.iter().find(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.column_index(name).map(|j| &self.columns[j])
    }

    /// Numeric or ordinal values of `name`.
    pub fn numeric(&self, name: &str) -> Option<&[Option<f64>]> {
        match self.column(name)? {
            Column::Numeric(v) => Some(v),
            _ => None,
        }
    }

    pub fn target(&self) -> Option<(&ColumnSpec, &[bool])> {
        self.schema
            .iter()
            .zip(&self.columns)
            .find_map(|(spec, col)| match col {
                Column::Target(v) => Some((spec, v.as_slice())),
                _ => None,
            })
    }

    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.select(indices)).collect(),
            n_rows: indices.len(),
        }
    }

    /// Returns a copy with column `j` replaced. Used by transformations that
    /// keep the schema.
    pub(crate) fn with_column(&self, j: usize, column: Column) -> Result<Dataset> {
        let mut columns = self.columns.clone();
        columns[j] = column;
        Dataset::new(self.schema.clone(), columns)
    }
}

pub fn load_csv(path: &Path, schema: &[ColumnSpec]) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Parses CSV text against `schema`. Columns absent from the schema are
/// dropped; empty or unparsable cells outside the target become missing.
/// Lines starting with `#` are skipped.
pub fn read_csv<R: Read>(reader: R, schema: &[ColumnSpec]) -> Result<Dataset> {
    validate_schema(schema)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let mut positions = Vec::with_capacity(schema.len());
    for spec in schema {
        match header.iter().position(|h| h == spec.name) {
            Some(p) => positions.push(p),
            None => {
                return Err(Error::Schema(format!(
                    "input header lacks declared column {:?}",
                    spec.name
                )))
            }
        }
    }
    let dropped = header.len() - schema.len();
    if dropped > 0 {
        log::info!("dropping {dropped} input column(s) not declared in the schema");
    }

    let mut columns: Vec<Column> = schema
        .iter()
        .map(|spec| match spec.kind {
            ColumnKind::Numeric | ColumnKind::Ordinal { .. } => Column::Numeric(Vec::new()),
            ColumnKind::Nominal { .. } => Column::Nominal(Vec::new()),
            ColumnKind::BinaryTarget { .. } => Column::Target(Vec::new()),
        })
        .collect();
    let mut invalid_cells = 0usize;

    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record?;
        for ((spec, &pos), column) in schema.iter().zip(&positions).zip(columns.iter_mut()) {
            let raw = record.get(pos).unwrap_or("");
            match (&spec.kind, column) {
                (ColumnKind::Numeric, Column::Numeric(values)) => {
                    let v = parse_number(raw);
                    if v.is_none() && !raw.is_empty() {
                        invalid_cells += 1;
                    }
                    values.push(v);
                }
                (ColumnKind::Ordinal { max }, Column::Numeric(values)) => {
                    let v =
                        parse_number(raw).filter(|v| v.fract() == 0.0 && *v >= 0.0 && *v <= f64::from(*max));
                    if v.is_none() && !raw.is_empty() {
                        invalid_cells += 1;
                    }
                    values.push(v);
                }
                (ColumnKind::Nominal { .. }, Column::Nominal(values)) => {
                    values.push((!raw.is_empty()).then(|| raw.to_string()));
                }
                (
                    ColumnKind::BinaryTarget {
                        positive_label,
                        negative_label,
                    },
                    Column::Target(values),
                ) => {
                    if raw == positive_label {
                        values.push(true);
                    } else if raw == negative_label {
                        values.push(false);
                    } else {
                        return Err(Error::Ingestion {
                            row,
                            message: format!(
                                "target {:?} has value {raw:?}, expected {positive_label:?} or {negative_label:?}",
                                spec.name
                            ),
                        });
                    }
                }
                _ => unreachable!("storage built from the schema"),
            }
        }
    }
    if invalid_cells > 0 {
        log::warn!("{invalid_cells} unparsable cell(s) treated as missing");
    }
    Dataset::new(schema.to_vec(), columns)
}

fn parse_number(raw: &str) -> Option<f64> {
    raw.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Writes `data` as CSV with a header row. Numbers use the shortest
/// representation that parses back to the same `f64`; missing cells are empty.
pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(data.schema.iter().map(|c| c.name.as_str()))?;
    let mut record = Vec::with_capacity(data.columns.len());
    for i in 0..data.n_rows {
        record.clear();
        for (spec, col) in data.schema.iter().zip(&data.columns) {
            record.push(match col {
                Column::Numeric(v) => v[i].map(|x| x.to_string()).unwrap_or_default(),
                Column::Nominal(v) => v[i].clone().unwrap_or_default(),
                Column::Target(v) => match &spec.kind {
                    ColumnKind::BinaryTarget {
                        positive_label,
                        negative_label,
                    } => {
                        if v[i] {
                            positive_label.clone()
                        } else {
                            negative_label.clone()
                        }
                    }
                    _ => unreachable!(),
                },
            });
        }
        wtr.write_record(&record)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub column: String,
    /// Observed (non-missing) cells.
    pub observed: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    /// Population variance.
    pub variance: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub count: usize,
    pub columns: Vec<ColumnStats>,
}

/// Pearson correlations over numeric and ordinal columns. Columns with zero
/// variance are listed in `undefined` and left out of `values`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub columns: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub undefined: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub group_column: String,
    pub n_rows: usize,
    pub groups: Vec<GroupSummary>,
    pub correlation: CorrelationMatrix,
}

pub const MISSING_GROUP: &str = "<missing>";

pub fn summarize(data: &Dataset, group_by: &str) -> Result<SummaryReport> {
    let j = data
        .column_index(group_by)
        .ok_or_else(|| Error::Argument(format!("unknown column {group_by:?}")))?;
    let spec = &data.schema[j];

    // Group label per row, in a fixed label order.
    let (labels, order): (Vec<String>, Vec<String>) = match (&spec.kind, &data.columns[j]) {
        (ColumnKind::Nominal { categories }, Column::Nominal(values)) => {
            let labels: Vec<String> = values
                .iter()
                .map(|v| v.clone().unwrap_or_else(|| MISSING_GROUP.to_string()))
                .collect();
            let mut order = categories.clone();
            let mut extra: Vec<String> = labels
                .iter()
                .filter(|l| !categories.contains(l) && l.as_str() != MISSING_GROUP)
                .cloned()
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            order.append(&mut extra);
            if labels.iter().any(|l| l == MISSING_GROUP) {
                order.push(MISSING_GROUP.to_string());
            }
            (labels, order)
        }
        (
            ColumnKind::BinaryTarget {
                positive_label,
                negative_label,
            },
            Column::Target(values),
        ) => (
            values
                .iter()
                .map(|&v| {
                    if v {
                        positive_label.clone()
                    } else {
                        negative_label.clone()
                    }
                })
                .collect(),
            vec![positive_label.clone(), negative_label.clone()],
        ),
        _ => {
            return Err(Error::Argument(format!(
                "cannot group by {group_by:?}: only nominal or binary target columns define groups"
            )))
        }
    };

    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        members.entry(l.as_str()).or_default().push(i);
    }

    let numeric: Vec<(&ColumnSpec, &[Option<f64>])> = data
        .schema
        .iter()
        .zip(&data.columns)
        .filter_map(|(s, c)| match c {
            Column::Numeric(v) if s.is_numeric_like() => Some((s, v.as_slice())),
            _ => None,
        })
        .collect();

    let groups = order
        .iter()
        .map(|label| {
            let rows = members.get(label.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            let columns = numeric
                .iter()
                .map(|(s, values)| {
                    let observed: Vec<f64> = rows.iter().filter_map(|&i| values[i]).collect();
                    column_stats(&s.name, &observed)
                })
                .collect();
            GroupSummary {
                label: label.clone(),
                count: rows.len(),
                columns,
            }
        })
        .collect();

    Ok(SummaryReport {
        group_column: group_by.to_string(),
        n_rows: data.n_rows,
        groups,
        correlation: correlation_matrix(&numeric),
    })
}

fn column_stats(name: &str, observed: &[f64]) -> ColumnStats {
    ColumnStats {
        column: name.to_string(),
        observed: observed.len(),
        mean: stats::mean(observed),
        median: stats::median(observed),
        variance: stats::variance(observed),
        min: observed.iter().copied().reduce(f64::min),
        max: observed.iter().copied().reduce(f64::max),
    }
}

fn correlation_matrix(numeric: &[(&ColumnSpec, &[Option<f64>])]) -> CorrelationMatrix {
    let mut kept = Vec::new();
    let mut undefined = Vec::new();
    for (spec, values) in numeric {
        let observed: Vec<f64> = values.iter().flatten().copied().collect();
        match stats::variance(&observed) {
            Some(v) if v > 0.0 => kept.push((spec.name.clone(), *values)),
            _ => undefined.push(spec.name.clone()),
        }
    }
    let k = kept.len();
    let mut values = vec![vec![None; k]; k];
    for a in 0..k {
        values[a][a] = Some(1.0);
        for b in a + 1..k {
            let r = stats::pearson_pairwise(kept[a].1, kept[b].1);
            values[a][b] = r;
            values[b][a] = r;
        }
    }
    CorrelationMatrix {
        columns: kept.into_iter().map(|(n, _)| n).collect(),
        values,
        undefined,
    }
}
