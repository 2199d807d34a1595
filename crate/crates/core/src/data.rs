//! Dataset ingestion: delimited text loading, one-hot encoding, the
//! covariate-shift domain split, and removal of related features.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Raw field values treated as missing.
pub const MISSING_MARKERS: [&str; 2] = ["?", ""];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Text(Vec<Option<String>>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, ColumnData::Numeric(_))
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            ColumnData::Numeric(v) => v[row].is_none(),
            ColumnData::Text(v) => v[row].is_none(),
        }
    }

    /// Textual form of a cell, used for one-hot categories and rule matching.
    pub fn text_at(&self, row: usize) -> Option<String> {
        match self {
            ColumnData::Numeric(v) => v[row].map(|x| x.to_string()),
            ColumnData::Text(v) => v[row].clone(),
        }
    }

    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Text(v) => ColumnData::Text(rows.iter().map(|&r| v[r].clone()).collect()),
        }
    }
}

/// Untyped table as read from disk; each column is typed by inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTable {
    column_names: Vec<String>,
    columns: Vec<ColumnData>,
    row_count: usize,
}

impl RawTable {
    pub fn new(column_names: Vec<String>, columns: Vec<ColumnData>) -> Result<Self> {
        if column_names.len() != columns.len() {
            return Err(Error::Dimension(format!(
                "{} names for {} columns",
                column_names.len(),
                columns.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &column_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateColumn(name.clone()));
            }
        }
        let row_count = columns.first().map_or(0, ColumnData::len);
        if let Some((i, c)) = columns.iter().enumerate().find(|(_, c)| c.len() != row_count) {
            return Err(Error::Dimension(format!(
                "column `{}` has {} rows, expected {row_count}",
                column_names[i],
                c.len()
            )));
        }
        Ok(RawTable {
            column_names,
            columns,
            row_count,
        })
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn column(&self, name: &str) -> Result<&ColumnData> {
        self.column_names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Values of a numeric column with no missing entries.
    pub fn numeric_values(&self, name: &str) -> Result<Vec<f64>> {
        match self.column(name)? {
            ColumnData::Numeric(v) => v
                .iter()
                .enumerate()
                .map(|(row, x)| {
                    x.ok_or_else(|| {
                        Error::InvalidArgument(format!("missing value in `{name}` at row {row}"))
                    })
                })
                .collect(),
            ColumnData::Text(_) => Err(Error::NotNumeric(name.to_string())),
        }
    }

    /// Drops every row with a missing value in any of `names`; returns the
    /// filtered table and the number of rows removed.
    pub fn drop_missing(&self, names: &[&str]) -> Result<(RawTable, usize)> {
        let cols = names
            .iter()
            .map(|n| self.column(n))
            .collect::<Result<Vec<_>>>()?;
        let keep: Vec<usize> = (0..self.row_count)
            .filter(|&r| cols.iter().all(|c| !c.is_missing(r)))
            .collect();
        let dropped = self.row_count - keep.len();
        let table = RawTable {
            column_names: self.column_names.clone(),
            columns: self.columns.iter().map(|c| c.select(&keep)).collect(),
            row_count: keep.len(),
        };
        Ok((table, dropped))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub has_header: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            delimiter: b',',
            has_header: true,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<RawTable> {
    load_csv_with(
        path,
        CsvOptions {
            has_header,
            ..CsvOptions::default()
        },
    )
}

pub fn load_csv_with(path: impl AsRef<Path>, options: CsvOptions) -> Result<RawTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);

    let mut header: Option<Vec<String>> = None;
    let mut raw_rows: Vec<Vec<String>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let fields: Vec<String> = record.iter().map(str::to_string).collect();
        if fields.len() == 1 && fields[0].is_empty() {
            continue;
        }
        if i == 0 && options.has_header {
            header = Some(fields);
            continue;
        }
        let expected = header
            .as_ref()
            .map(Vec::len)
            .or_else(|| raw_rows.first().map(Vec::len))
            .unwrap_or(fields.len());
        if fields.len() != expected {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                line: record.position().map_or(i as u64 + 1, |p| p.line()),
                expected,
                found: fields.len(),
            });
        }
        raw_rows.push(fields);
    }

    let width = match (&header, raw_rows.first()) {
        (Some(h), _) => h.len(),
        (None, Some(r)) => r.len(),
        (None, None) => 0,
    };
    if width == 0 {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let names = header.unwrap_or_else(|| (0..width).map(|c| format!("c{c}")).collect());

    let columns = (0..width)
        .map(|c| infer_column(raw_rows.iter().map(|row| row[c].as_str())))
        .collect();
    RawTable::new(names, columns)
}

fn is_missing(field: &str) -> bool {
    MISSING_MARKERS.contains(&field)
}

fn infer_column<'a>(fields: impl Iterator<Item = &'a str> + Clone) -> ColumnData {
    let numeric = fields
        .clone()
        .filter(|f| !is_missing(f))
        .all(|f| f.parse::<f64>().is_ok_and(f64::is_finite));
    if numeric {
        ColumnData::Numeric(
            fields
                .map(|f| if is_missing(f) { None } else { f.parse().ok() })
                .collect(),
        )
    } else {
        ColumnData::Text(
            fields
                .map(|f| (!is_missing(f)).then(|| f.to_string()))
                .collect(),
        )
    }
}

/// Maps a raw column value to a binary outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BinaryRule {
    /// 1 iff the value's text is one of `values` (numeric cells also match by value).
    OneOf { values: Vec<String> },
    /// 1 iff the numeric value is `>= threshold`.
    AtLeast { threshold: f64 },
    /// 1 iff the numeric value is at or above the column median.
    AtLeastMedian,
    /// Numeric value must already be 0 or 1.
    Identity,
}

impl BinaryRule {
    fn apply(&self, name: &str, column: &ColumnData) -> Result<Vec<u8>> {
        let missing = |row: usize| {
            Error::InvalidArgument(format!("missing value in `{name}` at row {row}"))
        };
        match self {
            BinaryRule::OneOf { values } => {
                let numeric_targets: Vec<f64> =
                    values.iter().filter_map(|v| v.parse().ok()).collect();
                (0..column.len())
                    .map(|row| {
                        let hit = match column {
                            ColumnData::Text(v) => {
                                let s = v[row].as_deref().ok_or_else(|| missing(row))?;
                                values.iter().any(|t| t == s)
                            }
                            ColumnData::Numeric(v) => {
                                let x = v[row].ok_or_else(|| missing(row))?;
                                numeric_targets.contains(&x)
                            }
                        };
                        Ok(u8::from(hit))
                    })
                    .collect()
            }
            BinaryRule::AtLeast { threshold } => numeric_rule(name, column, |_| *threshold),
            BinaryRule::AtLeastMedian => numeric_rule(name, column, median),
            BinaryRule::Identity => {
                let ColumnData::Numeric(v) = column else {
                    return Err(Error::NotNumeric(name.to_string()));
                };
                v.iter()
                    .enumerate()
                    .map(|(row, x)| {
                        let x = x.ok_or_else(|| missing(row))?;
                        if x == 0.0 {
                            Ok(0)
                        } else if x == 1.0 {
                            Ok(1)
                        } else {
                            Err(Error::RuleOutOfRange {
                                column: name.to_string(),
                                value: x.to_string(),
                            })
                        }
                    })
                    .collect()
            }
        }
    }
}

fn numeric_rule(
    name: &str,
    column: &ColumnData,
    threshold: impl FnOnce(&[f64]) -> f64,
) -> Result<Vec<u8>> {
    let ColumnData::Numeric(v) = column else {
        return Err(Error::NotNumeric(name.to_string()));
    };
    let values: Vec<f64> = v
        .iter()
        .enumerate()
        .map(|(row, x)| {
            x.ok_or_else(|| Error::InvalidArgument(format!("missing value in `{name}` at row {row}")))
        })
        .collect::<Result<_>>()?;
    let t = threshold(&values);
    Ok(values.iter().map(|&x| u8::from(x >= t)).collect())
}

/// Median of a nonempty slice; even counts average the two middle order statistics.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// How a raw table becomes model inputs, labels, protected attribute and
/// related-feature registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingSpec {
    pub numeric_columns: Vec<String>,
    pub categorical_columns: Vec<String>,
    pub label_column: String,
    pub label_rule: BinaryRule,
    pub protected_column: String,
    pub protected_rule: BinaryRule,
    pub related_features: Vec<String>,
    pub shift_column: String,
}

impl EncodingSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: EncodingSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn is_feature(&self, name: &str) -> bool {
        self.numeric_columns.iter().any(|c| c == name)
            || self.categorical_columns.iter().any(|c| c == name)
    }

    pub fn validate(&self) -> Result<()> {
        let roles = [&self.label_column, &self.protected_column, &self.shift_column];
        if roles[0] == roles[1] || roles[0] == roles[2] || roles[1] == roles[2] {
            return Err(Error::InvalidSpec(
                "label, protected and shift columns must be distinct".into(),
            ));
        }
        let mut seen = HashSet::new();
        for c in self.numeric_columns.iter().chain(&self.categorical_columns) {
            if !seen.insert(c) {
                return Err(Error::InvalidSpec(format!("feature `{c}` listed twice")));
            }
        }
        if self.is_feature(&self.protected_column) {
            return Err(Error::InvalidSpec(format!(
                "protected column `{}` must not be a model input",
                self.protected_column
            )));
        }
        if self.is_feature(&self.label_column) {
            return Err(Error::InvalidSpec(format!(
                "label column `{}` must not be a model input",
                self.label_column
            )));
        }
        if let Some(r) = self.related_features.iter().find(|r| !self.is_feature(r)) {
            return Err(Error::InvalidSpec(format!(
                "related feature `{r}` is not a numeric or categorical input"
            )));
        }
        Ok(())
    }

    /// Every column the spec reads.
    pub fn referenced_columns(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .numeric_columns
            .iter()
            .chain(&self.categorical_columns)
            .map(String::as_str)
            .collect();
        for c in [&self.label_column, &self.protected_column, &self.shift_column] {
            if !out.contains(&c.as_str()) {
                out.push(c);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Indicator { value: String },
}

/// Provenance of one encoded column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub source: String,
    pub kind: FeatureKind,
}

/// Encoded columns derived from one related feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelatedGroup {
    pub feature: String,
    pub columns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDataset {
    pub features: Matrix,
    pub labels: Vec<u8>,
    pub protected: Vec<u8>,
    pub feature_map: Vec<FeatureColumn>,
    pub related_indices: Vec<RelatedGroup>,
    /// Row position in the encoded (post-missing-drop) table.
    pub row_ids: Vec<usize>,
}

impl TabularDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels_f64(&self) -> Vec<f64> {
        self.labels.iter().map(|&y| f64::from(y)).collect()
    }

    /// All encoded related columns, flattened in group order.
    pub fn related_columns(&self) -> Vec<usize> {
        self.related_indices
            .iter()
            .flat_map(|g| g.columns.iter().copied())
            .collect()
    }

    pub fn numeric_feature_indices(&self) -> Vec<usize> {
        self.feature_map
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind == FeatureKind::Numeric)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> TabularDataset {
        TabularDataset {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            protected: rows.iter().map(|&r| self.protected[r]).collect(),
            feature_map: self.feature_map.clone(),
            related_indices: self.related_indices.clone(),
            row_ids: rows.iter().map(|&r| self.row_ids[r]).collect(),
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        let n = self.features.rows();
        if self.labels.len() != n || self.protected.len() != n || self.row_ids.len() != n {
            return Err(Error::Dimension(format!(
                "{n} feature rows, {} labels, {} protected, {} row ids",
                self.labels.len(),
                self.protected.len(),
                self.row_ids.len()
            )));
        }
        if self.feature_map.len() != self.features.cols() {
            return Err(Error::Dimension("feature map does not match columns".into()));
        }
        if !self.features.is_finite() {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        let mut seen = HashSet::new();
        for c in self.related_columns() {
            if c >= self.dim() || !seen.insert(c) {
                return Err(Error::InvalidArgument(format!(
                    "related column {c} is out of range or shared between groups"
                )));
            }
        }
        Ok(())
    }
}

/// Encodes a table: numerics pass through, categoricals become one-hot
/// indicators (values from the whole table, lexicographic order).
pub fn encode(table: &RawTable, spec: &EncodingSpec) -> Result<TabularDataset> {
    spec.validate()?;
    for c in spec.referenced_columns() {
        table.column(c)?;
    }
    let n = table.row_count();

    let mut feature_map = Vec::new();
    let mut blocks: Vec<Vec<f64>> = Vec::new();
    for name in table.column_names() {
        let is_numeric = spec.numeric_columns.contains(name);
        let is_categorical = spec.categorical_columns.contains(name);
        if !is_numeric && !is_categorical {
            continue;
        }
        let column = table.column(name)?;
        if is_numeric {
            let ColumnData::Numeric(values) = column else {
                return Err(Error::NotNumeric(name.clone()));
            };
            let values = values
                .iter()
                .enumerate()
                .map(|(row, v)| {
                    v.ok_or_else(|| {
                        Error::InvalidArgument(format!("missing value in `{name}` at row {row}"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            feature_map.push(FeatureColumn {
                source: name.clone(),
                kind: FeatureKind::Numeric,
            });
            blocks.push(values);
        } else {
            let cells = (0..n)
                .map(|row| {
                    column.text_at(row).ok_or_else(|| {
                        Error::InvalidArgument(format!("missing value in `{name}` at row {row}"))
                    })
                })
                .collect::<Result<Vec<String>>>()?;
            let categories: BTreeSet<&str> = cells.iter().map(String::as_str).collect();
            for value in categories {
                feature_map.push(FeatureColumn {
                    source: name.clone(),
                    kind: FeatureKind::Indicator {
                        value: value.to_string(),
                    },
                });
                blocks.push(cells.iter().map(|c| f64::from(u8::from(c == value))).collect());
            }
        }
    }

    let d = blocks.len();
    let mut features = Matrix::zeros(n, d);
    for (c, block) in blocks.iter().enumerate() {
        for (r, &v) in block.iter().enumerate() {
            features.set(r, c, v);
        }
    }

    let labels = spec
        .label_rule
        .apply(&spec.label_column, table.column(&spec.label_column)?)?;
    let protected = spec
        .protected_rule
        .apply(&spec.protected_column, table.column(&spec.protected_column)?)?;

    let related_indices = spec
        .related_features
        .iter()
        .map(|name| RelatedGroup {
            feature: name.clone(),
            columns: feature_map
                .iter()
                .enumerate()
                .filter(|(_, f)| &f.source == name)
                .map(|(i, _)| i)
                .collect(),
        })
        .collect();

    let dataset = TabularDataset {
        features,
        labels,
        protected,
        feature_map,
        related_indices,
        row_ids: (0..n).collect(),
    };
    dataset.check_invariants()?;
    Ok(dataset)
}

/// Loads a delimited file, drops rows missing any spec-referenced value and
/// encodes the remainder. Returns the filtered raw table alongside the encoding.
pub fn load_and_encode(
    path: impl AsRef<Path>,
    options: CsvOptions,
    spec: &EncodingSpec,
) -> Result<(RawTable, TabularDataset)> {
    let path = path.as_ref();
    let table = load_csv_with(path, options)?;
    let (table, dropped) = table.drop_missing(&spec.referenced_columns())?;
    info!(
        "{}: kept {} rows, dropped {dropped} with missing values",
        path.display(),
        table.row_count()
    );
    let dataset = encode(&table, spec)?;
    Ok((table, dataset))
}

/// Drops every encoded column that belongs to a related-feature group.
pub fn drop_related(dataset: &TabularDataset) -> TabularDataset {
    let removed: HashSet<usize> = dataset.related_columns().into_iter().collect();
    if removed.is_empty() {
        return dataset.clone();
    }
    let keep: Vec<usize> = (0..dataset.dim()).filter(|c| !removed.contains(c)).collect();
    TabularDataset {
        features: dataset.features.select_cols(&keep),
        labels: dataset.labels.clone(),
        protected: dataset.protected.clone(),
        feature_map: keep.iter().map(|&c| dataset.feature_map[c].clone()).collect(),
        related_indices: Vec::new(),
        row_ids: dataset.row_ids.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub column: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSplit {
    pub source_train: TabularDataset,
    pub target_validation: TabularDataset,
    pub target_test: TabularDataset,
    pub shift_threshold: f64,
    pub standardization_stats: Vec<ColumnStats>,
    pub warnings: Vec<String>,
}

impl DomainSplit {
    pub fn drop_related(&self) -> DomainSplit {
        let kept: Vec<usize> = {
            let removed: HashSet<usize> = self.source_train.related_columns().into_iter().collect();
            (0..self.source_train.dim())
                .filter(|c| !removed.contains(c))
                .collect()
        };
        let stats = self
            .standardization_stats
            .iter()
            .filter_map(|s| {
                kept.iter().position(|&c| c == s.column).map(|column| ColumnStats {
                    column,
                    ..s.clone()
                })
            })
            .collect();
        DomainSplit {
            source_train: drop_related(&self.source_train),
            target_validation: drop_related(&self.target_validation),
            target_test: drop_related(&self.target_test),
            shift_threshold: self.shift_threshold,
            standardization_stats: stats,
            warnings: self.warnings.clone(),
        }
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Splits by the shift column named in `spec`.
pub fn shift_split(
    dataset: &TabularDataset,
    table: &RawTable,
    spec: &EncodingSpec,
    target_split_seed: u64,
) -> Result<DomainSplit> {
    let shift = table.numeric_values(&spec.shift_column)?;
    split_by_shift(dataset, &shift, target_split_seed)
}

/// Source = rows strictly below the median of `shift_values`; the remaining
/// target rows are shuffled and halved into validation and test. Numeric
/// columns are standardized with source-train statistics.
pub fn split_by_shift(
    dataset: &TabularDataset,
    shift_values: &[f64],
    target_split_seed: u64,
) -> Result<DomainSplit> {
    if shift_values.len() != dataset.len() {
        return Err(Error::Dimension(format!(
            "{} shift values for {} rows",
            shift_values.len(),
            dataset.len()
        )));
    }
    if dataset.is_empty() {
        return Err(Error::DegenerateSplit("dataset is empty".into()));
    }
    if shift_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("shift column".into()));
    }
    let threshold = median(shift_values);
    let (source, mut target): (Vec<usize>, Vec<usize>) =
        (0..dataset.len()).partition(|&r| shift_values[r] < threshold);
    if source.is_empty() || target.is_empty() {
        return Err(Error::DegenerateSplit(format!(
            "median {threshold} leaves {} source and {} target rows",
            source.len(),
            target.len()
        )));
    }
    if target.len() < 2 {
        return Err(Error::DegenerateSplit(
            "target domain needs at least two rows".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(target_split_seed);
    target.shuffle(&mut rng);
    let n_val = target.len().div_ceil(2);
    let (val, test) = target.split_at(n_val);

    let mut source_train = dataset.select_rows(&source);
    let mut target_validation = dataset.select_rows(val);
    let mut target_test = dataset.select_rows(test);

    let mut stats = Vec::new();
    let mut warnings = Vec::new();
    for c in dataset.numeric_feature_indices() {
        let col = source_train.features.column(c);
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let mut std = var.sqrt();
        if std <= 1e-12 * mean.abs().max(1.0) {
            let msg = format!(
                "column `{}` has zero variance in source_train; centered only",
                dataset.feature_map[c].source
            );
            warn!("{msg}");
            warnings.push(msg);
            std = 1.0;
        }
        for part in [&mut source_train, &mut target_validation, &mut target_test] {
            for r in 0..part.len() {
                let v = part.features.get(r, c);
                part.features.set(r, c, (v - mean) / std);
            }
        }
        stats.push(ColumnStats { column: c, mean, std });
    }

    Ok(DomainSplit {
        source_train,
        target_validation,
        target_test,
        shift_threshold: threshold,
        standardization_stats: stats,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn text(values: &[&str]) -> ColumnData {
        ColumnData::Text(values.iter().map(|v| Some(v.to_string())).collect())
    }

    fn numeric(values: &[f64]) -> ColumnData {
        ColumnData::Numeric(values.iter().map(|&v| Some(v)).collect())
    }

    fn toy_spec() -> EncodingSpec {
        EncodingSpec {
            numeric_columns: vec!["hours".into(), "age".into()],
            categorical_columns: vec!["rel".into()],
            label_column: "y".into(),
            label_rule: BinaryRule::OneOf {
                values: vec![">50K".into()],
            },
            protected_column: "sex".into(),
            protected_rule: BinaryRule::OneOf {
                values: vec!["M".into()],
            },
            related_features: vec!["rel".into(), "hours".into()],
            shift_column: "age".into(),
        }
    }

    fn toy_table() -> RawTable {
        RawTable::new(
            vec!["age".into(), "rel".into(), "hours".into(), "sex".into(), "y".into()],
            vec![
                numeric(&[20.0, 30.0, 40.0, 50.0, 60.0, 70.0]),
                text(&["b", "a", "b", "c", "a", "b"]),
                numeric(&[40.0, 35.0, 50.0, 45.0, 20.0, 60.0]),
                text(&["M", "F", "M", "F", "M", "F"]),
                text(&[">50K", "<=50K", ">50K", "<=50K", "<=50K", ">50K"]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn load_infers_column_types() {
        let f = write_tmp("age,sex\n20,M\n30,F\n40,M\n");
        let t = load_csv(f.path(), true).unwrap();
        assert_eq!(t.row_count(), 3);
        assert!(t.column("age").unwrap().is_numeric());
        assert!(!t.column("sex").unwrap().is_numeric());
    }

    #[test]
    fn load_ragged_row_is_error() {
        let f = write_tmp("age,sex\n20\n");
        assert!(matches!(load_csv(f.path(), true), Err(Error::RaggedRow { .. })));
    }

    #[test]
    fn load_empty_and_missing_file() {
        let f = write_tmp("");
        assert!(matches!(load_csv(f.path(), true), Err(Error::EmptyFile(_))));
        assert!(matches!(
            load_csv("/nonexistent/file.csv", true),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn load_without_header_and_missing_markers() {
        let f = write_tmp("1, a\n?, b\n3,\n");
        let t = load_csv(f.path(), false).unwrap();
        assert_eq!(t.column_names(), &["c0".to_string(), "c1".to_string()]);
        assert_eq!(
            t.column("c0").unwrap(),
            &ColumnData::Numeric(vec![Some(1.0), None, Some(3.0)])
        );
        let (kept, dropped) = t.drop_missing(&["c0", "c1"]).unwrap();
        assert_eq!((kept.row_count(), dropped), (1, 2));
    }

    #[test]
    fn load_custom_delimiter() {
        let f = write_tmp("a;b\n1;x\n");
        let t = load_csv_with(
            f.path(),
            CsvOptions {
                delimiter: b';',
                has_header: true,
            },
        )
        .unwrap();
        assert_eq!(t.row_count(), 1);
    }

    #[test]
    fn one_hot_lexicographic() {
        let table = RawTable::new(
            vec!["c".into(), "p".into(), "y".into(), "s".into()],
            vec![
                text(&["a", "b", "a"]),
                text(&["x", "y", "x"]),
                numeric(&[0.0, 1.0, 1.0]),
                numeric(&[1.0, 2.0, 3.0]),
            ],
        )
        .unwrap();
        let spec = EncodingSpec {
            numeric_columns: vec![],
            categorical_columns: vec!["c".into()],
            label_column: "y".into(),
            label_rule: BinaryRule::Identity,
            protected_column: "p".into(),
            protected_rule: BinaryRule::OneOf {
                values: vec!["x".into()],
            },
            related_features: vec![],
            shift_column: "s".into(),
        };
        let ds = encode(&table, &spec).unwrap();
        assert_eq!(ds.features.as_slice(), &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        assert_eq!(ds.labels, vec![0, 1, 1]);
        assert_eq!(ds.protected, vec![1, 0, 1]);
    }

    #[test]
    fn encode_registry_and_protected_exclusion() {
        let ds = encode(&toy_table(), &toy_spec()).unwrap();
        // age, rel=a, rel=b, rel=c, hours
        assert_eq!(ds.dim(), 5);
        assert!(ds.feature_map.iter().all(|f| f.source != "sex"));
        assert_eq!(ds.related_indices.len(), 2);
        assert_eq!(ds.related_indices[0].columns, vec![1, 2, 3]);
        assert_eq!(ds.related_indices[1].columns, vec![4]);
        assert_eq!(ds.protected, vec![1, 0, 1, 0, 1, 0]);
        assert_eq!(ds.labels, vec![1, 0, 1, 0, 0, 1]);
    }

    #[test]
    fn encode_errors() {
        let mut spec = toy_spec();
        spec.label_column = "nope".into();
        assert!(matches!(
            encode(&toy_table(), &spec),
            Err(Error::MissingColumn(_))
        ));

        let mut spec = toy_spec();
        spec.label_column = "hours".into();
        spec.numeric_columns = vec!["age".into()];
        spec.related_features = vec!["rel".into()];
        spec.label_rule = BinaryRule::Identity;
        assert!(matches!(
            encode(&toy_table(), &spec),
            Err(Error::RuleOutOfRange { .. })
        ));

        let mut spec = toy_spec();
        spec.categorical_columns.push("sex".into());
        assert!(matches!(spec.validate(), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn spec_json_keys() {
        let json = r#"{
            "numeric_columns": ["age"], "categorical_columns": [],
            "label_column": "y", "label_rule": {"kind": "at_least_median"},
            "protected_column": "sex", "protected_rule": {"kind": "one_of", "values": ["M"]},
            "related_features": ["age"], "shift_column": "inc"
        }"#;
        let spec = EncodingSpec::from_json(json).unwrap();
        assert_eq!(spec.label_rule, BinaryRule::AtLeastMedian);
        let bad = json.replace("\"shift_column\"", "\"extra\": 1, \"shift_column\"");
        assert!(EncodingSpec::from_json(&bad).is_err());
    }

    #[test]
    fn median_rule_and_ties() {
        assert_eq!(median(&[20.0, 30.0, 40.0, 50.0]), 35.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        let col = numeric(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(
            BinaryRule::AtLeastMedian.apply("x", &col).unwrap(),
            vec![0, 0, 1, 1]
        );
    }

    #[test]
    fn split_by_median() {
        let ds = encode(&toy_table(), &toy_spec()).unwrap();
        let split = split_by_shift(&ds, &[20.0, 30.0, 40.0, 50.0, 60.0, 70.0], 7).unwrap();
        assert_eq!(split.shift_threshold, 45.0);
        assert_eq!(split.source_train.row_ids, vec![0, 1, 2]);
        let mut target: Vec<usize> = split
            .target_validation
            .row_ids
            .iter()
            .chain(&split.target_test.row_ids)
            .copied()
            .collect();
        target.sort();
        assert_eq!(target, vec![3, 4, 5]);
        assert_eq!(split.target_validation.len(), 2);
        assert_eq!(split.target_test.len(), 1);
    }

    #[test]
    fn split_four_values() {
        let table = RawTable::new(
            vec!["s".into(), "p".into(), "y".into()],
            vec![
                numeric(&[40.0, 20.0, 50.0, 30.0]),
                numeric(&[0.0, 1.0, 0.0, 1.0]),
                numeric(&[0.0, 1.0, 1.0, 0.0]),
            ],
        )
        .unwrap();
        let spec = EncodingSpec {
            numeric_columns: vec!["s".into()],
            categorical_columns: vec![],
            label_column: "y".into(),
            label_rule: BinaryRule::Identity,
            protected_column: "p".into(),
            protected_rule: BinaryRule::Identity,
            related_features: vec![],
            shift_column: "s".into(),
        };
        let ds = encode(&table, &spec).unwrap();
        let split = shift_split(&ds, &table, &spec, 0).unwrap();
        assert_eq!(split.shift_threshold, 35.0);
        assert_eq!(split.source_train.row_ids, vec![1, 3]);
    }

    #[test]
    fn degenerate_split() {
        let ds = encode(&toy_table(), &toy_spec()).unwrap();
        assert!(matches!(
            split_by_shift(&ds, &[5.0; 6], 0),
            Err(Error::DegenerateSplit(_))
        ));
    }

    #[test]
    fn zero_variance_column_centered_with_warning() {
        let table = RawTable::new(
            vec!["s".into(), "k".into(), "p".into(), "y".into()],
            vec![
                numeric(&[1.0, 2.0, 3.0, 4.0]),
                numeric(&[7.0, 7.0, 1.0, 9.0]),
                numeric(&[0.0, 1.0, 0.0, 1.0]),
                numeric(&[0.0, 1.0, 1.0, 0.0]),
            ],
        )
        .unwrap();
        let spec = EncodingSpec {
            numeric_columns: vec!["s".into(), "k".into()],
            categorical_columns: vec![],
            label_column: "y".into(),
            label_rule: BinaryRule::Identity,
            protected_column: "p".into(),
            protected_rule: BinaryRule::Identity,
            related_features: vec![],
            shift_column: "s".into(),
        };
        let ds = encode(&table, &spec).unwrap();
        let split = shift_split(&ds, &table, &spec, 0).unwrap();
        assert_eq!(split.warnings.len(), 1);
        assert_eq!(split.source_train.features.column(1), vec![0.0, 0.0]);
        let target_k: Vec<f64> = split
            .target_validation
            .features
            .column(1)
            .into_iter()
            .chain(split.target_test.features.column(1))
            .collect();
        assert!(target_k.contains(&-6.0) && target_k.contains(&2.0));
    }

    #[test]
    fn drop_related_columns() {
        let ds = encode(&toy_table(), &toy_spec()).unwrap();
        let dropped = drop_related(&ds);
        assert_eq!(dropped.dim(), ds.dim() - 4);
        assert!(dropped.related_indices.is_empty());
        assert!(dropped
            .feature_map
            .iter()
            .all(|f| f.source != "rel" && f.source != "hours"));
        assert_eq!(dropped.labels, ds.labels);
        assert_eq!(dropped.protected, ds.protected);
        assert_eq!(drop_related(&dropped), dropped);
    }
}
