//! Tabular data model: schemas, categorical encoding, quantile binning,
//! CSV ingestion and deterministic train/test splitting.
//!
//! Audits operate on fully categorical data. Numeric columns are binned at
//! ingestion time by a [`BinningRule`] carried in the schema, so that a
//! dataset in memory is always a matrix of small integer codes plus the
//! schema that maps codes back to human-readable labels.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// The role an attribute plays in an audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// An ordinary model input.
    Feature,
    /// The protected attribute the audit conditions on. Binary; code 1 is
    /// the protected group.
    Protected,
    /// The ground-truth outcome. Binary; code 1 is the positive outcome.
    Target,
    /// The model's prediction. Binary; code 1 is the positive prediction.
    Prediction,
}

/// Quantile-based binning for one numeric column.
///
/// `cuts` are strictly increasing; a value `x` falls in bin
/// `#{c in cuts : c < x}`, so values equal to a cut go to the lower bin
/// and the rule always produces `cuts.len() + 1` bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningRule {
    pub cuts: Vec<f64>,
}

impl BinningRule {
    pub fn new(cuts: Vec<f64>) -> Result<BinningRule> {
        if cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Schema(format!(
                "bin cuts must be strictly increasing, got {cuts:?}"
            )));
        }
        if cuts.iter().any(|c| !c.is_finite()) {
            return Err(Error::Schema("bin cuts must be finite".into()));
        }
        Ok(BinningRule { cuts })
    }

    /// Number of bins this rule produces.
    pub fn bins(&self) -> usize {
        self.cuts.len() + 1
    }

    /// Bin index for a value.
    pub fn bin(&self, x: f64) -> u32 {
        self.cuts.partition_point(|&c| c < x) as u32
    }

    /// Human-readable interval labels, one per bin.
    pub fn labels(&self) -> Vec<String> {
        if self.cuts.is_empty() {
            return vec!["all".to_string()];
        }
        let mut labels = Vec::with_capacity(self.bins());
        labels.push(format!("<={}", self.cuts[0]));
        for w in self.cuts.windows(2) {
            labels.push(format!("({},{}]", w[0], w[1]));
        }
        labels.push(format!(">{}", self.cuts[self.cuts.len() - 1]));
        labels
    }
}

/// Build a quantile binning rule from observed values.
///
/// Cut points are the `i/n_bins` empirical quantiles (linear interpolation
/// between order statistics) for `i = 1..n_bins`. Duplicate cut points are
/// collapsed, so the effective number of bins can be smaller than
/// requested; a constant column degenerates to a single bin and reports a
/// warning.
pub fn discretize(values: &[f64], n_bins: usize) -> Result<(BinningRule, Vec<String>)> {
    if n_bins < 2 {
        return Err(Error::Data(format!("n_bins must be at least 2, got {n_bins}")));
    }
    if values.is_empty() {
        return Err(Error::Data("cannot discretize an empty column".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("cannot discretize non-finite values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let max = sorted[sorted.len() - 1];
    let mut cuts = Vec::with_capacity(n_bins - 1);
    for i in 1..n_bins {
        cuts.push(quantile_sorted(&sorted, i as f64 / n_bins as f64));
    }
    cuts.dedup();
    // A cut at (or above) the maximum can never separate values, since a
    // value equal to a cut goes to the lower bin; it would only strand an
    // empty top bin.
    cuts.retain(|&c| c < max);
    let mut warnings = Vec::new();
    if cuts.len() + 1 < n_bins {
        warnings.push(format!(
            "requested {n_bins} bins but only {} are distinct",
            cuts.len() + 1
        ));
    }
    if cuts.is_empty() {
        if sorted[0] == max {
            warnings.push("column is constant; using a single bin".to_string());
        } else {
            warnings.push("quantile cuts are degenerate; using a single bin".to_string());
        }
    }
    Ok((BinningRule::new(cuts)?, warnings))
}

/// Empirical quantile with linear interpolation between order statistics
/// (the common "type 7" definition). `sorted` must be ascending.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One column of a schema: a name, a role, the categorical labels (code
/// `i` maps to `labels[i]`) and, for numeric columns, the binning rule
/// that produced the categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub role: Role,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cuts: Option<Vec<f64>>,
}

impl AttributeSpec {
    /// A categorical attribute with explicit labels.
    pub fn categorical(name: &str, role: Role, labels: &[&str]) -> AttributeSpec {
        AttributeSpec {
            name: name.to_string(),
            role,
            labels: labels.iter().map(|s| s.to_string()).collect(),
            cuts: None,
        }
    }

    /// A numeric attribute binned by the given rule.
    pub fn binned(name: &str, role: Role, rule: &BinningRule) -> AttributeSpec {
        AttributeSpec {
            name: name.to_string(),
            role,
            labels: rule.labels(),
            cuts: Some(rule.cuts.clone()),
        }
    }

    /// Number of categories.
    pub fn cardinality(&self) -> usize {
        self.labels.len()
    }

    fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Schema("attribute name must not be empty".into()));
        }
        if self.labels.is_empty() {
            return Err(Error::Schema(format!("attribute {} has no labels", self.name)));
        }
        let mut seen = HashMap::new();
        for (i, label) in self.labels.iter().enumerate() {
            if let Some(j) = seen.insert(label.as_str(), i) {
                return Err(Error::Schema(format!(
                    "attribute {} repeats label {label:?} at positions {j} and {i}",
                    self.name
                )));
            }
        }
        if let Some(cuts) = &self.cuts {
            let rule = BinningRule::new(cuts.clone())?;
            if rule.bins() != self.labels.len() {
                return Err(Error::Schema(format!(
                    "attribute {}: {} cuts imply {} bins but {} labels given",
                    self.name,
                    cuts.len(),
                    rule.bins(),
                    self.labels.len()
                )));
            }
        }
        match self.role {
            Role::Protected | Role::Target | Role::Prediction => {
                if self.labels.len() != 2 {
                    return Err(Error::Schema(format!(
                        "attribute {} has role {:?} and must be binary, found {} labels",
                        self.name,
                        self.role,
                        self.labels.len()
                    )));
                }
            }
            Role::Feature => {}
        }
        Ok(())
    }
}

/// Column layout of a dataset: attribute order fixes the column order of
/// every dataset, CSV file and released table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub attributes: Vec<AttributeSpec>,
}

impl Schema {
    pub fn new(attributes: Vec<AttributeSpec>) -> Result<Schema> {
        let schema = Schema { attributes };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        let mut names = HashMap::new();
        for (i, attr) in self.attributes.iter().enumerate() {
            attr.validate()?;
            if let Some(j) = names.insert(attr.name.as_str(), i) {
                return Err(Error::Schema(format!(
                    "duplicate attribute name {:?} at columns {j} and {i}",
                    attr.name
                )));
            }
        }
        for role in [Role::Protected, Role::Target, Role::Prediction] {
            let count = self.attributes.iter().filter(|a| a.role == role).count();
            if count != 1 {
                return Err(Error::Schema(format!(
                    "schema must contain exactly one {role:?} attribute, found {count}"
                )));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.attributes.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::Schema(format!("no attribute named {name:?}")))
    }

    fn role_index(&self, role: Role) -> usize {
        // validate() guarantees exactly one.
        self.attributes.iter().position(|a| a.role == role).unwrap()
    }

    pub fn protected_index(&self) -> usize {
        self.role_index(Role::Protected)
    }

    pub fn target_index(&self) -> usize {
        self.role_index(Role::Target)
    }

    pub fn prediction_index(&self) -> usize {
        self.role_index(Role::Prediction)
    }

    /// Column indices with [`Role::Feature`], in schema order.
    pub fn feature_indices(&self) -> Vec<usize> {
        self.attributes
            .iter()
            .enumerate()
            .filter(|(_, a)| a.role == Role::Feature)
            .map(|(i, _)| i)
            .collect()
    }

    /// Encode a label to its code for the given column.
    pub fn encode(&self, column: usize, label: &str) -> Result<u32> {
        let attr = &self.attributes[column];
        attr.labels
            .iter()
            .position(|l| l == label)
            .map(|p| p as u32)
            .ok_or_else(|| {
                Error::Data(format!(
                    "unknown value {label:?} for attribute {}",
                    attr.name
                ))
            })
    }

    /// Decode a code back to its label for the given column.
    pub fn decode(&self, column: usize, code: u32) -> Result<&str> {
        let attr = &self.attributes[column];
        attr.labels
            .get(code as usize)
            .map(|s| s.as_str())
            .ok_or_else(|| {
                Error::Data(format!(
                    "code {code} out of range for attribute {} (cardinality {})",
                    attr.name,
                    attr.cardinality()
                ))
            })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Schema> {
        let schema: Schema = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn write_json_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read_json_file(path: &Path) -> Result<Schema> {
        Schema::from_json(&std::fs::read_to_string(path)?)
    }
}

/// A fully encoded table: one `u32` code per cell, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Schema,
    data: Vec<u32>,
}

impl Dataset {
    pub fn new(schema: Schema) -> Dataset {
        Dataset { schema, data: Vec::new() }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        if self.schema.width() == 0 {
            0
        } else {
            self.data.len() / self.schema.width()
        }
    }

    pub fn width(&self) -> usize {
        self.schema.width()
    }

    pub fn row(&self, r: usize) -> &[u32] {
        let w = self.width();
        &self.data[r * w..(r + 1) * w]
    }

    pub fn code(&self, r: usize, c: usize) -> u32 {
        self.data[r * self.width() + c]
    }

    pub fn set_code(&mut self, r: usize, c: usize, code: u32) -> Result<()> {
        if code as usize >= self.schema.attributes[c].cardinality() {
            return Err(Error::Data(format!(
                "code {code} out of range for attribute {}",
                self.schema.attributes[c].name
            )));
        }
        let w = self.width();
        self.data[r * w + c] = code;
        Ok(())
    }

    pub fn push_row(&mut self, row: &[u32]) -> Result<()> {
        if row.len() != self.width() {
            return Err(Error::Data(format!(
                "row has {} cells, schema has {} attributes",
                row.len(),
                self.width()
            )));
        }
        for (c, &code) in row.iter().enumerate() {
            if code as usize >= self.schema.attributes[c].cardinality() {
                return Err(Error::Data(format!(
                    "code {code} out of range for attribute {}",
                    self.schema.attributes[c].name
                )));
            }
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[u32]> + '_ {
        self.data.chunks_exact(self.width().max(1))
    }

    /// Raw code storage, row-major. For mechanism hot loops; callers must
    /// keep codes within each attribute's cardinality.
    pub(crate) fn codes_mut(&mut self) -> &mut [u32] {
        &mut self.data
    }

    /// A new dataset containing the given rows of this one, in the order
    /// listed.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let mut out = Dataset::new(self.schema.clone());
        out.data.reserve(rows.len() * self.width());
        for &r in rows {
            if r >= self.n_rows() {
                return Err(Error::Data(format!(
                    "row index {r} out of range ({} rows)",
                    self.n_rows()
                )));
            }
            out.data.extend_from_slice(self.row(r));
        }
        Ok(out)
    }

    /// Write the dataset as CSV with decoded labels, columns in schema
    /// order, header row first.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        self.write_csv_to(&mut writer)
    }

    /// Render the dataset as a CSV string (used by release documents).
    pub fn to_csv_string(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        self.write_csv_to(&mut writer)?;
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::Data(format!("csv buffer error: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(format!("csv not utf-8: {e}")))
    }

    fn write_csv_to<W: std::io::Write>(&self, writer: &mut csv::Writer<W>) -> Result<()> {
        writer.write_record(self.schema.attributes.iter().map(|a| a.name.as_str()))?;
        for r in 0..self.n_rows() {
            let row = self.row(r);
            let mut record = csv::StringRecord::new();
            for (c, &code) in row.iter().enumerate() {
                record.push_field(self.schema.decode(c, code)?);
            }
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Read a CSV file against a schema.
///
/// The header must contain exactly the schema's attribute names (any
/// order); columns are reordered to schema order. Cells must match one of
/// the attribute's labels, except that columns with a binning rule also
/// accept raw numeric values, which are binned on the fly. Row order is
/// preserved.
pub fn ingest_csv(csv_path: &Path, schema: &Schema) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(csv_path)?;
    let headers = reader.headers()?.clone();
    ingest_records(headers, reader.into_records(), schema)
}

/// As [`ingest_csv`], but from an in-memory string.
pub fn ingest_csv_str(text: &str, schema: &Schema) -> Result<Dataset> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    ingest_records(headers, reader.into_records(), schema)
}

fn ingest_records<I>(headers: csv::StringRecord, records: I, schema: &Schema) -> Result<Dataset>
where
    I: Iterator<Item = std::result::Result<csv::StringRecord, csv::Error>>,
{
    if headers.len() != schema.width() {
        return Err(Error::Data(format!(
            "csv has {} columns, schema has {}",
            headers.len(),
            schema.width()
        )));
    }
    // Map csv column position -> schema column position.
    let mut positions = vec![usize::MAX; schema.width()];
    for (csv_col, name) in headers.iter().enumerate() {
        let schema_col = schema
            .column_index(name)
            .map_err(|_| Error::Data(format!("csv header has unknown column {name:?}")))?;
        if positions.contains(&schema_col) {
            return Err(Error::Data(format!("csv header repeats column {name:?}")));
        }
        positions[csv_col] = schema_col;
    }

    let rules: Vec<Option<BinningRule>> = schema
        .attributes
        .iter()
        .map(|a| a.cuts.as_ref().map(|c| BinningRule { cuts: c.clone() }))
        .collect();

    let mut dataset = Dataset::new(schema.clone());
    let mut row = vec![0u32; schema.width()];
    for (line, record) in records.enumerate() {
        let record = record?;
        if record.len() != schema.width() {
            return Err(Error::Data(format!(
                "data row {}: expected {} cells, found {}",
                line + 1,
                schema.width(),
                record.len()
            )));
        }
        for (csv_col, cell) in record.iter().enumerate() {
            let schema_col = positions[csv_col];
            let code = encode_cell(schema, &rules, schema_col, cell).map_err(|e| {
                Error::Data(format!(
                    "data row {}, column {:?}: {e}",
                    line + 1,
                    schema.attributes[schema_col].name
                ))
            })?;
            row[schema_col] = code;
        }
        dataset.push_row(&row)?;
    }
    Ok(dataset)
}

fn encode_cell(
    schema: &Schema,
    rules: &[Option<BinningRule>],
    column: usize,
    cell: &str,
) -> Result<u32> {
    if let Ok(code) = schema.encode(column, cell) {
        return Ok(code);
    }
    if let Some(rule) = &rules[column] {
        if let Ok(x) = cell.trim().parse::<f64>() {
            if x.is_finite() {
                return Ok(rule.bin(x));
            }
        }
        return Err(Error::Data(format!(
            "value {cell:?} is neither a known label nor a finite number"
        )));
    }
    Err(Error::Data(format!("unknown value {cell:?}")))
}

/// Deterministically split a dataset into train and test parts.
///
/// Rows are assigned by a seeded shuffle: the first `floor(n * fraction)`
/// shuffled rows form the train part, the rest the test part. Within each
/// part the original row order is preserved. The two parts partition the
/// input exactly.
pub fn split(dataset: &Dataset, fraction: f64, seed_value: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Data(format!(
            "split fraction must lie strictly between 0 and 1, got {fraction}"
        )));
    }
    let n = dataset.n_rows();
    let n_train = (n as f64 * fraction).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(seed_value, &[]);
    // Fisher-Yates, spelled out so the shuffle is pinned to this crate
    // rather than to a library implementation detail.
    for i in (1..n).rev() {
        let j = rand::Rng::random_range(&mut rng, 0..=i);
        order.swap(i, j);
    }
    let mut train_rows: Vec<usize> = order[..n_train].to_vec();
    let mut test_rows: Vec<usize> = order[n_train..].to_vec();
    train_rows.sort_unstable();
    test_rows.sort_unstable();
    Ok((dataset.select_rows(&train_rows)?, dataset.select_rows(&test_rows)?))
}
