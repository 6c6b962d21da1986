//! In-memory relational tables loaded from CSV, plus the per-column schema
//! that drives textification.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textify::text::key_token;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Text,
    Numeric,
    ImageRef,
    PrimaryKey,
}

/// One named range of a user-managed categorization. A value falls in the
/// first bin whose `upper` bound exceeds it; `upper: None` is unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeBin {
    pub name: String,
    #[serde(default)]
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericMode {
    Literal,
    Rounded {
        #[serde(default = "default_precision")]
        precision: u32,
    },
    RangeRule {
        bins: Vec<RangeBin>,
    },
    Kmeans {
        k: usize,
    },
}

fn default_precision() -> u32 {
    2
}

impl Default for NumericMode {
    fn default() -> Self {
        NumericMode::Literal
    }
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default)]
    pub numeric_mode: NumericMode,
    #[serde(default = "default_weight")]
    pub weight: f64,
    #[serde(default)]
    pub prepend_name: bool,
}

impl ColumnSchema {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        ColumnSchema {
            name: name.into(),
            kind,
            numeric_mode: NumericMode::Literal,
            weight: 1.0,
            prepend_name: false,
        }
    }

    pub fn text(name: impl Into<String>) -> Self {
        Self::new(name, ColumnKind::Text)
    }

    pub fn key(name: impl Into<String>) -> Self {
        Self::new(name, ColumnKind::PrimaryKey)
    }

    pub fn numeric(name: impl Into<String>, mode: NumericMode) -> Self {
        ColumnSchema {
            numeric_mode: mode,
            ..Self::new(name, ColumnKind::Numeric)
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_prepend_name(mut self, on: bool) -> Self {
        self.prepend_name = on;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Config("column name must not be empty".into()));
        }
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return Err(Error::Config(format!(
                "column `{}`: weight must be a nonnegative real",
                self.name
            )));
        }
        if self.kind == ColumnKind::Numeric {
            match &self.numeric_mode {
                NumericMode::Kmeans { k } if *k == 0 => {
                    return Err(Error::Config(format!(
                        "column `{}`: k must be >= 1",
                        self.name
                    )))
                }
                NumericMode::RangeRule { bins } => {
                    if bins.is_empty() {
                        return Err(Error::Config(format!(
                            "column `{}`: range rule needs at least one bin",
                            self.name
                        )));
                    }
                    let bounds: Vec<f64> = bins.iter().filter_map(|b| b.upper).collect();
                    if bounds.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(Error::Config(format!(
                            "column `{}`: range bounds must be strictly ascending",
                            self.name
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Schema sidecar file contents (`<table>.schema.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    #[serde(default)]
    pub table: Option<String>,
    pub columns: Vec<ColumnSchema>,
}

impl TableSchema {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Text(String),
    Number(f64),
    Missing,
}

impl Value {
    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Text(s) => f.write_str(s),
            Value::Number(x) => write!(f, "{x}"),
            Value::Missing => f.write_str("NULL"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RelationalTable {
    name: String,
    columns: Vec<ColumnSchema>,
    rows: Vec<Vec<Value>>,
    key_column: Option<usize>,
    key_index: HashMap<String, usize>,
}

impl RelationalTable {
    /// Build a keyed table. Exactly one column must be the primary key and
    /// key tokens must be unique.
    pub fn new(
        name: impl Into<String>,
        columns: Vec<ColumnSchema>,
        rows: Vec<Vec<Value>>,
    ) -> Result<Self> {
        let name = name.into();
        for c in &columns {
            c.validate()?;
        }
        let keys: Vec<usize> = columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == ColumnKind::PrimaryKey)
            .map(|(i, _)| i)
            .collect();
        if keys.len() != 1 {
            return Err(Error::Config(format!(
                "table `{name}` must have exactly one primary_key column, found {}",
                keys.len()
            )));
        }
        Self::build(name, columns, rows, Some(keys[0]))
    }

    /// Build a result table without a primary key (query output).
    pub fn unkeyed(
        name: impl Into<String>,
        columns: Vec<ColumnSchema>,
        rows: Vec<Vec<Value>>,
    ) -> Result<Self> {
        Self::build(name.into(), columns, rows, None)
    }

    fn build(
        name: String,
        columns: Vec<ColumnSchema>,
        rows: Vec<Vec<Value>>,
        key_column: Option<usize>,
    ) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(Error::Data(format!(
                    "table `{name}` row {i} has {} cells, expected {}",
                    row.len(),
                    columns.len()
                )));
            }
        }
        let mut key_index = HashMap::new();
        if let Some(k) = key_column {
            for (i, row) in rows.iter().enumerate() {
                let token = match &row[k] {
                    Value::Missing => {
                        return Err(Error::Data(format!(
                            "table `{name}` row {i}: missing primary key"
                        )))
                    }
                    v => key_token(&v.to_string()),
                };
                if token.is_empty() {
                    return Err(Error::Data(format!(
                        "table `{name}` row {i}: empty primary key"
                    )));
                }
                if key_index.insert(token.clone(), i).is_some() {
                    return Err(Error::Data(format!(
                        "table `{name}`: duplicate primary key `{token}`"
                    )));
                }
            }
        }
        Ok(RelationalTable {
            name,
            columns,
            rows,
            key_column,
            key_index,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn columns(&self) -> &[ColumnSchema] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn key_column(&self) -> Option<usize> {
        self.key_column
    }

    /// Case-insensitive column lookup.
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.name.eq_ignore_ascii_case(name))
    }

    /// Normalized primary-key token of row `i`.
    pub fn row_key(&self, i: usize) -> Option<String> {
        self.key_column
            .map(|k| key_token(&self.rows[i][k].to_string()))
    }

    pub fn row_by_key(&self, token: &str) -> Option<usize> {
        self.key_index.get(token).copied()
    }

    pub fn cell(&self, row: usize, col: usize) -> &Value {
        &self.rows[row][col]
    }

    /// Load from RFC-4180 CSV with a header row. When `schema` is `None`
    /// column kinds are inferred: the first column is the primary key, a
    /// column whose non-empty cells all parse as numbers is numeric
    /// (literal mode), everything else is text.
    pub fn from_csv_reader<R: Read>(
        name: impl Into<String>,
        reader: R,
        schema: Option<&TableSchema>,
    ) -> Result<Self> {
        let name = name.into();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_reader(reader);
        let header: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut raw: Vec<Vec<String>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            raw.push(rec.iter().map(|s| s.to_string()).collect());
        }

        let columns = match schema {
            Some(s) => {
                if s.columns.len() != header.len()
                    || s.columns
                        .iter()
                        .zip(&header)
                        .any(|(c, h)| !c.name.eq_ignore_ascii_case(h))
                {
                    return Err(Error::Config(format!(
                        "schema for `{name}` does not match CSV header [{}]",
                        header.join(", ")
                    )));
                }
                s.columns.clone()
            }
            None => infer_columns(&header, &raw),
        };

        let mut rows = Vec::with_capacity(raw.len());
        for (ri, rec) in raw.into_iter().enumerate() {
            let mut row = Vec::with_capacity(rec.len());
            for (ci, cell) in rec.into_iter().enumerate() {
                let trimmed = cell.trim();
                let value = if trimmed.is_empty() {
                    Value::Missing
                } else if columns[ci].kind == ColumnKind::Numeric {
                    let x: f64 = trimmed.parse().map_err(|_| {
                        Error::Data(format!(
                            "table `{name}` row {ri} column `{}`: `{trimmed}` is not numeric",
                            columns[ci].name
                        ))
                    })?;
                    Value::Number(x)
                } else {
                    Value::Text(cell)
                };
                row.push(value);
            }
            rows.push(row);
        }
        Self::new(name, columns, rows)
    }

    pub fn from_csv_path(
        name: impl Into<String>,
        path: impl AsRef<Path>,
        schema: Option<&TableSchema>,
    ) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(name, std::io::BufReader::new(file), schema)
    }

    /// Serialize as CSV (header + rows), missing cells as empty fields.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| match v {
                Value::Missing => String::new(),
                v => v.to_string(),
            }))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }
}

fn infer_columns(header: &[String], raw: &[Vec<String>]) -> Vec<ColumnSchema> {
    header
        .iter()
        .enumerate()
        .map(|(ci, h)| {
            if ci == 0 {
                return ColumnSchema::key(h.clone());
            }
            let mut seen = false;
            let numeric = raw.iter().all(|r| {
                let cell = r[ci].trim();
                if cell.is_empty() {
                    return true;
                }
                seen = true;
                cell.parse::<f64>().is_ok()
            });
            if numeric && seen {
                ColumnSchema::numeric(h.clone(), NumericMode::Literal)
            } else {
                ColumnSchema::text(h.clone())
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_inference_and_key_index() {
        let csv = "custID,Item,Amount\ncustA,Bananas,25.00\ncustB,\"Crayons, Paper\",\n";
        let t = RelationalTable::from_csv_reader("sales", csv.as_bytes(), None).unwrap();
        assert_eq!(t.columns()[0].kind, ColumnKind::PrimaryKey);
        assert_eq!(t.columns()[1].kind, ColumnKind::Text);
        assert_eq!(t.columns()[2].kind, ColumnKind::Numeric);
        assert_eq!(t.cell(0, 2), &Value::Number(25.0));
        assert!(t.cell(1, 2).is_missing());
        assert_eq!(t.row_by_key("custb"), Some(1));
        assert_eq!(t.column_index("amount"), Some(2));
    }

    #[test]
    fn duplicate_keys_rejected() {
        let csv = "id,x\na,1\nA,2\n";
        let err = RelationalTable::from_csv_reader("t", csv.as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn schema_must_match_header() {
        let schema = TableSchema {
            table: None,
            columns: vec![ColumnSchema::key("id")],
        };
        let err = RelationalTable::from_csv_reader("t", "id,x\na,1\n".as_bytes(), Some(&schema))
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn exactly_one_key() {
        let err = RelationalTable::new("t", vec![ColumnSchema::text("a")], vec![]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn schema_sidecar_parses_modes() {
        let json = r#"{"columns":[
            {"name":"id","kind":"primary_key"},
            {"name":"Amount","kind":"numeric","numeric_mode":{"kmeans":{"k":3}}},
            {"name":"Cocoa","kind":"numeric","numeric_mode":{"range_rule":{"bins":[{"name":"choc_med","upper":50},{"name":"choc_dark"}]}}},
            {"name":"Price","kind":"numeric","numeric_mode":{"rounded":{}},"weight":2.5,"prepend_name":true}
        ]}"#;
        let s: TableSchema = serde_json::from_str(json).unwrap();
        assert_eq!(s.columns[1].numeric_mode, NumericMode::Kmeans { k: 3 });
        assert_eq!(
            s.columns[3].numeric_mode,
            NumericMode::Rounded { precision: 2 }
        );
        assert_eq!(s.columns[3].weight, 2.5);
        assert!(s.columns[3].prepend_name);
        assert_eq!(s.columns[0].weight, 1.0);
    }
}
