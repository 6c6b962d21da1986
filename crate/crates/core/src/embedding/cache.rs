use std::collections::BTreeMap;

use crate::embedding::model::{EmbeddingModel, OovPolicy};
use crate::error::{Error, Result};
use crate::table::RelationalTable;
use crate::textify::TableTextifier;

/// `avgColVec` of every column of one row, in schema order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowVectors {
    pub columns: Vec<(String, Vec<f64>)>,
}

impl RowVectors {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(c, _)| c.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_slice())
    }
}

/// Per-row, per-column mean vectors keyed by `(table, row_key)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowAttributeCache {
    dim: usize,
    config_hash: Option<String>,
    tables: BTreeMap<String, BTreeMap<String, RowVectors>>,
}

impl RowAttributeCache {
    pub fn new(dim: usize) -> Self {
        RowAttributeCache {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config_hash(&self) -> Option<&str> {
        self.config_hash.as_deref()
    }

    pub fn set_config_hash(&mut self, hash: Option<String>) {
        self.config_hash = hash;
    }

    pub fn insert(&mut self, table: &str, key: &str, row: RowVectors) -> Result<()> {
        if let Some((_, v)) = row.columns.iter().find(|(_, v)| v.len() != self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        self.tables
            .entry(table.to_string())
            .or_default()
            .insert(key.to_string(), row);
        Ok(())
    }

    pub fn get(&self, table: &str, key: &str) -> Option<&RowVectors> {
        self.tables.get(table)?.get(key)
    }

    /// Look a key up in any table (tables in name order).
    pub fn find(&self, key: &str) -> Option<&RowVectors> {
        self.tables.values().find_map(|t| t.get(key))
    }

    pub fn len(&self) -> usize {
        self.tables.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &RowVectors)> {
        self.tables
            .iter()
            .flat_map(|(t, rows)| rows.iter().map(move |(k, r)| (t.as_str(), k.as_str(), r)))
    }

    pub fn merge(&mut self, other: RowAttributeCache) -> Result<()> {
        if !other.is_empty() && other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: other.dim,
            });
        }
        for (t, rows) in other.tables {
            self.tables.entry(t).or_default().extend(rows);
        }
        Ok(())
    }
}

/// Average the model vectors of each cell's tokens. Columns whose tokens all
/// fail to resolve are left out of the row (with a warning) under
/// `SkipWithDefault`, and are an error under `Error`.
pub fn build_row_attribute_cache(
    table: &RelationalTable,
    textifier: &TableTextifier,
    model: &EmbeddingModel,
    policy: OovPolicy,
) -> Result<RowAttributeCache> {
    let mut cache = RowAttributeCache::new(model.dim());
    let mut oov = 0usize;
    for (ri, row) in table.rows().iter().enumerate() {
        let Some(key) = table.row_key(ri) else {
            continue;
        };
        let mut rv = RowVectors::default();
        for (ci, value) in row.iter().enumerate() {
            let tokens = textifier.cell_tokens(ci, value);
            oov += tokens.iter().filter(|t| !model.contains(t)).count();
            match model.mean_vector(&tokens, policy) {
                Ok(v) => rv.columns.push((textifier.columns()[ci].name.clone(), v)),
                Err(Error::AllTokensUnknown(_)) if policy == OovPolicy::SkipWithDefault => {}
                Err(e) => return Err(e),
            }
        }
        cache.insert(table.name(), &key, rv)?;
    }
    if oov > 0 {
        log::warn!(
            "event=row_cache_oov table={} tokens={oov} policy={policy:?}",
            table.name()
        );
    }
    Ok(cache)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{ColumnSchema, Value};

    #[test]
    fn single_and_multi_token_columns() {
        let model = EmbeddingModel::from_vectors(vec![
            ("</s>", vec![0.0, 0.0, 1.0]),
            ("img1", vec![1.0, 1.0, 0.0]),
            ("animal", vec![1.0, 0.0, 0.0]),
            ("lion", vec![1.0, 0.0, 0.0]),
            ("predator", vec![0.0, 1.0, 0.0]),
        ])
        .unwrap();
        let table = RelationalTable::new(
            "images",
            vec![
                ColumnSchema::key("imagename"),
                ColumnSchema::text("classA"),
                ColumnSchema::text("classD"),
            ],
            vec![vec![
                Value::Text("img1".into()),
                Value::Text("animal".into()),
                Value::Text("lion predator".into()),
            ]],
        )
        .unwrap();
        let tx = TableTextifier::fit(&table).unwrap();
        let cache = build_row_attribute_cache(&table, &tx, &model, OovPolicy::Error).unwrap();
        let row = cache.get("images", "img1").unwrap();
        assert_eq!(row.column("classA").unwrap(), &[1.0, 0.0, 0.0]);
        assert_eq!(row.column("classd").unwrap(), &[0.5, 0.5, 0.0]);
        assert_eq!(row.column("imagename").unwrap(), &[1.0, 1.0, 0.0]);
        assert_eq!(cache.find("img1"), Some(row));
    }

    #[test]
    fn oov_policy() {
        let model =
            EmbeddingModel::from_vectors(vec![("</s>", vec![0.0, 1.0]), ("k", vec![1.0, 0.0])])
                .unwrap();
        let table = RelationalTable::new(
            "t",
            vec![ColumnSchema::key("id"), ColumnSchema::text("c")],
            vec![vec![Value::Text("k".into()), Value::Text("ghost".into())]],
        )
        .unwrap();
        let tx = TableTextifier::fit(&table).unwrap();
        let err = build_row_attribute_cache(&table, &tx, &model, OovPolicy::Error).unwrap_err();
        assert!(matches!(err, Error::UnknownToken(_)));
        let cache =
            build_row_attribute_cache(&table, &tx, &model, OovPolicy::SkipWithDefault).unwrap();
        assert_eq!(
            cache.get("t", "k").unwrap().column("c").unwrap(),
            &[0.0, 1.0]
        );
    }
}
