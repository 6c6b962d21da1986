//! Textification: relational rows become token sentences, one per row, in
//! schema column order.

pub mod image;
pub mod numeric;
pub mod text;

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::table::{ColumnKind, ColumnSchema, NumericMode, RelationalTable, Value};

pub use image::{
    build_image_table, image_records_to_table, parse_type_hierarchy, textify_image_response,
    FixtureTransport, HierarchyClasses, ImageTagClient, ImageTagRecord,
};
pub use numeric::{encode_numeric, fit_numeric_encoder, NumericEncoder};
pub use text::{empty_marker, key_token, normalize_text_token, TextNormalizer};

/// One training sentence. `row_key` is `None` for external-KB lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSentence {
    pub row_key: Option<String>,
    pub tokens: Vec<String>,
    pub table: String,
}

impl TokenSentence {
    pub fn to_line(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Schema plus fitted numeric encoders for one table. Fitting is a
/// sequential pre-pass; afterwards the textifier is immutable and can be
/// shared across threads.
#[derive(Debug, Clone)]
pub struct TableTextifier {
    columns: Vec<ColumnSchema>,
    encoders: Vec<Option<NumericEncoder>>,
    normalizer: TextNormalizer,
}

impl TableTextifier {
    pub fn fit(table: &RelationalTable) -> Result<Self> {
        Self::fit_with(table, TextNormalizer::default())
    }

    pub fn fit_with(table: &RelationalTable, normalizer: TextNormalizer) -> Result<Self> {
        let columns = table.columns().to_vec();
        let mut encoders = Vec::with_capacity(columns.len());
        for (ci, col) in columns.iter().enumerate() {
            if col.kind == ColumnKind::Numeric {
                let values: Vec<Option<f64>> =
                    table.rows().iter().map(|r| r[ci].as_f64()).collect();
                encoders.push(Some(fit_numeric_encoder(&values, col)?));
            } else {
                encoders.push(None);
            }
        }
        Ok(TableTextifier {
            columns,
            encoders,
            normalizer,
        })
    }

    pub fn columns(&self) -> &[ColumnSchema] {
        &self.columns
    }

    pub fn encoder(&self, column: usize) -> Option<&NumericEncoder> {
        self.encoders.get(column).and_then(Option::as_ref)
    }

    pub fn normalizer(&self) -> &TextNormalizer {
        &self.normalizer
    }

    /// Tokens of a single cell, exactly as they appear in the corpus.
    pub fn cell_tokens(&self, column: usize, value: &Value) -> Vec<String> {
        let col = &self.columns[column];
        let tokens = match col.kind {
            ColumnKind::PrimaryKey => {
                let raw = match value {
                    Value::Missing => String::new(),
                    v => v.to_string(),
                };
                let t = key_token(&raw);
                return if t.is_empty() {
                    vec![empty_marker(&col.name)]
                } else {
                    vec![t]
                };
            }
            ColumnKind::Numeric => {
                let enc = self.encoders[column]
                    .as_ref()
                    .expect("numeric columns always carry an encoder");
                let x = match value {
                    Value::Number(x) => Some(*x),
                    Value::Text(s) => s.trim().parse().ok(),
                    Value::Missing => None,
                };
                vec![encode_numeric(x, col, enc)]
            }
            ColumnKind::Text | ColumnKind::ImageRef => match value {
                Value::Missing => vec![empty_marker(&col.name)],
                v => self.normalizer.normalize(&v.to_string(), &col.name),
            },
        };
        // literal/rounded numbers and empty markers already carry the column name
        let self_prefixed = matches!(
            (col.kind, &col.numeric_mode),
            (
                ColumnKind::Numeric,
                NumericMode::Literal | NumericMode::Rounded { .. }
            )
        );
        if col.prepend_name && !self_prefixed {
            let prefix = format!("{}_", text::column_token(&col.name));
            let marker = empty_marker(&col.name);
            tokens
                .into_iter()
                .map(|t| {
                    if t == marker {
                        t
                    } else {
                        format!("{prefix}{t}")
                    }
                })
                .collect()
        } else {
            tokens
        }
    }

    /// Tokens of a whole row in column order (no foreign-key expansion).
    pub fn row_tokens(&self, row: &[Value]) -> Vec<String> {
        row.iter()
            .enumerate()
            .flat_map(|(ci, v)| self.cell_tokens(ci, v))
            .collect()
    }
}

/// A foreign-key column of the table being textified, pointing at the
/// primary key of `target`.
#[derive(Debug, Clone, Copy)]
pub struct ForeignKeyLink<'a> {
    pub column: &'a str,
    pub target: &'a RelationalTable,
    pub target_textifier: &'a TableTextifier,
}

/// One sentence per row. For each foreign-key column the referenced row's
/// tokens (minus its own key token, which equals the foreign-key token) are
/// spliced immediately after the foreign-key token.
pub fn textify_table(
    table: &RelationalTable,
    textifier: &TableTextifier,
    fk_links: &[ForeignKeyLink<'_>],
) -> Result<Vec<TokenSentence>> {
    if textifier.columns().len() != table.columns().len() {
        return Err(Error::Config(format!(
            "textifier for {} columns applied to table `{}` with {}",
            textifier.columns().len(),
            table.name(),
            table.columns().len()
        )));
    }
    let mut links: HashMap<usize, &ForeignKeyLink<'_>> = HashMap::new();
    for link in fk_links {
        let ci = table
            .column_index(link.column)
            .ok_or_else(|| Error::UnknownColumn(link.column.to_string()))?;
        links.insert(ci, link);
    }

    let mut out = Vec::with_capacity(table.len());
    for (ri, row) in table.rows().iter().enumerate() {
        let mut tokens = Vec::new();
        for (ci, value) in row.iter().enumerate() {
            let cell = textifier.cell_tokens(ci, value);
            let link = links.get(&ci).filter(|_| !value.is_missing());
            tokens.extend(cell.iter().cloned());
            if let Some(link) = link {
                let key = key_token(&value.to_string());
                let target_row =
                    link.target
                        .row_by_key(&key)
                        .ok_or_else(|| Error::DanglingForeignKey {
                            column: link.column.to_string(),
                            table: link.target.name().to_string(),
                            key: key.clone(),
                        })?;
                let target_key_col = link.target.key_column();
                for (tci, tv) in link.target.rows()[target_row].iter().enumerate() {
                    if Some(tci) == target_key_col {
                        continue;
                    }
                    tokens.extend(link.target_textifier.cell_tokens(tci, tv));
                }
            }
        }
        out.push(TokenSentence {
            row_key: table.row_key(ri),
            tokens,
            table: table.name().to_string(),
        });
    }
    Ok(out)
}

/// Append normalized KB lines `repetitions` times after the database corpus.
/// Lines that normalize to nothing are skipped.
pub fn append_external_kb<S: AsRef<str>>(
    mut corpus: Vec<TokenSentence>,
    kb_lines: &[S],
    repetitions: usize,
) -> Result<Vec<TokenSentence>> {
    if repetitions == 0 {
        return Err(Error::Config("external KB repetitions must be >= 1".into()));
    }
    let normalizer = TextNormalizer::default();
    let kb: Vec<TokenSentence> = kb_lines
        .iter()
        .map(|l| normalizer.tokens(l.as_ref(), true))
        .filter(|t| !t.is_empty())
        .map(|tokens| TokenSentence {
            row_key: None,
            tokens,
            table: "external_kb".to_string(),
        })
        .collect();
    for _ in 0..repetitions {
        corpus.extend(kb.iter().cloned());
    }
    Ok(corpus)
}

/// Corpus text: one sentence per line, tokens separated by single spaces.
pub fn write_corpus<W: Write>(sentences: &[TokenSentence], mut w: W) -> Result<()> {
    for s in sentences {
        writeln!(w, "{}", s.to_line())?;
    }
    Ok(())
}

/// Row-key sidecar: one line per corpus sentence, the key or an empty line.
pub fn write_corpus_keys<W: Write>(sentences: &[TokenSentence], mut w: W) -> Result<()> {
    for s in sentences {
        writeln!(w, "{}", s.row_key.as_deref().unwrap_or(""))?;
    }
    Ok(())
}

/// Read a corpus, optionally pairing it with its row-key sidecar. Every
/// token must already be in normalized form.
pub fn read_corpus<R: BufRead>(corpus: R, keys: Option<Vec<String>>) -> Result<Vec<TokenSentence>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for (i, line) in corpus.lines().enumerate() {
        let line = line?;
        let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if let Some(bad) = tokens.iter().find(|t| !text::is_canonical_token(t)) {
            return Err(Error::format(
                offset,
                format!("line {}: invalid token `{bad}`", i + 1),
            ));
        }
        offset += line.len() as u64 + 1;
        let row_key = keys
            .as_ref()
            .and_then(|k| k.get(i))
            .filter(|k| !k.is_empty())
            .cloned();
        if let Some(k) = &row_key {
            if !tokens.contains(k) {
                return Err(Error::Data(format!(
                    "line {}: row key `{k}` not in sentence",
                    i + 1
                )));
            }
        }
        if tokens.is_empty() {
            continue;
        }
        out.push(TokenSentence {
            row_key,
            tokens,
            table: String::new(),
        });
    }
    Ok(out)
}
