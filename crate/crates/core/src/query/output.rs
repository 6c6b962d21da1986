use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::ResultSet;
use crate::table::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    /// Space-aligned columns with a header rule.
    #[default]
    Table,
    Csv,
    /// One JSON object per row.
    JsonLines,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "table" => Ok(OutputFormat::Table),
            "csv" => Ok(OutputFormat::Csv),
            "json" | "jsonl" | "json-lines" | "json_lines" => Ok(OutputFormat::JsonLines),
            _ => Err(Error::Config(format!(
                "unknown output format `{s}` (table, csv or json)"
            ))),
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Table => "table",
            OutputFormat::Csv => "csv",
            OutputFormat::JsonLines => "json",
        })
    }
}

fn cell_text(v: &Value) -> String {
    match v {
        Value::Missing => String::new(),
        Value::Number(x) if x.fract() == 0.0 && x.abs() < 1e15 => format!("{x:.1}"),
        Value::Number(x) => format!("{x:.6}"),
        Value::Text(s) => s.clone(),
    }
}

fn json_value(v: &Value) -> serde_json::Value {
    match v {
        Value::Missing => serde_json::Value::Null,
        Value::Number(x) => serde_json::Number::from_f64(*x)
            .map_or(serde_json::Value::Null, serde_json::Value::Number),
        Value::Text(s) => serde_json::Value::String(s.clone()),
    }
}

impl ResultSet {
    pub fn render(&self, format: OutputFormat) -> Result<String> {
        match format {
            OutputFormat::Table => Ok(self.render_table()),
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(&self.columns)?;
                for row in &self.rows {
                    w.write_record(row.iter().map(cell_text))?;
                }
                let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
                Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
            }
            OutputFormat::JsonLines => {
                let mut out = String::new();
                for row in &self.rows {
                    let obj: serde_json::Map<String, serde_json::Value> = self
                        .columns
                        .iter()
                        .cloned()
                        .zip(row.iter().map(json_value))
                        .collect();
                    out.push_str(&serde_json::to_string(&obj)?);
                    out.push('\n');
                }
                Ok(out)
            }
        }
    }

    fn render_table(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|v| {
                        if v.is_missing() {
                            "NULL".into()
                        } else {
                            cell_text(v)
                        }
                    })
                    .collect()
            })
            .collect();
        let widths: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(i, h)| {
                cells
                    .iter()
                    .map(|r| r[i].chars().count())
                    .chain([h.chars().count()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |vals: &[String]| {
            let parts: Vec<String> = vals
                .iter()
                .zip(&widths)
                .map(|(v, w)| format!("{v:<w$}"))
                .collect();
            parts.join("  ").trim_end().to_string()
        };
        let mut out = line(&self.columns);
        out.push('\n');
        out.push_str(
            &widths
                .iter()
                .map(|w| "-".repeat(*w))
                .collect::<Vec<_>>()
                .join("  "),
        );
        out.push('\n');
        for r in &cells {
            out.push_str(&line(r));
            out.push('\n');
        }
        out.push_str(&format!(
            "({} row{})\n",
            self.rows.len(),
            if self.rows.len() == 1 { "" } else { "s" }
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rs() -> ResultSet {
        ResultSet {
            columns: vec!["id".into(), "score".into()],
            rows: vec![
                vec![Value::Text("a".into()), Value::Number(0.5)],
                vec![Value::Text("b,c".into()), Value::Missing],
            ],
            ..Default::default()
        }
    }

    #[test]
    fn formats() {
        assert_eq!(
            rs().render(OutputFormat::Csv).unwrap(),
            "id,score\na,0.500000\n\"b,c\",\n"
        );
        assert_eq!(
            rs().render(OutputFormat::JsonLines).unwrap(),
            "{\"id\":\"a\",\"score\":0.5}\n{\"id\":\"b,c\",\"score\":null}\n"
        );
        let t = rs().render(OutputFormat::Table).unwrap();
        assert!(
            t.starts_with("id   score\n---  --------\na    0.500000\nb,c  NULL\n(2 rows)"),
            "{t}"
        );
        assert_eq!(
            "json".parse::<OutputFormat>().unwrap(),
            OutputFormat::JsonLines
        );
    }
}
