use std::io::Write;

use serde::Serialize;
use serde_json::{json, Value};

use crate::args::Format;
use crate::error::RunError;

/// A rectangular numeric result with `#` metadata lines.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { meta: Vec::new(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Json(Value),
    Table(Table),
}

impl Artifact {
    pub fn render(&self, format: Option<Format>) -> Result<Vec<u8>, RunError> {
        match (self, format) {
            (Artifact::Json(v), None | Some(Format::Json)) => {
                let mut s = serde_json::to_string_pretty(v).map_err(|e| RunError::Io(e.to_string()))?;
                s.push('\n');
                Ok(s.into_bytes())
            }
            (Artifact::Json(_), Some(Format::Csv)) => Err(RunError::Config("this command has JSON output only".into())),
            (Artifact::Table(t), None | Some(Format::Csv)) => render_csv(t),
            (Artifact::Table(t), Some(Format::Json)) => {
                let meta: serde_json::Map<String, Value> =
                    t.meta.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
                let rows: Vec<Value> = t
                    .rows
                    .iter()
                    .map(|r| Value::Object(t.columns.iter().cloned().zip(r.iter().map(|x| json!(x))).collect()))
                    .collect();
                let mut s = serde_json::to_string_pretty(&json!({ "meta": meta, "rows": rows }))
                    .map_err(|e| RunError::Io(e.to_string()))?;
                s.push('\n');
                Ok(s.into_bytes())
            }
        }
    }
}

fn render_csv(t: &Table) -> Result<Vec<u8>, RunError> {
    let mut buf = Vec::new();
    writeln!(buf, "# coherent-usd {}", env!("CARGO_PKG_VERSION")).map_err(|e| RunError::Io(e.to_string()))?;
    for (k, v) in &t.meta {
        writeln!(buf, "# {k}: {v}").map_err(|e| RunError::Io(e.to_string()))?;
    }
    let mut w = csv::Writer::from_writer(buf);
    let io = |e: csv::Error| RunError::Io(e.to_string());
    w.write_record(&t.columns).map_err(io)?;
    for row in &t.rows {
        // Debug keeps round-trip precision and switches to exponent form
        // for very small or large values.
        w.write_record(row.iter().map(|x| format!("{x:?}"))).map_err(io)?;
    }
    w.into_inner().map_err(|e| RunError::Io(e.to_string()))
}
