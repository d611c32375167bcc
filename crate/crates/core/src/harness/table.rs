use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Tab-separated table with `#`-prefixed metadata and a column header
/// comment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            meta: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}: {v}");
        }
        let _ = writeln!(out, "# columns: {}", self.columns.join("\t"));
        for row in &self.rows {
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut table = Table::default();
        let mut have_columns = false;
        for (ln, line) in text.lines().enumerate() {
            if let Some(meta) = line.strip_prefix("# ") {
                let (k, v) = meta
                    .split_once(": ")
                    .ok_or_else(|| Error::parse(format!("table line {}", ln + 1), "metadata needs `key: value`"))?;
                if k == "columns" {
                    table.columns = v.split('\t').map(str::to_string).collect();
                    have_columns = true;
                } else {
                    table.meta.push((k.to_string(), v.to_string()));
                }
            } else if !line.is_empty() {
                let row: Vec<String> = line.split('\t').map(str::to_string).collect();
                if !have_columns || row.len() != table.columns.len() {
                    return Err(Error::parse(format!("table line {}", ln + 1), "row does not match the columns"));
                }
                table.rows.push(row);
            }
        }
        if !have_columns {
            return Err(Error::parse("table", "missing columns header"));
        }
        Ok(table)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn get_meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Values of a numeric column.
    pub fn numbers(&self, name: &str) -> Result<Vec<f64>> {
        let c = self
            .column(name)
            .ok_or_else(|| Error::parse("table", format!("no column {name}")))?;
        self.rows
            .iter()
            .map(|r| r[c].parse::<f64>().map_err(|e| Error::parse(format!("column {name}"), e)))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
