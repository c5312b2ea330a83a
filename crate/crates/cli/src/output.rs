//! Tables written as CSV (and optionally mirrored as JSON), plus raw SVG
//! documents. Every file starts with the resolved configuration.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{Format, RunConfig};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v:?}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    /// Builds a table from equal-length numeric columns.
    pub fn from_columns(names: &[&str], cols: &[&[f64]]) -> Self {
        let mut t = Self::new(names);
        let n = cols.first().map_or(0, |c| c.len());
        for i in 0..n {
            t.push(cols.iter().map(|c| Cell::Num(c[i])).collect());
        }
        t
    }

    pub fn to_csv(&self, header: &str) -> String {
        let mut out = String::from(header);
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::csv).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self, header: &str) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            header: &'a str,
            columns: &'a [String],
            rows: &'a [Vec<Cell>],
        }
        let doc = Doc {
            header,
            columns: &self.columns,
            rows: &self.rows,
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("tables always serialize");
        s.push('\n');
        s
    }
}

/// Header text of any file written by [`OutputDir`], in the `# `-prefixed
/// form that [`RunConfig::from_header`] reads.
pub fn embedded_header(text: &str) -> Result<String> {
    if let Some(rest) = text.strip_prefix("<!--\n") {
        let end = rest.find("-->").ok_or_else(|| CliError::config("unterminated SVG header comment"))?;
        return Ok(rest[..end].to_string());
    }
    if text.starts_with('{') {
        let v: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::config(format!("invalid JSON output: {e}")))?;
        return v["header"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| CliError::config("JSON output has no header field"));
    }
    Ok(text.to_string())
}

pub struct OutputDir<'a> {
    root: PathBuf,
    cfg: &'a RunConfig,
    header: String,
    written: Vec<PathBuf>,
}

impl<'a> OutputDir<'a> {
    pub fn create(cfg: &'a RunConfig) -> Result<Self> {
        let root = PathBuf::from(&cfg.output.directory);
        std::fs::create_dir_all(&root).map_err(|source| CliError::Io {
            action: "create directory",
            path: root.clone(),
            source,
        })?;
        Ok(Self {
            root,
            cfg,
            header: cfg.header(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.root.join(name);
        std::fs::write(&path, contents).map_err(|source| CliError::Io {
            action: "write",
            path: path.clone(),
            source,
        })?;
        self.written.push(path);
        Ok(())
    }

    pub fn table(&mut self, stem: &str, table: &Table) -> Result<()> {
        if self.cfg.wants(Format::Csv) {
            let text = table.to_csv(&self.header);
            self.write(&format!("{stem}.csv"), &text)?;
        }
        if self.cfg.wants(Format::Json) {
            let text = table.to_json(&self.header);
            self.write(&format!("{stem}.json"), &text)?;
        }
        Ok(())
    }

    pub fn svg(&mut self, stem: &str, body: &str) -> Result<()> {
        let text = format!("<!--\n{}-->\n{body}", self.header);
        self.write(&format!("{stem}.svg"), &text)
    }
}
