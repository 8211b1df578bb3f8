//! CSV tables and flat key=value reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

/// One CSV cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(u64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

/// Floats are written with 17 significant digits so they round-trip exactly.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(v) => fmt_float(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// A CSV table with a fixed column order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: vec![],
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(Cell::render).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }
}

/// Everything one subcommand produces.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub name: String,
    /// `(file stem, table)` pairs written as `<stem>.csv`.
    pub tables: Vec<(String, Table)>,
    pub summary: Vec<(String, String)>,
    /// Machine-readable violation records, empty when every certified property held.
    pub violations: Vec<String>,
}

impl Report {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.into(), value.to_string()));
    }

    pub fn set_f(&mut self, key: &str, value: f64) {
        self.set(key, fmt_float(value));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.summary
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.summary {
            let _ = writeln!(s, "{k}={v}");
        }
        let _ = writeln!(s, "status={}", if self.passed() { "pass" } else { "fail" });
        let _ = writeln!(s, "violation_count={}", self.violations.len());
        for (i, v) in self.violations.iter().enumerate() {
            let _ = writeln!(s, "violation.{i}={v}");
        }
        s
    }

    /// Writes every table, the summary, and the config echo into `dir`.
    pub fn write(&self, dir: &Path, config_echo: &str) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (stem, table) in &self.tables {
            let path = dir.join(format!("{stem}.csv"));
            fs::write(&path, table.to_csv()).with_context(|| format!("writing {}", path.display()))?;
        }
        let path = dir.join(format!("{}_summary.txt", self.name));
        fs::write(&path, self.summary_text()).with_context(|| format!("writing {}", path.display()))?;
        let path = dir.join(format!("{}_config.toml", self.name));
        fs::write(&path, config_echo).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
