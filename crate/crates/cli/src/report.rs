//! Versioned reports with named tables, rendered as JSON, text or CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::ser::{Serialize, Serializer};
use serde::Serialize as DeriveSerialize;

use crate::config::{Format, RunConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Marker for quantities that could not be computed.
pub const UNAVAILABLE: &str = "unavailable";

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(f64),
    Int(i64),
    Text(String),
    Flag(bool),
    Unavailable,
}

impl Value {
    pub fn real(x: f64) -> Self {
        if x.is_finite() {
            Value::Real(x)
        } else {
            Value::Unavailable
        }
    }

    pub fn maybe(x: Option<f64>) -> Self {
        x.map_or(Value::Unavailable, Value::real)
    }

    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    /// Display form; reals are rounded to six significant digits.
    pub fn render(&self) -> String {
        match self {
            Value::Real(x) => sig6(*x),
            Value::Int(i) => i.to_string(),
            Value::Text(s) => s.clone(),
            Value::Flag(b) => b.to_string(),
            Value::Unavailable => UNAVAILABLE.to_string(),
        }
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as i64)
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Real(x) => s.serialize_f64(*x),
            Value::Int(i) => s.serialize_i64(*i),
            Value::Text(t) => s.serialize_str(t),
            Value::Flag(b) => s.serialize_bool(*b),
            Value::Unavailable => s.serialize_str(UNAVAILABLE),
        }
    }
}

/// `x` rounded to six significant digits, without trailing zeros.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{x:.5e}").parse().unwrap_or(x);
    let s = format!("{rounded}");
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, DeriveSerialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Text,
    Integer,
    Real,
    Flag,
}

#[derive(Debug, Clone, PartialEq, DeriveSerialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, DeriveSerialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, columns: &[(&str, ColumnKind)]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|(n, k)| Column { name: n.to_string(), kind: *k }).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width does not match table {}", self.name);
        self.rows.push(row);
    }

    fn render_text(&self, out: &mut String) {
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Value::render).collect()).collect();
        let widths: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(j, c)| cells.iter().map(|r| r[j].len()).chain([c.name.len()]).max().unwrap_or(0))
            .collect();
        let line = |out: &mut String, items: Vec<&str>| {
            let parts: Vec<String> = items
                .iter()
                .zip(&widths)
                .zip(&self.columns)
                .map(|((s, w), c)| match c.kind {
                    ColumnKind::Text => format!("{s:<w$}"),
                    _ => format!("{s:>w$}"),
                })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        let _ = writeln!(out, "== {} ==", self.name);
        line(out, self.columns.iter().map(|c| c.name.as_str()).collect());
        for r in &cells {
            line(out, r.iter().map(String::as_str).collect());
        }
    }
}

#[derive(Debug, Clone, PartialEq, DeriveSerialize)]
pub struct Diagnostic {
    /// Stable identifier, e.g. `clipped` or `ridge_regularized`.
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, DeriveSerialize)]
pub struct Metadata {
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config_hash: String,
    pub created_at: String,
    pub config: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, DeriveSerialize)]
pub struct Report {
    pub schema_version: u32,
    pub metadata: Metadata,
    pub tables: Vec<Table>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Report {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            metadata: Metadata {
                version: env!("CARGO_PKG_VERSION").to_string(),
                command: config.command.name().to_string(),
                seed: config.seed().ok().flatten(),
                config_hash: config.hash(),
                created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                config: config.values().clone(),
            },
            tables: Vec::new(),
            diagnostics: Vec::new(),
        }
    }

    pub fn diagnose(&mut self, code: &str, message: impl Into<String>) {
        self.diagnostics.push(Diagnostic { code: code.to_string(), message: message.into() });
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => serde_json::to_string_pretty(self).expect("report serializes") + "\n",
            Format::Text => self.render_text(),
            Format::Csv => self.render_csv(),
        }
    }

    fn render_text(&self) -> String {
        let m = &self.metadata;
        let mut out = String::new();
        let _ = writeln!(out, "{} (schema {}, version {})", m.command, self.schema_version, m.version);
        let seed = m.seed.map_or_else(|| "none".to_string(), |s| s.to_string());
        let _ = writeln!(out, "seed {seed}  config {}  at {}", m.config_hash, m.created_at);
        for t in &self.tables {
            out.push('\n');
            t.render_text(&mut out);
        }
        if !self.diagnostics.is_empty() {
            let _ = writeln!(out, "\n== diagnostics ==");
            for d in &self.diagnostics {
                let _ = writeln!(out, "{}: {}", d.code, d.message);
            }
        }
        out
    }

    /// Tables one after another, each introduced by a `# table` line.
    fn render_csv(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tables.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "# table: {}", t.name);
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(t.columns.iter().map(|c| c.name.as_str())).expect("in-memory write");
            for r in &t.rows {
                w.write_record(r.iter().map(Value::render)).expect("in-memory write");
            }
            out.push_str(&String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8"));
        }
        out
    }
}

/// Significance marker: `**` for p < 0.05, `*` for p < 0.1, `ns` otherwise.
pub fn significance_marker(p: f64) -> &'static str {
    if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        "ns"
    }
}
