//! Core domain types: notebooks, their cells, tables, outputs, and the
//! per-content weights used by every similarity measure.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::ModelError;

/// 256-bit content digest used for cache keys and canonical ordering.
pub type Digest = [u8; 32];

/// Stable notebook identifier, unique within one corpus.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NotebookId(String);

impl NotebookId {
    pub fn new(id: impl Into<String>) -> Result<Self, ModelError> {
        let id = id.into();
        if id.is_empty() {
            return Err(ModelError::EmptyId);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NotebookId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputKind {
    DataFrame,
    Text,
    Png,
}

impl OutputKind {
    pub const ALL: [OutputKind; 3] = [OutputKind::DataFrame, OutputKind::Text, OutputKind::Png];

    pub fn as_str(self) -> &'static str {
        match self {
            OutputKind::DataFrame => "dataframe",
            OutputKind::Text => "text",
            OutputKind::Png => "png",
        }
    }
}

impl std::str::FromStr for OutputKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dataframe" => Ok(OutputKind::DataFrame),
            "text" => Ok(OutputKind::Text),
            "png" => Ok(OutputKind::Png),
            _ => Err(ModelError::UnknownOutputKind(s.to_string())),
        }
    }
}

/// One column of a table: a name and the set of distinct canonical values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub values: BTreeSet<String>,
}

impl Column {
    pub fn new(name: impl Into<String>, values: impl IntoIterator<Item = String>) -> Self {
        Self { name: name.into(), values: values.into_iter().collect() }
    }
}

/// Tabular data reduced to per-column distinct-value sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableData {
    pub name: String,
    pub columns: Vec<Column>,
    #[serde(skip)]
    digest: OnceLock<Digest>,
}

impl PartialEq for TableData {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.columns == other.columns
    }
}

impl Eq for TableData {}

impl TableData {
    pub fn new(name: impl Into<String>, columns: Vec<Column>) -> Self {
        Self { name: name.into(), columns, digest: OnceLock::new() }
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    /// Digest over the column value sets in order. Column names and the table
    /// name do not influence any measure, so they are not part of the digest.
    pub fn content_digest(&self) -> &Digest {
        self.digest.get_or_init(|| {
            let mut h = Sha256::new();
            h.update(b"table\0");
            h.update((self.columns.len() as u64).to_le_bytes());
            for col in &self.columns {
                h.update((col.values.len() as u64).to_le_bytes());
                for v in &col.values {
                    h.update((v.len() as u64).to_le_bytes());
                    h.update(v.as_bytes());
                }
            }
            h.finalize().into()
        })
    }
}

/// Canonical rendering of a raw table cell. Surrounding whitespace is
/// trimmed and numbers are rendered in shortest decimal form so that `1`,
/// `1.0` and ` 1 ` collapse to the same value. Empty cells yield `None`.
pub fn canonical_value(raw: &str) -> Option<String> {
    let t = raw.trim();
    if t.is_empty() {
        return None;
    }
    if let Ok(i) = t.parse::<i64>() {
        return Some(i.to_string());
    }
    match t.parse::<f64>() {
        Ok(f) if f.is_finite() && t.bytes().any(|b| b.is_ascii_digit()) => Some(if f == 0.0 {
            "0".to_string()
        } else {
            f.to_string()
        }),
        _ => Some(t.to_string()),
    }
}

/// An output record produced by a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Output {
    pub cell: usize,
    pub kind: OutputKind,
}

/// A computational notebook reduced to its code cells, tables, outputs and
/// imported libraries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notebook {
    pub id: NotebookId,
    pub cells: Vec<Cell>,
    pub tables: Vec<TableData>,
    pub outputs: Vec<Output>,
    pub libraries: BTreeSet<String>,
}

impl Notebook {
    pub fn new(id: NotebookId, sources: impl IntoIterator<Item = String>) -> Self {
        let cells = sources
            .into_iter()
            .enumerate()
            .map(|(index, source)| Cell { index, source })
            .collect();
        Self { id, cells, tables: Vec::new(), outputs: Vec::new(), libraries: BTreeSet::new() }
    }
}

/// Returns a description of every invariant the notebook violates.
pub fn validate_notebook(n: &Notebook) -> Vec<String> {
    let mut violations = Vec::new();
    if n.id.as_str().is_empty() {
        violations.push("empty notebook id".to_string());
    }
    if n.cells.is_empty() {
        violations.push("cells empty".to_string());
    }
    for (pos, cell) in n.cells.iter().enumerate() {
        if cell.index != pos {
            violations.push(format!("cell index {} at position {}", cell.index, pos));
        }
    }
    for out in &n.outputs {
        if out.cell >= n.cells.len() {
            violations.push(format!("dangling output cell-index {}", out.cell));
        }
    }
    let mut table_names = HashSet::new();
    for table in &n.tables {
        if !table_names.insert(table.name.as_str()) {
            violations.push(format!("duplicate table name {}", table.name));
        }
        let mut cols = HashSet::new();
        for col in &table.columns {
            if !cols.insert(col.name.as_str()) {
                violations.push(format!("duplicate column {} in table {}", col.name, table.name));
            }
        }
    }
    violations
}

/// Importance of code, tables, outputs and libraries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Weights {
    pub code: f64,
    pub data: f64,
    pub output: f64,
    pub library: f64,
}

impl Weights {
    /// Graph-based default `(w_S, w_D, w_O, w_L) = (8, 1, 1, 1)`.
    pub const GRAPH_DEFAULT: Weights = Weights { code: 8.0, data: 1.0, output: 1.0, library: 1.0 };
    /// Set-based default `(w_S, w_D, w_O, w_L) = (32, 2, 1, 1)`.
    pub const SET_DEFAULT: Weights = Weights { code: 32.0, data: 2.0, output: 1.0, library: 1.0 };

    pub fn new(code: f64, data: f64, output: f64, library: f64) -> Result<Self, ModelError> {
        let w = Weights { code, data, output, library };
        w.check()?;
        Ok(w)
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let all = [self.code, self.data, self.output, self.library];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ModelError::InvalidWeights("weights must be finite and non-negative"));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(ModelError::InvalidWeights("at least one weight must be positive"));
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.code + self.data + self.output + self.library
    }
}

impl<'de> Deserialize<'de> for Weights {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            code: f64,
            data: f64,
            output: f64,
            library: f64,
        }
        let r = Raw::deserialize(d)?;
        Weights::new(r.code, r.data, r.output, r.library).map_err(serde::de::Error::custom)
    }
}
