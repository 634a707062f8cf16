//! Notebook document parsing and sidecar table loading.
//!
//! Documents follow the `.ipynb` JSON layout: a top-level `cells` array whose
//! entries carry `cell_type`, `source` and (for code cells) `outputs`. Only
//! code cells are kept; their execution order is document order.
//!
//! Tables are never produced by running code. A per-notebook manifest maps
//! variable or file names to comma-separated files which are loaded into
//! [`TableData`] values.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::Deserialize;
use serde_json::Value;
use tracing::warn;

use crate::error::IngestError;
use crate::model::{canonical_value, Column, Notebook, NotebookId, Output, OutputKind, TableData};

/// Configurable patterns used for import and table-reference detection.
#[derive(Debug, Clone)]
pub struct SourcePatterns {
    /// Each pattern must define a `mods` capture holding a comma-separated
    /// module list; only the root name before the first period is kept.
    pub imports: Vec<Regex>,
    /// Function names whose call produces a table (`read_csv`, ...).
    pub readers: Vec<String>,
    reader_call: Regex,
}

const DEFAULT_READERS: &[&str] = &[
    "read_csv",
    "read_table",
    "read_excel",
    "read_json",
    "read_parquet",
    "read_sql",
    "read_feather",
    "DataFrame",
];

impl SourcePatterns {
    pub fn new(imports: Vec<Regex>, readers: Vec<String>) -> Self {
        let alternation =
            readers.iter().map(|r| regex::escape(r)).collect::<Vec<_>>().join("|");
        let reader_call = if readers.is_empty() {
            Regex::new(r"[^\s\S]").unwrap()
        } else {
            Regex::new(&format!(r"\b(?:{alternation})\s*\(")).unwrap()
        };
        Self { imports, readers, reader_call }
    }
}

impl Default for SourcePatterns {
    fn default() -> Self {
        let imports = vec![
            Regex::new(r"^\s*import\s+(?P<mods>[A-Za-z_][\w.]*(?:\s+as\s+\w+)?(?:\s*,\s*[A-Za-z_][\w.]*(?:\s+as\s+\w+)?)*)")
                .unwrap(),
            Regex::new(r"^\s*from\s+(?P<mods>[A-Za-z_][\w.]*)\s+import\b").unwrap(),
        ];
        Self::new(imports, DEFAULT_READERS.iter().map(|s| s.to_string()).collect())
    }
}

/// Top-level module names imported by `source`.
pub fn extract_libraries(source: &str) -> BTreeSet<String> {
    extract_libraries_with(source, &SourcePatterns::default())
}

pub fn extract_libraries_with(source: &str, patterns: &SourcePatterns) -> BTreeSet<String> {
    let mut libs = BTreeSet::new();
    for line in source.lines() {
        for re in &patterns.imports {
            let Some(caps) = re.captures(line) else { continue };
            let Some(mods) = caps.name("mods") else { continue };
            for item in mods.as_str().split(',') {
                let Some(path) = item.split_whitespace().next() else { continue };
                let root = path.split('.').next().unwrap_or_default();
                if is_identifier(root) {
                    libs.insert(root.to_string());
                }
            }
        }
    }
    libs
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c == '_' || c.is_ascii_alphabetic())
        && chars.all(|c| c == '_' || c.is_ascii_alphanumeric())
}

/// Table variables read and written by one cell.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TableRefs {
    pub reads: BTreeSet<String>,
    pub writes: BTreeSet<String>,
}

/// Detects table reads and writes given the set of table variables known
/// before this cell runs. Names written on an earlier line of the same cell
/// count as known for later lines.
pub fn detect_table_refs(source: &str, known: &BTreeSet<String>) -> TableRefs {
    detect_table_refs_with(source, known, &SourcePatterns::default())
}

pub fn detect_table_refs_with(
    source: &str,
    known: &BTreeSet<String>,
    patterns: &SourcePatterns,
) -> TableRefs {
    static ASSIGN: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let assign =
        ASSIGN.get_or_init(|| Regex::new(r"^\s*([A-Za-z_]\w*)\s*=([^=].*)?$").unwrap());

    let mut known = known.clone();
    let mut refs = TableRefs::default();
    for line in source.lines() {
        if let Some(caps) = assign.captures(line) {
            let lhs = &caps[1];
            let rhs = caps.get(2).map_or("", |m| m.as_str());
            let rhs_idents = identifiers(rhs);
            refs.reads.extend(rhs_idents.iter().filter(|t| known.contains(**t)).map(|t| t.to_string()));
            let derives = rhs_idents.first().is_some_and(|t| known.contains(*t));
            if derives || patterns.reader_call.is_match(rhs) {
                refs.writes.insert(lhs.to_string());
                known.insert(lhs.to_string());
            }
        } else {
            refs.reads.extend(
                identifiers(line).into_iter().filter(|t| known.contains(*t)).map(str::to_string),
            );
        }
    }
    refs
}

/// Identifier tokens that are not attribute accesses (`x.attr`).
fn identifiers(text: &str) -> Vec<&str> {
    static IDENT: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let ident = IDENT.get_or_init(|| Regex::new(r"[A-Za-z_]\w*").unwrap());
    let bytes = text.as_bytes();
    ident
        .find_iter(text)
        .filter(|m| {
            let start = m.start();
            let prev = if start > 0 { bytes[start - 1] } else { b' ' };
            prev != b'.' && !prev.is_ascii_digit()
        })
        .map(|m| m.as_str())
        .collect()
}

#[derive(Deserialize)]
struct RawDocument {
    cells: Vec<RawCell>,
}

#[derive(Deserialize)]
struct RawCell {
    cell_type: String,
    #[serde(default, deserialize_with = "string_or_lines")]
    source: String,
    #[serde(default)]
    outputs: Vec<Value>,
}

fn string_or_lines<'de, D: serde::Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Text {
        One(String),
        Lines(Vec<String>),
    }
    Ok(match Text::deserialize(d)? {
        Text::One(s) => s,
        Text::Lines(lines) => lines.concat(),
    })
}

/// Parses a notebook document. Markdown and raw cells are skipped; output
/// records of unknown type are skipped with a warning.
pub fn parse_notebook(document: &[u8], id: NotebookId) -> Result<Notebook, IngestError> {
    parse_notebook_with(document, id, &SourcePatterns::default())
}

pub fn parse_notebook_with(
    document: &[u8],
    id: NotebookId,
    patterns: &SourcePatterns,
) -> Result<Notebook, IngestError> {
    let raw: RawDocument = serde_json::from_slice(document)
        .map_err(|e| IngestError::MalformedDocument(e.to_string()))?;
    let code: Vec<RawCell> = raw.cells.into_iter().filter(|c| c.cell_type == "code").collect();
    if code.is_empty() {
        return Err(IngestError::EmptyNotebook);
    }
    let mut notebook = Notebook::new(id, code.iter().map(|c| c.source.clone()));
    for (index, cell) in code.iter().enumerate() {
        notebook.libraries.extend(extract_libraries_with(&cell.source, patterns));
        for record in &cell.outputs {
            match classify_output(record) {
                Ok(kind) => notebook.outputs.push(Output { cell: index, kind }),
                Err(e) => warn!(notebook = %notebook.id, cell = index, "skipping output: {e}"),
            }
        }
    }
    Ok(notebook)
}

/// Classifies one output record by its payload.
pub fn classify_output(record: &Value) -> Result<OutputKind, IngestError> {
    let output_type = record.get("output_type").and_then(Value::as_str).unwrap_or_default();
    match output_type {
        "stream" | "error" => Ok(OutputKind::Text),
        "execute_result" | "display_data" | "update_display_data" => {
            let data = record.get("data").and_then(Value::as_object).ok_or_else(|| {
                IngestError::UnknownOutputType(format!("{output_type} without data"))
            })?;
            if data.keys().any(|k| k.starts_with("image/")) {
                Ok(OutputKind::Png)
            } else if data.contains_key("application/vnd.dataresource+json")
                || data.get("text/html").is_some_and(|html| text_of(html).contains("<table"))
            {
                Ok(OutputKind::DataFrame)
            } else if data.contains_key("text/plain") || data.contains_key("text/html") {
                Ok(OutputKind::Text)
            } else {
                let keys: Vec<&str> = data.keys().map(String::as_str).collect();
                Err(IngestError::UnknownOutputType(keys.join(",")))
            }
        }
        other => Err(IngestError::UnknownOutputType(other.to_string())),
    }
}

fn text_of(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts.iter().filter_map(Value::as_str).collect(),
        _ => String::new(),
    }
}

/// Maps table names (variables or file names) to delimited data files.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TableManifest {
    pub entries: BTreeMap<String, PathBuf>,
}

impl TableManifest {
    /// Parses `{ "<name>": "<relative path>" }`; relative paths are resolved
    /// against `base_dir`.
    pub fn from_json(bytes: &[u8], base_dir: &Path) -> Result<Self, IngestError> {
        let raw: BTreeMap<String, String> = serde_json::from_slice(bytes)
            .map_err(|e| IngestError::InvalidManifest(e.to_string()))?;
        let entries = raw
            .into_iter()
            .map(|(name, path)| {
                let p = PathBuf::from(path);
                let p = if p.is_absolute() { p } else { base_dir.join(p) };
                (name, p)
            })
            .collect();
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let bytes = std::fs::read(path).map_err(|e| IngestError::InvalidManifest(format!(
            "{}: {e}",
            path.display()
        )))?;
        Self::from_json(&bytes, path.parent().unwrap_or(Path::new(".")))
    }
}

/// Loads every manifest entry and attaches it to the notebook. Cells,
/// outputs and libraries are left untouched.
pub fn attach_tables(mut n: Notebook, manifest: &TableManifest) -> Result<Notebook, IngestError> {
    for (name, path) in &manifest.entries {
        let table = load_table_csv(name, path)?;
        n.tables.retain(|t| &t.name != name);
        n.tables.push(table);
    }
    Ok(n)
}

/// Reads a comma-separated file: header row gives column names, remaining
/// rows contribute canonical values to each column's distinct-value set.
pub fn load_table_csv(name: &str, path: &Path) -> Result<TableData, IngestError> {
    let err = |cause: String| IngestError::TableLoadError { path: path.to_path_buf(), cause };
    let file = std::fs::File::open(path).map_err(|e| err(e.to_string()))?;
    read_table_csv(name, file).map_err(err)
}

pub fn read_table_csv(name: &str, reader: impl std::io::Read) -> Result<TableData, String> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let mut seen = BTreeSet::new();
    for h in &headers {
        if !seen.insert(h) {
            return Err(format!("duplicate column name `{h}`"));
        }
    }
    let mut values: Vec<BTreeSet<String>> = vec![BTreeSet::new(); headers.len()];
    for record in rdr.records() {
        let record = record.map_err(|e| e.to_string())?;
        for (col, raw) in values.iter_mut().zip(record.iter()) {
            if let Some(v) = canonical_value(raw) {
                col.insert(v);
            }
        }
    }
    let columns = headers
        .iter()
        .zip(values)
        .map(|(h, vals)| Column { name: h.to_string(), values: vals })
        .collect();
    Ok(TableData::new(name, columns))
}
