//! Plain-file corpus persistence.
//!
//! Layout of one corpus directory:
//!
//! ```text
//! manifest.json            version, ids, file paths, topology signatures
//! graphs/<id>.json         nodes, edges, libraries
//! tables/<id>/<name>.csv   one file per data node
//! ```
//!
//! The manifest is read eagerly; graph bodies are read on first use so that
//! index pruning never touches the files of pruned notebooks. Saving and
//! loading the same directory concurrently is not supported.

use std::collections::{BTreeSet, HashSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::StoreError;
use crate::graph::{Node, NodeAttr, NodeLabel, TopologySignature, WorkflowGraph};
use crate::ingest::read_table_csv;
use crate::model::{NotebookId, TableData};

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub notebooks: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: NotebookId,
    pub graph: PathBuf,
    pub tables: Vec<PathBuf>,
    pub signature: TopologySignature,
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphFile {
    id: NotebookId,
    libraries: BTreeSet<String>,
    nodes: Vec<GraphFileNode>,
    edges: Vec<(String, String)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphFileNode {
    id: String,
    label: NodeLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attribute: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    table: Option<TableRef>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TableRef {
    name: String,
    path: PathBuf,
}

struct Entry {
    id: NotebookId,
    signature: TopologySignature,
    graph_file: Option<PathBuf>,
    body: OnceLock<Arc<WorkflowGraph>>,
}

/// A set of workflow graphs with their topology signatures.
pub struct Corpus {
    root: Option<PathBuf>,
    entries: Vec<Entry>,
    body_reads: AtomicUsize,
}

impl std::fmt::Debug for Corpus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Corpus").field("root", &self.root).field("len", &self.entries.len()).finish()
    }
}

impl Corpus {
    /// In-memory corpus; signatures are computed from the graphs.
    pub fn from_graphs(graphs: Vec<WorkflowGraph>) -> Result<Self, StoreError> {
        let mut seen = HashSet::new();
        let mut entries = Vec::with_capacity(graphs.len());
        for g in graphs {
            if !seen.insert(g.owner.clone()) {
                return Err(StoreError::DuplicateId(g.owner));
            }
            let body = OnceLock::new();
            let entry = Entry { id: g.owner.clone(), signature: g.signature(), graph_file: None, body };
            let _ = entry.body.set(Arc::new(g));
            entries.push(entry);
        }
        Ok(Self { root: None, entries, body_reads: AtomicUsize::new(0) })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, i: usize) -> &NotebookId {
        &self.entries[i].id
    }

    pub fn ids(&self) -> impl Iterator<Item = &NotebookId> {
        self.entries.iter().map(|e| &e.id)
    }

    pub fn position(&self, id: &NotebookId) -> Option<usize> {
        self.entries.iter().position(|e| &e.id == id)
    }

    /// Signature as recorded in the manifest.
    pub fn signature(&self, i: usize) -> &TopologySignature {
        &self.entries[i].signature
    }

    /// Graph body, read from disk on first access.
    pub fn graph(&self, i: usize) -> Result<Arc<WorkflowGraph>, StoreError> {
        let entry = &self.entries[i];
        if let Some(g) = entry.body.get() {
            return Ok(Arc::clone(g));
        }
        let (Some(root), Some(file)) = (&self.root, &entry.graph_file) else {
            return Err(StoreError::CorruptGraph(entry.id.clone(), "graph body unavailable".into()));
        };
        self.body_reads.fetch_add(1, Ordering::Relaxed);
        let g = read_graph(root, file, &entry.id)?;
        let _ = entry.body.set(Arc::new(g));
        Ok(Arc::clone(entry.body.get().expect("body just set")))
    }

    /// Number of graph bodies read from disk so far.
    pub fn body_reads(&self) -> usize {
        self.body_reads.load(Ordering::Relaxed)
    }

    /// Loads every body, returning the graphs in corpus order.
    pub fn graphs(&self) -> Result<Vec<Arc<WorkflowGraph>>, StoreError> {
        (0..self.len()).map(|i| self.graph(i)).collect()
    }
}

fn file_stem(raw: &str) -> String {
    let s: String = raw
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    match s.trim_start_matches('.') {
        "" => "_".to_string(),
        t => t.to_string(),
    }
}

fn unique(stem: String, taken: &mut HashSet<String>) -> String {
    let mut name = stem.clone();
    let mut k = 1;
    while !taken.insert(name.to_ascii_lowercase()) {
        name = format!("{stem}-{k}");
        k += 1;
    }
    name
}

fn label_rank(l: NodeLabel) -> u8 {
    match l {
        NodeLabel::Code => 0,
        NodeLabel::Data => 1,
        NodeLabel::Output => 2,
        NodeLabel::Wildcard => 3,
    }
}

/// Writes the corpus and returns its manifest. The manifest is written last,
/// through a temporary file and a rename.
pub fn save_corpus(graphs: &[WorkflowGraph], dir: &Path) -> Result<CorpusManifest, StoreError> {
    let mut ids = HashSet::new();
    for g in graphs {
        if !ids.insert(&g.owner) {
            return Err(StoreError::DuplicateId(g.owner.clone()));
        }
    }
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| StoreError::io(p, e)
    };
    std::fs::create_dir_all(dir.join("graphs")).map_err(io(dir))?;
    std::fs::create_dir_all(dir.join("tables")).map_err(io(dir))?;

    let mut stems = HashSet::new();
    let mut manifest = CorpusManifest { version: FORMAT_VERSION, notebooks: Vec::with_capacity(graphs.len()) };
    for g in graphs {
        let stem = unique(file_stem(g.owner.as_str()), &mut stems);
        let graph_rel = PathBuf::from("graphs").join(format!("{stem}.json"));

        let mut order: Vec<usize> = (0..g.dag.len()).collect();
        order.sort_by_key(|&v| (label_rank(g.dag.label(v)), v));

        let mut table_names = HashSet::new();
        let mut tables = Vec::new();
        let mut nodes = Vec::with_capacity(order.len());
        for &v in &order {
            let node = g.dag.node(v);
            let mut file_node =
                GraphFileNode { id: node.name.clone(), label: node.label(), attribute: None, table: None };
            match &node.attr {
                NodeAttr::Code(code) => file_node.attribute = Some(code.source().to_string()),
                NodeAttr::Output(kind) => file_node.attribute = Some(kind.as_str().to_string()),
                NodeAttr::Data(table) => {
                    let t_stem = unique(file_stem(&table.name), &mut table_names);
                    let rel = PathBuf::from("tables").join(&stem).join(format!("{t_stem}.csv"));
                    let abs = dir.join(&rel);
                    std::fs::create_dir_all(abs.parent().unwrap()).map_err(io(&abs))?;
                    write_table_csv(table, &abs)?;
                    tables.push(rel.clone());
                    file_node.table = Some(TableRef { name: table.name.clone(), path: rel });
                }
                NodeAttr::Wildcard => unreachable!("workflow graphs carry no wildcards"),
            }
            nodes.push(file_node);
        }
        let edges = g
            .dag
            .edges()
            .iter()
            .map(|&(u, v)| (g.dag.node(u).name.clone(), g.dag.node(v).name.clone()))
            .collect();
        let file = GraphFile { id: g.owner.clone(), libraries: g.libraries.clone(), nodes, edges };
        let abs = dir.join(&graph_rel);
        let bytes = serde_json::to_vec_pretty(&file).expect("graph serializes");
        std::fs::write(&abs, bytes).map_err(io(&abs))?;

        manifest.notebooks.push(ManifestEntry {
            id: g.owner.clone(),
            graph: graph_rel,
            tables,
            signature: g.signature(),
        });
    }

    let tmp = dir.join(format!(".{MANIFEST}.tmp"));
    let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    let mut f = std::fs::File::create(&tmp).map_err(io(&tmp))?;
    f.write_all(&bytes).and_then(|_| f.sync_all()).map_err(io(&tmp))?;
    std::fs::rename(&tmp, dir.join(MANIFEST)).map_err(io(dir))?;
    Ok(manifest)
}

/// Writes distinct values column-wise; shorter columns are padded with empty
/// cells, which the reader drops.
pub fn write_table_csv(table: &TableData, path: &Path) -> Result<(), StoreError> {
    let io = |e: std::io::Error| StoreError::io(path, e);
    let file = std::fs::File::create(path).map_err(io)?;
    if table.columns.is_empty() {
        return Ok(());
    }
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| StoreError::io(path, std::io::Error::other(e));
    w.write_record(table.columns.iter().map(|c| c.name.as_str())).map_err(csv_err)?;
    let mut iters: Vec<_> = table.columns.iter().map(|c| c.values.iter()).collect();
    let rows = table.columns.iter().map(|c| c.values.len()).max().unwrap_or(0);
    for _ in 0..rows {
        let row: Vec<&str> = iters.iter_mut().map(|it| it.next().map_or("", String::as_str)).collect();
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(io)
}

pub fn read_manifest(dir: &Path) -> Result<CorpusManifest, StoreError> {
    let path = dir.join(MANIFEST);
    let bytes = std::fs::read(&path).map_err(|e| StoreError::io(&path, e))?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| StoreError::CorruptManifest(e.to_string()))?;
    let version = value.get("version").and_then(serde_json::Value::as_u64).unwrap_or(0) as u32;
    if version != FORMAT_VERSION {
        return Err(StoreError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    serde_json::from_value(value).map_err(|e| StoreError::CorruptManifest(e.to_string()))
}

/// Opens a corpus directory. Only the manifest is read here.
pub fn load_corpus(dir: &Path) -> Result<Corpus, StoreError> {
    let manifest = read_manifest(dir)?;
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(manifest.notebooks.len());
    for e in manifest.notebooks {
        if !seen.insert(e.id.clone()) {
            return Err(StoreError::DuplicateId(e.id));
        }
        entries.push(Entry {
            id: e.id,
            signature: e.signature,
            graph_file: Some(e.graph),
            body: OnceLock::new(),
        });
    }
    Ok(Corpus { root: Some(dir.to_path_buf()), entries, body_reads: AtomicUsize::new(0) })
}

fn read_graph(root: &Path, file: &Path, id: &NotebookId) -> Result<WorkflowGraph, StoreError> {
    let corrupt = |msg: String| StoreError::CorruptGraph(id.clone(), msg);
    let bytes = std::fs::read(root.join(file)).map_err(|e| corrupt(e.to_string()))?;
    let gf: GraphFile = serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
    if &gf.id != id {
        return Err(corrupt(format!("graph file belongs to {}", gf.id)));
    }
    let mut nodes = Vec::with_capacity(gf.nodes.len());
    for n in gf.nodes {
        let node = match (n.label, n.attribute, n.table) {
            (NodeLabel::Code, Some(src), None) => Node::code(n.id, src),
            (NodeLabel::Output, Some(kind), None) => {
                Node::output(n.id, kind.parse().map_err(|e: crate::error::ModelError| corrupt(e.to_string()))?)
            }
            (NodeLabel::Data, None, Some(t)) => {
                let path = root.join(&t.path);
                let f = std::fs::File::open(&path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
                Node::data(n.id, read_table_csv(&t.name, f).map_err(corrupt)?)
            }
            (label, ..) => return Err(corrupt(format!("malformed {} node `{}`", label.as_str(), n.id))),
        };
        nodes.push(node);
    }
    let index: std::collections::HashMap<&str, usize> =
        nodes.iter().enumerate().map(|(i, n)| (n.name.as_str(), i)).collect();
    let mut edges = Vec::with_capacity(gf.edges.len());
    for (a, b) in &gf.edges {
        match (index.get(a.as_str()), index.get(b.as_str())) {
            (Some(&u), Some(&v)) => edges.push((u, v)),
            _ => return Err(corrupt(format!("edge ({a}, {b}) references an unknown node"))),
        }
    }
    WorkflowGraph::from_parts(gf.id, nodes, edges, gf.libraries).map_err(|e| corrupt(e.to_string()))
}

/// Ids whose stored signature differs from one recomputed from the graph
/// body (unreadable bodies count as stale).
pub fn verify_index(corpus: &Corpus) -> Vec<NotebookId> {
    (0..corpus.len())
        .filter(|&i| match corpus.graph(i) {
            Ok(g) => g.signature() != *corpus.signature(i),
            Err(_) => true,
        })
        .map(|i| corpus.id(i).clone())
        .collect()
}
