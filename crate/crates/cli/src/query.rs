//! Query files: a graph or set query plus optional search settings.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nbsim::graph::{NodeAttr, NodeLabel, QueryGraph, QueryGraphSpec, QueryNodeSpec};
use nbsim::ingest::load_table_csv;
use nbsim::model::{OutputKind, Weights};
use nbsim::search::{SetContents, Toggles};
use nbsim::store::write_table_csv;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
struct QueryFile {
    #[serde(flatten)]
    body: QueryBody,
    #[serde(default)]
    weights: Option<Weights>,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    theta: Option<NodeLabel>,
    #[serde(default)]
    toggles: Option<ToggleSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
enum QueryBody {
    Graph(QueryGraphSpec),
    Set(SetSpec),
}

#[derive(Debug, Deserialize)]
struct SetSpec {
    #[serde(default)]
    code: Option<String>,
    /// Alternative to `code`, relative to the query file.
    #[serde(default)]
    code_file: Option<PathBuf>,
    /// Delimited table files, named after their file stem.
    #[serde(default)]
    tables: Vec<PathBuf>,
    #[serde(default)]
    outputs: Vec<OutputKind>,
    #[serde(default)]
    libraries: BTreeSet<String>,
}

#[derive(Debug, Default, Deserialize)]
struct ToggleSpec {
    pruning: Option<bool>,
    ordering: Option<bool>,
    caching: Option<bool>,
    indexing: Option<bool>,
}

pub enum Query {
    Graph(QueryGraph),
    Set(SetContents),
}

pub struct LoadedQuery {
    pub query: Query,
    pub weights: Weights,
    pub k: Option<usize>,
    pub theta: Option<NodeLabel>,
    pub toggles: Toggles,
}

pub fn load_query(path: &Path) -> Result<LoadedQuery> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read query file {}", path.display()))?;
    let file: QueryFile =
        serde_json::from_slice(&bytes).with_context(|| format!("invalid query file {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let (query, default_weights) = match file.body {
        QueryBody::Graph(spec) => (Query::Graph(spec.build(base)?), Weights::GRAPH_DEFAULT),
        QueryBody::Set(spec) => (Query::Set(set_query(spec, base)?), Weights::SET_DEFAULT),
    };
    let t = file.toggles.unwrap_or_default();
    let toggles = Toggles {
        pruning: t.pruning.unwrap_or(true),
        ordering: t.ordering.unwrap_or(true),
        caching: t.caching.unwrap_or(true),
        indexing: t.indexing.unwrap_or(true),
    };
    Ok(LoadedQuery { query, weights: file.weights.unwrap_or(default_weights), k: file.k, theta: file.theta, toggles })
}

fn set_query(spec: SetSpec, base: &Path) -> Result<SetContents> {
    let code = match (spec.code, spec.code_file) {
        (Some(_), Some(_)) => bail!("set query gives both `code` and `code_file`"),
        (Some(code), None) => code,
        (None, Some(file)) => {
            let p = base.join(file);
            std::fs::read_to_string(&p).with_context(|| format!("cannot read code file {}", p.display()))?
        }
        (None, None) => String::new(),
    };
    let mut tables = Vec::with_capacity(spec.tables.len());
    for rel in &spec.tables {
        let p = base.join(rel);
        let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        tables.push(load_table_csv(&name, &p)?);
    }
    Ok(SetContents::new(code, tables, spec.outputs, spec.libraries))
}

/// Writes `q` as a graph query file; data nodes go to CSV files in a
/// directory named after the file.
pub fn write_graph_query(q: &QueryGraph, path: &Path) -> Result<()> {
    let stem = path.file_stem().context("query path has no file name")?.to_string_lossy().into_owned();
    let base = path.parent().unwrap_or(Path::new("."));
    let mut nodes = Vec::with_capacity(q.dag.len());
    for node in q.dag.nodes() {
        let attribute = match &node.attr {
            NodeAttr::Code(c) => Some(c.source().to_string()),
            NodeAttr::Output(k) => Some(k.as_str().to_string()),
            NodeAttr::Wildcard => None,
            NodeAttr::Data(t) => {
                let rel = PathBuf::from(&stem).join(format!("{}.csv", node.name));
                std::fs::create_dir_all(base.join(&stem))?;
                write_table_csv(t, &base.join(&rel))?;
                Some(rel.to_string_lossy().into_owned())
            }
        };
        nodes.push(QueryNodeSpec { id: node.name.clone(), label: node.label(), attribute });
    }
    let edges = q
        .dag
        .edges()
        .iter()
        .map(|&(a, b)| (q.dag.node(a).name.clone(), q.dag.node(b).name.clone()))
        .collect();
    let spec = QueryGraphSpec { nodes, edges, libraries: q.libraries.clone() };
    let mut value = serde_json::to_value(&spec)?;
    value.as_object_mut().expect("spec is an object").insert("mode".into(), "graph".into());
    std::fs::write(path, serde_json::to_vec_pretty(&value)?)?;
    Ok(())
}
