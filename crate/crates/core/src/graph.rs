//! Workflow graphs, query graphs and their topology signatures.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::GraphError;
use crate::ingest::{detect_table_refs_with, load_table_csv, SourcePatterns};
use crate::model::{validate_notebook, Notebook, NotebookId, OutputKind, TableData};
use crate::sim::CodeText;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeLabel {
    Code,
    Data,
    Output,
    /// Reachability placeholder, only valid in query graphs.
    #[serde(rename = "any")]
    Wildcard,
}

impl NodeLabel {
    pub const CONTENT: [NodeLabel; 3] = [NodeLabel::Code, NodeLabel::Data, NodeLabel::Output];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeLabel::Code => "code",
            NodeLabel::Data => "data",
            NodeLabel::Output => "output",
            NodeLabel::Wildcard => "any",
        }
    }
}

impl std::str::FromStr for NodeLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "code" => Ok(NodeLabel::Code),
            "data" => Ok(NodeLabel::Data),
            "output" => Ok(NodeLabel::Output),
            "any" | "*" => Ok(NodeLabel::Wildcard),
            _ => Err(format!("unknown node label `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeAttr {
    Code(Arc<CodeText>),
    Data(Arc<TableData>),
    Output(OutputKind),
    Wildcard,
}

impl NodeAttr {
    pub fn label(&self) -> NodeLabel {
        match self {
            NodeAttr::Code(_) => NodeLabel::Code,
            NodeAttr::Data(_) => NodeLabel::Data,
            NodeAttr::Output(_) => NodeLabel::Output,
            NodeAttr::Wildcard => NodeLabel::Wildcard,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub attr: NodeAttr,
}

impl Node {
    pub fn new(name: impl Into<String>, attr: NodeAttr) -> Self {
        Self { name: name.into(), attr }
    }

    pub fn code(name: impl Into<String>, source: impl Into<String>) -> Self {
        Self::new(name, NodeAttr::Code(Arc::new(CodeText::new(source))))
    }

    pub fn data(name: impl Into<String>, table: TableData) -> Self {
        Self::new(name, NodeAttr::Data(Arc::new(table)))
    }

    pub fn output(name: impl Into<String>, kind: OutputKind) -> Self {
        Self::new(name, NodeAttr::Output(kind))
    }

    pub fn wildcard(name: impl Into<String>) -> Self {
        Self::new(name, NodeAttr::Wildcard)
    }

    pub fn label(&self) -> NodeLabel {
        self.attr.label()
    }
}

/// Node list plus a deduplicated, sorted edge set with adjacency lists.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDag {
    nodes: Vec<Node>,
    edges: Vec<(usize, usize)>,
    succ: Vec<Vec<usize>>,
    pred: Vec<Vec<usize>>,
}

impl LabeledDag {
    fn new(nodes: Vec<Node>, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        let mut edges: Vec<(usize, usize)> = edges.into_iter().collect();
        edges.sort_unstable();
        edges.dedup();
        let n = nodes.len();
        let mut succ = vec![Vec::new(); n];
        let mut pred = vec![Vec::new(); n];
        for &(u, v) in &edges {
            if u >= n || v >= n {
                return Err(GraphError::Construction(format!("edge ({u}, {v}) out of range")));
            }
            succ[u].push(v);
            pred[v].push(u);
        }
        let mut names = HashSet::new();
        for node in &nodes {
            if !names.insert(node.name.as_str()) {
                return Err(GraphError::Construction(format!("duplicate node id `{}`", node.name)));
            }
        }
        let dag = Self { nodes, edges, succ, pred };
        assert_dag(&dag)?;
        Ok(dag)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn successors(&self, v: usize) -> &[usize] {
        &self.succ[v]
    }

    pub fn predecessors(&self, v: usize) -> &[usize] {
        &self.pred[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.succ[u].binary_search(&v).is_ok()
    }

    pub fn label(&self, v: usize) -> NodeLabel {
        self.nodes[v].label()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Nodes in a topological order (Kahn, smallest index first).
    pub fn topological_order(&self) -> Vec<usize> {
        kahn(self.nodes.len(), &self.succ, &self.pred).0
    }
}

fn kahn(n: usize, succ: &[Vec<usize>], pred: &[Vec<usize>]) -> (Vec<usize>, Vec<usize>) {
    let mut indeg: Vec<usize> = pred.iter().map(Vec::len).collect();
    let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<usize>> =
        (0..n).filter(|&v| indeg[v] == 0).map(std::cmp::Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(std::cmp::Reverse(v)) = ready.pop() {
        order.push(v);
        for &w in &succ[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                ready.push(std::cmp::Reverse(w));
            }
        }
    }
    (order, indeg)
}

/// Succeeds iff the graph has no directed cycle; otherwise returns the node
/// names along one cycle.
pub fn assert_dag(g: &LabeledDag) -> Result<(), GraphError> {
    let n = g.nodes.len();
    let (order, indeg) = kahn(n, &g.succ, &g.pred);
    if order.len() == n {
        return Ok(());
    }
    // Every leftover node has a leftover predecessor, so walking predecessors
    // must revisit a node.
    let start = (0..n).find(|&v| indeg[v] > 0).expect("leftover node");
    let mut seen = vec![usize::MAX; n];
    let mut path = Vec::new();
    let mut v = start;
    while seen[v] == usize::MAX {
        seen[v] = path.len();
        path.push(v);
        v = *g.pred[v].iter().find(|&&p| indeg[p] > 0).expect("leftover predecessor");
    }
    let mut cycle: Vec<String> = path[seen[v]..].iter().map(|&i| g.nodes[i].name.clone()).collect();
    cycle.reverse();
    Err(GraphError::CycleDetected(cycle))
}

/// Per-label node counts and maximum in/out degrees.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySignature {
    pub count_code: usize,
    pub count_data: usize,
    pub count_output: usize,
    pub max_in: usize,
    pub max_out: usize,
}

impl TopologySignature {
    pub fn count(&self, label: NodeLabel) -> usize {
        match label {
            NodeLabel::Code => self.count_code,
            NodeLabel::Data => self.count_data,
            NodeLabel::Output => self.count_output,
            NodeLabel::Wildcard => 0,
        }
    }
}

/// Computes the signature. Wildcard nodes are not counted. For a query node,
/// the degree requirement is the number of its direct non-wildcard
/// neighbours, raised to one when it only touches wildcards on that side:
/// a path through a wildcard needs at least one edge but may share it with
/// the direct edges.
pub fn topology_signature(g: &LabeledDag) -> TopologySignature {
    let mut sig = TopologySignature::default();
    for v in 0..g.len() {
        let label = g.label(v);
        match label {
            NodeLabel::Code => sig.count_code += 1,
            NodeLabel::Data => sig.count_data += 1,
            NodeLabel::Output => sig.count_output += 1,
            NodeLabel::Wildcard => continue,
        }
        let need = |nbrs: &[usize]| {
            let direct = nbrs.iter().filter(|&&w| g.label(w) != NodeLabel::Wildcard).count();
            let via_wildcard = nbrs.len() > direct;
            direct.max(usize::from(via_wildcard))
        };
        sig.max_in = sig.max_in.max(need(g.predecessors(v)));
        sig.max_out = sig.max_out.max(need(g.successors(v)));
    }
    sig
}

/// A notebook's workflow DAG.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowGraph {
    pub owner: NotebookId,
    pub dag: LabeledDag,
    pub libraries: BTreeSet<String>,
}

impl WorkflowGraph {
    /// Assembles a graph from parts, checking the workflow invariants.
    pub fn from_parts(
        owner: NotebookId,
        nodes: Vec<Node>,
        edges: impl IntoIterator<Item = (usize, usize)>,
        libraries: BTreeSet<String>,
    ) -> Result<Self, GraphError> {
        let dag = LabeledDag::new(nodes, edges)?;
        for v in 0..dag.len() {
            match dag.label(v) {
                NodeLabel::Wildcard => {
                    return Err(GraphError::Construction(format!(
                        "wildcard node `{}` in workflow graph",
                        dag.node(v).name
                    )))
                }
                NodeLabel::Data | NodeLabel::Output => {
                    let touches_code = dag
                        .successors(v)
                        .iter()
                        .chain(dag.predecessors(v))
                        .any(|&w| dag.label(w) == NodeLabel::Code);
                    if !touches_code {
                        return Err(GraphError::Construction(format!(
                            "node `{}` is not attached to any code node",
                            dag.node(v).name
                        )));
                    }
                }
                NodeLabel::Code => {}
            }
        }
        Ok(Self { owner, dag, libraries })
    }

    pub fn signature(&self) -> TopologySignature {
        topology_signature(&self.dag)
    }
}

/// Builds the workflow graph of a notebook with the default source patterns.
pub fn build_workflow_graph(n: &Notebook) -> Result<WorkflowGraph, GraphError> {
    build_workflow_graph_with(n, &SourcePatterns::default())
}

/// Code nodes come first (one per cell, chained in execution order), then one
/// data node per table, then one output node per output record.
pub fn build_workflow_graph_with(
    n: &Notebook,
    patterns: &SourcePatterns,
) -> Result<WorkflowGraph, GraphError> {
    let violations = validate_notebook(n);
    if !violations.is_empty() {
        return Err(GraphError::Construction(violations.join("; ")));
    }
    let cells = n.cells.len();
    let mut nodes: Vec<Node> =
        n.cells.iter().map(|c| Node::code(format!("c{}", c.index), c.source.clone())).collect();
    let mut edges: Vec<(usize, usize)> = (1..cells).map(|i| (i - 1, i)).collect();

    let mut known = BTreeSet::new();
    let refs: Vec<_> = n
        .cells
        .iter()
        .map(|c| {
            let r = detect_table_refs_with(&c.source, &known, patterns);
            known.extend(r.writes.iter().cloned());
            r
        })
        .collect();

    for (j, table) in n.tables.iter().enumerate() {
        let d = nodes.len();
        let writer = (0..cells).find(|&i| refs[i].writes.contains(&table.name));
        let (writer, readers): (usize, Vec<usize>) = match writer {
            Some(w) => {
                (w, (w + 1..cells).filter(|&i| refs[i].reads.contains(&table.name)).collect())
            }
            None => {
                // Not stored in a variable (e.g. a file read inline): attach to
                // the first cell mentioning the name, later mentions read it.
                let mention = mention_regex(&table.name);
                let mut hits = (0..cells).filter(|&i| mention.is_match(&n.cells[i].source));
                let first = hits.next().ok_or_else(|| {
                    GraphError::Construction(format!(
                        "table `{}` is not referenced by any cell",
                        table.name
                    ))
                })?;
                (first, hits.collect())
            }
        };
        nodes.push(Node::data(format!("d{j}"), table.clone()));
        edges.push((writer, d));
        edges.extend(readers.into_iter().map(|r| (d, r)));
    }

    for (k, out) in n.outputs.iter().enumerate() {
        let o = nodes.len();
        nodes.push(Node::output(format!("o{k}"), out.kind));
        edges.push((out.cell, o));
    }

    WorkflowGraph::from_parts(n.id.clone(), nodes, edges, n.libraries.clone())
}

fn mention_regex(name: &str) -> Regex {
    Regex::new(&format!(r"(?:^|[^\w.]){}(?:$|[^\w])", regex::escape(name))).expect("escaped name")
}

/// A query DAG; may contain wildcard nodes standing for a path of length ≥ 1.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGraph {
    pub dag: LabeledDag,
    pub libraries: BTreeSet<String>,
}

impl QueryGraph {
    pub fn new(
        nodes: Vec<Node>,
        edges: impl IntoIterator<Item = (usize, usize)>,
        libraries: BTreeSet<String>,
    ) -> Result<Self, GraphError> {
        let dag = LabeledDag::new(nodes, edges).map_err(|e| GraphError::InvalidQuery(e.to_string()))?;
        for v in 0..dag.len() {
            if dag.label(v) != NodeLabel::Wildcard {
                continue;
            }
            let name = &dag.node(v).name;
            if dag.predecessors(v).is_empty() || dag.successors(v).is_empty() {
                return Err(GraphError::InvalidQuery(format!(
                    "wildcard `{name}` needs at least one incoming and one outgoing edge"
                )));
            }
            let adjacent = dag
                .predecessors(v)
                .iter()
                .chain(dag.successors(v))
                .any(|&w| dag.label(w) == NodeLabel::Wildcard);
            if adjacent {
                return Err(GraphError::InvalidQuery(format!(
                    "wildcard `{name}` is adjacent to another wildcard"
                )));
            }
        }
        Ok(Self { dag, libraries })
    }

    pub fn signature(&self) -> TopologySignature {
        topology_signature(&self.dag)
    }

    /// Number of non-wildcard nodes carrying `label`.
    pub fn size(&self, label: NodeLabel) -> usize {
        self.dag.nodes().iter().filter(|n| n.label() == label).count()
    }

    pub fn content_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.dag.len()).filter(|&v| self.dag.label(v) != NodeLabel::Wildcard)
    }

    /// Parses the JSON query-graph schema. Data attributes are table file
    /// paths resolved against `base_dir`.
    pub fn from_json(bytes: &[u8], base_dir: &Path) -> Result<Self, GraphError> {
        let spec: QueryGraphSpec =
            serde_json::from_slice(bytes).map_err(|e| GraphError::InvalidQuery(e.to_string()))?;
        spec.build(base_dir)
    }
}

/// JSON form of a query graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryGraphSpec {
    pub nodes: Vec<QueryNodeSpec>,
    #[serde(default)]
    pub edges: Vec<(String, String)>,
    #[serde(default)]
    pub libraries: BTreeSet<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryNodeSpec {
    pub id: String,
    pub label: NodeLabel,
    /// Inline code text, table file path, or output kind, by label.
    #[serde(default)]
    pub attribute: Option<String>,
}

impl QueryGraphSpec {
    pub fn build(&self, base_dir: &Path) -> Result<QueryGraph, GraphError> {
        let invalid = GraphError::InvalidQuery;
        let mut index = BTreeMap::new();
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for (i, spec) in self.nodes.iter().enumerate() {
            if index.insert(spec.id.as_str(), i).is_some() {
                return Err(invalid(format!("duplicate node id `{}`", spec.id)));
            }
            let attr = spec.attribute.as_deref();
            let need = |what: &str| {
                attr.ok_or_else(|| invalid(format!("node `{}` needs a {what} attribute", spec.id)))
            };
            let node = match spec.label {
                NodeLabel::Code => Node::code(&spec.id, need("code")?),
                NodeLabel::Data => {
                    let path = base_dir.join(need("table path")?);
                    let table = load_table_csv(&spec.id, &path).map_err(|e| invalid(e.to_string()))?;
                    Node::data(&spec.id, table)
                }
                NodeLabel::Output => {
                    let kind = need("output kind")?.parse().map_err(|e: crate::error::ModelError| {
                        invalid(e.to_string())
                    })?;
                    Node::output(&spec.id, kind)
                }
                NodeLabel::Wildcard => Node::wildcard(&spec.id),
            };
            nodes.push(node);
        }
        let mut edges = Vec::with_capacity(self.edges.len());
        for (from, to) in &self.edges {
            let lookup = |id: &str| {
                index.get(id).copied().ok_or_else(|| invalid(format!("edge references unknown node `{id}`")))
            };
            edges.push((lookup(from)?, lookup(to)?));
        }
        QueryGraph::new(nodes, edges, self.libraries.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Column, Output};

    fn notebook(sources: &[&str]) -> Notebook {
        Notebook::new(NotebookId::new("nb").unwrap(), sources.iter().map(|s| s.to_string()))
    }

    fn table(name: &str) -> TableData {
        TableData::new(name, vec![Column::new("a", ["1".to_string()])])
    }

    fn edge_names(g: &WorkflowGraph) -> Vec<(String, String)> {
        g.dag
            .edges()
            .iter()
            .map(|&(u, v)| (g.dag.node(u).name.clone(), g.dag.node(v).name.clone()))
            .collect()
    }

    fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
        let mut v: Vec<_> = items.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        v.sort();
        v
    }

    #[test]
    fn single_cell_graph() {
        let g = build_workflow_graph(&notebook(&["x = 1"])).unwrap();
        assert_eq!(g.dag.len(), 1);
        assert!(g.dag.edges().is_empty());
    }

    #[test]
    fn write_then_read() {
        let mut n = notebook(&["t = pd.read_csv('t.csv')", "t.head()"]);
        n.tables.push(table("t"));
        let g = build_workflow_graph(&n).unwrap();
        assert_eq!(g.dag.len(), 3);
        let mut got = edge_names(&g);
        got.sort();
        assert_eq!(got, pairs(&[("c0", "c1"), ("c0", "d0"), ("d0", "c1")]));
        assert_eq!(
            g.signature(),
            TopologySignature { count_code: 2, count_data: 1, count_output: 0, max_in: 2, max_out: 2 }
        );
    }

    #[test]
    fn figure_one_notebook() {
        let mut n = notebook(&[
            "import pandas as pd\nimport matplotlib.pyplot as plt\ndf = pd.read_csv('iris.csv')",
            "df = df.dropna()",
            "plt.plot(df['x'])",
        ]);
        n.tables.push(table("df"));
        n.outputs.push(Output { cell: 2, kind: OutputKind::Png });
        let g = build_workflow_graph(&n).unwrap();
        let mut got = edge_names(&g);
        got.sort();
        assert_eq!(
            got,
            pairs(&[("c0", "c1"), ("c1", "c2"), ("c0", "d0"), ("d0", "c1"), ("d0", "c2"), ("c2", "o0")])
        );
    }

    #[test]
    fn inline_file_table_attaches_to_first_mention() {
        let mut n = notebook(&["x = 1", "pd.read_csv('iris.csv').head()", "print(open('iris.csv'))"]);
        n.tables.push(table("iris.csv"));
        let g = build_workflow_graph(&n).unwrap();
        let mut got = edge_names(&g);
        got.sort();
        assert_eq!(got, pairs(&[("c0", "c1"), ("c1", "c2"), ("c1", "d0"), ("d0", "c2")]));
    }

    #[test]
    fn unreferenced_table_is_an_error() {
        let mut n = notebook(&["x = 1"]);
        n.tables.push(table("ghost"));
        assert!(matches!(build_workflow_graph(&n), Err(GraphError::Construction(_))));
    }

    #[test]
    fn signatures_of_simple_graphs() {
        let g = build_workflow_graph(&notebook(&["a", "b", "c"])).unwrap();
        assert_eq!(
            g.signature(),
            TopologySignature { count_code: 3, count_data: 0, count_output: 0, max_in: 1, max_out: 1 }
        );
        let q = QueryGraph::new(vec![], vec![], BTreeSet::new()).unwrap();
        assert_eq!(q.signature(), TopologySignature::default());
    }

    #[test]
    fn wildcard_degree_requirement() {
        // a -> * -> b and a -> c: a needs out-degree 1 (direct edge may carry the path)
        let q = QueryGraph::new(
            vec![Node::code("a", "x"), Node::wildcard("w"), Node::code("b", "y"), Node::code("c", "z")],
            vec![(0, 1), (1, 2), (0, 3)],
            BTreeSet::new(),
        )
        .unwrap();
        let sig = q.signature();
        assert_eq!((sig.count_code, sig.max_in, sig.max_out), (3, 1, 1));
    }

    #[test]
    fn dag_checks() {
        let chain = LabeledDag::new(
            vec![Node::code("c0", ""), Node::code("c1", ""), Node::code("c2", "")],
            vec![(0, 1), (1, 2)],
        );
        assert!(chain.is_ok());
        let cyc = LabeledDag::new(vec![Node::code("c0", ""), Node::code("c1", "")], vec![(0, 1), (1, 0)]);
        match cyc {
            Err(GraphError::CycleDetected(w)) => assert_eq!(w.len(), 2),
            other => panic!("expected cycle, got {other:?}"),
        }
        assert!(LabeledDag::new(vec![Node::code("c0", "")], vec![]).is_ok());
        assert!(matches!(
            LabeledDag::new(vec![Node::code("c0", "")], vec![(0, 0)]),
            Err(GraphError::CycleDetected(_))
        ));
    }

    #[test]
    fn query_validation() {
        let ok = QueryGraph::new(
            vec![Node::code("a", ""), Node::wildcard("w"), Node::code("b", "")],
            vec![(0, 1), (1, 2)],
            BTreeSet::new(),
        );
        assert!(ok.is_ok());
        let dangling = QueryGraph::new(
            vec![Node::code("a", ""), Node::wildcard("w")],
            vec![(0, 1)],
            BTreeSet::new(),
        );
        assert!(matches!(dangling, Err(GraphError::InvalidQuery(_))));
        let adjacent = QueryGraph::new(
            vec![Node::code("a", ""), Node::wildcard("w1"), Node::wildcard("w2"), Node::code("b", "")],
            vec![(0, 1), (1, 2), (2, 3)],
            BTreeSet::new(),
        );
        assert!(matches!(adjacent, Err(GraphError::InvalidQuery(_))));
    }

    #[test]
    fn query_from_json() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("t.csv"), "a,b\n1,2\n").unwrap();
        let json = br#"{
            "nodes": [
                {"id": "s", "label": "code", "attribute": "df = pd.read_csv('t.csv')"},
                {"id": "t", "label": "data", "attribute": "t.csv"},
                {"id": "w", "label": "any"},
                {"id": "p", "label": "output", "attribute": "png"}
            ],
            "edges": [["s", "t"], ["t", "w"], ["w", "p"]],
            "libraries": ["pandas"]
        }"#;
        let q = QueryGraph::from_json(json, dir.path()).unwrap();
        assert_eq!(q.dag.len(), 4);
        assert_eq!(q.size(NodeLabel::Data), 1);
        assert_eq!(q.dag.label(2), NodeLabel::Wildcard);
        let bad = br#"{"nodes": [{"id": "s", "label": "code"}], "edges": []}"#;
        assert!(QueryGraph::from_json(bad, dir.path()).is_err());
    }
}
