#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use nbsim::graph::{build_workflow_graph, Node, NodeAttr, NodeLabel, QueryGraph, WorkflowGraph};
use nbsim::model::{Column, NotebookId, OutputKind, TableData};
use nbsim::search::SetContents;
use nbsim::synth::{generate_corpus, generate_queries};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 8] = ["df", "x", "plt", "fit", "model", "print", "y", "read"];

pub fn random_code(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(0..6);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(if rng.gen_bool(0.5) { " " } else { "." })
}

pub fn random_table(rng: &mut ChaCha8Rng, max_width: usize) -> TableData {
    let width = rng.gen_range(0..=max_width);
    let columns = (0..width)
        .map(|i| {
            let n = rng.gen_range(0..6);
            Column::new(format!("c{i}"), (0..n).map(|_| rng.gen_range(0..8).to_string()))
        })
        .collect();
    TableData::new("t", columns)
}

pub fn random_library_set(rng: &mut ChaCha8Rng) -> BTreeSet<String> {
    let n = rng.gen_range(0..5);
    (0..n).map(|_| format!("lib{}", rng.gen_range(0..6))).collect()
}

pub fn random_kind(rng: &mut ChaCha8Rng) -> OutputKind {
    *OutputKind::ALL.choose(rng).unwrap()
}

fn random_node(rng: &mut ChaCha8Rng, name: String, label: NodeLabel) -> Node {
    match label {
        NodeLabel::Code => Node::code(name, random_code(rng)),
        NodeLabel::Data => Node::data(name, random_table(rng, 2)),
        NodeLabel::Output => Node::output(name, random_kind(rng)),
        NodeLabel::Wildcard => Node::wildcard(name),
    }
}

fn random_label(rng: &mut ChaCha8Rng) -> NodeLabel {
    match rng.gen_range(0..4) {
        0 | 1 => NodeLabel::Code,
        2 => NodeLabel::Data,
        _ => NodeLabel::Output,
    }
}

/// Random valid workflow DAG with 1..=max_nodes nodes; node 0 is code and
/// every data or output node touches a code node.
pub fn random_workflow(rng: &mut ChaCha8Rng, max_nodes: usize) -> WorkflowGraph {
    let n = rng.gen_range(1..=max_nodes);
    let labels: Vec<NodeLabel> =
        (0..n).map(|i| if i == 0 { NodeLabel::Code } else { random_label(rng) }).collect();
    let density = rng.gen_range(0.1..0.6);
    let mut edges = BTreeSet::new();
    for j in 0..n {
        for i in 0..j {
            if rng.gen_bool(density) {
                edges.insert((i, j));
            }
        }
    }
    for v in 1..n {
        if labels[v] == NodeLabel::Code {
            continue;
        }
        let touches = edges.iter().any(|&(a, b)| {
            (a == v && labels[b] == NodeLabel::Code) || (b == v && labels[a] == NodeLabel::Code)
        });
        if !touches {
            let code: Vec<usize> = (0..v).filter(|&u| labels[u] == NodeLabel::Code).collect();
            edges.insert((*code.choose(rng).unwrap(), v));
        }
    }
    let nodes = labels.iter().enumerate().map(|(i, &l)| random_node(rng, format!("n{i}"), l)).collect();
    WorkflowGraph::from_parts(NotebookId::new("w").unwrap(), nodes, edges, random_library_set(rng)).unwrap()
}

fn reaches(w: &WorkflowGraph, from: usize, to: usize) -> bool {
    let mut stack: Vec<usize> = w.dag.successors(from).to_vec();
    let mut seen = HashSet::new();
    while let Some(v) = stack.pop() {
        if v == to {
            return true;
        }
        if seen.insert(v) {
            stack.extend_from_slice(w.dag.successors(v));
        }
    }
    false
}

/// Random query with 1..=max_content content nodes and up to two wildcards.
/// Half of the time the content nodes are copied from `w` so that matches
/// are likely.
pub fn random_query(rng: &mut ChaCha8Rng, w: &WorkflowGraph, max_content: usize) -> QueryGraph {
    let from_w = rng.gen_bool(0.5);
    let n = rng.gen_range(1..=max_content);
    let mut nodes = Vec::new();
    let mut edges = BTreeSet::new();
    let mut spans = Vec::new();
    if from_w {
        let mut picked: Vec<usize> = (0..w.dag.len()).collect();
        picked.shuffle(rng);
        picked.truncate(n);
        picked.sort_unstable();
        for (i, &v) in picked.iter().enumerate() {
            nodes.push(Node::new(format!("q{i}"), w.dag.node(v).attr.clone()));
        }
        for (i, &a) in picked.iter().enumerate() {
            for (j, &b) in picked.iter().enumerate() {
                if w.dag.has_edge(a, b) && rng.gen_bool(0.8) {
                    edges.insert((i, j));
                } else if reaches(w, a, b) {
                    spans.push((i, j));
                }
            }
        }
    } else {
        for i in 0..n {
            let l = random_label(rng);
            nodes.push(random_node(rng, format!("q{i}"), l));
        }
        for j in 0..n {
            for i in 0..j {
                if rng.gen_bool(0.3) {
                    edges.insert((i, j));
                } else if rng.gen_bool(0.2) {
                    spans.push((i, j));
                }
            }
        }
    }
    let wild = rng.gen_range(0..=2).min(spans.len());
    for (k, &(i, j)) in spans.choose_multiple(rng, wild).enumerate() {
        let star = nodes.len();
        nodes.push(Node::wildcard(format!("w{k}")));
        edges.insert((i, star));
        edges.insert((star, j));
    }
    QueryGraph::new(nodes, edges, random_library_set(rng)).unwrap()
}

/// Every injective label-preserving assignment satisfying the edge and path
/// conditions, checked directly with a depth-first path search.
pub fn brute_force_mappings(q: &QueryGraph, w: &WorkflowGraph) -> BTreeSet<Vec<Option<usize>>> {
    let content: Vec<usize> = q.content_nodes().collect();
    let mut out = BTreeSet::new();
    let mut images = vec![None; q.dag.len()];
    let mut used = vec![false; w.dag.len()];
    assign(q, w, &content, 0, &mut images, &mut used, &mut out);
    out
}

fn assign(
    q: &QueryGraph,
    w: &WorkflowGraph,
    content: &[usize],
    depth: usize,
    images: &mut Vec<Option<usize>>,
    used: &mut Vec<bool>,
    out: &mut BTreeSet<Vec<Option<usize>>>,
) {
    if depth == content.len() {
        if satisfies(q, w, images) {
            out.insert(images.clone());
        }
        return;
    }
    let v = content[depth];
    for u in 0..w.dag.len() {
        if used[u] || w.dag.label(u) != q.dag.label(v) {
            continue;
        }
        used[u] = true;
        images[v] = Some(u);
        assign(q, w, content, depth + 1, images, used, out);
        images[v] = None;
        used[u] = false;
    }
}

fn satisfies(q: &QueryGraph, w: &WorkflowGraph, images: &[Option<usize>]) -> bool {
    for &(a, b) in q.dag.edges() {
        if let (Some(x), Some(y)) = (images[a], images[b]) {
            if !w.dag.has_edge(x, y) {
                return false;
            }
        }
    }
    for x in 0..q.dag.len() {
        if q.dag.label(x) != NodeLabel::Wildcard {
            continue;
        }
        for &a in q.dag.predecessors(x) {
            for &b in q.dag.successors(x) {
                if !reaches(w, images[a].unwrap(), images[b].unwrap()) {
                    return false;
                }
            }
        }
    }
    true
}

/// The generated corpus used by the equivalence checks.
pub fn generated_graphs(count: usize, seed: u64) -> Vec<WorkflowGraph> {
    generate_corpus(count, seed).iter().map(|n| build_workflow_graph(n).unwrap()).collect()
}

pub fn generated_queries(graphs: &[WorkflowGraph], count: usize, seed: u64) -> Vec<QueryGraph> {
    generate_queries(graphs, count, seed)
}

/// Set-based query holding a graph query's contents.
pub fn set_query_from(q: &QueryGraph) -> SetContents {
    let mut code = Vec::new();
    let mut tables = Vec::new();
    let mut outputs = Vec::new();
    for node in q.dag.nodes() {
        match &node.attr {
            NodeAttr::Code(c) => code.push(c.source().to_string()),
            NodeAttr::Data(t) => tables.push(Arc::unwrap_or_clone(Arc::clone(t))),
            NodeAttr::Output(k) => outputs.push(*k),
            NodeAttr::Wildcard => {}
        }
    }
    SetContents::new(code.join("\n"), tables, outputs, q.libraries.clone())
}
