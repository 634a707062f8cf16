//! Subgraph matching of query graphs into workflow graphs.
//!
//! A mapping assigns every non-wildcard query node to a distinct workflow
//! node with the same label. Query edges between non-wildcard nodes must map
//! onto workflow edges; a wildcard between `a` and `b` requires a directed
//! path of length at least one from the image of `a` to the image of `b`.

use fixedbitset::FixedBitSet;
use serde::Serialize;

use crate::graph::{LabeledDag, NodeLabel, QueryGraph, TopologySignature, WorkflowGraph};

/// Images of the query nodes, indexed by query node; `None` for wildcards.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Mapping {
    images: Vec<Option<usize>>,
}

impl Mapping {
    pub fn new(images: Vec<Option<usize>>) -> Self {
        Self { images }
    }

    pub fn image(&self, query_node: usize) -> Option<usize> {
        self.images[query_node]
    }

    pub fn images(&self) -> &[Option<usize>] {
        &self.images
    }

    /// `(query node, workflow node)` pairs for non-wildcard nodes.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.images.iter().enumerate().filter_map(|(q, w)| w.map(|w| (q, w)))
    }
}

/// True when the signatures rule out any match of the query in the graph.
pub fn index_prune(query: &TopologySignature, workflow: &TopologySignature) -> bool {
    NodeLabel::CONTENT.iter().any(|&l| workflow.count(l) < query.count(l))
        || workflow.max_in < query.max_in
        || workflow.max_out < query.max_out
}

/// Transitive closure of a DAG: strict descendants of every node.
#[derive(Debug, Clone)]
pub struct ReachabilityIndex {
    descendants: Vec<FixedBitSet>,
}

impl ReachabilityIndex {
    /// True iff a path of length ≥ 1 leads from `u` to `v`.
    pub fn reaches(&self, u: usize, v: usize) -> bool {
        self.descendants[u].contains(v)
    }

    pub fn descendants(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        self.descendants[u].ones()
    }
}

pub fn build_reachability(w: &WorkflowGraph) -> ReachabilityIndex {
    reachability(&w.dag)
}

/// Closure computed in reverse topological order.
pub fn reachability(dag: &LabeledDag) -> ReachabilityIndex {
    let n = dag.len();
    let mut descendants = vec![FixedBitSet::with_capacity(n); n];
    for &v in dag.topological_order().iter().rev() {
        let mut set = FixedBitSet::with_capacity(n);
        for &s in dag.successors(v) {
            set.insert(s);
            set.union_with(&descendants[s]);
        }
        descendants[v] = set;
    }
    ReachabilityIndex { descendants }
}

/// Constraint on a query node against earlier nodes in the search order.
#[derive(Debug, Clone, Copy)]
enum Check {
    /// Workflow edge from the earlier node's image to this node's image.
    EdgeFrom(usize),
    EdgeTo(usize),
    /// Path from the earlier node's image to this node's image.
    PathFrom(usize),
    PathTo(usize),
}

struct Plan {
    order: Vec<usize>,
    candidates: Vec<Vec<usize>>,
    checks: Vec<Vec<Check>>,
}

fn plan(q: &QueryGraph, w: &WorkflowGraph) -> Option<Plan> {
    let qd = &q.dag;
    let wd = &w.dag;
    let content: Vec<usize> = q.content_nodes().collect();

    let direct = |nbrs: &[usize]| nbrs.iter().filter(|&&x| qd.label(x) != NodeLabel::Wildcard).count();
    let mut candidates = vec![Vec::new(); qd.len()];
    for &v in &content {
        let label = qd.label(v);
        let need_out = direct(qd.successors(v));
        let need_in = direct(qd.predecessors(v));
        candidates[v] = (0..wd.len())
            .filter(|&u| {
                wd.label(u) == label
                    && wd.successors(u).len() >= need_out
                    && wd.predecessors(u).len() >= need_in
            })
            .collect();
        if candidates[v].is_empty() {
            return None;
        }
    }

    // Non-wildcard neighbours, direct or through one wildcard.
    let linked = |v: usize| -> Vec<usize> {
        let mut out = Vec::new();
        for &x in qd.successors(v).iter().chain(qd.predecessors(v)) {
            if qd.label(x) == NodeLabel::Wildcard {
                out.extend(qd.successors(x).iter().chain(qd.predecessors(x)).copied().filter(|&y| y != v));
            } else {
                out.push(x);
            }
        }
        out
    };

    // Smallest candidate set first, preferring nodes linked to placed ones.
    let mut order = Vec::with_capacity(content.len());
    let mut placed = vec![false; qd.len()];
    let mut touching = vec![false; qd.len()];
    while order.len() < content.len() {
        let next = content
            .iter()
            .copied()
            .filter(|&v| !placed[v])
            .min_by_key(|&v| (!touching[v], candidates[v].len(), v))
            .expect("unplaced node");
        placed[next] = true;
        order.push(next);
        for y in linked(next) {
            touching[y] = true;
        }
    }

    let mut position = vec![usize::MAX; qd.len()];
    for (i, &v) in order.iter().enumerate() {
        position[v] = i;
    }
    let mut checks = vec![Vec::new(); qd.len()];
    for &v in &order {
        let earlier = |x: usize| position[x] < position[v];
        for &p in qd.predecessors(v) {
            if qd.label(p) == NodeLabel::Wildcard {
                checks[v].extend(qd.predecessors(p).iter().filter(|&&a| earlier(a)).map(|&a| Check::PathFrom(a)));
            } else if earlier(p) {
                checks[v].push(Check::EdgeFrom(p));
            }
        }
        for &s in qd.successors(v) {
            if qd.label(s) == NodeLabel::Wildcard {
                checks[v].extend(qd.successors(s).iter().filter(|&&b| earlier(b)).map(|&b| Check::PathTo(b)));
            } else if earlier(s) {
                checks[v].push(Check::EdgeTo(s));
            }
        }
    }
    Some(Plan { order, candidates, checks })
}

/// Every mapping of `q` into `w`, sorted lexicographically by the images of
/// the query nodes in query-node order.
pub fn enumerate_mappings(q: &QueryGraph, w: &WorkflowGraph, r: &ReachabilityIndex) -> Vec<Mapping> {
    let mut found = Vec::new();
    let Some(plan) = plan(q, w) else { return found };
    let mut images = vec![None; q.dag.len()];
    let mut used = vec![false; w.dag.len()];
    extend(&plan, 0, w, r, &mut images, &mut used, &mut found);
    found.sort_unstable();
    found
}

fn extend(
    plan: &Plan,
    depth: usize,
    w: &WorkflowGraph,
    r: &ReachabilityIndex,
    images: &mut Vec<Option<usize>>,
    used: &mut Vec<bool>,
    found: &mut Vec<Mapping>,
) {
    if depth == plan.order.len() {
        found.push(Mapping::new(images.clone()));
        return;
    }
    let v = plan.order[depth];
    for &u in &plan.candidates[v] {
        if used[u] {
            continue;
        }
        let ok = plan.checks[v].iter().all(|c| match *c {
            Check::EdgeFrom(a) => w.dag.has_edge(images[a].unwrap(), u),
            Check::EdgeTo(b) => w.dag.has_edge(u, images[b].unwrap()),
            Check::PathFrom(a) => r.reaches(images[a].unwrap(), u),
            Check::PathTo(b) => r.reaches(u, images[b].unwrap()),
        });
        if !ok {
            continue;
        }
        used[u] = true;
        images[v] = Some(u);
        extend(plan, depth + 1, w, r, images, used, found);
        images[v] = None;
        used[u] = false;
    }
}
