//! Top-k similarity search.
//!
//! Graph-based search scores a notebook by its best mapping: the library
//! term plus one weighted content similarity per non-wildcard query node.
//! The optimized search enumerates mappings for every graph that survives
//! signature pruning, scores everything except θ-labeled nodes, then walks
//! the mappings by descending tentative score and scores θ nodes one at a
//! time, abandoning a mapping as soon as its upper bound falls below the
//! running k-th best score or below its notebook's best.
//!
//! Every score (final, tentative or bound) is the same left-to-right sum:
//! the library term first, then one term per query node in node order, with
//! an unscored node contributing its full weight. Because each similarity is
//! at most 1 and floating-point addition is monotone, a bound is never below
//! the final score and never increases as nodes are scored, so pruning is
//! exact and the optimized search returns bit-identical scores.

use std::collections::BTreeSet;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::SearchError;
use crate::graph::{NodeAttr, NodeLabel, QueryGraph, WorkflowGraph};
use crate::matching::{build_reachability, enumerate_mappings, index_prune, Mapping};
use crate::model::{Notebook, NotebookId, OutputKind, TableData, Weights};
use crate::sim::{CodeText, MeasureCounts, Measures, SimConfig};
use crate::store::Corpus;

/// Per-node weights: each label's weight split evenly over the query nodes
/// carrying that label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalizedWeights {
    pub code: f64,
    pub data: f64,
    pub output: f64,
    pub library: f64,
}

impl NormalizedWeights {
    pub fn for_label(&self, label: NodeLabel) -> f64 {
        match label {
            NodeLabel::Code => self.code,
            NodeLabel::Data => self.data,
            NodeLabel::Output => self.output,
            NodeLabel::Wildcard => 0.0,
        }
    }
}

pub fn normalize_weights(q: &QueryGraph, w: &Weights) -> NormalizedWeights {
    let per = |weight: f64, label| match q.size(label) {
        0 => 0.0,
        n => weight / n as f64,
    };
    NormalizedWeights {
        code: per(w.code, NodeLabel::Code),
        data: per(w.data, NodeLabel::Data),
        output: per(w.output, NodeLabel::Output),
        library: w.library,
    }
}

/// Score of one mapping under construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialScore {
    /// Weighted library similarity.
    pub library: f64,
    /// Weight of every query node (0 for wildcards).
    pub weights: Vec<f64>,
    /// Similarity of every query node; `None` while unscored.
    pub sims: Vec<Option<f64>>,
}

impl PartialScore {
    /// All content nodes unscored.
    pub fn new(q: &QueryGraph, nw: &NormalizedWeights, library_sim: f64) -> Self {
        let weights: Vec<f64> = q.dag.nodes().iter().map(|n| nw.for_label(n.label())).collect();
        let sims = q
            .dag
            .nodes()
            .iter()
            .map(|n| if n.label() == NodeLabel::Wildcard { Some(0.0) } else { None })
            .collect();
        Self { library: nw.library * library_sim, weights, sims }
    }

    /// Similarity mass of the scored nodes, library term included.
    pub fn computed(&self) -> f64 {
        self.weights.iter().zip(&self.sims).fold(self.library, |acc, (w, s)| acc + s.map_or(0.0, |s| w * s))
    }

    /// Total weight of the unscored nodes.
    pub fn remaining_weight(&self) -> f64 {
        self.weights.iter().zip(&self.sims).filter(|(_, s)| s.is_none()).map(|(w, _)| w).sum()
    }

    pub fn is_complete(&self) -> bool {
        self.sims.iter().all(Option::is_some)
    }
}

/// Upper bound on the final score: every unscored node counts as a perfect
/// match. Equals the final score once all nodes are scored.
pub fn max_sim(p: &PartialScore) -> f64 {
    p.weights.iter().zip(&p.sims).fold(p.library, |acc, (w, s)| acc + w * s.unwrap_or(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredResult {
    pub notebook: NotebookId,
    pub score: f64,
    /// Best mapping; absent for set-based results and mapping-less notebooks.
    pub mapping: Option<Mapping>,
    /// The best mapping as (query node, workflow node) names.
    pub pairs: Vec<(String, String)>,
}

/// Optimizations of the graph-based search. None of them changes results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Toggles {
    pub pruning: bool,
    pub ordering: bool,
    pub caching: bool,
    pub indexing: bool,
}

impl Toggles {
    pub const ALL: Toggles = Toggles { pruning: true, ordering: true, caching: true, indexing: true };
    pub const NONE: Toggles = Toggles { pruning: false, ordering: false, caching: false, indexing: false };

    /// The 16 on/off combinations, from all off to all on.
    pub fn subsets() -> impl Iterator<Item = Toggles> {
        (0u8..16).map(|b| Toggles {
            pruning: b & 1 != 0,
            ordering: b & 2 != 0,
            caching: b & 4 != 0,
            indexing: b & 8 != 0,
        })
    }

    pub fn label(&self) -> String {
        let names = [
            (self.pruning, "prune"),
            (self.ordering, "order"),
            (self.caching, "cache"),
            (self.indexing, "index"),
        ];
        let on: Vec<&str> = names.iter().filter(|(b, _)| *b).map(|(_, n)| *n).collect();
        if on.is_empty() {
            "none".into()
        } else {
            on.join("+")
        }
    }
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles::ALL
    }
}

#[derive(Debug, Clone)]
pub struct SearchOptions {
    pub k: usize,
    pub weights: Weights,
    /// Label whose similarities are deferred to the pruned phase.
    pub theta: NodeLabel,
    pub toggles: Toggles,
    /// Pad results with zero-score notebooks up to `k`.
    pub include_zero: bool,
    pub sim: SimConfig,
}

impl SearchOptions {
    pub fn graph(k: usize) -> Self {
        Self {
            k,
            weights: Weights::GRAPH_DEFAULT,
            theta: NodeLabel::Data,
            toggles: Toggles::ALL,
            include_zero: false,
            sim: SimConfig::default(),
        }
    }

    pub fn set(k: usize) -> Self {
        Self { weights: Weights::SET_DEFAULT, ..Self::graph(k) }
    }

    fn check(&self, corpus: &Corpus) -> Result<(), SearchError> {
        if self.k == 0 {
            return Err(SearchError::InvalidQuery("k must be positive".into()));
        }
        if self.theta == NodeLabel::Wildcard {
            return Err(SearchError::InvalidQuery("theta must be a content label".into()));
        }
        self.weights.check().map_err(|e| SearchError::InvalidQuery(e.to_string()))?;
        if corpus.is_empty() {
            return Err(SearchError::EmptyCorpus);
        }
        Ok(())
    }

    fn measures(&self) -> Measures {
        if self.toggles.caching {
            Measures::with_cache(self.sim.clone())
        } else {
            Measures::new(self.sim.clone())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PruneReason {
    /// Bound fell below the running k-th best score.
    TopK,
    /// Bound fell below the notebook's best mapping so far.
    NotebookBest,
}

/// Bound sequence of one (graph, mapping) pair in the second phase.
#[derive(Debug, Clone, Serialize)]
pub struct TraceEntry {
    pub notebook: NotebookId,
    pub mapping: Mapping,
    /// Bound before any deferred node is scored, then after each one.
    pub bounds: Vec<f64>,
    /// Final score; absent when pruned.
    pub score: Option<f64>,
    pub pruned: Option<PruneReason>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SearchStats {
    pub notebooks: usize,
    pub index_pruned: usize,
    pub mappings: usize,
    pub pruned_topk: usize,
    pub pruned_best: usize,
    pub body_reads: usize,
    pub measures: MeasureCounts,
}

#[derive(Debug, Clone)]
pub struct SearchReport {
    pub results: Vec<ScoredResult>,
    pub stats: SearchStats,
    /// Present when requested.
    pub trace: Option<Vec<TraceEntry>>,
}

fn node_sim(measures: &Measures, q: &NodeAttr, w: &NodeAttr) -> f64 {
    match (q, w) {
        (NodeAttr::Code(a), NodeAttr::Code(b)) => measures.code(a, b),
        (NodeAttr::Data(a), NodeAttr::Data(b)) => measures.table(a, b),
        (NodeAttr::Output(a), NodeAttr::Output(b)) => measures.output(*a, *b),
        _ => unreachable!("mappings preserve labels"),
    }
}

fn score_node(measures: &Measures, q: &QueryGraph, w: &WorkflowGraph, m: &Mapping, p: &mut PartialScore, v: usize) {
    let u = m.image(v).expect("content node is mapped");
    p.sims[v] = Some(node_sim(measures, &q.dag.node(v).attr, &w.dag.node(u).attr));
}

/// Score of one mapping, computing every similarity.
pub fn graph_mapping_score(
    q: &QueryGraph,
    w: &WorkflowGraph,
    m: &Mapping,
    nw: &NormalizedWeights,
    measures: &Measures,
) -> f64 {
    let lib = measures.library(&q.libraries, &w.libraries);
    mapping_score_with_library(q, w, m, nw, measures, lib)
}

fn mapping_score_with_library(
    q: &QueryGraph,
    w: &WorkflowGraph,
    m: &Mapping,
    nw: &NormalizedWeights,
    measures: &Measures,
    library_sim: f64,
) -> f64 {
    let mut p = PartialScore::new(q, nw, library_sim);
    for v in q.content_nodes() {
        score_node(measures, q, w, m, &mut p, v);
    }
    max_sim(&p)
}

/// Best mapping score; 0 without mappings.
pub fn notebook_score(
    q: &QueryGraph,
    w: &WorkflowGraph,
    mappings: &[Mapping],
    nw: &NormalizedWeights,
    measures: &Measures,
) -> f64 {
    if mappings.is_empty() {
        return 0.0;
    }
    let lib = measures.library(&q.libraries, &w.libraries);
    best_mapping(q, w, mappings, nw, measures, lib).map_or(0.0, |(s, _)| s)
}

/// Highest-scoring mapping; the earliest in `mappings` among equal scores.
fn best_mapping(
    q: &QueryGraph,
    w: &WorkflowGraph,
    mappings: &[Mapping],
    nw: &NormalizedWeights,
    measures: &Measures,
    library_sim: f64,
) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, m) in mappings.iter().enumerate() {
        let s = mapping_score_with_library(q, w, m, nw, measures, library_sim);
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, i));
        }
    }
    best
}

fn named_pairs(q: &QueryGraph, w: &WorkflowGraph, m: &Mapping) -> Vec<(String, String)> {
    m.pairs().map(|(a, b)| (q.dag.node(a).name.clone(), w.dag.node(b).name.clone())).collect()
}

/// Sorts by score descending then id, drops zero scores unless padding is
/// requested, and keeps `k`.
fn rank(mut entries: Vec<ScoredResult>, opts: &SearchOptions) -> Vec<ScoredResult> {
    entries.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.notebook.cmp(&b.notebook)));
    if !opts.include_zero {
        entries.retain(|r| r.score > 0.0);
    }
    entries.truncate(opts.k);
    entries
}

/// Positive notebook bests, kept sorted descending, for the k-th threshold.
struct TopScores {
    k: usize,
    sorted: Vec<f64>,
}

impl TopScores {
    fn new(k: usize) -> Self {
        Self { k, sorted: Vec::new() }
    }

    fn replace(&mut self, old: Option<f64>, new: f64) {
        if let Some(old) = old.filter(|&s| s > 0.0) {
            let i = self.sorted.iter().position(|&s| s == old).expect("old best present");
            self.sorted.remove(i);
        }
        if new > 0.0 {
            let i = self.sorted.partition_point(|&s| s >= new);
            self.sorted.insert(i, new);
        }
    }

    /// k-th best so far, or 0 while fewer than k notebooks score above 0.
    fn threshold(&self) -> f64 {
        self.sorted.get(self.k - 1).copied().unwrap_or(0.0)
    }
}

struct Candidate {
    notebook: usize,
    graph: Arc<WorkflowGraph>,
    /// Position in the notebook's enumeration order.
    rank_in_notebook: usize,
    mapping: Mapping,
    partial: PartialScore,
}

/// Graph-based top-k search with the optimizations selected in `opts`.
pub fn search_topk(q: &QueryGraph, corpus: &Corpus, opts: &SearchOptions) -> Result<Vec<ScoredResult>, SearchError> {
    Ok(search_topk_report(q, corpus, opts, false)?.results)
}

pub fn search_topk_report(
    q: &QueryGraph,
    corpus: &Corpus,
    opts: &SearchOptions,
    trace: bool,
) -> Result<SearchReport, SearchError> {
    opts.check(corpus)?;
    let reads_before = corpus.body_reads();
    let measures = opts.measures();
    let nw = normalize_weights(q, &opts.weights);
    let q_sig = q.signature();
    let toggles = opts.toggles;
    // Without ordering nothing is scored up front.
    let deferred: Vec<usize> =
        q.content_nodes().filter(|&v| !toggles.ordering || q.dag.label(v) == opts.theta).collect();

    // Phase 1: enumerate mappings and score the non-deferred nodes.
    let phase1: Vec<Option<Vec<Candidate>>> = (0..corpus.len())
        .into_par_iter()
        .map(|i| -> Result<Option<Vec<Candidate>>, SearchError> {
            if toggles.indexing && index_prune(&q_sig, corpus.signature(i)) {
                return Ok(None);
            }
            let graph = corpus.graph(i)?;
            let mappings = enumerate_mappings(q, &graph, &build_reachability(&graph));
            if mappings.is_empty() {
                return Ok(Some(Vec::new()));
            }
            let lib = measures.library(&q.libraries, &graph.libraries);
            let cands = mappings
                .into_iter()
                .enumerate()
                .map(|(r, mapping)| {
                    let mut partial = PartialScore::new(q, &nw, lib);
                    for v in q.content_nodes().filter(|v| !deferred.contains(v)) {
                        score_node(&measures, q, &graph, &mapping, &mut partial, v);
                    }
                    Candidate { notebook: i, graph: Arc::clone(&graph), rank_in_notebook: r, mapping, partial }
                })
                .collect();
            Ok(Some(cands))
        })
        .collect::<Result<_, _>>()?;

    let mut stats = SearchStats { notebooks: corpus.len(), ..Default::default() };
    stats.index_pruned = phase1.iter().filter(|c| c.is_none()).count();
    let mut cands: Vec<Candidate> = phase1.into_iter().flatten().flatten().collect();
    stats.mappings = cands.len();

    if toggles.ordering {
        let tentative: Vec<f64> = cands.iter().map(|c| max_sim(&c.partial)).collect();
        let mut idx: Vec<usize> = (0..cands.len()).collect();
        idx.sort_by(|&a, &b| {
            tentative[b]
                .total_cmp(&tentative[a])
                .then_with(|| corpus.id(cands[a].notebook).cmp(corpus.id(cands[b].notebook)))
                .then_with(|| cands[a].rank_in_notebook.cmp(&cands[b].rank_in_notebook))
        });
        let mut slots: Vec<Option<Candidate>> = cands.into_iter().map(Some).collect();
        cands = idx.into_iter().map(|i| slots[i].take().expect("each index once")).collect();
    }

    // Phase 2: score deferred nodes with pruning.
    let mut best: Vec<Option<(f64, usize)>> = vec![None; corpus.len()];
    let mut top = TopScores::new(opts.k);
    let mut entries = trace.then(Vec::new);
    for ci in 0..cands.len() {
        let c = &mut cands[ci];
        let mut bound = max_sim(&c.partial);
        let mut bounds = vec![bound];
        let mut pruned = None;
        for &v in &deferred {
            if toggles.pruning {
                if bound < top.threshold() {
                    pruned = Some(PruneReason::TopK);
                } else if best[c.notebook].is_some_and(|(b, _)| bound < b) {
                    pruned = Some(PruneReason::NotebookBest);
                }
                if pruned.is_some() {
                    break;
                }
            }
            score_node(&measures, q, &c.graph, &c.mapping, &mut c.partial, v);
            bound = max_sim(&c.partial);
            bounds.push(bound);
        }
        let nb = c.notebook;
        if let Some(e) = entries.as_mut() {
            e.push(TraceEntry {
                notebook: corpus.id(nb).clone(),
                mapping: c.mapping.clone(),
                bounds,
                score: pruned.is_none().then_some(bound),
                pruned,
            });
        }
        match pruned {
            Some(PruneReason::TopK) => stats.pruned_topk += 1,
            Some(PruneReason::NotebookBest) => stats.pruned_best += 1,
            None => match best[nb] {
                None => {
                    top.replace(None, bound);
                    best[nb] = Some((bound, ci));
                }
                Some((b, _)) if bound > b => {
                    top.replace(Some(b), bound);
                    best[nb] = Some((bound, ci));
                }
                // Equal scores keep the smallest mapping, as the naive scan
                // over sorted mappings does.
                Some((b, held)) if bound == b && cands[ci].mapping < cands[held].mapping => {
                    best[nb] = Some((bound, ci));
                }
                Some(_) => {}
            },
        }
    }

    let results = rank(
        (0..corpus.len())
            .map(|i| match best[i] {
                Some((score, ci)) => {
                    let c = &cands[ci];
                    ScoredResult {
                        notebook: corpus.id(i).clone(),
                        score,
                        mapping: Some(c.mapping.clone()),
                        pairs: named_pairs(q, &c.graph, &c.mapping),
                    }
                }
                None => ScoredResult { notebook: corpus.id(i).clone(), score: 0.0, mapping: None, pairs: Vec::new() },
            })
            .collect(),
        opts,
    );
    stats.body_reads = corpus.body_reads() - reads_before;
    stats.measures = measures.counts();
    Ok(SearchReport { results, stats, trace: entries })
}

/// Exhaustive graph-based search: every mapping of every graph is scored in
/// full, sequentially and without a cache.
pub fn naive_search_topk(
    q: &QueryGraph,
    corpus: &Corpus,
    opts: &SearchOptions,
) -> Result<Vec<ScoredResult>, SearchError> {
    Ok(naive_search_report(q, corpus, opts)?.results)
}

pub fn naive_search_report(q: &QueryGraph, corpus: &Corpus, opts: &SearchOptions) -> Result<SearchReport, SearchError> {
    opts.check(corpus)?;
    let reads_before = corpus.body_reads();
    let measures = Measures::new(opts.sim.clone());
    let nw = normalize_weights(q, &opts.weights);
    let mut stats = SearchStats { notebooks: corpus.len(), ..Default::default() };
    let mut entries = Vec::with_capacity(corpus.len());
    for i in 0..corpus.len() {
        let graph = corpus.graph(i)?;
        let mappings = enumerate_mappings(q, &graph, &build_reachability(&graph));
        stats.mappings += mappings.len();
        let lib = measures.library(&q.libraries, &graph.libraries);
        let entry = match best_mapping(q, &graph, &mappings, &nw, &measures, lib) {
            Some((score, m)) => ScoredResult {
                notebook: corpus.id(i).clone(),
                score,
                pairs: named_pairs(q, &graph, &mappings[m]),
                mapping: Some(mappings[m].clone()),
            },
            None => ScoredResult { notebook: corpus.id(i).clone(), score: 0.0, mapping: None, pairs: Vec::new() },
        };
        entries.push(entry);
    }
    stats.body_reads = corpus.body_reads() - reads_before;
    stats.measures = measures.counts();
    Ok(SearchReport { results: rank(entries, opts), stats, trace: None })
}

/// The four facets of a notebook or a set-based query.
#[derive(Debug, Clone)]
pub struct SetContents {
    /// All code cells joined by newlines.
    pub code: CodeText,
    pub tables: Vec<Arc<TableData>>,
    pub outputs: Vec<OutputKind>,
    pub libraries: BTreeSet<String>,
}

/// A set-based query has the same shape as a notebook's contents.
pub type SetQuery = SetContents;

impl SetContents {
    pub fn new(
        code: impl Into<String>,
        tables: Vec<TableData>,
        outputs: Vec<OutputKind>,
        libraries: BTreeSet<String>,
    ) -> Self {
        Self { code: CodeText::new(code), tables: tables.into_iter().map(Arc::new).collect(), outputs, libraries }
    }

    pub fn from_notebook(n: &Notebook) -> Self {
        let code: Vec<&str> = n.cells.iter().map(|c| c.source.as_str()).collect();
        Self::new(
            code.join("\n"),
            n.tables.clone(),
            n.outputs.iter().map(|o| o.kind).collect(),
            n.libraries.clone(),
        )
    }

    /// Contents recovered from a workflow graph; code nodes keep node order.
    pub fn from_graph(w: &WorkflowGraph) -> Self {
        let mut code = Vec::new();
        let mut tables = Vec::new();
        let mut outputs = Vec::new();
        for node in w.dag.nodes() {
            match &node.attr {
                NodeAttr::Code(c) => code.push(c.source()),
                NodeAttr::Data(t) => tables.push(Arc::clone(t)),
                NodeAttr::Output(k) => outputs.push(*k),
                NodeAttr::Wildcard => {}
            }
        }
        Self { code: CodeText::new(code.join("\n")), tables, outputs, libraries: w.libraries.clone() }
    }
}

const FACETS: [NodeLabel; 3] = [NodeLabel::Code, NodeLabel::Data, NodeLabel::Output];

fn facet_sim(measures: &Measures, facet: usize, q: &SetContents, n: &SetContents) -> f64 {
    match facet {
        0 => measures.code(&q.code, &n.code),
        1 => {
            let qt: Vec<&TableData> = q.tables.iter().map(Arc::as_ref).collect();
            let nt: Vec<&TableData> = n.tables.iter().map(Arc::as_ref).collect();
            measures.table_sets(&qt, &nt)
        }
        2 => measures.output_multiset(&q.outputs, &n.outputs),
        _ => measures.library(&q.libraries, &n.libraries),
    }
}

fn facet_weights(w: &Weights) -> [f64; 4] {
    [w.code, w.data, w.output, w.library]
}

/// Weighted sum in facet order; unscored facets count as perfect matches.
fn set_sum(weights: &[f64; 4], sims: &[Option<f64>; 4]) -> f64 {
    weights.iter().zip(sims).fold(0.0, |acc, (w, s)| acc + w * s.unwrap_or(1.0))
}

fn set_score_with(measures: &Measures, q: &SetContents, n: &SetContents, w: &Weights) -> f64 {
    let mut sims = [None; 4];
    for (f, s) in sims.iter_mut().enumerate() {
        *s = Some(facet_sim(measures, f, q, n));
    }
    set_sum(&facet_weights(w), &sims)
}

/// Weighted sum of the four whole-facet similarities.
pub fn set_based_score(q: &SetQuery, n: &Notebook, w: &Weights) -> f64 {
    set_score_with(&Measures::new(SimConfig::default()), q, &SetContents::from_notebook(n), w)
}

/// Set-based top-k: the non-θ facets are scored for every notebook, then θ
/// facets in descending tentative order until the bound drops below the
/// running k-th score.
pub fn set_based_search_topk(
    q: &SetQuery,
    corpus: &Corpus,
    opts: &SearchOptions,
) -> Result<Vec<ScoredResult>, SearchError> {
    Ok(set_based_search_report(q, corpus, opts)?.results)
}

pub fn set_based_search_report(
    q: &SetQuery,
    corpus: &Corpus,
    opts: &SearchOptions,
) -> Result<SearchReport, SearchError> {
    opts.check(corpus)?;
    let reads_before = corpus.body_reads();
    let measures = opts.measures();
    let weights = facet_weights(&opts.weights);
    let theta = FACETS.iter().position(|&l| l == opts.theta).expect("content label");

    let mut rows: Vec<(usize, [Option<f64>; 4])> = (0..corpus.len())
        .into_par_iter()
        .map(|i| -> Result<_, SearchError> {
            let n = SetContents::from_graph(corpus.graph(i)?.as_ref());
            let mut sims = [None; 4];
            for f in (0..4).filter(|&f| f != theta) {
                sims[f] = Some(facet_sim(&measures, f, q, &n));
            }
            Ok((i, sims))
        })
        .collect::<Result<_, _>>()?;

    if opts.toggles.ordering {
        rows.sort_by(|a, b| {
            set_sum(&weights, &b.1).total_cmp(&set_sum(&weights, &a.1)).then_with(|| corpus.id(a.0).cmp(corpus.id(b.0)))
        });
    }

    let mut stats = SearchStats { notebooks: corpus.len(), mappings: corpus.len(), ..Default::default() };
    let mut top = TopScores::new(opts.k);
    let mut entries = Vec::with_capacity(rows.len());
    for (i, mut sims) in rows {
        let bound = set_sum(&weights, &sims);
        if opts.toggles.pruning && bound < top.threshold() {
            stats.pruned_topk += 1;
            continue;
        }
        let n = SetContents::from_graph(corpus.graph(i)?.as_ref());
        sims[theta] = Some(facet_sim(&measures, theta, q, &n));
        let score = set_sum(&weights, &sims);
        top.replace(None, score);
        entries.push(ScoredResult { notebook: corpus.id(i).clone(), score, mapping: None, pairs: Vec::new() });
    }
    if opts.include_zero {
        let scored: BTreeSet<&NotebookId> = entries.iter().map(|r| &r.notebook).collect();
        let zeros: Vec<ScoredResult> = corpus
            .ids()
            .filter(|id| !scored.contains(id))
            .map(|id| ScoredResult { notebook: id.clone(), score: 0.0, mapping: None, pairs: Vec::new() })
            .collect();
        entries.extend(zeros);
    }
    stats.body_reads = corpus.body_reads() - reads_before;
    stats.measures = measures.counts();
    Ok(SearchReport { results: rank(entries, opts), stats, trace: None })
}

/// Set-based ranking computed in full for every notebook.
pub fn exhaustive_set_ranking(
    q: &SetQuery,
    corpus: &Corpus,
    opts: &SearchOptions,
) -> Result<Vec<ScoredResult>, SearchError> {
    opts.check(corpus)?;
    let measures = Measures::new(opts.sim.clone());
    let mut entries = Vec::with_capacity(corpus.len());
    for i in 0..corpus.len() {
        let n = SetContents::from_graph(corpus.graph(i)?.as_ref());
        let score = set_score_with(&measures, q, &n, &opts.weights);
        entries.push(ScoredResult { notebook: corpus.id(i).clone(), score, mapping: None, pairs: Vec::new() });
    }
    Ok(rank(entries, opts))
}
