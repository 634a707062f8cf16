//! Deterministic synthetic notebooks and queries.
//!
//! Notebooks draw cells, columns and whole tables from shared pools so that
//! identical contents recur across the corpus. Queries are connected
//! fragments cut from corpus graphs, optionally with wildcards spanning
//! longer paths, so each query matches at least its source graph.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Node, NodeAttr, NodeLabel, QueryGraph, WorkflowGraph};
use crate::matching::build_reachability;
use crate::model::{Column, Notebook, NotebookId, Output, OutputKind, TableData};

const LIBRARIES: [(&str, &str); 12] = [
    ("pandas", "import pandas as pd"),
    ("numpy", "import numpy as np"),
    ("matplotlib", "import matplotlib.pyplot as plt"),
    ("seaborn", "import seaborn as sns"),
    ("sklearn", "from sklearn.model_selection import train_test_split"),
    ("scipy", "from scipy import stats"),
    ("xgboost", "import xgboost as xgb"),
    ("lightgbm", "import lightgbm as lgb"),
    ("statsmodels", "import statsmodels.api as sm"),
    ("plotly", "import plotly.express as px"),
    ("tensorflow", "import tensorflow as tf"),
    ("torch", "import torch"),
];

const STATEMENTS: [&str; 40] = [
    "x = np.arange(10)",
    "y = x * 2",
    "print(y.sum())",
    "model = xgb.XGBClassifier()",
    "model.fit(X_train, y_train)",
    "pred = model.predict(X_test)",
    "score = accuracy_score(y_test, pred)",
    "print(score)",
    "plt.figure(figsize=(10, 6))",
    "plt.show()",
    "sns.set_style('whitegrid')",
    "X_train, X_test, y_train, y_test = train_test_split(X, y)",
    "features = ['age', 'fare', 'pclass']",
    "target = 'survived'",
    "params = {'max_depth': 4, 'eta': 0.1}",
    "for i in range(5): print(i)",
    "result = stats.ttest_ind(a, b)",
    "print(result.pvalue)",
    "fig = px.scatter(x=x, y=y)",
    "fig.show()",
    "np.random.seed(0)",
    "weights = np.ones(len(features))",
    "clf = lgb.LGBMClassifier(n_estimators=100)",
    "clf.fit(X, y)",
    "importance = clf.feature_importances_",
    "ols = sm.OLS(y, X).fit()",
    "print(ols.summary())",
    "tensor = torch.zeros(3, 3)",
    "layer = tf.keras.layers.Dense(16)",
    "history = []",
    "history.append(score)",
    "best = max(history)",
    "threshold = 0.5",
    "labels = pred > threshold",
    "mean_value = np.mean(y)",
    "std_value = np.std(y)",
    "print(mean_value, std_value)",
    "n_bins = 20",
    "plt.hist(y, bins=n_bins)",
    "plt.title('distribution')",
];

const TABLE_VERBS: [&str; 8] = [
    "describe()",
    "head()",
    "info()",
    "isnull().sum()",
    "shape",
    "columns",
    "dropna()",
    "groupby('key').size()",
];

const COLUMN_NAMES: [&str; 12] =
    ["id", "age", "fare", "name", "city", "score", "price", "year", "label", "count", "rate", "key"];

/// Corpus generator settings. Ranges are inclusive.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub cells: (usize, usize),
    pub tables: (usize, usize),
    pub columns: (usize, usize),
    pub outputs: (usize, usize),
    pub libraries: (usize, usize),
    /// Probability that a cell is copied from the shared cell pool.
    pub shared_cell_rate: f64,
    /// Probability that a table is copied from the shared table pool.
    pub shared_table_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            cells: (5, 30),
            tables: (0, 5),
            columns: (1, 4),
            outputs: (0, 10),
            libraries: (2, 6),
            shared_cell_rate: 0.3,
            shared_table_rate: 0.4,
        }
    }
}

struct Pools {
    cells: Vec<String>,
    columns: Vec<Column>,
    tables: Vec<Vec<Column>>,
}

fn random_cell(rng: &mut ChaCha8Rng) -> String {
    let lines = rng.gen_range(1..=4);
    (0..lines).map(|_| *STATEMENTS.choose(rng).unwrap()).collect::<Vec<_>>().join("\n")
}

fn random_column(rng: &mut ChaCha8Rng, name: &str) -> Column {
    let numeric = rng.gen_bool(0.6);
    let start = rng.gen_range(0..40);
    let len = rng.gen_range(3..=15);
    let values = (start..start + len).map(|v| if numeric { v.to_string() } else { format!("v{v}") });
    Column::new(name, values)
}

fn pools(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Pools {
    let cells = (0..25).map(|_| random_cell(rng)).collect();
    let columns: Vec<Column> = (0..30).map(|i| random_column(rng, COLUMN_NAMES[i % COLUMN_NAMES.len()])).collect();
    let tables = (0..8).map(|_| table_columns(rng, cfg, &columns)).collect();
    Pools { cells, columns, tables }
}

/// Distinct-named columns drawn from the column pool.
fn table_columns(rng: &mut ChaCha8Rng, cfg: &SynthConfig, pool: &[Column]) -> Vec<Column> {
    let width = rng.gen_range(cfg.columns.0..=cfg.columns.1);
    let mut names = BTreeSet::new();
    let mut out = Vec::with_capacity(width);
    while out.len() < width {
        let c = pool.choose(rng).unwrap();
        if names.insert(c.name.clone()) {
            out.push(c.clone());
        }
    }
    out
}

fn generate_notebook(rng: &mut ChaCha8Rng, cfg: &SynthConfig, pools: &Pools, id: NotebookId) -> Notebook {
    let n_cells = rng.gen_range(cfg.cells.0..=cfg.cells.1);
    let n_libs = rng.gen_range(cfg.libraries.0..=cfg.libraries.1);
    let libs: Vec<_> = LIBRARIES.choose_multiple(rng, n_libs).copied().collect();

    let mut cells: Vec<String> = (0..n_cells)
        .map(|_| {
            if rng.gen_bool(cfg.shared_cell_rate) {
                pools.cells.choose(rng).unwrap().clone()
            } else {
                random_cell(rng)
            }
        })
        .collect();
    cells[0] = libs.iter().map(|(_, line)| *line).collect::<Vec<_>>().join("\n");

    // Each table is loaded in some cell after the imports and read by a few
    // later cells.
    let n_tables = rng.gen_range(cfg.tables.0..=cfg.tables.1).min(n_cells - 1);
    let mut tables = Vec::with_capacity(n_tables);
    for t in 0..n_tables {
        let name = format!("df{t}");
        let columns = if rng.gen_bool(cfg.shared_table_rate) {
            pools.tables.choose(rng).unwrap().clone()
        } else {
            table_columns(rng, cfg, &pools.columns)
        };
        let writer = rng.gen_range(1..n_cells);
        cells[writer].push_str(&format!("\n{name} = pd.read_csv('{name}.csv')"));
        for _ in 0..rng.gen_range(0..=3) {
            if writer + 1 < n_cells {
                let reader = rng.gen_range(writer + 1..n_cells);
                let verb = TABLE_VERBS.choose(rng).unwrap();
                cells[reader].push_str(&format!("\n{name}.{verb}"));
            }
        }
        tables.push(TableData::new(name, columns));
    }

    let mut n = Notebook::new(id, cells);
    n.tables = tables;
    n.libraries = libs.iter().map(|(name, _)| name.to_string()).collect();
    for _ in 0..rng.gen_range(cfg.outputs.0..=cfg.outputs.1) {
        let cell = rng.gen_range(0..n_cells);
        n.outputs.push(Output { cell, kind: *OutputKind::ALL.choose(rng).unwrap() });
    }
    n
}

/// `count` notebooks with ids `nb0000`, `nb0001`, ...
pub fn generate_corpus(count: usize, seed: u64) -> Vec<Notebook> {
    generate_corpus_with(count, seed, &SynthConfig::default())
}

pub fn generate_corpus_with(count: usize, seed: u64, cfg: &SynthConfig) -> Vec<Notebook> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pools = pools(&mut rng, cfg);
    (0..count)
        .map(|i| {
            let id = NotebookId::new(format!("nb{i:04}")).expect("non-empty id");
            generate_notebook(&mut rng, cfg, &pools, id)
        })
        .collect()
}

/// Query generator settings. Ranges are inclusive.
#[derive(Debug, Clone)]
pub struct QueryConfig {
    pub content_nodes: (usize, usize),
    pub wildcards: (usize, usize),
    /// Probability that a code node's text is replaced by an unrelated cell.
    pub rewrite_rate: f64,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self { content_nodes: (1, 6), wildcards: (0, 2), rewrite_rate: 0.3 }
    }
}

pub fn generate_queries(graphs: &[WorkflowGraph], count: usize, seed: u64) -> Vec<QueryGraph> {
    generate_queries_with(graphs, count, seed, &QueryConfig::default())
}

pub fn generate_queries_with(graphs: &[WorkflowGraph], count: usize, seed: u64, cfg: &QueryConfig) -> Vec<QueryGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sources: Vec<&WorkflowGraph> = graphs.iter().filter(|g| !g.dag.is_empty()).collect();
    if sources.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            let w = sources[rng.gen_range(0..sources.len())];
            cut_query(&mut rng, cfg, w)
        })
        .collect()
}

/// A connected fragment of `w` with induced edges, plus wildcards.
fn cut_query(rng: &mut ChaCha8Rng, cfg: &QueryConfig, w: &WorkflowGraph) -> QueryGraph {
    let dag = &w.dag;
    let target = rng.gen_range(cfg.content_nodes.0..=cfg.content_nodes.1);
    let mut picked = vec![rng.gen_range(0..dag.len())];
    while picked.len() < target {
        let frontier: BTreeSet<usize> = picked
            .iter()
            .flat_map(|&v| dag.successors(v).iter().chain(dag.predecessors(v)))
            .copied()
            .filter(|v| !picked.contains(v))
            .collect();
        let frontier: Vec<usize> = frontier.into_iter().collect();
        match frontier.choose(rng) {
            Some(&v) => picked.push(v),
            None => break,
        }
    }
    picked.sort_unstable();

    let mut nodes: Vec<Node> = picked
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let name = format!("q{i}");
            match &dag.node(v).attr {
                NodeAttr::Code(_) if rng.gen_bool(cfg.rewrite_rate) => Node::code(name, random_cell(rng)),
                attr => Node::new(name, attr.clone()),
            }
        })
        .collect();
    let local = |v: usize| picked.binary_search(&v).ok();
    let mut edges: Vec<(usize, usize)> =
        dag.edges().iter().filter_map(|&(a, b)| Some((local(a)?, local(b)?))).collect();

    let reach = build_reachability(w);
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for (i, &a) in picked.iter().enumerate() {
        for (j, &b) in picked.iter().enumerate() {
            if reach.reaches(a, b) && !dag.has_edge(a, b) {
                spans.push((i, j));
            }
        }
    }
    let n_wild = rng.gen_range(cfg.wildcards.0..=cfg.wildcards.1).min(spans.len());
    for (k, &(i, j)) in spans.choose_multiple(rng, n_wild).enumerate() {
        let star = nodes.len();
        nodes.push(Node::wildcard(format!("w{k}")));
        edges.push((i, star));
        edges.push((star, j));
    }

    let mut libraries: BTreeSet<String> =
        w.libraries.iter().filter(|_| rng.gen_bool(0.7)).cloned().collect();
    if rng.gen_bool(0.3) {
        libraries.insert(LIBRARIES.choose(rng).unwrap().0.to_string());
    }
    QueryGraph::new(nodes, edges, libraries).expect("fragment of a DAG is a valid query")
}

/// Number of query nodes carrying a content label.
pub fn content_size(q: &QueryGraph) -> usize {
    NodeLabel::CONTENT.iter().map(|&l| q.size(l)).sum()
}
