mod query;

use std::collections::{BTreeMap, HashSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nbsim::error::SearchError;
use nbsim::graph::{build_workflow_graph, NodeLabel, WorkflowGraph};
use nbsim::ingest::{attach_tables, parse_notebook, TableManifest};
use nbsim::model::NotebookId;
use nbsim::search::{self, ScoredResult, SearchOptions, SearchReport, Toggles};
use nbsim::sim::SimConfig;
use nbsim::store::{load_corpus, save_corpus, verify_index, Corpus};
use nbsim::synth;
use query::{load_query, LoadedQuery, Query};
use tracing::warn;

const EXIT_INGEST: u8 = 1;
const EXIT_QUERY: u8 = 2;
const EXIT_CORPUS: u8 = 3;
const EXIT_GUARD: u8 = 4;

#[derive(Parser)]
#[command(name = "nbsim", version, about = "Similarity search over computational notebooks")]
struct Cli {
    /// Worker threads for the parallel search phase (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse notebooks, build workflow graphs and write a corpus.
    Ingest(IngestArgs),
    /// Run a top-k query against a corpus.
    Search(SearchArgs),
    /// Time a query under every combination of optimizations.
    Bench(BenchArgs),
    /// Generate a synthetic corpus (and optionally queries).
    Gen(GenArgs),
    /// Check that stored signatures match the stored graphs.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Notebook documents (.ipynb); the file stem becomes the notebook id.
    #[arg(required = true)]
    notebooks: Vec<PathBuf>,
    /// Corpus directory to write.
    #[arg(long, short)]
    out: PathBuf,
    /// Table manifests named `<notebook stem>.tables.json`. A manifest with
    /// that name next to a notebook is picked up automatically.
    #[arg(long = "manifest")]
    manifests: Vec<PathBuf>,
    /// Skip unreadable notebooks instead of failing.
    #[arg(long)]
    skip_bad: bool,
}

#[derive(Args, Clone)]
struct SearchFlags {
    /// Number of results (overrides the query file; default 10).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    no_prune: bool,
    #[arg(long)]
    no_order: bool,
    #[arg(long)]
    no_cache: bool,
    #[arg(long)]
    no_index: bool,
    /// Pad the ranking with zero-score notebooks up to k.
    #[arg(long)]
    include_zero: bool,
    /// Label whose similarities are deferred (overrides the query file).
    #[arg(long, value_parser = parse_theta)]
    theta: Option<NodeLabel>,
}

fn parse_theta(s: &str) -> Result<NodeLabel, String> {
    match s.parse::<NodeLabel>() {
        Ok(NodeLabel::Wildcard) | Err(_) => Err(format!("`{s}` is not one of code, data, output")),
        Ok(l) => Ok(l),
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Jsonl,
}

#[derive(Args)]
struct SearchArgs {
    corpus: PathBuf,
    query: PathBuf,
    #[command(flatten)]
    flags: SearchFlags,
    /// Use the exhaustive baseline instead of the optimized search.
    #[arg(long)]
    naive: bool,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Args)]
struct BenchArgs {
    corpus: PathBuf,
    query: PathBuf,
    #[command(flatten)]
    flags: SearchFlags,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    /// Artificial cost per column-pair comparison, in milliseconds.
    #[arg(long, default_value_t = 0.0)]
    column_cost_ms: f64,
    /// Toggle subsets to run.
    #[arg(long, value_enum, default_value = "all")]
    matrix: Matrix,
    /// Corrupts one optimized ranking to exercise the correctness guard.
    #[arg(long, hide = true)]
    debug_inject_fault: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Matrix {
    /// All 16 subsets.
    All,
    /// Everything off and everything on.
    Ends,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
    /// Also write this many graph queries cut from the corpus.
    #[arg(long, default_value_t = 0)]
    queries: usize,
    /// Where to write queries (default: <out>/queries).
    #[arg(long)]
    query_dir: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    corpus: PathBuf,
}

/// An error with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait ExitWith<T> {
    fn exit_with(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn exit_with(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

fn search_failure(e: SearchError) -> Failure {
    let code = match e {
        SearchError::InvalidQuery(_) => EXIT_QUERY,
        SearchError::EmptyCorpus | SearchError::Store(_) => EXIT_CORPUS,
    };
    Failure { code, error: e.into() }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("cannot configure thread pool: {e}");
        }
    }
    let outcome = match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Search(a) => cmd_search(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn stem(path: &Path) -> String {
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    for suffix in [".tables.json", ".ipynb", ".json"] {
        if let Some(s) = name.strip_suffix(suffix) {
            return s.to_string();
        }
    }
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or(name)
}

fn ingest_one(path: &Path, manifests: &BTreeMap<String, PathBuf>) -> Result<WorkflowGraph> {
    let id = NotebookId::new(stem(path))?;
    let bytes = std::fs::read(path)?;
    let mut n = parse_notebook(&bytes, id.clone())?;
    let sibling = path.with_file_name(format!("{id}.tables.json"));
    let manifest = manifests.get(id.as_str()).cloned().or_else(|| sibling.exists().then_some(sibling));
    if let Some(m) = manifest {
        n = attach_tables(n, &TableManifest::load(&m)?)?;
    }
    Ok(build_workflow_graph(&n)?)
}

fn cmd_ingest(a: IngestArgs) -> Result<(), Failure> {
    let manifests: BTreeMap<String, PathBuf> = a.manifests.iter().map(|p| (stem(p), p.clone())).collect();
    let mut graphs = Vec::new();
    let mut failures = Vec::new();
    let mut ids = HashSet::new();
    for path in &a.notebooks {
        match ingest_one(path, &manifests) {
            Ok(g) if !ids.insert(g.owner.clone()) => {
                failures.push(format!("{}: duplicate notebook id `{}`", path.display(), g.owner))
            }
            Ok(g) => graphs.push(g),
            Err(e) => failures.push(format!("{}: {e:#}", path.display())),
        }
    }
    if !failures.is_empty() {
        if !a.skip_bad {
            for f in &failures {
                eprintln!("error: {f}");
            }
            return Err(Failure { code: EXIT_INGEST, error: anyhow!("{} notebook(s) failed; corpus not written", failures.len()) });
        }
        for f in &failures {
            eprintln!("warning: skipped {f}");
        }
    }
    save_corpus(&graphs, &a.out).exit_with(EXIT_INGEST)?;

    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{:<28} {:>6} {:>6} {:>6} {:>6} {:>6}", "notebook", "code", "data", "output", "nodes", "edges");
    let (mut nodes, mut edges) = (0, 0);
    for g in &graphs {
        let s = g.signature();
        nodes += g.dag.len();
        edges += g.dag.edges().len();
        let _ = writeln!(
            out,
            "{:<28} {:>6} {:>6} {:>6} {:>6} {:>6}",
            g.owner.as_str(),
            s.count_code,
            s.count_data,
            s.count_output,
            g.dag.len(),
            g.dag.edges().len()
        );
    }
    let _ = writeln!(out, "{:<28} {:>6} {:>6} {:>6} {:>6} {:>6}", format!("total ({})", graphs.len()), "", "", "", nodes, edges);
    Ok(())
}

fn options(q: &LoadedQuery, flags: &SearchFlags) -> SearchOptions {
    let base = match q.query {
        Query::Graph(_) => SearchOptions::graph(10),
        Query::Set(_) => SearchOptions::set(10),
    };
    SearchOptions {
        k: flags.k.or(q.k).unwrap_or(10),
        weights: q.weights,
        theta: flags.theta.or(q.theta).unwrap_or(NodeLabel::Data),
        toggles: Toggles {
            pruning: q.toggles.pruning && !flags.no_prune,
            ordering: q.toggles.ordering && !flags.no_order,
            caching: q.toggles.caching && !flags.no_cache,
            indexing: q.toggles.indexing && !flags.no_index,
        },
        include_zero: flags.include_zero,
        ..base
    }
}

fn run(q: &Query, corpus: &Corpus, opts: &SearchOptions, naive: bool) -> Result<SearchReport, SearchError> {
    match (q, naive) {
        (Query::Graph(g), false) => search::search_topk_report(g, corpus, opts, false),
        (Query::Graph(g), true) => search::naive_search_report(g, corpus, opts),
        (Query::Set(s), false) => search::set_based_search_report(s, corpus, opts),
        (Query::Set(s), true) => Ok(SearchReport {
            results: search::exhaustive_set_ranking(s, corpus, opts)?,
            stats: Default::default(),
            trace: None,
        }),
    }
}

fn cmd_search(a: SearchArgs) -> Result<(), Failure> {
    let q = load_query(&a.query).exit_with(EXIT_QUERY)?;
    let corpus = load_corpus(&a.corpus).exit_with(EXIT_CORPUS)?;
    let opts = options(&q, &a.flags);
    let report = run(&q.query, &corpus, &opts, a.naive).map_err(search_failure)?;
    print_results(&report.results, a.format);
    Ok(())
}

fn print_results(results: &[ScoredResult], format: Format) {
    let mut out = std::io::stdout().lock();
    match format {
        Format::Table => {
            let _ = writeln!(out, "{:>4}  {:<28} {:>12}  mapping", "rank", "notebook", "score");
            for (i, r) in results.iter().enumerate() {
                let mapping: Vec<String> = r.pairs.iter().map(|(q, w)| format!("{q}->{w}")).collect();
                let _ = writeln!(out, "{:>4}  {:<28} {:>12.6}  {}", i + 1, r.notebook.as_str(), r.score, mapping.join(" "));
            }
        }
        Format::Jsonl => {
            for (i, r) in results.iter().enumerate() {
                let mapping = r.mapping.as_ref().map(|_| &r.pairs);
                let line = serde_json::json!({ "rank": i + 1, "id": r.notebook, "score": r.score, "mapping": mapping });
                let _ = writeln!(out, "{line}");
            }
        }
    }
}

fn agrees(got: &[ScoredResult], want: &[ScoredResult]) -> bool {
    got.len() == want.len()
        && got.iter().zip(want).all(|(g, w)| g.notebook == w.notebook && (g.score - w.score).abs() <= 1e-9)
}

struct BenchRow {
    toggles: Toggles,
    elapsed: Duration,
    report: SearchReport,
}

fn cmd_bench(a: BenchArgs) -> Result<(), Failure> {
    let q = load_query(&a.query).exit_with(EXIT_QUERY)?;
    let mut opts = options(&q, &a.flags);
    if !(a.column_cost_ms.is_finite() && a.column_cost_ms >= 0.0) {
        return Err(Failure { code: EXIT_QUERY, error: anyhow!("--column-cost-ms must be a non-negative number") });
    }
    opts.sim = SimConfig { column_pair_cost: Duration::from_secs_f64(a.column_cost_ms / 1000.0), ..SimConfig::default() };
    let repetitions = a.repetitions.max(1);

    let fresh = || load_corpus(&a.corpus).exit_with(EXIT_CORPUS);
    let reference = run(&q.query, &fresh()?, &opts, true).map_err(search_failure)?.results;

    let subsets: Vec<Toggles> = match a.matrix {
        Matrix::All => Toggles::subsets().collect(),
        Matrix::Ends => vec![Toggles::NONE, Toggles::ALL],
    };
    let mut rows = Vec::new();
    for &toggles in &subsets {
        for _ in 0..repetitions {
            let corpus = fresh()?;
            let opts = SearchOptions { toggles, ..opts.clone() };
            let start = Instant::now();
            let report = run(&q.query, &corpus, &opts, false).map_err(search_failure)?;
            rows.push(BenchRow { toggles, elapsed: start.elapsed(), report });
        }
    }
    if a.debug_inject_fault {
        if let Some(r) = rows.iter_mut().find(|r| r.toggles != Toggles::NONE) {
            match r.report.results.first_mut() {
                Some(top) => top.score += 1.0,
                None => r.report.results.push(ScoredResult {
                    notebook: NotebookId::new("injected-fault").expect("non-empty"),
                    score: 1.0,
                    mapping: None,
                    pairs: Vec::new(),
                }),
            }
        }
    }
    if let Some(bad) = rows.iter().find(|r| !agrees(&r.report.results, &reference)) {
        return Err(Failure {
            code: EXIT_GUARD,
            error: anyhow!("toggle subset `{}` disagrees with the naive ranking", bad.toggles.label()),
        });
    }

    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "{:<24} {:>6} {:>12} {:>10} {:>12} {:>10} {:>8} {:>8} {:>8}",
        "toggles", "run", "time_ms", "measures", "col_pairs", "mappings", "idx_pru", "bnd_pru", "reads"
    );
    let mut medians = BTreeMap::new();
    for chunk in rows.chunks(repetitions) {
        for (i, r) in chunk.iter().enumerate() {
            let s = &r.report.stats;
            let _ = writeln!(
                out,
                "{:<24} {:>6} {:>12.3} {:>10} {:>12} {:>10} {:>8} {:>8} {:>8}",
                r.toggles.label(),
                i + 1,
                r.elapsed.as_secs_f64() * 1e3,
                s.measures.total(),
                s.measures.column_pairs,
                s.mappings,
                s.index_pruned,
                s.pruned_topk + s.pruned_best,
                s.body_reads
            );
        }
        let mut times: Vec<Duration> = chunk.iter().map(|r| r.elapsed).collect();
        times.sort();
        let median = times[times.len() / 2];
        medians.insert(chunk[0].toggles.label(), median);
        let _ = writeln!(out, "{:<24} {:>6} {:>12.3}", chunk[0].toggles.label(), "median", median.as_secs_f64() * 1e3);
    }
    if let (Some(none), Some(all)) = (medians.get(&Toggles::NONE.label()), medians.get(&Toggles::ALL.label())) {
        let _ = writeln!(out, "speedup (all on vs all off): {:.2}x", none.as_secs_f64() / all.as_secs_f64().max(1e-9));
    }
    let _ = writeln!(out, "all {} toggle subsets agree with the naive ranking ({} results)", subsets.len(), reference.len());
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<(), Failure> {
    let graphs: Vec<WorkflowGraph> = synth::generate_corpus(a.count, a.seed)
        .iter()
        .map(build_workflow_graph)
        .collect::<Result<_, _>>()
        .exit_with(EXIT_INGEST)?;
    save_corpus(&graphs, &a.out).exit_with(EXIT_INGEST)?;
    if a.queries > 0 {
        let dir = a.query_dir.clone().unwrap_or_else(|| a.out.join("queries"));
        std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display())).exit_with(EXIT_INGEST)?;
        for (i, q) in synth::generate_queries(&graphs, a.queries, a.seed.wrapping_add(1)).iter().enumerate() {
            query::write_graph_query(q, &dir.join(format!("q{i:03}.json"))).exit_with(EXIT_INGEST)?;
        }
    }
    println!("wrote {} notebooks to {}", graphs.len(), a.out.display());
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Result<(), Failure> {
    let corpus = load_corpus(&a.corpus).exit_with(EXIT_CORPUS)?;
    let stale = verify_index(&corpus);
    if stale.is_empty() {
        println!("index fresh ({} notebooks)", corpus.len());
        return Ok(());
    }
    for id in &stale {
        println!("stale {id}");
    }
    Err(Failure { code: EXIT_CORPUS, error: anyhow!("{} stale signature(s)", stale.len()) })
}
