//! Content similarity measures for code, tables, outputs and libraries, and
//! a content-addressed cache for their results.
//!
//! All measures are symmetric and return values in `[0, 1]`. Two empty
//! contents compare as `1.0`, an empty and a non-empty one as `0.0`.

use std::collections::BTreeSet;
use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;
use std::time::Duration;

use lru::LruCache;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::model::{Digest, OutputKind, TableData};

pub const DEFAULT_DELIMITERS: &str = " \n.=";

/// Set of non-empty code tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSet(BTreeSet<String>);

impl TokenSet {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &String> {
        self.0.iter()
    }

    pub fn as_set(&self) -> &BTreeSet<String> {
        &self.0
    }
}

/// Splits source on the default delimiters: space, newline, period, equals.
pub fn tokenize_code(source: &str) -> TokenSet {
    tokenize_code_with(source, DEFAULT_DELIMITERS)
}

pub fn tokenize_code_with(source: &str, delimiters: &str) -> TokenSet {
    TokenSet(
        source
            .split(|c: char| delimiters.contains(c))
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect(),
    )
}

/// `|a ∩ b| / |a ∪ b|` over sorted sets.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (mut x, mut y) = (a.iter(), b.iter());
    let (mut cx, mut cy) = (x.next(), y.next());
    let mut inter = 0usize;
    while let (Some(p), Some(q)) = (cx, cy) {
        match p.cmp(q) {
            std::cmp::Ordering::Less => cx = x.next(),
            std::cmp::Ordering::Greater => cy = y.next(),
            std::cmp::Ordering::Equal => {
                inter += 1;
                cx = x.next();
                cy = y.next();
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Source text of a code node with lazily computed tokens and digest.
#[derive(Debug)]
pub struct CodeText {
    source: String,
    tokens: OnceLock<TokenSet>,
    digest: OnceLock<Digest>,
}

impl CodeText {
    pub fn new(source: impl Into<String>) -> Self {
        Self { source: source.into(), tokens: OnceLock::new(), digest: OnceLock::new() }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Tokens under the default delimiters, computed once.
    pub fn tokens(&self) -> &TokenSet {
        self.tokens.get_or_init(|| tokenize_code(&self.source))
    }

    pub fn digest(&self) -> &Digest {
        self.digest.get_or_init(|| {
            let mut h = Sha256::new();
            h.update(b"code\0");
            h.update(self.source.as_bytes());
            h.finalize().into()
        })
    }
}

impl Clone for CodeText {
    fn clone(&self) -> Self {
        Self::new(self.source.clone())
    }
}

impl PartialEq for CodeText {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

pub fn sim_code(a: &str, b: &str) -> f64 {
    jaccard(tokenize_code(a).as_set(), tokenize_code(b).as_set())
}

pub fn sim_library(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    jaccard(a, b)
}

pub fn sim_output(a: OutputKind, b: OutputKind) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

/// Multiset Jaccard over output kinds.
pub fn sim_output_multiset(a: &[OutputKind], b: &[OutputKind]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let count = |xs: &[OutputKind], k| xs.iter().filter(|&&x| x == k).count();
    let (mut min, mut max) = (0usize, 0usize);
    for kind in OutputKind::ALL {
        let (p, q) = (count(a, kind), count(b, kind));
        min += p.min(q);
        max += p.max(q);
    }
    min as f64 / max as f64
}

pub fn sim_table(a: &TableData, b: &TableData) -> f64 {
    Measures::new(SimConfig::default()).table(a, b)
}

pub fn sim_table_sets(query: &[TableData], notebook: &[TableData]) -> f64 {
    let q: Vec<&TableData> = query.iter().collect();
    let n: Vec<&TableData> = notebook.iter().collect();
    Measures::new(SimConfig::default()).table_sets(&q, &n)
}

/// Normalizer of the summed column similarities in the table measure.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableDenominator {
    /// Column count of the narrower table.
    #[default]
    Smaller,
    /// Column count of the wider table.
    Larger,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub delimiters: String,
    pub table_denominator: TableDenominator,
    /// Artificial cost added to every column-pair Jaccard (benchmarking).
    pub column_pair_cost: Duration,
    /// `None` keeps every entry.
    pub cache_capacity: Option<NonZeroUsize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            delimiters: DEFAULT_DELIMITERS.to_string(),
            table_denominator: TableDenominator::Smaller,
            column_pair_cost: Duration::ZERO,
            cache_capacity: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MeasureTag {
    Code,
    Table,
    Library,
    Output,
}

type CacheKey = (Digest, Digest, MeasureTag);

/// Symmetric similarity cache keyed by content digests and measure.
///
/// No lock is held while a measure runs, so two threads may compute the same
/// key concurrently; both store the same value.
pub struct SimCache {
    entries: Mutex<LruCache<CacheKey, f64>>,
    hits: AtomicU64,
}

impl std::fmt::Debug for SimCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimCache").field("len", &self.len()).finish()
    }
}

impl SimCache {
    pub fn new(capacity: Option<NonZeroUsize>) -> Self {
        let entries = match capacity {
            Some(cap) => LruCache::new(cap),
            None => LruCache::unbounded(),
        };
        Self { entries: Mutex::new(entries), hits: AtomicU64::new(0) }
    }

    fn key(tag: MeasureTag, a: &Digest, b: &Digest) -> CacheKey {
        if a <= b {
            (*a, *b, tag)
        } else {
            (*b, *a, tag)
        }
    }

    /// Returns the cached value for the unordered pair or computes and stores it.
    pub fn cached(&self, tag: MeasureTag, a: &Digest, b: &Digest, compute: impl FnOnce() -> f64) -> f64 {
        let key = Self::key(tag, a, b);
        if let Some(v) = self.entries.lock().get(&key).copied() {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return v;
        }
        let v = compute();
        self.entries.lock().put(key, v);
        v
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }
}

/// Snapshot of underlying measure invocations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MeasureCounts {
    pub code: u64,
    pub table: u64,
    pub output: u64,
    pub library: u64,
    pub column_pairs: u64,
    pub cache_hits: u64,
}

impl MeasureCounts {
    /// Invocations of the four content measures (column pairs excluded).
    pub fn total(&self) -> u64 {
        self.code + self.table + self.output + self.library
    }
}

#[derive(Debug, Default)]
struct Counters {
    code: AtomicU64,
    table: AtomicU64,
    output: AtomicU64,
    library: AtomicU64,
    column_pairs: AtomicU64,
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

/// Measure evaluator: configuration, invocation counters and an optional
/// cache. Safe to share across threads.
#[derive(Debug)]
pub struct Measures {
    config: SimConfig,
    counters: Counters,
    cache: Option<SimCache>,
}

impl Measures {
    pub fn new(config: SimConfig) -> Self {
        Self { config, counters: Counters::default(), cache: None }
    }

    pub fn with_cache(config: SimConfig) -> Self {
        let cache = SimCache::new(config.cache_capacity);
        Self { config, counters: Counters::default(), cache: Some(cache) }
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn cache(&self) -> Option<&SimCache> {
        self.cache.as_ref()
    }

    pub fn counts(&self) -> MeasureCounts {
        let c = &self.counters;
        MeasureCounts {
            code: c.code.load(Ordering::Relaxed),
            table: c.table.load(Ordering::Relaxed),
            output: c.output.load(Ordering::Relaxed),
            library: c.library.load(Ordering::Relaxed),
            column_pairs: c.column_pairs.load(Ordering::Relaxed),
            cache_hits: self.cache.as_ref().map_or(0, SimCache::hits),
        }
    }

    fn through_cache(&self, tag: MeasureTag, a: &Digest, b: &Digest, f: impl FnOnce() -> f64) -> f64 {
        match &self.cache {
            Some(cache) => cache.cached(tag, a, b, f),
            None => f(),
        }
    }

    pub fn code(&self, a: &CodeText, b: &CodeText) -> f64 {
        self.through_cache(MeasureTag::Code, a.digest(), b.digest(), || {
            bump(&self.counters.code);
            if self.config.delimiters == DEFAULT_DELIMITERS {
                jaccard(a.tokens().as_set(), b.tokens().as_set())
            } else {
                let d = &self.config.delimiters;
                jaccard(tokenize_code_with(&a.source, d).as_set(), tokenize_code_with(&b.source, d).as_set())
            }
        })
    }

    pub fn library(&self, a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
        bump(&self.counters.library);
        sim_library(a, b)
    }

    pub fn output(&self, a: OutputKind, b: OutputKind) -> f64 {
        bump(&self.counters.output);
        sim_output(a, b)
    }

    pub fn output_multiset(&self, a: &[OutputKind], b: &[OutputKind]) -> f64 {
        bump(&self.counters.output);
        sim_output_multiset(a, b)
    }

    /// Greedy column matching: the narrower table's columns are injected into
    /// the wider one's in descending Jaccard order (ties by column indices),
    /// and the selected Jaccards are summed and normalized.
    pub fn table(&self, a: &TableData, b: &TableData) -> f64 {
        self.through_cache(MeasureTag::Table, a.content_digest(), b.content_digest(), || {
            bump(&self.counters.table);
            self.table_uncached(a, b)
        })
    }

    fn table_uncached(&self, a: &TableData, b: &TableData) -> f64 {
        if a.width() == 0 && b.width() == 0 {
            return 1.0;
        }
        if a.width() == 0 || b.width() == 0 {
            return 0.0;
        }
        // Orientation must not depend on argument order, including equal widths.
        let (narrow, wide) = if (a.width(), a.content_digest()) <= (b.width(), b.content_digest()) {
            (a, b)
        } else {
            (b, a)
        };
        let mut pairs = Vec::with_capacity(narrow.width() * wide.width());
        for (i, ca) in narrow.columns.iter().enumerate() {
            for (j, cb) in wide.columns.iter().enumerate() {
                bump(&self.counters.column_pairs);
                if !self.config.column_pair_cost.is_zero() {
                    std::thread::sleep(self.config.column_pair_cost);
                }
                pairs.push((jaccard(&ca.values, &cb.values), i, j));
            }
        }
        let total = greedy_injection(pairs, narrow.width(), wide.width());
        let s = match self.config.table_denominator {
            TableDenominator::Smaller => narrow.width(),
            TableDenominator::Larger => wide.width(),
        };
        total / s as f64
    }

    /// Greedy matching of query tables to notebook tables by pairwise table
    /// similarity, normalized by the number of query tables.
    pub fn table_sets(&self, query: &[&TableData], notebook: &[&TableData]) -> f64 {
        if query.is_empty() && notebook.is_empty() {
            return 1.0;
        }
        if query.is_empty() || notebook.is_empty() {
            return 0.0;
        }
        let mut pairs = Vec::with_capacity(query.len() * notebook.len());
        for (i, q) in query.iter().enumerate() {
            for (j, n) in notebook.iter().enumerate() {
                pairs.push((self.table(q, n), i, j));
            }
        }
        greedy_injection(pairs, query.len(), notebook.len()) / query.len() as f64
    }
}

/// Sum of a greedy injective selection of `(score, row, col)` pairs in
/// descending score order, ties broken by `(row, col)` ascending.
fn greedy_injection(mut pairs: Vec<(f64, usize, usize)>, rows: usize, cols: usize) -> f64 {
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let want = rows.min(cols);
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    let mut picked = 0;
    let mut total = 0.0;
    for (score, i, j) in pairs {
        if picked == want {
            break;
        }
        if row_used[i] || col_used[j] {
            continue;
        }
        row_used[i] = true;
        col_used[j] = true;
        picked += 1;
        total += score;
    }
    total
}
