use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Subcommand, ValueEnum};
use iou_sketch::builder::{choose_layers, parse_corpus, Profiler};
use iou_sketch::format::{decode_superpost, header_blob_name, max_bins_for_header_bytes};
use iou_sketch::stats::deviation_bound;
use iou_sketch::synth::{self, FpOptions, LookupOptions};
use iou_sketch::*;
use serde::Serialize;

use crate::backend::{parse_list, StoreArg};

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, profile and index a corpus, then write the index next to it.
    Build(BuildArgs),
    /// Find documents containing every keyword, or matching a boolean expression.
    Search(SearchArgs),
    /// Corpus statistics and the layer count the optimizer would choose.
    Profile(ProfileArgs),
    /// False-positive and lookup-latency sweeps, written as CSV.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Describe a stored index.
    Inspect(InspectArgs),
    /// Write a synthetic corpus into the store.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DocParserArg {
    Newline,
    Whole,
    LengthPrefixed,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum QueryModeArg {
    Uniform,
    Occurrence,
}

#[derive(Debug, Args)]
struct CorpusArgs {
    /// Blobs holding the documents.
    #[arg(required = true)]
    sources: Vec<String>,
    #[arg(long, value_enum, default_value = "newline")]
    doc_parser: DocParserArg,
    /// Split words on any of these characters instead of whitespace.
    #[arg(long)]
    delimiters: Option<String>,
    /// Lowercase words when indexing and querying.
    #[arg(long)]
    lowercase: bool,
}

impl CorpusArgs {
    fn spec(&self, corpus_id: &str) -> CorpusSpec {
        let mut spec = CorpusSpec::new(corpus_id, self.sources.clone());
        spec.doc_parser = match self.doc_parser {
            DocParserArg::Newline => DocParser::Newline,
            DocParserArg::Whole => DocParser::WholeBlob,
            DocParserArg::LengthPrefixed => DocParser::LengthPrefixed,
        };
        if let Some(d) = &self.delimiters {
            spec.tokenizer.word_parser = WordParser::Delimiters(d.clone());
        }
        spec.tokenizer.lowercase = self.lowercase;
        spec
    }
}

#[derive(Debug, Args)]
struct BudgetArgs {
    /// Total bins, including those reserved for common words.
    #[arg(long, default_value_t = 100_000)]
    bins: u64,
    /// Expected false positives per query the index may return.
    #[arg(long, default_value_t = 1.0)]
    f0: f64,
    /// Failure probability for deviation and top-K bounds.
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
    /// Fraction of bins reserved for exact postings of the most frequent words.
    #[arg(long, default_value_t = 0.01)]
    common_frac: f64,
    #[arg(long, value_enum, default_value = "uniform")]
    query_mode: QueryModeArg,
}

impl BudgetArgs {
    fn query_mode(&self) -> QueryMode {
        match self.query_mode {
            QueryModeArg::Uniform => QueryMode::Uniform,
            QueryModeArg::Occurrence => QueryMode::OccurrenceWeighted,
        }
    }
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    corpus_id: String,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    budget: BudgetArgs,
    /// Cap on the header size in bytes; overrides --bins.
    #[arg(long)]
    memory_limit: Option<u64>,
    /// Fixed layer count instead of the optimizer's choice.
    #[arg(long)]
    layers: Option<u32>,
    /// Extra layers stored for hedged lookups.
    #[arg(long, default_value_t = 0)]
    hedge_extra: u32,
    /// Master seed for the layer hash seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Build timestamp recorded in the header.
    #[arg(long, default_value_t = 0)]
    timestamp: u64,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    corpus_id: String,
    /// Keywords that must all occur.
    #[arg(required_unless_present = "expr", conflicts_with = "expr")]
    keywords: Vec<String>,
    /// Boolean expression: clauses separated by `|`, words in a clause by spaces.
    #[arg(long)]
    expr: Option<String>,
    /// Stop after at least K matches, reading a random sample of candidates first.
    #[arg(long, conflicts_with = "expr")]
    top_k: Option<u64>,
    /// Failure probability of the top-K sample.
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
    /// Also read this many hedging layers and use the fastest answers.
    #[arg(long, default_value_t = 0)]
    hedge: u32,
    #[arg(long, default_value_t = 32)]
    concurrency: usize,
    /// Read layers one request at a time.
    #[arg(long)]
    sequential: bool,
    /// Seed of the top-K sample.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print byte ranges only.
    #[arg(long)]
    no_content: bool,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    budget: BudgetArgs,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    corpus_id: String,
    /// Skip the bin occupancy histogram, which reads the whole superpost blob.
    #[arg(long)]
    no_histogram: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value = "zipf")]
    kind: SynthKind,
    /// Sizes as log10 of documents, words, and words per document, e.g. 3,3,1.
    #[arg(long, default_value = "3,3,1")]
    log10: String,
    /// Zipf exponent.
    #[arg(long, default_value_t = synth::DEFAULT_ZIPF_EXPONENT)]
    exponent: f64,
    /// Corpus seed.
    #[arg(long, default_value_t = 0)]
    corpus_seed: u64,
}

impl SynthArgs {
    fn spec(&self) -> anyhow::Result<SynthSpec> {
        let sizes: Vec<u32> = parse_list(&self.log10).context("--log10")?;
        let [a, b, c] = sizes[..] else {
            bail!("--log10 needs three values");
        };
        if a > 9 || b > 9 || c > 9 {
            bail!("--log10 values above 9 are not supported");
        }
        let mut spec = SynthSpec::from_log10(self.kind, a, b, c, self.corpus_seed);
        spec.zipf_exponent = self.exponent;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    corpus_id: String,
    #[command(flatten)]
    synth: SynthArgs,
    /// Documents per blob; one blob when absent.
    #[arg(long)]
    docs_per_blob: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Observed against expected false positives over a (B, L) grid.
    Fp(FpArgs),
    /// Lookup latency under modeled object-storage latency.
    Lookup(LookupArgs),
}

#[derive(Debug, Args)]
struct BenchOutput {
    /// Write CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl BenchOutput {
    fn write<T: Serialize>(&self, rows: &[T]) -> anyhow::Result<()> {
        match &self.out {
            Some(path) => synth::write_csv(rows, std::fs::File::create(path)?)?,
            None => synth::write_csv(rows, std::io::stdout().lock())?,
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct FpArgs {
    #[command(flatten)]
    synth: SynthArgs,
    /// Use these blobs (newline-delimited) instead of a synthetic corpus.
    #[arg(long, num_args = 1..)]
    corpus: Vec<String>,
    /// Comma-separated bin counts.
    #[arg(long, default_value = "2000")]
    bins: String,
    /// Comma-separated layer counts.
    #[arg(long, default_value = "1,2,4,8")]
    layers: String,
    /// Number of hash seeds; one row per seed and grid point.
    #[arg(long, default_value_t = 1)]
    hash_seeds: u64,
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    /// Sample this many query words instead of querying the whole vocabulary.
    #[arg(long)]
    queries: Option<usize>,
    /// Also query this many words absent from the corpus.
    #[arg(long, default_value_t = 0)]
    oov_queries: usize,
    #[command(flatten)]
    output: BenchOutput,
}

#[derive(Debug, Args)]
pub struct LookupArgs {
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long, default_value = "2000")]
    bins: String,
    #[arg(long, default_value = "1,2,4,8")]
    layers: String,
    #[arg(long, default_value_t = 0)]
    hedge_extra: u32,
    #[arg(long)]
    sequential: bool,
    #[arg(long, default_value_t = 20)]
    queries: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = LatencyModel::cloud().base_ms)]
    base_ms: f64,
    #[arg(long, default_value_t = LatencyModel::cloud().bytes_per_ms)]
    bytes_per_ms: f64,
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    /// Query words whose first-layer read is delayed.
    #[arg(long, default_value_t = 0)]
    stragglers: usize,
    #[arg(long, default_value_t = 1000)]
    straggler_ms: u64,
    #[command(flatten)]
    output: BenchOutput,
}

pub fn run(store: &StoreArg, json: bool, command: Command) -> anyhow::Result<()> {
    match command {
        Command::Build(args) => build(store, json, args),
        Command::Search(args) => search(store, json, args),
        Command::Profile(args) => profile(store, json, args),
        Command::Bench(BenchCommand::Fp(args)) => bench_fp(store, args),
        Command::Bench(BenchCommand::Lookup(args)) => bench_lookup(args),
        Command::Inspect(args) => inspect(store, json, args),
        Command::Gen(args) => gen(store, json, args),
    }
}

fn emit<T: Serialize>(value: &T) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

/// `key: value` lines for the top-level fields of a serializable value.
fn emit_plain<T: Serialize>(value: &T) -> anyhow::Result<()> {
    let v = serde_json::to_value(value)?;
    let mut out = std::io::stdout().lock();
    if let serde_json::Value::Object(map) = v {
        for (k, v) in map {
            match v {
                serde_json::Value::String(s) => writeln!(out, "{k}: {s}")?,
                other => writeln!(out, "{k}: {other}")?,
            }
        }
    }
    Ok(())
}

fn build(store: &StoreArg, json: bool, args: BuildArgs) -> anyhow::Result<()> {
    let store = store.open()?;
    let spec = args.corpus.spec(&args.corpus_id);
    let mut total_bins = args.budget.bins;
    if let Some(limit) = args.memory_limit {
        let names_bytes: u64 = spec.sources.iter().map(|s| s.len() as u64).sum();
        // One layer stores the most pointers per bin, so the bound holds for any L.
        let layers = args.layers.unwrap_or(1);
        total_bins = max_bins_for_header_bytes(
            limit,
            layers,
            args.hedge_extra,
            args.budget.common_frac,
            names_bytes,
            spec.sources.len() as u64,
        )
        .with_context(|| format!("memory limit of {limit} bytes cannot hold a header"))?;
    }
    let params = BuildParams {
        total_bins,
        budget: AccuracyBudget::new(args.budget.f0, args.budget.delta)?,
        common_word_fraction: args.budget.common_frac,
        layers: args.layers,
        seed: args.seed,
        hedge_extra_layers: args.hedge_extra,
        timestamp: args.timestamp,
        query_mode: args.budget.query_mode(),
    };
    let (_, report) = iou_sketch::build(&spec, &params, store.as_ref())?;
    if json {
        emit(&report)
    } else {
        emit_plain(&report)
    }
}

#[derive(Debug, Serialize)]
struct MatchOut {
    blob: String,
    offset: u64,
    length: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    content: Option<String>,
}

#[derive(Debug, Serialize)]
struct SearchOut {
    corpus_id: String,
    query: serde_json::Value,
    matches: Vec<MatchOut>,
    candidates: usize,
    false_positives_removed: usize,
    fetched: usize,
    timings: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_k: Option<TopKOut>,
}

#[derive(Debug, Serialize)]
struct TopKOut {
    k: u64,
    sample_size: u64,
    escalated: bool,
}

fn search(store: &StoreArg, json: bool, args: SearchArgs) -> anyhow::Result<()> {
    let store = store.open()?;
    let options = SearchOptions {
        concurrency: args.concurrency.max(1),
        fetch_mode: if args.sequential { FetchMode::Sequential } else { FetchMode::Batched },
        hedge: if args.hedge > 0 { HedgePolicy::Extra(args.hedge) } else { HedgePolicy::Off },
        ..Default::default()
    };
    let searcher = Searcher::init(store, &header_blob_name(&args.corpus_id), options)?;
    let keywords: Vec<&str> = args.keywords.iter().map(String::as_str).collect();
    let (query, result, top_k) = match (&args.expr, args.top_k) {
        (Some(expr), _) => {
            let q = DnfQuery::parse(expr)?;
            let r = searcher.search_boolean(&q)?;
            (serde_json::to_value(&q)?, r, None)
        }
        (None, Some(k)) => {
            let r = searcher.search_topk(&keywords, k, args.delta, args.seed)?;
            let extra = TopKOut {
                k: r.k,
                sample_size: r.sample_size,
                escalated: r.escalated,
            };
            (serde_json::json!({ "keywords": keywords }), r.result, Some(extra))
        }
        (None, None) => {
            let r = searcher.search(&keywords)?;
            (serde_json::json!({ "keywords": keywords }), r, None)
        }
    };
    let matches: Vec<MatchOut> = result
        .matches
        .iter()
        .zip(&result.documents)
        .map(|(p, bytes)| MatchOut {
            blob: p.blob_name.to_string(),
            offset: p.offset,
            length: p.length,
            content: (!args.no_content).then(|| String::from_utf8_lossy(bytes).into_owned()),
        })
        .collect();
    if json {
        return emit(&SearchOut {
            corpus_id: args.corpus_id,
            query,
            matches,
            candidates: result.candidates,
            false_positives_removed: result.false_positives_removed,
            fetched: result.fetched,
            timings: serde_json::to_value(result.timings)?,
            top_k,
        });
    }
    let mut out = std::io::stdout().lock();
    for m in &matches {
        match &m.content {
            Some(c) => writeln!(out, "{}\t{}\t{}\t{}", m.blob, m.offset, m.length, c.escape_debug())?,
            None => writeln!(out, "{}\t{}\t{}", m.blob, m.offset, m.length)?,
        }
    }
    eprintln!(
        "{} matches, {} candidates, {} false positives removed, lookup {:.1} ms, documents {:.1} ms",
        matches.len(),
        result.candidates,
        result.false_positives_removed,
        result.timings.lookup_ms,
        result.timings.doc_fetch_ms
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct ProfileOut {
    n: u64,
    vocab: u64,
    total_word_occurrences: u64,
    bins: u64,
    sigma_x: f64,
    epsilon: f64,
    l_min: Option<f64>,
    l_max: Option<f64>,
    lower_bound: f64,
    f0: f64,
    delta: f64,
    /// Optimizer choice; absent when the budget is infeasible.
    layers: Option<u32>,
    expected_fp: Option<f64>,
}

fn profile(store: &StoreArg, json: bool, args: ProfileArgs) -> anyhow::Result<()> {
    let store = store.open()?;
    let spec = args.corpus.spec("profile");
    let mut profiler = Profiler::new();
    for doc in parse_corpus(&spec, store.as_ref()) {
        profiler.add(&doc?.words);
    }
    if profiler.documents() == 0 {
        return Err(Error::EmptyCorpus.into());
    }
    let prof = profiler.finish(args.budget.query_mode(), None)?;
    let params = BuildParams {
        total_bins: args.budget.bins,
        budget: AccuracyBudget::new(args.budget.f0, args.budget.delta)?,
        common_word_fraction: args.budget.common_frac,
        ..Default::default()
    };
    let config = SketchConfig::new(params.total_bins, 1, params.common_word_fraction, 0, 0)?;
    let bins = params.total_bins - config.common_bins();
    let model = FalsePositiveModel::new(bins, &prof)?;
    let layers = match choose_layers(&prof, &params) {
        Ok(l) => Some(l),
        Err(Error::InfeasibleBudget { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let sigma_x = model.sigma_x();
    let out = ProfileOut {
        n: prof.n,
        vocab: prof.vocab_size,
        total_word_occurrences: prof.total_word_occurrences,
        bins,
        sigma_x,
        epsilon: deviation_bound(sigma_x, params.budget.delta),
        l_min: model.l_min(),
        l_max: model.l_max(),
        lower_bound: model.lower_bound(),
        f0: params.budget.f0,
        delta: params.budget.delta,
        layers,
        expected_fp: layers.map(|l| model.expected_fp(l as f64, Formula::Exact)).transpose()?,
    };
    if json {
        emit(&out)
    } else {
        emit_plain(&out)
    }
}

#[derive(Debug, Serialize)]
struct InspectOut {
    corpus_id: String,
    doc_count: u64,
    timestamp: u64,
    f0: f64,
    delta: f64,
    total_bins: u64,
    iou_bins: u64,
    layers: u32,
    bins_per_layer: u64,
    hedge_extra_layers: u32,
    common_word_fraction: f64,
    layer_seeds: Vec<u64>,
    doc_parser: u8,
    word_parser: u8,
    lowercase: bool,
    blob_names: usize,
    posts_blob: String,
    posts_len: u64,
    common_words: usize,
    /// Per stored layer: document count bucket (0, 1, 2-3, 4-7, ...) to bin count.
    #[serde(skip_serializing_if = "Option::is_none")]
    occupancy: Option<Vec<BTreeMap<String, u64>>>,
}

fn bucket(count: usize) -> (u32, String) {
    match count {
        0 => (0, "0".into()),
        1 => (1, "1".into()),
        c => {
            let k = usize::BITS - 1 - c.leading_zeros();
            (k + 1, format!("{}-{}", 1usize << k, (1usize << (k + 1)) - 1))
        }
    }
}

fn inspect(store: &StoreArg, json: bool, args: InspectArgs) -> anyhow::Result<()> {
    let store = store.open()?;
    let header = read_header(store.as_ref(), &header_blob_name(&args.corpus_id))?;
    let config = header.config().clone();
    let meta = &header.metadata;
    let bpl = config.bins_per_layer();
    let occupancy = if args.no_histogram {
        None
    } else {
        let posts = if header.posts_len == 0 { Vec::new() } else { store.get_full(&header.posts_blob)? };
        let mut layers = Vec::new();
        for layer in 0..config.stored_layers() as usize {
            let mut rows: BTreeMap<u32, (String, u64)> = BTreeMap::new();
            for bin in 0..bpl {
                let p = header.mht.pointer(layer, bin);
                let count = if p.is_empty() {
                    0
                } else {
                    let bytes = posts
                        .get(p.offset as usize..p.end() as usize)
                        .context("pointer outside the superpost blob")?;
                    decode_superpost(bytes, &header.string_table)?.len()
                };
                let (key, label) = bucket(count);
                rows.entry(key).or_insert((label, 0)).1 += 1;
            }
            layers.push(rows.into_values().collect::<BTreeMap<_, _>>());
        }
        Some(layers)
    };
    let mut out = InspectOut {
        corpus_id: meta.corpus_id.clone(),
        doc_count: meta.doc_count,
        timestamp: meta.timestamp,
        f0: meta.f0,
        delta: meta.delta,
        total_bins: config.total_bins,
        iou_bins: config.iou_bins,
        layers: config.layers,
        bins_per_layer: bpl,
        hedge_extra_layers: config.hedge_extra_layers,
        common_word_fraction: config.common_word_fraction,
        layer_seeds: config.layer_seeds.clone(),
        doc_parser: meta.doc_parser.tag(),
        word_parser: meta.tokenizer.word_parser.tag(),
        lowercase: meta.tokenizer.lowercase,
        blob_names: header.string_table.len(),
        posts_blob: header.posts_blob.clone(),
        posts_len: header.posts_len,
        common_words: header.mht.common_word_pointers.len(),
        occupancy,
    };
    if json {
        return emit(&out);
    }
    let occupancy = out.occupancy.take();
    emit_plain(&out)?;
    let mut out_plain = std::io::stdout().lock();
    if let Some(layers) = &occupancy {
        writeln!(out_plain, "bin occupancy (documents per bin: bins)")?;
        for (l, rows) in layers.iter().enumerate() {
            let kind = if l < config.layers as usize { "layer" } else { "hedge layer" };
            let cells: Vec<String> = rows.iter().map(|(k, v)| format!("{k}: {v}")).collect();
            writeln!(out_plain, "  {kind} {l}: {}", cells.join(", "))?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct GenOut {
    corpus_id: String,
    label: String,
    documents: u64,
    sources: Vec<String>,
}

fn gen(store: &StoreArg, json: bool, args: GenArgs) -> anyhow::Result<()> {
    let store = store.open()?;
    let mut spec = args.synth.spec()?;
    spec.docs_per_blob = args.docs_per_blob;
    let corpus = synth::generate(&spec, store.as_ref(), &args.corpus_id)?;
    if json {
        emit(&GenOut {
            corpus_id: args.corpus_id,
            label: spec.label(),
            documents: spec.n_docs,
            sources: corpus.sources,
        })
    } else {
        for s in &corpus.sources {
            println!("{s}");
        }
        Ok(())
    }
}

fn bench_fp(store: &StoreArg, args: FpArgs) -> anyhow::Result<()> {
    let bins: Vec<u64> = parse_list(&args.bins).context("--bins")?;
    let layers: Vec<u32> = parse_list(&args.layers).context("--layers")?;
    let (kind, docs) = if args.corpus.is_empty() {
        let spec = args.synth.spec()?;
        (spec.label(), synth::generate_documents(&spec)?)
    } else {
        let store = store.open()?;
        let spec = CorpusSpec::new("bench", args.corpus.clone());
        let docs: Vec<Vec<String>> = parse_corpus(&spec, store.as_ref())
            .map(|d| d.map(|d| d.words))
            .collect::<Result<_>>()?;
        ("corpus".to_string(), docs)
    };
    let mut rows = Vec::new();
    for seed in 0..args.hash_seeds.max(1) {
        let opts = FpOptions {
            seed,
            delta: args.delta,
            queries: args.queries,
            oov_queries: args.oov_queries,
        };
        for &b in &bins {
            rows.extend(synth::measure_false_positives(&kind, &docs, b, &layers, &opts)?);
        }
    }
    args.output.write(&rows)
}

fn bench_lookup(args: LookupArgs) -> anyhow::Result<()> {
    let bins: Vec<u64> = parse_list(&args.bins).context("--bins")?;
    let layers: Vec<u32> = parse_list(&args.layers).context("--layers")?;
    let spec = args.synth.spec()?;
    let docs = synth::generate_documents(&spec)?;
    let latency = LatencyModel {
        base_ms: args.base_ms,
        bytes_per_ms: args.bytes_per_ms,
        jitter: args.jitter,
        seed: args.seed,
    };
    let mut rows = Vec::new();
    for &b in &bins {
        for &l in &layers {
            let opts = LookupOptions {
                total_bins: b,
                layers: l,
                hedge_extra: args.hedge_extra,
                fetch_mode: if args.sequential { FetchMode::Sequential } else { FetchMode::Batched },
                latency,
                queries: args.queries,
                seed: args.seed,
                stragglers: args.stragglers,
                straggler_delay: Duration::from_millis(args.straggler_ms),
            };
            rows.push(synth::measure_lookup_pattern(&spec.label(), &docs, &opts)?);
        }
    }
    args.output.write(&rows)
}
