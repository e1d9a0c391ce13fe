//! Synthetic corpora and measurement harnesses.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::builder::{build, profile, BuildParams, CorpusSpec};
use crate::error::{Error, Result};
use crate::hashing::BinAssignment;
use crate::model::{Posting, SketchConfig};
use crate::searcher::{FetchMode, HedgePolicy, SearchOptions, Searcher};
use crate::sketch::{SketchBuilder, WordPointers};
use crate::stats::{deviation_bound, FalsePositiveModel, Formula};
use crate::store::{BlobStore, LatencyModel, MemoryStore, SimulatedStore};

pub const DEFAULT_ZIPF_EXPONENT: f64 = 1.07;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    /// Document `i` is the single word `w{i}`.
    Diag,
    /// Words drawn uniformly.
    Unif,
    /// Word `j` drawn with probability proportional to `1 / (j + 1)^s`.
    Zipf,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diag" => Ok(SynthKind::Diag),
            "unif" => Ok(SynthKind::Unif),
            "zipf" => Ok(SynthKind::Zipf),
            other => Err(Error::InvalidConfig(format!("unknown corpus kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for SynthKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SynthKind::Diag => "diag",
            SynthKind::Unif => "unif",
            SynthKind::Zipf => "zipf",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n_docs: u64,
    pub n_words: u64,
    /// Words per document.
    pub n_len: u64,
    pub zipf_exponent: f64,
    pub seed: u64,
    /// Documents per generated blob; everything in one blob when `None`.
    pub docs_per_blob: Option<u64>,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, n_docs: u64, n_words: u64, n_len: u64, seed: u64) -> Self {
        Self {
            kind,
            n_docs,
            n_words,
            n_len,
            zipf_exponent: DEFAULT_ZIPF_EXPONENT,
            seed,
            docs_per_blob: None,
        }
    }

    /// `kind(a, b, c)` with `10^a` documents, `10^b` words and `10^c` words per document.
    pub fn from_log10(kind: SynthKind, a: u32, b: u32, c: u32, seed: u64) -> Self {
        Self::new(kind, 10u64.pow(a), 10u64.pow(b), 10u64.pow(c), seed)
    }

    pub fn label(&self) -> String {
        format!("{}({},{},{})", self.kind, self.n_docs, self.n_words, self.n_len)
    }

    fn validate(&self) -> Result<()> {
        if self.n_docs == 0 || self.n_words == 0 || self.n_len == 0 {
            return Err(Error::InvalidConfig("corpus sizes must be at least 1".into()));
        }
        if self.kind == SynthKind::Diag && (self.n_len != 1 || self.n_words != self.n_docs) {
            return Err(Error::InvalidConfig(
                "diag corpora have one word per document and as many words as documents".into(),
            ));
        }
        if self.kind == SynthKind::Zipf && !(self.zipf_exponent > 0.0) {
            return Err(Error::InvalidConfig("zipf exponent must be positive".into()));
        }
        Ok(())
    }
}

pub fn word_name(j: u64) -> String {
    format!("w{j}")
}

/// Word indices of every document.
pub fn generate_word_ids(spec: &SynthSpec) -> Result<Vec<Vec<u64>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(match spec.kind {
        SynthKind::Diag => (0..spec.n_docs).map(|i| vec![i]).collect(),
        SynthKind::Unif => (0..spec.n_docs)
            .map(|_| (0..spec.n_len).map(|_| rng.random_range(0..spec.n_words)).collect())
            .collect(),
        SynthKind::Zipf => {
            let zipf = Zipf::new(spec.n_words as f64, spec.zipf_exponent)
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            (0..spec.n_docs)
                .map(|_| (0..spec.n_len).map(|_| zipf.sample(&mut rng) as u64 - 1).collect())
                .collect()
        }
    })
}

pub fn generate_documents(spec: &SynthSpec) -> Result<Vec<Vec<String>>> {
    Ok(generate_word_ids(spec)?
        .into_iter()
        .map(|d| d.into_iter().map(word_name).collect())
        .collect())
}

/// Writes the corpus as newline-delimited blobs named `<corpus_id>/part-NNNNN.txt`.
pub fn generate(spec: &SynthSpec, store: &dyn BlobStore, corpus_id: &str) -> Result<CorpusSpec> {
    let docs = generate_documents(spec)?;
    let per_blob = spec.docs_per_blob.unwrap_or(spec.n_docs).max(1) as usize;
    let mut sources = Vec::new();
    for (k, chunk) in docs.chunks(per_blob).enumerate() {
        let name = format!("{corpus_id}/part-{k:05}.txt");
        let mut text = String::new();
        for d in chunk {
            text.push_str(&d.join(" "));
            text.push('\n');
        }
        store.put(&name, text.as_bytes())?;
        sources.push(name);
    }
    Ok(CorpusSpec::new(corpus_id, sources))
}

/// One row of a false-positive sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpRow {
    pub kind: String,
    #[serde(rename = "B")]
    pub bins: u64,
    #[serde(rename = "L")]
    pub layers: u32,
    pub fp_observed: f64,
    pub fp_expected: f64,
    pub sigma_x: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpOptions {
    pub seed: u64,
    /// Deviation bound failure probability.
    pub delta: f64,
    /// Number of query words sampled from the vocabulary; all words when `None`.
    pub queries: Option<usize>,
    /// Also query this many words that occur nowhere in the corpus.
    pub oov_queries: usize,
}

impl Default for FpOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            delta: 0.01,
            queries: None,
            oov_queries: 0,
        }
    }
}

/// Mean false positives per query word for each layer count, next to
/// the model's expectation.
///
/// Sketches are built in memory with no common words, so every word goes
/// through the hashed layers and the model applies unchanged.
pub fn measure_false_positives(
    kind: &str,
    docs: &[Vec<String>],
    bins: u64,
    layer_counts: &[u32],
    opts: &FpOptions,
) -> Result<Vec<FpRow>> {
    let prof = profile(docs.iter().cloned())?;
    let mut postings: HashMap<&str, u64> = HashMap::new();
    for d in docs {
        let distinct: BTreeSet<&str> = d.iter().map(String::as_str).collect();
        for w in distinct {
            *postings.entry(w).or_default() += 1;
        }
    }
    let mut vocab: Vec<&str> = postings.keys().copied().collect();
    vocab.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5151);
    let mut queries: Vec<&str> = match opts.queries {
        Some(q) => (0..q).map(|_| vocab[rng.random_range(0..vocab.len())]).collect(),
        None => vocab.clone(),
    };
    let oov: Vec<String> = (0..opts.oov_queries).map(|j| format!("oov{j}")).collect();
    queries.extend(oov.iter().map(String::as_str));

    let mut rows = Vec::with_capacity(layer_counts.len());
    for &layers in layer_counts {
        let config = SketchConfig::new(bins, layers, 0.0, 0, opts.seed)?;
        let mut builder = SketchBuilder::new(config.clone(), BinAssignment::Hashed, BTreeSet::new())?;
        let blob: Arc<str> = Arc::from("synthetic");
        for (i, d) in docs.iter().enumerate() {
            let distinct: BTreeSet<&str> = d.iter().map(String::as_str).collect();
            builder.add_document(Posting::new(Arc::clone(&blob), i as u64, 1)?, distinct);
        }
        let sketch = builder.finish();
        let total: u64 = queries
            .iter()
            .map(|w| sketch.local_query(w).len() as u64 - postings.get(w).copied().unwrap_or(0))
            .sum();
        let model = FalsePositiveModel::new(config.iou_bins, &prof)?;
        let sigma = model.sigma_x();
        rows.push(FpRow {
            kind: kind.to_string(),
            bins,
            layers,
            fp_observed: total as f64 / queries.len().max(1) as f64,
            fp_expected: model.expected_fp(layers as f64, Formula::Exact)?,
            sigma_x: sigma,
            epsilon: deviation_bound(sigma, opts.delta),
        });
    }
    Ok(rows)
}

/// Timing of the two read phases of a query workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupRow {
    pub kind: String,
    #[serde(rename = "B")]
    pub bins: u64,
    #[serde(rename = "L")]
    pub layers: u32,
    pub hedge: u32,
    pub mode: String,
    pub queries: usize,
    pub lookup_ms_mean: f64,
    pub lookup_ms_p99: f64,
    pub doc_ms_mean: f64,
    pub candidates_mean: f64,
    pub batches_per_query: f64,
}

#[derive(Debug, Clone)]
pub struct LookupOptions {
    pub total_bins: u64,
    pub layers: u32,
    /// Extra layers stored and read per lookup.
    pub hedge_extra: u32,
    pub fetch_mode: FetchMode,
    pub latency: LatencyModel,
    pub queries: usize,
    pub seed: u64,
    /// Delay the first-layer bin of this many query words.
    pub stragglers: usize,
    pub straggler_delay: Duration,
}

impl Default for LookupOptions {
    fn default() -> Self {
        Self {
            total_bins: 2000,
            layers: 4,
            hedge_extra: 0,
            fetch_mode: FetchMode::Batched,
            latency: LatencyModel::cloud(),
            queries: 20,
            seed: 0,
            stragglers: 0,
            straggler_delay: Duration::from_secs(1),
        }
    }
}

/// Builds the corpus into a simulated store and times single-word queries.
pub fn measure_lookup_pattern(kind: &str, docs: &[Vec<String>], opts: &LookupOptions) -> Result<LookupRow> {
    let mem = Arc::new(MemoryStore::new());
    let mut text = String::new();
    for d in docs {
        text.push_str(&d.join(" "));
        text.push('\n');
    }
    mem.put("corpus.txt", text.as_bytes())?;
    let spec = CorpusSpec::new("bench", vec!["corpus.txt".into()]);
    let params = BuildParams {
        total_bins: opts.total_bins,
        layers: Some(opts.layers),
        common_word_fraction: 0.0,
        hedge_extra_layers: opts.hedge_extra,
        seed: opts.seed,
        ..Default::default()
    };
    build(&spec, &params, mem.as_ref())?;

    let sim = Arc::new(SimulatedStore::new(mem, opts.latency));
    let hedge = if opts.hedge_extra > 0 {
        HedgePolicy::Extra(opts.hedge_extra)
    } else {
        HedgePolicy::Off
    };
    let searcher = Searcher::init(
        sim.clone(),
        "bench.iou.header",
        SearchOptions {
            fetch_mode: opts.fetch_mode,
            hedge,
            ..Default::default()
        },
    )?;

    let mut vocab: Vec<&str> = docs.iter().flatten().map(String::as_str).collect();
    vocab.sort_unstable();
    vocab.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xA11);
    let words: Vec<&str> = (0..opts.queries)
        .map(|_| vocab[rng.random_range(0..vocab.len())])
        .collect();
    for w in words.iter().take(opts.stragglers) {
        if let WordPointers::Layers(ptrs) = searcher.header().mht.pointers_for(w, &BinAssignment::Hashed) {
            sim.inject_delay(&searcher.header().posts_blob, ptrs[0].offset, opts.straggler_delay);
        }
    }

    let before = searcher.fetch_stats().batches;
    let mut lookup = Vec::with_capacity(words.len());
    let mut doc_ms = 0.0;
    let mut candidates = 0usize;
    for w in &words {
        let r = searcher.search(&[w])?;
        lookup.push(r.timings.lookup_ms);
        doc_ms += r.timings.doc_fetch_ms;
        candidates += r.candidates;
    }
    let batches = searcher.fetch_stats().batches - before;
    let n = words.len().max(1) as f64;
    Ok(LookupRow {
        kind: kind.to_string(),
        bins: opts.total_bins,
        layers: opts.layers,
        hedge: opts.hedge_extra,
        mode: match opts.fetch_mode {
            FetchMode::Batched => "batched".into(),
            FetchMode::Sequential => "sequential".into(),
        },
        queries: words.len(),
        lookup_ms_mean: lookup.iter().sum::<f64>() / n,
        lookup_ms_p99: percentile(&mut lookup, 0.99),
        doc_ms_mean: doc_ms / n,
        candidates_mean: candidates as f64 / n,
        batches_per_query: batches as f64 / n,
    })
}

/// Nearest-rank percentile.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let rank = (q * values.len() as f64).ceil().max(1.0) as usize;
    values[rank.min(values.len()) - 1]
}

/// Writes rows as CSV with a header line.
pub fn write_csv<T: Serialize>(rows: &[T], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Storage(std::io::Error::other(e).into()))?;
    }
    w.flush()
        .map_err(|e| Error::Storage(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diag_is_the_identity() {
        let docs = generate_documents(&SynthSpec::from_log10(SynthKind::Diag, 2, 2, 0, 1)).unwrap();
        assert_eq!(docs.len(), 100);
        for (i, d) in docs.iter().enumerate() {
            assert_eq!(d, &vec![format!("w{i}")]);
        }
        assert!(generate_documents(&SynthSpec::new(SynthKind::Diag, 10, 20, 1, 0)).is_err());
        assert!(generate_documents(&SynthSpec::new(SynthKind::Unif, 0, 20, 1, 0)).is_err());
    }

    #[test]
    fn zipf_rank_ratio() {
        // One document of a million draws.
        let spec = SynthSpec::new(SynthKind::Zipf, 1, 1000, 1_000_000, 3);
        let ids = &generate_word_ids(&spec).unwrap()[0];
        let c0 = ids.iter().filter(|&&j| j == 0).count() as f64;
        let c1 = ids.iter().filter(|&&j| j == 1).count() as f64;
        let expect = 2f64.powf(DEFAULT_ZIPF_EXPONENT);
        assert!(((c0 / c1) - expect).abs() <= 0.05 * expect, "{}", c0 / c1);
    }

    #[test]
    fn unif_vocabulary_undershoots() {
        let spec = SynthSpec::new(SynthKind::Unif, 1000, 10_000, 10, 4);
        let ids = generate_word_ids(&spec).unwrap();
        let distinct: BTreeSet<u64> = ids.into_iter().flatten().collect();
        let draws = 10_000f64;
        let expect = 10_000.0 * (1.0 - (1.0 - 1.0 / 10_000f64).powf(draws));
        assert!((distinct.len() as f64 - expect).abs() <= 0.02 * expect);
        assert!((distinct.len() as u64) < spec.n_words);
    }

    #[test]
    fn generation_is_deterministic_and_split() {
        let mut spec = SynthSpec::new(SynthKind::Zipf, 25, 50, 4, 9);
        spec.docs_per_blob = Some(10);
        let a = MemoryStore::new();
        let b = MemoryStore::new();
        let ca = generate(&spec, &a, "z").unwrap();
        generate(&spec, &b, "z").unwrap();
        assert_eq!(ca.sources, vec!["z/part-00000.txt", "z/part-00001.txt", "z/part-00002.txt"]);
        for s in &ca.sources {
            assert_eq!(a.get_full(s).unwrap(), b.get_full(s).unwrap());
        }
    }

    #[test]
    fn sparse_diag_has_no_false_positives() {
        let docs = generate_documents(&SynthSpec::from_log10(SynthKind::Diag, 3, 3, 0, 0)).unwrap();
        let rows = measure_false_positives("diag", &docs, 1_000_000, &[4], &FpOptions::default()).unwrap();
        assert!(rows[0].fp_expected < 1e-3);
        assert_eq!(rows[0].fp_observed, 0.0);
    }

    #[test]
    fn oov_queries_are_counted_when_requested() {
        let docs = generate_documents(&SynthSpec::new(SynthKind::Unif, 200, 100, 20, 1)).unwrap();
        let with = FpOptions { oov_queries: 50, ..Default::default() };
        let a = measure_false_positives("unif", &docs, 50, &[1], &FpOptions::default()).unwrap();
        let b = measure_false_positives("unif", &docs, 50, &[1], &with).unwrap();
        assert_ne!(a[0].fp_observed, b[0].fp_observed);
    }

    #[test]
    fn percentiles_and_csv() {
        let mut v = vec![5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(percentile(&mut v, 0.5), 3.0);
        assert_eq!(percentile(&mut v, 0.99), 5.0);
        let rows = vec![FpRow {
            kind: "diag".into(),
            bins: 10,
            layers: 2,
            fp_observed: 0.5,
            fp_expected: 0.25,
            sigma_x: 1.0,
            epsilon: 1.5,
        }];
        let mut out = Vec::new();
        write_csv(&rows, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "kind,B,L,fp_observed,fp_expected,sigma_x,epsilon\ndiag,10,2,0.5,0.25,1.0,1.5\n"
        );
    }
}
