//! Index construction: parse, profile, choose the layer count, build, persist.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{write_index, HeaderBlock, IndexMetadata};
use crate::hashing::BinAssignment;
use crate::model::{common_bins_for, CorpusProfile, Posting, QueryDistribution, QueryMode, SketchConfig};
use crate::parse::{DocParser, Tokenizer};
use crate::sketch::SketchBuilder;
use crate::stats::{deviation_bound, minimize_layers, AccuracyBudget, FalsePositiveModel, Formula, LayerChoice};
use crate::store::BlobStore;

/// Where a corpus lives and how to read it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub corpus_id: String,
    pub sources: Vec<String>,
    pub doc_parser: DocParser,
    pub tokenizer: Tokenizer,
}

impl CorpusSpec {
    pub fn new(corpus_id: impl Into<String>, sources: Vec<String>) -> Self {
        Self {
            corpus_id: corpus_id.into(),
            sources,
            doc_parser: DocParser::Newline,
            tokenizer: Tokenizer::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildParams {
    pub total_bins: u64,
    pub budget: AccuracyBudget,
    pub common_word_fraction: f64,
    /// Skips the optimizer when set.
    pub layers: Option<u32>,
    pub seed: u64,
    pub hedge_extra_layers: u32,
    /// Stored in the header; fixed by the caller so builds are reproducible.
    pub timestamp: u64,
    pub query_mode: QueryMode,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            total_bins: 100_000,
            budget: AccuracyBudget::default(),
            common_word_fraction: crate::model::DEFAULT_COMMON_WORD_FRACTION,
            layers: None,
            seed: 0,
            hedge_extra_layers: 0,
            timestamp: 0,
            query_mode: QueryMode::Uniform,
        }
    }
}

/// A parsed document: its byte range and its words in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedDocument {
    pub posting: Posting,
    pub words: Vec<String>,
}

/// Documents of one source blob.
pub fn parse_blob(spec: &CorpusSpec, store: &dyn BlobStore, blob: &str) -> Result<Vec<ParsedDocument>> {
    let bytes = store.get_full(blob)?;
    spec.doc_parser
        .split(&bytes)?
        .into_iter()
        .map(|(off, len)| {
            Ok(ParsedDocument {
                posting: Posting::new(blob, off, len)?,
                words: spec.tokenizer.words(&bytes[off as usize..(off + len) as usize]),
            })
        })
        .collect()
}

/// Streams the documents of every source blob in order.
pub fn parse_corpus<'a>(
    spec: &'a CorpusSpec,
    store: &'a dyn BlobStore,
) -> impl Iterator<Item = Result<ParsedDocument>> + 'a {
    spec.sources.iter().flat_map(move |blob| {
        let docs: Vec<Result<ParsedDocument>> = match parse_blob(spec, store, blob) {
            Ok(d) => d.into_iter().map(Ok).collect(),
            Err(e) => vec![Err(e)],
        };
        docs
    })
}

/// Single-pass corpus statistics.
#[derive(Debug, Default)]
pub struct Profiler {
    word_ids: HashMap<String, u32>,
    words: Vec<String>,
    doc_freq: Vec<u64>,
    occurrences: Vec<u64>,
    doc_words: Vec<Vec<u32>>,
    doc_lengths: Vec<u64>,
}

impl Profiler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<S: AsRef<str>>(&mut self, words: &[S]) {
        let mut ids: Vec<u32> = Vec::with_capacity(words.len());
        for w in words {
            let w = w.as_ref();
            let id = match self.word_ids.get(w) {
                Some(&id) => id,
                None => {
                    let id = self.words.len() as u32;
                    self.word_ids.insert(w.to_string(), id);
                    self.words.push(w.to_string());
                    self.doc_freq.push(0);
                    self.occurrences.push(0);
                    id
                }
            };
            self.occurrences[id as usize] += 1;
            ids.push(id);
        }
        ids.sort_unstable();
        ids.dedup();
        for &id in &ids {
            self.doc_freq[id as usize] += 1;
        }
        self.doc_lengths.push(words.len() as u64);
        self.doc_words.push(ids);
    }

    pub fn documents(&self) -> usize {
        self.doc_words.len()
    }

    pub fn document_frequencies(&self) -> BTreeMap<String, u64> {
        self.words.iter().cloned().zip(self.doc_freq.iter().copied()).collect()
    }

    /// The `count` words of highest document frequency, ties broken by word.
    pub fn most_frequent(&self, count: usize) -> BTreeSet<String> {
        let mut order: Vec<usize> = (0..self.words.len()).collect();
        order.sort_by(|&a, &b| {
            self.doc_freq[b]
                .cmp(&self.doc_freq[a])
                .then_with(|| self.words[a].cmp(&self.words[b]))
        });
        order
            .into_iter()
            .take(count)
            .map(|i| self.words[i].clone())
            .collect()
    }

    /// Profile under the given query distribution; `Explicit` needs `weights`.
    pub fn finish(&self, mode: QueryMode, weights: Option<BTreeMap<String, f64>>) -> Result<CorpusProfile> {
        let vocab = self.words.len() as u64;
        let counts: Vec<u64> = self.doc_words.iter().map(|w| w.len() as u64).collect();
        let mut profile = CorpusProfile::from_counts(vocab, counts)?;
        profile.doc_lengths = self.doc_lengths.clone();
        profile.total_word_occurrences = self.occurrences.iter().sum();
        profile.doc_frequencies = Some(self.document_frequencies());
        let dist = match mode {
            QueryMode::Uniform => return Ok(profile),
            QueryMode::OccurrenceWeighted => {
                let total = profile.total_word_occurrences as f64;
                QueryDistribution::occurrence_weighted(
                    self.words
                        .iter()
                        .zip(&self.occurrences)
                        .map(|(w, &c)| (w.clone(), c as f64 / total))
                        .collect(),
                )?
            }
            QueryMode::Explicit => QueryDistribution::explicit(
                weights.ok_or_else(|| Error::InvalidConfig("explicit query mode needs weights".into()))?,
            )?,
        };
        let p: Vec<f64> = self.words.iter().map(|w| dist.probability(w, vocab)).collect();
        profile.doc_relevant_mass = self
            .doc_words
            .iter()
            .map(|ids| ids.iter().map(|&i| p[i as usize]).sum())
            .collect();
        profile.doc_relevant_mass_sq = self
            .doc_words
            .iter()
            .map(|ids| ids.iter().map(|&i| p[i as usize] * p[i as usize]).sum())
            .collect();
        profile.total_mass_sq = dist
            .weights
            .as_ref()
            .map_or(0.0, |w| w.values().map(|x| x * x).sum());
        profile.query_dist = dist;
        Ok(profile)
    }
}

/// Profile of a parsed corpus with uniform query words.
pub fn profile<S: AsRef<str>>(docs: impl IntoIterator<Item = Vec<S>>) -> Result<CorpusProfile> {
    let mut p = Profiler::new();
    for words in docs {
        p.add(&words);
    }
    p.finish(QueryMode::Uniform, None)
}

/// Summary of a build, serialized as the build report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub corpus_id: String,
    pub n: u64,
    pub vocab: u64,
    pub layers: u32,
    pub expected_fp: f64,
    pub sigma_x: f64,
    pub epsilon: f64,
    pub lower_bound: f64,
    pub l_min: Option<f64>,
    pub l_max: Option<f64>,
    pub total_bins: u64,
    pub iou_bins: u64,
    pub bins_per_layer: u64,
    pub hedge_extra_layers: u32,
    pub common_words: u64,
    pub total_word_occurrences: u64,
    pub header_bytes: u64,
    pub posts_bytes: u64,
    pub header_blob: String,
    pub posts_blob: String,
    pub seed: u64,
    pub f0: f64,
    pub delta: f64,
    pub timestamp: u64,
}

/// The layer count the optimizer picks for `profile`, or the budget error.
///
/// Bins reserved for common words are not available to the layers, so the
/// model sees `total_bins - common_bins`.
pub fn choose_layers(profile: &CorpusProfile, params: &BuildParams) -> Result<u32> {
    if let Some(l) = params.layers {
        return Ok(l);
    }
    let bins = params.total_bins - common_bins_for(params.total_bins, params.common_word_fraction);
    let model = FalsePositiveModel::new(bins, profile)?;
    match minimize_layers(&model, &params.budget)? {
        LayerChoice::Layers(l) => Ok(l),
        LayerChoice::Reject { lower_bound } => Err(Error::InfeasibleBudget {
            f0: params.budget.f0,
            lower_bound,
        }),
    }
}

/// Parses, profiles, optimizes, builds and persists the index of `spec`.
pub fn build(spec: &CorpusSpec, params: &BuildParams, store: &dyn BlobStore) -> Result<(HeaderBlock, BuildReport)> {
    build_with_assignment(spec, params, store, BinAssignment::Hashed)
}

pub fn build_with_assignment(
    spec: &CorpusSpec,
    params: &BuildParams,
    store: &dyn BlobStore,
    assignment: BinAssignment,
) -> Result<(HeaderBlock, BuildReport)> {
    let mut profiler = Profiler::new();
    for doc in parse_corpus(spec, store) {
        profiler.add(&doc?.words);
    }
    if profiler.documents() == 0 {
        return Err(Error::EmptyCorpus);
    }
    let profile = profiler.finish(params.query_mode, None)?;
    let layers = choose_layers(&profile, params)?;
    let config = SketchConfig::new(
        params.total_bins,
        layers,
        params.common_word_fraction,
        params.hedge_extra_layers,
        params.seed,
    )?;
    let common = profiler.most_frequent(config.common_bins() as usize);
    let common_count = common.len() as u64;
    drop(profiler);

    let mut builder = SketchBuilder::new(config.clone(), assignment, common)?;
    for doc in parse_corpus(spec, store) {
        let doc = doc?;
        let distinct: BTreeSet<&str> = doc.words.iter().map(String::as_str).collect();
        builder.add_document(doc.posting, distinct);
    }
    let sketch = builder.finish();

    let metadata = IndexMetadata {
        corpus_id: spec.corpus_id.clone(),
        doc_count: profile.n,
        timestamp: params.timestamp,
        f0: params.budget.f0,
        delta: params.budget.delta,
        doc_parser: spec.doc_parser,
        tokenizer: spec.tokenizer.clone(),
    };
    let (header, written) = write_index(&sketch, store, metadata)?;

    let model = FalsePositiveModel::new(config.iou_bins, &profile)?;
    let sigma_x = model.sigma_x();
    let report = BuildReport {
        corpus_id: spec.corpus_id.clone(),
        n: profile.n,
        vocab: profile.vocab_size,
        layers,
        expected_fp: model.expected_fp(layers as f64, Formula::Exact)?,
        sigma_x,
        epsilon: deviation_bound(sigma_x, params.budget.delta),
        lower_bound: model.lower_bound(),
        l_min: model.l_min(),
        l_max: model.l_max(),
        total_bins: config.total_bins,
        iou_bins: config.iou_bins,
        bins_per_layer: config.bins_per_layer(),
        hedge_extra_layers: config.hedge_extra_layers,
        common_words: common_count,
        total_word_occurrences: profile.total_word_occurrences,
        header_bytes: written.header_bytes,
        posts_bytes: written.posts_bytes,
        header_blob: written.header_blob,
        posts_blob: written.posts_blob,
        seed: params.seed,
        f0: params.budget.f0,
        delta: params.budget.delta,
        timestamp: params.timestamp,
    };
    Ok((header, report))
}
