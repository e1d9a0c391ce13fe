//! Domain types shared by the sketch, the optimizer, the on-blob format and
//! the searcher. Nothing in here performs I/O.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Locator of one document: a byte range inside a named blob.
///
/// Ordering is lexicographic on `(blob_name, offset, length)`; postings lists
/// are kept sorted in this order so that set operations are linear merges.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Posting {
    pub blob_name: Arc<str>,
    pub offset: u64,
    pub length: u64,
}

impl Posting {
    pub fn new(blob_name: impl Into<Arc<str>>, offset: u64, length: u64) -> Result<Self> {
        if length == 0 {
            return Err(Error::Domain("posting length must be positive".into()));
        }
        Ok(Self {
            blob_name: blob_name.into(),
            offset,
            length,
        })
    }

    /// Exclusive end offset of the document.
    pub fn end(&self) -> u64 {
        self.offset + self.length
    }
}

impl fmt::Debug for Posting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}+{}", self.blob_name, self.offset, self.length)
    }
}

/// A strictly ascending, duplicate-free sequence of postings.
#[derive(Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PostingsList(Vec<Posting>);

impl PostingsList {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    /// Builds a list from postings in any order, sorting and removing duplicates.
    pub fn from_unsorted(postings: impl IntoIterator<Item = Posting>) -> Self {
        let mut v: Vec<Posting> = postings.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }

    /// Wraps a vector that must already be strictly ascending.
    pub fn from_sorted(postings: Vec<Posting>) -> Result<Self> {
        if postings.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain(
                "postings are not strictly ascending".into(),
            ));
        }
        Ok(Self(postings))
    }

    pub(crate) fn from_sorted_unchecked(postings: Vec<Posting>) -> Self {
        debug_assert!(postings.windows(2).all(|w| w[0] < w[1]));
        Self(postings)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Posting> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[Posting] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<Posting> {
        self.0
    }

    pub fn contains(&self, posting: &Posting) -> bool {
        self.0.binary_search(posting).is_ok()
    }

    pub fn is_subset_of(&self, other: &PostingsList) -> bool {
        let mut it = other.0.iter();
        'outer: for p in &self.0 {
            for q in it.by_ref() {
                match q.cmp(p) {
                    Ordering::Less => continue,
                    Ordering::Equal => continue 'outer,
                    Ordering::Greater => return false,
                }
            }
            return false;
        }
        true
    }

    /// Replaces `self` with `self ∪ other`.
    pub fn union_with(&mut self, other: &PostingsList) {
        if other.is_empty() {
            return;
        }
        if self.is_empty() {
            self.0 = other.0.clone();
            return;
        }
        self.0 = merge_union(&self.0, &other.0);
    }

    pub fn union(&self, other: &PostingsList) -> PostingsList {
        PostingsList(merge_union(&self.0, &other.0))
    }

    pub fn intersect(&self, other: &PostingsList) -> PostingsList {
        PostingsList(merge_intersect(&self.0, &other.0))
    }
}

impl fmt::Debug for PostingsList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.0.iter()).finish()
    }
}

impl<'a> IntoIterator for &'a PostingsList {
    type Item = &'a Posting;
    type IntoIter = std::slice::Iter<'a, Posting>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl IntoIterator for PostingsList {
    type Item = Posting;
    type IntoIter = std::vec::IntoIter<Posting>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

impl FromIterator<Posting> for PostingsList {
    fn from_iter<T: IntoIterator<Item = Posting>>(iter: T) -> Self {
        Self::from_unsorted(iter)
    }
}

fn merge_union(a: &[Posting], b: &[Posting]) -> Vec<Posting> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => {
                out.push(a[i].clone());
                i += 1;
            }
            Ordering::Greater => {
                out.push(b[j].clone());
                j += 1;
            }
            Ordering::Equal => {
                out.push(a[i].clone());
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

fn merge_intersect(a: &[Posting], b: &[Posting]) -> Vec<Posting> {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut out = Vec::with_capacity(small.len());
    // Gallop through the larger list when the sizes are lopsided.
    if small.len() * 16 < large.len() {
        let mut base = 0;
        for p in small {
            match large[base..].binary_search(p) {
                Ok(k) => {
                    out.push(p.clone());
                    base += k + 1;
                }
                Err(k) => base += k,
            }
            if base >= large.len() {
                break;
            }
        }
        return out;
    }
    let (mut i, mut j) = (0, 0);
    while i < small.len() && j < large.len() {
        match small[i].cmp(&large[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                out.push(small[i].clone());
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Exact intersection of one or more postings lists.
pub fn intersect_lists<L: AsRef<PostingsList>>(lists: &[L]) -> Result<PostingsList> {
    let mut refs: Vec<&PostingsList> = lists.iter().map(|l| l.as_ref()).collect();
    if refs.is_empty() {
        return Err(Error::EmptyInput);
    }
    // Smallest first keeps every intermediate result small.
    refs.sort_by_key(|l| l.len());
    let mut acc = refs[0].clone();
    for l in &refs[1..] {
        if acc.is_empty() {
            break;
        }
        acc = acc.intersect(l);
    }
    Ok(acc)
}

/// Exact union of any number of postings lists; empty input yields an empty list.
pub fn union_lists<L: AsRef<PostingsList>>(lists: &[L]) -> PostingsList {
    match lists.len() {
        0 => PostingsList::new(),
        1 => lists[0].as_ref().clone(),
        _ => {
            let mid = lists.len() / 2;
            union_lists(&lists[..mid]).union(&union_lists(&lists[mid..]))
        }
    }
}

impl AsRef<PostingsList> for PostingsList {
    fn as_ref(&self) -> &PostingsList {
        self
    }
}

/// How query words are assumed to be distributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryMode {
    Uniform,
    OccurrenceWeighted,
    Explicit,
}

/// Prior probability `p_w` of each vocabulary word appearing in a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDistribution {
    pub mode: QueryMode,
    /// Per-word probabilities; `None` for the uniform mode.
    pub weights: Option<BTreeMap<String, f64>>,
}

impl QueryDistribution {
    pub fn uniform() -> Self {
        Self {
            mode: QueryMode::Uniform,
            weights: None,
        }
    }

    pub fn explicit(weights: BTreeMap<String, f64>) -> Result<Self> {
        validate_weights(&weights)?;
        Ok(Self {
            mode: QueryMode::Explicit,
            weights: Some(weights),
        })
    }

    pub(crate) fn occurrence_weighted(weights: BTreeMap<String, f64>) -> Result<Self> {
        validate_weights(&weights)?;
        Ok(Self {
            mode: QueryMode::OccurrenceWeighted,
            weights: Some(weights),
        })
    }

    /// Probability of `word` given a vocabulary of `vocab_size` words.
    pub fn probability(&self, word: &str, vocab_size: u64) -> f64 {
        match &self.weights {
            None => {
                if vocab_size == 0 {
                    0.0
                } else {
                    1.0 / vocab_size as f64
                }
            }
            Some(w) => w.get(word).copied().unwrap_or(0.0),
        }
    }
}

fn validate_weights(weights: &BTreeMap<String, f64>) -> Result<()> {
    if weights.values().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::Domain("query probabilities must be non-negative".into()));
    }
    let total: f64 = weights.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "query probabilities sum to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Corpus statistics consumed by the layer optimizer.
///
/// `doc_relevant_mass[i]` is the query probability mass of the words in
/// document `i` and `doc_relevant_mass_sq[i]` the sum of their squared
/// probabilities; both are what the optimizer needs from `p_w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusProfile {
    pub n: u64,
    pub vocab_size: u64,
    pub doc_distinct_counts: Vec<u64>,
    pub doc_lengths: Vec<u64>,
    pub total_word_occurrences: u64,
    pub query_dist: QueryDistribution,
    pub doc_relevant_mass: Vec<f64>,
    pub doc_relevant_mass_sq: Vec<f64>,
    /// Sum of `p_w^2` over the whole vocabulary.
    pub total_mass_sq: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub doc_frequencies: Option<BTreeMap<String, u64>>,
}

impl CorpusProfile {
    /// Profile from counts alone, with uniform query words.
    pub fn from_counts(vocab_size: u64, doc_distinct_counts: Vec<u64>) -> Result<Self> {
        if let Some(&bad) = doc_distinct_counts.iter().find(|&&c| c > vocab_size) {
            return Err(Error::Domain(format!(
                "document has {bad} distinct words but the vocabulary has {vocab_size}"
            )));
        }
        let w = vocab_size as f64;
        let (mass, mass_sq): (Vec<f64>, Vec<f64>) = doc_distinct_counts
            .iter()
            .map(|&c| {
                if vocab_size == 0 {
                    (0.0, 0.0)
                } else {
                    (c as f64 / w, c as f64 / (w * w))
                }
            })
            .unzip();
        let total_word_occurrences = doc_distinct_counts.iter().sum();
        Ok(Self {
            n: doc_distinct_counts.len() as u64,
            vocab_size,
            doc_lengths: doc_distinct_counts.clone(),
            doc_distinct_counts,
            total_word_occurrences,
            query_dist: QueryDistribution::uniform(),
            doc_relevant_mass: mass,
            doc_relevant_mass_sq: mass_sq,
            total_mass_sq: if vocab_size == 0 { 0.0 } else { 1.0 / w },
            doc_frequencies: None,
        })
    }

    /// `c_i`: probability that a query word is absent from document `i`.
    pub fn irrelevant_mass(&self, doc: usize) -> f64 {
        (1.0 - self.doc_relevant_mass[doc]).clamp(0.0, 1.0)
    }

    /// `Σ_{w ∉ W_i} p_w^2` for document `i`.
    pub fn irrelevant_mass_sq(&self, doc: usize) -> f64 {
        (self.total_mass_sq - self.doc_relevant_mass_sq[doc]).max(0.0)
    }
}

/// Structure of a sketch: bin budget, layer count, hash seeds and the
/// share of bins reserved for exact common-word lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SketchConfig {
    pub total_bins: u64,
    pub layers: u32,
    /// One seed per layer, hedging layers included.
    pub layer_seeds: Vec<u64>,
    pub common_word_fraction: f64,
    pub hedge_extra_layers: u32,
    /// Bins shared by the hashed layers; a multiple of `layers`.
    pub iou_bins: u64,
}

pub const DEFAULT_COMMON_WORD_FRACTION: f64 = 0.01;

impl SketchConfig {
    /// Derives `layers + hedge_extra_layers` distinct seeds from `master_seed`.
    pub fn new(
        total_bins: u64,
        layers: u32,
        common_word_fraction: f64,
        hedge_extra_layers: u32,
        master_seed: u64,
    ) -> Result<Self> {
        let seeds = derive_seeds(master_seed, (layers + hedge_extra_layers) as usize);
        Self::with_seeds(total_bins, layers, seeds, common_word_fraction, hedge_extra_layers)
    }

    pub fn with_seeds(
        total_bins: u64,
        layers: u32,
        layer_seeds: Vec<u64>,
        common_word_fraction: f64,
        hedge_extra_layers: u32,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::InvalidConfig("layers must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&common_word_fraction) {
            return Err(Error::InvalidConfig(format!(
                "common word fraction {common_word_fraction} outside [0, 1)"
            )));
        }
        let common = common_bins_for(total_bins, common_word_fraction);
        let iou_bins = (total_bins - common) / layers as u64 * layers as u64;
        if iou_bins < layers as u64 {
            return Err(Error::InvalidConfig(format!(
                "{total_bins} bins cannot hold {layers} layers"
            )));
        }
        let config = Self {
            total_bins,
            layers,
            layer_seeds,
            common_word_fraction,
            hedge_extra_layers,
            iou_bins,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.iou_bins < self.layers as u64 {
            return Err(Error::InvalidConfig("need at least one bin per layer".into()));
        }
        if self.iou_bins % self.layers as u64 != 0 {
            return Err(Error::InvalidConfig(
                "iou bins must be divisible by the layer count".into(),
            ));
        }
        if self.iou_bins + self.common_bins() > self.total_bins {
            return Err(Error::InvalidConfig("bin budget exceeded".into()));
        }
        let expected = (self.layers + self.hedge_extra_layers) as usize;
        if self.layer_seeds.len() != expected {
            return Err(Error::InvalidConfig(format!(
                "expected {expected} layer seeds, got {}",
                self.layer_seeds.len()
            )));
        }
        let mut sorted = self.layer_seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("layer seeds must be distinct".into()));
        }
        Ok(())
    }

    pub fn bins_per_layer(&self) -> u64 {
        self.iou_bins / self.layers as u64
    }

    /// Layers physically stored: the queried ones plus hedging layers.
    pub fn stored_layers(&self) -> u32 {
        self.layers + self.hedge_extra_layers
    }

    /// Capacity of the exact common-word table.
    pub fn common_bins(&self) -> u64 {
        common_bins_for(self.total_bins, self.common_word_fraction)
    }
}

pub(crate) fn common_bins_for(total_bins: u64, fraction: f64) -> u64 {
    // The small epsilon keeps e.g. 0.01 * 1e5 from flooring to 999.
    ((total_bins as f64 * fraction) + 1e-9).floor() as u64
}

/// SplitMix64 sequence, skipping repeats so the seeds are pairwise distinct.
pub fn derive_seeds(master_seed: u64, count: usize) -> Vec<u64> {
    let mut state = master_seed;
    let mut out: Vec<u64> = Vec::with_capacity(count);
    while out.len() < count {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        if !out.contains(&z) {
            out.push(z);
        }
    }
    out
}
