//! Seeded per-layer hash functions mapping words to bins.

use std::collections::HashMap;
use std::sync::Arc;

use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::model::SketchConfig;

/// Hash function of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerHasher {
    pub seed: u64,
    pub bins_per_layer: u64,
}

impl LayerHasher {
    pub fn new(seed: u64, bins_per_layer: u64) -> Self {
        assert!(bins_per_layer >= 1, "a layer needs at least one bin");
        Self { seed, bins_per_layer }
    }

    pub fn bin_for(&self, word: &str) -> u64 {
        bin_for(word, self)
    }
}

/// Bin of `word` in the layer described by `layer`.
pub fn bin_for(word: &str, layer: &LayerHasher) -> u64 {
    xxh3_64_with_seed(word.as_bytes(), layer.seed) % layer.bins_per_layer
}

/// Bins of `word` in every stored layer (hedging layers included), in layer order.
pub fn bins_for_word(word: &str, config: &SketchConfig) -> Vec<u64> {
    let bpl = config.bins_per_layer();
    config
        .layer_seeds
        .iter()
        .map(|&seed| bin_for(word, &LayerHasher::new(seed, bpl)))
        .collect()
}

/// Word-to-bin mapping used by the sketch and the searcher.
///
/// `Fixed` pins chosen `(word, layer)` pairs to hand-picked bins so that
/// small worked examples can be reproduced exactly; anything not pinned
/// falls back to hashing. Pinned assignments are never persisted.
#[derive(Debug, Clone, Default)]
pub enum BinAssignment {
    #[default]
    Hashed,
    Fixed(Arc<HashMap<(String, usize), u64>>),
}

impl BinAssignment {
    pub fn fixed(pairs: impl IntoIterator<Item = (String, usize, u64)>) -> Self {
        BinAssignment::Fixed(Arc::new(
            pairs.into_iter().map(|(w, l, b)| ((w, l), b)).collect(),
        ))
    }

    pub fn bins(&self, word: &str, config: &SketchConfig) -> Vec<u64> {
        let mut bins = bins_for_word(word, config);
        if let BinAssignment::Fixed(map) = self {
            for (layer, bin) in bins.iter_mut().enumerate() {
                if let Some(&b) = map.get(&(word.to_string(), layer)) {
                    *bin = b;
                }
            }
        }
        bins
    }
}
