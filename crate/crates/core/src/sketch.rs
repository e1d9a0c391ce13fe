//! In-memory IoU sketch and the pointer table that replaces it after persistence.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::BinAssignment;
use crate::model::{intersect_lists, Posting, PostingsList, SketchConfig};

/// Location of one encoded superpost inside the superpost blob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SuperpostPointer {
    pub block_id: u32,
    pub offset: u64,
    pub length: u64,
}

impl SuperpostPointer {
    /// Marks a bin with no postings.
    pub const EMPTY: SuperpostPointer = SuperpostPointer {
        block_id: 0,
        offset: 0,
        length: 0,
    };

    pub fn is_empty(&self) -> bool {
        *self == Self::EMPTY
    }

    pub fn end(&self) -> u64 {
        self.offset + self.length
    }
}

/// Persisted form of a sketch: seeds plus one pointer per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct MultilayerHashTable {
    pub config: SketchConfig,
    /// Layer-major, `stored_layers * bins_per_layer` entries.
    pub bin_pointers: Vec<SuperpostPointer>,
    pub common_word_pointers: BTreeMap<String, SuperpostPointer>,
}

impl MultilayerHashTable {
    pub fn new(
        config: SketchConfig,
        bin_pointers: Vec<SuperpostPointer>,
        common_word_pointers: BTreeMap<String, SuperpostPointer>,
    ) -> Result<Self> {
        let expected = config.stored_layers() as u64 * config.bins_per_layer();
        if bin_pointers.len() as u64 != expected {
            return Err(Error::InvalidConfig(format!(
                "expected {expected} bin pointers, got {}",
                bin_pointers.len()
            )));
        }
        if common_word_pointers.len() as u64 > config.common_bins() {
            return Err(Error::InvalidConfig(format!(
                "{} common words exceed the {} reserved bins",
                common_word_pointers.len(),
                config.common_bins()
            )));
        }
        Ok(Self {
            config,
            bin_pointers,
            common_word_pointers,
        })
    }

    pub fn pointer(&self, layer: usize, bin: u64) -> SuperpostPointer {
        self.bin_pointers[layer * self.config.bins_per_layer() as usize + bin as usize]
    }

    pub fn common_pointer(&self, word: &str) -> Option<SuperpostPointer> {
        self.common_word_pointers.get(word).copied()
    }

    /// Pointers a lookup of `word` needs, one per stored layer; a single
    /// entry when the word is common.
    pub fn pointers_for(&self, word: &str, assignment: &BinAssignment) -> WordPointers {
        match self.common_pointer(word) {
            Some(p) => WordPointers::Common(p),
            None => WordPointers::Layers(
                assignment
                    .bins(word, &self.config)
                    .into_iter()
                    .enumerate()
                    .map(|(layer, bin)| self.pointer(layer, bin))
                    .collect(),
            ),
        }
    }
}

/// Result of [`MultilayerHashTable::pointers_for`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WordPointers {
    Common(SuperpostPointer),
    Layers(Vec<SuperpostPointer>),
}

/// Sketch held in memory while an index is built.
#[derive(Debug, Clone)]
pub struct IoUSketch {
    config: SketchConfig,
    assignment: BinAssignment,
    /// `stored_layers` tables of `bins_per_layer` superposts.
    layers: Vec<Vec<PostingsList>>,
    common_words: BTreeMap<String, PostingsList>,
}

impl IoUSketch {
    pub fn new(config: SketchConfig) -> Self {
        Self::with_assignment(config, BinAssignment::Hashed)
    }

    pub fn with_assignment(config: SketchConfig, assignment: BinAssignment) -> Self {
        let bpl = config.bins_per_layer() as usize;
        let layers = (0..config.stored_layers())
            .map(|_| vec![PostingsList::new(); bpl])
            .collect();
        Self {
            config,
            assignment,
            layers,
            common_words: BTreeMap::new(),
        }
    }

    /// Marks words whose postings are kept exactly instead of hashed.
    pub fn designate_common<S: Into<String>>(&mut self, words: impl IntoIterator<Item = S>) -> Result<()> {
        for w in words {
            self.common_words.entry(w.into()).or_default();
        }
        let cap = self.config.common_bins();
        if self.common_words.len() as u64 > cap {
            return Err(Error::InvalidConfig(format!(
                "{} common words exceed the {cap} reserved bins",
                self.common_words.len()
            )));
        }
        Ok(())
    }

    pub fn config(&self) -> &SketchConfig {
        &self.config
    }

    pub fn assignment(&self) -> &BinAssignment {
        &self.assignment
    }

    pub fn is_common(&self, word: &str) -> bool {
        self.common_words.contains_key(word)
    }

    pub fn insert(&mut self, word: &str, postings: &PostingsList) -> Result<()> {
        if word.is_empty() {
            return Err(Error::Domain("cannot insert the empty word".into()));
        }
        if let Some(exact) = self.common_words.get_mut(word) {
            exact.union_with(postings);
            return Ok(());
        }
        if postings.is_empty() {
            return Ok(());
        }
        for (layer, bin) in self.assignment.bins(word, &self.config).into_iter().enumerate() {
            self.layers[layer][bin as usize].union_with(postings);
        }
        Ok(())
    }

    /// Exact list for a common word, otherwise the intersection of the
    /// superposts in the first `layers` layers.
    pub fn local_query(&self, word: &str) -> PostingsList {
        if let Some(exact) = self.common_words.get(word) {
            return exact.clone();
        }
        let bins = self.assignment.bins(word, &self.config);
        let lists: Vec<&PostingsList> = bins
            .iter()
            .take(self.config.layers as usize)
            .enumerate()
            .map(|(layer, &bin)| &self.layers[layer][bin as usize])
            .collect();
        intersect_lists(&lists).unwrap_or_default()
    }

    pub fn superpost(&self, layer: usize, bin: u64) -> &PostingsList {
        &self.layers[layer][bin as usize]
    }

    /// All stored layers, hedging layers last.
    pub fn layers(&self) -> &[Vec<PostingsList>] {
        &self.layers
    }

    pub fn common_words(&self) -> &BTreeMap<String, PostingsList> {
        &self.common_words
    }
}

/// Accumulates a sketch document by document.
///
/// Bins hold document indices until [`SketchBuilder::finish`], which keeps
/// memory at one `u32` per (word, layer) hit instead of a full posting.
#[derive(Debug)]
pub struct SketchBuilder {
    config: SketchConfig,
    assignment: BinAssignment,
    docs: Vec<Posting>,
    bins: Vec<Vec<u32>>,
    common: BTreeMap<String, Vec<u32>>,
}

impl SketchBuilder {
    pub fn new(config: SketchConfig, assignment: BinAssignment, common_words: BTreeSet<String>) -> Result<Self> {
        if common_words.len() as u64 > config.common_bins() {
            return Err(Error::InvalidConfig(format!(
                "{} common words exceed the {} reserved bins",
                common_words.len(),
                config.common_bins()
            )));
        }
        let total = config.stored_layers() as usize * config.bins_per_layer() as usize;
        Ok(Self {
            config,
            assignment,
            docs: Vec::new(),
            bins: vec![Vec::new(); total],
            common: common_words.into_iter().map(|w| (w, Vec::new())).collect(),
        })
    }

    /// Adds one document; `words` should be its distinct words.
    pub fn add_document<'a>(&mut self, posting: Posting, words: impl IntoIterator<Item = &'a str>) {
        let id = self.docs.len() as u32;
        self.docs.push(posting);
        let bpl = self.config.bins_per_layer() as usize;
        for word in words {
            if let Some(list) = self.common.get_mut(word) {
                list.push(id);
                continue;
            }
            for (layer, bin) in self.assignment.bins(word, &self.config).into_iter().enumerate() {
                let slot = &mut self.bins[layer * bpl + bin as usize];
                if slot.last() != Some(&id) {
                    slot.push(id);
                }
            }
        }
    }

    pub fn finish(self) -> IoUSketch {
        let mut order: Vec<u32> = (0..self.docs.len() as u32).collect();
        order.sort_by(|&a, &b| self.docs[a as usize].cmp(&self.docs[b as usize]));
        let mut rank = vec![0u32; self.docs.len()];
        for (r, &id) in order.iter().enumerate() {
            rank[id as usize] = r as u32;
        }
        let docs = &self.docs;
        let to_list = |mut ids: Vec<u32>| -> PostingsList {
            ids.sort_unstable_by_key(|&i| rank[i as usize]);
            ids.dedup_by(|a, b| docs[*a as usize] == docs[*b as usize]);
            PostingsList::from_sorted_unchecked(ids.into_iter().map(|i| docs[i as usize].clone()).collect())
        };

        let bpl = self.config.bins_per_layer() as usize;
        let mut layers: Vec<Vec<PostingsList>> = Vec::with_capacity(self.config.stored_layers() as usize);
        let mut iter = self.bins.into_iter();
        for _ in 0..self.config.stored_layers() {
            layers.push(iter.by_ref().take(bpl).map(&to_list).collect());
        }
        let common_words = self.common.into_iter().map(|(w, ids)| (w, to_list(ids))).collect();
        IoUSketch {
            config: self.config,
            assignment: self.assignment,
            layers,
            common_words,
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::Posting;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn doc(i: u64) -> Posting {
        Posting::new("blob", i * 10, 5).unwrap()
    }

    fn list(ids: &[u64]) -> PostingsList {
        PostingsList::from_unsorted(ids.iter().map(|&i| doc(i)))
    }

    /// Three layers of three bins with the hand-picked layout of the worked example.
    pub(crate) fn worked_example() -> IoUSketch {
        let config = SketchConfig::with_seeds(9, 3, vec![11, 22, 33], 0.0, 0).unwrap();
        let fixed = BinAssignment::fixed(
            [
                ("w1", [0, 2, 0]),
                ("w2", [1, 1, 0]),
                ("w3", [1, 2, 0]),
                ("w4", [2, 1, 1]),
            ]
            .into_iter()
            .flat_map(|(w, bins)| {
                bins.into_iter()
                    .enumerate()
                    .map(move |(l, b)| (w.to_string(), l, b))
            }),
        );
        let mut sketch = IoUSketch::with_assignment(config, fixed);
        sketch.insert("w1", &list(&[1])).unwrap();
        sketch.insert("w2", &list(&[2, 3])).unwrap();
        sketch.insert("w3", &list(&[2, 3, 4])).unwrap();
        sketch.insert("w4", &list(&[2, 3, 4, 5])).unwrap();
        sketch
    }

    #[test]
    fn worked_example_superposts_and_queries() {
        let s = worked_example();
        assert_eq!(s.superpost(0, 1), &list(&[2, 3, 4]));
        assert_eq!(s.superpost(1, 0), &list(&[]));
        assert_eq!(s.superpost(2, 0), &list(&[1, 2, 3, 4]));
        assert_eq!(s.local_query("w2"), list(&[2, 3, 4]));
        assert_eq!(s.local_query("w1"), list(&[1]));
    }

    #[test]
    fn empty_and_repeated_inserts() {
        let mut s = worked_example();
        let before = s.layers().to_vec();
        s.insert("w9", &PostingsList::new()).unwrap();
        assert_eq!(s.layers(), &before[..]);
        s.insert("w3", &list(&[2, 3, 4])).unwrap();
        assert_eq!(s.layers(), &before[..]);
        assert!(s.insert("", &list(&[1])).is_err());
    }

    #[test]
    fn common_words_are_exact() {
        let config = SketchConfig::new(200, 2, 0.05, 0, 5).unwrap();
        let mut s = IoUSketch::new(config);
        s.designate_common(["the"]).unwrap();
        s.insert("the", &list(&[1, 2, 3])).unwrap();
        s.insert("cat", &list(&[2])).unwrap();
        assert_eq!(s.local_query("the"), list(&[1, 2, 3]));
        assert!(s.layers().iter().flatten().all(|b| b.len() <= 1));
        let too_many: Vec<String> = (0..11).map(|i| format!("c{i}")).collect();
        assert!(s.designate_common(too_many).is_err());
    }

    fn random_corpus(seed: u64, words: usize, docs: u64) -> Vec<(String, PostingsList)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..words)
            .map(|w| {
                let n = rng.random_range(1..6);
                let ids: Vec<u64> = (0..n).map(|_| rng.random_range(0..docs)).collect();
                (format!("w{w}"), list(&ids))
            })
            .collect()
    }

    #[test]
    fn no_false_negatives_and_query_is_raw_intersection() {
        let config = SketchConfig::new(3000, 3, 0.0, 1, 99).unwrap();
        let mut s = IoUSketch::new(config.clone());
        let corpus = random_corpus(7, 1000, 500);
        for (w, p) in &corpus {
            s.insert(w, p).unwrap();
        }
        for (w, p) in &corpus {
            assert!(p.is_subset_of(&s.local_query(w)), "{w}");
        }
        for w in ["never-seen", "x", "another"] {
            let bins = crate::hashing::bins_for_word(w, &config);
            let mut expect = s.superpost(0, bins[0]).clone();
            for l in 1..3 {
                expect = expect.intersect(s.superpost(l, bins[l]));
            }
            assert_eq!(s.local_query(w), expect);
        }
    }

    #[test]
    fn one_layer_equals_hash_table() {
        let config = SketchConfig::new(50, 1, 0.0, 0, 3).unwrap();
        let mut s = IoUSketch::new(config.clone());
        let corpus = random_corpus(8, 200, 100);
        for (w, p) in &corpus {
            s.insert(w, p).unwrap();
        }
        for (w, _) in &corpus {
            let bin = crate::hashing::bins_for_word(w, &config)[0];
            let merged = crate::model::union_lists(
                &corpus
                    .iter()
                    .filter(|(o, _)| crate::hashing::bins_for_word(o, &config)[0] == bin)
                    .map(|(_, p)| p.clone())
                    .collect::<Vec<_>>(),
            );
            assert_eq!(s.local_query(w), merged);
        }
    }

    #[test]
    fn builder_matches_word_by_word_insertion() {
        let config = SketchConfig::new(400, 2, 0.01, 1, 1).unwrap();
        let docs: Vec<(Posting, Vec<&str>)> = vec![
            (Posting::new("b", 20, 3).unwrap(), vec!["a", "b", "the"]),
            (Posting::new("a", 0, 4).unwrap(), vec!["b", "c", "the"]),
            (Posting::new("b", 0, 9).unwrap(), vec!["a", "d"]),
        ];
        let common: BTreeSet<String> = ["the".to_string()].into();
        let mut builder = SketchBuilder::new(config.clone(), BinAssignment::Hashed, common.clone()).unwrap();
        let mut direct = IoUSketch::new(config);
        direct.designate_common(common).unwrap();
        for (p, words) in &docs {
            builder.add_document(p.clone(), words.iter().copied());
            for w in words {
                direct.insert(w, &PostingsList::from_unsorted([p.clone()])).unwrap();
            }
        }
        let built = builder.finish();
        assert_eq!(built.layers(), direct.layers());
        assert_eq!(built.common_words(), direct.common_words());
    }

    #[test]
    fn pointer_table_lookup() {
        let config = SketchConfig::with_seeds(6, 2, vec![1, 2, 3], 0.0, 1).unwrap();
        let ptrs: Vec<SuperpostPointer> = (0..9)
            .map(|i| SuperpostPointer { block_id: 0, offset: i * 10, length: 10 })
            .collect();
        let mht = MultilayerHashTable::new(config.clone(), ptrs, BTreeMap::new()).unwrap();
        assert_eq!(mht.pointer(2, 1).offset, 70);
        match mht.pointers_for("x", &BinAssignment::Hashed) {
            WordPointers::Layers(v) => assert_eq!(v.len(), 3),
            other => panic!("{other:?}"),
        }
        assert!(MultilayerHashTable::new(config, vec![], BTreeMap::new()).is_err());
        assert!(SuperpostPointer::EMPTY.is_empty());
    }
}
