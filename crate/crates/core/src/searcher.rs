//! Query execution against a persisted index.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{decode_superpost, read_header, HeaderBlock};
use crate::hashing::BinAssignment;
use crate::model::{intersect_lists, union_lists, Posting, PostingsList};
use crate::sketch::{SuperpostPointer, WordPointers};
use crate::stats::topk_sample_size;
use crate::store::{BlobStore, FetchStats, Fetcher, RangeRequest, DEFAULT_CONCURRENCY};

/// How the reads of one phase are issued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FetchMode {
    /// All reads of a phase in one concurrent batch.
    #[default]
    Batched,
    /// One read at a time.
    Sequential,
}

/// Whether lookups read extra layers and keep the first to arrive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HedgePolicy {
    #[default]
    Off,
    /// Read up to this many of the stored extra layers.
    Extra(u32),
}

#[derive(Debug, Clone)]
pub struct SearchOptions {
    pub concurrency: usize,
    pub fetch_mode: FetchMode,
    pub hedge: HedgePolicy,
    pub assignment: BinAssignment,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            concurrency: DEFAULT_CONCURRENCY,
            fetch_mode: FetchMode::Batched,
            hedge: HedgePolicy::Off,
            assignment: BinAssignment::Hashed,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub lookup_ms: f64,
    pub doc_fetch_ms: f64,
    pub filter_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub matches: PostingsList,
    /// Candidates returned by the index before filtering.
    pub candidates: usize,
    pub false_positives_removed: usize,
    /// Documents actually read.
    pub fetched: usize,
    pub timings: Timings,
    /// Bytes of each match, aligned with `matches`.
    #[serde(skip)]
    pub documents: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopKResult {
    #[serde(flatten)]
    pub result: QueryResult,
    pub k: u64,
    /// Planned sample size.
    pub sample_size: u64,
    /// Whether the sample fell short and every candidate was read.
    pub escalated: bool,
}

/// Disjunction of conjunctions of words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnfQuery {
    pub clauses: Vec<Vec<String>>,
}

impl DnfQuery {
    pub fn new(clauses: Vec<Vec<String>>) -> Result<Self> {
        if clauses.is_empty() || clauses.iter().any(Vec::is_empty) {
            return Err(Error::EmptyExpression);
        }
        Ok(Self { clauses })
    }

    /// Parses `a b | c d` or `a AND b OR c AND d`.
    pub fn parse(expr: &str) -> Result<Self> {
        let mut clauses = vec![Vec::new()];
        for tok in expr.split_whitespace() {
            for piece in split_keep(tok, '|') {
                match piece {
                    "|" | "OR" => clauses.push(Vec::new()),
                    "AND" | "&" => {}
                    w => clauses.last_mut().unwrap().push(w.to_string()),
                }
            }
        }
        Self::new(clauses)
    }

    pub fn words(&self) -> BTreeSet<&str> {
        self.clauses.iter().flatten().map(String::as_str).collect()
    }

    pub fn matches(&self, words: &BTreeSet<String>) -> bool {
        self.clauses
            .iter()
            .any(|c| c.iter().all(|w| words.contains(w)))
    }
}

fn split_keep(tok: &str, sep: char) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = tok;
    while let Some(i) = rest.find(sep) {
        if i > 0 {
            out.push(&rest[..i]);
        }
        out.push(&rest[i..i + sep.len_utf8()]);
        rest = &rest[i + sep.len_utf8()..];
    }
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

/// Searcher state: the decoded header and a fetcher.
#[derive(Clone)]
pub struct Searcher {
    header: Arc<HeaderBlock>,
    fetcher: Fetcher,
    options: SearchOptions,
}

enum TermPlan {
    Empty,
    Common(RangeRequest),
    Layers { reqs: Vec<RangeRequest>, need: usize },
}

impl Searcher {
    /// Reads the header blob; no other read happens before the first query.
    pub fn init(store: Arc<dyn BlobStore>, header_blob: &str, options: SearchOptions) -> Result<Self> {
        let header = read_header(store.as_ref(), header_blob)?;
        Ok(Self::from_header(store, header, options))
    }

    pub fn from_header(store: Arc<dyn BlobStore>, header: HeaderBlock, options: SearchOptions) -> Self {
        Self {
            header: Arc::new(header),
            fetcher: Fetcher::new(store, options.concurrency),
            options,
        }
    }

    pub fn header(&self) -> &HeaderBlock {
        &self.header
    }

    pub fn options(&self) -> &SearchOptions {
        &self.options
    }

    pub fn fetch_stats(&self) -> FetchStats {
        self.fetcher.stats()
    }

    fn range(&self, p: SuperpostPointer) -> RangeRequest {
        RangeRequest::new(self.header.posts_blob.as_str(), p.offset, p.length)
    }

    fn plan(&self, word: &str) -> TermPlan {
        let config = &self.header.mht.config;
        let layers = config.layers as usize;
        let extra = match self.options.hedge {
            HedgePolicy::Off => 0,
            HedgePolicy::Extra(n) => n.min(config.hedge_extra_layers) as usize,
        };
        match self.header.mht.pointers_for(word, &self.options.assignment) {
            WordPointers::Common(p) if p.is_empty() => TermPlan::Empty,
            WordPointers::Common(p) => TermPlan::Common(self.range(p)),
            WordPointers::Layers(ptrs) => {
                // An empty bin in any layer proves the word has no postings.
                let used = &ptrs[..layers + extra];
                if used.iter().any(SuperpostPointer::is_empty) {
                    return TermPlan::Empty;
                }
                TermPlan::Layers {
                    reqs: used.iter().map(|&p| self.range(p)).collect(),
                    need: layers,
                }
            }
        }
    }

    /// Candidate lists of several words, fetched as one batch.
    pub fn lookup_terms(&self, words: &[&str]) -> Result<Vec<PostingsList>> {
        let words: Vec<String> = words
            .iter()
            .map(|w| self.header.metadata.tokenizer.normalize(w))
            .collect();
        let plans: Vec<TermPlan> = words.iter().map(|w| self.plan(w)).collect();
        let table = &self.header.string_table;
        let decode = |bytes: &[u8]| decode_superpost(bytes, table);

        let hedged = plans
            .iter()
            .any(|p| matches!(p, TermPlan::Layers { reqs, need } if reqs.len() > *need));
        if hedged && self.options.fetch_mode == FetchMode::Batched {
            let groups: Vec<(Vec<RangeRequest>, usize)> = plans
                .iter()
                .map(|p| match p {
                    TermPlan::Empty => (vec![], 0),
                    TermPlan::Common(r) => (vec![r.clone()], 1),
                    TermPlan::Layers { reqs, need } => (reqs.clone(), *need),
                })
                .collect();
            let fetched = self.fetcher.fetch_hedged_groups(&groups)?;
            return plans
                .iter()
                .zip(fetched)
                .map(|(plan, got)| match plan {
                    TermPlan::Empty => Ok(PostingsList::new()),
                    _ => {
                        let lists = got.iter().map(|(_, b)| decode(b)).collect::<Result<Vec<_>>>()?;
                        intersect_lists(&lists)
                    }
                })
                .collect();
        }

        // Each distinct range is read once even if several words share it.
        let mut unique: BTreeMap<RangeRequest, usize> = BTreeMap::new();
        let mut wanted: Vec<Vec<usize>> = Vec::with_capacity(plans.len());
        for plan in &plans {
            let reqs: &[RangeRequest] = match plan {
                TermPlan::Empty => &[],
                TermPlan::Common(r) => std::slice::from_ref(r),
                TermPlan::Layers { reqs, need } => &reqs[..*need],
            };
            wanted.push(
                reqs.iter()
                    .map(|r| {
                        let next = unique.len();
                        *unique.entry(r.clone()).or_insert(next)
                    })
                    .collect(),
            );
        }
        let mut order: Vec<(RangeRequest, usize)> = unique.into_iter().collect();
        order.sort_by_key(|(_, i)| *i);
        let reqs: Vec<RangeRequest> = order.into_iter().map(|(r, _)| r).collect();
        let bytes = self.fetch(&reqs)?;
        let lists = bytes.iter().map(|b| decode(b)).collect::<Result<Vec<_>>>()?;
        Ok(wanted
            .into_iter()
            .map(|idx| {
                let mine: Vec<&PostingsList> = idx.iter().map(|&i| &lists[i]).collect();
                intersect_lists(&mine).unwrap_or_default()
            })
            .collect())
    }

    pub fn lookup_term(&self, word: &str) -> Result<PostingsList> {
        Ok(self.lookup_terms(&[word])?.pop().unwrap_or_default())
    }

    fn fetch(&self, reqs: &[RangeRequest]) -> Result<Vec<Vec<u8>>> {
        if reqs.is_empty() {
            return Ok(Vec::new());
        }
        Ok(match self.options.fetch_mode {
            FetchMode::Batched => self.fetcher.fetch_batch(reqs)?,
            FetchMode::Sequential => self.fetcher.fetch_sequential(reqs)?,
        })
    }

    /// Reads `docs` and keeps those whose words satisfy `keep`.
    fn fetch_and_filter(
        &self,
        docs: &[Posting],
        keep: impl Fn(&BTreeSet<String>) -> bool,
        timings: &mut Timings,
    ) -> Result<Vec<(Posting, Vec<u8>)>> {
        let t = Instant::now();
        let reqs: Vec<RangeRequest> = docs
            .iter()
            .map(|p| RangeRequest::new(Arc::clone(&p.blob_name), p.offset, p.length))
            .collect();
        let bytes = self.fetch(&reqs)?;
        timings.doc_fetch_ms += ms(t);
        let t = Instant::now();
        let tokenizer = &self.header.metadata.tokenizer;
        let kept = docs
            .iter()
            .cloned()
            .zip(bytes)
            .filter(|(_, b)| keep(&tokenizer.distinct_words(b)))
            .collect();
        timings.filter_ms += ms(t);
        Ok(kept)
    }

    fn normalized(&self, keywords: &[&str]) -> Result<Vec<String>> {
        if keywords.is_empty() {
            return Err(Error::EmptyQuery);
        }
        Ok(keywords
            .iter()
            .map(|w| self.header.metadata.tokenizer.normalize(w))
            .collect())
    }

    fn candidates(&self, keywords: &[String], timings: &mut Timings) -> Result<PostingsList> {
        let t = Instant::now();
        let refs: Vec<&str> = keywords.iter().map(String::as_str).collect();
        let lists = self.lookup_terms(&refs)?;
        let out = intersect_lists(&lists)?;
        timings.lookup_ms = ms(t);
        Ok(out)
    }

    /// Documents containing every keyword.
    pub fn search(&self, keywords: &[&str]) -> Result<QueryResult> {
        let words = self.normalized(keywords)?;
        let mut timings = Timings::default();
        let candidates = self.candidates(&words, &mut timings)?;
        let kept = self.fetch_and_filter(
            candidates.as_slice(),
            |doc| words.iter().all(|w| doc.contains(w)),
            &mut timings,
        )?;
        Ok(result(candidates.len(), candidates.len(), kept, timings))
    }

    /// At least `k` documents containing every keyword (or all of them),
    /// reading a random sample of the candidates first.
    pub fn search_topk(&self, keywords: &[&str], k: u64, delta: f64, seed: u64) -> Result<TopKResult> {
        let words = self.normalized(keywords)?;
        let mut timings = Timings::default();
        let candidates = self.candidates(&words, &mut timings)?;
        let r = candidates.len() as u64;
        let keep = |doc: &BTreeSet<String>| words.iter().all(|w| doc.contains(w));
        if r == 0 {
            return Ok(TopKResult {
                result: result(0, 0, vec![], timings),
                k,
                sample_size: 0,
                escalated: false,
            });
        }
        let sample_size = topk_sample_size(k, r, self.header.metadata.f0, delta)?;
        let all = candidates.as_slice();
        if sample_size >= r {
            let kept = self.fetch_and_filter(all, keep, &mut timings)?;
            return Ok(TopKResult {
                result: result(all.len(), all.len(), kept, timings),
                k,
                sample_size,
                escalated: false,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, all.len(), sample_size as usize).into_vec();
        picked.sort_unstable();
        let sample: Vec<Posting> = picked.iter().map(|&i| all[i].clone()).collect();
        let mut kept = self.fetch_and_filter(&sample, keep, &mut timings)?;
        let mut fetched = sample.len();
        let escalated = (kept.len() as u64) < k;
        if escalated {
            let chosen: BTreeSet<usize> = picked.into_iter().collect();
            let rest: Vec<Posting> = (0..all.len())
                .filter(|i| !chosen.contains(i))
                .map(|i| all[i].clone())
                .collect();
            fetched += rest.len();
            kept.extend(self.fetch_and_filter(&rest, keep, &mut timings)?);
            kept.sort_by(|a, b| a.0.cmp(&b.0));
        }
        Ok(TopKResult {
            result: result(all.len(), fetched, kept, timings),
            k,
            sample_size,
            escalated,
        })
    }

    /// Documents satisfying a DNF expression.
    pub fn search_boolean(&self, query: &DnfQuery) -> Result<QueryResult> {
        if query.clauses.is_empty() || query.clauses.iter().any(Vec::is_empty) {
            return Err(Error::EmptyExpression);
        }
        let tokenizer = &self.header.metadata.tokenizer;
        let query = DnfQuery {
            clauses: query
                .clauses
                .iter()
                .map(|c| c.iter().map(|w| tokenizer.normalize(w)).collect())
                .collect(),
        };
        let mut timings = Timings::default();
        let t = Instant::now();
        let words: Vec<&str> = query.words().into_iter().collect();
        let lists = self.lookup_terms(&words)?;
        let by_word: BTreeMap<&str, &PostingsList> = words.iter().copied().zip(&lists).collect();
        let per_clause: Vec<PostingsList> = query
            .clauses
            .iter()
            .map(|c| {
                let mine: Vec<&PostingsList> = c.iter().map(|w| by_word[w.as_str()]).collect();
                intersect_lists(&mine)
            })
            .collect::<Result<_>>()?;
        let candidates = union_lists(&per_clause);
        timings.lookup_ms = ms(t);
        let kept = self.fetch_and_filter(candidates.as_slice(), |doc| query.matches(doc), &mut timings)?;
        Ok(result(candidates.len(), candidates.len(), kept, timings))
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

fn result(candidates: usize, fetched: usize, kept: Vec<(Posting, Vec<u8>)>, timings: Timings) -> QueryResult {
    let (matches, documents): (Vec<Posting>, Vec<Vec<u8>>) = kept.into_iter().unzip();
    QueryResult {
        false_positives_removed: fetched - matches.len(),
        matches: PostingsList::from_sorted_unchecked(matches),
        candidates,
        fetched,
        timings,
        documents,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::{build, BuildParams, CorpusSpec};
    use crate::format::{write_index, IndexMetadata};
    use crate::sketch::tests::{doc, worked_example};
    use crate::store::{CountingStore, MemoryStore};

    fn fig1() -> (Arc<CountingStore>, Searcher) {
        let mem = Arc::new(MemoryStore::new());
        mem.put("blob", b"hello world\nhello airphant\n").unwrap();
        let spec = CorpusSpec::new("fig1", vec!["blob".into()]);
        let params = BuildParams { total_bins: 100, layers: Some(2), ..Default::default() };
        build(&spec, &params, mem.as_ref()).unwrap();
        let counting = Arc::new(CountingStore::new(mem));
        let s = Searcher::init(counting.clone(), "fig1.iou.header", SearchOptions::default()).unwrap();
        (counting, s)
    }

    #[test]
    fn init_reads_only_the_header() {
        let (counting, s) = fig1();
        assert_eq!((counting.full_reads(), counting.range_reads()), (1, 0));
        let again = Searcher::init(counting.clone(), "fig1.iou.header", SearchOptions::default()).unwrap();
        assert_eq!(again.header(), s.header());
        assert!(matches!(
            Searcher::init(counting, "nope", SearchOptions::default()),
            Err(Error::Storage(_))
        ));
    }

    #[test]
    fn fig1_search() {
        let (_, s) = fig1();
        let r = s.search(&["airphant"]).unwrap();
        assert_eq!(r.matches.as_slice(), &[Posting::new("blob", 12, 14).unwrap()]);
        assert_eq!(r.documents, vec![b"hello airphant".to_vec()]);
        assert_eq!(r.false_positives_removed, r.candidates - 1);
        assert_eq!(s.search(&["hello"]).unwrap().matches.len(), 2);
        assert_eq!(s.search(&["hello", "world"]).unwrap().matches.len(), 1);
        assert!(s.search(&["absent"]).unwrap().matches.is_empty());
        assert!(matches!(s.search(&[]), Err(Error::EmptyQuery)));
    }

    #[test]
    fn single_term_query_uses_two_batches() {
        let (_, s) = fig1();
        let before = s.fetch_stats().batches;
        s.search(&["airphant"]).unwrap();
        assert_eq!(s.fetch_stats().batches - before, 2);
    }

    fn fig3_searcher() -> Searcher {
        let sketch = worked_example();
        let store = Arc::new(MemoryStore::new());
        write_index(&sketch, store.as_ref(), IndexMetadata::new("fig3")).unwrap();
        let options = SearchOptions { assignment: sketch.assignment().clone(), ..Default::default() };
        Searcher::init(store, "fig3.iou.header", options).unwrap()
    }

    #[test]
    fn fig3_lookup() {
        let s = fig3_searcher();
        let expect: PostingsList = [2, 3, 4].into_iter().map(doc).collect();
        assert_eq!(s.lookup_term("w2").unwrap(), expect);
        assert_eq!(s.lookup_term("w1").unwrap(), [1].into_iter().map(doc).collect());
        let both = s.lookup_terms(&["w2", "w3"]).unwrap();
        let q = DnfQuery::parse("w2 AND w3").unwrap();
        assert_eq!(q.clauses, vec![vec!["w2".to_string(), "w3".to_string()]]);
        assert_eq!(both[0].intersect(&both[1]), expect);
    }

    #[test]
    fn dnf_parsing() {
        let q = DnfQuery::parse("a b | c").unwrap();
        assert_eq!(q.clauses, vec![vec!["a".to_string(), "b".to_string()], vec!["c".to_string()]]);
        assert_eq!(DnfQuery::parse("a AND b OR c").unwrap(), q);
        assert_eq!(DnfQuery::parse("a b|c").unwrap(), q);
        assert!(matches!(DnfQuery::parse(""), Err(Error::EmptyExpression)));
        assert!(matches!(DnfQuery::parse("a |"), Err(Error::EmptyExpression)));
        let words: BTreeSet<String> = ["c".to_string()].into();
        assert!(q.matches(&words));
    }

    #[test]
    fn boolean_search_fig1() {
        let (_, s) = fig1();
        let r = s.search_boolean(&DnfQuery::parse("world | airphant").unwrap()).unwrap();
        assert_eq!(r.matches.len(), 2);
        let r = s.search_boolean(&DnfQuery::parse("world airphant").unwrap()).unwrap();
        assert!(r.matches.is_empty());
        let single = s.search_boolean(&DnfQuery::parse("airphant").unwrap()).unwrap();
        assert_eq!(single.matches, s.search(&["airphant"]).unwrap().matches);
    }

    #[test]
    fn topk_small_candidate_sets_fetch_everything() {
        let (_, s) = fig1();
        let r = s.search_topk(&["hello"], 10, 1e-6, 0).unwrap();
        assert_eq!(r.result.fetched, r.result.candidates);
        assert_eq!(r.result.matches.len(), 2);
        assert!(!r.escalated);
    }

    #[test]
    fn hedged_lookup_equals_plain() {
        let mem = Arc::new(MemoryStore::new());
        let text: String = (0..200).map(|i| format!("w{} w{} w{}\n", i, i % 7, i % 13)).collect();
        mem.put("c", text.as_bytes()).unwrap();
        let spec = CorpusSpec::new("h", vec!["c".into()]);
        let params = BuildParams { total_bins: 600, layers: Some(3), hedge_extra_layers: 1, ..Default::default() };
        build(&spec, &params, mem.as_ref()).unwrap();
        let plain = Searcher::init(mem.clone(), "h.iou.header", SearchOptions::default()).unwrap();
        let hedged = Searcher::init(
            mem,
            "h.iou.header",
            SearchOptions { hedge: HedgePolicy::Extra(1), ..Default::default() },
        )
        .unwrap();
        for i in 0..200 {
            let w = format!("w{i}");
            assert_eq!(plain.search(&[&w]).unwrap().matches, hedged.search(&[&w]).unwrap().matches);
            assert!(plain.lookup_term(&w).unwrap().len() >= plain.search(&[&w]).unwrap().matches.len());
        }
    }
}
