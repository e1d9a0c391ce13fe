//! Keyword search over blob storage with a compact probabilistic index.
//!
//! An IoU ("intersection of unions") sketch hashes every word into one bin
//! per layer; a bin stores the union of the postings lists of its words and
//! a lookup intersects the bins of the query word. The result is a superset
//! of the true postings list, and fetched documents are filtered afterwards.

pub mod builder;
pub mod error;
pub mod format;
pub mod hashing;
pub mod model;
pub mod parse;
pub mod sketch;
pub mod searcher;
pub mod stats;
pub mod store;
pub mod synth;

pub use builder::{build, BuildParams, BuildReport, CorpusSpec};
pub use error::{Error, Result};
pub use format::{read_header, write_index, HeaderBlock, IndexMetadata, StringTable};
pub use hashing::{bin_for, bins_for_word, BinAssignment, LayerHasher};
pub use model::{intersect_lists, union_lists, CorpusProfile, Posting, PostingsList, QueryDistribution, QueryMode, SketchConfig};
pub use parse::{DocParser, Tokenizer, WordParser};
pub use searcher::{DnfQuery, FetchMode, HedgePolicy, QueryResult, SearchOptions, Searcher, TopKResult};
pub use sketch::{IoUSketch, MultilayerHashTable, SketchBuilder, SuperpostPointer};
pub use stats::{minimize_layers, AccuracyBudget, FalsePositiveModel, Formula, LayerChoice};
pub use store::{BlobStore, DirStore, Fetcher, LatencyModel, MemoryStore, RangeRequest, SimulatedStore, StoreError};
pub use synth::{SynthKind, SynthSpec};
