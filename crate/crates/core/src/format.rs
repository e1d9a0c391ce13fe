//! Byte layout of the persisted index: superpost encoding and the header block.
//!
//! All fixed-width integers are little-endian; `varint` is unsigned LEB128
//! with overlong encodings rejected. `docs/FORMAT.md` has the full tables.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{Posting, PostingsList, SketchConfig};
use crate::parse::{DocParser, Tokenizer, WordParser};
use crate::sketch::{IoUSketch, MultilayerHashTable, SuperpostPointer};
use crate::store::BlobStore;

pub const MAGIC: &[u8; 4] = b"IOUX";
pub const FORMAT_VERSION: u16 = 1;
/// Encoded size of one [`SuperpostPointer`].
pub const POINTER_BYTES: u64 = 20;

pub fn header_blob_name(corpus_id: &str) -> String {
    format!("{corpus_id}.iou.header")
}

pub fn posts_blob_name(corpus_id: &str) -> String {
    format!("{corpus_id}.iou.posts")
}

pub fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_varint(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

fn put_pointer(out: &mut Vec<u8>, p: &SuperpostPointer) {
    out.extend_from_slice(&p.block_id.to_le_bytes());
    out.extend_from_slice(&p.offset.to_le_bytes());
    out.extend_from_slice(&p.length.to_le_bytes());
}

/// Cursor over encoded bytes.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn is_at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn finish(&self) -> Result<()> {
        if self.is_at_end() {
            Ok(())
        } else {
            Err(Error::corrupt(format!(
                "{} trailing bytes after offset {}",
                self.buf.len() - self.pos,
                self.pos
            )))
        }
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::corrupt(format!("truncated: need {n} bytes at offset {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.bytes(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub fn varint(&mut self) -> Result<u64> {
        let start = self.pos;
        let mut v = 0u64;
        for i in 0..10 {
            let b = self.u8()?;
            if i == 9 && b > 1 {
                return Err(Error::corrupt(format!("varint at offset {start} overflows 64 bits")));
            }
            v |= u64::from(b & 0x7f) << (7 * i);
            if b & 0x80 == 0 {
                if b == 0 && i > 0 {
                    return Err(Error::corrupt(format!("overlong varint at offset {start}")));
                }
                return Ok(v);
            }
        }
        Err(Error::corrupt(format!("varint at offset {start} overflows 64 bits")))
    }

    /// A varint that must fit in memory as a count or length.
    fn len(&mut self) -> Result<usize> {
        let v = self.varint()?;
        if v > (self.buf.len() - self.pos) as u64 * 8 + 64 {
            return Err(Error::corrupt(format!("implausible length {v} at offset {}", self.pos)));
        }
        Ok(v as usize)
    }

    pub fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        let bytes = self.bytes(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::corrupt("string is not UTF-8"))
    }

    fn pointer(&mut self) -> Result<SuperpostPointer> {
        Ok(SuperpostPointer {
            block_id: self.u32()?,
            offset: self.u64()?,
            length: self.u64()?,
        })
    }
}

/// Sorted, duplicate-free blob names; a name's id is its position.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StringTable {
    names: Vec<Arc<str>>,
}

impl StringTable {
    pub fn from_names<S: Into<Arc<str>>>(names: impl IntoIterator<Item = S>) -> Self {
        let set: BTreeSet<Arc<str>> = names.into_iter().map(Into::into).collect();
        Self {
            names: set.into_iter().collect(),
        }
    }

    /// Table of every blob name referenced by `sketch`.
    pub fn for_sketch(sketch: &IoUSketch) -> Self {
        let lists = sketch.layers().iter().flatten().chain(sketch.common_words().values());
        let mut set: BTreeSet<Arc<str>> = BTreeSet::new();
        for list in lists {
            for p in list {
                if !set.contains(&p.blob_name) {
                    set.insert(Arc::clone(&p.blob_name));
                }
            }
        }
        Self {
            names: set.into_iter().collect(),
        }
    }

    pub fn id(&self, name: &str) -> Option<u64> {
        self.names
            .binary_search_by(|n| (**n).cmp(name))
            .ok()
            .map(|i| i as u64)
    }

    pub fn name(&self, id: u64) -> Option<&Arc<str>> {
        self.names.get(id as usize)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<str>> {
        self.names.iter()
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        put_varint(out, self.names.len() as u64);
        for n in &self.names {
            put_str(out, n);
        }
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let count = r.len()?;
        let mut names: Vec<Arc<str>> = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let s: Arc<str> = r.string()?.into();
            if names.last().is_some_and(|prev| *prev >= s) {
                return Err(Error::corrupt("string table is not strictly sorted"));
            }
            names.push(s);
        }
        Ok(Self { names })
    }
}

/// Encodes a postings list as runs of postings sharing a blob:
///
/// ```text
/// varint run_count
/// run*: varint blob_id_gap, varint run_len, (varint offset_gap, varint length)*
/// ```
///
/// The first blob id and the first offset of each run are absolute.
pub fn encode_superpost(list: &PostingsList, table: &StringTable) -> Result<Vec<u8>> {
    let mut runs: Vec<(u64, &[Posting])> = Vec::new();
    let postings = list.as_slice();
    let mut start = 0;
    while start < postings.len() {
        let name = &postings[start].blob_name;
        let id = table
            .id(name)
            .ok_or_else(|| Error::UnknownBlobName(name.to_string()))?;
        let end = start + postings[start..].iter().take_while(|p| p.blob_name == *name).count();
        runs.push((id, &postings[start..end]));
        start = end;
    }
    let mut out = Vec::with_capacity(1 + postings.len() * 4);
    put_varint(&mut out, runs.len() as u64);
    let mut prev_id = 0;
    for (k, (id, run)) in runs.iter().enumerate() {
        put_varint(&mut out, if k == 0 { *id } else { id - prev_id });
        prev_id = *id;
        put_varint(&mut out, run.len() as u64);
        let mut prev_off = 0;
        for (j, p) in run.iter().enumerate() {
            put_varint(&mut out, if j == 0 { p.offset } else { p.offset - prev_off });
            put_varint(&mut out, p.length);
            prev_off = p.offset;
        }
    }
    Ok(out)
}

pub fn decode_superpost(bytes: &[u8], table: &StringTable) -> Result<PostingsList> {
    let mut r = Reader::new(bytes);
    let runs = r.len()?;
    let mut out: Vec<Posting> = Vec::new();
    let mut id = 0u64;
    for k in 0..runs {
        let gap = r.varint()?;
        if k > 0 && gap == 0 {
            return Err(Error::corrupt("blob ids are not strictly increasing"));
        }
        id = id
            .checked_add(gap)
            .ok_or_else(|| Error::corrupt("blob id overflow"))?;
        let name = table
            .name(id)
            .ok_or_else(|| Error::corrupt(format!("unknown string id {id}")))?;
        let run_len = r.len()?;
        if run_len == 0 {
            return Err(Error::corrupt("empty run"));
        }
        let (mut offset, mut prev_len) = (0u64, 0u64);
        for j in 0..run_len {
            let gap = r.varint()?;
            let length = r.varint()?;
            if length == 0 {
                return Err(Error::corrupt("posting of length zero"));
            }
            if j > 0 && gap == 0 && length <= prev_len {
                return Err(Error::corrupt("postings are not strictly increasing"));
            }
            offset = if j == 0 {
                gap
            } else {
                offset
                    .checked_add(gap)
                    .ok_or_else(|| Error::corrupt("offset overflow"))?
            };
            offset
                .checked_add(length)
                .ok_or_else(|| Error::corrupt("posting extends past 2^64"))?;
            out.push(Posting {
                blob_name: Arc::clone(name),
                offset,
                length,
            });
            prev_len = length;
        }
    }
    r.finish()?;
    Ok(PostingsList::from_sorted_unchecked(out))
}

/// Descriptive fields stored next to the sketch.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexMetadata {
    pub corpus_id: String,
    pub doc_count: u64,
    /// Seconds since the Unix epoch, as supplied by the builder.
    pub timestamp: u64,
    pub f0: f64,
    pub delta: f64,
    pub doc_parser: DocParser,
    pub tokenizer: Tokenizer,
}

impl IndexMetadata {
    pub fn new(corpus_id: impl Into<String>) -> Self {
        Self {
            corpus_id: corpus_id.into(),
            doc_count: 0,
            timestamp: 0,
            f0: 1.0,
            delta: 1e-6,
            doc_parser: DocParser::Newline,
            tokenizer: Tokenizer::default(),
        }
    }
}

/// Everything a searcher needs before its first query.
#[derive(Debug, Clone, PartialEq)]
pub struct HeaderBlock {
    pub metadata: IndexMetadata,
    pub string_table: StringTable,
    pub posts_blob: String,
    pub posts_len: u64,
    pub mht: MultilayerHashTable,
}

impl HeaderBlock {
    pub fn config(&self) -> &SketchConfig {
        &self.mht.config
    }

    pub fn encode(&self) -> Vec<u8> {
        let c = &self.mht.config;
        let mut out = Vec::with_capacity(64 + self.mht.bin_pointers.len() * POINTER_BYTES as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());

        out.extend_from_slice(&c.total_bins.to_le_bytes());
        out.extend_from_slice(&c.layers.to_le_bytes());
        out.extend_from_slice(&c.bins_per_layer().to_le_bytes());
        out.extend_from_slice(&c.hedge_extra_layers.to_le_bytes());
        out.extend_from_slice(&c.common_word_fraction.to_le_bytes());
        for s in &c.layer_seeds {
            out.extend_from_slice(&s.to_le_bytes());
        }

        let m = &self.metadata;
        put_str(&mut out, &m.corpus_id);
        out.extend_from_slice(&m.doc_count.to_le_bytes());
        out.extend_from_slice(&m.timestamp.to_le_bytes());
        out.extend_from_slice(&m.f0.to_le_bytes());
        out.extend_from_slice(&m.delta.to_le_bytes());
        out.push(m.doc_parser.tag());
        out.push(m.tokenizer.word_parser.tag());
        if let WordParser::Delimiters(d) = &m.tokenizer.word_parser {
            put_str(&mut out, d);
        }
        out.push(m.tokenizer.lowercase as u8);

        self.string_table.encode(&mut out);
        put_str(&mut out, &self.posts_blob);
        out.extend_from_slice(&self.posts_len.to_le_bytes());

        for p in &self.mht.bin_pointers {
            put_pointer(&mut out, p);
        }
        put_varint(&mut out, self.mht.common_word_pointers.len() as u64);
        for (w, p) in &self.mht.common_word_pointers {
            put_str(&mut out, w);
            put_pointer(&mut out, p);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.bytes(4).map_err(|_| Error::corrupt("missing magic"))? != MAGIC {
            return Err(Error::corrupt("bad magic"));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }

        let total_bins = r.u64()?;
        let layers = r.u32()?;
        let bins_per_layer = r.u64()?;
        let hedge = r.u32()?;
        let fraction = r.f64()?;
        let stored = layers as u64 + hedge as u64;
        if stored == 0 || stored > total_bins.max(1) {
            return Err(Error::corrupt(format!("implausible layer count {stored}")));
        }
        let seeds = (0..stored).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let config = SketchConfig::with_seeds(total_bins, layers, seeds, fraction, hedge)
            .map_err(|e| Error::corrupt(format!("header config: {e}")))?;
        if config.bins_per_layer() != bins_per_layer {
            return Err(Error::corrupt(format!(
                "bins per layer {bins_per_layer} disagrees with the configuration ({})",
                config.bins_per_layer()
            )));
        }

        let corpus_id = r.string()?;
        let doc_count = r.u64()?;
        let timestamp = r.u64()?;
        let f0 = r.f64()?;
        let delta = r.f64()?;
        let doc_parser = DocParser::from_tag(r.u8()?)?;
        let word_parser = match r.u8()? {
            0 => WordParser::Whitespace,
            1 => WordParser::Delimiters(r.string()?),
            t => return Err(Error::corrupt(format!("unknown word parser tag {t}"))),
        };
        let lowercase = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::corrupt(format!("invalid lowercase flag {b}"))),
        };
        let metadata = IndexMetadata {
            corpus_id,
            doc_count,
            timestamp,
            f0,
            delta,
            doc_parser,
            tokenizer: Tokenizer::new(word_parser, lowercase),
        };

        let string_table = StringTable::decode(&mut r)?;
        let posts_blob = r.string()?;
        let posts_len = r.u64()?;

        let n_ptrs = stored * bins_per_layer;
        if n_ptrs.saturating_mul(POINTER_BYTES) > (bytes.len() - r.position()) as u64 {
            return Err(Error::corrupt("truncated bin pointer table"));
        }
        let bin_pointers = (0..n_ptrs).map(|_| r.pointer()).collect::<Result<Vec<_>>>()?;
        let n_common = r.len()?;
        let mut common = BTreeMap::new();
        let mut prev: Option<String> = None;
        for _ in 0..n_common {
            let w = r.string()?;
            if prev.as_ref().is_some_and(|p| *p >= w) {
                return Err(Error::corrupt("common words are not strictly sorted"));
            }
            let p = r.pointer()?;
            prev = Some(w.clone());
            common.insert(w, p);
        }
        r.finish()?;

        validate_pointers(bin_pointers.iter().chain(common.values()), posts_len)?;
        let mht = MultilayerHashTable::new(config, bin_pointers, common)
            .map_err(|e| Error::corrupt(format!("pointer table: {e}")))?;
        Ok(Self {
            metadata,
            string_table,
            posts_blob,
            posts_len,
            mht,
        })
    }
}

/// Pointers must lie inside the superpost blob and be pairwise disjoint
/// (identical pointers are allowed).
fn validate_pointers<'a>(ptrs: impl Iterator<Item = &'a SuperpostPointer>, posts_len: u64) -> Result<()> {
    let mut live: Vec<SuperpostPointer> = Vec::new();
    for p in ptrs {
        if p.is_empty() {
            continue;
        }
        if p.block_id != 0 {
            return Err(Error::corrupt(format!("unsupported block id {}", p.block_id)));
        }
        if p.length == 0 {
            return Err(Error::corrupt(format!("zero-length pointer at offset {}", p.offset)));
        }
        match p.offset.checked_add(p.length) {
            Some(end) if end <= posts_len => {}
            _ => {
                return Err(Error::corrupt(format!(
                    "pointer [{}, +{}) outside the {posts_len}-byte superpost blob",
                    p.offset, p.length
                )))
            }
        }
        live.push(*p);
    }
    live.sort_unstable();
    live.dedup();
    for w in live.windows(2) {
        if w[1].offset < w[0].end() {
            return Err(Error::corrupt(format!(
                "pointers at offsets {} and {} overlap",
                w[0].offset, w[1].offset
            )));
        }
    }
    Ok(())
}

/// Names and sizes of a persisted index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrittenIndex {
    pub header_blob: String,
    pub posts_blob: String,
    pub header_bytes: u64,
    pub posts_bytes: u64,
}

/// Serializes the sketch into its two blobs: superposts layer by layer in
/// bin order, then common words in word order, and the header.
pub fn write_index(sketch: &IoUSketch, store: &dyn BlobStore, metadata: IndexMetadata) -> Result<(HeaderBlock, WrittenIndex)> {
    let table = StringTable::for_sketch(sketch);
    let mut posts = Vec::new();
    let mut place = |list: &PostingsList| -> Result<SuperpostPointer> {
        if list.is_empty() {
            return Ok(SuperpostPointer::EMPTY);
        }
        let bytes = encode_superpost(list, &table)?;
        let ptr = SuperpostPointer {
            block_id: 0,
            offset: posts.len() as u64,
            length: bytes.len() as u64,
        };
        posts.extend_from_slice(&bytes);
        Ok(ptr)
    };
    let mut bin_pointers = Vec::new();
    for layer in sketch.layers() {
        for bin in layer {
            bin_pointers.push(place(bin)?);
        }
    }
    let mut common = BTreeMap::new();
    for (w, list) in sketch.common_words() {
        common.insert(w.clone(), place(list)?);
    }
    let posts_blob = posts_blob_name(&metadata.corpus_id);
    let header_blob = header_blob_name(&metadata.corpus_id);
    let header = HeaderBlock {
        mht: MultilayerHashTable::new(sketch.config().clone(), bin_pointers, common)?,
        string_table: table,
        posts_blob: posts_blob.clone(),
        posts_len: posts.len() as u64,
        metadata,
    };
    let encoded = header.encode();
    store.put(&posts_blob, &posts)?;
    store.put(&header_blob, &encoded)?;
    let written = WrittenIndex {
        header_blob,
        posts_blob,
        header_bytes: encoded.len() as u64,
        posts_bytes: posts.len() as u64,
    };
    Ok((header, written))
}

/// Reads and decodes a header with a single full-blob read.
pub fn read_header(store: &dyn BlobStore, header_blob: &str) -> Result<HeaderBlock> {
    HeaderBlock::decode(&store.get_full(header_blob)?)
}

/// Upper estimate of the encoded header size.
///
/// `names_bytes` is the total length of the distinct blob names and
/// `avg_word_bytes` the expected length of a common word.
pub fn estimate_header_bytes(
    total_bins: u64,
    layers: u32,
    hedge_extra_layers: u32,
    common_word_fraction: f64,
    names_bytes: u64,
    name_count: u64,
    avg_word_bytes: u64,
) -> u64 {
    let common = crate::model::common_bins_for(total_bins, common_word_fraction);
    let iou = total_bins.saturating_sub(common) / layers.max(1) as u64 * layers.max(1) as u64;
    let bpl = iou / layers.max(1) as u64;
    let stored = layers as u64 + hedge_extra_layers as u64;
    let fixed = 4 + 2 + 8 + 4 + 8 + 4 + 8 + stored * 8 + 64 + 8 * 4 + 4 + 10 + 64 + 8 + 10;
    fixed
        + names_bytes
        + name_count * 10
        + stored * bpl * POINTER_BYTES
        + common * (POINTER_BYTES + 10 + avg_word_bytes)
}

/// Largest bin budget whose estimated header fits in `limit_bytes`.
pub fn max_bins_for_header_bytes(
    limit_bytes: u64,
    layers: u32,
    hedge_extra_layers: u32,
    common_word_fraction: f64,
    names_bytes: u64,
    name_count: u64,
) -> Option<u64> {
    let est = |b: u64| {
        estimate_header_bytes(b, layers, hedge_extra_layers, common_word_fraction, names_bytes, name_count, 16)
    };
    let min = layers.max(1) as u64;
    if est(min) > limit_bytes {
        return None;
    }
    let (mut lo, mut hi) = (min, min.max(limit_bytes / POINTER_BYTES + 1) * 2);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if est(mid) <= limit_bytes {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Some(lo)
}
