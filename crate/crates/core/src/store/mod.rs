//! Blob storage with range reads, and concurrent fetching on top of it.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex, RwLock};
use std::thread;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

#[cfg(feature = "http")]
pub mod http;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("blob {0:?} not found")]
    NotFound(String),

    #[error("range [{offset}, {offset}+{length}) outside blob {blob:?} of {size} bytes")]
    OutOfRange {
        blob: String,
        offset: u64,
        length: u64,
        size: u64,
    },

    #[error("invalid blob name {0:?}")]
    InvalidName(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("http error: {0}")]
    Http(String),

    #[error("{failures} of {total} requests failed; first: {first}")]
    Batch {
        failures: usize,
        total: usize,
        first: Box<StoreError>,
    },

    #[error("hedged fetch needed {needed} of {total} requests but {failures} failed; first: {first}")]
    Hedged {
        needed: usize,
        total: usize,
        failures: usize,
        first: Box<StoreError>,
    },
}

/// Byte interval of a blob.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RangeRequest {
    pub blob_name: Arc<str>,
    pub offset: u64,
    pub length: u64,
}

impl RangeRequest {
    pub fn new(blob_name: impl Into<Arc<str>>, offset: u64, length: u64) -> Self {
        assert!(length >= 1, "range requests cover at least one byte");
        Self {
            blob_name: blob_name.into(),
            offset,
            length,
        }
    }
}

/// Random-access blob storage.
pub trait BlobStore: Send + Sync {
    fn put(&self, name: &str, bytes: &[u8]) -> Result<(), StoreError>;
    fn get_range(&self, req: &RangeRequest) -> Result<Vec<u8>, StoreError>;
    fn get_full(&self, name: &str) -> Result<Vec<u8>, StoreError>;
    fn len(&self, name: &str) -> Result<u64, StoreError>;
}

impl<S: BlobStore + ?Sized> BlobStore for Arc<S> {
    fn put(&self, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        (**self).put(name, bytes)
    }
    fn get_range(&self, req: &RangeRequest) -> Result<Vec<u8>, StoreError> {
        (**self).get_range(req)
    }
    fn get_full(&self, name: &str) -> Result<Vec<u8>, StoreError> {
        (**self).get_full(name)
    }
    fn len(&self, name: &str) -> Result<u64, StoreError> {
        (**self).len(name)
    }
}

fn check_range(req: &RangeRequest, size: u64) -> Result<(), StoreError> {
    match req.offset.checked_add(req.length) {
        Some(end) if end <= size && req.length > 0 => Ok(()),
        _ => Err(StoreError::OutOfRange {
            blob: req.blob_name.to_string(),
            offset: req.offset,
            length: req.length,
            size,
        }),
    }
}

/// Blobs held in process memory.
#[derive(Debug, Default)]
pub struct MemoryStore {
    blobs: RwLock<HashMap<String, Arc<Vec<u8>>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.blobs.read().unwrap().keys().cloned().collect();
        names.sort();
        names
    }

    fn blob(&self, name: &str) -> Result<Arc<Vec<u8>>, StoreError> {
        self.blobs
            .read()
            .unwrap()
            .get(name)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(name.to_string()))
    }
}

impl BlobStore for MemoryStore {
    fn put(&self, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        self.blobs
            .write()
            .unwrap()
            .insert(name.to_string(), Arc::new(bytes.to_vec()));
        Ok(())
    }

    fn get_range(&self, req: &RangeRequest) -> Result<Vec<u8>, StoreError> {
        let blob = self.blob(&req.blob_name)?;
        check_range(req, blob.len() as u64)?;
        Ok(blob[req.offset as usize..(req.offset + req.length) as usize].to_vec())
    }

    fn get_full(&self, name: &str) -> Result<Vec<u8>, StoreError> {
        Ok(self.blob(name)?.as_ref().clone())
    }

    fn len(&self, name: &str) -> Result<u64, StoreError> {
        Ok(self.blob(name)?.len() as u64)
    }
}

/// One file per blob under a root directory; the blob name is the relative path.
#[derive(Debug, Clone)]
pub struct DirStore {
    root: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl DirStore {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, name: &str) -> Result<PathBuf, StoreError> {
        let rel = Path::new(name);
        let ok = !name.is_empty() && rel.components().all(|c| matches!(c, Component::Normal(_)));
        if !ok {
            return Err(StoreError::InvalidName(name.to_string()));
        }
        Ok(self.root.join(rel))
    }

    fn open(&self, name: &str) -> Result<fs::File, StoreError> {
        match fs::File::open(self.path(name)?) {
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(StoreError::NotFound(name.to_string())),
            other => Ok(other?),
        }
    }
}

impl BlobStore for DirStore {
    fn put(&self, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        let path = self.path(name)?;
        let dir = path.parent().unwrap_or(&self.root);
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(
            ".{}.tmp-{}-{}",
            path.file_name().unwrap().to_string_lossy(),
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        drop(f);
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    fn get_range(&self, req: &RangeRequest) -> Result<Vec<u8>, StoreError> {
        let mut f = self.open(&req.blob_name)?;
        check_range(req, f.metadata()?.len())?;
        f.seek(SeekFrom::Start(req.offset))?;
        let mut buf = vec![0u8; req.length as usize];
        f.read_exact(&mut buf)?;
        Ok(buf)
    }

    fn get_full(&self, name: &str) -> Result<Vec<u8>, StoreError> {
        let mut f = self.open(name)?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf)?;
        Ok(buf)
    }

    fn len(&self, name: &str) -> Result<u64, StoreError> {
        Ok(self.open(name)?.metadata()?.len())
    }
}

/// Affine request latency: a fixed wait plus size over bandwidth, with
/// optional multiplicative Gaussian jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    pub base_ms: f64,
    pub bytes_per_ms: f64,
    /// Relative standard deviation.
    pub jitter: f64,
    pub seed: u64,
}

impl LatencyModel {
    /// Calibrated to object-storage reads: about 50 ms for small objects
    /// and about 1.86 s for 512 MiB.
    pub const fn cloud() -> Self {
        Self {
            base_ms: 50.0,
            bytes_per_ms: 536_870_912.0 / 1810.0,
            jitter: 0.0,
            seed: 0,
        }
    }

    pub fn latency_ms(&self, blob: &str, offset: u64, length: u64) -> f64 {
        let mean = self.base_ms + length as f64 / self.bytes_per_ms;
        if self.jitter == 0.0 {
            return mean;
        }
        let mut key = Vec::with_capacity(blob.len() + 16);
        key.extend_from_slice(blob.as_bytes());
        key.extend_from_slice(&offset.to_le_bytes());
        key.extend_from_slice(&length.to_le_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(xxh3_64_with_seed(&key, self.seed));
        let noise: f64 = StandardNormal.sample(&mut rng);
        mean * (1.0 + (self.jitter * noise).max(-0.9))
    }

    pub fn latency(&self, blob: &str, offset: u64, length: u64) -> Duration {
        Duration::from_secs_f64(self.latency_ms(blob, offset, length).max(0.0) / 1000.0)
    }
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self::cloud()
    }
}

/// Wraps a store and sleeps for the modeled latency on every read.
pub struct SimulatedStore {
    inner: Arc<dyn BlobStore>,
    model: LatencyModel,
    delays: Mutex<HashMap<(String, u64), Duration>>,
}

impl SimulatedStore {
    pub fn new(inner: Arc<dyn BlobStore>, model: LatencyModel) -> Self {
        Self {
            inner,
            model,
            delays: Mutex::new(HashMap::new()),
        }
    }

    pub fn model(&self) -> &LatencyModel {
        &self.model
    }

    /// Adds `extra` to every read of `blob` starting at `offset`.
    pub fn inject_delay(&self, blob: &str, offset: u64, extra: Duration) {
        self.delays.lock().unwrap().insert((blob.to_string(), offset), extra);
    }

    pub fn clear_delays(&self) {
        self.delays.lock().unwrap().clear();
    }

    fn wait(&self, blob: &str, offset: u64, length: u64) {
        let extra = self
            .delays
            .lock()
            .unwrap()
            .get(&(blob.to_string(), offset))
            .copied()
            .unwrap_or_default();
        thread::sleep(self.model.latency(blob, offset, length) + extra);
    }
}

impl BlobStore for SimulatedStore {
    fn put(&self, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        self.inner.put(name, bytes)
    }

    fn get_range(&self, req: &RangeRequest) -> Result<Vec<u8>, StoreError> {
        let out = self.inner.get_range(req)?;
        self.wait(&req.blob_name, req.offset, req.length);
        Ok(out)
    }

    fn get_full(&self, name: &str) -> Result<Vec<u8>, StoreError> {
        let out = self.inner.get_full(name)?;
        self.wait(name, 0, out.len() as u64);
        Ok(out)
    }

    fn len(&self, name: &str) -> Result<u64, StoreError> {
        self.inner.len(name)
    }
}

/// Counts calls made through it.
pub struct CountingStore {
    inner: Arc<dyn BlobStore>,
    range_reads: AtomicU64,
    full_reads: AtomicU64,
    writes: AtomicU64,
}

impl CountingStore {
    pub fn new(inner: Arc<dyn BlobStore>) -> Self {
        Self {
            inner,
            range_reads: AtomicU64::new(0),
            full_reads: AtomicU64::new(0),
            writes: AtomicU64::new(0),
        }
    }

    pub fn range_reads(&self) -> u64 {
        self.range_reads.load(Ordering::SeqCst)
    }

    pub fn full_reads(&self) -> u64 {
        self.full_reads.load(Ordering::SeqCst)
    }

    pub fn writes(&self) -> u64 {
        self.writes.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.range_reads.store(0, Ordering::SeqCst);
        self.full_reads.store(0, Ordering::SeqCst);
        self.writes.store(0, Ordering::SeqCst);
    }
}

impl BlobStore for CountingStore {
    fn put(&self, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        self.writes.fetch_add(1, Ordering::SeqCst);
        self.inner.put(name, bytes)
    }

    fn get_range(&self, req: &RangeRequest) -> Result<Vec<u8>, StoreError> {
        self.range_reads.fetch_add(1, Ordering::SeqCst);
        self.inner.get_range(req)
    }

    fn get_full(&self, name: &str) -> Result<Vec<u8>, StoreError> {
        self.full_reads.fetch_add(1, Ordering::SeqCst);
        self.inner.get_full(name)
    }

    fn len(&self, name: &str) -> Result<u64, StoreError> {
        self.inner.len(name)
    }
}

/// Default number of concurrent reads per batch.
pub const DEFAULT_CONCURRENCY: usize = 32;

/// Batch counters of a [`Fetcher`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FetchStats {
    pub batches: u64,
    pub requests: u64,
}

/// Issues groups of range reads concurrently.
#[derive(Clone)]
pub struct Fetcher {
    store: Arc<dyn BlobStore>,
    concurrency: usize,
    batches: Arc<AtomicU64>,
    requests: Arc<AtomicU64>,
}

impl Fetcher {
    pub fn new(store: Arc<dyn BlobStore>, concurrency: usize) -> Self {
        Self {
            store,
            concurrency: concurrency.max(1),
            batches: Arc::new(AtomicU64::new(0)),
            requests: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn store(&self) -> &Arc<dyn BlobStore> {
        &self.store
    }

    pub fn concurrency(&self) -> usize {
        self.concurrency
    }

    pub fn stats(&self) -> FetchStats {
        FetchStats {
            batches: self.batches.load(Ordering::SeqCst),
            requests: self.requests.load(Ordering::SeqCst),
        }
    }

    fn record(&self, n: usize) {
        self.batches.fetch_add(1, Ordering::SeqCst);
        self.requests.fetch_add(n as u64, Ordering::SeqCst);
    }

    /// Reads every request with up to `concurrency` in flight; results
    /// come back in request order. Any failure aborts the rest of the batch.
    pub fn fetch_batch(&self, reqs: &[RangeRequest]) -> Result<Vec<Vec<u8>>, StoreError> {
        self.record(reqs.len());
        if reqs.len() <= 1 || self.concurrency == 1 {
            return reqs.iter().map(|r| self.store.get_range(r)).collect();
        }
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let slots: Vec<Mutex<Option<Result<Vec<u8>, StoreError>>>> =
            reqs.iter().map(|_| Mutex::new(None)).collect();
        let workers = self.concurrency.min(reqs.len());
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    if abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= reqs.len() {
                        break;
                    }
                    let res = self.store.get_range(&reqs[i]);
                    if res.is_err() {
                        abort.store(true, Ordering::SeqCst);
                    }
                    *slots[i].lock().unwrap() = Some(res);
                });
            }
        });
        let mut out = Vec::with_capacity(reqs.len());
        let mut errors = Vec::new();
        for slot in slots {
            match slot.into_inner().unwrap() {
                Some(Ok(bytes)) => out.push(bytes),
                Some(Err(e)) => errors.push(e),
                None => {}
            }
        }
        if errors.is_empty() {
            Ok(out)
        } else {
            Err(StoreError::Batch {
                failures: errors.len(),
                total: reqs.len(),
                first: Box::new(errors.swap_remove(0)),
            })
        }
    }

    /// Reads the requests one after another, each as its own batch.
    pub fn fetch_sequential(&self, reqs: &[RangeRequest]) -> Result<Vec<Vec<u8>>, StoreError> {
        reqs.iter()
            .map(|r| {
                self.record(1);
                self.store.get_range(r)
            })
            .collect()
    }

    /// Starts every request and returns once `need` have succeeded, as
    /// `(request index, bytes)` in completion order. Late responses are dropped.
    pub fn fetch_hedged(&self, reqs: &[RangeRequest], need: usize) -> Result<Vec<(usize, Vec<u8>)>, StoreError> {
        let mut out = self.fetch_hedged_groups(&[(reqs.to_vec(), need)])?;
        Ok(out.pop().unwrap_or_default())
    }

    /// Several hedged fetches issued as one batch; returns when every group
    /// has `need` successes. Results are per group, indices within the group.
    pub fn fetch_hedged_groups(
        &self,
        groups: &[(Vec<RangeRequest>, usize)],
    ) -> Result<Vec<Vec<(usize, Vec<u8>)>>, StoreError> {
        for (reqs, need) in groups {
            assert!(*need <= reqs.len(), "cannot need more responses than requests");
        }
        self.record(groups.iter().map(|(r, _)| r.len()).sum());
        let mut done: Vec<Vec<(usize, Vec<u8>)>> = groups.iter().map(|_| Vec::new()).collect();
        let mut failures = vec![0usize; groups.len()];
        let mut pending = groups.iter().filter(|(_, need)| *need > 0).count();
        if pending == 0 {
            return Ok(done);
        }
        let (tx, rx) = mpsc::channel();
        for (g, (reqs, _)) in groups.iter().enumerate() {
            for (i, req) in reqs.iter().enumerate() {
                let tx = tx.clone();
                let store = Arc::clone(&self.store);
                let req = req.clone();
                thread::spawn(move || {
                    let _ = tx.send((g, i, store.get_range(&req)));
                });
            }
        }
        drop(tx);
        for (g, i, res) in rx.iter() {
            let (reqs, need) = (&groups[g].0, groups[g].1);
            if done[g].len() >= need {
                continue;
            }
            match res {
                Ok(bytes) => {
                    done[g].push((i, bytes));
                    if done[g].len() == need {
                        pending -= 1;
                        if pending == 0 {
                            return Ok(done);
                        }
                    }
                }
                Err(e) => {
                    failures[g] += 1;
                    if failures[g] > reqs.len() - need {
                        return Err(StoreError::Hedged {
                            needed: need,
                            total: reqs.len(),
                            failures: failures[g],
                            first: Box::new(e),
                        });
                    }
                }
            }
        }
        unreachable!("every group either completes or fails")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Instant;

    fn alphabet() -> Arc<MemoryStore> {
        let s = Arc::new(MemoryStore::new());
        s.put("abc", b"abcdefghijklmnopqrstuvwxyz").unwrap();
        s
    }

    #[test]
    fn memory_store_basics() {
        let s = alphabet();
        assert_eq!(s.get_range(&RangeRequest::new("abc", 5, 3)).unwrap(), b"fgh");
        assert_eq!(s.get_full("abc").unwrap().len(), 26);
        assert_eq!(s.len("abc").unwrap(), 26);
        assert!(matches!(s.get_full("nope"), Err(StoreError::NotFound(_))));
        assert!(matches!(
            s.get_range(&RangeRequest::new("abc", 25, 2)),
            Err(StoreError::OutOfRange { size: 26, .. })
        ));
    }

    #[test]
    fn dir_store_matches_memory_store() {
        let dir = tempfile::tempdir().unwrap();
        let d = DirStore::new(dir.path()).unwrap();
        let m = MemoryStore::new();
        let data: Vec<u8> = (0..=255u8).cycle().take(5000).collect();
        for s in [&d as &dyn BlobStore, &m] {
            s.put("nested/blob.bin", &data).unwrap();
        }
        for (off, len) in [(0, 1), (5, 3), (4000, 1000)] {
            let r = RangeRequest::new("nested/blob.bin", off, len);
            assert_eq!(d.get_range(&r).unwrap(), m.get_range(&r).unwrap());
        }
        assert_eq!(d.get_full("nested/blob.bin").unwrap(), data);
        assert!(matches!(d.get_full("missing"), Err(StoreError::NotFound(_))));
        assert!(matches!(d.put("../escape", b"x"), Err(StoreError::InvalidName(_))));
        assert!(matches!(d.get_range(&RangeRequest::new("nested/blob.bin", 4999, 2)), Err(StoreError::OutOfRange { .. })));
        let leftovers: Vec<_> = fs::read_dir(dir.path().join("nested")).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn latency_model_is_deterministic_and_affine() {
        let m = LatencyModel { jitter: 0.2, seed: 7, ..LatencyModel::cloud() };
        assert_eq!(m.latency_ms("a", 0, 10), m.latency_ms("a", 0, 10));
        assert_ne!(m.latency_ms("a", 0, 10), m.latency_ms("a", 1, 10));
        let flat = LatencyModel::cloud();
        assert!((flat.latency_ms("a", 0, 0) - 50.0).abs() < 1e-12);
        assert!((flat.latency_ms("a", 0, 512 << 20) - 1860.0).abs() < 1e-6);
        let wild = LatencyModel { jitter: 100.0, seed: 1, ..LatencyModel::cloud() };
        for off in 0..200 {
            assert!(wild.latency_ms("a", off, 1) >= 0.1 * 50.0 - 1e-9);
        }
    }

    /// Serves zero-filled blobs of any length without holding them.
    struct Zeros;

    impl BlobStore for Zeros {
        fn put(&self, _: &str, _: &[u8]) -> Result<(), StoreError> {
            Ok(())
        }
        fn get_range(&self, req: &RangeRequest) -> Result<Vec<u8>, StoreError> {
            Ok(vec![0; req.length as usize])
        }
        fn get_full(&self, _: &str) -> Result<Vec<u8>, StoreError> {
            Ok(vec![])
        }
        fn len(&self, _: &str) -> Result<u64, StoreError> {
            Ok(u64::MAX)
        }
    }

    #[test]
    fn simulated_reads_follow_measured_curve() {
        // Measured object-storage latencies: 1 KB, 4 MB, 512 MB.
        let s = SimulatedStore::new(Arc::new(Zeros), LatencyModel::cloud());
        for (size, measured_ms) in [(1u64 << 10, 50.7), (4 << 20, 76.3), (512 << 20, 1858.0)] {
            let t = Instant::now();
            s.get_range(&RangeRequest::new("z", 0, size)).unwrap();
            let ms = t.elapsed().as_secs_f64() * 1000.0;
            assert!((ms - measured_ms).abs() <= 0.2 * measured_ms, "{size} bytes: {ms} ms");
        }
    }

    fn sim(base_ms: f64) -> Arc<SimulatedStore> {
        let model = LatencyModel { base_ms, bytes_per_ms: 1e12, jitter: 0.0, seed: 0 };
        Arc::new(SimulatedStore::new(alphabet(), model))
    }

    #[test]
    fn batch_runs_concurrently_and_keeps_order() {
        let store = sim(50.0);
        let reqs: Vec<RangeRequest> = (0..4).map(|i| RangeRequest::new("abc", i * 3, 2)).collect();
        let f = Fetcher::new(store.clone(), 4);
        let t = Instant::now();
        let out = f.fetch_batch(&reqs).unwrap();
        assert!(t.elapsed() < Duration::from_millis(100));
        assert_eq!(out, vec![b"ab".to_vec(), b"de".to_vec(), b"gh".to_vec(), b"jk".to_vec()]);
        assert_eq!(f.stats(), FetchStats { batches: 1, requests: 4 });

        let t = Instant::now();
        f.fetch_sequential(&reqs).unwrap();
        assert!(t.elapsed() >= Duration::from_millis(200));
    }

    #[test]
    fn order_survives_shuffled_completion() {
        let store = sim(1.0);
        let reqs: Vec<RangeRequest> = (0..8).map(|i| RangeRequest::new("abc", i, 1)).collect();
        for (k, r) in reqs.iter().enumerate() {
            store.inject_delay("abc", r.offset, Duration::from_millis(((7 - k) * 5) as u64));
        }
        let out = Fetcher::new(store, 8).fetch_batch(&reqs).unwrap();
        let expect: Vec<Vec<u8>> = (0..8u8).map(|i| vec![b'a' + i]).collect();
        assert_eq!(out, expect);
    }

    #[test]
    fn batch_failure_is_aggregated() {
        let f = Fetcher::new(alphabet(), 4);
        let reqs = vec![RangeRequest::new("abc", 0, 1), RangeRequest::new("nope", 0, 1)];
        assert!(matches!(f.fetch_batch(&reqs), Err(StoreError::Batch { total: 2, .. })));
    }

    #[test]
    fn hedged_fetch_skips_straggler() {
        let store = sim(20.0);
        let reqs: Vec<RangeRequest> = (0..4).map(|i| RangeRequest::new("abc", i, 1)).collect();
        store.inject_delay("abc", 1, Duration::from_secs(10));
        let f = Fetcher::new(store, 4);
        let t = Instant::now();
        let got = f.fetch_hedged(&reqs, 3).unwrap();
        assert!(t.elapsed() < Duration::from_secs(1));
        let mut idx: Vec<usize> = got.iter().map(|(i, _)| *i).collect();
        idx.sort();
        assert_eq!(idx, vec![0, 2, 3]);
    }

    #[test]
    fn hedged_fetch_tolerates_spare_failures_only() {
        let f = Fetcher::new(alphabet(), 4);
        let reqs = vec![
            RangeRequest::new("abc", 0, 1),
            RangeRequest::new("nope", 0, 1),
            RangeRequest::new("abc", 2, 1),
        ];
        assert_eq!(f.fetch_hedged(&reqs, 2).unwrap().len(), 2);
        assert!(matches!(f.fetch_hedged(&reqs, 3), Err(StoreError::Hedged { failures: 1, .. })));
        assert_eq!(f.fetch_hedged(&reqs[..1], 1).unwrap(), vec![(0, b"a".to_vec())]);
    }
}
