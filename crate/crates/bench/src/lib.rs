//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use iou_sketch::synth::generate;
use iou_sketch::*;

/// A synthetic corpus indexed into a memory store.
pub struct Fixture {
    pub store: Arc<MemoryStore>,
    pub spec: CorpusSpec,
    pub header: HeaderBlock,
    pub report: BuildReport,
}

/// Builds `kind(a, b, c)` with `total_bins` bins and the optimizer's layer count.
pub fn indexed(kind: SynthKind, log10: (u32, u32, u32), total_bins: u64) -> Result<Fixture> {
    let store = Arc::new(MemoryStore::new());
    let synth = SynthSpec {
        docs_per_blob: Some(1000),
        ..SynthSpec::from_log10(kind, log10.0, log10.1, log10.2, 1)
    };
    let spec = generate(&synth, store.as_ref(), "bench")?;
    let params = BuildParams { total_bins, ..Default::default() };
    let (header, report) = build(&spec, &params, store.as_ref())?;
    Ok(Fixture { store, spec, header, report })
}

/// Query words of a synthetic corpus, spread over the frequency ranks.
pub fn sample_words(n_words: u64, count: usize) -> Vec<String> {
    let step = (n_words / count.max(1) as u64).max(1);
    (0..count as u64).map(|i| synth::word_name((i * step) % n_words)).collect()
}
