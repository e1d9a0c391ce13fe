#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use iou_sketch::model::Posting;
use iou_sketch::{BinAssignment, IoUSketch, PostingsList, SketchConfig};

pub fn doc(i: u64) -> Posting {
    Posting::new("blob", i * 10, 5).unwrap()
}

pub fn list(ids: &[u64]) -> PostingsList {
    PostingsList::from_unsorted(ids.iter().map(|&i| doc(i)))
}

/// Three layers of three bins, words pinned to hand-picked bins:
/// w1 {d1}, w2 {d2,d3}, w3 {d2,d3,d4}, w4 {d2,d3,d4,d5}.
pub fn worked_example() -> IoUSketch {
    let config = SketchConfig::with_seeds(9, 3, vec![11, 22, 33], 0.0, 0).unwrap();
    let fixed = BinAssignment::fixed(
        [("w1", [0, 2, 0]), ("w2", [1, 1, 0]), ("w3", [1, 2, 0]), ("w4", [2, 1, 1])]
            .into_iter()
            .flat_map(|(w, bins)| bins.into_iter().enumerate().map(move |(l, b)| (w.to_string(), l, b))),
    );
    let mut sketch = IoUSketch::with_assignment(config, fixed);
    sketch.insert("w1", &list(&[1])).unwrap();
    sketch.insert("w2", &list(&[2, 3])).unwrap();
    sketch.insert("w3", &list(&[2, 3, 4])).unwrap();
    sketch.insert("w4", &list(&[2, 3, 4, 5])).unwrap();
    sketch
}

/// Newline-delimited text of `docs`.
pub fn corpus_text(docs: &[Vec<String>]) -> String {
    let mut text = String::new();
    for d in docs {
        text.push_str(&d.join(" "));
        text.push('\n');
    }
    text
}

/// Postings of a single newline-delimited blob, computed by byte arithmetic.
pub fn postings_of(blob: &str, docs: &[Vec<String>]) -> Vec<Posting> {
    let mut out = Vec::new();
    let mut off = 0u64;
    for d in docs {
        let len = d.join(" ").len() as u64;
        if len > 0 {
            out.push(Posting::new(Arc::<str>::from(blob), off, len).unwrap());
        }
        off += len + 1;
    }
    out
}

/// Exact answer by scanning every document.
pub fn scan<'a>(
    postings: &'a [Posting],
    docs: &'a [Vec<String>],
    keep: impl Fn(&BTreeSet<&str>) -> bool,
) -> Vec<Posting> {
    let mut out: Vec<Posting> = postings
        .iter()
        .zip(docs.iter().filter(|d| !d.join(" ").is_empty()))
        .filter(|(_, d)| keep(&d.iter().map(String::as_str).collect()))
        .map(|(p, _)| p.clone())
        .collect();
    out.sort();
    out
}
