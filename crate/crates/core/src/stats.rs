//! False-positive model of the sketch and the layer-count optimizer.
//!
//! For a document with `w` distinct words, `B` hashed bins and `L` layers the
//! probability that it is returned for an unrelated query word is
//!
//! ```text
//! q(L)  = [1 - (1 - L/B)^w]^L            (exact)
//! q̂(L) = [1 - exp(-w L / B)]^L          (approximation, q̂ <= q)
//! ```
//!
//! and the expected false positives per query are `F(L) = Σ_i c_i q_i(L)`
//! where `c_i` is the query mass of words absent from document `i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CorpusProfile;

/// Accuracy target: expected false positives per query and failure probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyBudget {
    pub f0: f64,
    pub delta: f64,
}

impl AccuracyBudget {
    pub fn new(f0: f64, delta: f64) -> Result<Self> {
        if !(f0 > 0.0 && f0.is_finite()) {
            return Err(Error::Domain(format!("F0 must be positive, got {f0}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Domain(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(Self { f0, delta })
    }
}

impl Default for AccuracyBudget {
    fn default() -> Self {
        Self { f0: 1.0, delta: 1e-6 }
    }
}

/// Which per-document collision probability to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formula {
    Exact,
    Approx,
}

/// Exact collision probability `[1 - (1 - 1/(B/L))^w]^L`.
pub fn q_exact(layers: f64, bins: f64, distinct: u64) -> Result<f64> {
    let per_layer = bins / layers;
    if !(per_layer >= 1.0) {
        return Err(Error::Domain(format!(
            "{bins} bins over {layers} layers leaves fewer than one bin per layer"
        )));
    }
    if distinct == 0 {
        return Ok(0.0);
    }
    let miss = (distinct as f64 * (-1.0 / per_layer).ln_1p()).exp();
    Ok((1.0 - miss).powf(layers))
}

/// `z(L) = 1 - exp(-w L / B)`: probability that one layer's bin is shared.
pub fn z_of(layers: f64, bins: f64, distinct: u64) -> f64 {
    -(-(distinct as f64) * layers / bins).exp_m1()
}

/// Approximate collision probability `[1 - exp(-w L / B)]^L`.
pub fn q_approx(layers: f64, bins: f64, distinct: u64) -> f64 {
    if distinct == 0 {
        return 0.0;
    }
    z_of(layers, bins, distinct).powf(layers)
}

/// `z ln z - (1 - z) ln(1 - z)`; its sign is the sign of `dq̂/dL`, zero at z = 1/2.
pub fn derivative_bracket(z: f64) -> f64 {
    z * z.ln() - (1.0 - z) * (-z).ln_1p()
}

/// `dq̂/dL = z^(L-1) [z ln z - (1-z) ln(1-z)]`.
///
/// The chain-rule term of `z(L)` is already folded in through
/// `w L / B = -ln(1 - z)`, so this is the full derivative.
pub fn q_approx_derivative(layers: f64, bins: f64, distinct: u64) -> Result<f64> {
    let z = z_of(layers, bins, distinct);
    if !(z > 0.0 && z < 1.0) {
        return Err(Error::Domain(format!("derivative undefined at z = {z}")));
    }
    Ok(z.powf(layers - 1.0) * derivative_bracket(z))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct DocTerm {
    distinct: u64,
    /// Query mass of words absent from the document.
    c: f64,
    /// Same, over squared probabilities.
    c_sq: f64,
}

/// Expected-false-positive model of one corpus at a fixed bin budget.
#[derive(Debug, Clone, PartialEq)]
pub struct FalsePositiveModel {
    bins: f64,
    docs: Vec<DocTerm>,
    l_min: Option<f64>,
    l_max: Option<f64>,
}

impl FalsePositiveModel {
    /// `bins` is the number of hashed bins shared by all layers.
    pub fn new(bins: u64, profile: &CorpusProfile) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Domain("bin budget must be positive".into()));
        }
        if profile.n == 0 || profile.doc_distinct_counts.is_empty() {
            return Err(Error::Domain("profile has no documents".into()));
        }
        let docs: Vec<DocTerm> = profile
            .doc_distinct_counts
            .iter()
            .enumerate()
            .map(|(i, &distinct)| DocTerm {
                distinct,
                c: profile.irrelevant_mass(i),
                c_sq: profile.irrelevant_mass_sq(i),
            })
            .collect();
        let b = bins as f64;
        let stars = docs
            .iter()
            .filter(|d| d.distinct > 0)
            .map(|d| l_star(b, d.distinct));
        let (l_min, l_max) = stars.fold((None, None), |(lo, hi): (Option<f64>, Option<f64>), s| {
            (
                Some(lo.map_or(s, |v| v.min(s))),
                Some(hi.map_or(s, |v| v.max(s))),
            )
        });
        Ok(Self {
            bins: b,
            docs,
            l_min,
            l_max,
        })
    }

    pub fn bins(&self) -> f64 {
        self.bins
    }

    pub fn documents(&self) -> usize {
        self.docs.len()
    }

    /// Smallest per-document optimum `L_i*`; `None` if every document is empty.
    pub fn l_min(&self) -> Option<f64> {
        self.l_min
    }

    pub fn l_max(&self) -> Option<f64> {
        self.l_max
    }

    /// `F(L)` or `F̂(L)`.
    pub fn expected_fp(&self, layers: f64, formula: Formula) -> Result<f64> {
        let mut total = 0.0;
        for d in &self.docs {
            if d.c == 0.0 {
                continue;
            }
            let q = match formula {
                Formula::Exact => q_exact(layers, self.bins, d.distinct)?,
                Formula::Approx => q_approx(layers, self.bins, d.distinct),
            };
            total += d.c * q;
        }
        Ok(total)
    }

    /// `dF̂/dL`, skipping documents where the derivative is undefined (no words).
    pub fn expected_fp_derivative(&self, layers: f64) -> f64 {
        self.docs
            .iter()
            .filter(|d| d.distinct > 0 && d.c > 0.0)
            .filter_map(|d| {
                q_approx_derivative(layers, self.bins, d.distinct)
                    .ok()
                    .map(|g| d.c * g)
            })
            .sum()
    }

    /// Feasibility floor `Σ_i c_i 2^(-L_i*)`.
    pub fn lower_bound(&self) -> f64 {
        self.docs
            .iter()
            .filter(|d| d.distinct > 0)
            .map(|d| d.c * (-l_star(self.bins, d.distinct)).exp2())
            .sum()
    }

    /// Coefficient of the concentration bound: `sqrt(Σ_i Σ_{w ∉ W_i} p_w^2)`.
    pub fn sigma_x(&self) -> f64 {
        self.docs.iter().map(|d| d.c_sq).sum::<f64>().sqrt()
    }
}

/// Per-document minimizer of `q̂`: `(B / w) ln 2`.
pub fn l_star(bins: f64, distinct: u64) -> f64 {
    bins / distinct as f64 * std::f64::consts::LN_2
}

/// Outcome of the layer optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerChoice {
    Layers(u32),
    /// No layer count meets the budget; carries the feasibility floor.
    Reject { lower_bound: f64 },
}

/// Smallest integer `L` with `F(L) <= F0`, or a rejection.
///
/// 1. Reject at once when the floor `Σ c_i 2^(-L_i*)` exceeds `F0`.
/// 2. On `[1, ⌊L_min⌋]` the approximation `F̂` is strictly decreasing and
///    bounds `F` from below, so every `L` before the first with `F̂(L) <= F0`
///    is infeasible. That point is found by binary search and `F` is then
///    checked upward from it (normally a single evaluation).
/// 3. Otherwise scan `⌈L_min⌉ ..= ⌈L_max⌉` in order.
pub fn minimize_layers(model: &FalsePositiveModel, budget: &AccuracyBudget) -> Result<LayerChoice> {
    let f0 = budget.f0;
    let lower_bound = model.lower_bound();
    if lower_bound > f0 {
        return Ok(LayerChoice::Reject { lower_bound });
    }
    let (l_min, l_max) = match (model.l_min(), model.l_max()) {
        (Some(lo), Some(hi)) => (lo, hi),
        // No document has words: nothing can collide.
        _ => return Ok(LayerChoice::Layers(1)),
    };
    let feasible = |l: u64| -> Result<bool> { Ok(model.expected_fp(l as f64, Formula::Exact)? <= f0) };

    let fast_end = l_min.floor() as u64;
    if fast_end >= 1 && model.expected_fp(fast_end as f64, Formula::Approx)? <= f0 {
        let (mut lo, mut hi) = (1u64, fast_end);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if model.expected_fp(mid as f64, Formula::Approx)? <= f0 {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        for l in lo..=fast_end {
            if feasible(l)? {
                return Ok(LayerChoice::Layers(l as u32));
            }
        }
    }

    let start = (l_min.ceil() as u64).max(fast_end + 1).max(1);
    let end = (l_max.ceil() as u64).min(model.bins().floor() as u64);
    for l in start..=end {
        if feasible(l)? {
            return Ok(LayerChoice::Layers(l as u32));
        }
    }
    Ok(LayerChoice::Reject { lower_bound })
}

/// Deviation `ε` such that observed false positives exceed `F(L) + ε` with
/// probability at most `delta`.
pub fn deviation_bound(sigma: f64, delta: f64) -> f64 {
    (0.5 * sigma * sigma * (1.0 / delta).ln()).max(0.0).sqrt()
}

/// Number of candidates to sample so that at least `k` of them are true
/// matches with probability `1 - delta`, when `r` candidates hold `f0`
/// false positives on average.
pub fn topk_sample_size(k: u64, r: u64, f0: f64, delta: f64) -> Result<u64> {
    if k == 0 || r == 0 {
        return Err(Error::Domain("K and R must be positive".into()));
    }
    if k as f64 >= r as f64 - f0 {
        return Ok(r);
    }
    let p = 1.0 - f0 / r as f64;
    if !(p > 0.0) {
        return Err(Error::Domain(format!("relevance probability {p} is not positive")));
    }
    let k = k as f64;
    let a = 2.0 * p * k + 0.5 * (1.0 / delta).ln();
    let radicand = (a * a - 4.0 * p * p * k * k).max(0.0);
    let size = ((a + radicand.sqrt()) / (2.0 * p * p)).ceil();
    Ok((size as u64).min(r))
}
