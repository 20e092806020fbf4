//! Information-theoretic range of the robust margin δ.
//!
//! The upper end comes from requiring that `2^H(L)` distinct label patterns fit
//! into a K-bit code with pairwise distance δ (Gilbert–Varshamov plus the
//! entropy bound on Hamming-ball volume). The lower end asks δ bits to cover
//! the neighbourhood entropy of most samples, via Chebyshev's inequality.
//!
//! All entropies here are in bits.

use num_bigint::BigUint;
use num_traits::One;
use serde::{Deserialize, Serialize};

use crate::data::{build_similarity, intersection_count, LabelMatrix, SimilarityMatrix};
use crate::error::{ensure, Error, Result};

/// Largest code length [`greedy_codebook`] will enumerate.
pub const MAX_ENUMERATION_BITS: u32 = 20;

pub const DEFAULT_CONFIDENCE: f64 = 0.9;

/// `H(p) = −p·log₂p − (1−p)·log₂(1−p)`, with `0·log 0 = 0`.
pub fn binary_entropy(p: f64) -> Result<f64> {
    ensure!(
        (0.0..=1.0).contains(&p),
        InvalidArgument,
        "probability {p} outside [0, 1]"
    );
    Ok(entropy_bits(p))
}

fn entropy_bits(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.log2() } else { 0.0 };
    term(p) + term(1.0 - p)
}

fn binomial_row(k: u32) -> Vec<BigUint> {
    let mut row = Vec::with_capacity(k as usize + 1);
    let mut c = BigUint::one();
    row.push(c.clone());
    for i in 0..k {
        c = c * (k - i) / (i + 1);
        row.push(c.clone());
    }
    row
}

/// `|B_δ^K| = Σ_{i=0}^{δ} C(K, i)`, exact.
pub fn hamming_ball_volume(k: u32, delta: u32) -> Result<BigUint> {
    ensure!(
        delta <= k,
        InvalidArgument,
        "radius {delta} exceeds code length {k}"
    );
    Ok(binomial_row(k).into_iter().take(delta as usize + 1).sum())
}

/// `⌈2^K / Σ_{i<δ} C(K, i)⌉`, a guaranteed lower bound on `A(K, δ)`.
pub fn gv_lower_bound(k: u32, delta: u32) -> Result<BigUint> {
    ensure!(
        delta >= 1 && delta <= k,
        InvalidArgument,
        "minimum distance {delta} outside [1, {k}]"
    );
    let space = BigUint::one() << k as usize;
    let ball = hamming_ball_volume(k, delta - 1)?;
    Ok((space + &ball - 1u32) / ball)
}

/// `2^{H(δ/K)·K}`, which dominates the ball volume whenever `δ/K ≤ 1/2`.
pub fn ball_entropy_bound(k: u32, delta: u32) -> Result<f64> {
    ensure!(k >= 1, InvalidArgument, "code length must be positive");
    ensure!(
        2 * u64::from(delta) <= u64::from(k),
        InvalidArgument,
        "radius ratio {delta}/{k} exceeds 1/2"
    );
    let p = f64::from(delta) / f64::from(k);
    Ok((entropy_bits(p) * f64::from(k)).exp2())
}

/// K-bit codewords with a guaranteed pairwise minimum distance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCodebook {
    pub k: u32,
    pub min_distance: u32,
    /// Bit `i` of a word is coordinate `i` of the code.
    pub words: Vec<u32>,
}

impl BinaryCodebook {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Exhaustive minimum over all pairs; `None` for fewer than two words.
    pub fn pairwise_min_distance(&self) -> Option<u32> {
        let mut best: Option<u32> = None;
        for (i, &a) in self.words.iter().enumerate() {
            for &b in &self.words[i + 1..] {
                let d = (a ^ b).count_ones();
                best = Some(best.map_or(d, |m| m.min(d)));
            }
        }
        best
    }
}

/// Lexicographic greedy code: scan every K-bit word in increasing order and keep
/// it when it is at distance ≥ δ from everything kept so far.
///
/// A kept word marks its radius-(δ−1) ball as covered, so a word is kept exactly
/// when it is uncovered. That is the covering argument behind the GV bound, which
/// therefore lower-bounds the returned size.
pub fn greedy_codebook(k: u32, delta: u32) -> Result<BinaryCodebook> {
    ensure!(
        (1..=MAX_ENUMERATION_BITS).contains(&k),
        InvalidArgument,
        "greedy enumeration supports 1..={MAX_ENUMERATION_BITS} bits, got {k}"
    );
    ensure!(
        delta >= 1 && delta <= k,
        InvalidArgument,
        "minimum distance {delta} outside [1, {k}]"
    );
    let size = 1usize << k;
    let flips: Vec<u32> = (0..size as u32)
        .filter(|m| m.count_ones() < delta)
        .collect();
    let mut covered = vec![false; size];
    let mut words = Vec::new();
    for w in 0..size as u32 {
        if covered[w as usize] {
            continue;
        }
        words.push(w);
        for &m in &flips {
            covered[(w ^ m) as usize] = true;
        }
    }
    Ok(BinaryCodebook {
        k,
        min_distance: delta,
        words,
    })
}

/// Per-tag Bernoulli parameters `θ_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagDistribution {
    thetas: Vec<f64>,
}

impl TagDistribution {
    pub fn new(thetas: Vec<f64>) -> Result<Self> {
        ensure!(
            thetas.iter().all(|t| (0.0..=1.0).contains(t)),
            InvalidArgument,
            "tag probabilities must lie in [0, 1]"
        );
        Ok(Self { thetas })
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }
}

/// `θ̂_i = (1/N)·Σ_n 1[l_{n,i} = 1]`.
pub fn estimate_tag_probs(labels: &LabelMatrix) -> Result<TagDistribution> {
    ensure!(
        labels.n() >= 1,
        InvalidArgument,
        "cannot estimate tag probabilities from 0 rows"
    );
    let mut counts = vec![0u64; labels.c()];
    for row in labels.rows() {
        for (c, &v) in counts.iter_mut().zip(row) {
            *c += u64::from(v);
        }
    }
    let n = labels.n() as f64;
    TagDistribution::new(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// `H(L) = Σ_i H(θ_i)` under tag independence.
pub fn label_entropy(dist: &TagDistribution) -> f64 {
    dist.thetas.iter().map(|&t| entropy_bits(t)).sum()
}

/// Largest δ in `[1, ⌊K/2⌋]` with `H((δ−1)/K) ≤ 1 − H(L)/K`, or `None` when even
/// δ = 1 violates it.
pub fn delta_upper_bound(k: u32, h_label: f64) -> Result<Option<u32>> {
    ensure!(
        k >= 2,
        InvalidArgument,
        "code length must be at least 2, got {k}"
    );
    ensure!(
        h_label.is_finite() && h_label >= 0.0,
        InvalidArgument,
        "label entropy must be finite and non-negative"
    );
    let budget = 1.0 - h_label / f64::from(k);
    let kf = f64::from(k);
    // H is increasing on [0, 1/2], so the feasible set is a prefix of the scan.
    Ok((1..=k / 2)
        .take_while(|&d| entropy_bits(f64::from(d - 1) / kf) <= budget)
        .last())
}

/// How the neighbourhood entropy `H_i` of each sample is estimated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborMode {
    /// `H_i := |l_i|`, an upper bound on the exact estimator.
    #[default]
    Cardinality,
    /// Entropy of the empirical distribution of similarity levels `j/|l_i|`.
    Exact,
}

impl std::str::FromStr for NeighborMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cardinality" => Ok(NeighborMode::Cardinality),
            "exact" => Ok(NeighborMode::Exact),
            other => Err(Error::InvalidArgument(format!(
                "unknown neighbor mode {other:?}, expected cardinality or exact"
            ))),
        }
    }
}

/// Population mean and variance of `H_i` over all rows.
///
/// In exact mode `similarity` must be the square self-similarity of `labels`.
/// Row `i`'s levels are taken over the neighbours `*` with `S_i* > 0` whose
/// similarity sits on the `j/|l_i|` grid, i.e. `|l_*| ≤ |l_i|`; the sample
/// itself is always one of them.
pub fn neighbor_entropy_stats(
    labels: &LabelMatrix,
    similarity: Option<&SimilarityMatrix>,
    mode: NeighborMode,
) -> Result<(f64, f64)> {
    ensure!(
        labels.n() >= 1,
        InvalidArgument,
        "no rows for neighbour entropy"
    );
    let values: Vec<f64> = match mode {
        NeighborMode::Cardinality => (0..labels.n())
            .map(|i| f64::from(labels.cardinality(i)))
            .collect(),
        NeighborMode::Exact => {
            let s = similarity.ok_or_else(|| {
                Error::InvalidArgument("exact neighbour entropy needs the similarity matrix".into())
            })?;
            ensure!(
                s.rows() == labels.n() && s.cols() == labels.n(),
                ShapeMismatch,
                "similarity is {}x{}, labels have {} rows",
                s.rows(),
                s.cols(),
                labels.n()
            );
            (0..labels.n())
                .map(|i| level_entropy(labels, s, i))
                .collect()
        }
    };
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var))
}

fn level_entropy(labels: &LabelMatrix, s: &SimilarityMatrix, i: usize) -> f64 {
    let ci = labels.cardinality(i);
    let li = labels.row(i);
    let mut counts = vec![0u64; ci as usize + 1];
    let (cols, _) = s.row_sparse(i);
    for &j in cols {
        let j = j as usize;
        if labels.cardinality(j) <= ci {
            counts[intersection_count(li, labels.row(j)) as usize] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum()
}

/// `⌈√(D/(1−p)) + E⌉` from Chebyshev's inequality at confidence `p ∈ (1/2, 1)`.
pub fn delta_lower_bound(mean: f64, variance: f64, confidence: f64) -> Result<u32> {
    ensure!(
        confidence > 0.5 && confidence < 1.0,
        InvalidArgument,
        "confidence {confidence} outside (1/2, 1)"
    );
    ensure!(
        variance.is_finite() && variance >= 0.0 && mean.is_finite(),
        InvalidArgument,
        "moments must be finite with non-negative variance"
    );
    let bound = ((variance / (1.0 - confidence)).sqrt() + mean).ceil();
    ensure!(
        bound <= f64::from(u32::MAX),
        InvalidArgument,
        "lower bound {bound} overflows"
    );
    Ok(bound.max(0.0) as u32)
}

/// Estimated entropies and the resulting effective δ interval for one code length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    #[serde(rename = "K")]
    pub k: u32,
    pub h_label: f64,
    pub neighbor_entropy_mean: f64,
    pub neighbor_entropy_var: f64,
    pub confidence: f64,
    pub mode: NeighborMode,
    /// Chebyshev bound, raised to 1 since δ is a positive integer.
    pub delta_min: u32,
    /// `None` when no δ ≥ 1 satisfies the upper-bound condition.
    pub delta_max: Option<u32>,
    pub empty: bool,
    pub diagnostic: Option<String>,
}

impl BoundsReport {
    /// Interval midpoint rounded down, when the interval is non-empty.
    pub fn midpoint(&self) -> Option<u32> {
        match self.delta_max {
            Some(max) if !self.empty => Some((self.delta_min + max) / 2),
            _ => None,
        }
    }

    pub fn contains(&self, delta: u32) -> bool {
        matches!(self.delta_max, Some(max) if !self.empty && delta >= self.delta_min && delta <= max)
    }
}

/// Composes the tag-entropy upper bound with the neighbour-entropy lower bound.
pub fn effective_delta_range(
    labels: &LabelMatrix,
    k: u32,
    confidence: f64,
    mode: NeighborMode,
) -> Result<BoundsReport> {
    let h_label = label_entropy(&estimate_tag_probs(labels)?);
    let upper = delta_upper_bound(k, h_label)?;
    let similarity = match mode {
        NeighborMode::Exact => Some(build_similarity(labels, labels)?),
        NeighborMode::Cardinality => None,
    };
    let (mean, var) = neighbor_entropy_stats(labels, similarity.as_ref(), mode)?;
    let delta_min = delta_lower_bound(mean, var, confidence)?.max(1);
    let (empty, diagnostic) = match upper {
        None => (
            true,
            Some(format!(
                "label entropy {h_label:.4} bits exceeds what {k}-bit codes can separate at any delta >= 1"
            )),
        ),
        Some(max) if delta_min > max => (
            true,
            Some(format!(
                "neighbour-entropy lower bound {delta_min} exceeds entropy upper bound {max} at K = {k}"
            )),
        ),
        Some(_) => (false, None),
    };
    Ok(BoundsReport {
        k,
        h_label,
        neighbor_entropy_mean: mean,
        neighbor_entropy_var: var,
        confidence,
        mode,
        delta_min,
        delta_max: upper,
        empty,
        diagnostic,
    })
}
