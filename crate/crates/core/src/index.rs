//! Bit-packed binary codes and exact Hamming-distance top-k search.
//!
//! Bit `i` of code `n` lives in word `n·W + i/64` at position `i mod 64`, with
//! `+1 ↔ 1` and `−1 ↔ 0`. Padding bits past `K` are always zero.
//!
//! Code file layout:
//!
//! ```text
//! "RMSHCODE" | K u32 | N u64 | N·W words u64 LE | N × (len u32 | utf-8 id)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{read_file, write_file, ByteReader};
use crate::data::SimilarityMatrix;
use crate::error::{ensure, Error, Result};
use crate::exec::Exec;

pub const CODE_MAGIC: &[u8; 8] = b"RMSHCODE";

pub fn words_per_code(k: usize) -> usize {
    k.div_ceil(64)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedCodes {
    k: usize,
    n: usize,
    words: Vec<u64>,
    ids: Vec<String>,
}

impl PackedCodes {
    /// Packs an N×K row-major matrix of ±1 entries.
    pub fn pack(codes: &[i8], k: usize, ids: Vec<String>) -> Result<Self> {
        ensure!(k >= 1, InvalidArgument, "code length must be >= 1");
        ensure!(
            codes.len() % k == 0,
            ShapeMismatch,
            "{} code entries is not a multiple of K = {k}",
            codes.len()
        );
        let n = codes.len() / k;
        ensure!(
            ids.len() == n,
            ShapeMismatch,
            "{} identifiers for {n} codes",
            ids.len()
        );
        let w = words_per_code(k);
        let mut words = vec![0u64; n * w];
        for (idx, &v) in codes.iter().enumerate() {
            match v {
                1 => {
                    let (row, bit) = (idx / k, idx % k);
                    words[row * w + bit / 64] |= 1 << (bit % 64);
                }
                -1 => {}
                _ => {
                    return Err(Error::NonBinaryCode {
                        index: idx,
                        value: f64::from(v),
                    })
                }
            }
        }
        Ok(Self { k, n, words, ids })
    }

    /// [`PackedCodes::pack`] with identifiers `"0"`, `"1"`, ...
    pub fn pack_with_row_ids(codes: &[i8], k: usize) -> Result<Self> {
        let n = if k == 0 { 0 } else { codes.len() / k };
        Self::pack(codes, k, (0..n).map(|i| i.to_string()).collect())
    }

    pub fn unpack(&self) -> Vec<i8> {
        let w = self.words_per_code();
        let mut out = Vec::with_capacity(self.n * self.k);
        for row in 0..self.n {
            for bit in 0..self.k {
                let set = self.words[row * w + bit / 64] >> (bit % 64) & 1 == 1;
                out.push(if set { 1 } else { -1 });
            }
        }
        out
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn words_per_code(&self) -> usize {
        words_per_code(self.k)
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn row(&self, i: usize) -> &[u64] {
        let w = self.words_per_code();
        &self.words[i * w..(i + 1) * w]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, id: &str) -> Result<usize> {
        self.ids
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }
}

/// Popcount of the XOR of two packed rows.
pub fn hamming(a: &[u64], b: &[u64]) -> Result<u32> {
    ensure!(
        a.len() == b.len(),
        ShapeMismatch,
        "packed rows of {} and {} words",
        a.len(),
        b.len()
    );
    Ok(hamming_unchecked(a, b))
}

#[inline]
fn hamming_unchecked(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hit {
    /// Row position in the database.
    pub row: usize,
    pub distance: u32,
}

/// Ranked hits, ascending distance, ties by ascending row.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub hits: Vec<Hit>,
}

/// Exact `k` nearest rows of `index` to `query`. `k > N` returns every row.
pub fn search_topk(index: &PackedCodes, query: &[u64], k: usize) -> Result<SearchResult> {
    ensure!(k >= 1, InvalidArgument, "k must be >= 1");
    ensure!(
        query.len() == index.words_per_code(),
        ShapeMismatch,
        "query has {} words, index rows have {}",
        query.len(),
        index.words_per_code()
    );
    let dist: Vec<u32> = (0..index.n)
        .map(|i| hamming_unchecked(index.row(i), query))
        .collect();
    Ok(SearchResult {
        hits: rank_by_distance(&dist, index.k, k),
    })
}

/// Counting sort over distances `0..=max_distance`, stable in row order,
/// keeping only the first `k`.
fn rank_by_distance(dist: &[u32], max_distance: usize, k: usize) -> Vec<Hit> {
    let k = k.min(dist.len());
    let mut counts = vec![0usize; max_distance + 1];
    for &d in dist {
        counts[d as usize] += 1;
    }
    let mut cutoff = 0;
    let mut seen = 0;
    for (d, &c) in counts.iter().enumerate() {
        seen += c;
        cutoff = d;
        if seen >= k {
            break;
        }
    }
    let mut start = vec![0usize; cutoff + 2];
    for d in 0..=cutoff {
        start[d + 1] = start[d] + counts[d];
    }
    let mut slots = vec![
        Hit {
            row: 0,
            distance: 0
        };
        start[cutoff + 1]
    ];
    for (row, &d) in dist.iter().enumerate() {
        let d = d as usize;
        if d <= cutoff {
            slots[start[d]] = Hit {
                row,
                distance: d as u32,
            };
            start[d] += 1;
        }
    }
    slots.truncate(k);
    slots
}

/// One search per row of `queries`.
pub fn search_many(
    index: &PackedCodes,
    queries: &PackedCodes,
    k: usize,
    exec: Exec,
) -> Result<Vec<SearchResult>> {
    ensure!(
        index.k == queries.k,
        ShapeMismatch,
        "database codes have K = {}, queries K = {}",
        index.k,
        queries.k
    );
    exec.try_map_range(queries.n, |q| search_topk(index, queries.row(q), k))
}

/// Distances from every row of `a` to every row of `b`, row-major.
pub fn distance_matrix(a: &PackedCodes, b: &PackedCodes, exec: Exec) -> Result<Vec<u32>> {
    ensure!(
        a.k == b.k,
        ShapeMismatch,
        "code sets have K = {} and {}",
        a.k,
        b.k
    );
    let rows = exec.map_range(a.n, |i| {
        (0..b.n)
            .map(|j| hamming_unchecked(a.row(i), b.row(j)))
            .collect::<Vec<_>>()
    });
    Ok(rows.concat())
}

/// Distance counts for one similarity bucket.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBucket {
    /// Exclusive lower edge; the zero bucket uses `lo = hi = 0`.
    pub lo: f64,
    /// Inclusive upper edge.
    pub hi: f64,
    pub pairs: u64,
    /// `counts[d]` pairs at Hamming distance `d`, for `d` in `0..=K`.
    pub counts: Vec<u64>,
}

impl HistogramBucket {
    pub fn mean(&self) -> Option<f64> {
        if self.pairs == 0 {
            return None;
        }
        let s: f64 = self
            .counts
            .iter()
            .enumerate()
            .map(|(d, &c)| d as f64 * c as f64)
            .sum();
        Some(s / self.pairs as f64)
    }

    /// Share of the bucket's pairs at distance `>= threshold`.
    pub fn fraction_at_least(&self, threshold: u32) -> Option<f64> {
        if self.pairs == 0 {
            return None;
        }
        let c: u64 = self.counts.iter().skip(threshold as usize).sum();
        Some(c as f64 / self.pairs as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceHistogram {
    #[serde(rename = "K")]
    pub k: usize,
    pub buckets: Vec<HistogramBucket>,
}

/// Default bucket edges: `S = 0`, then `(0, .25]`, `(.25, .5]`, `(.5, .75]`, `(.75, 1]`.
pub const DEFAULT_EDGES: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Cross-set Hamming distance distributions conditioned on similarity.
///
/// Bucket 0 holds pairs with `S = 0`; bucket `j ≥ 1` holds
/// `edges[j−2] < S ≤ edges[j−1]` (with an implicit leading edge of 0).
pub fn distance_histogram(
    a: &PackedCodes,
    b: &PackedCodes,
    similarity: &SimilarityMatrix,
    edges: &[f64],
    exec: Exec,
) -> Result<DistanceHistogram> {
    ensure!(
        a.k == b.k,
        ShapeMismatch,
        "code sets have K = {} and {}",
        a.k,
        b.k
    );
    ensure!(
        similarity.rows() == a.n && similarity.cols() == b.n,
        ShapeMismatch,
        "similarity is {}x{}, codes are {}x{}",
        similarity.rows(),
        similarity.cols(),
        a.n,
        b.n
    );
    ensure!(
        edges.windows(2).all(|w| w[0] < w[1]) && edges.iter().all(|&e| e > 0.0 && e <= 1.0),
        InvalidArgument,
        "bucket edges must be strictly increasing in (0, 1]"
    );
    ensure!(
        edges.last() == Some(&1.0),
        InvalidArgument,
        "last bucket edge must be 1"
    );
    let nb = edges.len() + 1;
    let k = a.k;
    let bucket_of = |s: f64| -> usize {
        if s <= 0.0 {
            0
        } else {
            1 + edges
                .iter()
                .position(|&e| s <= e)
                .unwrap_or(edges.len() - 1)
        }
    };
    let per_row = exec.map_range(a.n, |i| {
        let mut counts = vec![0u64; nb * (k + 1)];
        let s = similarity.row_dense(i);
        for j in 0..b.n {
            let d = hamming_unchecked(a.row(i), b.row(j)) as usize;
            counts[bucket_of(s[j]) * (k + 1) + d] += 1;
        }
        counts
    });
    let mut total = vec![0u64; nb * (k + 1)];
    for row in per_row {
        for (t, c) in total.iter_mut().zip(row) {
            *t += c;
        }
    }
    let buckets = (0..nb)
        .map(|bi| {
            let counts = total[bi * (k + 1)..(bi + 1) * (k + 1)].to_vec();
            let (lo, hi) = match bi {
                0 => (0.0, 0.0),
                1 => (0.0, edges[0]),
                _ => (edges[bi - 2], edges[bi - 1]),
            };
            HistogramBucket {
                lo,
                hi,
                pairs: counts.iter().sum(),
                counts,
            }
        })
        .collect();
    Ok(DistanceHistogram { k, buckets })
}

pub fn write_codes(path: impl AsRef<Path>, codes: &PackedCodes) -> Result<()> {
    let k = u32::try_from(codes.k)
        .map_err(|_| Error::InvalidArgument(format!("K = {} too large", codes.k)))?;
    let mut buf = Vec::with_capacity(20 + codes.words.len() * 8);
    buf.extend_from_slice(CODE_MAGIC);
    buf.extend_from_slice(&k.to_le_bytes());
    buf.extend_from_slice(&(codes.n as u64).to_le_bytes());
    for w in &codes.words {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    for id in &codes.ids {
        let len = u32::try_from(id.len())
            .map_err(|_| Error::InvalidArgument("identifier too long".into()))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
    }
    write_file(path.as_ref(), &buf)
}

pub fn read_codes(path: impl AsRef<Path>) -> Result<PackedCodes> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut r = ByteReader::new(&bytes, path);
    r.magic(CODE_MAGIC)?;
    let k = r.u32("K")? as usize;
    if k == 0 {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            detail: "K is 0".into(),
        });
    }
    let n = r.dim("N")?;
    let w = words_per_code(k);
    let count = n.checked_mul(w).ok_or_else(|| Error::DimensionMismatch {
        path: path.to_path_buf(),
        found: format!("N = {n}, K = {k}"),
        expected: "a payload that fits in memory".into(),
    })?;
    let len = r.payload_len(count, 8, "code words")?;
    let payload = r.take(len, "code words")?;
    let words: Vec<u64> = payload
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let tail = k % 64;
    if tail != 0 {
        let mask = !0u64 << tail;
        if let Some(row) = (0..n).find(|&i| words[i * w + w - 1] & mask != 0) {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                detail: format!("code {row} has padding bits set beyond K = {k}"),
            });
        }
    }
    let mut ids = Vec::with_capacity(n.min(r.remaining() / 4));
    for i in 0..n {
        let len = r.u32("identifier length")? as usize;
        let raw = r.take(len, "identifier")?;
        let id = std::str::from_utf8(raw).map_err(|_| Error::Malformed {
            path: path.to_path_buf(),
            detail: format!("identifier {i} is not valid UTF-8"),
        })?;
        ids.push(id.to_string());
    }
    r.finish()?;
    Ok(PackedCodes { k, n, words, ids })
}
