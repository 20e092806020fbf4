//! Retrieval metrics: NDCG@p with graded relevance `r = |l_q ∩ l_i|` and
//! 101-point interpolated precision-recall.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{intersection_count, LabelMatrix};
use crate::error::{ensure, Error, Result};
use crate::exec::Exec;
use crate::index::{search_topk, PackedCodes};

/// Recall grid size for the averaged precision-recall curve.
pub const PR_POINTS: usize = 101;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    /// Image queries against a text database.
    #[serde(rename = "I2T")]
    ImageToText,
    #[serde(rename = "T2I")]
    TextToImage,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::ImageToText => "I2T",
            Task::TextToImage => "T2I",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "i2t" => Ok(Task::ImageToText),
            "t2i" => Ok(Task::TextToImage),
            _ => Err(Error::InvalidArgument(format!(
                "unknown task {s:?}, expected i2t or t2i"
            ))),
        }
    }
}

/// Graded relevance of a database item to a query.
pub fn relevance(query: &[u8], item: &[u8]) -> u32 {
    intersection_count(query, item)
}

/// `Σ_{i=1}^{p} (2^{r_i} − 1) / log_base(1 + i)` over the first `p` entries.
pub fn dcg(relevances: &[u32], p: usize, base: f64) -> f64 {
    let ln_base = base.ln();
    relevances
        .iter()
        .take(p)
        .enumerate()
        .map(|(i, &r)| (2f64.powi(r as i32) - 1.0) * ln_base / ((i + 2) as f64).ln())
        .sum()
}

/// NDCG@p with log base 2.
///
/// `ranked` are the relevances in retrieved order; `all` are the relevances of
/// the whole database, from which the ideal DCG is taken. Returns 0 when the
/// ideal DCG is 0.
pub fn ndcg_at_p(ranked: &[u32], all: &[u32], p: usize) -> Result<f64> {
    ndcg_at_p_with_base(ranked, all, p, 2.0)
}

pub fn ndcg_at_p_with_base(ranked: &[u32], all: &[u32], p: usize, base: f64) -> Result<f64> {
    ensure!(p >= 1, InvalidArgument, "cutoff p must be >= 1");
    ensure!(
        base > 1.0 && base.is_finite(),
        InvalidArgument,
        "log base must be > 1, got {base}"
    );
    let mut ideal = all.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let z = dcg(&ideal, p, base);
    if z == 0.0 {
        return Ok(0.0);
    }
    Ok((dcg(ranked, p, base) / z).min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    /// Queries with no relevant item in their ranking.
    pub skipped: usize,
}

/// Interpolated precision at each grid recall for one ranking, or `None` when
/// the ranking holds no relevant item. Recall is relative to the relevant
/// items in `flags`, so `flags` should cover the whole database.
pub fn query_pr(flags: &[bool]) -> Option<Vec<f64>> {
    let total = flags.iter().filter(|&&f| f).count();
    if total == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut at_rank: Vec<(f64, f64)> = Vec::with_capacity(flags.len());
    for (i, &f) in flags.iter().enumerate() {
        hits += usize::from(f);
        at_rank.push((hits as f64 / total as f64, hits as f64 / (i + 1) as f64));
    }
    // running max of precision from the tail gives the interpolated value
    let mut best_from = vec![0.0f64; at_rank.len() + 1];
    for i in (0..at_rank.len()).rev() {
        best_from[i] = best_from[i + 1].max(at_rank[i].1);
    }
    let mut out = Vec::with_capacity(PR_POINTS);
    let mut pos = 0;
    for g in 0..PR_POINTS {
        let r = g as f64 / (PR_POINTS - 1) as f64;
        while pos < at_rank.len() && at_rank[pos].0 < r - 1e-12 {
            pos += 1;
        }
        out.push(best_from[pos]);
    }
    Some(out)
}

/// Averages [`query_pr`] over queries in order.
pub fn pr_curve(rankings: &[Vec<bool>]) -> PrCurve {
    let per: Vec<Option<Vec<f64>>> = rankings.iter().map(|f| query_pr(f)).collect();
    average_pr(&per)
}

fn average_pr(per: &[Option<Vec<f64>>]) -> PrCurve {
    let mut sum = vec![0.0; PR_POINTS];
    let mut used = 0usize;
    for curve in per.iter().flatten() {
        used += 1;
        for (s, v) in sum.iter_mut().zip(curve) {
            *s += v;
        }
    }
    let points = sum
        .iter()
        .enumerate()
        .map(|(g, &s)| PrPoint {
            recall: g as f64 / (PR_POINTS - 1) as f64,
            precision: if used == 0 { 0.0 } else { s / used as f64 },
        })
        .collect();
    PrCurve {
        points,
        skipped: per.len() - used,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub cutoffs: Vec<usize>,
    pub log_base: f64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cutoffs: vec![50, 100, 500],
            log_base: 2.0,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    /// Mean NDCG over all queries, zero-relevance queries scoring 0.
    pub ndcg_at: BTreeMap<usize, f64>,
    pub pr_curve: Vec<PrPoint>,
    pub num_queries: usize,
    /// Queries left out of the precision-recall average.
    pub skipped: usize,
    pub database_size: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub log_base: f64,
}

impl EvalReport {
    pub fn ndcg(&self, p: usize) -> Option<f64> {
        self.ndcg_at.get(&p).copied()
    }
}

/// Searches every query against the whole database and aggregates NDCG and PR.
pub fn evaluate(
    task: Task,
    queries: &PackedCodes,
    query_labels: &LabelMatrix,
    database: &PackedCodes,
    database_labels: &LabelMatrix,
    config: &EvalConfig,
) -> Result<EvalReport> {
    ensure!(
        queries.k() == database.k(),
        ShapeMismatch,
        "query codes have K = {}, database codes K = {}",
        queries.k(),
        database.k()
    );
    ensure!(
        queries.len() == query_labels.n() && database.len() == database_labels.n(),
        ShapeMismatch,
        "codes/labels disagree: queries {} vs {}, database {} vs {}",
        queries.len(),
        query_labels.n(),
        database.len(),
        database_labels.n()
    );
    ensure!(
        query_labels.c() == database_labels.c(),
        ShapeMismatch,
        "query labels have {} tags, database labels {}",
        query_labels.c(),
        database_labels.c()
    );
    ensure!(!database.is_empty(), InvalidArgument, "database is empty");
    ensure!(
        !config.cutoffs.is_empty(),
        InvalidArgument,
        "no NDCG cutoffs given"
    );
    ensure!(
        config.cutoffs.iter().all(|&p| p >= 1),
        InvalidArgument,
        "cutoffs must be >= 1"
    );

    let per =
        config
            .exec
            .try_map_range(queries.len(), |q| -> Result<(Vec<f64>, Option<Vec<f64>>)> {
                let ql = query_labels.row(q);
                let ranking = search_topk(database, queries.row(q), database.len())?;
                let ranked: Vec<u32> = ranking
                    .hits
                    .iter()
                    .map(|h| relevance(ql, database_labels.row(h.row)))
                    .collect();
                let mut ideal = ranked.clone();
                ideal.sort_unstable_by(|a, b| b.cmp(a));
                let z: Vec<f64> = config
                    .cutoffs
                    .iter()
                    .map(|&p| dcg(&ideal, p, config.log_base))
                    .collect();
                let ndcg = config
                    .cutoffs
                    .iter()
                    .zip(&z)
                    .map(|(&p, &z)| {
                        if z == 0.0 {
                            0.0
                        } else {
                            (dcg(&ranked, p, config.log_base) / z).min(1.0)
                        }
                    })
                    .collect();
                let flags: Vec<bool> = ranked.iter().map(|&r| r > 0).collect();
                Ok((ndcg, query_pr(&flags)))
            })?;

    let mut sums = vec![0.0; config.cutoffs.len()];
    for (ndcg, _) in &per {
        for (s, v) in sums.iter_mut().zip(ndcg) {
            *s += v;
        }
    }
    let nq = queries.len().max(1) as f64;
    let ndcg_at = config
        .cutoffs
        .iter()
        .zip(&sums)
        .map(|(&p, &s)| (p, s / nq))
        .collect();
    let pr: Vec<Option<Vec<f64>>> = per.into_iter().map(|(_, c)| c).collect();
    let curve = average_pr(&pr);
    Ok(EvalReport {
        task,
        ndcg_at,
        pr_curve: curve.points,
        num_queries: queries.len(),
        skipped: curve.skipped,
        database_size: database.len(),
        k: database.k(),
        log_base: config.log_base,
    })
}

pub fn write_pr_csv(path: impl AsRef<Path>, points: &[PrPoint]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("recall,precision\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.recall, p.precision));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Mean NDCG@p of uniformly random rankings: the mean over `trials` of the
/// per-trial query average, and the standard deviation of those averages.
pub fn random_baseline_ndcg<R: Rng + ?Sized>(
    query_labels: &LabelMatrix,
    database_labels: &LabelMatrix,
    p: usize,
    trials: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    ensure!(trials >= 2, InvalidArgument, "need at least 2 trials");
    ensure!(
        database_labels.n() >= 1,
        InvalidArgument,
        "database is empty"
    );
    let n = database_labels.n();
    let take = p.min(n);
    let all: Vec<Vec<u32>> = (0..query_labels.n())
        .map(|q| {
            let ql = query_labels.row(q);
            database_labels.rows().map(|l| relevance(ql, l)).collect()
        })
        .collect();
    let mut means = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut s = 0.0;
        for rel in &all {
            let ranked: Vec<u32> = sample(rng, n, take).iter().map(|i| rel[i]).collect();
            s += ndcg_at_p(&ranked, rel, p)?;
        }
        means.push(s / all.len().max(1) as f64);
    }
    let mean = means.iter().sum::<f64>() / trials as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
    Ok((mean, var.sqrt()))
}
