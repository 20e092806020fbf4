//! Multi-label two-modality datasets and the multilevel similarity they induce.

mod io;
mod synthetic;
mod triplet;

pub use io::{
    read_features, read_labels, write_features, write_labels, FEATURE_MAGIC, LABEL_MAGIC,
};
pub use synthetic::{generate_synthetic, SyntheticConfig};
pub use triplet::{order_triple, sample_triplet_batch, TripleOrder, Triplet};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::exec::Exec;

/// N×C binary tag assignments. Every row carries at least one tag.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMatrix {
    n: usize,
    c: usize,
    entries: Vec<u8>,
    cardinality: Vec<u32>,
    tag_names: Option<Vec<String>>,
}

impl LabelMatrix {
    pub fn new(n: usize, c: usize, entries: Vec<u8>) -> Result<Self> {
        ensure!(
            c >= 1,
            InvalidArgument,
            "label matrix needs at least one tag column"
        );
        ensure!(
            entries.len() == n * c,
            ShapeMismatch,
            "expected {} entries for {n}x{c} labels, got {}",
            n * c,
            entries.len()
        );
        let mut cardinality = Vec::with_capacity(n);
        for (row, chunk) in entries.chunks_exact(c).enumerate() {
            let mut count = 0u32;
            for (col, &value) in chunk.iter().enumerate() {
                match value {
                    0 => {}
                    1 => count += 1,
                    _ => return Err(Error::InvalidLabelValue { row, col, value }),
                }
            }
            if count == 0 {
                return Err(Error::EmptyLabelRow { row });
            }
            cardinality.push(count);
        }
        Ok(Self {
            n,
            c,
            entries,
            cardinality,
            tag_names: None,
        })
    }

    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        ensure!(!rows.is_empty(), InvalidArgument, "no label rows given");
        let c = rows[0].as_ref().len();
        let mut entries = Vec::with_capacity(rows.len() * c);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            ensure!(
                r.len() == c,
                ShapeMismatch,
                "row {i} has {} tags, expected {c}",
                r.len()
            );
            entries.extend_from_slice(r);
        }
        Self::new(rows.len(), c, entries)
    }

    pub fn with_tag_names(mut self, names: Vec<String>) -> Result<Self> {
        ensure!(
            names.len() == self.c,
            ShapeMismatch,
            "{} tag names for {} columns",
            names.len(),
            self.c
        );
        self.tag_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.entries[i * self.c..(i + 1) * self.c]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.entries.chunks_exact(self.c)
    }

    /// Number of tags on row `i`, `|l_i|`.
    pub fn cardinality(&self, i: usize) -> u32 {
        self.cardinality[i]
    }

    pub fn entries(&self) -> &[u8] {
        &self.entries
    }

    pub fn tag_names(&self) -> Option<&[String]> {
        self.tag_names.as_deref()
    }

    pub fn select(&self, indices: &[usize]) -> LabelMatrix {
        let mut entries = Vec::with_capacity(indices.len() * self.c);
        let mut cardinality = Vec::with_capacity(indices.len());
        for &i in indices {
            entries.extend_from_slice(self.row(i));
            cardinality.push(self.cardinality[i]);
        }
        LabelMatrix {
            n: indices.len(),
            c: self.c,
            entries,
            cardinality,
            tag_names: self.tag_names.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub fn other(self) -> Modality {
        match self {
            Modality::Image => Modality::Text,
            Modality::Text => Modality::Image,
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Image => "image",
            Modality::Text => "text",
        })
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Modality::Image),
            "text" => Ok(Modality::Text),
            other => Err(Error::InvalidArgument(format!(
                "unknown modality {other:?}, expected image or text"
            ))),
        }
    }
}

/// N×D precomputed features of one modality, stored as `f32` like the file format.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
    modality: Modality,
}

impl FeatureMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f32>, modality: Modality) -> Result<Self> {
        ensure!(
            d >= 1,
            InvalidArgument,
            "feature dimension must be at least 1"
        );
        ensure!(
            data.len() == n * d,
            ShapeMismatch,
            "expected {} values for {n}x{d} features, got {}",
            n * d,
            data.len()
        );
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / d,
                col: pos % d,
            });
        }
        Ok(Self {
            n,
            d,
            data,
            modality,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            n: indices.len(),
            d: self.d,
            data,
            modality: self.modality,
        }
    }
}

/// Aligned image features, text features and labels (row `i` of each is one pair).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub image: FeatureMatrix,
    pub text: FeatureMatrix,
    pub labels: LabelMatrix,
}

impl Dataset {
    pub fn new(image: FeatureMatrix, text: FeatureMatrix, labels: LabelMatrix) -> Result<Self> {
        ensure!(
            image.modality == Modality::Image && text.modality == Modality::Text,
            InvalidArgument,
            "dataset expects image features then text features"
        );
        ensure!(
            image.n == labels.n && text.n == labels.n,
            ShapeMismatch,
            "row counts differ: image {}, text {}, labels {}",
            image.n,
            text.n,
            labels.n
        );
        Ok(Self {
            image,
            text,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.n
    }

    pub fn is_empty(&self) -> bool {
        self.labels.n == 0
    }

    pub fn features(&self, modality: Modality) -> &FeatureMatrix {
        match modality {
            Modality::Image => &self.image,
            Modality::Text => &self.text,
        }
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            image: self.image.select(indices),
            text: self.text.select(indices),
            labels: self.labels.select(indices),
        }
    }

    /// First `n_train` rows and the remainder, in order.
    pub fn split(&self, n_train: usize) -> Result<(Dataset, Dataset)> {
        ensure!(
            n_train <= self.len(),
            InvalidArgument,
            "cannot take {n_train} training rows from {}",
            self.len()
        );
        let train: Vec<usize> = (0..n_train).collect();
        let rest: Vec<usize> = (n_train..self.len()).collect();
        Ok((self.select(&train), self.select(&rest)))
    }
}

pub(crate) fn intersection_count(a: &[u8], b: &[u8]) -> u32 {
    a.iter().zip(b).map(|(&x, &y)| u32::from(x & y)).sum()
}

pub(crate) fn tag_count(a: &[u8]) -> u32 {
    a.iter().map(|&x| u32::from(x)).sum()
}

/// `|l1 ∩ l2| / max(|l1|, |l2|)`.
pub fn similarity(l1: &[u8], l2: &[u8]) -> Result<f64> {
    ensure!(
        l1.len() == l2.len(),
        ShapeMismatch,
        "label rows of length {} and {}",
        l1.len(),
        l2.len()
    );
    let (n1, n2) = (tag_count(l1), tag_count(l2));
    ensure!(
        n1 > 0 && n2 > 0,
        InvalidArgument,
        "similarity of an empty label row"
    );
    Ok(f64::from(intersection_count(l1, l2)) / f64::from(n1.max(n2)))
}

/// Sparse query×database similarity in compressed-row form; absent entries are 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row_sparse(i);
        match cols.binary_search(&(j as u32)) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    /// Column indices and values of the non-zero entries of row `i`.
    pub fn row_sparse(&self, i: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn row_dense(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        let (cols, vals) = self.row_sparse(i);
        for (&c, &v) in cols.iter().zip(vals) {
            out[c as usize] = v;
        }
        out
    }
}

/// Elementwise similarity between every row of `labels_a` and every row of `labels_b`.
pub fn build_similarity(
    labels_a: &LabelMatrix,
    labels_b: &LabelMatrix,
) -> Result<SimilarityMatrix> {
    build_similarity_with(labels_a, labels_b, Exec::default())
}

pub fn build_similarity_with(
    labels_a: &LabelMatrix,
    labels_b: &LabelMatrix,
    exec: Exec,
) -> Result<SimilarityMatrix> {
    ensure!(
        labels_a.c == labels_b.c,
        ShapeMismatch,
        "tag counts differ: {} vs {}",
        labels_a.c,
        labels_b.c
    );
    ensure!(
        labels_b.n <= u32::MAX as usize,
        InvalidArgument,
        "database too large"
    );
    let rows = exec.map_range(labels_a.n, |i| {
        let li = labels_a.row(i);
        let ci = labels_a.cardinality(i);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for j in 0..labels_b.n {
            let inter = intersection_count(li, labels_b.row(j));
            if inter > 0 {
                cols.push(j as u32);
                vals.push(f64::from(inter) / f64::from(ci.max(labels_b.cardinality(j))));
            }
        }
        (cols, vals)
    });
    let mut row_ptr = Vec::with_capacity(labels_a.n + 1);
    row_ptr.push(0);
    let nnz = rows.iter().map(|(c, _)| c.len()).sum();
    let mut col_idx = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    for (c, v) in rows {
        col_idx.extend(c);
        values.extend(v);
        row_ptr.push(col_idx.len());
    }
    Ok(SimilarityMatrix {
        rows: labels_a.n,
        cols: labels_b.n,
        row_ptr,
        col_idx,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn similarity_examples() {
        // tags: apple, banana, orange
        let a = [1, 1, 0];
        let b = [1, 1, 1];
        assert!((similarity(&a, &b).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(similarity(&b, &b).unwrap(), 1.0);
        assert_eq!(similarity(&[1, 0, 0], &[0, 1, 1]).unwrap(), 0.0);
        assert!(similarity(&[0, 0, 0], &[1, 0, 0]).is_err());
    }

    #[test]
    fn label_matrix_rejects_empty_row_by_index() {
        let err = LabelMatrix::from_rows(&[vec![1, 0], vec![0, 0]]).unwrap_err();
        assert!(matches!(err, Error::EmptyLabelRow { row: 1 }));
        let err = LabelMatrix::from_rows(&[vec![1, 2]]).unwrap_err();
        assert!(matches!(
            err,
            Error::InvalidLabelValue {
                row: 0,
                col: 1,
                value: 2
            }
        ));
    }

    #[test]
    fn feature_matrix_rejects_nan() {
        let err =
            FeatureMatrix::new(2, 2, vec![0.0, 1.0, f32::NAN, 0.0], Modality::Text).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 1, col: 0 }));
    }

    #[test]
    fn self_similarity_has_unit_diagonal() {
        let labels =
            LabelMatrix::from_rows(&[vec![1, 0, 0], vec![1, 1, 0], vec![0, 1, 1], vec![1, 1, 1]])
                .unwrap();
        let s = build_similarity(&labels, &labels).unwrap();
        for i in 0..4 {
            assert_eq!(s.get(i, i), 1.0);
            for j in 0..4 {
                assert_eq!(s.get(i, j), s.get(j, i));
            }
        }
    }

    #[test]
    fn one_hot_labels_give_equality_matrix() {
        let rows = [vec![1, 0, 0], vec![0, 1, 0], vec![1, 0, 0], vec![0, 0, 1]];
        let labels = LabelMatrix::from_rows(&rows).unwrap();
        let s = build_similarity(&labels, &labels).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if rows[i] == rows[j] { 1.0 } else { 0.0 };
                assert_eq!(s.get(i, j), expect);
            }
        }
    }

    #[test]
    fn hand_case_matches_pairwise_enumeration() {
        // tag counts 1, 2, 3
        let rows = [vec![1, 0, 0, 0], vec![1, 1, 0, 0], vec![0, 1, 1, 1]];
        let labels = LabelMatrix::from_rows(&rows).unwrap();
        let s = build_similarity(&labels, &labels).unwrap();
        let expected = [
            [1.0, 0.5, 0.0],
            [0.5, 1.0, 1.0 / 3.0],
            [0.0, 1.0 / 3.0, 1.0],
        ];
        for i in 0..3 {
            assert_eq!(s.row_dense(i), expected[i].to_vec());
        }
        assert_eq!(s.nnz(), 7);
    }

    #[test]
    fn build_rejects_tag_count_mismatch() {
        let a = LabelMatrix::from_rows(&[vec![1, 0]]).unwrap();
        let b = LabelMatrix::from_rows(&[vec![1, 0, 1]]).unwrap();
        assert!(matches!(
            build_similarity(&a, &b),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn sequential_and_parallel_builds_agree() {
        let rows: Vec<Vec<u8>> = (0..40u32)
            .map(|i| (0..6).map(|b| ((i + 1) >> b & 1) as u8).collect())
            .collect();
        let labels = LabelMatrix::from_rows(&rows).unwrap();
        let a = build_similarity_with(&labels, &labels, Exec::Sequential).unwrap();
        let b = build_similarity_with(&labels, &labels, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
