use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{intersection_count, tag_count, LabelMatrix, SimilarityMatrix};
use crate::error::{ensure, Result};

/// A reordered training triplet: `ref` carries the most tags and `pos` is the
/// member more similar to it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub ref_index: usize,
    pub pos_index: usize,
    pub neg_index: usize,
    /// `δ·(|l_ref∩l_pos| − |l_ref∩l_neg|)/|l_ref|`, always in `[0, δ]`.
    pub margin_alpha: f64,
    pub y_ref_pos: bool,
    pub y_ref_neg: bool,
}

/// Slot assignment produced by [`order_triple`]; fields index into the input array.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripleOrder {
    pub reference: usize,
    pub positive: usize,
    pub negative: usize,
    pub alpha: f64,
    pub y_pos: bool,
    pub y_neg: bool,
}

/// Applies the reference-reordering rule to three label rows.
///
/// The reference is the row with the most tags, the positive the remaining row
/// with the larger intersection with the reference. Ties go to the lower slot.
/// The reference row must be non-empty; the others may be empty (their
/// similarity to the reference is then zero).
pub fn order_triple(labels: [&[u8]; 3], delta: f64) -> Result<TripleOrder> {
    let counts = labels.map(tag_count);
    let mut reference = 0;
    for slot in 1..3 {
        if counts[slot] > counts[reference] {
            reference = slot;
        }
    }
    ensure!(
        counts[reference] > 0,
        InvalidArgument,
        "triplet reference label is empty"
    );
    let (a, b) = match reference {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let inter_a = intersection_count(labels[reference], labels[a]);
    let inter_b = intersection_count(labels[reference], labels[b]);
    // the reference has the largest cardinality, so S_ref,x = inter / |l_ref|
    let (positive, negative, inter_pos, inter_neg) = if inter_b > inter_a {
        (b, a, inter_b, inter_a)
    } else {
        (a, b, inter_a, inter_b)
    };
    Ok(TripleOrder {
        reference,
        positive,
        negative,
        alpha: delta * f64::from(inter_pos - inter_neg) / f64::from(counts[reference]),
        y_pos: inter_pos > 0,
        y_neg: inter_neg > 0,
    })
}

/// Draws `batch` triplets of distinct sample indices, uniformly over index
/// triples, and reorders each one.
pub fn sample_triplet_batch<R: Rng + ?Sized>(
    labels: &LabelMatrix,
    similarity: &SimilarityMatrix,
    batch: usize,
    delta: u32,
    rng: &mut R,
) -> Result<Vec<Triplet>> {
    let n = labels.n();
    ensure!(
        n >= 3,
        InvalidArgument,
        "triplet sampling needs at least 3 samples, got {n}"
    );
    ensure!(
        similarity.rows() == n && similarity.cols() == n,
        ShapeMismatch,
        "similarity is {}x{}, labels have {n} rows",
        similarity.rows(),
        similarity.cols()
    );
    let delta = f64::from(delta);
    let mut out = Vec::with_capacity(batch);
    for _ in 0..batch {
        let mut idx = sample(rng, n, 3).into_vec();
        idx.sort_unstable();
        let mut reference = 0;
        for slot in 1..3 {
            if labels.cardinality(idx[slot]) > labels.cardinality(idx[reference]) {
                reference = slot;
            }
        }
        let (a, b) = match reference {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let r = idx[reference];
        let (pos, neg) = if similarity.get(r, idx[b]) > similarity.get(r, idx[a]) {
            (idx[b], idx[a])
        } else {
            (idx[a], idx[b])
        };
        let lr = labels.row(r);
        let inter_pos = intersection_count(lr, labels.row(pos));
        let inter_neg = intersection_count(lr, labels.row(neg));
        out.push(Triplet {
            ref_index: r,
            pos_index: pos,
            neg_index: neg,
            margin_alpha: delta * (f64::from(inter_pos) - f64::from(inter_neg))
                / f64::from(labels.cardinality(r)),
            y_ref_pos: similarity.get(r, pos) > 0.0,
            y_ref_neg: similarity.get(r, neg) > 0.0,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::build_similarity;

    fn labels(rows: &[&[u8]]) -> LabelMatrix {
        LabelMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn reference_is_sample_with_most_tags() {
        // tag counts (3, 1, 2)
        let l = labels(&[&[1, 1, 1, 0], &[0, 0, 0, 1], &[1, 1, 0, 0]]);
        let s = build_similarity(&l, &l).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = sample_triplet_batch(&l, &s, 1, 4, &mut rng).unwrap()[0];
        assert_eq!(t.ref_index, 0);
        assert_eq!(t.pos_index, 2);
        assert_eq!(t.neg_index, 1);
        assert!(t.y_ref_pos && !t.y_ref_neg);
        // 4 * (2 - 0) / 3
        assert!((t.margin_alpha - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn margin_formula() {
        // |l_ref| = 2, intersections (2, 1), delta 4 -> alpha 2
        let order = order_triple([&[1, 1, 0], &[1, 1, 0], &[0, 1, 1]], 4.0).unwrap();
        assert_eq!(order.reference, 0);
        assert_eq!(order.positive, 1);
        assert_eq!(order.negative, 2);
        assert_eq!(order.alpha, 2.0);
    }

    #[test]
    fn ties_break_by_lowest_slot() {
        let order = order_triple([&[1, 0, 0], &[0, 1, 0], &[0, 0, 1]], 3.0).unwrap();
        assert_eq!((order.reference, order.positive, order.negative), (0, 1, 2));
        assert_eq!(order.alpha, 0.0);
        assert!(!order.y_pos && !order.y_neg);
    }

    #[test]
    fn empty_member_is_allowed_but_not_as_reference() {
        let order = order_triple([&[0, 0], &[1, 0], &[1, 1]], 2.0).unwrap();
        assert_eq!(order.reference, 2);
        assert_eq!(order.positive, 1);
        assert!(!order.y_neg);
        assert!(order_triple([&[0, 0], &[0, 0], &[0, 0]], 2.0).is_err());
    }

    #[test]
    fn fixed_seed_replays_batch() {
        let rows: Vec<Vec<u8>> = (1..=10u8)
            .map(|i| vec![i & 1, (i >> 1) & 1, (i >> 2) & 1, (i >> 3) & 1])
            .collect();
        let l = LabelMatrix::from_rows(&rows).unwrap();
        let s = build_similarity(&l, &l).unwrap();
        let a = sample_triplet_batch(&l, &s, 32, 3, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = sample_triplet_batch(&l, &s, 32, 3, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        for t in &a {
            assert!(
                t.ref_index != t.pos_index
                    && t.pos_index != t.neg_index
                    && t.ref_index != t.neg_index
            );
            assert!(l.cardinality(t.ref_index) >= l.cardinality(t.pos_index));
            assert!(l.cardinality(t.ref_index) >= l.cardinality(t.neg_index));
            assert!((0.0..=3.0).contains(&t.margin_alpha));
        }
    }

    #[test]
    fn too_few_samples_rejected() {
        let l = labels(&[&[1], &[1]]);
        let s = build_similarity(&l, &l).unwrap();
        assert!(sample_triplet_batch(&l, &s, 1, 1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
