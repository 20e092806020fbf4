//! Training losses and their subgradients.
//!
//! Distances between relaxed codes are `‖z₁ − z₂‖² / 4`, which equals the
//! Hamming distance on exact ±1 codes, so δ and the adaptive margin keep their
//! bit-count meaning. Hinges use the inactive side (gradient 0) at the kink.
//! Logs on the loss side are natural logs.

use serde::{Deserialize, Serialize};

use crate::data::order_triple;
use crate::error::{ensure, Error, Result};
use crate::exec::Exec;
use crate::model::TripletGrads;

/// Predictions are clamped to `[ε, 1 − ε]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Which cross-modal triplet groupings enter the loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterModal {
    /// Text anchors against image codes and image anchors against text codes.
    #[default]
    Both,
    /// Only text anchors against image codes.
    TextAnchored,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub w_p: f64,
    pub delta: f64,
    #[serde(default)]
    pub inter_modal: InterModal,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("w_p", self.w_p),
        ] {
            ensure!(
                v.is_finite() && v >= 0.0,
                InvalidArgument,
                "{name} must be finite and >= 0, got {v}"
            );
        }
        ensure!(
            self.delta.is_finite() && self.delta >= 1.0,
            InvalidArgument,
            "delta must be resolved to a value >= 1, got {}",
            self.delta
        );
        Ok(())
    }
}

/// Loss components summed over a set of triplets, plus the weights used.
///
/// Components are unweighted; `total` applies the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub triplet_intra: f64,
    pub triplet_inter: f64,
    pub classification_real: f64,
    pub classification_pseudo: f64,
    pub quantization: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub w_p: f64,
    pub delta: f64,
}

impl LossBreakdown {
    fn empty(cfg: &LossConfig) -> Self {
        Self {
            lambda1: cfg.lambda1,
            lambda2: cfg.lambda2,
            lambda3: cfg.lambda3,
            lambda4: cfg.lambda4,
            w_p: cfg.w_p,
            delta: cfg.delta,
            ..Default::default()
        }
    }

    /// Weighted sum of the components.
    pub fn weighted_total(&self) -> f64 {
        self.classification_real
            + self.lambda3 * self.classification_pseudo
            + self.lambda1 * self.triplet_intra
            + self.lambda2 * self.triplet_inter
            + self.lambda4 * self.quantization
    }

    pub fn add(&mut self, other: &LossBreakdown) {
        self.triplet_intra += other.triplet_intra;
        self.triplet_inter += other.triplet_inter;
        self.classification_real += other.classification_real;
        self.classification_pseudo += other.classification_pseudo;
        self.quantization += other.quantization;
        self.total += other.total;
    }
}

/// `‖z₁ − z₂‖² / 4`.
pub fn relaxed_distance(z1: &[f64], z2: &[f64]) -> Result<f64> {
    ensure!(
        z1.len() == z2.len(),
        ShapeMismatch,
        "codes of length {} and {}",
        z1.len(),
        z2.len()
    );
    Ok(sq_dist(z1, z2) / 4.0)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn hinge(x: f64) -> f64 {
    x.max(0.0)
}

/// Margin-adaptive triplet term:
/// `y_ij·y_ik·[d_ij − d_ik + α]₊ + (1−y_ij)·[δ − d_ij]₊ + (1−y_ik)·[δ − d_ik]₊`.
pub fn triplet_term(d_ij: f64, d_ik: f64, y_ij: bool, y_ik: bool, alpha: f64, delta: f64) -> f64 {
    let mut loss = 0.0;
    if y_ij && y_ik {
        loss += hinge(d_ij - d_ik + alpha);
    }
    if !y_ij {
        loss += hinge(delta - d_ij);
    }
    if !y_ik {
        loss += hinge(delta - d_ik);
    }
    loss
}

/// Subgradient of [`triplet_term`] with respect to `(d_ij, d_ik)`.
pub fn triplet_term_grad(
    d_ij: f64,
    d_ik: f64,
    y_ij: bool,
    y_ik: bool,
    alpha: f64,
    delta: f64,
) -> (f64, f64) {
    let (mut g_ij, mut g_ik) = (0.0, 0.0);
    if y_ij && y_ik && d_ij - d_ik + alpha > 0.0 {
        g_ij += 1.0;
        g_ik -= 1.0;
    }
    if !y_ij && delta - d_ij > 0.0 {
        g_ij -= 1.0;
    }
    if !y_ik && delta - d_ik > 0.0 {
        g_ik -= 1.0;
    }
    (g_ij, g_ik)
}

/// Weighted cross-entropy `−Σ_j (w_p·l_j·ln l̂_j + (1−l_j)·ln(1−l̂_j))`.
pub fn classification_loss(labels: &[u8], predicted: &[f64], w_p: f64) -> Result<f64> {
    ensure!(
        labels.len() == predicted.len(),
        ShapeMismatch,
        "{} labels vs {} predictions",
        labels.len(),
        predicted.len()
    );
    Ok(labels
        .iter()
        .zip(predicted)
        .map(|(&l, &p)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if l == 1 {
                -w_p * p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum())
}

fn classification_grad(labels: &[u8], predicted: &[f64], w_p: f64, scale: f64, out: &mut [f64]) {
    for ((o, &l), &p) in out.iter_mut().zip(labels).zip(predicted) {
        if p <= PROB_CLAMP || p >= 1.0 - PROB_CLAMP {
            continue;
        }
        *o += scale * if l == 1 { -w_p / p } else { 1.0 / (1.0 - p) };
    }
}

/// `Σ ‖z − b‖²` over a flattened batch; `b` must be exactly ±1.
pub fn quantization_loss(z: &[f64], b: &[f64]) -> Result<f64> {
    ensure!(
        z.len() == b.len(),
        ShapeMismatch,
        "{} relaxed vs {} binary values",
        z.len(),
        b.len()
    );
    if let Some(index) = b.iter().position(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::NonBinaryCode {
            index,
            value: b[index],
        });
    }
    Ok(sq_dist(z, b))
}

/// Everything the loss needs for one triplet.
///
/// `codes[m][j]` / `probs[m][j]` use modality 0 = image, 1 = text, and code
/// order `[z1, z2, z3, z_union, z_intersect]`. `labels` follows the same code
/// order (the pseudo-labels `l1 ∪ l2`, `l1 ∩ l2` last). `targets` are the
/// unified binary codes of the three real samples.
#[derive(Clone, Copy, Debug)]
pub struct TripletInputs<'a> {
    pub codes: [[&'a [f64]; 5]; 2],
    pub probs: [[&'a [f64]; 5]; 2],
    pub labels: [&'a [u8]; 5],
    pub targets: [&'a [f64]; 3],
}

const INTERSECT: usize = 4;

/// A code addressed as `(modality, code index)`.
type Member = (usize, usize);

/// Intra-modal groupings `{1,2,i}` for `i = 3..5` in modality `m`.
fn intra_groups(m: usize) -> [[Member; 3]; 3] {
    [
        [(m, 0), (m, 1), (m, 2)],
        [(m, 0), (m, 1), (m, 3)],
        [(m, 0), (m, 1), (m, INTERSECT)],
    ]
}

/// Inter-modal groupings: each anchor of modality `1 − m` against the other two
/// real codes of modality `m`.
fn inter_groups(m: usize) -> [[Member; 3]; 3] {
    let o = 1 - m;
    [
        [(o, 0), (m, 1), (m, 2)],
        [(o, 1), (m, 0), (m, 2)],
        [(o, 2), (m, 0), (m, 1)],
    ]
}

/// Modalities whose loss contributes inter-modal groupings.
fn inter_modalities(mode: InterModal) -> &'static [usize] {
    match mode {
        InterModal::Both => &[0, 1],
        InterModal::TextAnchored => &[0],
    }
}

fn has_tags(l: &[u8]) -> bool {
    l.contains(&1)
}

/// Reorders one grouping, evaluates the triplet term and, when `acc` is given,
/// accumulates `weight`-scaled code gradients.
fn grouping_loss(
    group: [Member; 3],
    input: &TripletInputs<'_>,
    delta: f64,
    weight: f64,
    acc: Option<&mut [[Vec<f64>; 5]; 2]>,
) -> Result<f64> {
    let order = order_triple(group.map(|(_, j)| input.labels[j]), delta)?;
    let code = |slot: usize| {
        let (m, j) = group[slot];
        input.codes[m][j]
    };
    let (r, p, n) = (
        code(order.reference),
        code(order.positive),
        code(order.negative),
    );
    let d_rp = relaxed_distance(r, p)?;
    let d_rn = relaxed_distance(r, n)?;
    let loss = triplet_term(d_rp, d_rn, order.y_pos, order.y_neg, order.alpha, delta);
    if let Some(acc) = acc {
        let (g_rp, g_rn) =
            triplet_term_grad(d_rp, d_rn, order.y_pos, order.y_neg, order.alpha, delta);
        let (mr, jr) = group[order.reference];
        let (mp, jp) = group[order.positive];
        let (mn, jn) = group[order.negative];
        // ∂d(a, b)/∂a = (a − b) / 2
        for i in 0..r.len() {
            let gp = weight * g_rp * (r[i] - p[i]) / 2.0;
            let gn = weight * g_rn * (r[i] - n[i]) / 2.0;
            acc[mr][jr][i] += gp + gn;
            acc[mp][jp][i] -= gp;
            acc[mn][jn][i] -= gn;
        }
    }
    Ok(loss)
}

fn skip_group(group: &[Member; 3], input: &TripletInputs<'_>) -> bool {
    // an empty intersection pseudo-label carries no reference semantics
    group.iter().any(|&(_, j)| j == INTERSECT) && !has_tags(input.labels[INTERSECT])
}

/// Unweighted intra- and inter-modal triplet sums for one triplet, with the
/// `λ1`/`λ2`-weighted gradient written into `acc` when given.
pub fn combined_triplet_loss(
    input: &TripletInputs<'_>,
    cfg: &LossConfig,
    mut acc: Option<&mut [[Vec<f64>; 5]; 2]>,
) -> Result<(f64, f64)> {
    let (mut intra, mut inter) = (0.0, 0.0);
    for m in 0..2 {
        for group in intra_groups(m) {
            if skip_group(&group, input) {
                continue;
            }
            intra += grouping_loss(group, input, cfg.delta, cfg.lambda1, acc.as_deref_mut())?;
        }
    }
    for &m in inter_modalities(cfg.inter_modal) {
        for group in inter_groups(m) {
            inter += grouping_loss(group, input, cfg.delta, cfg.lambda2, acc.as_deref_mut())?;
        }
    }
    Ok((intra, inter))
}

/// All loss terms of one triplet and the gradient with respect to every code
/// and prediction.
pub fn triplet_objective(
    input: &TripletInputs<'_>,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, TripletGrads)> {
    cfg.validate()?;
    let k = input.codes[0][0].len();
    let c = input.labels[0].len();
    ensure!(
        input.labels.iter().all(|l| l.len() == c),
        ShapeMismatch,
        "label rows of a triplet differ in length"
    );
    ensure!(
        (0..3).all(|j| has_tags(input.labels[j])),
        InvalidArgument,
        "real triplet members need non-empty labels"
    );
    let mut grads = TripletGrads::zeros(k, c);
    let mut out = LossBreakdown::empty(cfg);

    for m in 0..2 {
        for j in 0..5 {
            let probs = input.probs[m][j];
            let loss = classification_loss(input.labels[j], probs, cfg.w_p)?;
            let scale = if j < 3 {
                out.classification_real += loss;
                1.0
            } else {
                out.classification_pseudo += loss;
                cfg.lambda3
            };
            classification_grad(
                input.labels[j],
                probs,
                cfg.w_p,
                scale,
                &mut grads.probs[m][j],
            );
        }
        for j in 0..3 {
            let z = input.codes[m][j];
            out.quantization += quantization_loss(z, input.targets[j])?;
            for ((g, zi), bi) in grads.codes[m][j].iter_mut().zip(z).zip(input.targets[j]) {
                *g += cfg.lambda4 * 2.0 * (zi - bi);
            }
        }
    }
    let (intra, inter) = combined_triplet_loss(input, cfg, Some(&mut grads.codes))?;
    out.triplet_intra = intra;
    out.triplet_inter = inter;
    out.total = out.weighted_total();
    Ok((out, grads))
}

/// Sums [`triplet_objective`] over a batch in index order.
pub fn total_loss(
    inputs: &[TripletInputs<'_>],
    cfg: &LossConfig,
    exec: Exec,
) -> Result<(LossBreakdown, Vec<TripletGrads>)> {
    cfg.validate()?;
    let per = exec.try_map_range(inputs.len(), |i| triplet_objective(&inputs[i], cfg))?;
    let mut total = LossBreakdown::empty(cfg);
    let mut grads = Vec::with_capacity(per.len());
    for (b, g) in per {
        total.add(&b);
        grads.push(g);
    }
    Ok((total, grads))
}

/// Arguments of every active-or-not hinge in one triplet's loss. Points where
/// any of these is near zero are non-differentiable.
pub fn hinge_arguments(input: &TripletInputs<'_>, cfg: &LossConfig) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let mut groups: Vec<[Member; 3]> = Vec::new();
    for m in 0..2 {
        groups.extend(
            intra_groups(m)
                .into_iter()
                .filter(|g| !skip_group(g, input)),
        );
    }
    for &m in inter_modalities(cfg.inter_modal) {
        groups.extend(inter_groups(m));
    }
    for group in groups {
        let order = order_triple(group.map(|(_, j)| input.labels[j]), cfg.delta)?;
        let code = |slot: usize| {
            let (m, j) = group[slot];
            input.codes[m][j]
        };
        let d_rp = relaxed_distance(code(order.reference), code(order.positive))?;
        let d_rn = relaxed_distance(code(order.reference), code(order.negative))?;
        if order.y_pos && order.y_neg {
            out.push(d_rp - d_rn + order.alpha);
        }
        if !order.y_pos {
            out.push(cfg.delta - d_rp);
        }
        if !order.y_neg {
            out.push(cfg.delta - d_rn);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::similarity;

    fn cfg() -> LossConfig {
        LossConfig {
            lambda1: 0.3,
            lambda2: 0.7,
            lambda3: 0.2,
            lambda4: 0.1,
            w_p: 2.0,
            delta: 3.0,
            inter_modal: InterModal::Both,
        }
    }

    #[test]
    fn relaxed_distance_examples() {
        let z = [0.3, -0.2, 0.9];
        assert_eq!(relaxed_distance(&z, &z).unwrap(), 0.0);
        assert_eq!(
            relaxed_distance(&[1.0, 1.0, -1.0, 1.0], &[-1.0, 1.0, 1.0, 1.0]).unwrap(),
            2.0
        );
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut brute = 0.0;
        for i in 0..16 {
            brute += (a[i] - b[i]).powi(2);
        }
        assert!((relaxed_distance(&a, &b).unwrap() - brute / 4.0).abs() < 1e-12);
        assert!(relaxed_distance(&a, &b[..3]).is_err());
    }

    #[test]
    fn triplet_term_examples() {
        assert_eq!(triplet_term(1.0, 2.0, true, true, 2.0, 4.0), 1.0);
        for d_ij in [0.0, 3.0, 17.0] {
            assert_eq!(triplet_term(d_ij, 1.0, true, false, 0.5, 4.0), 3.0);
        }
        assert_eq!(triplet_term(4.0, 5.0, false, false, 0.0, 4.0), 0.0);
    }

    #[test]
    fn classification_examples() {
        assert!(classification_loss(&[1, 0], &[1.0, 0.0], 20.0).unwrap() < 1e-6 * 21.0);
        assert!((classification_loss(&[1], &[0.5], 2.0).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
        for w in [1.0, 2.0, 30.0] {
            assert!((classification_loss(&[0], &[0.5], w).unwrap() - 2f64.ln()).abs() < 1e-12);
        }
        assert!(classification_loss(&[1, 0], &[0.5], 1.0).is_err());
    }

    #[test]
    fn unit_weight_is_binary_cross_entropy() {
        let l = [1, 0, 1, 0];
        let p = [0.8, 0.3, 0.1, 0.95];
        let bce: f64 = l
            .iter()
            .zip(&p)
            .map(|(&y, &q): (&u8, &f64)| {
                let y = f64::from(y);
                -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
            })
            .sum();
        assert!((classification_loss(&l, &p, 1.0).unwrap() - bce).abs() < 1e-12);
    }

    #[test]
    fn quantization_examples() {
        let b = [1.0, -1.0, 1.0];
        assert_eq!(quantization_loss(&b, &b).unwrap(), 0.0);
        assert_eq!(quantization_loss(&[0.0; 16], &[1.0; 16]).unwrap(), 16.0);
        assert!(matches!(
            quantization_loss(&[0.0, 0.0], &[1.0, 0.5]),
            Err(Error::NonBinaryCode { index: 1, .. })
        ));
        let z = [0.3, -0.25, 0.9, -0.6];
        let b = [1.0, -1.0, -1.0, 1.0];
        let brute: f64 = (0..4).map(|i| (z[i] - b[i]) * (z[i] - b[i])).sum();
        assert!((quantization_loss(&z, &b).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn margin_scales_with_delta() {
        let l = [&[1u8, 1, 0][..], &[1, 1, 0], &[1, 0, 1]];
        let a = order_triple(l, 4.0).unwrap().alpha;
        let b = order_triple(l, 8.0).unwrap().alpha;
        assert_eq!(b, 2.0 * a);
    }

    struct Owned {
        codes: [[Vec<f64>; 5]; 2],
        probs: [[Vec<f64>; 5]; 2],
        labels: [Vec<u8>; 5],
        targets: [Vec<f64>; 3],
    }

    impl Owned {
        fn view(&self) -> TripletInputs<'_> {
            TripletInputs {
                codes: [0, 1].map(|m| std::array::from_fn(|j| self.codes[m][j].as_slice())),
                probs: [0, 1].map(|m| std::array::from_fn(|j| self.probs[m][j].as_slice())),
                labels: std::array::from_fn(|j| self.labels[j].as_slice()),
                targets: std::array::from_fn(|j| self.targets[j].as_slice()),
            }
        }
    }

    fn random_owned(rng: &mut ChaCha8Rng, k: usize, c: usize) -> Owned {
        let label = |rng: &mut ChaCha8Rng| loop {
            let l: Vec<u8> = (0..c)
                .map(|_| u8::from(rng.random::<f64>() < 0.4))
                .collect();
            if l.contains(&1) {
                break l;
            }
        };
        let l1 = label(rng);
        let l2 = label(rng);
        let l3 = label(rng);
        let union: Vec<u8> = l1.iter().zip(&l2).map(|(a, b)| a | b).collect();
        let inter: Vec<u8> = l1.iter().zip(&l2).map(|(a, b)| a & b).collect();
        let mut code = || {
            (0..k)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect::<Vec<f64>>()
        };
        let codes = [
            std::array::from_fn(|_| code()),
            std::array::from_fn(|_| code()),
        ];
        let mut prob = || {
            (0..c)
                .map(|_| rng.random_range(0.05..0.95))
                .collect::<Vec<f64>>()
        };
        let probs = [
            std::array::from_fn(|_| prob()),
            std::array::from_fn(|_| prob()),
        ];
        let targets = std::array::from_fn(|_| {
            (0..k)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect()
        });
        Owned {
            codes,
            probs,
            labels: [l1, l2, l3, union, inter],
            targets,
        }
    }

    /// Independent re-derivation of one grouping: choose the reference and the
    /// more similar partner from label similarities, then evaluate the term.
    fn oracle_group(codes: [&[f64]; 3], labels: [&[u8]; 3], delta: f64) -> f64 {
        let card = |l: &[u8]| l.iter().filter(|&&v| v == 1).count();
        let r = (0..3).fold(0, |best, i| {
            if card(labels[i]) > card(labels[best]) {
                i
            } else {
                best
            }
        });
        let others: Vec<usize> = (0..3).filter(|&i| i != r).collect();
        let sim = |i: usize| {
            if card(labels[i]) == 0 {
                0.0
            } else {
                similarity(labels[r], labels[i]).unwrap()
            }
        };
        let (p, n) = if sim(others[1]) > sim(others[0]) {
            (others[1], others[0])
        } else {
            (others[0], others[1])
        };
        let dist =
            |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 4.0;
        let d_rp = dist(codes[r], codes[p]);
        let d_rn = dist(codes[r], codes[n]);
        let alpha = delta * (sim(p) - sim(n));
        let (y_p, y_n) = (sim(p) > 0.0, sim(n) > 0.0);
        let mut loss = 0.0;
        if y_p && y_n {
            loss += (d_rp - d_rn + alpha).max(0.0);
        }
        if !y_p {
            loss += (delta - d_rp).max(0.0);
        }
        if !y_n {
            loss += (delta - d_rn).max(0.0);
        }
        loss
    }

    fn oracle_triplet_loss(o: &Owned, cfg: &LossConfig) -> (f64, f64) {
        let l = |j: usize| o.labels[j].as_slice();
        let mut intra = 0.0;
        let mut inter = 0.0;
        for m in 0..2 {
            let z = |j: usize| o.codes[m][j].as_slice();
            intra += oracle_group([z(0), z(1), z(2)], [l(0), l(1), l(2)], cfg.delta);
            intra += oracle_group([z(0), z(1), z(3)], [l(0), l(1), l(3)], cfg.delta);
            if o.labels[4].contains(&1) {
                intra += oracle_group([z(0), z(1), z(4)], [l(0), l(1), l(4)], cfg.delta);
            }
        }
        let anchored = |m: usize| {
            let z = |j: usize| o.codes[m][j].as_slice();
            let a = |j: usize| o.codes[1 - m][j].as_slice();
            oracle_group([a(0), z(1), z(2)], [l(0), l(1), l(2)], cfg.delta)
                + oracle_group([a(1), z(0), z(2)], [l(1), l(0), l(2)], cfg.delta)
                + oracle_group([a(2), z(0), z(1)], [l(2), l(0), l(1)], cfg.delta)
        };
        inter += anchored(0);
        if cfg.inter_modal == InterModal::Both {
            inter += anchored(1);
        }
        (intra, inter)
    }

    #[test]
    fn combined_loss_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for case in 0..200 {
            let o = random_owned(&mut rng, 6, 4);
            let mut c = cfg();
            if case % 2 == 1 {
                c.inter_modal = InterModal::TextAnchored;
            }
            let got = combined_triplet_loss(&o.view(), &c, None).unwrap();
            let want = oracle_triplet_loss(&o, &c);
            assert!(
                (got.0 - want.0).abs() < 1e-12 && (got.1 - want.1).abs() < 1e-12,
                "case {case}"
            );
        }
    }

    #[test]
    fn zero_lambdas_leave_only_real_classification() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let o = random_owned(&mut rng, 4, 3);
        let c = LossConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            lambda4: 0.0,
            ..cfg()
        };
        let (b, _) = triplet_objective(&o.view(), &c).unwrap();
        assert_eq!(b.total, b.classification_real);
        let (intra, inter) = combined_triplet_loss(&o.view(), &c, None).unwrap();
        assert_eq!(c.lambda1 * intra + c.lambda2 * inter, 0.0);
    }

    #[test]
    fn identical_similar_codes_give_zero_triplet_loss() {
        let k = 4;
        let z = vec![0.5; k];
        let l = vec![1u8, 1];
        let o = Owned {
            codes: [
                std::array::from_fn(|_| z.clone()),
                std::array::from_fn(|_| z.clone()),
            ],
            probs: [
                std::array::from_fn(|_| vec![0.5; 2]),
                std::array::from_fn(|_| vec![0.5; 2]),
            ],
            labels: std::array::from_fn(|_| l.clone()),
            targets: std::array::from_fn(|_| vec![1.0; k]),
        };
        assert_eq!(
            combined_triplet_loss(&o.view(), &cfg(), None).unwrap(),
            (0.0, 0.0)
        );
    }

    #[test]
    fn perfect_construction_has_zero_total() {
        let b = vec![1.0, -1.0, 1.0, 1.0, -1.0, -1.0];
        let l = vec![1u8, 0, 1];
        let o = Owned {
            codes: [
                std::array::from_fn(|_| b.clone()),
                std::array::from_fn(|_| b.clone()),
            ],
            probs: [
                std::array::from_fn(|_| vec![1.0, 0.0, 1.0]),
                std::array::from_fn(|_| vec![1.0, 0.0, 1.0]),
            ],
            labels: std::array::from_fn(|_| l.clone()),
            targets: std::array::from_fn(|_| b.clone()),
        };
        let (out, _) = triplet_objective(&o.view(), &cfg()).unwrap();
        assert!(out.total < 1e-5, "{out:?}");
    }

    #[test]
    fn disjoint_pair_skips_intersection_grouping() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut o = random_owned(&mut rng, 5, 4);
        o.labels[0] = vec![1, 1, 0, 0];
        o.labels[1] = vec![0, 0, 1, 0];
        o.labels[3] = vec![1, 1, 1, 0];
        o.labels[4] = vec![0, 0, 0, 0];
        let (out, _) = triplet_objective(&o.view(), &cfg()).unwrap();
        // the all-zero target still supervises the intersection pseudo-code
        let expect: f64 = (0..2)
            .map(|m| classification_loss(&o.labels[4], &o.probs[m][4], 2.0).unwrap())
            .sum::<f64>()
            + (0..2)
                .map(|m| classification_loss(&o.labels[3], &o.probs[m][3], 2.0).unwrap())
                .sum::<f64>();
        assert!((out.classification_pseudo - expect).abs() < 1e-12);
        let (intra, _) = combined_triplet_loss(&o.view(), &cfg(), None).unwrap();
        assert_eq!(intra, oracle_triplet_loss(&o, &cfg()).0);
    }

    #[test]
    fn breakdown_total_is_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let owned: Vec<Owned> = (0..8).map(|_| random_owned(&mut rng, 5, 3)).collect();
        let views: Vec<TripletInputs<'_>> = owned.iter().map(Owned::view).collect();
        let (b, grads) = total_loss(&views, &cfg(), Exec::Parallel).unwrap();
        assert_eq!(grads.len(), 8);
        assert!((b.total - b.weighted_total()).abs() < 1e-10);
        for v in [
            b.triplet_intra,
            b.triplet_inter,
            b.classification_real,
            b.classification_pseudo,
            b.quantization,
        ] {
            assert!(v >= 0.0);
        }
        let (s, sg) = total_loss(&views, &cfg(), Exec::Sequential).unwrap();
        assert_eq!(s, b);
        assert_eq!(sg, grads);
    }

    #[test]
    fn unresolved_delta_rejected() {
        let c = LossConfig {
            delta: 0.0,
            ..cfg()
        };
        assert!(c.validate().is_err());
    }

    /// Finite differences of the per-triplet objective with respect to codes and predictions.
    #[test]
    fn objective_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut checked = 0;
        while checked < 20 {
            let o = random_owned(&mut rng, 5, 3);
            if hinge_arguments(&o.view(), &cfg())
                .unwrap()
                .iter()
                .any(|a| a.abs() < 1e-3)
            {
                continue;
            }
            checked += 1;
            let (_, grads) = triplet_objective(&o.view(), &cfg()).unwrap();
            let h = 1e-6;
            for m in 0..2 {
                for j in 0..5 {
                    for i in 0..5 {
                        let eval = |delta: f64| {
                            let mut p = clone_owned(&o);
                            p.codes[m][j][i] += delta;
                            triplet_objective(&p.view(), &cfg()).unwrap().0.total
                        };
                        let num = (eval(h) - eval(-h)) / (2.0 * h);
                        assert!(
                            (num - grads.codes[m][j][i]).abs() < 1e-5,
                            "code {m},{j},{i}"
                        );
                    }
                    for i in 0..3 {
                        let eval = |delta: f64| {
                            let mut p = clone_owned(&o);
                            p.probs[m][j][i] += delta;
                            triplet_objective(&p.view(), &cfg()).unwrap().0.total
                        };
                        let num = (eval(h) - eval(-h)) / (2.0 * h);
                        assert!(
                            (num - grads.probs[m][j][i]).abs() < 1e-4,
                            "prob {m},{j},{i}"
                        );
                    }
                }
            }
        }
    }

    fn clone_owned(o: &Owned) -> Owned {
        Owned {
            codes: o.codes.clone(),
            probs: o.probs.clone(),
            labels: o.labels.clone(),
            targets: o.targets.clone(),
        }
    }

    proptest! {
        #[test]
        fn triplet_term_non_negative_and_monotone(
            d_ij in 0.0f64..20.0, d_ik in 0.0f64..20.0, bump in 0.0f64..5.0,
            alpha in 0.0f64..8.0, delta in 1.0f64..16.0, y_ij: bool, y_ik: bool,
        ) {
            let base = triplet_term(d_ij, d_ik, y_ij, y_ik, alpha, delta);
            prop_assert!(base >= 0.0);
            if y_ij && y_ik {
                prop_assert!(triplet_term(d_ij, d_ik + bump, true, true, alpha, delta) <= base);
                prop_assert!(triplet_term(d_ij + bump, d_ik, true, true, alpha, delta) >= base);
            }
            let slack = (!(y_ij && y_ik) || d_ij - d_ik + alpha <= 0.0)
                && (y_ij || delta - d_ij <= 0.0)
                && (y_ik || delta - d_ik <= 0.0);
            prop_assert_eq!(base == 0.0, slack);
        }

        #[test]
        fn relaxed_distance_equals_hamming_on_binary_codes(bits_a: u64, bits_b: u64) {
            let to_code = |bits: u64| (0..64).map(|i| if bits >> i & 1 == 1 { 1.0 } else { -1.0 }).collect::<Vec<f64>>();
            let d = relaxed_distance(&to_code(bits_a), &to_code(bits_b)).unwrap();
            prop_assert_eq!(d, f64::from((bits_a ^ bits_b).count_ones()));
        }
    }
}
