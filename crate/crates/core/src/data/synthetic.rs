use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureMatrix, LabelMatrix, Modality};
use crate::error::{ensure, Result};

/// Desk-scale stand-in for extracted image/text features.
///
/// Labels are independent Bernoulli tags (rows redrawn until non-empty). Each
/// modality's features are `label · P_modality + noise·N(0,1)` with a random
/// Gaussian projection per modality, so both modalities share the label
/// structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub d_image: usize,
    pub d_text: usize,
    pub tag_probs: Vec<f64>,
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn uniform(n: usize, c: usize, theta: f64, noise: f64, seed: u64) -> Self {
        Self {
            n,
            d_image: 32,
            d_text: 24,
            tag_probs: vec![theta; c],
            noise,
            seed,
        }
    }

    pub fn c(&self) -> usize {
        self.tag_probs.len()
    }
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    let c = config.c();
    ensure!(
        config.n >= 1,
        InvalidArgument,
        "synthetic dataset needs n >= 1"
    );
    ensure!(
        c >= 1,
        InvalidArgument,
        "synthetic dataset needs at least one tag"
    );
    ensure!(
        config.d_image >= 1 && config.d_text >= 1,
        InvalidArgument,
        "feature dimensions must be positive"
    );
    ensure!(
        config.tag_probs.iter().all(|&p| p > 0.0 && p < 1.0),
        InvalidArgument,
        "tag probabilities must lie in (0, 1)"
    );
    ensure!(
        config.noise.is_finite() && config.noise >= 0.0,
        InvalidArgument,
        "noise must be finite and non-negative"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let proj_image = gaussian(&mut rng, c * config.d_image);
    let proj_text = gaussian(&mut rng, c * config.d_text);

    let mut entries = Vec::with_capacity(config.n * c);
    let mut row = vec![0u8; c];
    for _ in 0..config.n {
        loop {
            for (slot, &p) in row.iter_mut().zip(&config.tag_probs) {
                *slot = u8::from(rng.random::<f64>() < p);
            }
            if row.contains(&1) {
                break;
            }
        }
        entries.extend_from_slice(&row);
    }
    let labels = LabelMatrix::new(config.n, c, entries)?;

    let image = project(&labels, &proj_image, config.d_image, config.noise, &mut rng);
    let text = project(&labels, &proj_text, config.d_text, config.noise, &mut rng);
    Dataset::new(
        FeatureMatrix::new(config.n, config.d_image, image, Modality::Image)?,
        FeatureMatrix::new(config.n, config.d_text, text, Modality::Text)?,
        labels,
    )
}

fn gaussian(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

fn project(
    labels: &LabelMatrix,
    proj: &[f64],
    d: usize,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f32> {
    let mut out = Vec::with_capacity(labels.n() * d);
    for row in labels.rows() {
        for col in 0..d {
            let mut v = 0.0;
            for (tag, &on) in row.iter().enumerate() {
                if on == 1 {
                    v += proj[tag * d + col];
                }
            }
            if noise > 0.0 {
                let e: f64 = StandardNormal.sample(rng);
                v += noise * e;
            }
            out.push(v as f32);
        }
    }
    out
}
