//! Alternating optimisation: Adam on the network with the unified codes held
//! fixed, then the closed-form code update with the network held fixed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{effective_delta_range, BoundsReport, NeighborMode, DEFAULT_CONFIDENCE};
use crate::data::{
    build_similarity_with, sample_triplet_batch, Dataset, SimilarityMatrix, Triplet,
};
use crate::error::{ensure, Error, Result};
use crate::exec::Exec;
use crate::model::{to_f64, FusionOp, HashModel, ModelDims, DEFAULT_HIDDEN};
use crate::objective::{triplet_objective, InterModal, LossBreakdown, LossConfig, TripletInputs};

/// Robust margin setting: a fixed bit count or the midpoint of the bounds interval.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DeltaRepr", into = "DeltaRepr")]
pub enum DeltaSetting {
    #[default]
    Auto,
    Fixed(u32),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DeltaRepr {
    Fixed(u32),
    Word(String),
}

impl TryFrom<DeltaRepr> for DeltaSetting {
    type Error = String;

    fn try_from(r: DeltaRepr) -> std::result::Result<Self, String> {
        match r {
            DeltaRepr::Fixed(d) => Ok(DeltaSetting::Fixed(d)),
            DeltaRepr::Word(w) if w == "auto" => Ok(DeltaSetting::Auto),
            DeltaRepr::Word(w) => Err(format!(
                "delta must be a positive integer or \"auto\", got {w:?}"
            )),
        }
    }
}

impl From<DeltaSetting> for DeltaRepr {
    fn from(d: DeltaSetting) -> Self {
        match d {
            DeltaSetting::Auto => DeltaRepr::Word("auto".into()),
            DeltaSetting::Fixed(v) => DeltaRepr::Fixed(v),
        }
    }
}

impl std::str::FromStr for DeltaSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(DeltaSetting::Auto);
        }
        s.parse().map(DeltaSetting::Fixed).map_err(|_| {
            Error::InvalidArgument(format!(
                "delta must be a positive integer or \"auto\", got {s:?}"
            ))
        })
    }
}

impl std::fmt::Display for DeltaSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DeltaSetting::Auto => f.write_str("auto"),
            DeltaSetting::Fixed(d) => write!(f, "{d}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Code length in bits.
    pub k: usize,
    pub delta: DeltaSetting,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub w_p: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Chebyshev confidence used when `delta = "auto"`.
    pub confidence: f64,
    pub hidden: usize,
    pub neighbor_mode: NeighborMode,
    pub inter_modal: InterModal,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 32,
            delta: DeltaSetting::Auto,
            lambda1: 0.01,
            lambda2: 0.1,
            lambda3: 0.1,
            lambda4: 0.1,
            w_p: 20.0,
            learning_rate: 0.001,
            batch_size: 128,
            epochs: 50,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            confidence: DEFAULT_CONFIDENCE,
            hidden: DEFAULT_HIDDEN,
            neighbor_mode: NeighborMode::default(),
            inter_modal: InterModal::default(),
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.k >= 1, Config, "k must be >= 1");
        ensure!(self.hidden >= 1, Config, "hidden must be >= 1");
        ensure!(
            self.batch_size >= 3,
            Config,
            "batch_size must be >= 3, got {}",
            self.batch_size
        );
        if let DeltaSetting::Fixed(d) = self.delta {
            ensure!(
                d >= 1 && d as usize <= self.k,
                Config,
                "delta must lie in [1, k = {}], got {d}",
                self.k
            );
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("w_p", self.w_p),
            ("learning_rate", self.learning_rate),
        ] {
            ensure!(
                v.is_finite() && v >= 0.0,
                Config,
                "{name} must be finite and >= 0, got {v}"
            );
        }
        ensure!(
            (0.0..1.0).contains(&self.beta1),
            Config,
            "beta1 must lie in [0, 1)"
        );
        ensure!(
            (0.0..1.0).contains(&self.beta2),
            Config,
            "beta2 must lie in [0, 1)"
        );
        ensure!(
            self.epsilon > 0.0 && self.epsilon.is_finite(),
            Config,
            "epsilon must be > 0"
        );
        ensure!(
            self.confidence > 0.0 && self.confidence < 1.0,
            Config,
            "confidence must lie in (0, 1), got {}",
            self.confidence
        );
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn loss_config(&self, delta: u32) -> LossConfig {
        LossConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            lambda4: self.lambda4,
            w_p: self.w_p,
            delta: f64::from(delta),
            inter_modal: self.inter_modal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// First and second moments, one entry per parameter, and the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Advances `state.t` before applying it.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    hp: &AdamParams,
) -> Result<()> {
    ensure!(
        params.len() == grads.len()
            && params.len() == state.m.len()
            && params.len() == state.v.len(),
        ShapeMismatch,
        "adam: {} params, {} grads, {}/{} moments",
        params.len(),
        grads.len(),
        state.m.len(),
        state.v.len()
    );
    state.t += 1;
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= hp.learning_rate * m_hat / (v_hat.sqrt() + hp.epsilon);
    }
    Ok(())
}

/// `b = sgn(z_x + z_y)` elementwise, with `sgn(0) = +1`.
pub fn update_codes(z_x: &[f64], z_y: &[f64]) -> Result<Vec<i8>> {
    ensure!(
        z_x.len() == z_y.len(),
        ShapeMismatch,
        "relaxed code matrices have {} and {} entries",
        z_x.len(),
        z_y.len()
    );
    Ok(z_x
        .iter()
        .zip(z_y)
        .map(|(a, b)| if a + b >= 0.0 { 1 } else { -1 })
        .collect())
}

/// Per-epoch log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Loss components summed over every triplet of the epoch.
    #[serde(flatten)]
    pub loss: LossBreakdown,
    pub triplets: usize,
    pub mean_total: f64,
    /// Unified-code bits that changed sign in this epoch's code update.
    pub code_flips: usize,
}

/// Everything that evolves during a fit.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: HashModel,
    /// N×K unified codes in {−1, +1}.
    pub codes: Vec<i8>,
    pub adam: AdamState,
    pub epoch: usize,
    pub delta: u32,
    pub metrics: Vec<EpochMetrics>,
    rng: ChaCha8Rng,
    similarity: SimilarityMatrix,
}

impl TrainState {
    /// Initialises the model from `config.seed` and the codes from its first forward pass.
    pub fn new(dataset: &Dataset, config: &TrainConfig, delta: u32) -> Result<Self> {
        config.validate()?;
        ensure!(
            dataset.len() >= 3,
            InvalidArgument,
            "training needs at least 3 samples, got {}",
            dataset.len()
        );
        ensure!(
            delta >= 1 && delta as usize <= config.k,
            InvalidArgument,
            "delta {delta} outside [1, {}]",
            config.k
        );
        let dims = ModelDims {
            d_image: dataset.image.d(),
            d_text: dataset.text.d(),
            hidden: config.hidden,
            k: config.k,
            c: dataset.labels.c(),
        };
        let model = HashModel::init(dims, config.seed)?;
        let codes = unified_codes(&model, dataset, config.exec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let similarity = build_similarity_with(&dataset.labels, &dataset.labels, config.exec)?;
        Ok(Self {
            adam: AdamState::new(model.num_params()),
            model,
            codes,
            epoch: 0,
            delta,
            metrics: Vec::new(),
            rng,
            similarity,
        })
    }

    pub fn code_row(&self, i: usize) -> &[i8] {
        let k = self.model.dims().k;
        &self.codes[i * k..(i + 1) * k]
    }
}

fn unified_codes(model: &HashModel, dataset: &Dataset, exec: Exec) -> Result<Vec<i8>> {
    let zx = model.encode_with(&dataset.image, exec)?;
    let zy = model.encode_with(&dataset.text, exec)?;
    update_codes(&zx.relaxed, &zy.relaxed)
}

/// Loss and parameter gradient of one triplet, with `targets` the unified codes
/// of `(ref, pos, neg)`.
fn triplet_gradient(
    model: &HashModel,
    dataset: &Dataset,
    state: &TrainState,
    t: &Triplet,
    loss_cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let idx = [t.ref_index, t.pos_index, t.neg_index];
    let image = idx.map(|i| to_f64(dataset.image.row(i)));
    let text = idx.map(|i| to_f64(dataset.text.row(i)));
    let act = model.forward_triplet(
        [&image[0], &image[1], &image[2]],
        [&text[0], &text[1], &text[2]],
    )?;
    let l = idx.map(|i| dataset.labels.row(i));
    let union = FusionOp::Union.fuse_labels(l[0], l[1]);
    let intersection = FusionOp::Intersect.fuse_labels(l[0], l[1]);
    let targets = idx.map(|i| {
        state
            .code_row(i)
            .iter()
            .map(|&b| f64::from(b))
            .collect::<Vec<_>>()
    });
    let [mi, mt] = &act.modalities;
    let input = TripletInputs {
        codes: [
            std::array::from_fn(|j| mi.code(j)),
            std::array::from_fn(|j| mt.code(j)),
        ],
        probs: [
            std::array::from_fn(|j| mi.probs(j)),
            std::array::from_fn(|j| mt.probs(j)),
        ],
        labels: [l[0], l[1], l[2], &union, &intersection],
        targets: [&targets[0], &targets[1], &targets[2]],
    };
    let (loss, upstream) = triplet_objective(&input, loss_cfg)?;
    let mut grads = vec![0.0; model.num_params()];
    model.backward_triplet(&act, &upstream, &mut grads);
    Ok((loss, grads))
}

/// One parameter pass over `ceil(N / batch_size)` freshly sampled batches,
/// followed by a single code update.
pub fn train_epoch(
    state: &mut TrainState,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<EpochMetrics> {
    let loss_cfg = config.loss_config(state.delta);
    loss_cfg.validate()?;
    let adam = config.adam();
    let n = dataset.len();
    let batches = n.div_ceil(config.batch_size);
    let mut epoch_loss = LossBreakdown {
        lambda1: loss_cfg.lambda1,
        lambda2: loss_cfg.lambda2,
        lambda3: loss_cfg.lambda3,
        lambda4: loss_cfg.lambda4,
        w_p: loss_cfg.w_p,
        delta: loss_cfg.delta,
        ..Default::default()
    };
    let mut triplets = 0;
    for _ in 0..batches {
        let batch = sample_triplet_batch(
            &dataset.labels,
            &state.similarity,
            config.batch_size,
            state.delta,
            &mut state.rng,
        )?;
        let per = {
            let st = &*state;
            config.exec.try_map_range(batch.len(), |b| {
                triplet_gradient(&st.model, dataset, st, &batch[b], &loss_cfg)
            })?
        };
        let mut grad = vec![0.0; state.model.num_params()];
        for (loss, g) in &per {
            epoch_loss.add(loss);
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        triplets += batch.len();
        adam_step(state.model.params_mut(), &grad, &mut state.adam, &adam)?;
    }
    let new_codes = unified_codes(&state.model, dataset, config.exec)?;
    let code_flips = new_codes
        .iter()
        .zip(&state.codes)
        .filter(|(a, b)| a != b)
        .count();
    state.codes = new_codes;
    state.epoch += 1;
    let metrics = EpochMetrics {
        epoch: state.epoch,
        mean_total: if triplets == 0 {
            0.0
        } else {
            epoch_loss.total / triplets as f64
        },
        loss: epoch_loss,
        triplets,
        code_flips,
    };
    ensure!(
        state.model.params().iter().all(|p| p.is_finite()),
        InvalidArgument,
        "parameters became non-finite in epoch {}",
        state.epoch
    );
    state.metrics.push(metrics.clone());
    Ok(metrics)
}

/// δ for a run: the configured value, or the bounds midpoint for `auto`.
pub fn resolve_delta(
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(u32, Option<BoundsReport>)> {
    match config.delta {
        DeltaSetting::Fixed(d) => Ok((d, None)),
        DeltaSetting::Auto => {
            let k = u32::try_from(config.k)
                .map_err(|_| Error::Config(format!("k = {} too large", config.k)))?;
            let report =
                effective_delta_range(&dataset.labels, k, config.confidence, config.neighbor_mode)?;
            match report.midpoint() {
                Some(mid) => Ok((mid, Some(report))),
                None => Err(Error::EmptyDeltaInterval(
                    report
                        .diagnostic
                        .clone()
                        .unwrap_or_else(|| format!("no admissible delta at K = {k}")),
                )),
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub model: HashModel,
    /// N×K unified codes after the last epoch.
    pub codes: Vec<i8>,
    pub delta: u32,
    /// Present when δ was resolved automatically.
    pub bounds: Option<BoundsReport>,
    pub metrics: Vec<EpochMetrics>,
}

/// Runs `config.epochs` epochs; `on_epoch` sees each metrics line as it is produced.
pub fn fit_with(
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<FitResult> {
    config.validate()?;
    ensure!(
        !dataset.is_empty(),
        InvalidArgument,
        "training dataset is empty"
    );
    let (delta, bounds) = resolve_delta(dataset, config)?;
    let mut state = TrainState::new(dataset, config, delta)?;
    for _ in 0..config.epochs {
        let m = train_epoch(&mut state, dataset, config)?;
        on_epoch(&m);
    }
    Ok(FitResult {
        model: state.model,
        codes: state.codes,
        delta,
        bounds,
        metrics: state.metrics,
    })
}

pub fn fit(dataset: &Dataset, config: &TrainConfig) -> Result<FitResult> {
    fit_with(dataset, config, |_| {})
}
