//! BCE training of the intent and summary modules with Adam and a warm-up
//! plus step-decay schedule.

mod adam;
mod gradsuite;

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, first_non_finite, AdamState, BETA1, BETA2, EPSILON};
pub use gradsuite::{
    check_attention, check_config, check_conv1d, check_edge_conv, check_linear, check_maxpool, check_model,
    check_shifted_relu, gradient_suite, GradCase, GRAD_TOLERANCE, MODEL_CHECK_COORDS, MODEL_CHECK_SHOTS,
};

use crate::error::{Error, Result};
use crate::eval::{evaluate_summary, TagSet};
use crate::model::{
    default_budget, mix_scores, mix_scores_backward, select_summary, Model, Query, Selection, SummaryCache,
};
use crate::nn::{bce_grad, bce_loss, Module};
use crate::querygen::generate_visual_query;
use crate::scalar::Scalar;
use crate::store::{EmbeddingTable, Split, VideoRecord};
use crate::tensor::Tensor;

/// Epoch count the schedule defaults are expressed against.
pub const REFERENCE_EPOCHS: usize = 120;
pub const BASELINE_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub delta: f64,
    /// Global gradient-norm clip over the trained parameters.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 1e-4,
            weight_decay: 6e-5,
            warmup_epochs: 10,
            decay_factor: 0.1,
            decay_every: 20,
            epochs: REFERENCE_EPOCHS,
            batch_size: 2,
            delta: 0.05,
            grad_clip: None,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("base_lr", self.base_lr),
            ("weight_decay", self.weight_decay),
            ("decay_factor", self.decay_factor),
            ("delta", self.delta),
        ];
        for (name, v) in reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let counts = [
            ("warmup_epochs", self.warmup_epochs),
            ("decay_every", self.decay_every),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// Shrinks or stretches the warm-up and decay periods along with the
    /// epoch count, rounding to the nearest epoch.
    pub fn scaled_to(&self, epochs: usize) -> Self {
        let scale = |n: usize| ((n * epochs) as f64 / REFERENCE_EPOCHS as f64).round().max(1.0) as usize;
        TrainConfig {
            warmup_epochs: scale(self.warmup_epochs),
            decay_every: scale(self.decay_every),
            epochs,
            ..self.clone()
        }
    }
}

/// Linear warm-up to `base_lr`, then a `decay_factor` step every
/// `decay_every` epochs.
pub fn lr_at_epoch(e: usize, cfg: &TrainConfig) -> f64 {
    if e < cfg.warmup_epochs {
        cfg.base_lr * (e + 1) as f64 / cfg.warmup_epochs as f64
    } else {
        let steps = ((e - cfg.warmup_epochs) / cfg.decay_every) as i32;
        cfg.base_lr * cfg.decay_factor.powi(steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Text queries; intent and summary modules trained together.
    Joint,
    /// Visual queries; the summary module is frozen.
    Transfer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<S> {
    pub video: usize,
    pub query: Query<S>,
    pub labels: Vec<S>,
    /// Ground-truth summary, ascending.
    pub summary: Vec<usize>,
}

/// Videos plus the (video, query) pairs to train and evaluate on.
#[derive(Debug, Clone)]
pub struct TrainData<S> {
    pub videos: Vec<Tensor<S>>,
    pub tags: Vec<Vec<TagSet>>,
    pub train: Vec<Sample<S>>,
    pub heldout: Vec<Sample<S>>,
}

impl<S: Scalar> TrainData<S> {
    /// Text queries in joint mode. In transfer mode each query is replaced by
    /// the visual query generated from its ground-truth summary.
    pub fn from_records(
        records: &[VideoRecord],
        table: &EmbeddingTable,
        mode: TrainMode,
        query_shots: usize,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Input("training needs at least one video".into()));
        }
        let mut data = TrainData {
            videos: Vec::new(),
            tags: Vec::new(),
            train: Vec::new(),
            heldout: Vec::new(),
        };
        for (v, rec) in records.iter().enumerate() {
            rec.validate()?;
            let tags = rec.tag_sets();
            for q in &rec.queries {
                let query = match mode {
                    TrainMode::Joint => Query::Text(table.text_query(&q.c1, &q.c2)?.cast()),
                    TrainMode::Transfer => {
                        // a single positive is its own query
                        let shots = if q.summary.len() < 2 {
                            q.summary.clone()
                        } else {
                            generate_visual_query(&q.summary, &tags, query_shots.min(q.summary.len()))?
                        };
                        Query::Visual(shots)
                    }
                };
                let sample = Sample {
                    video: v,
                    query,
                    labels: q.labels(rec.shots()).iter().map(|&y| S::lit(y as f64)).collect(),
                    summary: q.summary.clone(),
                };
                match q.split {
                    Split::Train => data.train.push(sample),
                    Split::Test => data.heldout.push(sample),
                }
            }
            data.videos.push(rec.features.cast());
            data.tags.push(tags);
        }
        if data.train.is_empty() {
            return Err(Error::Input("dataset has no training queries".into()));
        }
        Ok(data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldOutMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-pair BCE over the epoch.
    pub loss: f64,
    pub heldout: Option<HeldOutMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub mode: TrainMode,
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
}

impl TrainRecord {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    pub fn final_heldout(&self) -> Option<HeldOutMetrics> {
        self.epochs.last().and_then(|e| e.heldout)
    }
}

fn mean_metrics(results: impl Iterator<Item = (f64, f64, f64)>) -> Option<HeldOutMetrics> {
    let mut m = HeldOutMetrics {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        queries: 0,
    };
    for (p, r, f) in results {
        m.precision += p;
        m.recall += r;
        m.f1 += f;
        m.queries += 1;
    }
    if m.queries == 0 {
        return None;
    }
    let n = m.queries as f64;
    m.precision /= n;
    m.recall /= n;
    m.f1 /= n;
    Some(m)
}

/// Mean semantic P/R/F1 of the default-budget summary over `samples`.
pub fn evaluate_samples<S: Scalar>(
    model: &Model<S>,
    data: &TrainData<S>,
    samples: &[Sample<S>],
) -> Result<Option<HeldOutMetrics>> {
    let mut scores: BTreeMap<usize, Tensor<S>> = BTreeMap::new();
    let mut results = Vec::with_capacity(samples.len());
    for s in samples {
        let x = &data.videos[s.video];
        if let Entry::Vacant(e) = scores.entry(s.video) {
            e.insert(model.shot_scores(x)?);
        }
        let g = model.intent_probs(x, &s.query)?;
        let mixed = mix_scores(&g, &scores[&s.video], model.delta())?;
        let pred = select_summary(&mixed, Selection::Budget(default_budget(x.rows())))?;
        let r = evaluate_summary(&pred, &s.summary, &data.tags[s.video], &[])?;
        results.push((r.precision, r.recall, r.f1));
    }
    Ok(mean_metrics(results.into_iter()))
}

/// Expected metrics of uniformly random summaries with the default budget,
/// estimated from `draws` samples per query.
pub fn random_baseline<S: Scalar>(
    data: &TrainData<S>,
    samples: &[Sample<S>],
    draws: usize,
    seed: u64,
) -> Result<Option<HeldOutMetrics>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::with_capacity(samples.len());
    for s in samples {
        let t = data.videos[s.video].rows();
        let budget = default_budget(t);
        let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
        for _ in 0..draws {
            let pred = sample(&mut rng, t, budget).into_vec();
            let e = evaluate_summary(&pred, &s.summary, &data.tags[s.video], &[])?;
            p += e.precision;
            r += e.recall;
            f += e.f1;
        }
        let n = draws.max(1) as f64;
        results.push((p / n, r / n, f / n));
    }
    Ok(mean_metrics(results.into_iter()))
}

fn grad_norm_sq<S: Scalar, M: Module<S>>(m: &M) -> f64 {
    let mut acc = 0.0;
    m.visit("", &mut |_, t| {
        acc += t.data().iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>()
    });
    acc
}

struct Optimizers<S> {
    summary: Option<AdamState<S>>,
    text: Option<AdamState<S>>,
    visual: Option<AdamState<S>>,
}

/// Shot scores, their cache when the summary module trains, and the gradient
/// accumulated into them over a batch.
type SummaryPass<S> = (Tensor<S>, Option<SummaryCache<S>>, Tensor<S>);

/// Trains `model` in place and returns the per-epoch record.
///
/// Pairs are shuffled each epoch with the configured seed and split into
/// mini-batches; the batch loss is the mean of the per-pair BCE losses.
/// Shot scores are computed once per distinct video in a batch. In transfer
/// mode only the visual intent module is updated and shot scores are
/// computed once for the whole run.
pub fn train<S: Scalar>(
    model: &mut Model<S>,
    data: &TrainData<S>,
    cfg: &TrainConfig,
    mode: TrainMode,
) -> Result<TrainRecord> {
    cfg.validate()?;
    for s in data.train.iter().chain(&data.heldout) {
        let t = data.videos[s.video].rows();
        match (&s.query, mode) {
            (Query::Text(_), TrainMode::Joint) | (Query::Visual(_), TrainMode::Transfer) => {}
            _ => return Err(Error::Config(format!("{mode:?} training got a mismatched query kind"))),
        }
        if s.labels.len() != t {
            return Err(Error::dim("training labels", &[t], &[s.labels.len()]));
        }
    }
    model.config.delta = cfg.delta;
    let delta = model.delta();
    let mut opt = Optimizers {
        summary: (mode == TrainMode::Joint).then(|| AdamState::new(&model.summary)),
        text: (mode == TrainMode::Joint).then(|| AdamState::new(&model.text_intent)),
        visual: (mode == TrainMode::Transfer).then(|| AdamState::new(&model.visual_intent)),
    };
    let frozen_scores: Vec<Tensor<S>> = match mode {
        TrainMode::Transfer => data
            .videos
            .iter()
            .map(|x| model.shot_scores(x))
            .collect::<Result<_>>()?,
        TrainMode::Joint => Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut record = TrainRecord {
        mode,
        config: cfg.clone(),
        epochs: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(epoch, cfg);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grad = model.zeros_like();
            let scale = S::one() / S::from_usize_lossy(batch.len());
            let mut summaries: BTreeMap<usize, SummaryPass<S>> = BTreeMap::new();
            for &i in batch {
                let v = data.train[i].video;
                if let Entry::Vacant(slot) = summaries.entry(v) {
                    let (h, cache) = match mode {
                        TrainMode::Joint => {
                            let (h, c) = model.summary_forward(&data.videos[v])?;
                            (h, Some(c))
                        }
                        TrainMode::Transfer => (frozen_scores[v].clone(), None),
                    };
                    let dh = Tensor::zeros(h.shape());
                    slot.insert((h, cache, dh));
                }
            }
            for &i in batch {
                let s = &data.train[i];
                let (g, icache) = model.intent_forward(&data.videos[s.video], &s.query)?;
                let (h, _, dh) = summaries.get_mut(&s.video).expect("inserted above");
                let p = mix_scores(&g, h, delta)?;
                let loss = bce_loss(&p, &s.labels)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("training loss at epoch {epoch}, batch {b}")));
                }
                epoch_loss += loss.as_f64();
                let mut dp = bce_grad(&p, &s.labels)?;
                dp.iter_mut().for_each(|d| *d *= scale);
                let (dg, dh_i) = mix_scores_backward(&g, h, delta, &dp);
                dh.add_assign(&dh_i);
                model.intent_backward(&s.query, &icache, &dg, &mut grad);
            }
            if mode == TrainMode::Joint {
                for (h_cache, dh) in summaries.values().filter_map(|(_, c, dh)| c.as_ref().map(|c| (c, dh))) {
                    model.summary.backward(h_cache, dh, &mut grad.summary);
                }
            }
            if let Some(clip) = cfg.grad_clip {
                let norm = match mode {
                    TrainMode::Joint => (grad_norm_sq(&grad.summary) + grad_norm_sq(&grad.text_intent)).sqrt(),
                    TrainMode::Transfer => grad_norm_sq(&grad.visual_intent).sqrt(),
                };
                if norm > clip {
                    grad.scale(S::lit(clip / norm));
                }
            }
            let wd = cfg.weight_decay;
            if let Some(st) = opt.summary.as_mut() {
                adam_step(&mut model.summary, &grad.summary, st, lr, wd)?;
            }
            if let Some(st) = opt.text.as_mut() {
                adam_step(&mut model.text_intent, &grad.text_intent, st, lr, wd)?;
            }
            if let Some(st) = opt.visual.as_mut() {
                adam_step(&mut model.visual_intent, &grad.visual_intent, st, lr, wd)?;
            }
        }
        record.epochs.push(EpochRecord {
            epoch,
            lr,
            loss: epoch_loss / data.train.len() as f64,
            heldout: evaluate_samples(model, data, &data.heldout)?,
        });
    }
    Ok(record)
}
