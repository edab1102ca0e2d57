//! Synthetic dataset generator.
//!
//! Videos are sequences of scenes. Every scene carries a small tag set and
//! every tag owns a Gaussian prototype in feature space; a shot's feature is
//! the normalized sum of its tags' prototypes plus a per-scene offset and
//! noise. A fixed list of concept pairs serves as text queries: a shot
//! answers a query exactly when it carries both concepts, and such shots are
//! only ever produced by scenes planted for that pair.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::WORD_DIM;
use crate::store::dataset::{write_json, DatasetManifest, EmbeddingTable, QueryRecord, Split, VideoMeta, VideoRecord};
use crate::tensor::Tensor;

const WORDS: [&str; 32] = [
    "beach", "sky", "dog", "car", "food", "street", "tree", "water", "people", "building", "grass", "computer", "book",
    "phone", "kitchen", "sun", "road", "flower", "window", "chair", "child", "boat", "bike", "hat", "shop", "table",
    "mountain", "cup", "desk", "snow", "train", "bird",
];

pub const MIN_SHOTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub videos: usize,
    pub shots: usize,
    pub dim: usize,
    pub vocab: usize,
    /// Number of planted query concept pairs.
    pub pairs: usize,
    /// Standard deviation of per-shot feature noise.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            videos: 4,
            shots: 256,
            dim: 64,
            vocab: 16,
            pairs: 6,
            noise: 0.3,
        }
    }
}

pub fn concept_name(i: usize) -> String {
    WORDS.get(i).map_or_else(|| format!("concept_{i}"), |w| w.to_string())
}

/// Bounds on planted positives per query: `[ceil(0.02·T), floor(0.06·T)]`.
pub fn positive_range(shots: usize) -> (usize, usize) {
    let lo = (shots * 2).div_ceil(100).max(1);
    (lo, (shots * 6 / 100).max(lo))
}

struct Plan<'a> {
    pairs: &'a [(usize, usize)],
    vocab: usize,
}

impl Plan<'_> {
    /// True if `tags` contains both concepts of any query pair other than `except`.
    fn completes_pair(&self, tags: &[usize], except: Option<usize>) -> bool {
        self.pairs
            .iter()
            .enumerate()
            .any(|(j, &(a, b))| Some(j) != except && tags.contains(&a) && tags.contains(&b))
    }

    fn pick_extra<R: Rng>(&self, rng: &mut R, base: &[usize], except: Option<usize>) -> Option<usize> {
        for _ in 0..8 {
            let e = rng.random_range(0..self.vocab);
            if base.contains(&e) {
                continue;
            }
            let mut t = base.to_vec();
            t.push(e);
            if !self.completes_pair(&t, except) {
                return Some(e);
            }
        }
        None
    }
}

fn generate_video(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    v: usize,
    plan: &Plan,
    prototypes: &Tensor<f32>,
    names: &[String],
) -> Result<VideoRecord> {
    let t = cfg.shots;
    let thumbnail_seed = rng.next_u64();
    let (lo, hi) = positive_range(t);
    // (pair, length) for planted scenes, (None, length) for filler
    let mut scenes: Vec<(Option<usize>, usize)> = Vec::new();
    let mut planted = 0;
    for j in 0..plan.pairs.len() {
        let mut remaining = rng.random_range(lo..=hi);
        planted += remaining;
        while remaining > 0 {
            let len = remaining.min(rng.random_range(2..=6));
            scenes.push((Some(j), len));
            remaining -= len;
        }
    }
    if planted > t / 2 {
        return Err(Error::Config(format!(
            "{} query pairs need about {planted} of {t} shots; use fewer pairs or longer videos",
            plan.pairs.len()
        )));
    }
    let mut filler = t - planted;
    while filler > 0 {
        let len = filler.min(rng.random_range(3..=12));
        scenes.push((None, len));
        filler -= len;
    }
    scenes.shuffle(rng);

    let noise = Normal::new(0.0, cfg.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let offset_dist = Normal::new(0.0, 0.3).expect("valid std");
    let mut features = Vec::with_capacity(t * cfg.dim);
    let mut tags = Vec::with_capacity(t);
    for &(pair, len) in &scenes {
        let offset: Vec<f64> = (0..cfg.dim).map(|_| offset_dist.sample(rng)).collect();
        let (base, extra) = match pair {
            Some(j) => {
                let (a, b) = plan.pairs[j];
                let extra = if rng.random_bool(0.5) {
                    plan.pick_extra(rng, &[a, b], Some(j))
                } else {
                    None
                };
                (vec![a, b], extra)
            }
            None => loop {
                let n = rng.random_range(1..=2);
                let mut base: Vec<usize> = (0..n).map(|_| rng.random_range(0..plan.vocab)).collect();
                base.dedup();
                if !plan.completes_pair(&base, None) {
                    break (base, None);
                }
            },
        };
        for _ in 0..len {
            let mut shot: Vec<usize> = match pair {
                Some(_) => {
                    let mut s = base.clone();
                    if let Some(e) = extra.filter(|_| rng.random_bool(0.7)) {
                        s.push(e);
                    }
                    s
                }
                None => {
                    let mut s: Vec<usize> = base.iter().copied().filter(|_| rng.random_bool(0.85)).collect();
                    if s.is_empty() {
                        s.push(base[0]);
                    }
                    if rng.random_bool(0.15) {
                        if let Some(e) = plan.pick_extra(rng, &s, None) {
                            s.push(e);
                        }
                    }
                    s
                }
            };
            shot.sort_unstable();
            shot.dedup();
            let scale = 1.0 / (shot.len() as f64).sqrt();
            for (c, &off) in offset.iter().enumerate() {
                let proto: f64 = shot.iter().map(|&g| prototypes.at(g, c) as f64).sum::<f64>() * scale;
                features.push((proto + off + noise.sample(rng)) as f32);
            }
            tags.push(shot.iter().map(|&g| names[g].clone()).collect::<Vec<_>>());
        }
    }

    let period = cfg.videos.max(2);
    let queries = plan
        .pairs
        .iter()
        .enumerate()
        .map(|(j, &(a, b))| {
            let summary: Vec<usize> = tags
                .iter()
                .enumerate()
                .filter(|(_, s)| s.contains(&names[a]) && s.contains(&names[b]))
                .map(|(i, _)| i)
                .collect();
            QueryRecord {
                c1: names[a].clone(),
                c2: names[b].clone(),
                split: if (j + v).is_multiple_of(period) {
                    Split::Test
                } else {
                    Split::Train
                },
                summary,
            }
        })
        .collect::<Vec<_>>();
    for q in &queries {
        let rate = q.summary.len() as f64 / t as f64;
        if !(0.01..=0.10).contains(&rate) {
            return Err(Error::Config(format!(
                "generator audit: query ({}, {}) has positive rate {rate:.3}",
                q.c1, q.c2
            )));
        }
    }
    Ok(VideoRecord {
        meta: VideoMeta {
            id: format!("video_{v:03}"),
            shots: t,
            dim: cfg.dim,
            thumbnail_seed,
        },
        features: Tensor::from_vec(&[t, cfg.dim], features)?,
        tags,
        queries,
    })
}

/// Generates the dataset in memory.
pub fn synth_records(cfg: &SynthConfig) -> Result<(DatasetManifest, EmbeddingTable, Vec<VideoRecord>)> {
    if cfg.vocab < 2 {
        return Err(Error::Config(format!(
            "vocabulary needs at least 2 concepts, got {}",
            cfg.vocab
        )));
    }
    if cfg.shots < MIN_SHOTS {
        return Err(Error::InputTooShort {
            min: MIN_SHOTS,
            got: cfg.shots,
        });
    }
    if cfg.videos == 0 || cfg.dim == 0 || cfg.pairs == 0 {
        return Err(Error::Config("videos, dim and pairs must be positive".into()));
    }
    let max_pairs = cfg.vocab * (cfg.vocab - 1) / 2;
    if cfg.pairs > max_pairs {
        return Err(Error::Config(format!(
            "{} query pairs requested but {} concepts only form {max_pairs}",
            cfg.pairs, cfg.vocab
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let names: Vec<String> = (0..cfg.vocab).map(concept_name).collect();
    let embeddings = Tensor::<f32>::randn(&[cfg.vocab, WORD_DIM], 1.0, &mut rng);
    let prototypes = Tensor::<f32>::randn(&[cfg.vocab, cfg.dim], 1.0, &mut rng);
    let mut all_pairs: Vec<(usize, usize)> = (0..cfg.vocab)
        .flat_map(|a| (a + 1..cfg.vocab).map(move |b| (a, b)))
        .collect();
    all_pairs.shuffle(&mut rng);
    all_pairs.truncate(cfg.pairs);
    let plan = Plan {
        pairs: &all_pairs,
        vocab: cfg.vocab,
    };
    let videos = (0..cfg.videos)
        .map(|v| generate_video(&mut rng, cfg, v, &plan, &prototypes, &names))
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        seed: cfg.seed,
        pairs: all_pairs
            .iter()
            .map(|&(a, b)| (names[a].clone(), names[b].clone()))
            .collect(),
        videos: videos.iter().map(|v| v.meta.id.clone()).collect(),
    };
    Ok((manifest, EmbeddingTable::new(names, embeddings)?, videos))
}

/// Writes a synthetic dataset under `root`.
pub fn synth_dataset(root: &Path, cfg: &SynthConfig) -> Result<DatasetManifest> {
    let (manifest, table, videos) = synth_records(cfg)?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    write_json(&root.join("dataset.json"), &manifest)?;
    table.save(root)?;
    for v in &videos {
        v.save(&root.join("videos").join(&v.meta.id))?;
    }
    Ok(manifest)
}
