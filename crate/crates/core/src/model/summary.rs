//! The summary module: scores every shot under every basis intent.
//!
//! For intent `i` the basis embedding becomes the ego vertex of a GCN over
//! each pathway's segments, the updated segments are pushed back to shot
//! level by the local graph, the two granularities are fused, and the fused
//! shot features meet the intent embedding in a shared relevance space.

use rand::Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::graph::{EgoGcn, EgoGcnCache, LocalCache, LocalGraph, LOCAL_KNN_COARSE, LOCAL_KNN_FINE};
use crate::impl_module;
use crate::model::ModelConfig;
use crate::nn::{sigmoid, Linear, Mlp3, Mlp3Cache, Module};
use crate::pathways::{GsCache, GsPathways, SegmentFeatures};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Intents handled by one worker during backward; fixes the reduction order.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryModule<S> {
    /// `[k, e]` basis intent embeddings.
    pub basis: Tensor<S>,
    pub pathways: GsPathways<S>,
    pub fine_gcn: EgoGcn<S>,
    pub coarse_gcn: EgoGcn<S>,
    pub fine_local: LocalGraph<S>,
    pub coarse_local: LocalGraph<S>,
    pub fuse: Linear<S>,
    pub shot_relevance: Linear<S>,
    pub intent_relevance: Linear<S>,
    pub head: Mlp3<S>,
}

impl_module!(SummaryModule {
    basis,
    pathways,
    fine_gcn,
    coarse_gcn,
    fine_local,
    coarse_local,
    fuse,
    shot_relevance,
    intent_relevance,
    head
});

#[derive(Debug)]
struct IntentPass<S> {
    fine_gcn: EgoGcnCache<S>,
    coarse_gcn: EgoGcnCache<S>,
    fine_local: LocalCache<S>,
    coarse_local: LocalCache<S>,
    locals: Tensor<S>,
    fused: Tensor<S>,
    shot_rel: Tensor<S>,
    intent_rel: Tensor<S>,
    head: Mlp3Cache<S>,
    scores: Vec<S>,
}

#[derive(Debug)]
pub struct SummaryCache<S> {
    segments: SegmentFeatures<S>,
    pathways: GsCache<S>,
    passes: Vec<IntentPass<S>>,
}

impl<S: Scalar> SummaryModule<S> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let (cf, cc, m) = (cfg.fine_channels(), cfg.coarse_channels(), cfg.local_width);
        Ok(SummaryModule {
            basis: Tensor::randn(&[cfg.num_intents, cfg.intent_dim], 1.0, rng),
            pathways: GsPathways::new(&cfg.pathways, rng)?,
            fine_gcn: EgoGcn::new(cfg.intent_dim, cf, cfg.summary_layers, cfg.segment_knn, rng)?,
            coarse_gcn: EgoGcn::new(cfg.intent_dim, cc, cfg.summary_layers, cfg.segment_knn, rng)?,
            fine_local: LocalGraph::new(cf, cfg.input_dim, m, LOCAL_KNN_FINE, rng),
            coarse_local: LocalGraph::new(cc, cfg.input_dim, m, LOCAL_KNN_COARSE, rng),
            fuse: Linear::new(2 * m, m, 1.0, rng),
            shot_relevance: Linear::new(m, cfg.relevance_width, 1.0, rng),
            intent_relevance: Linear::new(cfg.intent_dim, cfg.relevance_width, 1.0, rng),
            head: Mlp3::new(cfg.relevance_width, cfg.summary_hidden, 1, 0.5, rng),
        })
    }

    pub fn num_intents(&self) -> usize {
        self.basis.rows()
    }

    /// `video: [T, d]` → `H: [k, T]` with entries in (0, 1).
    pub fn forward(&self, video: &Tensor<S>) -> Result<(Tensor<S>, SummaryCache<S>)> {
        let (segments, pathways) = self.pathways.forward(video)?;
        let passes = (0..self.num_intents())
            .into_par_iter()
            .map(|i| self.forward_intent(i, &segments, video))
            .collect::<Result<Vec<_>>>()?;
        let t = video.rows();
        let mut h = Tensor::zeros(&[passes.len(), t]);
        for (i, p) in passes.iter().enumerate() {
            h.row_mut(i).copy_from_slice(&p.scores);
        }
        Ok((
            h,
            SummaryCache {
                segments,
                pathways,
                passes,
            },
        ))
    }

    fn forward_intent(&self, i: usize, seg: &SegmentFeatures<S>, video: &Tensor<S>) -> Result<IntentPass<S>> {
        let ego = self.basis.slice_rows(i, i + 1);
        let (nf, nc) = (seg.fine.rows(), seg.coarse.rows());
        let (gf, fine_gcn) = self.fine_gcn.forward(&seg.fine, &ego)?;
        let (gc, coarse_gcn) = self.coarse_gcn.forward(&seg.coarse, &ego)?;
        let (lf, fine_local) = self.fine_local.forward(&gf.slice_rows(0, nf), &seg.fine_spans, video)?;
        let (lc, coarse_local) = self
            .coarse_local
            .forward(&gc.slice_rows(0, nc), &seg.coarse_spans, video)?;
        let locals = Tensor::hstack(&[&lf, &lc])?;
        let fused = self.fuse.forward(&locals)?;
        let shot_rel = self.shot_relevance.forward(&fused)?;
        let intent_rel = self.intent_relevance.forward(&ego)?;
        let joint = broadcast_mul(&shot_rel, intent_rel.row(0));
        let (logits, head) = self.head.forward(&joint)?;
        let scores = sigmoid(&logits).into_data();
        Ok(IntentPass {
            fine_gcn,
            coarse_gcn,
            fine_local,
            coarse_local,
            locals,
            fused,
            shot_rel,
            intent_rel,
            head,
            scores,
        })
    }

    /// Accumulates parameter gradients for `dH: [k, T]` into `grad`.
    pub fn backward(&self, cache: &SummaryCache<S>, dh: &Tensor<S>, grad: &mut SummaryModule<S>) {
        let k = self.num_intents();
        // fixed-size chunks summed in order keep the result independent of
        // the thread count
        let chunks: Vec<(SummaryModule<S>, Tensor<S>, Tensor<S>)> = (0..k.div_ceil(GRAD_CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut g = self.zeros_like();
                let mut d_fine = Tensor::zeros(cache.segments.fine.shape());
                let mut d_coarse = Tensor::zeros(cache.segments.coarse.shape());
                for i in c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(k) {
                    self.backward_intent(i, cache, dh.row(i), &mut g, &mut d_fine, &mut d_coarse);
                }
                (g, d_fine, d_coarse)
            })
            .collect();
        let mut d_fine = Tensor::zeros(cache.segments.fine.shape());
        let mut d_coarse = Tensor::zeros(cache.segments.coarse.shape());
        for (g, df, dc) in &chunks {
            grad.accumulate(g);
            d_fine.add_assign(df);
            d_coarse.add_assign(dc);
        }
        self.pathways
            .backward(&cache.pathways, &d_fine, &d_coarse, &mut grad.pathways);
    }

    fn backward_intent(
        &self,
        i: usize,
        cache: &SummaryCache<S>,
        dscore: &[S],
        grad: &mut SummaryModule<S>,
        d_fine: &mut Tensor<S>,
        d_coarse: &mut Tensor<S>,
    ) {
        let p = &cache.passes[i];
        let t = dscore.len();
        let dlogit: Vec<S> = dscore
            .iter()
            .zip(&p.scores)
            .map(|(&d, &y)| d * y * (S::one() - y))
            .collect();
        let dlogit = Tensor::from_vec(&[t, 1], dlogit).expect("one logit per shot");
        let djoint = self.head.backward(&p.head, &dlogit, &mut grad.head);
        let irow = p.intent_rel.row(0);
        let d_shot_rel = broadcast_mul(&djoint, irow);
        let mut d_intent_rel = Tensor::zeros(&[1, irow.len()]);
        for s in 0..t {
            for ((acc, &a), &b) in d_intent_rel
                .row_mut(0)
                .iter_mut()
                .zip(djoint.row(s))
                .zip(p.shot_rel.row(s))
            {
                *acc += a * b;
            }
        }
        let ego = self.basis.slice_rows(i, i + 1);
        let mut d_ego = self
            .intent_relevance
            .backward(&ego, &d_intent_rel, &mut grad.intent_relevance);
        let d_fused = self
            .shot_relevance
            .backward(&p.fused, &d_shot_rel, &mut grad.shot_relevance);
        let d_locals = self.fuse.backward(&p.locals, &d_fused, &mut grad.fuse);
        let m = self.fine_local.width();
        let parts = d_locals.hsplit(&[m, m]);
        let (d_gf, _) = self.fine_local.backward(&p.fine_local, &parts[0], &mut grad.fine_local);
        let (d_gc, _) = self
            .coarse_local
            .backward(&p.coarse_local, &parts[1], &mut grad.coarse_local);
        for (gcn, gcache, dg, ggrad, dseg) in [
            (&self.fine_gcn, &p.fine_gcn, d_gf, &mut grad.fine_gcn, &mut *d_fine),
            (
                &self.coarse_gcn,
                &p.coarse_gcn,
                d_gc,
                &mut grad.coarse_gcn,
                &mut *d_coarse,
            ),
        ] {
            let padded = Tensor::vstack(&[&dg, &Tensor::zeros(&[1, gcn.width()])]).expect("matching widths");
            let (ds, de) = gcn.backward(gcache, &padded, ggrad);
            dseg.add_assign(&ds);
            d_ego.add_assign(&de);
        }
        for (g, &d) in grad.basis.row_mut(i).iter_mut().zip(d_ego.data()) {
            *g += d;
        }
    }
}

fn broadcast_mul<S: Scalar>(x: &Tensor<S>, row: &[S]) -> Tensor<S> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        for (v, &b) in out.row_mut(r).iter_mut().zip(row) {
            *v *= b;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_module;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_config(d: usize) -> ModelConfig {
        let mut c = ModelConfig::toy(d);
        c.pathways.fine = c.pathways.fine.with_channels(3);
        c.pathways.coarse = c.pathways.coarse.with_channels(4);
        c.num_intents = 3;
        c.intent_dim = 3;
        c.local_width = 3;
        c.relevance_width = 4;
        c.summary_hidden = 4;
        c.summary_layers = 2;
        c
    }

    #[test]
    fn scores_every_shot_under_every_intent() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = ModelConfig::toy(8);
        let m = SummaryModule::<f32>::new(&cfg, &mut rng).unwrap();
        let x = Tensor::randn(&[40, 8], 1.0, &mut rng);
        let (h, _) = m.forward(&x).unwrap();
        assert_eq!(h.shape(), &[20, 40]);
        assert!(h.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn duplicated_shots_in_one_segment_score_alike() {
        // shots 1 and 2 are copies and 0/3 are copies, so both duplicates
        // see the same neighbour multiset in every graph they belong to
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = ModelConfig::toy(6);
        let m = SummaryModule::<f64>::new(&cfg, &mut rng).unwrap();
        let mut x = Tensor::<f64>::randn(&[32, 6], 1.0, &mut rng);
        let a = x.row(0).to_vec();
        let b = x.row(1).to_vec();
        x.row_mut(3).copy_from_slice(&a);
        x.row_mut(2).copy_from_slice(&b);
        let (h, _) = m.forward(&x).unwrap();
        for i in 0..20 {
            assert!((h.at(i, 1) - h.at(i, 2)).abs() < 1e-12, "intent {i}");
        }
    }

    #[test]
    fn gradient_check_tiny() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = tiny_config(3);
        let m = SummaryModule::<f64>::new(&cfg, &mut rng).unwrap();
        let x = Tensor::<f64>::randn(&[32, 3], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(&[3, 32], 1.0, &mut rng);
        let f = |m: &SummaryModule<f64>| -> f64 {
            let (h, _) = m.forward(&x).unwrap();
            h.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };
        let r = check_module(
            &m,
            f,
            |m| {
                let (_, c) = m.forward(&x).unwrap();
                let mut g = m.zeros_like();
                m.backward(&c, &w, &mut g);
                g
            },
            1e-6,
            Some((60, 5)),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
