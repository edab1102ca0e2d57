//! The intent module: maps a (video, query) pair to a distribution over the
//! basis intents.
//!
//! The query enters the ego graph of each pathway as ego vertices (one merged
//! vertex for a text query, one vertex per shot for a visual query). After
//! the GCN stack the segment vertices are pooled two ways, by plain averaging
//! and by multi-head attention whose queries are the raw query vectors.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{EgoGcn, EgoGcnCache};
use crate::impl_module;
use crate::model::ModelConfig;
use crate::nn::{softmax, softmax_backward, AttentionCache, Mlp3, Mlp3Cache, MultiHeadAttention};
use crate::pathways::{GsCache, GsPathways};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Spread of the initial intent logits. Near-uniform distributions put every
/// `g_i·H` under the mixing threshold and leave no gradient at all; a
/// saturated softmax does the same. The head input is RMS-normalized so this
/// gain alone sets the spread.
const LOGIT_GAIN: f64 = 2.5;

#[derive(Debug, Clone, PartialEq)]
pub struct IntentModule<S> {
    pub pathways: GsPathways<S>,
    pub fine_gcn: EgoGcn<S>,
    pub coarse_gcn: EgoGcn<S>,
    pub fine_attention: MultiHeadAttention<S>,
    pub coarse_attention: MultiHeadAttention<S>,
    pub head: Mlp3<S>,
}

impl_module!(IntentModule {
    pathways,
    fine_gcn,
    coarse_gcn,
    fine_attention,
    coarse_attention,
    head
});

#[derive(Debug)]
struct Pooled<S> {
    gcn: EgoGcnCache<S>,
    attention: AttentionCache<S>,
    segments: usize,
    ego: usize,
    queries: usize,
}

#[derive(Debug)]
pub struct IntentCache<S> {
    pathways: GsCache<S>,
    fine: Pooled<S>,
    coarse: Pooled<S>,
    normed: Tensor<S>,
    rms: S,
    head: Mlp3Cache<S>,
    probs: Tensor<S>,
}

impl<S: Scalar> IntentModule<S> {
    /// `ego_dim` is the width of one ego vertex, `query_dim` the width of one
    /// attention query.
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, ego_dim: usize, query_dim: usize, rng: &mut R) -> Result<Self> {
        let (cf, cc, a) = (cfg.fine_channels(), cfg.coarse_channels(), cfg.attention_dim);
        Ok(IntentModule {
            pathways: GsPathways::new(&cfg.pathways, rng)?,
            fine_gcn: EgoGcn::new(ego_dim, cf, cfg.intent_layers, cfg.segment_knn, rng)?,
            coarse_gcn: EgoGcn::new(ego_dim, cc, cfg.intent_layers, cfg.segment_knn, rng)?,
            fine_attention: MultiHeadAttention::new(query_dim, cf, a, cfg.attention_heads, rng)?,
            coarse_attention: MultiHeadAttention::new(query_dim, cc, a, cfg.attention_heads, rng)?,
            head: Mlp3::new(cf + cc + 2 * a, cfg.intent_hidden, cfg.num_intents, LOGIT_GAIN, rng),
        })
    }

    /// Text variant: one ego vertex, the concatenated concept embeddings.
    pub fn text<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        Self::new(cfg, 2 * cfg.word_dim, cfg.word_dim, rng)
    }

    /// Visual variant: one ego vertex per query shot.
    pub fn visual<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        Self::new(cfg, cfg.input_dim, cfg.input_dim, rng)
    }

    pub fn ego_dim(&self) -> usize {
        self.fine_gcn.ego_proj.input_dim()
    }

    pub fn query_dim(&self) -> usize {
        self.fine_attention.wq.input_dim()
    }

    pub fn num_intents(&self) -> usize {
        self.head.l3.output_dim()
    }

    /// `video: [T, d]`, `ego: [M, ego_dim]`, `queries: [Q, query_dim]` →
    /// probabilities `[k]`.
    pub fn forward(&self, video: &Tensor<S>, ego: &Tensor<S>, queries: &Tensor<S>) -> Result<(Vec<S>, IntentCache<S>)> {
        if queries.rows() == 0 || ego.rows() == 0 {
            return Err(Error::Input("a query needs at least one vector".into()));
        }
        ego.expect_cols("intent ego vertices", self.ego_dim())?;
        queries.expect_cols("intent attention queries", self.query_dim())?;
        let (seg, pathways) = self.pathways.forward(video)?;
        let (pf, fine) = pool(&self.fine_gcn, &self.fine_attention, &seg.fine, ego, queries)?;
        let (pc, coarse) = pool(&self.coarse_gcn, &self.coarse_attention, &seg.coarse, ego, queries)?;
        let features = Tensor::hstack(&[&pf[0], &pf[1], &pc[0], &pc[1]])?;
        let (normed, rms) = rms_normalize(&features);
        let (logits, head) = self.head.forward(&normed)?;
        let probs = softmax(&logits);
        Ok((
            probs.data().to_vec(),
            IntentCache {
                pathways,
                fine,
                coarse,
                normed,
                rms,
                head,
                probs,
            },
        ))
    }

    pub fn backward(&self, cache: &IntentCache<S>, d_probs: &[S], grad: &mut IntentModule<S>) {
        let dp = Tensor::from_vec(&[1, d_probs.len()], d_probs.to_vec()).expect("one entry per intent");
        let dlogits = softmax_backward(&cache.probs, &dp);
        let dnormed = self.head.backward(&cache.head, &dlogits, &mut grad.head);
        let dfeat = rms_normalize_backward(&cache.normed, cache.rms, &dnormed);
        let (cf, cc, a) = (
            self.fine_gcn.width(),
            self.coarse_gcn.width(),
            self.fine_attention.dim(),
        );
        let parts = dfeat.hsplit(&[cf, a, cc, a]);
        let d_fine = unpool(
            &self.fine_gcn,
            &self.fine_attention,
            &cache.fine,
            &parts[0],
            &parts[1],
            &mut grad.fine_gcn,
            &mut grad.fine_attention,
        );
        let d_coarse = unpool(
            &self.coarse_gcn,
            &self.coarse_attention,
            &cache.coarse,
            &parts[2],
            &parts[3],
            &mut grad.coarse_gcn,
            &mut grad.coarse_attention,
        );
        self.pathways
            .backward(&cache.pathways, &d_fine, &d_coarse, &mut grad.pathways);
    }
}

/// `x / sqrt(mean(x²) + ε)` over the whole (single-row) tensor.
fn rms_normalize<S: Scalar>(x: &Tensor<S>) -> (Tensor<S>, S) {
    let n = S::from_usize_lossy(x.data().len().max(1));
    let ms = x.data().iter().fold(S::zero(), |a, &v| a + v * v) / n;
    let rms = (ms + S::lit(1e-12)).sqrt();
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v /= rms);
    (y, rms)
}

fn rms_normalize_backward<S: Scalar>(y: &Tensor<S>, rms: S, dy: &Tensor<S>) -> Tensor<S> {
    let n = S::from_usize_lossy(y.data().len().max(1));
    let dot = y.data().iter().zip(dy.data()).fold(S::zero(), |a, (&u, &d)| a + u * d) / n;
    let mut dx = dy.clone();
    dx.data_mut()
        .iter_mut()
        .zip(y.data())
        .for_each(|(d, &u)| *d = (*d - u * dot) / rms);
    dx
}

/// GCN over one pathway, then `[mean of segment rows, mean of attention
/// outputs]`.
fn pool<S: Scalar>(
    gcn: &EgoGcn<S>,
    attention: &MultiHeadAttention<S>,
    segments: &Tensor<S>,
    ego: &Tensor<S>,
    queries: &Tensor<S>,
) -> Result<([Tensor<S>; 2], Pooled<S>)> {
    let n = segments.rows();
    let (y, gcache) = gcn.forward(segments, ego)?;
    let seg_rows = y.slice_rows(0, n);
    let avg = seg_rows.mean_rows();
    let (att, acache) = attention.forward(queries, &seg_rows)?;
    Ok((
        [avg, att.mean_rows()],
        Pooled {
            gcn: gcache,
            attention: acache,
            segments: n,
            ego: ego.rows(),
            queries: queries.rows(),
        },
    ))
}

/// Returns the gradient with respect to the pathway's segment features.
fn unpool<S: Scalar>(
    gcn: &EgoGcn<S>,
    attention: &MultiHeadAttention<S>,
    cache: &Pooled<S>,
    d_avg: &Tensor<S>,
    d_att: &Tensor<S>,
    grad_gcn: &mut EgoGcn<S>,
    grad_att: &mut MultiHeadAttention<S>,
) -> Tensor<S> {
    let n = cache.segments;
    let inv_q = S::one() / S::from_usize_lossy(cache.queries);
    let mut d_att_rows = Tensor::zeros(&[cache.queries, d_att.cols()]);
    for q in 0..cache.queries {
        for (o, &d) in d_att_rows.row_mut(q).iter_mut().zip(d_att.data()) {
            *o = d * inv_q;
        }
    }
    let (_, mut d_seg) = attention.backward(&cache.attention, &d_att_rows, grad_att);
    let inv_n = S::one() / S::from_usize_lossy(n);
    for r in 0..n {
        for (o, &d) in d_seg.row_mut(r).iter_mut().zip(d_avg.data()) {
            *o += d * inv_n;
        }
    }
    let dy = Tensor::vstack(&[&d_seg, &Tensor::zeros(&[cache.ego, gcn.width()])]).expect("matching widths");
    gcn.backward(&cache.gcn, &dy, grad_gcn).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_module;
    use crate::nn::Module;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn text_distribution_is_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = ModelConfig::toy(8);
        let m = IntentModule::<f64>::text(&cfg, &mut rng).unwrap();
        let x = Tensor::randn(&[48, 8], 1.0, &mut rng);
        let words = Tensor::randn(&[2, 300], 1.0, &mut rng);
        let ego = words.clone().reshape(&[1, 600]).unwrap();
        let (p, _) = m.forward(&x, &ego, &words).unwrap();
        assert_eq!(p.len(), 20);
        assert!(p.iter().all(|&v| v >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn initial_logits_are_spread_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = ModelConfig::toy(16);
        let m = IntentModule::<f64>::visual(&cfg, &mut rng).unwrap();
        let x = Tensor::randn(&[64, 16], 1.0, &mut rng);
        let q = x.select_rows(&[1, 5, 9, 20, 40]);
        let (p, _) = m.forward(&x, &q, &q).unwrap();
        let max = p.iter().cloned().fold(0.0, f64::max);
        // with H around 0.5 the top intent must clear the 0.05 threshold,
        // while a saturated softmax would leave no gradient either
        assert!(max * 0.5 > 0.05 && max < 0.9, "max prob {max}");
    }

    #[test]
    fn symmetric_query_projection_makes_concept_order_irrelevant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = ModelConfig::toy(8);
        let mut m = IntentModule::<f64>::text(&cfg, &mut rng).unwrap();
        // tie the weights seen by the first and second concept
        for gcn in [&mut m.fine_gcn, &mut m.coarse_gcn] {
            let w = &mut gcn.ego_proj.weight;
            for r in 0..300 {
                let top = w.row(r).to_vec();
                w.row_mut(r + 300).copy_from_slice(&top);
            }
        }
        let x = Tensor::randn(&[32, 8], 1.0, &mut rng);
        let a = Tensor::randn(&[1, 300], 1.0, &mut rng);
        let b = Tensor::randn(&[1, 300], 1.0, &mut rng);
        let run = |first: &Tensor<f64>, second: &Tensor<f64>| {
            let words = Tensor::vstack(&[first, second]).unwrap();
            let ego = Tensor::hstack(&[first, second]).unwrap();
            m.forward(&x, &ego, &words).unwrap().0
        };
        let p = run(&a, &b);
        let q = run(&b, &a);
        for (u, v) in p.iter().zip(&q) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_wrong_query_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = ModelConfig::toy(8);
        let m = IntentModule::<f32>::text(&cfg, &mut rng).unwrap();
        let x = Tensor::randn(&[32, 8], 1.0, &mut rng);
        let err = m.forward(&x, &Tensor::zeros(&[1, 599]), &Tensor::zeros(&[2, 300]));
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cfg = ModelConfig::toy(3);
        cfg.pathways.fine = cfg.pathways.fine.with_channels(3);
        cfg.pathways.coarse = cfg.pathways.coarse.with_channels(4);
        cfg.attention_dim = 4;
        cfg.attention_heads = 2;
        cfg.intent_hidden = 5;
        cfg.num_intents = 4;
        let m = IntentModule::<f64>::visual(&cfg, &mut rng).unwrap();
        let x = Tensor::<f64>::randn(&[32, 3], 1.0, &mut rng);
        let q = x.select_rows(&[0, 7, 30]);
        let w = [0.3, -1.0, 0.7, 2.0];
        let r = check_module(
            &m,
            |m| {
                m.forward(&x, &q, &q)
                    .unwrap()
                    .0
                    .iter()
                    .zip(&w)
                    .map(|(a, b)| a * b)
                    .sum()
            },
            |m| {
                let (_, c) = m.forward(&x, &q, &q).unwrap();
                let mut g = m.zeros_like();
                m.backward(&c, &w, &mut g);
                g
            },
            1e-6,
            Some((80, 2)),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
