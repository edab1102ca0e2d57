//! Recovers shot-level features from segment-level features.
//!
//! Every segment becomes a star graph: the segment vertex is linked in both
//! directions to each shot it spans, and the spanned shots are additionally
//! connected by semantic (kNN) and temporal edges. All segments are laid out
//! as one disjoint graph so a single edge convolution handles the video.

use std::ops::Range;

use rand::Rng;

use super::edgeconv::{EdgeConv, EdgeConvCache};
use super::edges::{knn_edges, temporal_edges_from, Edge, Graph};
use crate::error::{Error, Result};
use crate::impl_module;
use crate::nn::Linear;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Semantic neighbours per shot vertex for the fine pathway.
pub const LOCAL_KNN_FINE: usize = 4;
/// Semantic neighbours per shot vertex for the coarse pathway.
pub const LOCAL_KNN_COARSE: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalGraph<S> {
    pub segment_proj: Linear<S>,
    pub shot_proj: Linear<S>,
    pub conv: EdgeConv<S>,
    pub knn: usize,
}

impl_module!(LocalGraph {
    segment_proj,
    shot_proj,
    conv
});

#[derive(Debug)]
pub struct LocalCache<S> {
    segments: Tensor<S>,
    shots: Tensor<S>,
    conv: EdgeConvCache<S>,
    graph: Graph,
}

/// Star + semantic + temporal edges for shots `0..T` and segment vertices
/// `T..T+S`, built from the projected shot features.
pub fn local_edges<S: Scalar>(shot_features: &Tensor<S>, spans: &[Range<usize>], knn: usize) -> Result<Graph> {
    let t = shot_features.rows();
    let mut g = Graph::new(t + spans.len());
    let mut covered = 0;
    for (s, span) in spans.iter().enumerate() {
        if span.is_empty() {
            return Err(Error::GraphIntegrity(format!("segment {s} spans no shots")));
        }
        if span.end > t {
            return Err(Error::GraphIntegrity(format!(
                "segment {s} spans shots {span:?} beyond the {t} available"
            )));
        }
        covered += span.len();
        let seg = t + s;
        g.intent.extend(span.clone().map(|shot| Edge::new(seg, shot)));
        g.intent.extend(span.clone().map(|shot| Edge::new(shot, seg)));
        let rows: Vec<usize> = span.clone().collect();
        g.semantic
            .extend(knn_edges(shot_features, &rows, knn.min(rows.len() - 1)));
        g.temporal.extend(temporal_edges_from(span.start, span.len()));
    }
    if covered != t {
        return Err(Error::GraphIntegrity(format!(
            "segment spans cover {covered} of {t} shots"
        )));
    }
    Ok(g)
}

impl<S: Scalar> LocalGraph<S> {
    pub fn new<R: Rng + ?Sized>(segment_dim: usize, shot_dim: usize, width: usize, knn: usize, rng: &mut R) -> Self {
        LocalGraph {
            segment_proj: Linear::new(segment_dim, width, 1.0, rng),
            shot_proj: Linear::new(shot_dim, width, 1.0, rng),
            conv: EdgeConv::new(width, 0.1, rng),
            knn,
        }
    }

    pub fn width(&self) -> usize {
        self.conv.width()
    }

    /// `segments: [S, c]`, `shots: [T, d]` → `[T, width]`.
    pub fn forward(
        &self,
        segments: &Tensor<S>,
        spans: &[Range<usize>],
        shots: &Tensor<S>,
    ) -> Result<(Tensor<S>, LocalCache<S>)> {
        if spans.len() != segments.rows() {
            return Err(Error::GraphIntegrity(format!(
                "{} span maps for {} segments",
                spans.len(),
                segments.rows()
            )));
        }
        let shot_feat = self.shot_proj.forward(shots)?;
        let seg_feat = self.segment_proj.forward(segments)?;
        let graph = local_edges(&shot_feat, spans, self.knn)?;
        let x = Tensor::vstack(&[&shot_feat, &seg_feat])?;
        let (y, conv) = self.conv.forward(&x, &graph)?;
        let t = shots.rows();
        Ok((
            y.slice_rows(0, t),
            LocalCache {
                segments: segments.clone(),
                shots: shots.clone(),
                conv,
                graph,
            },
        ))
    }

    /// Returns `(d_segments, d_shots)`.
    pub fn backward(&self, cache: &LocalCache<S>, dy: &Tensor<S>, grad: &mut LocalGraph<S>) -> (Tensor<S>, Tensor<S>) {
        let t = cache.shots.rows();
        let s = cache.segments.rows();
        let padded = Tensor::vstack(&[dy, &Tensor::zeros(&[s, self.width()])]).expect("matching widths");
        let dx = self.conv.backward(&cache.conv, &padded, &mut grad.conv);
        let d_shot_feat = dx.slice_rows(0, t);
        let d_seg_feat = dx.slice_rows(t, t + s);
        let d_shots = self.shot_proj.backward(&cache.shots, &d_shot_feat, &mut grad.shot_proj);
        let d_segments = self
            .segment_proj
            .backward(&cache.segments, &d_seg_feat, &mut grad.segment_proj);
        (d_segments, d_shots)
    }

    pub fn graph<'a>(&self, cache: &'a LocalCache<S>) -> &'a Graph {
        &cache.graph
    }
}
