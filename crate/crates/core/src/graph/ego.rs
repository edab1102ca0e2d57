//! Ego-graphs: segment vertices plus one or more ego (intent/query) vertices,
//! processed by a stack of dynamic edge-convolution layers.

use rand::Rng;

use super::edgeconv::{EdgeConv, EdgeConvCache};
use super::edges::{knn_edges, temporal_edges, Edge, Graph};
use crate::error::{Error, Result};
use crate::impl_module;
use crate::nn::Linear;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default number of semantic neighbours per segment vertex.
pub const SEGMENT_KNN: usize = 8;

#[derive(Debug, Clone)]
pub struct EgoGraph<S> {
    /// Segment rows `0..num_segments`, followed by the projected ego rows.
    pub features: Tensor<S>,
    pub num_segments: usize,
    pub num_ego: usize,
    pub graph: Graph,
}

impl<S: Scalar> EgoGraph<S> {
    pub fn segment_rows(&self) -> Vec<usize> {
        (0..self.num_segments).collect()
    }
}

/// Intent and temporal edges, which depend only on the vertex counts.
fn structural_edges(n: usize, m: usize) -> Graph {
    let mut g = Graph::new(n + m);
    for e in 0..m {
        g.intent.extend((0..n).map(|i| Edge::new(n + e, i)));
    }
    for e in 0..m {
        g.intent.extend((0..n).map(|i| Edge::new(i, n + e)));
    }
    g.temporal = temporal_edges(n);
    g
}

/// Semantic edges recomputed from the current segment features; `k` is
/// clamped to `n - 1` so that short videos still form a graph.
fn with_semantic<S: Scalar>(base: &Graph, x: &Tensor<S>, n: usize, k: usize) -> Graph {
    let mut g = base.clone();
    let rows: Vec<usize> = (0..n).collect();
    g.semantic = knn_edges(x, &rows, k.min(n.saturating_sub(1)));
    g
}

/// Builds the ego-graph for already-projected ego features (`ego: [M, c]`).
///
/// Requires at least two segments and `1 <= k < N`.
pub fn build_ego_graph<S: Scalar>(segments: &Tensor<S>, ego: &Tensor<S>, k: usize) -> Result<EgoGraph<S>> {
    let n = segments.rows();
    if n < 2 {
        return Err(Error::Input(format!("ego graph needs at least 2 segments, got {n}")));
    }
    if k == 0 || k >= n {
        return Err(Error::Config(format!(
            "semantic edges need 1 <= K < N, got K={k} with N={n}"
        )));
    }
    if ego.cols() != segments.cols() {
        return Err(Error::dim("ego_graph", &[ego.rows(), segments.cols()], ego.shape()));
    }
    let features = Tensor::vstack(&[segments, ego])?;
    let base = structural_edges(n, ego.rows());
    let graph = with_semantic(&base, &features, n, k);
    Ok(EgoGraph {
        features,
        num_segments: n,
        num_ego: ego.rows(),
        graph,
    })
}

/// One GCN layer: two edge-convolution sub-layers sharing one graph. Each
/// sub-layer is residual, so the composite carries an identity path from
/// the layer input to its output.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer<S> {
    pub first: EdgeConv<S>,
    pub second: EdgeConv<S>,
}

impl_module!(GcnLayer { first, second });

/// Ego projection followed by a stack of [`GcnLayer`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoGcn<S> {
    pub ego_proj: Linear<S>,
    pub layers: Vec<GcnLayer<S>>,
    pub knn: usize,
}

impl_module!(EgoGcn { ego_proj, layers });

#[derive(Debug)]
pub struct EgoGcnCache<S> {
    ego_raw: Tensor<S>,
    num_segments: usize,
    graphs: Vec<Graph>,
    convs: Vec<(EdgeConvCache<S>, EdgeConvCache<S>)>,
}

impl<S: Scalar> EgoGcn<S> {
    pub fn new<R: Rng + ?Sized>(ego_dim: usize, width: usize, layers: usize, knn: usize, rng: &mut R) -> Result<Self> {
        if layers < 1 {
            return Err(Error::Config("a GCN stack needs at least one layer".into()));
        }
        if knn < 1 {
            return Err(Error::Config("semantic neighbour count must be at least 1".into()));
        }
        // message MLPs start small so the residual path dominates at init
        let gain = 0.1;
        Ok(EgoGcn {
            ego_proj: Linear::new(ego_dim, width, 1.0, rng),
            layers: (0..layers)
                .map(|_| GcnLayer {
                    first: EdgeConv::new(width, gain, rng),
                    second: EdgeConv::new(width, gain, rng),
                })
                .collect(),
            knn,
        })
    }

    pub fn width(&self) -> usize {
        self.ego_proj.output_dim()
    }

    /// `segments: [N, c]`, `ego_raw: [M, e]` → updated `[N + M, c]` features.
    pub fn forward(&self, segments: &Tensor<S>, ego_raw: &Tensor<S>) -> Result<(Tensor<S>, EgoGcnCache<S>)> {
        let n = segments.rows();
        if n == 0 {
            return Err(Error::Input("ego graph needs at least one segment".into()));
        }
        segments.expect_cols("ego_gcn", self.width())?;
        let ego = self.ego_proj.forward(ego_raw)?;
        let mut x = Tensor::vstack(&[segments, &ego])?;
        let base = structural_edges(n, ego.rows());
        let mut graphs = Vec::with_capacity(self.layers.len());
        let mut convs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let g = with_semantic(&base, &x, n, self.knn);
            let (h, c1) = layer.first.forward(&x, &g)?;
            let (y, c2) = layer.second.forward(&h, &g)?;
            x = y;
            graphs.push(g);
            convs.push((c1, c2));
        }
        Ok((
            x,
            EgoGcnCache {
                ego_raw: ego_raw.clone(),
                num_segments: n,
                graphs,
                convs,
            },
        ))
    }

    /// Returns `(d_segments, d_ego_raw)`.
    pub fn backward(&self, cache: &EgoGcnCache<S>, dy: &Tensor<S>, grad: &mut EgoGcn<S>) -> (Tensor<S>, Tensor<S>) {
        let mut d = dy.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (c1, c2) = &cache.convs[i];
            let dh = layer.second.backward(c2, &d, &mut grad.layers[i].second);
            d = layer.first.backward(c1, &dh, &mut grad.layers[i].first);
        }
        let n = cache.num_segments;
        let d_seg = d.slice_rows(0, n);
        let d_ego = d.slice_rows(n, d.rows());
        let d_raw = self.ego_proj.backward(&cache.ego_raw, &d_ego, &mut grad.ego_proj);
        (d_seg, d_raw)
    }

    /// Graphs used by each layer in the last forward pass.
    pub fn graphs<'a>(&self, cache: &'a EgoGcnCache<S>) -> &'a [Graph] {
        &cache.graphs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::edges::EdgeKind;
    use crate::nn::gradcheck::{check_input, check_module};
    use crate::nn::Module;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn edge_counts_single_ego() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let seg = Tensor::<f64>::randn(&[10, 4], 1.0, &mut rng);
        let ego = Tensor::<f64>::randn(&[1, 4], 1.0, &mut rng);
        let g = build_ego_graph(&seg, &ego, 8).unwrap();
        assert_eq!(g.graph.semantic.len(), 10 * 8);
        assert_eq!(g.graph.temporal.len(), 2 * 9);
        assert_eq!(g.graph.intent.len(), 2 * 10);
        let into_ego = g.graph.intent.iter().filter(|e| e.dst == 10).count();
        let into_segments = g.graph.intent.iter().filter(|e| e.dst < 10).count();
        assert_eq!((into_ego, into_segments), (10, 10));
        g.graph.validate().unwrap();
    }

    #[test]
    fn five_ego_vertices() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seg = Tensor::<f64>::randn(&[6, 3], 1.0, &mut rng);
        let ego = Tensor::<f64>::randn(&[5, 3], 1.0, &mut rng);
        let g = build_ego_graph(&seg, &ego, 2).unwrap();
        for i in 0..6 {
            let n = g.graph.edges(EdgeKind::Intent).iter().filter(|e| e.dst == i).count();
            assert_eq!(n, 5);
        }
        assert_eq!(g.graph.intent.len(), 2 * 6 * 5);
    }

    #[test]
    fn input_errors() {
        let seg = Tensor::<f64>::zeros(&[1, 3]);
        let ego = Tensor::<f64>::zeros(&[1, 3]);
        assert!(matches!(build_ego_graph(&seg, &ego, 1), Err(Error::Input(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            EgoGcn::<f64>::new(3, 3, 0, 8, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_weight_layer_preserves_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut gcn = EgoGcn::<f64>::new(3, 3, 1, 2, &mut rng).unwrap();
        let proj = gcn.ego_proj.clone();
        gcn.zero_grad();
        gcn.ego_proj = proj.clone();
        let seg = Tensor::<f64>::randn(&[5, 3], 1.0, &mut rng);
        let ego = Tensor::<f64>::randn(&[1, 3], 1.0, &mut rng);
        let (y, _) = gcn.forward(&seg, &ego).unwrap();
        let expect = Tensor::vstack(&[&seg, &proj.forward(&ego).unwrap()]).unwrap();
        assert_eq!(y, expect);
    }

    #[test]
    fn deterministic_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gcn = EgoGcn::<f64>::new(2, 4, 2, 3, &mut rng).unwrap();
        let seg = Tensor::<f64>::randn(&[7, 4], 1.0, &mut rng);
        let ego = Tensor::<f64>::randn(&[1, 2], 1.0, &mut rng);
        let (a, ca) = gcn.forward(&seg, &ego).unwrap();
        let (b, cb) = gcn.forward(&seg, &ego).unwrap();
        assert_eq!(a, b);
        assert_eq!(gcn.graphs(&ca), gcn.graphs(&cb));
    }

    #[test]
    fn permutation_equivariance_without_temporal_edges() {
        // Temporal edges encode order, so the property is checked on a stack
        // whose temporal MLPs are zero.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut gcn = EgoGcn::<f64>::new(3, 4, 2, 3, &mut rng).unwrap();
        for l in &mut gcn.layers {
            l.first.temporal.zero_grad();
            l.second.temporal.zero_grad();
        }
        let seg = Tensor::<f64>::randn(&[8, 4], 1.0, &mut rng);
        let ego = Tensor::<f64>::randn(&[1, 3], 1.0, &mut rng);
        let perm = [3usize, 7, 0, 5, 1, 6, 2, 4];
        let seg_p = seg.select_rows(&perm);
        let (y, _) = gcn.forward(&seg, &ego).unwrap();
        let (yp, _) = gcn.forward(&seg_p, &ego).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            for ch in 0..4 {
                assert!((yp.at(new, ch) - y.at(old, ch)).abs() < 1e-10);
            }
        }
        for ch in 0..4 {
            assert!((yp.at(8, ch) - y.at(8, ch)).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_through_stack() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let gcn = EgoGcn::<f64>::new(3, 4, 2, 2, &mut rng).unwrap();
        let seg = Tensor::<f64>::randn(&[6, 4], 1.0, &mut rng);
        let ego = Tensor::<f64>::randn(&[2, 3], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(&[8, 4], 1.0, &mut rng);
        let dot = |y: &Tensor<f64>| y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>();
        let r = check_module(
            &gcn,
            |m| dot(&m.forward(&seg, &ego).unwrap().0),
            |m| {
                let (_, c) = m.forward(&seg, &ego).unwrap();
                let mut g = m.zeros_like();
                m.backward(&c, &w, &mut g);
                g
            },
            1e-6,
            None,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
        let r = check_input(
            &ego,
            |e| dot(&gcn.forward(&seg, e).unwrap().0),
            |e| {
                let (_, c) = gcn.forward(&seg, e).unwrap();
                gcn.backward(&c, &w, &mut gcn.zeros_like()).1
            },
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }
}
