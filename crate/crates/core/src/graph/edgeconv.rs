//! Typed edge convolution with max aggregation and a residual connection:
//!
//! ```text
//! x'_i = x_i + Σ_τ max_{j → i ∈ E_τ} relu(W_τ [x_i ‖ x_j − x_i] + b_τ)
//! ```
//!
//! Vertices without incoming edges of type τ receive nothing from τ.

use rand::Rng;

use super::edges::{EdgeKind, Graph};
use crate::error::{Error, Result};
use crate::impl_module;
use crate::nn::Linear;
use crate::scalar::Scalar;
use crate::tensor::{gemm_into, Tensor};

const NONE: usize = usize::MAX;

/// One message MLP (`[2c] → [c]`, ReLU) per edge type.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeConv<S> {
    pub intent: Linear<S>,
    pub semantic: Linear<S>,
    pub temporal: Linear<S>,
}

impl_module!(EdgeConv {
    intent,
    semantic,
    temporal
});

#[derive(Debug)]
pub struct EdgeConvCache<S> {
    x: Tensor<S>,
    /// Per edge type: winning source vertex per `(vertex, channel)`, or `NONE`
    /// when the type delivers no positive message there.
    argmax: [Vec<usize>; 3],
}

impl<S: Scalar> EdgeConv<S> {
    pub fn new<R: Rng + ?Sized>(width: usize, gain: f64, rng: &mut R) -> Self {
        EdgeConv {
            intent: Linear::new(2 * width, width, gain, rng),
            semantic: Linear::new(2 * width, width, gain, rng),
            temporal: Linear::new(2 * width, width, gain, rng),
        }
    }

    pub fn width(&self) -> usize {
        self.intent.output_dim()
    }

    pub fn mlp(&self, kind: EdgeKind) -> &Linear<S> {
        match kind {
            EdgeKind::Intent => &self.intent,
            EdgeKind::Semantic => &self.semantic,
            EdgeKind::Temporal => &self.temporal,
        }
    }

    pub fn mlp_mut(&mut self, kind: EdgeKind) -> &mut Linear<S> {
        match kind {
            EdgeKind::Intent => &mut self.intent,
            EdgeKind::Semantic => &mut self.semantic,
            EdgeKind::Temporal => &mut self.temporal,
        }
    }

    pub fn forward(&self, x: &Tensor<S>, graph: &Graph) -> Result<(Tensor<S>, EdgeConvCache<S>)> {
        let c = self.width();
        let v = x.rows();
        if x.shape().len() != 2 || x.cols() != c {
            return Err(Error::dim("edge_conv", &[v, c], x.shape()));
        }
        if graph.num_vertices != v {
            return Err(Error::GraphIntegrity(format!(
                "graph has {} vertices but features have {v} rows",
                graph.num_vertices
            )));
        }
        graph.validate()?;
        let mut y = x.clone();
        let mut argmax: [Vec<usize>; 3] = Default::default();
        for (slot, kind) in EdgeKind::ALL.into_iter().enumerate() {
            let lin = self.mlp(kind);
            let w = lin.weight.data();
            let (top, bottom) = w.split_at(c * c);
            // centre term C = x·(W_top − W_bot) + b, neighbour term B = x·W_bot
            let mut center = Tensor::zeros(&[v, c]);
            let mut neigh = Tensor::zeros(&[v, c]);
            gemm_into(v, c, c, x.data(), false, top, false, center.data_mut(), false);
            gemm_into(v, c, c, x.data(), false, bottom, false, neigh.data_mut(), false);
            for i in 0..v {
                let nr = neigh.row(i).to_vec();
                for ((cv, &nb), &b) in center.row_mut(i).iter_mut().zip(&nr).zip(lin.bias.data()) {
                    *cv = *cv - nb + b;
                }
            }
            let incoming = graph.incoming(kind);
            let mut arg = vec![NONE; v * c];
            for (i, srcs) in incoming.iter().enumerate() {
                if srcs.is_empty() {
                    continue;
                }
                let ci = center.row(i);
                let yi = y.row_mut(i);
                for ch in 0..c {
                    let mut best = S::zero();
                    let mut who = NONE;
                    for &j in srcs {
                        let pre = ci[ch] + neigh.at(j, ch);
                        if pre > best {
                            best = pre;
                            who = j;
                        }
                    }
                    if who != NONE {
                        yi[ch] += best;
                        arg[i * c + ch] = who;
                    }
                }
            }
            argmax[slot] = arg;
        }
        Ok((y, EdgeConvCache { x: x.clone(), argmax }))
    }

    /// Gradient through the features with the graph held fixed.
    pub fn backward(&self, cache: &EdgeConvCache<S>, dy: &Tensor<S>, grad: &mut EdgeConv<S>) -> Tensor<S> {
        let c = self.width();
        let x = &cache.x;
        let v = x.rows();
        let mut dx = dy.clone();
        for (slot, kind) in EdgeKind::ALL.into_iter().enumerate() {
            let arg = &cache.argmax[slot];
            let mut d_center = Tensor::zeros(&[v, c]);
            let mut d_neigh = Tensor::zeros(&[v, c]);
            let mut any = false;
            for i in 0..v {
                for ch in 0..c {
                    let j = arg[i * c + ch];
                    if j != NONE {
                        let g = dy.at(i, ch);
                        d_center.row_mut(i)[ch] += g;
                        d_neigh.row_mut(j)[ch] += g;
                        any = true;
                    }
                }
            }
            if !any {
                continue;
            }
            // pre = x_i·W_top + (x_j − x_i)·W_bot + b
            //   ⇒ dW_top = xᵀ dC, dW_bot = xᵀ (dB − dC), db = Σ dC
            let mut d_bottom = d_neigh;
            for (b, &cv) in d_bottom.data_mut().iter_mut().zip(d_center.data()) {
                *b -= cv;
            }
            let lin = self.mlp(kind);
            let (top, bottom) = lin.weight.data().split_at(c * c);
            let g = grad.mlp_mut(kind);
            {
                let (gt, gb) = g.weight.data_mut().split_at_mut(c * c);
                gemm_into(c, v, c, x.data(), true, d_center.data(), false, gt, true);
                gemm_into(c, v, c, x.data(), true, d_bottom.data(), false, gb, true);
            }
            for i in 0..v {
                for (gb, &d) in g.bias.data_mut().iter_mut().zip(d_center.row(i)) {
                    *gb += d;
                }
            }
            gemm_into(v, c, c, d_center.data(), false, top, true, dx.data_mut(), true);
            gemm_into(v, c, c, d_bottom.data(), false, bottom, true, dx.data_mut(), true);
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::edges::{semantic_edges, temporal_edges, Edge};
    use crate::nn::gradcheck::{check_input, check_module};
    use crate::nn::Module;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct re-implementation that evaluates the message MLP on the
    /// concatenated `[x_i ‖ x_j − x_i]` for every edge.
    fn dense_oracle(conv: &EdgeConv<f64>, x: &Tensor<f64>, g: &Graph) -> Tensor<f64> {
        let c = conv.width();
        let mut y = x.clone();
        for kind in EdgeKind::ALL {
            let lin = conv.mlp(kind);
            let mut best: Vec<Option<Vec<f64>>> = vec![None; x.rows()];
            for e in g.edges(kind) {
                let mut input = x.row(e.dst).to_vec();
                input.extend(x.row(e.src).iter().zip(x.row(e.dst)).map(|(a, b)| a - b));
                let inp = Tensor::from_vec(&[1, 2 * c], input).unwrap();
                let msg: Vec<f64> = lin.forward(&inp).unwrap().data().iter().map(|v| v.max(0.0)).collect();
                let slot = &mut best[e.dst];
                match slot {
                    None => *slot = Some(msg),
                    Some(b) => b.iter_mut().zip(&msg).for_each(|(a, m)| *a = a.max(*m)),
                }
            }
            for (i, b) in best.into_iter().enumerate() {
                if let Some(b) = b {
                    y.row_mut(i).iter_mut().zip(b).for_each(|(a, m)| *a += m);
                }
            }
        }
        y
    }

    fn random_graph(x: &Tensor<f64>) -> Graph {
        let n = x.rows() - 1;
        let seg = x.slice_rows(0, n);
        let mut g = Graph::new(n + 1);
        g.semantic = semantic_edges(&seg, 2).unwrap();
        g.temporal = temporal_edges(n);
        for i in 0..n {
            g.intent.push(Edge::new(n, i));
            g.intent.push(Edge::new(i, n));
        }
        g
    }

    #[test]
    fn matches_dense_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let conv = EdgeConv::<f64>::new(4, 1.0, &mut rng);
        let mut conv = conv;
        for kind in EdgeKind::ALL {
            conv.mlp_mut(kind).bias = Tensor::randn(&[4], 0.3, &mut rng);
        }
        let x = Tensor::<f64>::randn(&[7, 4], 1.0, &mut rng);
        let g = random_graph(&x);
        let (y, _) = conv.forward(&x, &g).unwrap();
        let expect = dense_oracle(&conv, &x, &g);
        for (a, b) in y.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_weights_are_pure_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = EdgeConv::<f64>::new(3, 1.0, &mut rng).zeros_like();
        let x = Tensor::<f64>::randn(&[5, 3], 1.0, &mut rng);
        let (y, _) = conv.forward(&x, &random_graph(&x)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn single_neighbour_message() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = EdgeConv::<f64>::new(3, 1.0, &mut rng);
        let x = Tensor::<f64>::randn(&[2, 3], 1.0, &mut rng);
        let mut g = Graph::new(2);
        g.temporal.push(Edge::new(0, 1));
        let (y, _) = conv.forward(&x, &g).unwrap();
        let mut input = x.row(1).to_vec();
        input.extend(x.row(0).iter().zip(x.row(1)).map(|(a, b)| a - b));
        let msg = conv
            .temporal
            .forward(&Tensor::from_vec(&[1, 6], input).unwrap())
            .unwrap();
        for ch in 0..3 {
            assert!((y.at(1, ch) - x.at(1, ch) - msg.data()[ch].max(0.0)).abs() < 1e-12);
            assert_eq!(y.at(0, ch), x.at(0, ch));
        }
    }

    #[test]
    fn dangling_edge_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = EdgeConv::<f64>::new(2, 1.0, &mut rng);
        let mut g = Graph::new(3);
        g.semantic.push(Edge::new(5, 0));
        let err = conv.forward(&Tensor::zeros(&[3, 2]), &g).unwrap_err();
        assert!(matches!(err, Error::GraphIntegrity(_)));
    }

    #[test]
    fn gradient_with_frozen_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut conv = EdgeConv::<f64>::new(4, 1.0, &mut rng);
        for kind in EdgeKind::ALL {
            conv.mlp_mut(kind).bias = Tensor::randn(&[4], 0.3, &mut rng);
        }
        let x = Tensor::<f64>::randn(&[6, 4], 1.0, &mut rng);
        let g = random_graph(&x);
        let w = Tensor::<f64>::randn(&[6, 4], 1.0, &mut rng);
        let dot = |y: &Tensor<f64>| y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>();
        let r = check_module(
            &conv,
            |m| dot(&m.forward(&x, &g).unwrap().0),
            |m| {
                let (_, c) = m.forward(&x, &g).unwrap();
                let mut gr = m.zeros_like();
                m.backward(&c, &w, &mut gr);
                gr
            },
            1e-6,
            None,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "params {r:?}");
        let r = check_input(
            &x,
            |x| dot(&conv.forward(x, &g).unwrap().0),
            |x| {
                let (_, c) = conv.forward(x, &g).unwrap();
                conv.backward(&c, &w, &mut conv.zeros_like())
            },
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "input {r:?}");
    }
}
