use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Directed edge `src → dst`; messages flow from `src` into `dst`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
}

impl Edge {
    pub fn new(src: usize, dst: usize) -> Self {
        Edge { src, dst }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    /// Ego vertex ↔ segment (or segment ↔ shot in a local graph).
    Intent,
    Semantic,
    Temporal,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 3] = [EdgeKind::Intent, EdgeKind::Semantic, EdgeKind::Temporal];
}

/// Three typed edge lists over `num_vertices` vertices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Graph {
    pub num_vertices: usize,
    pub intent: Vec<Edge>,
    pub semantic: Vec<Edge>,
    pub temporal: Vec<Edge>,
}

impl Graph {
    pub fn new(num_vertices: usize) -> Self {
        Graph {
            num_vertices,
            ..Default::default()
        }
    }

    pub fn edges(&self, kind: EdgeKind) -> &[Edge] {
        match kind {
            EdgeKind::Intent => &self.intent,
            EdgeKind::Semantic => &self.semantic,
            EdgeKind::Temporal => &self.temporal,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.intent.len() + self.semantic.len() + self.temporal.len()
    }

    /// Rejects dangling indices and self-loops.
    pub fn validate(&self) -> Result<()> {
        for kind in EdgeKind::ALL {
            for e in self.edges(kind) {
                if e.src >= self.num_vertices || e.dst >= self.num_vertices {
                    return Err(Error::GraphIntegrity(format!(
                        "{kind:?} edge {}→{} references a vertex outside 0..{}",
                        e.src, e.dst, self.num_vertices
                    )));
                }
                if e.src == e.dst {
                    return Err(Error::GraphIntegrity(format!("{kind:?} self-loop at vertex {}", e.src)));
                }
            }
        }
        Ok(())
    }

    /// In-neighbour lists per vertex, preserving edge-list order.
    pub(crate) fn incoming(&self, kind: EdgeKind) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_vertices];
        for e in self.edges(kind) {
            adj[e.dst].push(e.src);
        }
        adj
    }
}

fn squared_distance<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// k-nearest-neighbour edges among the listed rows of `x`. For every centre
/// the `k` closest other rows (Euclidean, ties → lower index) each get an
/// edge `neighbour → centre`. Vertex ids are the row indices themselves.
pub fn knn_edges<S: Scalar>(x: &Tensor<S>, rows: &[usize], k: usize) -> Vec<Edge> {
    let mut edges = Vec::with_capacity(rows.len() * k);
    let mut cand: Vec<(S, usize)> = Vec::with_capacity(rows.len());
    for &i in rows {
        cand.clear();
        cand.extend(
            rows.iter()
                .filter(|&&j| j != i)
                .map(|&j| (squared_distance(x.row(i), x.row(j)), j)),
        );
        cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        edges.extend(cand.iter().take(k).map(|&(_, j)| Edge::new(j, i)));
    }
    edges
}

/// Semantic edges over all rows of `x`: exactly `k` incoming edges per vertex.
pub fn semantic_edges<S: Scalar>(x: &Tensor<S>, k: usize) -> Result<Vec<Edge>> {
    let n = x.rows();
    if k == 0 || k >= n {
        return Err(Error::Config(format!(
            "semantic edges need 1 <= K < N, got K={k} with N={n}"
        )));
    }
    let rows: Vec<usize> = (0..n).collect();
    Ok(knn_edges(x, &rows, k))
}

/// Bidirectional temporal path over vertices `offset..offset+n`: all
/// forward edges first, then all backward edges.
pub fn temporal_edges_from(offset: usize, n: usize) -> Vec<Edge> {
    let fwd = (0..n.saturating_sub(1)).map(|t| Edge::new(offset + t, offset + t + 1));
    let bwd = (1..n).map(|t| Edge::new(offset + t, offset + t - 1));
    fwd.chain(bwd).collect()
}

pub fn temporal_edges(n: usize) -> Vec<Edge> {
    temporal_edges_from(0, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    #[test]
    fn collinear_nearest_points() {
        let x = Tensor::<f64>::from_f64(&[3, 1], &[0.0, 1.0, 10.0]).unwrap();
        let e = semantic_edges(&x, 1).unwrap();
        assert_eq!(e, vec![Edge::new(1, 0), Edge::new(0, 1), Edge::new(1, 2)]);
    }

    #[test]
    fn k_must_be_below_n() {
        let x = Tensor::<f64>::zeros(&[3, 2]);
        assert!(matches!(semantic_edges(&x, 3), Err(Error::Config(_))));
        assert!(matches!(semantic_edges(&x, 0), Err(Error::Config(_))));
    }

    #[test]
    fn ties_break_to_lower_index() {
        let x = Tensor::<f64>::from_f64(&[4, 1], &[0.0, 1.0, -1.0, 1.0]).unwrap();
        let e = semantic_edges(&x, 2).unwrap();
        assert_eq!(&e[0..2], &[Edge::new(1, 0), Edge::new(2, 0)]);
    }

    #[test]
    fn knn_matches_brute_force_all_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Tensor::<f64>::randn(&[20, 5], 1.0, &mut rng);
        let k = 8;
        let e = semantic_edges(&x, k).unwrap();
        // oracle: full distance matrix, sort each row independently
        for i in 0..20 {
            let mut d: Vec<(f64, usize)> = (0..20)
                .filter(|&j| j != i)
                .map(|j| {
                    let s: f64 = (0..5).map(|c| (x.at(i, c) - x.at(j, c)).powi(2)).sum();
                    (s.sqrt(), j)
                })
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let expect: BTreeSet<usize> = d[..k].iter().map(|p| p.1).collect();
            let got: BTreeSet<usize> = e.iter().filter(|e| e.dst == i).map(|e| e.src).collect();
            assert_eq!(expect, got, "vertex {i}");
        }
    }

    #[test]
    fn temporal_examples() {
        assert!(temporal_edges(1).is_empty());
        assert_eq!(
            temporal_edges(3),
            vec![Edge::new(0, 1), Edge::new(1, 2), Edge::new(1, 0), Edge::new(2, 1)]
        );
        assert_eq!(temporal_edges(64).len(), 126);
    }

    #[test]
    fn validate_catches_dangling_and_loops() {
        let mut g = Graph::new(2);
        g.temporal.push(Edge::new(0, 2));
        assert!(matches!(g.validate(), Err(Error::GraphIntegrity(_))));
        let mut g = Graph::new(2);
        g.semantic.push(Edge::new(1, 1));
        assert!(matches!(g.validate(), Err(Error::GraphIntegrity(_))));
    }

    proptest! {
        #[test]
        fn knn_in_degree_is_k(n in 2usize..15, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::<f64>::randn(&[n, 3], 1.0, &mut rng);
            let k = 1 + (seed as usize) % (n - 1);
            let e = semantic_edges(&x, k).unwrap();
            prop_assert_eq!(e.len(), n * k);
            for i in 0..n {
                prop_assert_eq!(e.iter().filter(|e| e.dst == i).count(), k);
            }
            prop_assert!(e.iter().all(|e| e.src != e.dst));
        }
    }
}
