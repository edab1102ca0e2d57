//! Visual query generation: the most central shots of a ground-truth summary
//! under the pairwise semantic-IOU graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{semantic_iou, TagSet};

pub const DEFAULT_QUERY_SHOTS: usize = 5;
pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 1000;
/// Weight given to components other than the dominant one.
pub const MINOR_COMPONENT_SCALE: f64 = 1e-6;
/// Centralities are compared on this grid so that shots with identical tag
/// sets tie exactly despite rounding in the iteration.
pub const RANK_RESOLUTION: f64 = 1e-8;

/// Centrality snapped to the ranking grid.
pub fn rank_key(c: f64) -> i64 {
    (c / RANK_RESOLUTION).round() as i64
}

/// Undirected graph as a dense symmetric weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedGraph {
    pub n: usize,
    /// Row-major `n × n`.
    pub weights: Vec<f64>,
}

impl WeightedGraph {
    pub fn new(n: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != n * n {
            return Err(Error::dim("weighted graph", &[n, n], &[weights.len()]));
        }
        let g = WeightedGraph { n, weights };
        for i in 0..n {
            if g.w(i, i) != 0.0 {
                return Err(Error::Input(format!("vertex {i} has a self-loop")));
            }
            for j in 0..n {
                let v = g.w(i, j);
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::Input(format!(
                        "weight ({i},{j}) = {v} is not a finite nonnegative number"
                    )));
                }
                if v != g.w(j, i) {
                    return Err(Error::Input(format!("weights ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        Ok(g)
    }

    pub fn w(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    /// Connected components over positive-weight edges, each sorted, ordered
    /// by smallest vertex.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut label = vec![usize::MAX; self.n];
        let mut out = Vec::new();
        for start in 0..self.n {
            if label[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = vec![start];
            label[start] = id;
            let mut head = 0;
            while head < members.len() {
                let v = members[head];
                head += 1;
                for (u, l) in label.iter_mut().enumerate() {
                    if *l == usize::MAX && self.w(v, u) > 0.0 {
                        *l = id;
                        members.push(u);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }
}

/// Pairwise IOU between the tag sets of the summary shots.
pub fn pairwise_iou_graph(summary: &[usize], tags: &[TagSet]) -> Result<WeightedGraph> {
    if summary.len() < 2 {
        return Err(Error::Input(format!(
            "an IOU graph needs at least 2 shots, got {}",
            summary.len()
        )));
    }
    if let Some(&bad) = summary.iter().find(|&&s| s >= tags.len()) {
        return Err(Error::Input(format!("summary shot {bad} is outside 0..{}", tags.len())));
    }
    let n = summary.len();
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = semantic_iou(&tags[summary[i]], &tags[summary[j]]);
            w[i * n + j] = v;
            w[j * n + i] = v;
        }
    }
    WeightedGraph::new(n, w)
}

/// Power iteration on one connected component, shifted by the largest
/// weight so that bipartite components do not oscillate. Returns the unit
/// vector and its Rayleigh quotient under the unshifted matrix.
fn component_centrality(g: &WeightedGraph, members: &[usize], tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64)> {
    let m = members.len();
    let shift = members
        .iter()
        .flat_map(|&i| members.iter().map(move |&j| g.w(i, j)))
        .fold(0.0, f64::max);
    let mut x = vec![1.0 / (m as f64).sqrt(); m];
    let mut next = vec![0.0; m];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        for (a, &i) in members.iter().enumerate() {
            next[a] = shift * x[a] + members.iter().zip(&x).map(|(&j, &xj)| g.w(i, j) * xj).sum::<f64>();
        }
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        next.iter_mut().for_each(|v| *v /= norm);
        residual = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut x, &mut next);
        if residual < tol {
            let lambda = members
                .iter()
                .enumerate()
                .map(|(a, &i)| x[a] * members.iter().zip(&x).map(|(&j, &xj)| g.w(i, j) * xj).sum::<f64>())
                .sum();
            return Ok((x, lambda));
        }
    }
    Err(Error::IterationLimit {
        iterations: max_iter,
        residual,
    })
}

/// Eigenvector centrality: nonnegative, unit Euclidean norm. Components
/// other than the one with the largest spectral radius (ties to the
/// component holding the lowest vertex) are scaled by
/// [`MINOR_COMPONENT_SCALE`]; isolated vertices get 0.
pub fn eigenvector_centrality(g: &WeightedGraph, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    if !g.weights.iter().any(|&v| v > 0.0) {
        return Err(Error::DegenerateGraph);
    }
    let mut parts = Vec::new();
    for members in g.components() {
        if members.len() < 2 {
            continue;
        }
        let (x, lambda) = component_centrality(g, &members, tol, max_iter)?;
        parts.push((members, x, lambda));
    }
    let dominant = parts
        .iter()
        .enumerate()
        .fold(0, |best, (i, p)| if p.2 > parts[best].2 { i } else { best });
    let mut out = vec![0.0; g.n];
    for (c, (members, x, _)) in parts.iter().enumerate() {
        let scale = if c == dominant { 1.0 } else { MINOR_COMPONENT_SCALE };
        for (&v, &xv) in members.iter().zip(x) {
            out[v] = scale * xv;
        }
    }
    if parts.len() > 1 {
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(out)
}

/// The `k` summary shots with the highest centrality, most central first,
/// ties to the lower shot index.
pub fn generate_visual_query(summary: &[usize], tags: &[TagSet], k: usize) -> Result<Vec<usize>> {
    let mut shots = summary.to_vec();
    shots.sort_unstable();
    shots.dedup();
    if k == 0 || shots.len() < k {
        return Err(Error::Input(format!(
            "a {k}-shot query needs a summary of at least {k} distinct shots, got {}",
            shots.len()
        )));
    }
    let g = pairwise_iou_graph(&shots, tags)?;
    let c = eigenvector_centrality(&g, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER)?;
    let mut order: Vec<usize> = (0..shots.len()).collect();
    order.sort_by(|&a, &b| rank_key(c[b]).cmp(&rank_key(c[a])).then(shots[a].cmp(&shots[b])));
    Ok(order.into_iter().take(k).map(|i| shots[i]).collect())
}
