use rand::Rng;

use crate::error::{Error, Result};
use crate::impl_module;
use crate::nn::{softmax_slice, Linear};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Multi-head scaled dot-product attention with separate query and
/// key/value input widths. Output width is `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention<S> {
    pub wq: Linear<S>,
    pub wk: Linear<S>,
    pub wv: Linear<S>,
    pub wo: Linear<S>,
    pub heads: usize,
}

impl_module!(MultiHeadAttention { wq, wk, wv, wo });

#[derive(Debug)]
pub struct AttentionCache<S> {
    queries: Tensor<S>,
    kv: Tensor<S>,
    q: Tensor<S>,
    k: Tensor<S>,
    v: Tensor<S>,
    /// `[heads][Q][N]` attention weights.
    weights: Vec<Tensor<S>>,
    concat: Tensor<S>,
}

impl<S: Scalar> MultiHeadAttention<S> {
    pub fn new<R: Rng + ?Sized>(
        query_dim: usize,
        kv_dim: usize,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "attention width {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            wq: Linear::new(query_dim, dim, 1.0, rng),
            wk: Linear::new(kv_dim, dim, 1.0, rng),
            wv: Linear::new(kv_dim, dim, 1.0, rng),
            wo: Linear::new(dim, dim, 1.0, rng),
            heads,
        })
    }

    pub fn dim(&self) -> usize {
        self.wo.output_dim()
    }

    /// `queries: [Q, query_dim]`, `kv: [N, kv_dim]` → `[Q, dim]`.
    pub fn forward(&self, queries: &Tensor<S>, kv: &Tensor<S>) -> Result<(Tensor<S>, AttentionCache<S>)> {
        let dim = self.dim();
        if self.heads == 0 || !dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "attention width {dim} is not divisible by {} heads",
                self.heads
            )));
        }
        if kv.rows() == 0 {
            return Err(Error::dim("attention", &[1, self.wk.input_dim()], kv.shape()));
        }
        let q = self.wq.forward(queries)?;
        let k = self.wk.forward(kv)?;
        let v = self.wv.forward(kv)?;
        let (nq, n) = (q.rows(), k.rows());
        let dh = dim / self.heads;
        let scale = S::one() / S::from_usize_lossy(dh).sqrt();
        let mut concat = Tensor::zeros(&[nq, dim]);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let off = h * dh;
            let mut w = Tensor::zeros(&[nq, n]);
            for i in 0..nq {
                let qi = &q.row(i)[off..off + dh];
                let scores: Vec<S> = (0..n)
                    .map(|j| qi.iter().zip(&k.row(j)[off..off + dh]).map(|(&a, &b)| a * b).sum::<S>() * scale)
                    .collect();
                let p = softmax_slice(&scores);
                let out = &mut concat.row_mut(i)[off..off + dh];
                for (j, &pj) in p.iter().enumerate() {
                    for (o, &vv) in out.iter_mut().zip(&v.row(j)[off..off + dh]) {
                        *o += pj * vv;
                    }
                }
                w.row_mut(i).copy_from_slice(&p);
            }
            weights.push(w);
        }
        let y = self.wo.forward(&concat)?;
        Ok((
            y,
            AttentionCache {
                queries: queries.clone(),
                kv: kv.clone(),
                q,
                k,
                v,
                weights,
                concat,
            },
        ))
    }

    /// Returns `(d_queries, d_kv)`.
    pub fn backward(
        &self,
        cache: &AttentionCache<S>,
        dy: &Tensor<S>,
        grad: &mut MultiHeadAttention<S>,
    ) -> (Tensor<S>, Tensor<S>) {
        let dim = self.dim();
        let dh = dim / self.heads;
        let scale = S::one() / S::from_usize_lossy(dh).sqrt();
        let (q, k, v) = (&cache.q, &cache.k, &cache.v);
        let (nq, n) = (q.rows(), k.rows());
        let dconcat = self.wo.backward(&cache.concat, dy, &mut grad.wo);
        let mut dq = Tensor::zeros(&[nq, dim]);
        let mut dk = Tensor::zeros(&[n, dim]);
        let mut dv = Tensor::zeros(&[n, dim]);
        for h in 0..self.heads {
            let off = h * dh;
            let w = &cache.weights[h];
            for i in 0..nq {
                let dout = &dconcat.row(i)[off..off + dh];
                let p = w.row(i);
                // dA_ij = dout · v_j ; dV_j += p_ij dout
                let da: Vec<S> = (0..n)
                    .map(|j| dout.iter().zip(&v.row(j)[off..off + dh]).map(|(&a, &b)| a * b).sum())
                    .collect();
                for (j, &pj) in p.iter().enumerate() {
                    for (g, &d) in dv.row_mut(j)[off..off + dh].iter_mut().zip(dout) {
                        *g += pj * d;
                    }
                }
                let dot: S = p.iter().zip(&da).map(|(&a, &b)| a * b).sum();
                for j in 0..n {
                    let ds = p[j] * (da[j] - dot) * scale;
                    if ds == S::zero() {
                        continue;
                    }
                    for c in 0..dh {
                        dq.row_mut(i)[off + c] += ds * k.at(j, off + c);
                        dk.row_mut(j)[off + c] += ds * q.at(i, off + c);
                    }
                }
            }
        }
        let dqueries = self.wq.backward(&cache.queries, &dq, &mut grad.wq);
        let mut dkv = self.wk.backward(&cache.kv, &dk, &mut grad.wk);
        dkv.add_assign(&self.wv.backward(&cache.kv, &dv, &mut grad.wv));
        (dqueries, dkv)
    }
}
