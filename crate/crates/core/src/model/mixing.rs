use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::shifted_relu_scalar;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Shifted-ReLU threshold used when mixing intent scores.
pub const DEFAULT_DELTA: f64 = 0.05;

/// `score_s = Σ_i max(g_i·H[i,s] − δ, 0)`, summed in ascending intent order.
pub fn mix_scores<S: Scalar>(g: &[S], h: &Tensor<S>, delta: S) -> Result<Vec<S>> {
    if h.shape().len() != 2 || h.rows() != g.len() {
        return Err(Error::dim("mix_scores", &[g.len(), h.cols()], h.shape()));
    }
    if delta < S::zero() || !delta.is_finite() {
        return Err(Error::Config(format!("mixing threshold must be >= 0, got {delta}")));
    }
    let mut out = vec![S::zero(); h.cols()];
    for (i, &gi) in g.iter().enumerate() {
        for (o, &hv) in out.iter_mut().zip(h.row(i)) {
            *o += shifted_relu_scalar(gi * hv, delta);
        }
    }
    Ok(out)
}

/// Gradients of [`mix_scores`] with respect to `g` and `H`.
pub fn mix_scores_backward<S: Scalar>(g: &[S], h: &Tensor<S>, delta: S, d_scores: &[S]) -> (Vec<S>, Tensor<S>) {
    let mut dg = vec![S::zero(); g.len()];
    let mut dh = Tensor::zeros(h.shape());
    for (i, &gi) in g.iter().enumerate() {
        let hrow = h.row(i);
        let dhrow = dh.row_mut(i);
        for s in 0..hrow.len() {
            if gi * hrow[s] > delta {
                dg[i] += d_scores[s] * hrow[s];
                dhrow[s] = d_scores[s] * gi;
            }
        }
    }
    (dg, dh)
}

/// How a summary is cut from per-shot scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Every shot scoring strictly above the threshold.
    Threshold(f64),
    /// The `B` best shots, ties to the lower index.
    Budget(usize),
}

/// `ceil(0.02·T)`, at least one shot.
pub fn default_budget(shots: usize) -> usize {
    (shots * 2).div_ceil(100).max(1).min(shots)
}

impl Selection {
    pub fn default_for(shots: usize) -> Self {
        Selection::Budget(default_budget(shots))
    }
}

/// Shot indices ordered by score descending, ties to the lower index.
pub fn rank_desc<S: Scalar>(scores: &[S]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Selected shot indices, sorted ascending.
pub fn select_summary<S: Scalar>(scores: &[S], mode: Selection) -> Result<Vec<usize>> {
    let mut out = match mode {
        Selection::Threshold(t) => scores
            .iter()
            .enumerate()
            .filter(|(_, &s)| s.as_f64() > t)
            .map(|(i, _)| i)
            .collect(),
        Selection::Budget(b) => {
            if b > scores.len() {
                return Err(Error::Config(format!(
                    "summary budget {b} exceeds the {} available shots",
                    scores.len()
                )));
            }
            let mut top = rank_desc(scores);
            top.truncate(b);
            top
        }
    };
    out.sort_unstable();
    Ok(out)
}

/// Top-`m` shots of one intent's score row, best first.
pub fn representative_shots<S: Scalar>(h_i: &[S], m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > h_i.len() {
        return Err(Error::Config(format!(
            "representative count must be in 1..={}, got {m}",
            h_i.len()
        )));
    }
    let mut top = rank_desc(h_i);
    top.truncate(m);
    Ok(top)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn h(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn forced_arithmetic() {
        let s = mix_scores(&[0.5, 0.3, 0.2], &h(&[&[0.8], &[0.1], &[0.0]]), 0.05).unwrap();
        assert!((s[0] - 0.35).abs() < 1e-12);
    }

    #[test]
    fn zero_delta_is_linear_combination() {
        let g = [0.5, 0.3, 0.2];
        let hm = h(&[&[0.8, 0.2], &[0.1, 0.7], &[0.0, 0.9]]);
        let s = mix_scores(&g, &hm, 0.0).unwrap();
        for (c, &sc) in s.iter().enumerate() {
            let lin: f64 = (0..3).map(|i| g[i] * hm.at(i, c)).sum();
            assert!((sc - lin).abs() < 1e-12);
        }
    }

    #[test]
    fn all_below_delta_gives_zero() {
        let s = mix_scores(&[0.5, 0.5], &h(&[&[0.05], &[0.1]]), 0.05).unwrap();
        assert_eq!(s, vec![0.0]);
    }

    #[test]
    fn length_mismatch() {
        let err = mix_scores(&[1.0], &h(&[&[0.5], &[0.5]]), 0.05).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn selection_examples() {
        assert_eq!(
            select_summary(&[0.9, 0.1, 0.6], Selection::Threshold(0.5)).unwrap(),
            vec![0, 2]
        );
        assert_eq!(select_summary(&[0.4, 0.4], Selection::Budget(1)).unwrap(), vec![0]);
        assert_eq!(
            select_summary(&[0.1, 0.3, 0.2], Selection::Budget(3)).unwrap(),
            vec![0, 1, 2]
        );
        assert!(matches!(
            select_summary(&[0.1], Selection::Budget(2)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn default_budget_is_two_percent_rounded_up() {
        assert_eq!(default_budget(256), 6);
        assert_eq!(default_budget(100), 2);
        assert_eq!(default_budget(16), 1);
        assert_eq!(default_budget(1000), 20);
    }

    #[test]
    fn representative_examples() {
        assert_eq!(representative_shots(&[0.2, 0.9, 0.5], 1).unwrap(), vec![1]);
        assert_eq!(representative_shots(&[0.2, 0.9, 0.5], 3).unwrap(), vec![1, 2, 0]);
        assert!(representative_shots(&[0.2], 0).is_err());
        assert!(representative_shots(&[0.2], 2).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let g = vec![0.5, 0.3, 0.2];
        let hm = h(&[&[0.8, 0.2, 0.6], &[0.4, 0.7, 0.1], &[0.9, 0.6, 0.3]]);
        let w = [1.0, -2.0, 0.5];
        let f = |g: &[f64], hm: &Tensor<f64>| -> f64 {
            mix_scores(g, hm, 0.05)
                .unwrap()
                .iter()
                .zip(&w)
                .map(|(a, b)| a * b)
                .sum()
        };
        let (dg, dh) = mix_scores_backward(&g, &hm, 0.05, &w);
        let eps = 1e-7;
        for i in 0..3 {
            let mut gp = g.clone();
            gp[i] += eps;
            let mut gm = g.clone();
            gm[i] -= eps;
            assert!(((f(&gp, &hm) - f(&gm, &hm)) / (2.0 * eps) - dg[i]).abs() < 1e-6);
            for s in 0..3 {
                let mut hp = hm.clone();
                hp.row_mut(i)[s] += eps;
                let mut hn = hm.clone();
                hn.row_mut(i)[s] -= eps;
                let num = (f(&g, &hp) - f(&g, &hn)) / (2.0 * eps);
                assert!((num - dh.at(i, s)).abs() < 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn mixing_is_monotone(
            g in proptest::collection::vec(0.0f64..1.0, 4),
            hv in proptest::collection::vec(0.0f64..1.0, 12),
            which in 0usize..16,
            bump in 0.0f64..0.5,
        ) {
            let hm = Tensor::from_vec(&[4, 3], hv).unwrap();
            let base = mix_scores(&g, &hm, 0.05).unwrap();
            let (g2, h2) = if which < 4 {
                let mut g2 = g.clone();
                g2[which] += bump;
                (g2, hm.clone())
            } else {
                let mut h2 = hm.clone();
                h2.data_mut()[which - 4] += bump;
                (g.clone(), h2)
            };
            let up = mix_scores(&g2, &h2, 0.05).unwrap();
            for (a, b) in base.iter().zip(&up) {
                prop_assert!(b >= a);
            }
        }

        #[test]
        fn budget_selection_ignores_common_scaling(
            g in proptest::collection::vec(0.01f64..1.0, 3),
            hv in proptest::collection::vec(0.0f64..1.0, 30),
            scale in 0.01f64..100.0,
            b in 1usize..10,
        ) {
            let hm = Tensor::from_vec(&[3, 10], hv).unwrap();
            let scaled = hm.map(|v| v * scale);
            let a = select_summary(&mix_scores(&g, &hm, 0.0).unwrap(), Selection::Budget(b)).unwrap();
            let c = select_summary(&mix_scores(&g, &scaled, 0.0).unwrap(), Selection::Budget(b)).unwrap();
            prop_assert_eq!(a, c);
        }

        #[test]
        fn selection_contracts(scores in proptest::collection::vec(0.0f64..1.0, 1..40), t in 0.0f64..1.0) {
            let b = scores.len() / 2 + 1;
            let sel = select_summary(&scores, Selection::Budget(b)).unwrap();
            prop_assert_eq!(sel.len(), b);
            prop_assert!(sel.windows(2).all(|w| w[0] < w[1]));
            let th = select_summary(&scores, Selection::Threshold(t)).unwrap();
            prop_assert!(th.iter().all(|&i| scores[i] > t));
            prop_assert_eq!(th.len(), scores.iter().filter(|&&s| s > t).count());
        }

        #[test]
        fn representatives_are_the_sorted_prefix(hv in proptest::collection::vec(0.0f64..1.0, 1..30)) {
            let m = hv.len().div_ceil(2);
            let top = representative_shots(&hv, m).unwrap();
            // oracle: sort (score desc, index asc) pairs
            let mut pairs: Vec<(f64, usize)> = hv.iter().copied().zip(0..).collect();
            pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let expect: Vec<usize> = pairs[..m].iter().map(|p| p.1).collect();
            prop_assert_eq!(top, expect);
        }
    }
}
