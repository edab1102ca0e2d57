//! Semantic evaluation: predicted and ground-truth shots are matched one to
//! one by maximum-weight bipartite matching where the weight of a pair is the
//! IOU of the two shots' tag sets.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TagSet = BTreeSet<String>;

/// Largest `min(m, n)` the enumeration oracle accepts.
pub const BRUTE_FORCE_LIMIT: usize = 8;

/// `|a ∩ b| / |a ∪ b|`; two empty sets give 0.
pub fn semantic_iou(a: &TagSet, b: &TagSet) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// `(row, col)` pairs sorted by row; zero-weight pairs are left out.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the matched weights, accumulated in row order.
    pub weight: f64,
}

impl Matching {
    fn from_assignment(w: &[Vec<f64>], assign: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut pairs: Vec<(usize, usize)> = assign.into_iter().filter(|&(r, c)| w[r][c] > 0.0).collect();
        pairs.sort_unstable();
        let weight = pairs.iter().fold(0.0, |acc, &(r, c)| acc + w[r][c]);
        Matching { pairs, weight }
    }
}

fn check_weights(w: &[Vec<f64>]) -> Result<usize> {
    let n = w.first().map_or(0, Vec::len);
    for (i, row) in w.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Input(format!(
                "weight row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Input(format!(
                "matching weights must be finite and >= 0, got {v}"
            )));
        }
    }
    Ok(n)
}

/// Maximum-weight matching via the O(n³) Hungarian method on the
/// zero-padded square matrix.
pub fn max_weight_matching(w: &[Vec<f64>]) -> Result<Matching> {
    let cols = check_weights(w)?;
    let rows = w.len();
    let n = rows.max(cols);
    if n == 0 || cols == 0 {
        return Ok(Matching {
            pairs: Vec::new(),
            weight: 0.0,
        });
    }
    let max = w.iter().flatten().cloned().fold(0.0, f64::max);
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            max - w[i][j]
        } else {
            max
        }
    };
    // potentials u (rows) and v (cols), 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let assign = (1..=n)
        .filter(|&j| owner[j] >= 1 && owner[j] <= rows && j <= cols)
        .map(|j| (owner[j] - 1, j - 1));
    Ok(Matching::from_assignment(w, assign))
}

/// Exhaustive enumeration over every matching; refuses `min(m, n) > 8`.
pub fn brute_force_matching(w: &[Vec<f64>]) -> Result<Matching> {
    let cols = check_weights(w)?;
    let rows = w.len();
    if rows.min(cols) > BRUTE_FORCE_LIMIT {
        return Err(Error::Input(format!(
            "brute-force matching is limited to min(m, n) <= {BRUTE_FORCE_LIMIT}, got {}",
            rows.min(cols)
        )));
    }
    // enumerate over the smaller side so the search stays small
    let transpose = rows > cols;
    let (a, b) = if transpose { (cols, rows) } else { (rows, cols) };
    let mut best: Option<Matching> = None;
    let mut current: Vec<Option<usize>> = vec![None; a];
    let mut used = vec![false; b];

    fn recurse(
        i: usize,
        a: usize,
        b: usize,
        current: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        visit: &mut dyn FnMut(&[Option<usize>]),
    ) {
        if i == a {
            visit(current);
            return;
        }
        current[i] = None;
        recurse(i + 1, a, b, current, used, visit);
        for j in 0..b {
            if !used[j] {
                used[j] = true;
                current[i] = Some(j);
                recurse(i + 1, a, b, current, used, visit);
                used[j] = false;
            }
        }
        current[i] = None;
    }

    let mut visit = |assign: &[Option<usize>]| {
        let pairs = assign
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| if transpose { (j, i) } else { (i, j) }));
        let m = Matching::from_assignment(w, pairs);
        if best.as_ref().is_none_or(|b| m.weight > b.weight) {
            best = Some(m);
        }
    };
    recurse(0, a, b, &mut current, &mut used, &mut visit);
    Ok(best.unwrap_or(Matching {
        pairs: Vec::new(),
        weight: 0.0,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EvalResult {
    pub const ZERO: EvalResult = EvalResult {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        EvalResult { precision, recall, f1 }
    }

    /// Canonical JSON with six decimals, shared by the CLI and the service.
    pub fn to_json(&self) -> String {
        format!(
            "{{\"precision\":{:.6},\"recall\":{:.6},\"f1\":{:.6}}}",
            self.precision, self.recall, self.f1
        )
    }
}

fn canonical(shots: &[usize], mask: &BTreeSet<usize>, t: usize, what: &str) -> Result<Vec<usize>> {
    if let Some(&bad) = shots.iter().find(|&&s| s >= t) {
        return Err(Error::Input(format!("{what} shot {bad} is outside 0..{t}")));
    }
    let set: BTreeSet<usize> = shots.iter().copied().filter(|s| !mask.contains(s)).collect();
    Ok(set.into_iter().collect())
}

/// Precision, recall and F1 of `pred` against `gt`. Masked shots are removed
/// from both sides first; duplicates count once.
pub fn evaluate_summary(pred: &[usize], gt: &[usize], tags: &[TagSet], mask: &[usize]) -> Result<EvalResult> {
    let t = tags.len();
    if let Some(&bad) = mask.iter().find(|&&s| s >= t) {
        return Err(Error::Input(format!("mask shot {bad} is outside 0..{t}")));
    }
    let mask: BTreeSet<usize> = mask.iter().copied().collect();
    let pred = canonical(pred, &mask, t, "predicted")?;
    let gt = canonical(gt, &mask, t, "ground-truth")?;
    if pred.is_empty() || gt.is_empty() {
        return Ok(EvalResult::ZERO);
    }
    let w: Vec<Vec<f64>> = pred
        .iter()
        .map(|&p| gt.iter().map(|&g| semantic_iou(&tags[p], &tags[g])).collect())
        .collect();
    evaluate_weights(&w)
}

/// Protocol scores from a predicted × ground-truth IOU matrix: the matched
/// weight divided by the number of predicted and of ground-truth shots.
pub fn evaluate_weights(w: &[Vec<f64>]) -> Result<EvalResult> {
    let cols = w.first().map_or(0, Vec::len);
    if w.is_empty() || cols == 0 {
        return Ok(EvalResult::ZERO);
    }
    let m = max_weight_matching(w)?;
    Ok(EvalResult::from_pr(m.weight / w.len() as f64, m.weight / cols as f64))
}

/// Input of the batch evaluation entry point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub pred: Vec<usize>,
    pub gt: Vec<usize>,
    pub tags: Vec<Vec<String>>,
    #[serde(default)]
    pub mask: Vec<usize>,
}

pub fn tag_sets(tags: &[Vec<String>]) -> Vec<TagSet> {
    tags.iter().map(|t| t.iter().cloned().collect()).collect()
}

impl EvalRequest {
    pub fn evaluate(&self) -> Result<EvalResult> {
        evaluate_summary(&self.pred, &self.gt, &tag_sets(&self.tags), &self.mask)
    }
}
