use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;

/// Array-encoded tree node. Children are indices into the node vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64, n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    depth: usize,
}

/// Best variance-reducing threshold on one feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    /// Rows with `x <= threshold` go left.
    pub threshold: f64,
    /// Weighted child sum of squared deviations (SSE_left + SSE_right).
    pub child_sse: f64,
    pub n_left: usize,
}

pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub mtry: usize,
}

impl RegressionTree {
    pub(crate) fn grow<R: Rng>(x: &Matrix, y: &[f64], rows: &mut [usize], params: &GrowParams, rng: &mut R) -> Self {
        let mut tree = RegressionTree { nodes: Vec::new(), depth: 0 };
        let mut scratch = Vec::with_capacity(rows.len());
        tree.build(x, y, rows, 0, params, rng, &mut scratch);
        tree
    }

    #[allow(clippy::too_many_arguments)]
    fn build<R: Rng>(
        &mut self,
        x: &Matrix,
        y: &[f64],
        rows: &mut [usize],
        depth: usize,
        params: &GrowParams,
        rng: &mut R,
        scratch: &mut Vec<(f64, f64)>,
    ) -> usize {
        self.depth = self.depth.max(depth);
        let id = self.nodes.len();
        self.nodes.push(leaf(y, rows));

        let n = rows.len();
        if depth >= params.max_depth || n < 2 * params.min_samples_leaf || is_constant(y, rows) {
            return id;
        }

        let p = x.n_cols();
        let mut features = index::sample(rng, p, params.mtry.min(p)).into_vec();
        features.sort_unstable();

        let (sum, sumsq) = rows.iter().fold((0.0, 0.0), |(s, q), &r| (s + y[r], q + y[r] * y[r]));
        let parent_sse = (sumsq - sum * sum / n as f64).max(0.0);

        let mut best: Option<(usize, SplitCandidate)> = None;
        for &f in &features {
            scratch.clear();
            scratch.extend(rows.iter().map(|&r| (x.get(r, f), y[r])));
            scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
            if let Some(c) = scan_sorted(scratch, params.min_samples_leaf) {
                if best.is_none_or(|(_, b)| c.child_sse < b.child_sse) {
                    best = Some((f, c));
                }
            }
        }
        let Some((feature, split)) = best else { return id };
        if !(parent_sse - split.child_sse > 1e-12 * parent_sse) {
            return id;
        }

        let mut lo = 0;
        for i in 0..n {
            if x.get(rows[i], feature) <= split.threshold {
                rows.swap(lo, i);
                lo += 1;
            }
        }
        let (left_rows, right_rows) = rows.split_at_mut(lo);
        let left = self.build(x, y, left_rows, depth + 1, params, rng, scratch);
        let right = self.build(x, y, right_rows, depth + 1, params, rng, scratch);
        self.nodes[id] = Node::Split { feature, threshold: split.threshold, left, right };
        id
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value, .. } => return value,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

/// Exact best split of `(x, y)` pairs on one feature: midpoints between
/// sorted distinct values, each side keeping at least `min_leaf` rows.
/// Ties keep the lowest threshold.
pub fn best_split(x: &[f64], y: &[f64], min_leaf: usize) -> Option<SplitCandidate> {
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    scan_sorted(&pairs, min_leaf.max(1))
}

fn scan_sorted(pairs: &[(f64, f64)], min_leaf: usize) -> Option<SplitCandidate> {
    let n = pairs.len();
    if n < 2 * min_leaf {
        return None;
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let total_sq: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
    let mut left = 0.0;
    let mut best: Option<(f64, usize)> = None;
    for i in 0..n - 1 {
        left += pairs[i].1;
        let n_left = i + 1;
        if pairs[i].0 == pairs[i + 1].0 || n_left < min_leaf || n - n_left < min_leaf {
            continue;
        }
        let right = total - left;
        // Maximizing this is equivalent to minimizing the child SSE.
        let score = left * left / n_left as f64 + right * right / (n - n_left) as f64;
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, n_left));
        }
    }
    let (score, n_left) = best?;
    let (a, b) = (pairs[n_left - 1].0, pairs[n_left].0);
    let mid = a + (b - a) / 2.0;
    let threshold = if mid < b { mid } else { a };
    Some(SplitCandidate { threshold, child_sse: (total_sq - score).max(0.0), n_left })
}

fn leaf(y: &[f64], rows: &[usize]) -> Node {
    let n = rows.len();
    let (mut sum, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
    for &r in rows {
        sum += y[r];
        lo = lo.min(y[r]);
        hi = hi.max(y[r]);
    }
    let value = if n == 0 { 0.0 } else { (sum / n as f64).clamp(lo, hi) };
    Node::Leaf { value, n }
}

fn is_constant(y: &[f64], rows: &[usize]) -> bool {
    let first = y[rows[0]];
    rows.iter().all(|&r| y[r] == first)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_on_two_points() {
        let c = best_split(&[0.0, 1.0], &[0.0, 10.0], 1).unwrap();
        assert_eq!(c.threshold, 0.5);
        assert_eq!(c.n_left, 1);
        assert_eq!(c.child_sse, 0.0);
    }

    #[test]
    fn no_split_between_equal_values() {
        assert!(best_split(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0], 1).is_none());
        assert!(best_split(&[1.0, 2.0, 3.0], &[0.0, 1.0, 2.0], 2).is_none());
    }

    #[test]
    fn respects_min_leaf() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let mut y = vec![0.0; 10];
        y[9] = 100.0;
        let c = best_split(&x, &y, 3).unwrap();
        assert_eq!(c.n_left, 7);
    }
}
