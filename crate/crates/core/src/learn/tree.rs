//! Binary decision trees on numeric thresholds with C4.5-style pruning.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use super::{Dataset, LearnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    #[default]
    GainRatio,
    InformationGain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub criterion: Criterion,
    pub max_depth: usize,
    /// Minimal information gain (bits) for a split to qualify.
    pub min_gain: f64,
    /// Apply pessimistic-error post-pruning.
    pub prune: bool,
    /// Confidence level of the pruning bound.
    pub confidence: f64,
    /// Minimal number of samples in each child.
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            criterion: Criterion::GainRatio,
            max_depth: 20,
            min_gain: 0.05,
            prune: true,
            confidence: 0.1,
            min_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Training class counts `[negatives, positives]`.
    Leaf { counts: [u64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    /// Arena with the root at index 0. Values `x[feature] <= threshold` go left.
    pub nodes: Vec<Node>,
    pub depth: usize,
    pub n_features: usize,
    /// Settings the tree was grown with; absent for ensemble members.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<TreeParams>,
}

impl TreeModel {
    /// A single leaf with the given class counts.
    pub fn leaf(counts: [u64; 2], n_features: usize) -> Self {
        Self {
            nodes: vec![Node::Leaf { counts }],
            depth: 0,
            n_features,
            params: None,
        }
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { .. } => return i,
            }
        }
    }

    pub fn leaf_counts(&self, x: &[f64]) -> [u64; 2] {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { counts } => counts,
            Node::Split { .. } => unreachable!("leaf_index stops at leaves"),
        }
    }

    /// Positive-class fraction of the leaf reached by `x`.
    pub fn score(&self, x: &[f64]) -> f64 {
        let [neg, pos] = self.leaf_counts(x);
        pos as f64 / (neg + pos) as f64
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

pub(crate) fn entropy(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Information gain and split information (bits) of dividing `parent` into
/// `left` and the remainder.
pub fn split_scores(parent: [usize; 2], left: [usize; 2]) -> (f64, f64) {
    let right = [parent[0] - left[0], parent[1] - left[1]];
    let n = (parent[0] + parent[1]) as f64;
    let nl = (left[0] + left[1]) as f64;
    let nr = (right[0] + right[1]) as f64;
    let gain = entropy(parent) - nl / n * entropy(left) - nr / n * entropy(right);
    let split_info = entropy([left[0] + left[1], right[0] + right[1]]);
    (gain, split_info)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
    pub gain_ratio: f64,
}

/// Every midpoint split of `indices` on `features`, in feature then
/// threshold order.
pub fn candidate_splits(data: &Dataset, indices: &[usize], features: &[usize], min_leaf: usize) -> Vec<SplitCandidate> {
    let mut parent = [0usize; 2];
    for &i in indices {
        parent[usize::from(data.targets()[i])] += 1;
    }
    let mut out = Vec::new();
    let mut order: Vec<usize> = indices.to_vec();
    for &f in features {
        order.sort_by(|&a, &b| data.row(a)[f].total_cmp(&data.row(b)[f]));
        let mut left = [0usize; 2];
        for k in 0..order.len().saturating_sub(1) {
            left[usize::from(data.targets()[order[k]])] += 1;
            let v = data.row(order[k])[f];
            let next = data.row(order[k + 1])[f];
            if v == next || k + 1 < min_leaf || order.len() - k - 1 < min_leaf {
                continue;
            }
            let mut threshold = v + (next - v) / 2.0;
            // Guard against the midpoint rounding onto the upper value.
            if threshold >= next {
                threshold = v;
            }
            let (gain, split_info) = split_scores(parent, left);
            out.push(SplitCandidate {
                feature: f,
                threshold,
                gain,
                gain_ratio: if split_info > 0.0 { gain / split_info } else { 0.0 },
            });
        }
    }
    out
}

/// The qualifying candidate with the highest criterion value; ties go to the
/// first in scan order.
pub fn best_split(candidates: &[SplitCandidate], criterion: Criterion, min_gain: f64) -> Option<SplitCandidate> {
    let key = |c: &SplitCandidate| match criterion {
        Criterion::GainRatio => c.gain_ratio,
        Criterion::InformationGain => c.gain,
    };
    let mut best: Option<SplitCandidate> = None;
    for c in candidates.iter().filter(|c| c.gain >= min_gain) {
        if best.is_none_or(|b| key(c) > key(&b)) {
            best = Some(*c);
        }
    }
    best
}

enum Grow {
    Leaf([usize; 2]),
    Split {
        feature: usize,
        threshold: f64,
        counts: [usize; 2],
        left: Box<Grow>,
        right: Box<Grow>,
    },
}

impl Grow {
    fn counts(&self) -> [usize; 2] {
        match self {
            Grow::Leaf(c) | Grow::Split { counts: c, .. } => *c,
        }
    }
}

/// Per-split random feature selection used by forests.
pub(crate) struct FeatureSampler<'a, R: Rng> {
    pub rng: &'a mut R,
    pub k: usize,
}

struct Builder<'a, 'r, R: Rng> {
    data: &'a Dataset,
    params: &'a TreeParams,
    sampler: Option<FeatureSampler<'r, R>>,
}

impl<R: Rng> Builder<'_, '_, R> {
    fn features(&mut self) -> Vec<usize> {
        let d = self.data.n_features();
        match &mut self.sampler {
            Some(s) if s.k < d => {
                let mut f = sample(s.rng, d, s.k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        }
    }

    fn grow(&mut self, indices: &[usize], depth: usize) -> Grow {
        let mut counts = [0usize; 2];
        for &i in indices {
            counts[usize::from(self.data.targets()[i])] += 1;
        }
        if counts[0] == 0 || counts[1] == 0 || depth >= self.params.max_depth {
            return Grow::Leaf(counts);
        }
        let features = self.features();
        let candidates = candidate_splits(self.data, indices, &features, self.params.min_leaf.max(1));
        let Some(split) = best_split(&candidates, self.params.criterion, self.params.min_gain) else {
            return Grow::Leaf(counts);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = indices
            .iter()
            .partition(|&&i| self.data.row(i)[split.feature] <= split.threshold);
        let left = Box::new(self.grow(&l, depth + 1));
        let right = Box::new(self.grow(&r, depth + 1));
        Grow::Split {
            feature: split.feature,
            threshold: split.threshold,
            counts,
            left,
            right,
        }
    }
}

/// Upper confidence bound on the error rate after observing `errors` in `n`
/// trials: the `p` with `P(X <= errors; n, p) = confidence`.
pub fn pessimistic_error_rate(errors: usize, n: usize, confidence: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    if errors >= n {
        return 1.0;
    }
    let cdf = |p: f64| {
        Binomial::new(p, n as u64)
            .map(|b| b.cdf(errors as u64))
            .unwrap_or(0.0)
    };
    let (mut lo, mut hi) = (errors as f64 / n as f64, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) > confidence {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn leaf_estimate(counts: [usize; 2], confidence: f64) -> f64 {
    let n = counts[0] + counts[1];
    let errors = counts[0].min(counts[1]);
    n as f64 * pessimistic_error_rate(errors, n, confidence)
}

/// Bottom-up pruning; returns the node and its estimated error count.
fn prune(node: Grow, confidence: f64) -> (Grow, f64) {
    match node {
        Grow::Leaf(c) => {
            let e = leaf_estimate(c, confidence);
            (Grow::Leaf(c), e)
        }
        Grow::Split {
            feature,
            threshold,
            counts,
            left,
            right,
        } => {
            let (left, el) = prune(*left, confidence);
            let (right, er) = prune(*right, confidence);
            let subtree = el + er;
            let as_leaf = leaf_estimate(counts, confidence);
            if as_leaf <= subtree {
                (Grow::Leaf(counts), as_leaf)
            } else {
                let node = Grow::Split {
                    feature,
                    threshold,
                    counts,
                    left: Box::new(left),
                    right: Box::new(right),
                };
                (node, subtree)
            }
        }
    }
}

fn flatten(node: Grow, nodes: &mut Vec<Node>, depth: usize) -> usize {
    let idx = nodes.len();
    match node {
        Grow::Leaf(c) => {
            nodes.push(Node::Leaf {
                counts: [c[0] as u64, c[1] as u64],
            });
            depth
        }
        Grow::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } => {
            nodes.push(Node::Split {
                feature,
                threshold,
                left: 0,
                right: 0,
            });
            let l_idx = nodes.len();
            let dl = flatten(*left, nodes, depth + 1);
            let r_idx = nodes.len();
            let dr = flatten(*right, nodes, depth + 1);
            nodes[idx] = Node::Split {
                feature,
                threshold,
                left: l_idx,
                right: r_idx,
            };
            dl.max(dr)
        }
    }
}

pub(crate) fn train_tree_on<R: Rng>(
    data: &Dataset,
    indices: &[usize],
    params: &TreeParams,
    sampler: Option<FeatureSampler<'_, R>>,
) -> Result<TreeModel, LearnError> {
    if params.max_depth < 1 {
        return Err(LearnError::InvalidParam("max_depth must be >= 1".into()));
    }
    if params.prune && !(params.confidence > 0.0 && params.confidence < 1.0) {
        return Err(LearnError::InvalidParam(format!(
            "confidence must lie in (0, 1), got {}",
            params.confidence
        )));
    }
    if indices.is_empty() {
        return Err(LearnError::InvalidDataset("no rows to grow a tree from".into()));
    }
    let mut builder = Builder { data, params, sampler };
    let mut root = builder.grow(indices, 0);
    debug_assert!(root.counts()[0] + root.counts()[1] == indices.len());
    if params.prune {
        root = prune(root, params.confidence).0;
    }
    let mut nodes = Vec::new();
    let depth = flatten(root, &mut nodes, 0);
    Ok(TreeModel {
        nodes,
        depth,
        n_features: data.n_features(),
        params: None,
    })
}

pub fn train_tree(data: &Dataset, params: &TreeParams) -> Result<TreeModel, LearnError> {
    let all: Vec<usize> = (0..data.n_samples()).collect();
    let mut tree = train_tree_on::<crate::rng::SeededRng>(data, &all, params, None)?;
    tree.params = Some(params.clone());
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unpruned(max_depth: usize, min_gain: f64) -> TreeParams {
        TreeParams {
            max_depth,
            min_gain,
            prune: false,
            ..TreeParams::default()
        }
    }

    #[test]
    fn single_class_gives_single_leaf() {
        let d = Dataset::from_rows(vec![vec![1.0], vec![2.0], vec![3.0]], vec![1, 1, 1]).unwrap();
        let t = train_tree(&d, &TreeParams::default()).unwrap();
        assert_eq!(t.nodes, vec![Node::Leaf { counts: [0, 3] }]);
        assert_eq!(t.score(&[10.0]), 1.0);
    }

    #[test]
    fn hand_computed_split() {
        let d = Dataset::from_rows(vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]], vec![1, 1, 0, 0]).unwrap();
        let c = candidate_splits(&d, &[0, 1, 2, 3], &[0], 1);
        let at = c.iter().find(|c| c.threshold == 2.5).unwrap();
        // Parent entropy 1 bit, both children pure, halves of equal size.
        assert!((at.gain - 1.0).abs() < 1e-12);
        assert!((at.gain_ratio - 1.0).abs() < 1e-12);
        let t = train_tree(&d, &unpruned(5, 0.05)).unwrap();
        assert!(matches!(t.nodes[0], Node::Split { feature: 0, threshold, .. } if threshold == 2.5));
        assert_eq!(t.depth, 1);
    }

    #[test]
    fn xor_is_learned_exactly() {
        let rows = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let y = vec![0, 1, 1, 0];
        let d = Dataset::from_rows(rows.clone(), y.clone()).unwrap();
        let t = train_tree(&d, &unpruned(2, 0.0)).unwrap();
        for (r, &t_) in rows.iter().zip(&y) {
            assert_eq!(super::super::predict_label(t.score(r)), t_);
        }
        assert!(t.depth <= 2);
    }

    #[test]
    fn pessimistic_bound_matches_closed_form_for_zero_errors() {
        // With no errors, P(X = 0) = (1 - p)^n, so p = 1 - cf^(1/n).
        for n in [1usize, 2, 5, 40] {
            let u = pessimistic_error_rate(0, n, 0.25);
            assert!((u - (1.0 - 0.25f64.powf(1.0 / n as f64))).abs() < 1e-9);
        }
        assert_eq!(pessimistic_error_rate(3, 3, 0.1), 1.0);
        assert!(pessimistic_error_rate(2, 10, 0.1) > 0.2);
    }

    #[test]
    fn pruning_collapses_noise_splits() {
        // One mislabeled point isolated by a split is not worth keeping.
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![f64::from(i)]).collect();
        let mut y = vec![0u8; 12];
        y[5] = 1;
        let d = Dataset::from_rows(rows, y).unwrap();
        let full = train_tree(&d, &unpruned(20, 0.0)).unwrap();
        let pruned = train_tree(
            &d,
            &TreeParams {
                min_gain: 0.0,
                ..TreeParams::default()
            },
        )
        .unwrap();
        assert!(full.n_leaves() > 1);
        assert_eq!(pruned.n_leaves(), 1);
    }

    #[test]
    fn depth_limit_respected() {
        let rows: Vec<Vec<f64>> = (0..32).map(|i| vec![f64::from(i)]).collect();
        let y: Vec<u8> = (0..32).map(|i| (i % 2) as u8).collect();
        let d = Dataset::from_rows(rows, y).unwrap();
        for depth in 1..5 {
            let t = train_tree(&d, &unpruned(depth, 0.0)).unwrap();
            assert!(t.depth <= depth);
        }
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        (2usize..30).prop_flat_map(|n| {
            (
                proptest::collection::vec(proptest::collection::vec(0u8..6, 3), n),
                proptest::collection::vec(0u8..2, n),
            )
                .prop_map(|(x, y)| {
                    let x = x.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect();
                    Dataset::from_rows(x, y).unwrap()
                })
        })
    }

    // Exhaustive oracle: try every threshold at every observed value.
    fn oracle_best_ratio(d: &Dataset, idx: &[usize]) -> Option<f64> {
        let mut parent = [0usize; 2];
        for &i in idx {
            parent[usize::from(d.targets()[i])] += 1;
        }
        let mut best: Option<f64> = None;
        for f in 0..d.n_features() {
            for &t in idx {
                let th = d.row(t)[f];
                let mut left = [0usize; 2];
                for &i in idx {
                    if d.row(i)[f] <= th {
                        left[usize::from(d.targets()[i])] += 1;
                    }
                }
                let nl = left[0] + left[1];
                if nl == 0 || nl == idx.len() {
                    continue;
                }
                let (g, si) = split_scores(parent, left);
                if g >= 0.05 {
                    let r = g / si;
                    best = Some(best.map_or(r, |b: f64| b.max(r)));
                }
            }
        }
        best
    }

    proptest! {
        #[test]
        fn training_points_reach_consistent_leaves(d in arb_dataset()) {
            let t = train_tree(&d, &TreeParams::default()).unwrap();
            let mut routed = vec![[0u64; 2]; t.nodes.len()];
            for (r, &y) in d.rows().iter().zip(d.targets()) {
                routed[t.leaf_index(r)][usize::from(y)] += 1;
            }
            for (node, got) in t.nodes.iter().zip(&routed) {
                if let Node::Leaf { counts } = node {
                    prop_assert_eq!(counts, got);
                    prop_assert!(counts[0] + counts[1] > 0);
                }
            }
            for r in d.rows() {
                let s = t.score(r);
                prop_assert!((0.0..=1.0).contains(&s));
            }
        }

        #[test]
        fn chosen_root_split_is_optimal(d in arb_dataset()) {
            let idx: Vec<usize> = (0..d.n_samples()).collect();
            let c = candidate_splits(&d, &idx, &[0, 1, 2], 1);
            let chosen = best_split(&c, Criterion::GainRatio, 0.05);
            let oracle = oracle_best_ratio(&d, &idx);
            match (chosen, oracle) {
                (Some(s), Some(o)) => prop_assert!((s.gain_ratio - o).abs() < 1e-12),
                (None, None) => {}
                (a, b) => prop_assert!(false, "chosen {:?} oracle {:?}", a, b),
            }
        }
    }
}
