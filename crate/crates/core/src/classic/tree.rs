//! Binary CART tree on Gini impurity, with reduced-error pruning.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::{Class, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    /// Minimum samples in each child of a split.
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            min_leaf: 1,
            max_depth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeKind {
    Leaf,
    /// Samples with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Training samples reaching the node, indexed by [`Class::index`].
    pub counts: [usize; 2],
    pub kind: NodeKind,
}

impl Node {
    /// Majority class; ties go to `Other`.
    pub fn class(&self) -> Class {
        if self.counts[0] > self.counts[1] {
            Class::Excavator
        } else {
            Class::Other
        }
    }

    pub fn excavator_fraction(&self) -> f64 {
        let n = self.counts[0] + self.counts[1];
        if n == 0 {
            0.5
        } else {
            self.counts[0] as f64 / n as f64
        }
    }
}

/// Arena of nodes with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub nodes: Vec<Node>,
}

impl TreeModel {
    pub fn single_leaf(counts: [usize; 2]) -> Self {
        Self {
            nodes: vec![Node {
                counts,
                kind: NodeKind::Leaf,
            }],
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Leaf))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &TreeModel, i: usize) -> usize {
            match t.nodes[i].kind {
                NodeKind::Leaf => 0,
                NodeKind::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    /// Index of the leaf reached by `x`.
    pub fn leaf_of(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i].kind {
                NodeKind::Leaf => return i,
                NodeKind::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::Split { feature, .. } => Some(feature),
                NodeKind::Leaf => None,
            })
            .max()
    }

    /// Predicted class and excavator frequency of the reached leaf.
    pub fn predict(&self, x: &[f64]) -> (Class, f64) {
        let leaf = &self.nodes[self.leaf_of(x)];
        (leaf.class(), leaf.excavator_fraction())
    }
}

fn gini(c: [usize; 2]) -> f64 {
    let n = (c[0] + c[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (p, q) = (c[0] as f64 / n, c[1] as f64 / n);
    1.0 - p * p - q * q
}

struct Candidate {
    feature: usize,
    threshold: f64,
    /// Weighted child impurity; lower is better.
    impurity: f64,
}

fn best_split_on(data: &Dataset, idx: &[usize], feature: usize, min_leaf: usize) -> Option<Candidate> {
    let mut order: Vec<(f64, usize)> = idx
        .iter()
        .map(|&i| (data.features[i][feature], data.targets[i].index()))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = order.len();
    let mut total = [0usize; 2];
    for (_, c) in &order {
        total[*c] += 1;
    }
    let mut left = [0usize; 2];
    let mut best: Option<Candidate> = None;
    for k in 0..n - 1 {
        left[order[k].1] += 1;
        let n_left = k + 1;
        if n_left < min_leaf || n - n_left < min_leaf {
            continue;
        }
        let (a, b) = (order[k].0, order[k + 1].0);
        if a == b {
            continue;
        }
        let right = [total[0] - left[0], total[1] - left[1]];
        let impurity = (n_left as f64 * gini(left) + (n - n_left) as f64 * gini(right)) / n as f64;
        if best.as_ref().is_none_or(|c| impurity < c.impurity) {
            let mut threshold = a + (b - a) / 2.0;
            if threshold <= a {
                threshold = b;
            }
            best = Some(Candidate {
                feature,
                threshold,
                impurity,
            });
        }
    }
    best
}

/// Grows a tree by greedy Gini splits. A node becomes a leaf when pure,
/// when no split leaves `min_leaf` samples on both sides, or at `max_depth`.
pub fn train_tree(train: &Dataset, config: &TreeConfig) -> Result<TreeModel> {
    if train.is_empty() {
        return Err(Error::InsufficientData("cannot grow a tree on an empty dataset".into()));
    }
    let min_leaf = config.min_leaf.max(1);
    let dims = train.dims();
    let mut tree = TreeModel { nodes: Vec::new() };
    // (node index, sample indices, depth)
    let mut stack: Vec<(usize, Vec<usize>, usize)> = Vec::new();
    let counts_of = |idx: &[usize]| {
        let mut c = [0usize; 2];
        for &i in idx {
            c[train.targets[i].index()] += 1;
        }
        c
    };
    let all: Vec<usize> = (0..train.len()).collect();
    tree.nodes.push(Node {
        counts: counts_of(&all),
        kind: NodeKind::Leaf,
    });
    stack.push((0, all, 0));

    while let Some((node, idx, depth)) = stack.pop() {
        let counts = tree.nodes[node].counts;
        let pure = counts[0] == 0 || counts[1] == 0;
        let depth_capped = config.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || idx.len() < 2 * min_leaf {
            continue;
        }
        let best = (0..dims)
            .into_par_iter()
            .filter_map(|f| best_split_on(train, &idx, f, min_leaf))
            .reduce_with(|a, b| {
                if b.impurity < a.impurity || (b.impurity == a.impurity && b.feature < a.feature) {
                    b
                } else {
                    a
                }
            });
        let Some(best) = best else { continue };
        let (l_idx, r_idx): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| train.features[i][best.feature] < best.threshold);
        let left = tree.nodes.len();
        tree.nodes.push(Node {
            counts: counts_of(&l_idx),
            kind: NodeKind::Leaf,
        });
        let right = tree.nodes.len();
        tree.nodes.push(Node {
            counts: counts_of(&r_idx),
            kind: NodeKind::Leaf,
        });
        tree.nodes[node].kind = NodeKind::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        stack.push((right, r_idx, depth + 1));
        stack.push((left, l_idx, depth + 1));
    }
    Ok(tree)
}

/// Reduced-error pruning: bottom-up, an internal node is replaced by its
/// majority leaf whenever that does not lower holdout accuracy.
pub fn prune_tree(tree: &TreeModel, holdout: &Dataset) -> Result<TreeModel> {
    if holdout.is_empty() {
        return Err(Error::InsufficientData("pruning needs a non-empty holdout set".into()));
    }
    let n = tree.nodes.len();
    // Holdout errors if each node were a leaf.
    let mut leaf_err = vec![0usize; n];
    for (x, t) in holdout.features.iter().zip(&holdout.targets) {
        let mut i = 0;
        loop {
            let node = &tree.nodes[i];
            if node.class() != *t {
                leaf_err[i] += 1;
            }
            match node.kind {
                NodeKind::Leaf => break,
                NodeKind::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }
    let mut collapsed = vec![false; n];
    fn visit(t: &TreeModel, i: usize, leaf_err: &[usize], collapsed: &mut [bool]) -> usize {
        match t.nodes[i].kind {
            NodeKind::Leaf => leaf_err[i],
            NodeKind::Split { left, right, .. } => {
                let sub = visit(t, left, leaf_err, collapsed) + visit(t, right, leaf_err, collapsed);
                if leaf_err[i] <= sub {
                    collapsed[i] = true;
                    leaf_err[i]
                } else {
                    sub
                }
            }
        }
    }
    visit(tree, 0, &leaf_err, &mut collapsed);
    if !collapsed.iter().any(|c| *c) {
        return Ok(tree.clone());
    }
    // Re-pack reachable nodes in pre-order.
    let mut out = TreeModel { nodes: Vec::new() };
    fn copy(src: &TreeModel, i: usize, collapsed: &[bool], out: &mut TreeModel) -> usize {
        let at = out.nodes.len();
        out.nodes.push(Node {
            counts: src.nodes[i].counts,
            kind: NodeKind::Leaf,
        });
        if let NodeKind::Split {
            feature,
            threshold,
            left,
            right,
        } = src.nodes[i].kind
        {
            if !collapsed[i] {
                let l = copy(src, left, collapsed, out);
                let r = copy(src, right, collapsed, out);
                out.nodes[at].kind = NodeKind::Split {
                    feature,
                    threshold,
                    left: l,
                    right: r,
                };
            }
        }
        at
    }
    copy(tree, 0, &collapsed, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn accuracy(t: &TreeModel, d: &Dataset) -> f64 {
        let ok = d
            .features
            .iter()
            .zip(&d.targets)
            .filter(|(x, y)| t.predict(x).0 == **y)
            .count();
        ok as f64 / d.len() as f64
    }

    /// Recursive interpreter over the serialized form, independent of
    /// [`TreeModel::leaf_of`].
    fn interpret(v: &serde_json::Value, node: usize, x: &[f64]) -> f64 {
        let n = &v["nodes"][node];
        let c0 = n["counts"][0].as_u64().unwrap() as f64;
        let c1 = n["counts"][1].as_u64().unwrap() as f64;
        match n["kind"]["type"].as_str().unwrap() {
            "leaf" => {
                if c0 + c1 == 0.0 {
                    0.5
                } else {
                    c0 / (c0 + c1)
                }
            }
            _ => {
                let f = n["kind"]["feature"].as_u64().unwrap() as usize;
                let th = n["kind"]["threshold"].as_f64().unwrap();
                let next = if x[f] < th { "left" } else { "right" };
                interpret(v, n["kind"][next].as_u64().unwrap() as usize, x)
            }
        }
    }

    #[test]
    fn single_class_is_single_leaf() {
        let d = Dataset::new(vec![vec![1.0], vec![2.0]], vec![Class::Other; 2]).unwrap();
        let t = train_tree(&d, &TreeConfig::default()).unwrap();
        assert_eq!(t.node_count(), 1);
        assert_eq!(t.predict(&[5.0]), (Class::Other, 0.0));
    }

    #[test]
    fn one_dimensional_threshold() {
        let xs = [0.1, 0.2, 0.35, 0.45, 0.55, 0.6, 0.8, 0.9];
        let d = Dataset::new(
            xs.iter().map(|x| vec![*x]).collect(),
            xs.iter()
                .map(|x| if *x > 0.5 { Class::Excavator } else { Class::Other })
                .collect(),
        )
        .unwrap();
        let t = train_tree(&d, &TreeConfig::default()).unwrap();
        assert_eq!(t.depth(), 1);
        match t.nodes[0].kind {
            NodeKind::Split { threshold, .. } => {
                // Exhaustive check: every split point in (0.45, 0.55] separates.
                assert!(threshold > 0.45 && threshold <= 0.55);
            }
            NodeKind::Leaf => panic!("expected a split"),
        }
    }

    #[test]
    fn leaf_probability_is_frequency() {
        let t = TreeModel::single_leaf([9, 1]);
        assert_eq!(t.predict(&[0.0]), (Class::Excavator, 0.9));
    }

    #[test]
    fn unconstrained_tree_memorizes_xor() {
        let d = Dataset::new(
            vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![Class::Excavator, Class::Excavator, Class::Other, Class::Other],
        )
        .unwrap();
        let t = train_tree(&d, &TreeConfig::default()).unwrap();
        assert_eq!(accuracy(&t, &d), 1.0);
    }

    #[test]
    fn min_leaf_respected() {
        let d = Dataset::new(
            (0..20).map(|i| vec![i as f64]).collect(),
            (0..20).map(|i| Class::from_index(i % 2)).collect(),
        )
        .unwrap();
        let t = train_tree(&d, &TreeConfig { min_leaf: 4, max_depth: None }).unwrap();
        assert!(t.nodes.iter().all(|n| n.counts[0] + n.counts[1] >= 4));
    }

    #[test]
    fn pruning_single_leaf_is_identity() {
        let t = TreeModel::single_leaf([3, 4]);
        let h = Dataset::new(vec![vec![0.0]], vec![Class::Other]).unwrap();
        assert_eq!(prune_tree(&t, &h).unwrap(), t);
        assert!(prune_tree(&t, &Dataset::default()).is_err());
    }

    #[test]
    fn noise_split_collapses() {
        // Root split on x0 is real; the split under the right child is noise
        // whose holdout accuracy is the same either way.
        let tree = TreeModel {
            nodes: vec![
                Node {
                    counts: [6, 6],
                    kind: NodeKind::Split { feature: 0, threshold: 0.5, left: 1, right: 2 },
                },
                Node { counts: [0, 6], kind: NodeKind::Leaf },
                Node {
                    counts: [6, 0],
                    kind: NodeKind::Split { feature: 1, threshold: 0.5, left: 3, right: 4 },
                },
                Node { counts: [3, 0], kind: NodeKind::Leaf },
                Node { counts: [3, 0], kind: NodeKind::Leaf },
            ],
        };
        let holdout = Dataset::new(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]],
            vec![Class::Other, Class::Excavator, Class::Excavator],
        )
        .unwrap();
        let before = accuracy(&tree, &holdout);
        let pruned = prune_tree(&tree, &holdout).unwrap();
        assert_eq!(pruned.node_count(), 3);
        assert!(accuracy(&pruned, &holdout) >= before);
    }

    fn random_dataset(seed: u64, n: usize, dims: usize) -> Dataset {
        let mut s = seed.wrapping_add(1);
        let mut next = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for _ in 0..n {
            let row: Vec<f64> = (0..dims).map(|_| next()).collect();
            let noisy = next() < 0.2;
            let c = (row[0] + 0.5 * row[1] > 0.8) ^ noisy;
            targets.push(if c { Class::Excavator } else { Class::Other });
            rows.push(row);
        }
        Dataset::new(rows, targets).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prediction_matches_independent_interpreter(seed in any::<u64>()) {
            let d = random_dataset(seed, 120, 4);
            let t = train_tree(&d, &TreeConfig { min_leaf: 2, max_depth: Some(6) }).unwrap();
            let v = serde_json::to_value(&t).unwrap();
            let probes = random_dataset(seed ^ 0xabc, 50, 4);
            for x in &probes.features {
                prop_assert_eq!(t.predict(x).1, interpret(&v, 0, x));
            }
        }

        #[test]
        fn pruning_monotone(seed in any::<u64>()) {
            let train = random_dataset(seed, 150, 3);
            let hold = random_dataset(seed.wrapping_mul(31), 60, 3);
            let t = train_tree(&train, &TreeConfig::default()).unwrap();
            // Distinct random rows: an unconstrained tree memorizes them.
            prop_assert_eq!(accuracy(&t, &train), 1.0);
            let p = prune_tree(&t, &hold).unwrap();
            prop_assert!(p.node_count() < t.node_count() || p == t);
            prop_assert!(accuracy(&p, &hold) >= accuracy(&t, &hold));
            let again = prune_tree(&p, &hold).unwrap();
            prop_assert!(again.node_count() <= p.node_count());
        }
    }
}
