//! Federated random-forest training.
//!
//! Each miner trains a small CART forest (Gini impurity, midpoint
//! thresholds, per-node feature subsampling, optional bootstrap) on its
//! stratified shard of the training data. Aggregation takes the union
//! of all trees; prediction soft-votes by averaging every tree's leaf
//! class-frequency distribution and taking the argmax, resolving ties
//! toward the earlier class in the shared class list.

use crate::error::Error;
use crate::features::{FeatureVector, LabeledDataset, FEATURE_DIM};
use crate::report;
use crate::seeding::derive_seed;
use crate::types::TrafficClass;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-tree growth limits.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeParams {
    /// Maximum tree depth; the root sits at depth 0.
    pub max_depth: usize,
    /// Minimum rows on each side of a split.
    pub min_leaf: usize,
    /// Features drawn (without replacement) per node.
    pub feature_subsample: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 12,
            min_leaf: 2,
            feature_subsample: 3,
        }
    }
}

/// Per-miner forest configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    /// Trees per miner.
    pub n_trees: usize,
    /// Resample the shard with replacement per tree.
    pub bootstrap: bool,
    /// Growth limits shared by all trees.
    pub tree: TreeParams,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 10,
            bootstrap: true,
            tree: TreeParams::default(),
        }
    }
}

impl ForestParams {
    /// Checks parameter ranges.
    pub fn validate(&self) -> Result<(), Error> {
        if self.n_trees == 0 {
            return Err(Error::InvalidInput("n_trees must be positive".into()));
        }
        if self.tree.max_depth == 0 {
            return Err(Error::InvalidInput("max_depth must be positive".into()));
        }
        if self.tree.min_leaf == 0 {
            return Err(Error::InvalidInput("min_leaf must be positive".into()));
        }
        if self.tree.feature_subsample == 0 || self.tree.feature_subsample > FEATURE_DIM {
            return Err(Error::InvalidInput(format!(
                "feature_subsample must lie in 1..={FEATURE_DIM}"
            )));
        }
        Ok(())
    }
}

/// One tree node. Children are indices into the tree's node vector.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    /// Internal split: rows with `x[feature] <= threshold` go left.
    Split {
        /// Feature column index.
        feature: usize,
        /// Midpoint threshold.
        threshold: f64,
        /// Index of the left child.
        left: usize,
        /// Index of the right child.
        right: usize,
    },
    /// Leaf holding the training class histogram.
    Leaf {
        /// Rows per class (class-list order) that reached this leaf.
        counts: Vec<u64>,
    },
}

/// A CART decision tree over the nine-dimensional feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    /// Nodes in preorder; node 0 is the root.
    pub nodes: Vec<TreeNode>,
    /// Class list shared with the dataset the tree was trained on.
    pub classes: Vec<TrafficClass>,
}

impl DecisionTree {
    /// Index of the leaf an input routes to.
    pub fn leaf_index_for(&self, x: &[f64; FEATURE_DIM]) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { .. } => return at,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Leaf class-frequency distribution for an input.
    pub fn leaf_distribution(&self, x: &[f64; FEATURE_DIM]) -> Vec<f64> {
        match &self.nodes[self.leaf_index_for(x)] {
            TreeNode::Leaf { counts } => {
                let total: u64 = counts.iter().sum();
                counts.iter().map(|&c| c as f64 / total as f64).collect()
            }
            TreeNode::Split { .. } => unreachable!("leaf_index_for returns a leaf"),
        }
    }

    /// Predicted class index (majority of the reached leaf, ties to the
    /// earlier class).
    pub fn predict_index(&self, x: &[f64; FEATURE_DIM]) -> usize {
        argmax(&self.leaf_distribution(x))
    }

    /// Predicted class.
    pub fn predict(&self, x: &[f64; FEATURE_DIM]) -> TrafficClass {
        self.classes[self.predict_index(x)]
    }

    /// Maximum node depth (root at 0).
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize, d: usize) -> usize {
            match &nodes[at] {
                TreeNode::Leaf { .. } => d,
                TreeNode::Split { left, right, .. } => {
                    walk(nodes, *left, d + 1).max(walk(nodes, *right, d + 1))
                }
            }
        }
        walk(&self.nodes, 0, 0)
    }

    /// Majority class index of a leaf node.
    pub fn leaf_majority(&self, leaf: usize) -> usize {
        match &self.nodes[leaf] {
            TreeNode::Leaf { counts } => {
                let mut best = 0;
                for (i, &c) in counts.iter().enumerate() {
                    if c > counts[best] {
                        best = i;
                    }
                }
                best
            }
            TreeNode::Split { .. } => panic!("node {leaf} is not a leaf"),
        }
    }
}

/// Index of the strictly largest entry; ties resolve to the earliest.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Gini impurity of a class histogram. Zero for empty or pure counts.
pub fn gini_impurity(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            p * p
        })
        .sum::<f64>()
}

/// A miner's trained forest together with its training provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialForest {
    /// Miner identifier (no whitespace).
    pub miner_id: String,
    /// The miner's trees.
    pub trees: Vec<DecisionTree>,
    /// Shared class list.
    pub classes: Vec<TrafficClass>,
    /// Rows in the shard the miner trained on.
    pub shard_size: usize,
    /// Seed the miner trained with.
    pub seed: u64,
    /// Training configuration.
    pub params: ForestParams,
}

/// The aggregated model: the union of every miner's trees.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedForest {
    /// Contributing partial forests, in aggregation order.
    pub partials: Vec<PartialForest>,
    /// Shared class list.
    pub classes: Vec<TrafficClass>,
}

impl FederatedForest {
    /// Soft-vote class distribution: the mean of every tree's leaf
    /// distribution across all partials.
    pub fn predict_proba(&self, x: &[f64; FEATURE_DIM]) -> Vec<f64> {
        let mut sum = vec![0.0; self.classes.len()];
        let mut trees = 0usize;
        for partial in &self.partials {
            for tree in &partial.trees {
                for (acc, p) in sum.iter_mut().zip(tree.leaf_distribution(x)) {
                    *acc += p;
                }
                trees += 1;
            }
        }
        for acc in &mut sum {
            *acc /= trees as f64;
        }
        sum
    }

    /// Predicted class index.
    pub fn predict_index(&self, x: &[f64; FEATURE_DIM]) -> usize {
        argmax(&self.predict_proba(x))
    }

    /// Predicted class.
    pub fn predict(&self, x: &[f64; FEATURE_DIM]) -> TrafficClass {
        self.classes[self.predict_index(x)]
    }

    /// Total tree count across partials.
    pub fn n_trees(&self) -> usize {
        self.partials.iter().map(|p| p.trees.len()).sum()
    }

    /// Fraction of rows whose prediction matches the label.
    pub fn accuracy(&self, ds: &LabeledDataset) -> f64 {
        if ds.is_empty() {
            return 0.0;
        }
        let hits = ds
            .rows
            .iter()
            .filter(|r| self.predict(&r.values) == r.label)
            .count();
        hits as f64 / ds.len() as f64
    }
}

/// Splits a dataset into `k` stratified shards.
///
/// Per class, rows are shuffled and dealt round-robin, so per-class
/// counts across shards differ by at most one and the shards partition
/// the dataset. Every class must have at least `k` rows.
pub fn shard(ds: &LabeledDataset, k: usize, seed: u64) -> Result<Vec<LabeledDataset>, Error> {
    if k == 0 {
        return Err(Error::InvalidInput("shard count must be positive".into()));
    }
    if ds.is_empty() {
        return Err(Error::EmptyInput("cannot shard an empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shards: Vec<Vec<FeatureVector>> = vec![Vec::new(); k];
    for &class in &ds.class_names {
        let mut indices: Vec<usize> = (0..ds.rows.len())
            .filter(|&i| ds.rows[i].label == class)
            .collect();
        if indices.len() < k {
            return Err(Error::Stratification {
                class: class.name().to_string(),
                rows: indices.len(),
                shards: k,
            });
        }
        indices.shuffle(&mut rng);
        for (pos, &row) in indices.iter().enumerate() {
            shards[pos % k].push(ds.rows[row].clone());
        }
    }
    Ok(shards
        .into_iter()
        .map(|rows| LabeledDataset {
            rows,
            class_names: ds.class_names.clone(),
            norm: ds.norm.clone(),
        })
        .collect())
}

struct TreeBuilder<'a> {
    rows: &'a [FeatureVector],
    classes: &'a [TrafficClass],
    params: &'a TreeParams,
}

impl<'a> TreeBuilder<'a> {
    fn class_histogram(&self, indices: &[usize]) -> Vec<u64> {
        let mut counts = vec![0u64; self.classes.len()];
        for &i in indices {
            let c = self
                .classes
                .iter()
                .position(|c| *c == self.rows[i].label)
                .expect("row label in class list");
            counts[c] += 1;
        }
        counts
    }

    /// Best split among a feature subset: maximal Gini decrease, ties
    /// resolved to the lowest feature index, then lowest threshold.
    fn best_split(
        &self,
        indices: &[usize],
        features: &[usize],
        parent_gini: f64,
    ) -> Option<(usize, f64, f64)> {
        let n = indices.len() as f64;
        let parent_hist = self.class_histogram(indices);
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in features {
            let mut ordered: Vec<usize> = indices.to_vec();
            ordered.sort_by(|&a, &b| {
                self.rows[a].values[f]
                    .partial_cmp(&self.rows[b].values[f])
                    .expect("finite feature values")
            });
            let mut left_hist = vec![0u64; self.classes.len()];
            let mut right_hist = parent_hist.clone();
            for cut in 1..ordered.len() {
                let moved = ordered[cut - 1];
                let c = self
                    .classes
                    .iter()
                    .position(|c| *c == self.rows[moved].label)
                    .expect("row label in class list");
                left_hist[c] += 1;
                right_hist[c] -= 1;

                let prev = self.rows[ordered[cut - 1]].values[f];
                let next = self.rows[ordered[cut]].values[f];
                if prev == next {
                    continue;
                }
                let n_left = cut;
                let n_right = ordered.len() - cut;
                if n_left < self.params.min_leaf || n_right < self.params.min_leaf {
                    continue;
                }
                let weighted = (n_left as f64 * gini_impurity(&left_hist)
                    + n_right as f64 * gini_impurity(&right_hist))
                    / n;
                let decrease = parent_gini - weighted;
                let threshold = prev + (next - prev) / 2.0;
                let better = match best {
                    None => decrease > 0.0,
                    Some((d, _, _)) => decrease > d,
                };
                if better {
                    best = Some((decrease, f, threshold));
                }
            }
        }
        best.map(|(d, f, t)| (f, t, d))
    }

    fn build(
        &self,
        indices: Vec<usize>,
        depth: usize,
        rng: &mut ChaCha8Rng,
        nodes: &mut Vec<TreeNode>,
    ) -> usize {
        let histogram = self.class_histogram(&indices);
        let parent_gini = gini_impurity(&histogram);
        let can_split = depth < self.params.max_depth
            && indices.len() >= 2 * self.params.min_leaf
            && parent_gini > 0.0;

        let split = if can_split {
            let mut features = sample_features(rng, self.params.feature_subsample);
            features.sort_unstable();
            self.best_split(&indices, &features, parent_gini)
        } else {
            None
        };

        match split {
            None => {
                nodes.push(TreeNode::Leaf { counts: histogram });
                nodes.len() - 1
            }
            Some((feature, threshold, _)) => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = indices
                    .into_iter()
                    .partition(|&i| self.rows[i].values[feature] <= threshold);
                let at = nodes.len();
                nodes.push(TreeNode::Split {
                    feature,
                    threshold,
                    left: 0,
                    right: 0,
                });
                let left = self.build(left_rows, depth + 1, rng, nodes);
                let right = self.build(right_rows, depth + 1, rng, nodes);
                if let TreeNode::Split {
                    left: l, right: r, ..
                } = &mut nodes[at]
                {
                    *l = left;
                    *r = right;
                }
                at
            }
        }
    }
}

fn sample_features(rng: &mut ChaCha8Rng, k: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..FEATURE_DIM).collect();
    all.shuffle(rng);
    all.truncate(k);
    all
}

/// Trains a single CART tree on `rows`.
///
/// The class histogram of every leaf covers at least `min_leaf` rows,
/// so `rows` must hold at least that many.
pub fn train_tree(
    rows: &[FeatureVector],
    classes: &[TrafficClass],
    params: &TreeParams,
    rng: &mut ChaCha8Rng,
) -> Result<DecisionTree, Error> {
    if rows.len() < params.min_leaf {
        return Err(Error::InvalidInput(format!(
            "{} rows cannot form a leaf of at least {}",
            rows.len(),
            params.min_leaf
        )));
    }
    for row in rows {
        if !classes.contains(&row.label) {
            return Err(Error::ClassMismatch(format!(
                "row label {} missing from class list",
                row.label
            )));
        }
    }
    let builder = TreeBuilder {
        rows,
        classes,
        params,
    };
    let mut nodes = Vec::new();
    builder.build((0..rows.len()).collect(), 0, rng, &mut nodes);
    Ok(DecisionTree {
        nodes,
        classes: classes.to_vec(),
    })
}

/// Trains one miner's forest on its shard.
///
/// Tree `i` draws its randomness (bootstrap resample and feature
/// subsamples) from a stream derived from `seed` and `i`, so results
/// do not depend on evaluation order.
pub fn train_partial(
    shard: &LabeledDataset,
    miner_id: &str,
    params: &ForestParams,
    seed: u64,
) -> Result<PartialForest, Error> {
    params.validate()?;
    validate_miner_id(miner_id)?;
    if shard.len() < params.tree.min_leaf {
        return Err(Error::InvalidInput(format!(
            "shard of {} rows is smaller than min_leaf {}",
            shard.len(),
            params.tree.min_leaf
        )));
    }
    let mut trees = Vec::with_capacity(params.n_trees);
    for t in 0..params.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("tree/{t}")));
        let tree = if params.bootstrap {
            let resample: Vec<FeatureVector> = (0..shard.len())
                .map(|_| shard.rows[rng.gen_range(0..shard.len())].clone())
                .collect();
            train_tree(&resample, &shard.class_names, &params.tree, &mut rng)?
        } else {
            train_tree(&shard.rows, &shard.class_names, &params.tree, &mut rng)?
        };
        trees.push(tree);
    }
    Ok(PartialForest {
        miner_id: miner_id.to_string(),
        trees,
        classes: shard.class_names.clone(),
        shard_size: shard.len(),
        seed,
        params: params.clone(),
    })
}

/// Checks that a miner identifier is non-empty single-token text.
pub fn validate_miner_id(miner_id: &str) -> Result<(), Error> {
    if miner_id.is_empty() || miner_id.chars().any(|c| c.is_whitespace()) {
        return Err(Error::InvalidInput(format!(
            "miner id {miner_id:?} must be non-empty and contain no whitespace"
        )));
    }
    Ok(())
}

/// Aggregates partial forests into the federated model.
///
/// All partials must share one class list. Prediction is invariant to
/// the order of `partials`.
pub fn aggregate(partials: Vec<PartialForest>) -> Result<FederatedForest, Error> {
    if partials.is_empty() {
        return Err(Error::EmptyInput("no partial forests to aggregate"));
    }
    let classes = partials[0].classes.clone();
    for p in &partials[1..] {
        if p.classes != classes {
            return Err(Error::ClassMismatch(format!(
                "partial {} trained on a different class list",
                p.miner_id
            )));
        }
    }
    Ok(FederatedForest { partials, classes })
}

/// Shards, trains one partial per miner, and aggregates.
pub fn train_federated(
    train: &LabeledDataset,
    k: usize,
    params: &ForestParams,
    seed: u64,
) -> Result<FederatedForest, Error> {
    let shards = shard(train, k, derive_seed(seed, "shard"))?;
    let partials = shards
        .iter()
        .enumerate()
        .map(|(i, s)| {
            train_partial(
                s,
                &format!("miner{i:02}"),
                params,
                derive_seed(seed, &format!("miner/{i}")),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    aggregate(partials)
}

/// Evaluation metric for the federation-versus-central comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Plain accuracy.
    Accuracy,
    /// Macro-averaged F1 over classes with test support.
    MacroF1,
}

/// Absolute gap between the federated and centralized models on the
/// chosen metric over a shared test set.
pub fn phi_loss(
    federated: &FederatedForest,
    central: &FederatedForest,
    test: &LabeledDataset,
    metric: Metric,
) -> Result<f64, Error> {
    let score = |model: &FederatedForest| -> Result<f64, Error> {
        match metric {
            Metric::Accuracy => Ok(model.accuracy(test)),
            Metric::MacroF1 => Ok(report::metrics(&report::confusion(model, test)?).macro_f1),
        }
    };
    Ok((score(federated)? - score(central)?).abs())
}
