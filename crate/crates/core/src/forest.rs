//! Random forest over feature vectors.
//!
//! Gini-split decision trees with bootstrap bagging. Every tree draws its
//! bootstrap and its per-node feature subsets from a stream keyed by
//! `(seed, tree index)`, so training is order-independent and the
//! serialized model is a pure function of (data, config, seed).

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio;
use crate::error::{Error, Result};
use crate::rng::stream;

/// Gini impurity `1 - sum p_c^2`.
pub fn gini(class_counts: &[f64]) -> f64 {
    let total: f64 = class_counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - class_counts.iter().map(|&c| (c / total) * (c / total)).sum::<f64>()
}

/// One decision-tree node. Every node keeps its training class counts so
/// prediction and impurity-based importances need no extra bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        counts: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        counts: Vec<f64>,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn counts(&self) -> &[f64] {
        match self {
            TreeNode::Leaf { counts } => counts,
            TreeNode::Split { counts, .. } => counts,
        }
    }

    /// Class frequencies at the leaf this row lands in.
    pub fn leaf_frequencies(&self, row: &[f64]) -> Vec<f64> {
        match self {
            TreeNode::Leaf { counts } => {
                let total: f64 = counts.iter().sum();
                counts.iter().map(|&c| c / total).collect()
            }
            TreeNode::Split { feature, threshold, left, right, .. } => {
                if row[*feature] <= *threshold {
                    left.leaf_frequencies(row)
                } else {
                    right.leaf_frequencies(row)
                }
            }
        }
    }
}

/// Per-tree fitting parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TreeParams {
    /// Features considered per node (random subset).
    pub max_features: usize,
    /// Minimum rows on each side of a split.
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_features: 2, min_leaf: 1 }
    }
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Best Gini-gain split over the candidate features. Thresholds sit at
/// midpoints between consecutive distinct sorted values; ties in gain go to
/// the lowest feature index, then the lowest threshold (candidates are
/// scanned in exactly that order, so the first strict improvement wins).
fn best_split(
    rows: &[Vec<f64>],
    labels: &[u8],
    indices: &[usize],
    candidates: &[usize],
    n_classes: usize,
    min_leaf: usize,
) -> Option<SplitChoice> {
    let n = indices.len() as f64;
    let mut parent_counts = vec![0.0f64; n_classes];
    for &i in indices {
        parent_counts[labels[i] as usize] += 1.0;
    }
    let parent_gini = gini(&parent_counts);
    let mut best: Option<SplitChoice> = None;

    for &feat in candidates {
        let mut order: Vec<usize> = indices.to_vec();
        order.sort_by(|&a, &b| {
            rows[a][feat].partial_cmp(&rows[b][feat]).expect("finite feature values")
        });
        let mut left_counts = vec![0.0f64; n_classes];
        let mut right_counts = parent_counts.clone();
        for pos in 0..order.len() - 1 {
            let i = order[pos];
            left_counts[labels[i] as usize] += 1.0;
            right_counts[labels[i] as usize] -= 1.0;
            let v = rows[i][feat];
            let v_next = rows[order[pos + 1]][feat];
            if v == v_next {
                continue;
            }
            let n_left = (pos + 1) as f64;
            let n_right = n - n_left;
            if (n_left as usize) < min_leaf || (n_right as usize) < min_leaf {
                continue;
            }
            let gain = parent_gini
                - (n_left / n) * gini(&left_counts)
                - (n_right / n) * gini(&right_counts);
            let threshold = (v + v_next) / 2.0;
            if best.as_ref().map_or(true, |b| gain > b.gain) {
                best = Some(SplitChoice { feature: feat, threshold, gain });
            }
        }
    }
    best
}

fn grow(
    rows: &[Vec<f64>],
    labels: &[u8],
    indices: &[usize],
    n_classes: usize,
    params: &TreeParams,
    rng: &mut impl Rng,
) -> TreeNode {
    let mut counts = vec![0.0f64; n_classes];
    for &i in indices {
        counts[labels[i] as usize] += 1.0;
    }
    let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
    if pure || indices.len() < 2 * params.min_leaf.max(1) {
        return TreeNode::Leaf { counts };
    }

    let n_features = rows[0].len();
    let k = params.max_features.clamp(1, n_features);
    // Partial Fisher-Yates draw of k distinct features, then sorted so the
    // tie-break order is by feature index.
    let mut pool: Vec<usize> = (0..n_features).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n_features);
        pool.swap(i, j);
    }
    let mut candidates: Vec<usize> = pool[..k].to_vec();
    candidates.sort_unstable();

    match best_split(rows, labels, indices, &candidates, n_classes, params.min_leaf) {
        None => TreeNode::Leaf { counts },
        Some(choice) => {
            let (mut left_idx, mut right_idx) = (Vec::new(), Vec::new());
            for &i in indices {
                if rows[i][choice.feature] <= choice.threshold {
                    left_idx.push(i);
                } else {
                    right_idx.push(i);
                }
            }
            let left = grow(rows, labels, &left_idx, n_classes, params, rng);
            let right = grow(rows, labels, &right_idx, n_classes, params, rng);
            TreeNode::Split {
                feature: choice.feature,
                threshold: choice.threshold,
                counts,
                left: Box::new(left),
                right: Box::new(right),
            }
        }
    }
}

/// Fit a single tree on the given rows (no bootstrap).
pub fn fit_tree(
    rows: &[Vec<f64>],
    labels: &[u8],
    n_classes: usize,
    params: &TreeParams,
    rng: &mut impl Rng,
) -> Result<TreeNode> {
    if rows.is_empty() || rows.len() != labels.len() {
        return Err(Error::Parameter(format!(
            "need matching non-empty rows/labels, got {}/{}",
            rows.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= n_classes) {
        return Err(Error::Parameter(format!("label {bad} outside {n_classes} classes")));
    }
    let indices: Vec<usize> = (0..rows.len()).collect();
    Ok(grow(rows, labels, &indices, n_classes, params, rng))
}

/// Forest configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_features: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 1000, max_features: 2, min_leaf: 1, seed: 1 }
    }
}

/// Trained ensemble; serializes to a single JSON document that round-trips
/// bitwise (floats use shortest-round-trip formatting).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestModel {
    pub format: String,
    pub n_classes: usize,
    pub feature_names: Vec<String>,
    pub config: ForestConfig,
    pub version: String,
    pub trees: Vec<TreeNode>,
}

/// Bootstrap row indices for one tree (size n, drawn with replacement).
pub fn bootstrap_indices(seed: u64, tree_index: u64, n: usize) -> Vec<usize> {
    let mut rng = stream(seed, "rf-bootstrap", tree_index);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Fit the ensemble. Tree `t` trains on `bootstrap_indices(seed, t, n)`
/// with node-level randomness from `(seed, "rf-grow", t)`.
pub fn fit_forest(
    rows: &[Vec<f64>],
    labels: &[u8],
    n_classes: usize,
    feature_names: &[String],
    cfg: &ForestConfig,
) -> Result<ForestModel> {
    use rayon::prelude::*;

    if rows.is_empty() || rows.len() != labels.len() {
        return Err(Error::Parameter(format!(
            "need matching non-empty rows/labels, got {}/{}",
            rows.len(),
            labels.len()
        )));
    }
    if cfg.n_trees == 0 {
        return Err(Error::Parameter("forest needs at least one tree".into()));
    }
    let params = TreeParams { max_features: cfg.max_features, min_leaf: cfg.min_leaf };
    let trees: Vec<TreeNode> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let picks = bootstrap_indices(cfg.seed, t as u64, rows.len());
            let boot_rows: Vec<Vec<f64>> = picks.iter().map(|&i| rows[i].clone()).collect();
            let boot_labels: Vec<u8> = picks.iter().map(|&i| labels[i]).collect();
            let mut rng = stream(cfg.seed, "rf-grow", t as u64);
            fit_tree(&boot_rows, &boot_labels, n_classes, &params, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(ForestModel {
        format: "forest-v1".into(),
        n_classes,
        feature_names: feature_names.to_vec(),
        config: cfg.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        trees,
    })
}

/// Mean of per-tree leaf class frequencies.
pub fn predict_proba(model: &ForestModel, row: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0f64; model.n_classes];
    for tree in &model.trees {
        let f = tree.leaf_frequencies(row);
        for (a, v) in acc.iter_mut().zip(f.iter()) {
            *a += v;
        }
    }
    let inv = 1.0 / model.trees.len() as f64;
    acc.iter_mut().for_each(|v| *v *= inv);
    acc
}

/// Most probable class.
pub fn predict(model: &ForestModel, row: &[f64]) -> usize {
    predict_proba(model, row)
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probabilities"))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

fn accumulate_importance(node: &TreeNode, n_root: f64, acc: &mut [f64]) {
    if let TreeNode::Split { feature, counts, left, right, .. } = node {
        let n: f64 = counts.iter().sum();
        let nl: f64 = left.counts().iter().sum();
        let nr: f64 = right.counts().iter().sum();
        let decrease =
            gini(counts) - (nl / n) * gini(left.counts()) - (nr / n) * gini(right.counts());
        acc[*feature] += (n / n_root) * decrease;
        accumulate_importance(left, n_root, acc);
        accumulate_importance(right, n_root, acc);
    }
}

/// Mean decrease in Gini impurity per feature, weighted by node sample
/// fraction, normalized per tree, averaged over trees, and renormalized to
/// sum to exactly 1.
pub fn feature_importance(model: &ForestModel) -> Vec<f64> {
    let n_features = model.feature_names.len();
    let mut total = vec![0.0f64; n_features];
    for tree in &model.trees {
        let mut acc = vec![0.0f64; n_features];
        let n_root: f64 = tree.counts().iter().sum();
        accumulate_importance(tree, n_root, &mut acc);
        let s: f64 = acc.iter().sum();
        if s > 0.0 {
            for (t, a) in total.iter_mut().zip(acc.iter()) {
                *t += a / s;
            }
        }
    }
    let s: f64 = total.iter().sum();
    if s > 0.0 {
        total.iter_mut().for_each(|v| *v /= s);
    }
    total
}

/// Permutation importance: mean accuracy drop over `repeats` shuffles of
/// each feature column. Off the default reporting path; values are raw
/// (not normalized) and may be negative.
pub fn permutation_importance(
    model: &ForestModel,
    rows: &[Vec<f64>],
    labels: &[u8],
    repeats: usize,
    seed: u64,
) -> Vec<f64> {
    let n = rows.len();
    let baseline = rows
        .iter()
        .zip(labels.iter())
        .filter(|(r, &l)| predict(model, r) == l as usize)
        .count() as f64
        / n as f64;
    let n_features = model.feature_names.len();
    let mut out = vec![0.0f64; n_features];
    for feat in 0..n_features {
        let mut drop_sum = 0.0;
        for rep in 0..repeats {
            let mut rng = stream(seed, "rf-permutation", (feat * repeats + rep) as u64);
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = rng.gen_range(0..=i);
                perm.swap(i, j);
            }
            let correct = rows
                .iter()
                .enumerate()
                .filter(|(i, r)| {
                    let mut shuffled = (*r).clone();
                    shuffled[feat] = rows[perm[*i]][feat];
                    predict(model, &shuffled) == labels[*i] as usize
                })
                .count() as f64;
            drop_sum += baseline - correct / n as f64;
        }
        out[feat] = drop_sum / repeats as f64;
    }
    out
}

impl ForestModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        dataio::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        dataio::read_json(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gini_known_values() {
        assert_eq!(gini(&[2.0, 2.0]), 0.5);
        assert_eq!(gini(&[5.0, 0.0, 0.0]), 0.0);
        assert!((gini(&[1.0, 1.0, 1.0]) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn separable_one_feature_split() {
        let rows: Vec<Vec<f64>> = vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]];
        let labels = vec![0u8, 0, 1, 1];
        let params = TreeParams { max_features: 1, min_leaf: 1 };
        let mut rng = stream(1, "tree-test", 0);
        let tree = fit_tree(&rows, &labels, 2, &params, &mut rng).unwrap();
        match &tree {
            TreeNode::Split { threshold, .. } => {
                assert!(*threshold > 1.0 && *threshold < 10.0, "threshold {threshold}");
            }
            _ => panic!("expected a split at the root"),
        }
        for (row, &label) in rows.iter().zip(labels.iter()) {
            let f = tree.leaf_frequencies(row);
            assert_eq!(f[label as usize], 1.0);
        }
    }

    #[test]
    fn pure_labels_give_single_leaf() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, -(i as f64)]).collect();
        let labels = vec![1u8; 6];
        let mut rng = stream(1, "tree-test", 1);
        let tree = fit_tree(&rows, &labels, 3, &TreeParams::default(), &mut rng).unwrap();
        assert!(matches!(tree, TreeNode::Leaf { .. }));
        assert!(fit_tree(&[], &[], 2, &TreeParams::default(), &mut rng).is_err());
    }

    /// Exhaustive-search oracle over all features and midpoint thresholds,
    /// with the same tie rule (lowest feature, then lowest threshold).
    fn brute_force_root(
        rows: &[Vec<f64>],
        labels: &[u8],
        n_classes: usize,
    ) -> Option<(usize, f64)> {
        let n = rows.len() as f64;
        let mut parent = vec![0.0; n_classes];
        for &l in labels {
            parent[l as usize] += 1.0;
        }
        let pg = gini(&parent);
        let mut best: Option<(usize, f64, f64)> = None;
        for feat in 0..rows[0].len() {
            let mut values: Vec<f64> = rows.iter().map(|r| r[feat]).collect();
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            values.dedup();
            for w in values.windows(2) {
                let thr = (w[0] + w[1]) / 2.0;
                let mut lc = vec![0.0; n_classes];
                let mut rc = vec![0.0; n_classes];
                for (row, &l) in rows.iter().zip(labels.iter()) {
                    if row[feat] <= thr {
                        lc[l as usize] += 1.0;
                    } else {
                        rc[l as usize] += 1.0;
                    }
                }
                let nl: f64 = lc.iter().sum();
                let nr: f64 = rc.iter().sum();
                if nl < 1.0 || nr < 1.0 {
                    continue;
                }
                let gain = pg - (nl / n) * gini(&lc) - (nr / n) * gini(&rc);
                if best.map_or(true, |(_, _, g)| gain > g) {
                    best = Some((feat, thr, gain));
                }
            }
        }
        best.map(|(f, t, _)| (f, t))
    }

    #[test]
    fn root_split_matches_exhaustive_oracle() {
        for trial in 0..30u64 {
            let mut rng = stream(5, "tree-oracle", trial);
            let n = 10 + (trial as usize % 41);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..5).map(|_| (rng.gen_range(0..12) as f64) * 0.5).collect())
                .collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..3) as u8).collect();
            let params = TreeParams { max_features: 5, min_leaf: 1 };
            let mut tree_rng = stream(5, "tree-oracle-grow", trial);
            let tree = fit_tree(&rows, &labels, 3, &params, &mut tree_rng).unwrap();
            let oracle = brute_force_root(&rows, &labels, 3);
            match (&tree, oracle) {
                (TreeNode::Split { feature, threshold, .. }, Some((of, ot))) => {
                    assert_eq!(*feature, of, "trial {trial}");
                    assert!((threshold - ot).abs() < 1e-12, "trial {trial}");
                }
                (TreeNode::Leaf { .. }, None) => {}
                (TreeNode::Leaf { counts }, Some(_)) => {
                    // A leaf is only valid when the node was already pure.
                    assert_eq!(counts.iter().filter(|&&c| c > 0.0).count(), 1, "trial {trial}");
                }
                (TreeNode::Split { .. }, None) => panic!("split without oracle split"),
            }
        }
    }

    fn blob_data(n_per_class: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3u8 {
            for i in 0..n_per_class {
                let mut rng = stream(seed, "rf-blobs", (c as u64) << 32 | i as u64);
                let center = 4.0 * c as f64;
                let row: Vec<f64> = (0..5)
                    .map(|_| center + rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect();
                rows.push(row);
                labels.push(c);
            }
        }
        (rows, labels)
    }

    #[test]
    fn single_tree_forest_reduces_to_fit_tree_on_bootstrap() {
        let (rows, labels) = blob_data(20, 7);
        let cfg = ForestConfig { n_trees: 1, ..ForestConfig::default() };
        let names: Vec<String> = (0..5).map(|i| format!("f{i}")).collect();
        let model = fit_forest(&rows, &labels, 3, &names, &cfg).unwrap();
        let picks = bootstrap_indices(cfg.seed, 0, rows.len());
        let boot_rows: Vec<Vec<f64>> = picks.iter().map(|&i| rows[i].clone()).collect();
        let boot_labels: Vec<u8> = picks.iter().map(|&i| labels[i]).collect();
        let params = TreeParams { max_features: cfg.max_features, min_leaf: cfg.min_leaf };
        let mut rng = stream(cfg.seed, "rf-grow", 0);
        let tree = fit_tree(&boot_rows, &boot_labels, 3, &params, &mut rng).unwrap();
        assert_eq!(model.trees[0], tree);
    }

    #[test]
    fn forest_is_deterministic_and_round_trips() {
        let (rows, labels) = blob_data(15, 8);
        let cfg = ForestConfig { n_trees: 25, ..ForestConfig::default() };
        let names: Vec<String> = (0..5).map(|i| format!("f{i}")).collect();
        let m1 = fit_forest(&rows, &labels, 3, &names, &cfg).unwrap();
        let m2 = fit_forest(&rows, &labels, 3, &names, &cfg).unwrap();
        let dir = std::env::temp_dir().join(format!("gwdet-rf-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        m1.save(&dir.join("a.json")).unwrap();
        m2.save(&dir.join("b.json")).unwrap();
        let a = std::fs::read(dir.join("a.json")).unwrap();
        let b = std::fs::read(dir.join("b.json")).unwrap();
        assert_eq!(a, b);
        let back = ForestModel::load(&dir.join("a.json")).unwrap();
        std::fs::remove_dir_all(&dir).ok();
        assert_eq!(back.trees, m1.trees);
    }

    #[test]
    fn out_of_bag_accuracy_on_blobs() {
        let (rows, labels) = blob_data(40, 9);
        let cfg = ForestConfig { n_trees: 60, ..ForestConfig::default() };
        let names: Vec<String> = (0..5).map(|i| format!("f{i}")).collect();
        let model = fit_forest(&rows, &labels, 3, &names, &cfg).unwrap();
        // Aggregate votes from trees whose bootstrap excluded each row.
        let mut correct = 0usize;
        let mut counted = 0usize;
        let in_bag: Vec<Vec<bool>> = (0..cfg.n_trees)
            .map(|t| {
                let mut mask = vec![false; rows.len()];
                for i in bootstrap_indices(cfg.seed, t as u64, rows.len()) {
                    mask[i] = true;
                }
                mask
            })
            .collect();
        for (i, row) in rows.iter().enumerate() {
            let mut acc = vec![0.0f64; 3];
            let mut votes = 0usize;
            for (t, tree) in model.trees.iter().enumerate() {
                if !in_bag[t][i] {
                    for (a, v) in acc.iter_mut().zip(tree.leaf_frequencies(row)) {
                        *a += v;
                    }
                    votes += 1;
                }
            }
            if votes == 0 {
                continue;
            }
            counted += 1;
            let pred = acc
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if pred == labels[i] as usize {
                correct += 1;
            }
        }
        let oob = correct as f64 / counted as f64;
        assert!(oob > 0.95, "out-of-bag accuracy {oob}");
    }

    #[test]
    fn probabilities_are_distributions_and_match_hand_computation() {
        // Three hand-built stumps.
        let stump = |thr: f64, lc: Vec<f64>, rc: Vec<f64>| TreeNode::Split {
            feature: 0,
            threshold: thr,
            counts: lc.iter().zip(rc.iter()).map(|(a, b)| a + b).collect(),
            left: Box::new(TreeNode::Leaf { counts: lc }),
            right: Box::new(TreeNode::Leaf { counts: rc }),
        };
        let model = ForestModel {
            format: "forest-v1".into(),
            n_classes: 3,
            feature_names: vec!["f0".into()],
            config: ForestConfig { n_trees: 3, ..ForestConfig::default() },
            version: "test".into(),
            trees: vec![
                stump(0.5, vec![2.0, 0.0, 0.0], vec![0.0, 1.0, 1.0]),
                stump(1.5, vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 2.0]),
                stump(0.5, vec![0.0, 4.0, 0.0], vec![1.0, 0.0, 3.0]),
            ],
        };
        // Row with x=1.0: tree1 right (0, .5, .5), tree2 left (.5, .5, 0),
        // tree3 right (.25, 0, .75); mean = (.25, 1/3, 5/12).
        let p = predict_proba(&model, &[1.0]);
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((p[2] - 5.0 / 12.0).abs() < 1e-12);
        let total: f64 = p.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        // Single pure-leaf tree gives one-hot output.
        let pure = ForestModel {
            trees: vec![TreeNode::Leaf { counts: vec![0.0, 3.0, 0.0] }],
            config: ForestConfig { n_trees: 1, ..ForestConfig::default() },
            ..model
        };
        assert_eq!(predict_proba(&pure, &[0.0]), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn importance_normalizes_and_concentrates() {
        let (rows, labels) = blob_data(20, 10);
        let cfg = ForestConfig { n_trees: 50, ..ForestConfig::default() };
        let names: Vec<String> = (0..5).map(|i| format!("f{i}")).collect();
        let model = fit_forest(&rows, &labels, 3, &names, &cfg).unwrap();
        let imp = feature_importance(&model);
        let total: f64 = imp.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(imp.iter().all(|&v| v >= 0.0));
        // A forest of single-feature stumps puts all importance there.
        let stump_rows: Vec<Vec<f64>> =
            (0..10).map(|i| vec![i as f64, 0.0, 0.0, 0.0, 0.0]).collect();
        let stump_labels: Vec<u8> = (0..10).map(|i| (i >= 5) as u8).collect();
        let stump_cfg = ForestConfig { n_trees: 10, max_features: 5, ..ForestConfig::default() };
        let stumps = fit_forest(&stump_rows, &stump_labels, 2, &names, &stump_cfg).unwrap();
        let imp = feature_importance(&stumps);
        assert!((imp[0] - 1.0).abs() < 1e-9);
        assert!(imp[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forest_training_accuracy_at_least_single_tree() {
        for seed in 20..25u64 {
            let (rows, labels) = blob_data(25, seed);
            let names: Vec<String> = (0..5).map(|i| format!("f{i}")).collect();
            let tree_cfg = ForestConfig { n_trees: 1, seed, ..ForestConfig::default() };
            let forest_cfg = ForestConfig { n_trees: 200, seed, ..ForestConfig::default() };
            let single = fit_forest(&rows, &labels, 3, &names, &tree_cfg).unwrap();
            let forest = fit_forest(&rows, &labels, 3, &names, &forest_cfg).unwrap();
            let acc = |m: &ForestModel| {
                rows.iter()
                    .zip(labels.iter())
                    .filter(|(r, &l)| predict(m, r) == l as usize)
                    .count()
            };
            assert!(acc(&forest) >= acc(&single), "seed {seed}");
        }
    }

    #[test]
    fn permutation_importance_finds_the_informative_feature() {
        let (rows, labels) = blob_data(20, 11);
        let names: Vec<String> = (0..5).map(|i| format!("f{i}")).collect();
        let cfg = ForestConfig { n_trees: 30, ..ForestConfig::default() };
        let model = fit_forest(&rows, &labels, 3, &names, &cfg).unwrap();
        let imp = permutation_importance(&model, &rows, &labels, 3, 99);
        // All five features carry signal in the blobs; just check sanity.
        assert_eq!(imp.len(), 5);
        assert!(imp.iter().any(|&v| v > 0.0));
    }
}
