//! Exact interventional Shapley attribution for tree ensembles.
//!
//! The value function is background-conditioned: v(S) is the mean model
//! output over background rows after overwriting the features in S with the
//! explained row's values. For a single tree and background row the game
//! depends only on the features where the two rows part ways, so each
//! root-leaf path contributes a closed-form combinatorial weight and the
//! whole computation is polynomial. [`brute_force_shap`] evaluates the same
//! value function by subset enumeration and serves as the oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbt::{GbtModel, Tree, TreeNode};

/// Additive attribution of one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    /// Mean background prediction, v(∅).
    pub base_value: f64,
    /// Per-feature contributions; base + Σφ equals the prediction.
    pub phi: Vec<f64>,
    pub feature_names: Vec<String>,
}

impl Attribution {
    pub fn prediction(&self) -> f64 {
        self.base_value + self.phi.iter().sum::<f64>()
    }
}

/// Factorial weights for paths with `a` features forced to the explained
/// row's side and `b` features forced to the background side:
/// in-weight (a−1)!·b!/(a+b)!, out-weight a!·(b−1)!/(a+b)!.
struct WeightTable {
    factorial: Vec<f64>,
}

impl WeightTable {
    fn new(max_players: usize) -> Self {
        let mut factorial = vec![1.0; max_players + 2];
        for i in 1..factorial.len() {
            factorial[i] = factorial[i - 1] * i as f64;
        }
        Self { factorial }
    }

    fn weight_in(&self, a: usize, b: usize) -> f64 {
        self.factorial[a - 1] * self.factorial[b] / self.factorial[a + b]
    }

    fn weight_out(&self, a: usize, b: usize) -> f64 {
        self.factorial[a] * self.factorial[b - 1] / self.factorial[a + b]
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Constraint {
    Free,
    /// Reaching the leaf requires the feature in the coalition.
    In,
    /// Reaching the leaf requires the feature out of the coalition.
    Out,
}

struct PathState {
    constraint: Vec<Constraint>,
    stack: Vec<usize>,
    n_in: usize,
    n_out: usize,
}

impl PathState {
    fn new(n_features: usize) -> Self {
        Self {
            constraint: vec![Constraint::Free; n_features],
            stack: Vec::new(),
            n_in: 0,
            n_out: 0,
        }
    }

    /// Push a constraint; `None` when it contradicts an earlier one.
    fn push(&mut self, feature: usize, c: Constraint) -> Option<bool> {
        match (self.constraint[feature], c) {
            (Constraint::Free, _) => {
                self.constraint[feature] = c;
                self.stack.push(feature);
                match c {
                    Constraint::In => self.n_in += 1,
                    Constraint::Out => self.n_out += 1,
                    Constraint::Free => unreachable!(),
                }
                Some(true)
            }
            (existing, wanted) if existing == wanted => Some(false),
            _ => None,
        }
    }

    fn pop(&mut self, pushed: bool) {
        if pushed {
            let feature = self.stack.pop().expect("pop matches push");
            match self.constraint[feature] {
                Constraint::In => self.n_in -= 1,
                Constraint::Out => self.n_out -= 1,
                Constraint::Free => unreachable!(),
            }
            self.constraint[feature] = Constraint::Free;
        }
    }
}

fn child_for(node: &TreeNode, value: f64) -> usize {
    match node {
        TreeNode::Split { threshold, left, right, default_left, .. } => {
            if value.is_nan() {
                if *default_left {
                    *left
                } else {
                    *right
                }
            } else if value < *threshold {
                *left
            } else {
                *right
            }
        }
        TreeNode::Leaf { .. } => unreachable!("child_for on a leaf"),
    }
}

/// Accumulate one tree's contributions for one background row into `phi`.
fn tree_contributions(
    tree: &Tree,
    x: &[f64],
    background: &[f64],
    weights: &WeightTable,
    state: &mut PathState,
    phi: &mut [f64],
    node: usize,
) {
    match tree.nodes[node] {
        TreeNode::Leaf { weight: leaf_value } => {
            let a = state.n_in;
            let b = state.n_out;
            if a + b == 0 {
                // Explained and background rows agree along the whole path;
                // the leaf only shifts the base value, not any feature.
                return;
            }
            if a > 0 {
                let w = weights.weight_in(a, b) * leaf_value;
                for &f in &state.stack {
                    if state.constraint[f] == Constraint::In {
                        phi[f] += w;
                    }
                }
            }
            if b > 0 {
                let w = weights.weight_out(a, b) * leaf_value;
                for &f in &state.stack {
                    if state.constraint[f] == Constraint::Out {
                        phi[f] -= w;
                    }
                }
            }
        }
        TreeNode::Split { feature, .. } => {
            let node_ref = &tree.nodes[node];
            let x_child = child_for(node_ref, x[feature]);
            let b_child = child_for(node_ref, background[feature]);
            if x_child == b_child {
                tree_contributions(tree, x, background, weights, state, phi, x_child);
                return;
            }
            if let Some(pushed) = state.push(feature, Constraint::In) {
                tree_contributions(tree, x, background, weights, state, phi, x_child);
                state.pop(pushed);
            }
            if let Some(pushed) = state.push(feature, Constraint::Out) {
                tree_contributions(tree, x, background, weights, state, phi, b_child);
                state.pop(pushed);
            }
        }
    }
}

fn tree_depth(tree: &Tree, node: usize) -> usize {
    match tree.nodes[node] {
        TreeNode::Leaf { .. } => 0,
        TreeNode::Split { left, right, .. } => {
            1 + tree_depth(tree, left).max(tree_depth(tree, right))
        }
    }
}

fn check_background(model: &GbtModel, x: &[f64], background: &[&[f64]]) -> Result<()> {
    if background.is_empty() {
        return Err(Error::Empty("SHAP background set is empty".into()));
    }
    model.check_schema(x)?;
    for row in background {
        model.check_schema(row)?;
    }
    Ok(())
}

/// Exact interventional Shapley values by the per-tree path recursion.
pub fn shap_values(
    model: &GbtModel,
    x: &[f64],
    background: &[&[f64]],
    feature_names: &[String],
) -> Result<Attribution> {
    check_background(model, x, background)?;
    let n_features = model.n_features;
    let max_depth = model.trees.iter().map(|t| tree_depth(t, 0)).max().unwrap_or(0);
    let weights = WeightTable::new(max_depth.max(1));

    let mut phi = vec![0.0; n_features];
    let mut base = 0.0;
    for b in background {
        base += model.predict_unchecked(b);
        let mut state = PathState::new(n_features);
        for tree in &model.trees {
            tree_contributions(tree, x, b, &weights, &mut state, &mut phi, 0);
        }
    }
    let inv_b = 1.0 / background.len() as f64;
    let eta = model.params.learning_rate;
    for p in phi.iter_mut() {
        *p *= eta * inv_b;
    }
    Ok(Attribution {
        base_value: base * inv_b,
        phi,
        feature_names: feature_names.to_vec(),
    })
}

/// Shapley values by enumeration of all feature subsets; the testing
/// oracle for [`shap_values`]. Refuses more than 12 features.
pub fn brute_force_shap(
    model: &GbtModel,
    x: &[f64],
    background: &[&[f64]],
    feature_names: &[String],
) -> Result<Attribution> {
    check_background(model, x, background)?;
    let d = model.n_features;
    if d > 12 {
        return Err(Error::Config(format!(
            "brute-force Shapley enumeration refused for {d} > 12 features"
        )));
    }

    // v(mask) = mean over background rows of the prediction on the
    // composite row taking x where the mask bit is set.
    let n_masks = 1usize << d;
    let mut v = vec![0.0; n_masks];
    let mut composite = vec![0.0; d];
    for mask in 0..n_masks {
        let mut total = 0.0;
        for b in background {
            for f in 0..d {
                composite[f] = if mask & (1 << f) != 0 { x[f] } else { b[f] };
            }
            total += model.predict_unchecked(&composite);
        }
        v[mask] = total / background.len() as f64;
    }

    let mut factorial = vec![1.0; d + 1];
    for i in 1..=d {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    let mut phi = vec![0.0; d];
    for f in 0..d {
        let bit = 1usize << f;
        for mask in 0..n_masks {
            if mask & bit != 0 {
                continue;
            }
            let s = (mask as u32).count_ones() as usize;
            let w = factorial[s] * factorial[d - s - 1] / factorial[d];
            phi[f] += w * (v[mask | bit] - v[mask]);
        }
    }
    Ok(Attribution { base_value: v[0], phi, feature_names: feature_names.to_vec() })
}

/// A feature's rank by mean absolute contribution over a set of events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRank {
    pub feature: String,
    pub mean_abs_phi: f64,
    /// 1-based rank, descending contribution; ties break on feature index.
    pub rank: usize,
}

/// Order features by mean |φ| over a set of attributions.
pub fn rank_features(attributions: &[Attribution]) -> Result<Vec<FeatureRank>> {
    let first = attributions
        .first()
        .ok_or_else(|| Error::Empty("no attributions to rank".into()))?;
    let d = first.phi.len();
    let mut mean_abs = vec![0.0; d];
    for a in attributions {
        if a.phi.len() != d {
            return Err(Error::SchemaMismatch {
                expected: format!("{d} features"),
                got: format!("{}", a.phi.len()),
            });
        }
        for (m, p) in mean_abs.iter_mut().zip(&a.phi) {
            *m += p.abs();
        }
    }
    for m in mean_abs.iter_mut() {
        *m /= attributions.len() as f64;
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| mean_abs[b].total_cmp(&mean_abs[a]).then(a.cmp(&b)));
    Ok(order
        .iter()
        .enumerate()
        .map(|(rank, &f)| FeatureRank {
            feature: first.feature_names.get(f).cloned().unwrap_or_else(|| format!("f{f}")),
            mean_abs_phi: mean_abs[f],
            rank: rank + 1,
        })
        .collect())
}
