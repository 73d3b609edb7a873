//! Gradient-boosted regression trees with a second-order squared-error
//! objective, exact greedy split search and deterministic training.
//!
//! The datasets here are small (hundreds of rows), so split finding scans
//! presorted feature columns level by level with no histogram
//! approximation. That keeps training byte-reproducible and lets tests
//! check chosen splits against exhaustive enumeration.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Boosting hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_rounds: u32,
    pub learning_rate: f64,
    pub max_depth: u32,
    pub min_child_weight: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Fixed cost per split.
    pub gamma: f64,
    /// Fraction of rows drawn per round, (0, 1].
    pub subsample: f64,
    /// Fraction of features drawn per round, (0, 1].
    pub colsample: f64,
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            n_rounds: 300,
            learning_rate: 0.1,
            max_depth: 3,
            min_child_weight: 1.0,
            lambda: 1.0,
            gamma: 0.0,
            subsample: 1.0,
            colsample: 1.0,
            seed: 0,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config(format!("learning_rate {} outside (0, 1]", self.learning_rate)));
        }
        if self.max_depth < 1 {
            return Err(Error::Config("max_depth must be ≥ 1".into()));
        }
        if !(self.min_child_weight >= 0.0) {
            return Err(Error::Config("min_child_weight must be ≥ 0".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be ≥ 0".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config("gamma must be ≥ 0".into()));
        }
        for (name, v) in [("subsample", self.subsample), ("colsample", self.colsample)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} {v} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

/// One tree node. `default_left` is kept in the format for inputs with
/// missing values; features are complete after imputation, so training
/// always emits `true`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        default_left: bool,
    },
    Leaf { weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    /// Raw tree output for one row (before the learning rate).
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { weight } => return weight,
                TreeNode::Split { feature, threshold, left, right, default_left } => {
                    let v = x[feature];
                    i = if v.is_nan() {
                        if default_left {
                            left
                        } else {
                            right
                        }
                    } else if v < threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    fn eval_columns(&self, cols: &[Vec<f64>], row: usize) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { weight } => return weight,
                TreeNode::Split { feature, threshold, left, right, .. } => {
                    i = if cols[feature][row] < threshold { left } else { right };
                }
            }
        }
    }
}

/// A trained ensemble with its frozen feature schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub format_version: u32,
    pub schema_id: String,
    pub n_features: usize,
    pub base_score: f64,
    pub params: GbtParams,
    pub trees: Vec<Tree>,
}

impl GbtModel {
    /// Ensemble prediction: base score plus the learning-rate-scaled sum of
    /// tree outputs.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_schema(x)?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.eval(x)).sum();
        self.base_score + self.params.learning_rate * sum
    }

    /// Prediction using only the first `rounds` trees.
    pub fn predict_with_rounds(&self, x: &[f64], rounds: usize) -> Result<f64> {
        self.check_schema(x)?;
        let sum: f64 = self.trees.iter().take(rounds).map(|t| t.eval(x)).sum();
        Ok(self.base_score + self.params.learning_rate * sum)
    }

    pub fn check_schema(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::SchemaMismatch {
                expected: format!("{} features ({})", self.n_features, self.schema_id),
                got: format!("{} values", x.len()),
            });
        }
        Ok(())
    }

    /// Canonical JSON serialization; float round trips are lossless.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: GbtModel = serde_json::from_str(s)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format_version {}",
                model.format_version
            )));
        }
        Ok(model)
    }
}

/// Structure gain of a split under the second-order objective:
///
/// gain = ½·[G_L²/(H_L+λ) + G_R²/(H_R+λ) − (G_L+G_R)²/(H_L+H_R+λ)] − γ
pub fn split_gain(
    g_l: f64,
    h_l: f64,
    g_r: f64,
    h_r: f64,
    lambda: f64,
    gamma: f64,
) -> Result<f64> {
    if h_l < 0.0 || h_r < 0.0 {
        return Err(Error::Config("negative hessian sum".into()));
    }
    if h_l + lambda <= 0.0 || h_r + lambda <= 0.0 || h_l + h_r + lambda <= 0.0 {
        return Err(Error::Config(
            "undefined split: zero hessian with zero lambda".into(),
        ));
    }
    let score = |g: f64, h: f64| g * g / (h + lambda);
    Ok(0.5 * (score(g_l, h_l) + score(g_r, h_r) - score(g_l + g_r, h_l + h_r)) - gamma)
}

/// Optimal leaf value of the second-order objective: −G/(H+λ).
pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> Result<f64> {
    if h + lambda <= 0.0 {
        return Err(Error::Config("undefined leaf: H + lambda must be > 0".into()));
    }
    Ok(-g / (h + lambda))
}

/// The mean-predicting baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DummyModel {
    pub mean: f64,
}

impl DummyModel {
    pub fn train(targets: &[f64]) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Empty("dummy model needs at least one target".into()));
        }
        Ok(Self { mean: targets.iter().sum::<f64>() / targets.len() as f64 })
    }

    pub fn predict(&self) -> f64 {
        self.mean
    }
}

struct RunningStats {
    g: f64,
    h: f64,
    n: usize,
    prev: Option<f64>,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct BuildNode {
    g: f64,
    h: f64,
    n: usize,
    tree_index: usize,
}

fn sample_without_replacement<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k.min(n));
    idx.sort_unstable();
    idx
}

/// Train an ensemble on row-major features. Deterministic in
/// (data, params, seed); per-round row and column draws come from one
/// seeded generator.
pub fn train_gbt(
    rows: &[Vec<f64>],
    targets: &[f64],
    params: &GbtParams,
    schema_id: &str,
) -> Result<GbtModel> {
    params.validate()?;
    let n = rows.len();
    if n == 0 {
        return Err(Error::Empty("training set has no rows".into()));
    }
    if targets.len() != n {
        return Err(Error::Config(format!("{n} rows but {} targets", targets.len())));
    }
    let n_features = rows[0].len();
    if n_features == 0 {
        return Err(Error::Empty("training set has no features".into()));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n_features {
            return Err(Error::SchemaMismatch {
                expected: format!("{n_features} features"),
                got: format!("{} in row {i}", row.len()),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite feature in row {i}")));
        }
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("non-finite target".into()));
    }

    // Column-major copy plus one presort per feature (stable, so ties keep
    // row order and training stays deterministic).
    let cols: Vec<Vec<f64>> =
        (0..n_features).map(|f| rows.iter().map(|r| r[f]).collect()).collect();
    let sorted_idx: Vec<Vec<usize>> = cols
        .iter()
        .map(|col| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
            idx
        })
        .collect();

    let base_score = targets.iter().sum::<f64>() / n as f64;
    let mut preds = vec![base_score; n];
    let mut rng = ChaCha12Rng::seed_from_u64(params.seed);
    let mut trees = Vec::with_capacity(params.n_rounds as usize);

    for _ in 0..params.n_rounds {
        let row_set: Vec<usize> = if params.subsample < 1.0 {
            let k = ((n as f64 * params.subsample).floor() as usize).max(1);
            sample_without_replacement(&mut rng, n, k)
        } else {
            (0..n).collect()
        };
        let feature_set: Vec<usize> = if params.colsample < 1.0 {
            let k = ((n_features as f64 * params.colsample).round() as usize).max(1);
            sample_without_replacement(&mut rng, n_features, k)
        } else {
            (0..n_features).collect()
        };

        let grad: Vec<f64> = preds.iter().zip(targets).map(|(p, y)| p - y).collect();
        let tree = build_tree(&cols, &sorted_idx, &row_set, &feature_set, &grad, params)?;
        for i in 0..n {
            preds[i] += params.learning_rate * tree.eval_columns(&cols, i);
        }
        trees.push(tree);
    }

    Ok(GbtModel {
        format_version: MODEL_FORMAT_VERSION,
        schema_id: schema_id.to_string(),
        n_features,
        base_score,
        params: *params,
        trees,
    })
}

/// Grow one tree level by level with exact greedy splits. Candidate
/// thresholds are midpoints between adjacent distinct sorted values; ties
/// in gain resolve to the lowest feature index, then the lowest threshold,
/// by scan order.
fn build_tree(
    cols: &[Vec<f64>],
    sorted_idx: &[Vec<usize>],
    row_set: &[usize],
    feature_set: &[usize],
    grad: &[f64],
    params: &GbtParams,
) -> Result<Tree> {
    let n = grad.len();
    let mut nodes: Vec<TreeNode> = vec![TreeNode::Leaf { weight: 0.0 }];

    // node_of_row: current level slot per row, -1 when out of sample or in
    // a finalized leaf.
    let mut node_of_row = vec![-1i32; n];
    let mut root_g = 0.0;
    let mut root_h = 0.0;
    for &r in row_set {
        node_of_row[r] = 0;
        root_g += grad[r];
        root_h += 1.0;
    }
    let mut active = vec![BuildNode { g: root_g, h: root_h, n: row_set.len(), tree_index: 0 }];

    for _depth in 0..params.max_depth {
        if active.is_empty() {
            break;
        }
        let m = active.len();
        let mut best: Vec<Option<Candidate>> = vec![None; m];

        for &f in feature_set {
            let col = &cols[f];
            let mut running: Vec<RunningStats> = (0..m)
                .map(|_| RunningStats { g: 0.0, h: 0.0, n: 0, prev: None })
                .collect();
            for &r in &sorted_idx[f] {
                let slot = node_of_row[r];
                if slot < 0 {
                    continue;
                }
                let slot = slot as usize;
                let v = col[r];
                let run = &mut running[slot];
                if let Some(prev) = run.prev {
                    if v > prev {
                        let node = &active[slot];
                        let h_l = run.h;
                        let h_r = node.h - h_l;
                        if h_l >= params.min_child_weight && h_r >= params.min_child_weight {
                            let gain = split_gain(
                                run.g,
                                h_l,
                                node.g - run.g,
                                h_r,
                                params.lambda,
                                params.gamma,
                            )?;
                            let better = match best[slot] {
                                None => gain > 0.0,
                                Some(b) => gain > b.gain,
                            };
                            if better && gain > 0.0 {
                                best[slot] = Some(Candidate {
                                    gain,
                                    feature: f,
                                    threshold: 0.5 * (prev + v),
                                });
                            }
                        }
                    }
                }
                run.g += grad[r];
                run.h += 1.0;
                run.n += 1;
                run.prev = Some(v);
            }
        }

        // Materialize accepted splits; finalize the rest as leaves.
        let mut next_active: Vec<BuildNode> = Vec::new();
        let mut child_slots: Vec<Option<(usize, usize)>> = vec![None; m];
        for slot in 0..m {
            let node = &active[slot];
            match best[slot] {
                Some(c) => {
                    let left_index = nodes.len();
                    nodes.push(TreeNode::Leaf { weight: 0.0 });
                    let right_index = nodes.len();
                    nodes.push(TreeNode::Leaf { weight: 0.0 });
                    nodes[node.tree_index] = TreeNode::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left: left_index,
                        right: right_index,
                        default_left: true,
                    };
                    let left_slot = next_active.len();
                    next_active
                        .push(BuildNode { g: 0.0, h: 0.0, n: 0, tree_index: left_index });
                    let right_slot = next_active.len();
                    next_active
                        .push(BuildNode { g: 0.0, h: 0.0, n: 0, tree_index: right_index });
                    child_slots[slot] = Some((left_slot, right_slot));
                }
                None => {
                    nodes[node.tree_index] = TreeNode::Leaf {
                        weight: leaf_weight(node.g, node.h, params.lambda)?,
                    };
                }
            }
        }

        // Route rows to their children and accumulate child statistics.
        for r in 0..n {
            let slot = node_of_row[r];
            if slot < 0 {
                continue;
            }
            let slot = slot as usize;
            match (child_slots[slot], &nodes[active[slot].tree_index]) {
                (Some((ls, rs)), TreeNode::Split { feature, threshold, .. }) => {
                    let child = if cols[*feature][r] < *threshold { ls } else { rs };
                    node_of_row[r] = child as i32;
                    next_active[child].g += grad[r];
                    next_active[child].h += 1.0;
                    next_active[child].n += 1;
                }
                _ => node_of_row[r] = -1,
            }
        }
        active = next_active;
    }

    // Depth limit reached: everything still active becomes a leaf.
    for node in &active {
        nodes[node.tree_index] = TreeNode::Leaf {
            weight: leaf_weight(node.g, node.h, params.lambda)?,
        };
    }

    Ok(Tree { nodes })
}
