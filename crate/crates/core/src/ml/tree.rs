//! CART decision trees with Gini splits.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_data, Dataset, MlError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    All,
    /// `ceil(sqrt(d))` features drawn per split.
    Sqrt,
}

impl MaxFeatures {
    pub fn count(self, d: usize) -> usize {
        match self {
            MaxFeatures::All => d,
            MaxFeatures::Sqrt => ((d as f64).sqrt().ceil() as usize).clamp(1, d.max(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: 8, min_samples_leaf: 5, max_features: MaxFeatures::All }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf { proba: f64, samples: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Nodes in an arena; index 0 is the root. Inputs with `x[feature] < threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub n_features: usize,
}

/// Gini impurity `1 - p0^2 - p1^2` of a node with `pos` positives out of `n`.
pub fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p1 = pos as f64 / n as f64;
    let p0 = 1.0 - p1;
    1.0 - p0 * p0 - p1 * p1
}

struct Best {
    impurity: f64,
    feature: usize,
    threshold: f64,
}

struct Builder<'a> {
    data: &'a Dataset,
    params: &'a TreeParams,
    rng: Option<&'a mut ChaCha8Rng>,
    nodes: Vec<Node>,
    scratch: Vec<(f64, u8)>,
}

impl Builder<'_> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let pos = rows.iter().filter(|r| self.data.y[**r] == 1).count();
        self.nodes.push(Node::Leaf { proba: pos as f64 / rows.len() as f64, samples: rows.len() });
        self.nodes.len() - 1
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let d = self.data.d;
        let k = self.params.max_features.count(d);
        match (&mut self.rng, k < d) {
            (Some(rng), true) => {
                let mut f = sample(*rng, d, k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        }
    }

    fn best_split(&mut self, rows: &[usize], features: &[usize]) -> Option<Best> {
        let n = rows.len();
        let total_pos = rows.iter().filter(|r| self.data.y[**r] == 1).count();
        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut best: Option<Best> = None;
        for &f in features {
            self.scratch.clear();
            self.scratch.extend(rows.iter().map(|r| (self.data.x[*r][f], self.data.y[*r])));
            self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0usize;
            for i in 0..n - 1 {
                left_pos += usize::from(self.scratch[i].1 == 1);
                let (lo, hi) = (self.scratch[i].0, self.scratch[i + 1].0);
                let n_left = i + 1;
                if lo == hi || n_left < min_leaf || n - n_left < min_leaf {
                    continue;
                }
                let n_right = n - n_left;
                let impurity = (n_left as f64 * gini(left_pos, n_left)
                    + n_right as f64 * gini(total_pos - left_pos, n_right))
                    / n as f64;
                if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    best = Some(Best { impurity, feature: f, threshold: lo + (hi - lo) / 2.0 });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let n = rows.len();
        let pos = rows.iter().filter(|r| self.data.y[**r] == 1).count();
        if depth >= self.params.max_depth || pos == 0 || pos == n || n < 2 * self.params.min_samples_leaf.max(1) {
            return self.leaf(rows);
        }
        let features = self.candidate_features();
        let Some(best) = self.best_split(rows, &features) else { return self.leaf(rows) };
        if best.impurity >= gini(pos, n) {
            return self.leaf(rows);
        }
        let (feature, threshold) = (best.feature, best.threshold);
        let data = self.data;
        rows.sort_by_key(|r| !(data.x[*r][feature] < threshold));
        let split = rows.partition_point(|r| data.x[*r][feature] < threshold);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { proba: 0.0, samples: n });
        let (l, r) = rows.split_at_mut(split);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }
}

impl DecisionTree {
    /// Fit on `rows` of `data` (repeats allowed). `rng` drives per-split feature sampling and
    /// is only consulted when fewer than all features are considered.
    pub fn fit_rows(data: &Dataset, rows: &[usize], params: &TreeParams, rng: Option<&mut ChaCha8Rng>) -> Self {
        let mut rows = rows.to_vec();
        let mut b = Builder { data, params, rng, nodes: Vec::new(), scratch: Vec::with_capacity(rows.len()) };
        b.grow(&mut rows, 0);
        DecisionTree { nodes: b.nodes, n_features: data.d }
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { proba, .. } => return *proba,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] < *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

pub fn train_decision_tree(data: &Dataset, params: &TreeParams, seed: u64) -> Result<DecisionTree, MlError> {
    check_data(data)?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(DecisionTree::fit_rows(data, &rows, params, Some(&mut rng)))
}
