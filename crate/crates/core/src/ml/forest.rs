//! Random forests of CART trees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, MaxFeatures, TreeParams};
use super::{check_data, Dataset, MlError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 10, min_samples_leaf: 3, max_features: MaxFeatures::Sqrt, bootstrap: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestTree {
    pub seed: u64,
    pub tree: DecisionTree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<ForestTree>,
}

impl RandomForest {
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.tree.predict_proba(x)).sum();
        sum / self.trees.len() as f64
    }
}

/// Tree `i` uses its own ChaCha8 stream seeded with `seed + i`, first for the bootstrap draw
/// and then for per-split feature sampling, so the result does not depend on scheduling.
fn fit_tree(data: &Dataset, params: &ForestParams, seed: u64) -> ForestTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = data.len();
    let rows: Vec<usize> = if params.bootstrap { (0..n).map(|_| rng.gen_range(0..n)).collect() } else { (0..n).collect() };
    let tp = TreeParams { max_depth: params.max_depth, min_samples_leaf: params.min_samples_leaf, max_features: params.max_features };
    ForestTree { seed, tree: DecisionTree::fit_rows(data, &rows, &tp, Some(&mut rng)) }
}

pub fn train_random_forest(data: &Dataset, params: &ForestParams, seed: u64) -> Result<RandomForest, MlError> {
    check_data(data)?;
    if params.n_trees < 1 {
        return Err(MlError::InvalidParams("n_trees must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..params.n_trees as u64).map(|i| seed.wrapping_add(i)).collect();
    #[cfg(feature = "parallel")]
    let trees = {
        use rayon::prelude::*;
        seeds.par_iter().map(|s| fit_tree(data, params, *s)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let trees = seeds.iter().map(|s| fit_tree(data, params, *s)).collect();
    Ok(RandomForest { trees })
}
