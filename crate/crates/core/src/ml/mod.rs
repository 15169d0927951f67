//! Busy-period classifiers: features, five model families, metrics and avoid windows.

pub mod bayes;
pub mod dataset;
pub mod features;
pub mod forest;
pub mod logistic;
pub mod metrics;
pub mod neural;
pub mod tree;
pub mod windows;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{chronological_split, examples_from_stores, LabeledExample, SplitMode};
pub use features::{FeatureSchema, HistoryIndex, LocationClusters};
pub use metrics::{evaluate_scores, roc_curve, EvalMetrics, RocPoint, DEFAULT_THRESHOLD};
pub use windows::{derive_avoid_windows, windows_from_slot_probas, DEFAULT_SLOT_MINUTES, DEFAULT_TAU};

use crate::time::Timestamp;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum MlError {
    #[error("no training examples")]
    EmptyData,
    #[error("inconsistent data: {0}")]
    Shape(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unsupported model document: {0}")]
    BadDocument(String),
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Row-major feature matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<u8>,
    pub d: usize,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<u8>) -> Result<Self, MlError> {
        if x.len() != y.len() {
            return Err(MlError::Shape(format!("{} rows for {} labels", x.len(), y.len())));
        }
        let d = x.first().map_or(0, Vec::len);
        if let Some(i) = x.iter().position(|r| r.len() != d) {
            return Err(MlError::Shape(format!("row {i} has {} features, expected {d}", x[i].len())));
        }
        if let Some(i) = x.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(MlError::Shape(format!("row {i} has a non-finite feature")));
        }
        if y.iter().any(|v| *v > 1) {
            return Err(MlError::Shape("labels must be 0 or 1".into()));
        }
        Ok(Self { x, y, d })
    }

    pub fn from_examples(examples: &[LabeledExample]) -> Result<Self, MlError> {
        Self::new(examples.iter().map(|e| e.features.clone()).collect(), examples.iter().map(|e| e.label).collect())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|v| **v == 1).count()
    }
}

pub(crate) fn check_data(data: &Dataset) -> Result<(), MlError> {
    if data.is_empty() {
        return Err(MlError::EmptyData);
    }
    Ok(())
}

/// Per-feature z-scoring; constant columns keep scale 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Self {
        let n = data.len() as f64;
        let mut means = vec![0.0; data.d];
        for row in &data.x {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut stds = vec![0.0; data.d];
        for row in &data.x {
            for ((s, v), m) in stds.iter_mut().zip(row).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut stds {
            *s = (*s / n).sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        Self { means, stds }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.means).zip(&self.stds).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    DecisionTree,
    RandomForest,
    LogisticRegression,
    GaussianNb,
    NeuralNet,
}

impl Family {
    pub const ALL: [Family; 5] =
        [Family::RandomForest, Family::DecisionTree, Family::NeuralNet, Family::LogisticRegression, Family::GaussianNb];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::DecisionTree => "decision_tree",
            Family::RandomForest => "random_forest",
            Family::LogisticRegression => "logistic_regression",
            Family::GaussianNb => "gaussian_nb",
            Family::NeuralNet => "neural_net",
        }
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            Family::DecisionTree => "Decision Tree",
            Family::RandomForest => "Random Forest",
            Family::LogisticRegression => "Logistic Regression",
            Family::GaussianNb => "Gaussian Naive Bayes",
            Family::NeuralNet => "Artificial Neural Network",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub family: Family,
    pub seed: u64,
    pub tree: tree::TreeParams,
    pub forest: forest::ForestParams,
    pub logistic: logistic::LogisticParams,
    pub neural: neural::NeuralParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            family: Family::RandomForest,
            seed: 42,
            tree: Default::default(),
            forest: Default::default(),
            logistic: Default::default(),
            neural: Default::default(),
        }
    }
}

impl TrainConfig {
    pub fn for_family(family: Family) -> Self {
        Self { family, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ModelParams {
    /// Fitted on single-label data.
    Constant { proba: f64 },
    DecisionTree(tree::DecisionTree),
    RandomForest(forest::RandomForest),
    LogisticRegression(logistic::LogisticModel),
    GaussianNb(bayes::GaussianNb),
    NeuralNet(neural::NeuralNet),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub family: Family,
    pub seed: u64,
    pub schema: FeatureSchema,
    pub n_features: usize,
    pub trained_examples: usize,
    pub trained_at: Option<Timestamp>,
    pub params: ModelParams,
    #[serde(default)]
    pub metrics: Option<EvalMetrics>,
}

impl TrainedModel {
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let p = match &self.params {
            ModelParams::Constant { proba } => *proba,
            ModelParams::DecisionTree(m) => m.predict_proba(x),
            ModelParams::RandomForest(m) => m.predict_proba(x),
            ModelParams::LogisticRegression(m) => m.predict_proba(x),
            ModelParams::GaussianNb(m) => m.predict_proba(x),
            ModelParams::NeuralNet(m) => m.predict_proba(x),
        };
        p.clamp(0.0, 1.0)
    }

    pub fn evaluate(&self, test: &[LabeledExample], threshold: f64) -> Result<EvalMetrics, MlError> {
        let scores: Vec<f64> = test.iter().map(|e| self.predict_proba(&e.features)).collect();
        let labels: Vec<u8> = test.iter().map(|e| e.label).collect();
        evaluate_scores(&scores, &labels, threshold)
    }

    pub fn to_document(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_document(doc: &str) -> Result<Self, MlError> {
        let m: TrainedModel = serde_json::from_str(doc).map_err(|e| MlError::BadDocument(e.to_string()))?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(MlError::BadDocument(format!("format version {}", m.format_version)));
        }
        Ok(m)
    }
}

/// Fit the configured family. Single-label data yields a constant model.
pub fn train(config: &TrainConfig, data: &Dataset, schema: &FeatureSchema) -> Result<TrainedModel, MlError> {
    check_data(data)?;
    if data.d != schema.dimension() {
        return Err(MlError::Shape(format!("{} features, schema has {}", data.d, schema.dimension())));
    }
    let pos = data.positives();
    let params = if pos == 0 || pos == data.len() {
        ModelParams::Constant { proba: pos as f64 / data.len() as f64 }
    } else {
        match config.family {
            Family::DecisionTree => ModelParams::DecisionTree(tree::train_decision_tree(data, &config.tree, config.seed)?),
            Family::RandomForest => ModelParams::RandomForest(forest::train_random_forest(data, &config.forest, config.seed)?),
            Family::LogisticRegression => {
                ModelParams::LogisticRegression(logistic::train_logistic_regression(data, &config.logistic)?)
            }
            Family::GaussianNb => ModelParams::GaussianNb(bayes::train_gaussian_nb(data)?),
            Family::NeuralNet => ModelParams::NeuralNet(neural::train_neural_net(data, &config.neural, config.seed)?),
        }
    };
    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        family: config.family,
        seed: config.seed,
        schema: schema.clone(),
        n_features: data.d,
        trained_examples: data.len(),
        trained_at: None,
        params,
        metrics: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_and_sigmoid_are_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-9);
        assert!(softplus(-1000.0) >= 0.0);
    }

    #[test]
    fn dataset_shape_checked() {
        assert!(Dataset::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0, 1]).is_err());
        assert!(Dataset::new(vec![vec![f64::NAN]], vec![0]).is_err());
        assert!(Dataset::new(vec![vec![1.0]], vec![2]).is_err());
    }

    #[test]
    fn single_label_gives_constant_model_and_empty_is_rejected() {
        let schema = FeatureSchema::default();
        let d = schema.dimension();
        let data = Dataset::new(vec![vec![0.0; d]; 3], vec![1, 1, 1]).unwrap();
        for f in Family::ALL {
            let m = train(&TrainConfig::for_family(f), &data, &schema).unwrap();
            assert_eq!(m.params, ModelParams::Constant { proba: 1.0 });
        }
        let empty = Dataset::new(vec![], vec![]).unwrap();
        assert_eq!(train(&TrainConfig::default(), &empty, &schema), Err(MlError::EmptyData));
    }

    #[test]
    fn model_document_round_trip() {
        let schema = FeatureSchema::default();
        let d = schema.dimension();
        let x: Vec<Vec<f64>> = (0..20).map(|i| (0..d).map(|j| f64::from((i * 7 + j as i32) % 5)).collect()).collect();
        let y = (0..20).map(|i| u8::from(i % 3 == 0)).collect();
        let data = Dataset::new(x, y).unwrap();
        for f in Family::ALL {
            let mut cfg = TrainConfig::for_family(f);
            cfg.forest.n_trees = 3;
            cfg.neural.epochs = 5;
            let m = train(&cfg, &data, &schema).unwrap();
            let back = TrainedModel::from_document(&m.to_document()).unwrap();
            for row in &data.x {
                assert_eq!(m.predict_proba(row), back.predict_proba(row));
            }
        }
        assert!(TrainedModel::from_document("{}").is_err());
    }
}
