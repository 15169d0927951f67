//! Training in three steps so a server can run the expensive middle step without holding
//! the service lock.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::Service;
use crate::ml::dataset::DEFAULT_TRAIN_FRACTION;
use crate::ml::{
    chronological_split, examples_from_stores, train, Dataset, EvalMetrics, Family, FeatureSchema, LabeledExample,
    LocationClusters, MlError, SplitMode, TrainConfig, TrainedModel, DEFAULT_THRESHOLD,
};
use crate::time::Timestamp;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRequest {
    pub family: Option<Family>,
    pub seed: Option<u64>,
    pub split: SplitMode,
    pub train_fraction: Option<f64>,
}

/// Everything needed to fit a model, detached from the service.
#[derive(Debug, Clone)]
pub struct TrainingJob {
    pub config: TrainConfig,
    pub schema: FeatureSchema,
    pub examples: Vec<LabeledExample>,
    pub split: SplitMode,
    pub train_fraction: f64,
    pub now: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingResult {
    pub family: Family,
    pub examples: usize,
    pub train_examples: usize,
    pub test_examples: usize,
    pub positives: usize,
    /// Held-out metrics of a model fitted on the chronological train share only.
    pub metrics: Option<EvalMetrics>,
    #[serde(skip)]
    pub model: Option<TrainedModel>,
}

impl TrainingJob {
    /// Fit the evaluation model on the train share, then the deployed model on everything.
    pub fn run(self) -> Result<TrainingResult, MlError> {
        if self.examples.is_empty() {
            return Err(MlError::EmptyData);
        }
        let (train_part, test_part) = chronological_split(&self.examples, self.train_fraction, self.split);
        let metrics = if !train_part.is_empty() && !test_part.is_empty() {
            let m = train(&self.config, &Dataset::from_examples(&train_part)?, &self.schema)?;
            Some(m.evaluate(&test_part, DEFAULT_THRESHOLD)?)
        } else {
            None
        };
        let all = Dataset::from_examples(&self.examples)?;
        let mut model = train(&self.config, &all, &self.schema)?;
        model.trained_at = Some(self.now);
        model.metrics = metrics.clone();
        Ok(TrainingResult {
            family: self.config.family,
            examples: self.examples.len(),
            train_examples: train_part.len(),
            test_examples: test_part.len(),
            positives: all.positives(),
            metrics,
            model: Some(model),
        })
    }
}

impl Service {
    /// Snapshot the training inputs as of `now`.
    pub fn prepare_training(&self, req: &TrainRequest, now: Timestamp) -> Result<TrainingJob, MlError> {
        let mut config = self.cfg.train.clone();
        if let Some(f) = req.family {
            config.family = f;
        }
        if let Some(s) = req.seed {
            config.seed = s;
        }
        let fraction = req.train_fraction.unwrap_or(DEFAULT_TRAIN_FRACTION);
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(MlError::InvalidParams(format!("train_fraction must be in (0, 1), got {fraction}")));
        }
        let clusters = LocationClusters::fit(&self.history.geo_points(), self.cfg.cluster_k, self.cfg.cluster_radius_m);
        let mut schema = FeatureSchema::with_clusters(clusters);
        schema.moods = self.cfg.vocabulary.moods.clone();
        let statics: BTreeSet<String> = self
            .stm
            .state()
            .participants
            .values()
            .flat_map(|p| p.attributes.iter().filter(|(_, v)| v.parse::<f64>().is_ok()).map(|(k, _)| k.clone()))
            .collect();
        schema.static_slots = statics.into_iter().collect();
        let examples =
            examples_from_stores(&self.history, self.stm.schedule(), &self.ltm, &self.cfg.vocabulary, &schema, Some(now));
        Ok(TrainingJob { config, schema, examples, split: req.split, train_fraction: fraction, now })
    }

    /// Prepare, run and install in one call.
    pub fn train_now(&mut self, req: &TrainRequest, now: Timestamp) -> Result<TrainingResult, super::ApiError> {
        let job = self.prepare_training(req, now).map_err(super::ApiError::from)?;
        let mut result = job.run().map_err(super::ApiError::from)?;
        let model = result.model.take().expect("trained");
        self.install_model(model, now).map_err(super::ApiError::from)?;
        Ok(result)
    }
}
