use std::sync::Arc;

use super::{ModelInput, Oracle, OracleInfo, Target};
use crate::error::Result;
use crate::toydiff::{GradientRecord, LinearModel, ToyVLModel, PAD_ID};
use crate::types::PredictionDistribution;

/// In-process oracle backed by a [`ToyVLModel`]. Cloning shares the weights.
#[derive(Debug, Clone)]
pub struct ToyOracle {
    model: Arc<ToyVLModel>,
    regions: usize,
}

impl ToyOracle {
    pub fn new(model: ToyVLModel) -> Self {
        Self {
            model: Arc::new(model),
            regions: 0,
        }
    }

    /// Declares a fixed region count in the handshake.
    pub fn with_regions(mut self, regions: usize) -> Self {
        self.regions = regions;
        self
    }

    pub fn model(&self) -> &ToyVLModel {
        &self.model
    }
}

impl Oracle for ToyOracle {
    fn info(&mut self) -> Result<OracleInfo> {
        let d = self.model.dims();
        Ok(OracleInfo {
            classes: d.classes,
            vis_dims: [self.regions, d.vis_dim],
            vocab: d.vocab,
            embed_dim: d.embed_dim,
            pad_id: PAD_ID,
            embeddings: self.model.embedding.clone(),
            explainer_sees_vision: self.model.config.ablation.explainer_sees_vision(),
        })
    }

    fn predict(&mut self, input: &ModelInput) -> Result<PredictionDistribution> {
        self.model.predict(input)
    }

    fn gradient(&mut self, input: &ModelInput, target: &Target) -> Result<GradientRecord> {
        self.model.gradient(input, target)
    }

    fn decode(&mut self, input: &ModelInput, answer: usize) -> Result<Vec<usize>> {
        self.model.greedy_decode(input, answer)
    }
}

/// In-process oracle backed by a [`LinearModel`]. It has no explainer, so
/// explanation tokens must come with the data.
#[derive(Debug, Clone)]
pub struct LinearOracle {
    model: Arc<LinearModel>,
}

impl LinearOracle {
    pub fn new(model: LinearModel) -> Self {
        Self {
            model: Arc::new(model),
        }
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }
}

impl Oracle for LinearOracle {
    fn info(&mut self) -> Result<OracleInfo> {
        Ok(OracleInfo {
            classes: self.model.classes,
            vis_dims: [0, self.model.vis_dim()],
            vocab: self.model.vocab(),
            embed_dim: self.model.embed_dim(),
            pad_id: PAD_ID,
            embeddings: self.model.embedding.clone(),
            explainer_sees_vision: true,
        })
    }

    fn predict(&mut self, input: &ModelInput) -> Result<PredictionDistribution> {
        self.model.predict(input)
    }

    fn gradient(&mut self, input: &ModelInput, target: &Target) -> Result<GradientRecord> {
        self.model.gradient(input, target)
    }
}
