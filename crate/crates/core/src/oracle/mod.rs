//! The boundary between metric code and models.
//!
//! An [`Oracle`] answers three questions about a model: its shapes
//! ([`OracleInfo`]), class probabilities for a fully materialized input, and
//! the gradient of one scalar output. Perturbation and path interpolation
//! always happen on the toolkit side, so every oracle sees explicit feature
//! values and can stay stateless.

mod builtin;
pub mod protocol;
mod remote;
mod server;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::toydiff::GradientRecord;
use crate::types::{PredictionDistribution, TaskExample};

pub use builtin::{LinearOracle, ToyOracle};
pub use remote::{RemoteOracle, DEFAULT_TIMEOUT};
pub use server::serve;

/// Model input in embedding space: one row per text token and one row per
/// visual region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInput {
    pub text: Matrix,
    pub visual: Matrix,
}

impl ModelInput {
    pub fn len(&self) -> usize {
        self.text.as_slice().len() + self.visual.as_slice().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Text entries followed by visual entries.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(self.text.as_slice());
        v.extend_from_slice(self.visual.as_slice());
        v
    }

    /// Inverse of [`ModelInput::flatten`] using `self` as the shape template.
    pub fn with_values(&self, flat: &[f64]) -> Result<ModelInput> {
        if flat.len() != self.len() {
            return Err(Error::invalid(format!(
                "flat input has {} entries, expected {}",
                flat.len(),
                self.len()
            )));
        }
        let split = self.text.as_slice().len();
        Ok(ModelInput {
            text: Matrix::from_vec(self.text.rows(), self.text.cols(), flat[..split].to_vec())?,
            visual: Matrix::from_vec(self.visual.rows(), self.visual.cols(), flat[split..].to_vec())?,
        })
    }

    pub fn same_shape(&self, other: &ModelInput) -> bool {
        self.text.shape() == other.text.shape() && self.visual.shape() == other.visual.shape()
    }
}

/// Scalar output to differentiate: a class logit, or the logit of `token`
/// at the explanation step that follows `prefix`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Target {
    Answer {
        class: usize,
    },
    Explanation {
        answer: usize,
        prefix: Vec<usize>,
        token: usize,
    },
}

/// Handshake data describing the model behind an oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleInfo {
    pub classes: usize,
    /// `[n_regions, width]`; `n_regions = 0` accepts any region count.
    pub vis_dims: [usize; 2],
    pub vocab: usize,
    pub embed_dim: usize,
    pub pad_id: usize,
    /// `[vocab x embed_dim]` token embedding table.
    pub embeddings: Matrix,
    /// Whether explanation generation can depend on visual input.
    #[serde(default = "yes")]
    pub explainer_sees_vision: bool,
}

fn yes() -> bool {
    true
}

impl OracleInfo {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.vocab == 0 {
            return Err(Error::invalid(
                "oracle declares zero classes or an empty vocabulary",
            ));
        }
        if self.embeddings.shape() != (self.vocab, self.embed_dim) {
            return Err(Error::invalid(format!(
                "embedding table has shape {:?}, expected [{}, {}]",
                self.embeddings.shape(),
                self.vocab,
                self.embed_dim
            )));
        }
        if self.pad_id >= self.vocab {
            return Err(Error::invalid(format!(
                "pad id {} outside vocabulary",
                self.pad_id
            )));
        }
        Ok(())
    }

    pub fn embedding(&self, token: usize) -> Result<&[f64]> {
        if token >= self.vocab {
            return Err(Error::invalid(format!(
                "token id {token} out of range for vocab {}",
                self.vocab
            )));
        }
        Ok(self.embeddings.row(token))
    }

    /// Embedding-space input for `example`.
    pub fn embed(&self, example: &TaskExample) -> Result<ModelInput> {
        let mut text = Matrix::zeros(example.tokens.len(), self.embed_dim);
        for (i, token) in example.tokens.iter().enumerate() {
            text.row_mut(i).copy_from_slice(self.embedding(token.id)?);
        }
        let [regions, width] = self.vis_dims;
        let visual = if example.has_vision() {
            if example.visual_features.cols() != width {
                return Err(Error::invalid(format!(
                    "example {}: visual width {} != {width}",
                    example.id,
                    example.visual_features.cols()
                )));
            }
            if regions > 0 && example.n_regions() != regions {
                return Err(Error::invalid(format!(
                    "example {}: {} regions, oracle expects {regions}",
                    example.id,
                    example.n_regions()
                )));
            }
            example.visual_features.clone()
        } else {
            Matrix::zeros(0, width)
        };
        Ok(ModelInput { text, visual })
    }
}

pub trait Oracle {
    fn info(&mut self) -> Result<OracleInfo>;

    fn predict(&mut self, input: &ModelInput) -> Result<PredictionDistribution>;

    fn gradient(&mut self, input: &ModelInput, target: &Target) -> Result<GradientRecord>;

    /// Greedy explanation for `input` given the predicted `answer`. Oracles
    /// that cannot generate require explanations to be supplied with the data.
    fn decode(&mut self, _input: &ModelInput, _answer: usize) -> Result<Vec<usize>> {
        Err(Error::Oracle(
            "this oracle cannot generate explanations; supply explanation_tokens".into(),
        ))
    }
}

impl<O: Oracle + ?Sized> Oracle for &mut O {
    fn info(&mut self) -> Result<OracleInfo> {
        (**self).info()
    }

    fn predict(&mut self, input: &ModelInput) -> Result<PredictionDistribution> {
        (**self).predict(input)
    }

    fn gradient(&mut self, input: &ModelInput, target: &Target) -> Result<GradientRecord> {
        (**self).gradient(input, target)
    }

    fn decode(&mut self, input: &ModelInput, answer: usize) -> Result<Vec<usize>> {
        (**self).decode(input, answer)
    }
}

impl<O: Oracle + ?Sized> Oracle for Box<O> {
    fn info(&mut self) -> Result<OracleInfo> {
        (**self).info()
    }

    fn predict(&mut self, input: &ModelInput) -> Result<PredictionDistribution> {
        (**self).predict(input)
    }

    fn gradient(&mut self, input: &ModelInput, target: &Target) -> Result<GradientRecord> {
        (**self).gradient(input, target)
    }

    fn decode(&mut self, input: &ModelInput, answer: usize) -> Result<Vec<usize>> {
        (**self).decode(input, answer)
    }
}
