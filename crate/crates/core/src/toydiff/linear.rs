//! Pooled linear-softmax classifier with analytic gradients. It is the
//! reference model for external oracles: any process serving the same
//! weight file must reproduce its outputs.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{uniform_matrix, uniform_vec};
use super::GradientRecord;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::oracle::{ModelInput, Target};
use crate::types::{softmax_normalize, PredictionDistribution};

pub const LINEAR_WEIGHT_FORMAT: &str = "faitheval-linear-v1";

/// `logits = (sum of token embeddings) Wt + (sum of region features) Wv + b`.
///
/// The gradient of logit `c` with respect to any token embedding is column
/// `c` of `Wt`, and with respect to any region is column `c` of `Wv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub format: String,
    pub classes: usize,
    pub embedding: Matrix,
    pub text_weights: Matrix,
    pub visual_weights: Matrix,
    pub bias: Vec<f64>,
}

impl LinearModel {
    pub fn random(seed: u64, vocab: usize, embed_dim: usize, vis_dim: usize, classes: usize) -> Result<Self> {
        if vocab < 2 || embed_dim == 0 || vis_dim == 0 || classes == 0 {
            return Err(Error::invalid(
                "linear model dims must be positive and vocab at least 2",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = Matrix::from_vec(vocab, embed_dim, uniform_vec(vocab * embed_dim, 1, &mut rng))?;
        let text_weights = uniform_matrix(embed_dim, classes, &mut rng);
        let visual_weights = uniform_matrix(vis_dim, classes, &mut rng);
        let bias = uniform_vec(classes, embed_dim + vis_dim, &mut rng);
        Ok(Self {
            format: LINEAR_WEIGHT_FORMAT.to_string(),
            classes,
            embedding,
            text_weights,
            visual_weights,
            bias,
        })
    }

    pub fn vocab(&self) -> usize {
        self.embedding.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn vis_dim(&self) -> usize {
        self.visual_weights.rows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != LINEAR_WEIGHT_FORMAT {
            return Err(Error::invalid(format!("unknown weight format {:?}", self.format)));
        }
        let (e, c) = (self.embed_dim(), self.classes);
        if c == 0 || self.vocab() < 2 || e == 0 || self.vis_dim() == 0 {
            return Err(Error::invalid(
                "linear model dims must be positive and vocab at least 2",
            ));
        }
        if self.text_weights.shape() != (e, c) || self.visual_weights.cols() != c || self.bias.len() != c {
            return Err(Error::invalid("linear model weight shapes are inconsistent"));
        }
        let finite = self.embedding.is_finite()
            && self.text_weights.is_finite()
            && self.visual_weights.is_finite()
            && self.bias.iter().all(|b| b.is_finite());
        if !finite {
            return Err(Error::invalid("model weights contain non-finite values"));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let model: Self =
            serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        model.validate()?;
        Ok(model)
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        if input.text.rows() > 0 && input.text.cols() != self.embed_dim() {
            return Err(Error::invalid(format!(
                "text embedding width {} != {}",
                input.text.cols(),
                self.embed_dim()
            )));
        }
        if input.visual.rows() > 0 && input.visual.cols() != self.vis_dim() {
            return Err(Error::invalid(format!(
                "visual feature width {} != {}",
                input.visual.cols(),
                self.vis_dim()
            )));
        }
        Ok(())
    }

    pub fn logits(&self, input: &ModelInput) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let text = input.text.to_rows();
        let visual = input.visual.to_rows();
        Ok((0..self.classes)
            .map(|c| {
                let mut z = self.bias[c];
                for row in &text {
                    for (k, x) in row.iter().enumerate() {
                        z += x * self.text_weights.get(k, c);
                    }
                }
                for row in &visual {
                    for (k, x) in row.iter().enumerate() {
                        z += x * self.visual_weights.get(k, c);
                    }
                }
                z
            })
            .collect())
    }

    pub fn predict(&self, input: &ModelInput) -> Result<PredictionDistribution> {
        softmax_normalize(&self.logits(input)?)
    }

    /// Gradient of a class logit. The model has no explainer head, so
    /// explanation targets are rejected.
    pub fn gradient(&self, input: &ModelInput, target: &Target) -> Result<GradientRecord> {
        let class = match target {
            Target::Answer { class } if *class < self.classes => *class,
            Target::Answer { class } => {
                return Err(Error::invalid(format!(
                    "class {class} out of range for {} classes",
                    self.classes
                )))
            }
            Target::Explanation { .. } => {
                return Err(Error::invalid("linear model has no explanation head"));
            }
        };
        let value = self.logits(input)?[class];
        let mut text = Matrix::zeros(input.text.rows(), input.text.cols());
        for r in 0..text.rows() {
            for k in 0..text.cols() {
                text.set(r, k, self.text_weights.get(k, class));
            }
        }
        let mut visual = Matrix::zeros(input.visual.rows(), input.visual.cols());
        for r in 0..visual.rows() {
            for k in 0..visual.cols() {
                visual.set(r, k, self.visual_weights.get(k, class));
            }
        }
        Ok(GradientRecord {
            value: Some(value),
            text,
            visual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(model: &LinearModel, tokens: &[usize], regions: usize) -> ModelInput {
        let rows: Vec<Vec<f64>> = tokens.iter().map(|&t| model.embedding.row(t).to_vec()).collect();
        let text = Matrix::from_rows(&rows, model.embed_dim()).unwrap();
        let visual = Matrix::from_vec(
            regions,
            model.vis_dim(),
            (0..regions * model.vis_dim())
                .map(|i| (i as f64 * 0.37).sin())
                .collect(),
        )
        .unwrap();
        ModelInput { text, visual }
    }

    #[test]
    fn zero_input_without_bias_is_uniform() {
        let mut m = LinearModel::random(1, 8, 3, 2, 4).unwrap();
        m.bias.fill(0.0);
        let zero = ModelInput {
            text: Matrix::zeros(2, 3),
            visual: Matrix::zeros(1, 2),
        };
        for p in m.predict(&zero).unwrap().probs() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_is_weight_column() {
        let m = LinearModel::random(2, 8, 3, 2, 4).unwrap();
        let x = input(&m, &[2, 5, 7], 2);
        let g = m.gradient(&x, &Target::Answer { class: 2 }).unwrap();
        for r in 0..3 {
            for k in 0..3 {
                assert_eq!(g.text.get(r, k), m.text_weights.get(k, 2));
            }
        }
        assert_eq!(g.visual.get(1, 1), m.visual_weights.get(1, 2));
        assert_eq!(g.value, Some(m.logits(&x).unwrap()[2]));
        assert!(m.gradient(&x, &Target::Answer { class: 4 }).is_err());
    }

    #[test]
    fn weight_file_round_trip() {
        let m = LinearModel::random(3, 6, 2, 3, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.json");
        m.save(&p).unwrap();
        assert_eq!(LinearModel::load(&p).unwrap(), m);
    }
}
