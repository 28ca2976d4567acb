//! Shared domain types and the two numeric primitives every metric rests on:
//! softmax normalization and cosine similarity.
//!
//! All types are plain values. Constructors validate their invariants so that
//! downstream code can assume well-formed data.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::alignment::WordMap;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// One text token of a task input: vocabulary id, surface string and the
/// index of the word it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub id: usize,
    pub text: String,
    pub word_index: usize,
}

/// One evaluation instance.
///
/// `answer_class` is the gold label carried by the data; metrics always use
/// the class the model predicts on the unperturbed input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskExample {
    pub id: String,
    pub words: Vec<String>,
    pub tokens: Vec<Token>,
    #[serde(default)]
    pub visual_features: Matrix,
    pub answer_class: usize,
    #[serde(default)]
    pub explanation_tokens: Vec<usize>,
}

impl TaskExample {
    pub fn n_regions(&self) -> usize {
        self.visual_features.rows()
    }

    pub fn has_vision(&self) -> bool {
        self.n_regions() > 0
    }

    pub fn token_ids(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.id).collect()
    }

    /// Token-to-word partition induced by the tokens' `word_index` fields.
    pub fn word_map(&self) -> Result<WordMap> {
        let indices: Vec<usize> = self.tokens.iter().map(|t| t.word_index).collect();
        WordMap::from_word_indices(&indices, self.words.len())
    }

    /// Checks structural invariants. `classes` and `vis_dim`, when known,
    /// bound the answer class and the visual feature width.
    pub fn validate(&self, classes: Option<usize>, vis_dim: Option<usize>) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::invalid("example id is empty"));
        }
        self.word_map()?;
        if !self.visual_features.is_finite() {
            return Err(Error::invalid(format!(
                "example {}: visual features contain non-finite values",
                self.id
            )));
        }
        if let Some(d) = vis_dim {
            if self.n_regions() > 0 && self.visual_features.cols() != d {
                return Err(Error::invalid(format!(
                    "example {}: visual feature width {} != {d}",
                    self.id,
                    self.visual_features.cols()
                )));
            }
        }
        if let Some(c) = classes {
            if self.answer_class >= c {
                return Err(Error::invalid(format!(
                    "example {}: answer class {} out of range for {c} classes",
                    self.id, self.answer_class
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Language,
    Vision,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::Language => f.write_str("language"),
            Modality::Vision => f.write_str("vision"),
        }
    }
}

/// Signed relevance per feature of one modality.
///
/// Language feature ids are word indices; vision ids are region indices, or
/// `region * width + k` in per-feature mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionVector {
    pub modality: Modality,
    pub feature_ids: Vec<usize>,
    pub values: Vec<f64>,
}

impl AttributionVector {
    pub fn new(modality: Modality, feature_ids: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let v = Self {
            modality,
            feature_ids,
            values,
        };
        v.validate()?;
        Ok(v)
    }

    /// Vector with ids `0..values.len()`.
    pub fn dense(modality: Modality, values: Vec<f64>) -> Self {
        let feature_ids = (0..values.len()).collect();
        Self {
            modality,
            feature_ids,
            values,
        }
    }

    pub fn empty(modality: Modality) -> Self {
        Self::dense(modality, Vec::new())
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_ids.len() != self.values.len() {
            return Err(Error::invalid(format!(
                "{} attribution has {} ids but {} values",
                self.modality,
                self.feature_ids.len(),
                self.values.len()
            )));
        }
        let mut seen = HashSet::with_capacity(self.feature_ids.len());
        for &id in &self.feature_ids {
            if !seen.insert(id) {
                return Err(Error::invalid(format!(
                    "{} attribution repeats feature id {id}",
                    self.modality
                )));
            }
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "{} attribution contains non-finite relevance {v}",
                self.modality
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Left-to-right sum of all relevances.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            modality: self.modality,
            feature_ids: self.feature_ids.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }
}

/// Answer-side and explanation-side relevance over one feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionPair {
    answer: AttributionVector,
    explanation: AttributionVector,
}

impl AttributionPair {
    pub fn new(answer: AttributionVector, explanation: AttributionVector) -> Result<Self> {
        if answer.modality != explanation.modality {
            return Err(Error::invalid(format!(
                "pair mixes {} and {} attributions",
                answer.modality, explanation.modality
            )));
        }
        if answer.feature_ids != explanation.feature_ids {
            return Err(Error::invalid(format!(
                "{} answer and explanation attributions cover different features",
                answer.modality
            )));
        }
        answer.validate()?;
        explanation.validate()?;
        Ok(Self { answer, explanation })
    }

    pub fn answer(&self) -> &AttributionVector {
        &self.answer
    }

    pub fn explanation(&self) -> &AttributionVector {
        &self.explanation
    }

    pub fn modality(&self) -> Modality {
        self.answer.modality
    }
}

/// Class (or vocabulary) probabilities summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredictionDistribution {
    probs: Vec<f64>,
}

impl PredictionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("empty probability vector"));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("probabilities sum to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, class: usize) -> f64 {
        self.probs[class]
    }

    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-example faithfulness scores. Vision cells are `None` when the example
/// has no visual input or the explainer does not see it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub example_id: String,
    pub sf_nlp: f64,
    pub sf_img: Option<f64>,
    pub sf_overall: f64,
    pub suff_nlp: f64,
    pub comp_nlp: f64,
    pub suff_img: Option<f64>,
    pub comp_img: Option<f64>,
}

impl MetricRow {
    pub const COLUMNS: [&'static str; 7] = [
        "sf_nlp",
        "sf_img",
        "sf_overall",
        "suff_nlp",
        "comp_nlp",
        "suff_img",
        "comp_img",
    ];

    pub fn column(&self, name: &str) -> Option<f64> {
        match name {
            "sf_nlp" => Some(self.sf_nlp),
            "sf_img" => self.sf_img,
            "sf_overall" => Some(self.sf_overall),
            "suff_nlp" => Some(self.suff_nlp),
            "comp_nlp" => Some(self.comp_nlp),
            "suff_img" => self.suff_img,
            "comp_img" => self.comp_img,
            _ => None,
        }
    }

    /// Mean of the present per-modality attribution-similarity scores.
    pub fn overall_from(sf_nlp: f64, sf_img: Option<f64>) -> f64 {
        match sf_img {
            Some(img) => (sf_nlp + img) / 2.0,
            None => sf_nlp,
        }
    }
}

/// Numerically stable softmax.
pub fn softmax_normalize(logits: &[f64]) -> Result<PredictionDistribution> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if let Some(v) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite logit {v}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    PredictionDistribution::new(exps.into_iter().map(|e| e / sum).collect())
}

/// Cosine similarity in `[-1, 1]`. A zero-norm operand yields 0.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn softmax_symmetric_pair() {
        let p = softmax_normalize(&[0.0, 0.0]).unwrap();
        assert_eq!(p.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_single_logit() {
        let p = softmax_normalize(&[-3.7]).unwrap();
        assert_eq!(p.probs(), &[1.0]);
    }

    #[test]
    fn softmax_one_two_three() {
        // e^k / (e + e^2 + e^3) evaluated at 30 digits.
        let p = softmax_normalize(&[1.0, 2.0, 3.0]).unwrap();
        let expected = [
            0.090_030_573_170_380_46,
            0.244_728_471_054_797_65,
            0.665_240_955_774_821_9,
        ];
        for (got, want) in p.probs().iter().zip(expected) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        assert_eq!(p.argmax(), 2);
    }

    #[test]
    fn softmax_rejects_empty_and_nan() {
        assert!(matches!(softmax_normalize(&[]), Err(Error::InvalidInput(_))));
        assert!(softmax_normalize(&[f64::NAN]).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_abs_diff_eq!(cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cosine(&[1.0, 2.0], &[-1.0, -2.0]).unwrap(), -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn cosine_zero_norm_is_neutral() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[], &[]).unwrap(), 0.0);
    }

    #[test]
    fn cosine_length_mismatch() {
        assert!(matches!(cosine(&[1.0], &[1.0, 2.0]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn attribution_vector_rejects_duplicates_and_nan() {
        assert!(AttributionVector::new(Modality::Language, vec![0, 0], vec![1.0, 2.0]).is_err());
        assert!(AttributionVector::new(Modality::Vision, vec![0], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn pair_requires_matching_features() {
        let a = AttributionVector::dense(Modality::Language, vec![1.0, 2.0]);
        let b = AttributionVector::new(Modality::Language, vec![1, 0], vec![1.0, 2.0]).unwrap();
        assert!(AttributionPair::new(a.clone(), b).is_err());
        let v = AttributionVector::dense(Modality::Vision, vec![1.0, 2.0]);
        assert!(AttributionPair::new(a, v).is_err());
    }

    #[test]
    fn overall_is_mean_of_present() {
        assert_eq!(MetricRow::overall_from(0.25, Some(0.75)), 0.5);
        assert_eq!(MetricRow::overall_from(0.3, None), 0.3);
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(
            logits in prop::collection::vec(-20.0f64..20.0, 1..12),
            shift in -50.0f64..50.0,
        ) {
            let p = softmax_normalize(&logits).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let q = softmax_normalize(&shifted).unwrap();
            let sum: f64 = p.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            for (a, b) in p.probs().iter().zip(q.probs()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
            prop_assert_eq!(p.argmax(), argmax(&logits));
        }

        #[test]
        fn cosine_scale_invariant(
            pair in (1usize..16).prop_flat_map(|n| (
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(-5.0f64..5.0, n),
            )),
            c in 1e-3f64..10.0,
        ) {
            let (a, b) = pair;
            let cb: Vec<f64> = b.iter().map(|v| v * c).collect();
            let lhs = cosine(&a, &cb).unwrap();
            let rhs = cosine(&a, &b).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9);
            prop_assert!((-1.0..=1.0).contains(&lhs));
        }
    }
}
