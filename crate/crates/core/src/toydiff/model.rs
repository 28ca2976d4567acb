//! A deterministic miniature vision-language model with a classifier head
//! (the task model) and an autoregressive explainer head reading features
//! from the same encoder.
//!
//! Forward pass, for text embeddings `E_i` and visual features `V_r`:
//!
//! ```text
//! u_i = act(E_i Wt + bt)            v_r = act(V_r Wv + bv)
//! s   = mean_i u_i + mean_r v_r                      (shared features)
//! class logits = s Wc + bc
//! step input z = [s ; A[answer] ; mean_i E_i ; mean(prefix emb) + P[step]]
//! token logits = z We + be
//! ```
//!
//! Blocks of `z` are zeroed according to the [`Ablation`] preset. Prefix
//! embeddings are constants, so gradients only reach the original inputs.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{uniform_matrix, uniform_vec, Activation};
use super::tape::{affine, Real, Tape};
use super::GradientRecord;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::oracle::{ModelInput, Target};
use crate::types::{argmax, softmax_normalize, PredictionDistribution, TaskExample};

pub const PAD_ID: usize = 0;
pub const EOS_ID: usize = 1;
pub const WEIGHT_FORMAT: &str = "faitheval-toy-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyDims {
    pub vocab: usize,
    pub embed_dim: usize,
    pub vis_dim: usize,
    pub classes: usize,
    /// Longest explanation the explainer head will produce.
    pub max_len: usize,
}

impl Default for ToyDims {
    fn default() -> Self {
        Self {
            vocab: 32,
            embed_dim: 8,
            vis_dim: 6,
            classes: 3,
            max_len: 3,
        }
    }
}

impl ToyDims {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 3 {
            return Err(Error::invalid(
                "vocab must hold PAD, EOS and at least one word token",
            ));
        }
        if self.embed_dim == 0 || self.vis_dim == 0 || self.classes == 0 || self.max_len == 0 {
            return Err(Error::invalid(format!("dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Which inputs the explainer head receives, named after the explanation
/// module ablations: no question (NQ), no answer (NA), only task features
/// (OU), no task features (NU), only answer (OA).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Ablation {
    #[default]
    #[serde(rename = "default")]
    Default,
    NQ,
    NA,
    OU,
    NU,
    OA,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Default,
        Ablation::NQ,
        Ablation::NA,
        Ablation::OU,
        Ablation::NU,
        Ablation::OA,
    ];

    pub fn uses_task_features(self) -> bool {
        matches!(
            self,
            Ablation::Default | Ablation::NQ | Ablation::NA | Ablation::OU
        )
    }

    pub fn uses_answer(self) -> bool {
        matches!(
            self,
            Ablation::Default | Ablation::NQ | Ablation::NU | Ablation::OA
        )
    }

    pub fn uses_question(self) -> bool {
        matches!(self, Ablation::Default | Ablation::NA | Ablation::NU)
    }

    /// Vision reaches the explainer only through the shared features.
    pub fn explainer_sees_vision(self) -> bool {
        self.uses_task_features()
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Default => "default",
            Ablation::NQ => "NQ",
            Ablation::NA => "NA",
            Ablation::OU => "OU",
            Ablation::NU => "NU",
            Ablation::OA => "OA",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown ablation preset {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub dims: ToyDims,
    pub activation: Activation,
    pub ablation: Ablation,
    pub seed: u64,
}

impl ToyConfig {
    pub fn new(seed: u64, dims: ToyDims) -> Self {
        Self {
            dims,
            activation: Activation::Tanh,
            ablation: Ablation::Default,
            seed,
        }
    }
}

/// Weights are stored `[inputs x outputs]`, row-major, in the JSON weight
/// file (see [`ToyVLModel::save`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyVLModel {
    pub format: String,
    pub config: ToyConfig,
    pub embedding: Matrix,
    pub token_encoder: Matrix,
    pub token_bias: Vec<f64>,
    pub vision_proj: Matrix,
    pub vision_bias: Vec<f64>,
    pub classifier: Matrix,
    pub classifier_bias: Vec<f64>,
    pub answer_embedding: Matrix,
    pub position_embedding: Matrix,
    pub explainer: Matrix,
    pub explainer_bias: Vec<f64>,
}

/// Reproducible random model; every weight is uniform in `±0.5/sqrt(fan_in)`.
pub fn make_toy_model(seed: u64, dims: ToyDims) -> Result<ToyVLModel> {
    ToyVLModel::random(ToyConfig::new(seed, dims))
}

impl ToyVLModel {
    pub fn random(config: ToyConfig) -> Result<Self> {
        let d = config.dims;
        d.validate()?;
        let h = d.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let token_bias = uniform_vec(h, h, &mut rng);
        let vision_bias = uniform_vec(h, d.vis_dim, &mut rng);
        let classifier_bias = uniform_vec(d.classes, h, &mut rng);
        let explainer_bias = uniform_vec(d.vocab, 4 * h, &mut rng);
        // Lookup tables have unit fan-in, so their entries lie in ±0.5.
        let embedding = uniform_vec(d.vocab * h, 1, &mut rng);
        let answer_embedding = uniform_vec(d.classes * h, 1, &mut rng);
        let position_embedding = uniform_vec(d.max_len * h, 1, &mut rng);
        Ok(Self {
            format: WEIGHT_FORMAT.to_string(),
            config,
            embedding: Matrix::from_vec(d.vocab, h, embedding)?,
            token_encoder: uniform_matrix(h, h, &mut rng),
            token_bias,
            vision_proj: uniform_matrix(d.vis_dim, h, &mut rng),
            vision_bias,
            classifier: uniform_matrix(h, d.classes, &mut rng),
            classifier_bias,
            answer_embedding: Matrix::from_vec(d.classes, h, answer_embedding)?,
            position_embedding: Matrix::from_vec(d.max_len, h, position_embedding)?,
            explainer: uniform_matrix(4 * h, d.vocab, &mut rng),
            explainer_bias,
        })
    }

    /// All weights zero.
    pub fn zeros(config: ToyConfig) -> Result<Self> {
        let mut m = Self::random(config)?;
        for mat in [
            &mut m.embedding,
            &mut m.token_encoder,
            &mut m.vision_proj,
            &mut m.classifier,
            &mut m.answer_embedding,
            &mut m.position_embedding,
            &mut m.explainer,
        ] {
            mat.as_mut_slice().fill(0.0);
        }
        for v in [
            &mut m.token_bias,
            &mut m.vision_bias,
            &mut m.classifier_bias,
            &mut m.explainer_bias,
        ] {
            v.fill(0.0);
        }
        Ok(m)
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.config.ablation = ablation;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.config.activation = activation;
        self
    }

    pub fn dims(&self) -> ToyDims {
        self.config.dims
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        d.validate()?;
        let h = d.embed_dim;
        if self.format != WEIGHT_FORMAT {
            return Err(Error::invalid(format!("unknown weight format {:?}", self.format)));
        }
        let shapes = [
            ("embedding", self.embedding.shape(), (d.vocab, h)),
            ("token_encoder", self.token_encoder.shape(), (h, h)),
            ("vision_proj", self.vision_proj.shape(), (d.vis_dim, h)),
            ("classifier", self.classifier.shape(), (h, d.classes)),
            ("answer_embedding", self.answer_embedding.shape(), (d.classes, h)),
            (
                "position_embedding",
                self.position_embedding.shape(),
                (d.max_len, h),
            ),
            ("explainer", self.explainer.shape(), (4 * h, d.vocab)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::invalid(format!(
                    "{name} has shape {got:?}, expected {want:?}"
                )));
            }
        }
        let biases = [
            ("token_bias", self.token_bias.len(), h),
            ("vision_bias", self.vision_bias.len(), h),
            ("classifier_bias", self.classifier_bias.len(), d.classes),
            ("explainer_bias", self.explainer_bias.len(), d.vocab),
        ];
        for (name, got, want) in biases {
            if got != want {
                return Err(Error::invalid(format!(
                    "{name} has length {got}, expected {want}"
                )));
            }
        }
        let finite = [
            &self.embedding,
            &self.token_encoder,
            &self.vision_proj,
            &self.classifier,
            &self.answer_embedding,
            &self.position_embedding,
            &self.explainer,
        ]
        .iter()
        .all(|m| m.is_finite())
            && [
                &self.token_bias,
                &self.vision_bias,
                &self.classifier_bias,
                &self.explainer_bias,
            ]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()));
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

    /// Embedding-space input for an example: one embedding row per token.
    pub fn embed(&self, example: &TaskExample) -> Result<ModelInput> {
        let h = self.dims().embed_dim;
        let mut text = Matrix::zeros(example.tokens.len(), h);
        for (i, token) in example.tokens.iter().enumerate() {
            text.row_mut(i).copy_from_slice(self.embedding_row(token.id)?);
        }
        let visual = if example.has_vision() {
            example.visual_features.clone()
        } else {
            Matrix::zeros(0, self.dims().vis_dim)
        };
        let input = ModelInput { text, visual };
        self.check_input(&input)?;
        Ok(input)
    }

    pub fn embedding_row(&self, token: usize) -> Result<&[f64]> {
        if token >= self.dims().vocab {
            return Err(Error::invalid(format!(
                "token id {token} out of range for vocab {}",
                self.dims().vocab
            )));
        }
        Ok(self.embedding.row(token))
    }

    pub fn check_input(&self, input: &ModelInput) -> Result<()> {
        let d = self.dims();
        if input.text.cols() != d.embed_dim && input.text.rows() > 0 {
            return Err(Error::invalid(format!(
                "text embedding width {} != {}",
                input.text.cols(),
                d.embed_dim
            )));
        }
        if input.visual.rows() > 0 && input.visual.cols() != d.vis_dim {
            return Err(Error::invalid(format!(
                "visual feature width {} != {}",
                input.visual.cols(),
                d.vis_dim
            )));
        }
        Ok(())
    }

    fn shared_features<R: Real>(
        &self,
        text: &[R],
        n_tokens: usize,
        visual: &[R],
        n_regions: usize,
    ) -> Vec<R> {
        let d = self.dims();
        let h = d.embed_dim;
        let act = self.config.activation;
        let mut s = vec![R::from(0.0); h];
        if n_tokens > 0 {
            let inv = 1.0 / n_tokens as f64;
            for row in text.chunks(h) {
                for (k, acc) in s.iter_mut().enumerate() {
                    let col = (0..h).map(|i| self.token_encoder.get(i, k));
                    *acc = *acc + act.apply(affine(col, row, self.token_bias[k])) * inv;
                }
            }
        }
        if n_regions > 0 {
            let inv = 1.0 / n_regions as f64;
            for row in visual.chunks(d.vis_dim) {
                for (k, acc) in s.iter_mut().enumerate() {
                    let col = (0..d.vis_dim).map(|i| self.vision_proj.get(i, k));
                    *acc = *acc + act.apply(affine(col, row, self.vision_bias[k])) * inv;
                }
            }
        }
        s
    }

    fn class_logits_from<R: Real>(&self, s: &[R]) -> Vec<R> {
        (0..self.dims().classes)
            .map(|c| {
                let col = (0..s.len()).map(|k| self.classifier.get(k, c));
                affine(col, s, self.classifier_bias[c])
            })
            .collect()
    }

    fn step_logits_from<R: Real>(
        &self,
        s: &[R],
        text: &[R],
        n_tokens: usize,
        answer: usize,
        prefix: &[usize],
    ) -> Result<Vec<R>> {
        let d = self.dims();
        let h = d.embed_dim;
        let ablation = self.config.ablation;
        if answer >= d.classes {
            return Err(Error::invalid(format!("answer class {answer} out of range")));
        }
        if prefix.len() >= d.max_len {
            return Err(Error::invalid(format!(
                "prefix of {} tokens reaches the maximum explanation length {}",
                prefix.len(),
                d.max_len
            )));
        }
        let zero = R::from(0.0);
        let mut z: Vec<R> = Vec::with_capacity(4 * h);
        if ablation.uses_task_features() {
            z.extend_from_slice(s);
        } else {
            z.extend(std::iter::repeat_n(zero, h));
        }
        if ablation.uses_answer() {
            z.extend(self.answer_embedding.row(answer).iter().map(|&v| R::from(v)));
        } else {
            z.extend(std::iter::repeat_n(zero, h));
        }
        if ablation.uses_question() && n_tokens > 0 {
            let inv = 1.0 / n_tokens as f64;
            let mut q = vec![zero; h];
            for row in text.chunks(h) {
                for (acc, &x) in q.iter_mut().zip(row) {
                    *acc = *acc + x * inv;
                }
            }
            z.extend(q);
        } else {
            z.extend(std::iter::repeat_n(zero, h));
        }
        let mut p: Vec<f64> = self.position_embedding.row(prefix.len()).to_vec();
        if !prefix.is_empty() {
            let inv = 1.0 / prefix.len() as f64;
            for &t in prefix {
                for (acc, &e) in p.iter_mut().zip(self.embedding_row(t)?) {
                    *acc += e * inv;
                }
            }
        }
        z.extend(p.into_iter().map(R::from));
        Ok((0..d.vocab)
            .map(|v| {
                let col = (0..4 * h).map(|k| self.explainer.get(k, v));
                affine(col, &z, self.explainer_bias[v])
            })
            .collect())
    }

    fn target_output<R: Real>(
        &self,
        input: &ModelInput,
        text: &[R],
        visual: &[R],
        target: &Target,
    ) -> Result<R> {
        let n_tokens = input.text.rows();
        let s = self.shared_features(text, n_tokens, visual, input.visual.rows());
        match target {
            Target::Answer { class } => {
                let logits = self.class_logits_from(&s);
                logits
                    .get(*class)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("class {class} out of range")))
            }
            Target::Explanation {
                answer,
                prefix,
                token,
            } => {
                let logits = self.step_logits_from(&s, text, n_tokens, *answer, prefix)?;
                logits
                    .get(*token)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("token {token} out of range")))
            }
        }
    }

    pub fn class_logits(&self, input: &ModelInput) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let s = self.shared_features(
            input.text.as_slice(),
            input.text.rows(),
            input.visual.as_slice(),
            input.visual.rows(),
        );
        Ok(self.class_logits_from(&s))
    }

    pub fn forward_classifier(&self, example: &TaskExample) -> Result<Vec<f64>> {
        self.class_logits(&self.embed(example)?)
    }

    pub fn predict(&self, input: &ModelInput) -> Result<PredictionDistribution> {
        softmax_normalize(&self.class_logits(input)?)
    }

    /// Next-token distribution of the explainer head.
    pub fn explainer_step(
        &self,
        input: &ModelInput,
        answer: usize,
        prefix: &[usize],
    ) -> Result<PredictionDistribution> {
        self.check_input(input)?;
        let text = input.text.as_slice();
        let s = self.shared_features(
            text,
            input.text.rows(),
            input.visual.as_slice(),
            input.visual.rows(),
        );
        for &t in prefix {
            self.embedding_row(t)?;
        }
        softmax_normalize(&self.step_logits_from(&s, text, input.text.rows(), answer, prefix)?)
    }

    /// Greedy decoding: PAD is never emitted, EOS ends the explanation once
    /// at least one token exists, and at most `max_len` tokens are produced.
    pub fn greedy_decode(&self, input: &ModelInput, answer: usize) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        while out.len() < self.dims().max_len {
            let dist = self.explainer_step(input, answer, &out)?;
            let mut probs = dist.probs().to_vec();
            probs[PAD_ID] = f64::NEG_INFINITY;
            if out.is_empty() {
                probs[EOS_ID] = f64::NEG_INFINITY;
            }
            let next = argmax(&probs);
            if next == EOS_ID {
                break;
            }
            out.push(next);
        }
        Ok(out)
    }

    /// Value of the selected scalar and its exact derivative with respect to
    /// every text-embedding and visual-feature entry.
    pub fn gradient(&self, input: &ModelInput, target: &Target) -> Result<GradientRecord> {
        self.check_input(input)?;
        if let Target::Explanation { prefix, .. } = target {
            for &t in prefix {
                self.embedding_row(t)?;
            }
        }
        let tape = Tape::new();
        let text = tape.vars(input.text.as_slice());
        let visual = tape.vars(input.visual.as_slice());
        let out = self.target_output(input, &text, &visual, target)?;
        let grads = tape.gradients(out);
        Ok(GradientRecord {
            value: Some(out.value()),
            text: Matrix::from_vec(input.text.rows(), input.text.cols(), grads.wrt_all(&text))?,
            visual: Matrix::from_vec(input.visual.rows(), input.visual.cols(), grads.wrt_all(&visual))?,
        })
    }

    /// Forward-only evaluation of the selected scalar.
    pub fn target_value(&self, input: &ModelInput, target: &Target) -> Result<f64> {
        self.check_input(input)?;
        self.target_output(input, input.text.as_slice(), input.visual.as_slice(), target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::types::Token;

    fn example(ids: &[usize], regions: usize, vis_dim: usize) -> TaskExample {
        let tokens = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| Token {
                id,
                text: format!("t{id}"),
                word_index: i,
            })
            .collect();
        let data = (0..regions * vis_dim)
            .map(|k| ((k * 7 % 11) as f64 - 5.0) / 5.0)
            .collect();
        TaskExample {
            id: "ex".into(),
            words: ids.iter().map(|id| format!("t{id}")).collect(),
            tokens,
            visual_features: Matrix::from_vec(regions, vis_dim, data).unwrap(),
            answer_class: 0,
            explanation_tokens: vec![],
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let model = ToyVLModel::zeros(ToyConfig::new(1, ToyDims::default())).unwrap();
        let ex = example(&[3, 4, 5], 2, 6);
        let logits = model.forward_classifier(&ex).unwrap();
        assert_eq!(logits, vec![0.0; 3]);
        let p = model.predict(&model.embed(&ex).unwrap()).unwrap();
        assert!(p.probs().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let step = model.explainer_step(&model.embed(&ex).unwrap(), 0, &[]).unwrap();
        assert!(step.probs().iter().all(|&v| (v - 1.0 / 32.0).abs() < 1e-15));
    }

    #[test]
    fn same_seed_same_weights() {
        let a = make_toy_model(5, ToyDims::default()).unwrap();
        let b = make_toy_model(5, ToyDims::default()).unwrap();
        let c = make_toy_model(6, ToyDims::default()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.embedding, c.embedding);
        assert_ne!(a.explainer, c.explainer);
        a.validate().unwrap();
    }

    #[test]
    fn out_of_vocab_token_rejected() {
        let model = make_toy_model(5, ToyDims::default()).unwrap();
        assert!(model.forward_classifier(&example(&[3, 99], 0, 6)).is_err());
    }

    #[test]
    fn visual_width_checked() {
        let model = make_toy_model(5, ToyDims::default()).unwrap();
        assert!(model.forward_classifier(&example(&[3], 2, 5)).is_err());
    }

    #[test]
    fn prefix_length_limit() {
        let model = make_toy_model(5, ToyDims::default()).unwrap();
        let input = model.embed(&example(&[3, 4], 1, 6)).unwrap();
        assert!(model.explainer_step(&input, 0, &[2, 3]).is_ok());
        assert!(matches!(
            model.explainer_step(&input, 0, &[2, 3, 4]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn greedy_decode_is_deterministic_and_nonempty() {
        let model = make_toy_model(11, ToyDims::default()).unwrap();
        let input = model.embed(&example(&[3, 7, 9], 2, 6)).unwrap();
        let a = model.greedy_decode(&input, 1).unwrap();
        let b = model.greedy_decode(&input, 1).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty() && a.len() <= 3);
        assert!(!a.contains(&PAD_ID));
    }

    #[test]
    fn selector_range_checked() {
        let model = make_toy_model(5, ToyDims::default()).unwrap();
        let input = model.embed(&example(&[3], 1, 6)).unwrap();
        assert!(model.gradient(&input, &Target::Answer { class: 3 }).is_err());
        let bad_token = Target::Explanation {
            answer: 0,
            prefix: vec![],
            token: 32,
        };
        assert!(model.gradient(&input, &bad_token).is_err());
    }

    #[test]
    fn identity_encoder_gradient_is_input_independent() {
        let model = make_toy_model(3, ToyDims::default())
            .unwrap()
            .with_activation(Activation::Identity);
        let a = model.embed(&example(&[3, 4, 5], 2, 6)).unwrap();
        let b = model.embed(&example(&[9, 12, 20], 2, 6)).unwrap();
        let t = Target::Answer { class: 1 };
        let ga = model.gradient(&a, &t).unwrap();
        let gb = model.gradient(&b, &t).unwrap();
        for (x, y) in ga.text.as_slice().iter().zip(gb.text.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
        for (x, y) in ga.visual.as_slice().iter().zip(gb.visual.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn no_task_features_means_no_vision_gradient() {
        let model = make_toy_model(3, ToyDims::default())
            .unwrap()
            .with_ablation(Ablation::NU);
        let input = model.embed(&example(&[3, 4], 2, 6)).unwrap();
        let t = Target::Explanation {
            answer: 0,
            prefix: vec![],
            token: 5,
        };
        let g = model.gradient(&input, &t).unwrap();
        assert!(g.visual.as_slice().iter().all(|v| *v == 0.0));
        assert!(g.text.as_slice().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn only_answer_explainer_ignores_inputs() {
        let model = make_toy_model(3, ToyDims::default())
            .unwrap()
            .with_ablation(Ablation::OA);
        let input = model.embed(&example(&[3, 4], 2, 6)).unwrap();
        let t = Target::Explanation {
            answer: 2,
            prefix: vec![],
            token: 5,
        };
        let g = model.gradient(&input, &t).unwrap();
        assert!(g
            .text
            .as_slice()
            .iter()
            .chain(g.visual.as_slice())
            .all(|v| *v == 0.0));
    }

    #[test]
    fn weight_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        let model = make_toy_model(9, ToyDims::default())
            .unwrap()
            .with_ablation(Ablation::NA);
        model.save(&path).unwrap();
        assert_eq!(ToyVLModel::load(&path).unwrap(), model);
    }

    #[test]
    fn ablation_names_parse() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        assert!("XX".parse::<Ablation>().is_err());
    }
}
