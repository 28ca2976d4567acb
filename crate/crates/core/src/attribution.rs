//! Integrated Gradients over any gradient-capable function, and the
//! answer/explanation attribution procedures built on it.
//!
//! The path integral is approximated with a left Riemann sum:
//!
//! ```text
//! IG_i = (x_i - x'_i) * (1/m) * sum_{k=0}^{m-1} df(x' + (k/m)(x - x'))/dx_i
//! ```
//!
//! Text attributions are taken in embedding space, summed over the embedding
//! dimension to one value per token, then summed per word. Explanation
//! attributions sum the per-step attributions of every generated token with
//! respect to the original inputs only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{ModelInput, Oracle, OracleInfo, Target};
use crate::types::{AttributionVector, Modality, TaskExample, Token};

pub const DEFAULT_STEPS: usize = 50;

/// A scalar function of a flat input vector with an available gradient.
pub trait GradientField {
    fn dim(&self) -> usize;
    fn value(&mut self, x: &[f64]) -> Result<f64>;
    fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselinePolicy {
    /// PAD embedding at every token position, zero visual features.
    #[default]
    PadTextZeroVision,
    /// Zero vectors everywhere, text included.
    AllZero,
    /// Caller-provided embedding-space baseline.
    Custom(ModelInput),
}

impl BaselinePolicy {
    pub fn name(&self) -> &'static str {
        match self {
            BaselinePolicy::PadTextZeroVision => "pad_text_zero_vision",
            BaselinePolicy::AllZero => "all_zero",
            BaselinePolicy::Custom(_) => "custom",
        }
    }
}

/// Granularity of vision attributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisionGranularity {
    /// One value per region (sum over the feature dimension).
    #[default]
    Region,
    /// One value per feature entry; id = `region * width + k`.
    Feature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgConfig {
    pub steps: usize,
    pub baseline: BaselinePolicy,
    pub vision: VisionGranularity,
}

impl Default for IgConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            baseline: BaselinePolicy::default(),
            vision: VisionGranularity::default(),
        }
    }
}

impl IgConfig {
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("integrated gradients needs at least one step"));
        }
        Ok(())
    }
}

/// Word-level language attribution and vision attribution of one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalAttribution {
    pub language: AttributionVector,
    pub vision: AttributionVector,
}

impl ModalAttribution {
    pub fn get(&self, modality: Modality) -> &AttributionVector {
        match modality {
            Modality::Language => &self.language,
            Modality::Vision => &self.vision,
        }
    }
}

/// Left-Riemann Integrated Gradients of `field` from `baseline` to `input`.
pub fn integrated_gradients<F: GradientField + ?Sized>(
    field: &mut F,
    input: &[f64],
    baseline: &[f64],
    steps: usize,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::invalid("integrated gradients needs at least one step"));
    }
    if input.len() != baseline.len() || input.len() != field.dim() {
        return Err(Error::invalid(format!(
            "input ({}), baseline ({}) and function ({}) dimensions differ",
            input.len(),
            baseline.len(),
            field.dim()
        )));
    }
    let delta: Vec<f64> = input.iter().zip(baseline).map(|(x, b)| x - b).collect();
    let mut summed = vec![0.0; input.len()];
    let mut point = vec![0.0; input.len()];
    for k in 0..steps {
        let alpha = k as f64 / steps as f64;
        for ((p, b), d) in point.iter_mut().zip(baseline).zip(&delta) {
            *p = b + alpha * d;
        }
        let grad = field.gradient(&point)?;
        if grad.len() != summed.len() {
            return Err(Error::Oracle(format!(
                "gradient has {} entries, expected {}",
                grad.len(),
                summed.len()
            )));
        }
        for (s, g) in summed.iter_mut().zip(grad) {
            *s += g;
        }
    }
    let m = steps as f64;
    Ok(delta.iter().zip(summed).map(|(d, s)| d * (s / m)).collect())
}

/// One oracle target viewed as a function of the flattened model input.
pub struct TargetField<'a, O: Oracle + ?Sized> {
    oracle: &'a mut O,
    template: ModelInput,
    target: Target,
}

impl<'a, O: Oracle + ?Sized> TargetField<'a, O> {
    pub fn new(oracle: &'a mut O, template: ModelInput, target: Target) -> Self {
        Self {
            oracle,
            template,
            target,
        }
    }
}

impl<O: Oracle + ?Sized> GradientField for TargetField<'_, O> {
    fn dim(&self) -> usize {
        self.template.len()
    }

    fn value(&mut self, x: &[f64]) -> Result<f64> {
        let input = self.template.with_values(x)?;
        let record = self.oracle.gradient(&input, &self.target)?;
        record
            .value
            .ok_or_else(|| Error::Oracle("oracle did not report the target value".into()))
    }

    fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let input = self.template.with_values(x)?;
        let record = self.oracle.gradient(&input, &self.target)?;
        let mut flat = Vec::with_capacity(x.len());
        flat.extend_from_slice(record.text.as_slice());
        flat.extend_from_slice(record.visual.as_slice());
        if flat.len() != x.len() {
            return Err(Error::Oracle(format!(
                "gradient has {} entries, input has {}",
                flat.len(),
                x.len()
            )));
        }
        Ok(flat)
    }
}

/// The example with every token replaced by PAD and visual features zeroed.
pub fn default_baseline(example: &TaskExample, pad_id: usize) -> TaskExample {
    let mut baseline = example.clone();
    for token in &mut baseline.tokens {
        *token = Token {
            id: pad_id,
            text: "[PAD]".into(),
            word_index: token.word_index,
        };
    }
    baseline.visual_features.as_mut_slice().fill(0.0);
    baseline
}

/// Embedding-space baseline for `input` under `policy`.
pub fn baseline_input(
    policy: &BaselinePolicy,
    info: &OracleInfo,
    example: &TaskExample,
    input: &ModelInput,
) -> Result<ModelInput> {
    let baseline = match policy {
        BaselinePolicy::PadTextZeroVision => info.embed(&default_baseline(example, info.pad_id))?,
        BaselinePolicy::AllZero => input.with_values(&vec![0.0; input.len()])?,
        BaselinePolicy::Custom(b) => b.clone(),
    };
    if !baseline.same_shape(input) {
        return Err(Error::invalid(format!(
            "baseline shape text {:?} / visual {:?} differs from input {:?} / {:?}",
            baseline.text.shape(),
            baseline.visual.shape(),
            input.text.shape(),
            input.visual.shape()
        )));
    }
    Ok(baseline)
}

/// Flat IG for one target of `example`.
pub fn attribute_target<O: Oracle + ?Sized>(
    oracle: &mut O,
    info: &OracleInfo,
    example: &TaskExample,
    target: Target,
    config: &IgConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let input = info.embed(example)?;
    let baseline = baseline_input(&config.baseline, info, example, &input)?;
    let x = input.flatten();
    let x0 = baseline.flatten();
    let mut field = TargetField::new(oracle, input, target);
    integrated_gradients(&mut field, &x, &x0, config.steps)
}

/// Reduces a flat embedding-space attribution of `example` to word-level
/// language and region- (or feature-) level vision vectors.
pub fn reduce_to_modalities(
    flat: &[f64],
    example: &TaskExample,
    embed_dim: usize,
    config: &IgConfig,
) -> Result<ModalAttribution> {
    let n_text = example.tokens.len() * embed_dim;
    let width = example.visual_features.cols();
    let n_visual = example.n_regions() * width;
    if flat.len() != n_text + n_visual {
        return Err(Error::invalid(format!(
            "attribution has {} entries, example needs {}",
            flat.len(),
            n_text + n_visual
        )));
    }
    let token_values: Vec<f64> = if embed_dim == 0 {
        vec![0.0; example.tokens.len()]
    } else {
        flat[..n_text].chunks(embed_dim).map(|c| c.iter().sum()).collect()
    };
    let tokens = AttributionVector::dense(Modality::Language, token_values);
    let language = crate::alignment::aggregate_to_words(&tokens, &example.word_map()?)?;
    let visual = &flat[n_text..];
    let vision = match config.vision {
        VisionGranularity::Region if width > 0 => AttributionVector::dense(
            Modality::Vision,
            visual.chunks(width).map(|c| c.iter().sum()).collect(),
        ),
        VisionGranularity::Region => AttributionVector::empty(Modality::Vision),
        VisionGranularity::Feature => AttributionVector::dense(Modality::Vision, visual.to_vec()),
    };
    Ok(ModalAttribution { language, vision })
}

/// Attribution of the class-`class` logit to the example's inputs.
pub fn attribute_answer<O: Oracle + ?Sized>(
    oracle: &mut O,
    info: &OracleInfo,
    example: &TaskExample,
    class: usize,
    config: &IgConfig,
) -> Result<ModalAttribution> {
    if class >= info.classes {
        return Err(Error::invalid(format!(
            "class {class} out of range for {} classes",
            info.classes
        )));
    }
    let flat = attribute_target(oracle, info, example, Target::Answer { class }, config)?;
    reduce_to_modalities(&flat, example, info.embed_dim, config)
}

/// Per-step flat attributions of a generated explanation, in step order.
pub fn explanation_step_attributions<O: Oracle + ?Sized>(
    oracle: &mut O,
    info: &OracleInfo,
    example: &TaskExample,
    answer: usize,
    generated: &[usize],
    config: &IgConfig,
) -> Result<Vec<Vec<f64>>> {
    if generated.is_empty() {
        return Err(Error::EmptyExplanation);
    }
    (0..generated.len())
        .map(|step| {
            let target = Target::Explanation {
                answer,
                prefix: generated[..step].to_vec(),
                token: generated[step],
            };
            attribute_target(oracle, info, example, target, config)
        })
        .collect()
}

/// Attribution of a generated explanation: the per-token attributions with
/// respect to the original inputs, summed over all generated tokens.
pub fn attribute_explanation<O: Oracle + ?Sized>(
    oracle: &mut O,
    info: &OracleInfo,
    example: &TaskExample,
    answer: usize,
    generated: &[usize],
    config: &IgConfig,
) -> Result<ModalAttribution> {
    let steps = explanation_step_attributions(oracle, info, example, answer, generated, config)?;
    let mut total = vec![0.0; steps[0].len()];
    for step in &steps {
        for (t, v) in total.iter_mut().zip(step) {
            *t += v;
        }
    }
    reduce_to_modalities(&total, example, info.embed_dim, config)
}
