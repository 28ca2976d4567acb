//! The three explanation-faithfulness metrics.
//!
//! * Attribution similarity: cosine between answer-side and explanation-side
//!   relevance per modality, mapped to `[0, 1]` by `0.5 * (1 + cos)` and
//!   averaged over the modalities present.
//! * NLE comprehensiveness: mean over relevance bins of the drop in the
//!   predicted-class probability when the explanation's top-k features are
//!   removed.
//! * NLE sufficiency: the same drop when only those features are kept.
//!
//! Bins select the top `ceil(k * N)` features independently for each
//! fraction `k`; the aggregate divides by the number of bins.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::attribution::VisionGranularity;
use crate::error::{Error, Result};
use crate::oracle::{Oracle, OracleInfo};
use crate::types::{cosine, AttributionPair, AttributionVector, Modality, TaskExample, Token};

pub const DEFAULT_BINS: [f64; 5] = [0.01, 0.05, 0.10, 0.20, 0.50];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalityScore {
    pub cosine: f64,
    /// `0.5 * (1 + cosine)`.
    pub score: f64,
    /// Either side had no relevance at all; the cosine was set to 0.
    pub zero_norm: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SfScore {
    pub language: ModalityScore,
    pub vision: Option<ModalityScore>,
    pub overall: f64,
}

impl SfScore {
    pub fn any_zero_norm(&self) -> bool {
        self.language.zero_norm || self.vision.is_some_and(|v| v.zero_norm)
    }
}

pub fn normalized_score(cos: f64) -> f64 {
    0.5 * (1.0 + cos)
}

fn modality_score(pair: &AttributionPair) -> Result<ModalityScore> {
    let a = &pair.answer().values;
    let e = &pair.explanation().values;
    let cos = cosine(a, e)?;
    Ok(ModalityScore {
        cosine: cos,
        score: normalized_score(cos),
        zero_norm: pair.answer().norm() == 0.0 || pair.explanation().norm() == 0.0,
    })
}

/// Attribution-similarity score from a language pair and an optional vision
/// pair.
pub fn attribution_similarity(
    language: &AttributionPair,
    vision: Option<&AttributionPair>,
) -> Result<SfScore> {
    if language.modality() != Modality::Language {
        return Err(Error::invalid("first pair must hold language attributions"));
    }
    let lang = modality_score(language)?;
    let vis = match vision {
        Some(pair) if pair.modality() != Modality::Vision => {
            return Err(Error::invalid("second pair must hold vision attributions"))
        }
        Some(pair) => Some(modality_score(pair)?),
        None => None,
    };
    let overall = match vis {
        Some(v) => (lang.score + v.score) / 2.0,
        None => lang.score,
    };
    Ok(SfScore {
        language: lang,
        vision: vis,
        overall,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankingMode {
    /// Most positive relevance first.
    #[default]
    Signed,
    /// Largest magnitude first.
    Abs,
}

impl std::str::FromStr for RankingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signed" => Ok(RankingMode::Signed),
            "abs" | "absolute" => Ok(RankingMode::Abs),
            _ => Err(Error::invalid(format!("unknown ranking mode {s:?} (signed|abs)"))),
        }
    }
}

/// Features selected for one relevance fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBin {
    pub modality: Modality,
    pub fraction: f64,
    pub ranking: RankingMode,
    /// Selected ids, most relevant first.
    pub ids: Vec<usize>,
}

impl FeatureBin {
    pub fn empty(modality: Modality) -> Self {
        Self {
            modality,
            fraction: 0.0,
            ranking: RankingMode::Signed,
            ids: Vec::new(),
        }
    }

    pub fn of(modality: Modality, ids: Vec<usize>) -> Self {
        Self {
            ids,
            ..Self::empty(modality)
        }
    }
}

/// `ceil(k * n)`, robust to representation error in `k`, capped at `n`.
pub fn bin_size(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    let size = (raw - 1e-9 * raw.max(1.0)).ceil().max(0.0) as usize;
    size.clamp(usize::from(n > 0), n)
}

/// Top `ceil(k * N)` features by relevance; ties go to the lower id.
pub fn select_top_k(attrib: &AttributionVector, fraction: f64, mode: RankingMode) -> Result<FeatureBin> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("bin fraction {fraction} outside (0, 1]")));
    }
    if attrib.is_empty() {
        return Err(Error::invalid("cannot select features from an empty attribution"));
    }
    let key = |v: f64| match mode {
        RankingMode::Signed => v,
        RankingMode::Abs => v.abs(),
    };
    let mut order: Vec<(usize, f64)> = attrib
        .feature_ids
        .iter()
        .zip(&attrib.values)
        .map(|(&id, &v)| (id, key(v)))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let n = bin_size(fraction, order.len());
    Ok(FeatureBin {
        modality: attrib.modality,
        fraction,
        ranking: mode,
        ids: order.into_iter().take(n).map(|(id, _)| id).collect(),
    })
}

/// All feature ids of `modality` for `example`.
pub fn feature_universe(example: &TaskExample, modality: Modality, vision: VisionGranularity) -> Vec<usize> {
    match modality {
        Modality::Language => (0..example.words.len()).collect(),
        Modality::Vision => match vision {
            VisionGranularity::Region => (0..example.n_regions()).collect(),
            VisionGranularity::Feature => (0..example.visual_features.as_slice().len()).collect(),
        },
    }
}

/// Ids of the universe not in `bin`.
pub fn complement(example: &TaskExample, bin: &FeatureBin, vision: VisionGranularity) -> FeatureBin {
    let selected: BTreeSet<usize> = bin.ids.iter().copied().collect();
    let ids = feature_universe(example, bin.modality, vision)
        .into_iter()
        .filter(|id| !selected.contains(id))
        .collect();
    FeatureBin {
        modality: bin.modality,
        fraction: 1.0 - bin.fraction,
        ranking: bin.ranking,
        ids,
    }
}

/// Copy of `example` with the bin's features masked: words become PAD at
/// every constituent token, visual features become zero.
pub fn perturb_remove(
    example: &TaskExample,
    bin: &FeatureBin,
    pad_id: usize,
    vision: VisionGranularity,
) -> Result<TaskExample> {
    let mut out = example.clone();
    match bin.modality {
        Modality::Language => {
            let map = example.word_map()?;
            for &w in &bin.ids {
                if w >= map.n_words() {
                    return Err(Error::invalid(format!(
                        "word id {w} out of range for {} words",
                        map.n_words()
                    )));
                }
                for &t in map.tokens_of(w) {
                    out.tokens[t] = Token {
                        id: pad_id,
                        text: "[PAD]".into(),
                        word_index: w,
                    };
                }
            }
        }
        Modality::Vision => {
            let width = example.visual_features.cols();
            for &id in &bin.ids {
                match vision {
                    VisionGranularity::Region => {
                        if id >= example.n_regions() {
                            return Err(Error::invalid(format!(
                                "region id {id} out of range for {} regions",
                                example.n_regions()
                            )));
                        }
                        out.visual_features.row_mut(id).fill(0.0);
                    }
                    VisionGranularity::Feature => {
                        if id >= example.n_regions() * width {
                            return Err(Error::invalid(format!("visual feature id {id} out of range")));
                        }
                        out.visual_features.set(id / width, id % width, 0.0);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Copy of `example` keeping only the bin's features of that modality.
pub fn perturb_keep_only(
    example: &TaskExample,
    bin: &FeatureBin,
    pad_id: usize,
    vision: VisionGranularity,
) -> Result<TaskExample> {
    let universe = feature_universe(example, bin.modality, vision);
    if let Some(id) = bin.ids.iter().find(|id| !universe.contains(id)) {
        return Err(Error::invalid(format!(
            "{} feature id {id} out of range",
            bin.modality
        )));
    }
    perturb_remove(example, &complement(example, bin, vision), pad_id, vision)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AopcConfig {
    pub bins: Vec<f64>,
    pub ranking: RankingMode,
    pub vision: VisionGranularity,
}

impl Default for AopcConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS.to_vec(),
            ranking: RankingMode::default(),
            vision: VisionGranularity::default(),
        }
    }
}

impl AopcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins.is_empty() {
            return Err(Error::invalid("at least one relevance bin is required"));
        }
        if let Some(k) = self.bins.iter().find(|k| !(**k > 0.0 && **k <= 1.0)) {
            return Err(Error::invalid(format!("bin fraction {k} outside (0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perturbation {
    /// Remove the selected features (comprehensiveness).
    Remove,
    /// Keep only the selected features (sufficiency).
    KeepOnly,
}

/// Probability of `class` for `example`.
pub fn class_probability<O: Oracle + ?Sized>(
    oracle: &mut O,
    info: &OracleInfo,
    example: &TaskExample,
    class: usize,
) -> Result<f64> {
    let p = oracle.predict(&info.embed(example)?)?;
    if class >= p.len() {
        return Err(Error::invalid(format!("class {class} out of range")));
    }
    Ok(p.prob(class))
}

/// `p_j(x) - p_j(perturbed x)` for every bin, in bin order.
pub fn aopc_terms<O: Oracle + ?Sized>(
    oracle: &mut O,
    info: &OracleInfo,
    example: &TaskExample,
    explanation: &AttributionVector,
    config: &AopcConfig,
    class: usize,
    perturbation: Perturbation,
) -> Result<Vec<f64>> {
    config.validate()?;
    let original = class_probability(oracle, info, example, class)?;
    config
        .bins
        .iter()
        .map(|&k| {
            let bin = select_top_k(explanation, k, config.ranking)?;
            let perturbed = match perturbation {
                Perturbation::Remove => perturb_remove(example, &bin, info.pad_id, config.vision)?,
                Perturbation::KeepOnly => perturb_keep_only(example, &bin, info.pad_id, config.vision)?,
            };
            Ok(original - class_probability(oracle, info, &perturbed, class)?)
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// AOPC comprehensiveness of the explanation's relevant features.
pub fn nle_comprehensiveness<O: Oracle + ?Sized>(
    oracle: &mut O,
    info: &OracleInfo,
    example: &TaskExample,
    explanation: &AttributionVector,
    config: &AopcConfig,
    class: usize,
) -> Result<f64> {
    let terms = aopc_terms(
        oracle,
        info,
        example,
        explanation,
        config,
        class,
        Perturbation::Remove,
    )?;
    Ok(mean(&terms))
}

/// AOPC sufficiency of the explanation's relevant features.
pub fn nle_sufficiency<O: Oracle + ?Sized>(
    oracle: &mut O,
    info: &OracleInfo,
    example: &TaskExample,
    explanation: &AttributionVector,
    config: &AopcConfig,
    class: usize,
) -> Result<f64> {
    let terms = aopc_terms(
        oracle,
        info,
        example,
        explanation,
        config,
        class,
        Perturbation::KeepOnly,
    )?;
    Ok(mean(&terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn pair(m: Modality, a: Vec<f64>, e: Vec<f64>) -> AttributionPair {
        AttributionPair::new(AttributionVector::dense(m, a), AttributionVector::dense(m, e)).unwrap()
    }

    #[test]
    fn identical_vectors_score_one() {
        let l = pair(Modality::Language, vec![0.3, -0.2], vec![0.3, -0.2]);
        let v = pair(Modality::Vision, vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]);
        let s = attribution_similarity(&l, Some(&v)).unwrap();
        assert!((s.overall - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_is_neutral() {
        let l = pair(Modality::Language, vec![1.0, 0.0], vec![0.0, 1.0]);
        let v = pair(Modality::Vision, vec![0.0, 2.0], vec![3.0, 0.0]);
        let s = attribution_similarity(&l, Some(&v)).unwrap();
        assert_eq!(s.overall, 0.5);
        assert!(!s.any_zero_norm());
    }

    #[test]
    fn zero_norm_is_flagged() {
        let l = pair(Modality::Language, vec![0.0, 0.0], vec![0.0, 1.0]);
        let s = attribution_similarity(&l, None).unwrap();
        assert_eq!(s.language.cosine, 0.0);
        assert!(s.language.zero_norm);
        assert_eq!(s.overall, 0.5);
    }

    #[test]
    fn modality_order_enforced() {
        let v = pair(Modality::Vision, vec![1.0], vec![1.0]);
        assert!(attribution_similarity(&v, None).is_err());
        let l = pair(Modality::Language, vec![1.0], vec![1.0]);
        assert!(attribution_similarity(&l, Some(&l)).is_err());
    }

    #[test]
    fn top_k_examples() {
        let a = AttributionVector::dense(Modality::Language, (0..10).map(f64::from).collect());
        assert_eq!(
            select_top_k(&a, 0.2, RankingMode::Signed).unwrap().ids,
            vec![9, 8]
        );
        assert_eq!(select_top_k(&a, 1.0, RankingMode::Signed).unwrap().ids.len(), 10);
        let tie = AttributionVector::dense(Modality::Language, vec![0.5, 1.0, 0.5, 0.5]);
        assert_eq!(
            select_top_k(&tie, 0.5, RankingMode::Signed).unwrap().ids,
            vec![1, 0]
        );
        let signs = AttributionVector::dense(Modality::Vision, vec![0.1, -0.9, 0.3]);
        assert_eq!(
            select_top_k(&signs, 0.34, RankingMode::Signed).unwrap().ids,
            vec![2, 0]
        );
        assert_eq!(select_top_k(&signs, 0.3, RankingMode::Abs).unwrap().ids, vec![1]);
        assert!(select_top_k(&signs, 0.0, RankingMode::Signed).is_err());
        assert!(select_top_k(&signs, 1.5, RankingMode::Signed).is_err());
        assert!(select_top_k(
            &AttributionVector::empty(Modality::Vision),
            0.5,
            RankingMode::Signed
        )
        .is_err());
    }

    #[test]
    fn bin_sizes() {
        assert_eq!(bin_size(0.01, 12), 1);
        assert_eq!(bin_size(0.2, 10), 2);
        assert_eq!(bin_size(0.07, 100), 7);
        assert_eq!(bin_size(0.25, 8), 2);
        assert_eq!(bin_size(0.5, 7), 4);
        assert_eq!(bin_size(1.0, 3), 3);
    }

    fn example() -> TaskExample {
        let words = vec!["a".to_string(), "bcd".to_string(), "e".to_string()];
        let tokens = [(3, 0), (4, 1), (5, 1), (6, 1), (7, 2)]
            .iter()
            .map(|&(id, w)| Token {
                id,
                text: format!("t{id}"),
                word_index: w,
            })
            .collect();
        TaskExample {
            id: "x".into(),
            words,
            tokens,
            visual_features: Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            answer_class: 0,
            explanation_tokens: vec![],
        }
    }

    #[test]
    fn remove_word_spanning_three_tokens() {
        let ex = example();
        let out = perturb_remove(
            &ex,
            &FeatureBin::of(Modality::Language, vec![1]),
            0,
            VisionGranularity::Region,
        )
        .unwrap();
        assert_eq!(out.token_ids(), vec![3, 0, 0, 0, 7]);
        assert_eq!(ex.token_ids(), vec![3, 4, 5, 6, 7]);
        assert_eq!(out.visual_features, ex.visual_features);
    }

    #[test]
    fn empty_and_full_bins() {
        let ex = example();
        let g = VisionGranularity::Region;
        for m in [Modality::Language, Modality::Vision] {
            assert_eq!(perturb_remove(&ex, &FeatureBin::empty(m), 0, g).unwrap(), ex);
            let full = FeatureBin::of(m, feature_universe(&ex, m, g));
            assert_eq!(perturb_keep_only(&ex, &full, 0, g).unwrap(), ex);
            let removed = perturb_remove(&ex, &full, 0, g).unwrap();
            let masked = perturb_keep_only(&ex, &FeatureBin::empty(m), 0, g).unwrap();
            assert_eq!(removed, masked);
        }
        let all_text = FeatureBin::of(Modality::Language, vec![0, 1, 2]);
        assert!(perturb_remove(&ex, &all_text, 0, g)
            .unwrap()
            .token_ids()
            .iter()
            .all(|&t| t == 0));
        let all_vis = FeatureBin::of(Modality::Vision, vec![0, 1]);
        let zeroed = perturb_remove(&ex, &all_vis, 0, g).unwrap();
        assert!(zeroed.visual_features.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn keep_only_is_remove_of_complement() {
        let ex = example();
        let g = VisionGranularity::Feature;
        let bin = FeatureBin::of(Modality::Vision, vec![3, 0]);
        let kept = perturb_keep_only(&ex, &bin, 0, g).unwrap();
        assert_eq!(kept.visual_features.as_slice(), &[1.0, 0.0, 0.0, 4.0]);
        assert_eq!(
            kept,
            perturb_remove(&ex, &complement(&ex, &bin, g), 0, g).unwrap()
        );
    }

    #[test]
    fn unknown_ids_rejected() {
        let ex = example();
        let g = VisionGranularity::Region;
        assert!(perturb_remove(&ex, &FeatureBin::of(Modality::Language, vec![3]), 0, g).is_err());
        assert!(perturb_remove(&ex, &FeatureBin::of(Modality::Vision, vec![2]), 0, g).is_err());
        assert!(perturb_keep_only(&ex, &FeatureBin::of(Modality::Vision, vec![9]), 0, g).is_err());
    }

    #[test]
    fn ranking_mode_parses() {
        assert_eq!("signed".parse::<RankingMode>().unwrap(), RankingMode::Signed);
        assert_eq!("abs".parse::<RankingMode>().unwrap(), RankingMode::Abs);
        assert!("up".parse::<RankingMode>().is_err());
    }
}
