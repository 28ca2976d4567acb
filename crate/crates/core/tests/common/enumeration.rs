//! Exhaustive AOPC oracle for pooled linear-softmax classifiers. It shares
//! nothing with the library beyond the model's public weights: masking,
//! the forward pass, top-k sizes (exact rationals) and ranking are redone
//! here.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;

use faitheval::toydiff::LinearModel;
use faitheval::{Modality, TaskExample};

pub struct Enumeration {
    /// Probability of `class` for every keep-mask over the modality's features.
    pub table: HashMap<u32, f64>,
    pub n: usize,
}

fn probs(model: &LinearModel, tokens: &[usize], regions: &[Vec<f64>]) -> Vec<f64> {
    let mut logits = model.bias.clone();
    for &id in tokens {
        for (j, l) in logits.iter_mut().enumerate() {
            for k in 0..model.embedding.cols() {
                *l += model.embedding.get(id, k) * model.text_weights.get(k, j);
            }
        }
    }
    for row in regions {
        for (j, l) in logits.iter_mut().enumerate() {
            for (k, v) in row.iter().enumerate() {
                *l += v * model.visual_weights.get(k, j);
            }
        }
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn enumerate(
    model: &LinearModel,
    example: &TaskExample,
    modality: Modality,
    class: usize,
) -> Enumeration {
    let n = match modality {
        Modality::Language => example.words.len(),
        Modality::Vision => example.visual_features.rows(),
    };
    assert!(n <= 8, "enumeration is for small feature sets");
    let mut table = HashMap::new();
    for mask in 0u32..(1 << n) {
        let kept = |f: usize| mask & (1 << f) != 0;
        let tokens: Vec<usize> = example
            .tokens
            .iter()
            .map(|t| {
                if modality == Modality::Language && !kept(t.word_index) {
                    0
                } else {
                    t.id
                }
            })
            .collect();
        let regions: Vec<Vec<f64>> = (0..example.visual_features.rows())
            .map(|r| {
                let row = example.visual_features.row(r).to_vec();
                if modality == Modality::Vision && !kept(r) {
                    vec![0.0; row.len()]
                } else {
                    row
                }
            })
            .collect();
        table.insert(mask, probs(model, &tokens, &regions)[class]);
    }
    Enumeration { table, n }
}

/// Predicted class on the unmasked example.
pub fn predicted(model: &LinearModel, example: &TaskExample) -> usize {
    let tokens: Vec<usize> = example.tokens.iter().map(|t| t.id).collect();
    let regions: Vec<Vec<f64>> = (0..example.visual_features.rows())
        .map(|r| example.visual_features.row(r).to_vec())
        .collect();
    let p = probs(model, &tokens, &regions);
    (0..p.len()).fold(0, |best, j| if p[j] > p[best] { j } else { best })
}

impl Enumeration {
    /// `(sufficiency, comprehensiveness)` for bins given as exact
    /// fractions `num/den`.
    pub fn aopc(&self, relevance: &[f64], bins: &[(i64, i64)], abs: bool) -> (f64, f64) {
        let n = self.n;
        let full = (1u32 << n) - 1;
        let original = self.table[&full];
        let key = |i: usize| if abs { relevance[i].abs() } else { relevance[i] };
        let (mut suff, mut comp) = (0.0, 0.0);
        for &(num, den) in bins {
            let size = (BigRational::new(BigInt::from(num), BigInt::from(den)) * BigInt::from(n as i64))
                .ceil()
                .to_integer()
                .to_usize()
                .unwrap()
                .clamp(1, n);
            // Selection sort: repeatedly take the best remaining feature,
            // the lower id winning ties.
            let mut mask = 0u32;
            for _ in 0..size {
                let best = (0..n)
                    .filter(|&i| mask & (1 << i) == 0)
                    .fold(None, |b: Option<usize>, i| match b {
                        Some(j) if key(j) >= key(i) => Some(j),
                        _ => Some(i),
                    })
                    .unwrap();
                mask |= 1 << best;
            }
            suff += original - self.table[&mask];
            comp += original - self.table[&(full & !mask)];
        }
        (suff / bins.len() as f64, comp / bins.len() as f64)
    }
}
