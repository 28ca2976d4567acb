//! Seeded synthetic examples for smoke runs and fixtures.
//!
//! Words are built from one to three syllables. Each syllable is one
//! vocabulary entry, and continuation pieces carry the `##` marker, so the
//! generated token lists look like WordPiece output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::toydiff::{ToyDims, EOS_ID, PAD_ID};
use crate::types::{TaskExample, Token};

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub count: usize,
    pub seed: u64,
    pub vocab: usize,
    pub vis_dim: usize,
    pub classes: usize,
    /// Regions per example; zero gives text-only examples.
    pub regions: usize,
    pub min_words: usize,
    pub max_words: usize,
}

impl SynthConfig {
    /// Examples sized for a toy model with `dims`.
    pub fn for_dims(count: usize, seed: u64, dims: ToyDims) -> Self {
        Self {
            count,
            seed,
            vocab: dims.vocab,
            vis_dim: dims.vis_dim,
            classes: dims.classes,
            regions: 4,
            min_words: 3,
            max_words: 7,
        }
    }

    fn validate(&self) -> Result<()> {
        // PAD and EOS take the lowest ids.
        if self.vocab <= EOS_ID + 1 {
            return Err(Error::invalid("vocabulary leaves no room for ordinary tokens"));
        }
        if self.classes == 0 || self.min_words == 0 || self.min_words > self.max_words {
            return Err(Error::invalid("synthetic example sizes are inconsistent"));
        }
        if self.regions > 0 && self.vis_dim == 0 {
            return Err(Error::invalid("regions need a positive feature width"));
        }
        Ok(())
    }
}

/// Surface form of vocabulary entry `id` (ids below 2 are PAD and EOS).
pub fn syllable(id: usize) -> String {
    match id {
        PAD_ID => "[PAD]".into(),
        EOS_ID => "[EOS]".into(),
        _ => {
            let k = id - 2;
            let base = format!(
                "{}{}",
                ONSETS[k % ONSETS.len()],
                NUCLEI[(k / ONSETS.len()) % NUCLEI.len()]
            );
            match k / (ONSETS.len() * NUCLEI.len()) {
                0 => base,
                r => format!("{base}{r}"),
            }
        }
    }
}

pub fn synth_examples(config: &SynthConfig) -> Result<Vec<TaskExample>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = config.count.max(1).to_string().len().max(4);
    let mut out = Vec::with_capacity(config.count);
    for i in 0..config.count {
        let n_words = rng.gen_range(config.min_words..=config.max_words);
        let mut words = Vec::with_capacity(n_words);
        let mut tokens = Vec::new();
        for w in 0..n_words {
            let pieces = rng.gen_range(1..=3);
            let mut word = String::new();
            for p in 0..pieces {
                let id = rng.gen_range(2..config.vocab);
                let s = syllable(id);
                word.push_str(&s);
                let text = if p == 0 { s } else { format!("##{s}") };
                tokens.push(Token {
                    id,
                    text,
                    word_index: w,
                });
            }
            words.push(word);
        }
        let visual: Vec<f64> = (0..config.regions * config.vis_dim)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        out.push(TaskExample {
            id: format!("ex-{:0width$}", i + 1),
            words,
            tokens,
            visual_features: Matrix::from_vec(config.regions, config.vis_dim, visual)?,
            answer_class: rng.gen_range(0..config.classes),
            explanation_tokens: Vec::new(),
        });
    }
    Ok(out)
}
