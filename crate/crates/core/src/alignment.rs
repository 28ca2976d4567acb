//! Word-level alignment of token attributions.
//!
//! Different tokenizers split the same sentence differently, so attributions
//! are compared over words: each word's relevance is the sum of the
//! relevances of the tokens that compose it.

use std::fmt;

use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::types::AttributionVector;

/// How token surfaces relate to the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenScheme {
    /// Continuation pieces carry a `##` prefix.
    WordPieceLike,
    /// Byte-pair pieces; a leading `Ġ` or `▁` marks a word start and a
    /// leading `##` a continuation. Boundaries are recovered by matching
    /// the word sequence.
    BpeLike,
    /// Explicit character spans (`start..end`, in chars) into `source`.
    CharOffsets {
        source: String,
        spans: Vec<(usize, usize)>,
    },
}

/// For each word, the indices of the tokens composing it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordMap {
    words: Vec<Vec<usize>>,
    n_tokens: usize,
}

impl WordMap {
    /// Builds the map from each token's word index. Word indices must be
    /// non-decreasing, start at 0, and give every word at least one token.
    pub fn from_word_indices(indices: &[usize], n_words: usize) -> Result<Self> {
        let mut words: Vec<Vec<usize>> = vec![Vec::new(); n_words];
        let mut previous = 0;
        for (t, &w) in indices.iter().enumerate() {
            if w >= n_words {
                return Err(Error::invalid(format!(
                    "token {t} points at word {w}, but there are {n_words} words"
                )));
            }
            if w < previous {
                return Err(Error::invalid(format!(
                    "token {t} goes back from word {previous} to word {w}"
                )));
            }
            previous = w;
            words[w].push(t);
        }
        if let Some(w) = words.iter().position(Vec::is_empty) {
            return Err(Error::invalid(format!("word {w} has no tokens")));
        }
        Ok(Self {
            words,
            n_tokens: indices.len(),
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            words: (0..n).map(|i| vec![i]).collect(),
            n_tokens: n,
        }
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn tokens_of(&self, word: usize) -> &[usize] {
        &self.words[word]
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.words
    }

    /// Word index of each token.
    pub fn word_indices(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_tokens];
        for (w, tokens) in self.words.iter().enumerate() {
            for &t in tokens {
                out[t] = w;
            }
        }
        out
    }
}

/// Raised when tokens cannot be reassembled into the word sequence.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct AlignmentError {
    pub word_index: usize,
    pub expected: String,
    pub reconstructed: String,
    pub token_range: (usize, usize),
}

impl fmt::Display for AlignmentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tokens {}..{} reconstruct {:?} where word {} is {:?}",
            self.token_range.0, self.token_range.1, self.reconstructed, self.word_index, self.expected
        )
    }
}

fn is_split_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !c.is_ascii())
}

/// Splits on whitespace, then peels leading and trailing punctuation off
/// each run as one-character words: `"visions!"` gives `["visions", "!"]`.
pub fn segment_words(text: &str) -> Vec<String> {
    segment_word_spans(text).into_iter().map(|(w, _)| w).collect()
}

/// Like [`segment_words`], with each word's char span in `text`.
pub fn segment_word_spans(text: &str) -> Vec<(String, (usize, usize))> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let end = i;
        let mut lo = start;
        while lo < end && is_split_punctuation(chars[lo]) {
            out.push((chars[lo].to_string(), (lo, lo + 1)));
            lo += 1;
        }
        let mut hi = end;
        while hi > lo && is_split_punctuation(chars[hi - 1]) {
            hi -= 1;
        }
        if lo < hi {
            out.push((chars[lo..hi].iter().collect(), (lo, hi)));
        }
        for (k, c) in chars.iter().enumerate().take(end).skip(hi) {
            out.push((c.to_string(), (k, k + 1)));
        }
    }
    out
}

/// Lowercase with accents removed.
fn normalize(s: &str) -> String {
    s.nfd()
        .filter(|c| !is_combining_mark(*c))
        .collect::<String>()
        .to_lowercase()
}

fn strip_markers<'a>(token: &'a str, scheme: &TokenScheme) -> &'a str {
    match scheme {
        TokenScheme::WordPieceLike => token.strip_prefix("##").unwrap_or(token),
        TokenScheme::BpeLike => token
            .strip_prefix("##")
            .or_else(|| token.strip_prefix('Ġ'))
            .or_else(|| token.strip_prefix('▁'))
            .unwrap_or(token),
        TokenScheme::CharOffsets { .. } => token,
    }
}

/// Partitions `tokens` into `words` in order.
///
/// Token surfaces (markers stripped) are concatenated until they spell the
/// current word, first case-sensitively and then after lowercasing and
/// accent stripping. Under [`TokenScheme::WordPieceLike`] a `##` piece may
/// never start a word. With [`TokenScheme::CharOffsets`] each token belongs
/// to the word whose span contains the token's span.
pub fn map_tokens_to_words<S: AsRef<str>>(
    tokens: &[S],
    scheme: &TokenScheme,
    words: &[String],
) -> Result<WordMap> {
    if let TokenScheme::CharOffsets { source, spans } = scheme {
        return map_spans(tokens.len(), source, spans, words);
    }
    let mut groups: Vec<Vec<usize>> = Vec::with_capacity(words.len());
    let mut t = 0;
    for (w, word) in words.iter().enumerate() {
        let start = t;
        let mut acc = String::new();
        let norm_word = normalize(word);
        let mismatch = |acc: &str, end: usize| AlignmentError {
            word_index: w,
            expected: word.clone(),
            reconstructed: acc.to_string(),
            token_range: (start, end),
        };
        loop {
            if t >= tokens.len() {
                return Err(mismatch(&acc, t).into());
            }
            let raw = tokens[t].as_ref();
            if acc.is_empty()
                && *scheme == TokenScheme::WordPieceLike
                && raw.starts_with("##")
                && raw.len() > 2
            {
                return Err(mismatch(raw, t + 1).into());
            }
            acc.push_str(strip_markers(raw, scheme));
            t += 1;
            if acc == *word || normalize(&acc) == norm_word {
                break;
            }
            if !(word.starts_with(acc.as_str()) || norm_word.starts_with(normalize(&acc).as_str())) {
                return Err(mismatch(&acc, t).into());
            }
        }
        groups.push((start..t).collect());
    }
    if t != tokens.len() {
        let rest: String = tokens[t..]
            .iter()
            .map(|s| s.as_ref())
            .collect::<Vec<_>>()
            .join(" ");
        return Err(AlignmentError {
            word_index: words.len(),
            expected: String::new(),
            reconstructed: rest,
            token_range: (t, tokens.len()),
        }
        .into());
    }
    Ok(WordMap {
        words: groups,
        n_tokens: tokens.len(),
    })
}

fn map_spans(n_tokens: usize, source: &str, spans: &[(usize, usize)], words: &[String]) -> Result<WordMap> {
    if spans.len() != n_tokens {
        return Err(Error::invalid(format!(
            "{} spans for {n_tokens} tokens",
            spans.len()
        )));
    }
    let word_spans = segment_word_spans(source);
    let same_words = word_spans.len() == words.len()
        && word_spans
            .iter()
            .zip(words)
            .all(|((a, _), b)| a == b || normalize(a) == normalize(b));
    if !same_words {
        let first = word_spans
            .iter()
            .zip(words)
            .position(|((a, _), b)| a != b && normalize(a) != normalize(b))
            .unwrap_or(word_spans.len().min(words.len()));
        return Err(AlignmentError {
            word_index: first,
            expected: words.get(first).cloned().unwrap_or_default(),
            reconstructed: word_spans.get(first).map(|(w, _)| w.clone()).unwrap_or_default(),
            token_range: (0, 0),
        }
        .into());
    }
    let mut indices = Vec::with_capacity(n_tokens);
    for (t, &(s, e)) in spans.iter().enumerate() {
        let w = word_spans
            .iter()
            .position(|(_, (ws, we))| *ws <= s && e <= *we && s < e)
            .ok_or_else(|| AlignmentError {
                word_index: 0,
                expected: String::new(),
                reconstructed: source.chars().skip(s).take(e.saturating_sub(s)).collect(),
                token_range: (t, t + 1),
            })?;
        indices.push(w);
    }
    WordMap::from_word_indices(&indices, words.len())
}

/// Sums token relevances into word relevances, left to right within each
/// word. Output ids are word indices.
pub fn aggregate_to_words(token_attrib: &AttributionVector, map: &WordMap) -> Result<AttributionVector> {
    if token_attrib.len() != map.n_tokens() {
        return Err(Error::invalid(format!(
            "{} token relevances for a map over {} tokens",
            token_attrib.len(),
            map.n_tokens()
        )));
    }
    let values = map
        .groups()
        .iter()
        .map(|tokens| tokens.iter().map(|&t| token_attrib.values[t]).sum())
        .collect();
    Ok(AttributionVector::dense(token_attrib.modality, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Modality;

    const SENTENCE: &str = "I sink under the weight of the splendour of these visions!";

    #[test]
    fn punctuation_is_split() {
        assert_eq!(segment_words("visions!"), vec!["visions", "!"]);
        assert_eq!(segment_words(""), Vec::<String>::new());
        assert_eq!(segment_words("a b"), vec!["a", "b"]);
        assert_eq!(segment_words("(\"hi\")"), vec!["(", "\"", "hi", "\"", ")"]);
        assert_eq!(segment_words("don't"), vec!["don't"]);
    }

    #[test]
    fn wordpiece_splendour() {
        let words = segment_words("splendour");
        let map = map_tokens_to_words(
            &["s", "##ple", "##ndo", "##ur"],
            &TokenScheme::WordPieceLike,
            &words,
        )
        .unwrap();
        assert_eq!(map.n_words(), 1);
        assert_eq!(map.tokens_of(0), &[0, 1, 2, 3]);
    }

    #[test]
    fn bpe_splendour() {
        let words = segment_words("splendour");
        let map = map_tokens_to_words(&["splend", "##our"], &TokenScheme::BpeLike, &words).unwrap();
        assert_eq!(map.tokens_of(0), &[0, 1]);
        let gpt = map_tokens_to_words(&["splend", "our"], &TokenScheme::BpeLike, &words).unwrap();
        assert_eq!(gpt, map);
    }

    #[test]
    fn one_token_per_word_is_identity() {
        let words = segment_words("a b c");
        let map = map_tokens_to_words(&["a", "b", "c"], &TokenScheme::WordPieceLike, &words).unwrap();
        assert_eq!(map, WordMap::identity(3));
    }

    #[test]
    fn casing_and_accents_fall_back_to_normalized_match() {
        let words = segment_words(SENTENCE);
        let map = map_tokens_to_words(&["i"], &TokenScheme::WordPieceLike, &words[..1]).unwrap();
        assert_eq!(map.n_words(), 1);
        let cafe = vec!["Café".to_string()];
        let map = map_tokens_to_words(&["cafe"], &TokenScheme::WordPieceLike, &cafe).unwrap();
        assert_eq!(map.tokens_of(0), &[0]);
    }

    #[test]
    fn mismatch_reports_first_divergent_span() {
        let words = segment_words("the weight");
        let err = map_tokens_to_words(&["the", "wait"], &TokenScheme::WordPieceLike, &words).unwrap_err();
        match err {
            Error::Alignment(a) => {
                assert_eq!(a.word_index, 1);
                assert_eq!(a.reconstructed, "wait");
                assert_eq!(a.token_range, (1, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
        let leftover = map_tokens_to_words(&["the", "weight", "x"], &TokenScheme::WordPieceLike, &words);
        assert!(matches!(leftover, Err(Error::Alignment(_))));
        let orphan = map_tokens_to_words(&["##the", "weight"], &TokenScheme::WordPieceLike, &words);
        assert!(matches!(orphan, Err(Error::Alignment(_))));
    }

    #[test]
    fn char_offsets() {
        let source = "splendour visions!".to_string();
        let words = segment_words(&source);
        let spans = vec![(0, 6), (6, 9), (10, 17), (17, 18)];
        let scheme = TokenScheme::CharOffsets { source, spans };
        let map = map_tokens_to_words(&["splend", "our", "visions", "!"], &scheme, &words).unwrap();
        assert_eq!(map.groups(), &[vec![0, 1], vec![2], vec![3]]);
    }

    #[test]
    fn aggregate_sums_members() {
        let tokens = AttributionVector::dense(Modality::Language, vec![0.1, 0.2, -0.05, 0.05]);
        let map = WordMap::from_word_indices(&[0, 0, 0, 0], 1).unwrap();
        let words = aggregate_to_words(&tokens, &map).unwrap();
        assert!((words.values[0] - 0.3).abs() < 1e-15);
        let same = aggregate_to_words(&tokens, &WordMap::identity(4)).unwrap();
        assert_eq!(same, tokens);
        let zeros = AttributionVector::dense(Modality::Language, vec![0.0; 4]);
        assert_eq!(aggregate_to_words(&zeros, &map).unwrap().values, vec![0.0]);
        assert!(aggregate_to_words(&zeros, &WordMap::identity(3)).is_err());
    }

    #[test]
    fn word_indices_must_partition() {
        assert!(WordMap::from_word_indices(&[0, 1, 0], 2).is_err());
        assert!(WordMap::from_word_indices(&[0, 2], 3).is_err());
        assert!(WordMap::from_word_indices(&[0, 5], 2).is_err());
        let m = WordMap::from_word_indices(&[0, 0, 1], 2).unwrap();
        assert_eq!(m.word_indices(), vec![0, 0, 1]);
    }
}
