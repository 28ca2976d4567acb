#![allow(dead_code)]

pub mod enumeration;

use std::path::PathBuf;

use faitheval::matrix::Matrix;
use faitheval::{TaskExample, Token};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Compares `actual` with a frozen fixture. Setting `FAITHEVAL_BLESS=1`
/// rewrites the fixture instead.
pub fn check_golden(name: &str, actual: &str) {
    let path = fixture(name);
    if std::env::var_os("FAITHEVAL_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| {
        panic!(
            "missing fixture {} ({e}); run with FAITHEVAL_BLESS=1",
            path.display()
        )
    });
    assert!(expected == actual, "{name} differs from the frozen fixture");
}

/// One token per word, ids as given.
pub fn simple_example(id: &str, token_ids: &[usize], visual: Matrix, answer_class: usize) -> TaskExample {
    TaskExample {
        id: id.into(),
        words: token_ids.iter().map(|t| format!("w{t}")).collect(),
        tokens: token_ids
            .iter()
            .enumerate()
            .map(|(i, &t)| Token {
                id: t,
                text: format!("w{t}"),
                word_index: i,
            })
            .collect(),
        visual_features: visual,
        answer_class,
        explanation_tokens: Vec::new(),
    }
}
