//! File formats: example and attribution JSONL, metric CSV with its JSON
//! sidecar.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AttributionVector, MetricRow, Modality, TaskExample};

/// Header of the metrics CSV.
pub const METRICS_HEADER: &str = "id,sf_nlp,sf_img,sf_overall,suff_nlp,comp_nlp,suff_img,comp_img";

fn read_jsonl<T: DeserializeOwned>(path: &Path, mut check: impl FnMut(&T) -> Result<()>) -> Result<Vec<T>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ingest = |message: String| Error::Ingest {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let record: T = serde_json::from_str(&line).map_err(|e| ingest(e.to_string()))?;
        check(&record).map_err(|e| ingest(e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(records: &[T], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::invalid(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads and validates an example file. Ids must be unique.
pub fn load_examples(path: &Path) -> Result<Vec<TaskExample>> {
    let mut seen = HashSet::new();
    read_jsonl(path, |e: &TaskExample| {
        e.validate(None, None)?;
        if !seen.insert(e.id.clone()) {
            return Err(Error::invalid(format!("duplicate example id {:?}", e.id)));
        }
        Ok(())
    })
}

pub fn write_examples(examples: &[TaskExample], path: &Path) -> Result<()> {
    write_jsonl(examples, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributionTarget {
    Answer,
    Explanation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRunConfig {
    pub m: usize,
    pub baseline: String,
}

/// One line of the attribution file: one modality of one target of one
/// example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub id: String,
    pub modality: Modality,
    pub feature_ids: Vec<usize>,
    pub values: Vec<f64>,
    pub target: AttributionTarget,
    pub config: AttributionRunConfig,
}

impl AttributionRecord {
    pub fn vector(&self) -> Result<AttributionVector> {
        AttributionVector::new(self.modality, self.feature_ids.clone(), self.values.clone())
    }
}

pub fn load_attributions(path: &Path) -> Result<Vec<AttributionRecord>> {
    let mut seen = HashSet::new();
    read_jsonl(path, |r: &AttributionRecord| {
        r.vector()?;
        if !seen.insert((r.id.clone(), r.target, r.modality)) {
            return Err(Error::invalid(format!(
                "duplicate {:?} {} record for example {:?}",
                r.target, r.modality, r.id
            )));
        }
        Ok(())
    })
}

pub fn write_attributions(records: &[AttributionRecord], path: &Path) -> Result<()> {
    write_jsonl(records, path)
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn cell(v: Option<f64>) -> String {
    v.map(format_real).unwrap_or_default()
}

/// Path of the JSON sidecar written next to a metrics CSV.
pub fn sidecar_path(csv: &Path) -> std::path::PathBuf {
    csv.with_extension("json")
}

/// Writes the metrics CSV and its JSON sidecar (`<name>.json`).
pub fn write_metrics<S: Serialize>(rows: &[MetricRow], sidecar: &S, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        if r.example_id.contains([',', '\n', '"']) {
            return Err(Error::invalid(format!(
                "example id {:?} cannot be written to CSV",
                r.example_id
            )));
        }
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.example_id,
            format_real(r.sf_nlp),
            cell(r.sf_img),
            format_real(r.sf_overall),
            format_real(r.suff_nlp),
            format_real(r.comp_nlp),
            cell(r.suff_img),
            cell(r.comp_img),
        )?;
    }
    w.flush()?;
    let json = serde_json::to_string_pretty(sidecar).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(sidecar_path(path), json + "\n")?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let ingest = |line: usize, message: String| Error::Ingest {
        path: path.display().to_string(),
        line,
        message,
    };
    match lines.next() {
        Some((_, header)) => {
            if header?.trim_end() != METRICS_HEADER {
                return Err(ingest(1, format!("header must be {METRICS_HEADER:?}")));
            }
        }
        None => return Err(ingest(1, "missing header".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 8 {
            return Err(ingest(
                i + 1,
                format!("expected 8 fields, found {}", fields.len()),
            ));
        }
        let opt = |k: usize| -> Result<Option<f64>> {
            if fields[k].is_empty() {
                return Ok(None);
            }
            fields[k]
                .parse::<f64>()
                .map(Some)
                .map_err(|e| ingest(i + 1, format!("column {k}: {e}")))
        };
        let req = |k: usize| -> Result<f64> {
            opt(k)?.ok_or_else(|| ingest(i + 1, format!("column {k} must not be empty")))
        };
        rows.push(MetricRow {
            example_id: fields[0].to_string(),
            sf_nlp: req(1)?,
            sf_img: opt(2)?,
            sf_overall: req(3)?,
            suff_nlp: req(4)?,
            comp_nlp: req(5)?,
            suff_img: opt(6)?,
            comp_img: opt(7)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_example_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(load_examples(&p).unwrap().is_empty());
    }

    #[test]
    fn schema_violation_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        let good = r#"{"id":"a","words":["x"],"tokens":[{"id":3,"text":"x","word_index":0}],"visual_features":[],"answer_class":0,"explanation_tokens":[]}"#;
        let bad = r#"{"id":"b","words":["x","y"],"tokens":[{"id":3,"text":"x","word_index":0}],"visual_features":[],"answer_class":0}"#;
        std::fs::write(&p, format!("{good}\n{bad}\n")).unwrap();
        match load_examples(&p) {
            Err(Error::Ingest { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&p, format!("{good}\n{good}\n")).unwrap();
        assert!(matches!(load_examples(&p), Err(Error::Ingest { line: 2, .. })));
        std::fs::write(&p, "{not json\n").unwrap();
        assert!(matches!(load_examples(&p), Err(Error::Ingest { line: 1, .. })));
    }

    #[test]
    fn zero_rows_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics(&[], &serde_json::json!({}), &p).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            format!("{METRICS_HEADER}\n")
        );
        assert!(read_metrics(&p).unwrap().is_empty());
        assert!(sidecar_path(&p).exists());
    }

    #[test]
    fn bad_metric_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, format!("{METRICS_HEADER}\na,0.5,,,0,0,,\n")).unwrap();
        assert!(matches!(read_metrics(&p), Err(Error::Ingest { line: 2, .. })));
        std::fs::write(&p, "id,x\n").unwrap();
        assert!(matches!(read_metrics(&p), Err(Error::Ingest { line: 1, .. })));
    }

    proptest! {
        #[test]
        fn metrics_round_trip_full_precision(
            vals in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 7),
            vision in any::<bool>(),
        ) {
            let row = MetricRow {
                example_id: "ex-1".into(),
                sf_nlp: vals[0],
                sf_img: vision.then_some(vals[1]),
                sf_overall: vals[2],
                suff_nlp: vals[3],
                comp_nlp: vals[4],
                suff_img: vision.then_some(vals[5]),
                comp_img: vision.then_some(vals[6]),
            };
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.csv");
            write_metrics(std::slice::from_ref(&row), &serde_json::json!({}), &p).unwrap();
            prop_assert_eq!(read_metrics(&p).unwrap(), vec![row]);
        }
    }
}
