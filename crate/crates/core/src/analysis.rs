//! Dataset-level statistics over metric rows and attributions.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize, Serializer};

use crate::attribution::ModalAttribution;
use crate::error::{Error, Result};
use crate::types::{AttributionVector, MetricRow};

pub const DEFAULT_BUCKETS: usize = 20;

/// Equal-width histogram. Buckets are right-open except the last, which is
/// closed; values outside `[lo, hi]` are counted in the edge buckets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.total();
        self.counts
            .iter()
            .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
            .collect()
    }
}

pub fn histogram(scores: &[f64], n_buckets: usize, lo: f64, hi: f64) -> Result<Histogram> {
    if n_buckets < 1 {
        return Err(Error::invalid("histogram needs at least one bucket"));
    }
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::invalid(format!("invalid histogram range [{lo}, {hi}]")));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("non-finite score {s}")));
    }
    let width = hi - lo;
    let edges: Vec<f64> = (0..=n_buckets)
        .map(|i| {
            if i == n_buckets {
                hi
            } else {
                lo + width * i as f64 / n_buckets as f64
            }
        })
        .collect();
    let mut counts = vec![0; n_buckets];
    for &s in scores {
        if width == 0.0 {
            counts[0] += 1;
            continue;
        }
        let mut b = (((s - lo) * n_buckets as f64 / width).floor().max(0.0) as usize).min(n_buckets - 1);
        // Settle representation error against the stored edges.
        while b > 0 && s < edges[b] {
            b -= 1;
        }
        while b + 1 < n_buckets && s >= edges[b + 1] {
            b += 1;
        }
        counts[b] += 1;
    }
    Ok(Histogram {
        lo,
        hi,
        edges,
        counts,
    })
}

/// Histogram over the data's own min/max.
pub fn histogram_auto(scores: &[f64], n_buckets: usize) -> Result<Histogram> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if scores.is_empty() {
        return histogram(scores, n_buckets, 0.0, 1.0);
    }
    histogram(scores, n_buckets, lo, hi)
}

/// One entry of a correlation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Correlation {
    Value(f64),
    /// A column had zero variance (or fewer than two shared observations).
    NoVariance,
}

impl Correlation {
    pub fn value(self) -> Option<f64> {
        match self {
            Correlation::Value(v) => Some(v),
            Correlation::NoVariance => None,
        }
    }
}

impl Serialize for Correlation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Correlation::Value(v) => s.serialize_f64(*v),
            Correlation::NoVariance => s.serialize_str("no_variance"),
        }
    }
}

impl<'de> Deserialize<'de> for Correlation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Correlation::Value(v)),
            Raw::Str(s) if s == "no_variance" => Ok(Correlation::NoVariance),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("unexpected marker {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub matrix: Vec<Vec<Correlation>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<Correlation> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        Some(self.matrix[i][j])
    }
}

/// Pearson r of two equally long samples.
pub fn pearson(x: &[f64], y: &[f64]) -> Correlation {
    let n = x.len().min(y.len());
    let (x, y) = (&x[..n], &y[..n]);
    // Tested on the raw values: a rounded mean can leave tiny deviations.
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if n < 2 || constant(x) || constant(y) {
        return Correlation::NoVariance;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Correlation::NoVariance;
    }
    Correlation::Value((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pairwise Pearson correlation between metric columns over examples where
/// both columns are present.
pub fn pearson_matrix(rows: &[MetricRow], columns: &[&str]) -> Result<CorrelationMatrix> {
    if rows.len() < 2 {
        return Err(Error::invalid("correlation needs at least two rows"));
    }
    if let Some(c) = columns.iter().find(|c| !MetricRow::COLUMNS.contains(c)) {
        return Err(Error::invalid(format!("unknown metric column {c:?}")));
    }
    let n = columns.len();
    let mut matrix = vec![vec![Correlation::NoVariance; n]; n];
    for i in 0..n {
        for j in i..n {
            let (x, y): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter_map(|r| Some((r.column(columns[i])?, r.column(columns[j])?)))
                .unzip();
            let r = if i == j {
                match pearson(&x, &y) {
                    Correlation::Value(_) => Correlation::Value(1.0),
                    nv => nv,
                }
            } else {
                pearson(&x, &y)
            };
            matrix[i][j] = r;
            matrix[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        names: columns.iter().map(|c| c.to_string()).collect(),
        matrix,
    })
}

/// Signed total relevance per modality.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModalityInfluence {
    pub language: f64,
    pub vision: f64,
}

pub fn modality_influence(attrib: &ModalAttribution) -> ModalityInfluence {
    ModalityInfluence {
        language: attrib.language.total(),
        vision: attrib.vision.total(),
    }
}

/// Name of the group collecting ids no named group covers.
pub const OTHER_GROUP: &str = "other";

/// Signed relevance per named group of feature ids, plus an `other` group
/// for uncovered ids. Groups must not overlap.
pub fn input_group_influence(
    attrib: &AttributionVector,
    groups: &[(String, Vec<usize>)],
) -> Result<BTreeMap<String, f64>> {
    let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
    let mut names = HashSet::new();
    for (g, (name, ids)) in groups.iter().enumerate() {
        if name == OTHER_GROUP || !names.insert(name.as_str()) {
            return Err(Error::invalid(format!(
                "duplicate or reserved group name {name:?}"
            )));
        }
        for &id in ids {
            if let Some(prev) = owner.insert(id, g) {
                if prev != g {
                    return Err(Error::invalid(format!(
                        "feature {id} belongs to both {:?} and {name:?}",
                        groups[prev].0
                    )));
                }
            }
        }
    }
    let mut totals = vec![0.0; groups.len()];
    let mut other = 0.0;
    for (id, v) in attrib.feature_ids.iter().zip(&attrib.values) {
        match owner.get(id) {
            Some(&g) => totals[g] += v,
            None => other += v,
        }
    }
    let mut out: BTreeMap<String, f64> = groups.iter().map(|(n, _)| n.clone()).zip(totals).collect();
    out.insert(OTHER_GROUP.to_string(), other);
    Ok(out)
}
