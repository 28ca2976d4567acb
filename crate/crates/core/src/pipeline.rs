//! Dataset runs: attribute, score and analyze, sharded over oracle sessions.
//!
//! Work is split into contiguous shards of the id-sorted example list, one
//! oracle session per shard. Every per-example result depends only on the
//! example and the oracle, so outputs are identical for any `jobs` value.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    histogram, input_group_influence, modality_influence, pearson_matrix, CorrelationMatrix, Histogram,
    ModalityInfluence, DEFAULT_BUCKETS,
};
use crate::attribution::{attribute_answer, attribute_explanation, IgConfig, ModalAttribution};
use crate::error::{Error, Result};
use crate::faithfulness::{attribution_similarity, nle_comprehensiveness, nle_sufficiency, AopcConfig};
use crate::io::{self, AttributionRecord, AttributionRunConfig, AttributionTarget};
use crate::oracle::{LinearOracle, Oracle, OracleInfo, RemoteOracle, ToyOracle};
use crate::toydiff::{
    Ablation, Activation, LinearModel, ToyConfig, ToyDims, ToyVLModel, LINEAR_WEIGHT_FORMAT, WEIGHT_FORMAT,
};
use crate::types::{AttributionPair, AttributionVector, MetricRow, Modality, TaskExample};

pub const ATTRIBUTIONS_FILE: &str = "attributions.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "analysis.json";
pub const ERRORS_FILE: &str = "errors.log";

/// Where predictions and gradients come from.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleSpec {
    /// `builtin:toy(seed=..,ablation=..,activation=..,vocab=..,embed_dim=..,vis_dim=..,classes=..,max_len=..)`
    Toy {
        seed: Option<u64>,
        dims: ToyDims,
        ablation: Ablation,
        activation: Activation,
    },
    /// `builtin:linear(seed=..,vocab=..,embed_dim=..,vis_dim=..,classes=..)`
    Linear {
        seed: Option<u64>,
        vocab: usize,
        embed_dim: usize,
        vis_dim: usize,
        classes: usize,
    },
    /// `builtin:load(PATH)`: a saved toy or linear weight file.
    Load(PathBuf),
    /// `tcp://HOST:PORT`
    Tcp(String),
    /// Anything else: a shell command speaking the protocol on stdio.
    Command(String),
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec::Toy {
            seed: None,
            dims: ToyDims::default(),
            ablation: Ablation::default(),
            activation: Activation::default(),
        }
    }
}

fn parse_args(body: &str) -> Result<Vec<(String, String)>> {
    body.split(',')
        .map(str::trim)
        .filter(|kv| !kv.is_empty())
        .map(|kv| {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected key=value, found {kv:?}")))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::invalid(format!("invalid value {v:?} for {key}")))
}

impl FromStr for OracleSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::invalid("oracle spec is empty"));
        }
        if let Some(addr) = s.strip_prefix("tcp://") {
            return Ok(OracleSpec::Tcp(addr.to_string()));
        }
        let Some(rest) = s.strip_prefix("builtin:") else {
            return Ok(OracleSpec::Command(s.to_string()));
        };
        let (kind, body) = match rest.split_once('(') {
            Some((kind, body)) => {
                let body = body
                    .strip_suffix(')')
                    .ok_or_else(|| Error::invalid(format!("unbalanced parentheses in {s:?}")))?;
                (kind, body)
            }
            None => (rest, ""),
        };
        match kind {
            "toy" => {
                let mut spec = OracleSpec::default();
                let OracleSpec::Toy {
                    seed,
                    dims,
                    ablation,
                    activation,
                } = &mut spec
                else {
                    unreachable!()
                };
                for (k, v) in parse_args(body)? {
                    match k.as_str() {
                        "seed" => *seed = Some(parse_num(&k, &v)?),
                        "ablation" => *ablation = v.parse()?,
                        "activation" => {
                            *activation = match v.as_str() {
                                "tanh" => Activation::Tanh,
                                "identity" => Activation::Identity,
                                _ => return Err(Error::invalid(format!("unknown activation {v:?}"))),
                            }
                        }
                        "vocab" => dims.vocab = parse_num(&k, &v)?,
                        "embed_dim" => dims.embed_dim = parse_num(&k, &v)?,
                        "vis_dim" => dims.vis_dim = parse_num(&k, &v)?,
                        "classes" => dims.classes = parse_num(&k, &v)?,
                        "max_len" => dims.max_len = parse_num(&k, &v)?,
                        _ => return Err(Error::invalid(format!("unknown toy oracle option {k:?}"))),
                    }
                }
                dims.validate()?;
                Ok(spec)
            }
            "linear" => {
                let d = ToyDims::default();
                let (mut seed, mut vocab, mut embed_dim, mut vis_dim, mut classes) =
                    (None, d.vocab, d.embed_dim, d.vis_dim, d.classes);
                for (k, v) in parse_args(body)? {
                    match k.as_str() {
                        "seed" => seed = Some(parse_num(&k, &v)?),
                        "vocab" => vocab = parse_num(&k, &v)?,
                        "embed_dim" => embed_dim = parse_num(&k, &v)?,
                        "vis_dim" => vis_dim = parse_num(&k, &v)?,
                        "classes" => classes = parse_num(&k, &v)?,
                        _ => return Err(Error::invalid(format!("unknown linear oracle option {k:?}"))),
                    }
                }
                Ok(OracleSpec::Linear {
                    seed,
                    vocab,
                    embed_dim,
                    vis_dim,
                    classes,
                })
            }
            "load" if !body.is_empty() => Ok(OracleSpec::Load(PathBuf::from(body))),
            _ => Err(Error::invalid(format!("unknown builtin oracle {s:?}"))),
        }
    }
}

impl fmt::Display for OracleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let seed = |s: &Option<u64>| s.map(|s| format!("seed={s},")).unwrap_or_default();
        match self {
            OracleSpec::Toy {
                seed: s,
                dims,
                ablation,
                activation,
            } => write!(
                f,
                "builtin:toy({}ablation={},activation={},vocab={},embed_dim={},vis_dim={},classes={},max_len={})",
                seed(s),
                ablation.name(),
                match activation {
                    Activation::Tanh => "tanh",
                    Activation::Identity => "identity",
                },
                dims.vocab,
                dims.embed_dim,
                dims.vis_dim,
                dims.classes,
                dims.max_len
            ),
            OracleSpec::Linear {
                seed: s,
                vocab,
                embed_dim,
                vis_dim,
                classes,
            } => write!(
                f,
                "builtin:linear({}vocab={vocab},embed_dim={embed_dim},vis_dim={vis_dim},classes={classes})",
                seed(s)
            ),
            OracleSpec::Load(p) => write!(f, "builtin:load({})", p.display()),
            OracleSpec::Tcp(a) => write!(f, "tcp://{a}"),
            OracleSpec::Command(c) => f.write_str(c),
        }
    }
}

/// An in-process model, as built from a builtin spec.
#[derive(Debug, Clone)]
pub enum BuiltinModel {
    Toy(Box<ToyVLModel>),
    Linear(LinearModel),
}

impl BuiltinModel {
    pub fn oracle(self) -> Box<dyn Oracle + Send> {
        match self {
            BuiltinModel::Toy(m) => Box::new(ToyOracle::new(*m)),
            BuiltinModel::Linear(m) => Box::new(LinearOracle::new(m)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            BuiltinModel::Toy(m) => m.save(path),
            BuiltinModel::Linear(m) => m.save(path),
        }
    }

    /// Loads a weight file of either format.
    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
        }
        let text = fs::read_to_string(path)?;
        let header: Header =
            serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        match header.format.as_str() {
            WEIGHT_FORMAT => Ok(BuiltinModel::Toy(Box::new(ToyVLModel::load(path)?))),
            LINEAR_WEIGHT_FORMAT => Ok(BuiltinModel::Linear(LinearModel::load(path)?)),
            other => Err(Error::invalid(format!(
                "{}: unknown weight format {other:?}",
                path.display()
            ))),
        }
    }
}

impl OracleSpec {
    /// The spec with an unset seed replaced by `seed`.
    pub fn with_default_seed(mut self, seed: u64) -> Self {
        match &mut self {
            OracleSpec::Toy { seed: s, .. } | OracleSpec::Linear { seed: s, .. } => {
                s.get_or_insert(seed);
            }
            _ => {}
        }
        self
    }

    /// Builds the in-process model; `None` for external oracles.
    pub fn builtin(&self) -> Result<Option<BuiltinModel>> {
        Ok(Some(match self {
            OracleSpec::Toy {
                seed,
                dims,
                ablation,
                activation,
            } => {
                let mut config = ToyConfig::new(seed.unwrap_or(0), *dims);
                config.ablation = *ablation;
                config.activation = *activation;
                BuiltinModel::Toy(Box::new(ToyVLModel::random(config)?))
            }
            OracleSpec::Linear {
                seed,
                vocab,
                embed_dim,
                vis_dim,
                classes,
            } => BuiltinModel::Linear(LinearModel::random(
                seed.unwrap_or(0),
                *vocab,
                *embed_dim,
                *vis_dim,
                *classes,
            )?),
            OracleSpec::Load(path) => BuiltinModel::load(path)?,
            OracleSpec::Tcp(_) | OracleSpec::Command(_) => return Ok(None),
        }))
    }

    /// Opens one session.
    pub fn open(&self, timeout: Duration) -> Result<Box<dyn Oracle + Send>> {
        match self {
            OracleSpec::Tcp(addr) => Ok(Box::new(RemoteOracle::connect(addr, timeout)?)),
            OracleSpec::Command(cmd) => Ok(Box::new(RemoteOracle::spawn(cmd, timeout)?)),
            _ => Ok(self.builtin()?.expect("builtin spec").oracle()),
        }
    }
}

/// Everything a run depends on.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub examples: PathBuf,
    pub oracle: OracleSpec,
    pub ig: IgConfig,
    pub aopc: AopcConfig,
    pub out: PathBuf,
    pub jobs: usize,
    pub seed: u64,
    pub timeout: Duration,
}

impl RunConfig {
    pub fn new(examples: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            examples: examples.into(),
            oracle: OracleSpec::default(),
            ig: IgConfig::default(),
            aopc: AopcConfig::default(),
            out: out.into(),
            jobs: default_jobs(),
            seed: 0,
            timeout: crate::oracle::DEFAULT_TIMEOUT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ig.validate()?;
        self.aopc.validate()?;
        if self.jobs == 0 {
            return Err(Error::invalid("jobs must be at least 1"));
        }
        if self.timeout.is_zero() {
            return Err(Error::invalid("oracle timeout must be positive"));
        }
        Ok(())
    }

    fn oracle_spec(&self) -> OracleSpec {
        self.oracle.clone().with_default_seed(self.seed)
    }

    /// The serializable echo written into every sidecar. `jobs` is left out
    /// because it cannot change any output.
    pub fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            examples: self.examples.display().to_string(),
            oracle: self.oracle_spec().to_string(),
            m: self.ig.steps,
            baseline: self.ig.baseline.name().to_string(),
            vision_granularity: self.ig.vision,
            bins: self.aopc.bins.clone(),
            ranking_mode: self.aopc.ranking,
            seed: self.seed,
            timeout_secs: self.timeout.as_secs_f64(),
        }
    }
}

pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub examples: String,
    pub oracle: String,
    pub m: usize,
    pub baseline: String,
    pub vision_granularity: crate::attribution::VisionGranularity,
    pub bins: Vec<f64>,
    pub ranking_mode: crate::faithfulness::RankingMode,
    pub seed: u64,
    pub timeout_secs: f64,
}

/// Loads examples and sorts them by id.
pub fn load_sorted_examples(path: &Path) -> Result<Vec<TaskExample>> {
    let mut examples = io::load_examples(path)?;
    examples.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(examples)
}

/// Runs `work` on every example, `jobs` oracle sessions in parallel, and
/// returns the results in input order.
pub fn run_sharded<T, F>(
    examples: &[TaskExample],
    spec: &OracleSpec,
    timeout: Duration,
    jobs: usize,
    work: F,
) -> Result<Vec<Result<T>>>
where
    T: Send,
    F: Fn(&mut dyn Oracle, &OracleInfo, &TaskExample) -> Result<T> + Sync,
{
    if examples.is_empty() {
        return Ok(Vec::new());
    }
    let jobs = jobs.clamp(1, examples.len());
    let chunk = examples.len().div_ceil(jobs);
    let shards: Vec<Result<Vec<Result<T>>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = examples
            .chunks(chunk)
            .map(|shard| {
                let work = &work;
                scope.spawn(move || -> Result<Vec<Result<T>>> {
                    let mut oracle = spec.open(timeout)?;
                    let info = oracle.info()?;
                    info.validate()?;
                    Ok(shard
                        .iter()
                        .map(|e| {
                            e.validate(Some(info.classes), Some(info.vis_dims[1]))?;
                            work(&mut *oracle, &info, e)
                        })
                        .collect())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(examples.len());
    for shard in shards {
        out.extend(shard?);
    }
    Ok(out)
}

/// Attributions of one example for both targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleAttribution {
    pub id: String,
    /// Class predicted on the unperturbed input.
    pub class: usize,
    pub explanation_tokens: Vec<usize>,
    pub answer: ModalAttribution,
    pub explanation: ModalAttribution,
}

pub fn predicted_class<O: Oracle + ?Sized>(
    oracle: &mut O,
    info: &OracleInfo,
    example: &TaskExample,
) -> Result<usize> {
    Ok(oracle.predict(&info.embed(example)?)?.argmax())
}

/// Predicts, decodes the explanation if the data carries none, and
/// attributes both targets.
pub fn attribute_example<O: Oracle + ?Sized>(
    oracle: &mut O,
    info: &OracleInfo,
    example: &TaskExample,
    config: &IgConfig,
) -> Result<ExampleAttribution> {
    let input = info.embed(example)?;
    let class = oracle.predict(&input)?.argmax();
    let explanation_tokens = if example.explanation_tokens.is_empty() {
        oracle.decode(&input, class)?
    } else {
        example.explanation_tokens.clone()
    };
    let answer = attribute_answer(oracle, info, example, class, config)?;
    let explanation = attribute_explanation(oracle, info, example, class, &explanation_tokens, config)?;
    Ok(ExampleAttribution {
        id: example.id.clone(),
        class,
        explanation_tokens,
        answer,
        explanation,
    })
}

/// Fills empty `explanation_tokens` with the oracle's greedy explanation of
/// its own prediction. Returns how many examples were filled; oracles that
/// cannot generate leave the examples untouched.
pub fn fill_explanations<O: Oracle + ?Sized>(
    oracle: &mut O,
    info: &OracleInfo,
    examples: &mut [TaskExample],
) -> Result<usize> {
    let mut filled = 0;
    for e in examples.iter_mut().filter(|e| e.explanation_tokens.is_empty()) {
        let input = info.embed(e)?;
        let class = oracle.predict(&input)?.argmax();
        match oracle.decode(&input, class) {
            Ok(tokens) => {
                e.explanation_tokens = tokens;
                filled += 1;
            }
            Err(Error::Oracle(msg)) => {
                warn!("explanations not generated: {msg}");
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Attribution file lines for one example: answer then explanation,
/// language then vision (vision only when the example has regions).
pub fn attribution_records(
    example: &TaskExample,
    a: &ExampleAttribution,
    config: &IgConfig,
) -> Vec<AttributionRecord> {
    let run = AttributionRunConfig {
        m: config.steps,
        baseline: config.baseline.name().to_string(),
    };
    let mut out = Vec::new();
    for (target, attrib) in [
        (AttributionTarget::Answer, &a.answer),
        (AttributionTarget::Explanation, &a.explanation),
    ] {
        let mut modalities = vec![Modality::Language];
        if example.has_vision() {
            modalities.push(Modality::Vision);
        }
        for m in modalities {
            let v = attrib.get(m);
            out.push(AttributionRecord {
                id: a.id.clone(),
                modality: m,
                feature_ids: v.feature_ids.clone(),
                values: v.values.clone(),
                target,
                config: run.clone(),
            });
        }
    }
    out
}

/// Rebuilds answer and explanation attributions per example id.
pub fn group_records(
    records: &[AttributionRecord],
) -> Result<BTreeMap<String, (ModalAttribution, ModalAttribution)>> {
    let mut parts: BTreeMap<String, HashMap<(AttributionTarget, Modality), AttributionVector>> =
        BTreeMap::new();
    for r in records {
        parts
            .entry(r.id.clone())
            .or_default()
            .insert((r.target, r.modality), r.vector()?);
    }
    let mut out = BTreeMap::new();
    for (id, mut p) in parts {
        let mut take = |t: AttributionTarget| -> Result<ModalAttribution> {
            let language = p
                .remove(&(t, Modality::Language))
                .ok_or_else(|| Error::invalid(format!("example {id:?} has no {t:?} language attribution")))?;
            let vision = p
                .remove(&(t, Modality::Vision))
                .unwrap_or_else(|| AttributionVector::empty(Modality::Vision));
            Ok(ModalAttribution { language, vision })
        };
        let answer = take(AttributionTarget::Answer)?;
        let explanation = take(AttributionTarget::Explanation)?;
        out.insert(id, (answer, explanation));
    }
    Ok(out)
}

/// Whether vision metrics apply: the example has regions and the
/// explanation can depend on them.
pub fn vision_applies(info: &OracleInfo, example: &TaskExample) -> bool {
    example.has_vision() && info.explainer_sees_vision
}

/// Metrics of one example from its attributions.
pub fn score_example<O: Oracle + ?Sized>(
    oracle: &mut O,
    info: &OracleInfo,
    example: &TaskExample,
    answer: &ModalAttribution,
    explanation: &ModalAttribution,
    config: &AopcConfig,
) -> Result<ScoredExample> {
    let class = predicted_class(oracle, info, example)?;
    let language = AttributionPair::new(answer.language.clone(), explanation.language.clone())?;
    let vision = if vision_applies(info, example) {
        Some(AttributionPair::new(
            answer.vision.clone(),
            explanation.vision.clone(),
        )?)
    } else {
        None
    };
    let sf = attribution_similarity(&language, vision.as_ref())?;
    let suff_nlp = nle_sufficiency(oracle, info, example, &explanation.language, config, class)?;
    let comp_nlp = nle_comprehensiveness(oracle, info, example, &explanation.language, config, class)?;
    let (suff_img, comp_img) = if vision.is_some() {
        (
            Some(nle_sufficiency(
                oracle,
                info,
                example,
                &explanation.vision,
                config,
                class,
            )?),
            Some(nle_comprehensiveness(
                oracle,
                info,
                example,
                &explanation.vision,
                config,
                class,
            )?),
        )
    } else {
        (None, None)
    };
    Ok(ScoredExample {
        row: MetricRow {
            example_id: example.id.clone(),
            sf_nlp: sf.language.score,
            sf_img: sf.vision.map(|v| v.score),
            sf_overall: sf.overall,
            suff_nlp,
            comp_nlp,
            suff_img,
            comp_img,
        },
        zero_norm: sf.any_zero_norm(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredExample {
    pub row: MetricRow,
    /// Some modality had a zero-norm attribution vector.
    pub zero_norm: bool,
}

fn write_errors(out: &Path, failures: &[(String, String)]) -> Result<()> {
    let path = out.join(ERRORS_FILE);
    if failures.is_empty() {
        if path.exists() {
            fs::remove_file(path)?;
        }
        return Ok(());
    }
    let mut text = String::new();
    for (id, msg) in failures {
        warn!("example {id}: {msg}");
        text.push_str(&format!("{id}\t{msg}\n"));
    }
    fs::write(path, text)?;
    Ok(())
}

/// `(example id, message)` of one failed example.
type Failure = (String, String);

fn split_results<T>(examples: &[TaskExample], results: Vec<Result<T>>) -> (Vec<(usize, T)>, Vec<Failure>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push((i, v)),
            Err(e) => failed.push((examples[i].id.clone(), e.to_string())),
        }
    }
    (ok, failed)
}

fn finish(out: &Path, failures: Vec<(String, String)>) -> Result<()> {
    write_errors(out, &failures)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Examples(failures))
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    fs::write(path, json + "\n")?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct AttributionSidecar<'a> {
    config: &'a ConfigEcho,
    examples: usize,
    records: usize,
    failed: Vec<&'a str>,
}

/// Writes `attributions.jsonl` (and its sidecar) into the output directory.
/// Returns the number of records written.
pub fn cmd_attribute(config: &RunConfig) -> Result<usize> {
    config.validate()?;
    let examples = load_sorted_examples(&config.examples)?;
    fs::create_dir_all(&config.out)?;
    let spec = config.oracle_spec();
    info!("attributing {} examples with {spec}", examples.len());
    let results = run_sharded(
        &examples,
        &spec,
        config.timeout,
        config.jobs,
        |oracle, info, e| attribute_example(oracle, info, e, &config.ig),
    )?;
    let (ok, failed) = split_results(&examples, results);
    let records: Vec<AttributionRecord> = ok
        .iter()
        .flat_map(|(i, a)| attribution_records(&examples[*i], a, &config.ig))
        .collect();
    let path = config.out.join(ATTRIBUTIONS_FILE);
    io::write_attributions(&records, &path)?;
    let echo = config.echo();
    write_json(
        &AttributionSidecar {
            config: &echo,
            examples: ok.len(),
            records: records.len(),
            failed: failed.iter().map(|(id, _)| id.as_str()).collect(),
        },
        &io::sidecar_path(&path),
    )?;
    finish(&config.out, failed)?;
    Ok(records.len())
}

/// Mean and population standard deviation of one metric column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub n: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

pub fn column_stats(rows: &[MetricRow]) -> BTreeMap<String, ColumnStats> {
    MetricRow::COLUMNS
        .iter()
        .map(|c| {
            let v: Vec<f64> = rows.iter().filter_map(|r| r.column(c)).collect();
            let stats = if v.is_empty() {
                ColumnStats {
                    n: 0,
                    mean: None,
                    std: None,
                }
            } else {
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
                ColumnStats {
                    n: v.len(),
                    mean: Some(mean),
                    std: Some(var.sqrt()),
                }
            };
            (c.to_string(), stats)
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct MetricsSidecar<'a> {
    config: &'a ConfigEcho,
    attributions: Option<String>,
    aggregate: BTreeMap<String, ColumnStats>,
    zero_norm: Vec<&'a str>,
    failed: Vec<&'a str>,
}

/// Writes `metrics.csv` and its sidecar. Attributions come from
/// `attributions` when given and are computed inline otherwise.
pub fn cmd_score(config: &RunConfig, attributions: Option<&Path>) -> Result<Vec<MetricRow>> {
    config.validate()?;
    let examples = load_sorted_examples(&config.examples)?;
    let loaded = match attributions {
        Some(p) => {
            let records = io::load_attributions(p)?;
            if let Some(r) = records
                .iter()
                .find(|r| r.config.m != config.ig.steps || r.config.baseline != config.ig.baseline.name())
            {
                warn!(
                    "attributions were computed with m={} baseline={}, run config says m={} baseline={}",
                    r.config.m,
                    r.config.baseline,
                    config.ig.steps,
                    config.ig.baseline.name()
                );
            }
            Some(group_records(&records)?)
        }
        None => None,
    };
    fs::create_dir_all(&config.out)?;
    let spec = config.oracle_spec();
    info!("scoring {} examples with {spec}", examples.len());
    let results = run_sharded(
        &examples,
        &spec,
        config.timeout,
        config.jobs,
        |oracle, info, e| {
            let (answer, explanation) = match &loaded {
                Some(map) => map
                    .get(&e.id)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("no attributions for example {:?}", e.id)))?,
                None => {
                    let a = attribute_example(oracle, info, e, &config.ig)?;
                    (a.answer, a.explanation)
                }
            };
            score_example(oracle, info, e, &answer, &explanation, &config.aopc)
        },
    )?;
    let (ok, failed) = split_results(&examples, results);
    let rows: Vec<MetricRow> = ok.iter().map(|(_, s)| s.row.clone()).collect();
    let echo = config.echo();
    let sidecar = MetricsSidecar {
        config: &echo,
        attributions: attributions.map(|p| p.display().to_string()),
        aggregate: column_stats(&rows),
        zero_norm: ok
            .iter()
            .filter(|(_, s)| s.zero_norm)
            .map(|(_, s)| s.row.example_id.as_str())
            .collect(),
        failed: failed.iter().map(|(id, _)| id.as_str()).collect(),
    };
    io::write_metrics(&rows, &sidecar, &config.out.join(METRICS_FILE))?;
    finish(&config.out, failed)?;
    Ok(rows)
}

/// Histogram range of a metric column: similarity scores live in `[0, 1]`,
/// probability differences in `[-1, 1]`.
pub fn metric_range(column: &str) -> (f64, f64) {
    if column.starts_with("sf_") {
        (0.0, 1.0)
    } else {
        (-1.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleInfluence {
    pub id: String,
    pub answer: ModalityInfluence,
    pub explanation: ModalityInfluence,
    /// Explanation language relevance per named word group.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub groups: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceSummary {
    pub answer: ModalityInfluence,
    pub explanation: ModalityInfluence,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub groups: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InfluenceReport {
    /// Sorted by example id.
    pub per_example: Vec<ExampleInfluence>,
    /// Means over `per_example`; absent when it is empty.
    pub aggregate: Option<InfluenceSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub rows: usize,
    pub histograms: BTreeMap<String, Histogram>,
    /// Absent with fewer than two rows.
    pub correlation: Option<CorrelationMatrix>,
    pub influence: InfluenceReport,
}

/// Word-id groups for the explanation language attribution.
pub type WordGroups = Vec<(String, Vec<usize>)>;

pub fn load_groups(path: &Path) -> Result<WordGroups> {
    let text = fs::read_to_string(path)?;
    let map: BTreeMap<String, Vec<usize>> =
        serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    Ok(map.into_iter().collect())
}

fn mean_influence<'a>(items: impl Iterator<Item = &'a ModalityInfluence>, n: f64) -> ModalityInfluence {
    let mut acc = ModalityInfluence::default();
    for m in items {
        acc.language += m.language;
        acc.vision += m.vision;
    }
    ModalityInfluence {
        language: acc.language / n,
        vision: acc.vision / n,
    }
}

pub fn influence_report(
    attributions: &BTreeMap<String, (ModalAttribution, ModalAttribution)>,
    groups: &WordGroups,
) -> Result<InfluenceReport> {
    let mut per_example = Vec::with_capacity(attributions.len());
    for (id, (answer, explanation)) in attributions {
        let groups = if groups.is_empty() {
            BTreeMap::new()
        } else {
            input_group_influence(&explanation.language, groups)?
        };
        per_example.push(ExampleInfluence {
            id: id.clone(),
            answer: modality_influence(answer),
            explanation: modality_influence(explanation),
            groups,
        });
    }
    let aggregate = if per_example.is_empty() {
        None
    } else {
        let n = per_example.len() as f64;
        let mut g: BTreeMap<String, f64> = BTreeMap::new();
        for e in &per_example {
            for (k, v) in &e.groups {
                *g.entry(k.clone()).or_default() += v;
            }
        }
        g.values_mut().for_each(|v| *v /= n);
        Some(InfluenceSummary {
            answer: mean_influence(per_example.iter().map(|e| &e.answer), n),
            explanation: mean_influence(per_example.iter().map(|e| &e.explanation), n),
            groups: g,
        })
    };
    Ok(InfluenceReport {
        per_example,
        aggregate,
    })
}

pub fn analyze(
    rows: &[MetricRow],
    attributions: Option<&BTreeMap<String, (ModalAttribution, ModalAttribution)>>,
    groups: &WordGroups,
) -> Result<AnalysisReport> {
    let mut histograms = BTreeMap::new();
    for c in MetricRow::COLUMNS {
        let values: Vec<f64> = rows.iter().filter_map(|r| r.column(c)).collect();
        let (lo, hi) = metric_range(c);
        histograms.insert(c.to_string(), histogram(&values, DEFAULT_BUCKETS, lo, hi)?);
    }
    let correlation = if rows.len() >= 2 {
        Some(pearson_matrix(rows, &MetricRow::COLUMNS)?)
    } else {
        warn!("fewer than two metric rows; correlation matrix omitted");
        None
    };
    let influence = match attributions {
        Some(a) => influence_report(a, groups)?,
        None => InfluenceReport::default(),
    };
    Ok(AnalysisReport {
        rows: rows.len(),
        histograms,
        correlation,
        influence,
    })
}

fn csv_real(v: f64) -> String {
    io::format_real(v)
}

/// CSV renderings of the report: `(file name, contents)`.
pub fn report_tables(report: &AnalysisReport) -> Vec<(&'static str, String)> {
    let mut hist = String::from("metric,bucket,lo,hi,count,frequency\n");
    for (name, h) in &report.histograms {
        for (b, (&count, freq)) in h.counts.iter().zip(h.frequencies()).enumerate() {
            hist.push_str(&format!(
                "{name},{b},{},{},{count},{}\n",
                csv_real(h.edges[b]),
                csv_real(h.edges[b + 1]),
                csv_real(freq)
            ));
        }
    }
    let mut corr = String::new();
    if let Some(c) = &report.correlation {
        corr.push_str("metric");
        for n in &c.names {
            corr.push(',');
            corr.push_str(n);
        }
        corr.push('\n');
        for (n, row) in c.names.iter().zip(&c.matrix) {
            corr.push_str(n);
            for v in row {
                corr.push(',');
                match v.value() {
                    Some(v) => corr.push_str(&csv_real(v)),
                    None => corr.push_str("no_variance"),
                }
            }
            corr.push('\n');
        }
    }
    let mut infl = String::from("id,answer_language,answer_vision,explanation_language,explanation_vision\n");
    for e in &report.influence.per_example {
        infl.push_str(&format!(
            "{},{},{},{},{}\n",
            e.id,
            csv_real(e.answer.language),
            csv_real(e.answer.vision),
            csv_real(e.explanation.language),
            csv_real(e.explanation.vision)
        ));
    }
    vec![
        ("histograms.csv", hist),
        ("correlation.csv", corr),
        ("influence.csv", infl),
    ]
}

/// Reads metrics (and optionally attributions and word groups) and writes
/// `analysis.json` plus its CSV tables into `out`.
pub fn cmd_analyze(
    metrics: &Path,
    attributions: Option<&Path>,
    groups: Option<&Path>,
    out: &Path,
) -> Result<AnalysisReport> {
    let rows = io::read_metrics(metrics)?;
    let attrib = match attributions {
        Some(p) => Some(group_records(&io::load_attributions(p)?)?),
        None => None,
    };
    let groups = match groups {
        Some(p) => load_groups(p)?,
        None => Vec::new(),
    };
    let report = analyze(&rows, attrib.as_ref(), &groups)?;
    fs::create_dir_all(out)?;
    write_json(&report, &out.join(REPORT_FILE))?;
    for (name, text) in report_tables(&report) {
        fs::write(out.join(name), text)?;
    }
    Ok(report)
}
