use std::io::{BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use faitheval::attribution::{BaselinePolicy, IgConfig, VisionGranularity, DEFAULT_STEPS};
use faitheval::faithfulness::{AopcConfig, RankingMode, DEFAULT_BINS};
use faitheval::pipeline::{self, OracleSpec, RunConfig, METRICS_FILE};
use faitheval::selftest::{self, Fault};
use faitheval::synth::{synth_examples, SynthConfig};
use faitheval::Error;

/// Faithfulness metrics for natural-language explanations.
#[derive(Debug, Parser)]
#[command(name = "faitheval", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write seeded synthetic examples to OUT/examples.jsonl.
    Synth(SynthArgs),
    /// Compute answer and explanation attributions.
    Attribute(RunArgs),
    /// Compute per-example metrics.
    Score {
        #[command(flatten)]
        run: RunArgs,
        /// Precomputed attribution file; computed inline when absent.
        #[arg(long)]
        attributions: Option<PathBuf>,
    },
    /// Histograms, correlations and influence from a metrics file.
    Analyze(AnalyzeArgs),
    /// Attribute, score and analyze in one go.
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// JSON object mapping group names to explanation word ids.
        #[arg(long)]
        groups: Option<PathBuf>,
    },
    /// Run the built-in property checks.
    Selftest {
        #[arg(long, hide = true, env = "FAITHEVAL_SELFTEST_FAULT")]
        inject_fault: Option<String>,
    },
    /// Serve a builtin model over the oracle protocol (stdio or TCP).
    ServeOracle {
        #[arg(long, default_value = "builtin:toy")]
        oracle: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Listen on this address instead of stdio.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Write a builtin model's weight file.
    ExportModel {
        #[arg(long, default_value = "builtin:toy")]
        oracle: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Regions per example (0 for text-only).
    #[arg(long, default_value_t = 4)]
    regions: usize,
    /// Oracle whose vocabulary, feature width and classes the data targets.
    #[arg(long, default_value = "builtin:toy")]
    oracle: String,
    /// Store the oracle's own greedy explanations in the examples.
    #[arg(long)]
    with_explanations: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    examples: PathBuf,
    /// Shell command, `tcp://HOST:PORT`, or `builtin:toy(...)` / `builtin:linear(...)` / `builtin:load(PATH)`.
    #[arg(long, default_value = "builtin:toy")]
    oracle: String,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    /// Comma-separated top-k fractions.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BINS.to_vec())]
    bins: Vec<f64>,
    #[arg(long, default_value = "signed")]
    ranking: String,
    /// `pad` (PAD text, zero vision) or `zero`.
    #[arg(long, default_value = "pad")]
    baseline: String,
    /// `region` or `feature`.
    #[arg(long, default_value = "region")]
    vision_granularity: String,
    #[arg(long)]
    out: PathBuf,
    /// Parallel oracle sessions; defaults to the logical core count.
    #[arg(long)]
    jobs: Option<usize>,
    /// Seed for builtin oracles that do not set one.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-request oracle timeout in seconds.
    #[arg(long, default_value_t = 30.0)]
    timeout: f64,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    out: PathBuf,
    /// Defaults to OUT/metrics.csv.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    attributions: Option<PathBuf>,
    /// JSON object mapping group names to explanation word ids.
    #[arg(long)]
    groups: Option<PathBuf>,
}

/// A failure that maps to exit code 1 rather than 2.
#[derive(Debug)]
struct PropertyFailure(String);

impl std::fmt::Display for PropertyFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for PropertyFailure {}

impl RunArgs {
    fn config(&self) -> anyhow::Result<RunConfig> {
        let oracle: OracleSpec = self.oracle.parse()?;
        let baseline = match self.baseline.as_str() {
            "pad" => BaselinePolicy::PadTextZeroVision,
            "zero" => BaselinePolicy::AllZero,
            other => bail!("unknown baseline {other:?} (expected pad or zero)"),
        };
        let vision = match self.vision_granularity.as_str() {
            "region" => VisionGranularity::Region,
            "feature" => VisionGranularity::Feature,
            other => bail!("unknown vision granularity {other:?} (expected region or feature)"),
        };
        let ranking: RankingMode = self.ranking.parse()?;
        if !(self.timeout.is_finite() && self.timeout > 0.0) {
            bail!("timeout must be a positive number of seconds");
        }
        let config = RunConfig {
            examples: self.examples.clone(),
            oracle,
            ig: IgConfig {
                steps: self.steps,
                baseline,
                vision,
            },
            aopc: AopcConfig {
                bins: self.bins.clone(),
                ranking,
                vision,
            },
            out: self.out.clone(),
            jobs: self.jobs.unwrap_or_else(pipeline::default_jobs),
            seed: self.seed,
            timeout: Duration::from_secs_f64(self.timeout),
        };
        config.validate()?;
        if !config.examples.is_file() {
            bail!("examples file {} does not exist", config.examples.display());
        }
        Ok(config)
    }
}

fn builtin(spec: &str, seed: u64) -> anyhow::Result<pipeline::BuiltinModel> {
    let spec: OracleSpec = spec.parse()?;
    spec.clone()
        .with_default_seed(seed)
        .builtin()?
        .with_context(|| format!("{spec} is not a builtin oracle"))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let spec: OracleSpec = a.oracle.parse()?;
            let mut oracle = spec
                .with_default_seed(a.seed)
                .open(faitheval::oracle::DEFAULT_TIMEOUT)?;
            let oinfo = oracle.info()?;
            let config = SynthConfig {
                count: a.count,
                seed: a.seed,
                vocab: oinfo.vocab,
                vis_dim: oinfo.vis_dims[1],
                classes: oinfo.classes,
                regions: if oinfo.vis_dims[0] > 0 {
                    oinfo.vis_dims[0]
                } else {
                    a.regions
                },
                min_words: 3,
                max_words: 7,
            };
            let mut examples = synth_examples(&config)?;
            if a.with_explanations {
                pipeline::fill_explanations(&mut *oracle, &oinfo, &mut examples)?;
            }
            std::fs::create_dir_all(&a.out)?;
            let path = a.out.join("examples.jsonl");
            faitheval::io::write_examples(&examples, &path)?;
            println!("{}", path.display());
        }
        Command::Attribute(a) => {
            let n = pipeline::cmd_attribute(&a.config()?)?;
            info!("wrote {n} attribution records");
        }
        Command::Score { run, attributions } => {
            let rows = pipeline::cmd_score(&run.config()?, attributions.as_deref())?;
            info!("wrote {} metric rows", rows.len());
        }
        Command::Analyze(a) => {
            let metrics = a.metrics.unwrap_or_else(|| a.out.join(METRICS_FILE));
            require_file(&metrics)?;
            pipeline::cmd_analyze(&metrics, a.attributions.as_deref(), a.groups.as_deref(), &a.out)?;
        }
        Command::Run { run, groups } => {
            let config = run.config()?;
            pipeline::cmd_attribute(&config)?;
            let attributions = config.out.join(pipeline::ATTRIBUTIONS_FILE);
            pipeline::cmd_score(&config, Some(&attributions))?;
            pipeline::cmd_analyze(
                &config.out.join(METRICS_FILE),
                Some(&attributions),
                groups.as_deref(),
                &config.out,
            )?;
        }
        Command::Selftest { inject_fault } => {
            let fault = inject_fault.as_deref().map(str::parse::<Fault>).transpose()?;
            let results = selftest::run(fault);
            let mut failed = Vec::new();
            for r in &results {
                println!(
                    "{} {} ({:.2} s): {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.seconds,
                    r.detail
                );
                if !r.passed {
                    failed.push(r.name);
                }
            }
            if !failed.is_empty() {
                return Err(PropertyFailure(format!("failed properties: {}", failed.join(", "))).into());
            }
        }
        Command::ServeOracle { oracle, seed, listen } => {
            let mut oracle = builtin(&oracle, seed)?.oracle();
            match listen {
                None => {
                    let stdin = std::io::stdin();
                    let stdout = std::io::stdout();
                    faitheval::oracle::serve(&mut oracle, stdin.lock(), stdout.lock())?;
                }
                Some(addr) => {
                    let listener =
                        TcpListener::bind(&addr).with_context(|| format!("cannot listen on {addr}"))?;
                    // The bound address goes to stdout so callers can use port 0.
                    let mut stdout = std::io::stdout();
                    writeln!(stdout, "{}", listener.local_addr()?)?;
                    stdout.flush()?;
                    for stream in listener.incoming() {
                        let stream = stream?;
                        let reader = BufReader::new(stream.try_clone()?);
                        if let Err(e) = faitheval::oracle::serve(&mut oracle, reader, stream) {
                            log::warn!("connection ended with error: {e}");
                        }
                    }
                }
            }
        }
        Command::ExportModel { oracle, seed, output } => {
            builtin(&oracle, seed)?.save(&output)?;
        }
    }
    Ok(())
}

fn require_file(path: &Path) -> anyhow::Result<()> {
    if !path.is_file() {
        bail!("{} does not exist", path.display());
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<PropertyFailure>().is_some() {
        return 1;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Examples(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FAITHEVAL_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
