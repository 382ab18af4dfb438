//! `prs`: generate synthetic streams, curate annotated corpora into tasks, and
//! run replay experiments.
//!
//! Exit codes: 0 on success, 1 on invalid input or configuration, 2 on
//! runtime failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use prs_core::curation::{curate, AnnotationCorpus, CurationParams, TierThresholds};
use prs_core::experiment::{run_experiment, EpisodeLog, ExperimentConfig, Method};
use prs_core::streamgen::{gen_balanced_test, gen_stream, label_counts, StreamConfig};
use prs_core::types::{read_jsonl, write_jsonl};
use prs_core::LabeledExample;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<prs_core::Error> for CliError {
    fn from(e: prs_core::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn read_input(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

fn write_output(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .fold(String::new(), |mut s, b| {
            write!(s, "{b:02x}").unwrap();
            s
        })
}

#[derive(Parser, Debug)]
#[command(name = "prs", version, about = "Replay-memory experiments for multi-label continual learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic long-tailed stream from a TOML config.
    Generate(GenerateArgs),
    /// Cluster an annotated corpus into tasks with held-out test splits.
    Curate(CurateArgs),
    /// Run one experiment (or a rho sweep) over a stream.
    Run(RunArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// TOML file with the stream configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output JSON-Lines stream; the manifest is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Also write a balanced test set with this many examples per class.
    #[arg(long)]
    test_per_class: Option<usize>,
    /// Path of the test set (default: `<out stem>.test.jsonl`).
    #[arg(long, requires = "test_per_class")]
    test_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CurateArgs {
    /// JSON-Lines annotations, one `{"id": .., "labels": [..]}` per line.
    #[arg(long)]
    annotations: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    ngroups: usize,
    /// Balance penalty; larger values favour equally sized tasks.
    #[arg(long, default_value_t = prs_core::curation::BETA_BALANCED)]
    beta: f64,
    #[arg(long, default_value_t = 1)]
    min_classes: usize,
    /// Test images per class in every task.
    #[arg(long, default_value_t = 1)]
    k_test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = TierThresholds::default().minority_below)]
    minority_below: usize,
    #[arg(long, default_value_t = TierThresholds::default().majority_above)]
    majority_above: usize,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Training stream (JSON-Lines).
    #[arg(long)]
    stream: PathBuf,
    /// Test set (JSON-Lines); the stream itself is used when omitted.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// TOML experiment config; flags take precedence over its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// finetune, crs, prs or multitask.
    #[arg(long)]
    method: Option<Method>,
    #[arg(long, allow_negative_numbers = true)]
    rho: Option<f64>,
    #[arg(long)]
    memory_size: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    replay_batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Decision threshold on predicted probabilities.
    #[arg(long)]
    threshold: Option<f64>,
    /// Hidden width; a linear model is used when omitted.
    #[arg(long)]
    hidden: Option<usize>,
    /// Include features in memory snapshots.
    #[arg(long)]
    snapshot_features: bool,
    /// Run one experiment per rho in `start:end:step` (inclusive).
    #[arg(long, allow_hyphen_values = true)]
    sweep_rho: Option<String>,
}

impl RunArgs {
    fn experiment_config(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => toml::from_str(&read_input(path)?)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?,
            None => ExperimentConfig::default(),
        };
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(v) = self.rho {
            cfg.rho = v;
        }
        if let Some(v) = self.memory_size {
            cfg.memory_size = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.replay_batch {
            cfg.replay_batch = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.threshold {
            cfg.threshold = v;
        }
        if self.hidden.is_some() {
            cfg.hidden = self.hidden;
        }
        cfg.snapshot_features |= self.snapshot_features;
        cfg.trace = true;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `start:end:step` into the inclusive grid it describes.
fn parse_sweep(spec: &str) -> CliResult<Vec<f64>> {
    let bad = |why: &str| CliError::Validation(format!("--sweep-rho {spec:?}: {why}"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad("expected start:end:step"))?;
    let [start, end, step] = parts[..] else {
        return Err(bad("expected start:end:step"));
    };
    if !(start.is_finite() && end.is_finite() && step.is_finite()) || step <= 0.0 || end < start {
        return Err(bad("need finite start <= end and step > 0"));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    // Round to kill accumulated binary noise so directory names stay stable.
    Ok((0..=n)
        .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

#[derive(Serialize)]
struct GenerateManifest<'a> {
    version: &'a str,
    seed: u64,
    config: &'a StreamConfig,
    num_examples: usize,
    class_sizes: Vec<usize>,
    stream_sha256: String,
    test: Option<TestManifest>,
}

#[derive(Serialize)]
struct TestManifest {
    path: String,
    per_class: usize,
    seed: u64,
    num_examples: usize,
    sha256: String,
}

fn cmd_generate(args: &GenerateArgs) -> CliResult<()> {
    let text = read_input(&args.config)?;
    let config: StreamConfig =
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", args.config.display())))?;
    config.validate()?;
    let stream = gen_stream(&config)?;
    let body = write_jsonl(&stream);
    write_output(&args.out, &body)?;

    let test = match args.test_per_class {
        Some(per_class) => {
            let path = args.test_out.clone().unwrap_or_else(|| args.out.with_extension("test.jsonl"));
            // Test seed is offset so it never replays the training draws.
            let seed = config.seed.wrapping_add(1);
            let test = gen_balanced_test(&config, per_class, seed)?;
            let test_body = write_jsonl(&test);
            write_output(&path, &test_body)?;
            Some(TestManifest {
                path: path.display().to_string(),
                per_class,
                seed,
                num_examples: test.len(),
                sha256: sha256_hex(&test_body),
            })
        }
        None => None,
    };

    let manifest = GenerateManifest {
        version: VERSION,
        seed: config.seed,
        config: &config,
        num_examples: stream.len(),
        class_sizes: label_counts(&stream, config.num_classes),
        stream_sha256: sha256_hex(&body),
        test,
    };
    write_output(&args.out.with_extension("manifest.json"), &to_json(&manifest))
}

fn cmd_curate(args: &CurateArgs) -> CliResult<()> {
    let corpus = AnnotationCorpus::from_jsonl(&read_input(&args.annotations)?)?;
    let params = CurationParams {
        ngroups: args.ngroups,
        beta: args.beta,
        min_classes: args.min_classes,
        k_test: args.k_test,
        seed: args.seed,
        tiers: TierThresholds {
            minority_below: args.minority_below,
            majority_above: args.majority_above,
        },
    };
    let (tasks, report) = curate(&corpus, &params)?;
    let lines = |images: &[prs_core::curation::AnnotatedImage]| {
        images
            .iter()
            .map(|i| serde_json::to_string(i).expect("image serializes") + "\n")
            .collect::<String>()
    };
    for (t, task) in tasks.iter().enumerate() {
        write_output(&args.out.join(format!("task_{t}_train.jsonl")), &lines(&task.train))?;
        write_output(&args.out.join(format!("task_{t}_test.jsonl")), &lines(&task.test))?;
    }
    #[derive(Serialize)]
    struct Output<'a> {
        version: &'a str,
        params: &'a CurationParams,
        annotations_sha256: String,
        #[serde(flatten)]
        report: &'a prs_core::curation::CurationReport,
    }
    let out = Output {
        version: VERSION,
        params: &params,
        annotations_sha256: sha256_hex(&read_input(&args.annotations)?),
        report: &report,
    };
    write_output(&args.out.join("report.json"), &to_json(&out))
}

#[derive(Serialize)]
struct RunManifest<'a> {
    version: &'a str,
    seed: u64,
    config: &'a ExperimentConfig,
    stream: String,
    stream_sha256: String,
    test: Option<String>,
    test_sha256: String,
    num_train: usize,
    num_test: usize,
}

struct Inputs {
    stream: Vec<LabeledExample>,
    test: Vec<LabeledExample>,
    stream_sha256: String,
    test_sha256: String,
}

fn write_episode(dir: &Path, log: &EpisodeLog, args: &RunArgs, inputs: &Inputs) -> CliResult<()> {
    write_output(&dir.join("metrics.csv"), &log.to_csv())?;
    write_output(&dir.join("trace.csv"), &log.trace_csv())?;
    write_output(&dir.join("memory.json"), &to_json(&log.snapshots))?;
    let manifest = RunManifest {
        version: VERSION,
        seed: log.config.seed,
        config: &log.config,
        stream: args.stream.display().to_string(),
        stream_sha256: inputs.stream_sha256.clone(),
        test: args.test.as_ref().map(|p| p.display().to_string()),
        test_sha256: inputs.test_sha256.clone(),
        num_train: inputs.stream.len(),
        num_test: inputs.test.len(),
    };
    write_output(&dir.join("manifest.json"), &to_json(&manifest))
}

fn cmd_run(args: &RunArgs) -> CliResult<()> {
    let base = args.experiment_config()?;
    let stream_text = read_input(&args.stream)?;
    let stream = read_jsonl(&stream_text)?;
    let (test, test_sha256) = match &args.test {
        Some(path) => {
            let text = read_input(path)?;
            (read_jsonl(&text)?, sha256_hex(&text))
        }
        None => (stream.clone(), sha256_hex(&stream_text)),
    };
    let inputs = Inputs {
        stream_sha256: sha256_hex(&stream_text),
        stream,
        test,
        test_sha256,
    };

    let Some(sweep) = &args.sweep_rho else {
        let log = run_experiment(&inputs.stream, &inputs.test, &base)?;
        return write_episode(&args.out, &log, args, &inputs);
    };

    let grid = parse_sweep(sweep)?;
    // One independent experiment per grid cell; cells share only read-only inputs.
    let logs: Vec<prs_core::Result<EpisodeLog>> = std::thread::scope(|scope| {
        let handles: Vec<_> = grid
            .iter()
            .map(|&rho| {
                let cfg = ExperimentConfig { rho, ..base.clone() };
                let inputs = &inputs;
                scope.spawn(move || run_experiment(&inputs.stream, &inputs.test, &cfg))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("experiment thread panicked")).collect()
    });

    let mut summary = String::from("rho,metric,value\n");
    for (rho, log) in grid.iter().zip(logs) {
        let log = log?;
        write_episode(&args.out.join(format!("rho_{rho}")), &log, args, &inputs)?;
        for metric in ["C-F1", "O-F1", "mAP", "forgetting"] {
            if let Some(v) = log.final_value(None, metric) {
                writeln!(summary, "{rho},{metric},{v}").unwrap();
            }
        }
    }
    write_output(&args.out.join("sweep.csv"), &summary)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Curate(a) => cmd_curate(a),
        Command::Run(a) => cmd_run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
