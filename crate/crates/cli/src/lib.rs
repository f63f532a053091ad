//! `dsmcl` subcommands.
//!
//! Exit codes: 0 success, 1 partial failure, 2 usage or config error,
//! 3 numeric failure.

mod manifest;

pub use manifest::{sha256_file, RunManifest};

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use dsmcl::config::TrainConfig;
use dsmcl::data::{self, DataError, IntentionMix, Sample, ScenarioParams, TrackFormat};
use dsmcl::eval::{self, MinMode};
use dsmcl::experiment::{self, SweepVar};
use dsmcl::model::{self, ModelError, ModelParams};
use dsmcl::training::{self, TrainError};

/// Failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_numeric() {
            CliError::numeric(e.to_string())
        } else {
            CliError::usage(e.to_string())
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<eval::EvalError> for CliError {
    fn from(e: eval::EvalError) -> Self {
        CliError::usage(e.to_string())
    }
}

pub type CliResult = Result<u8, CliError>;

#[derive(Debug, Parser)]
#[command(name = "dsmcl", version, about = "Dual-level multiple choice trajectory prediction experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic highway dataset.
    Synth(SynthArgs),
    /// Convert a track CSV into a dataset of windowed samples.
    Ingest(IngestArgs),
    /// Train a model and write its checkpoint and metrics log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train one model per value of M, N or alpha.
    Sweep(SweepArgs),
    /// Write every candidate trajectory with its probability.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML config file.
    #[arg(long, env = "DSMCL_CONFIG")]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set M=1` or `--set model.decoder_hidden=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    /// The config file (or defaults) with overrides applied.
    pub fn load(&self) -> Result<TrainConfig, CliError> {
        let text = match &self.config {
            Some(path) => fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?,
            None => String::new(),
        };
        TrainConfig::from_toml_with_overrides(&text, &self.set).map_err(|e| CliError::usage(e.to_string()))
    }

    fn given(&self) -> bool {
        self.config.is_some() || !self.set.is_empty()
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Relative weights of keep, left and right.
    #[arg(long, default_value = "1,1,1")]
    pub mix: String,
    /// Start every target in this lane (0 = leftmost).
    #[arg(long)]
    pub start_lane: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    GenericCsv,
    HighdCsv,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub tracks: PathBuf,
    #[arg(long, value_enum, default_value = "generic-csv")]
    pub format: FormatArg,
    /// Frame rate of the file when it has no `# rate_hz=` line.
    #[arg(long)]
    pub rate_hz: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Shorthand for `--set epochs=N`.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    All,
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MinModeArg {
    PerHorizon,
    PerTrajectory,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Part of the seeded split to evaluate.
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitArg,
    /// Probability threshold; defaults to the config's.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum, default_value = "per-horizon")]
    pub min_mode: MinModeArg,
    /// Directory for the report files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub vary: String,
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub values: Vec<f64>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset file with the samples to predict.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Ingest(a) => cmd_ingest(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Predict(a) => cmd_predict(&a),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::usage(format!("{}: {e}", path.display()))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serializable")
}

/// `<file>.manifest.json` next to a single-file output.
fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn parse_mix(text: &str) -> Result<IntentionMix, CliError> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::usage(format!("--mix expects three numbers, got `{text}`")))?;
    match parts[..] {
        [keep, left, right] => Ok(IntentionMix { keep, left, right }),
        _ => Err(CliError::usage(format!("--mix expects three numbers, got `{text}`"))),
    }
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult {
    if args.count == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    let config = args.config.load()?;
    let params = ScenarioParams {
        mix: parse_mix(&args.mix)?,
        start_lane: args.start_lane,
        max_neighbors: 4.min(config.grid.max_neighbors),
        ..ScenarioParams::default()
    };
    let samples = data::synth_generate(args.count, args.seed, &params, &config)?;
    data::write_dataset(&args.out, &samples)?;
    let mut m = RunManifest::new("synth", Some(&config), args.seed);
    m.artifact("dataset", &args.out);
    m.flags.insert("count".into(), args.count.to_string());
    m.flags.insert("mix".into(), args.mix.clone());
    if let Some(l) = args.start_lane {
        m.flags.insert("start_lane".into(), l.to_string());
    }
    m.write(&sidecar(&args.out))?;
    info!("wrote {} samples to {}", samples.len(), args.out.display());
    Ok(0)
}

pub fn cmd_ingest(args: &IngestArgs) -> CliResult {
    let config = args.config.load()?;
    let format = match args.format {
        FormatArg::GenericCsv => TrackFormat::GenericCsv,
        FormatArg::HighdCsv => TrackFormat::HighdCsv,
    };
    let tracks = data::load_tracks(&args.tracks, format, args.rate_hz, config.time_step)?;
    let source = args.tracks.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let samples = data::make_samples(&tracks, &config, &source);
    data::write_dataset(&args.out, &samples)?;
    let mut m = RunManifest::new("ingest", Some(&config), config.seed);
    m.input(&args.tracks)?;
    m.artifact("dataset", &args.out);
    m.write(&sidecar(&args.out))?;
    println!("{} tracks, {} samples", tracks.len(), samples.len());
    Ok(0)
}

fn read_checked(path: &Path, config: &TrainConfig) -> Result<Vec<Sample>, CliError> {
    let samples = data::read_dataset(path)?;
    for (i, s) in samples.iter().enumerate() {
        s.check(config.history_len(), config.horizon())
            .map_err(|m| CliError::usage(format!("{} sample {i}: {m}", path.display())))?;
    }
    Ok(samples)
}

pub fn cmd_train(args: &TrainArgs) -> CliResult {
    let mut config = args.config.load()?;
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    let samples = read_checked(&args.data, &config)?;
    let parts = data::split(samples, config.split, config.seed)?;
    create_dir(&args.out)?;
    let metrics_path = args.out.join("metrics.jsonl");
    let file = fs::File::create(&metrics_path).map_err(|e| io_error(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    let mut write_err = None;
    let params = ModelParams::<f64>::init(&config)?;
    info!(
        "training {} parameters on {} samples ({} validation)",
        params.parameter_count(),
        parts.train.len(),
        parts.validation.len()
    );
    let outcome = training::train(params, &parts.train, &parts.validation, |epoch, _| {
        let line = to_json(epoch);
        if let Err(e) = writeln!(metrics, "{line}").and_then(|_| metrics.flush()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_error(&metrics_path, e));
    }
    let checkpoint = args.out.join("checkpoint.dsmcl");
    model::save_checkpoint(&outcome.params, &checkpoint)?;
    let mut m = RunManifest::new("train", Some(&config), config.seed);
    m.input(&args.data)?;
    m.artifact("checkpoint", &checkpoint);
    m.artifact("metrics", &metrics_path);
    m.flags.insert(
        "split_sizes".into(),
        format!("{},{},{}", parts.train.len(), parts.validation.len(), parts.test.len()),
    );
    m.write(&args.out.join("manifest.json"))?;
    if let Some(last) = outcome.log.last() {
        println!("final epoch {}: loss {:.6}, validation minRMSE {:?}", last.epoch, last.mean_total, last.val_min_rmse);
    }
    Ok(0)
}

/// Loads a checkpoint, re-validating its shapes when a config is given.
fn load_model(path: &Path, config: &ConfigArgs) -> Result<ModelParams<f64>, CliError> {
    let stored: ModelParams<f64> = model::load_checkpoint(path)?;
    if !config.given() {
        return Ok(stored);
    }
    let effective = match &config.config {
        Some(_) => config.load()?,
        None => stored.config.with_overrides(&config.set).map_err(|e| CliError::usage(e.to_string()))?,
    };
    let tensors = stored.tensors().into_iter().cloned().collect();
    ModelParams::from_tensors(effective, tensors)
        .map_err(|e| CliError::usage(format!("checkpoint does not match config: {e}")))
}

fn select_split(samples: Vec<Sample>, config: &TrainConfig, which: SplitArg) -> Result<Vec<Sample>, CliError> {
    if which == SplitArg::All {
        return Ok(samples);
    }
    let parts = data::split(samples, config.split, config.seed)?;
    Ok(match which {
        SplitArg::Train => parts.train,
        SplitArg::Validation => parts.validation,
        SplitArg::Test => parts.test,
        SplitArg::All => unreachable!(),
    })
}

/// Everything `eval` writes to `metrics.json`.
#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub min_mode: MinMode,
    pub min_rmse: eval::HorizonMetrics,
    pub rmse: eval::HorizonMetrics,
    pub displacement: eval::DisplacementMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub specialization: Option<eval::SpecializationReport>,
}

fn specialization_text(r: &eval::SpecializationReport) -> String {
    let mut out = String::from("group");
    for l in &r.labels {
        out.push_str(&format!(" {:>6}", l.to_string()));
    }
    out.push_str("  purity\n");
    for (m, row) in r.win_counts.iter().enumerate() {
        out.push_str(&format!("{m:>5}"));
        for c in row {
            out.push_str(&format!(" {c:>6}"));
        }
        out.push_str(&format!("  {:.4}\n", r.purity[m]));
    }
    out.push_str(&format!("coverage {:.4}\n", r.coverage));
    out
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult {
    let params = load_model(&args.checkpoint, &args.config)?;
    let config = &params.config;
    let threshold = args.threshold.unwrap_or(config.probability_threshold);
    let min_mode = match args.min_mode {
        MinModeArg::PerHorizon => MinMode::PerHorizon,
        MinModeArg::PerTrajectory => MinMode::PerTrajectory,
    };
    let samples = select_split(read_checked(&args.data, config)?, config, args.split)?;
    let cases = eval::predict_cases(&params, &samples)?;
    let report = EvalReport {
        threshold,
        min_mode,
        min_rmse: eval::min_rmse(&cases, threshold, min_mode)?,
        rmse: eval::rmse(&cases)?,
        displacement: eval::displacement_metrics(&cases)?,
        specialization: if cases.iter().all(|c| c.label.is_some()) {
            Some(eval::specialization_report(&cases)?)
        } else {
            None
        },
    };
    let title = format!("M={} N={}", config.intention_modes, config.motion_modes);
    let mut text = eval::format_table(
        &title,
        &[
            (format!("minRMSE (p>{threshold})"), &report.min_rmse),
            ("RMSE".to_string(), &report.rmse),
        ],
    );
    if let Some(s) = &report.specialization {
        text.push('\n');
        text.push_str(&specialization_text(s));
    }
    print!("{text}");
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        let records = eval::sample_records(&cases, threshold)?;
        let mut lines = String::new();
        for r in &records {
            lines.push_str(&to_json(r));
            lines.push('\n');
        }
        write_file(&dir.join("report.txt"), &text)?;
        write_file(&dir.join("metrics.json"), to_json(&report) + "\n")?;
        write_file(&dir.join("samples.jsonl"), lines)?;
        let mut m = RunManifest::new("eval", Some(config), config.seed);
        m.input(&args.checkpoint)?;
        m.input(&args.data)?;
        m.flags.insert("split".into(), format!("{:?}", args.split).to_lowercase());
        m.flags.insert("threshold".into(), threshold.to_string());
        m.flags.insert("min_mode".into(), min_mode.to_string());
        for name in ["report.txt", "metrics.json", "samples.jsonl"] {
            m.artifact(name, &dir.join(name));
        }
        m.write(&dir.join("manifest.json"))?;
    }
    Ok(0)
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult {
    let vary: SweepVar = args.vary.parse().map_err(CliError::usage)?;
    if args.values.is_empty() {
        return Err(CliError::usage("--values needs at least one value"));
    }
    let base = args.config.load()?;
    let samples = read_checked(&args.data, &base)?;
    let parts = data::split(samples, base.split, base.seed)?;
    create_dir(&args.out)?;
    let mut m = RunManifest::new("sweep", Some(&base), base.seed);
    m.input(&args.data)?;
    m.flags.insert("vary".into(), vary.to_string());
    m.flags.insert(
        "values".into(),
        args.values.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
    );
    let mut save_err = None;
    let records = experiment::sweep(
        &base,
        vary,
        &args.values,
        &parts.train,
        &parts.validation,
        &parts.test,
        |record, result| {
            info!("{vary}={}: {:?}", record.value, record.min_rmse.as_ref().map(|r| &r.per_second));
            if let Some(r) = result {
                let path = args.out.join(format!("checkpoint-{vary}-{}.dsmcl", record.value));
                match model::save_checkpoint(&r.params, &path) {
                    Ok(()) => m.artifact(&format!("checkpoint {vary}={}", record.value), &path),
                    Err(e) => {
                        save_err.get_or_insert(e);
                    }
                }
            }
        },
    );
    if let Some(e) = save_err {
        return Err(e.into());
    }
    let mut lines = String::new();
    for r in &records {
        lines.push_str(&to_json(r));
        lines.push('\n');
    }
    let curve = args.out.join("sweep.jsonl");
    write_file(&curve, lines)?;
    m.artifact("curve", &curve);
    let rows: Vec<(String, &eval::HorizonMetrics)> = records
        .iter()
        .filter_map(|r| r.min_rmse.as_ref().map(|mr| (format!("{vary}={}", r.value), mr)))
        .collect();
    let table = eval::format_table("minRMSE", &rows);
    let table_path = args.out.join("table.txt");
    write_file(&table_path, &table)?;
    m.artifact("table", &table_path);
    m.write(&args.out.join("manifest.json"))?;
    print!("{table}");
    let failed: Vec<&experiment::SweepRecord> = records.iter().filter(|r| r.error.is_some()).collect();
    for r in &failed {
        eprintln!("{vary}={} failed: {}", r.value, r.error.as_deref().unwrap_or_default());
    }
    Ok(if failed.is_empty() { 0 } else { 1 })
}

/// One line of `predict` output.
#[derive(Debug, Serialize)]
#[serde(untagged)]
pub enum PredictionRecord {
    Candidate {
        sample: usize,
        id: String,
        m: usize,
        n: usize,
        probability: f64,
        trajectory: Vec<[f64; 2]>,
    },
    Error {
        sample: usize,
        error: String,
    },
}

fn check_input(sample: &Sample, history_len: usize) -> Result<(), String> {
    if sample.history.len() != history_len {
        return Err(format!("history has {} points, expected {history_len}", sample.history.len()));
    }
    let finite = |pts: &[data::Point]| pts.iter().flatten().all(|v| v.is_finite());
    if !finite(&sample.history) {
        return Err("non-finite history coordinate".into());
    }
    for n in &sample.neighbors {
        if n.history.len() != history_len || !finite(&n.history) {
            return Err(format!("neighbor {} history is malformed", n.vehicle_id));
        }
    }
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs) -> CliResult {
    let params: ModelParams<f64> = model::load_checkpoint(&args.checkpoint)?;
    let history_len = params.config.history_len();
    let input = fs::File::open(&args.input).map_err(|e| io_error(&args.input, e))?;
    let mut records = Vec::new();
    let mut index = 0;
    for line in BufReader::new(input).lines() {
        let line = line.map_err(|e| io_error(&args.input, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = index;
        index += 1;
        let parsed = serde_json::from_str::<Sample>(&line)
            .map_err(|e| e.to_string())
            .and_then(|s| check_input(&s, history_len).map(|_| s));
        let s = match parsed {
            Ok(s) => s,
            Err(error) => {
                records.push(PredictionRecord::Error { sample, error });
                continue;
            }
        };
        match params.predict(&s) {
            Ok(set) => {
                let id = format!("{}:{}@{}", s.source, s.target_id, s.anchor_frame);
                for m in 0..set.intention_modes {
                    for n in 0..set.motion_modes {
                        records.push(PredictionRecord::Candidate {
                            sample,
                            id: id.clone(),
                            m,
                            n,
                            probability: set.probability(m, n),
                            trajectory: set.trajectory(m, n).to_vec(),
                        });
                    }
                }
            }
            Err(e) => records.push(PredictionRecord::Error {
                sample,
                error: e.to_string(),
            }),
        }
    }
    let mut out = String::new();
    for r in &records {
        out.push_str(&to_json(r));
        out.push('\n');
    }
    write_file(&args.out, out)?;
    let mut m = RunManifest::new("predict", Some(&params.config), params.config.seed);
    m.input(&args.checkpoint)?;
    m.input(&args.input)?;
    m.artifact("predictions", &args.out);
    m.write(&sidecar(&args.out))?;
    let errors = records.iter().filter(|r| matches!(r, PredictionRecord::Error { .. })).count();
    if errors > 0 {
        eprintln!("{errors} of {index} samples could not be predicted");
        return Ok(1);
    }
    Ok(0)
}
