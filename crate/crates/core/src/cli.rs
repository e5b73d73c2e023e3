//! Command-line pipeline: `synth`, `train`, `generate`, `eval`, `gradcheck`.
//!
//! Every flag is also a key of the flat TOML config file (`--config` or
//! `SHIFTSEQ_CONFIG`); flags win over file values. Each run writes its
//! resolved configuration into its run directory.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::activity::Split;
use crate::corpus::{load_corpus, save_corpus, Corpus};
use crate::eval::{emit_report, evaluate, generate_day2, EvalOptions};
use crate::gradcheck::{self, GradCheckOptions};
use crate::model::{Architecture, Decoding, ModelConfig};
use crate::synthgen::{calibration_report, generate_corpus, Preset, SynthConfig};
use crate::train::{init_state, load_checkpoint, resume, train, OutputPaths, TrainConfig};
use crate::{Error, Result};

pub const CONFIG_ENV: &str = "SHIFTSEQ_CONFIG";

#[derive(Parser, Debug)]
#[command(name = "shiftseq", version, about = "Shift-worker activity chain reconstruction")]
struct Cli {
    /// Flat TOML file of default flag values.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus of two-day pairs.
    Synth(SynthArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Write a corpus whose day 2 is generated from day 1.
    Generate(GenerateArgs),
    /// Compare generated and observed distributions on a split.
    Eval(EvalArgs),
    /// Finite-difference check of every kernel and the full loss.
    Gradcheck(GradcheckArgs),
}

/// Keys shared by every subcommand.
#[derive(Args, Debug, Default, Serialize)]
struct CommonArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    workers: Option<usize>,
    /// Run directory (default: runs/<timestamp>-seed<seed>).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    /// Number of pairs.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    /// shift_only or population.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    /// JSON or TOML generator configuration replacing the preset.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    synth_config: Option<PathBuf>,
    /// Corpus file (default: <out>/corpus.jsonl).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthOptions {
    seed: u64,
    workers: Option<usize>,
    out: Option<PathBuf>,
    n: usize,
    preset: String,
    synth_config: Option<PathBuf>,
    output: Option<PathBuf>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            seed: 0,
            workers: None,
            out: None,
            n: 2000,
            preset: "shift_only".into(),
            synth_config: None,
            output: None,
        }
    }
}

/// Beyond the paths, one flag per field of [`ModelConfig`] and
/// [`TrainConfig`].
#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    corpus: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    resume: Option<PathBuf>,
    /// desk, paper or tiny.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    /// transformer or lstm_attention.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    architecture: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    d_model: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    heads: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    encoder_layers: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    decoder_layers: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    ff_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seq_len: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mask_unobserved_keys: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    weight_decay: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    clip: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dropout: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    window: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    teacher_forcing: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    r_min: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    r_max: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    overnight_bias: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    val_jsd: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct TrainPaths {
    seed: u64,
    workers: Option<usize>,
    out: Option<PathBuf>,
    corpus: Option<PathBuf>,
    resume: Option<PathBuf>,
    model: Option<String>,
}

#[derive(Args, Debug, Serialize)]
struct GenerateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    corpus: Option<PathBuf>,
    /// train, val, test or all.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<String>,
    /// greedy or temperature.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    decoding: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
    /// Generated corpus file (default: <out>/generated.jsonl).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenerateOptions {
    seed: u64,
    workers: Option<usize>,
    out: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    corpus: Option<PathBuf>,
    split: String,
    decoding: String,
    temperature: f64,
    output: Option<PathBuf>,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            seed: 0,
            workers: None,
            out: None,
            checkpoint: None,
            corpus: None,
            split: "test".into(),
            decoding: "greedy".into(),
            temperature: 1.0,
            output: None,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    corpus: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    decoding: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
    /// Score generated slots only where the reference day 2 was observed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    observed_only: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalCmdOptions {
    seed: u64,
    workers: Option<usize>,
    out: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    corpus: Option<PathBuf>,
    split: String,
    decoding: String,
    temperature: f64,
    observed_only: bool,
}

impl Default for EvalCmdOptions {
    fn default() -> Self {
        EvalCmdOptions {
            seed: 0,
            workers: None,
            out: None,
            checkpoint: None,
            corpus: None,
            split: "test".into(),
            decoding: "greedy".into(),
            temperature: 1.0,
            observed_only: true,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct GradcheckArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonArgs,
    /// Finite-difference step.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    h: Option<f64>,
    /// Coordinates sampled per model parameter array.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    coords: Option<usize>,
    /// Fail when the largest relative error reaches this value.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tolerance: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GradcheckCmdOptions {
    seed: u64,
    workers: Option<usize>,
    out: Option<PathBuf>,
    h: f64,
    coords: usize,
    tolerance: f64,
}

impl Default for GradcheckCmdOptions {
    fn default() -> Self {
        let g = GradCheckOptions::default();
        GradcheckCmdOptions {
            seed: g.seed,
            workers: None,
            out: None,
            h: g.h,
            coords: g.model_coords,
            tolerance: 1e-4,
        }
    }
}

fn to_map<T: Serialize>(value: &T) -> Map<String, Value> {
    match serde_json::to_value(value).expect("options serialize") {
        Value::Object(m) => m,
        _ => unreachable!("options are structs"),
    }
}

/// Keys accepted anywhere in a config file.
fn known_keys() -> Vec<String> {
    let maps = [
        to_map(&SynthOptions::default()),
        to_map(&TrainPaths::default()),
        to_map(&ModelConfig::default()),
        to_map(&TrainConfig::default()),
        to_map(&GenerateOptions::default()),
        to_map(&EvalCmdOptions::default()),
        to_map(&GradcheckCmdOptions::default()),
    ];
    let mut keys: Vec<String> = maps.iter().flat_map(|m| m.keys().cloned()).collect();
    keys.sort();
    keys.dedup();
    keys
}

fn read_config_file(path: Option<&Path>) -> Result<Map<String, Value>> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    let map = to_map(&table);
    let known = known_keys();
    if let Some(bad) = map.keys().find(|k| !known.contains(k)) {
        return Err(Error::Config(format!("{}: unknown key {bad}", path.display())));
    }
    if let Some((k, _)) = map.iter().find(|(_, v)| v.is_object() || v.is_array()) {
        return Err(Error::Config(format!("{}: key {k} must be a plain value", path.display())));
    }
    Ok(map)
}

/// `base` with every key it shares with `file` and then `flags` replaced.
fn resolve<T: Serialize + DeserializeOwned>(
    base: T,
    file: &Map<String, Value>,
    flags: &Map<String, Value>,
) -> Result<T> {
    let mut map = to_map(&base);
    for layer in [file, flags] {
        for (k, v) in layer {
            if map.contains_key(k) {
                map.insert(k.clone(), v.clone());
            }
        }
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))
}

fn run_dir(out: Option<&PathBuf>, seed: u64) -> Result<PathBuf> {
    let dir = match out {
        Some(d) => d.clone(),
        None => {
            let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
            PathBuf::from("runs").join(format!("{stamp}-seed{seed}"))
        }
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn log_config(dir: &Path, command: &str, resolved: &impl Serialize) -> Result<()> {
    log::info!("{command} config: {}", serde_json::to_string(resolved).expect("serializable"));
    write_json(&dir.join(format!("{command}_config.json")), resolved)
}

fn set_workers(workers: Option<usize>) -> Result<()> {
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::Usage("--workers must be at least 1".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn parse_decoding(kind: &str, temperature: f64) -> Result<Decoding> {
    match kind {
        "greedy" => Ok(Decoding::Greedy),
        "temperature" if temperature > 0.0 && temperature.is_finite() => Ok(Decoding::Temperature(temperature)),
        "temperature" => Err(Error::Usage(format!("temperature must be positive, got {temperature}"))),
        other => Err(Error::Usage(format!("unknown decoding {other}; expected greedy or temperature"))),
    }
}

fn select_split(corpus: &Corpus, split: &str) -> Result<Vec<crate::activity::AgentDayPair>> {
    let s = match split {
        "all" => return Ok(corpus.pairs.clone()),
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        other => return Err(Error::Usage(format!("unknown split {other}"))),
    };
    Ok(corpus.split_owned(s))
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str, command: &str) -> Result<&'a PathBuf> {
    value
        .as_ref()
        .ok_or_else(|| Error::Usage(format!("{command} needs --{flag}")))
}

fn synth(args: SynthArgs, file: &Map<String, Value>) -> Result<()> {
    let opts: SynthOptions = resolve(SynthOptions::default(), file, &to_map(&args))?;
    set_workers(opts.workers)?;
    let config = match &opts.synth_config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let parsed = if path.extension().is_some_and(|e| e == "toml") {
                toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
            } else {
                serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))
            };
            parsed.map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
                e => e,
            })?
        }
        None => SynthConfig::preset(Preset::parse(&opts.preset)?),
    };
    let dir = run_dir(opts.out.as_ref(), opts.seed)?;
    log_config(&dir, "synth", &opts)?;
    write_json(&dir.join("synth_generator.json"), &config)?;
    let corpus = generate_corpus(opts.n, &config, opts.seed)?;
    let output = opts.output.clone().unwrap_or_else(|| dir.join("corpus.jsonl"));
    save_corpus(&corpus, &output)?;
    let calibration = calibration_report(&corpus);
    write_json(&dir.join("calibration.json"), &calibration)?;
    println!("{}", output.display());
    Ok(())
}

fn train_cmd(args: TrainArgs, file: &Map<String, Value>) -> Result<()> {
    let flags = to_map(&args);
    let paths: TrainPaths = resolve(TrainPaths::default(), file, &flags)?;
    set_workers(paths.workers)?;
    let corpus_path = require(&paths.corpus, "corpus", "train")?;
    let corpus = load_corpus(corpus_path)?;
    let preset = match paths.model.as_deref().unwrap_or("desk") {
        "desk" => ModelConfig::desk(),
        "paper" => ModelConfig::paper(),
        "tiny" => ModelConfig::tiny(),
        other => return Err(Error::Usage(format!("unknown model preset {other}"))),
    };
    let train_base = TrainConfig {
        seed: paths.seed,
        ..TrainConfig::desk()
    };
    let mut model_overrides = flags.clone();
    if let Some(Value::String(a)) = model_overrides.get("architecture") {
        let arch = match a.as_str() {
            "transformer" => Architecture::Transformer,
            "lstm_attention" | "lstm" => Architecture::LstmAttention,
            other => return Err(Error::Usage(format!("unknown architecture {other}"))),
        };
        model_overrides.insert("architecture".into(), serde_json::to_value(arch).expect("enum"));
    }
    let model_config: ModelConfig = resolve(preset, file, &model_overrides)?;
    let train_config: TrainConfig = resolve(train_base, file, &flags)?;
    model_config.validate()?;
    train_config.validate()?;
    let dir = run_dir(paths.out.as_ref(), paths.seed)?;
    log_config(
        &dir,
        "train",
        &serde_json::json!({"paths": paths, "model": model_config, "train": train_config}),
    )?;
    let mut state = match &paths.resume {
        Some(ckpt) => {
            let state = resume(ckpt, &train_config)?;
            let expected = ModelConfig {
                dropout: train_config.dropout,
                ..model_config.clone()
            };
            if state.model.config() != &expected {
                return Err(Error::Config("model settings differ from the resumed checkpoint".into()));
            }
            state
        }
        None => init_state(&model_config, &train_config)?,
    };
    if paths.resume.is_some() {
        let log = dir.join("train_log.jsonl");
        let source = paths.resume.as_ref().and_then(|p| p.parent()).map(|p| p.join("train_log.jsonl"));
        if let Some(src) = source.filter(|s| s.exists() && *s != log) {
            fs::copy(&src, &log).map_err(|e| Error::io(&src, e))?;
        }
    }
    let out = OutputPaths { dir: dir.clone() };
    let report = train(&corpus, &mut state, Some(&out))?;
    let mut summary = serde_json::to_value(&report).expect("report");
    summary["epochs"] = Value::from(report.epochs.len());
    write_json(&dir.join("train_summary.json"), &summary)?;
    println!("{}", out.best().display());
    Ok(())
}

fn generate_cmd(args: GenerateArgs, file: &Map<String, Value>) -> Result<()> {
    let opts: GenerateOptions = resolve(GenerateOptions::default(), file, &to_map(&args))?;
    set_workers(opts.workers)?;
    let ckpt = require(&opts.checkpoint, "checkpoint", "generate")?;
    let corpus_path = require(&opts.corpus, "corpus", "generate")?;
    let decoding = parse_decoding(&opts.decoding, opts.temperature)?;
    let state = load_checkpoint(ckpt)?;
    let corpus = load_corpus(corpus_path)?;
    let pairs = select_split(&corpus, &opts.split)?;
    let dir = run_dir(opts.out.as_ref(), opts.seed)?;
    log_config(&dir, "generate", &opts)?;
    let generated = generate_day2(&state.model, &state.params, &pairs, decoding, opts.seed)?;
    let output = opts.output.clone().unwrap_or_else(|| dir.join("generated.jsonl"));
    save_corpus(&Corpus { pairs: generated }, &output)?;
    println!("{}", output.display());
    Ok(())
}

fn eval_cmd(args: EvalArgs, file: &Map<String, Value>) -> Result<()> {
    let opts: EvalCmdOptions = resolve(EvalCmdOptions::default(), file, &to_map(&args))?;
    set_workers(opts.workers)?;
    let ckpt = require(&opts.checkpoint, "checkpoint", "eval")?;
    let corpus_path = require(&opts.corpus, "corpus", "eval")?;
    let decoding = parse_decoding(&opts.decoding, opts.temperature)?;
    let state = load_checkpoint(ckpt)?;
    let corpus = load_corpus(corpus_path)?;
    let pairs = select_split(&corpus, &opts.split)?;
    let dir = run_dir(opts.out.as_ref(), opts.seed)?;
    log_config(&dir, "eval", &opts)?;
    let options = EvalOptions {
        decoding,
        seed: opts.seed,
        observed_only: opts.observed_only,
    };
    let ev = evaluate(&state.model, &state.params, &pairs, &options)?;
    emit_report(&ev.report, &ev.reference, &ev.generated, dir.join(""))?;
    println!("{}", serde_json::to_string(&ev.report).expect("report"));
    Ok(())
}

fn gradcheck_cmd(args: GradcheckArgs, file: &Map<String, Value>) -> Result<()> {
    let opts: GradcheckCmdOptions = resolve(GradcheckCmdOptions::default(), file, &to_map(&args))?;
    set_workers(opts.workers)?;
    let dir = run_dir(opts.out.as_ref(), opts.seed)?;
    log_config(&dir, "gradcheck", &opts)?;
    let summary = gradcheck::run(&GradCheckOptions {
        h: opts.h,
        seed: opts.seed,
        model_coords: opts.coords,
        ..GradCheckOptions::default()
    })?;
    write_json(&dir.join("gradcheck.json"), &summary)?;
    for c in &summary.checks {
        println!(
            "{:<22} max_rel_error {:.3e}  coords {:>5}  skipped {}",
            c.name, c.max_rel_error, c.coords, c.skipped
        );
    }
    println!("max_rel_error {:.3e}", summary.max_rel_error);
    if summary.max_rel_error >= opts.tolerance {
        return Err(Error::Numerics(crate::numerics::NumericsError::Invalid(format!(
            "gradient check failed: max relative error {:.3e} >= {:.1e}",
            summary.max_rel_error, opts.tolerance
        ))));
    }
    Ok(())
}

/// The single error line printed on failure.
pub fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({"error": kind, "message": message}).to_string()
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) => 2,
        _ => 1,
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return 2;
        }
    };
    let result = read_config_file(cli.config.as_deref()).and_then(|file| match cli.command {
        Command::Synth(a) => synth(a, &file),
        Command::Train(a) => train_cmd(a, &file),
        Command::Generate(a) => generate_cmd(a, &file),
        Command::Eval(a) => eval_cmd(a, &file),
        Command::Gradcheck(a) => gradcheck_cmd(a, &file),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("{}", error_line(e.kind(), &message));
            exit_code(&e)
        }
    }
}
