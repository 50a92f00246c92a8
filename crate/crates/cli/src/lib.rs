//! The `structreward` command line: parsing, scoring, question generation,
//! synthetic worlds, audits and toy training, each run leaving a manifest
//! beside its output.

pub mod config;
pub mod manifest;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::{info, LevelFilter, Log, Metadata, Record};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::Value;
use structreward::grammar_parser::Lexicon;
use structreward::matcher::match_events;
use structreward::reward_engine::{build_questions, scene_graph_score};
use structreward::similarity::EmbeddingTable;
use structreward::trainer::train;
use structreward::verifier::ExternalVerifier;
use structreward::world_sim::{render_reference, sample_world};
use structreward::{
    audit_metrics, derive_records, ingest_json, overlap_audit, score_pair, serialize, AuditRecord, AuditSample,
    CaptionInput, SimilarityProvider, StructuredCaption, VerifierBinding, WorldState,
};

use config::{ConfigError, ProviderSpec, RunConfig};
use manifest::{manifest_path, sha256_hex, RunManifest};

pub const SEED_ENV: &str = "STRUCTREWARD_SEED";

#[derive(Debug, Parser)]
#[command(name = "structreward", version, about = "Structured consistency rewards for captions")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Dotted key-value TOML file layered over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed and the STRUCTREWARD_SEED variable.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "warn", value_parser = parse_level)]
    log_level: LevelFilter,
    /// Worker threads for batch scoring and training.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
}

fn parse_level(s: &str) -> Result<LevelFilter, String> {
    s.parse().map_err(|_| format!("`{s}` is not one of off, error, warn, info, debug, trace"))
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a text caption (or re-ingest a `.json` IR) into canonical IR.
    Parse {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a generated caption against a reference, or a JSONL batch of pairs.
    Score {
        #[arg(long = "gen", required_unless_present = "pairs", conflicts_with = "pairs")]
        gen: Option<PathBuf>,
        #[arg(long = "ref", required_unless_present = "pairs", conflicts_with = "pairs")]
        reference: Option<PathBuf>,
        /// JSONL lines `{"id", "gen", "ref", "world"?}`.
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// `self`, `world:<path>` or `external:<host:port>`.
        #[arg(long, default_value = "self")]
        verifier: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit the balanced temporal and factual question sets for a pair.
    Questions {
        #[arg(long = "gen")]
        gen: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a synthetic world.
    GenWorld {
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a world's reference caption.
    Render {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize audit records, or derive them from generated captions.
    Audit {
        /// JSONL audit records.
        #[arg(long, required_unless_present = "samples", conflicts_with = "samples")]
        records: Option<PathBuf>,
        /// JSONL lines `{"sample_id", "caption", "world", "root"?}`.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Count normalized-name overlap between training and evaluation lists.
    Overlap {
        #[arg(long)]
        train: PathBuf,
        /// `NAME=PATH` or `PATH` (named by file stem); repeatable.
        #[arg(long = "eval", required = true)]
        eval: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a token policy on synthetic worlds; writes into a directory.
    Train {
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Parse { .. } => "parse",
            Command::Score { .. } => "score",
            Command::Questions { .. } => "questions",
            Command::GenWorld { .. } => "gen-world",
            Command::Render { .. } => "render",
            Command::Audit { .. } => "audit",
            Command::Overlap { .. } => "overlap",
            Command::Train { .. } => "train",
        }
    }

    fn out(&self) -> &Path {
        match self {
            Command::Parse { out, .. }
            | Command::Score { out, .. }
            | Command::Questions { out, .. }
            | Command::GenWorld { out }
            | Command::Render { out, .. }
            | Command::Audit { out, .. }
            | Command::Overlap { out, .. }
            | Command::Train { out } => out,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(ConfigError),
    /// Already carries its typed name, e.g. `DanglingAnchor: ...`.
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Usage(_) | CliError::Config(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Domain(m) => f.write_str(m),
            CliError::Config(e) => write!(f, "{e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

fn starts_with_type_name(msg: &str) -> bool {
    msg.split_once(':').is_some_and(|(head, _)| {
        head.chars().next().is_some_and(|c| c.is_ascii_uppercase()) && head.chars().all(|c| c.is_ascii_alphanumeric())
    })
}

/// Maps any error to a domain error, prefixing `fallback` when its message
/// does not already start with a type name.
fn domain(fallback: &'static str) -> impl Fn(&dyn std::fmt::Display) -> CliError {
    move |e| {
        let msg = e.to_string();
        CliError::Domain(if starts_with_type_name(&msg) { msg } else { format!("{fallback}: {msg}") })
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Domain(format!("IoError: {}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Domain(format!("IoError: {}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Domain(format!("IoError: {}: {e}", path.display())))
}

/// Rounds every non-integer number to six decimals.
pub fn round_floats(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            serde_json::Number::from_f64((x * 1e6).round() / 1e6).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_floats).collect()),
        Value::Object(m) => Value::Object(m.into_iter().map(|(k, v)| (k, round_floats(v))).collect()),
        other => other,
    }
}

/// Sorted keys, rounded floats.
fn to_value<T: serde::Serialize>(t: &T) -> Value {
    round_floats(serde_json::to_value(t).expect("output serializes"))
}

fn pretty(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s.into_bytes()
}

struct JsonLogger;

impl Log for JsonLogger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= log::max_level()
    }

    fn log(&self, record: &Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let line = serde_json::json!({
            "level": record.level().as_str().to_ascii_lowercase(),
            "target": record.target(),
            "msg": record.args().to_string(),
        });
        let _ = writeln!(std::io::stderr().lock(), "{line}");
    }

    fn flush(&self) {}
}

fn init_logging(level: LevelFilter) {
    // A second call in the same process keeps the first logger.
    let _ = log::set_logger(&JsonLogger);
    log::set_max_level(level);
}

/// Loaded resources shared by every subcommand.
struct Context {
    config: RunConfig,
    config_digest: String,
    seed: u64,
    provider: SimilarityProvider,
    inputs: Mutex<BTreeMap<String, String>>,
}

impl Context {
    fn load(global: &Global) -> Result<Context, CliError> {
        let mut inputs = BTreeMap::new();
        let config = match &global.config {
            Some(path) => {
                let bytes = read(path)?;
                inputs.insert(path.display().to_string(), sha256_hex(&bytes));
                let text = String::from_utf8(bytes)
                    .map_err(|_| ConfigError::Syntax(format!("{} is not UTF-8", path.display())))?;
                RunConfig::parse(&text, path.parent().unwrap_or(Path::new(".")))?
            }
            None => RunConfig::default(),
        };
        let seed = match (global.seed, config.seed) {
            (Some(s), _) | (None, Some(s)) => s,
            (None, None) => match std::env::var(SEED_ENV) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("error: {SEED_ENV}=`{v}` is not a non-negative integer")))?,
                Err(_) => 0,
            },
        };
        let lexicon = match &config.lexicon {
            Some(path) => {
                let bytes = read(path)?;
                inputs.insert(path.display().to_string(), sha256_hex(&bytes));
                let text = String::from_utf8_lossy(&bytes);
                Arc::new(Lexicon::parse(&text).map_err(|e| domain("LexiconError")(&e))?)
            }
            None => Arc::new(Lexicon::builtin()),
        };
        let provider = match &config.similarity {
            ProviderSpec::Lexical { n } => {
                let mut p = SimilarityProvider::lexical(lexicon.clone());
                p.kind = structreward::similarity::ProviderKind::Lexical { n: *n };
                p
            }
            ProviderSpec::Embedding { table } => {
                let bytes = read(table)?;
                inputs.insert(table.display().to_string(), sha256_hex(&bytes));
                let parsed = EmbeddingTable::parse(&String::from_utf8_lossy(&bytes))
                    .map_err(|e| domain("TableError")(&e))?;
                SimilarityProvider::embedding(parsed, lexicon.clone())
            }
        };
        let mut config = config;
        config.seed = Some(seed);
        config.reward.seed = seed;
        config.world.lexicon = lexicon;
        let config_digest = sha256_hex(&serde_json::to_vec(&to_value(&config)).expect("config serializes"));
        Ok(Context { config, config_digest, seed, provider, inputs: Mutex::new(inputs) })
    }

    fn input(&self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = read(path)?;
        self.inputs.lock().expect("input digests").insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    fn caption_input(&self, path: &Path) -> Result<CaptionInput, CliError> {
        let bytes = self.input(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Ok(CaptionInput::Ir(ingest_json(&bytes).map_err(|e| domain("SchemaError")(&e))?))
        } else {
            let text = String::from_utf8(bytes)
                .map_err(|_| CliError::Domain(format!("EncodingError: {} is not UTF-8", path.display())))?;
            Ok(CaptionInput::Text(text))
        }
    }

    fn caption(&self, path: &Path) -> Result<StructuredCaption, CliError> {
        self.caption_input(path)?.resolve(&self.provider).map_err(|e| domain("ScoreError")(&e))
    }

    fn world(&self, path: &Path) -> Result<WorldState, CliError> {
        let bytes = self.input(path)?;
        let world: WorldState = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Domain(format!("SchemaError: {}: {e}", path.display())))?;
        world.validate().map_err(|e| domain("InvalidWorld")(&e))?;
        Ok(world)
    }

    fn binding(&self, spec: &str) -> Result<VerifierBinding, CliError> {
        if spec == "self" {
            return Ok(VerifierBinding::SelfBelief);
        }
        match spec.split_once(':') {
            Some(("world", path)) => Ok(VerifierBinding::WorldOracle(Arc::new(self.world(Path::new(path))?))),
            Some(("external", addr)) if !addr.is_empty() => Ok(VerifierBinding::External(Arc::new(
                ExternalVerifier::new(addr, Duration::from_millis(self.config.verifier_timeout_ms)),
            ))),
            _ => Err(CliError::Usage(format!(
                "error: invalid verifier `{spec}`; expected self, world:<path> or external:<host:port>"
            ))),
        }
    }
}

/// A caption given inline in a JSONL line: text, or an IR object.
fn inline_caption(v: Value, provider: &SimilarityProvider) -> Result<StructuredCaption, CliError> {
    let input = match v {
        Value::String(text) => CaptionInput::Text(text),
        other => CaptionInput::Ir(
            serde_json::from_value(other).map_err(|e| CliError::Domain(format!("SchemaError: {e}")))?,
        ),
    };
    input.resolve(provider).map_err(|e| domain("ScoreError")(&e))
}

fn jsonl<T: for<'de> Deserialize<'de>>(bytes: &[u8], path: &Path) -> Result<Vec<T>, CliError> {
    String::from_utf8_lossy(bytes)
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Domain(format!("SchemaError: {} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PairLine {
    id: String,
    gen: Value,
    #[serde(rename = "ref")]
    reference: Value,
    world: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleLine {
    sample_id: String,
    caption: Value,
    /// A world object, or a path relative to the samples file.
    world: Value,
    root: Option<usize>,
}

fn relative(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn names(bytes: &[u8]) -> Vec<String> {
    String::from_utf8_lossy(bytes).lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
}

/// Writes the primary output(s).
fn execute(command: &Command, ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    match command {
        Command::Parse { input, out } => {
            let caption = ctx.caption(input)?;
            write(out, &serialize(&caption))
        }
        Command::Score { gen, reference, pairs, verifier, out } => {
            let binding = ctx.binding(verifier)?;
            match pairs {
                None => {
                    let (gen, reference) = (gen.as_ref().expect("clap"), reference.as_ref().expect("clap"));
                    let (g, r) = (ctx.caption_input(gen)?, ctx.caption_input(reference)?);
                    let report = score_pair(&g, &r, &cfg.reward, &binding, &ctx.provider)
                        .map_err(|e| domain("ScoreError")(&e))?;
                    info!("R = {:.6}", report.reward);
                    write(out, &pretty(&to_value(&report)))
                }
                Some(path) => {
                    let lines: Vec<PairLine> = jsonl(&ctx.input(path)?, path)?;
                    info!("scoring {} pairs", lines.len());
                    let reports = lines
                        .into_par_iter()
                        .map(|line| {
                            let binding = match &line.world {
                                Some(w) => VerifierBinding::WorldOracle(Arc::new(ctx.world(&relative(path, w))?)),
                                None => binding.clone(),
                            };
                            let g = inline_caption(line.gen, &ctx.provider)?;
                            let r = inline_caption(line.reference, &ctx.provider)?;
                            let report = structreward::score_captions(&g, &r, &cfg.reward, &binding, &ctx.provider)
                                .map_err(|e| domain("ScoreError")(&e))
                                .map_err(|e| CliError::Domain(format!("{e} (pair `{}`)", line.id)))?;
                            Ok(serde_json::json!({ "id": line.id, "report": to_value(&report) }))
                        })
                        .collect::<Result<Vec<_>, CliError>>()?;
                    let text: String = reports.iter().map(|v| v.to_string() + "\n").collect();
                    write(out, text.as_bytes())
                }
            }
        }
        Command::Questions { gen, reference, out } => {
            let (g, r) = (ctx.caption(gen)?, ctx.caption(reference)?);
            let sg = scene_graph_score(&g, &r, &cfg.reward, &ctx.provider);
            let em = match_events(&g.events, &r.events, &sg.object_map, &ctx.provider, cfg.reward.min_weight);
            let qs = build_questions(&g, &r, &sg.object_map, &em, &cfg.reward, &ctx.provider);
            write(out, &pretty(&to_value(&qs)))
        }
        Command::GenWorld { out } => {
            let world = sample_world(&cfg.world, ctx.seed).map_err(|e| domain("InvalidConfig")(&e))?;
            write(out, &pretty(&to_value(&world)))
        }
        Command::Render { world, out } => {
            let w = ctx.world(world)?;
            let text = render_reference(&w, &ctx.provider.lexicon).map_err(|e| domain("InvalidWorld")(&e))?;
            write(out, format!("{text}\n").as_bytes())
        }
        Command::Audit { records, samples, out } => {
            let recs: Vec<AuditRecord> = match (records, samples) {
                (Some(path), _) => jsonl(&ctx.input(path)?, path)?,
                (None, Some(path)) => {
                    let lines: Vec<SampleLine> = jsonl(&ctx.input(path)?, path)?;
                    let mut loaded = Vec::with_capacity(lines.len());
                    for line in lines {
                        let caption = inline_caption(line.caption, &ctx.provider)?;
                        let world = match line.world {
                            Value::String(p) => ctx.world(&relative(path, Path::new(&p)))?,
                            other => {
                                let w: WorldState = serde_json::from_value(other)
                                    .map_err(|e| CliError::Domain(format!("SchemaError: {e}")))?;
                                w.validate().map_err(|e| domain("InvalidWorld")(&e))?;
                                w
                            }
                        };
                        loaded.push((line.sample_id, caption, world, line.root));
                    }
                    let samples: Vec<AuditSample> = loaded
                        .iter()
                        .map(|(id, c, w, root)| AuditSample { sample_id: id.clone(), caption: c, world: w, root: *root })
                        .collect();
                    derive_records(&samples, &ctx.provider, cfg.reward.min_weight).map_err(|e| domain("AuditError")(&e))?
                }
                (None, None) => unreachable!("clap requires one input"),
            };
            let summary = audit_metrics(&recs).map_err(|e| domain("AuditError")(&e))?;
            info!("audited {} samples", summary.n_total);
            write(out, &pretty(&serde_json::json!({ "records": to_value(&recs), "summary": to_value(&summary) })))
        }
        Command::Overlap { train, eval, out } => {
            let train_names = names(&ctx.input(train)?);
            let mut sets = Vec::new();
            for spec in eval {
                let (name, path) = match spec.split_once('=') {
                    Some((n, p)) if !n.is_empty() => (n.to_string(), PathBuf::from(p)),
                    _ => {
                        let p = PathBuf::from(spec);
                        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| spec.clone());
                        (stem, p)
                    }
                };
                sets.push((name, names(&ctx.input(&path)?)));
            }
            let report = overlap_audit(&train_names, &sets);
            for line in report.lines() {
                info!("{line}");
            }
            let mut v = to_value(&report);
            v["lines"] = serde_json::json!(report.lines());
            write(out, &pretty(&v))
        }
        Command::Train { out } => {
            let tc = cfg.trainer_config(ctx.seed);
            info!("training {} steps, batch {}", tc.steps, tc.batch_size);
            let history = train(&tc, &ctx.provider).map_err(|e| domain("TrainError")(&e))?;
            let jsonl: String = history.records.iter().map(|r| to_value(r).to_string() + "\n").collect();
            write(&out.join("history.jsonl"), jsonl.as_bytes())?;
            write(&out.join("policy.json"), &pretty(&to_value(&history.policy)))?;
            let summary = serde_json::json!({ "final_eval": history.final_eval().map(to_value) });
            write(&out.join("summary.json"), &pretty(&summary))
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_logging(cli.global.log_level);
    let ctx = Context::load(&cli.global)?;
    let command = &cli.command;
    let is_dir = matches!(command, Command::Train { .. });
    let out = command.out();
    if is_dir {
        std::fs::create_dir_all(out).map_err(|e| CliError::Domain(format!("IoError: {}: {e}", out.display())))?;
    }
    let manifest_at = manifest_path(out, is_dir);
    let io = |e: std::io::Error| CliError::Domain(format!("IoError: {}: {e}", manifest_at.display()));

    if let Some(parent) = manifest_at.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    let digests = || ctx.inputs.lock().expect("input digests").clone();
    let mut manifest = RunManifest::start(command.name(), ctx.config_digest.clone(), ctx.seed, digests());
    manifest.write(&manifest_at).map_err(io)?;
    let result = match cli.global.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build()
            .map_err(|e| CliError::Domain(format!("ThreadPoolError: {e}")))?
            .install(|| execute(command, &ctx)),
        None => execute(command, &ctx),
    };
    // A failed run keeps its manifest without a finish time.
    manifest.input_digests = digests();
    if result.is_ok() {
        manifest.finish();
    }
    manifest.write(&manifest_at).map_err(io)?;
    result?;
    info!("wrote {}", out.display());
    Ok(())
}

/// Runs the command line and returns the process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().trim_start_matches("error: "));
            e.exit_code()
        }
    }
}
