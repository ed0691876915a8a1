//! Command-line entry point: curate / train / score / analyze / toolrun.
//!
//! Every file-producing run writes a manifest (config snapshot, seed,
//! output paths) before doing work, so a crash still leaves a parseable
//! record and a finished manifest suffices to reproduce the run. Logs go to
//! standard error as JSON lines; data outputs go to files. Failures exit
//! nonzero with a one-line machine-parseable error category.

use crate::analysis::{self, AnalysisError, KeywordTaxonomy};
use crate::config::{ConfigError, RunConfig};
use crate::dataset::{self, DatasetError, Question};
use crate::filters::FilterError;
use crate::policy::{PolicyError, PolicyParams, Rollout, SamplingPolicy};
use crate::rewards::{self, RewardBreakdown, RewardError, RewardMode};
use crate::toolchain::{self, ExecLimits, SpliceProtocol, ToolError};
use crate::trainer::{StepReport, TrainerError, TrainingRun};
use crate::verifier::PromptTemplate;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("response id `{0}` not present in dataset")]
    IdMismatch(String),
    #[error("line {line}: {message}")]
    MalformedInput { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    /// Stable machine-parseable failure category.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Dataset(_) => "dataset",
            CliError::Policy(_) => "policy",
            CliError::Trainer(_) => "trainer",
            CliError::Reward(_) => "reward",
            CliError::Filter(_) => "filter",
            CliError::Tool(_) => "tool",
            CliError::Analysis(_) => "analysis",
            CliError::IdMismatch(_) => "id-mismatch",
            CliError::MalformedInput { .. } => "input",
            CliError::Io(_) => "io",
            CliError::Other(_) => "usage",
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "deskrl",
    version,
    about = "Desk-scale RL harness with verifiable rewards"
)]
struct Cli {
    /// Config file (TOML); flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (1 reproduces any worker count exactly; 0 = auto).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Curate raw records into a verifiable, difficulty-filtered dataset.
    Curate(CurateArgs),
    /// Run RL training per the config; writes curves and parameter snapshots.
    Train(TrainArgs),
    /// Score a response file against a dataset under a reward mode.
    Score(ScoreArgs),
    /// Keyword-category ratios and length statistics over scored responses.
    Analyze(AnalyzeArgs),
    /// Execute code blocks in a transcript through the sandboxed runner.
    Toolrun(ToolrunArgs),
}

#[derive(Args, Debug)]
struct CurateArgs {
    /// Raw records, one JSON object per line: {id, prompt, answer, source}.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    /// Probe rollouts per question for difficulty estimation.
    #[arg(long, default_value_t = 8)]
    probe_k: usize,
    /// Keep questions with pass rate strictly above this bound.
    #[arg(long, default_value_t = 0.0)]
    low: f64,
    /// Keep questions with pass rate strictly below this bound.
    #[arg(long, default_value_t = 1.0)]
    high: f64,
    /// Policy snapshot to use as the difficulty probe; defaults to the
    /// config's initial policy.
    #[arg(long)]
    probe_params: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    probe_temperature: f64,
    #[arg(long, default_value_t = 32)]
    probe_max_len: usize,
    /// Only run verifiability filtering.
    #[arg(long)]
    skip_difficulty: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Output directory for manifest, curves, and snapshots.
    #[arg(long)]
    out_dir: PathBuf,
    /// Train batch size override.
    #[arg(long)]
    tbs: Option<usize>,
    /// Total steps override.
    #[arg(long)]
    steps: Option<usize>,
    /// Learning rate override.
    #[arg(long)]
    lr: Option<f64>,
    /// Enable question selection.
    #[arg(long)]
    qs: bool,
    /// Enable response selection.
    #[arg(long)]
    rs: bool,
    /// Enable overlength response masking.
    #[arg(long)]
    orm: bool,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Responses, one JSON object per line: {id, text, length?, truncated?}.
    #[arg(long)]
    responses: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// outcome-only | outcome-format | rrl | rra
    #[arg(long, default_value = "outcome-only", value_parser = parse_mode)]
    mode: RewardMode,
    #[arg(long, default_value_t = 4096)]
    l_max: usize,
    #[arg(long, default_value_t = 20)]
    a_max: usize,
    /// short | long | chat
    #[arg(long, default_value = "chat")]
    template: String,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Scored responses (output of `score`), one JSON object per line.
    #[arg(long)]
    responses: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Optional training curve CSV to re-export canonically.
    #[arg(long)]
    reports: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ToolrunArgs {
    /// Interpreter command, whitespace-split (e.g. "python3").
    #[arg(long)]
    runner: String,
    #[arg(long, default_value_t = 1.0)]
    timeout: f64,
    #[arg(long, default_value_t = 65536)]
    max_output: usize,
    #[arg(long, default_value_t = 4)]
    max_iter: usize,
    /// Transcript file; standard input when omitted.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Final transcript file; standard output when omitted.
    #[arg(long = "out")]
    output: Option<PathBuf>,
    /// Invocation log (JSON lines).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Only execute blocks with this language tag.
    #[arg(long)]
    lang: Option<String>,
}

fn parse_mode(s: &str) -> Result<RewardMode, String> {
    match s {
        "outcome-only" | "outcome" => Ok(RewardMode::OutcomeOnly),
        "outcome-format" => Ok(RewardMode::OutcomeFormat),
        "rrl" => Ok(RewardMode::Rrl),
        "rra" => Ok(RewardMode::Rra),
        other => Err(format!(
            "unknown mode `{other}` (outcome-only, outcome-format, rrl, rra)"
        )),
    }
}

/// Reproducibility record written before a run produces data.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub subcommand: String,
    pub seed: u64,
    pub workers: usize,
    pub config: serde_json::Value,
    pub start_unix: u64,
    pub end_unix: Option<u64>,
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(subcommand: &str, seed: u64, workers: usize, config: serde_json::Value) -> Self {
        RunManifest {
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            seed,
            workers,
            config,
            start_unix: unix_now(),
            end_unix: None,
            outputs: BTreeMap::new(),
        }
    }

    fn add_output(&mut self, name: &str, path: &Path) {
        self.outputs
            .insert(name.to_string(), path.display().to_string());
    }

    fn write(&self, path: &Path) -> Result<(), CliError> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| CliError::Other(e.to_string()))?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn log_event(event: &str, fields: serde_json::Value) {
    let mut line = serde_json::json!({ "event": event });
    if let (Some(obj), Some(extra)) = (line.as_object_mut(), fields.as_object()) {
        for (k, v) in extra {
            obj.insert(k.clone(), v.clone());
        }
    }
    eprintln!("{line}");
}

/// Parses arguments and dispatches; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders help/version on stdout with success status.
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            log_event(
                "error",
                serde_json::json!({
                    "category": e.category(),
                    "message": e.to_string(),
                }),
            );
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    let workers = cfg.workers;
    match cli.command {
        Command::Curate(args) => with_pool(workers, || cmd_curate(&cfg, &args)),
        Command::Train(args) => with_pool(workers, || cmd_train(&cfg, &args)),
        Command::Score(args) => cmd_score(&cfg, &args),
        Command::Analyze(args) => cmd_analyze(&args),
        Command::Toolrun(args) => cmd_toolrun(&args),
    }
}

fn with_pool<F>(workers: usize, f: F) -> Result<(), CliError>
where
    F: FnOnce() -> Result<(), CliError> + Send,
{
    if workers == 0 {
        f()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| CliError::Other(e.to_string()))?;
        pool.install(f)
    }
}

fn manifest_path_for(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn cmd_curate(cfg: &RunConfig, args: &CurateArgs) -> Result<(), CliError> {
    if args.probe_k == 0 {
        return Err(CliError::Other("--probe-k must be at least 1".into()));
    }
    if args.probe_max_len == 0 {
        return Err(CliError::Other("--probe-max-len must be at least 1".into()));
    }
    if args.probe_temperature <= 0.0 || !args.probe_temperature.is_finite() {
        return Err(CliError::Other(
            "--probe-temperature must be positive".into(),
        ));
    }
    let mut manifest = RunManifest::new(
        "curate",
        cfg.seed,
        cfg.workers,
        serde_json::to_value(cfg).map_err(|e| CliError::Other(e.to_string()))?,
    );
    manifest.add_output("dataset", &args.output);
    manifest.write(&manifest_path_for(&args.output))?;

    let records = dataset::load_raw_records(&args.input)?;
    let (mut questions, mut report) = dataset::filter_verifiable(&records)?;
    if !args.skip_difficulty {
        let probe_params = match &args.probe_params {
            Some(path) => PolicyParams::load(path)?,
            None => cfg.build_policy()?,
        };
        let probe = SamplingPolicy {
            params: &probe_params,
            temperature: args.probe_temperature,
            max_len: args.probe_max_len,
        };
        dataset::estimate_difficulties(&mut questions, &probe, args.probe_k, cfg.seed);
        let (kept, difficulty_report) =
            dataset::filter_by_difficulty(questions, args.low, args.high)?;
        questions = kept;
        report = report.merge(&difficulty_report);
    }
    dataset::save_dataset(&args.output, &questions)?;

    manifest.end_unix = Some(unix_now());
    manifest.write(&manifest_path_for(&args.output))?;
    log_event(
        "curate-report",
        serde_json::json!({
            "input": report.input_count,
            "kept": report.kept,
            "removed_unverifiable": report.removed_unverifiable,
            "removed_too_easy": report.removed_too_easy,
            "removed_too_hard": report.removed_too_hard,
        }),
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, args: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = cfg.clone();
    if let Some(tbs) = args.tbs {
        cfg.trainer.tbs = tbs;
        if cfg.trainer.mini_batch > tbs {
            cfg.trainer.mini_batch = tbs;
        }
    }
    if let Some(steps) = args.steps {
        cfg.trainer.total_steps = steps;
    }
    if let Some(lr) = args.lr {
        cfg.trainer.learning_rate = lr;
    }
    if args.qs {
        cfg.trainer.filters.qs = true;
    }
    if args.rs {
        cfg.trainer.filters.rs = true;
    }
    if args.orm {
        cfg.trainer.filters.orm = true;
    }
    std::fs::create_dir_all(&args.out_dir)?;
    let manifest_path = args.out_dir.join("manifest.json");
    let curves_path = args.out_dir.join("curves.csv");
    let params_path = args.out_dir.join("params_final.json");

    let mut manifest = RunManifest::new(
        "train",
        cfg.seed,
        cfg.workers,
        serde_json::to_value(&cfg).map_err(|e| CliError::Other(e.to_string()))?,
    );
    manifest.add_output("curves", &curves_path);
    manifest.add_output("params", &params_path);
    manifest.write(&manifest_path)?;

    let dataset = cfg.build_dataset()?;
    let params = cfg.build_policy()?;
    let trainer_cfg = cfg.build_trainer()?;
    let snapshot_every = trainer_cfg.snapshot_every;
    let total_steps = trainer_cfg.total_steps;
    log_event(
        "train-start",
        serde_json::json!({
            "steps": total_steps,
            "tbs": trainer_cfg.tbs,
            "n": trainer_cfg.n_rollouts,
            "dataset": dataset.len(),
        }),
    );

    let mut run = TrainingRun::new(trainer_cfg, dataset, params)?;
    let curves = File::create(&curves_path)?;
    let mut curves = BufWriter::new(curves);
    writeln!(curves, "{}", StepReport::CSV_HEADER)?;
    for step in 0..total_steps {
        let report = run.run_step()?;
        writeln!(curves, "{}", report.csv_row())?;
        if let Some(every) = snapshot_every {
            if (step + 1) % every == 0 {
                let snap = args
                    .out_dir
                    .join(format!("params_step_{:06}.json", step + 1));
                run.params().save(&snap)?;
            }
        }
        if step % 50 == 0 || step + 1 == total_steps {
            log_event(
                "train-step",
                serde_json::json!({
                    "step": report.step,
                    "reward": report.mean_training_reward,
                    "length": report.mean_response_length,
                    "accuracy": report.accuracy_on_train_batch,
                }),
            );
        }
    }
    curves.flush()?;
    run.params().save(&params_path)?;

    manifest.end_unix = Some(unix_now());
    manifest.write(&manifest_path)?;
    Ok(())
}

/// One scored response line, as written by `score` and read by `analyze`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub id: String,
    pub text: String,
    pub length: usize,
    #[serde(default)]
    pub truncated: bool,
    pub breakdown: RewardBreakdown,
}

#[derive(Debug, Deserialize)]
struct InputResponse {
    id: String,
    text: String,
    #[serde(default)]
    length: Option<usize>,
    #[serde(default)]
    truncated: bool,
}

fn cmd_score(cfg: &RunConfig, args: &ScoreArgs) -> Result<(), CliError> {
    if args.l_max == 0 || args.a_max == 0 {
        return Err(CliError::Other(
            "--l-max and --a-max must be at least 1".into(),
        ));
    }
    let template = PromptTemplate::by_name(&args.template)
        .ok_or_else(|| CliError::Other(format!("unknown template `{}`", args.template)))?;
    let questions = dataset::load_dataset(&args.dataset)?;
    let by_id: BTreeMap<&str, &Question> = questions.iter().map(|q| (q.id.as_str(), q)).collect();

    let mut reward_cfg = match args.mode {
        RewardMode::OutcomeOnly => rewards::RewardConfig::outcome(args.l_max),
        RewardMode::OutcomeFormat => {
            rewards::RewardConfig::outcome_format(args.l_max, template.clone())
        }
        RewardMode::Rrl => rewards::RewardConfig::rrl(args.l_max),
        RewardMode::Rra => rewards::RewardConfig::rra(args.l_max, args.a_max),
    };
    reward_cfg.template = template;
    reward_cfg.action_keywords = cfg.rewards.action_keywords.clone();

    let mut manifest = RunManifest::new(
        "score",
        cfg.seed,
        cfg.workers,
        serde_json::to_value(cfg).map_err(|e| CliError::Other(e.to_string()))?,
    );
    manifest.add_output("scored", &args.out);
    manifest.write(&manifest_path_for(&args.out))?;

    let input = File::open(&args.responses)?;
    let reader = BufReader::new(input);
    let out = File::create(&args.out)?;
    let mut out = BufWriter::new(out);
    let mut scored = 0usize;
    for (ix, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response: InputResponse =
            serde_json::from_str(&line).map_err(|e| CliError::MalformedInput {
                line: ix + 1,
                message: e.to_string(),
            })?;
        let question = by_id
            .get(response.id.as_str())
            .ok_or_else(|| CliError::IdMismatch(response.id.clone()))?;
        let length = response
            .length
            .unwrap_or_else(|| response.text.split_whitespace().count());
        let rollout = Rollout::from_text(&response.id, &response.text, length, response.truncated);
        let breakdown = rewards::score(&rollout, &question.truth, &reward_cfg)?;
        let record = ScoredRecord {
            id: response.id,
            text: response.text,
            length,
            truncated: response.truncated,
            breakdown,
        };
        serde_json::to_writer(&mut out, &record).map_err(|e| CliError::Other(e.to_string()))?;
        out.write_all(b"\n")?;
        scored += 1;
    }
    out.flush()?;

    manifest.end_unix = Some(unix_now());
    manifest.write(&manifest_path_for(&args.out))?;
    log_event("score-done", serde_json::json!({ "responses": scored }));
    Ok(())
}

fn load_scored_records(path: &Path) -> Result<Vec<ScoredRecord>, CliError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (ix, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ScoredRecord =
            serde_json::from_str(&line).map_err(|e| CliError::MalformedInput {
                line: ix + 1,
                message: e.to_string(),
            })?;
        out.push(record);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct AnalysisOutput {
    response_count: usize,
    keyword_ratios: BTreeMap<String, f64>,
    length_stats: analysis::LengthStats,
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    std::fs::create_dir_all(&args.out_dir)?;
    let analysis_path = args.out_dir.join("analysis.json");
    let curves_path = args.out_dir.join("curves.csv");
    let mut manifest = RunManifest::new("analyze", 0, 0, serde_json::Value::Null);
    manifest.add_output("analysis", &analysis_path);
    manifest.add_output("curves", &curves_path);
    manifest.write(&args.out_dir.join("manifest.json"))?;

    let records = load_scored_records(&args.responses)?;
    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    let ratios = analysis::keyword_ratios(&texts, &KeywordTaxonomy::standard());
    let rollouts: Vec<Rollout> = records
        .iter()
        .map(|r| {
            let mut rollout = Rollout::from_text(&r.id, &r.text, r.length, r.truncated);
            rollout.reward = Some(r.breakdown);
            rollout
        })
        .collect();
    let stats = analysis::length_stats(&rollouts);
    let output = AnalysisOutput {
        response_count: records.len(),
        keyword_ratios: ratios,
        length_stats: stats,
    };
    let file = File::create(&analysis_path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &output).map_err(|e| CliError::Other(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;

    let reports = match &args.reports {
        Some(path) => analysis::curve_import(path)?,
        None => Vec::new(),
    };
    analysis::curve_export(&reports, &curves_path)?;

    manifest.end_unix = Some(unix_now());
    manifest.write(&args.out_dir.join("manifest.json"))?;
    log_event(
        "analyze-done",
        serde_json::json!({ "responses": records.len() }),
    );
    Ok(())
}

fn cmd_toolrun(args: &ToolrunArgs) -> Result<(), CliError> {
    let runner: Vec<String> = args
        .runner
        .split_whitespace()
        .map(|s| s.to_string())
        .collect();
    if !(args.timeout > 0.0 && args.timeout.is_finite()) {
        return Err(CliError::Other(
            "--timeout must be a positive number of seconds".into(),
        ));
    }
    if args.max_output == 0 {
        return Err(CliError::Other(
            "--max-output must be at least 1 byte".into(),
        ));
    }
    let limits = ExecLimits {
        wall_time: Duration::from_secs_f64(args.timeout),
        output_bytes: args.max_output,
    };
    let protocol = SpliceProtocol {
        max_iterations: args.max_iter,
        ..SpliceProtocol::default()
    };
    protocol.validate()?;

    let mut transcript = String::new();
    match &args.input {
        Some(path) => {
            transcript = std::fs::read_to_string(path)?;
        }
        None => {
            std::io::stdin().read_to_string(&mut transcript)?;
        }
    }

    let mut invocations = Vec::new();
    loop {
        if invocations.len() >= protocol.max_iterations {
            log_event(
                "toolrun-capped",
                serde_json::json!({ "iterations": invocations.len() }),
            );
            break;
        }
        let blocks = toolchain::extract_code_blocks(&transcript, &protocol);
        let next = blocks.iter().find(|b| {
            let lang_ok = args.lang.as_ref().is_none_or(|l| &b.language_tag == l);
            let after = transcript[b.span.end..].trim_start();
            lang_ok && !after.starts_with(protocol.result_open.as_str())
        });
        let Some(block) = next else { break };
        let invocation =
            toolchain::run_sandboxed(&block.code, &block.language_tag, &runner, &limits)?;
        transcript = toolchain::splice_result(&transcript, &invocation, &protocol)?;
        invocations.push(invocation);
    }

    match &args.output {
        Some(path) => {
            std::fs::write(path, &transcript)?;
            let mut manifest = RunManifest::new("toolrun", 0, 0, serde_json::Value::Null);
            manifest.add_output("transcript", path);
            manifest.end_unix = Some(unix_now());
            manifest.write(&manifest_path_for(path))?;
        }
        None => {
            let mut stdout = std::io::stdout();
            stdout.write_all(transcript.as_bytes())?;
            stdout.flush()?;
        }
    }
    if let Some(log_path) = &args.log {
        let file = File::create(log_path)?;
        let mut w = BufWriter::new(file);
        for inv in &invocations {
            serde_json::to_writer(&mut w, inv).map_err(|e| CliError::Other(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    log_event(
        "toolrun-done",
        serde_json::json!({ "invocations": invocations.len() }),
    );
    Ok(())
}
