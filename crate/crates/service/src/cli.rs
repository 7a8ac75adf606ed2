//! The `triage` command line: batch pipelines, the HTTP service and a
//! terminal chat.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::sync::Arc;

use axum::http::StatusCode;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use triage_core::backend::{BackendConfigError, BackendSpec, ChatBackend};
use triage_core::domain::{Conversation, ConversationSource, Department, EvidenceCatalog, PatientCase};
use triage_core::engine::{
    create_session, finalize_summary, handle_patient_message, EngineError, FileStore, MemoryStore, SessionPhase,
    SessionStore, TriageConfig,
};
use triage_core::eval::{
    compute_stats, evaluate_classifier, evaluate_predictions, gptscore_evaluate, labeled, read_predictions,
    split_dataset, train_baseline_classifier, Aspect, AspectScore, ClassifierOptions, DatasetStats, EvalError,
    EvalMetrics, SplitSpec,
};
use triage_core::history::{HistoryManager, TokenBudget};
use triage_core::ingest::{
    department_of, parse_department_mapping, parse_evidence_catalog, stratified_sample_indices, write_evidence_catalog,
    CaseReader, DepartmentMapping, IngestError, RowError,
};
use triage_core::par::Execution;
use triage_core::synthesis::{
    emit_training_config, format_training_samples, read_conversations, synthesize_corpus, write_conversations,
    write_jsonl, CorpusInputs, RewriteMode, SynthesisConfig, SynthesisError, TrainingOverrides, VariantBank,
    DEFAULT_MARKER,
};
use triage_core::testkit;

use crate::api;
use crate::error::{ApiError, BACKEND_UNAVAILABLE, INTERNAL_ERROR, VALIDATION_FAILED};
use crate::output::OutputSet;

#[derive(Debug, Parser)]
#[command(name = "triage", version, about = "Conversational triage: data pipelines, evaluation and the session service")]
pub struct Cli {
    /// Run batch loops on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a case release, sample it and write normalized inputs.
    Ingest(IngestArgs),
    /// Render conversations from ingested cases.
    Synthesize(SynthesizeArgs),
    /// Turn conversations into fine-tuning samples.
    Format(FormatArgs),
    /// Turn-count and token statistics per dataset.
    Stats(StatsArgs),
    #[command(subcommand)]
    Evaluate(EvaluateCommand),
    /// Write the fine-tuning hyperparameter file.
    EmitConfig(EmitConfigArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
    /// Triage session in the terminal.
    Chat(ChatArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub cases: PathBuf,
    #[arg(long)]
    pub mapping: PathBuf,
    /// Stratified sample size; every accepted case when omitted.
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip invalid rows instead of aborting.
    #[arg(long)]
    pub lenient: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum SynthMode {
    Raw,
    Artificial,
    Rewrite,
}

impl SynthMode {
    fn source(self) -> ConversationSource {
        match self {
            Self::Raw => ConversationSource::Raw,
            Self::Artificial => ConversationSource::Artificial,
            Self::Rewrite => ConversationSource::LlmRewritten,
        }
    }

    fn file_name(self) -> &'static str {
        match self {
            Self::Raw => "raw.jsonl",
            Self::Artificial => "artificial.jsonl",
            Self::Rewrite => "rewritten.jsonl",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RewriteModeArg {
    Whole,
    Turn,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Directory written by `ingest`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, required = true)]
    pub mode: Vec<SynthMode>,
    /// Variant bank; the bundled bank when omitted.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Required for `--mode rewrite`.
    #[arg(long)]
    pub backend_config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = DEFAULT_MARKER)]
    pub marker: String,
    #[arg(long, value_enum, default_value = "whole")]
    pub rewrite_mode: RewriteModeArg,
    #[arg(long, default_value_t = 0.7)]
    pub rewrite_temperature: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FormatArgs {
    /// Conversation records (JSON Lines).
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = DEFAULT_MARKER)]
    pub marker: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// A conversation file, or a directory of them.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum EvaluateCommand {
    /// Department classification on a held-out split.
    Classify(ClassifyArgs),
    /// Judge conversations on quality aspects with a backend.
    Aspects(AspectsArgs),
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// train,test,validation fractions.
    #[arg(long, default_value = "0.7,0.2,0.1")]
    pub split: SplitSpec,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub include_recommendation_turn: bool,
    /// Score `conversation_id,predicted_department` rows instead of the built-in baseline.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AspectsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, required = true)]
    pub aspect: Vec<Aspect>,
    #[arg(long)]
    pub backend_config: PathBuf,
    /// Maximum judge requests in flight.
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmitConfigArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub num_train_epochs: Option<u32>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub block_size: Option<u32>,
    #[arg(long)]
    pub per_device_batch_size: Option<u32>,
    #[arg(long)]
    pub use_lora: Option<bool>,
    #[arg(long)]
    pub lora_r: Option<u32>,
    #[arg(long)]
    pub precision: Option<String>,
    #[arg(long)]
    pub dataloader_num_workers: Option<u32>,
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    #[arg(long)]
    pub backend_config: PathBuf,
    /// `pathology<TAB>department` file naming the departments; bundled list when omitted.
    #[arg(long)]
    pub departments: Option<PathBuf>,
    #[arg(long, default_value_t = 1024)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = 256)]
    pub reserve_for_reply: usize,
    #[arg(long)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, env = "PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value = "sessions")]
    pub data_dir: PathBuf,
    /// Keep sessions in memory only.
    #[arg(long)]
    pub in_memory: bool,
    /// Allowed browser origin; any origin when omitted.
    #[arg(long)]
    pub cors_origin: Option<String>,
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    BackendConfig(#[from] BackendConfigError),
    #[error(transparent)]
    Api(#[from] ApiError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn into_api(self) -> ApiError {
        match self {
            CliError::Api(e) => e,
            CliError::Engine(e) => ApiError::from(e),
            e @ (CliError::Synthesis(SynthesisError::Backend(_)) | CliError::Eval(EvalError::Backend(_))) => {
                ApiError::new(StatusCode::BAD_GATEWAY, BACKEND_UNAVAILABLE, e.to_string())
            }
            e @ CliError::Io(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, INTERNAL_ERROR, e.to_string()),
            e => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, VALIDATION_FAILED, e.to_string()),
        }
    }
}

/// Process exit status for an error body: 3 for backend failures, 1 for
/// internal errors, 2 for everything the caller can fix.
pub fn exit_code(err: &ApiError) -> i32 {
    match err.code.as_str() {
        BACKEND_UNAVAILABLE => 3,
        INTERNAL_ERROR => 1,
        _ => 2,
    }
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|source| CliError::File { path: path.to_path_buf(), source })
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::File { path: path.to_path_buf(), source })
}

fn load_conversations(path: &Path) -> Result<Vec<Conversation>, CliError> {
    read_conversations(BufReader::new(open(path)?)).map_err(|e| match e {
        SynthesisError::MalformedRecord { line, reason } => {
            CliError::Invalid(format!("{} line {line}: {reason}", path.display()))
        }
        other => other.into(),
    })
}

fn json_pretty<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(std::io::Error::from)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn load_backend(path: &Path) -> Result<Arc<dyn ChatBackend>, CliError> {
    let text = read_to_string(path)?;
    Ok(BackendSpec::from_toml(&text)?.build())
}

/// Runs one command, reading chat input from `input` and writing human-readable
/// output to `out`.
pub fn run<R: BufRead, W: Write>(cli: Cli, input: R, out: &mut W) -> Result<(), CliError> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match cli.command {
        Command::Ingest(a) => ingest(a, out),
        Command::Synthesize(a) => synthesize(a, exec, out),
        Command::Format(a) => format(a, exec, out),
        Command::Stats(a) => stats(a, exec, out),
        Command::Evaluate(EvaluateCommand::Classify(a)) => classify(a, exec, out),
        Command::Evaluate(EvaluateCommand::Aspects(a)) => aspects(a, exec, out),
        Command::EmitConfig(a) => emit_config(a, out),
        Command::Serve(a) => serve(a),
        Command::Chat(a) => chat(a, input, out),
    }
}

#[derive(Debug, Serialize)]
struct IngestReport {
    rows_read: usize,
    rows_accepted: usize,
    rejected: Vec<RowError>,
    sample_size: usize,
    seed: u64,
    per_pathology: BTreeMap<String, usize>,
    per_department: BTreeMap<Department, usize>,
}

/// Two streaming passes over the cases file: the first validates rows and
/// records pathologies, the second keeps the sampled rows.
fn ingest<W: Write>(a: IngestArgs, out: &mut W) -> Result<(), CliError> {
    let catalog = parse_evidence_catalog(open(&a.catalog)?)?;
    let mapping_text = read_to_string(&a.mapping)?;
    let mapping = parse_department_mapping(mapping_text.as_bytes())?;

    let mut keys: Vec<Rc<str>> = Vec::new();
    let mut interned: BTreeMap<String, Rc<str>> = BTreeMap::new();
    let mut rejected = Vec::new();
    let mut accepted_rows = Vec::new();
    let mut unmapped = BTreeSet::new();
    let mut rows_read = 0;
    for item in CaseReader::new(open(&a.cases)?, &catalog)? {
        rows_read += 1;
        match item {
            Ok(case) => {
                if mapping.get(&case.pathology).is_none() {
                    unmapped.insert(case.pathology.clone());
                }
                let key = interned.entry(case.pathology.clone()).or_insert_with(|| Rc::from(case.pathology.as_str()));
                keys.push(key.clone());
                accepted_rows.push(rows_read);
            }
            Err(err) if a.lenient => rejected.push(err),
            Err(err) => return Err(IngestError::InvalidRow(err).into()),
        }
    }

    if !unmapped.is_empty() {
        return Err(IngestError::UnmappedPathologies(unmapped.into_iter().collect()).into());
    }
    let order: Vec<usize> = match a.sample {
        Some(n) => stratified_sample_indices(&keys, n, a.seed)?,
        None => (0..keys.len()).collect(),
    };
    let mut slot_of_row: HashMap<usize, usize> = HashMap::with_capacity(order.len());
    for (slot, &i) in order.iter().enumerate() {
        slot_of_row.insert(accepted_rows[i], slot);
    }
    let mut picked: Vec<Option<PatientCase>> = vec![None; order.len()];
    for (row, item) in CaseReader::new(open(&a.cases)?, &catalog)?.enumerate() {
        if let (Some(&slot), Ok(case)) = (slot_of_row.get(&(row + 1)), item) {
            picked[slot] = Some(case);
        }
    }
    let cases: Vec<PatientCase> = picked
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| CliError::Invalid(format!("{} changed while reading", a.cases.display())))?;

    let mut per_pathology = BTreeMap::new();
    let mut per_department = BTreeMap::new();
    for c in &cases {
        *per_pathology.entry(c.pathology.clone()).or_insert(0) += 1;
        *per_department.entry(department_of(c, &mapping)?).or_insert(0) += 1;
    }
    let report = IngestReport {
        rows_read,
        rows_accepted: keys.len(),
        rejected,
        sample_size: cases.len(),
        seed: a.seed,
        per_pathology,
        per_department,
    };

    let mut set = OutputSet::new();
    set.write(&a.out.join("cases.jsonl"), |w| write_jsonl(w, &cases))?;
    set.write(&a.out.join("catalog.jsonl"), |w| write_evidence_catalog(&catalog, w))?;
    set.write_bytes(&a.out.join("departments.tsv"), mapping_text.as_bytes())?;
    set.write_bytes(&a.out.join("ingest_report.json"), &json_pretty(&report)?)?;
    set.commit()?;
    writeln!(
        out,
        "read {} rows, accepted {}, rejected {}, wrote {} cases",
        report.rows_read,
        report.rows_accepted,
        report.rejected.len(),
        report.sample_size
    )?;
    Ok(())
}

fn load_cases(path: &Path) -> Result<Vec<PatientCase>, CliError> {
    let mut cases = Vec::new();
    for (i, line) in BufReader::new(open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let case = serde_json::from_str(&line)
            .map_err(|e| CliError::Invalid(format!("{} line {}: {e}", path.display(), i + 1)))?;
        cases.push(case);
    }
    Ok(cases)
}

fn load_ingested(dir: &Path) -> Result<(Vec<PatientCase>, EvidenceCatalog, DepartmentMapping), CliError> {
    let catalog = parse_evidence_catalog(open(&dir.join("catalog.jsonl"))?)?;
    let mapping = parse_department_mapping(open(&dir.join("departments.tsv"))?)?;
    let cases = load_cases(&dir.join("cases.jsonl"))?;
    mapping.check_total(&cases)?;
    Ok((cases, catalog, mapping))
}

#[derive(Debug, Serialize)]
struct SynthesisReport {
    cases: usize,
    seed: u64,
    datasets: BTreeMap<&'static str, usize>,
    rewrite_fallbacks: usize,
}

fn synthesize<W: Write>(a: SynthesizeArgs, exec: Execution, out: &mut W) -> Result<(), CliError> {
    let (cases, catalog, mapping) = load_ingested(&a.input)?;
    let bank = match &a.bank {
        Some(p) => VariantBank::from_reader(open(p)?)?,
        None => testkit::bundled_bank(),
    };
    let mut modes = a.mode.clone();
    modes.sort();
    modes.dedup();
    let backend = match (&a.backend_config, modes.contains(&SynthMode::Rewrite)) {
        (Some(p), _) => Some(load_backend(p)?),
        (None, true) => return Err(CliError::Invalid("--mode rewrite needs --backend-config".into())),
        (None, false) => None,
    };
    let cfg = SynthesisConfig {
        marker: a.marker.clone(),
        seed: a.seed,
        rewrite_temperature: a.rewrite_temperature,
        rewrite_mode: match a.rewrite_mode {
            RewriteModeArg::Whole => RewriteMode::WholeConversation,
            RewriteModeArg::Turn => RewriteMode::TurnByTurn,
        },
        ..SynthesisConfig::default()
    };
    let inputs = CorpusInputs {
        catalog: &catalog,
        mapping: &mapping,
        bank: Some(&bank),
        backend: backend.as_deref(),
    };

    let mut set = OutputSet::new();
    let mut report = SynthesisReport { cases: cases.len(), seed: a.seed, datasets: BTreeMap::new(), rewrite_fallbacks: 0 };
    for mode in modes {
        let corpus = synthesize_corpus(&cases, &inputs, mode.source(), &cfg, exec)?;
        set.write(&a.out.join(mode.file_name()), |w| write_conversations(w, &corpus.conversations))?;
        report.datasets.insert(mode.file_name(), corpus.conversations.len());
        report.rewrite_fallbacks += corpus.rewrite_fallbacks;
        writeln!(out, "{}: {} conversations", mode.file_name(), corpus.conversations.len())?;
    }
    set.write_bytes(&a.out.join("synthesis_report.json"), &json_pretty(&report)?)?;
    set.commit()?;
    if report.rewrite_fallbacks > 0 {
        writeln!(out, "rewrite fallbacks: {}", report.rewrite_fallbacks)?;
    }
    Ok(())
}

fn format<W: Write>(a: FormatArgs, exec: Execution, out: &mut W) -> Result<(), CliError> {
    let convs = load_conversations(&a.input)?;
    let cfg = SynthesisConfig { marker: a.marker, ..SynthesisConfig::default() };
    cfg.validate()?;
    let per_conv = exec.try_map(&convs, |c| format_training_samples(c, &cfg))?;
    let samples: Vec<_> = per_conv.into_iter().flatten().collect();
    let mut set = OutputSet::new();
    set.write(&a.out, |w| write_jsonl(w, &samples))?;
    set.commit()?;
    writeln!(out, "{} samples from {} conversations", samples.len(), convs.len())?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct DatasetReport {
    mean_turns: f64,
    mean_tokens: f64,
    #[serde(flatten)]
    stats: DatasetStats,
}

fn dataset_files(input: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let meta = std::fs::metadata(input).map_err(|source| CliError::File { path: input.to_path_buf(), source })?;
    if !meta.is_dir() {
        let name = input.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string();
        return Ok(vec![(name, input.to_path_buf())]);
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(input)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "jsonl") {
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            files.push((name, path));
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::Invalid(format!("no .jsonl files in {}", input.display())));
    }
    Ok(files)
}

fn stats<W: Write>(a: StatsArgs, exec: Execution, out: &mut W) -> Result<(), CliError> {
    let mut reports = BTreeMap::new();
    writeln!(out, "{:<16} {:>13} {:>10} {:>11}", "dataset", "conversations", "mean_turns", "mean_tokens")?;
    for (name, path) in dataset_files(&a.input)? {
        let convs = load_conversations(&path)?;
        let stats = compute_stats(&convs, exec);
        let total_turns: usize = stats.turn_histogram.iter().map(|(t, n)| t * n).sum();
        let mean_turns = if stats.conversations == 0 { 0.0 } else { total_turns as f64 / stats.conversations as f64 };
        let mean_tokens = stats.mean_tokens();
        writeln!(out, "{name:<16} {:>13} {mean_turns:>10.2} {mean_tokens:>11.2}", stats.conversations)?;
        reports.insert(name, DatasetReport { mean_turns, mean_tokens, stats });
    }
    if let Some(path) = &a.report {
        let mut set = OutputSet::new();
        set.write_bytes(path, &json_pretty(&reports)?)?;
        set.commit()?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ClassifyReport {
    model: &'static str,
    split: SplitSpec,
    train: usize,
    test: usize,
    validation: usize,
    include_recommendation_turn: bool,
    metrics: EvalMetrics,
}

fn classify<W: Write>(a: ClassifyArgs, exec: Execution, out: &mut W) -> Result<(), CliError> {
    let convs = load_conversations(&a.input)?;
    let spec = SplitSpec { seed: a.seed, ..a.split };
    let split = split_dataset(&convs, &spec)?;
    let test = labeled(&split.test)?;
    let (model, metrics) = match &a.predictions {
        Some(p) => ("external", evaluate_predictions(&test, &read_predictions(open(p)?)?)?),
        None => {
            let opts = ClassifierOptions { include_recommendation_turn: a.include_recommendation_turn };
            let nb = train_baseline_classifier(&labeled(&split.train)?, opts)?;
            ("naive_bayes", evaluate_classifier(&nb, &test, exec)?)
        }
    };
    writeln!(out, "train {} test {} validation {}", split.train.len(), split.test.len(), split.validation.len())?;
    for (dept, m) in &metrics.per_department {
        writeln!(out, "{:<28} precision {:.3} recall {:.3} f1 {:.3} support {}", dept.name(), m.precision, m.recall, m.f1, m.support)?;
    }
    writeln!(out, "accuracy {:.3}", metrics.accuracy)?;
    writeln!(out, "macro_f1 {:.3}", metrics.macro_f1)?;
    if let Some(path) = &a.report {
        let report = ClassifyReport {
            model,
            split: spec,
            train: split.train.len(),
            test: split.test.len(),
            validation: split.validation.len(),
            include_recommendation_turn: a.include_recommendation_turn,
            metrics,
        };
        let mut set = OutputSet::new();
        set.write_bytes(path, &json_pretty(&report)?)?;
        set.commit()?;
    }
    Ok(())
}

fn aspects<W: Write>(a: AspectsArgs, exec: Execution, out: &mut W) -> Result<(), CliError> {
    if a.concurrency == 0 {
        return Err(CliError::Invalid("--concurrency must be at least 1".into()));
    }
    let convs = load_conversations(&a.input)?;
    let backend = load_backend(&a.backend_config)?;
    let mut scores: Vec<AspectScore> = Vec::new();
    for aspect in a.aspect {
        let s = gptscore_evaluate(&convs, aspect, backend.as_ref(), a.concurrency, exec)?;
        writeln!(out, "{} {} ({}/{} yes, {} excluded)", aspect, s.formatted(), s.n_yes, s.n_evaluated, s.excluded.len())?;
        scores.push(s);
    }
    if let Some(path) = &a.report {
        let mut set = OutputSet::new();
        set.write_bytes(path, &json_pretty(&scores)?)?;
        set.commit()?;
    }
    Ok(())
}

fn emit_config<W: Write>(a: EmitConfigArgs, out: &mut W) -> Result<(), CliError> {
    let overrides = TrainingOverrides {
        num_train_epochs: a.num_train_epochs,
        learning_rate: a.learning_rate,
        block_size: a.block_size,
        per_device_batch_size: a.per_device_batch_size,
        use_lora: a.use_lora,
        lora_r: a.lora_r,
        precision: a.precision,
        dataloader_num_workers: a.dataloader_num_workers,
    };
    let (_, text) = emit_training_config(&overrides)?;
    let mut set = OutputSet::new();
    set.write_bytes(&a.out, text.as_bytes())?;
    set.commit()?;
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(())
}

/// Builds the engine configuration shared by `serve` and `chat`.
pub fn engine_setup(a: &EngineArgs) -> Result<(TriageConfig, Arc<dyn ChatBackend>), CliError> {
    let mapping = match &a.departments {
        Some(p) => parse_department_mapping(open(p)?)?,
        None => testkit::bundled_mapping(),
    };
    let budget = TokenBudget::new(a.max_tokens, a.reserve_for_reply).map_err(|e| CliError::Invalid(e.to_string()))?;
    let mut cfg = TriageConfig::new(mapping.departments());
    cfg.history = HistoryManager::new(budget);
    cfg.temperature = a.temperature;
    cfg.validate()?;
    Ok((cfg, load_backend(&a.backend_config)?))
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let (cfg, backend) = engine_setup(&a.engine)?;
    let store: Arc<dyn SessionStore> = if a.in_memory {
        Arc::new(MemoryStore::new())
    } else {
        Arc::new(FileStore::open(&a.data_dir)?)
    };
    let state = api::AppState::new(store, backend, cfg)?;
    let app = api::router(state, a.cors_origin.as_deref())?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        api::serve(listener, app, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })?;
    Ok(())
}

/// Reads patient lines from `input` until a recommendation is made, then
/// prints the summary. `/quit` ends early.
fn chat<R: BufRead, W: Write>(a: ChatArgs, input: R, out: &mut W) -> Result<(), CliError> {
    let (cfg, backend) = engine_setup(&a.engine)?;
    let mut session = create_session(&cfg)?;
    writeln!(out, "assistant: {}", session.history[0].text)?;
    let mut lines = input.lines();
    while session.phase < SessionPhase::Recommended {
        write!(out, "you: ")?;
        out.flush()?;
        let Some(line) = lines.next() else { break };
        let line = line?;
        match line.trim() {
            "" => continue,
            "/quit" => break,
            text => {
                let reply = handle_patient_message(&mut session, text, &cfg, backend.as_ref())?;
                writeln!(out, "assistant: {}", reply.text)?;
                if let Some(r) = reply.recommendation {
                    writeln!(out, "recommended department: {}", r.department)?;
                }
            }
        }
    }
    if session.phase == SessionPhase::Recommended {
        let summary = finalize_summary(&mut session, backend.as_ref())?;
        writeln!(out, "summary:")?;
        out.write_all(&json_pretty(&summary)?)?;
    }
    Ok(())
}
