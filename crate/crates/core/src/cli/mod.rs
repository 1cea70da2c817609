//! Command-line workflows. The `lpo` binary is a thin wrapper over [`run`].

mod config;
mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

pub use config::{AppConfig, DecoderSection, EncoderSection, DEFAULT_CONFIG};
pub use report::{delta_pp, percent, render_report};

use crate::decoder::{DecodeError, DecodeKind, Decoder};
use crate::domain::{load_dataset, split_dataset, validate_template, Dataset, PromptOrigin, PromptTemplate};
use crate::encoder::{EncodeError, Encoder};
use crate::evaluator::{EvalError, Evaluator, ResponseCache};
use crate::explorer::generate_candidates;
use crate::gateway::mock::MockProfile;
use crate::gateway::{BackendConfig, Budget, Gateway, GatewayError};
use crate::optimizer::{BudgetLimits, OptimizeError, Optimizer, RunHeader, RunRecord, StopReason};
use crate::projector::{fit_ridge, LinearProjector, PairedCorpus};
use crate::toy::ToyWorld;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "lpo", version, about = "Black-box prompt optimization by latent-space exploration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Validation,
    Test,
}

impl SplitChoice {
    fn name(self) -> &'static str {
        match self {
            SplitChoice::Validation => "validation",
            SplitChoice::Test => "test",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the optimization loop and write a run record.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Print planned call counts and exit without calling any backend.
        #[arg(long)]
        dry_run: bool,
    },
    /// Score prompts on the validation or test split.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long, value_enum, default_value = "validation")]
        split: SplitChoice,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write K explored candidates (no decoding) as JSONL.
    Explore {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seeds: PathBuf,
        #[arg(short = 'k', long = "count")]
        k: usize,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Fit a ridge projector from paired vectors.
    FitProjector {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        reg: f64,
        /// Fit an unpenalized bias term.
        #[arg(long)]
        bias: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a run record without contacting any backend.
    Report { record: PathBuf },
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum ConfigAction {
    /// Print (or write) a commented default configuration.
    Init {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Validation(Vec<String>),
    Budget(String),
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Budget(_) => EXIT_BUDGET,
            CliError::Backend(_) => EXIT_BACKEND,
        }
    }

    fn one(msg: impl Into<String>) -> Self {
        CliError::Validation(vec![msg.into()])
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(problems) => {
                for (i, p) in problems.iter().enumerate() {
                    if i > 0 {
                        writeln!(f)?;
                    }
                    write!(f, "error: {p}")?;
                }
                Ok(())
            }
            CliError::Budget(m) => write!(f, "budget exhausted: {m}"),
            CliError::Backend(m) => write!(f, "backend failure: {m}"),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::BudgetExhausted { .. } => CliError::Budget(e.to_string()),
            GatewayError::Config(_) | GatewayError::InvalidRequest(_) => CliError::one(e.to_string()),
            _ => CliError::Backend(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Gateway(g) => g.into(),
            EvalError::Partial { .. } => CliError::Budget(e.to_string()),
            EvalError::EmptySlice => CliError::one(e.to_string()),
        }
    }
}

impl From<EncodeError> for CliError {
    fn from(e: EncodeError) -> Self {
        match e {
            EncodeError::Gateway(g) => g.into(),
            EncodeError::DimensionMismatch { .. } => CliError::Backend(e.to_string()),
            _ => CliError::one(e.to_string()),
        }
    }
}

impl From<DecodeError> for CliError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::Gateway(g) => g.into(),
            _ => CliError::one(e.to_string()),
        }
    }
}

impl From<OptimizeError> for CliError {
    fn from(e: OptimizeError) -> Self {
        match e {
            OptimizeError::Encode(e) => e.into(),
            OptimizeError::Decode(e) => e.into(),
            OptimizeError::Eval(e) => e.into(),
            _ => CliError::one(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::one(format!("{}: {e}", path.display()))
}

/// Parses arguments and runs the command, writing results to `out` and
/// diagnostics to standard error. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Optimize {
            config,
            seeds,
            out_dir,
            dry_run,
        } => cmd_optimize(&config, &seeds, out_dir.as_deref(), dry_run, out),
        Command::Evaluate {
            config,
            prompts,
            split,
            out_dir,
        } => cmd_evaluate(&config, &prompts, split, out_dir.as_deref(), out),
        Command::Explore {
            config,
            seeds,
            k,
            out_dir,
        } => cmd_explore(&config, &seeds, k, out_dir.as_deref(), out),
        Command::FitProjector { pairs, reg, bias, out: path } => cmd_fit_projector(&pairs, reg, bias, &path, out),
        Command::Report { record } => cmd_report(&record, out),
        Command::Config {
            action: ConfigAction::Init { out: path },
        } => cmd_config_init(path.as_deref(), out),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptLine {
    id: String,
    text: String,
}

/// Reads `{id, text}` lines, reporting every bad line at once.
pub fn load_prompts(path: &Path) -> Result<Vec<PromptTemplate>, Vec<String>> {
    let raw = fs::read_to_string(path).map_err(|e| vec![format!("{}: {e}", path.display())])?;
    let mut prompts: Vec<PromptTemplate> = Vec::new();
    let mut problems = Vec::new();
    for (n, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let where_ = format!("{} line {}", path.display(), n + 1);
        let parsed: PromptLine = match serde_json::from_str(line) {
            Ok(p) => p,
            Err(e) => {
                problems.push(format!("{where_}: {e}"));
                continue;
            }
        };
        if parsed.id.trim().is_empty() {
            problems.push(format!("{where_}: blank id"));
            continue;
        }
        if prompts.iter().any(|p| p.id() == parsed.id) {
            problems.push(format!("{where_}: duplicate id {:?}", parsed.id));
            continue;
        }
        match validate_template(&parsed.text) {
            Ok(t) => prompts.push(t.with_id(parsed.id).with_origin(PromptOrigin::Seed)),
            Err(e) => problems.push(format!("{where_}: prompt {:?}: {e}", parsed.id)),
        }
    }
    if prompts.is_empty() && problems.is_empty() {
        problems.push(format!("{}: no prompts", path.display()));
    }
    if problems.is_empty() {
        Ok(prompts)
    } else {
        Err(problems)
    }
}

struct Loaded {
    cfg: AppConfig,
    prompts: Vec<PromptTemplate>,
}

/// Loads config and prompt file and collects every validation problem.
fn load_inputs(config: &Path, prompts: &Path) -> Result<Loaded, CliError> {
    let mut problems = Vec::new();
    let cfg = match AppConfig::load(config) {
        Ok(c) => Some(c),
        Err(e) => {
            problems.push(e);
            None
        }
    };
    let loaded = match load_prompts(prompts) {
        Ok(p) => Some(p),
        Err(e) => {
            problems.extend(e);
            None
        }
    };
    if let Some(c) = &cfg {
        problems.extend(c.problems());
        if let Some(p) = &loaded {
            problems.extend(c.optimizer_config().problems(p.len()).into_iter().map(|p| format!("optimizer: {p}")));
        }
    }
    match (cfg, loaded) {
        (Some(cfg), Some(prompts)) if problems.is_empty() => Ok(Loaded { cfg, prompts }),
        _ => Err(CliError::Validation(problems)),
    }
}

struct Splits {
    full: Dataset,
    validation: Dataset,
    test: Dataset,
}

fn load_splits(cfg: &AppConfig) -> Result<Splits, CliError> {
    let mut full = load_dataset(&cfg.dataset.path, cfg.dataset_format()).map_err(|e| io_err(&cfg.dataset.path, e))?;
    if !cfg.dataset.labels.is_empty() {
        full = full
            .with_label_set(cfg.dataset.labels.iter().map(String::as_str))
            .map_err(|e| io_err(&cfg.dataset.path, e))?;
    }
    let (validation, remainder) = split_dataset(&full, &cfg.split).map_err(|e| io_err(&cfg.dataset.path, e))?;
    let test = match &cfg.dataset.test_path {
        Some(p) => {
            let fmt = crate::domain::DatasetFormat::from_path(p);
            load_dataset(p, fmt)
                .and_then(|d| d.with_label_set(full.label_set().iter().map(String::as_str)))
                .map_err(|e| io_err(p, e))?
        }
        None => remainder,
    };
    Ok(Splits { full, validation, test })
}

fn chat_gateway(cfg: &AppConfig, b: &BackendConfig, slice: &Dataset) -> Result<Arc<Gateway>, CliError> {
    if let Some(MockProfile::Toy { target }) = &b.mock {
        let spec = cfg.toy_space().ok_or_else(|| CliError::one("toy mock profile needs the toy encoder"))?;
        let world = Arc::new(ToyWorld::new(spec.clone(), target.clone(), slice).map_err(CliError::one)?);
        return Ok(Arc::new(Gateway::new(world.backend()).with_max_in_flight(b.max_in_flight)));
    }
    Ok(Arc::new(Gateway::from_config(b)?))
}

fn build_encoder(cfg: &AppConfig) -> Result<Encoder, CliError> {
    Ok(match &cfg.encoder {
        EncoderSection::Toy { parameters, normalize } => Encoder::toy(parameters.clone(), *normalize),
        EncoderSection::Backend { spec, backend } => Encoder::new(*spec, Arc::new(Gateway::from_config(backend)?)),
    })
}

fn cache_for(cfg: &AppConfig, split: SplitChoice) -> Option<PathBuf> {
    let base = cfg.evaluator.cache_path.as_ref()?;
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "cache".into());
    let ext = base.extension().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "jsonl".into());
    Some(base.with_file_name(format!("{stem}.{}.{ext}", split.name())))
}

fn build_evaluator(cfg: &AppConfig, slice: &Dataset, split: SplitChoice) -> Result<Evaluator, CliError> {
    let e = &cfg.evaluator;
    let task = chat_gateway(cfg, &e.task_backend, slice)?;
    let extraction = chat_gateway(cfg, &e.extraction_backend, slice)?;
    let mut ev = Evaluator::new(task, extraction, e.max_examples)
        .with_temperature(e.temperature)
        .with_max_tokens(e.max_tokens);
    if let Some(p) = cache_for(cfg, split) {
        ev = ev.with_cache(ResponseCache::open(&p));
    }
    Ok(ev)
}

fn build_decoder(cfg: &AppConfig, slice: &Dataset) -> Result<Decoder, CliError> {
    let mut d = Decoder::new(cfg.decoder.strategy).with_max_tokens(cfg.evaluator.max_tokens.max(256));
    if let Some(b) = &cfg.decoder.backend {
        d = d.with_chat(chat_gateway(cfg, b, slice)?);
    }
    if let Some(spec) = cfg.toy_space() {
        d = d.with_toy_space(spec.clone());
    }
    if let Some(p) = &cfg.projector {
        d = d.with_projector(LinearProjector::load_weights(&p.path).map_err(|e| io_err(&p.path, e))?);
    } else if let (DecodeKind::SoftPrompt, Some(spec)) = (cfg.decoder.strategy.kind, cfg.toy_space()) {
        d = d.with_projector(LinearProjector::identity(spec.dimension()));
    }
    Ok(d)
}

fn budget_of(cfg: &AppConfig) -> Result<Budget, CliError> {
    Ok(Budget::new(cfg.budget.max_calls, cfg.budget.max_total_tokens)?)
}

fn out_dir(cfg: &AppConfig, flag: Option<&Path>) -> Result<PathBuf, CliError> {
    let dir = flag.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.dir.clone());
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

fn say(out: &mut dyn Write, text: impl AsRef<str>) -> Result<(), CliError> {
    out.write_all(text.as_ref().as_bytes())
        .map_err(|e| CliError::one(format!("cannot write output: {e}")))
}

pub fn cmd_optimize(
    config: &Path,
    seeds: &Path,
    out_flag: Option<&Path>,
    dry_run: bool,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let Loaded { cfg, prompts } = load_inputs(config, seeds)?;
    let splits = load_splits(&cfg)?;
    let slice = splits.validation.head(cfg.evaluator.max_examples);
    let optimizer = Optimizer::new(
        cfg.optimizer_config(),
        build_encoder(&cfg)?,
        build_decoder(&cfg, &slice)?,
        build_evaluator(&cfg, &slice, SplitChoice::Validation)?,
    );
    let budget = budget_of(&cfg)?;

    if dry_run {
        let plan = optimizer.plan(prompts.len(), &slice);
        say(
            out,
            format!(
                "planned calls (upper bound): encode {}, decode {}, refine {}, evaluate {}, total {}\n\
                 budget: {} calls, {} tokens\nseeds: {}, evaluation examples: {}\n",
                plan.encode,
                plan.decode,
                plan.refine,
                plan.evaluate,
                plan.total(),
                cfg.budget.max_calls,
                cfg.budget.max_total_tokens,
                prompts.len(),
                slice.len()
            ),
        )?;
        return Ok(());
    }

    let header = RunHeader::new(
        serde_json::to_value(&cfg).map_err(|e| CliError::one(e.to_string()))?,
        splits.full.fingerprint(),
        slice.fingerprint(),
        BudgetLimits {
            max_calls: cfg.budget.max_calls,
            max_total_tokens: cfg.budget.max_total_tokens,
        },
    );
    let record = optimizer.iterate(&prompts, &slice, &budget, header)?;
    let dir = out_dir(&cfg, out_flag)?;
    let record_path = dir.join("run_record.jsonl");
    record.write(&record_path).map_err(|e| io_err(&record_path, e))?;
    let summary = render_report(&record).map_err(CliError::one)?;
    let summary_path = dir.join("summary.txt");
    fs::write(&summary_path, &summary).map_err(|e| io_err(&summary_path, e))?;
    say(out, format!("{summary}\nrun record: {}\n", record_path.display()))?;
    if record.stop_reason() == Some(StopReason::BudgetExhausted) {
        return Err(CliError::Budget(format!(
            "run stopped early; partial record written to {}",
            record_path.display()
        )));
    }
    Ok(())
}

pub fn cmd_evaluate(
    config: &Path,
    prompts: &Path,
    split: SplitChoice,
    out_flag: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let Loaded { cfg, prompts } = load_inputs(config, prompts)?;
    let splits = load_splits(&cfg)?;
    let set = match split {
        SplitChoice::Validation => splits.validation,
        SplitChoice::Test => splits.test,
    };
    let slice = set.head(cfg.evaluator.max_examples);
    let evaluator = build_evaluator(&cfg, &slice, split)?;
    let budget = budget_of(&cfg)?;
    let mut scored = Vec::new();
    for p in &prompts {
        scored.push(evaluator.evaluate(p, &slice, &budget)?);
    }
    let dir = out_dir(&cfg, out_flag)?;
    let path = dir.join(format!("evaluate-{}.jsonl", split.name()));
    let lines: String = scored
        .iter()
        .map(|s| serde_json::to_string(s).expect("scores serialize") + "\n")
        .collect();
    fs::write(&path, lines).map_err(|e| io_err(&path, e))?;

    let width = prompts.iter().map(|p| p.id().len()).max().unwrap_or(0).max("prompt_id".len());
    let mut table = format!("{:<width$}  {:>9}\n", "prompt_id", "accuracy");
    for s in &scored {
        table.push_str(&format!("{:<width$}  {:>9}\n", s.template.id(), percent(s.accuracy)));
    }
    say(out, table)
}

pub fn cmd_explore(
    config: &Path,
    seeds: &Path,
    k: usize,
    out_flag: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    if k == 0 {
        return Err(CliError::one("K must be at least 1"));
    }
    let Loaded { cfg, prompts } = load_inputs(config, seeds)?;
    let encoder = build_encoder(&cfg)?;
    let budget = budget_of(&cfg)?;
    let encoded = encoder.encode(&prompts, &budget)?;
    let points: Vec<_> = prompts.iter().map(|p| p.id().to_string()).zip(encoded.vectors).collect();
    let mut policy = cfg.explorer.clone();
    policy.candidate_count = k;
    let candidates = generate_candidates(&points, &policy).map_err(|e| CliError::one(e.to_string()))?;
    let dir = out_dir(&cfg, out_flag)?;
    let path = dir.join("candidates.jsonl");
    let lines: String = candidates
        .iter()
        .map(|c| serde_json::to_string(c).expect("candidates serialize") + "\n")
        .collect();
    fs::write(&path, lines).map_err(|e| io_err(&path, e))?;
    say(out, format!("wrote {} candidates to {}\n", candidates.len(), path.display()))
}

pub fn cmd_fit_projector(pairs: &Path, reg: f64, bias: bool, path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus = PairedCorpus::load_jsonl(pairs).map_err(|e| io_err(pairs, e))?;
    let projector = fit_ridge(&corpus, reg, bias).map_err(|e| CliError::one(e.to_string()))?;
    projector.save_weights(path).map_err(|e| io_err(path, e))?;
    say(
        out,
        format!(
            "fitted {}x{} projector on {} pairs\nresidual sum of squares: {:e}\nwrote {}\n",
            projector.output_dim(),
            projector.input_dim(),
            corpus.len(),
            projector.residual_sum_squares(&corpus),
            path.display()
        ),
    )
}

pub fn cmd_report(path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let record = RunRecord::read(path).map_err(|e| io_err(path, e))?;
    let text = render_report(&record).map_err(CliError::one)?;
    say(out, text)
}

pub fn cmd_config_init(path: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    match path {
        None => say(out, DEFAULT_CONFIG),
        Some(p) if p.exists() => Err(CliError::one(format!("{} already exists", p.display()))),
        Some(p) => {
            fs::write(p, DEFAULT_CONFIG).map_err(|e| io_err(p, e))?;
            say(out, format!("wrote {}\n", p.display()))
        }
    }
}
