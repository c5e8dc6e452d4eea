//! The `promptalign` command line.

pub mod error;
pub mod server;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use promptalign::benchmark::{self, Direct, EvalOptions, Enhanced, Generator, ReportFormat, ReportTables};
use promptalign::config::GlobalConfig;
use promptalign::corpus::{self, AnyRecord, BenchmarkRecord, SchemaKind, UserPrompt};
use promptalign::curation::{self, CandidateSet, TaskStore, Templates};
use promptalign::grpo::{self, BanditEnv, RewardEnv, ToyPolicy};
use promptalign::orchestrator::{FixedEdit, MockPipelineEnv, MockT2i, Orchestrator, PolicyBackend, RewriteEdit};
use promptalign::{synth, taxonomy, util};
use rayon::prelude::*;
use serde::Serialize;

pub use error::CliError;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "promptalign", version, about = "Prompt-rewriting alignment toolkit")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides logging.level.
    #[arg(long, global = true)]
    pub log_level: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Keypoint registry.
    #[command(subcommand)]
    Taxonomy(TaxonomyCmd),
    /// Configuration.
    #[command(subcommand)]
    Config(ConfigCmd),
    /// Record files.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Training-data curation stages.
    #[command(subcommand)]
    Curate(CurateCmd),
    /// Human selection server.
    #[command(subcommand)]
    Annotate(AnnotateCmd),
    /// Policy optimization on built-in environments.
    #[command(subcommand)]
    Grpo(GrpoCmd),
    /// Rollout, judge and update loop.
    #[command(subcommand)]
    Align(AlignCmd),
    /// Keypoint accuracy benchmark.
    #[command(subcommand, alias = "benchmark")]
    Bench(BenchCmd),
}

#[derive(Subcommand, Debug)]
pub enum TaxonomyCmd {
    /// Writes the 24 keypoints as JSON lines.
    Export {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Checks the registry invariants.
    Validate,
}

#[derive(Subcommand, Debug)]
pub enum ConfigCmd {
    /// Prints every setting with its default.
    PrintDefaults,
    /// Prints the configuration after the file and environment are applied.
    Show,
}

#[derive(Args, Debug)]
pub struct CorpusInput {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// user-prompt, sft, benchmark, verdict or candidate-set.
    #[arg(long)]
    pub schema: String,
}

#[derive(Subcommand, Debug)]
pub enum CorpusCmd {
    /// Reports every invalid line.
    Validate(CorpusInput),
    /// Language, length, density and theme distributions.
    Stats(CorpusInput),
    /// Keypoint co-occurrence counts.
    Cooccurrence {
        #[command(flatten)]
        input: CorpusInput,
        #[arg(long, default_value_t = 24)]
        top_k: usize,
    },
}

#[derive(Subcommand, Debug)]
pub enum CurateCmd {
    /// Turns long descriptions into short user-style prompts.
    Simulate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        target: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Asks the teacher for reasoning and candidate rewrites.
    Generate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Candidates per prompt (default from curation.candidates_per_prompt).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use the offline teacher whatever the configuration says.
        #[arg(long)]
        hermetic: bool,
    },
    /// Drops candidates that break a filter rule.
    Filter {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-candidate verdicts as JSON lines.
        #[arg(long)]
        verdicts: Option<PathBuf>,
    },
    /// Renders candidates and files selection tasks.
    Enqueue {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        task_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        hermetic: bool,
    },
    /// Writes one training triplet per decided task.
    Finalize {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        task_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
pub enum AnnotateCmd {
    /// Serves the annotation API until interrupted.
    Serve {
        #[arg(long)]
        task_dir: Option<PathBuf>,
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainEnv {
    Bandit,
    MockPipeline,
}

#[derive(Subcommand, Debug)]
pub enum GrpoCmd {
    /// Trains a softmax policy and writes one history line per step.
    Train {
        #[arg(long, value_enum)]
        env: TrainEnv,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u32>,
        /// Bandit arms; the first arm pays.
        #[arg(long, default_value_t = 4)]
        arms: usize,
        /// Synthetic prompts for the mock pipeline.
        #[arg(long, default_value_t = 64)]
        prompts: usize,
        #[arg(long)]
        policy_out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
pub enum AlignCmd {
    /// Runs the alignment loop over a prompt set.
    Run {
        /// User prompts as JSON lines.
        #[arg(long, conflicts_with = "synthetic")]
        prompts: Option<PathBuf>,
        /// Generate this many synthetic prompts instead.
        #[arg(long)]
        synthetic: Option<usize>,
        /// Local mocks for every backend.
        #[arg(long)]
        hermetic: bool,
        /// Continue from this checkpoint directory.
        #[arg(long, conflicts_with = "checkpoint")]
        resume: Option<PathBuf>,
        /// Start a fresh checkpoint in this directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<u32>,
        /// Run report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-epoch metrics as JSON lines.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
    Csv,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Text => ReportFormat::Text,
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum BenchCmd {
    /// Generates and judges every record.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        /// Verdict log.
        #[arg(long)]
        out: PathBuf,
        /// Accuracy table.
        #[arg(long)]
        table: PathBuf,
        /// Configuration naming the backends (instead of --config).
        #[arg(long)]
        backends: Option<PathBuf>,
        /// Rewrite prompts before rendering: an edit name, or `policy` for
        /// the configured policy endpoint.
        #[arg(long)]
        rewrite: Option<String>,
        #[arg(long)]
        hermetic: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
    /// Per-keypoint deltas between two accuracy tables.
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        enhanced: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Dataset distributions and keypoint co-occurrence.
    Analyze {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

/// Parses `argv` and runs the command. Returns the process exit status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            1
        }
    }
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::new()
        .parse_filters(level)
        .format_timestamp_millis()
        .target(env_logger::Target::Stderr)
        .try_init();
}

pub fn run(cli: Cli) -> Result<()> {
    // these never read the configuration
    match &cli.command {
        Command::Config(ConfigCmd::PrintDefaults) => {
            print!("{}", GlobalConfig::defaults_document());
            return Ok(());
        }
        Command::Taxonomy(cmd) => return taxonomy_cmd(cmd),
        _ => {}
    }
    let config_path = match &cli.command {
        Command::Bench(BenchCmd::Run {
            backends: Some(p), ..
        }) => Some(p.clone()),
        _ => cli.config.clone(),
    };
    let cfg = GlobalConfig::load(config_path.as_deref())?;
    init_logging(cli.log_level.as_deref().unwrap_or(&cfg.logging.level));
    match cli.command {
        Command::Config(ConfigCmd::Show) => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Command::Config(ConfigCmd::PrintDefaults) | Command::Taxonomy(_) => unreachable!("handled above"),
        Command::Corpus(cmd) => corpus_cmd(cmd),
        Command::Curate(cmd) => curate_cmd(cmd, &cfg),
        Command::Annotate(cmd) => annotate_cmd(cmd, &cfg),
        Command::Grpo(cmd) => grpo_cmd(cmd, &cfg),
        Command::Align(cmd) => align_cmd(cmd, &cfg),
        Command::Bench(cmd) => bench_cmd(cmd, &cfg),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
    }
    fs::write(path, text).map_err(CliError::io(format!("writing {}", path.display())))
}

fn write_json_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
    }
    let ctx = || format!("writing {}", path.display());
    let mut w = BufWriter::new(File::create(path).map_err(CliError::io(ctx()))?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| CliError::io(ctx())(e.into()))?;
        w.write_all(b"\n").map_err(CliError::io(ctx()))?;
    }
    w.flush().map_err(CliError::io(ctx()))
}

fn taxonomy_cmd(cmd: &TaxonomyCmd) -> Result<()> {
    match cmd {
        TaxonomyCmd::Export { out } => {
            let text = taxonomy::export_jsonl();
            match out {
                Some(p) => write_text(p, &text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        TaxonomyCmd::Validate => {
            let report = taxonomy::validate_registry();
            if report.is_valid() {
                println!("ok: {} keypoints", taxonomy::registry().len());
                Ok(())
            } else {
                for v in &report.violations {
                    eprintln!("{v:?}");
                }
                Err(CliError::Invalid(format!("{} registry violation(s)", report.violations.len())))
            }
        }
    }
}

fn parse_schema(s: &str) -> Result<SchemaKind> {
    s.parse().map_err(CliError::Invalid)
}

fn read_any(input: &CorpusInput) -> Result<Vec<AnyRecord>> {
    let kind = parse_schema(&input.schema)?;
    AnyRecord::read_all(&input.input, kind)?
        .into_iter()
        .map(|r| r.map_err(CliError::from))
        .collect()
}

fn corpus_cmd(cmd: CorpusCmd) -> Result<()> {
    match cmd {
        CorpusCmd::Validate(input) => {
            let kind = parse_schema(&input.schema)?;
            let results = AnyRecord::read_all(&input.input, kind)?;
            let total = results.len();
            let mut failed = 0;
            for r in results {
                if let Err(e) = r {
                    failed += 1;
                    eprintln!("{e}");
                }
            }
            println!("{} valid, {failed} invalid", total - failed);
            if failed > 0 {
                return Err(CliError::Partial { failed, total });
            }
            Ok(())
        }
        CorpusCmd::Stats(input) => {
            let records = read_any(&input)?;
            let views: Vec<PromptView> = records.iter().filter_map(PromptView::of).collect();
            let report = corpus::dataset_stats(&views);
            print!("{}", report.render_table());
            println!("\n{}", serde_json::to_string(&report).expect("stats serialize"));
            Ok(())
        }
        CorpusCmd::Cooccurrence { input, top_k } => {
            let records = read_any(&input)?;
            let views: Vec<PromptView> = records.iter().filter_map(PromptView::of).collect();
            let m = corpus::cooccurrence(&views, top_k);
            println!("{}", serde_json::to_string(&m).expect("matrix serializes"));
            Ok(())
        }
    }
}

/// Borrowed prompt view of any record kind, for the statistics functions.
struct PromptView<'a>(&'a dyn corpus::PromptLike);

impl<'a> PromptView<'a> {
    fn of(r: &'a AnyRecord) -> Option<Self> {
        r.as_prompt_like().map(PromptView)
    }
}

impl corpus::PromptLike for PromptView<'_> {
    fn prompt_text(&self) -> &str {
        self.0.prompt_text()
    }
    fn language(&self) -> corpus::Language {
        self.0.language()
    }
    fn keypoints(&self) -> &[String] {
        self.0.keypoints()
    }
    fn theme(&self) -> Option<corpus::Theme> {
        self.0.theme()
    }
}

fn open_store(dir: Option<PathBuf>, cfg: &GlobalConfig) -> Result<TaskStore> {
    let dir = dir.unwrap_or_else(|| cfg.curation.task_dir.clone());
    Ok(TaskStore::open(dir)?.with_lease_ms(cfg.server.lease_ms))
}

fn curate_cmd(cmd: CurateCmd, cfg: &GlobalConfig) -> Result<()> {
    let at = util::now_ms();
    match cmd {
        CurateCmd::Simulate {
            input,
            out,
            target,
            seed,
        } => {
            let corpus: Vec<UserPrompt> = corpus::read_records(&input)?;
            let prompts = curation::simulate_prompts(&corpus, target, seed, &cfg.curation.simulate, at)?;
            corpus::write_stream(&out, &prompts)?;
            println!("{} prompts -> {}", prompts.len(), out.display());
            Ok(())
        }
        CurateCmd::Generate {
            input,
            out,
            k,
            seed,
            hermetic,
        } => {
            let prompts: Vec<UserPrompt> = corpus::read_records(&input)?;
            let teacher: Arc<dyn curation::Teacher> = if hermetic {
                Arc::new(curation::MockTeacher)
            } else {
                cfg.backends.teacher()?
            };
            let templates = Templates::load(cfg.curation.templates_dir.as_deref())?;
            let k = k.unwrap_or(cfg.curation.candidates_per_prompt);
            let results: Vec<_> = prompts
                .par_iter()
                .map(|p| {
                    curation::generate_candidates(p, teacher.as_ref(), k, &templates, cfg.curation.parse_retries, seed, at)
                })
                .collect();
            let total = results.len();
            let mut sets = Vec::with_capacity(total);
            for (p, r) in prompts.iter().zip(results) {
                match r {
                    Ok(s) => sets.push(s),
                    Err(e) => log::error!("prompt {}: {e}", p.id),
                }
            }
            corpus::write_stream(&out, &sets)?;
            println!("{} candidate sets -> {}", sets.len(), out.display());
            if sets.len() < total {
                return Err(CliError::Partial {
                    failed: total - sets.len(),
                    total,
                });
            }
            Ok(())
        }
        CurateCmd::Filter { input, out, verdicts } => {
            let sets: Vec<CandidateSet> = corpus::read_records(&input)?;
            let mut kept = Vec::with_capacity(sets.len());
            let mut log_lines = Vec::new();
            let (mut before, mut after) = (0, 0);
            for set in sets {
                before += set.candidates.len();
                let id = set.id().to_string();
                let (s, v) = curation::auto_filter(set, &cfg.curation.filter, at)?;
                after += s.candidates.len();
                log_lines.extend(v.into_iter().map(|v| serde_json::json!({"set_id": id, "verdict": v})));
                kept.push(s);
            }
            corpus::write_stream(&out, &kept)?;
            if let Some(p) = verdicts {
                write_json_lines(&p, &log_lines)?;
            }
            println!("kept {after} of {before} candidates -> {}", out.display());
            Ok(())
        }
        CurateCmd::Enqueue {
            input,
            task_dir,
            seed,
            hermetic,
        } => {
            let sets: Vec<CandidateSet> = corpus::read_records(&input)?;
            let store = open_store(task_dir, cfg)?;
            let t2i = if hermetic {
                Arc::new(MockT2i)
            } else {
                cfg.backends.t2i_backend()?
            };
            let tasks = curation::enqueue_selection(sets, t2i.as_ref(), &store, seed, at)?;
            store.flush()?;
            let s = store.stats();
            println!(
                "{} task(s) filed; store has {} open, {} done, {} flagged",
                tasks.len(),
                s.open,
                s.done,
                s.flagged
            );
            Ok(())
        }
        CurateCmd::Finalize { out, task_dir } => {
            let store = open_store(task_dir, cfg)?;
            let triplets = curation::finalize(&store.tasks(), at)?;
            corpus::write_stream(&out, &triplets)?;
            println!("{} triplets -> {}", triplets.len(), out.display());
            Ok(())
        }
    }
}

fn annotate_cmd(cmd: AnnotateCmd, cfg: &GlobalConfig) -> Result<()> {
    let AnnotateCmd::Serve {
        task_dir,
        host,
        port,
        static_dir,
    } = cmd;
    let store = Arc::new(open_store(task_dir, cfg)?);
    let host = host.unwrap_or_else(|| cfg.server.host.clone());
    let port = port.unwrap_or(cfg.server.port);
    let addr = format!("{host}:{port}")
        .parse()
        .map_err(|e| CliError::Invalid(format!("bind address {host}:{port}: {e}")))?;
    let static_dir = static_dir.or_else(|| cfg.server.static_dir.clone());
    server::serve(addr, server::AppState::new(store), static_dir).map_err(|e| CliError::Server(e.to_string()))
}

fn grpo_cmd(cmd: GrpoCmd, cfg: &GlobalConfig) -> Result<()> {
    let GrpoCmd::Train {
        env,
        out,
        seed,
        steps,
        arms,
        prompts,
        policy_out,
    } = cmd;
    let mut gc = cfg.toy_grpo();
    if let Some(s) = seed {
        gc.seed = s;
    }
    if let Some(s) = steps {
        gc.steps = s;
    }
    let environment: Box<dyn RewardEnv> = match env {
        TrainEnv::Bandit => {
            if arms < 2 {
                return Err(CliError::Invalid("--arms must be at least 2".into()));
            }
            Box::new(BanditEnv::new(arms, 0))
        }
        TrainEnv::MockPipeline => Box::new(MockPipelineEnv::new(synth::synthetic_prompts(prompts, gc.seed))),
    };
    let initial = ToyPolicy::uniform(environment.actions());
    let result = grpo::train(environment.as_ref(), initial, &gc)?;
    write_json_lines(&out, &result.history)?;
    if let Some(p) = policy_out {
        write_text(&p, &(serde_json::to_string_pretty(&result.policy).expect("policy serializes") + "\n"))?;
    }
    let last = result.history.last();
    let probs = result.policy.probs();
    let best = result.policy.greedy();
    println!(
        "{} steps; final mean reward {:.4}; most likely action {} (p = {:.4})",
        result.history.len(),
        last.map(|s| s.mean_reward).unwrap_or(0.0),
        result.policy.actions[best],
        probs[best]
    );
    Ok(())
}

fn align_cmd(cmd: AlignCmd, cfg: &GlobalConfig) -> Result<()> {
    let AlignCmd::Run {
        prompts,
        synthetic,
        hermetic,
        resume,
        checkpoint,
        seed,
        epochs,
        out,
        metrics,
    } = cmd;
    let toy = hermetic || !cfg.backends.policy_is_remote();
    let mut grpo = if toy { cfg.toy_grpo() } else { cfg.grpo.clone() };
    if let Some(s) = seed {
        grpo.seed = s;
    }
    if let Some(e) = epochs {
        grpo.epochs = e;
    }
    let prompt_set: Vec<UserPrompt> = match (prompts, synthetic) {
        (Some(p), _) => corpus::read_records(&p)?,
        (None, Some(n)) => synth::synthetic_prompts(n, grpo.seed),
        (None, None) => return Err(CliError::Invalid("give --prompts <file> or --synthetic <count>".into())),
    };
    let backends = cfg.backends.backend_set(hermetic, cfg.run.greedy)?;
    let mut run = cfg.run.clone();
    let resuming = resume.is_some();
    if let Some(dir) = resume.or(checkpoint) {
        run.checkpoint_dir = Some(dir);
    }
    let mut orchestrator = if resuming {
        Orchestrator::resume(backends, grpo, run)?
    } else {
        Orchestrator::new(backends, grpo, run)?
    };
    let report = orchestrator.run(&prompt_set)?;
    if let Some(p) = metrics {
        write_json_lines(&p, &report.epochs)?;
    }
    if let Some(p) = out {
        write_text(&p, &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
    }
    for m in &report.epochs {
        println!(
            "epoch {:>3}  mean reward {:.4}  groups {}  aborted {}  updates {}",
            m.epoch, m.mean_reward, m.groups, m.aborted, m.updates
        );
    }
    if !report.completed {
        println!("stopped early; resume with --resume");
    }
    Ok(())
}

fn bench_generator(rewrite: Option<&str>, hermetic: bool, cfg: &GlobalConfig) -> Result<Box<dyn Generator>> {
    let t2i = if hermetic {
        Arc::new(MockT2i)
    } else {
        cfg.backends.t2i_backend()?
    };
    let policy: Arc<dyn PolicyBackend> = match rewrite {
        None => return Ok(Box::new(Direct(t2i))),
        Some("policy") => match &cfg.backends.policy {
            Some(ep) if !hermetic => Arc::new(promptalign::orchestrator::ChatPolicy::new(Arc::new(
                promptalign::orchestrator::ChatClient::new(ep.clone()).map_err(promptalign::config::ConfigError::from)?,
            ))),
            _ => return Err(CliError::Invalid("--rewrite policy needs a [backends.policy] endpoint".into())),
        },
        Some(edit) => Arc::new(FixedEdit(edit.parse::<RewriteEdit>().map_err(CliError::Invalid)?)),
    };
    Ok(Box::new(Enhanced { policy, t2i }))
}

fn read_table(path: &Path) -> Result<benchmark::AccuracyTable> {
    let text = fs::read_to_string(path).map_err(CliError::io(format!("reading {}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Benchmark(benchmark::BenchmarkError::InvalidTable(format!("{}: {e}", path.display()))))
}

fn bench_cmd(cmd: BenchCmd, cfg: &GlobalConfig) -> Result<()> {
    match cmd {
        BenchCmd::Run {
            dataset,
            out,
            table,
            backends: _,
            rewrite,
            hermetic,
            seed,
            workers,
        } => {
            let records: Vec<BenchmarkRecord> = corpus::read_records(&dataset)?;
            let generator = bench_generator(rewrite.as_deref(), hermetic, cfg)?;
            let judge = if hermetic {
                Arc::new(promptalign::evaluator::OracleJudge)
            } else {
                cfg.backends.judge_backend()?
            };
            let eval = benchmark::evaluate(&records, generator.as_ref(), judge.as_ref(), &EvalOptions { seed, workers })?;
            corpus::write_stream(&out, &eval.verdicts)?;
            write_text(
                &table,
                &(serde_json::to_string_pretty(&eval.table).expect("table serializes") + "\n"),
            )?;
            for e in &eval.errored {
                eprintln!("excluded {}: {}", e.record_id, e.error);
            }
            println!(
                "{} record(s) judged, {} excluded; mean accuracy {}",
                records.len() - eval.errored.len(),
                eval.errored.len(),
                eval.table
                    .mean_accuracy()
                    .map(|a| format!("{:.1}%", a * 100.0))
                    .unwrap_or_else(|| "n/a".into())
            );
            Ok(())
        }
        BenchCmd::Compare {
            baseline,
            enhanced,
            out,
            format,
        } => {
            let b = read_table(&baseline)?;
            let e = read_table(&enhanced)?;
            let delta = benchmark::compare(&b, &e)?;
            let doc = benchmark::render_report(
                &ReportTables {
                    baseline: Some(b),
                    enhanced: Some(e),
                    delta: Some(delta),
                },
                format.into(),
            )?;
            match out {
                Some(p) => write_text(&p, &doc),
                None => {
                    print!("{doc}");
                    Ok(())
                }
            }
        }
        BenchCmd::Analyze { dataset, format } => {
            let records: Vec<BenchmarkRecord> = corpus::read_records(&dataset)?;
            let a = benchmark::analyze(&records);
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&a).expect("analytics serialize")),
                Format::Text => {
                    print!("{}", a.stats.render_table());
                    println!("\nco-occurrence (top {}):", a.cooccurrence.keypoints.len());
                    for (k, row) in a.cooccurrence.keypoints.iter().zip(&a.cooccurrence.counts) {
                        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
                        println!("{k:<26} {}", cells.join(" "));
                    }
                }
                Format::Csv => {
                    println!("keypoint_id,{}", a.cooccurrence.keypoints.join(","));
                    for (k, row) in a.cooccurrence.keypoints.iter().zip(&a.cooccurrence.counts) {
                        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
                        println!("{k},{}", cells.join(","));
                    }
                }
            }
            Ok(())
        }
    }
}
