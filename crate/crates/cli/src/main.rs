//! Command-line entry point: build, expand, report on, or resume a dataset.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::Ordering;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, ValueEnum};

use datasetagent::acquisition::SourceDescriptor;
use datasetagent::dataset_spec::TaskKind;
use datasetagent::gateway::Gateway;
use datasetagent::intake::{inspect_dataset, parse_demand, resolve_expand_target, IntakeContext, IntakeError, IntakeOutcome};
use datasetagent::metrics::parse_verdicts;
use datasetagent::pipeline::{dataset_report, read_meta, resume_run, start_run, PipelineError, RunConfig, RunOptions, RunSummary};
use datasetagent::prompts::PromptSet;

const EXIT_CLARIFY: u8 = 2;
const EXIT_ABORT: u8 = 3;
const EXIT_INTERRUPTED: u8 = 130;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Task {
    Build,
    Expand,
    Metrics,
    Resume,
}

#[derive(Debug, Parser)]
#[command(name = "datasetagent", version, about = "Builds and expands image datasets from a natural-language demand")]
struct Cli {
    /// What to do.
    #[arg(long, value_enum, default_value = "build")]
    task: Task,
    /// The dataset demand, inline.
    #[arg(long, conflicts_with = "demand_file")]
    demand: Option<String>,
    /// The dataset demand, read from a file.
    #[arg(long)]
    demand_file: Option<PathBuf>,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run workspace (state, logs, and the finished dataset under out/).
    #[arg(long)]
    workspace: Option<PathBuf>,
    /// Existing dataset root (expand, metrics).
    #[arg(long)]
    root: Option<PathBuf>,
    /// Image source: a directory, a .tsv corpus manifest, or a URL list.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Offline backends that read sidecar documents next to each image.
    #[arg(long)]
    mock_backends: bool,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run to resume; defaults to the run held in the workspace.
    #[arg(long)]
    run_id: Option<String>,
    /// Answer to a clarification question, as FIELD=VALUE. Repeatable.
    #[arg(long = "answer", value_name = "FIELD=VALUE")]
    answers: Vec<String>,
    /// Reference document attached to the demand. Repeatable.
    #[arg(long = "context-file")]
    context_files: Vec<PathBuf>,
    /// Filled-in label inspection manifest for the ALR column (metrics).
    #[arg(long)]
    verdicts: Option<PathBuf>,
}

/// Failure that maps to a specific exit code.
#[derive(Debug)]
enum Outcome {
    Clarify(Vec<(String, String)>),
    Interrupted,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Clarify(_) => write!(f, "clarification needed"),
            Self::Interrupted => write!(f, "interrupted"),
        }
    }
}

impl std::error::Error for Outcome {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(u8::from(usage_error));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.downcast_ref::<Outcome>() {
            Some(Outcome::Clarify(questions)) => {
                eprintln!("The demand needs clarification. Re-run with --answer FIELD=VALUE for:");
                for (field, q) in questions {
                    eprintln!("  {field}: {q}");
                }
                ExitCode::from(EXIT_CLARIFY)
            }
            Some(Outcome::Interrupted) => {
                eprintln!("Interrupted; the workspace is checkpointed. Continue with --task resume.");
                ExitCode::from(EXIT_INTERRUPTED)
            }
            None => {
                eprintln!("error: {e:#}");
                ExitCode::from(EXIT_ABORT)
            }
        },
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(c) = &cli.corpus {
        cfg.corpus = Some(c.clone());
    }
    if let Some(w) = &cli.workspace {
        cfg.workspace = Some(w.clone());
    }
    cfg.check()?;
    match cli.task {
        Task::Metrics => cmd_metrics(&cli),
        Task::Resume => cmd_resume(&cli, &cfg),
        Task::Build | Task::Expand => cmd_build(&cli, cfg),
    }
}

fn workspace(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.workspace.clone().ok_or_else(|| anyhow!("no workspace: pass --workspace or set `workspace` in the config"))
}

fn gateway(mock: bool, cfg: &RunConfig) -> Result<Gateway> {
    if mock {
        Ok(Gateway::mock(cfg.retry.clone()))
    } else {
        Gateway::http(&cfg.backends, cfg.retry.clone()).context("backend setup")
    }
}

fn prompts(cfg: &RunConfig) -> Result<PromptSet> {
    match &cfg.prompts_dir {
        Some(d) => PromptSet::with_overrides(d).with_context(|| format!("prompt overrides in {}", d.display())),
        None => Ok(PromptSet::builtin()),
    }
}

fn options(gateway: Gateway, prompts: PromptSet) -> Result<RunOptions> {
    let opts = RunOptions::new(gateway, prompts);
    let stop = opts.stop.clone();
    ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst)).context("installing the Ctrl-C handler")?;
    Ok(opts)
}

fn demand_text(cli: &Cli) -> Result<String> {
    match (&cli.demand, &cli.demand_file) {
        (Some(d), _) => Ok(d.clone()),
        (None, Some(p)) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        (None, None) => bail!("no demand: pass --demand or --demand-file"),
    }
}

fn parse_answers(raw: &[String]) -> Result<Vec<(String, String)>> {
    raw.iter()
        .map(|a| {
            a.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| anyhow!("--answer {a:?} is not FIELD=VALUE"))
        })
        .collect()
}

/// A run id fixed by the spec name and seed, so equal inputs give equal outputs.
fn run_id(name: &str, seed: u64) -> String {
    let safe: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
    format!("{safe}-{seed}")
}

fn finish(result: Result<RunSummary, PipelineError>) -> Result<()> {
    match result {
        Ok(s) => {
            if s.already_complete {
                eprintln!("run {} was already complete", s.run_id);
            }
            println!("{}", s.summary_line());
            Ok(())
        }
        Err(PipelineError::Interrupted) => Err(Outcome::Interrupted.into()),
        Err(e) => Err(e.into()),
    }
}

fn cmd_build(cli: &Cli, cfg: RunConfig) -> Result<()> {
    let ws = workspace(&cfg)?;
    let gw = gateway(cli.mock_backends, &cfg)?;
    let prompt_set = prompts(&cfg)?;
    let demand = demand_text(cli)?;
    if let (Task::Expand, Some(root)) = (cli.task, &cli.root) {
        // a root we cannot read is fatal, not a question for the user
        inspect_dataset(root).map_err(expand_error)?;
    }
    let context_docs = cli
        .context_files
        .iter()
        .map(|p| std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let ctx = IntakeContext {
        answers: parse_answers(&cli.answers)?,
        context_docs,
        existing_root: cli.root.clone(),
        corpus: cfg.corpus.as_ref().map(|p| SourceDescriptor::infer(p, "corpus")),
        ..IntakeContext::default()
    };
    let mut spec = match parse_demand(&demand, &gw.text, &prompt_set, &ctx)? {
        IntakeOutcome::Spec(s) => s,
        IntakeOutcome::Clarify(req) => return Err(Outcome::Clarify(req.questions()).into()),
    };
    if cli.task == Task::Expand {
        spec.task_kind = TaskKind::Expand;
    }
    let existing = if spec.task_kind == TaskKind::Expand {
        let root = spec
            .source
            .existing_root
            .clone()
            .ok_or_else(|| Outcome::Clarify(vec![("existing_root".into(), "Where is the existing dataset to expand?".into())]))?;
        let (resolved, meta) = resolve_expand_target(&spec, &root).map_err(expand_error)?;
        spec = resolved;
        Some(meta)
    } else {
        None
    };
    if spec.source.corpus.is_none() {
        bail!("no image source: pass --corpus or set `corpus` in the config");
    }
    cfg.apply_thresholds(&mut spec);
    let id = run_id(&spec.name, cfg.seed);
    log::info!("starting run {id} in {}", ws.display());
    finish(start_run(&ws, &id, spec, existing, cfg, options(gw, prompt_set)?))
}

fn expand_error(e: IntakeError) -> anyhow::Error {
    anyhow::Error::new(e).context("cannot expand the existing dataset")
}

fn cmd_resume(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let ws = workspace(cfg)?;
    // the stored config carries the backends the run started with
    let stored = read_meta(&ws).map(|m| m.config).unwrap_or_else(|_| cfg.clone());
    let gw = gateway(cli.mock_backends, &stored)?;
    finish(resume_run(&ws, cli.run_id.as_deref(), options(gw, prompts(&stored)?)?))
}

fn cmd_metrics(cli: &Cli) -> Result<()> {
    let root = cli.root.as_deref().ok_or_else(|| anyhow!("metrics needs --root"))?;
    let verdicts = match &cli.verdicts {
        Some(p) => Some(parse_verdicts(&read(p)?)?),
        None => None,
    };
    let report = dataset_report(root, None, verdicts.as_ref())?;
    print!("{}", report.to_table());
    Ok(())
}

fn read(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}
