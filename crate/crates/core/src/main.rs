//! `cotforge`: generate chain-of-thought fine-tuning data, validate corpora,
//! replay logged searches, and report run statistics.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use cotforge::corpus::{derive_ground_truth, load_corpus, IssueTask};
use cotforge::emitter::{audit, summarize, DatasetSink, SkipRecord};
use cotforge::engine::{
    events::Event, run_subtask_search, EngineConfig, EngineError, SearchRun,
};
use cotforge::gateway::http::{BackendConfig, HttpBackend, DEFAULT_AUTH_ENV};
use cotforge::gateway::replay::ReplayBackend;
use cotforge::gateway::scripted::{Script, ScriptedBackend};
use cotforge::gateway::Backend;
use cotforge::subtasks::SubtaskKind;
use cotforge::validators::GroundTruth;

const EXIT_OK: u8 = 0;
const EXIT_FATAL: u8 = 1;
const EXIT_PARTIAL: u8 = 2;

#[derive(Parser)]
#[command(
    name = "cotforge",
    version,
    about = "Chain-of-thought data synthesis via tree search over reasoning steps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run searches over a corpus and write the dataset.
    Generate(GenerateArgs),
    /// Load a corpus and report per-task ground-truth derivability.
    Validate {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Reconstruct one logged search without network access.
    Replay {
        #[arg(long)]
        run_dir: PathBuf,
        /// Corpus path; defaults to the one recorded in the run manifest.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        task_id: String,
        #[arg(long, value_parser = parse_subtask)]
        subtask: SubtaskKind,
    },
    /// Aggregate a run directory's event logs into a stats table.
    Stats {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Re-validate every dataset record against corpus ground truth.
    Audit {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
}

#[derive(Args)]
struct GenerateArgs {
    /// Corpus root: one directory per task with task.json, repo/, gold.diff.
    #[arg(long)]
    corpus: PathBuf,
    /// Run directory for dataset, logs, manifest, and stats.
    #[arg(long)]
    out: PathBuf,
    /// Subtask to run; repeatable. Defaults to all three.
    #[arg(long, value_parser = parse_subtask)]
    subtask: Vec<SubtaskKind>,
    /// `http` or `scripted`.
    #[arg(long, default_value = "scripted")]
    backend: String,
    /// Script file for `--backend scripted`.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Chat-completion endpoint for `--backend http`.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name for `--backend http`.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    max_iterations: usize,
    #[arg(long, default_value_t = 3)]
    branching: usize,
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 10)]
    max_depth: usize,
    /// Exit 2 when the fraction of errored searches exceeds this.
    #[arg(long, default_value_t = 1.0)]
    fail_threshold: f64,
}

fn parse_subtask(s: &str) -> Result<SubtaskKind, String> {
    s.parse()
}

/// Written before any search starts; reproducing a run needs only this, the
/// corpus, and the event logs. Never contains the auth token, only the name
/// of the environment variable holding it.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    tool_version: String,
    config: EngineConfig,
    backend: String,
    http: Option<BackendConfig>,
    script: Option<PathBuf>,
    corpus: PathBuf,
    out: PathBuf,
    subtasks: Vec<SubtaskKind>,
}

enum BackendSpec {
    /// Each search gets a fresh scripted backend so per-rule use counts
    /// never couple independent searches; output is then identical for any
    /// worker count.
    Scripted(Script),
    Http(Arc<HttpBackend>),
}

impl BackendSpec {
    fn instantiate(&self) -> Box<dyn Backend + '_> {
        match self {
            BackendSpec::Scripted(script) => Box::new(ScriptedBackend::new(script.clone())),
            BackendSpec::Http(backend) => Box::new(ArcBackend(Arc::clone(backend))),
        }
    }
}

struct ArcBackend(Arc<HttpBackend>);

impl Backend for ArcBackend {
    fn complete(
        &self,
        request: &cotforge::gateway::GatewayRequest,
    ) -> Result<String, cotforge::gateway::GatewayError> {
        self.0.complete(request)
    }
    fn model_tag(&self) -> String {
        self.0.model_tag()
    }
}

struct Job<'a> {
    task: &'a IssueTask,
    gt: &'a GroundTruth,
    subtask: SubtaskKind,
}

fn run_job(job: &Job<'_>, spec: &BackendSpec, config: &EngineConfig) -> Result<SearchRun, EngineError> {
    let backend = spec.instantiate();
    run_subtask_search(job.task, job.gt, job.subtask, backend.as_ref(), config)
}

#[cfg(feature = "parallel")]
fn run_jobs<'a>(
    jobs: &[Job<'a>],
    spec: &BackendSpec,
    config: &EngineConfig,
    workers: usize,
) -> Vec<Result<SearchRun, EngineError>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("worker pool");
    pool.install(|| jobs.par_iter().map(|job| run_job(job, spec, config)).collect())
}

#[cfg(not(feature = "parallel"))]
fn run_jobs<'a>(
    jobs: &[Job<'a>],
    spec: &BackendSpec,
    config: &EngineConfig,
    _workers: usize,
) -> Vec<Result<SearchRun, EngineError>> {
    jobs.iter().map(|job| run_job(job, spec, config)).collect()
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> anyhow::Result<()> {
    let mut file = fs::File::create(path)?;
    for item in items {
        serde_json::to_writer(&mut file, item)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

fn log_name(task_id: &str, subtask: SubtaskKind) -> String {
    let safe: String = task_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}__{subtask}")
}

fn cmd_generate(args: GenerateArgs) -> anyhow::Result<u8> {
    let subtasks = if args.subtask.is_empty() {
        SubtaskKind::ALL.to_vec()
    } else {
        args.subtask.clone()
    };
    let config = EngineConfig {
        epsilon: args.epsilon,
        alpha: args.alpha,
        branching_b: args.branching,
        max_iterations_t: args.max_iterations,
        max_depth: args.max_depth,
        refinement_rounds: 1,
        seed: args.seed,
    };

    let spec = match args.backend.as_str() {
        "scripted" => {
            let path = args.script.as_ref().ok_or_else(|| {
                anyhow::anyhow!("`--backend scripted` requires `--script <file>`")
            })?;
            let text = fs::read_to_string(path)?;
            BackendSpec::Scripted(Script::from_json(&text)?)
        }
        "http" => {
            let endpoint = args
                .endpoint
                .clone()
                .ok_or_else(|| anyhow::anyhow!("`--backend http` requires `--endpoint`"))?;
            let model = args
                .model
                .clone()
                .ok_or_else(|| anyhow::anyhow!("`--backend http` requires `--model`"))?;
            let backend = HttpBackend::new(BackendConfig {
                endpoint,
                model,
                ..BackendConfig::default()
            })?;
            BackendSpec::Http(Arc::new(backend))
        }
        other => anyhow::bail!("unknown backend `{other}` (expected http or scripted)"),
    };

    let load = load_corpus(&args.corpus)?;
    for (dir, reason) in &load.skipped {
        eprintln!("skipping corpus entry {dir}: {reason}");
    }

    fs::create_dir_all(&args.out)?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        backend: args.backend.clone(),
        http: match &spec {
            BackendSpec::Http(b) => Some(BackendConfig {
                endpoint: args.endpoint.clone().unwrap_or_default(),
                model: b.model_tag(),
                auth_env_var: DEFAULT_AUTH_ENV.to_string(),
                ..BackendConfig::default()
            }),
            BackendSpec::Scripted(_) => None,
        },
        script: args.script.clone(),
        corpus: args.corpus.clone(),
        out: args.out.clone(),
        subtasks: subtasks.clone(),
    };
    fs::write(
        args.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;

    // Derive ground truth once per task; underivable tasks are skipped for
    // every subtask with the reason on record.
    let mut skips: Vec<SkipRecord> = Vec::new();
    let mut prepared: Vec<(&IssueTask, GroundTruth)> = Vec::new();
    for task in &load.tasks {
        match derive_ground_truth(task) {
            Ok(gt) => prepared.push((task, gt)),
            Err(e) => {
                for &subtask in &subtasks {
                    skips.push(SkipRecord {
                        task_id: task.task_id.clone(),
                        subtask,
                        reason: e.to_string(),
                    });
                }
            }
        }
    }

    let mut jobs = Vec::new();
    for (task, gt) in &prepared {
        for &subtask in &subtasks {
            jobs.push(Job { task, gt, subtask });
        }
    }

    let results = run_jobs(&jobs, &spec, &config, args.workers);

    let sink = DatasetSink::create(&args.out)?;
    let events_dir = args.out.join("events");
    let trees_dir = args.out.join("trees");
    fs::create_dir_all(&events_dir)?;
    fs::create_dir_all(&trees_dir)?;

    let mut errored = 0usize;
    for (job, result) in jobs.iter().zip(results) {
        let name = log_name(&job.task.task_id, job.subtask);
        match result {
            Ok(run) => {
                write_jsonl(&events_dir.join(format!("{name}.jsonl")), &run.events)?;
                fs::write(trees_dir.join(format!("{name}.txt")), run.tree.dump())?;
                if let Some(sample) = &run.outcome.sample {
                    sink.emit(sample, job.task, job.gt)?;
                }
            }
            Err(EngineError::UnusableTask { reason, .. }) => {
                skips.push(SkipRecord {
                    task_id: job.task.task_id.clone(),
                    subtask: job.subtask,
                    reason,
                });
            }
            Err(e) => {
                errored += 1;
                eprintln!("search failed for {} / {}: {e}", job.task.task_id, job.subtask);
            }
        }
    }
    write_jsonl(&args.out.join("skipped.jsonl"), &skips)?;

    let stats = summarize(&args.out)?;
    fs::write(
        args.out.join("stats.json"),
        serde_json::to_string_pretty(&stats)? + "\n",
    )?;
    print!("{}", stats.render_table());
    let (emitted, quarantined) = sink.counts();
    println!("dataset records: {emitted}, quarantined: {quarantined}");

    let total = jobs.len().max(1);
    if errored as f64 / total as f64 > args.fail_threshold {
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

fn cmd_validate(corpus: &Path) -> anyhow::Result<u8> {
    let load = load_corpus(corpus)?;
    for (dir, reason) in &load.skipped {
        println!("skip {dir}: {reason}");
    }
    for task in &load.tasks {
        match derive_ground_truth(task) {
            Ok(gt) => {
                let note = if gt.normalization_degenerate {
                    " (normalization-degenerate: patch subtask will be skipped)"
                } else {
                    ""
                };
                println!(
                    "pass {}: {} modified file(s), {} element(s){note}",
                    task.task_id,
                    gt.modified_files.len(),
                    gt.elements.len()
                );
            }
            Err(e) => println!("skip {}: {e}", task.task_id),
        }
    }
    println!("{} task(s) loaded, {} skipped", load.tasks.len(), load.skipped.len());
    Ok(EXIT_OK)
}

fn cmd_replay(
    run_dir: &Path,
    corpus_flag: Option<&Path>,
    task_id: &str,
    subtask: SubtaskKind,
) -> anyhow::Result<u8> {
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json"))?)?;
    let corpus_path = corpus_flag.unwrap_or(&manifest.corpus);
    let load = load_corpus(corpus_path)?;
    let task = load
        .tasks
        .iter()
        .find(|t| t.task_id == task_id)
        .ok_or_else(|| anyhow::anyhow!("task `{task_id}` not found in corpus"))?;
    let gt = derive_ground_truth(task)?;

    let log_path = run_dir
        .join("events")
        .join(format!("{}.jsonl", log_name(task_id, subtask)));
    let text = fs::read_to_string(&log_path)
        .map_err(|e| anyhow::anyhow!("event log {}: {e}", log_path.display()))?;
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let event: Event = serde_json::from_str(line)
            .map_err(|e| anyhow::anyhow!("event log line {}: {e}", i + 1))?;
        events.push(event);
    }
    let records = Event::call_records(&events);
    let logged_outcome = events.iter().rev().find_map(|e| match e {
        Event::Outcome { status, iterations } => Some((*status, *iterations)),
        _ => None,
    });

    let backend = ReplayBackend::new(records, "replay".to_string());
    let run = run_subtask_search(task, &gt, subtask, &backend, &manifest.config)?;

    println!("# tree");
    print!("{}", run.tree.dump());
    println!("# timeline");
    for event in &run.events {
        if !matches!(event, Event::GatewayCall { .. }) {
            println!("{}", serde_json::to_string(event)?);
        }
    }

    let replayed = (run.outcome.status, run.outcome.iterations_used);
    match logged_outcome {
        Some(logged) if logged == replayed => {
            println!("outcome verified: {:?} after {} iteration(s)", replayed.0, replayed.1);
            Ok(EXIT_OK)
        }
        Some(logged) => {
            println!("outcome MISMATCH: logged {logged:?}, replayed {replayed:?}");
            Ok(EXIT_FATAL)
        }
        None => {
            println!("event log has no outcome record");
            Ok(EXIT_FATAL)
        }
    }
}

fn cmd_stats(run_dir: &Path) -> anyhow::Result<u8> {
    let stats = summarize(run_dir)?;
    print!("{}", stats.render_table());
    println!("{}", serde_json::to_string(&stats)?);
    Ok(EXIT_OK)
}

fn cmd_audit(corpus: &Path, dataset: &Path) -> anyhow::Result<u8> {
    let load = load_corpus(corpus)?;
    let report = audit(dataset, &load.tasks)?;
    for failure in &report.failures {
        println!("fail {failure}");
    }
    println!("{}/{} record(s) pass", report.passed, report.records);
    Ok(if report.all_passed() { EXIT_OK } else { EXIT_FATAL })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Validate { corpus } => cmd_validate(&corpus),
        Command::Replay {
            run_dir,
            corpus,
            task_id,
            subtask,
        } => cmd_replay(&run_dir, corpus.as_deref(), &task_id, subtask),
        Command::Stats { run_dir } => cmd_stats(&run_dir),
        Command::Audit { corpus, dataset } => cmd_audit(&corpus, &dataset),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FATAL)
        }
    }
}
