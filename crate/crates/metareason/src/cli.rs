//! Command-line surface: `run`, `bench`, `snapshot` and `puzzles`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use metareason_core::backend::{ChatBackend, HashEmbedder, MockBackend, MockScript};
use metareason_core::bandit::BanditConfig;
use metareason_core::bench::{mean_cumulative, run_policy, BenchRun, Policy};
use metareason_core::catalog::Origin;
use metareason_core::orchestrator::{Backends, Orchestrator, ReasoningTrace, TaskInput, TaskStatus};
use metareason_core::sim::game24::{sample_puzzles, Game24Checker, Split};
use metareason_core::sim::scenario::ScenarioBackend;
use metareason_core::sim::synthetic::{SyntheticLinearEnv, SyntheticSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ConfigError, RunConfig};
use crate::files::{
    prepare_output_dir, MetricsWriter, SnapshotError, SnapshotFile, TraceWriter, METRICS_FILE, SNAPSHOT_FILE,
    TRACE_FILE,
};
use crate::tasks::{write_puzzles, TaskError, TaskSource};

pub const EXIT_OK: u8 = 0;
pub const EXIT_TASK_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tasks(#[from] TaskError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

impl CliError {
    fn io(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Live,
    Mock,
}

#[derive(Debug, Parser)]
#[command(name = "metareason", version, about = "Contextual-bandit meta-reasoning controller")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run tasks through the reasoning loop.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Puzzle CSV or scenario TOML.
        #[arg(long, conflicts_with = "task", required_unless_present = "task")]
        tasks: Option<PathBuf>,
        /// A single inline task.
        #[arg(long)]
        task: Option<String>,
        #[arg(long, value_enum, default_value = "mock")]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare selection policies on a synthetic linear environment.
    Bench {
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        policy: String,
        #[arg(long, default_value_t = 2000)]
        rounds: usize,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// First run seed; runs use `seed..seed + seeds`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "mock")]
        mode: Mode,
        /// Backend settings for the live direct policy.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Inspect or verify a snapshot file.
    Snapshot {
        #[command(subcommand)]
        action: SnapshotAction,
    },
    /// Write a Game-of-24 puzzle file.
    Puzzles {
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum SnapshotAction {
    Inspect { path: PathBuf },
    RestoreCheck { path: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub enum TaskSpec {
    Inline(String),
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub config_path: Option<PathBuf>,
    pub tasks: TaskSpec,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub mode: Mode,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub traces: Vec<ReasoningTrace>,
}

impl RunOutcome {
    pub fn failed(&self) -> usize {
        self.traces.iter().filter(|t| t.status == TaskStatus::Failed).count()
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn status_name(status: TaskStatus) -> &'static str {
    match status {
        TaskStatus::Running => "running",
        TaskStatus::Solved => "solved",
        TaskStatus::Exhausted => "exhausted",
        TaskStatus::Failed => "failed",
    }
}

/// Executes a run and writes trace, metrics and snapshot under the output
/// directory. `env` resolves environment variables.
pub fn execute_run(manifest: &RunManifest, env: &dyn Fn(&str) -> Option<String>) -> Result<RunOutcome, CliError> {
    let run_config = load_config(manifest.config_path.as_deref())?;
    let source = match &manifest.tasks {
        TaskSpec::Inline(text) if text.trim().is_empty() => return Err(CliError::Usage("--task is empty".into())),
        TaskSpec::Inline(text) => TaskSource::Inline(text.clone()),
        TaskSpec::File(path) => TaskSource::load(path)?,
    };
    let mut config = run_config.orchestrator();
    let mut scenario = None;
    if let TaskSource::Scenario(script) = &source {
        if manifest.mode == Mode::Live {
            return Err(CliError::Usage("scenario files only run in mock mode".into()));
        }
        let mut script = (**script).clone();
        script.seed = manifest.seed;
        config = script.apply(&config);
        scenario = Some(script);
    }

    let live = match manifest.mode {
        Mode::Live => Some(run_config.backends.live(env)?),
        Mode::Mock => None,
    };
    let mut orchestrator = Orchestrator::new(config.clone()).map_err(|e| CliError::Usage(e.to_string()))?;

    let mock_roles = [
        &run_config.mock.generator,
        &run_config.mock.summarizer,
        &run_config.mock.meta_reasoner,
        &run_config.mock.evaluator,
    ]
    .map(|s| MockBackend::new(s.clone()));
    let scenario_backend = match &scenario {
        Some(script) => Some(ScenarioBackend::new(script.clone(), config.weights).map_err(|e| CliError::Usage(e.to_string()))?),
        None => None,
    };
    let embed_dim = if scenario.is_some() {
        HashEmbedder::DEFAULT_DIM
    } else {
        run_config.mock.embedding_dim
    };
    let hash_embedder = HashEmbedder::new(embed_dim, manifest.seed);
    let backends = match (&live, &scenario_backend) {
        (Some(l), _) => Backends {
            generator: &l.generator,
            summarizer: &l.summarizer,
            meta_reasoner: &l.meta_reasoner,
            evaluator: &l.evaluator,
            embedder: &l.embedder,
        },
        (None, Some(s)) => Backends::uniform(s, &hash_embedder),
        (None, None) => Backends {
            generator: &mock_roles[0],
            summarizer: &mock_roles[1],
            meta_reasoner: &mock_roles[2],
            evaluator: &mock_roles[3],
            embedder: &hash_embedder,
        },
    };

    let (texts, checkers): (Vec<(String, String)>, Vec<Option<Game24Checker>>) = match &source {
        TaskSource::Inline(text) => (vec![("task-0".into(), text.clone())], vec![None]),
        TaskSource::Puzzles(puzzles) => puzzles
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let [a, b, c, d] = p.numbers;
                (
                    (format!("g24-{i}-{a}-{b}-{c}-{d}"), p.task_text()),
                    Some(Game24Checker { numbers: p.numbers }),
                )
            })
            .unzip(),
        TaskSource::Scenario(_) => {
            let script = scenario.as_ref().expect("set above");
            (0..script.tasks)
                .map(|i| ((format!("{}-{i}", script.name), script.task_text.clone()), None))
                .unzip()
        }
    };

    let out = prepare_output_dir(&manifest.output_dir)
        .map_err(CliError::io(format!("cannot create {}", manifest.output_dir.display())))?;
    let header = json!({
        "tool": "metareason",
        "tool_version": env!("CARGO_PKG_VERSION"),
        "mode": manifest.mode,
        "seed": manifest.seed,
        "task_source": source.kind(),
        "task_count": texts.len(),
        "config": run_config,
        "orchestrator": config,
        "scenario": scenario,
    });
    let trace_path = out.join(TRACE_FILE);
    let mut trace = TraceWriter::create(&trace_path, header).map_err(CliError::io(trace_path.display().to_string()))?;
    let metrics_path = out.join(METRICS_FILE);
    let mut metrics = MetricsWriter::create(&metrics_path).map_err(CliError::io(metrics_path.display().to_string()))?;

    let (mut bandit, mut catalog) = orchestrator
        .fresh_state(manifest.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut traces = Vec::with_capacity(texts.len());
    for ((id, text), checker) in texts.into_iter().zip(&checkers) {
        let mut task = TaskInput::new(id, text);
        if let Some(c) = checker {
            task = task.with_checker(c);
        }
        let result = orchestrator.run_task(&task, &backends, &mut bandit, &mut catalog, &mut trace);
        trace.task(&result);
        metrics
            .task(&result)
            .map_err(CliError::io(metrics_path.display().to_string()))?;
        traces.push(result);
    }
    trace.catalog(&catalog.export(&bandit));
    trace.finish().map_err(CliError::io(trace_path.display().to_string()))?;
    metrics.finish().map_err(CliError::io(metrics_path.display().to_string()))?;
    let snapshot_path = out.join(SNAPSHOT_FILE);
    SnapshotFile::new(&bandit, &catalog)
        .write(&snapshot_path)
        .map_err(CliError::io(snapshot_path.display().to_string()))?;
    Ok(RunOutcome {
        output_dir: out,
        traces,
    })
}

/// Environment file for `bench`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchEnvFile {
    pub env: SyntheticSpec,
    #[serde(default)]
    pub bandit: BanditConfig,
    /// Scripted replies for the direct policy in mock mode.
    #[serde(default)]
    pub direct: Option<MockScript>,
}

impl BenchEnvFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(CliError::io(format!("cannot read {}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Serialize)]
struct BenchRow {
    round: usize,
    seed: u64,
    arm_id: u32,
    reward: f64,
    cumulative_reward: f64,
}

pub struct BenchOutcome {
    pub runs: Vec<BenchRun>,
    pub output_dir: Option<PathBuf>,
}

#[allow(clippy::too_many_arguments)]
pub fn execute_bench(
    env_path: &Path,
    policy: &str,
    rounds: usize,
    seeds: u64,
    first_seed: u64,
    out: Option<&Path>,
    mode: Mode,
    config_path: Option<&Path>,
    env: &dyn Fn(&str) -> Option<String>,
) -> Result<BenchOutcome, CliError> {
    let policy: Policy = policy.parse().map_err(|e: metareason_core::bench::BenchError| CliError::Usage(e.to_string()))?;
    let file = BenchEnvFile::load(env_path)?;
    let world = SyntheticLinearEnv::from_spec(&file.env).map_err(|e| CliError::Usage(e.to_string()))?;
    let mock = MockBackend::new(file.direct.clone().unwrap_or_else(|| MockScript::constant("")));
    let live = match (policy, mode) {
        (Policy::Direct, Mode::Live) => {
            let backends = load_config(config_path)?.backends;
            Some(crate::http::OpenAiClient::new(
                backends.endpoint(&backends.meta_reasoner, env)?,
                crate::http::RetryPolicy {
                    max_retries: backends.max_retries,
                    initial_backoff: std::time::Duration::from_millis(backends.backoff_ms),
                    max_backoff: std::time::Duration::from_millis(backends.max_backoff_ms),
                },
                std::time::Duration::from_secs(backends.timeout_secs),
            ))
        }
        _ => None,
    };
    let direct: Option<&dyn ChatBackend> = match &live {
        Some(client) => Some(client),
        None => Some(&mock),
    };
    let mut runs = Vec::new();
    for seed in first_seed..first_seed + seeds {
        let run = run_policy(&world, policy, rounds, seed, &file.bandit, direct)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        runs.push(run);
    }
    let output_dir = match out {
        Some(dir) => {
            let dir = prepare_output_dir(dir).map_err(CliError::io(format!("cannot create {}", dir.display())))?;
            write_bench(&dir, &runs)?;
            Some(dir)
        }
        None => None,
    };
    Ok(BenchOutcome { runs, output_dir })
}

fn write_bench(dir: &Path, runs: &[BenchRun]) -> Result<(), CliError> {
    let per_seed = dir.join("bench.csv");
    let err = |p: &Path| CliError::io(p.display().to_string());
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&per_seed).map_err(|e| CliError::Usage(e.to_string()))?;
    w.write_record(["round", "seed", "arm_id", "reward", "cumulative_reward"])
        .map_err(|e| CliError::Usage(e.to_string()))?;
    for run in runs {
        for (t, ((arm, reward), cum)) in run.arms.iter().zip(&run.rewards).zip(run.cumulative()).enumerate() {
            w.serialize(BenchRow {
                round: t + 1,
                seed: run.seed,
                arm_id: arm.0,
                reward: *reward,
                cumulative_reward: cum,
            })
            .map_err(|e| CliError::Usage(e.to_string()))?;
        }
    }
    w.flush().map_err(err(&per_seed))?;

    let aggregate = dir.join("bench_aggregate.csv");
    let mut text = String::from("round,mean_cumulative_reward\n");
    for (t, v) in mean_cumulative(runs).iter().enumerate() {
        let _ = writeln!(text, "{},{v}", t + 1);
    }
    fs::write(&aggregate, text).map_err(err(&aggregate))
}

fn inspect(file: &SnapshotFile) -> String {
    let mut text = format!(
        "round {}  arms {}  d {}\n{:>4}  {:<8}  {:>6}  {:>11}  {}\n",
        file.bandit.round,
        file.bandit.arms.len(),
        file.bandit.config.d,
        "id",
        "origin",
        "pulls",
        "mean_reward",
        "retired"
    );
    for arm in &file.bandit.arms {
        let origin = file
            .catalog
            .iter()
            .find(|e| e.arm_id == arm.id)
            .map_or("-", |e| match e.origin {
                Origin::Seed => "seed",
                Origin::Dynamic => "dynamic",
            });
        let mean = if arm.pull_count == 0 {
            "-".to_string()
        } else {
            format!("{:.4}", arm.reward_sum / arm.pull_count as f64)
        };
        let _ = writeln!(
            text,
            "{:>4}  {:<8}  {:>6}  {:>11}  {}",
            arm.id.0, origin, arm.pull_count, mean, arm.retired
        );
    }
    text
}

fn report(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn os_env(key: &str) -> Option<String> {
    std::env::var(key).ok()
}

pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run {
            config,
            tasks,
            task,
            mode,
            seed,
            out,
        } => {
            let manifest = RunManifest {
                config_path: config,
                tasks: match (tasks, task) {
                    (Some(path), _) => TaskSpec::File(path),
                    (None, Some(text)) => TaskSpec::Inline(text),
                    (None, None) => return report(EXIT_USAGE, "one of --tasks or --task is required"),
                },
                output_dir: out,
                seed,
                mode,
            };
            match execute_run(&manifest, &os_env) {
                Ok(outcome) => {
                    for t in &outcome.traces {
                        println!(
                            "{}\t{}\t{} rounds\t{}",
                            t.task_id,
                            status_name(t.status),
                            t.steps.len(),
                            t.final_answer.as_deref().unwrap_or("-")
                        );
                    }
                    println!("output: {}", outcome.output_dir.display());
                    if outcome.failed() > 0 {
                        report(EXIT_TASK_FAILURE, format!("{} task(s) failed", outcome.failed()))
                    } else {
                        ExitCode::from(EXIT_OK)
                    }
                }
                Err(e) => report(EXIT_USAGE, e),
            }
        }
        Command::Bench {
            env,
            policy,
            rounds,
            seeds,
            seed,
            out,
            mode,
            config,
        } => match execute_bench(&env, &policy, rounds, seeds, seed, out.as_deref(), mode, config.as_deref(), &os_env) {
            Ok(outcome) => {
                for run in &outcome.runs {
                    println!("{}\tseed {}\ttotal {:.4}", run.policy.name(), run.seed, run.total());
                }
                if let Some(last) = mean_cumulative(&outcome.runs).last() {
                    println!("mean cumulative reward after {rounds} rounds: {last:.4}");
                }
                if let Some(dir) = outcome.output_dir {
                    println!("output: {}", dir.display());
                }
                ExitCode::from(EXIT_OK)
            }
            Err(e) => report(EXIT_USAGE, e),
        },
        Command::Snapshot { action } => match action {
            SnapshotAction::Inspect { path } => match SnapshotFile::read(&path) {
                Ok(file) => {
                    print!("{}", inspect(&file));
                    ExitCode::from(EXIT_OK)
                }
                Err(e) => report(EXIT_USAGE, e),
            },
            SnapshotAction::RestoreCheck { path } => match SnapshotFile::read(&path).and_then(|f| f.restore_check()) {
                Ok(state) => {
                    println!("ok: {} arms at round {}", state.arm_count(), state.round());
                    ExitCode::from(EXIT_OK)
                }
                Err(e) => report(EXIT_USAGE, e),
            },
        },
        Command::Puzzles { split, count, seed, out } => {
            let which = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let puzzles = sample_puzzles(which, count, &mut rng);
            match fs::write(&out, write_puzzles(&puzzles)) {
                Ok(()) => {
                    println!("wrote {} puzzles to {}", puzzles.len(), out.display());
                    ExitCode::from(EXIT_OK)
                }
                Err(e) => report(EXIT_USAGE, format!("{}: {e}", out.display())),
            }
        }
    }
}

pub fn main() -> ExitCode {
    main_with(std::env::args_os())
}
