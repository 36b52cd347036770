use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use dreamforge_core::metrics::{evaluate_run, MetricError};
use dreamforge_core::pipeline::{resume_run, Manifest, SceneBounds, MANIFEST_FILE};
use dreamforge_core::stats::keyframe_histogram;
use dreamforge_core::{
    BackendError, BackendProfile, Backends, GenerationMode, Pipeline, PipelineError, RunConfig,
    RunState, StyleSet,
};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "dreamforge", version, about = "Multi-agent multi-scene video studio")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a new run, or finish an interrupted one with the same settings.
    Run {
        #[arg(long)]
        task: String,
        #[arg(long, default_value = "short")]
        mode: GenerationMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Backend profile JSON; all-mock when omitted.
        #[arg(long)]
        backend_profile: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Fix the scene count instead of using the mode's range.
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Continue a run from its first unfinished stage.
    Resume {
        /// Run id under `<out>/runs`, or a run directory.
        run: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Use these backends instead of the ones recorded in the run.
        #[arg(long)]
        backend_profile: Option<PathBuf>,
    },
    /// Score a run's keyframes and write a metric report.
    Evaluate {
        run_dir: PathBuf,
        #[arg(long)]
        backend_profile: Option<PathBuf>,
        /// Report path; defaults to `<run_dir>/report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Keyframe-count histogram over a directory of runs.
    Stats { runs_dir: PathBuf },
    /// Validate a backend profile without calling any backend.
    CheckProfile { file: PathBuf },
}

/// A failed command: exit code 1 for caller mistakes, 2 for backend or
/// runtime failures.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn user(e: impl Display) -> Self {
        Self { code: 1, message: e.to_string() }
    }

    fn runtime(e: impl Display) -> Self {
        Self { code: 2, message: e.to_string() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match &e {
            PipelineError::Backend(BackendError::Config(_)) => Self::user(e),
            _ if e.is_user_error() => Self::user(e),
            _ => Self::runtime(e),
        }
    }
}

impl From<MetricError> for Failure {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::RunLayout(_) | MetricError::InvalidStyles(_) => Self::user(e),
            _ => Self::runtime(e),
        }
    }
}

fn load_profile(path: Option<&Path>) -> Result<BackendProfile, Failure> {
    match path {
        Some(p) => BackendProfile::load(p).map_err(Failure::user),
        None => Ok(BackendProfile::all_mock()),
    }
}

fn run_summary(state: &RunState) -> Value {
    let manifest: Option<Manifest> = std::fs::read(state.run_dir.join(MANIFEST_FILE))
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok());
    json!({
        "run_id": state.run_id,
        "run_dir": state.run_dir,
        "status": state.status,
        "completed_phases": state.completed_phases,
        "manifest": manifest,
    })
}

fn run_text(state: &RunState) -> String {
    let mut out = format!(
        "run {} {:?}\n  dir: {}\n  stages: {}/6\n",
        state.run_id,
        state.status,
        state.run_dir.display(),
        state.completed_phases.len()
    );
    if state.is_complete() {
        out.push_str(&format!("  manifest: {}\n", state.run_dir.join(MANIFEST_FILE).display()));
    }
    out
}

fn execute(command: Command, as_json: bool) -> Result<String, Failure> {
    let emit = |value: Value, text: String| {
        if as_json {
            serde_json::to_string_pretty(&value).expect("JSON values serialize") + "\n"
        } else {
            text
        }
    };
    match command {
        Command::Run { task, mode, seed, backend_profile, out, scenes } => {
            let mut config = RunConfig::new(task, &out);
            config.generation_mode = mode;
            config.random_seed = seed;
            config.scene_bounds = scenes.map(SceneBounds::exactly);
            config.backends = load_profile(backend_profile.as_deref())?;
            let state = dreamforge_core::run_pipeline(&config)?;
            Ok(emit(run_summary(&state), run_text(&state)))
        }
        Command::Resume { run, out, backend_profile } => {
            let given = PathBuf::from(&run);
            let run_dir = if given.is_dir() { given } else { out.join("runs").join(&run) };
            let state = match backend_profile {
                None => resume_run(&run_dir)?,
                Some(p) => {
                    let profile = load_profile(Some(&p))?;
                    let seed = RunState::load(&run_dir)?.config.random_seed;
                    let backends = Backends::from_profile(&profile, seed).map_err(Failure::user)?;
                    Pipeline::new(backends).resume(&run_dir)?
                }
            };
            Ok(emit(run_summary(&state), run_text(&state)))
        }
        Command::Evaluate { run_dir, backend_profile, report } => {
            if !run_dir.is_dir() {
                return Err(Failure::user(format!("{} is not a directory", run_dir.display())));
            }
            // Prefer an explicit profile, then the one the run was made with.
            let (profile, seed) = match (&backend_profile, RunState::load(&run_dir)) {
                (Some(p), _) => (load_profile(Some(p))?, 0),
                (None, Ok(state)) => (state.config.backends, state.config.random_seed),
                (None, Err(_)) => (BackendProfile::all_mock(), 0),
            };
            let backends = Backends::from_profile(&profile, seed).map_err(Failure::user)?;
            let (metrics, path) = evaluate_run(
                &run_dir,
                backends.embed.as_ref(),
                backends.vision.as_ref(),
                &StyleSet::default(),
                report.as_deref(),
            )?;
            let value = serde_json::to_value(&metrics).map_err(Failure::runtime)?;
            Ok(emit(
                json!({ "report": path, "metrics": value }),
                format!("{}report: {}\n", metrics.summary_text(), path.display()),
            ))
        }
        Command::Stats { runs_dir } => {
            let hist = keyframe_histogram(&runs_dir).map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    Failure::user(e)
                } else {
                    Failure::runtime(e)
                }
            })?;
            let value = serde_json::to_value(&hist).map_err(Failure::runtime)?;
            Ok(emit(value, hist.table()))
        }
        Command::CheckProfile { file } => {
            let profile = load_profile(Some(&file))?;
            let issues = profile.check();
            let value = json!({
                "file": file,
                "ok": issues.is_empty(),
                "issues": issues
                    .iter()
                    .map(|i| json!({ "capability": i.capability, "message": i.message }))
                    .collect::<Vec<_>>(),
            });
            let text = if issues.is_empty() {
                format!("{}: ok\n", file.display())
            } else {
                issues
                    .iter()
                    .map(|i| format!("{}: {}: {}\n", file.display(), i.capability, i.message))
                    .collect()
            };
            let rendered = emit(value, text);
            if issues.is_empty() {
                Ok(rendered)
            } else {
                Err(Failure { code: 1, message: rendered.trim_end().to_string() })
            }
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match execute(cli.command, cli.json) {
        Ok(output) => {
            print!("{output}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            if cli.json && f.message.starts_with('{') {
                println!("{}", f.message);
            } else if cli.json {
                println!("{}", json!({ "error": f.message, "exit_code": f.code }));
            } else {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}
