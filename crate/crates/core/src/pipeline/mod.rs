//! The fixed stage sequence, from task definition to clip generation, as a
//! resumable run on disk.
//!
//! ```text
//! <out>/runs/<run_id>/
//!   state.json          status, completed stages, config
//!   memory/             append-only stage conclusions
//!   phases/<stage>.json transcripts and stage records
//!   keyframes/          frame_<t>.png, frame_<t>.json, index.json
//!   clips/              scene_<t>.<ext>
//!   manifest.json       clips in scene order
//!   calls.log           hosted backend calls
//! ```

pub mod prompts;

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, BackendProfile, Backends, RetryPolicy, VideoClip};
use crate::fsutil::{self, sha256_hex, DirLock};
use crate::keyframes::{
    self, write_frame, KeyframeError, KeyframeIndex, KeyframeStudio, DEFAULT_ATTEMPT_CAP,
};
use crate::memory::{MemoryError, MemoryStore};
use crate::phases::{run_phase, PhaseError, PhaseSpec};
use crate::roles::{self, make_agent, RoleBook, RoleCard, RoleError};

pub use crate::script::{parse_script, SceneSpec, Script, ScriptError};

pub const STATE_FILE: &str = "state.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CALL_LOG_FILE: &str = "calls.log";
pub const STATE_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_CLIP_CONCURRENCY: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    TaskDefinition,
    StyleDecision,
    StoryPrompting,
    ScriptDesign,
    KeyframeDesign,
    ClipGeneration,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::TaskDefinition,
        Stage::StyleDecision,
        Stage::StoryPrompting,
        Stage::ScriptDesign,
        Stage::KeyframeDesign,
        Stage::ClipGeneration,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Stage::TaskDefinition => "task_definition",
            Stage::StyleDecision => "style_decision",
            Stage::StoryPrompting => "story_prompting",
            Stage::ScriptDesign => "script_design",
            Stage::KeyframeDesign => "keyframe_design",
            Stage::ClipGeneration => "clip_generation",
        }
    }

    pub fn from_id(id: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.id() == id.trim())
    }

    /// Key under which the stage's conclusion is stored in memory.
    pub fn memory_key(self) -> &'static str {
        match self {
            Stage::TaskDefinition => "task",
            Stage::StyleDecision => "style",
            Stage::StoryPrompting => "story",
            Stage::ScriptDesign => "script",
            Stage::KeyframeDesign => "keyframes",
            Stage::ClipGeneration => "clips",
        }
    }

    /// Memory keys that must exist before the stage may run.
    pub fn inputs(self) -> &'static [&'static str] {
        match self {
            Stage::TaskDefinition => &[],
            Stage::StyleDecision => &["task"],
            Stage::StoryPrompting => &["task", "style"],
            Stage::ScriptDesign => &["task", "style", "story"],
            Stage::KeyframeDesign => &["style", "script"],
            Stage::ClipGeneration => &["style", "script", "keyframes"],
        }
    }

    /// Whether the stage is a two-agent conversation.
    pub fn is_conversation(self) -> bool {
        matches!(
            self,
            Stage::TaskDefinition
                | Stage::StyleDecision
                | Stage::StoryPrompting
                | Stage::ScriptDesign
        )
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub min: usize,
    pub max: usize,
    pub target: usize,
}

impl SceneBounds {
    pub fn exactly(n: usize) -> Self {
        Self {
            min: n,
            max: n,
            target: n,
        }
    }

    pub fn contains(&self, n: usize) -> bool {
        (self.min..=self.max).contains(&n)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    #[default]
    Short,
    Long,
}

impl GenerationMode {
    pub fn bounds(self) -> SceneBounds {
        match self {
            GenerationMode::Short => SceneBounds {
                min: 6,
                max: 14,
                target: 10,
            },
            GenerationMode::Long => SceneBounds {
                min: 15,
                max: 30,
                target: 20,
            },
        }
    }
}

impl std::str::FromStr for GenerationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "short" => Ok(Self::Short),
            "long" => Ok(Self::Long),
            other => Err(format!("unknown mode {other:?} (expected short or long)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseRoles {
    pub instructor: String,
    pub assistant: String,
}

impl PhaseRoles {
    fn new(instructor: &str, assistant: &str) -> Self {
        Self {
            instructor: instructor.into(),
            assistant: assistant.into(),
        }
    }
}

/// Which role cards speak in each stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoleAssignment {
    pub task_definition: PhaseRoles,
    pub style_decision: PhaseRoles,
    pub story_prompting: PhaseRoles,
    pub script_design: PhaseRoles,
    pub painter: String,
    pub director: String,
    pub monitor: String,
}

impl Default for RoleAssignment {
    fn default() -> Self {
        Self {
            task_definition: PhaseRoles::new(roles::CEO, roles::MOVIE_DIRECTOR),
            style_decision: PhaseRoles::new(roles::CEO, roles::MOVIE_DIRECTOR),
            story_prompting: PhaseRoles::new(roles::MOVIE_DIRECTOR, roles::SCREENWRITER),
            script_design: PhaseRoles::new(roles::MOVIE_DIRECTOR, roles::SCREENWRITER),
            painter: roles::PAINTER.into(),
            director: roles::KEYFRAME_DIRECTOR.into(),
            monitor: roles::MONITOR.into(),
        }
    }
}

impl RoleAssignment {
    pub fn conversation(&self, stage: Stage) -> Option<&PhaseRoles> {
        match stage {
            Stage::TaskDefinition => Some(&self.task_definition),
            Stage::StyleDecision => Some(&self.style_decision),
            Stage::StoryPrompting => Some(&self.story_prompting),
            Stage::ScriptDesign => Some(&self.script_design),
            _ => None,
        }
    }
}

fn default_attempt_cap() -> u32 {
    DEFAULT_ATTEMPT_CAP
}

fn default_clip_concurrency() -> usize {
    DEFAULT_CLIP_CONCURRENCY
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: String,
    #[serde(default)]
    pub generation_mode: GenerationMode,
    #[serde(default)]
    pub random_seed: u64,
    /// Overrides the mode's scene-count bounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_bounds: Option<SceneBounds>,
    #[serde(default = "default_attempt_cap")]
    pub attempt_cap: u32,
    #[serde(default = "default_clip_concurrency")]
    pub clip_concurrency: usize,
    #[serde(default)]
    pub roles: RoleAssignment,
    #[serde(default)]
    pub backends: BackendProfile,
    /// Parent of the `runs/` directory; not part of the run identity.
    #[serde(skip)]
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn new(task: impl Into<String>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            task: task.into(),
            generation_mode: GenerationMode::Short,
            random_seed: 0,
            scene_bounds: None,
            attempt_cap: DEFAULT_ATTEMPT_CAP,
            clip_concurrency: DEFAULT_CLIP_CONCURRENCY,
            roles: RoleAssignment::default(),
            backends: BackendProfile::all_mock(),
            output_dir: output_dir.into(),
        }
    }

    pub fn bounds(&self) -> SceneBounds {
        self.scene_bounds
            .unwrap_or_else(|| self.generation_mode.bounds())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.task.trim().is_empty() {
            return fail("task is empty");
        }
        let b = self.bounds();
        if b.min == 0 || b.min > b.target || b.target > b.max {
            return fail("scene bounds must satisfy 1 <= min <= target <= max");
        }
        if self.attempt_cap == 0 {
            return fail("attempt cap must be at least 1");
        }
        if self.clip_concurrency == 0 {
            return fail("clip concurrency must be at least 1");
        }
        Ok(())
    }

    /// Deterministic id: the same configuration always maps to the same run.
    pub fn run_id(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("run config serializes");
        format!("run-{}", &sha256_hex(&bytes)[..12])
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join("runs").join(self.run_id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    Running,
    Failed,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StateFile {
    schema_version: u32,
    run_id: String,
    status: RunStatus,
    completed_phases: Vec<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    failure: Option<StageFailure>,
    config: RunConfig,
    updated_at: DateTime<Utc>,
}

/// Progress of one run.
#[derive(Debug)]
pub struct RunState {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub status: RunStatus,
    pub completed_phases: Vec<Stage>,
    pub failure: Option<StageFailure>,
    pub config: RunConfig,
    pub memory: MemoryStore,
}

impl RunState {
    /// Reads `state.json` and the memory store of an existing run.
    pub fn load(run_dir: &Path) -> Result<Self, PipelineError> {
        let path = run_dir.join(STATE_FILE);
        if !path.is_file() {
            return Err(PipelineError::NotFound(run_dir.to_path_buf()));
        }
        let file: StateFile = serde_json::from_slice(&fs::read(&path)?)?;
        if !Stage::ALL.starts_with(&file.completed_phases) {
            return Err(PipelineError::Corrupt(format!(
                "completed stages {:?} are not a prefix of the stage order",
                file.completed_phases
            )));
        }
        let mut config = file.config;
        config.output_dir = run_dir
            .parent()
            .and_then(Path::parent)
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(Self {
            run_id: file.run_id,
            run_dir: run_dir.to_path_buf(),
            status: file.status,
            completed_phases: file.completed_phases,
            failure: file.failure,
            config,
            memory: MemoryStore::open(run_dir.join("memory"))?,
        })
    }

    fn save(&self) -> Result<(), PipelineError> {
        let file = StateFile {
            schema_version: STATE_SCHEMA_VERSION,
            run_id: self.run_id.clone(),
            status: self.status,
            completed_phases: self.completed_phases.clone(),
            failure: self.failure.clone(),
            config: self.config.clone(),
            updated_at: Utc::now(),
        };
        fsutil::write_json(&self.run_dir.join(STATE_FILE), &file)?;
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Complete
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Role(#[from] RoleError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error("script unusable after one re-prompt: {0}")]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Keyframe(#[from] KeyframeError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("clip for scene {scene} failed: {source}")]
    Clip {
        scene: usize,
        #[source]
        source: BackendError,
    },
    #[error("{0}")]
    Inconsistent(String),
    #[error("I/O: {0}")]
    Io(#[from] io::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("no run found at {}", .0.display())]
    NotFound(PathBuf),
    #[error("run directory is busy: {0}")]
    Locked(String),
    #[error("run state is corrupt: {0}")]
    Corrupt(String),
    #[error("backend setup failed: {0}")]
    Backend(#[from] BackendError),
    #[error("stage {stage} failed: {source}")]
    StageFailed {
        stage: Stage,
        run_dir: PathBuf,
        #[source]
        source: Box<StageError>,
    },
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("run state I/O: {0}")]
    Io(#[from] io::Error),
    #[error("run state JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    /// Errors caused by the caller's input rather than a backend or the
    /// environment.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_) | PipelineError::NotFound(_) | PipelineError::Locked(_)
        )
    }
}

/// One entry of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scene: usize,
    /// Clip path relative to the run directory.
    pub file: String,
    pub keyframe: String,
    pub sha256: String,
    pub duration_secs: f64,
}

/// Clips in playback order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub run_id: String,
    pub clips: Vec<ManifestEntry>,
    pub total_duration_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FrameRecord {
    index: usize,
    attempts: usize,
    accepted: bool,
}

/// `phases/<id>.json` for the stages that are not conversations.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct StageRecord {
    phase_id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    frames: Vec<FrameRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clips: Option<usize>,
    produced_at: DateTime<Utc>,
}

pub struct Pipeline {
    backends: Backends,
    roles: RoleBook,
    retry: RetryPolicy,
}

impl Pipeline {
    pub fn new(backends: Backends) -> Self {
        Self {
            backends,
            roles: RoleBook::builtin(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_roles(mut self, roles: RoleBook) -> Self {
        self.roles = roles;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    /// Starts the run described by `config`, or continues it if the run
    /// directory already exists. A complete run is returned untouched.
    pub fn run(&self, config: &RunConfig) -> Result<RunState, PipelineError> {
        config.validate()?;
        self.check_roles(&config.roles)?;
        let run_dir = config.run_dir();
        fs::create_dir_all(&run_dir)?;
        let _lock = lock(&run_dir)?;
        let state = if run_dir.join(STATE_FILE).is_file() {
            RunState::load(&run_dir)?
        } else {
            let state = RunState {
                run_id: config.run_id(),
                run_dir: run_dir.clone(),
                status: RunStatus::Pending,
                completed_phases: Vec::new(),
                failure: None,
                config: config.clone(),
                memory: MemoryStore::open(run_dir.join("memory"))?,
            };
            state.save()?;
            state
        };
        self.drive(state)
    }

    /// Continues a pending or failed run; completed stages are not re-run.
    pub fn resume(&self, run_dir: &Path) -> Result<RunState, PipelineError> {
        if !run_dir.join(STATE_FILE).is_file() {
            return Err(PipelineError::NotFound(run_dir.to_path_buf()));
        }
        let _lock = lock(run_dir)?;
        let state = RunState::load(run_dir)?;
        state.config.validate()?;
        self.check_roles(&state.config.roles)?;
        self.drive(state)
    }

    fn check_roles(&self, roles: &RoleAssignment) -> Result<(), PipelineError> {
        let mut names: Vec<&str> = vec![&roles.painter, &roles.director, &roles.monitor];
        for stage in Stage::ALL {
            if let Some(p) = roles.conversation(stage) {
                if p.instructor == p.assistant {
                    return Err(PipelineError::Config(format!(
                        "{stage} needs two different roles, got {:?} twice",
                        p.instructor
                    )));
                }
                names.push(&p.instructor);
                names.push(&p.assistant);
            }
        }
        for name in names {
            self.roles
                .get(name)
                .map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Ok(())
    }

    fn drive(&self, mut state: RunState) -> Result<RunState, PipelineError> {
        if state.is_complete() {
            tracing::info!(run_id = %state.run_id, "run already complete");
            return Ok(state);
        }
        self.backends
            .call_log
            .attach(&state.run_dir.join(CALL_LOG_FILE))?;
        state.status = RunStatus::Running;
        state.failure = None;
        state.save()?;

        for stage in Stage::ALL {
            if state.completed_phases.contains(&stage) {
                continue;
            }
            // A crash between the memory write and the state write leaves
            // the conclusion in memory; it counts as done.
            if state.memory.contains(stage.memory_key()) {
                state.completed_phases.push(stage);
                state.save()?;
                continue;
            }
            tracing::info!(run_id = %state.run_id, %stage, "stage started");
            if let Err(e) = self.run_stage(stage, &mut state) {
                tracing::warn!(run_id = %state.run_id, %stage, error = %e, "stage failed");
                state.status = RunStatus::Failed;
                state.failure = Some(StageFailure {
                    stage,
                    message: e.to_string(),
                });
                state.save()?;
                return Err(PipelineError::StageFailed {
                    stage,
                    run_dir: state.run_dir.clone(),
                    source: Box::new(e),
                });
            }
            state.completed_phases.push(stage);
            state.save()?;
        }
        state.status = RunStatus::Complete;
        state.save()?;
        Ok(state)
    }

    fn run_stage(&self, stage: Stage, state: &mut RunState) -> Result<(), StageError> {
        let missing: Vec<&str> = stage
            .inputs()
            .iter()
            .copied()
            .filter(|k| !state.memory.contains(k))
            .collect();
        if !missing.is_empty() {
            return Err(StageError::Inconsistent(format!(
                "inputs {missing:?} are not in memory"
            )));
        }
        let phases_dir = state.run_dir.join("phases");
        fs::create_dir_all(&phases_dir)?;
        match stage {
            Stage::KeyframeDesign => self.keyframe_stage(state, &phases_dir),
            Stage::ClipGeneration => self.clip_stage(state, &phases_dir),
            _ => self.conversation_stage(stage, state, &phases_dir),
        }
    }

    fn card(&self, name: &str) -> Result<&RoleCard, StageError> {
        Ok(self.roles.get(name)?)
    }

    fn conversation_stage(
        &self,
        stage: Stage,
        state: &mut RunState,
        phases_dir: &Path,
    ) -> Result<(), StageError> {
        let config = &state.config;
        let pair = config
            .roles
            .conversation(stage)
            .expect("conversation stages have a role pair");
        let instructor_card = self.card(&pair.instructor)?;
        let assistant_card = self.card(&pair.assistant)?;
        let phase_prompt = prompts::phase_prompt(stage, instructor_card, assistant_card);
        let spec = PhaseSpec {
            id: stage.id().into(),
            phase_prompt: phase_prompt.clone(),
            instructor_role: pair.instructor.clone(),
            assistant_role: pair.assistant.clone(),
            max_rounds: instructor_card.round_limit.min(assistant_card.round_limit),
            inputs: stage.inputs().iter().map(|s| s.to_string()).collect(),
        };
        let context = state.memory.gather(stage.inputs())?;
        let bounds = config.bounds();
        let seed = prompts::seed_instruction(stage, &config.task, &context, bounds);

        let converse = |seed: &str| -> Result<_, StageError> {
            let chat = self.backends.chat.clone();
            let mut instructor =
                make_agent(instructor_card, chat.clone(), &phase_prompt)?.with_retry(self.retry);
            let mut assistant =
                make_agent(assistant_card, chat, &phase_prompt)?.with_retry(self.retry);
            Ok(run_phase(&spec, &mut instructor, &mut assistant, seed)?)
        };

        let mut output = converse(&seed)?;
        if stage == Stage::ScriptDesign {
            let problem = match parse_script(&output.summary) {
                Ok(s) if bounds.contains(s.len()) => None,
                Ok(s) => Some(format!(
                    "it has {} scenes but must have between {} and {}",
                    s.len(),
                    bounds.min,
                    bounds.max
                )),
                Err(e) => Some(e.to_string()),
            };
            if let Some(problem) = problem {
                tracing::info!(%problem, "re-prompting the script phase");
                output.save_as(phases_dir, &format!("{}.attempt1", stage.id()))?;
                output = converse(&prompts::script_retry_instruction(&seed, &problem))?;
                // Second answer is accepted as long as it parses.
                parse_script(&output.summary)?;
            }
        }
        output.save(phases_dir)?;
        state
            .memory
            .put(stage.memory_key(), output.summary, stage.id())?;
        Ok(())
    }

    fn keyframe_stage(&self, state: &mut RunState, phases_dir: &Path) -> Result<(), StageError> {
        let config = &state.config;
        let style = state.memory.get("style")?;
        let script = parse_script(&state.memory.get("script")?)?;
        let painter_card = self.card(&config.roles.painter)?;
        let director_card = self.card(&config.roles.director)?;
        let monitor_card = self.card(&config.roles.monitor)?;
        let prompt = prompts::keyframe_prompt(painter_card, director_card, monitor_card);
        let painter =
            make_agent(painter_card, self.backends.chat.clone(), &prompt)?.with_retry(self.retry);
        let director =
            make_agent(director_card, self.backends.chat.clone(), &prompt)?.with_retry(self.retry);
        let monitor = make_agent(monitor_card, self.backends.vision.clone(), &prompt)?
            .with_retry(self.retry);
        let studio = KeyframeStudio {
            painter: &painter,
            director: &director,
            monitor: &monitor,
            images: self.backends.image_gen.as_ref(),
            attempt_cap: config.attempt_cap,
            retry: self.retry,
        };

        // Frames from an interrupted attempt are regenerated from scratch.
        let kf_dir = state.run_dir.join("keyframes");
        if kf_dir.exists() {
            fs::remove_dir_all(&kf_dir)?;
        }
        fs::create_dir_all(&kf_dir)?;
        let mut base_written = false;
        let set = studio.run_chain(&script.scenes, &style, |frame, ctx, base| {
            if !base_written {
                fsutil::write_json(&kf_dir.join(keyframes::BASE_FILE), base)?;
                base_written = true;
            }
            write_frame(&kf_dir, frame, ctx)?;
            Ok(())
        })?;
        if set.frames.len() != script.len() || set.contexts.len() != script.len() {
            return Err(StageError::Inconsistent(format!(
                "{} scenes produced {} keyframes",
                script.len(),
                set.frames.len()
            )));
        }
        let index = set.index();
        fsutil::write_json(&kf_dir.join(keyframes::INDEX_FILE), &index)?;

        let record = StageRecord {
            phase_id: Stage::KeyframeDesign.id().into(),
            frames: set
                .frames
                .iter()
                .map(|f| FrameRecord {
                    index: f.index,
                    attempts: f.review.len(),
                    accepted: f.accepted,
                })
                .collect(),
            clips: None,
            produced_at: Utc::now(),
        };
        fsutil::write_json(&phases_dir.join("keyframe_design.json"), &record)?;
        let mut bytes = serde_json::to_vec_pretty(&index)?;
        bytes.push(b'\n');
        state.memory.put_artifact(
            Stage::KeyframeDesign.memory_key(),
            "keyframes.json",
            &bytes,
            Stage::KeyframeDesign.id(),
        )?;
        Ok(())
    }

    fn clip_stage(&self, state: &mut RunState, phases_dir: &Path) -> Result<(), StageError> {
        let config = &state.config;
        let style = state.memory.get("style")?;
        let index: KeyframeIndex = serde_json::from_str(&state.memory.get("keyframes")?)?;
        let kf_dir = state.run_dir.join("keyframes");
        let mut jobs = Vec::with_capacity(index.frames.len());
        for e in &index.frames {
            let png = fs::read(kf_dir.join(&e.image))?;
            if sha256_hex(&png) != e.image_sha256 {
                return Err(StageError::Inconsistent(format!(
                    "{} does not match its recorded hash",
                    e.image
                )));
            }
            jobs.push((e.index, png, prompts::clip_prompt(e.index, &e.scene, &style)));
        }

        let clips = self.animate_all(&jobs, config.clip_concurrency)?;
        let clip_dir = state.run_dir.join("clips");
        fs::create_dir_all(&clip_dir)?;
        let mut entries = Vec::with_capacity(clips.len());
        for ((scene, _, _), clip) in jobs.iter().zip(&clips) {
            let name = format!("scene_{scene}.{}", clip.extension);
            fsutil::atomic_write(&clip_dir.join(&name), &clip.bytes)?;
            entries.push(ManifestEntry {
                scene: *scene,
                file: format!("clips/{name}"),
                keyframe: format!("keyframes/{}", keyframes::frame_png_name(*scene)),
                sha256: sha256_hex(&clip.bytes),
                duration_secs: clip.duration_secs,
            });
        }
        let manifest = Manifest {
            schema_version: 1,
            run_id: state.run_id.clone(),
            total_duration_secs: entries.iter().map(|e| e.duration_secs).sum(),
            clips: entries,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fsutil::atomic_write(&state.run_dir.join(MANIFEST_FILE), &bytes)?;
        let record = StageRecord {
            phase_id: Stage::ClipGeneration.id().into(),
            frames: Vec::new(),
            clips: Some(manifest.clips.len()),
            produced_at: Utc::now(),
        };
        fsutil::write_json(&phases_dir.join("clip_generation.json"), &record)?;
        state.memory.put_artifact(
            Stage::ClipGeneration.memory_key(),
            MANIFEST_FILE,
            &bytes,
            Stage::ClipGeneration.id(),
        )?;
        Ok(())
    }

    /// Animates every keyframe with at most `limit` calls in flight; results
    /// come back in job order.
    fn animate_all(
        &self,
        jobs: &[(usize, Vec<u8>, String)],
        limit: usize,
    ) -> Result<Vec<VideoClip>, StageError> {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<VideoClip, BackendError>>>> =
            Mutex::new(vec![None; jobs.len()]);
        let video = self.backends.video_gen.as_ref();
        std::thread::scope(|s| {
            for _ in 0..limit.min(jobs.len()).max(1) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some((_, png, prompt)) = jobs.get(i) else {
                        break;
                    };
                    let r = self.retry.run(|| video.animate(png, prompt));
                    slots.lock().unwrap()[i] = Some(r);
                });
            }
        });
        slots
            .into_inner()
            .unwrap()
            .into_iter()
            .zip(jobs)
            .map(|(slot, (scene, _, _))| {
                slot.expect("every job ran")
                    .map_err(|source| StageError::Clip {
                        scene: *scene,
                        source,
                    })
            })
            .collect()
    }
}

fn lock(run_dir: &Path) -> Result<DirLock, PipelineError> {
    DirLock::acquire(run_dir).map_err(|e| match e.kind() {
        io::ErrorKind::WouldBlock => PipelineError::Locked(e.to_string()),
        _ => PipelineError::Io(e),
    })
}

/// Builds backends from the config's profile and runs it.
pub fn run_pipeline(config: &RunConfig) -> Result<RunState, PipelineError> {
    let backends = Backends::from_profile(&config.backends, config.random_seed)?;
    Pipeline::new(backends).run(config)
}

/// Resumes a run with the backends recorded in its own state file.
pub fn resume_run(run_dir: &Path) -> Result<RunState, PipelineError> {
    let state = RunState::load(run_dir)?;
    let backends = Backends::from_profile(&state.config.backends, state.config.random_seed)?;
    drop(state);
    Pipeline::new(backends).resume(run_dir)
}

/// Run directories under `<out>/runs`, sorted by name.
pub fn list_runs(output_dir: &Path) -> io::Result<Vec<PathBuf>> {
    let runs = output_dir.join("runs");
    if !runs.is_dir() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = fs::read_dir(runs)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.join(STATE_FILE).is_file())
        .collect();
    out.sort();
    Ok(out)
}
