//! Multi-agent studio engine: role-played agents in bounded conversations
//! produce a script, a chain of consistent keyframes and one clip per scene,
//! plus metrics for cross-scene consistency.

pub mod backends;
pub mod fsutil;
pub mod keyframes;
pub mod memory;
pub mod metrics;
pub mod phases;
pub mod pipeline;
pub mod roles;
pub mod script;
pub mod stats;

pub use backends::{
    BackendError, BackendProfile, Backends, ChatBackend, EmbedBackend, Embedding, FaceRegion,
    ImageGenBackend, RetryPolicy, VideoGenBackend, VisionBackend,
};
pub use keyframes::{BaseDescription, ContextEnv, Keyframe, KeyframeRequest, KeyframeSet};
pub use memory::{MemoryEntry, MemoryStore};
pub use metrics::{MetricReport, StyleCategory, StyleSet};
pub use phases::{extract_info_summary, run_phase, PhaseOutput, PhaseSpec, Transcript};
pub use pipeline::{
    run_pipeline, GenerationMode, Pipeline, PipelineError, RunConfig, RunState, RunStatus, Stage,
};
pub use roles::{make_agent, render_system_prompt, Agent, RoleBook, RoleCard};
pub use script::{parse_script, SceneSpec, Script};
