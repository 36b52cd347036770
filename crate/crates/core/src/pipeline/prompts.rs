//! Phase prompts and seed instructions.
//!
//! Every phase prompt carries a `Phase: <stage id>` line so transcripts are
//! self-describing, and every seed instruction repeats the user's request
//! after `User request:`.

use super::{SceneBounds, Stage};
use crate::phases::INFO_MARKER;
use crate::roles::RoleCard;

pub const PHASE_MARKER: &str = "Phase: ";
pub const USER_REQUEST_MARKER: &str = "User request: ";
pub const SCENE_COUNT_MARKER: &str = "Scene count: ";

fn goal(stage: Stage) -> &'static str {
    match stage {
        Stage::TaskDefinition => {
            "turn the user's request into a precise production task: what the video shows, \
             who is in it, and how long it runs"
        }
        Stage::StyleDecision => {
            "settle on one visual style for the whole video, short enough to paste into an \
             image prompt"
        }
        Stage::StoryPrompting => {
            "write the story the video tells, with a beginning, a turn and an ending, keeping \
             every character consistent"
        }
        Stage::ScriptDesign => {
            "split the story into numbered scenes, one keyframe per scene, each a concrete \
             visual description"
        }
        Stage::KeyframeDesign => {
            "produce one keyframe per scene that matches the agreed style and stays \
             consistent with the keyframes before it"
        }
        Stage::ClipGeneration => "animate every accepted keyframe into a short clip",
    }
}

fn conclusion_form(stage: Stage) -> &'static str {
    match stage {
        Stage::TaskDefinition => "one paragraph describing the task",
        Stage::StyleDecision => "the style itself, e.g. `<INFO> cartoon style`",
        Stage::StoryPrompting => "the full story as prose",
        Stage::ScriptDesign => {
            "one line per scene in the form `Scene <n>: <description>`, numbered from 1 \
             without gaps; an optional `Narration: <text>` line may follow a scene"
        }
        _ => "the final answer",
    }
}

/// The prompt shared by both agents of a phase.
pub fn phase_prompt(stage: Stage, instructor: &RoleCard, assistant: &RoleCard) -> String {
    let mut p = format!(
        "{PHASE_MARKER}{}\n\
         We are a small film studio. {} is the instructor and {} is the assistant.\n\
         Our goal in this phase: {}.\n",
        stage.id(),
        instructor.name,
        assistant.name,
        goal(stage),
    );
    if stage.is_conversation() {
        p.push_str(&format!(
            "We discuss in turns: the instructor gives one instruction, the assistant answers it. \
             When the assistant is confident in the conclusion it replies with the single word \
             {INFO_MARKER} followed by {}.\n",
            conclusion_form(stage)
        ));
    }
    p
}

/// Prompt for the keyframe-design agents (painter, director and monitor).
pub fn keyframe_prompt(painter: &RoleCard, director: &RoleCard, monitor: &RoleCard) -> String {
    format!(
        "{PHASE_MARKER}{}\n\
         We are a small film studio. {} drafts the image prompt for each keyframe, {} refines \
         composition and continuity, and {} reviews every rendered frame.\n\
         Our goal in this phase: {}.\n",
        Stage::KeyframeDesign.id(),
        painter.name,
        director.name,
        monitor.name,
        goal(Stage::KeyframeDesign),
    )
}

/// First instruction of a conversation phase.
pub fn seed_instruction(
    stage: Stage,
    task: &str,
    context: &[(String, String)],
    bounds: SceneBounds,
) -> String {
    let mut s = format!("{USER_REQUEST_MARKER}{}\n", task.trim());
    for (key, value) in context {
        s.push_str(&format!("\nAgreed {key}:\n{}\n", value.trim()));
    }
    s.push('\n');
    s.push_str(match stage {
        Stage::TaskDefinition => "Define the production task for this request.",
        Stage::StyleDecision => "Propose the visual style for this video.",
        Stage::StoryPrompting => "Write the story for this video.",
        Stage::ScriptDesign => "Write the scene-by-scene script.",
        _ => "Proceed.",
    });
    if stage == Stage::ScriptDesign {
        s.push_str(&format!(
            "\n{SCENE_COUNT_MARKER}between {} and {} scenes (aim for {}).\n\
             Format: one `Scene <n>: <description>` line per scene, numbered from 1.",
            bounds.min, bounds.max, bounds.target
        ));
    }
    s
}

/// Seed for the single script re-prompt after an unusable first script.
pub fn script_retry_instruction(base_seed: &str, problem: &str) -> String {
    format!("{base_seed}\n\nThe previous script could not be used: {problem}. Write it again.")
}

/// Prompt sent to the video generator for one scene.
pub fn clip_prompt(index: usize, scene: &str, style: &str) -> String {
    format!("Scene {index}: {}\nStyle: {}", scene.trim(), style.trim())
}
