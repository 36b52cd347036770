//! One phase: a bounded two-agent conversation ending in an `<INFO>` summary.
//!
//! The instructor opens with a seed instruction, the assistant answers, and
//! the two alternate until the assistant's reply carries `<INFO>` followed by
//! a conclusion. If the round budget runs out first, one forced-summary turn
//! asks the assistant to conclude.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendError;
use crate::fsutil;
use crate::roles::ChatAgent;

pub const INFO_MARKER: &str = "<INFO>";

#[derive(Debug, Error)]
pub enum PhaseError {
    #[error("invalid phase spec {id:?}: {reason}")]
    InvalidSpec { id: String, reason: String },
    #[error("phase {phase_id:?} failed after {} rounds: {source}", partial.rounds_used)]
    Failed {
        phase_id: String,
        partial: Transcript,
        #[source]
        source: BackendError,
    },
    #[error("phase {phase_id:?} ended without any summary")]
    NoSummary {
        phase_id: String,
        transcript: Transcript,
    },
    #[error("phase output I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("phase output JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub id: String,
    pub phase_prompt: String,
    pub instructor_role: String,
    pub assistant_role: String,
    pub max_rounds: u32,
    /// Memory keys this phase reads.
    pub inputs: Vec<String>,
}

impl PhaseSpec {
    pub fn validate(&self) -> Result<(), PhaseError> {
        let fail = |reason: &str| {
            Err(PhaseError::InvalidSpec {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.id.trim().is_empty() {
            return fail("id is empty");
        }
        if self.instructor_role == self.assistant_role {
            return fail("instructor and assistant must be different roles");
        }
        if self.max_rounds == 0 {
            return fail("max_rounds must be at least 1");
        }
        Ok(())
    }
}

/// One exchange: the instructor's instruction and the assistant's response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub instruction: String,
    pub response: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub turns: Vec<Turn>,
    pub terminated_by_info: bool,
    pub rounds_used: u32,
    /// Whether the last turn was the forced-summary fallback.
    #[serde(default)]
    pub forced_summary: bool,
}

impl Transcript {
    fn push(&mut self, instruction: String, response: String) {
        self.turns.push(Turn {
            instruction,
            response,
        });
        self.rounds_used = self.turns.len() as u32;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseOutput {
    pub phase_id: String,
    pub summary: String,
    pub transcript: Transcript,
    pub produced_at: DateTime<Utc>,
}

impl PhaseOutput {
    /// Writes `<dir>/<phase_id>.json`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, PhaseError> {
        self.save_as(dir, &self.phase_id)
    }

    pub fn save_as(&self, dir: &Path, stem: &str) -> Result<PathBuf, PhaseError> {
        let path = dir.join(format!("{stem}.json"));
        fsutil::write_json(&path, self)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self, PhaseError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Trimmed text after the first `<INFO>` marker; `None` if there is no
/// marker or nothing follows it.
pub fn extract_info_summary(response: &str) -> Option<String> {
    let (_, rest) = response.split_once(INFO_MARKER)?;
    let payload = rest.trim();
    (!payload.is_empty()).then(|| payload.to_string())
}

/// Instruction issued once the round budget is spent.
pub fn forced_summary_instruction(max_rounds: u32) -> String {
    format!(
        "We have used all {max_rounds} rounds of this discussion. Stop discussing now. \
         Reply with the single word {INFO_MARKER} followed by your best conclusion so far."
    )
}

/// Runs the conversation described by `spec`.
///
/// `instructor` and `assistant` must have been built with `spec.phase_prompt`
/// for the roles the spec names.
pub fn run_phase(
    spec: &PhaseSpec,
    instructor: &mut ChatAgent,
    assistant: &mut ChatAgent,
    seed_instruction: &str,
) -> Result<PhaseOutput, PhaseError> {
    spec.validate()?;
    let invalid = |reason: String| PhaseError::InvalidSpec {
        id: spec.id.clone(),
        reason,
    };
    if seed_instruction.trim().is_empty() {
        return Err(invalid("seed instruction is empty".into()));
    }
    if instructor.name() != spec.instructor_role || assistant.name() != spec.assistant_role {
        return Err(invalid(format!(
            "agents ({}, {}) do not match roles ({}, {})",
            instructor.name(),
            assistant.name(),
            spec.instructor_role,
            spec.assistant_role
        )));
    }

    let mut transcript = Transcript::default();
    let failed = |transcript: &Transcript, source| PhaseError::Failed {
        phase_id: spec.id.clone(),
        partial: transcript.clone(),
        source,
    };

    let mut instruction = seed_instruction.to_string();
    instructor.record_own(&instruction);
    let mut summary = None;
    for round in 1..=spec.max_rounds {
        let response = assistant
            .step(&instruction)
            .map_err(|e| failed(&transcript, e))?;
        summary = extract_info_summary(&response);
        transcript.push(instruction, response.clone());
        if summary.is_some() {
            transcript.terminated_by_info = true;
            break;
        }
        if round == spec.max_rounds {
            break;
        }
        instruction = instructor
            .step(&response)
            .map_err(|e| failed(&transcript, e))?;
    }

    if summary.is_none() {
        let forced = forced_summary_instruction(spec.max_rounds);
        let response = assistant
            .step(&forced)
            .map_err(|e| failed(&transcript, e))?;
        summary = extract_info_summary(&response);
        transcript.terminated_by_info = summary.is_some();
        transcript.forced_summary = true;
        if summary.is_none() {
            // Still no marker: fall back to the whole reply.
            let whole = response.trim();
            summary = (!whole.is_empty()).then(|| whole.to_string());
        }
        transcript.push(forced, response);
    }

    match summary {
        Some(summary) => Ok(PhaseOutput {
            phase_id: spec.id.clone(),
            summary,
            transcript,
            produced_at: Utc::now(),
        }),
        None => Err(PhaseError::NoSummary {
            phase_id: spec.id.clone(),
            transcript,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::ScriptedChat;
    use crate::backends::{ChatBackend, RetryPolicy};
    use crate::roles::{make_agent, RoleBook, CEO, MOVIE_DIRECTOR};
    use std::sync::Arc;

    /// Independent scan: locate the marker by byte search, not `split_once`.
    fn oracle_summary(s: &str) -> Option<String> {
        let bytes = s.as_bytes();
        let m = INFO_MARKER.as_bytes();
        let pos = (0..=bytes.len().checked_sub(m.len())?).find(|&i| &bytes[i..i + m.len()] == m)?;
        let rest = s[pos + m.len()..].trim();
        if rest.is_empty() {
            None
        } else {
            Some(rest.to_string())
        }
    }

    fn spec(max_rounds: u32) -> PhaseSpec {
        PhaseSpec {
            id: "style_decision".into(),
            phase_prompt: "Phase: style_decision".into(),
            instructor_role: CEO.into(),
            assistant_role: MOVIE_DIRECTOR.into(),
            max_rounds,
            inputs: vec![],
        }
    }

    fn agents(
        instr: Vec<&str>,
        asst: Vec<&str>,
    ) -> (ChatAgent, ChatAgent, Arc<ScriptedChat>, Arc<ScriptedChat>) {
        let book = RoleBook::builtin();
        let mi = Arc::new(ScriptedChat::new(instr));
        let ma = Arc::new(ScriptedChat::new(asst));
        let bi: Arc<dyn ChatBackend> = mi.clone();
        let ba: Arc<dyn ChatBackend> = ma.clone();
        let i = make_agent(book.get(CEO).unwrap(), bi, "Phase: style_decision")
            .unwrap()
            .with_retry(RetryPolicy::immediate(3));
        let a = make_agent(book.get(MOVIE_DIRECTOR).unwrap(), ba, "Phase: style_decision")
            .unwrap()
            .with_retry(RetryPolicy::immediate(3));
        (i, a, mi, ma)
    }

    #[test]
    fn summary_examples() {
        assert_eq!(
            extract_info_summary("<INFO> cartoon style").as_deref(),
            Some("cartoon style")
        );
        assert_eq!(extract_info_summary("no marker here"), None);
        assert_eq!(extract_info_summary("<INFO>   "), None);
        assert_eq!(extract_info_summary("<info> lower"), None);
        let mid = "fine. <INFO> oil painting, muted palette";
        assert_eq!(extract_info_summary(mid), oracle_summary(mid));
        assert_eq!(
            extract_info_summary(mid).as_deref(),
            Some("oil painting, muted palette")
        );
    }

    #[test]
    fn only_first_marker_splits() {
        let s = "<INFO> a <INFO> b";
        assert_eq!(extract_info_summary(s).as_deref(), Some("a <INFO> b"));
    }

    #[test]
    fn terminates_on_first_info() {
        let (mut i, mut a, mi, ma) = agents(vec!["unused"], vec!["<INFO> cartoon style"]);
        let out = run_phase(&spec(5), &mut i, &mut a, "Pick a style.").unwrap();
        assert_eq!(out.summary, "cartoon style");
        assert_eq!(out.transcript.rounds_used, 1);
        assert!(out.transcript.terminated_by_info);
        assert!(!out.transcript.forced_summary);
        assert_eq!(mi.calls(), 0);
        assert_eq!(ma.calls(), 1);
    }

    #[test]
    fn budget_exhaustion_forces_one_summary_turn() {
        let (mut i, mut a, mi, ma) = agents(
            vec!["more?", "and?"],
            vec!["idea 1", "idea 2", "idea 3", "<INFO> watercolor"],
        );
        let out = run_phase(&spec(3), &mut i, &mut a, "Pick a style.").unwrap();
        assert_eq!(out.transcript.rounds_used, 4);
        assert!(out.transcript.terminated_by_info);
        assert!(out.transcript.forced_summary);
        assert_eq!(out.summary, "watercolor");
        assert_eq!(mi.calls(), 2);
        assert_eq!(ma.calls(), 4);
        assert_eq!(
            out.transcript.turns[3].instruction,
            forced_summary_instruction(3)
        );
    }

    #[test]
    fn forced_turn_without_marker_keeps_reply_as_summary() {
        let (mut i, mut a, _, _) = agents(vec!["x"], vec!["idea", "just this"]);
        let out = run_phase(&spec(1), &mut i, &mut a, "go").unwrap();
        assert!(!out.transcript.terminated_by_info);
        assert_eq!(out.summary, "just this");
    }

    #[test]
    fn backend_failure_carries_partial_transcript() {
        let (mut i, mut a, _, _) = agents(vec!["next"], vec!["idea 1"]);
        match run_phase(&spec(5), &mut i, &mut a, "go") {
            Err(PhaseError::Failed { partial, .. }) => {
                assert_eq!(partial.rounds_used, 1);
                assert_eq!(partial.turns[0].response, "idea 1");
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn transient_errors_are_retried() {
        let book = RoleBook::builtin();
        let ma = Arc::new(ScriptedChat::from_steps(vec![
            Err(BackendError::Transport("reset".into())),
            Ok("<INFO> ink".into()),
        ]));
        let ba: Arc<dyn ChatBackend> = ma.clone();
        let bi: Arc<dyn ChatBackend> = Arc::new(ScriptedChat::new(["x"]));
        let mut i = make_agent(book.get(CEO).unwrap(), bi, "p").unwrap();
        let mut a = make_agent(book.get(MOVIE_DIRECTOR).unwrap(), ba, "p")
            .unwrap()
            .with_retry(RetryPolicy::immediate(3));
        let out = run_phase(&spec(2), &mut i, &mut a, "go").unwrap();
        assert_eq!(out.summary, "ink");
        assert_eq!(ma.calls(), 2);
    }

    #[test]
    fn mismatched_roles_and_empty_seed_are_rejected() {
        let (mut i, mut a, _, _) = agents(vec!["x"], vec!["y"]);
        assert!(matches!(
            run_phase(&spec(2), &mut a, &mut i, "go"),
            Err(PhaseError::InvalidSpec { .. })
        ));
        assert!(matches!(
            run_phase(&spec(2), &mut i, &mut a, "  "),
            Err(PhaseError::InvalidSpec { .. })
        ));
        let mut s = spec(2);
        s.assistant_role = CEO.into();
        assert!(s.validate().is_err());
    }

    #[test]
    fn output_round_trips_through_disk() {
        let (mut i, mut a, _, _) = agents(vec!["x"], vec!["<INFO> cartoon style"]);
        let out = run_phase(&spec(2), &mut i, &mut a, "go").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = out.save(dir.path()).unwrap();
        assert!(path.ends_with("style_decision.json"));
        assert_eq!(PhaseOutput::load(&path).unwrap(), out);
    }
}
