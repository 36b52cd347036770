//! Role cards and the agents built from them.
//!
//! A [`RoleCard`] is plain data (name, phases, job, task, requirements).
//! Binding a card to a backend under a phase prompt yields an [`Agent`]
//! whose system prompt is fixed at construction and sent first in every
//! request.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    BackendError, ChatBackend, ChatMessage, ChatRequest, RetryPolicy, VisionBackend,
};

pub const DEFAULT_ROUND_LIMIT: u32 = 5;

/// Version accepted in role card files.
pub const ROLE_FILE_VERSION: u32 = 1;

pub const CEO: &str = "CEO";
pub const MOVIE_DIRECTOR: &str = "Movie Director";
pub const FILM_PRODUCER: &str = "Film Producer";
pub const SCREENWRITER: &str = "Screenwriter";
pub const FILMMAKER: &str = "Filmmaker";
pub const REVIEWER: &str = "Reviewer";
pub const PAINTER: &str = "Movie Art Director";
pub const KEYFRAME_DIRECTOR: &str = "Keyframe Director";
pub const MONITOR: &str = "Monitor";

const BUILTIN_CARDS: &[(&str, &str)] = &[
    ("ceo.json", include_str!("../roles/ceo.json")),
    ("movie_director.json", include_str!("../roles/movie_director.json")),
    ("film_producer.json", include_str!("../roles/film_producer.json")),
    ("screenwriter.json", include_str!("../roles/screenwriter.json")),
    ("filmmaker.json", include_str!("../roles/filmmaker.json")),
    ("reviewer.json", include_str!("../roles/reviewer.json")),
    ("painter.json", include_str!("../roles/painter.json")),
    ("keyframe_director.json", include_str!("../roles/keyframe_director.json")),
    ("monitor.json", include_str!("../roles/monitor.json")),
];

#[derive(Debug, Error)]
pub enum RoleError {
    #[error("invalid role card {name:?}: {reason}")]
    InvalidCard { name: String, reason: String },
    #[error("role card file {file}: {reason}")]
    File { file: String, reason: String },
    #[error("unknown role {0:?}")]
    UnknownRole(String),
    #[error("backend for role {role:?} is unavailable: {source}")]
    BackendUnavailable {
        role: String,
        #[source]
        source: BackendError,
    },
}

fn default_round_limit() -> u32 {
    DEFAULT_ROUND_LIMIT
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleCard {
    pub name: String,
    pub phases: BTreeSet<String>,
    pub job: String,
    pub task: String,
    #[serde(default)]
    pub requirements: Vec<String>,
    #[serde(default = "default_round_limit")]
    pub round_limit: u32,
}

#[derive(Deserialize)]
struct RoleCardFile {
    version: u32,
    #[serde(flatten)]
    card: RoleCard,
}

impl RoleCard {
    pub fn validate(&self) -> Result<(), RoleError> {
        let fail = |reason: &str| {
            Err(RoleError::InvalidCard {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if self.name.trim().is_empty() {
            return fail("name is empty");
        }
        if self.phases.is_empty() {
            return fail("card participates in no phase");
        }
        if self.round_limit == 0 {
            return fail("round_limit must be at least 1");
        }
        Ok(())
    }

    /// Parses and validates a versioned card file.
    pub fn from_json(file: &str, text: &str) -> Result<Self, RoleError> {
        let parsed: RoleCardFile = serde_json::from_str(text).map_err(|e| RoleError::File {
            file: file.to_string(),
            reason: e.to_string(),
        })?;
        if parsed.version != ROLE_FILE_VERSION {
            return Err(RoleError::File {
                file: file.to_string(),
                reason: format!(
                    "unsupported version {} (expected {ROLE_FILE_VERSION})",
                    parsed.version
                ),
            });
        }
        parsed.card.validate()?;
        Ok(parsed.card)
    }
}

/// Phase prompt followed by the card's Job, Task and Requirements sections.
pub fn render_system_prompt(card: &RoleCard, phase_prompt: &str) -> String {
    let mut out = String::with_capacity(phase_prompt.len() + card.job.len() + card.task.len() + 64);
    out.push_str(phase_prompt.trim_end());
    out.push_str("\n\n## Job\n");
    out.push_str(&card.job);
    out.push_str("\n\n## Task\n");
    out.push_str(&card.task);
    out.push_str("\n\n## Requirements\n");
    for r in &card.requirements {
        out.push_str("- ");
        out.push_str(r);
        out.push('\n');
    }
    out
}

/// The set of role cards available to a run, keyed by name.
#[derive(Debug, Clone, Default)]
pub struct RoleBook {
    cards: BTreeMap<String, RoleCard>,
}

impl RoleBook {
    /// The nine cards shipped with the crate.
    pub fn builtin() -> Self {
        let mut book = Self::default();
        for (file, text) in BUILTIN_CARDS {
            let card = RoleCard::from_json(file, text).expect("builtin role cards are valid");
            book.cards.insert(card.name.clone(), card);
        }
        book
    }

    /// Builtin cards overlaid with every `*.json` card in `dir`.
    pub fn with_dir(dir: &Path) -> Result<Self, RoleError> {
        let mut book = Self::builtin();
        let io_err = |e: std::io::Error| RoleError::File {
            file: dir.display().to_string(),
            reason: e.to_string(),
        };
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(io_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            let text = fs::read_to_string(&p).map_err(io_err)?;
            book.insert(RoleCard::from_json(&p.display().to_string(), &text)?)?;
        }
        Ok(book)
    }

    pub fn insert(&mut self, card: RoleCard) -> Result<(), RoleError> {
        card.validate()?;
        self.cards.insert(card.name.clone(), card);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&RoleCard, RoleError> {
        self.cards
            .get(name)
            .ok_or_else(|| RoleError::UnknownRole(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.cards.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.cards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cards.is_empty()
    }
}

/// Backends that can be probed for liveness before an agent is built.
pub trait Liveness {
    fn check_alive(&self) -> Result<(), BackendError>;
}

impl Liveness for dyn ChatBackend {
    fn check_alive(&self) -> Result<(), BackendError> {
        self.probe()
    }
}

impl Liveness for dyn VisionBackend {
    fn check_alive(&self) -> Result<(), BackendError> {
        self.probe()
    }
}

/// A role card bound to a backend under one phase prompt.
pub struct Agent<B: ?Sized> {
    card: RoleCard,
    backend: Arc<B>,
    system_prompt: String,
    history: Vec<ChatMessage>,
    retry: RetryPolicy,
}

pub type ChatAgent = Agent<dyn ChatBackend>;
pub type VisionAgent = Agent<dyn VisionBackend>;

/// Renders the system prompt and probes the backend.
pub fn make_agent<B: Liveness + ?Sized>(
    card: &RoleCard,
    backend: Arc<B>,
    phase_prompt: &str,
) -> Result<Agent<B>, RoleError> {
    card.validate()?;
    backend
        .check_alive()
        .map_err(|source| RoleError::BackendUnavailable {
            role: card.name.clone(),
            source,
        })?;
    Ok(Agent {
        card: card.clone(),
        system_prompt: render_system_prompt(card, phase_prompt),
        backend,
        history: Vec::new(),
        retry: RetryPolicy::default(),
    })
}

impl<B: ?Sized> Agent<B> {
    pub fn card(&self) -> &RoleCard {
        &self.card
    }

    pub fn name(&self) -> &str {
        &self.card.name
    }

    pub fn system_prompt(&self) -> &str {
        &self.system_prompt
    }

    pub fn history(&self) -> &[ChatMessage] {
        &self.history
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn retry(&self) -> RetryPolicy {
        self.retry
    }

    /// Forgets the conversation; the system prompt is kept.
    pub fn reset(&mut self) {
        self.history.clear();
    }

    fn request_with(&self, extra: Option<ChatMessage>) -> ChatRequest {
        let mut messages = Vec::with_capacity(self.history.len() + 2);
        messages.push(ChatMessage::system(self.system_prompt.clone()));
        messages.extend(self.history.iter().cloned());
        messages.extend(extra);
        ChatRequest { messages }
    }
}

impl ChatAgent {
    /// Records `message` as something this agent said, without a backend call.
    ///
    /// Used when a conversation opens with a fixed instruction on this
    /// agent's behalf.
    pub fn record_own(&mut self, message: &str) {
        self.history.push(ChatMessage::assistant(message));
    }

    /// Sends `incoming` within the running conversation and returns the reply.
    pub fn step(&mut self, incoming: &str) -> Result<String, BackendError> {
        self.history.push(ChatMessage::user(incoming));
        let request = self.request_with(None);
        match self.retry.run(|| self.backend.complete(&request)) {
            Ok(reply) => {
                self.history.push(ChatMessage::assistant(reply.clone()));
                Ok(reply)
            }
            Err(e) => {
                self.history.pop();
                Err(e)
            }
        }
    }

    /// One-shot question outside the running conversation.
    pub fn ask(&self, message: &str) -> Result<String, BackendError> {
        let request = self.request_with(Some(ChatMessage::user(message)));
        self.retry.run(|| self.backend.complete(&request))
    }
}

impl VisionAgent {
    /// One-shot question about an image.
    pub fn look(&self, image_png: &[u8], message: &str) -> Result<String, BackendError> {
        let request = self.request_with(Some(ChatMessage::user(message)));
        self.retry
            .run(|| self.backend.describe(&request, image_png))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{ScriptedChat, Unreachable};
    use crate::backends::Speaker;
    use proptest::prelude::*;

    fn card(job: &str, task: &str, reqs: &[&str]) -> RoleCard {
        RoleCard {
            name: "Movie Art Director".into(),
            phases: ["keyframe_design".to_string()].into(),
            job: job.into(),
            task: task.into(),
            requirements: reqs.iter().map(|s| s.to_string()).collect(),
            round_limit: DEFAULT_ROUND_LIMIT,
        }
    }

    #[test]
    fn rendered_prompt_contains_job_verbatim() {
        let c = card(
            "Your job is to generate a picture according to the scenery given by the director.",
            "Draw keyframes.",
            &["obey the real-world rules, like color unchanged"],
        );
        let p = render_system_prompt(&c, "Phase: keyframe_design");
        assert!(p.contains("generate a picture according to the scenery given by the director"));
        assert!(p.contains("obey the real-world rules, like color unchanged"));
        assert!(p.starts_with("Phase: keyframe_design"));
    }

    #[test]
    fn empty_requirements_render_empty_section() {
        let p = render_system_prompt(&card("J", "T", &[]), "phase");
        assert_eq!(p, "phase\n\n## Job\nJ\n\n## Task\nT\n\n## Requirements\n");
    }

    #[test]
    fn rendering_is_deterministic() {
        let c = card("J", "T", &["a", "b"]);
        assert_eq!(render_system_prompt(&c, "x"), render_system_prompt(&c, "x"));
    }

    #[test]
    fn invalid_cards_are_rejected() {
        let mut c = card("J", "T", &[]);
        c.round_limit = 0;
        assert!(c.validate().is_err());
        let mut c = card("J", "T", &[]);
        c.phases.clear();
        assert!(c.validate().is_err());
        let mut c = card("J", "T", &[]);
        c.name = " ".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn builtin_book_has_nine_cards_with_default_limit() {
        let book = RoleBook::builtin();
        assert_eq!(book.len(), 9);
        for name in [
            CEO,
            MOVIE_DIRECTOR,
            FILM_PRODUCER,
            SCREENWRITER,
            FILMMAKER,
            REVIEWER,
            PAINTER,
            KEYFRAME_DIRECTOR,
            MONITOR,
        ] {
            assert_eq!(book.get(name).unwrap().round_limit, DEFAULT_ROUND_LIMIT);
        }
    }

    #[test]
    fn card_file_version_is_checked() {
        let text = r#"{"version":2,"name":"X","phases":["p"],"job":"j","task":"t"}"#;
        assert!(matches!(
            RoleCard::from_json("x.json", text),
            Err(RoleError::File { .. })
        ));
        let text = r#"{"version":1,"name":"X","phases":["p"],"job":"j","task":"t"}"#;
        let c = RoleCard::from_json("x.json", text).unwrap();
        assert_eq!(c.round_limit, 5);
        assert!(c.requirements.is_empty());
    }

    #[test]
    fn directory_cards_extend_builtins() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("narrator.json"),
            r#"{"version":1,"name":"Narrator","phases":["story_prompting"],"job":"j","task":"t","requirements":["r"],"round_limit":3}"#,
        )
        .unwrap();
        let book = RoleBook::with_dir(dir.path()).unwrap();
        assert_eq!(book.len(), 10);
        assert_eq!(book.get("Narrator").unwrap().round_limit, 3);
    }

    #[test]
    fn agent_sends_system_prompt_first() {
        let c = RoleBook::builtin().get(MOVIE_DIRECTOR).unwrap().clone();
        let mock = Arc::new(ScriptedChat::new(["ok"]));
        let backend: Arc<dyn ChatBackend> = mock.clone();
        let mut agent = make_agent(&c, backend, "Phase: style_decision").unwrap();
        agent.step("hello").unwrap();
        let ledger = mock.ledger();
        assert_eq!(ledger.len(), 1);
        assert_eq!(ledger[0].messages[0].speaker, Speaker::System);
        assert_eq!(ledger[0].system_prompt(), Some(agent.system_prompt()));
    }

    #[test]
    fn agents_from_same_inputs_share_prompt() {
        let c = RoleBook::builtin().get(CEO).unwrap().clone();
        let b: Arc<dyn ChatBackend> = Arc::new(ScriptedChat::new(["x"]));
        let a1 = make_agent(&c, b.clone(), "p").unwrap();
        let a2 = make_agent(&c, b, "p").unwrap();
        assert_eq!(a1.system_prompt(), a2.system_prompt());
    }

    #[test]
    fn dead_backend_fails_construction() {
        let c = RoleBook::builtin().get(CEO).unwrap().clone();
        let b: Arc<dyn ChatBackend> = Arc::new(Unreachable);
        assert!(matches!(
            make_agent(&c, b, "p"),
            Err(RoleError::BackendUnavailable { .. })
        ));
    }

    #[test]
    fn failed_step_leaves_history_unchanged() {
        let c = RoleBook::builtin().get(CEO).unwrap().clone();
        let b: Arc<dyn ChatBackend> = Arc::new(ScriptedChat::new(["one"]));
        let mut a = make_agent(&c, b, "p").unwrap();
        a.step("q1").unwrap();
        assert!(a.step("q2").is_err());
        assert_eq!(a.history().len(), 2);
    }

    proptest! {
        #[test]
        fn distinct_cards_render_distinct_prompts(
            j1 in "[a-z ]{1,20}", t1 in "[a-z ]{1,20}", r1 in prop::collection::vec("[a-z ]{1,10}", 0..4),
            j2 in "[a-z ]{1,20}", t2 in "[a-z ]{1,20}", r2 in prop::collection::vec("[a-z ]{1,10}", 0..4),
        ) {
            let a = card(&j1, &t1, &r1.iter().map(String::as_str).collect::<Vec<_>>());
            let b = card(&j2, &t2, &r2.iter().map(String::as_str).collect::<Vec<_>>());
            let same = (j1 == j2) && (t1 == t2) && (r1 == r2);
            prop_assert_eq!(render_system_prompt(&a, "p") == render_system_prompt(&b, "p"), same);
        }
    }
}
