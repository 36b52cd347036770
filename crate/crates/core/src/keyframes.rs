//! Keyframe iteration: a painter, a director and a monitor produce one
//! keyframe per scene, each anchored to the base description and to the
//! monitor's description of the frame before it.
//!
//! Frame 1 (the base frame) fixes the look of the video. Once accepted, the
//! monitor extracts a base description from it; that text is frozen and
//! threaded into every later generation request together with the previous
//! frame's context description, so long-range consistency reduces to a
//! chain of one-step handoffs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, ImageGenBackend, RetryPolicy};
use crate::fsutil::{self, sha256_hex};
use crate::roles::{ChatAgent, VisionAgent};
use crate::script::SceneSpec;

pub const DEFAULT_ATTEMPT_CAP: u32 = 3;

/// First-line markers identifying which monitor task a request is.
pub const REVIEW_TASK: &str = "TASK: REVIEW";
pub const BASE_TASK: &str = "TASK: BASE_DESCRIPTION";
pub const CONTEXT_TASK: &str = "TASK: CONTEXT";

pub const INDEX_FILE: &str = "index.json";
pub const BASE_FILE: &str = "base_description.json";

#[derive(Debug, Error)]
pub enum KeyframeError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("base frame rejected {} times", attempts.len())]
    BaseFrameFailed { attempts: Vec<AttemptRecord> },
    #[error("keyframe {index} rejected {} times", attempts.len())]
    FrameFailed {
        index: usize,
        attempts: Vec<AttemptRecord>,
    },
    #[error("{role} returned an empty answer for keyframe {index}")]
    EmptyAnswer { role: &'static str, index: usize },
    #[error("{role} call for keyframe {index} failed: {source}")]
    Backend {
        role: &'static str,
        index: usize,
        #[source]
        source: BackendError,
    },
    #[error("keyframe I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseDescription {
    pub text: String,
    /// Index of the keyframe it was extracted from (always 1).
    pub source_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEnv {
    pub index: usize,
    pub text: String,
}

/// Everything that goes into rendering one keyframe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframeRequest {
    pub index: usize,
    pub scene: String,
    pub painter_prompt: String,
    pub director_note: String,
    pub base: Option<BaseDescription>,
    pub prev_context: Option<ContextEnv>,
}

impl KeyframeRequest {
    pub fn validate(&self) -> Result<(), KeyframeError> {
        if self.index == 0 {
            return Err(KeyframeError::Precondition("keyframe index is 1-based".into()));
        }
        if self.index >= 2 && (self.base.is_none() || self.prev_context.is_none()) {
            return Err(KeyframeError::Precondition(format!(
                "keyframe {} needs both a base description and the previous context",
                self.index
            )));
        }
        Ok(())
    }

    /// Text sent to the image generator.
    pub fn generation_prompt(&self) -> String {
        let mut out = format!(
            "{}\n\nDirector's note: {}\n\nScene {}: {}",
            self.painter_prompt.trim(),
            self.director_note.trim(),
            self.index,
            self.scene.trim()
        );
        if let Some(base) = &self.base {
            out.push_str("\n\nKeep consistent with the base look: ");
            out.push_str(&base.text);
        }
        if let Some(prev) = &self.prev_context {
            out.push_str(&format!("\n\nPrevious keyframe ({}): ", prev.index));
            out.push_str(&prev.text);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Approve,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewVerdict {
    pub verdict: Verdict,
    pub critique: String,
    /// 1-based attempt number within the frame.
    pub attempt: u32,
}

impl ReviewVerdict {
    /// Reads `APPROVE ...` / `REJECT ...` from the first word of a monitor
    /// reply. Anything else counts as a rejection with the reply as critique.
    pub fn parse(reply: &str, attempt: u32) -> Self {
        let text = reply.trim();
        let (head, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
        let word = head
            .trim_matches(|c: char| !c.is_ascii_alphabetic())
            .to_ascii_uppercase();
        let rest = rest.trim().trim_start_matches([':', '-', '.']).trim();
        let (verdict, critique) = match word.as_str() {
            "APPROVE" | "APPROVED" => (Verdict::Approve, rest.to_string()),
            "REJECT" | "REJECTED" => (Verdict::Reject, rest.to_string()),
            _ => (Verdict::Reject, text.to_string()),
        };
        let critique = if verdict == Verdict::Reject && critique.is_empty() {
            "rejected without explanation".to_string()
        } else {
            critique
        };
        Self {
            verdict,
            critique,
            attempt,
        }
    }
}

/// One render-and-review cycle, kept for failure reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub request: KeyframeRequest,
    pub generation_prompt: String,
    pub image_sha256: String,
    pub verdict: ReviewVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Keyframe {
    pub index: usize,
    /// PNG bytes.
    pub image: Vec<u8>,
    pub width: u32,
    pub height: u32,
    pub request: KeyframeRequest,
    pub generation_prompt: String,
    pub review: Vec<ReviewVerdict>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyframeSet {
    pub base: BaseDescription,
    pub frames: Vec<Keyframe>,
    pub contexts: Vec<ContextEnv>,
}

/// The agents and image generator taking part in keyframe design.
pub struct KeyframeStudio<'a> {
    pub painter: &'a ChatAgent,
    pub director: &'a ChatAgent,
    pub monitor: &'a VisionAgent,
    pub images: &'a dyn ImageGenBackend,
    pub attempt_cap: u32,
    pub retry: RetryPolicy,
}

fn nonempty(text: String, role: &'static str, index: usize) -> Result<String, KeyframeError> {
    let t = text.trim();
    if t.is_empty() {
        Err(KeyframeError::EmptyAnswer { role, index })
    } else {
        Ok(t.to_string())
    }
}

fn backend_err(role: &'static str, index: usize) -> impl Fn(BackendError) -> KeyframeError {
    move |source| KeyframeError::Backend {
        role,
        index,
        source,
    }
}

fn painter_message(
    index: usize,
    scene: &str,
    style: Option<&str>,
    prev: Option<&ContextEnv>,
    critique: Option<&str>,
) -> String {
    let mut m = format!("Keyframe {index}\nScene {index}: {scene}\n");
    if let Some(style) = style {
        m.push_str(&format!("Agreed style: {style}\n"));
        m.push_str(
            "This is the opening keyframe; it fixes the style, characters and background \
             for the whole video.\n",
        );
    }
    if let Some(prev) = prev {
        m.push_str(&format!("Previous keyframe ({}): {}\n", prev.index, prev.text));
    }
    if let Some(c) = critique {
        m.push_str(&format!("The last attempt was rejected by the monitor: {c}\n"));
    }
    m.push_str("Write the image-generation prompt for this keyframe.");
    m
}

fn director_message(
    index: usize,
    scene: &str,
    prev: Option<&ContextEnv>,
    painter_prompt: &str,
) -> String {
    let mut m = format!("Keyframe {index}\nScene {index}: {scene}\n");
    if let Some(prev) = prev {
        m.push_str(&format!("Previous keyframe ({}): {}\n", prev.index, prev.text));
    }
    m.push_str(&format!(
        "Art director's prompt: {painter_prompt}\nWrite your note on composition, framing and continuity."
    ));
    m
}

fn review_message(index: usize, scene: &str, base: Option<&BaseDescription>, prompt: &str) -> String {
    let mut m = format!("{REVIEW_TASK}\nKeyframe index: {index}\nScene {index}: {scene}\n");
    if let Some(b) = base {
        m.push_str(&format!("Established look: {}\n", b.text));
    }
    m.push_str(&format!(
        "Generation prompt: {prompt}\n\
         Answer APPROVE or REJECT as the first word, followed by one sentence of critique."
    ));
    m
}

fn base_message() -> String {
    format!(
        "{BASE_TASK}\nKeyframe index: 1\n\
         This is the accepted opening keyframe. Describe the style, painting technique, \
         background and the appearance of every character, in enough detail that later \
         keyframes can match them."
    )
}

fn context_message(frame: &Keyframe) -> String {
    format!(
        "{CONTEXT_TASK}\nKeyframe index: {}\nScene {}: {}\n\
         Describe this accepted keyframe: characters, their appearance and positions, \
         setting, light and palette.",
        frame.index, frame.index, frame.request.scene
    )
}

/// Asks the monitor to describe an accepted frame.
pub fn derive_context(frame: &Keyframe, monitor: &VisionAgent) -> Result<ContextEnv, KeyframeError> {
    if !frame.accepted {
        return Err(KeyframeError::Precondition(format!(
            "keyframe {} has not been accepted",
            frame.index
        )));
    }
    let text = monitor
        .look(&frame.image, &context_message(frame))
        .map_err(backend_err("monitor", frame.index))?;
    Ok(ContextEnv {
        index: frame.index,
        text: nonempty(text, "monitor", frame.index)?,
    })
}

impl KeyframeStudio<'_> {
    /// Generates frame 1 and extracts the base description from it.
    pub fn generate_base_frame(
        &self,
        scene: &str,
        style: &str,
    ) -> Result<(Keyframe, BaseDescription), KeyframeError> {
        let frame = self
            .review_loop(1, scene, Some(style), None, None)
            .map_err(|e| match e {
                KeyframeError::FrameFailed { attempts, .. } => {
                    KeyframeError::BaseFrameFailed { attempts }
                }
                other => other,
            })?;
        let text = self
            .monitor
            .look(&frame.image, &base_message())
            .map_err(backend_err("monitor", 1))?;
        let base = BaseDescription {
            text: nonempty(text, "monitor", 1)?,
            source_frame: 1,
        };
        Ok((frame, base))
    }

    /// Generates frame `index` (≥ 2) from its scene, the base description and
    /// the previous frame's context.
    pub fn iterate_keyframe(
        &self,
        index: usize,
        scene: &str,
        base: &BaseDescription,
        prev: &ContextEnv,
    ) -> Result<Keyframe, KeyframeError> {
        if index < 2 {
            return Err(KeyframeError::Precondition(format!(
                "iteration starts at keyframe 2, got {index}"
            )));
        }
        if prev.index + 1 != index {
            return Err(KeyframeError::Precondition(format!(
                "keyframe {index} must follow context {}, not {}",
                index - 1,
                prev.index
            )));
        }
        self.review_loop(index, scene, None, Some(base), Some(prev))
    }

    fn review_loop(
        &self,
        index: usize,
        scene: &str,
        style: Option<&str>,
        base: Option<&BaseDescription>,
        prev: Option<&ContextEnv>,
    ) -> Result<Keyframe, KeyframeError> {
        if scene.trim().is_empty() {
            return Err(KeyframeError::Precondition(format!(
                "scene {index} is empty"
            )));
        }
        let cap = self.attempt_cap.max(1);
        let mut attempts: Vec<AttemptRecord> = Vec::new();
        for attempt in 1..=cap {
            let critique = attempts.last().map(|a| a.verdict.critique.as_str());
            let drafted = self
                .painter
                .ask(&painter_message(index, scene, style, prev, critique))
                .map_err(backend_err("painter", index))?;
            let mut painter_prompt = nonempty(drafted, "painter", index)?;
            if let Some(c) = critique {
                painter_prompt.push_str(&format!("\nRevision notes: {c}"));
            }
            let note = self
                .director
                .ask(&director_message(index, scene, prev, &painter_prompt))
                .map_err(backend_err("director", index))?;
            let request = KeyframeRequest {
                index,
                scene: scene.to_string(),
                painter_prompt,
                director_note: nonempty(note, "director", index)?,
                base: base.cloned(),
                prev_context: prev.cloned(),
            };
            request.validate()?;
            let generation_prompt = request.generation_prompt();
            let image = self
                .retry
                .run(|| self.images.generate(&generation_prompt))
                .map_err(backend_err("image generator", index))?;
            let reply = self
                .monitor
                .look(
                    &image.png,
                    &review_message(index, scene, base, &generation_prompt),
                )
                .map_err(backend_err("monitor", index))?;
            let verdict = ReviewVerdict::parse(&reply, attempt);
            tracing::debug!(index, attempt, verdict = ?verdict.verdict, "keyframe reviewed");
            attempts.push(AttemptRecord {
                request: request.clone(),
                generation_prompt: generation_prompt.clone(),
                image_sha256: sha256_hex(&image.png),
                verdict: verdict.clone(),
            });
            if verdict.verdict == Verdict::Approve {
                return Ok(Keyframe {
                    index,
                    image: image.png,
                    width: image.width,
                    height: image.height,
                    request,
                    generation_prompt,
                    review: attempts.into_iter().map(|a| a.verdict).collect(),
                    accepted: true,
                });
            }
        }
        Err(KeyframeError::FrameFailed { index, attempts })
    }

    /// Runs the whole chain over `scenes`, calling `on_frame` after each
    /// accepted frame and its context are available.
    pub fn run_chain(
        &self,
        scenes: &[SceneSpec],
        style: &str,
        mut on_frame: impl FnMut(&Keyframe, &ContextEnv, &BaseDescription) -> Result<(), KeyframeError>,
    ) -> Result<KeyframeSet, KeyframeError> {
        let Some(first) = scenes.first() else {
            return Err(KeyframeError::Precondition("script has no scenes".into()));
        };
        let (frame, base) = self.generate_base_frame(&first.description, style)?;
        let ctx = derive_context(&frame, self.monitor)?;
        on_frame(&frame, &ctx, &base)?;
        let mut frames = vec![frame];
        let mut contexts = vec![ctx];
        for scene in &scenes[1..] {
            let index = frames.len() + 1;
            let prev = contexts.last().expect("chain starts with one context");
            let frame = self.iterate_keyframe(index, &scene.description, &base, prev)?;
            let ctx = derive_context(&frame, self.monitor)?;
            on_frame(&frame, &ctx, &base)?;
            frames.push(frame);
            contexts.push(ctx);
        }
        Ok(KeyframeSet {
            base,
            frames,
            contexts,
        })
    }
}

/// Image metadata recorded in a frame sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub file: String,
    pub format: String,
    pub sha256: String,
    pub width: u32,
    pub height: u32,
}

/// Contents of `frame_<t>.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSidecar {
    pub index: usize,
    pub image: ImageMeta,
    pub request: KeyframeRequest,
    pub generation_prompt: String,
    pub review: Vec<ReviewVerdict>,
    pub accepted: bool,
    pub context: ContextEnv,
    /// File holding the base description, relative to the keyframes dir.
    pub base_description: String,
}

/// One line of `keyframes/index.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameIndexEntry {
    pub index: usize,
    pub image: String,
    pub sidecar: String,
    pub image_sha256: String,
    pub scene: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframeIndex {
    pub schema_version: u32,
    pub base_description: BaseDescription,
    pub frames: Vec<FrameIndexEntry>,
}

pub fn frame_png_name(index: usize) -> String {
    format!("frame_{index}.png")
}

pub fn frame_sidecar_name(index: usize) -> String {
    format!("frame_{index}.json")
}

/// Writes `frame_<t>.png` and `frame_<t>.json` into `dir`.
pub fn write_frame(
    dir: &Path,
    frame: &Keyframe,
    context: &ContextEnv,
) -> Result<PathBuf, KeyframeError> {
    let png = frame_png_name(frame.index);
    fsutil::atomic_write(&dir.join(&png), &frame.image)?;
    let sidecar = FrameSidecar {
        index: frame.index,
        image: ImageMeta {
            file: png,
            format: "png".into(),
            sha256: sha256_hex(&frame.image),
            width: frame.width,
            height: frame.height,
        },
        request: frame.request.clone(),
        generation_prompt: frame.generation_prompt.clone(),
        review: frame.review.clone(),
        accepted: frame.accepted,
        context: context.clone(),
        base_description: BASE_FILE.into(),
    };
    let path = dir.join(frame_sidecar_name(frame.index));
    fsutil::write_json(&path, &sidecar)?;
    Ok(path)
}

impl KeyframeSet {
    pub fn index(&self) -> KeyframeIndex {
        KeyframeIndex {
            schema_version: 1,
            base_description: self.base.clone(),
            frames: self
                .frames
                .iter()
                .map(|f| FrameIndexEntry {
                    index: f.index,
                    image: frame_png_name(f.index),
                    sidecar: frame_sidecar_name(f.index),
                    image_sha256: sha256_hex(&f.image),
                    scene: f.request.scene.clone(),
                })
                .collect(),
        }
    }
}
