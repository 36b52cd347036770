//! Rule-based mock studio: chat and vision backends that answer every
//! pipeline request plausibly and deterministically, so a full run works
//! offline.
//!
//! The chat mock reads the `Phase:` marker of the system prompt to decide
//! what kind of answer to give. The vision mock dispatches on the `TASK:`
//! marker on the first line of the request.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mock::VisionCall;
use super::{BackendError, ChatBackend, ChatRequest, Speaker, VisionBackend};
use crate::fsutil::sha256_hex;
use crate::keyframes::{BASE_TASK, CONTEXT_TASK, REVIEW_TASK};
use crate::metrics::STYLE_TASK;
use crate::phases::INFO_MARKER;
use crate::pipeline::prompts::{PHASE_MARKER, SCENE_COUNT_MARKER, USER_REQUEST_MARKER};
use crate::pipeline::Stage;

const STYLES: &[&str] = &[
    "cartoon style",
    "watercolor illustration, soft edges",
    "oil painting, muted palette",
    "ink wash on rice paper",
    "claymation, warm studio light",
    "flat vector illustration",
];

const SHOTS: &[&str] = &[
    "Wide establishing shot",
    "Medium shot",
    "Close-up",
    "Over-the-shoulder shot",
    "Low-angle shot",
    "Tracking shot",
];

const BEATS: &[&str] = &[
    "the morning begins quietly",
    "the work takes shape",
    "a small setback interrupts",
    "a careful fix is found",
    "a friend stops by to watch",
    "the light turns golden",
    "the last detail is added",
    "the result is revealed",
];

fn digest(seed: u64, parts: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize().into()
}

fn pick<'a>(options: &[&'a str], d: &[u8; 32], byte: usize) -> &'a str {
    options[d[byte] as usize % options.len()]
}

fn line_after<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    text.lines()
        .find_map(|l| l.trim().strip_prefix(marker))
        .map(str::trim)
}

/// Parses "between LO and HI" after the scene-count marker.
fn scene_bounds(text: &str) -> Option<(usize, usize)> {
    let rest = line_after(text, SCENE_COUNT_MARKER)?;
    let nums: Vec<usize> = rest
        .split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
        .filter_map(|s| s.parse().ok())
        .collect();
    match nums.as_slice() {
        [lo, hi, ..] if lo <= hi => Some((*lo, *hi)),
        [n] => Some((*n, *n)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudioChatOptions {
    /// Fixed scene count for the script; otherwise picked within the bounds
    /// the script phase asks for.
    pub scenes: Option<usize>,
    /// Assistant replies before the `<INFO>` conclusion.
    pub discussion_rounds: u32,
}

impl Default for StudioChatOptions {
    fn default() -> Self {
        Self {
            scenes: None,
            discussion_rounds: 1,
        }
    }
}

pub struct StudioChat {
    seed: u64,
    options: StudioChatOptions,
    ledger: Mutex<Vec<ChatRequest>>,
}

impl StudioChat {
    pub fn new(seed: u64, options: StudioChatOptions) -> Self {
        Self {
            seed,
            options,
            ledger: Mutex::new(Vec::new()),
        }
    }

    pub fn ledger(&self) -> Vec<ChatRequest> {
        self.ledger.lock().unwrap().clone()
    }

    pub fn calls(&self) -> usize {
        self.ledger.lock().unwrap().len()
    }

    fn subject(&self, request: &ChatRequest) -> String {
        request
            .messages
            .iter()
            .find_map(|m| line_after(&m.content, USER_REQUEST_MARKER))
            .unwrap_or("a quiet day in a small workshop")
            .trim_end_matches('.')
            .to_string()
    }

    fn conclusion(&self, stage: Stage, request: &ChatRequest, last: &str) -> String {
        let subject = self.subject(request);
        let d = digest(self.seed, &[stage.id(), &subject]);
        match stage {
            Stage::TaskDefinition => format!(
                "{INFO_MARKER} Produce a short multi-scene video about {subject}."
            ),
            Stage::StyleDecision => format!("{INFO_MARKER} {}", pick(STYLES, &d, 0)),
            Stage::StoryPrompting => format!(
                "{INFO_MARKER} A story about {subject}: {}, then {}, and finally {}.",
                pick(BEATS, &d, 1),
                pick(BEATS, &d, 2),
                BEATS[BEATS.len() - 1]
            ),
            Stage::ScriptDesign => {
                let n = self.options.scenes.unwrap_or_else(|| {
                    let (lo, hi) = scene_bounds(last).unwrap_or((4, 4));
                    lo + d[3] as usize % (hi - lo + 1)
                });
                let mut out = format!("{INFO_MARKER}\n");
                for k in 1..=n.max(1) {
                    out.push_str(&format!(
                        "Scene {k}: {} of {subject}; {}.\n",
                        SHOTS[(d[4] as usize + k) % SHOTS.len()],
                        BEATS[(d[5] as usize + k) % BEATS.len()]
                    ));
                }
                out
            }
            _ => format!("{INFO_MARKER} agreed [{}]", hex::encode(&d[..4])),
        }
    }
}

impl ChatBackend for StudioChat {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.ledger.lock().unwrap().push(request.clone());
        let system = request.system_prompt().unwrap_or_default();
        let last = request.last_user().unwrap_or_default();
        let stage = line_after(system, PHASE_MARKER).and_then(Stage::from_id);
        let d = digest(self.seed, &[system, last]);
        let tag = hex::encode(&d[..4]);
        match stage {
            Some(Stage::KeyframeDesign) => {
                let scene = last
                    .lines()
                    .find(|l| l.starts_with("Scene "))
                    .unwrap_or("the scene");
                if last.contains("Art director's prompt:") {
                    Ok(format!(
                        "Keep the camera at eye level and the palette unchanged from the previous frame [{tag}]."
                    ))
                } else {
                    Ok(format!("Keyframe image of {scene} [{tag}]"))
                }
            }
            Some(stage) => {
                let user_turns = request
                    .messages
                    .iter()
                    .filter(|m| m.speaker == Speaker::User)
                    .count() as u32;
                if user_turns >= self.options.discussion_rounds {
                    Ok(self.conclusion(stage, request, last))
                } else {
                    Ok(format!("Proposal {user_turns}: let us refine this further [{tag}]."))
                }
            }
            None => Ok(format!("{INFO_MARKER} acknowledged [{tag}]")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudioVisionOptions {
    /// Rejections before the first approval of each keyframe.
    pub reject_first: u32,
    pub always_reject: bool,
    /// Label returned to style-classification requests.
    pub style: String,
}

impl Default for StudioVisionOptions {
    fn default() -> Self {
        Self {
            reject_first: 0,
            always_reject: false,
            style: "illustration".into(),
        }
    }
}

pub struct StudioVision {
    options: StudioVisionOptions,
    reviews: Mutex<HashMap<usize, u32>>,
    ledger: Mutex<Vec<VisionCall>>,
}

impl StudioVision {
    pub fn new(options: StudioVisionOptions) -> Self {
        Self {
            options,
            reviews: Mutex::new(HashMap::new()),
            ledger: Mutex::new(Vec::new()),
        }
    }

    pub fn ledger(&self) -> Vec<VisionCall> {
        self.ledger.lock().unwrap().clone()
    }

    pub fn calls(&self) -> usize {
        self.ledger.lock().unwrap().len()
    }
}

impl VisionBackend for StudioVision {
    fn describe(&self, request: &ChatRequest, image_png: &[u8]) -> Result<String, BackendError> {
        let image_sha256 = sha256_hex(image_png);
        self.ledger.lock().unwrap().push(VisionCall {
            request: request.clone(),
            image_sha256: image_sha256.clone(),
        });
        let last = request.last_user().unwrap_or_default();
        let task = last.lines().next().unwrap_or_default().trim();
        let index: usize = line_after(last, "Keyframe index:")
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        let tag = &image_sha256[..8];
        let reply = if task == REVIEW_TASK {
            let mut reviews = self.reviews.lock().unwrap();
            let seen = reviews.entry(index).or_insert(0);
            *seen += 1;
            if self.options.always_reject || *seen <= self.options.reject_first {
                format!("REJECT The main character's outfit drifts from the established look [{tag}].")
            } else {
                format!("APPROVE Consistent with the scene and the established look [{tag}].")
            }
        } else if task == BASE_TASK {
            format!(
                "Base look [{tag}]: soft even lighting, a warm limited palette, one recurring \
                 protagonist with short dark hair and a red scarf, wooden workshop background."
            )
        } else if task == CONTEXT_TASK {
            let scene = line_after(last, &format!("Scene {index}:")).unwrap_or("the scene");
            format!("Keyframe {index} [{tag}] shows {scene}")
        } else if task == STYLE_TASK {
            self.options.style.clone()
        } else {
            format!("An image [{tag}].")
        };
        Ok(reply)
    }
}
