//! Capability interfaces for every external model the studio talks to.
//!
//! Each capability has a hosted HTTP client ([`http`]) and deterministic
//! mocks ([`mock`], [`studio`]). The rest of the crate only sees the traits,
//! so pipelines and metrics run offline against the mocks.

pub mod contract;
pub mod http;
pub mod mock;
pub mod profile;
pub mod studio;
pub mod wire;

use std::fmt;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use profile::{BackendProfile, Backends};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("mock script exhausted after {served} responses")]
    ScriptExhausted { served: usize },
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {message}")]
    Status { status: u16, message: String },
    #[error("malformed backend response: {0}")]
    Decode(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// Whether a retry has a chance of succeeding.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Timeout(_) | BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Retry schedule for backend calls: `max_attempts` tries with exponential
/// backoff starting at `initial_backoff`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    /// Same attempt count, no sleeping. Used with mocks.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts: max_attempts.max(1),
            initial_backoff: Duration::ZERO,
        }
    }

    pub fn run<T>(
        &self,
        mut call: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let mut backoff = self.initial_backoff;
        let mut attempt = 1;
        loop {
            match call() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < self.max_attempts => {
                    tracing::warn!(attempt, error = %e, "backend call failed, retrying");
                    if !backoff.is_zero() {
                        thread::sleep(backoff);
                    }
                    backoff *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub speaker: Speaker,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::Assistant,
            content: content.into(),
        }
    }
}

/// A full stateless chat request: system prompt first, then history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn system_prompt(&self) -> Option<&str> {
        self.messages
            .first()
            .filter(|m| m.speaker == Speaker::System)
            .map(|m| m.content.as_str())
    }

    pub fn last_user(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.speaker == Speaker::User)
            .map(|m| m.content.as_str())
    }
}

/// Text in, text out.
pub trait ChatBackend: Send + Sync {
    /// Liveness check run when an agent is constructed.
    fn probe(&self) -> Result<(), BackendError> {
        Ok(())
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

/// Image plus text in, text out.
pub trait VisionBackend: Send + Sync {
    fn probe(&self) -> Result<(), BackendError> {
        Ok(())
    }

    fn describe(&self, request: &ChatRequest, image_png: &[u8]) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedImage {
    pub png: Vec<u8>,
    pub width: u32,
    pub height: u32,
}

impl GeneratedImage {
    /// Validates that `png` decodes as a PNG with nonzero dimensions.
    pub fn from_png(png: Vec<u8>) -> Result<Self, BackendError> {
        let (width, height) = png_dimensions(&png)?;
        Ok(Self { png, width, height })
    }
}

/// Reads the dimensions of a PNG without decoding pixel data.
pub fn png_dimensions(png: &[u8]) -> Result<(u32, u32), BackendError> {
    let reader =
        image::ImageReader::with_format(std::io::Cursor::new(png), image::ImageFormat::Png);
    let (w, h) = reader
        .into_dimensions()
        .map_err(|e| BackendError::Decode(format!("not a PNG image: {e}")))?;
    if w == 0 || h == 0 {
        return Err(BackendError::Decode("PNG has zero dimension".into()));
    }
    Ok((w, h))
}

pub trait ImageGenBackend: Send + Sync {
    fn generate(&self, prompt: &str) -> Result<GeneratedImage, BackendError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub bytes: Vec<u8>,
    /// File extension without the dot, e.g. `mp4`.
    pub extension: String,
    pub duration_secs: f64,
}

pub trait VideoGenBackend: Send + Sync {
    /// Animates a keyframe into a clip.
    fn animate(&self, keyframe_png: &[u8], prompt: &str) -> Result<VideoClip, BackendError>;
}

/// Axis-aligned face bounding box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceRegion {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<u32>,
}

impl FaceRegion {
    pub fn new(x: u32, y: u32, width: u32, height: u32) -> Self {
        Self {
            x,
            y,
            width,
            height,
            landmarks: None,
        }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }
}

/// A unit-norm embedding vector.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `raw` to unit length. Zero or non-finite input is rejected.
    pub fn normalized(raw: Vec<f64>) -> Result<Self, BackendError> {
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(BackendError::Decode(
                "embedding has zero or non-finite norm".into(),
            ));
        }
        Ok(Self(raw.into_iter().map(|v| v / norm).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity; for unit vectors this is the dot product.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

impl fmt::Debug for Embedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Embedding(dim={})", self.0.len())
    }
}

/// Face detection, embeddings and style classification.
pub trait EmbedBackend: Send + Sync {
    fn probe(&self) -> Result<(), BackendError> {
        Ok(())
    }

    fn detect_faces(&self, image_png: &[u8]) -> Result<Vec<FaceRegion>, BackendError>;
    fn embed_face(&self, image_png: &[u8], region: &FaceRegion)
        -> Result<Embedding, BackendError>;
    fn embed_image(&self, image_png: &[u8]) -> Result<Embedding, BackendError>;
    fn embed_text(&self, text: &str) -> Result<Embedding, BackendError>;
    fn classify_style(&self, image_png: &[u8], categories: &[String])
        -> Result<String, BackendError>;
}
