//! Backend profiles: which implementation serves each capability.
//!
//! ```json
//! {
//!   "version": 1,
//!   "chat":      {"kind": "http", "endpoint": "https://api.openai.com/v1",
//!                 "model": "gpt-4o", "credential_env": "OPENAI_API_KEY"},
//!   "vision":    {"kind": "mock", "reject_first": 0},
//!   "image_gen": {"kind": "mock"},
//!   "video_gen": {"kind": "mock"},
//!   "embed":     {"kind": "http", "endpoint": "http://localhost:8088"}
//! }
//! ```
//!
//! Missing capabilities default to mocks. Credentials are never stored in a
//! profile, only the names of the environment variables holding them.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::http::{
    CallLog, HttpChat, HttpEmbed, HttpImageGen, HttpTarget, HttpVideoGen, HttpVision,
    EMBED_TIMEOUT, GENERATION_TIMEOUT,
};
use super::mock::{MockEmbed, MockImageGen, MockVideoGen, MOCK_EMBED_DIM};
use super::studio::{StudioChat, StudioChatOptions, StudioVision, StudioVisionOptions};
use super::{
    BackendError, ChatBackend, EmbedBackend, FaceRegion, ImageGenBackend, VideoGenBackend,
    VisionBackend,
};

pub const PROFILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpSettings {
    pub endpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Name of the environment variable holding the API key or token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChatChoice {
    Mock(StudioChatOptions),
    Http(HttpSettings),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VisionChoice {
    Mock(StudioVisionOptions),
    Http(HttpSettings),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GenChoice {
    Mock,
    Http(HttpSettings),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockEmbedOptions {
    pub dimension: usize,
    /// Regions reported for every image; `[]` means no faces anywhere.
    pub faces: Option<Vec<FaceRegion>>,
    pub style: Option<String>,
}

impl Default for MockEmbedOptions {
    fn default() -> Self {
        Self {
            dimension: MOCK_EMBED_DIM,
            faces: None,
            style: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedChoice {
    Mock(MockEmbedOptions),
    Http(HttpSettings),
}

fn default_version() -> u32 {
    PROFILE_VERSION
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendProfile {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default = "BackendProfile::mock_chat")]
    pub chat: ChatChoice,
    #[serde(default = "BackendProfile::mock_vision")]
    pub vision: VisionChoice,
    #[serde(default = "BackendProfile::mock_gen")]
    pub image_gen: GenChoice,
    #[serde(default = "BackendProfile::mock_gen")]
    pub video_gen: GenChoice,
    #[serde(default = "BackendProfile::mock_embed")]
    pub embed: EmbedChoice,
}

impl Default for BackendProfile {
    fn default() -> Self {
        Self::all_mock()
    }
}

/// A problem found by [`BackendProfile::check`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProfileIssue {
    pub capability: &'static str,
    pub message: String,
}

impl BackendProfile {
    fn mock_chat() -> ChatChoice {
        ChatChoice::Mock(StudioChatOptions::default())
    }
    fn mock_vision() -> VisionChoice {
        VisionChoice::Mock(StudioVisionOptions::default())
    }
    fn mock_gen() -> GenChoice {
        GenChoice::Mock
    }
    fn mock_embed() -> EmbedChoice {
        EmbedChoice::Mock(MockEmbedOptions::default())
    }

    pub fn all_mock() -> Self {
        Self {
            version: PROFILE_VERSION,
            chat: Self::mock_chat(),
            vision: Self::mock_vision(),
            image_gen: Self::mock_gen(),
            video_gen: Self::mock_gen(),
            embed: Self::mock_embed(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let p: Self = serde_json::from_str(text)
            .map_err(|e| BackendError::Config(format!("invalid backend profile: {e}")))?;
        if p.version != PROFILE_VERSION {
            return Err(BackendError::Config(format!(
                "unsupported profile version {} (expected {PROFILE_VERSION})",
                p.version
            )));
        }
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn http_entries(&self) -> Vec<(&'static str, &HttpSettings)> {
        let mut out = Vec::new();
        if let ChatChoice::Http(h) = &self.chat {
            out.push(("chat", h));
        }
        if let VisionChoice::Http(h) = &self.vision {
            out.push(("vision", h));
        }
        if let GenChoice::Http(h) = &self.image_gen {
            out.push(("image_gen", h));
        }
        if let GenChoice::Http(h) = &self.video_gen {
            out.push(("video_gen", h));
        }
        if let EmbedChoice::Http(h) = &self.embed {
            out.push(("embed", h));
        }
        out
    }

    /// Static validation plus a check that named credentials are set.
    pub fn check(&self) -> Vec<ProfileIssue> {
        let mut issues = Vec::new();
        for (capability, h) in self.http_entries() {
            let mut issue = |message: String| issues.push(ProfileIssue { capability, message });
            match url::Url::parse(&h.endpoint) {
                Ok(u) if matches!(u.scheme(), "http" | "https") => {}
                Ok(u) => issue(format!("unsupported URL scheme {:?}", u.scheme())),
                Err(e) => issue(format!("invalid endpoint {:?}: {e}", h.endpoint)),
            }
            if h.timeout_secs == Some(0) {
                issue("timeout_secs must be positive".into());
            }
            if let Some(var) = &h.credential_env {
                if std::env::var_os(var).is_none() {
                    issue(format!("environment variable {var} is not set"));
                }
            }
        }
        if let EmbedChoice::Mock(m) = &self.embed {
            if m.dimension == 0 {
                issues.push(ProfileIssue {
                    capability: "embed",
                    message: "mock dimension must be positive".into(),
                });
            }
        }
        issues
    }
}

fn target(h: &HttpSettings, default_timeout: Duration) -> Result<HttpTarget, BackendError> {
    let credential = match &h.credential_env {
        Some(var) => Some(std::env::var(var).map_err(|_| {
            BackendError::Config(format!("environment variable {var} is not set"))
        })?),
        None => None,
    };
    Ok(HttpTarget {
        base_url: h.endpoint.clone(),
        model: h.model.clone(),
        credential,
        timeout: h
            .timeout_secs
            .map(Duration::from_secs)
            .unwrap_or(default_timeout),
    })
}

/// One instance per capability, shared by the whole run.
#[derive(Clone)]
pub struct Backends {
    pub chat: Arc<dyn ChatBackend>,
    pub vision: Arc<dyn VisionBackend>,
    pub image_gen: Arc<dyn ImageGenBackend>,
    pub video_gen: Arc<dyn VideoGenBackend>,
    pub embed: Arc<dyn EmbedBackend>,
    pub call_log: CallLog,
}

impl Backends {
    /// Builds every capability; mocks are seeded with `seed`.
    pub fn from_profile(profile: &BackendProfile, seed: u64) -> Result<Self, BackendError> {
        let call_log = CallLog::disabled();
        let log = || call_log.clone();
        let chat: Arc<dyn ChatBackend> = match &profile.chat {
            ChatChoice::Mock(o) => Arc::new(StudioChat::new(seed, o.clone())),
            ChatChoice::Http(h) => Arc::new(HttpChat::new(target(h, GENERATION_TIMEOUT)?, log())?),
        };
        let vision: Arc<dyn VisionBackend> = match &profile.vision {
            VisionChoice::Mock(o) => Arc::new(StudioVision::new(o.clone())),
            VisionChoice::Http(h) => {
                Arc::new(HttpVision::new(target(h, GENERATION_TIMEOUT)?, log())?)
            }
        };
        let image_gen: Arc<dyn ImageGenBackend> = match &profile.image_gen {
            GenChoice::Mock => Arc::new(MockImageGen::new(seed)),
            GenChoice::Http(h) => {
                Arc::new(HttpImageGen::new(target(h, GENERATION_TIMEOUT)?, log())?)
            }
        };
        let video_gen: Arc<dyn VideoGenBackend> = match &profile.video_gen {
            GenChoice::Mock => Arc::new(MockVideoGen::new(seed)),
            GenChoice::Http(h) => {
                Arc::new(HttpVideoGen::new(target(h, GENERATION_TIMEOUT)?, log())?)
            }
        };
        let embed: Arc<dyn EmbedBackend> = match &profile.embed {
            EmbedChoice::Mock(o) => {
                let mut m = MockEmbed::new(seed).with_dimension(o.dimension.max(1));
                if let Some(faces) = &o.faces {
                    m = m.with_faces(faces.clone());
                }
                if let Some(style) = &o.style {
                    m = m.with_style(style.clone());
                }
                Arc::new(m)
            }
            EmbedChoice::Http(h) => Arc::new(HttpEmbed::new(target(h, EMBED_TIMEOUT)?, log())?),
        };
        Ok(Self {
            chat,
            vision,
            image_gen,
            video_gen,
            embed,
            call_log,
        })
    }

    pub fn mock(seed: u64) -> Self {
        Self::from_profile(&BackendProfile::all_mock(), seed)
            .expect("mock profile needs no configuration")
    }
}
