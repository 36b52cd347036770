//! Hosted backends over HTTP.
//!
//! Chat, vision and image generation speak the OpenAI-compatible REST
//! dialect. Video generation uses a minimal JSON `animate` endpoint, and the
//! embed backend talks to the embed service described in [`super::wire`].
//! Every call is appended to a [`CallLog`] when one is attached.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use reqwest::blocking::{Client, RequestBuilder};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use super::wire::{self, ErrorEnvelope};
use super::{
    BackendError, ChatBackend, ChatRequest, EmbedBackend, Embedding, FaceRegion, GeneratedImage,
    ImageGenBackend, Speaker, VideoClip, VideoGenBackend, VisionBackend,
};
use crate::fsutil::sha256_hex;

pub const GENERATION_TIMEOUT: Duration = Duration::from_secs(120);
pub const EMBED_TIMEOUT: Duration = Duration::from_secs(30);

/// Append-only JSON-lines log of hosted calls, shared by all clients.
#[derive(Clone, Default)]
pub struct CallLog {
    sink: Arc<Mutex<Option<File>>>,
}

#[derive(Debug, Clone, Serialize)]
struct CallRecord<'a> {
    ts: String,
    capability: &'a str,
    endpoint: &'a str,
    request_sha256: String,
    latency_ms: u128,
    ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt_tokens: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    completion_tokens: Option<u64>,
}

impl CallLog {
    pub fn disabled() -> Self {
        Self::default()
    }

    /// Starts appending to `path`, replacing any previous sink.
    pub fn attach(&self, path: &Path) -> std::io::Result<()> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        *self.sink.lock().unwrap() = Some(file);
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        capability: &str,
        endpoint: &str,
        request_body: &[u8],
        started: Instant,
        ok: bool,
        tokens: (Option<u64>, Option<u64>),
    ) {
        let mut guard = self.sink.lock().unwrap();
        let Some(file) = guard.as_mut() else { return };
        let rec = CallRecord {
            ts: chrono::Utc::now().to_rfc3339(),
            capability,
            endpoint,
            request_sha256: sha256_hex(request_body),
            latency_ms: started.elapsed().as_millis(),
            ok,
            prompt_tokens: tokens.0,
            completion_tokens: tokens.1,
        };
        if let Ok(line) = serde_json::to_string(&rec) {
            let _ = writeln!(file, "{line}");
        }
    }
}

/// Connection settings for one hosted capability.
#[derive(Debug, Clone)]
pub struct HttpTarget {
    pub base_url: String,
    pub model: Option<String>,
    /// Bearer token for OpenAI-style APIs, shared token for the embed service.
    pub credential: Option<String>,
    pub timeout: Duration,
}

struct Transport {
    client: Client,
    target: HttpTarget,
    log: CallLog,
    capability: &'static str,
}

impl Transport {
    fn new(
        target: HttpTarget,
        log: CallLog,
        capability: &'static str,
    ) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(target.timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            client,
            target,
            log,
            capability,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.target.base_url.trim_end_matches('/'), path)
    }

    fn authorize(&self, rb: RequestBuilder, bearer: bool) -> RequestBuilder {
        match (&self.target.credential, bearer) {
            (Some(c), true) => rb.bearer_auth(c),
            (Some(c), false) => rb.header(wire::TOKEN_HEADER, c),
            (None, _) => rb,
        }
    }

    fn send(&self, rb: RequestBuilder, url: &str, body: &[u8]) -> Result<Value, BackendError> {
        let started = Instant::now();
        let result = rb
            .send()
            .map_err(|e| map_reqwest(e, self.target.timeout))
            .and_then(|resp| {
                let status = resp.status();
                let text = resp.text().map_err(|e| map_reqwest(e, self.target.timeout))?;
                if !status.is_success() {
                    let message = serde_json::from_str::<ErrorEnvelope>(&text)
                        .map(|e| e.message)
                        .unwrap_or(text);
                    return Err(BackendError::Status {
                        status: status.as_u16(),
                        message,
                    });
                }
                serde_json::from_str::<Value>(&text)
                    .map_err(|e| BackendError::Decode(format!("invalid JSON: {e}")))
            });
        let tokens = result
            .as_ref()
            .ok()
            .map(|v| {
                (
                    v.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
                    v.pointer("/usage/completion_tokens").and_then(Value::as_u64),
                )
            })
            .unwrap_or((None, None));
        self.log
            .record(self.capability, url, body, started, result.is_ok(), tokens);
        result
    }

    fn post<B: Serialize>(&self, path: &str, body: &B, bearer: bool) -> Result<Value, BackendError> {
        let url = self.url(path);
        let bytes = serde_json::to_vec(body).map_err(|e| BackendError::Config(e.to_string()))?;
        let rb = self
            .client
            .post(&url)
            .header("content-type", "application/json")
            .body(bytes.clone());
        self.send(self.authorize(rb, bearer), &url, &bytes)
    }

    fn get(&self, path: &str, bearer: bool) -> Result<Value, BackendError> {
        let url = self.url(path);
        let rb = self.client.get(&url);
        self.send(self.authorize(rb, bearer), &url, b"")
    }
}

fn map_reqwest(e: reqwest::Error, timeout: Duration) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout(timeout)
    } else {
        BackendError::Transport(e.to_string())
    }
}

fn decode<T: DeserializeOwned>(v: Value) -> Result<T, BackendError> {
    serde_json::from_value(v).map_err(|e| BackendError::Decode(e.to_string()))
}

fn role_name(s: Speaker) -> &'static str {
    match s {
        Speaker::System => "system",
        Speaker::User => "user",
        Speaker::Assistant => "assistant",
    }
}

fn chat_content(v: &Value) -> Result<String, BackendError> {
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Decode("missing choices[0].message.content".into()))
}

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpChat {
    transport: Transport,
}

impl HttpChat {
    pub fn new(target: HttpTarget, log: CallLog) -> Result<Self, BackendError> {
        Ok(Self {
            transport: Transport::new(target, log, "chat")?,
        })
    }

    fn body(&self, request: &ChatRequest, image_png: Option<&[u8]>) -> Value {
        let last_user = request
            .messages
            .iter()
            .rposition(|m| m.speaker == Speaker::User);
        let messages: Vec<Value> = request
            .messages
            .iter()
            .enumerate()
            .map(|(i, m)| match image_png {
                Some(png) if Some(i) == last_user => json!({
                    "role": role_name(m.speaker),
                    "content": [
                        {"type": "text", "text": m.content},
                        {"type": "image_url", "image_url": {
                            "url": format!("data:image/png;base64,{}", B64.encode(png))
                        }}
                    ]
                }),
                _ => json!({"role": role_name(m.speaker), "content": m.content}),
            })
            .collect();
        let mut body = json!({ "messages": messages });
        if let Some(model) = &self.transport.target.model {
            body["model"] = json!(model);
        }
        body
    }
}

impl ChatBackend for HttpChat {
    fn probe(&self) -> Result<(), BackendError> {
        self.transport
            .get("models", true)
            .map(|_| ())
            .map_err(|e| BackendError::Unavailable(e.to_string()))
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let v = self
            .transport
            .post("chat/completions", &self.body(request, None), true)?;
        chat_content(&v)
    }
}

/// Vision chat client: the image rides on the last user message.
pub struct HttpVision {
    chat: HttpChat,
}

impl HttpVision {
    pub fn new(target: HttpTarget, log: CallLog) -> Result<Self, BackendError> {
        Ok(Self {
            chat: HttpChat {
                transport: Transport::new(target, log, "vision")?,
            },
        })
    }
}

impl VisionBackend for HttpVision {
    fn probe(&self) -> Result<(), BackendError> {
        ChatBackend::probe(&self.chat)
    }

    fn describe(&self, request: &ChatRequest, image_png: &[u8]) -> Result<String, BackendError> {
        let body = self.chat.body(request, Some(image_png));
        let v = self.chat.transport.post("chat/completions", &body, true)?;
        chat_content(&v)
    }
}

/// OpenAI-compatible `/images/generations` client requesting base64 output.
pub struct HttpImageGen {
    transport: Transport,
}

impl HttpImageGen {
    pub fn new(target: HttpTarget, log: CallLog) -> Result<Self, BackendError> {
        Ok(Self {
            transport: Transport::new(target, log, "image_gen")?,
        })
    }
}

impl ImageGenBackend for HttpImageGen {
    fn generate(&self, prompt: &str) -> Result<GeneratedImage, BackendError> {
        let mut body = json!({"prompt": prompt, "n": 1, "response_format": "b64_json"});
        if let Some(model) = &self.transport.target.model {
            body["model"] = json!(model);
        }
        let v = self.transport.post("images/generations", &body, true)?;
        let b64 = v
            .pointer("/data/0/b64_json")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Decode("missing data[0].b64_json".into()))?;
        let png = B64
            .decode(b64)
            .map_err(|e| BackendError::Decode(format!("bad base64 image: {e}")))?;
        GeneratedImage::from_png(png)
    }
}

/// Client for a JSON `POST /animate` endpoint:
/// `{model?, prompt, image_b64}` → `{video_b64, format, duration_secs}`.
pub struct HttpVideoGen {
    transport: Transport,
}

impl HttpVideoGen {
    pub fn new(target: HttpTarget, log: CallLog) -> Result<Self, BackendError> {
        Ok(Self {
            transport: Transport::new(target, log, "video_gen")?,
        })
    }
}

impl VideoGenBackend for HttpVideoGen {
    fn animate(&self, keyframe_png: &[u8], prompt: &str) -> Result<VideoClip, BackendError> {
        let mut body = json!({"prompt": prompt, "image_b64": B64.encode(keyframe_png)});
        if let Some(model) = &self.transport.target.model {
            body["model"] = json!(model);
        }
        let v = self.transport.post("animate", &body, true)?;
        let bytes = v
            .get("video_b64")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Decode("missing video_b64".into()))
            .and_then(|s| {
                B64.decode(s)
                    .map_err(|e| BackendError::Decode(format!("bad base64 video: {e}")))
            })?;
        if bytes.is_empty() {
            return Err(BackendError::Decode("empty video clip".into()));
        }
        let extension = v
            .get("format")
            .and_then(Value::as_str)
            .unwrap_or("mp4")
            .to_string();
        let duration_secs = v
            .get("duration_secs")
            .and_then(Value::as_f64)
            .ok_or_else(|| BackendError::Decode("missing duration_secs".into()))?;
        Ok(VideoClip {
            bytes,
            extension,
            duration_secs,
        })
    }
}

/// Client for the embed service.
pub struct HttpEmbed {
    transport: Transport,
}

impl HttpEmbed {
    pub fn new(target: HttpTarget, log: CallLog) -> Result<Self, BackendError> {
        Ok(Self {
            transport: Transport::new(target, log, "embed")?,
        })
    }

    pub fn health(&self) -> Result<wire::HealthResponse, BackendError> {
        decode(self.transport.get("healthz", false)?)
    }

    fn embedding(&self, path: &str, body: &impl Serialize) -> Result<Embedding, BackendError> {
        let r: wire::EmbeddingResponse = decode(self.transport.post(path, body, false)?)?;
        if r.embedding.len() != r.dimension {
            return Err(BackendError::Decode(format!(
                "declared dimension {} but got {} values",
                r.dimension,
                r.embedding.len()
            )));
        }
        // Service vectors are unit length up to float32 rounding; reject
        // anything further off than that.
        let norm = r.embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-3 {
            return Err(BackendError::Decode(format!(
                "embedding norm {norm} is not unit"
            )));
        }
        Embedding::normalized(r.embedding)
    }
}

impl EmbedBackend for HttpEmbed {
    fn probe(&self) -> Result<(), BackendError> {
        let h = self
            .health()
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        if h.status != "ok" {
            return Err(BackendError::Unavailable(format!(
                "embed service status {}",
                h.status
            )));
        }
        Ok(())
    }

    fn detect_faces(&self, image_png: &[u8]) -> Result<Vec<FaceRegion>, BackendError> {
        let body = wire::ImagePayload {
            image_b64: B64.encode(image_png),
        };
        let r: wire::FacesResponse = decode(self.transport.post("detect/faces", &body, false)?)?;
        Ok(r.faces.into_iter().map(FaceRegion::from).collect())
    }

    fn embed_face(
        &self,
        image_png: &[u8],
        region: &FaceRegion,
    ) -> Result<Embedding, BackendError> {
        let body = wire::FacePayload {
            image_b64: B64.encode(image_png),
            region: region.into(),
        };
        self.embedding("embed/face", &body)
    }

    fn embed_image(&self, image_png: &[u8]) -> Result<Embedding, BackendError> {
        let body = wire::ImagePayload {
            image_b64: B64.encode(image_png),
        };
        self.embedding("embed/image", &body)
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, BackendError> {
        self.embedding(
            "embed/text",
            &wire::TextPayload {
                text: text.to_string(),
            },
        )
    }

    fn classify_style(
        &self,
        image_png: &[u8],
        categories: &[String],
    ) -> Result<String, BackendError> {
        let body = wire::StylePayload {
            image_b64: B64.encode(image_png),
            categories: categories.to_vec(),
        };
        let r: wire::StyleResponse = decode(self.transport.post("classify/style", &body, false)?)?;
        Ok(r.label)
    }
}
