//! Deterministic in-process backends for tests and offline runs.
//!
//! Every mock records what it was asked in a capture ledger so prompt
//! threading can be asserted after the fact.

use std::io::Cursor;
use std::sync::Mutex;

use image::{ImageFormat, Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{
    BackendError, ChatBackend, ChatRequest, EmbedBackend, Embedding, FaceRegion, GeneratedImage,
    ImageGenBackend, VideoClip, VideoGenBackend, VisionBackend,
};
use crate::fsutil::sha256_hex;

/// Side length of mock-generated keyframes.
pub const MOCK_IMAGE_SIZE: u32 = 64;

/// Default embedding dimension of [`MockEmbed`].
pub const MOCK_EMBED_DIM: usize = 512;

/// One scripted reply, or a scripted failure.
pub type ScriptStep = Result<String, BackendError>;

struct Script {
    steps: Vec<ScriptStep>,
    cursor: usize,
}

impl Script {
    fn new(steps: Vec<ScriptStep>) -> Self {
        assert!(!steps.is_empty(), "a mock script needs at least one step");
        Self { steps, cursor: 0 }
    }

    fn next(&mut self) -> Result<String, BackendError> {
        let step = self
            .steps
            .get(self.cursor)
            .cloned()
            .ok_or(BackendError::ScriptExhausted {
                served: self.cursor,
            })?;
        self.cursor += 1;
        step
    }
}

/// Chat backend returning a fixed script of replies in order.
///
/// Calls past the end of the script fail with
/// [`BackendError::ScriptExhausted`].
pub struct ScriptedChat {
    inner: Mutex<(Script, Vec<ChatRequest>)>,
}

impl ScriptedChat {
    /// Panics if `replies` is empty.
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::from_steps(replies.into_iter().map(|r| Ok(r.into())).collect())
    }

    pub fn from_steps(steps: Vec<ScriptStep>) -> Self {
        Self {
            inner: Mutex::new((Script::new(steps), Vec::new())),
        }
    }

    /// Every request received so far, in order.
    pub fn ledger(&self) -> Vec<ChatRequest> {
        self.inner.lock().unwrap().1.clone()
    }

    pub fn calls(&self) -> usize {
        self.inner.lock().unwrap().1.len()
    }
}

impl ChatBackend for ScriptedChat {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let mut guard = self.inner.lock().unwrap();
        guard.1.push(request.clone());
        guard.0.next()
    }
}

/// A vision request as captured by [`ScriptedVision`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisionCall {
    pub request: ChatRequest,
    pub image_sha256: String,
}

/// Vision backend returning scripted replies in order.
pub struct ScriptedVision {
    inner: Mutex<(Script, Vec<VisionCall>)>,
}

impl ScriptedVision {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::from_steps(replies.into_iter().map(|r| Ok(r.into())).collect())
    }

    pub fn from_steps(steps: Vec<ScriptStep>) -> Self {
        Self {
            inner: Mutex::new((Script::new(steps), Vec::new())),
        }
    }

    pub fn ledger(&self) -> Vec<VisionCall> {
        self.inner.lock().unwrap().1.clone()
    }

    pub fn calls(&self) -> usize {
        self.inner.lock().unwrap().1.len()
    }
}

impl VisionBackend for ScriptedVision {
    fn describe(&self, request: &ChatRequest, image_png: &[u8]) -> Result<String, BackendError> {
        let mut guard = self.inner.lock().unwrap();
        guard.1.push(VisionCall {
            request: request.clone(),
            image_sha256: sha256_hex(image_png),
        });
        guard.0.next()
    }
}

/// A backend whose liveness probe and calls always fail.
#[derive(Debug, Default, Clone, Copy)]
pub struct Unreachable;

impl Unreachable {
    fn err() -> BackendError {
        BackendError::Unavailable("mock backend is configured as unreachable".into())
    }
}

impl ChatBackend for Unreachable {
    fn probe(&self) -> Result<(), BackendError> {
        Err(Self::err())
    }

    fn complete(&self, _: &ChatRequest) -> Result<String, BackendError> {
        Err(Self::err())
    }
}

impl VisionBackend for Unreachable {
    fn probe(&self) -> Result<(), BackendError> {
        Err(Self::err())
    }

    fn describe(&self, _: &ChatRequest, _: &[u8]) -> Result<String, BackendError> {
        Err(Self::err())
    }
}

fn seeded_digest(seed: u64, domain: &str, parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(domain.as_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

/// Renders a deterministic color field from `(seed, prompt)`.
///
/// Two colors from the digest fill a 4x4 cell grid chosen by 16 digest bits,
/// with a diagonal shading ramp so neighboring prompts still differ per pixel.
pub fn procedural_png(seed: u64, prompt: &str) -> Vec<u8> {
    let d = seeded_digest(seed, "image", &[prompt.as_bytes()]);
    let a = [d[0], d[1], d[2]];
    let b = [d[3], d[4], d[5]];
    let mask = u16::from_le_bytes([d[6], d[7]]);
    let size = MOCK_IMAGE_SIZE;
    let cell = size / 4;
    let img = RgbImage::from_fn(size, size, |x, y| {
        let bit = (y / cell) * 4 + (x / cell);
        let base = if mask >> bit & 1 == 1 { a } else { b };
        let shade = ((x + y) * u32::from(d[8] % 64) / (2 * size)) as u8;
        Rgb([
            base[0].wrapping_add(shade),
            base[1].wrapping_add(shade / 2),
            base[2].wrapping_sub(shade),
        ])
    });
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("encoding an in-memory PNG cannot fail");
    out.into_inner()
}

/// Image generator producing [`procedural_png`] output.
pub struct MockImageGen {
    seed: u64,
    prompts: Mutex<Vec<String>>,
}

impl MockImageGen {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            prompts: Mutex::new(Vec::new()),
        }
    }

    /// Every prompt received so far, in order.
    pub fn ledger(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }

    pub fn calls(&self) -> usize {
        self.prompts.lock().unwrap().len()
    }
}

impl ImageGenBackend for MockImageGen {
    fn generate(&self, prompt: &str) -> Result<GeneratedImage, BackendError> {
        self.prompts.lock().unwrap().push(prompt.to_string());
        Ok(GeneratedImage {
            png: procedural_png(self.seed, prompt),
            width: MOCK_IMAGE_SIZE,
            height: MOCK_IMAGE_SIZE,
        })
    }
}

/// Video generator emitting a small text placeholder per clip.
pub struct MockVideoGen {
    seed: u64,
    prompts: Mutex<Vec<String>>,
}

impl MockVideoGen {
    pub const CLIP_SECONDS: f64 = 4.0;

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn ledger(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }

    pub fn calls(&self) -> usize {
        self.prompts.lock().unwrap().len()
    }
}

impl VideoGenBackend for MockVideoGen {
    fn animate(&self, keyframe_png: &[u8], prompt: &str) -> Result<VideoClip, BackendError> {
        self.prompts.lock().unwrap().push(prompt.to_string());
        let d = seeded_digest(self.seed, "video", &[keyframe_png, prompt.as_bytes()]);
        let body = format!(
            "mock-clip v1\nkeyframe {}\nframes {}\n",
            sha256_hex(keyframe_png),
            hex::encode(d)
        );
        Ok(VideoClip {
            bytes: body.into_bytes(),
            extension: "clip".into(),
            duration_secs: Self::CLIP_SECONDS,
        })
    }
}

/// Embedding backend deriving unit Gaussian vectors from content hashes.
///
/// Identical inputs embed identically; unrelated inputs are nearly
/// orthogonal in high dimension. Face detection returns a configurable
/// fixed region set regardless of image content.
pub struct MockEmbed {
    seed: u64,
    dimension: usize,
    faces: Vec<FaceRegion>,
    style: Option<String>,
}

impl MockEmbed {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            dimension: MOCK_EMBED_DIM,
            faces: vec![FaceRegion {
                landmarks: Some(68),
                ..FaceRegion::new(16, 16, 32, 32)
            }],
            style: None,
        }
    }

    pub fn with_dimension(mut self, dimension: usize) -> Self {
        assert!(dimension > 0);
        self.dimension = dimension;
        self
    }

    pub fn with_faces(mut self, faces: Vec<FaceRegion>) -> Self {
        self.faces = faces;
        self
    }

    /// Fixes the label returned by `classify_style`.
    pub fn with_style(mut self, label: impl Into<String>) -> Self {
        self.style = Some(label.into());
        self
    }

    fn vector(&self, domain: &str, parts: &[&[u8]]) -> Embedding {
        let mut rng = ChaCha8Rng::from_seed(seeded_digest(self.seed, domain, parts));
        let raw: Vec<f64> = (0..self.dimension)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Embedding::normalized(raw).expect("gaussian sample has nonzero norm")
    }
}

impl EmbedBackend for MockEmbed {
    fn detect_faces(&self, _image_png: &[u8]) -> Result<Vec<FaceRegion>, BackendError> {
        Ok(self.faces.clone())
    }

    fn embed_face(
        &self,
        image_png: &[u8],
        region: &FaceRegion,
    ) -> Result<Embedding, BackendError> {
        let coords: Vec<u8> = [region.x, region.y, region.width, region.height]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        Ok(self.vector("face", &[image_png, &coords]))
    }

    fn embed_image(&self, image_png: &[u8]) -> Result<Embedding, BackendError> {
        Ok(self.vector("image", &[image_png]))
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, BackendError> {
        Ok(self.vector("text", &[text.as_bytes()]))
    }

    fn classify_style(
        &self,
        image_png: &[u8],
        categories: &[String],
    ) -> Result<String, BackendError> {
        if let Some(s) = &self.style {
            return Ok(s.clone());
        }
        if categories.is_empty() {
            return Err(BackendError::Config("no style categories given".into()));
        }
        let d = seeded_digest(self.seed, "style", &[image_png]);
        Ok(categories[d[0] as usize % categories.len()].clone())
    }
}
