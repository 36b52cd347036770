//! Interface contract checks shared by every backend implementation.
//!
//! The same functions run against the mocks, against the HTTP clients
//! pointed at a local fake server, and against a live embed service when
//! one is configured. Each returns the first violated clause.

use super::mock::procedural_png;
use super::{
    png_dimensions, ChatBackend, ChatMessage, ChatRequest, EmbedBackend, Embedding,
    ImageGenBackend, VideoGenBackend,
};

/// Tolerance on the unit-norm requirement for embeddings.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation(pub String);

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "contract violation: {}", self.0)
    }
}

impl std::error::Error for Violation {}

type Check = Result<(), Violation>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(Violation(msg()))
    }
}

fn call<T, E: std::fmt::Display>(what: &str, r: Result<T, E>) -> Result<T, Violation> {
    r.map_err(|e| Violation(format!("{what} failed: {e}")))
}

/// Image used when the caller supplies none.
pub fn sample_image() -> Vec<u8> {
    procedural_png(7, "contract sample")
}

fn unit(what: &str, e: &Embedding, dimension: usize) -> Check {
    ensure((e.norm() - 1.0).abs() <= NORM_TOLERANCE, || {
        format!("{what}: norm {} is not 1 ± {NORM_TOLERANCE}", e.norm())
    })?;
    ensure(e.dimension() == dimension, || {
        format!("{what}: dimension {} differs from {dimension}", e.dimension())
    })?;
    ensure(e.as_slice().iter().all(|v| v.is_finite()), || {
        format!("{what}: non-finite component")
    })
}

/// Embedding contract. `image` should contain a face for the face clauses
/// to be exercised; with no detected face those clauses are skipped.
pub fn check_embed(backend: &dyn EmbedBackend, image: &[u8]) -> Check {
    call("probe", backend.probe())?;
    let (w, h) = call("decoding the sample image", png_dimensions(image))?;

    let a = call("embed_image", backend.embed_image(image))?;
    let dim = a.dimension();
    ensure(dim > 0, || "embed_image returned an empty vector".into())?;
    unit("embed_image", &a, dim)?;
    let b = call("embed_image (repeat)", backend.embed_image(image))?;
    ensure(a == b, || "embed_image is not deterministic".into())?;

    let t = call("embed_text", backend.embed_text("a lantern glowing at dusk"))?;
    unit("embed_text", &t, dim)?;
    let t2 = call("embed_text (repeat)", backend.embed_text("a lantern glowing at dusk"))?;
    ensure(t == t2, || "embed_text is not deterministic".into())?;

    let faces = call("detect_faces", backend.detect_faces(image))?;
    for (i, f) in faces.iter().enumerate() {
        ensure(f.width > 0 && f.height > 0, || format!("face {i} has zero size"))?;
        ensure(
            u64::from(f.x) + u64::from(f.width) <= u64::from(w)
                && u64::from(f.y) + u64::from(f.height) <= u64::from(h),
            || format!("face {i} lies outside the {w}x{h} image"),
        )?;
    }
    ensure(faces.windows(2).all(|p| p[0].area() >= p[1].area()), || {
        "faces are not sorted by area, largest first".into()
    })?;
    if let Some(face) = faces.first() {
        let e1 = call("embed_face", backend.embed_face(image, face))?;
        unit("embed_face", &e1, e1.dimension())?;
        let e2 = call("embed_face (repeat)", backend.embed_face(image, face))?;
        ensure((e1.cosine(&e2) - 1.0).abs() <= 1e-9, || {
            format!("identical faces have cosine {}", e1.cosine(&e2))
        })?;
    }

    let categories: Vec<String> = ["anime", "realism", "ink_wash"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let label = call("classify_style", backend.classify_style(image, &categories))?;
    ensure(categories.contains(&label), || {
        format!("classify_style returned {label:?}, not one of {categories:?}")
    })
}

pub fn check_image_gen(backend: &dyn ImageGenBackend) -> Check {
    for prompt in ["an elderly person painting a lantern", ""] {
        let img = call("generate", backend.generate(prompt))?;
        ensure(!img.png.is_empty(), || "empty image".into())?;
        let (w, h) = call("decoding the generated PNG", png_dimensions(&img.png))?;
        ensure((w, h) == (img.width, img.height), || {
            format!("reported {}x{} but PNG is {w}x{h}", img.width, img.height)
        })?;
    }
    Ok(())
}

pub fn check_video_gen(backend: &dyn VideoGenBackend) -> Check {
    let clip = call("animate", backend.animate(&sample_image(), "slow pan to the right"))?;
    ensure(!clip.bytes.is_empty(), || "empty clip".into())?;
    ensure(clip.duration_secs.is_finite() && clip.duration_secs > 0.0, || {
        format!("bad duration {}", clip.duration_secs)
    })?;
    ensure(
        !clip.extension.is_empty() && clip.extension.chars().all(|c| c.is_ascii_alphanumeric()),
        || format!("bad extension {:?}", clip.extension),
    )
}

pub fn check_chat(backend: &dyn ChatBackend) -> Check {
    call("probe", backend.probe())?;
    let request = ChatRequest {
        messages: vec![
            ChatMessage::system("You answer briefly."),
            ChatMessage::user("Say hello."),
        ],
    };
    let reply = call("complete", backend.complete(&request))?;
    ensure(!reply.trim().is_empty(), || "empty completion".into())
}
