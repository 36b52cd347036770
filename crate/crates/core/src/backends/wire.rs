//! JSON wire format of the embed service.
//!
//! | method | path              | request            | response              |
//! |--------|-------------------|--------------------|-----------------------|
//! | POST   | `/detect/faces`   | [`ImagePayload`]   | [`FacesResponse`]     |
//! | POST   | `/embed/face`     | [`FacePayload`]    | [`EmbeddingResponse`] |
//! | POST   | `/embed/image`    | [`ImagePayload`]   | [`EmbeddingResponse`] |
//! | POST   | `/embed/text`     | [`TextPayload`]    | [`EmbeddingResponse`] |
//! | POST   | `/classify/style` | [`StylePayload`]   | [`StyleResponse`]     |
//! | GET    | `/healthz`        | -                  | [`HealthResponse`]    |
//!
//! Images travel as standard base64 in `image_b64`. Non-2xx responses carry
//! an [`ErrorEnvelope`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::FaceRegion;

pub const SCHEMA_VERSION: u32 = 1;

/// Header carrying the optional shared token.
pub const TOKEN_HEADER: &str = "x-embed-token";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub image_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacePayload {
    pub image_b64: String,
    #[serde(rename = "box")]
    pub region: BoxWire,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextPayload {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylePayload {
    pub image_b64: String,
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxWire {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl From<&FaceRegion> for BoxWire {
    fn from(r: &FaceRegion) -> Self {
        Self {
            x: r.x,
            y: r.y,
            width: r.width,
            height: r.height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceWire {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub landmarks: Option<u32>,
    #[serde(default)]
    pub score: Option<f64>,
}

impl From<FaceWire> for FaceRegion {
    fn from(f: FaceWire) -> Self {
        FaceRegion {
            x: f.x,
            y: f.y,
            width: f.width,
            height: f.height,
            landmarks: f.landmarks,
        }
    }
}

/// Faces sorted by area, largest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacesResponse {
    pub schema_version: u32,
    pub faces: Vec<FaceWire>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResponse {
    pub schema_version: u32,
    pub model: String,
    pub dimension: usize,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleResponse {
    pub schema_version: u32,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub schema_version: u32,
    pub status: String,
    /// Capability name to model identifier.
    #[serde(default)]
    pub models: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub code: u16,
    pub message: String,
}
