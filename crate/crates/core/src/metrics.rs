//! Cross-scene evaluation scores.
//!
//! * CSFD: mean pairwise cosine similarity of face embeddings over all
//!   frame pairs `i < j` among frames with a detected face.
//! * CSSC: share of frames in the most frequent style category, × 100.
//! * Average keyframe CLIP score: mean cosine between each frame's image
//!   embedding and its scene text embedding, reported as a raw cosine.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    BackendError, ChatMessage, ChatRequest, EmbedBackend, Embedding, FaceRegion, RetryPolicy,
    VisionBackend,
};
use crate::fsutil;
use crate::keyframes::{self, KeyframeIndex};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "report.txt";

/// First-line marker of a style-classification request.
pub const STYLE_TASK: &str = "TASK: STYLE";

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("frame set is empty")]
    EmptyFrameSet,
    #[error("frame index {0} appears more than once")]
    DuplicateIndex(usize),
    #[error("need at least 2 frames with a detected face, found {found}")]
    InsufficientFaces { found: usize },
    #[error("style judge gave no valid category for frame {frame}: {reply:?}")]
    Classification { frame: usize, reply: String },
    #[error("frame {frame} has no scene prompt")]
    MissingPrompt { frame: usize },
    #[error("invalid style set: {0}")]
    InvalidStyles(String),
    #[error("{metric} backend call for frame {frame} failed: {source}")]
    Backend {
        metric: &'static str,
        frame: usize,
        #[source]
        source: BackendError,
    },
    #[error("run directory: {0}")]
    RunLayout(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleCategory {
    Anime,
    Illustration,
    Origami,
    OilPainting,
    Realism,
    Cyberpunk,
    InkWash,
}

impl StyleCategory {
    pub const ALL: [StyleCategory; 7] = [
        StyleCategory::Anime,
        StyleCategory::Illustration,
        StyleCategory::Origami,
        StyleCategory::OilPainting,
        StyleCategory::Realism,
        StyleCategory::Cyberpunk,
        StyleCategory::InkWash,
    ];

    pub fn label(self) -> &'static str {
        match self {
            StyleCategory::Anime => "anime",
            StyleCategory::Illustration => "illustration",
            StyleCategory::Origami => "origami",
            StyleCategory::OilPainting => "oil_painting",
            StyleCategory::Realism => "realism",
            StyleCategory::Cyberpunk => "cyberpunk",
            StyleCategory::InkWash => "ink_wash",
        }
    }
}

/// The closed set of labels a style judge may answer with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleSet {
    labels: Vec<String>,
}

impl Default for StyleSet {
    fn default() -> Self {
        Self {
            labels: StyleCategory::ALL
                .iter()
                .map(|c| c.label().to_string())
                .collect(),
        }
    }
}

fn canonical(raw: &str) -> String {
    raw.trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
        .replace([' ', '-'], "_")
}

impl StyleSet {
    /// A configured label set replacing the seven defaults.
    pub fn custom<S: AsRef<str>>(labels: &[S]) -> Result<Self, MetricError> {
        let mut out: Vec<String> = Vec::new();
        for l in labels {
            let c = canonical(l.as_ref());
            if c.is_empty() {
                return Err(MetricError::InvalidStyles("empty label".into()));
            }
            if out.contains(&c) {
                return Err(MetricError::InvalidStyles(format!("duplicate label {c}")));
            }
            out.push(c);
        }
        if out.is_empty() {
            return Err(MetricError::InvalidStyles("no labels".into()));
        }
        Ok(Self { labels: out })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Maps a judge reply onto a label, accepting spaces or hyphens for
    /// underscores and surrounding punctuation.
    pub fn match_label(&self, reply: &str) -> Option<String> {
        let first_line = reply.trim().lines().next().unwrap_or("");
        let c = canonical(first_line);
        self.labels.iter().find(|l| **l == c).cloned()
    }

    fn prompt(&self) -> String {
        format!(
            "{STYLE_TASK}\nClassify the visual style of this keyframe. \
             Answer with exactly one of these labels and nothing else: {}.",
            self.labels.join(", ")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub index: usize,
    /// PNG bytes.
    pub image: Vec<u8>,
    pub scene_prompt: Option<String>,
}

/// Ordered keyframes under evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSet {
    frames: Vec<Frame>,
}

impl FrameSet {
    pub fn new(frames: Vec<Frame>) -> Result<Self, MetricError> {
        if frames.is_empty() {
            return Err(MetricError::EmptyFrameSet);
        }
        let mut seen = std::collections::BTreeSet::new();
        for f in &frames {
            if !seen.insert(f.index) {
                return Err(MetricError::DuplicateIndex(f.index));
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub i: usize,
    pub j: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsfdDetail {
    pub score: f64,
    pub pair_count: usize,
    pub face_frames: Vec<usize>,
    /// Frames with no detected face.
    pub excluded_frames: Vec<usize>,
    pub pairs: Vec<PairScore>,
}

/// CSFD over already-extracted face vectors, in frame order.
///
/// Vectors are unit-normalized here, so callers may pass raw embeddings.
pub fn csfd_from_vectors(faces: &[(usize, Vec<f64>)]) -> Result<CsfdDetail, MetricError> {
    let n = faces.len();
    if n < 2 {
        return Err(MetricError::InsufficientFaces { found: n });
    }
    let unit: Vec<Embedding> = faces
        .iter()
        .map(|(idx, v)| {
            Embedding::normalized(v.clone()).map_err(|source| MetricError::Backend {
                metric: "csfd",
                frame: *idx,
                source,
            })
        })
        .collect::<Result<_, _>>()?;
    let pair_ids: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let pairs: Vec<PairScore> = pair_ids
        .par_iter()
        .map(|&(i, j)| PairScore {
            i: faces[i].0,
            j: faces[j].0,
            similarity: unit[i].cosine(&unit[j]),
        })
        .collect();
    let count = n * (n - 1) / 2;
    let total: f64 = pairs.iter().map(|p| p.similarity).sum();
    Ok(CsfdDetail {
        score: total / count as f64,
        pair_count: count,
        face_frames: faces.iter().map(|(i, _)| *i).collect(),
        excluded_frames: Vec::new(),
        pairs,
    })
}

/// A frame's largest-face embedding, or `None` when no face was found.
type FaceVector = Option<(usize, Vec<f64>)>;

/// Detects the largest face in each frame, embeds it, and scores CSFD.
/// Frames without a face are excluded and listed in the detail.
pub fn csfd_score(frames: &FrameSet, embed: &dyn EmbedBackend) -> Result<CsfdDetail, MetricError> {
    let retry = RetryPolicy::default();
    let per_frame: Vec<Result<FaceVector, MetricError>> = frames
        .frames()
        .par_iter()
        .map(|f| {
            let err = |source| MetricError::Backend {
                metric: "csfd",
                frame: f.index,
                source,
            };
            let faces = retry.run(|| embed.detect_faces(&f.image)).map_err(err)?;
            let Some(largest) = largest_face(&faces) else {
                return Ok(None);
            };
            let e = retry
                .run(|| embed.embed_face(&f.image, &largest))
                .map_err(err)?;
            Ok(Some((f.index, e.as_slice().to_vec())))
        })
        .collect();
    let mut faces = Vec::new();
    let mut excluded = Vec::new();
    for (f, r) in frames.frames().iter().zip(per_frame) {
        match r? {
            Some(v) => faces.push(v),
            None => excluded.push(f.index),
        }
    }
    let mut detail = csfd_from_vectors(&faces)?;
    detail.excluded_frames = excluded;
    Ok(detail)
}

/// Largest region by area; the first one wins ties.
pub fn largest_face(faces: &[FaceRegion]) -> Option<FaceRegion> {
    faces
        .iter()
        .fold(None::<FaceRegion>, |best, f| match best {
            Some(b) if b.area() >= f.area() => Some(b),
            _ => Some(*f),
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLabel {
    pub index: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsscDetail {
    pub score: f64,
    pub modal_count: usize,
    pub frame_count: usize,
    pub counts: BTreeMap<String, usize>,
    pub labels: Vec<FrameLabel>,
}

/// `max count / n × 100` over the given labels.
pub fn cssc_from_labels<S: AsRef<str>>(labels: &[S]) -> Result<CsscDetail, MetricError> {
    if labels.is_empty() {
        return Err(MetricError::EmptyFrameSet);
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l.as_ref().to_string()).or_default() += 1;
    }
    let modal_count = counts.values().copied().max().unwrap_or(0);
    let n = labels.len();
    Ok(CsscDetail {
        score: modal_count as f64 / n as f64 * 100.0,
        modal_count,
        frame_count: n,
        counts,
        labels: labels
            .iter()
            .enumerate()
            .map(|(i, l)| FrameLabel {
                index: i + 1,
                label: l.as_ref().to_string(),
            })
            .collect(),
    })
}

fn judge_request(styles: &StyleSet, reminder: Option<&str>) -> ChatRequest {
    let mut messages = vec![
        ChatMessage::system(
            "You classify the visual style of images into a fixed set of categories.",
        ),
        ChatMessage::user(styles.prompt()),
    ];
    if let Some(previous) = reminder {
        messages.push(ChatMessage::assistant(previous));
        messages.push(ChatMessage::user(format!(
            "That is not one of the allowed labels. Reply with exactly one of: {}.",
            styles.labels().join(", ")
        )));
    }
    ChatRequest { messages }
}

/// Classifies one frame, reprompting once on an out-of-set answer.
pub fn classify_frame(
    frame: &Frame,
    judge: &dyn VisionBackend,
    styles: &StyleSet,
) -> Result<String, MetricError> {
    let retry = RetryPolicy::default();
    let err = |source| MetricError::Backend {
        metric: "cssc",
        frame: frame.index,
        source,
    };
    let first = retry
        .run(|| judge.describe(&judge_request(styles, None), &frame.image))
        .map_err(err)?;
    if let Some(l) = styles.match_label(&first) {
        return Ok(l);
    }
    let second = retry
        .run(|| judge.describe(&judge_request(styles, Some(&first)), &frame.image))
        .map_err(err)?;
    styles
        .match_label(&second)
        .ok_or(MetricError::Classification {
            frame: frame.index,
            reply: second,
        })
}

pub fn cssc_score(
    frames: &FrameSet,
    judge: &dyn VisionBackend,
    styles: &StyleSet,
) -> Result<CsscDetail, MetricError> {
    let labels: Vec<String> = frames
        .frames()
        .par_iter()
        .map(|f| classify_frame(f, judge, styles))
        .collect::<Result<_, _>>()?;
    let mut detail = cssc_from_labels(&labels)?;
    for (l, f) in detail.labels.iter_mut().zip(frames.frames()) {
        l.index = f.index;
    }
    Ok(detail)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameClip {
    pub index: usize,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipDetail {
    /// Mean raw cosine in [-1, 1].
    pub score: f64,
    /// The same mean on the ×100 scale.
    pub score_x100: f64,
    pub per_frame: Vec<FrameClip>,
}

impl ClipDetail {
    pub fn from_cosines(per_frame: Vec<FrameClip>) -> Result<Self, MetricError> {
        if per_frame.is_empty() {
            return Err(MetricError::EmptyFrameSet);
        }
        let mean = per_frame.iter().map(|f| f.cosine).sum::<f64>() / per_frame.len() as f64;
        Ok(Self {
            score: mean,
            score_x100: mean * 100.0,
            per_frame,
        })
    }
}

pub fn avg_clip_score(frames: &FrameSet, embed: &dyn EmbedBackend) -> Result<ClipDetail, MetricError> {
    if let Some(f) = frames.frames().iter().find(|f| f.scene_prompt.is_none()) {
        return Err(MetricError::MissingPrompt { frame: f.index });
    }
    let retry = RetryPolicy::default();
    let per_frame: Vec<FrameClip> = frames
        .frames()
        .par_iter()
        .map(|f| {
            let err = |source| MetricError::Backend {
                metric: "avg_clip",
                frame: f.index,
                source,
            };
            let prompt = f.scene_prompt.as_deref().unwrap_or_default();
            let img = retry.run(|| embed.embed_image(&f.image)).map_err(err)?;
            let txt = retry.run(|| embed.embed_text(prompt)).map_err(err)?;
            Ok(FrameClip {
                index: f.index,
                cosine: img.cosine(&txt),
            })
        })
        .collect::<Result<_, MetricError>>()?;
    ClipDetail::from_cosines(per_frame)
}

/// Placeholders for distribution metrics computed by external tools.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExternalScores {
    pub fid: Option<f64>,
    pub is: Option<f64>,
    pub fvd: Option<f64>,
    pub kvd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub frame_count: usize,
    pub csfd: Option<f64>,
    pub cssc: Option<f64>,
    pub avg_clip: Option<f64>,
    pub csfd_detail: Option<CsfdDetail>,
    pub cssc_detail: Option<CsscDetail>,
    pub clip_detail: Option<ClipDetail>,
    /// Metric name to the reason it is absent.
    pub absent: BTreeMap<String, String>,
    pub clip_convention: String,
    pub external: ExternalScores,
}

const CLIP_CONVENTION: &str =
    "avg_clip is a raw cosine in [-1, 1]; clip_detail.score_x100 is the same value x100";

fn keep<T>(
    absent: &mut BTreeMap<String, String>,
    name: &str,
    r: Result<T, MetricError>,
) -> Option<T> {
    r.map_err(|e| absent.insert(name.to_string(), e.to_string())).ok()
}

/// Computes every applicable score; a failing metric becomes an absent
/// field with its reason instead of aborting the report.
pub fn evaluate_frames(
    frames: &FrameSet,
    embed: &dyn EmbedBackend,
    judge: &dyn VisionBackend,
    styles: &StyleSet,
) -> MetricReport {
    let mut absent = BTreeMap::new();
    let csfd_detail = keep(&mut absent, "csfd", csfd_score(frames, embed));
    let cssc_detail = keep(&mut absent, "cssc", cssc_score(frames, judge, styles));
    let clip_detail = keep(&mut absent, "avg_clip", avg_clip_score(frames, embed));
    MetricReport {
        schema_version: REPORT_SCHEMA_VERSION,
        frame_count: frames.len(),
        csfd: csfd_detail.as_ref().map(|d| d.score),
        cssc: cssc_detail.as_ref().map(|d| d.score),
        avg_clip: clip_detail.as_ref().map(|d| d.score),
        csfd_detail,
        cssc_detail,
        clip_detail,
        absent,
        clip_convention: CLIP_CONVENTION.into(),
        external: ExternalScores::default(),
    }
}

impl MetricReport {
    pub fn summary_text(&self) -> String {
        let fmt = |name: &str, v: Option<f64>, digits: usize| match v {
            Some(v) => format!("{name:<10} {v:.digits$}\n"),
            None => format!(
                "{name:<10} n/a ({})\n",
                self.absent.get(name).map(String::as_str).unwrap_or("not computed")
            ),
        };
        let mut out = format!("frames     {}\n", self.frame_count);
        out.push_str(&fmt("csfd", self.csfd, 4));
        out.push_str(&fmt("cssc", self.cssc, 2));
        out.push_str(&fmt("avg_clip", self.avg_clip, 4));
        out
    }
}

/// Loads the accepted keyframes of a run directory with their scene texts.
pub fn load_run_frames(run_dir: &Path) -> Result<FrameSet, MetricError> {
    let kf_dir = run_dir.join("keyframes");
    let index_path = kf_dir.join(keyframes::INDEX_FILE);
    if !index_path.exists() {
        return Err(MetricError::RunLayout(format!(
            "{} not found; the run has no completed keyframes",
            index_path.display()
        )));
    }
    let index: KeyframeIndex = serde_json::from_slice(&fs::read(&index_path)?)?;
    let frames = index
        .frames
        .into_iter()
        .map(|e| {
            let image = fs::read(kf_dir.join(&e.image))?;
            if fsutil::sha256_hex(&image) != e.image_sha256 {
                return Err(MetricError::RunLayout(format!(
                    "{} does not match its recorded hash",
                    e.image
                )));
            }
            Ok(Frame {
                index: e.index,
                image,
                scene_prompt: Some(e.scene),
            })
        })
        .collect::<Result<Vec<_>, MetricError>>()?;
    FrameSet::new(frames)
}

/// Evaluates a run directory and writes `report.json` (or `report_path`)
/// plus a text summary next to it.
pub fn evaluate_run(
    run_dir: &Path,
    embed: &dyn EmbedBackend,
    judge: &dyn VisionBackend,
    styles: &StyleSet,
    report_path: Option<&Path>,
) -> Result<(MetricReport, PathBuf), MetricError> {
    if !run_dir.is_dir() {
        return Err(MetricError::RunLayout(format!(
            "{} is not a directory",
            run_dir.display()
        )));
    }
    let frames = load_run_frames(run_dir)?;
    let report = evaluate_frames(&frames, embed, judge, styles);
    let path = report_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run_dir.join(REPORT_FILE));
    fsutil::write_json(&path, &report)?;
    fsutil::atomic_write(
        &path.with_file_name(SUMMARY_FILE),
        report.summary_text().as_bytes(),
    )?;
    Ok((report, path))
}
