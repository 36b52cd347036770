mod common;

use common::{config, Studio};
use dreamforge_core::backends::mock::MockEmbed;
use dreamforge_core::backends::{BackendError, EmbedBackend, Embedding, FaceRegion};
use dreamforge_core::metrics::{
    avg_clip_score, csfd_from_vectors, cssc_from_labels, evaluate_run, Frame, FrameSet,
    MetricError, MetricReport, REPORT_FILE,
};
use dreamforge_core::StyleSet;
use proptest::prelude::*;

fn brute_force(vectors: &[Vec<f64>]) -> f64 {
    let unit: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / n).collect()
        })
        .collect();
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..unit.len() {
        for j in i + 1..unit.len() {
            total += unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum::<f64>();
            count += 1;
        }
    }
    total / count as f64
}

fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, dim)
        .prop_filter("nonzero norm", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
}

fn face_sets() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..=6, 2usize..=8)
        .prop_flat_map(|(n, dim)| prop::collection::vec(nonzero_vec(dim), n))
}

fn indexed(vectors: &[Vec<f64>]) -> Vec<(usize, Vec<f64>)> {
    vectors.iter().cloned().enumerate().map(|(i, v)| (i + 1, v)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn csfd_matches_double_loop(faces in face_sets()) {
        let d = csfd_from_vectors(&indexed(&faces)).unwrap();
        prop_assert!((d.score - brute_force(&faces)).abs() < 1e-9);
        prop_assert_eq!(d.pair_count, faces.len() * (faces.len() - 1) / 2);
        prop_assert_eq!(d.pairs.len(), d.pair_count);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&d.score));
    }

    #[test]
    fn csfd_ignores_order_and_scale(faces in face_sets(), scale in 0.01f64..100.0, rot in 0usize..6) {
        let base = csfd_from_vectors(&indexed(&faces)).unwrap().score;
        let mut shuffled = faces.clone();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let scaled: Vec<Vec<f64>> = faces.iter().map(|v| v.iter().map(|x| x * scale).collect()).collect();
        prop_assert!((csfd_from_vectors(&indexed(&shuffled)).unwrap().score - base).abs() < 1e-9);
        prop_assert!((csfd_from_vectors(&indexed(&scaled)).unwrap().score - base).abs() < 1e-9);
    }

    #[test]
    fn pair_similarity_is_symmetric(a in nonzero_vec(4), b in nonzero_vec(4)) {
        let ab = csfd_from_vectors(&indexed(&[a.clone(), b.clone()])).unwrap().score;
        let ba = csfd_from_vectors(&indexed(&[b, a])).unwrap().score;
        prop_assert!((ab - ba).abs() < 1e-12);
    }
}

#[test]
fn identical_faces_score_one() {
    for n in 2..=6 {
        let faces = vec![vec![0.3, -0.2, 0.9]; n];
        let d = csfd_from_vectors(&indexed(&faces)).unwrap();
        assert!((d.score - 1.0).abs() < 1e-12);
        assert_eq!(d.pair_count, n * (n - 1) / 2);
    }
}

#[test]
fn orthogonal_faces_example() {
    let faces = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]];
    let d = csfd_from_vectors(&indexed(&faces)).unwrap();
    assert!((d.score - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(d.pair_count, 3);
}

#[test]
fn csfd_needs_two_faces() {
    assert!(matches!(
        csfd_from_vectors(&indexed(&[vec![1.0]])),
        Err(MetricError::InsufficientFaces { found: 1 })
    ));
}

#[test]
fn cssc_examples() {
    let d = cssc_from_labels(&["anime", "anime", "anime", "realism"]).unwrap();
    assert_eq!(d.score, 75.0);
    assert_eq!(d.modal_count, 3);
    assert_eq!(cssc_from_labels(&["origami"; 5]).unwrap().score, 100.0);
    assert_eq!(cssc_from_labels(&["anime", "anime", "realism", "realism"]).unwrap().score, 50.0);
    let labels = StyleSet::default().labels().to_vec();
    let d = cssc_from_labels(&labels).unwrap();
    assert!((d.score - 100.0 / labels.len() as f64).abs() < 1e-12);
    assert!(cssc_from_labels::<&str>(&[]).is_err());
}

/// Text always embeds to e1; an image whose first byte is k embeds at a
/// fixed cosine `COSINES[k]` from it.
struct FixedAngles;

const COSINES: [f64; 3] = [0.2, 0.4, 1.0];

impl EmbedBackend for FixedAngles {
    fn detect_faces(&self, _: &[u8]) -> Result<Vec<FaceRegion>, BackendError> {
        Ok(vec![])
    }
    fn embed_face(&self, _: &[u8], _: &FaceRegion) -> Result<Embedding, BackendError> {
        Err(BackendError::Unavailable("no faces".into()))
    }
    fn embed_image(&self, png: &[u8]) -> Result<Embedding, BackendError> {
        let c = COSINES[png[0] as usize];
        Embedding::normalized(vec![c, (1.0 - c * c).sqrt()])
    }
    fn embed_text(&self, _: &str) -> Result<Embedding, BackendError> {
        Embedding::normalized(vec![1.0, 0.0])
    }
    fn classify_style(&self, _: &[u8], categories: &[String]) -> Result<String, BackendError> {
        Ok(categories[0].clone())
    }
}

fn frames(kinds: &[u8], prompt: Option<&str>) -> FrameSet {
    FrameSet::new(
        kinds
            .iter()
            .enumerate()
            .map(|(i, k)| Frame {
                index: i + 1,
                image: vec![*k],
                scene_prompt: prompt.map(String::from),
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn avg_clip_with_injected_embeddings() {
    let d = avg_clip_score(&frames(&[0, 1], Some("scene")), &FixedAngles).unwrap();
    assert!((d.score - 0.3).abs() < 1e-12);
    assert!((d.score_x100 - 30.0).abs() < 1e-9);
    let d = avg_clip_score(&frames(&[2, 2, 2], Some("scene")), &FixedAngles).unwrap();
    assert!((d.score - 1.0).abs() < 1e-12);
    assert!(matches!(
        avg_clip_score(&frames(&[0], None), &FixedAngles),
        Err(MetricError::MissingPrompt { frame: 1 })
    ));
}

#[test]
fn evaluate_run_reports_every_metric() {
    let out = tempfile::tempdir().unwrap();
    let studio = Studio::new(21);
    let state = studio.pipeline().run(&config(out.path(), 21, 3)).unwrap();
    let (report, path) = evaluate_run(
        &state.run_dir,
        studio.embed.as_ref(),
        studio.vision.as_ref(),
        &StyleSet::default(),
        None,
    )
    .unwrap();
    assert_eq!(path, state.run_dir.join(REPORT_FILE));
    assert_eq!(report.frame_count, 3);
    assert!(report.csfd.is_some() && report.cssc.is_some() && report.avg_clip.is_some());
    assert!(report.absent.is_empty(), "{:?}", report.absent);
    let reloaded: MetricReport = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!(reloaded, report);
    assert!(path.with_file_name("report.txt").is_file());

    let faceless = MockEmbed::new(21).with_faces(vec![]);
    let (report, _) = evaluate_run(
        &state.run_dir,
        &faceless,
        studio.vision.as_ref(),
        &StyleSet::default(),
        Some(&out.path().join("faceless.json")),
    )
    .unwrap();
    assert!(report.csfd.is_none());
    assert!(report.absent.contains_key("csfd"));
    assert!(report.cssc.is_some() && report.avg_clip.is_some());
}

#[test]
fn evaluate_run_rejects_missing_directory() {
    let out = tempfile::tempdir().unwrap();
    let studio = Studio::new(1);
    let err = evaluate_run(
        &out.path().join("nope"),
        studio.embed.as_ref(),
        studio.vision.as_ref(),
        &StyleSet::default(),
        None,
    )
    .unwrap_err();
    assert!(matches!(err, MetricError::RunLayout(_)));
}
