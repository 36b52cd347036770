#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use dreamforge_core::backends::http::CallLog;
use dreamforge_core::backends::mock::{MockEmbed, MockImageGen, MockVideoGen};
use dreamforge_core::backends::studio::{
    StudioChat, StudioChatOptions, StudioVision, StudioVisionOptions,
};
use dreamforge_core::pipeline::SceneBounds;
use dreamforge_core::{Backends, Pipeline, RetryPolicy, RunConfig};
use serde_json::Value;

/// Mock backends with their concrete types kept for ledger inspection.
pub struct Studio {
    pub chat: Arc<StudioChat>,
    pub vision: Arc<StudioVision>,
    pub images: Arc<MockImageGen>,
    pub video: Arc<MockVideoGen>,
    pub embed: Arc<MockEmbed>,
}

impl Studio {
    pub fn new(seed: u64) -> Self {
        Self::with(seed, StudioChatOptions::default(), StudioVisionOptions::default())
    }

    pub fn with(seed: u64, chat: StudioChatOptions, vision: StudioVisionOptions) -> Self {
        Self {
            chat: Arc::new(StudioChat::new(seed, chat)),
            vision: Arc::new(StudioVision::new(vision)),
            images: Arc::new(MockImageGen::new(seed)),
            video: Arc::new(MockVideoGen::new(seed)),
            embed: Arc::new(MockEmbed::new(seed)),
        }
    }

    pub fn backends(&self) -> Backends {
        Backends {
            chat: self.chat.clone(),
            vision: self.vision.clone(),
            image_gen: self.images.clone(),
            video_gen: self.video.clone(),
            embed: self.embed.clone(),
            call_log: CallLog::disabled(),
        }
    }

    pub fn pipeline(&self) -> Pipeline {
        Pipeline::new(self.backends()).with_retry(RetryPolicy::immediate(3))
    }
}

pub fn config(out: &Path, seed: u64, scenes: usize) -> RunConfig {
    let mut c = RunConfig::new(
        "An elderly person making a traditional Chinese lantern in real life",
        out,
    );
    c.random_seed = seed;
    c.scene_bounds = Some(SceneBounds::exactly(scenes));
    c
}

const TIMESTAMP_KEYS: &[&str] = &["produced_at", "created_at", "updated_at"];

fn strip(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for k in TIMESTAMP_KEYS {
                map.remove(*k);
            }
            map.values_mut().for_each(strip);
        }
        Value::Array(items) => items.iter_mut().for_each(strip),
        _ => {}
    }
}

/// Every file under `dir` keyed by relative path, with timestamp fields
/// removed from JSON documents.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
                continue;
            }
            let rel = path
                .strip_prefix(root)
                .unwrap()
                .to_string_lossy()
                .replace('\\', "/");
            let bytes = std::fs::read(&path).unwrap();
            let bytes = if rel.ends_with(".json") {
                let mut v: Value = serde_json::from_slice(&bytes).unwrap();
                strip(&mut v);
                serde_json::to_vec_pretty(&v).unwrap()
            } else {
                bytes
            };
            out.insert(rel, bytes);
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Stage id named by the `Phase:` line of a request's system prompt.
pub fn phase_of(request: &dreamforge_core::backends::ChatRequest) -> Option<String> {
    request
        .system_prompt()?
        .lines()
        .find_map(|l| l.strip_prefix("Phase: "))
        .map(|s| s.trim().to_string())
}

pub mod conversations {
    use std::sync::Arc;

    use dreamforge_core::backends::mock::ScriptedChat;
    use dreamforge_core::backends::{ChatBackend, ChatRequest, Speaker};
    use dreamforge_core::phases::{run_phase, PhaseSpec, INFO_MARKER};
    use dreamforge_core::roles::{make_agent, RoleBook, CEO, MOVIE_DIRECTOR};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const WORDS: &[&str] = &[
        "lantern", "bamboo", "paper", "ink", "red", "gold", "dusk", "info", "<info>", "INFO",
        "scene", "brush", "glue", "frame", "light",
    ];

    fn words(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> String {
        let n = rng.gen_range(lo..=hi);
        (0..n)
            .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Independent scan for the first marker's payload.
    pub fn oracle_summary(s: &str) -> Option<String> {
        let pos = s.find(INFO_MARKER)?;
        let rest = s[pos + INFO_MARKER.len()..].trim();
        (!rest.is_empty()).then(|| rest.to_string())
    }

    fn alternates(request: &ChatRequest, first: Speaker) -> bool {
        let body = &request.messages[1..];
        request.messages[0].speaker == Speaker::System
            && body.last().map(|m| m.speaker) == Some(Speaker::User)
            && body.iter().enumerate().all(|(i, m)| {
                let expect_first = i % 2 == 0;
                (m.speaker == first) == expect_first
                    && matches!(m.speaker, Speaker::User | Speaker::Assistant)
            })
    }

    #[derive(Debug, Default, Clone, Copy)]
    pub struct Tally {
        pub by_info: usize,
        pub forced: usize,
    }

    /// Builds one random scripted conversation and checks every protocol
    /// property on it.
    pub fn check(seed: u64, tally: &mut Tally) -> Result<(), String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let max_rounds: u32 = rng.gen_range(1..=6);
        let info_at = rng
            .gen_bool(0.6)
            .then(|| rng.gen_range(1..=max_rounds as usize));
        let mut assistant_replies = Vec::new();
        for k in 1..=max_rounds as usize {
            if Some(k) == info_at {
                let mut r = format!("{} {INFO_MARKER} {}", words(&mut rng, 0, 3), words(&mut rng, 1, 4));
                if rng.gen_bool(0.3) {
                    r.push_str(&format!(" {INFO_MARKER} {}", words(&mut rng, 1, 2)));
                }
                assistant_replies.push(r);
            } else {
                assistant_replies.push(words(&mut rng, 1, 6));
            }
        }
        let forced_has_info = rng.gen_bool(0.8);
        let forced_reply = if forced_has_info {
            format!("{INFO_MARKER} {}", words(&mut rng, 1, 3))
        } else {
            words(&mut rng, 1, 4)
        };
        assistant_replies.push(forced_reply.clone());
        let instructor_replies: Vec<String> =
            (0..max_rounds).map(|_| words(&mut rng, 1, 5)).collect();

        let a_backend = Arc::new(ScriptedChat::new(assistant_replies.clone()));
        let i_backend = Arc::new(ScriptedChat::new(instructor_replies.clone()));
        let roles = RoleBook::builtin();
        let prompt = "Phase: style_decision\n";
        let a_dyn: Arc<dyn ChatBackend> = a_backend.clone();
        let i_dyn: Arc<dyn ChatBackend> = i_backend.clone();
        let mut assistant = make_agent(roles.get(MOVIE_DIRECTOR).unwrap(), a_dyn, prompt).unwrap();
        let mut instructor = make_agent(roles.get(CEO).unwrap(), i_dyn, prompt).unwrap();
        let spec = PhaseSpec {
            id: "style_decision".into(),
            phase_prompt: prompt.into(),
            instructor_role: CEO.into(),
            assistant_role: MOVIE_DIRECTOR.into(),
            max_rounds,
            inputs: vec![],
        };
        let seed_text = format!("User request: case {seed}");
        let out = run_phase(&spec, &mut instructor, &mut assistant, &seed_text)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        let t = &out.transcript;
        let fail = |m: String| Err(format!("seed {seed}: {m}"));

        let normal_turns = info_at.unwrap_or(max_rounds as usize);
        let forced = info_at.is_none();
        let expected_turns = normal_turns + usize::from(forced);
        if t.turns.len() != expected_turns || t.rounds_used as usize != t.turns.len() {
            return fail(format!("{} turns, expected {expected_turns}", t.turns.len()));
        }
        if t.rounds_used > max_rounds + 1 {
            return fail("round budget exceeded".into());
        }
        if t.forced_summary != forced {
            return fail(format!("forced_summary = {}", t.forced_summary));
        }
        let by_info = info_at.is_some() || forced_has_info;
        if t.terminated_by_info != by_info {
            return fail(format!("terminated_by_info = {}", t.terminated_by_info));
        }
        if t.terminated_by_info && !t.turns.last().unwrap().response.contains(INFO_MARKER) {
            return fail("terminated by marker but last response lacks it".into());
        }
        let last = &assistant_replies[if forced { max_rounds as usize } else { normal_turns - 1 }];
        let expected_summary = oracle_summary(last).unwrap_or_else(|| last.trim().to_string());
        if out.summary != expected_summary {
            return fail(format!("summary {:?} != {expected_summary:?}", out.summary));
        }
        for (i, turn) in t.turns.iter().enumerate().take(normal_turns) {
            let instruction = if i == 0 { &seed_text } else { &instructor_replies[i - 1] };
            if &turn.instruction != instruction || turn.response != assistant_replies[i] {
                return fail(format!("turn {i} does not follow the scripts"));
            }
        }
        if a_backend.calls() != expected_turns || i_backend.calls() != normal_turns - 1 {
            return fail(format!(
                "calls: assistant {} instructor {}",
                a_backend.calls(),
                i_backend.calls()
            ));
        }
        if !a_backend.ledger().iter().all(|r| alternates(r, Speaker::User)) {
            return fail("assistant history does not alternate".into());
        }
        if !i_backend.ledger().iter().all(|r| alternates(r, Speaker::Assistant)) {
            return fail("instructor history does not alternate".into());
        }
        if t.terminated_by_info {
            tally.by_info += 1;
        }
        if forced {
            tally.forced += 1;
        }
        Ok(())
    }
}
