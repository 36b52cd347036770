//! Numbered-scene scripts.
//!
//! The script phase is asked to answer in this format:
//!
//! ```text
//! Scene 1: An old craftsman bends bamboo strips into a lantern frame.
//! Narration: He has done this every spring for fifty years.
//! Scene 2: ...
//! ```
//!
//! Headings must be numbered 1, 2, 3, ... Lines after a heading continue its
//! description, except `Narration:` / `Dialogue:` lines which fill the
//! optional narration field. Light markdown around headings (`**`, `#`, `-`)
//! is tolerated.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed script at line {line}: {reason}")]
pub struct ScriptError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// 1-based scene index.
    pub index: usize,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub narration: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    pub scenes: Vec<SceneSpec>,
}

impl Script {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    /// Renders back into the wire format accepted by [`parse_script`].
    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.scenes {
            out.push_str(&format!("Scene {}: {}\n", s.index, s.description));
            if let Some(n) = &s.narration {
                out.push_str(&format!("Narration: {n}\n"));
            }
        }
        out
    }
}

fn strip_markup(line: &str) -> &str {
    line.trim()
        .trim_start_matches(['#', '*', '-', '>', ' ', '\t'])
        .trim_end_matches(['*', ' ', '\t'])
}

/// `Some(Ok((n, rest)))` for a heading, `Some(Err)` for a line that starts
/// like a heading but does not parse, `None` for any other line.
fn heading(line: &str) -> Option<Result<(usize, String), String>> {
    let l = strip_markup(line);
    let prefix = l.get(..5)?;
    if !prefix.eq_ignore_ascii_case("scene") {
        return None;
    }
    let after = &l[5..];
    // "Scenery ..." and similar words are ordinary text.
    if after.starts_with(|c: char| c.is_alphabetic()) {
        return None;
    }
    let after = after.trim_start();
    let digits: String = after.chars().take_while(char::is_ascii_digit).collect();
    if digits.is_empty() {
        return Some(Err(format!("scene heading without a number: {l:?}")));
    }
    let rest = after[digits.len()..].trim_start_matches(['*', ' ']);
    let Some(desc) = rest.strip_prefix([':', '.', ')']) else {
        return Some(Err(format!("scene heading missing ':' after number: {l:?}")));
    };
    let n = digits
        .parse::<usize>()
        .map_err(|e| format!("bad scene number: {e}"));
    Some(n.map(|n| (n, desc.trim_start_matches('*').trim().to_string())))
}

fn narration(line: &str) -> Option<&str> {
    let l = strip_markup(line);
    for tag in ["narration:", "dialogue:"] {
        if l.get(..tag.len()).is_some_and(|p| p.eq_ignore_ascii_case(tag)) {
            return Some(l[tag.len()..].trim());
        }
    }
    None
}

/// Parses a script-phase summary into scenes.
pub fn parse_script(summary: &str) -> Result<Script, ScriptError> {
    let mut scenes: Vec<SceneSpec> = Vec::new();
    let mut heading_lines = Vec::new();
    for (i, raw) in summary.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        match heading(raw) {
            Some(Ok((n, desc))) => {
                let expected = scenes.len() + 1;
                if n != expected {
                    return Err(ScriptError {
                        line: line_no,
                        reason: format!("expected scene {expected}, found scene {n}"),
                    });
                }
                scenes.push(SceneSpec {
                    index: n,
                    description: desc,
                    narration: None,
                });
                heading_lines.push(line_no);
            }
            Some(Err(reason)) => {
                return Err(ScriptError {
                    line: line_no,
                    reason,
                })
            }
            None => {
                let Some(current) = scenes.last_mut() else {
                    return Err(ScriptError {
                        line: line_no,
                        reason: "text before the first scene heading".into(),
                    });
                };
                if let Some(n) = narration(raw) {
                    let slot = current.narration.get_or_insert_with(String::new);
                    if !slot.is_empty() {
                        slot.push(' ');
                    }
                    slot.push_str(n);
                } else {
                    if !current.description.is_empty() {
                        current.description.push(' ');
                    }
                    current.description.push_str(raw.trim());
                }
            }
        }
    }
    if scenes.is_empty() {
        return Err(ScriptError {
            line: summary.lines().count().max(1),
            reason: "no scenes found".into(),
        });
    }
    for (scene, line) in scenes.iter_mut().zip(heading_lines) {
        if scene.description.trim().is_empty() {
            return Err(ScriptError {
                line,
                reason: format!("scene {} has no description", scene.index),
            });
        }
        if scene.narration.as_deref().is_some_and(str::is_empty) {
            scene.narration = None;
        }
    }
    Ok(Script { scenes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LANTERN: &str = "Scene 1: An elderly person making a traditional Chinese lantern in real life, bamboo strips on the bench.\n\
        Scene 2: The elderly person glues red paper over the frame.\n\
        Scene 3: Close-up of weathered hands painting gold characters.\n\
        Scene 4: The finished lantern glows above the workshop door at dusk.";

    #[test]
    fn four_scene_example() {
        let s = parse_script(LANTERN).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.scenes[0]
            .description
            .starts_with("An elderly person making a traditional Chinese lantern"));
        assert_eq!(
            s.scenes.iter().map(|x| x.index).collect::<Vec<_>>(),
            vec![1, 2, 3, 4]
        );
    }

    #[test]
    fn empty_is_malformed() {
        assert!(parse_script("").is_err());
        assert!(parse_script("  \n\n").is_err());
    }

    #[test]
    fn non_contiguous_numbering_is_malformed() {
        let err = parse_script("Scene 1: a\nScene 3: b").unwrap_err();
        assert_eq!(err.line, 2);
        let err = parse_script("Scene 2: a").unwrap_err();
        assert_eq!(err.line, 1);
    }

    #[test]
    fn unparseable_heading_reports_line() {
        let err = parse_script("Scene 1: a\n\nScene two: b").unwrap_err();
        assert_eq!(err.line, 3);
        let err = parse_script("Scene 1 a").unwrap_err();
        assert_eq!(err.line, 1);
    }

    #[test]
    fn preamble_is_malformed() {
        let err = parse_script("Here is the script\nScene 1: a").unwrap_err();
        assert_eq!(err.line, 1);
    }

    #[test]
    fn empty_description_is_malformed() {
        let err = parse_script("Scene 1: a\nScene 2:").unwrap_err();
        assert_eq!(err.line, 2);
    }

    #[test]
    fn continuation_and_narration_lines() {
        let s = parse_script(
            "**Scene 1:** a girl\nin a red coat\nNarration: it was cold\nScene 2: snow\nScenery keeps falling",
        )
        .unwrap();
        assert_eq!(s.scenes[0].description, "a girl in a red coat");
        assert_eq!(s.scenes[0].narration.as_deref(), Some("it was cold"));
        assert_eq!(s.scenes[1].description, "snow Scenery keeps falling");
    }

    #[test]
    fn markdown_headings_parse() {
        let s = parse_script("## Scene 1: a\n- Scene 2. b\n* scene 3) c").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.scenes[2].description, "c");
    }

    proptest! {
        #[test]
        fn render_then_parse_is_identity(
            descs in prop::collection::vec("[A-Za-z][A-Za-z ,]{0,30}[A-Za-z]", 1..15),
            narr in prop::collection::vec(prop::option::of("[a-z][a-z ]{0,10}[a-z]"), 15),
        ) {
            let script = Script {
                scenes: descs
                    .iter()
                    .enumerate()
                    .map(|(i, d)| SceneSpec { index: i + 1, description: d.clone(), narration: narr[i].clone() })
                    .collect(),
            };
            prop_assert_eq!(parse_script(&script.render()).unwrap(), script);
        }
    }
}
