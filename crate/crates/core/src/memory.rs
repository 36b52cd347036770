//! Append-only store of phase conclusions.
//!
//! Layout under the store directory:
//!
//! ```text
//! memory/
//!   index.json      entries in insertion order
//!   <artifact>      files referenced by artifact entries
//! ```
//!
//! Entries are never rewritten. Artifact entries carry a SHA-256 of the file
//! and are re-verified on every read.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil::{self, sha256_hex};

pub const INDEX_FILE: &str = "index.json";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("memory key {0:?} already exists")]
    DuplicateKey(String),
    #[error("memory key {0:?} not found")]
    MissingKey(String),
    #[error("artifact for {key:?} at {path} failed its integrity check")]
    Integrity { key: String, path: String },
    #[error("invalid artifact name {0:?}")]
    InvalidName(String),
    #[error("memory I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("memory index: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    /// Relative to the memory directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryValue {
    Text(String),
    Artifact(ArtifactRef),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub key: String,
    pub value: MemoryValue,
    pub source_phase: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    schema_version: u32,
    entries: Vec<MemoryEntry>,
}

/// Ordered key/value pairs returned by [`MemoryStore::gather`].
pub type ContextBundle = Vec<(String, String)>;

#[derive(Debug)]
pub struct MemoryStore {
    dir: PathBuf,
    entries: IndexMap<String, MemoryEntry>,
}

impl PartialEq for MemoryStore {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl MemoryStore {
    /// Opens the store in `dir`, loading an existing index if present.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, MemoryError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let index = dir.join(INDEX_FILE);
        let mut entries = IndexMap::new();
        if index.exists() {
            let file: IndexFile = serde_json::from_slice(&fs::read(&index)?)?;
            for e in file.entries {
                if entries.contains_key(&e.key) {
                    return Err(MemoryError::DuplicateKey(e.key));
                }
                entries.insert(e.key.clone(), e);
            }
        }
        Ok(Self { dir, entries })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.values()
    }

    pub fn entry(&self, key: &str) -> Option<&MemoryEntry> {
        self.entries.get(key)
    }

    /// Appends a text entry and persists the index before returning.
    pub fn put(
        &mut self,
        key: &str,
        text: impl Into<String>,
        source_phase: &str,
    ) -> Result<(), MemoryError> {
        self.append(key, MemoryValue::Text(text.into()), source_phase)
    }

    /// Writes `bytes` to `<dir>/<file_name>` and appends a hashed reference.
    pub fn put_artifact(
        &mut self,
        key: &str,
        file_name: &str,
        bytes: &[u8],
        source_phase: &str,
    ) -> Result<(), MemoryError> {
        if self.contains(key) {
            return Err(MemoryError::DuplicateKey(key.to_string()));
        }
        if file_name.is_empty()
            || file_name == INDEX_FILE
            || file_name.starts_with('.')
            || file_name.contains(['/', '\\'])
        {
            return Err(MemoryError::InvalidName(file_name.to_string()));
        }
        fsutil::atomic_write(&self.dir.join(file_name), bytes)?;
        let value = MemoryValue::Artifact(ArtifactRef {
            path: file_name.to_string(),
            sha256: sha256_hex(bytes),
        });
        self.append(key, value, source_phase)
    }

    fn append(
        &mut self,
        key: &str,
        value: MemoryValue,
        source_phase: &str,
    ) -> Result<(), MemoryError> {
        if self.contains(key) {
            return Err(MemoryError::DuplicateKey(key.to_string()));
        }
        self.entries.insert(
            key.to_string(),
            MemoryEntry {
                key: key.to_string(),
                value,
                source_phase: source_phase.to_string(),
                created_at: Utc::now(),
            },
        );
        if let Err(e) = self.persist() {
            self.entries.shift_remove(key);
            return Err(e);
        }
        Ok(())
    }

    fn persist(&self) -> Result<(), MemoryError> {
        let file = IndexFile {
            schema_version: SCHEMA_VERSION,
            entries: self.entries.values().cloned().collect(),
        };
        fsutil::write_json(&self.dir.join(INDEX_FILE), &file)?;
        Ok(())
    }

    /// Raw bytes of an entry; artifacts are hash-checked.
    pub fn get_bytes(&self, key: &str) -> Result<Vec<u8>, MemoryError> {
        let entry = self
            .entries
            .get(key)
            .ok_or_else(|| MemoryError::MissingKey(key.to_string()))?;
        match &entry.value {
            MemoryValue::Text(t) => Ok(t.clone().into_bytes()),
            MemoryValue::Artifact(a) => {
                let integrity = || MemoryError::Integrity {
                    key: key.to_string(),
                    path: a.path.clone(),
                };
                let bytes = fs::read(self.dir.join(&a.path)).map_err(|_| integrity())?;
                if sha256_hex(&bytes) != a.sha256 {
                    return Err(integrity());
                }
                Ok(bytes)
            }
        }
    }

    /// Entry contents as text.
    pub fn get(&self, key: &str) -> Result<String, MemoryError> {
        let bytes = self.get_bytes(key)?;
        String::from_utf8(bytes).map_err(|_| MemoryError::Integrity {
            key: key.to_string(),
            path: "<non-utf8 artifact>".into(),
        })
    }

    /// Values for `keys` in the requested order.
    pub fn gather<S: AsRef<str>>(&self, keys: &[S]) -> Result<ContextBundle, MemoryError> {
        keys.iter()
            .map(|k| {
                let k = k.as_ref();
                self.get(k).map(|v| (k.to_string(), v))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> (tempfile::TempDir, MemoryStore) {
        let dir = tempfile::tempdir().unwrap();
        let s = MemoryStore::open(dir.path().join("memory")).unwrap();
        (dir, s)
    }

    #[test]
    fn put_then_get() {
        let (_d, mut s) = store();
        s.put("style", "cartoon style", "style_decision").unwrap();
        assert_eq!(s.get("style").unwrap(), "cartoon style");
        assert!(s.dir().join(INDEX_FILE).exists());
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let (_d, mut s) = store();
        s.put("style", "a", "p").unwrap();
        assert!(matches!(
            s.put("style", "b", "p"),
            Err(MemoryError::DuplicateKey(k)) if k == "style"
        ));
        assert!(matches!(
            s.put_artifact("style", "x.json", b"{}", "p"),
            Err(MemoryError::DuplicateKey(_))
        ));
        assert_eq!(s.get("style").unwrap(), "a");
    }

    #[test]
    fn tampered_artifact_fails_integrity() {
        let (_d, mut s) = store();
        s.put_artifact("keyframes", "keyframes.json", b"[1,2,3]", "keyframe_design")
            .unwrap();
        assert_eq!(s.get("keyframes").unwrap(), "[1,2,3]");
        fs::write(s.dir().join("keyframes.json"), b"[1,2,4]").unwrap();
        assert!(matches!(
            s.get("keyframes"),
            Err(MemoryError::Integrity { .. })
        ));
    }

    #[test]
    fn missing_artifact_fails_integrity() {
        let (_d, mut s) = store();
        s.put_artifact("k", "k.bin", b"abc", "p").unwrap();
        fs::remove_file(s.dir().join("k.bin")).unwrap();
        assert!(matches!(s.get("k"), Err(MemoryError::Integrity { .. })));
    }

    #[test]
    fn artifact_names_stay_inside_the_store() {
        let (_d, mut s) = store();
        for bad in ["../x", "a/b", "", ".hidden", INDEX_FILE] {
            assert!(matches!(
                s.put_artifact("k", bad, b"x", "p"),
                Err(MemoryError::InvalidName(_))
            ));
        }
    }

    #[test]
    fn gather_in_requested_order() {
        let (_d, mut s) = store();
        s.put("script", "Scene 1: x", "script_design").unwrap();
        s.put("style", "ink wash", "style_decision").unwrap();
        let b = s.gather(&["style", "script"]).unwrap();
        assert_eq!(
            b,
            vec![
                ("style".to_string(), "ink wash".to_string()),
                ("script".to_string(), "Scene 1: x".to_string())
            ]
        );
        assert!(s.gather::<&str>(&[]).unwrap().is_empty());
        assert!(matches!(
            s.gather(&["style", "absent", "also_absent"]),
            Err(MemoryError::MissingKey(k)) if k == "absent"
        ));
    }

    #[test]
    fn reload_preserves_entries_and_order() {
        let (_d, mut s) = store();
        s.put("task", "t", "task_definition").unwrap();
        s.put("style", "s", "style_decision").unwrap();
        s.put_artifact("keyframes", "keyframes.json", b"{}", "keyframe_design")
            .unwrap();
        let reloaded = MemoryStore::open(s.dir()).unwrap();
        assert_eq!(reloaded, s);
        assert_eq!(
            reloaded.keys().collect::<Vec<_>>(),
            vec!["task", "style", "keyframes"]
        );
    }
}
