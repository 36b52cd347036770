//! Keyframe-count statistics over a directory of runs.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::keyframes::{KeyframeIndex, INDEX_FILE};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRun {
    pub run: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframeHistogram {
    pub runs_scanned: usize,
    /// Keyframe count to number of runs with that count.
    pub histogram: BTreeMap<usize, usize>,
    pub skipped: Vec<SkippedRun>,
}

impl KeyframeHistogram {
    pub fn runs_counted(&self) -> usize {
        self.histogram.values().sum()
    }

    /// Aligned two-column table with a bar per bucket.
    pub fn table(&self) -> String {
        let mut out = String::from("keyframes  runs\n");
        let widest = self.histogram.values().copied().max().unwrap_or(0);
        for (k, n) in &self.histogram {
            let bar = "#".repeat(if widest > 40 { n * 40 / widest } else { *n });
            out.push_str(&format!("{k:>9}  {n:>4}  {bar}\n"));
        }
        out.push_str(&format!(
            "{} of {} runs counted\n",
            self.runs_counted(),
            self.runs_scanned
        ));
        out
    }
}

/// Accepts either an output directory holding `runs/` or the `runs`
/// directory itself.
fn runs_root(dir: &Path) -> PathBuf {
    let nested = dir.join("runs");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Counts accepted keyframes per run. Runs without a keyframe index (not
/// yet past keyframe design) are listed as skipped.
pub fn keyframe_histogram(dir: &Path) -> io::Result<KeyframeHistogram> {
    if !dir.is_dir() {
        return Err(io::Error::new(
            io::ErrorKind::NotFound,
            format!("{} is not a directory", dir.display()),
        ));
    }
    let mut runs: Vec<PathBuf> = fs::read_dir(runs_root(dir))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    runs.sort();
    let mut out = KeyframeHistogram::default();
    for run in runs {
        let name = run
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        out.runs_scanned += 1;
        let index_path = run.join("keyframes").join(INDEX_FILE);
        let parsed = fs::read(&index_path)
            .map_err(|e| e.to_string())
            .and_then(|b| serde_json::from_slice::<KeyframeIndex>(&b).map_err(|e| e.to_string()));
        match parsed {
            Ok(index) => *out.histogram.entry(index.frames.len()).or_default() += 1,
            Err(reason) => out.skipped.push(SkippedRun { run: name, reason }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_aligned() {
        let h = KeyframeHistogram {
            runs_scanned: 3,
            histogram: BTreeMap::from([(3, 1), (10, 2)]),
            skipped: vec![],
        };
        let t = h.table();
        assert!(t.contains("        3     1  #\n"), "{t}");
        assert!(t.contains("       10     2  ##\n"), "{t}");
        assert!(t.ends_with("3 of 3 runs counted\n"));
    }

    #[test]
    fn missing_dir_is_an_error() {
        assert!(keyframe_histogram(Path::new("/definitely/not/here")).is_err());
    }
}
