//! Issue/patch corpus ingestion and ground-truth derivation.
//!
//! On-disk layout, one directory per task under the corpus root:
//!
//! ```text
//! <corpus>/<task-dir>/
//!   task.json    # { "task_id", "repo_name", "issue_text", "base_commit"? }
//!   repo/        # pre-patch snapshot subtree
//!   gold.diff    # developer patch as a unified diff
//! ```
//!
//! Tasks failing validation are skipped with a diagnostic; structural
//! problems with the corpus itself (unreadable root, duplicate task ids)
//! are fatal.

pub mod diff;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::validators::{diff_changed_elements, normalize_source, CodeElementRef, GroundTruth};

use diff::{apply_file_diff, parse_unified_diff, DiffError, FileDiff};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus root `{0}` is not a readable directory")]
    UnreadableRoot(String),
    #[error("duplicate task id `{0}`")]
    DuplicateTaskId(String),
    #[error("task `{task_id}`: {reason}")]
    Task { task_id: String, reason: String },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Pre-patch repository snapshot: relative path -> text content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoSnapshot {
    pub files: BTreeMap<String, String>,
}

impl RepoSnapshot {
    pub fn from_files<I, P, C>(files: I) -> Self
    where
        I: IntoIterator<Item = (P, C)>,
        P: Into<String>,
        C: Into<String>,
    {
        RepoSnapshot {
            files: files
                .into_iter()
                .map(|(p, c)| (p.into(), c.into()))
                .collect(),
        }
    }
}

/// One Issue-PR pair with its gold patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueTask {
    pub task_id: String,
    pub repo_name: String,
    pub issue_text: String,
    pub snapshot: RepoSnapshot,
    pub gold_diff: String,
    pub derived: Option<GroundTruth>,
}

#[derive(Debug, Deserialize)]
struct TaskMeta {
    task_id: String,
    repo_name: String,
    issue_text: String,
    #[allow(dead_code)]
    base_commit: Option<String>,
}

/// Result of loading a corpus: validated tasks plus skip diagnostics.
#[derive(Debug)]
pub struct CorpusLoad {
    pub tasks: Vec<IssueTask>,
    /// (task directory or id, reason) per skipped record.
    pub skipped: Vec<(String, String)>,
}

fn load_task_dir(dir: &Path) -> Result<IssueTask, String> {
    let meta_path = dir.join("task.json");
    let meta_text =
        std::fs::read_to_string(&meta_path).map_err(|e| format!("task.json unreadable: {e}"))?;
    let meta: TaskMeta =
        serde_json::from_str(&meta_text).map_err(|e| format!("task.json invalid: {e}"))?;

    let gold_diff = std::fs::read_to_string(dir.join("gold.diff"))
        .map_err(|e| format!("gold.diff unreadable: {e}"))?;

    let repo_root = dir.join("repo");
    let mut files = BTreeMap::new();
    for entry in WalkDir::new(&repo_root).sort_by_file_name() {
        let entry = entry.map_err(|e| format!("repo walk failed: {e}"))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(&repo_root)
            .expect("walkdir stays under root")
            .to_string_lossy()
            .replace('\\', "/");
        let bytes = std::fs::read(entry.path()).map_err(|e| format!("read {rel}: {e}"))?;
        let text = String::from_utf8(bytes)
            .map_err(|_| format!("binary file `{rel}` in snapshot"))?;
        files.insert(rel, text);
    }

    let task = IssueTask {
        task_id: meta.task_id,
        repo_name: meta.repo_name,
        issue_text: meta.issue_text,
        snapshot: RepoSnapshot { files },
        gold_diff,
        derived: None,
    };

    // Validate now so skipped tasks are diagnosed at load time: the diff
    // must parse and apply against the snapshot.
    let parsed = parse_unified_diff(&task.gold_diff).map_err(|e| format!("gold.diff: {e}"))?;
    for file_diff in &parsed {
        if !file_diff.is_add && !task.snapshot.files.contains_key(&file_diff.path) {
            return Err(format!("diff references missing file `{}`", file_diff.path));
        }
        let pre = task
            .snapshot
            .files
            .get(&file_diff.path)
            .map(|s| s.as_str())
            .unwrap_or("");
        apply_file_diff(&file_diff.path, pre, file_diff).map_err(|e| e.to_string())?;
    }
    Ok(task)
}

/// Loads every task directory under `path`. Per-task failures become skip
/// diagnostics; duplicate task ids are a fatal corpus error.
pub fn load_corpus(path: &Path) -> Result<CorpusLoad, CorpusError> {
    let entries = std::fs::read_dir(path)
        .map_err(|_| CorpusError::UnreadableRoot(path.display().to_string()))?;
    let mut dirs: Vec<_> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    dirs.sort();

    let mut tasks = Vec::new();
    let mut skipped = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for dir in dirs {
        let label = dir
            .file_name()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| dir.display().to_string());
        match load_task_dir(&dir) {
            Ok(task) => {
                if !seen_ids.insert(task.task_id.clone()) {
                    return Err(CorpusError::DuplicateTaskId(task.task_id));
                }
                tasks.push(task);
            }
            Err(reason) => skipped.push((label, reason)),
        }
    }
    Ok(CorpusLoad { tasks, skipped })
}

pub use diff::parse_unified_diff as parse_diff;

/// Derives the per-subtask oracle from the task's gold diff: the modified
/// file set, full post-patch contents, changed code elements, and the gold
/// hunks for line metrics.
pub fn derive_ground_truth(task: &IssueTask) -> Result<GroundTruth, CorpusError> {
    let parsed: Vec<FileDiff> = parse_unified_diff(&task.gold_diff)?;
    let mut modified_files = BTreeSet::new();
    let mut post_patch_files = BTreeMap::new();
    let mut gold_hunks = BTreeMap::new();
    let mut elements: Vec<CodeElementRef> = Vec::new();
    let mut degenerate = true;

    for file_diff in &parsed {
        let path = file_diff.path.clone();
        let pre = task
            .snapshot
            .files
            .get(&path)
            .map(|s| s.as_str())
            .unwrap_or("");
        let post = apply_file_diff(&path, pre, file_diff).map_err(|e| CorpusError::Task {
            task_id: task.task_id.clone(),
            reason: e.to_string(),
        })?;
        if normalize_source(pre) != normalize_source(&post) {
            degenerate = false;
        }
        elements.extend(diff_changed_elements(pre, &post, &path));
        modified_files.insert(path.clone());
        post_patch_files.insert(path.clone(), post);
        gold_hunks.insert(path, file_diff.hunks.clone());
    }

    Ok(GroundTruth {
        modified_files,
        elements,
        post_patch_files,
        gold_hunks,
        normalization_degenerate: degenerate,
    })
}
