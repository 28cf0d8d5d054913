//! The three issue-resolution subtasks and their prompt-input builders.
//!
//! Builders are pure: the same task and configuration always produce
//! byte-identical payloads. Rendered formats are golden-tested.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::IssueTask;
use crate::validators::{extract_code_elements, CodeElementRef, EditOperation};

/// Pipeline order: files first, then elements, then edits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskKind {
    FileLocalization,
    FaultLocalization,
    PatchGeneration,
}

impl SubtaskKind {
    pub const ALL: [SubtaskKind; 3] = [
        SubtaskKind::FileLocalization,
        SubtaskKind::FaultLocalization,
        SubtaskKind::PatchGeneration,
    ];

    /// Root-node objective text for the search tree.
    pub fn objective(&self) -> &'static str {
        match self {
            SubtaskKind::FileLocalization => {
                "Identify exactly the repository files that must be modified to resolve the issue."
            }
            SubtaskKind::FaultLocalization => {
                "Identify exactly the code elements (classes, methods, functions, globals) that must be modified to resolve the issue."
            }
            SubtaskKind::PatchGeneration => {
                "Produce search-replace edits that resolve the issue, matching the developer fix."
            }
        }
    }
}

impl fmt::Display for SubtaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SubtaskKind::FileLocalization => "file_localization",
            SubtaskKind::FaultLocalization => "fault_localization",
            SubtaskKind::PatchGeneration => "patch_generation",
        };
        write!(f, "{s}")
    }
}

impl FromStr for SubtaskKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "file_localization" => Ok(SubtaskKind::FileLocalization),
            "fault_localization" => Ok(SubtaskKind::FaultLocalization),
            "patch_generation" => Ok(SubtaskKind::PatchGeneration),
            other => Err(format!(
                "unknown subtask `{other}` (expected file_localization, fault_localization, or patch_generation)"
            )),
        }
    }
}

/// Prompt context handed to the gateway for one (task, subtask) search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskInput {
    pub kind: SubtaskKind,
    pub issue_text: String,
    /// Rendered payload: directory tree, file skeletons, or fault context.
    pub payload: String,
    /// Set when a skeleton fell back to raw numbered lines.
    pub raw_fallback: bool,
}

/// A subtask-typed answer produced by the gateway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CandidateSolution {
    Files { paths: Vec<String> },
    Elements { elements: Vec<CodeElementRef> },
    Edits { edits: Vec<EditOperation> },
}

#[derive(Debug, Error, PartialEq)]
pub enum SubtaskError {
    #[error("repository snapshot is empty")]
    EmptyRepository,
    #[error("file `{0}` not present in snapshot")]
    MissingFile(String),
    #[error("element `{name}` in `{file}` has span {start}..{end} outside file of {len} lines")]
    UnresolvableElement {
        name: String,
        file: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("path `{0}` escapes the repository root")]
    PathEscapes(String),
}

/// Normalizes a repo-relative path: strips `./`, collapses duplicate
/// separators, rejects `..` components.
pub fn normalize_path(path: &str) -> Result<String, SubtaskError> {
    let mut parts = Vec::new();
    for part in path.split('/') {
        match part {
            "" | "." => continue,
            ".." => return Err(SubtaskError::PathEscapes(path.to_string())),
            p => parts.push(p),
        }
    }
    Ok(parts.join("/"))
}

pub const DEFAULT_TREE_BUDGET: usize = 64 * 1024;
pub const TREE_ELISION_MARKER: &str = "... (listing truncated)";
pub const DEFAULT_CONTEXT_WINDOW: usize = 20;

/// Indented directory listing in stable lexicographic order, truncated to
/// `byte_budget` with a deterministic elision marker. Rendering is
/// prefix-stable: a larger budget extends the listing without rewriting
/// earlier lines.
pub fn render_repo_tree(files: &BTreeMap<String, String>, byte_budget: usize) -> String {
    let mut lines: Vec<String> = Vec::new();
    let mut emitted_dirs: Vec<String> = Vec::new();
    for path in files.keys() {
        let parts: Vec<&str> = path.split('/').collect();
        for depth in 0..parts.len() - 1 {
            let dir = parts[..=depth].join("/");
            if !emitted_dirs.contains(&dir) {
                lines.push(format!("{}{}/", "  ".repeat(depth), parts[depth]));
                emitted_dirs.push(dir);
            }
        }
        lines.push(format!(
            "{}{}",
            "  ".repeat(parts.len() - 1),
            parts[parts.len() - 1]
        ));
    }
    let mut out = String::new();
    for line in lines {
        if out.len() + line.len() + 1 + TREE_ELISION_MARKER.len() + 1 > byte_budget {
            out.push_str(TREE_ELISION_MARKER);
            out.push('\n');
            return out;
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Issue description plus the repository directory tree.
pub fn build_file_localization_input(
    task: &IssueTask,
    byte_budget: usize,
) -> Result<SubtaskInput, SubtaskError> {
    if task.snapshot.files.is_empty() {
        return Err(SubtaskError::EmptyRepository);
    }
    Ok(SubtaskInput {
        kind: SubtaskKind::FileLocalization,
        issue_text: task.issue_text.clone(),
        payload: render_repo_tree(&task.snapshot.files, byte_budget),
        raw_fallback: false,
    })
}

/// Skeleton of one file: signature lines with 1-based line numbers, bodies
/// elided. Falls back to raw numbered lines when the scanner finds nothing
/// in a non-blank file.
fn render_skeleton(path: &str, content: &str) -> (String, bool) {
    let elements = extract_code_elements(content, path);
    let non_blank = content.lines().any(|l| !l.trim().is_empty());
    if elements.is_empty() && non_blank {
        let mut out = format!("### {path} (raw)\n");
        for (i, line) in content.lines().enumerate() {
            out.push_str(&format!("{}: {line}\n", i + 1));
        }
        return (out, true);
    }
    let lines: Vec<&str> = content.lines().collect();
    let mut out = format!("### {path}\n");
    for element in &elements {
        let line_no = element.span.0;
        let text = lines.get(line_no - 1).copied().unwrap_or("");
        out.push_str(&format!("{line_no}: {text}\n"));
    }
    (out, false)
}

/// Issue description plus per-file skeletons of the given files.
pub fn build_fault_localization_input(
    task: &IssueTask,
    files: &[String],
) -> Result<SubtaskInput, SubtaskError> {
    let mut payload = String::new();
    let mut raw_fallback = false;
    for file in files {
        let content = task
            .snapshot
            .files
            .get(file)
            .ok_or_else(|| SubtaskError::MissingFile(file.clone()))?;
        let (skeleton, fell_back) = render_skeleton(file, content);
        payload.push_str(&skeleton);
        payload.push('\n');
        raw_fallback |= fell_back;
    }
    Ok(SubtaskInput {
        kind: SubtaskKind::FaultLocalization,
        issue_text: task.issue_text.clone(),
        payload,
        raw_fallback,
    })
}

/// Merges 1-based inclusive line ranges that overlap or touch.
fn merge_ranges(mut ranges: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    ranges.sort();
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (start, end) in ranges {
        match merged.last_mut() {
            Some(last) if start <= last.1 + 1 => last.1 = last.1.max(end),
            _ => merged.push((start, end)),
        }
    }
    merged
}

/// Issue description plus each fault element's source span with `window`
/// context lines above and below, clamped to file bounds; overlapping
/// windows within one file merge into a single excerpt.
pub fn build_patch_generation_input(
    task: &IssueTask,
    elements: &[CodeElementRef],
    window: usize,
) -> Result<SubtaskInput, SubtaskError> {
    let mut by_file: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
    for element in elements {
        let content = task
            .snapshot
            .files
            .get(&element.file)
            .ok_or_else(|| SubtaskError::MissingFile(element.file.clone()))?;
        let len = content.lines().count();
        let (start, end) = element.span;
        if start == 0 || end > len || start > end {
            return Err(SubtaskError::UnresolvableElement {
                name: element.qualified_name.clone(),
                file: element.file.clone(),
                start,
                end,
                len,
            });
        }
        let lo = start.saturating_sub(window).max(1);
        let hi = (end + window).min(len);
        by_file.entry(element.file.as_str()).or_default().push((lo, hi));
    }

    let mut payload = String::new();
    for (file, ranges) in by_file {
        let content = &task.snapshot.files[file];
        let lines: Vec<&str> = content.lines().collect();
        for (lo, hi) in merge_ranges(ranges) {
            payload.push_str(&format!("### {file} lines {lo}-{hi}\n"));
            for (offset, line) in lines[lo - 1..hi].iter().enumerate() {
                payload.push_str(&format!("{}: {line}\n", lo + offset));
            }
            payload.push('\n');
        }
    }
    Ok(SubtaskInput {
        kind: SubtaskKind::PatchGeneration,
        issue_text: task.issue_text.clone(),
        payload,
        raw_fallback: false,
    })
}
