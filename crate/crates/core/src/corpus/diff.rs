//! Unified diff parsing, application, and generation.
//!
//! Parsing is strict: hunk headers must match the `@@ -a,b +c,d @@` grammar
//! and body line counts must agree with the header, otherwise the diff is a
//! corpus error. Application verifies context lines before splicing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DiffError {
    #[error("line {line}: malformed hunk header `{text}`")]
    BadHunkHeader { line: usize, text: String },
    #[error("line {line}: hunk body disagrees with header counts (old {old_want}/{old_got}, new {new_want}/{new_got})")]
    CountMismatch {
        line: usize,
        old_want: usize,
        old_got: usize,
        new_want: usize,
        new_got: usize,
    },
    #[error("line {line}: unexpected content `{text}` inside hunk")]
    BadHunkLine { line: usize, text: String },
    #[error("line {line}: hunk before file header")]
    HunkBeforeHeader { line: usize },
    #[error("empty diff")]
    Empty,
    #[error("{path}: hunk at old line {old_start} does not apply: expected `{expected}`, found `{found}`")]
    ApplyConflict {
        path: String,
        old_start: usize,
        expected: String,
        found: String,
    },
    #[error("{path}: hunk range {old_start}..{old_end} exceeds file length {len}")]
    ApplyOutOfBounds {
        path: String,
        old_start: usize,
        old_end: usize,
        len: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiffLine {
    Context(String),
    Removed(String),
    Added(String),
}

/// One `@@` hunk. Line numbers are 1-based as in the header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    pub old_start: usize,
    pub old_len: usize,
    pub new_start: usize,
    pub new_len: usize,
    pub lines: Vec<DiffLine>,
}

impl Hunk {
    /// Old-file view of the hunk: context plus removed lines.
    pub fn pre_lines(&self) -> Vec<&str> {
        self.lines
            .iter()
            .filter_map(|l| match l {
                DiffLine::Context(s) | DiffLine::Removed(s) => Some(s.as_str()),
                DiffLine::Added(_) => None,
            })
            .collect()
    }

    /// New-file view of the hunk: context plus added lines.
    pub fn post_lines(&self) -> Vec<&str> {
        self.lines
            .iter()
            .filter_map(|l| match l {
                DiffLine::Context(s) | DiffLine::Added(s) => Some(s.as_str()),
                DiffLine::Removed(_) => None,
            })
            .collect()
    }

    /// Old-file line numbers touched by this hunk: the number of every
    /// removed line, plus the insertion point of every added run.
    pub fn changed_old_lines(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut old_line = self.old_start;
        // Added lines directly after removed ones are a replacement; their
        // location is already recorded by the removal.
        let mut after_removed = false;
        for line in &self.lines {
            match line {
                DiffLine::Context(_) => {
                    old_line += 1;
                    after_removed = false;
                }
                DiffLine::Removed(_) => {
                    out.push(old_line);
                    old_line += 1;
                    after_removed = true;
                }
                DiffLine::Added(_) => {
                    if !after_removed && out.last() != Some(&old_line) {
                        out.push(old_line);
                    }
                }
            }
        }
        out
    }
}

/// All hunks of one file within a diff.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDiff {
    /// Repo-relative path on the new side (old side for deletions).
    pub path: String,
    pub is_add: bool,
    pub is_delete: bool,
    pub hunks: Vec<Hunk>,
}

fn strip_diff_prefix(path: &str) -> &str {
    path.strip_prefix("a/")
        .or_else(|| path.strip_prefix("b/"))
        .unwrap_or(path)
}

fn parse_hunk_header(text: &str, line: usize) -> Result<(usize, usize, usize, usize), DiffError> {
    let bad = || DiffError::BadHunkHeader {
        line,
        text: text.to_string(),
    };
    let rest = text.strip_prefix("@@ -").ok_or_else(bad)?;
    let at = rest.find(" @@").ok_or_else(bad)?;
    let ranges = &rest[..at];
    let (old, new) = ranges.split_once(" +").ok_or_else(bad)?;
    let parse_range = |s: &str| -> Option<(usize, usize)> {
        match s.split_once(',') {
            Some((a, b)) => Some((a.parse().ok()?, b.parse().ok()?)),
            None => Some((s.parse().ok()?, 1)),
        }
    };
    let (old_start, old_len) = parse_range(old).ok_or_else(bad)?;
    let (new_start, new_len) = parse_range(new).ok_or_else(bad)?;
    Ok((old_start, old_len, new_start, new_len))
}

/// Parses a unified diff into per-file hunk lists, in file order.
pub fn parse_unified_diff(diff_text: &str) -> Result<Vec<FileDiff>, DiffError> {
    let mut files: Vec<FileDiff> = Vec::new();
    let mut old_path: Option<String> = None;

    let lines: Vec<&str> = diff_text.lines().collect();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        let lineno = i + 1;
        if let Some(p) = line.strip_prefix("--- ") {
            old_path = Some(p.trim().to_string());
            i += 1;
        } else if let Some(p) = line.strip_prefix("+++ ") {
            let new = p.trim().to_string();
            let old = old_path.take().unwrap_or_else(|| new.clone());
            let is_add = old == "/dev/null";
            let is_delete = new == "/dev/null";
            let path = if is_delete {
                strip_diff_prefix(&old).to_string()
            } else {
                strip_diff_prefix(&new).to_string()
            };
            files.push(FileDiff {
                path,
                is_add,
                is_delete,
                hunks: Vec::new(),
            });
            i += 1;
        } else if line.starts_with("@@ ") {
            let file = files
                .last_mut()
                .ok_or(DiffError::HunkBeforeHeader { line: lineno })?;
            let (old_start, old_len, new_start, new_len) = parse_hunk_header(line, lineno)?;
            let mut hunk = Hunk {
                old_start,
                old_len,
                new_start,
                new_len,
                lines: Vec::new(),
            };
            i += 1;
            let (mut old_got, mut new_got) = (0, 0);
            while i < lines.len() && (old_got < old_len || new_got < new_len) {
                let body = lines[i];
                if body == "\\ No newline at end of file" {
                    i += 1;
                    continue;
                }
                let parsed = if let Some(s) = body.strip_prefix('+') {
                    new_got += 1;
                    DiffLine::Added(s.to_string())
                } else if let Some(s) = body.strip_prefix('-') {
                    old_got += 1;
                    DiffLine::Removed(s.to_string())
                } else if let Some(s) = body.strip_prefix(' ') {
                    old_got += 1;
                    new_got += 1;
                    DiffLine::Context(s.to_string())
                } else if body.is_empty() {
                    // Some producers emit empty context lines without the
                    // leading space.
                    old_got += 1;
                    new_got += 1;
                    DiffLine::Context(String::new())
                } else {
                    return Err(DiffError::BadHunkLine {
                        line: i + 1,
                        text: body.to_string(),
                    });
                };
                hunk.lines.push(parsed);
                i += 1;
            }
            if old_got != old_len || new_got != new_len {
                return Err(DiffError::CountMismatch {
                    line: lineno,
                    old_want: old_len,
                    old_got,
                    new_want: new_len,
                    new_got,
                });
            }
            file.hunks.push(hunk);
        } else {
            // git noise lines: `diff --git`, `index`, mode changes, etc.
            i += 1;
        }
    }
    if files.is_empty() {
        return Err(DiffError::Empty);
    }
    Ok(files)
}

/// Applies one file's hunks to its pre-patch content, verifying every
/// context and removed line against the source.
pub fn apply_file_diff(path: &str, pre: &str, file_diff: &FileDiff) -> Result<String, DiffError> {
    if file_diff.is_delete {
        return Ok(String::new());
    }
    let pre_lines: Vec<&str> = if pre.is_empty() {
        Vec::new()
    } else {
        pre.lines().collect()
    };
    let mut out: Vec<String> = Vec::new();
    let mut cursor = 0; // 0-based index into pre_lines
    for hunk in &file_diff.hunks {
        // old_start is 1-based; a zero-length old range anchors *after* the
        // given line.
        let hunk_at = if hunk.old_len == 0 {
            hunk.old_start
        } else {
            hunk.old_start - 1
        };
        if hunk_at < cursor || hunk_at + hunk.old_len > pre_lines.len() {
            return Err(DiffError::ApplyOutOfBounds {
                path: path.to_string(),
                old_start: hunk.old_start,
                old_end: hunk.old_start + hunk.old_len,
                len: pre_lines.len(),
            });
        }
        for line in &pre_lines[cursor..hunk_at] {
            out.push((*line).to_string());
        }
        let mut old_line = hunk_at;
        for line in &hunk.lines {
            match line {
                DiffLine::Context(s) | DiffLine::Removed(s) => {
                    let found = pre_lines.get(old_line).copied().unwrap_or("<eof>");
                    if found != s {
                        return Err(DiffError::ApplyConflict {
                            path: path.to_string(),
                            old_start: hunk.old_start,
                            expected: s.clone(),
                            found: found.to_string(),
                        });
                    }
                    if matches!(line, DiffLine::Context(_)) {
                        out.push(s.clone());
                    }
                    old_line += 1;
                }
                DiffLine::Added(s) => out.push(s.clone()),
            }
        }
        cursor = old_line;
    }
    for line in &pre_lines[cursor..] {
        out.push((*line).to_string());
    }
    let mut text = out.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    Ok(text)
}

fn lcs_table(a: &[&str], b: &[&str]) -> Vec<Vec<usize>> {
    let mut table = vec![vec![0; b.len() + 1]; a.len() + 1];
    for i in (0..a.len()).rev() {
        for j in (0..b.len()).rev() {
            table[i][j] = if a[i] == b[j] {
                table[i + 1][j + 1] + 1
            } else {
                table[i + 1][j].max(table[i][j + 1])
            };
        }
    }
    table
}

/// Generates a unified diff between two texts with the given amount of
/// context. Returns an empty string when the texts are line-identical.
pub fn make_unified_diff(
    old_label: &str,
    new_label: &str,
    pre: &str,
    post: &str,
    context: usize,
) -> String {
    let a: Vec<&str> = if pre.is_empty() { vec![] } else { pre.lines().collect() };
    let b: Vec<&str> = if post.is_empty() { vec![] } else { post.lines().collect() };

    // Edit script as (old_index, new_index, line) ops.
    enum Op<'a> {
        Keep(&'a str),
        Del(&'a str),
        Ins(&'a str),
    }
    let table = lcs_table(&a, &b);
    let mut ops: Vec<Op> = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] == b[j] {
            ops.push(Op::Keep(a[i]));
            i += 1;
            j += 1;
        } else if table[i + 1][j] >= table[i][j + 1] {
            ops.push(Op::Del(a[i]));
            i += 1;
        } else {
            ops.push(Op::Ins(b[j]));
            j += 1;
        }
    }
    while i < a.len() {
        ops.push(Op::Del(a[i]));
        i += 1;
    }
    while j < b.len() {
        ops.push(Op::Ins(b[j]));
        j += 1;
    }
    if !ops.iter().any(|op| !matches!(op, Op::Keep(_))) {
        return String::new();
    }

    // Group ops into hunks separated by more than 2*context keep lines.
    let mut out = format!("--- {old_label}\n+++ {new_label}\n");
    let mut idx = 0;
    let (mut old_line, mut new_line) = (1usize, 1usize);
    while idx < ops.len() {
        if matches!(ops[idx], Op::Keep(_)) {
            idx += 1;
            old_line += 1;
            new_line += 1;
            continue;
        }
        // Found a change; back up for leading context.
        let lead = context.min(idx);
        let start = idx - lead;
        let mut h_old_start = old_line - lead;
        let mut h_new_start = new_line - lead;
        // Extend through the change run plus trailing context, merging
        // nearby changes.
        let mut end = idx;
        let mut keeps_since_change = 0;
        let mut scan = idx;
        while scan < ops.len() {
            match ops[scan] {
                Op::Keep(_) => keeps_since_change += 1,
                _ => {
                    keeps_since_change = 0;
                    end = scan;
                }
            }
            if keeps_since_change > 2 * context {
                break;
            }
            scan += 1;
        }
        let tail_end = (end + 1 + context).min(ops.len());
        // Emit hunk covering ops[start..tail_end].
        let mut body = String::new();
        let (mut old_len, mut new_len) = (0usize, 0usize);
        for op in &ops[start..tail_end] {
            match op {
                Op::Keep(s) => {
                    body.push_str(&format!(" {s}\n"));
                    old_len += 1;
                    new_len += 1;
                }
                Op::Del(s) => {
                    body.push_str(&format!("-{s}\n"));
                    old_len += 1;
                }
                Op::Ins(s) => {
                    body.push_str(&format!("+{s}\n"));
                    new_len += 1;
                }
            }
        }
        // Zero-length ranges anchor one line earlier per diff convention.
        if old_len == 0 {
            h_old_start = h_old_start.saturating_sub(1);
        }
        if new_len == 0 {
            h_new_start = h_new_start.saturating_sub(1);
        }
        out.push_str(&format!(
            "@@ -{h_old_start},{old_len} +{h_new_start},{new_len} @@\n"
        ));
        out.push_str(&body);
        // Advance counters past the not-yet-counted span (leading context
        // ops were counted while skipping keeps above).
        for op in &ops[idx..tail_end] {
            match op {
                Op::Keep(_) => {
                    old_line += 1;
                    new_line += 1;
                }
                Op::Del(_) => old_line += 1,
                Op::Ins(_) => new_line += 1,
            }
        }
        idx = tail_end;
    }
    out
}

/// Removed/added line multisets per file, ignoring context. Used to check
/// that parsing plus application loses nothing.
pub fn change_multisets(files: &[FileDiff]) -> BTreeMap<String, (Vec<String>, Vec<String>)> {
    let mut out = BTreeMap::new();
    for file in files {
        let entry: &mut (Vec<String>, Vec<String>) = out.entry(file.path.clone()).or_default();
        for hunk in &file.hunks {
            for line in &hunk.lines {
                match line {
                    DiffLine::Removed(s) => entry.0.push(s.clone()),
                    DiffLine::Added(s) => entry.1.push(s.clone()),
                    DiffLine::Context(_) => {}
                }
            }
        }
        entry.0.sort();
        entry.1.sort();
    }
    out
}
