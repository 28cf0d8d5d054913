//! The machine-checkable prompt/response contract.
//!
//! Responses follow a fixed grammar instead of free text:
//!
//! - proposals: numbered lines, `1. <step>` through `N. <step>`
//! - scores: a single `SCORE: <int>` line, integer in 0..=10
//! - feedback: the literal sentinel `NO_FEEDBACK`, or `FEEDBACK:` followed
//!   by corrective text
//! - optimized steps: exactly one step, numbered or bare
//! - solutions: per-subtask formats parsed by [`parse_solution`]
//!
//! Edit solutions use the search-replace block format:
//!
//! ```text
//! path/to/file.py
//! <<<<<<< SEARCH
//! old lines
//! =======
//! new lines
//! >>>>>>> REPLACE
//! ```

use crate::subtasks::{CandidateSolution, SubtaskKind};
use crate::validators::{CodeElementRef, EditOperation, ElementKind};

use super::GatewayError;

pub const NO_FEEDBACK_SENTINEL: &str = "NO_FEEDBACK";
pub const FEEDBACK_PREFIX: &str = "FEEDBACK:";
pub const SCORE_PREFIX: &str = "SCORE:";
pub const SEARCH_MARKER: &str = "<<<<<<< SEARCH";
pub const DIVIDER_MARKER: &str = "=======";
pub const REPLACE_MARKER: &str = ">>>>>>> REPLACE";

#[derive(Debug, Clone, PartialEq)]
pub enum Feedback {
    NoFeedback,
    Corrective(String),
}

fn format_error(call: &str, reason: impl Into<String>, raw: &str) -> GatewayError {
    GatewayError::Format {
        call: call.to_string(),
        reason: reason.into(),
        raw: raw.to_string(),
    }
}

/// Strips a `N.` or `N)` numbering prefix, returning the step text.
fn numbered_line(line: &str) -> Option<&str> {
    let trimmed = line.trim();
    let digits = trimmed.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return None;
    }
    let rest = &trimmed[digits..];
    let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    let text = rest.trim();
    (!text.is_empty()).then_some(text)
}

/// Parses `count` distinct step candidates from numbered lines. Duplicates
/// are dropped; an underfull result after deduplication is an error.
pub fn parse_steps(raw: &str, count: usize) -> Result<Vec<String>, GatewayError> {
    let mut steps: Vec<String> = Vec::new();
    for line in raw.lines() {
        if let Some(text) = numbered_line(line) {
            if !steps.iter().any(|s| s == text) {
                steps.push(text.to_string());
            }
        }
    }
    if steps.len() < count {
        return Err(format_error(
            "propose",
            format!("underfull proposal: {} of {count} distinct steps", steps.len()),
            raw,
        ));
    }
    steps.truncate(count);
    Ok(steps)
}

/// Parses a `SCORE: <int>` line into an integer reward in 0..=10. Out of
/// range values error; there is no clamping.
pub fn parse_score(raw: &str) -> Result<u8, GatewayError> {
    let line = raw
        .lines()
        .map(str::trim)
        .find(|l| l.starts_with(SCORE_PREFIX))
        .ok_or_else(|| format_error("score", "missing SCORE line", raw))?;
    let value: i64 = line[SCORE_PREFIX.len()..]
        .trim()
        .parse()
        .map_err(|_| format_error("score", "non-numeric score", raw))?;
    if !(0..=10).contains(&value) {
        return Err(format_error("score", format!("score {value} outside 0..=10"), raw));
    }
    Ok(value as u8)
}

/// Classifies a refinement response via the explicit sentinel contract.
pub fn parse_feedback(raw: &str) -> Result<Feedback, GatewayError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(format_error("feedback", "empty response", raw));
    }
    if trimmed == NO_FEEDBACK_SENTINEL || trimmed.starts_with(NO_FEEDBACK_SENTINEL) {
        return Ok(Feedback::NoFeedback);
    }
    if let Some(text) = trimmed.strip_prefix(FEEDBACK_PREFIX) {
        let text = text.trim();
        if text.is_empty() {
            return Err(format_error("feedback", "corrective feedback without text", raw));
        }
        return Ok(Feedback::Corrective(text.to_string()));
    }
    Err(format_error(
        "feedback",
        "missing NO_FEEDBACK / FEEDBACK: sentinel",
        raw,
    ))
}

/// Parses the rewritten step. The contract forbids emitting subsequent
/// steps, so two or more numbered lines reject the response.
pub fn parse_optimized_step(raw: &str) -> Result<String, GatewayError> {
    let numbered: Vec<&str> = raw.lines().filter_map(numbered_line).collect();
    if numbered.len() > 1 {
        return Err(format_error(
            "optimize",
            format!("{} steps in response, exactly one allowed", numbered.len()),
            raw,
        ));
    }
    let text = match numbered.first() {
        Some(t) => t.to_string(),
        None => raw.trim().to_string(),
    };
    if text.is_empty() {
        return Err(format_error("optimize", "empty step", raw));
    }
    Ok(text)
}

fn fenced_or_all_lines(raw: &str) -> Vec<&str> {
    let mut in_fence = false;
    let mut fenced: Vec<&str> = Vec::new();
    for line in raw.lines() {
        if line.trim_start().starts_with("```") {
            in_fence = !in_fence;
            continue;
        }
        if in_fence {
            fenced.push(line);
        }
    }
    if fenced.is_empty() {
        raw.lines().collect()
    } else {
        fenced
    }
}

fn parse_files(raw: &str) -> Result<CandidateSolution, GatewayError> {
    let paths: Vec<String> = fenced_or_all_lines(raw)
        .into_iter()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.to_string())
        .collect();
    if paths.is_empty() {
        return Err(format_error("solve", "no file paths in response", raw));
    }
    Ok(CandidateSolution::Files { paths })
}

/// Element lines: `<kind> <file> <qualified_name>`.
fn parse_elements(raw: &str) -> Result<CandidateSolution, GatewayError> {
    let mut elements = Vec::new();
    for line in fenced_or_all_lines(raw) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (kind, file, name) = match (parts.next(), parts.next(), parts.next()) {
            (Some(k), Some(f), Some(n)) => (k, f, n),
            _ => {
                return Err(format_error(
                    "solve",
                    format!("element line `{line}` is not `<kind> <file> <name>`"),
                    raw,
                ))
            }
        };
        let kind: ElementKind = kind
            .parse()
            .map_err(|e: String| format_error("solve", e, raw))?;
        elements.push(CodeElementRef {
            kind,
            qualified_name: name.to_string(),
            file: file.to_string(),
            span: (1, 1),
        });
    }
    if elements.is_empty() {
        return Err(format_error("solve", "no elements in response", raw));
    }
    Ok(CandidateSolution::Elements { elements })
}

fn parse_edits(raw: &str) -> Result<CandidateSolution, GatewayError> {
    let lines: Vec<&str> = raw.lines().collect();
    let mut edits = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim() != SEARCH_MARKER {
            i += 1;
            continue;
        }
        // The nearest preceding non-empty, non-fence line names the file.
        let file = lines[..i]
            .iter()
            .rev()
            .map(|l| l.trim())
            .find(|l| !l.is_empty() && !l.starts_with("```"))
            .ok_or_else(|| {
                format_error("solve", format!("edit at line {} has no file path", i + 1), raw)
            })?
            .to_string();
        let mut search_lines = Vec::new();
        let mut j = i + 1;
        while j < lines.len() && lines[j].trim() != DIVIDER_MARKER {
            if lines[j].trim() == REPLACE_MARKER {
                return Err(format_error(
                    "solve",
                    format!("edit at line {} missing ======= divider", i + 1),
                    raw,
                ));
            }
            search_lines.push(lines[j]);
            j += 1;
        }
        if j >= lines.len() {
            return Err(format_error(
                "solve",
                format!("edit at line {} missing ======= divider", i + 1),
                raw,
            ));
        }
        let mut replace_lines = Vec::new();
        let mut k = j + 1;
        while k < lines.len() && lines[k].trim() != REPLACE_MARKER {
            replace_lines.push(lines[k]);
            k += 1;
        }
        if k >= lines.len() {
            return Err(format_error(
                "solve",
                format!("edit at line {} missing replace terminator", i + 1),
                raw,
            ));
        }
        let search = search_lines.join("\n");
        let replace = replace_lines.join("\n");
        if search == replace {
            return Err(format_error(
                "solve",
                format!("edit at line {} is a no-op (search equals replace)", i + 1),
                raw,
            ));
        }
        edits.push(EditOperation { file, search, replace });
        i = k + 1;
    }
    if edits.is_empty() {
        return Err(format_error("solve", "no search-replace blocks in response", raw));
    }
    Ok(CandidateSolution::Edits { edits })
}

/// Parses a solution response in the subtask's format.
pub fn parse_solution(kind: SubtaskKind, raw: &str) -> Result<CandidateSolution, GatewayError> {
    match kind {
        SubtaskKind::FileLocalization => parse_files(raw),
        SubtaskKind::FaultLocalization => parse_elements(raw),
        SubtaskKind::PatchGeneration => parse_edits(raw),
    }
}
