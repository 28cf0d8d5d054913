//! Rejection-sampling oracles and their supporting machinery.
//!
//! Everything here is exact-match by construction: file sets compare as
//! sets, element sets compare by `(kind, file, qualified_name)`, and
//! patches compare whole post-patch files after normalization, never the
//! diff text itself.

mod elements;
mod normalize;

pub use elements::{diff_changed_elements, element_body, extract_code_elements, CodeElementRef, ElementKind};
pub use normalize::normalize_source;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::diff::Hunk;
use crate::corpus::RepoSnapshot;

/// Per-subtask oracle derived from a developer gold patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub modified_files: BTreeSet<String>,
    pub elements: Vec<CodeElementRef>,
    /// Path -> full post-patch content for every modified file.
    pub post_patch_files: BTreeMap<String, String>,
    /// Path -> gold hunks, kept for edit synthesis and line metrics.
    pub gold_hunks: BTreeMap<String, Vec<Hunk>>,
    /// True when the gold diff is whitespace/comment-only, i.e. the
    /// normalized pre and post files are identical. Such tasks are unusable
    /// for patch-generation search because the oracle would accept the
    /// unedited file.
    pub normalization_degenerate: bool,
}

impl GroundTruth {
    pub fn element_keys(&self) -> BTreeSet<(ElementKind, String, String)> {
        self.elements
            .iter()
            .map(|e| (e.kind, e.file.clone(), e.qualified_name.clone()))
            .collect()
    }
}

/// One search-replace edit. `search` must occur exactly once in the target
/// file at application time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOperation {
    pub file: String,
    pub search: String,
    pub replace: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum ApplyError {
    #[error("edit {index}: file `{file}` not in snapshot")]
    MissingFile { index: usize, file: String },
    #[error("edit {index}: search block not found in `{file}`")]
    SearchNotFound { index: usize, file: String },
    #[error("edit {index}: search block ambiguous in `{file}` ({occurrences} occurrences)")]
    SearchAmbiguous {
        index: usize,
        file: String,
        occurrences: usize,
    },
}

/// Applies edits in order on a private copy; later edits see earlier edits'
/// effects.
pub fn apply_edits(
    snapshot: &RepoSnapshot,
    edits: &[EditOperation],
) -> Result<RepoSnapshot, ApplyError> {
    let mut result = snapshot.clone();
    for (index, edit) in edits.iter().enumerate() {
        if edit.search.is_empty() {
            // Whole-file insert, valid only for a new or empty file.
            match result.files.get(&edit.file) {
                Some(existing) if !existing.is_empty() => {
                    return Err(ApplyError::SearchAmbiguous {
                        index,
                        file: edit.file.clone(),
                        occurrences: usize::MAX,
                    })
                }
                _ => {
                    result.files.insert(edit.file.clone(), edit.replace.clone());
                    continue;
                }
            }
        }
        let content = result
            .files
            .get(&edit.file)
            .ok_or_else(|| ApplyError::MissingFile {
                index,
                file: edit.file.clone(),
            })?;
        let occurrences = content.matches(&edit.search).count();
        match occurrences {
            0 => {
                return Err(ApplyError::SearchNotFound {
                    index,
                    file: edit.file.clone(),
                })
            }
            1 => {
                let updated = content.replacen(&edit.search, &edit.replace, 1);
                result.files.insert(edit.file.clone(), updated);
            }
            n => {
                return Err(ApplyError::SearchAmbiguous {
                    index,
                    file: edit.file.clone(),
                    occurrences: n,
                })
            }
        }
    }
    Ok(result)
}

/// True iff the predicted files equal the gold modified-file set exactly.
/// Order and duplication in the prediction are irrelevant.
pub fn validate_file_localization(pred: &[String], gt: &GroundTruth) -> bool {
    let pred_set: BTreeSet<&str> = pred.iter().map(|s| s.as_str()).collect();
    let gold: BTreeSet<&str> = gt.modified_files.iter().map(|s| s.as_str()).collect();
    pred_set == gold
}

/// True iff the predicted element identities equal the gold set. Spans are
/// ignored; identity is `(kind, file, qualified_name)`.
pub fn validate_fault_localization(pred: &[CodeElementRef], gt: &GroundTruth) -> bool {
    let pred_set: BTreeSet<(ElementKind, String, String)> = pred
        .iter()
        .map(|e| (e.kind, e.file.clone(), e.qualified_name.clone()))
        .collect();
    pred_set == gt.element_keys()
}

/// Outcome of a patch check, categorized for the sample log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PatchVerdict {
    Pass,
    ApplyError(String),
    Mismatch { file: String },
}

impl PatchVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, PatchVerdict::Pass)
    }
}

/// Applies the edits and compares every gold-modified file whole, after
/// normalization, against the gold post-patch content. Apply failures are
/// reported as a verdict, never raised.
pub fn validate_patch(
    edits: &[EditOperation],
    snapshot: &RepoSnapshot,
    gt: &GroundTruth,
) -> PatchVerdict {
    let edited = match apply_edits(snapshot, edits) {
        Ok(s) => s,
        Err(e) => return PatchVerdict::ApplyError(e.to_string()),
    };
    for file in &gt.modified_files {
        let got = edited.files.get(file).map(|s| s.as_str()).unwrap_or("");
        let want = gt
            .post_patch_files
            .get(file)
            .map(|s| s.as_str())
            .unwrap_or("");
        if normalize_source(got) != normalize_source(want) {
            return PatchVerdict::Mismatch { file: file.clone() };
        }
    }
    PatchVerdict::Pass
}

/// Builds search-replace edits straight from the gold hunks: one edit per
/// hunk, searching for the hunk's pre-image (context included) and
/// replacing with its post-image. An add-file hunk has an empty pre-image
/// and becomes a whole-file insert.
pub fn synthesize_gold_edits(gt: &GroundTruth) -> Vec<EditOperation> {
    let mut out = Vec::new();
    for (path, hunks) in &gt.gold_hunks {
        for hunk in hunks {
            let search = hunk.pre_lines().join("\n");
            let replace = hunk.post_lines().join("\n");
            if search == replace {
                continue;
            }
            out.push(EditOperation {
                file: path.clone(),
                search,
                replace,
            });
        }
    }
    out
}

/// Localization hit flags at the three granularities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitReport {
    pub file_hit: bool,
    pub func_hit: bool,
    pub line_hit: bool,
}

/// Line window accepted around each predicted line.
pub const LINE_HIT_WINDOW: usize = 3;

/// Hit metrics: `file_hit` iff the prediction covers every gold file,
/// `func_hit` iff it covers every gold changed element, and `line_hit` iff
/// every gold modified line falls within `+/-3` of some predicted line in
/// the same file.
pub fn compute_localization_hits(
    pred_files: &[String],
    pred_elements: &[CodeElementRef],
    pred_lines: &BTreeMap<String, Vec<usize>>,
    gt: &GroundTruth,
) -> HitReport {
    let pred_file_set: BTreeSet<&str> = pred_files.iter().map(|s| s.as_str()).collect();
    let file_hit = gt
        .modified_files
        .iter()
        .all(|f| pred_file_set.contains(f.as_str()));

    let pred_keys: BTreeSet<(ElementKind, String, String)> = pred_elements
        .iter()
        .map(|e| (e.kind, e.file.clone(), e.qualified_name.clone()))
        .collect();
    let func_hit = gt.element_keys().iter().all(|k| pred_keys.contains(k));

    let mut line_hit = true;
    'outer: for (path, hunks) in &gt.gold_hunks {
        let predicted = pred_lines.get(path);
        for hunk in hunks {
            for gold_line in hunk.changed_old_lines() {
                let covered = predicted.is_some_and(|lines| {
                    lines
                        .iter()
                        .any(|&p| gold_line.abs_diff(p) <= LINE_HIT_WINDOW)
                });
                if !covered {
                    line_hit = false;
                    break 'outer;
                }
            }
        }
    }

    HitReport {
        file_hit,
        func_hit,
        line_hit,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::diff::{parse_unified_diff};

    fn snapshot(files: &[(&str, &str)]) -> RepoSnapshot {
        RepoSnapshot {
            files: files
                .iter()
                .map(|(p, c)| (p.to_string(), c.to_string()))
                .collect(),
        }
    }

    fn gt_files(files: &[&str]) -> GroundTruth {
        GroundTruth {
            modified_files: files.iter().map(|s| s.to_string()).collect(),
            elements: Vec::new(),
            post_patch_files: BTreeMap::new(),
            gold_hunks: BTreeMap::new(),
            normalization_degenerate: false,
        }
    }

    #[test]
    fn file_localization_exact_match() {
        let gt = gt_files(&["a/core.py"]);
        assert!(validate_file_localization(&["a/core.py".into()], &gt));
        assert!(!validate_file_localization(
            &["core.py".into(), "__init__.py".into()],
            &gt_files(&["core.py"])
        ));
        assert!(!validate_file_localization(&[], &gt));
    }

    #[test]
    fn file_localization_ignores_order_and_duplicates() {
        let gt = gt_files(&["a.py", "b.py"]);
        assert!(validate_file_localization(
            &["b.py".into(), "a.py".into(), "a.py".into()],
            &gt
        ));
    }

    fn element(kind: ElementKind, file: &str, name: &str) -> CodeElementRef {
        CodeElementRef {
            kind,
            qualified_name: name.to_string(),
            file: file.to_string(),
            span: (1, 1),
        }
    }

    #[test]
    fn fault_localization_set_equality() {
        let mut gt = gt_files(&["core.py"]);
        gt.elements = vec![element(ElementKind::Function, "core.py", "gather")];
        assert!(validate_fault_localization(
            &[element(ElementKind::Function, "core.py", "gather")],
            &gt
        ));
        assert!(!validate_fault_localization(&[], &gt));
        assert!(!validate_fault_localization(
            &[
                element(ElementKind::Function, "core.py", "gather"),
                element(ElementKind::Global, "core.py", "X"),
            ],
            &gt
        ));
    }

    #[test]
    fn fault_localization_ignores_spans() {
        let mut gt = gt_files(&["core.py"]);
        gt.elements = vec![CodeElementRef {
            kind: ElementKind::Function,
            qualified_name: "gather".into(),
            file: "core.py".into(),
            span: (10, 20),
        }];
        assert!(validate_fault_localization(
            &[element(ElementKind::Function, "core.py", "gather")],
            &gt
        ));
    }

    #[test]
    fn apply_edits_unique_match() {
        let snap = snapshot(&[("f.py", "a\nb\nc\n")]);
        let edits = vec![EditOperation {
            file: "f.py".into(),
            search: "b".into(),
            replace: "B".into(),
        }];
        let out = apply_edits(&snap, &edits).unwrap();
        assert_eq!(out.files["f.py"], "a\nB\nc\n");
    }

    #[test]
    fn apply_edits_not_found_and_ambiguous() {
        let snap = snapshot(&[("f.py", "x\nx\n")]);
        let missing = vec![EditOperation {
            file: "f.py".into(),
            search: "zzz".into(),
            replace: "w".into(),
        }];
        assert!(matches!(
            apply_edits(&snap, &missing),
            Err(ApplyError::SearchNotFound { index: 0, .. })
        ));
        let dup = vec![EditOperation {
            file: "f.py".into(),
            search: "x".into(),
            replace: "y".into(),
        }];
        assert!(matches!(
            apply_edits(&snap, &dup),
            Err(ApplyError::SearchAmbiguous { occurrences: 2, .. })
        ));
    }

    #[test]
    fn apply_edits_sequential_visibility() {
        let snap = snapshot(&[("f.py", "one\n")]);
        let edits = vec![
            EditOperation {
                file: "f.py".into(),
                search: "one".into(),
                replace: "two".into(),
            },
            EditOperation {
                file: "f.py".into(),
                search: "two".into(),
                replace: "three".into(),
            },
        ];
        let out = apply_edits(&snap, &edits).unwrap();
        assert_eq!(out.files["f.py"], "three\n");
    }

    fn patch_fixture() -> (RepoSnapshot, GroundTruth) {
        let pre = "def f():\n    return 1\n";
        let post = "def f():\n    return 2\n";
        let snap = snapshot(&[("core.py", pre)]);
        let diff = crate::corpus::diff::make_unified_diff("a/core.py", "b/core.py", pre, post, 3);
        let parsed = parse_unified_diff(&diff).unwrap();
        let gt = GroundTruth {
            modified_files: ["core.py".to_string()].into_iter().collect(),
            elements: Vec::new(),
            post_patch_files: [("core.py".to_string(), post.to_string())].into_iter().collect(),
            gold_hunks: [("core.py".to_string(), parsed[0].hunks.clone())]
                .into_iter()
                .collect(),
            normalization_degenerate: false,
        };
        (snap, gt)
    }

    #[test]
    fn validate_patch_gold_edits_pass() {
        let (snap, gt) = patch_fixture();
        let edits = synthesize_gold_edits(&gt);
        assert!(validate_patch(&edits, &snap, &gt).passed());
    }

    #[test]
    fn validate_patch_rejects_extra_change() {
        let (snap, gt) = patch_fixture();
        let edits = vec![EditOperation {
            file: "core.py".into(),
            search: "def f():\n    return 1".into(),
            replace: "def f():\n    y = tuple(x)\n    return 2".into(),
        }];
        assert!(matches!(
            validate_patch(&edits, &snap, &gt),
            PatchVerdict::Mismatch { .. }
        ));
    }

    #[test]
    fn validate_patch_accepts_comment_and_indent_variants() {
        let (snap, gt) = patch_fixture();
        let edits = vec![EditOperation {
            file: "core.py".into(),
            search: "    return 1".into(),
            replace: "    # changed\n    return  2".into(),
        }];
        assert!(validate_patch(&edits, &snap, &gt).passed());
    }

    #[test]
    fn validate_patch_apply_error_is_a_verdict() {
        let (snap, gt) = patch_fixture();
        let edits = vec![EditOperation {
            file: "core.py".into(),
            search: "nope".into(),
            replace: "x".into(),
        }];
        assert!(matches!(
            validate_patch(&edits, &snap, &gt),
            PatchVerdict::ApplyError(_)
        ));
    }

    #[test]
    fn line_hit_window_boundaries() {
        let pre = (1..=20).map(|i| format!("l{i}\n")).collect::<String>();
        let post = pre.replace("l10\n", "L10\n");
        let diff = crate::corpus::diff::make_unified_diff("a/f.py", "b/f.py", &pre, &post, 3);
        let parsed = parse_unified_diff(&diff).unwrap();
        let gt = GroundTruth {
            modified_files: ["f.py".to_string()].into_iter().collect(),
            elements: Vec::new(),
            post_patch_files: [("f.py".to_string(), post)].into_iter().collect(),
            gold_hunks: [("f.py".to_string(), parsed[0].hunks.clone())]
                .into_iter()
                .collect(),
            normalization_degenerate: false,
        };
        let lines_at = |n: usize| -> BTreeMap<String, Vec<usize>> {
            [("f.py".to_string(), vec![n])].into_iter().collect()
        };
        // Gold modified line is 10; offset 3 accepted, offset 4 rejected.
        assert!(compute_localization_hits(&[], &[], &lines_at(7), &gt).line_hit);
        assert!(compute_localization_hits(&[], &[], &lines_at(13), &gt).line_hit);
        assert!(!compute_localization_hits(&[], &[], &lines_at(6), &gt).line_hit);
        assert!(!compute_localization_hits(&[], &[], &lines_at(14), &gt).line_hit);
    }

    #[test]
    fn exact_predictions_hit_all_levels() {
        let (snap, gt) = patch_fixture();
        let mut gt = gt;
        gt.elements = vec![element(ElementKind::Function, "core.py", "f")];
        let _ = snap;
        let pred_lines: BTreeMap<String, Vec<usize>> =
            [("core.py".to_string(), vec![2])].into_iter().collect();
        let report = compute_localization_hits(
            &["core.py".into()],
            &[element(ElementKind::Function, "core.py", "f")],
            &pred_lines,
            &gt,
        );
        assert!(report.file_hit && report.func_hit && report.line_hit);
    }
}
