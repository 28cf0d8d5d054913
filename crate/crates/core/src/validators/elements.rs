//! Lightweight code-element extraction for indentation-scoped source.
//!
//! A line scanner, not a grammar: it recognizes top-level classes, their
//! direct methods, top-level functions, and top-level assigned names.
//! Unrecognized regions simply produce no elements, so the scanner is total
//! even on files that would not parse at a historical commit.

use serde::{Deserialize, Serialize};

use super::normalize::normalize_source;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Class,
    Method,
    Function,
    Global,
}

impl std::fmt::Display for ElementKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ElementKind::Class => "class",
            ElementKind::Method => "method",
            ElementKind::Function => "function",
            ElementKind::Global => "global",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for ElementKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "class" => Ok(ElementKind::Class),
            "method" => Ok(ElementKind::Method),
            "function" => Ok(ElementKind::Function),
            "global" => Ok(ElementKind::Global),
            other => Err(format!("unknown element kind `{other}`")),
        }
    }
}

/// A code element reference. Identity for oracle comparison is
/// `(kind, file, qualified_name)`; the span is bookkeeping for input
/// building and metrics, never part of equality checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeElementRef {
    pub kind: ElementKind,
    /// Dotted path; methods carry exactly one enclosing class level.
    pub qualified_name: String,
    pub file: String,
    /// 1-based inclusive line span.
    pub span: (usize, usize),
}

impl CodeElementRef {
    pub fn key(&self) -> (ElementKind, &str, &str) {
        (self.kind, self.file.as_str(), self.qualified_name.as_str())
    }
}

fn indent_width(line: &str) -> usize {
    line.chars()
        .take_while(|c| *c == ' ' || *c == '\t')
        .map(|c| if c == '\t' { 8 } else { 1 })
        .sum()
}

fn def_name(trimmed: &str) -> Option<&str> {
    let rest = trimmed
        .strip_prefix("async def ")
        .or_else(|| trimmed.strip_prefix("def "))?;
    let end = rest.find(|c: char| !(c.is_alphanumeric() || c == '_'))?;
    let name = &rest[..end];
    (!name.is_empty() && rest[end..].starts_with('(')).then_some(name)
}

fn class_name(trimmed: &str) -> Option<&str> {
    let rest = trimmed.strip_prefix("class ")?;
    let end = rest
        .find(|c: char| !(c.is_alphanumeric() || c == '_'))
        .unwrap_or(rest.len());
    let name = &rest[..end];
    let tail = rest[end..].trim_start();
    (!name.is_empty() && (tail.starts_with('(') || tail.starts_with(':') || tail.is_empty()))
        .then_some(name)
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_')
        && chars.all(|c| c.is_alphanumeric() || c == '_')
}

/// Recognizes plain (`X = ...`) and annotated (`X: T = ...`) assignments;
/// augmented assignments are deliberately excluded.
fn assigned_name(trimmed: &str) -> Option<&str> {
    let eq = trimmed.find('=')?;
    if eq + 1 < trimmed.len() && trimmed.as_bytes()[eq + 1] == b'=' {
        return None;
    }
    if eq > 0 {
        let before = trimmed.as_bytes()[eq - 1];
        if matches!(before, b'+' | b'-' | b'*' | b'/' | b'%' | b'&' | b'|' | b'^' | b'<' | b'>' | b'!' | b'@' | b':') {
            // `:=` and augmented forms; annotated assignment is handled by
            // splitting on the annotation colon below.
            if before != b':' {
                return None;
            }
        }
    }
    let lhs = trimmed[..eq].trim_end_matches(':').trim();
    let name = lhs.split(':').next()?.trim();
    is_identifier(name).then_some(name)
}

/// Trailing index (exclusive) of an element body that starts at `start` and
/// ends before the first line at `limit_indent` or less, with trailing
/// blank lines excluded from the span.
fn body_end(lines: &[&str], start: usize, limit_indent: usize) -> usize {
    let mut end = start + 1;
    let mut last_content = start;
    while end < lines.len() {
        let line = lines[end];
        if line.trim().is_empty() {
            end += 1;
            continue;
        }
        if indent_width(line) <= limit_indent {
            break;
        }
        last_content = end;
        end += 1;
    }
    last_content + 1
}

/// Extracts classes, class-direct methods, top-level functions, and
/// top-level assigned names with 1-based line spans.
pub fn extract_code_elements(file_text: &str, path: &str) -> Vec<CodeElementRef> {
    let lines: Vec<&str> = file_text.lines().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        let trimmed = line.trim_start();
        if trimmed.is_empty() || indent_width(line) != 0 {
            i += 1;
            continue;
        }
        if let Some(name) = class_name(trimmed) {
            let end = body_end(&lines, i, 0);
            out.push(CodeElementRef {
                kind: ElementKind::Class,
                qualified_name: name.to_string(),
                file: path.to_string(),
                span: (i + 1, end),
            });
            // Methods at the first member indent inside the class body.
            let mut member_indent = None;
            let mut j = i + 1;
            while j < end {
                let member = lines[j];
                let mtrim = member.trim_start();
                if mtrim.is_empty() {
                    j += 1;
                    continue;
                }
                let ind = indent_width(member);
                let member_indent = *member_indent.get_or_insert(ind);
                if ind == member_indent {
                    if let Some(mname) = def_name(mtrim) {
                        let mend = body_end(&lines, j, member_indent);
                        out.push(CodeElementRef {
                            kind: ElementKind::Method,
                            qualified_name: format!("{name}.{mname}"),
                            file: path.to_string(),
                            span: (j + 1, mend),
                        });
                        j = mend;
                        continue;
                    }
                }
                j += 1;
            }
            i = end;
        } else if let Some(name) = def_name(trimmed) {
            let end = body_end(&lines, i, 0);
            out.push(CodeElementRef {
                kind: ElementKind::Function,
                qualified_name: name.to_string(),
                file: path.to_string(),
                span: (i + 1, end),
            });
            i = end;
        } else if let Some(name) = assigned_name(trimmed) {
            // Extend through bracket continuations and backslash joins.
            let mut end = i;
            let mut balance: i64 = 0;
            loop {
                let l = lines[end];
                for c in l.chars() {
                    match c {
                        '(' | '[' | '{' => balance += 1,
                        ')' | ']' | '}' => balance -= 1,
                        _ => {}
                    }
                }
                let continues = balance > 0 || l.trim_end().ends_with('\\');
                if continues && end + 1 < lines.len() {
                    end += 1;
                } else {
                    break;
                }
            }
            out.push(CodeElementRef {
                kind: ElementKind::Global,
                qualified_name: name.to_string(),
                file: path.to_string(),
                span: (i + 1, end + 1),
            });
            i = end + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Normalized body text of an element, for change detection.
pub fn element_body(file_text: &str, element: &CodeElementRef) -> String {
    let lines: Vec<&str> = file_text.lines().collect();
    let (start, end) = element.span;
    let start = start.saturating_sub(1).min(lines.len());
    let end = end.min(lines.len());
    normalize_source(&lines[start..end].join("\n"))
}

/// Elements whose normalized body differs between the two texts, plus
/// elements present on only one side.
pub fn diff_changed_elements(pre_text: &str, post_text: &str, path: &str) -> Vec<CodeElementRef> {
    let pre = extract_code_elements(pre_text, path);
    let post = extract_code_elements(post_text, path);
    let mut out = Vec::new();
    for p in &post {
        match pre.iter().find(|e| e.kind == p.kind && e.qualified_name == p.qualified_name) {
            Some(old) => {
                if element_body(pre_text, old) != element_body(post_text, p) {
                    out.push(p.clone());
                }
            }
            None => out.push(p.clone()),
        }
    }
    for old in &pre {
        if !post
            .iter()
            .any(|e| e.kind == old.kind && e.qualified_name == old.qualified_name)
        {
            out.push(old.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_and_method() {
        let els = extract_code_elements("class A:\n  def f(self): pass\n", "m.py");
        let keys: Vec<_> = els.iter().map(|e| (e.kind, e.qualified_name.as_str())).collect();
        assert_eq!(
            keys,
            vec![(ElementKind::Class, "A"), (ElementKind::Method, "A.f")]
        );
    }

    #[test]
    fn top_level_global() {
        let els = extract_code_elements("X = 3\n", "m.py");
        assert_eq!(els.len(), 1);
        assert_eq!(els[0].kind, ElementKind::Global);
        assert_eq!(els[0].qualified_name, "X");
    }

    #[test]
    fn annotated_assignment_included_augmented_excluded() {
        let els = extract_code_elements("X: int = 3\n", "m.py");
        assert_eq!(els[0].qualified_name, "X");
        assert!(extract_code_elements("X += 3\n", "m.py").is_empty());
    }

    #[test]
    fn nested_function_not_emitted() {
        let src = "def outer():\n    def inner():\n        pass\n    return inner\n";
        let els = extract_code_elements(src, "m.py");
        assert_eq!(els.len(), 1);
        assert_eq!(els[0].qualified_name, "outer");
        assert_eq!(els[0].span, (1, 4));
    }

    #[test]
    fn method_spans_cover_bodies() {
        let src = "class A:\n    def f(self):\n        return 1\n\n    def g(self):\n        return 2\n";
        let els = extract_code_elements(src, "m.py");
        let f = els.iter().find(|e| e.qualified_name == "A.f").unwrap();
        let g = els.iter().find(|e| e.qualified_name == "A.g").unwrap();
        assert_eq!(f.span, (2, 3));
        assert_eq!(g.span, (5, 6));
    }

    #[test]
    fn changed_method_detected() {
        let pre = "class A:\n    def f(self):\n        return 1\n    def g(self):\n        return 2\n";
        let post = "class A:\n    def f(self):\n        return 1\n    def g(self):\n        return 3\n";
        let changed = diff_changed_elements(pre, post, "m.py");
        let names: Vec<_> = changed.iter().map(|e| e.qualified_name.as_str()).collect();
        // The class body contains the method, so both report a change.
        assert!(names.contains(&"A.g"));
        assert!(!names.contains(&"A.f"));
    }

    #[test]
    fn identical_texts_diff_empty() {
        let src = "def f():\n    return 1\n";
        assert!(diff_changed_elements(src, src, "m.py").is_empty());
    }

    #[test]
    fn added_function_detected() {
        let pre = "def f():\n    return 1\n";
        let post = "def f():\n    return 1\n\ndef g():\n    return 2\n";
        let changed = diff_changed_elements(pre, post, "m.py");
        assert_eq!(changed.len(), 1);
        assert_eq!(changed[0].qualified_name, "g");
    }

    #[test]
    fn comment_only_change_is_not_a_change() {
        let pre = "def f():\n    return 1\n";
        let post = "def f():\n    # explain\n    return 1\n";
        assert!(diff_changed_elements(pre, post, "m.py").is_empty());
    }

    #[test]
    fn multiline_global_span() {
        let src = "TABLE = [\n    1,\n    2,\n]\nY = 0\n";
        let els = extract_code_elements(src, "m.py");
        assert_eq!(els[0].span, (1, 4));
        assert_eq!(els[1].qualified_name, "Y");
    }
}
