//! Canonical comparison form for source text.
//!
//! Strips `#` comments outside string literals, drops blank lines, trims
//! each line, and collapses interior whitespace runs. Two files that differ
//! only in comments, indentation, or line breaks normalize to the same
//! string. Docstrings are string expressions and are retained.

/// Removes `#`-to-end-of-line comments, tracking single, double, and
/// triple-quoted string state across lines so hash characters inside
/// literals survive.
fn strip_comments(text: &str) -> String {
    #[derive(PartialEq)]
    enum Str {
        None,
        Single(char),  // ' or "
        Triple(char),
    }
    let mut state = Str::None;
    let mut out = String::with_capacity(text.len());
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match state {
            Str::None => {
                if c == '#' {
                    while i < chars.len() && chars[i] != '\n' {
                        i += 1;
                    }
                    continue;
                }
                if c == '\'' || c == '"' {
                    if chars.get(i + 1) == Some(&c) && chars.get(i + 2) == Some(&c) {
                        state = Str::Triple(c);
                        out.push(c);
                        out.push(c);
                        out.push(c);
                        i += 3;
                        continue;
                    }
                    state = Str::Single(c);
                }
                out.push(c);
                i += 1;
            }
            Str::Single(q) => {
                if c == '\\' && i + 1 < chars.len() {
                    out.push(c);
                    out.push(chars[i + 1]);
                    i += 2;
                    continue;
                }
                if c == q || c == '\n' {
                    state = Str::None;
                }
                out.push(c);
                i += 1;
            }
            Str::Triple(q) => {
                if c == '\\' && i + 1 < chars.len() {
                    out.push(c);
                    out.push(chars[i + 1]);
                    i += 2;
                    continue;
                }
                if c == q && chars.get(i + 1) == Some(&q) && chars.get(i + 2) == Some(&q) {
                    state = Str::None;
                    out.push(q);
                    out.push(q);
                    out.push(q);
                    i += 3;
                    continue;
                }
                out.push(c);
                i += 1;
            }
        }
    }
    out
}

/// Canonicalizes source text for exact-match comparison. Total and
/// idempotent.
pub fn normalize_source(text: &str) -> String {
    let stripped = strip_comments(text);
    let mut lines: Vec<String> = Vec::new();
    for line in stripped.lines() {
        let mut collapsed = String::with_capacity(line.len());
        let mut in_ws = false;
        for c in line.trim().chars() {
            if c.is_whitespace() {
                if !in_ws {
                    collapsed.push(' ');
                    in_ws = true;
                }
            } else {
                collapsed.push(c);
                in_ws = false;
            }
        }
        if !collapsed.is_empty() {
            lines.push(collapsed);
        }
    }
    lines.join("\n")
}
