//! Code and table-path extraction from free-text rollout responses.
//!
//! A response carries at most one answer program, delimited by a line that
//! reads exactly ` ```python ` and closed by a bare ` ``` ` line. Table paths are
//! the string literals passed as the first argument to a configured set of
//! table-reader calls.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Opening fence literal. Must start a line.
pub const OPEN_FENCE: &str = "```python";
/// Closing fence literal. Must start a line and be followed only by whitespace.
pub const CLOSE_FENCE: &str = "```";

/// Reader calls recognised by default.
pub const DEFAULT_READ_CALLS: [&str; 2] = ["pd.read_csv", "read_csv"];

/// The full model response, stored verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResponseText(pub String);

impl ResponseText {
    pub fn new(raw: impl Into<String>) -> Self {
        Self(raw.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for ResponseText {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl From<String> for ResponseText {
    fn from(s: String) -> Self {
        Self(s)
    }
}

/// The body of the chosen fenced block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeCandidate {
    pub source: String,
    /// Byte range `[start, end)` of the whole block, fences included.
    pub fence_span: (usize, usize),
    /// Ordinal of the chosen block among complete blocks in the response.
    pub block_index: usize,
}

impl CodeCandidate {
    /// Build a candidate directly from source text (no enclosing response).
    pub fn from_source(source: impl Into<String>) -> Self {
        let source = source.into();
        let len = source.len();
        Self {
            source,
            fence_span: (0, len),
            block_index: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionConfig {
    #[serde(default = "default_read_calls")]
    pub read_calls: Vec<String>,
}

fn default_read_calls() -> Vec<String> {
    DEFAULT_READ_CALLS.iter().map(|s| s.to_string()).collect()
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            read_calls: default_read_calls(),
        }
    }
}

/// A line of the response: byte offset of its first char, its content
/// (without terminator), and the offset just past its terminator.
struct Line<'a> {
    start: usize,
    text: &'a str,
    next: usize,
}

fn lines(s: &str) -> impl Iterator<Item = Line<'_>> {
    let mut start = 0;
    s.split_inclusive('\n').map(move |chunk| {
        let line = Line {
            start,
            text: chunk.strip_suffix('\n').unwrap_or(chunk),
            next: start + chunk.len(),
        };
        start += chunk.len();
        line
    })
}

fn is_open_fence(line: &str) -> bool {
    line.strip_prefix(OPEN_FENCE)
        .is_some_and(|rest| rest.chars().all(char::is_whitespace))
}

fn is_close_fence(line: &str) -> bool {
    line.strip_prefix(CLOSE_FENCE)
        .is_some_and(|rest| rest.chars().all(char::is_whitespace))
}

/// Return the first complete ` ```python ` block, or `None` on a format error.
pub fn extract_code(response: &ResponseText) -> Option<CodeCandidate> {
    let text = response.as_str();
    let mut open: Option<(usize, usize)> = None; // (fence start, body start)
    for line in lines(text) {
        match open {
            None => {
                if is_open_fence(line.text) {
                    open = Some((line.start, line.next));
                }
            }
            Some((fence_start, body_start)) => {
                if is_close_fence(line.text) {
                    // The newline before the closing fence belongs to the fence.
                    let body_end = if line.start > body_start {
                        line.start - 1
                    } else {
                        body_start
                    };
                    let body = &text[body_start..body_end];
                    let body = body.strip_suffix('\r').unwrap_or(body);
                    let fence_end = line.start + CLOSE_FENCE.len();
                    return Some(CodeCandidate {
                        source: body.to_string(),
                        fence_span: (fence_start, fence_end),
                        block_index: 0,
                    });
                }
            }
        }
    }
    None
}

/// Normalized, de-duplicated set of relative table paths.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct PathSet(BTreeSet<String>);

impl PathSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert after normalization; paths that normalize to nothing are dropped.
    pub fn insert(&mut self, raw: &str) -> bool {
        match normalize_path(raw) {
            Some(p) => self.0.insert(p),
            None => false,
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, path: &str) -> bool {
        normalize_path(path).is_some_and(|p| self.0.contains(&p))
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn intersection_len(&self, other: &PathSet) -> usize {
        self.0.intersection(&other.0).count()
    }
}

impl<S: AsRef<str>> FromIterator<S> for PathSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut set = PathSet::new();
        for p in iter {
            set.insert(p.as_ref());
        }
        set
    }
}

impl From<Vec<String>> for PathSet {
    fn from(v: Vec<String>) -> Self {
        v.into_iter().collect()
    }
}

impl From<PathSet> for Vec<String> {
    fn from(s: PathSet) -> Self {
        s.0.into_iter().collect()
    }
}

impl fmt::Display for PathSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{p:?}")?;
        }
        write!(f, "}}")
    }
}

/// Lexical path normalization: surrounding quotes stripped, `\` turned into
/// `/`, empty and `.` segments dropped, `..` folded into its parent where one
/// exists. Returns `None` when nothing remains.
pub fn normalize_path(raw: &str) -> Option<String> {
    let mut s = raw.trim();
    for q in ['"', '\''] {
        if s.len() >= 2 && s.starts_with(q) && s.ends_with(q) {
            s = &s[1..s.len() - 1];
        }
    }
    let s = s.replace('\\', "/");
    let absolute = s.starts_with('/');
    let mut parts: Vec<&str> = Vec::new();
    for seg in s.split('/') {
        match seg {
            "" | "." => {}
            ".." => match parts.last() {
                Some(&last) if last != ".." => {
                    parts.pop();
                }
                _ => {
                    if !absolute {
                        parts.push("..");
                    }
                }
            },
            other => parts.push(other),
        }
    }
    if parts.is_empty() {
        return None;
    }
    let joined = parts.join("/");
    Some(if absolute { format!("/{joined}") } else { joined })
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Parse a single Python string literal (optional `r`/`u`/`f` prefix) at the
/// start of `s`. Returns the literal body exactly as written (escapes left
/// in place) and the byte length consumed.
fn parse_string_literal(s: &str) -> Option<(&str, usize)> {
    let prefix_len = s
        .find(|c: char| !matches!(c, 'r' | 'R' | 'u' | 'U' | 'f' | 'F'))
        .unwrap_or(s.len());
    if prefix_len > 2 {
        return None;
    }
    let prefix = &s[..prefix_len];
    let fstring = prefix.contains(['f', 'F']);
    let rest = &s[prefix_len..];
    let quote = rest.chars().next().filter(|&c| c == '"' || c == '\'')?;
    if rest[1..].starts_with(quote) && rest[2..].starts_with(quote) {
        // Triple-quoted paths are not a form readers use in practice.
        return None;
    }
    let body_start = prefix_len + 1;
    let mut escaped = false;
    for (i, c) in s[body_start..].char_indices() {
        match c {
            '\n' => return None,
            _ if escaped => escaped = false,
            '\\' => escaped = true,
            c if c == quote => {
                let body = &s[body_start..body_start + i];
                if fstring && body.contains(['{', '}']) {
                    return None;
                }
                return Some((body, body_start + i + 1));
            }
            _ => {}
        }
    }
    None
}

/// Raw (un-normalized) path literals passed as the first positional argument
/// of a recognised reader call.
pub fn extract_path_literals<'a>(code: &'a str, cfg: &ExtractionConfig) -> Vec<&'a str> {
    let mut found = Vec::new();
    for call in &cfg.read_calls {
        if call.is_empty() {
            continue;
        }
        let mut from = 0;
        while let Some(off) = code[from..].find(call.as_str()) {
            let at = from + off;
            from = at + call.len();
            if code[..at].chars().next_back().is_some_and(is_ident_char) {
                continue;
            }
            let after = code[from..].trim_start();
            let Some(after) = after.strip_prefix('(') else {
                continue;
            };
            let after = after.trim_start();
            let Some((lit, used)) = parse_string_literal(after) else {
                continue;
            };
            // A literal followed by anything but `,` or `)` is part of a
            // larger expression (concatenation, method call, ...).
            let tail = after[used..].trim_start();
            if tail.starts_with(',') || tail.starts_with(')') {
                found.push(lit);
            }
        }
    }
    found
}

/// Table paths read by `code`, normalized.
pub fn extract_table_paths(code: &CodeCandidate, cfg: &ExtractionConfig) -> PathSet {
    extract_path_literals(&code.source, cfg).into_iter().collect()
}
