//! Locating candidate modeling-language blocks inside free-form LLM output.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Language {
    Plantuml,
    Graphviz,
    Unknown,
}

impl Language {
    pub const fn as_str(&self) -> &'static str {
        match self {
            Language::Plantuml => "plantuml",
            Language::Graphviz => "graphviz",
            Language::Unknown => "unknown",
        }
    }

    pub fn is_supported(&self) -> bool {
        !matches!(self, Language::Unknown)
    }
}

impl std::fmt::Display for Language {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockOrigin {
    FencedTagged,
    FencedUntagged,
    MarkerDelimited,
}

/// Byte offsets into the response text, `start..end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeBlock {
    /// Block content without fence lines.
    pub raw: String,
    pub language: Language,
    pub origin: BlockOrigin,
    /// Whole region including fence lines.
    pub span: Span,
    /// Info string of a fenced block, lowercased.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

static DOT_HEAD_IN_TEXT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?i)\b(?:strict\s+)?(?:di)?graph(?:\s+(?:"(?:[^"\\]|\\.)*"|[A-Za-z_][A-Za-z0-9_]*|-?(?:\.[0-9]+|[0-9]+(?:\.[0-9]*)?)))?\s*\{"#)
        .expect("valid regex")
});

static DOT_HEAD_AT_START: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?s)^\s*(?:(?://|#)[^\n]*\n\s*|/\*.*?\*/\s*)*(?i:strict\s+)?(?i:di)?graph\b[^{]*\{")
        .expect("valid regex")
});

/// Language of a block: fence tag first, then the `@startuml` marker, then
/// the `graph`/`digraph` header heuristic.
pub fn classify(block: &CodeBlock) -> Language {
    classify_parts(block.tag.as_deref(), &block.raw)
}

pub(crate) fn classify_parts(tag: Option<&str>, raw: &str) -> Language {
    match tag.map(str::to_ascii_lowercase).as_deref() {
        Some("plantuml" | "puml") => return Language::Plantuml,
        Some("dot" | "graphviz") => return Language::Graphviz,
        _ => {}
    }
    if raw.contains("@startuml") {
        Language::Plantuml
    } else if DOT_HEAD_AT_START.is_match(raw) {
        Language::Graphviz
    } else {
        Language::Unknown
    }
}

fn fence_len(trimmed: &str) -> usize {
    trimmed.chars().take_while(|&c| c == '`').count()
}

fn fenced_candidates(text: &str, out: &mut Vec<CodeBlock>) {
    // (line start, line end without newline)
    let mut lines = Vec::new();
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        let content = line.strip_suffix('\n').unwrap_or(line);
        lines.push((pos, pos + content.len()));
        pos += line.len();
    }

    let mut i = 0;
    while i < lines.len() {
        let (start, end) = lines[i];
        let trimmed = text[start..end].trim_start();
        let n = fence_len(trimmed);
        if n < 3 {
            i += 1;
            continue;
        }
        let info = trimmed[n..].trim();
        let tag = info
            .split_whitespace()
            .next()
            .map(|t| {
                t.trim_matches(|c| matches!(c, '"' | '\'' | '{' | '}' | '.'))
                    .to_ascii_lowercase()
            })
            .filter(|t| !t.is_empty());
        let body_start = (end + 1).min(text.len());
        let close = (i + 1..lines.len()).find(|&j| {
            let l = text[lines[j].0..lines[j].1].trim();
            fence_len(l) >= n && l.chars().all(|c| c == '`')
        });
        let origin = if tag.is_some() {
            BlockOrigin::FencedTagged
        } else {
            BlockOrigin::FencedUntagged
        };
        match close {
            Some(j) => {
                let (cstart, cend) = lines[j];
                let body_end = if cstart > body_start { cstart - 1 } else { body_start };
                let raw = text[body_start..body_end].trim_end_matches('\r').to_string();
                let language = classify_parts(tag.as_deref(), &raw);
                out.push(CodeBlock {
                    raw,
                    language,
                    origin,
                    span: Span { start, end: cend },
                    tag,
                    warning: None,
                });
                i = j + 1;
            }
            None => {
                out.push(CodeBlock {
                    raw: text[body_start..].to_string(),
                    language: Language::Unknown,
                    origin,
                    span: Span { start, end: text.len() },
                    tag,
                    warning: Some("unterminated code fence".into()),
                });
                return;
            }
        }
    }
}

fn plantuml_candidates(text: &str, out: &mut Vec<CodeBlock>) {
    let mut from = 0;
    while let Some(rel) = text[from..].find("@startuml") {
        let start = from + rel;
        match text[start..].find("@enduml") {
            Some(e) => {
                let mut end = start + e + "@enduml".len();
                // include the rest of the @enduml line (e.g. trailing spaces)
                let line_end = text[end..].find('\n').map_or(text.len(), |n| end + n);
                if text[end..line_end].trim().is_empty() {
                    end = line_end;
                }
                let raw = text[start..end].trim_end().to_string();
                out.push(CodeBlock {
                    raw,
                    language: Language::Plantuml,
                    origin: BlockOrigin::MarkerDelimited,
                    span: Span { start, end },
                    tag: None,
                    warning: None,
                });
                from = end;
            }
            None => {
                out.push(CodeBlock {
                    raw: text[start..].to_string(),
                    language: Language::Unknown,
                    origin: BlockOrigin::MarkerDelimited,
                    span: Span { start, end: text.len() },
                    tag: None,
                    warning: Some("'@startuml' without matching '@enduml'".into()),
                });
                return;
            }
        }
    }
}

/// Byte index just past the brace that closes the one at `open`, skipping
/// quoted strings and comments.
fn matching_brace(text: &str, open: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut i = open;
    while i < bytes.len() {
        match bytes[i] {
            b'"' => {
                i += 1;
                while i < bytes.len() && bytes[i] != b'"' {
                    if bytes[i] == b'\\' {
                        i += 1;
                    }
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                i += 2;
                while i + 1 < bytes.len() && !(bytes[i] == b'*' && bytes[i + 1] == b'/') {
                    i += 1;
                }
                i += 1;
            }
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
        i += 1;
    }
    None
}

fn dot_candidates(text: &str, out: &mut Vec<CodeBlock>) {
    let mut from = 0;
    while let Some(m) = DOT_HEAD_IN_TEXT.find_at(text, from) {
        let start = m.start();
        let open = m.end() - 1;
        match matching_brace(text, open) {
            Some(end) => {
                out.push(CodeBlock {
                    raw: text[start..end].to_string(),
                    language: Language::Graphviz,
                    origin: BlockOrigin::MarkerDelimited,
                    span: Span { start, end },
                    tag: None,
                    warning: None,
                });
                from = end;
            }
            None => {
                out.push(CodeBlock {
                    raw: text[start..].to_string(),
                    language: Language::Unknown,
                    origin: BlockOrigin::MarkerDelimited,
                    span: Span { start, end: text.len() },
                    tag: None,
                    warning: Some("graph body has unbalanced braces".into()),
                });
                return;
            }
        }
    }
}

/// Find fenced blocks, bare `@startuml…@enduml` regions and bare DOT graphs.
/// Overlaps resolve to the earliest start, then the longest region; the
/// result is in document order with non-overlapping spans.
pub fn extract_blocks(text: &str) -> Vec<CodeBlock> {
    let mut candidates = Vec::new();
    fenced_candidates(text, &mut candidates);
    plantuml_candidates(text, &mut candidates);
    dot_candidates(text, &mut candidates);
    candidates.sort_by(|a, b| a.span.start.cmp(&b.span.start).then(b.span.len().cmp(&a.span.len())));

    let mut picked: Vec<CodeBlock> = Vec::with_capacity(candidates.len());
    for c in candidates {
        if picked.last().is_some_and(|p| p.span.overlaps(&c.span)) {
            continue;
        }
        picked.push(c);
    }
    picked
}
