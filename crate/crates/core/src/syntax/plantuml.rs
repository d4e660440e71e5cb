//! Line-oriented parser for a PlantUML class-diagram subset.
//!
//! Recognized lines: class and enum declarations (with bodies), relationships
//! with optional quoted multiplicities and a label, and notes. Styling and
//! layout directives are consumed as warnings so that otherwise valid
//! diagrams still render.

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::diagnostics::{Collector, DiagnosticCode, Parsed, ValidationReport};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Public,
    Private,
    Protected,
    Package,
    #[default]
    None,
}

impl Visibility {
    fn from_char(c: char) -> Option<Self> {
        match c {
            '+' => Some(Visibility::Public),
            '-' => Some(Visibility::Private),
            '#' => Some(Visibility::Protected),
            '~' => Some(Visibility::Package),
            _ => None,
        }
    }

    pub const fn symbol(&self) -> &'static str {
        match self {
            Visibility::Public => "+",
            Visibility::Private => "-",
            Visibility::Protected => "#",
            Visibility::Package => "~",
            Visibility::None => "",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "member", rename_all = "snake_case")]
pub enum ClassMember {
    Attribute {
        visibility: Visibility,
        name: String,
        type_expr: Option<String>,
        is_list: bool,
    },
    Operation {
        visibility: Visibility,
        name: String,
        params: Vec<String>,
        return_type: Option<String>,
    },
}

impl ClassMember {
    pub fn name(&self) -> &str {
        match self {
            ClassMember::Attribute { name, .. } | ClassMember::Operation { name, .. } => name,
        }
    }

    pub fn is_attribute(&self) -> bool {
        matches!(self, ClassMember::Attribute { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDecl {
    pub name: String,
    pub is_abstract: bool,
    pub members: Vec<ClassMember>,
}

impl ClassDecl {
    pub fn attributes(&self) -> impl Iterator<Item = &ClassMember> {
        self.members.iter().filter(|m| m.is_attribute())
    }

    pub fn operations(&self) -> impl Iterator<Item = &ClassMember> {
        self.members.iter().filter(|m| !m.is_attribute())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumDecl {
    pub name: String,
    pub literals: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Inheritance,
    AssociationDirected,
    Association,
    Aggregation,
    Composition,
    Dependency,
}

impl RelationKind {
    pub const fn as_str(&self) -> &'static str {
        match self {
            RelationKind::Inheritance => "inheritance",
            RelationKind::AssociationDirected => "association_directed",
            RelationKind::Association => "association",
            RelationKind::Aggregation => "aggregation",
            RelationKind::Composition => "composition",
            RelationKind::Dependency => "dependency",
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The arrow exactly as written; direction matters for canonical output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arrow {
    #[serde(rename = "<|--")]
    ExtendsLeft,
    #[serde(rename = "--|>")]
    ExtendsRight,
    #[serde(rename = "-->")]
    Directed,
    #[serde(rename = "<--")]
    DirectedBack,
    #[serde(rename = "--")]
    Plain,
    #[serde(rename = "o--")]
    AggregationLeft,
    #[serde(rename = "--o")]
    AggregationRight,
    #[serde(rename = "*--")]
    CompositionLeft,
    #[serde(rename = "--*")]
    CompositionRight,
    #[serde(rename = "..>")]
    Dependency,
    #[serde(rename = "<..")]
    DependencyBack,
}

impl Arrow {
    pub const ALL: [Arrow; 11] = [
        Arrow::ExtendsLeft,
        Arrow::ExtendsRight,
        Arrow::Directed,
        Arrow::DirectedBack,
        Arrow::Plain,
        Arrow::AggregationLeft,
        Arrow::AggregationRight,
        Arrow::CompositionLeft,
        Arrow::CompositionRight,
        Arrow::Dependency,
        Arrow::DependencyBack,
    ];

    pub const fn symbol(&self) -> &'static str {
        match self {
            Arrow::ExtendsLeft => "<|--",
            Arrow::ExtendsRight => "--|>",
            Arrow::Directed => "-->",
            Arrow::DirectedBack => "<--",
            Arrow::Plain => "--",
            Arrow::AggregationLeft => "o--",
            Arrow::AggregationRight => "--o",
            Arrow::CompositionLeft => "*--",
            Arrow::CompositionRight => "--*",
            Arrow::Dependency => "..>",
            Arrow::DependencyBack => "<..",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        Arrow::ALL.into_iter().find(|a| a.symbol() == s)
    }

    pub const fn kind(&self) -> RelationKind {
        match self {
            Arrow::ExtendsLeft | Arrow::ExtendsRight => RelationKind::Inheritance,
            Arrow::Directed | Arrow::DirectedBack => RelationKind::AssociationDirected,
            Arrow::Plain => RelationKind::Association,
            Arrow::AggregationLeft | Arrow::AggregationRight => RelationKind::Aggregation,
            Arrow::CompositionLeft | Arrow::CompositionRight => RelationKind::Composition,
            Arrow::Dependency | Arrow::DependencyBack => RelationKind::Dependency,
        }
    }

    /// True when the arrow points from right to left in the canonical sense
    /// (source/child/whole on the right-hand side).
    const fn reversed(&self) -> bool {
        matches!(
            self,
            Arrow::ExtendsLeft
                | Arrow::DirectedBack
                | Arrow::AggregationRight
                | Arrow::CompositionRight
                | Arrow::DependencyBack
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relationship {
    pub left: String,
    pub right: String,
    pub arrow: Arrow,
    /// Multiplicities are kept verbatim, never interpreted numerically.
    pub left_mult: Option<String>,
    pub right_mult: Option<String>,
    pub label: Option<String>,
}

impl Relationship {
    pub fn kind(&self) -> RelationKind {
        self.arrow.kind()
    }

    /// Direction-normalized ends: (source, target) for directed kinds,
    /// (child, parent) for inheritance, (whole, part) for aggregation and
    /// composition, sorted for plain associations.
    pub fn normalized_ends(&self) -> (&str, &str) {
        let (l, r) = (self.left.as_str(), self.right.as_str());
        match self.arrow {
            Arrow::Plain => {
                if l <= r {
                    (l, r)
                } else {
                    (r, l)
                }
            }
            // `A <|-- B`: B is the child; `A --|> B`: A is the child.
            Arrow::ExtendsLeft => (r, l),
            Arrow::ExtendsRight => (l, r),
            // `A o-- B` / `A *-- B`: A is the whole.
            Arrow::AggregationLeft | Arrow::CompositionLeft => (l, r),
            a if a.reversed() => (r, l),
            _ => (l, r),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NotePosition {
    Left,
    Right,
    Top,
    Bottom,
}

impl NotePosition {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "left" => Some(NotePosition::Left),
            "right" => Some(NotePosition::Right),
            "top" => Some(NotePosition::Top),
            "bottom" => Some(NotePosition::Bottom),
            _ => None,
        }
    }

    const fn as_str(&self) -> &'static str {
        match self {
            NotePosition::Left => "left",
            NotePosition::Right => "right",
            NotePosition::Top => "top",
            NotePosition::Bottom => "bottom",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteAnchor {
    pub position: NotePosition,
    pub target: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub text: String,
    pub anchor: Option<NoteAnchor>,
    pub alias: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "element", rename_all = "snake_case")]
pub enum UmlElement {
    Class(ClassDecl),
    Enum(EnumDecl),
    Relationship(Relationship),
    Note(Note),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UmlModel {
    pub elements: Vec<UmlElement>,
}

impl UmlModel {
    pub fn classes(&self) -> impl Iterator<Item = &ClassDecl> {
        self.elements.iter().filter_map(|e| match e {
            UmlElement::Class(c) => Some(c),
            _ => None,
        })
    }

    pub fn enums(&self) -> impl Iterator<Item = &EnumDecl> {
        self.elements.iter().filter_map(|e| match e {
            UmlElement::Enum(en) => Some(en),
            _ => None,
        })
    }

    pub fn relationships(&self) -> impl Iterator<Item = &Relationship> {
        self.elements.iter().filter_map(|e| match e {
            UmlElement::Relationship(r) => Some(r),
            _ => None,
        })
    }

    pub fn notes(&self) -> impl Iterator<Item = &Note> {
        self.elements.iter().filter_map(|e| match e {
            UmlElement::Note(n) => Some(n),
            _ => None,
        })
    }

    pub fn class(&self, name: &str) -> Option<&ClassDecl> {
        self.classes().find(|c| c.name == name)
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

const DIRECTIVES: &[&str] = &[
    "skinparam",
    "hide",
    "show",
    "title",
    "header",
    "footer",
    "caption",
    "legend",
    "scale",
    "package",
    "namespace",
    "set",
    "allowmixing",
    "interface",
    "entity",
    "annotation",
    "together",
];

fn is_name_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn is_plain_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if is_name_start(c)) && chars.all(is_name_char)
}

/// Reads a class name (identifier or quoted) from the start of `s`.
/// Returns the name and the remaining text.
fn take_name(s: &str) -> Option<(String, &str)> {
    if let Some(rest) = s.strip_prefix('"') {
        let end = rest.find('"')?;
        let name = &rest[..end];
        if name.is_empty() || name.contains('\n') {
            return None;
        }
        return Some((name.to_string(), &rest[end + 1..]));
    }
    let end = s.find(|c: char| !is_name_char(c)).unwrap_or(s.len());
    if end == 0 || !s.starts_with(is_name_start) {
        return None;
    }
    Some((s[..end].to_string(), &s[end..]))
}

fn first_word(s: &str) -> &str {
    s.split(|c: char| c.is_whitespace() || c == '{').next().unwrap_or("")
}

#[derive(Debug, PartialEq)]
enum RelTok {
    Name(String),
    Quoted(String),
    Arrow(String),
}

/// Tokens with their columns, plus the label after `:`.
type RelTokens = (Vec<(RelTok, usize)>, Option<String>);

/// Tokenize a candidate relationship line. Errors carry a column.
fn tokenize_relationship(line: &str) -> Result<RelTokens, (usize, String)> {
    let chars: Vec<(usize, char)> = line.char_indices().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    let col_of = |i: usize| i + 1;
    while i < chars.len() {
        let (byte, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == ':' {
            let label = line[byte + 1..].trim();
            return Ok((toks, (!label.is_empty()).then(|| label.to_string())));
        }
        if c == '"' {
            let start = i;
            i += 1;
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None => return Err((col_of(start), "unterminated quoted string".into())),
                    Some((_, '"')) => {
                        i += 1;
                        break;
                    }
                    Some((_, ch)) => {
                        s.push(*ch);
                        i += 1;
                    }
                }
            }
            toks.push((RelTok::Quoted(s), col_of(start)));
            continue;
        }
        let is_arrow_char = |c: char| matches!(c, '<' | '>' | '|' | '-' | '.' | '*');
        let next_is_arrow = chars.get(i + 1).is_some_and(|(_, n)| matches!(n, '-' | '.'));
        if is_arrow_char(c) || (c == 'o' && next_is_arrow && !chars.get(i + 2).is_some_and(|(_, n)| is_name_char(*n))) {
            let start = i;
            let mut s = String::new();
            if c == 'o' {
                s.push('o');
                i += 1;
            }
            while let Some((_, ch)) = chars.get(i) {
                if is_arrow_char(*ch) {
                    s.push(*ch);
                    i += 1;
                } else {
                    break;
                }
            }
            // trailing aggregation diamond: `--o`
            if let Some((_, 'o')) = chars.get(i) {
                if !chars.get(i + 1).is_some_and(|(_, n)| is_name_char(*n)) {
                    s.push('o');
                    i += 1;
                }
            }
            toks.push((RelTok::Arrow(s), col_of(start)));
            continue;
        }
        if is_name_start(c) {
            let start = i;
            let mut s = String::new();
            while let Some((_, ch)) = chars.get(i) {
                if is_name_char(*ch) {
                    // stop before a diamond that begins an arrow, as in `Ao--B`
                    if *ch == 'o'
                        && !s.is_empty()
                        && chars.get(i + 1).is_some_and(|(_, n)| matches!(n, '-' | '.'))
                        && chars.get(i + 2).is_some_and(|(_, n)| matches!(n, '-' | '.'))
                    {
                        break;
                    }
                    s.push(*ch);
                    i += 1;
                } else {
                    break;
                }
            }
            toks.push((RelTok::Name(s), col_of(start)));
            continue;
        }
        return Err((col_of(i), format!("unexpected character '{c}'")));
    }
    Ok((toks, None))
}

fn has_arrow_token(line: &str) -> bool {
    match tokenize_relationship(line) {
        Ok((toks, _)) => toks.iter().any(|(t, _)| matches!(t, RelTok::Arrow(_))),
        Err(_) => line.contains("--") || line.contains(".."),
    }
}

enum Block {
    None,
    Class(usize),
    Enum(usize),
    Note {
        start_line: usize,
        anchor: Option<NoteAnchor>,
        alias: Option<String>,
        lines: Vec<String>,
    },
    Skip(&'static str),
}

struct UmlParser {
    elements: Vec<UmlElement>,
    element_lines: Vec<usize>,
    class_index: HashMap<String, usize>,
    enum_index: HashMap<String, usize>,
    diags: Collector,
}

impl UmlParser {
    fn push(&mut self, element: UmlElement, line: usize) -> usize {
        self.elements.push(element);
        self.element_lines.push(line);
        self.elements.len() - 1
    }

    fn declare_class(&mut self, name: String, is_abstract: bool, line: usize, col: usize) -> Option<usize> {
        if self.enum_index.contains_key(&name) {
            self.diags.error(
                line,
                col,
                DiagnosticCode::Duplicate,
                format!("'{name}' is already declared as an enum"),
            );
            return None;
        }
        if let Some(&idx) = self.class_index.get(&name) {
            self.diags.warning(
                line,
                col,
                DiagnosticCode::Duplicate,
                format!("class '{name}' declared more than once; declarations merged"),
            );
            if let UmlElement::Class(c) = &mut self.elements[idx] {
                c.is_abstract |= is_abstract;
            }
            return Some(idx);
        }
        let idx = self.push(
            UmlElement::Class(ClassDecl {
                name: name.clone(),
                is_abstract,
                members: Vec::new(),
            }),
            line,
        );
        self.class_index.insert(name, idx);
        Some(idx)
    }

    fn declare_enum(&mut self, name: String, line: usize, col: usize) -> Option<usize> {
        if self.class_index.contains_key(&name) {
            self.diags.error(
                line,
                col,
                DiagnosticCode::Duplicate,
                format!("'{name}' is already declared as a class"),
            );
            return None;
        }
        if let Some(&idx) = self.enum_index.get(&name) {
            self.diags.warning(
                line,
                col,
                DiagnosticCode::Duplicate,
                format!("enum '{name}' declared more than once; declarations merged"),
            );
            return Some(idx);
        }
        let idx = self.push(
            UmlElement::Enum(EnumDecl {
                name: name.clone(),
                literals: Vec::new(),
            }),
            line,
        );
        self.enum_index.insert(name, idx);
        Some(idx)
    }

    /// `[abstract] class Name [<<stereo>>] [{ | {}]` or `enum Name [{ | {}]`
    fn parse_decl(&mut self, text: &str, line: usize, indent: usize) -> Block {
        let (is_abstract, rest) = match text.strip_prefix("abstract") {
            Some(r) if r.starts_with(char::is_whitespace) => (true, r.trim_start()),
            _ => (false, text),
        };
        let (is_enum, rest) = if let Some(r) = rest.strip_prefix("class") {
            (false, r)
        } else if let Some(r) = rest.strip_prefix("enum") {
            (true, r)
        } else {
            self.diags.error(
                line,
                indent + 1,
                DiagnosticCode::Parse,
                "expected 'class' after 'abstract'",
            );
            return Block::None;
        };
        if !rest.starts_with(char::is_whitespace) {
            self.diags.error(
                line,
                indent + 1,
                DiagnosticCode::Parse,
                "expected a name after the declaration keyword",
            );
            return Block::None;
        }
        let rest_trim = rest.trim_start();
        let name_col = indent + text.len() - rest_trim.len() + 1;
        let Some((name, mut tail)) = take_name(rest_trim) else {
            self.diags
                .error(line, name_col, DiagnosticCode::Parse, "expected a class name");
            return Block::None;
        };
        tail = tail.trim();
        if let Some(after) = tail.strip_prefix("<<") {
            if let Some(end) = after.find(">>") {
                self.diags
                    .warning(line, name_col, DiagnosticCode::Unsupported, "stereotypes are ignored");
                tail = after[end + 2..].trim();
            }
        }
        let opens = match tail {
            "" => false,
            "{" => true,
            "{}" | "{ }" => false,
            other => {
                let col = indent + text.len() - other.len() + 1;
                self.diags.error(
                    line,
                    col,
                    DiagnosticCode::Parse,
                    format!("unexpected '{other}' after declaration of '{name}'"),
                );
                return Block::None;
            }
        };
        if is_enum {
            if is_abstract {
                self.diags
                    .error(line, indent + 1, DiagnosticCode::Parse, "enums cannot be abstract");
                return Block::None;
            }
            match self.declare_enum(name, line, name_col) {
                Some(idx) if opens => Block::Enum(idx),
                Some(_) => Block::None,
                None if opens => Block::Skip("}"),
                None => Block::None,
            }
        } else {
            match self.declare_class(name, is_abstract, line, name_col) {
                Some(idx) if opens => Block::Class(idx),
                Some(_) => Block::None,
                None if opens => Block::Skip("}"),
                None => Block::None,
            }
        }
    }

    fn parse_member(&mut self, text: &str, line: usize, indent: usize) -> Option<ClassMember> {
        let mut rest = text;
        let mut visibility = Visibility::None;
        if let Some(v) = rest.chars().next().and_then(Visibility::from_char) {
            visibility = v;
            rest = rest[1..].trim_start();
        }
        let col = |r: &str| indent + text.len() - r.len() + 1;
        let Some((name, after)) = take_name(rest).filter(|_| !rest.starts_with('"')) else {
            self.diags.error(
                line,
                col(rest),
                DiagnosticCode::Parse,
                format!("malformed member '{text}': expected a name"),
            );
            return None;
        };
        let mut after = after.trim_start();
        let mut params = None;
        if let Some(inner) = after.strip_prefix('(') {
            let Some(close) = inner.rfind(')') else {
                self.diags
                    .error(line, col(after), DiagnosticCode::Parse, "malformed member: missing ')'");
                return None;
            };
            params = Some(split_params(&inner[..close]));
            after = inner[close + 1..].trim_start();
        }
        let mut type_expr = None;
        if let Some(t) = after.strip_prefix(':') {
            let t = t.trim();
            if t.is_empty() {
                self.diags.error(
                    line,
                    col(after),
                    DiagnosticCode::Parse,
                    "malformed member: missing type after ':'",
                );
                return None;
            }
            type_expr = Some(t.to_string());
        } else if !after.is_empty() {
            self.diags.error(
                line,
                col(after),
                DiagnosticCode::Parse,
                format!("malformed member: unexpected '{after}'"),
            );
            return None;
        }
        Some(match params {
            Some(params) => ClassMember::Operation {
                visibility,
                name,
                params,
                return_type: type_expr,
            },
            None => {
                let (type_expr, is_list) = match type_expr {
                    Some(t) => match t.strip_suffix("[]") {
                        Some(inner) if !inner.trim().is_empty() => (Some(inner.trim_end().to_string()), true),
                        Some(_) => {
                            self.diags.error(
                                line,
                                col(after),
                                DiagnosticCode::Parse,
                                "malformed member: missing element type before '[]'",
                            );
                            return None;
                        }
                        None => (Some(t), false),
                    },
                    None => (None, false),
                };
                ClassMember::Attribute {
                    visibility,
                    name,
                    type_expr,
                    is_list,
                }
            }
        })
    }

    fn parse_relationship(&mut self, text: &str, line: usize, indent: usize) {
        let (toks, label) = match tokenize_relationship(text) {
            Ok(t) => t,
            Err((col, msg)) => {
                self.diags.error(line, indent + col, DiagnosticCode::Parse, msg);
                return;
            }
        };
        let arrow_positions: Vec<usize> = toks
            .iter()
            .enumerate()
            .filter(|(_, (t, _))| matches!(t, RelTok::Arrow(_)))
            .map(|(i, _)| i)
            .collect();
        if arrow_positions.len() != 1 {
            let col = toks
                .get(arrow_positions.get(1).copied().unwrap_or(0))
                .map_or(1, |t| t.1);
            self.diags.error(
                line,
                indent + col,
                DiagnosticCode::Parse,
                "malformed relationship: expected exactly one arrow",
            );
            return;
        }
        let ai = arrow_positions[0];
        let RelTok::Arrow(sym) = &toks[ai].0 else {
            unreachable!()
        };
        let Some(arrow) = Arrow::from_symbol(sym) else {
            self.diags.error(
                line,
                indent + toks[ai].1,
                DiagnosticCode::Parse,
                format!("malformed relationship arrow '{sym}'"),
            );
            return;
        };
        let end_name = |t: &RelTok| match t {
            RelTok::Name(n) | RelTok::Quoted(n) => Some(n.clone()),
            RelTok::Arrow(_) => None,
        };
        let (left, left_mult) = match &toks[..ai] {
            [n] => (end_name(&n.0), None),
            [n, (RelTok::Quoted(m), _)] => (end_name(&n.0), Some(m.clone())),
            _ => (None, None),
        };
        let (right, right_mult) = match &toks[ai + 1..] {
            [n] => (end_name(&n.0), None),
            [(RelTok::Quoted(m), _), n] => (end_name(&n.0), Some(m.clone())),
            _ => (None, None),
        };
        let (Some(left), Some(right)) = (left, right) else {
            self.diags.error(
                line,
                indent + 1,
                DiagnosticCode::Parse,
                "malformed relationship: expected `Name [\"mult\"] arrow [\"mult\"] Name [: label]`",
            );
            return;
        };
        self.push(
            UmlElement::Relationship(Relationship {
                left,
                right,
                arrow,
                left_mult,
                right_mult,
                label,
            }),
            line,
        );
    }

    /// Returns the block to enter for multi-line notes.
    fn parse_note(&mut self, text: &str, line: usize, indent: usize) -> Block {
        let rest = text["note".len()..].trim_start();
        // floating: note "text" [as Alias]
        if rest.starts_with('"') {
            let Some((body, tail)) = take_name(rest) else {
                self.diags
                    .error(line, indent + 1, DiagnosticCode::Parse, "malformed note text");
                return Block::None;
            };
            let tail = tail.trim();
            let alias = if tail.is_empty() {
                None
            } else if let Some(a) = tail.strip_prefix("as").map(str::trim).filter(|a| is_plain_name(a)) {
                Some(a.to_string())
            } else {
                self.diags.error(
                    line,
                    indent + 1,
                    DiagnosticCode::Parse,
                    format!("unexpected '{tail}' after note text"),
                );
                return Block::None;
            };
            self.push(
                UmlElement::Note(Note {
                    text: body,
                    anchor: None,
                    alias,
                }),
                line,
            );
            return Block::None;
        }
        // floating multi-line: note as Alias
        if let Some(a) = rest.strip_prefix("as ") {
            let a = a.trim();
            if is_plain_name(a) {
                return Block::Note {
                    start_line: line,
                    anchor: None,
                    alias: Some(a.to_string()),
                    lines: Vec::new(),
                };
            }
        }
        // anchored: note <pos> of Target [: text]
        let mut words = rest.splitn(3, char::is_whitespace);
        let pos = words.next().and_then(NotePosition::parse);
        let of = words.next();
        let tail = words.next().unwrap_or("").trim_start();
        let (Some(position), Some("of")) = (pos, of) else {
            self.diags.error(
                line,
                indent + 1,
                DiagnosticCode::Parse,
                "malformed note: expected `note <left|right|top|bottom> of <Name>`",
            );
            return Block::None;
        };
        let Some((target, after)) = take_name(tail) else {
            self.diags.error(
                line,
                indent + 1,
                DiagnosticCode::Parse,
                "malformed note: missing target",
            );
            return Block::None;
        };
        let anchor = Some(NoteAnchor { position, target });
        let after = after.trim();
        if after.is_empty() {
            return Block::Note {
                start_line: line,
                anchor,
                alias: None,
                lines: Vec::new(),
            };
        }
        match after.strip_prefix(':') {
            Some(t) => {
                self.push(
                    UmlElement::Note(Note {
                        text: t.trim().to_string(),
                        anchor,
                        alias: None,
                    }),
                    line,
                );
            }
            None => self.diags.error(
                line,
                indent + 1,
                DiagnosticCode::Parse,
                format!("unexpected '{after}' in note"),
            ),
        }
        Block::None
    }

    /// Create implicit classes for relationship ends that were never declared,
    /// each inserted just before the first relationship naming it.
    fn resolve_dangling(&mut self) {
        let declared: BTreeSet<String> = self.class_index.keys().chain(self.enum_index.keys()).cloned().collect();
        let mut created: BTreeSet<String> = BTreeSet::new();
        let mut out = Vec::with_capacity(self.elements.len());
        let lines = std::mem::take(&mut self.element_lines);
        for (element, line) in std::mem::take(&mut self.elements).into_iter().zip(lines) {
            if let UmlElement::Relationship(r) = &element {
                for end in [&r.left, &r.right] {
                    if !declared.contains(end) && created.insert(end.clone()) {
                        self.diags.warning(
                            line,
                            1,
                            DiagnosticCode::DanglingRef,
                            format!("'{end}' is not declared; created implicitly"),
                        );
                        out.push(UmlElement::Class(ClassDecl {
                            name: end.clone(),
                            is_abstract: false,
                            members: Vec::new(),
                        }));
                    }
                }
            }
            if let UmlElement::Note(Note { anchor: Some(a), .. }) = &element {
                if !declared.contains(&a.target) && !created.contains(&a.target) {
                    self.diags.warning(
                        line,
                        1,
                        DiagnosticCode::DanglingRef,
                        format!("note attached to undeclared '{}'", a.target),
                    );
                }
            }
            out.push(element);
        }
        self.elements = out;
    }
}

fn split_params(s: &str) -> Vec<String> {
    let mut params = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '<' | '(' | '[' => depth += 1,
            '>' | ')' | ']' => depth -= 1,
            ',' if depth == 0 => {
                params.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    if !cur.trim().is_empty() || !params.is_empty() {
        params.push(cur.trim().to_string());
    }
    params
}

/// Parse a PlantUML class diagram between `@startuml` and `@enduml`.
pub fn parse_plantuml(text: &str) -> Result<Parsed<UmlModel>, ValidationReport> {
    let mut p = UmlParser {
        elements: Vec::new(),
        element_lines: Vec::new(),
        class_index: HashMap::new(),
        enum_index: HashMap::new(),
        diags: Collector::default(),
    };

    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    // leading blank lines, then @startuml
    while i < lines.len() && lines[i].trim().is_empty() {
        i += 1;
    }
    match lines.get(i) {
        Some(l) if first_word(l.trim()) == "@startuml" => i += 1,
        Some(l) => {
            let indent = l.len() - l.trim_start().len();
            p.diags
                .error(i + 1, indent + 1, DiagnosticCode::Parse, "expected '@startuml'");
            return Err(p.diags.finish());
        }
        None => {
            p.diags
                .error(1, 1, DiagnosticCode::Parse, "expected '@startuml', found end of input");
            return Err(p.diags.finish());
        }
    }

    let mut block = Block::None;
    let mut block_comment = false;
    let mut ended = false;
    while i < lines.len() {
        let raw = lines[i];
        let line_no = i + 1;
        i += 1;
        if p.diags.saturated() {
            break;
        }
        let text = raw.trim();
        let indent = raw.len() - raw.trim_start().len();

        if block_comment {
            if text.ends_with("'/") {
                block_comment = false;
            }
            continue;
        }
        if let Some(rest) = text.strip_prefix("/'") {
            block_comment = !rest.ends_with("'/");
            continue;
        }
        if text.starts_with('\'') {
            continue;
        }
        if first_word(text) == "@enduml" {
            match &block {
                Block::Class(_) | Block::Enum(_) => p.diags.error(
                    line_no,
                    indent + 1,
                    DiagnosticCode::Parse,
                    "unclosed declaration body before '@enduml'",
                ),
                Block::Note { start_line, .. } => {
                    p.diags
                        .error(*start_line, 1, DiagnosticCode::Parse, "unclosed note before '@enduml'")
                }
                _ => {}
            }
            ended = true;
            break;
        }

        match &mut block {
            Block::Skip(end) => {
                if text.replace(' ', "") == end.replace(' ', "") {
                    block = Block::None;
                }
                continue;
            }
            Block::Note { lines: body, .. } => {
                if text == "end note" || text == "endnote" {
                    let Block::Note {
                        start_line,
                        anchor,
                        alias,
                        lines: body,
                    } = std::mem::replace(&mut block, Block::None)
                    else {
                        unreachable!()
                    };
                    p.push(
                        UmlElement::Note(Note {
                            text: body.join("\n"),
                            anchor,
                            alias,
                        }),
                        start_line,
                    );
                } else {
                    body.push(text.to_string());
                }
                continue;
            }
            Block::Class(idx) => {
                let idx = *idx;
                if text == "}" {
                    block = Block::None;
                    continue;
                }
                if text.is_empty() {
                    continue;
                }
                if text.chars().all(|c| matches!(c, '-' | '.' | '=' | '_')) {
                    p.diags.warning(
                        line_no,
                        indent + 1,
                        DiagnosticCode::Unsupported,
                        "member separators are ignored",
                    );
                    continue;
                }
                if let Some(m) = p.parse_member(text, line_no, indent) {
                    if let UmlElement::Class(c) = &mut p.elements[idx] {
                        c.members.push(m);
                    }
                }
                continue;
            }
            Block::Enum(idx) => {
                let idx = *idx;
                if text == "}" {
                    block = Block::None;
                    continue;
                }
                for lit in text.split(',').map(str::trim) {
                    if lit.is_empty() {
                        continue;
                    }
                    if !is_plain_name(lit) {
                        p.diags.error(
                            line_no,
                            indent + 1,
                            DiagnosticCode::Parse,
                            format!("malformed enum literal '{lit}'"),
                        );
                        break;
                    }
                    if let UmlElement::Enum(e) = &mut p.elements[idx] {
                        e.literals.push(lit.to_string());
                    }
                }
                continue;
            }
            Block::None => {}
        }

        if text.is_empty() {
            continue;
        }
        let word = first_word(text);
        match word {
            "class" | "abstract" | "enum" => block = p.parse_decl(text, line_no, indent),
            "note" => block = p.parse_note(text, line_no, indent),
            "@startuml" => p
                .diags
                .error(line_no, indent + 1, DiagnosticCode::Parse, "nested '@startuml'"),
            _ if text.starts_with('!') => p.diags.warning(
                line_no,
                indent + 1,
                DiagnosticCode::Unsupported,
                "preprocessor directive ignored",
            ),
            _ if DIRECTIVES.contains(&word) || text.ends_with("direction") => {
                p.diags.warning(
                    line_no,
                    indent + 1,
                    DiagnosticCode::Unsupported,
                    format!("directive '{word}' ignored"),
                );
                if text.ends_with('{') {
                    block = Block::Skip("}");
                    if word == "package" || word == "namespace" || word == "together" {
                        // container contents are still diagram content
                        block = Block::None;
                    }
                } else if matches!(word, "legend" | "title" | "header" | "footer") && text == word {
                    block = Block::Skip(match word {
                        "legend" => "endlegend",
                        "title" => "end title",
                        "header" => "endheader",
                        _ => "endfooter",
                    });
                }
            }
            _ if text == "}" => p.diags.warning(
                line_no,
                indent + 1,
                DiagnosticCode::Unsupported,
                "closing brace of an ignored container",
            ),
            _ if has_arrow_token(text) => p.parse_relationship(text, line_no, indent),
            _ => p.diags.warning(
                line_no,
                indent + 1,
                DiagnosticCode::Unsupported,
                format!("unrecognized line ignored: '{text}'"),
            ),
        }
    }

    if !ended {
        let last = lines.len().max(1);
        let col = lines.last().map_or(1, |l| l.chars().count() + 1);
        p.diags
            .error(last, col, DiagnosticCode::Parse, "missing '@enduml' at end of input");
    }

    p.resolve_dangling();
    let failed = p.diags.error_count() > 0;
    let report = p.diags.finish();
    if failed {
        Err(report)
    } else {
        Ok(Parsed {
            model: UmlModel { elements: p.elements },
            report,
        })
    }
}

// ---------------------------------------------------------------------------
// Canonical printer
// ---------------------------------------------------------------------------

fn write_name(out: &mut String, name: &str) {
    if is_plain_name(name) {
        out.push_str(name);
    } else {
        let _ = write!(out, "\"{name}\"");
    }
}

fn write_member(out: &mut String, m: &ClassMember) {
    out.push_str("  ");
    match m {
        ClassMember::Attribute {
            visibility,
            name,
            type_expr,
            is_list,
        } => {
            out.push_str(visibility.symbol());
            out.push_str(name);
            if let Some(t) = type_expr {
                let _ = write!(out, " : {t}");
                if *is_list {
                    out.push_str("[]");
                }
            }
        }
        ClassMember::Operation {
            visibility,
            name,
            params,
            return_type,
        } => {
            out.push_str(visibility.symbol());
            let _ = write!(out, "{name}({})", params.join(", "));
            if let Some(t) = return_type {
                let _ = write!(out, " : {t}");
            }
        }
    }
    out.push('\n');
}

/// Deterministic pretty-print of a class model; members keep their order.
pub fn canonicalize_plantuml(model: &UmlModel) -> String {
    let mut out = String::from("@startuml\n");
    for element in &model.elements {
        match element {
            UmlElement::Class(c) => {
                if c.is_abstract {
                    out.push_str("abstract ");
                }
                out.push_str("class ");
                write_name(&mut out, &c.name);
                if c.members.is_empty() {
                    out.push('\n');
                } else {
                    out.push_str(" {\n");
                    for m in &c.members {
                        write_member(&mut out, m);
                    }
                    out.push_str("}\n");
                }
            }
            UmlElement::Enum(e) => {
                out.push_str("enum ");
                write_name(&mut out, &e.name);
                if e.literals.is_empty() {
                    out.push('\n');
                } else {
                    out.push_str(" {\n");
                    for l in &e.literals {
                        let _ = writeln!(out, "  {l}");
                    }
                    out.push_str("}\n");
                }
            }
            UmlElement::Relationship(r) => {
                write_name(&mut out, &r.left);
                if let Some(m) = &r.left_mult {
                    let _ = write!(out, " \"{m}\"");
                }
                let _ = write!(out, " {} ", r.arrow.symbol());
                if let Some(m) = &r.right_mult {
                    let _ = write!(out, "\"{m}\" ");
                }
                write_name(&mut out, &r.right);
                if let Some(l) = &r.label {
                    let _ = write!(out, " : {l}");
                }
                out.push('\n');
            }
            UmlElement::Note(n) => write_note(&mut out, n),
        }
    }
    out.push_str("@enduml\n");
    out
}

fn write_note(out: &mut String, n: &Note) {
    let multiline = n.text.contains('\n') || n.text.is_empty();
    match (&n.anchor, multiline) {
        (Some(a), false) => {
            let _ = write!(out, "note {} of ", a.position.as_str());
            write_name(out, &a.target);
            let _ = writeln!(out, " : {}", n.text);
        }
        (Some(a), true) => {
            let _ = write!(out, "note {} of ", a.position.as_str());
            write_name(out, &a.target);
            out.push('\n');
            write_note_body(out, &n.text);
        }
        (None, false) if !n.text.contains('"') => {
            let _ = write!(out, "note \"{}\"", n.text);
            if let Some(alias) = &n.alias {
                let _ = write!(out, " as {alias}");
            }
            out.push('\n');
        }
        (None, _) => {
            let alias = n.alias.as_deref().unwrap_or("N");
            let _ = writeln!(out, "note as {alias}");
            write_note_body(out, &n.text);
        }
    }
}

fn write_note_body(out: &mut String, text: &str) {
    if !text.is_empty() {
        for l in text.lines() {
            let _ = writeln!(out, "  {l}");
        }
    }
    out.push_str("end note\n");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::diagnostics::Severity;

    fn ok(src: &str) -> Parsed<UmlModel> {
        match parse_plantuml(src) {
            Ok(p) => p,
            Err(r) => panic!("unexpected failure:\n{r}"),
        }
    }

    #[test]
    fn empty_document() {
        let p = ok("@startuml\n@enduml");
        assert!(p.model.elements.is_empty());
        assert!(p.report.diagnostics.is_empty());
    }

    #[test]
    fn order_scenario_shape() {
        let p =
            ok("@startuml\nclass Order {\n -orderItems: OrderItem[]\n}\nOrder \"1\" --> \"1..*\" OrderItem\n@enduml");
        let m = &p.model;
        let order = m.class("Order").unwrap();
        assert_eq!(
            order.members,
            vec![ClassMember::Attribute {
                visibility: Visibility::Private,
                name: "orderItems".into(),
                type_expr: Some("OrderItem".into()),
                is_list: true,
            }]
        );
        let rels: Vec<_> = m.relationships().collect();
        assert_eq!(rels.len(), 1);
        assert_eq!(rels[0].kind(), RelationKind::AssociationDirected);
        assert_eq!(rels[0].left_mult.as_deref(), Some("1"));
        assert_eq!(rels[0].right_mult.as_deref(), Some("1..*"));
        // OrderItem is created implicitly with a warning
        assert!(m.class("OrderItem").is_some());
        assert_eq!(p.report.diagnostics.len(), 1);
        assert_eq!(p.report.diagnostics[0].code, DiagnosticCode::DanglingRef);
        assert_eq!(p.report.diagnostics[0].severity, Severity::Warning);
    }

    #[test]
    fn missing_enduml() {
        let r = parse_plantuml("@startuml\nclass A\n").unwrap_err();
        let d = &r.diagnostics[0];
        assert_eq!(d.code, DiagnosticCode::Parse);
        assert_eq!((d.line, d.column), (2, 8));
        assert!(d.message.contains("@enduml"));
    }

    #[test]
    fn missing_startuml() {
        let r = parse_plantuml("class A\n@enduml").unwrap_err();
        assert_eq!((r.diagnostics[0].line, r.diagnostics[0].column), (1, 1));
    }

    #[test]
    fn all_arrows() {
        for a in Arrow::ALL {
            let src = format!("@startuml\nclass A\nclass B\nA {} B\n@enduml", a.symbol());
            let p = ok(&src);
            let r = p.model.relationships().next().unwrap();
            assert_eq!(r.arrow, a, "{}", a.symbol());
            // also without spaces; `A--oB` is ambiguous and skipped
            if a.symbol().ends_with('o') {
                continue;
            }
            let src = format!("@startuml\nclass A\nclass B\nA{}B\n@enduml", a.symbol());
            assert_eq!(
                ok(&src).model.relationships().next().unwrap().arrow,
                a,
                "{}",
                a.symbol()
            );
        }
    }

    #[test]
    fn normalized_ends() {
        let rel = |a: Arrow| Relationship {
            left: "A".into(),
            right: "B".into(),
            arrow: a,
            left_mult: None,
            right_mult: None,
            label: None,
        };
        assert_eq!(rel(Arrow::ExtendsLeft).normalized_ends(), ("B", "A"));
        assert_eq!(rel(Arrow::ExtendsRight).normalized_ends(), ("A", "B"));
        assert_eq!(rel(Arrow::DirectedBack).normalized_ends(), ("B", "A"));
        assert_eq!(rel(Arrow::AggregationLeft).normalized_ends(), ("A", "B"));
        assert_eq!(rel(Arrow::AggregationRight).normalized_ends(), ("B", "A"));
        assert_eq!(rel(Arrow::Dependency).normalized_ends(), ("A", "B"));
    }

    #[test]
    fn malformed_arrow_and_member() {
        let r = parse_plantuml("@startuml\nA -> B\n@enduml").unwrap_err();
        assert!(r.diagnostics[0].message.contains("arrow"), "{r}");
        assert_eq!((r.diagnostics[0].line, r.diagnostics[0].column), (2, 3));
        let r = parse_plantuml("@startuml\nclass A {\n  String name\n}\n@enduml").unwrap_err();
        assert!(r.diagnostics[0].message.contains("malformed member"), "{r}");
        assert_eq!(r.diagnostics[0].line, 3);
    }

    #[test]
    fn directives_are_warnings() {
        let p = ok("@startuml\ntitle Orders\nskinparam classAttributeIconSize 0\nhide empty members\nleft to right direction\nskinparam class {\n BackgroundColor White\n}\nclass A\n@enduml");
        assert_eq!(p.model.classes().count(), 1);
        assert_eq!(p.report.warnings().count(), 5);
    }

    #[test]
    fn operations_enums_notes() {
        let src = "@startuml\nabstract class Shape {\n  +area() : double\n  #move(dx: int, dy: Map<K, V>)\n  ~name\n}\nenum Color {\n  RED, GREEN\n  BLUE\n}\nnote left of Shape : base type\nnote right of Color\n  first\n  second\nend note\nnote \"free\" as N1\nShape <|-- Circle : extends\n@enduml";
        let p = ok(src);
        let shape = p.model.class("Shape").unwrap();
        assert!(shape.is_abstract);
        assert_eq!(shape.operations().count(), 2);
        let ClassMember::Operation { params, .. } = &shape.members[1] else {
            panic!()
        };
        assert_eq!(params, &vec!["dx: int".to_string(), "dy: Map<K, V>".to_string()]);
        let color = p.model.enums().next().unwrap();
        assert_eq!(color.literals, vec!["RED", "GREEN", "BLUE"]);
        assert_eq!(p.model.notes().count(), 3);
        let text = canonicalize_plantuml(&p.model);
        let again = ok(&text).model;
        assert_eq!(again, p.model);
        assert_eq!(canonicalize_plantuml(&again), text);
    }

    #[test]
    fn duplicate_class_merges_and_enum_clash_errors() {
        let p = ok("@startuml\nclass A {\n +x: int\n}\nclass A {\n +y: int\n}\n@enduml");
        assert_eq!(p.model.classes().count(), 1);
        assert_eq!(p.model.class("A").unwrap().members.len(), 2);
        assert_eq!(p.report.diagnostics[0].code, DiagnosticCode::Duplicate);
        let r = parse_plantuml("@startuml\nclass A\nenum A\n@enduml").unwrap_err();
        assert_eq!(r.diagnostics[0].code, DiagnosticCode::Duplicate);
    }

    #[test]
    fn implicit_class_inserted_before_first_reference() {
        let p = ok("@startuml\nclass A\nA --> B\nB --> C\n@enduml");
        let names: Vec<_> = p
            .model
            .elements
            .iter()
            .map(|e| match e {
                UmlElement::Class(c) => c.name.clone(),
                UmlElement::Relationship(r) => format!("{}->{}", r.left, r.right),
                _ => String::new(),
            })
            .collect();
        assert_eq!(names, vec!["A", "B", "A->B", "C", "B->C"]);
        assert_eq!(
            p.report
                .warnings()
                .filter(|d| d.code == DiagnosticCode::DanglingRef)
                .count(),
            2
        );
    }

    #[test]
    fn sequence_diagram_rejected() {
        let r = parse_plantuml("@startuml\nAlice -> Bob: hello\n@enduml").unwrap_err();
        assert!(!r.ok);
    }
}
