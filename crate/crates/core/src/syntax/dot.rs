//! Parser and canonical printer for a subset of the Graphviz DOT language.
//!
//! Supported: `strict`, `graph`/`digraph`, node, edge (chains), attribute and
//! assignment statements, and the three comment styles. Ports, HTML strings,
//! subgraphs and string concatenation are reported as unsupported.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::diagnostics::{Collector, DiagnosticCode, Parsed, ValidationReport};

pub type Attrs = BTreeMap<String, String>;

/// An identifier as written in the source. `text` holds the content between
/// the quotes for quoted strings, escapes left untouched.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DotId {
    pub text: String,
    pub quoted: bool,
}

impl DotId {
    pub fn bare(text: impl Into<String>) -> Self {
        DotId {
            text: text.into(),
            quoted: false,
        }
    }

    pub fn quoted(text: impl Into<String>) -> Self {
        DotId {
            text: text.into(),
            quoted: true,
        }
    }

    /// The logical name: escaped quotes resolved and line continuations removed.
    pub fn name(&self) -> String {
        if self.quoted {
            self.text.replace("\\\n", "").replace("\\\"", "\"")
        } else {
            self.text.clone()
        }
    }

    fn write_to(&self, out: &mut String) {
        if self.quoted {
            out.push('"');
            out.push_str(&self.text);
            out.push('"');
        } else {
            out.push_str(&self.text);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrTarget {
    Graph,
    Node,
    Edge,
}

impl AttrTarget {
    pub const fn keyword(&self) -> &'static str {
        match self {
            AttrTarget::Graph => "graph",
            AttrTarget::Node => "node",
            AttrTarget::Edge => "edge",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DotStmt {
    Node {
        id: DotId,
        attrs: Attrs,
    },
    /// `endpoints` always has at least two entries.
    Edge {
        endpoints: Vec<DotId>,
        attrs: Attrs,
    },
    Attr {
        target: AttrTarget,
        attrs: Attrs,
    },
    Assignment {
        key: DotId,
        value: DotId,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DotGraph {
    pub strict: bool,
    pub directed: bool,
    pub id: Option<DotId>,
    pub statements: Vec<DotStmt>,
}

impl DotGraph {
    /// Every node name, explicit or only mentioned in an edge, once each.
    pub fn node_names(&self) -> BTreeSet<String> {
        let mut nodes = BTreeSet::new();
        for stmt in &self.statements {
            match stmt {
                DotStmt::Node { id, .. } => {
                    nodes.insert(id.name());
                }
                DotStmt::Edge { endpoints, .. } => {
                    nodes.extend(endpoints.iter().map(DotId::name));
                }
                _ => {}
            }
        }
        nodes
    }

    /// Edge chains expanded into consecutive pairs, in statement order.
    pub fn edge_pairs(&self) -> Vec<(String, String, &Attrs)> {
        let mut edges = Vec::new();
        for stmt in &self.statements {
            if let DotStmt::Edge { endpoints, attrs } = stmt {
                for pair in endpoints.windows(2) {
                    edges.push((pair[0].name(), pair[1].name(), attrs));
                }
            }
        }
        edges
    }

    pub fn edge_op(&self) -> &'static str {
        if self.directed {
            "->"
        } else {
            "--"
        }
    }
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Id(DotId),
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Semi,
    Comma,
    Eq,
    Arrow,
    DashDash,
    Colon,
    Plus,
    Html,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Id(id) if id.quoted => format!("string \"{}\"", id.text),
            Tok::Id(id) => format!("'{}'", id.text),
            Tok::LBrace => "'{'".into(),
            Tok::RBrace => "'}'".into(),
            Tok::LBracket => "'['".into(),
            Tok::RBracket => "']'".into(),
            Tok::Semi => "';'".into(),
            Tok::Comma => "','".into(),
            Tok::Eq => "'='".into(),
            Tok::Arrow => "'->'".into(),
            Tok::DashDash => "'--'".into(),
            Tok::Colon => "':'".into(),
            Tok::Plus => "'+'".into(),
            Tok::Html => "HTML string".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            chars: src.chars().peekable(),
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn peek2(&self) -> Option<char> {
        let mut it = self.chars.clone();
        it.next();
        it.next()
    }

    fn tokenize(mut self, diags: &mut Collector) -> Vec<Token> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia(diags);
            let (line, col) = (self.line, self.col);
            let Some(c) = self.peek() else {
                out.push(Token {
                    tok: Tok::Eof,
                    line,
                    col,
                });
                return out;
            };
            let tok = match c {
                '{' => self.single(Tok::LBrace),
                '}' => self.single(Tok::RBrace),
                '[' => self.single(Tok::LBracket),
                ']' => self.single(Tok::RBracket),
                ';' => self.single(Tok::Semi),
                ',' => self.single(Tok::Comma),
                '=' => self.single(Tok::Eq),
                ':' => self.single(Tok::Colon),
                '+' => self.single(Tok::Plus),
                '"' => match self.quoted() {
                    Some(text) => Tok::Id(DotId::quoted(text)),
                    None => {
                        diags.error(line, col, DiagnosticCode::Lex, "unterminated string");
                        continue;
                    }
                },
                '<' => {
                    self.html();
                    Tok::Html
                }
                '-' => match self.peek2() {
                    Some('>') => {
                        self.bump();
                        self.bump();
                        Tok::Arrow
                    }
                    Some('-') => {
                        self.bump();
                        self.bump();
                        Tok::DashDash
                    }
                    Some(d) if d.is_ascii_digit() || d == '.' => Tok::Id(DotId::bare(self.numeral())),
                    _ => {
                        self.bump();
                        diags.error(line, col, DiagnosticCode::Lex, "unexpected character '-'");
                        continue;
                    }
                },
                c if c.is_ascii_digit() || c == '.' => {
                    let n = self.numeral();
                    if n == "." {
                        diags.error(line, col, DiagnosticCode::Lex, "unexpected character '.'");
                        continue;
                    }
                    Tok::Id(DotId::bare(n))
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let mut s = String::new();
                    while let Some(c) = self.peek() {
                        if c.is_ascii_alphanumeric() || c == '_' {
                            s.push(c);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    Tok::Id(DotId::bare(s))
                }
                other => {
                    self.bump();
                    diags.error(
                        line,
                        col,
                        DiagnosticCode::Lex,
                        format!("unexpected character '{other}'"),
                    );
                    continue;
                }
            };
            out.push(Token { tok, line, col });
        }
    }

    fn single(&mut self, tok: Tok) -> Tok {
        self.bump();
        tok
    }

    fn skip_trivia(&mut self, diags: &mut Collector) {
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('#') => self.skip_line(),
                Some('/') if self.peek2() == Some('/') => self.skip_line(),
                Some('/') if self.peek2() == Some('*') => {
                    let (line, col) = (self.line, self.col);
                    self.bump();
                    self.bump();
                    let mut closed = false;
                    while let Some(c) = self.bump() {
                        if c == '*' && self.peek() == Some('/') {
                            self.bump();
                            closed = true;
                            break;
                        }
                    }
                    if !closed {
                        diags.error(line, col, DiagnosticCode::Lex, "unterminated block comment");
                    }
                }
                _ => return,
            }
        }
    }

    fn skip_line(&mut self) {
        while let Some(c) = self.peek() {
            if c == '\n' {
                break;
            }
            self.bump();
        }
    }

    fn quoted(&mut self) -> Option<String> {
        self.bump();
        let mut s = String::new();
        loop {
            let c = self.bump()?;
            match c {
                '"' => return Some(s),
                '\\' => {
                    s.push('\\');
                    s.push(self.bump()?);
                }
                c => s.push(c),
            }
        }
    }

    fn html(&mut self) {
        let mut depth = 0usize;
        while let Some(c) = self.bump() {
            match c {
                '<' => depth += 1,
                '>' => {
                    depth -= 1;
                    if depth == 0 {
                        return;
                    }
                }
                _ => {}
            }
        }
    }

    fn numeral(&mut self) -> String {
        let mut s = String::new();
        if self.peek() == Some('-') {
            s.push('-');
            self.bump();
        }
        let mut seen_dot = false;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() {
                s.push(c);
            } else if c == '.' && !seen_dot {
                seen_dot = true;
                s.push(c);
            } else {
                break;
            }
            self.bump();
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

const KEYWORDS: [&str; 6] = ["strict", "graph", "digraph", "node", "edge", "subgraph"];

fn is_keyword(id: &DotId, kw: &str) -> bool {
    !id.quoted && id.text.eq_ignore_ascii_case(kw)
}

fn is_any_keyword(text: &str) -> bool {
    KEYWORDS.iter().any(|k| text.eq_ignore_ascii_case(k))
}

struct StmtError;

struct Parser<'d> {
    tokens: Vec<Token>,
    pos: usize,
    directed: bool,
    diags: &'d mut Collector,
}

impl Parser<'_> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error_here(&mut self, code: DiagnosticCode, message: String) -> StmtError {
        let t = self.peek().clone();
        self.diags.error(t.line, t.col, code, message);
        StmtError
    }

    fn expected(&mut self, what: &str) -> StmtError {
        let found = self.peek().tok.describe();
        self.error_here(DiagnosticCode::Parse, format!("expected {what}, found {found}"))
    }

    fn expect_id(&mut self, what: &str) -> Result<DotId, StmtError> {
        match &self.peek().tok {
            Tok::Id(id) => {
                let id = id.clone();
                self.advance();
                Ok(id)
            }
            Tok::Html => Err(self.error_here(DiagnosticCode::Unsupported, "HTML strings are not supported".into())),
            _ => Err(self.expected(what)),
        }
    }

    fn parse_graph(&mut self) -> Option<DotGraph> {
        let mut graph = DotGraph::default();
        if let Tok::Id(id) = &self.peek().tok {
            if is_keyword(id, "strict") {
                graph.strict = true;
                self.advance();
            }
        }
        match &self.peek().tok {
            Tok::Id(id) if is_keyword(id, "digraph") => graph.directed = true,
            Tok::Id(id) if is_keyword(id, "graph") => graph.directed = false,
            _ => {
                self.expected("'graph' or 'digraph'");
                return None;
            }
        }
        self.advance();
        self.directed = graph.directed;
        if let Tok::Id(id) = &self.peek().tok {
            if is_any_keyword(&id.text) && !id.quoted {
                self.expected("graph identifier or '{'");
                return None;
            }
            graph.id = Some(id.clone());
            self.advance();
        }
        if self.peek().tok != Tok::LBrace {
            self.expected("'{'");
            return None;
        }
        self.advance();

        loop {
            if self.diags.saturated() {
                return None;
            }
            match self.peek().tok {
                Tok::RBrace => {
                    self.advance();
                    break;
                }
                Tok::Eof => {
                    self.expected("'}'");
                    return None;
                }
                Tok::Semi => {
                    self.advance();
                    continue;
                }
                _ => {}
            }
            let start = self.pos;
            match self.parse_stmt() {
                Ok(Some(stmt)) => graph.statements.push(stmt),
                Ok(None) => {}
                Err(StmtError) => self.recover(start),
            }
        }

        if self.peek().tok != Tok::Eof {
            self.expected("end of input after closing '}'");
        }
        Some(graph)
    }

    /// Skip to the next statement boundary: a `;` (consumed), a closing
    /// brace at the current nesting level, or a token on a later line.
    fn recover(&mut self, stmt_start: usize) {
        if self.pos == stmt_start {
            // ensure progress on a token that could not start a statement
            if !matches!(self.peek().tok, Tok::RBrace | Tok::Eof) {
                self.advance();
            }
        }
        let line = self.tokens[self.pos.saturating_sub(1)].line;
        let mut depth = 0usize;
        loop {
            let t = self.peek();
            match t.tok {
                Tok::Eof => return,
                Tok::Semi if depth == 0 => {
                    self.advance();
                    return;
                }
                Tok::RBrace if depth == 0 => return,
                Tok::LBrace | Tok::LBracket => depth += 1,
                Tok::RBrace | Tok::RBracket => depth = depth.saturating_sub(1),
                _ if depth == 0 && t.line > line => return,
                _ => {}
            }
            self.advance();
        }
    }

    fn parse_stmt(&mut self) -> Result<Option<DotStmt>, StmtError> {
        let tok = self.peek().tok.clone();
        match tok {
            Tok::LBrace => {
                self.error_here(
                    DiagnosticCode::Unsupported,
                    "anonymous subgraphs are not supported".into(),
                );
                self.skip_block();
                Ok(None)
            }
            Tok::Id(ref id) if is_keyword(id, "subgraph") => {
                self.error_here(DiagnosticCode::Unsupported, "subgraphs are not supported".into());
                self.advance();
                if matches!(self.peek().tok, Tok::Id(_)) {
                    self.advance();
                }
                if self.peek().tok == Tok::LBrace {
                    self.skip_block();
                }
                Ok(None)
            }
            Tok::Id(ref id) if (is_keyword(id, "graph") || is_keyword(id, "node") || is_keyword(id, "edge")) => {
                let target = if is_keyword(id, "graph") {
                    AttrTarget::Graph
                } else if is_keyword(id, "node") {
                    AttrTarget::Node
                } else {
                    AttrTarget::Edge
                };
                self.advance();
                if self.peek().tok != Tok::LBracket {
                    return Err(self.expected("'['"));
                }
                let attrs = self.parse_attr_lists()?;
                Ok(Some(DotStmt::Attr { target, attrs }))
            }
            Tok::Id(ref id) if is_keyword(id, "strict") || is_keyword(id, "digraph") => Err(self.expected("statement")),
            Tok::Id(_) => {
                let first = self.expect_id("identifier")?;
                match self.peek().tok {
                    Tok::Eq => {
                        self.advance();
                        let value = self.expect_id("identifier after '='")?;
                        Ok(Some(DotStmt::Assignment { key: first, value }))
                    }
                    Tok::Arrow | Tok::DashDash => {
                        let mut endpoints = vec![first];
                        while matches!(self.peek().tok, Tok::Arrow | Tok::DashDash) {
                            self.check_edge_op();
                            self.advance();
                            match self.peek().tok {
                                Tok::LBrace => {
                                    let e = self.error_here(
                                        DiagnosticCode::Unsupported,
                                        "subgraph edge endpoints are not supported".into(),
                                    );
                                    self.skip_block();
                                    return Err(e);
                                }
                                Tok::Id(ref id) if is_keyword(id, "subgraph") => {
                                    return Err(self.error_here(
                                        DiagnosticCode::Unsupported,
                                        "subgraph edge endpoints are not supported".into(),
                                    ));
                                }
                                _ => {}
                            }
                            endpoints.push(self.expect_id("edge endpoint")?);
                            self.check_port()?;
                        }
                        let attrs = if self.peek().tok == Tok::LBracket {
                            self.parse_attr_lists()?
                        } else {
                            Attrs::new()
                        };
                        Ok(Some(DotStmt::Edge { endpoints, attrs }))
                    }
                    Tok::Colon => {
                        Err(self.error_here(DiagnosticCode::Unsupported, "port syntax is not supported".into()))
                    }
                    _ => {
                        self.check_port()?;
                        let attrs = if self.peek().tok == Tok::LBracket {
                            self.parse_attr_lists()?
                        } else {
                            Attrs::new()
                        };
                        if matches!(self.peek().tok, Tok::Arrow | Tok::DashDash) {
                            return Err(self.expected("';' or newline before edge operator"));
                        }
                        Ok(Some(DotStmt::Node { id: first, attrs }))
                    }
                }
            }
            Tok::Html => Err(self.error_here(DiagnosticCode::Unsupported, "HTML strings are not supported".into())),
            _ => Err(self.expected("statement")),
        }
    }

    fn check_port(&mut self) -> Result<(), StmtError> {
        if self.peek().tok == Tok::Colon {
            return Err(self.error_here(DiagnosticCode::Unsupported, "port syntax is not supported".into()));
        }
        if self.peek().tok == Tok::Plus {
            return Err(self.error_here(
                DiagnosticCode::Unsupported,
                "string concatenation is not supported".into(),
            ));
        }
        Ok(())
    }

    fn check_edge_op(&mut self) {
        let t = self.peek().clone();
        match (&t.tok, self.directed) {
            (Tok::Arrow, false) => self.diags.error(
                t.line,
                t.col,
                DiagnosticCode::EdgeOpMismatch,
                "'->' used in an undirected graph; use '--'",
            ),
            (Tok::DashDash, true) => self.diags.error(
                t.line,
                t.col,
                DiagnosticCode::EdgeOpMismatch,
                "'--' used in a directed graph; use '->'",
            ),
            _ => {}
        }
    }

    fn skip_block(&mut self) {
        let mut depth = 0usize;
        loop {
            match self.peek().tok {
                Tok::Eof => return,
                Tok::LBrace => depth += 1,
                Tok::RBrace => {
                    depth = depth.saturating_sub(1);
                    if depth == 0 {
                        self.advance();
                        return;
                    }
                }
                _ => {}
            }
            self.advance();
        }
    }

    fn parse_attr_lists(&mut self) -> Result<Attrs, StmtError> {
        let mut attrs = Attrs::new();
        while self.peek().tok == Tok::LBracket {
            self.advance();
            loop {
                match self.peek().tok {
                    Tok::RBracket => {
                        self.advance();
                        break;
                    }
                    Tok::Comma | Tok::Semi => {
                        self.advance();
                        continue;
                    }
                    _ => {}
                }
                let key_tok = self.peek().clone();
                let key = self.expect_id("attribute name or ']'")?;
                if self.peek().tok != Tok::Eq {
                    return Err(self.expected("'='"));
                }
                self.advance();
                let value = self.expect_id("attribute value")?;
                self.check_port()?;
                if attrs.insert(key.text.clone(), value.text).is_some() {
                    self.diags.warning(
                        key_tok.line,
                        key_tok.col,
                        DiagnosticCode::Duplicate,
                        format!("attribute '{}' set more than once; last value wins", key.text),
                    );
                }
            }
        }
        Ok(attrs)
    }
}

/// Parse DOT source. On failure the report carries the first error plus up
/// to nine more found through statement-level recovery.
pub fn parse_dot(text: &str) -> Result<Parsed<DotGraph>, ValidationReport> {
    let mut diags = Collector::default();
    let tokens = Lexer::new(text).tokenize(&mut diags);
    let graph = {
        let mut parser = Parser {
            tokens,
            pos: 0,
            directed: true,
            diags: &mut diags,
        };
        parser.parse_graph()
    };
    let failed = diags.error_count() > 0;
    let report = diags.finish();
    match graph {
        Some(model) if !failed => Ok(Parsed { model, report }),
        _ => Err(report),
    }
}

// ---------------------------------------------------------------------------
// Canonical printer
// ---------------------------------------------------------------------------

fn is_bare_id(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !is_any_keyword(s)
}

fn is_numeral(s: &str) -> bool {
    let digits = s.strip_prefix('-').unwrap_or(s);
    if digits.is_empty() || digits == "." {
        return false;
    }
    let mut dots = 0;
    for c in digits.chars() {
        match c {
            '.' => dots += 1,
            c if c.is_ascii_digit() => {}
            _ => return false,
        }
    }
    dots <= 1
}

fn write_attr_value(out: &mut String, s: &str) {
    if is_bare_id(s) || is_numeral(s) {
        out.push_str(s);
    } else {
        out.push('"');
        out.push_str(s);
        out.push('"');
    }
}

fn write_attrs(out: &mut String, attrs: &Attrs) {
    out.push('[');
    for (i, (k, v)) in attrs.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_attr_value(out, k);
        out.push('=');
        write_attr_value(out, v);
    }
    out.push(']');
}

/// Deterministic pretty-print: one statement per line, two-space indent,
/// attributes sorted by key.
pub fn canonicalize_dot(graph: &DotGraph) -> String {
    let mut out = String::new();
    if graph.strict {
        out.push_str("strict ");
    }
    out.push_str(if graph.directed { "digraph" } else { "graph" });
    if let Some(id) = &graph.id {
        out.push(' ');
        id.write_to(&mut out);
    }
    out.push_str(" {\n");
    let op = graph.edge_op();
    for stmt in &graph.statements {
        out.push_str("  ");
        match stmt {
            DotStmt::Node { id, attrs } => {
                id.write_to(&mut out);
                if !attrs.is_empty() {
                    out.push(' ');
                    write_attrs(&mut out, attrs);
                }
            }
            DotStmt::Edge { endpoints, attrs } => {
                for (i, ep) in endpoints.iter().enumerate() {
                    if i > 0 {
                        let _ = write!(out, " {op} ");
                    }
                    ep.write_to(&mut out);
                }
                if !attrs.is_empty() {
                    out.push(' ');
                    write_attrs(&mut out, attrs);
                }
            }
            DotStmt::Attr { target, attrs } => {
                out.push_str(target.keyword());
                out.push(' ');
                write_attrs(&mut out, attrs);
            }
            DotStmt::Assignment { key, value } => {
                key.write_to(&mut out);
                out.push_str(" = ");
                value.write_to(&mut out);
            }
        }
        out.push_str(";\n");
    }
    out.push_str("}\n");
    out
}
