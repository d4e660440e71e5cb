//! Validation diagnostics shared by the DOT and PlantUML parsers.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Maximum number of diagnostics of one severity kept in a report.
pub const DIAGNOSTIC_CAP: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticCode {
    Lex,
    Parse,
    Unsupported,
    EdgeOpMismatch,
    Duplicate,
    DanglingRef,
}

impl DiagnosticCode {
    pub const fn as_str(&self) -> &'static str {
        match self {
            DiagnosticCode::Lex => "lex",
            DiagnosticCode::Parse => "parse",
            DiagnosticCode::Unsupported => "unsupported",
            DiagnosticCode::EdgeOpMismatch => "edge_op_mismatch",
            DiagnosticCode::Duplicate => "duplicate",
            DiagnosticCode::DanglingRef => "dangling_ref",
        }
    }
}

/// A single finding, positioned by 1-based line and column.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub code: DiagnosticCode,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(
            f,
            "{}:{}: {} [{}]: {}",
            self.line,
            self.column,
            sev,
            self.code.as_str(),
            self.message
        )
    }
}

/// Outcome of validating one block. `ok` holds iff there are no errors.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics.iter().filter(|d| d.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics.iter().filter(|d| d.severity == Severity::Warning)
    }

    pub fn error_count(&self) -> usize {
        self.errors().count()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.diagnostics {
            writeln!(f, "{d}")?;
        }
        Ok(())
    }
}

/// Accumulates diagnostics while parsing, enforcing the per-severity cap.
#[derive(Debug, Default)]
pub(crate) struct Collector {
    diagnostics: Vec<Diagnostic>,
    errors: usize,
    warnings: usize,
}

impl Collector {
    pub fn error(&mut self, line: usize, column: usize, code: DiagnosticCode, message: impl Into<String>) {
        if self.errors < DIAGNOSTIC_CAP {
            self.diagnostics.push(Diagnostic {
                severity: Severity::Error,
                line,
                column,
                message: message.into(),
                code,
            });
        }
        self.errors += 1;
    }

    pub fn warning(&mut self, line: usize, column: usize, code: DiagnosticCode, message: impl Into<String>) {
        if self.warnings < DIAGNOSTIC_CAP {
            self.diagnostics.push(Diagnostic {
                severity: Severity::Warning,
                line,
                column,
                message: message.into(),
                code,
            });
        }
        self.warnings += 1;
    }

    pub fn error_count(&self) -> usize {
        self.errors
    }

    pub fn saturated(&self) -> bool {
        self.errors >= DIAGNOSTIC_CAP
    }

    pub fn finish(self) -> ValidationReport {
        ValidationReport {
            ok: self.errors == 0,
            diagnostics: self.diagnostics,
        }
    }
}

/// A successfully parsed model together with any warnings raised on the way.
#[derive(Clone, Debug, PartialEq)]
pub struct Parsed<T> {
    pub model: T,
    pub report: ValidationReport,
}
