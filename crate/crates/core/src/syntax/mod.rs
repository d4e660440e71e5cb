//! Detection, validation and analysis of modeling-language syntax.

pub mod diagnostics;
pub mod dot;
pub mod extract;
pub mod metrics;
pub mod plantuml;

use serde::{Deserialize, Serialize};

pub use diagnostics::{Diagnostic, DiagnosticCode, Parsed, Severity, ValidationReport};
pub use dot::{canonicalize_dot, parse_dot, AttrTarget, DotGraph, DotId, DotStmt};
pub use extract::{classify, extract_blocks, BlockOrigin, CodeBlock, Language, Span};
pub use metrics::{diff_models, metrics, ElementChanges, LanguageMismatch, ModelDiff, ModelMetrics};
pub use plantuml::{canonicalize_plantuml, parse_plantuml, ClassDecl, ClassMember, RelationKind, UmlElement, UmlModel};

/// A parsed model in one of the supported languages.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "language", content = "ast", rename_all = "snake_case")]
pub enum Model {
    #[serde(rename = "graphviz")]
    Dot(DotGraph),
    #[serde(rename = "plantuml")]
    Uml(UmlModel),
}

impl Model {
    pub fn language(&self) -> Language {
        match self {
            Model::Dot(_) => Language::Graphviz,
            Model::Uml(_) => Language::Plantuml,
        }
    }

    pub fn canonicalize(&self) -> String {
        match self {
            Model::Dot(g) => canonicalize_dot(g),
            Model::Uml(m) => canonicalize_plantuml(m),
        }
    }
}

/// Parse `text` as `language`. `Language::Unknown` always fails.
pub fn parse_model(language: Language, text: &str) -> Result<Parsed<Model>, ValidationReport> {
    match language {
        Language::Graphviz => parse_dot(text).map(|p| Parsed {
            model: Model::Dot(p.model),
            report: p.report,
        }),
        Language::Plantuml => parse_plantuml(text).map(|p| Parsed {
            model: Model::Uml(p.model),
            report: p.report,
        }),
        Language::Unknown => Err(ValidationReport {
            ok: false,
            diagnostics: vec![Diagnostic {
                severity: Severity::Error,
                line: 1,
                column: 1,
                message: "no supported modeling language detected".into(),
                code: DiagnosticCode::Unsupported,
            }],
        }),
    }
}
