//! Inputs shared by the benchmarks.

use std::path::{Path, PathBuf};

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/corpus")
}

pub fn corpus_file(rel: &str) -> String {
    let path = corpus_dir().join(rel);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// A DOT graph with `n` nodes in a chain plus skip edges, each with attributes.
pub fn synthetic_dot(n: usize) -> String {
    let mut s = String::from("digraph G {\n  node [shape=box];\n");
    for i in 0..n {
        s.push_str(&format!("  n{i} [label=\"node {i}\", weight={}];\n", i % 7));
    }
    for i in 1..n {
        s.push_str(&format!("  n{} -> n{i} [penwidth={}];\n", i - 1, i % 5 + 1));
        if i >= 3 {
            s.push_str(&format!("  n{} -> n{i};\n", i - 3));
        }
    }
    s.push_str("}\n");
    s
}

/// A PlantUML class diagram with `n` classes, three attributes each, and
/// an association chain.
pub fn synthetic_plantuml(n: usize) -> String {
    let mut s = String::from("@startuml\n");
    for i in 0..n {
        s.push_str(&format!(
            "class C{i} {{\n  +id : Integer\n  -name : String\n  +items : List<C{i}>[]\n  +total() : Decimal\n}}\n"
        ));
    }
    for i in 1..n {
        s.push_str(&format!("C{} \"1\" --> \"0..*\" C{i} : next\n", i - 1));
    }
    s.push_str("@enduml\n");
    s
}

/// LLM-style prose with one fenced and one bare block.
pub fn chatty_response(blocks: usize) -> String {
    let mut s = String::new();
    for i in 0..blocks {
        s.push_str(&format!(
            "Here is version {i} of the model, as requested.\n\n```plantuml\n"
        ));
        s.push_str(&synthetic_plantuml(5));
        s.push_str("```\n\nAnd the graph:\n\n");
        s.push_str(&synthetic_dot(8));
        s.push_str("\nLet me know if you want changes.\n\n");
    }
    s
}
