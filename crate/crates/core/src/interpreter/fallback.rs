//! Deterministic plain-text rendering: header, sorted element lines, sorted
//! connection lines.

use crate::syntax::{DotGraph, Model, UmlModel};

use super::{OutputFormat, RenderArtifact, BUILTIN_RENDERER_ID};

fn dot_lines(graph: &DotGraph) -> (Vec<String>, Vec<String>) {
    let nodes = graph.node_names().into_iter().map(|n| format!("node {n}")).collect();
    let op = graph.edge_op();
    let edges = graph
        .edge_pairs()
        .into_iter()
        .map(|(a, b, _)| format!("edge {a} {op} {b}"))
        .collect();
    (nodes, edges)
}

fn uml_lines(model: &UmlModel) -> (Vec<String>, Vec<String>) {
    let mut elements: Vec<String> = model
        .classes()
        .map(|c| format!("class {} ({} members)", c.name, c.members.len()))
        .collect();
    elements.extend(
        model
            .enums()
            .map(|e| format!("enum {} ({} literals)", e.name, e.literals.len())),
    );
    let rels = model
        .relationships()
        .map(|r| {
            let (a, b) = r.normalized_ends();
            format!("rel {a} {} {b}", r.kind())
        })
        .collect();
    (elements, rels)
}

pub fn fallback_text(model: &Model) -> String {
    let (mut elements, mut links) = match model {
        Model::Dot(g) => dot_lines(g),
        Model::Uml(m) => uml_lines(m),
    };
    elements.sort();
    links.sort();
    let mut out = format!("# {} fallback rendering\n", model.language());
    for line in elements.iter().chain(&links) {
        out.push_str(line);
        out.push('\n');
    }
    out
}

pub fn render_fallback(model: &Model) -> RenderArtifact {
    RenderArtifact::new(
        fallback_text(model).into_bytes(),
        OutputFormat::Txt,
        BUILTIN_RENDERER_ID,
        0,
        String::new(),
    )
}
