//! Proptest strategies for small, valid models of both languages.
//! Shared by the core property tests and the acceptance suite.

#![allow(dead_code)]

use std::collections::BTreeMap;

use cmi_core::syntax::dot::{AttrTarget, DotGraph, DotId, DotStmt};
use cmi_core::syntax::plantuml::{
    Arrow, ClassDecl, ClassMember, EnumDecl, Note, NoteAnchor, NotePosition, Relationship, UmlElement, UmlModel,
    Visibility,
};
use proptest::prelude::*;
use proptest::sample::select;

const DOT_KEYWORDS: [&str; 6] = ["strict", "graph", "digraph", "node", "edge", "subgraph"];

fn bare_ident() -> impl Strategy<Value = String> {
    "[A-Za-z_][A-Za-z0-9_]{0,6}".prop_filter("keyword", |s| !DOT_KEYWORDS.iter().any(|k| s.eq_ignore_ascii_case(k)))
}

fn numeral() -> impl Strategy<Value = String> {
    prop_oneof!["-?[0-9]{1,4}", "-?[0-9]{0,3}\\.[0-9]{1,3}"]
}

/// Quoted-string content: no quote or backslash, so no escapes needed.
fn quoted_text() -> impl Strategy<Value = String> {
    "[A-Za-z0-9 _.,:;=<>#/{}\\[\\]()*+-]{0,12}"
}

pub fn dot_id() -> impl Strategy<Value = DotId> {
    prop_oneof![
        4 => bare_ident().prop_map(DotId::bare),
        1 => numeral().prop_map(DotId::bare),
        2 => quoted_text().prop_map(DotId::quoted),
    ]
}

fn attr_value() -> impl Strategy<Value = String> {
    prop_oneof![bare_ident(), numeral(), quoted_text()]
}

fn attrs(max: usize) -> impl Strategy<Value = BTreeMap<String, String>> {
    proptest::collection::btree_map(
        prop_oneof![3 => bare_ident(), 1 => quoted_text()],
        attr_value(),
        0..=max,
    )
}

fn dot_stmt() -> impl Strategy<Value = DotStmt> {
    prop_oneof![
        3 => (dot_id(), attrs(3)).prop_map(|(id, attrs)| DotStmt::Node { id, attrs }),
        4 => (proptest::collection::vec(dot_id(), 2..5), attrs(3))
            .prop_map(|(endpoints, attrs)| DotStmt::Edge { endpoints, attrs }),
        1 => (select(vec![AttrTarget::Graph, AttrTarget::Node, AttrTarget::Edge]), attrs(3))
            .prop_map(|(target, attrs)| DotStmt::Attr { target, attrs }),
        1 => (dot_id(), dot_id()).prop_map(|(key, value)| DotStmt::Assignment { key, value }),
    ]
}

pub fn dot_graph() -> impl Strategy<Value = DotGraph> {
    (
        any::<bool>(),
        any::<bool>(),
        proptest::option::of(dot_id()),
        proptest::collection::vec(dot_stmt(), 0..10),
    )
        .prop_map(|(strict, directed, id, statements)| DotGraph {
            strict,
            directed,
            id,
            statements,
        })
}

// ---- PlantUML ----

fn type_name() -> impl Strategy<Value = String> {
    prop_oneof![
        select(vec!["String", "Integer", "Date", "Decimal", "Boolean"]).prop_map(str::to_string),
        "T[A-Za-z0-9]{0,5}",
        "List<T[a-z]{1,4}>",
    ]
}

fn visibility() -> impl Strategy<Value = Visibility> {
    select(vec![
        Visibility::Public,
        Visibility::Private,
        Visibility::Protected,
        Visibility::Package,
        Visibility::None,
    ])
}

fn member() -> impl Strategy<Value = ClassMember> {
    let attribute = (
        visibility(),
        "m[a-zA-Z0-9_]{0,6}",
        proptest::option::of(type_name()),
        any::<bool>(),
    )
        .prop_map(|(visibility, name, type_expr, list)| ClassMember::Attribute {
            visibility,
            is_list: list && type_expr.is_some(),
            name,
            type_expr,
        });
    let param = ("p[a-z0-9]{0,4}", type_name()).prop_map(|(n, t)| format!("{n}: {t}"));
    let operation = (
        visibility(),
        "op[a-zA-Z0-9]{0,5}",
        proptest::collection::vec(param, 0..3),
        proptest::option::of(type_name()),
    )
        .prop_map(|(visibility, name, params, return_type)| ClassMember::Operation {
            visibility,
            name,
            params,
            return_type,
        });
    prop_oneof![2 => attribute, 1 => operation]
}

fn multiplicity() -> impl Strategy<Value = Option<String>> {
    proptest::option::of(select(vec!["1", "0..1", "0..*", "1..*", "*", "2..5"]).prop_map(str::to_string))
}

fn label() -> impl Strategy<Value = Option<String>> {
    proptest::option::of("[a-z][a-z0-9 ]{0,8}[a-z0-9]")
}

#[derive(Clone, Debug)]
enum Pending {
    Class(bool, Vec<ClassMember>),
    Enum(Vec<String>),
    Rel(usize, usize, Arrow, Option<String>, Option<String>, Option<String>),
    Note(String, Option<(NotePosition, usize)>, Option<String>),
}

fn pending() -> impl Strategy<Value = Pending> {
    let arrow = select(Arrow::ALL.to_vec());
    let position = select(vec![
        NotePosition::Left,
        NotePosition::Right,
        NotePosition::Top,
        NotePosition::Bottom,
    ]);
    prop_oneof![
        4 => (any::<bool>(), proptest::collection::vec(member(), 0..4)).prop_map(|(a, m)| Pending::Class(a, m)),
        1 => proptest::collection::vec("[A-Z][A-Z0-9_]{0,5}", 0..4).prop_map(Pending::Enum),
        4 => (any::<usize>(), any::<usize>(), arrow, multiplicity(), multiplicity(), label())
            .prop_map(|(l, r, a, lm, rm, lb)| Pending::Rel(l, r, a, lm, rm, lb)),
        1 => ("[A-Za-z][A-Za-z0-9 ,.]{0,15}[A-Za-z0-9.]", proptest::option::of((position, any::<usize>())), proptest::option::of("N[0-9]{1,2}"))
            .prop_map(|(t, a, al)| Pending::Note(t, a, al)),
    ]
}

/// Models whose relationships and anchored notes only reference classes
/// declared earlier, so parsing never has to create implicit classes.
pub fn uml_model() -> impl Strategy<Value = UmlModel> {
    proptest::collection::vec(pending(), 0..12).prop_map(|items| {
        let mut elements = Vec::new();
        let mut classes: Vec<String> = Vec::new();
        let mut enums = 0;
        for item in items {
            match item {
                Pending::Class(is_abstract, members) => {
                    let name = format!("C{}", classes.len());
                    classes.push(name.clone());
                    elements.push(UmlElement::Class(ClassDecl {
                        name,
                        is_abstract,
                        members,
                    }));
                }
                Pending::Enum(literals) => {
                    enums += 1;
                    elements.push(UmlElement::Enum(EnumDecl {
                        name: format!("E{enums}"),
                        literals,
                    }));
                }
                Pending::Rel(l, r, arrow, left_mult, right_mult, label) if !classes.is_empty() => {
                    elements.push(UmlElement::Relationship(Relationship {
                        left: classes[l % classes.len()].clone(),
                        right: classes[r % classes.len()].clone(),
                        arrow,
                        left_mult,
                        right_mult,
                        label,
                    }));
                }
                Pending::Note(text, anchor, alias) => {
                    let anchor = match anchor {
                        Some((position, i)) if !classes.is_empty() => Some(NoteAnchor {
                            position,
                            target: classes[i % classes.len()].clone(),
                        }),
                        _ => None,
                    };
                    elements.push(UmlElement::Note(Note {
                        text: text.trim().to_string(),
                        alias: if anchor.is_some() { None } else { alias },
                        anchor,
                    }));
                }
                Pending::Rel(..) => {}
            }
        }
        UmlModel { elements }
    })
}

// ---- Store operation sequences ----

#[derive(Clone, Debug)]
pub enum StoreOp {
    Create,
    PutArtifact(Vec<u8>),
    /// Append to conversation `conv % n` an entry with `text`, referencing
    /// the artifacts picked by `refs % m`.
    Append {
        conv: usize,
        role: u8,
        text: String,
        refs: Vec<usize>,
    },
    Reopen,
}

pub fn store_op() -> impl Strategy<Value = StoreOp> {
    prop_oneof![
        1 => Just(StoreOp::Create),
        2 => proptest::collection::vec(any::<u8>(), 0..64).prop_map(StoreOp::PutArtifact),
        5 => (any::<usize>(), 0u8..4, "\\PC{0,40}", proptest::collection::vec(any::<usize>(), 0..3))
            .prop_map(|(conv, role, text, refs)| StoreOp::Append { conv, role, text, refs }),
        1 => Just(StoreOp::Reopen),
    ]
}

pub fn store_ops() -> impl Strategy<Value = Vec<StoreOp>> {
    proptest::collection::vec(store_op(), 1..16)
}
