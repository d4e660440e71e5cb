//! Size metrics for parsed models and structural diffs between versions.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dot::{Attrs, DotGraph, DotStmt};
use super::extract::Language;
use super::plantuml::{ClassMember, RelationKind, UmlElement, UmlModel};
use super::Model;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UmlMetrics {
    pub class_count: usize,
    pub enum_count: usize,
    pub attribute_count: usize,
    pub operation_count: usize,
    pub relationship_count: usize,
    pub relationship_kind_histogram: BTreeMap<RelationKind, usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DotMetrics {
    /// Explicit and implicit (edge-only) nodes, each counted once.
    pub node_count: usize,
    /// Chains count one edge per consecutive pair.
    pub edge_count: usize,
    pub attribute_key_set: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "language", rename_all = "snake_case")]
pub enum ModelMetrics {
    Plantuml(UmlMetrics),
    Graphviz(DotMetrics),
}

impl ModelMetrics {
    /// The scalar counts, keyed by field name.
    pub fn counts(&self) -> BTreeMap<&'static str, usize> {
        match self {
            ModelMetrics::Plantuml(m) => BTreeMap::from([
                ("class_count", m.class_count),
                ("enum_count", m.enum_count),
                ("attribute_count", m.attribute_count),
                ("operation_count", m.operation_count),
                ("relationship_count", m.relationship_count),
            ]),
            ModelMetrics::Graphviz(m) => BTreeMap::from([("node_count", m.node_count), ("edge_count", m.edge_count)]),
        }
    }

    pub fn as_uml(&self) -> Option<&UmlMetrics> {
        match self {
            ModelMetrics::Plantuml(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_dot(&self) -> Option<&DotMetrics> {
        match self {
            ModelMetrics::Graphviz(m) => Some(m),
            _ => None,
        }
    }
}

pub fn uml_metrics(model: &UmlModel) -> UmlMetrics {
    let mut m = UmlMetrics::default();
    for element in &model.elements {
        match element {
            UmlElement::Class(c) => {
                m.class_count += 1;
                m.attribute_count += c.attributes().count();
                m.operation_count += c.operations().count();
            }
            UmlElement::Enum(_) => m.enum_count += 1,
            UmlElement::Relationship(r) => {
                m.relationship_count += 1;
                *m.relationship_kind_histogram.entry(r.kind()).or_default() += 1;
            }
            UmlElement::Note(_) => {}
        }
    }
    m
}

pub fn dot_metrics(graph: &DotGraph) -> DotMetrics {
    let mut keys = BTreeSet::new();
    for stmt in &graph.statements {
        match stmt {
            DotStmt::Node { attrs, .. } | DotStmt::Edge { attrs, .. } | DotStmt::Attr { attrs, .. } => {
                keys.extend(attrs.keys().cloned());
            }
            DotStmt::Assignment { key, .. } => {
                keys.insert(key.name());
            }
        }
    }
    DotMetrics {
        node_count: graph.node_names().len(),
        edge_count: graph.edge_pairs().len(),
        attribute_key_set: keys,
    }
}

pub fn metrics(model: &Model) -> ModelMetrics {
    match model {
        Model::Uml(m) => ModelMetrics::Plantuml(uml_metrics(m)),
        Model::Dot(g) => ModelMetrics::Graphviz(dot_metrics(g)),
    }
}

// ---------------------------------------------------------------------------
// Diff
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementChanges {
    pub added: Vec<String>,
    pub removed: Vec<String>,
    pub modified: Vec<String>,
}

impl ElementChanges {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.modified.is_empty()
    }

    fn net(&self) -> isize {
        self.added.len() as isize - self.removed.len() as isize
    }
}

/// Keyed differences between two versions of a model. Repeated keys (the
/// same edge twice, say) get a `#n` occurrence suffix so counts stay exact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDiff {
    pub language: Language,
    pub classes: ElementChanges,
    pub enums: ElementChanges,
    /// Keyed `Class.attribute`.
    pub attributes: ElementChanges,
    /// Keyed `Class.operation`.
    pub operations: ElementChanges,
    /// Keyed `source kind target` using direction-normalized ends.
    pub relationships: ElementChanges,
    pub nodes: ElementChanges,
    pub edges: ElementChanges,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cannot diff a {old} model against a {new} model")]
pub struct LanguageMismatch {
    pub old: Language,
    pub new: Language,
}

impl ModelDiff {
    fn empty(language: Language) -> Self {
        ModelDiff {
            language,
            classes: ElementChanges::default(),
            enums: ElementChanges::default(),
            attributes: ElementChanges::default(),
            operations: ElementChanges::default(),
            relationships: ElementChanges::default(),
            nodes: ElementChanges::default(),
            edges: ElementChanges::default(),
        }
    }

    pub fn is_empty(&self) -> bool {
        [
            &self.classes,
            &self.enums,
            &self.attributes,
            &self.operations,
            &self.relationships,
            &self.nodes,
            &self.edges,
        ]
        .iter()
        .all(|c| c.is_empty())
    }

    /// Apply the added/removed counts to `old`'s scalar counts.
    pub fn apply_to_counts(&self, old: &ModelMetrics) -> BTreeMap<&'static str, usize> {
        let mut counts = old.counts();
        let deltas: &[(&str, &ElementChanges)] = match old {
            ModelMetrics::Plantuml(_) => &[
                ("class_count", &self.classes),
                ("enum_count", &self.enums),
                ("attribute_count", &self.attributes),
                ("operation_count", &self.operations),
                ("relationship_count", &self.relationships),
            ],
            ModelMetrics::Graphviz(_) => &[("node_count", &self.nodes), ("edge_count", &self.edges)],
        };
        for (field, changes) in deltas {
            if let Some(v) = counts.get_mut(field) {
                *v = (*v as isize + changes.net()).max(0) as usize;
            }
        }
        counts
    }
}

fn uniquify<V>(items: Vec<(String, V)>) -> Vec<(String, V)> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    items
        .into_iter()
        .map(|(k, v)| {
            let n = seen.entry(k.clone()).or_default();
            *n += 1;
            let key = if *n == 1 { k } else { format!("{k}#{n}") };
            (key, v)
        })
        .collect()
}

fn diff_keyed<V: PartialEq>(old: Vec<(String, V)>, new: Vec<(String, V)>) -> ElementChanges {
    let old = uniquify(old);
    let new = uniquify(new);
    let old_map: HashMap<&str, &V> = old.iter().map(|(k, v)| (k.as_str(), v)).collect();
    let new_map: HashMap<&str, &V> = new.iter().map(|(k, v)| (k.as_str(), v)).collect();
    let mut changes = ElementChanges::default();
    for (k, v) in &new {
        match old_map.get(k.as_str()) {
            None => changes.added.push(k.clone()),
            Some(ov) if *ov != v => changes.modified.push(k.clone()),
            Some(_) => {}
        }
    }
    for (k, _) in &old {
        if !new_map.contains_key(k.as_str()) {
            changes.removed.push(k.clone());
        }
    }
    changes
}

fn member_key(class: &str, m: &ClassMember) -> String {
    format!("{class}.{}", m.name())
}

fn uml_diff(old: &UmlModel, new: &UmlModel) -> ModelDiff {
    let mut diff = ModelDiff::empty(Language::Plantuml);
    let classes = |m: &UmlModel| m.classes().map(|c| (c.name.clone(), c.clone())).collect::<Vec<_>>();
    diff.classes = diff_keyed(classes(old), classes(new));
    let enums = |m: &UmlModel| {
        m.enums()
            .map(|e| (e.name.clone(), e.literals.clone()))
            .collect::<Vec<_>>()
    };
    diff.enums = diff_keyed(enums(old), enums(new));
    let attrs = |m: &UmlModel| {
        m.classes()
            .flat_map(|c| c.attributes().map(move |a| (member_key(&c.name, a), a.clone())))
            .collect::<Vec<_>>()
    };
    diff.attributes = diff_keyed(attrs(old), attrs(new));
    let ops = |m: &UmlModel| {
        m.classes()
            .flat_map(|c| c.operations().map(move |o| (member_key(&c.name, o), o.clone())))
            .collect::<Vec<_>>()
    };
    diff.operations = diff_keyed(ops(old), ops(new));
    let rels = |m: &UmlModel| {
        m.relationships()
            .map(|r| {
                let (a, b) = r.normalized_ends();
                (
                    format!("{a} {} {b}", r.kind()),
                    (r.left_mult.clone(), r.right_mult.clone(), r.label.clone(), r.arrow),
                )
            })
            .collect::<Vec<_>>()
    };
    diff.relationships = diff_keyed(rels(old), rels(new));
    diff
}

fn node_attrs(g: &DotGraph) -> Vec<(String, Attrs)> {
    let mut merged: BTreeMap<String, Attrs> = BTreeMap::new();
    for stmt in &g.statements {
        match stmt {
            DotStmt::Node { id, attrs } => merged.entry(id.name()).or_default().extend(attrs.clone()),
            DotStmt::Edge { endpoints, .. } => {
                for ep in endpoints {
                    merged.entry(ep.name()).or_default();
                }
            }
            _ => {}
        }
    }
    merged.into_iter().collect()
}

fn dot_diff(old: &DotGraph, new: &DotGraph) -> ModelDiff {
    let mut diff = ModelDiff::empty(Language::Graphviz);
    diff.nodes = diff_keyed(node_attrs(old), node_attrs(new));
    let edges = |g: &DotGraph| {
        let op = g.edge_op();
        g.edge_pairs()
            .into_iter()
            .map(|(a, b, attrs)| (format!("{a} {op} {b}"), attrs.clone()))
            .collect::<Vec<_>>()
    };
    diff.edges = diff_keyed(edges(old), edges(new));
    diff
}

/// Keyed set difference between two models of the same language.
pub fn diff_models(old: &Model, new: &Model) -> Result<ModelDiff, LanguageMismatch> {
    match (old, new) {
        (Model::Uml(a), Model::Uml(b)) => Ok(uml_diff(a, b)),
        (Model::Dot(a), Model::Dot(b)) => Ok(dot_diff(a, b)),
        _ => Err(LanguageMismatch {
            old: old.language(),
            new: new.language(),
        }),
    }
}
