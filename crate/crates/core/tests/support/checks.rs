//! Reusable checks over the shipped corpus and the store, returning
//! `Err(reason)` instead of panicking so callers can report them.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use chrono::Utc;
use cmi_core::dialogue::{ArtifactRef, ConversationMeta, DialogueEntry, Role};
use cmi_core::gateway::{LlmConfig, ModelDescriptor};
use cmi_core::interpreter::{InterpreterConfig, OutputFormat};
use cmi_core::syntax::{parse_model, Language, Model, Severity};
use cmi_core::{Store, StoreOptions};

use super::strategies::StoreOp;

pub fn corpus_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/corpus")
}

fn files_in(dir: &str, ext: Option<&str>) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(corpus_root().join(dir))
        .expect("corpus directory")
        .map(|e| e.unwrap().path())
        .filter(|p| ext.is_none_or(|x| p.extension().is_some_and(|e| e == x)))
        .collect();
    files.sort();
    files
}

pub fn language_of(path: &Path) -> Language {
    match path.extension().and_then(|e| e.to_str()) {
        Some("dot" | "gv") => Language::Graphviz,
        _ => Language::Plantuml,
    }
}

pub fn valid_files(language: Language) -> Vec<PathBuf> {
    match language {
        Language::Graphviz => files_in("dot", Some("dot")),
        _ => files_in("plantuml", Some("puml")),
    }
}

pub fn invalid_files() -> Vec<PathBuf> {
    files_in("invalid", None)
}

pub fn parse_file(path: &Path) -> Result<Model, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_model(language_of(path), &text)
        .map(|p| p.model)
        .map_err(|r| format!("{}: {}", path.display(), r.to_string().trim()))
}

/// `parse ∘ canonicalize` is the identity on `model`, and canonical text is a
/// fixpoint.
pub fn roundtrip(model: &Model) -> Result<(), String> {
    let canonical = model.canonicalize();
    let reparsed = parse_model(model.language(), &canonical)
        .map_err(|r| format!("canonical text does not parse:\n{canonical}\n{r}"))?
        .model;
    if &reparsed != model {
        return Err(format!(
            "AST changed after round-trip:\n{canonical}\n{model:#?}\n{reparsed:#?}"
        ));
    }
    let again = reparsed.canonicalize();
    if again != canonical {
        return Err(format!("canonicalize not idempotent:\n{canonical}\n---\n{again}"));
    }
    Ok(())
}

/// Every valid file parses; every invalid file yields a positioned error.
/// Returns (valid plantuml, valid dot, invalid) counts.
pub fn check_corpus() -> Result<(usize, usize, usize), String> {
    let puml = valid_files(Language::Plantuml);
    let dot = valid_files(Language::Graphviz);
    for f in puml.iter().chain(&dot) {
        parse_file(f)?;
    }
    let invalid = invalid_files();
    for f in &invalid {
        let text = std::fs::read_to_string(f).map_err(|e| e.to_string())?;
        match parse_model(language_of(f), &text) {
            Ok(_) => return Err(format!("{} parsed but should be rejected", f.display())),
            Err(report) => {
                let positioned = report
                    .diagnostics
                    .iter()
                    .any(|d| d.severity == Severity::Error && d.line >= 1 && d.column >= 1);
                if !positioned {
                    return Err(format!("{}: no positioned error diagnostic", f.display()));
                }
            }
        }
    }
    Ok((puml.len(), dot.len(), invalid.len()))
}

pub fn check_corpus_roundtrip() -> Result<usize, String> {
    let files: Vec<PathBuf> = valid_files(Language::Plantuml)
        .into_iter()
        .chain(valid_files(Language::Graphviz))
        .collect();
    for f in &files {
        roundtrip(&parse_file(f)?).map_err(|e| format!("{}: {e}", f.display()))?;
    }
    Ok(files.len())
}

fn meta(id: &str) -> ConversationMeta {
    ConversationMeta {
        id: id.to_string(),
        created_at: Utc::now(),
        llm_config: LlmConfig::replay("script.json", ModelDescriptor::gpt4()),
        interpreter_config: InterpreterConfig::fallback(Language::Plantuml),
    }
}

/// Run `ops` against a fresh store, mirroring them in memory, then check
/// that a reopened store reproduces the mirror exactly and has no dangling
/// references.
pub fn run_store_sequence(ops: &[StoreOp]) -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let opts = StoreOptions { sync: false };
    let mut store = Store::open_with(dir.path(), opts).map_err(|e| e.to_string())?;
    let mut mirror: Vec<(ConversationMeta, Vec<DialogueEntry>)> = Vec::new();
    let mut blobs: Vec<(String, Vec<u8>)> = Vec::new();
    let roles = [Role::User, Role::Llm, Role::Interpreter, Role::System];
    for op in ops {
        match op {
            StoreOp::Create => {
                let m = meta(&format!("conv-{}", mirror.len()));
                store.create_conversation(&m).map_err(|e| e.to_string())?;
                mirror.push((m, Vec::new()));
            }
            StoreOp::PutArtifact(bytes) => {
                let hash = store.put_artifact(bytes).map_err(|e| e.to_string())?;
                if !blobs.iter().any(|(h, _)| *h == hash) {
                    blobs.push((hash, bytes.clone()));
                }
            }
            StoreOp::Append { conv, role, text, refs } => {
                if mirror.is_empty() {
                    continue;
                }
                let slot = conv % mirror.len();
                let mut entry = DialogueEntry::new(roles[*role as usize % roles.len()], text.clone());
                if !blobs.is_empty() {
                    entry.artifacts = refs
                        .iter()
                        .enumerate()
                        .map(|(i, r)| ArtifactRef {
                            hash: blobs[r % blobs.len()].0.clone(),
                            format: OutputFormat::Txt,
                            renderer_id: "builtin-fallback".into(),
                            block_index: i,
                        })
                        .collect();
                }
                let id = mirror[slot].0.id.clone();
                let stored = store.append_entry(&id, entry).map_err(|e| e.to_string())?;
                let expected_seq = mirror[slot].1.len() as u64 + 1;
                if stored.seq != expected_seq {
                    return Err(format!("seq {} != {expected_seq}", stored.seq));
                }
                mirror[slot].1.push(stored);
            }
            StoreOp::Reopen => {
                drop(store);
                store = Store::open_with(dir.path(), opts).map_err(|e| e.to_string())?;
            }
        }
    }
    drop(store);
    let store = Store::open_with(dir.path(), opts).map_err(|e| e.to_string())?;

    let mut ids = store.conversation_ids().map_err(|e| e.to_string())?;
    ids.sort();
    let mut expected_ids: Vec<String> = mirror.iter().map(|(m, _)| m.id.clone()).collect();
    expected_ids.sort();
    if ids != expected_ids {
        return Err(format!("conversation ids {ids:?} != {expected_ids:?}"));
    }
    for (m, entries) in &mirror {
        let loaded = store.load_conversation(&m.id).map_err(|e| e.to_string())?;
        if !loaded.warnings.is_empty() {
            return Err(format!("unexpected warnings: {:?}", loaded.warnings));
        }
        let c = loaded.conversation;
        if c.llm_config != m.llm_config || c.interpreter_config != m.interpreter_config || c.created_at != m.created_at
        {
            return Err(format!("{}: configuration snapshot differs", m.id));
        }
        if &c.entries != entries {
            return Err(format!("{}: entries differ after reload", m.id));
        }
        for e in &c.entries {
            for a in &e.artifacts {
                let bytes = store
                    .get_artifact(&a.hash)
                    .map_err(|e| format!("dangling {}: {e}", a.hash))?;
                let original = &blobs.iter().find(|(h, _)| *h == a.hash).unwrap().1;
                if &bytes != original {
                    return Err(format!("artifact {} bytes differ", a.hash));
                }
            }
        }
    }
    let check = store.check_store().map_err(|e| e.to_string())?;
    if !check.is_ok() {
        return Err(format!("store check failed: {check:?}"));
    }
    if check.artifacts != blobs.len() {
        return Err(format!("{} blobs on disk, expected {}", check.artifacts, blobs.len()));
    }
    Ok(())
}
