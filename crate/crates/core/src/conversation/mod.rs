//! The conversation manager: lifecycle of conversations and the
//! prompt → generate → detect → validate → render → persist pipeline.

mod context;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::{Arc, Mutex};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config_error::ConfigInvalid;
use crate::dialogue::{
    ArtifactRef, BlockSummary, Change, ConfigChange, Conversation, ConversationMeta, ConversationStatus,
    ConversationSummary, DialogueEntry, Role,
};
use crate::gateway::{encode_chat_request, Backend, BackendKind, GatewayError, LlmConfig};
use crate::interpreter::{
    render_fallback, Interpreter, InterpreterConfig, RenderArtifact, RenderError, RendererKind, BUILTIN_RENDERER_ID,
    GRAPHVIZ_PROCESS_ID, PLANTUML_HTTP_ID, PLANTUML_PROCESS_ID,
};
use crate::store::{Store, StoreError};
use crate::syntax::{extract_blocks, metrics, parse_model, CodeBlock, Language, Model, ValidationReport};

pub use context::build_context;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    ConfigInvalid(#[from] ConfigInvalid),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("unknown conversation '{0}'")]
    UnknownConversation(String),
    #[error("conversation '{0}' is busy")]
    Busy(String),
    #[error("generation failed: {0}")]
    GenerationFailed(#[source] GatewayError),
    #[error("prompt needs about {estimate} tokens but only {budget} are available")]
    PromptTooLarge { estimate: u64, budget: u64 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Store(StoreError),
}

impl From<StoreError> for EngineError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownConversation(id) => EngineError::UnknownConversation(id),
            other => EngineError::Store(other),
        }
    }
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::ConfigInvalid(_) => "config_invalid",
            EngineError::BackendUnavailable(_) => "backend_unavailable",
            EngineError::UnknownConversation(_) => "unknown_conversation",
            EngineError::Busy(_) => "busy",
            EngineError::GenerationFailed(_) => "generation_failed",
            EngineError::PromptTooLarge { .. } => "prompt_too_large",
            EngineError::InvalidRequest(_) => "invalid_request",
            EngineError::Store(e) => e.code(),
        }
    }
}

/// Pipeline stages reported while a prompt is processed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Received,
    Generated,
    Validated,
    Rendered,
    Done,
}

impl Stage {
    pub const fn as_str(&self) -> &'static str {
        match self {
            Stage::Received => "received",
            Stage::Generated => "generated",
            Stage::Validated => "validated",
            Stage::Rendered => "rendered",
            Stage::Done => "done",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptOutcome {
    pub llm_entry: DialogueEntry,
    pub interpreter_entries: Vec<DialogueEntry>,
    pub warnings: Vec<String>,
}

/// A block found in a response together with its parsed model, if valid.
#[derive(Clone, Debug)]
pub struct AnalyzedBlock {
    pub block: CodeBlock,
    pub summary: BlockSummary,
    pub model: Option<Model>,
}

/// Extract, classify, validate and measure every block of a response.
pub fn analyze_response(text: &str) -> Vec<AnalyzedBlock> {
    extract_blocks(text)
        .into_iter()
        .enumerate()
        .map(|(index, block)| {
            let mut summary = BlockSummary {
                index,
                language: block.language,
                origin: block.origin,
                span: block.span,
                tag: block.tag.clone(),
                valid: false,
                diagnostics: Vec::new(),
                metrics: None,
                warning: block.warning.clone(),
            };
            let mut model = None;
            if block.language.is_supported() {
                match parse_model(block.language, &block.raw) {
                    Ok(parsed) => {
                        summary.valid = true;
                        summary.diagnostics = parsed.report.diagnostics;
                        summary.metrics = Some(metrics(&parsed.model));
                        model = Some(parsed.model);
                    }
                    Err(report) => summary.diagnostics = report.diagnostics,
                }
            }
            AnalyzedBlock { block, summary, model }
        })
        .collect()
}

const IDLE: u8 = 0;
const GENERATING: u8 = 1;
const INTERPRETING: u8 = 2;

#[derive(Debug)]
struct SessionState {
    conversation: Conversation,
    backend: Option<Backend>,
}

#[derive(Debug)]
struct Session {
    state: Mutex<SessionState>,
    status: AtomicU8,
}

impl Session {
    fn status(&self) -> ConversationStatus {
        match self.status.load(Ordering::SeqCst) {
            GENERATING => ConversationStatus::Generating,
            INTERPRETING => ConversationStatus::Interpreting,
            _ => ConversationStatus::Idle,
        }
    }
}

/// Resets the session status to idle however the pipeline exits.
struct IdleOnDrop<'a>(&'a AtomicU8);

impl Drop for IdleOnDrop<'_> {
    fn drop(&mut self) {
        self.0.store(IDLE, Ordering::SeqCst);
    }
}

fn connect(config: &LlmConfig) -> Result<Backend, EngineError> {
    Backend::connect(config).map_err(|e| match e {
        GatewayError::ConfigInvalid(c) => EngineError::ConfigInvalid(c),
        other => EngineError::BackendUnavailable(other.to_string()),
    })
}

/// Number of generations the current backend has already served: llm
/// entries since the backend or its script last changed.
fn replay_step(conversation: &Conversation) -> usize {
    let mut step = 0;
    for entry in &conversation.entries {
        match entry.role {
            Role::Llm => step += 1,
            Role::ConfigChange => {
                if let Some(c) = entry.config_change.as_ref().and_then(|c| c.llm.as_ref()) {
                    if c.old.backend != c.new.backend || c.old.script_path != c.new.script_path {
                        step = 0;
                    }
                }
            }
            _ => {}
        }
    }
    step
}

fn diagnostics_text(report: &ValidationReport) -> String {
    report.to_string().trim_end().to_string()
}

#[derive(Debug)]
pub struct Engine {
    store: Arc<Store>,
    interpreter: Interpreter,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
}

impl Engine {
    pub fn new(store: Arc<Store>, interpreter: Interpreter) -> Self {
        Engine {
            store,
            interpreter,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn interpreter(&self) -> &Interpreter {
        &self.interpreter
    }

    fn check_interpreter(&self, config: &InterpreterConfig) -> Result<(), EngineError> {
        config.validate()?;
        if config.strict && config.renderer != RendererKind::BuiltinFallback {
            let wanted = match (config.renderer, config.language) {
                (RendererKind::HttpRenderer, _) => PLANTUML_HTTP_ID,
                (_, Language::Graphviz) => GRAPHVIZ_PROCESS_ID,
                _ => PLANTUML_PROCESS_ID,
            };
            let available = self
                .interpreter
                .probe_renderers()
                .iter()
                .any(|p| p.renderer_id == wanted && p.language == config.language && p.available);
            if !available {
                return Err(EngineError::BackendUnavailable(format!(
                    "renderer {wanted} is not available and strict mode is set"
                )));
            }
        }
        Ok(())
    }

    pub fn create_conversation(
        &self,
        llm_config: LlmConfig,
        interpreter_config: InterpreterConfig,
    ) -> Result<Conversation, EngineError> {
        llm_config.validate_fields()?;
        self.check_interpreter(&interpreter_config)?;
        let backend = connect(&llm_config)?;
        let meta = ConversationMeta {
            id: uuid::Uuid::new_v4().to_string(),
            created_at: Utc::now(),
            llm_config,
            interpreter_config,
        };
        self.store.create_conversation(&meta)?;
        let conversation = Conversation::from_meta(meta);
        let session = Arc::new(Session {
            state: Mutex::new(SessionState {
                conversation: conversation.clone(),
                backend: Some(backend),
            }),
            status: AtomicU8::new(IDLE),
        });
        self.sessions
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(conversation.id.clone(), session);
        Ok(conversation)
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, EngineError> {
        let mut sessions = self.sessions.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(s) = sessions.get(id) {
            return Ok(s.clone());
        }
        let loaded = self.store.load_conversation(id)?;
        for w in &loaded.warnings {
            tracing::warn!("{w}");
        }
        let session = Arc::new(Session {
            state: Mutex::new(SessionState {
                conversation: loaded.conversation,
                backend: None,
            }),
            status: AtomicU8::new(IDLE),
        });
        sessions.insert(id.to_string(), session.clone());
        Ok(session)
    }

    /// The persisted dialogue plus the live status.
    pub fn get_conversation(&self, id: &str) -> Result<Conversation, EngineError> {
        let mut conversation = self.store.load_conversation(id)?.conversation;
        let sessions = self.sessions.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(s) = sessions.get(id) {
            conversation.status = s.status();
        }
        Ok(conversation)
    }

    pub fn list_conversations(&self) -> Result<Vec<ConversationSummary>, EngineError> {
        Ok(self.store.list_conversations()?)
    }

    pub fn submit_prompt(&self, id: &str, text: &str) -> Result<PromptOutcome, EngineError> {
        self.submit_prompt_with_progress(id, text, &mut |_| {})
    }

    pub fn submit_prompt_with_progress(
        &self,
        id: &str,
        text: &str,
        progress: &mut dyn FnMut(Stage),
    ) -> Result<PromptOutcome, EngineError> {
        if text.trim().is_empty() {
            return Err(EngineError::InvalidRequest("prompt text must not be empty".into()));
        }
        let session = self.session(id)?;
        let mut state = session
            .state
            .try_lock()
            .map_err(|_| EngineError::Busy(id.to_string()))?;
        session.status.store(GENERATING, Ordering::SeqCst);
        let _idle = IdleOnDrop(&session.status);
        progress(Stage::Received);

        let state = &mut *state;
        let llm_config = state.conversation.llm_config.clone();
        let interp_config = state.conversation.interpreter_config.clone();
        let messages = context::build_context_for(&llm_config, &state.conversation, text)?;
        if state.backend.is_none() {
            state.backend = Some(connect(&llm_config)?);
        }
        let step = replay_step(&state.conversation);

        let user = self.store.append_entry(id, DialogueEntry::new(Role::User, text))?;
        state.conversation.push(user);

        let mut warnings = Vec::new();
        if llm_config.backend == BackendKind::RemoteChatApi {
            warnings.extend(encode_chat_request(&llm_config, &messages).warnings);
        }
        let generated = state
            .backend
            .as_ref()
            .expect("connected above")
            .generate(&messages, step)
            .map_err(EngineError::GenerationFailed)?;

        let analyzed = analyze_response(&generated.text);
        let mut llm_entry = DialogueEntry::new(Role::Llm, generated.text);
        llm_entry.detected_blocks = analyzed.iter().map(|a| a.summary.clone()).collect();
        let llm_entry = self.store.append_entry(id, llm_entry)?;
        state.conversation.push(llm_entry.clone());
        progress(Stage::Generated);

        session.status.store(INTERPRETING, Ordering::SeqCst);
        for a in &analyzed {
            if let Some(w) = &a.summary.warning {
                warnings.push(format!("block {}: {w}", a.summary.index));
            }
        }
        progress(Stage::Validated);

        let mut interpreter_entries = Vec::new();
        let mut failures = 0usize;
        for a in analyzed.iter().filter(|a| a.block.language.is_supported()) {
            let idx = a.summary.index;
            let entry = if a.block.language != interp_config.language {
                failures += 1;
                let mut e = DialogueEntry::new(
                    Role::Interpreter,
                    format!(
                        "block {idx}: {} syntax detected, but the interpreter is configured for {}",
                        a.block.language, interp_config.language
                    ),
                );
                e.detected_blocks.push(a.summary.clone());
                e
            } else if let Some(model) = &a.model {
                match self.render_block(&interp_config, &a.block.raw, model, &mut warnings) {
                    Ok(artifact) => {
                        let hash = self.store.put_artifact(&artifact.bytes)?;
                        let mut e = DialogueEntry::new(Role::Interpreter, artifact.diagnostics.clone());
                        e.artifacts.push(ArtifactRef {
                            hash,
                            format: artifact.format,
                            renderer_id: artifact.renderer_id,
                            block_index: idx,
                        });
                        e.detected_blocks.push(a.summary.clone());
                        e
                    }
                    Err(err) => {
                        failures += 1;
                        let mut e = DialogueEntry::new(Role::Interpreter, format!("block {idx}: {err}"));
                        e.detected_blocks.push(a.summary.clone());
                        e
                    }
                }
            } else {
                failures += 1;
                let report = ValidationReport {
                    ok: false,
                    diagnostics: a.summary.diagnostics.clone(),
                };
                let mut e = DialogueEntry::new(
                    Role::Interpreter,
                    format!(
                        "block {idx}: invalid {} syntax\n{}",
                        a.block.language,
                        diagnostics_text(&report)
                    ),
                );
                e.detected_blocks.push(a.summary.clone());
                e
            };
            let entry = self.store.append_entry(id, entry)?;
            state.conversation.push(entry.clone());
            interpreter_entries.push(entry);
        }
        if failures > 0 && failures < interpreter_entries.len() {
            warnings.push(format!(
                "{failures} of {} detected blocks could not be rendered",
                interpreter_entries.len()
            ));
        } else if failures > 0 {
            warnings.push("no detected block could be rendered".into());
        }
        progress(Stage::Rendered);
        progress(Stage::Done);
        Ok(PromptOutcome {
            llm_entry,
            interpreter_entries,
            warnings,
        })
    }

    fn render_block(
        &self,
        config: &InterpreterConfig,
        source: &str,
        model: &Model,
        warnings: &mut Vec<String>,
    ) -> Result<RenderArtifact, RenderError> {
        match self.interpreter.render(config, source) {
            Err(e @ (RenderError::RendererUnavailable(_) | RenderError::UnsupportedFormat { .. }))
                if !config.strict =>
            {
                warnings.push(format!("{e}; used {BUILTIN_RENDERER_ID} instead"));
                Ok(render_fallback(model))
            }
            other => other,
        }
    }

    /// Apply new configurations. Identical configs append nothing.
    pub fn reconfigure(
        &self,
        id: &str,
        new_llm: Option<LlmConfig>,
        new_interpreter: Option<InterpreterConfig>,
    ) -> Result<Conversation, EngineError> {
        let session = self.session(id)?;
        let mut state = session
            .state
            .try_lock()
            .map_err(|_| EngineError::Busy(id.to_string()))?;
        let current = &state.conversation;
        let llm = new_llm.filter(|c| *c != current.llm_config);
        let interp = new_interpreter.filter(|c| *c != current.interpreter_config);
        if llm.is_none() && interp.is_none() {
            let mut c = state.conversation.clone();
            c.status = session.status();
            return Ok(c);
        }
        let backend = match &llm {
            Some(c) => {
                c.validate_fields()?;
                Some(connect(c)?)
            }
            None => None,
        };
        if let Some(c) = &interp {
            self.check_interpreter(c)?;
        }
        let change = ConfigChange {
            llm: llm.map(|new| Change {
                old: current.llm_config.clone(),
                new,
            }),
            interpreter: interp.map(|new| Change {
                old: current.interpreter_config.clone(),
                new,
            }),
        };
        let mut parts = Vec::new();
        if let Some(c) = &change.llm {
            parts.push(describe_llm_change(&c.old, &c.new));
        }
        if let Some(c) = &change.interpreter {
            parts.push(describe_interpreter_change(&c.old, &c.new));
        }
        let mut entry = DialogueEntry::new(Role::ConfigChange, parts.join("; "));
        entry.config_change = Some(change);
        let entry = self.store.append_entry(id, entry)?;
        state.conversation.push(entry);
        if backend.is_some() {
            state.backend = backend;
        }
        Ok(state.conversation.clone())
    }
}

fn describe_llm_change(old: &LlmConfig, new: &LlmConfig) -> String {
    let mut diffs = Vec::new();
    let mut field = |name: &str, a: String, b: String| {
        if a != b {
            diffs.push(format!("{name} {a} -> {b}"));
        }
    };
    field("backend", format!("{:?}", old.backend), format!("{:?}", new.backend));
    field("model", old.model.name.clone(), new.model.name.clone());
    field(
        "temperature",
        old.sampling.temperature.to_string(),
        new.sampling.temperature.to_string(),
    );
    field("top_p", old.sampling.top_p.to_string(), new.sampling.top_p.to_string());
    field("top_k", old.sampling.top_k.to_string(), new.sampling.top_k.to_string());
    field(
        "max_response_tokens",
        old.sampling.max_response_tokens.to_string(),
        new.sampling.max_response_tokens.to_string(),
    );
    if diffs.is_empty() {
        "llm config changed".into()
    } else {
        format!("llm: {}", diffs.join(", "))
    }
}

fn describe_interpreter_change(old: &InterpreterConfig, new: &InterpreterConfig) -> String {
    let mut diffs = Vec::new();
    if old.language != new.language {
        diffs.push(format!("language {} -> {}", old.language, new.language));
    }
    if old.output_format != new.output_format {
        diffs.push(format!("format {} -> {}", old.output_format, new.output_format));
    }
    if old.renderer != new.renderer {
        diffs.push(format!("renderer {:?} -> {:?}", old.renderer, new.renderer));
    }
    if diffs.is_empty() {
        "interpreter config changed".into()
    } else {
        format!("interpreter: {}", diffs.join(", "))
    }
}
