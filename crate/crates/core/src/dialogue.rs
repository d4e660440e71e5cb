//! Conversation and dialogue-entry types shared by the store and the engine.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::gateway::LlmConfig;
use crate::interpreter::{InterpreterConfig, OutputFormat};
use crate::syntax::{BlockOrigin, Diagnostic, Language, ModelMetrics, Span};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Llm,
    Interpreter,
    System,
    ConfigChange,
}

impl Role {
    pub const fn as_str(&self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Llm => "llm",
            Role::Interpreter => "interpreter",
            Role::System => "system",
            Role::ConfigChange => "config_change",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConversationStatus {
    #[default]
    Idle,
    Generating,
    Interpreting,
}

/// Reference to a stored artifact blob.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub hash: String,
    pub format: OutputFormat,
    pub renderer_id: String,
    /// Index of the rendered block within the LLM response.
    pub block_index: usize,
}

/// What was found and concluded about one code block of a response.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub index: usize,
    pub language: Language,
    pub origin: BlockOrigin,
    pub span: Span,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<Diagnostic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<ModelMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Change<T> {
    pub old: T,
    pub new: T,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigChange {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm: Option<Change<LlmConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interpreter: Option<Change<InterpreterConfig>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogueEntry {
    /// Position in the conversation log; 0 is the creation record, so the
    /// first dialogue entry has seq 1.
    pub seq: u64,
    pub role: Role,
    pub text: String,
    #[serde(default)]
    pub artifacts: Vec<ArtifactRef>,
    #[serde(default)]
    pub detected_blocks: Vec<BlockSummary>,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_change: Option<ConfigChange>,
}

impl DialogueEntry {
    /// A new entry; `seq` is assigned by the store on append.
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        DialogueEntry {
            seq: 0,
            role,
            text: text.into(),
            artifacts: Vec::new(),
            detected_blocks: Vec::new(),
            timestamp: Utc::now(),
            config_change: None,
        }
    }
}

/// The immutable creation record of a conversation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversationMeta {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub llm_config: LlmConfig,
    pub interpreter_config: InterpreterConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub created_at: DateTime<Utc>,
    /// Configuration in effect: the creation snapshot with every
    /// config-change entry applied.
    pub llm_config: LlmConfig,
    pub interpreter_config: InterpreterConfig,
    pub entries: Vec<DialogueEntry>,
    #[serde(default)]
    pub status: ConversationStatus,
}

impl Conversation {
    pub fn from_meta(meta: ConversationMeta) -> Self {
        Conversation {
            id: meta.id,
            created_at: meta.created_at,
            llm_config: meta.llm_config,
            interpreter_config: meta.interpreter_config,
            entries: Vec::new(),
            status: ConversationStatus::Idle,
        }
    }

    /// Add an already-persisted entry, applying any config change it carries.
    pub fn push(&mut self, entry: DialogueEntry) {
        if let Some(change) = &entry.config_change {
            if let Some(c) = &change.llm {
                self.llm_config = c.new.clone();
            }
            if let Some(c) = &change.interpreter {
                self.interpreter_config = c.new.clone();
            }
        }
        self.entries.push(entry);
    }

    pub fn next_seq(&self) -> u64 {
        self.entries.last().map_or(1, |e| e.seq + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversationSummary {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub entry_count: u64,
    pub llm_config: LlmConfig,
    pub interpreter_config: InterpreterConfig,
}
