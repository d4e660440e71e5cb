//! Conversational model generation: LLM gateway, syntax detection,
//! interpretation, persistence and the conversation engine.

mod config_error;
pub mod conversation;
pub mod dialogue;
pub mod gateway;
mod hash;
pub mod interpreter;
pub mod store;
pub mod syntax;

pub use config_error::ConfigInvalid;
pub use conversation::{analyze_response, build_context, Engine, EngineError, PromptOutcome, Stage};
pub use dialogue::{
    ArtifactRef, BlockSummary, Conversation, ConversationMeta, ConversationStatus, ConversationSummary, DialogueEntry,
    Role,
};
pub use gateway::{
    BackendKind, ChatMessage, ChatRole, GatewayError, GenerationResult, LlmConfig, ModelDescriptor, SamplingParams,
};
pub use hash::sha256_hex;
pub use interpreter::{
    Interpreter, InterpreterConfig, OutputFormat, RenderArtifact, RenderError, RendererBindings, RendererKind,
};
pub use store::{Store, StoreError, StoreOptions};
pub use syntax::{Language, Model, ModelDiff, ModelMetrics, ValidationReport};
