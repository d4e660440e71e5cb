//! LLM selection, parametrization and inference: remote chat APIs, a local
//! runtime driven as an external process, and a scripted replay backend.

mod local;
mod remote;
pub mod replay;
pub mod tokens;
pub mod wire;

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config_error::ConfigInvalid;

pub use replay::{load_replay_script, ReplayError, ReplayScript};
pub use tokens::{estimate_messages, estimate_tokens, MESSAGE_OVERHEAD_TOKENS};
pub use wire::{encode_chat_request, EncodedRequest};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    /// 0 means greedy decoding.
    pub temperature: f64,
    pub top_p: f64,
    /// 0 disables top-k filtering.
    pub top_k: u32,
    pub max_response_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 0.7,
            top_p: 0.9,
            top_k: 40,
            max_response_tokens: 1024,
            seed: None,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), ConfigInvalid> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(ConfigInvalid::new("temperature", "must be a finite number >= 0"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ConfigInvalid::new("top_p", "must be in (0, 1]"));
        }
        if self.max_response_tokens == 0 {
            return Err(ConfigInvalid::new("max_response_tokens", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Gpt,
    Llama,
    Other,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub name: String,
    pub context_window: u32,
    /// Billions of parameters, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_count: Option<u32>,
    pub family: ModelFamily,
}

impl ModelDescriptor {
    pub fn llama2(param_count: u32) -> Self {
        ModelDescriptor {
            name: format!("llama-2-{param_count}b-chat"),
            context_window: 4096,
            param_count: Some(param_count),
            family: ModelFamily::Llama,
        }
    }

    pub fn gpt4() -> Self {
        ModelDescriptor {
            name: "gpt-4".into(),
            context_window: 8192,
            param_count: None,
            family: ModelFamily::Gpt,
        }
    }

    pub fn gpt4_32k() -> Self {
        ModelDescriptor {
            name: "gpt-4-32k".into(),
            context_window: 32768,
            param_count: None,
            family: ModelFamily::Gpt,
        }
    }

    /// Descriptor for a model name, using known context sizes where the
    /// name identifies a known model and 4096 otherwise.
    pub fn for_name(name: &str) -> Self {
        let lower = name.to_ascii_lowercase();
        let (context_window, family) = if lower.starts_with("gpt-4") && lower.contains("32k") {
            (32768, ModelFamily::Gpt)
        } else if lower.starts_with("gpt-4") {
            (8192, ModelFamily::Gpt)
        } else if lower.starts_with("gpt") {
            (4096, ModelFamily::Gpt)
        } else if lower.contains("llama") {
            (4096, ModelFamily::Llama)
        } else {
            (4096, ModelFamily::Other)
        };
        let param_count = lower
            .split(['-', '_', ':'])
            .find_map(|part| part.strip_suffix('b').and_then(|n| n.parse().ok()));
        ModelDescriptor {
            name: name.to_string(),
            context_window,
            param_count,
            family,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    RemoteChatApi,
    RemoteReplicateStyle,
    LocalProcess,
    Replay,
}

impl BackendKind {
    pub fn is_remote(&self) -> bool {
        matches!(self, BackendKind::RemoteChatApi | BackendKind::RemoteReplicateStyle)
    }
}

pub const DEFAULT_LOCAL_COMMAND: &str =
    "llama-cli -m {model_path} -f {prompt_file} --temp {temperature} --top-p {top_p} --top-k {top_k} -n {n_predict}";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub backend: BackendKind,
    pub model: ModelDescriptor,
    #[serde(default)]
    pub sampling: SamplingParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    /// Name of the environment variable holding the API secret.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_model_path: Option<PathBuf>,
    /// Command template for the local runtime; see [`DEFAULT_LOCAL_COMMAND`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_prompt: Option<String>,
}

impl LlmConfig {
    pub fn replay(script_path: impl Into<PathBuf>, model: ModelDescriptor) -> Self {
        LlmConfig {
            backend: BackendKind::Replay,
            model,
            sampling: SamplingParams::default(),
            endpoint_url: None,
            credential_ref: None,
            local_model_path: None,
            local_command: None,
            script_path: Some(script_path.into()),
            system_prompt: None,
        }
    }

    pub fn remote_chat(
        endpoint_url: impl Into<String>,
        credential_ref: impl Into<String>,
        model: ModelDescriptor,
    ) -> Self {
        LlmConfig {
            backend: BackendKind::RemoteChatApi,
            model,
            sampling: SamplingParams::default(),
            endpoint_url: Some(endpoint_url.into()),
            credential_ref: Some(credential_ref.into()),
            local_model_path: None,
            local_command: None,
            script_path: None,
            system_prompt: None,
        }
    }

    pub fn local(model_path: impl Into<PathBuf>, model: ModelDescriptor) -> Self {
        LlmConfig {
            backend: BackendKind::LocalProcess,
            model,
            sampling: SamplingParams::default(),
            endpoint_url: None,
            credential_ref: None,
            local_model_path: Some(model_path.into()),
            local_command: None,
            script_path: None,
            system_prompt: None,
        }
    }

    /// Tokens available for the prompt side of a request.
    pub fn prompt_budget(&self) -> u32 {
        self.model
            .context_window
            .saturating_sub(self.sampling.max_response_tokens)
    }

    /// Field-presence and bounds checks that do not touch the filesystem.
    pub fn validate_fields(&self) -> Result<(), ConfigInvalid> {
        self.sampling.validate()?;
        if self.model.context_window == 0 {
            return Err(ConfigInvalid::new("model.context_window", "must be positive"));
        }
        if self.sampling.max_response_tokens >= self.model.context_window {
            return Err(ConfigInvalid::new(
                "max_response_tokens",
                "must be smaller than the model context window",
            ));
        }
        if self.model.name.trim().is_empty() {
            return Err(ConfigInvalid::new("model.name", "must not be empty"));
        }
        match self.backend {
            BackendKind::RemoteChatApi | BackendKind::RemoteReplicateStyle => {
                match self.endpoint_url.as_deref() {
                    None | Some("") => return Err(ConfigInvalid::new("endpoint_url", "required for remote backends")),
                    Some(u) if !(u.starts_with("http://") || u.starts_with("https://")) => {
                        return Err(ConfigInvalid::new("endpoint_url", "must be an http(s) URL"))
                    }
                    _ => {}
                }
                if self.credential_ref.as_deref().is_none_or(str::is_empty) {
                    return Err(ConfigInvalid::new("credential_ref", "required for remote backends"));
                }
            }
            BackendKind::LocalProcess => {
                if self.local_model_path.is_none() {
                    return Err(ConfigInvalid::new("local_model_path", "required for the local backend"));
                }
            }
            BackendKind::Replay => {
                if self.script_path.is_none() {
                    return Err(ConfigInvalid::new("script_path", "required for the replay backend"));
                }
            }
        }
        Ok(())
    }
}

/// Full validation: field rules plus, for the local backend, that the model
/// file exists and, for replay, that the script exists.
pub fn validate_config(config: &LlmConfig) -> Result<(), ConfigInvalid> {
    config.validate_fields()?;
    match config.backend {
        BackendKind::LocalProcess => {
            let path = config.local_model_path.as_ref().expect("checked above");
            if !path.is_file() {
                return Err(ConfigInvalid::new(
                    "local_model_path",
                    format!("{} does not exist", path.display()),
                ));
            }
        }
        BackendKind::Replay => {
            let path = config.script_path.as_ref().expect("checked above");
            if !path.is_file() {
                return Err(ConfigInvalid::new(
                    "script_path",
                    format!("{} does not exist", path.display()),
                ));
            }
        }
        _ => {}
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

impl ChatRole {
    pub const fn as_str(&self) -> &'static str {
        match self {
            ChatRole::System => "system",
            ChatRole::User => "user",
            ChatRole::Assistant => "assistant",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: ChatRole, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(ChatRole::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(ChatRole::Assistant, content)
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(ChatRole::System, content)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub finish_reason: FinishReason,
    pub usage: Option<Usage>,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    ConfigInvalid(#[from] ConfigInvalid),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("rate limited{}", retry_after.map(|s| format!(", retry after {s} s")).unwrap_or_default())]
    RateLimited { retry_after: Option<u64> },
    #[error("context overflow reported by backend: {0}")]
    ContextOverflow(String),
    #[error("unexpected HTTP status {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    BadResponse(String),
    #[error("local runtime failed (exit {code:?}): {stderr}")]
    Process { code: Option<i32>, stderr: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

impl GatewayError {
    pub const fn code(&self) -> &'static str {
        match self {
            GatewayError::ConfigInvalid(_) => "config_invalid",
            GatewayError::BackendUnavailable(_) => "backend_unavailable",
            GatewayError::Network(_) => "network_error",
            GatewayError::Auth { .. } => "auth_error",
            GatewayError::RateLimited { .. } => "rate_limited",
            GatewayError::ContextOverflow(_) => "context_overflow",
            GatewayError::HttpStatus { .. } => "http_status",
            GatewayError::BadResponse(_) => "bad_response",
            GatewayError::Process { .. } => "process_error",
            GatewayError::InvalidRequest(_) => "invalid_request",
            GatewayError::Replay(ReplayError::Exhausted { .. }) => "script_exhausted",
            GatewayError::Replay(_) => "script_parse",
        }
    }
}

/// An initialized inference backend.
#[derive(Debug)]
pub enum Backend {
    Remote(remote::RemoteClient),
    Local(local::LocalRuntime),
    Replay(ReplayScript),
}

impl Backend {
    /// Initialize a backend: credential presence for remote APIs, model file
    /// existence for the local runtime, script loading for replay.
    pub fn connect(config: &LlmConfig) -> Result<Self, GatewayError> {
        config.validate_fields()?;
        match config.backend {
            BackendKind::RemoteChatApi | BackendKind::RemoteReplicateStyle => {
                let var = config.credential_ref.as_deref().unwrap_or_default();
                match std::env::var(var) {
                    Ok(v) if !v.is_empty() => {}
                    _ => {
                        return Err(GatewayError::BackendUnavailable(format!(
                            "credential environment variable '{var}' is not set"
                        )))
                    }
                }
                Ok(Backend::Remote(remote::RemoteClient::new(config.clone())))
            }
            BackendKind::LocalProcess => {
                let path = config.local_model_path.as_ref().expect("validated");
                if !path.is_file() {
                    return Err(GatewayError::BackendUnavailable(format!(
                        "local model file {} not found",
                        path.display()
                    )));
                }
                Ok(Backend::Local(local::LocalRuntime::new(config.clone())))
            }
            BackendKind::Replay => {
                let script = load_replay_script(config.script_path.as_ref().expect("validated"))?;
                Ok(Backend::Replay(script))
            }
        }
    }

    /// Run one generation. `step` is the number of earlier generations in
    /// this session; the replay backend answers from the script by step alone.
    pub fn generate(&self, messages: &[ChatMessage], step: usize) -> Result<GenerationResult, GatewayError> {
        match messages.last() {
            None => return Err(GatewayError::InvalidRequest("no messages".into())),
            Some(m) if m.role != ChatRole::User => {
                return Err(GatewayError::InvalidRequest(
                    "last message must have the user role".into(),
                ))
            }
            _ => {}
        }
        let mut result = match self {
            Backend::Replay(script) => GenerationResult {
                text: script.next_response(step)?.to_string(),
                finish_reason: FinishReason::Stop,
                usage: None,
            },
            Backend::Remote(client) => client.generate(messages)?,
            Backend::Local(runtime) => runtime.generate(messages)?,
        };
        let trimmed = result.text.trim_end().len();
        result.text.truncate(trimmed);
        Ok(result)
    }
}

/// Stateless one-shot generation for callers without a session.
pub fn generate(config: &LlmConfig, messages: &[ChatMessage], step: usize) -> Result<GenerationResult, GatewayError> {
    Backend::connect(config)?.generate(messages, step)
}

pub(crate) const RETRY_BACKOFF: Duration = Duration::from_secs(1);
