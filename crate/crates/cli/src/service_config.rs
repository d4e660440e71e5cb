//! The service configuration file: renderer bindings and the backend
//! descriptors offered to clients.

use std::path::{Path, PathBuf};

use cmi_core::gateway::{BackendKind, ModelDescriptor, DEFAULT_LOCAL_COMMAND};
use cmi_core::interpreter::RendererBindings;
use serde::{Deserialize, Serialize};

/// A backend a client may pick. Only the *name* of the credential variable
/// is configured; its value never leaves the process environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub backend: BackendKind,
    pub model: ModelDescriptor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_model_path: Option<PathBuf>,
}

/// What `GET /api/backends` reports for one descriptor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BackendStatus {
    #[serde(flatten)]
    pub descriptor: BackendDescriptor,
    /// Whether the credential variable is set (remote backends only).
    pub credential_present: bool,
}

impl BackendDescriptor {
    pub fn status(&self) -> BackendStatus {
        let credential_present = self
            .credential_ref
            .as_ref()
            .is_some_and(|name| std::env::var_os(name).is_some_and(|v| !v.is_empty()));
        BackendStatus {
            descriptor: self.clone(),
            credential_present,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub renderers: RendererBindings,
    pub backends: Vec<BackendDescriptor>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            renderers: RendererBindings::default(),
            backends: default_backends(),
        }
    }
}

fn default_backends() -> Vec<BackendDescriptor> {
    vec![
        BackendDescriptor {
            name: "gpt-4".into(),
            backend: BackendKind::RemoteChatApi,
            model: ModelDescriptor::gpt4(),
            endpoint_url: Some("https://api.openai.com/v1".into()),
            credential_ref: Some("OPENAI_API_KEY".into()),
            local_command: None,
            local_model_path: None,
        },
        BackendDescriptor {
            name: "llama-2-70b-chat".into(),
            backend: BackendKind::RemoteReplicateStyle,
            model: ModelDescriptor::llama2(70),
            endpoint_url: Some("https://api.replicate.com/v1/models/meta/llama-2-70b-chat/predictions".into()),
            credential_ref: Some("REPLICATE_API_TOKEN".into()),
            local_command: None,
            local_model_path: None,
        },
        BackendDescriptor {
            name: "llama-2-7b-local".into(),
            backend: BackendKind::LocalProcess,
            model: ModelDescriptor::llama2(7),
            endpoint_url: None,
            credential_ref: None,
            local_command: Some(DEFAULT_LOCAL_COMMAND.into()),
            local_model_path: None,
        },
        BackendDescriptor {
            name: "replay".into(),
            backend: BackendKind::Replay,
            model: ModelDescriptor::gpt4(),
            endpoint_url: None,
            credential_ref: None,
            local_command: None,
            local_model_path: None,
        },
    ]
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Load `path` when given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, String> {
        path.map_or_else(|| Ok(ServiceConfig::default()), ServiceConfig::load)
    }
}
