//! Local runtime driven as an external process.

use std::io::Write;
use std::process::{Command, Stdio};

use super::wire::{flatten_prompt, with_system_prompt};
use super::{ChatMessage, FinishReason, GatewayError, GenerationResult, LlmConfig, DEFAULT_LOCAL_COMMAND};

#[derive(Debug)]
pub struct LocalRuntime {
    config: LlmConfig,
}

impl LocalRuntime {
    pub fn new(config: LlmConfig) -> Self {
        LocalRuntime { config }
    }

    /// Template split on whitespace first, then placeholders substituted per
    /// argument, so substituted paths never get re-split.
    fn argv(&self, prompt_file: &str) -> Vec<String> {
        let s = &self.config.sampling;
        let template = self.config.local_command.as_deref().unwrap_or(DEFAULT_LOCAL_COMMAND);
        let model_path = self
            .config
            .local_model_path
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        let subs = [
            ("{model_path}", model_path),
            ("{prompt_file}", prompt_file.to_string()),
            ("{temperature}", s.temperature.to_string()),
            ("{top_p}", s.top_p.to_string()),
            ("{top_k}", s.top_k.to_string()),
            ("{n_predict}", s.max_response_tokens.to_string()),
            ("{seed}", s.seed.map(|v| v.to_string()).unwrap_or_else(|| "-1".into())),
        ];
        template
            .split_whitespace()
            .map(|arg| subs.iter().fold(arg.to_string(), |acc, (k, v)| acc.replace(k, v)))
            .collect()
    }

    pub fn generate(&self, messages: &[ChatMessage]) -> Result<GenerationResult, GatewayError> {
        let prompt = flatten_prompt(&with_system_prompt(&self.config, messages));
        let mut file = tempfile::Builder::new()
            .prefix("cmi-prompt-")
            .suffix(".txt")
            .tempfile()
            .map_err(|e| GatewayError::BackendUnavailable(format!("cannot create prompt file: {e}")))?;
        file.write_all(prompt.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| GatewayError::BackendUnavailable(format!("cannot write prompt file: {e}")))?;
        let argv = self.argv(&file.path().display().to_string());
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| GatewayError::ConfigInvalid(crate::ConfigInvalid::new("local_command", "empty command")))?;
        let output = Command::new(program)
            .args(args)
            .stdin(Stdio::null())
            .output()
            .map_err(|e| GatewayError::BackendUnavailable(format!("cannot start '{program}': {e}")))?;
        if !output.status.success() {
            return Err(GatewayError::Process {
                code: output.status.code(),
                stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
            });
        }
        Ok(GenerationResult {
            text: String::from_utf8_lossy(&output.stdout).into_owned(),
            finish_reason: FinishReason::Stop,
            usage: None,
        })
    }
}
