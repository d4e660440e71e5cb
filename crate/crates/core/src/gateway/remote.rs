//! HTTP client for the remote backends.

use std::time::Duration;

use serde_json::Value;
use ureq::Agent;

use super::wire::encode_chat_request;
use super::{BackendKind, ChatMessage, FinishReason, GatewayError, GenerationResult, LlmConfig, Usage, RETRY_BACKOFF};

const REQUEST_TIMEOUT: Duration = Duration::from_secs(300);
const CONNECT_TIMEOUT: Duration = Duration::from_secs(15);

#[derive(Debug)]
pub struct RemoteClient {
    config: LlmConfig,
    agent: Agent,
}

impl RemoteClient {
    pub fn new(config: LlmConfig) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(REQUEST_TIMEOUT))
            .timeout_connect(Some(CONNECT_TIMEOUT))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteClient { config, agent }
    }

    fn url(&self) -> String {
        let base = self
            .config
            .endpoint_url
            .as_deref()
            .unwrap_or_default()
            .trim_end_matches('/');
        match self.config.backend {
            BackendKind::RemoteChatApi => format!("{base}/chat/completions"),
            _ => base.to_string(),
        }
    }

    fn secret(&self) -> Result<String, GatewayError> {
        let var = self.config.credential_ref.as_deref().unwrap_or_default();
        std::env::var(var).map_err(|_| {
            GatewayError::BackendUnavailable(format!("credential environment variable '{var}' is not set"))
        })
    }

    pub fn generate(&self, messages: &[ChatMessage]) -> Result<GenerationResult, GatewayError> {
        let request = encode_chat_request(&self.config, messages);
        for w in &request.warnings {
            tracing::warn!(backend = ?self.config.backend, "{w}");
        }
        let (status, headers_retry, body) = match self.send(&request.body) {
            Err(GatewayError::Network(e)) => {
                tracing::warn!("network error, retrying once: {e}");
                std::thread::sleep(RETRY_BACKOFF);
                self.send(&request.body)?
            }
            other => other?,
        };
        match status {
            200..=299 => match self.config.backend {
                BackendKind::RemoteChatApi => parse_chat_response(&body),
                _ => parse_replicate_response(&body),
            },
            401 | 403 => Err(GatewayError::Auth { status }),
            429 => Err(GatewayError::RateLimited {
                retry_after: headers_retry,
            }),
            _ if is_context_overflow(&body) => Err(GatewayError::ContextOverflow(error_message(&body))),
            _ => Err(GatewayError::HttpStatus {
                status,
                body: truncate(&body, 500),
            }),
        }
    }

    fn send(&self, body: &[u8]) -> Result<(u16, Option<u64>, String), GatewayError> {
        let secret = self.secret()?;
        let mut req = self
            .agent
            .post(&self.url())
            .header("Authorization", &format!("Bearer {secret}"))
            .content_type("application/json");
        if self.config.backend == BackendKind::RemoteReplicateStyle {
            req = req.header("Prefer", "wait");
        }
        let mut resp = req.send(body).map_err(map_transport_error)?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse().ok());
        let text = resp.body_mut().read_to_string().map_err(map_transport_error)?;
        Ok((status, retry_after, text))
    }
}

fn map_transport_error(e: ureq::Error) -> GatewayError {
    match e {
        ureq::Error::StatusCode(status) => GatewayError::HttpStatus {
            status,
            body: String::new(),
        },
        ureq::Error::BadUri(u) => GatewayError::BackendUnavailable(format!("bad endpoint URL: {u}")),
        other => GatewayError::Network(other.to_string()),
    }
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        return s.to_string();
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}…", &s[..end])
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| {
            v.pointer("/error/message")
                .or_else(|| v.get("error"))
                .or_else(|| v.get("detail"))
                .and_then(Value::as_str)
                .map(str::to_string)
        })
        .unwrap_or_else(|| truncate(body, 500))
}

fn is_context_overflow(body: &str) -> bool {
    if let Ok(v) = serde_json::from_str::<Value>(body) {
        if v.pointer("/error/code").and_then(Value::as_str) == Some("context_length_exceeded") {
            return true;
        }
    }
    let lower = body.to_ascii_lowercase();
    lower.contains("maximum context length") || lower.contains("context window") || lower.contains("context_length")
}

fn parse_chat_response(body: &str) -> Result<GenerationResult, GatewayError> {
    let v: Value = serde_json::from_str(body).map_err(|e| GatewayError::BadResponse(e.to_string()))?;
    let choice = v
        .pointer("/choices/0")
        .ok_or_else(|| GatewayError::BadResponse("missing choices[0]".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::BadResponse("missing choices[0].message.content".into()))?;
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("length") => FinishReason::Length,
        Some("stop") | None => FinishReason::Stop,
        Some(_) => FinishReason::Stop,
    };
    let usage = v.get("usage").and_then(|u| {
        Some(Usage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()? as u32,
            completion_tokens: u.get("completion_tokens")?.as_u64()? as u32,
        })
    });
    Ok(GenerationResult {
        text: text.to_string(),
        finish_reason,
        usage,
    })
}

fn parse_replicate_response(body: &str) -> Result<GenerationResult, GatewayError> {
    let v: Value = serde_json::from_str(body).map_err(|e| GatewayError::BadResponse(e.to_string()))?;
    if v.get("status").and_then(Value::as_str) == Some("failed") {
        let msg = v.get("error").and_then(Value::as_str).unwrap_or("prediction failed");
        return Err(if is_context_overflow(msg) {
            GatewayError::ContextOverflow(msg.to_string())
        } else {
            GatewayError::BadResponse(msg.to_string())
        });
    }
    let text = match v.get("output") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Array(parts)) => parts.iter().filter_map(Value::as_str).collect(),
        _ => return Err(GatewayError::BadResponse("missing output".into())),
    };
    Ok(GenerationResult {
        text,
        finish_reason: FinishReason::Stop,
        usage: None,
    })
}
