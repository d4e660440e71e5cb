//! Request payloads for the remote backends.

use serde_json::{json, Map, Value};

use super::{BackendKind, ChatMessage, ChatRole, LlmConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedRequest {
    pub body: Vec<u8>,
    pub warnings: Vec<String>,
}

pub const TOP_K_UNSUPPORTED: &str = "top_k unsupported";

/// Messages with the configured system prompt prepended when the caller
/// did not supply one.
pub(crate) fn with_system_prompt(config: &LlmConfig, messages: &[ChatMessage]) -> Vec<ChatMessage> {
    let mut out = Vec::with_capacity(messages.len() + 1);
    if let Some(sp) = &config.system_prompt {
        if messages.first().is_none_or(|m| m.role != ChatRole::System) {
            out.push(ChatMessage::system(sp.clone()));
        }
    }
    out.extend_from_slice(messages);
    out
}

/// Single-prompt form for completion-style backends.
pub fn flatten_prompt(messages: &[ChatMessage]) -> String {
    let mut prompt = String::new();
    for m in messages {
        let tag = match m.role {
            ChatRole::System => "### System:",
            ChatRole::User => "### User:",
            ChatRole::Assistant => "### Assistant:",
        };
        prompt.push_str(tag);
        prompt.push('\n');
        prompt.push_str(&m.content);
        prompt.push_str("\n\n");
    }
    prompt.push_str("### Assistant:\n");
    prompt
}

fn chat_payload(config: &LlmConfig, messages: &[ChatMessage], warnings: &mut Vec<String>) -> Value {
    let s = &config.sampling;
    let mut obj = Map::new();
    obj.insert("model".into(), json!(config.model.name));
    obj.insert(
        "messages".into(),
        Value::Array(
            messages
                .iter()
                .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
                .collect(),
        ),
    );
    obj.insert("temperature".into(), json!(s.temperature));
    obj.insert("top_p".into(), json!(s.top_p));
    obj.insert("max_tokens".into(), json!(s.max_response_tokens));
    if let Some(seed) = s.seed {
        obj.insert("seed".into(), json!(seed));
    }
    if s.top_k != 0 {
        warnings.push(TOP_K_UNSUPPORTED.into());
    }
    Value::Object(obj)
}

fn replicate_payload(config: &LlmConfig, messages: &[ChatMessage]) -> Value {
    let s = &config.sampling;
    let mut input = Map::new();
    input.insert("prompt".into(), json!(flatten_prompt(messages)));
    input.insert("temperature".into(), json!(s.temperature));
    input.insert("top_p".into(), json!(s.top_p));
    input.insert("top_k".into(), json!(s.top_k));
    input.insert("max_new_tokens".into(), json!(s.max_response_tokens));
    if let Some(seed) = s.seed {
        input.insert("seed".into(), json!(seed));
    }
    json!({ "input": input })
}

/// Encode a request for the configured remote backend. The configured
/// system prompt is prepended unless `messages` already starts with one.
/// Non-remote backends are encoded in the completion-style form.
pub fn encode_chat_request(config: &LlmConfig, messages: &[ChatMessage]) -> EncodedRequest {
    let messages = with_system_prompt(config, messages);
    let mut warnings = Vec::new();
    let value = match config.backend {
        BackendKind::RemoteChatApi => chat_payload(config, &messages, &mut warnings),
        _ => replicate_payload(config, &messages),
    };
    EncodedRequest {
        body: serde_json::to_vec(&value).expect("json values always serialize"),
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ModelDescriptor, SamplingParams};
    use proptest::prelude::*;

    fn chat_config() -> LlmConfig {
        LlmConfig::remote_chat("http://localhost:1", "KEY", ModelDescriptor::gpt4())
    }

    fn decode(req: &EncodedRequest) -> Value {
        serde_json::from_slice(&req.body).unwrap()
    }

    #[test]
    fn temperature_maps_directly() {
        let mut c = chat_config();
        c.sampling.temperature = 0.2;
        let v = decode(&encode_chat_request(&c, &[ChatMessage::user("hi")]));
        assert_eq!(v["temperature"], json!(0.2));
        assert_eq!(v["model"], json!("gpt-4"));
        assert_eq!(v["max_tokens"], json!(1024));
    }

    #[test]
    fn top_k_omitted_for_chat_api() {
        let req = encode_chat_request(&chat_config(), &[ChatMessage::user("hi")]);
        assert!(decode(&req).get("top_k").is_none());
        assert_eq!(req.warnings, vec![TOP_K_UNSUPPORTED.to_string()]);
    }

    #[test]
    fn messages_preserve_order_and_roles() {
        let msgs = [
            ChatMessage::user("a"),
            ChatMessage::assistant("b"),
            ChatMessage::user("c"),
        ];
        let v = decode(&encode_chat_request(&chat_config(), &msgs));
        let arr = v["messages"].as_array().unwrap();
        assert_eq!(arr.len(), 3);
        assert_eq!(arr[1], json!({"role": "assistant", "content": "b"}));
        assert_eq!(arr[2]["content"], json!("c"));
    }

    #[test]
    fn system_prompt_prepended() {
        let mut c = chat_config();
        c.system_prompt = Some("be terse".into());
        let v = decode(&encode_chat_request(&c, &[ChatMessage::user("a")]));
        assert_eq!(v["messages"][0], json!({"role": "system", "content": "be terse"}));
        let v = decode(&encode_chat_request(
            &c,
            &[ChatMessage::system("own"), ChatMessage::user("a")],
        ));
        assert_eq!(v["messages"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn replicate_shape() {
        let mut c = chat_config();
        c.backend = BackendKind::RemoteReplicateStyle;
        let req = encode_chat_request(
            &c,
            &[
                ChatMessage::user("draw"),
                ChatMessage::assistant("ok"),
                ChatMessage::user("more"),
            ],
        );
        assert!(req.warnings.is_empty());
        let v = decode(&req);
        assert_eq!(v["input"]["top_k"], json!(40));
        assert_eq!(v["input"]["max_new_tokens"], json!(1024));
        let prompt = v["input"]["prompt"].as_str().unwrap();
        assert_eq!(
            prompt,
            "### User:\ndraw\n\n### Assistant:\nok\n\n### User:\nmore\n\n### Assistant:\n"
        );
    }

    proptest! {
        #[test]
        fn chat_payload_decodes_exactly(
            temperature in 0.0f64..2.0,
            top_p in 0.01f64..=1.0,
            max in 1u32..8000,
            seed in proptest::option::of(any::<u64>()),
            contents in proptest::collection::vec(".{0,40}", 1..6),
        ) {
            let mut c = chat_config();
            c.sampling = SamplingParams { temperature, top_p, top_k: 0, max_response_tokens: max, seed };
            let msgs: Vec<_> = contents.iter().enumerate().map(|(i, t)| {
                ChatMessage::new(if i % 2 == 0 { ChatRole::User } else { ChatRole::Assistant }, t.clone())
            }).collect();
            let req = encode_chat_request(&c, &msgs);
            prop_assert!(req.warnings.is_empty());
            let v = decode(&req);
            prop_assert_eq!(v["temperature"].as_f64().unwrap(), temperature);
            prop_assert_eq!(v["top_p"].as_f64().unwrap(), top_p);
            prop_assert_eq!(v["max_tokens"].as_u64().unwrap(), u64::from(max));
            prop_assert_eq!(v.get("seed").and_then(Value::as_u64), seed);
            let back: Vec<ChatMessage> = serde_json::from_value(v["messages"].clone()).unwrap();
            prop_assert_eq!(back, msgs);
        }
    }
}
