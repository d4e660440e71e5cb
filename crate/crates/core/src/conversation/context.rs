use crate::dialogue::{Conversation, Role};
use crate::gateway::{estimate_tokens, ChatMessage, LlmConfig};

use super::EngineError;

/// Assemble the request for `new_prompt`: optional system message, the
/// newest user/llm pairs that fit the prompt budget, then the prompt.
/// Interpreter, system and config entries never reach the model; user
/// entries without a reply (failed generations) are skipped.
pub fn build_context(conversation: &Conversation, new_prompt: &str) -> Result<Vec<ChatMessage>, EngineError> {
    build_context_for(&conversation.llm_config, conversation, new_prompt)
}

pub(crate) fn build_context_for(
    config: &LlmConfig,
    conversation: &Conversation,
    new_prompt: &str,
) -> Result<Vec<ChatMessage>, EngineError> {
    let budget = u64::from(config.prompt_budget());
    let system = config.system_prompt.as_ref().map(|s| ChatMessage::system(s.clone()));
    let required = system.as_ref().map_or(0, |m| estimate_tokens(&m.content)) + estimate_tokens(new_prompt);
    if required > budget {
        return Err(EngineError::PromptTooLarge {
            estimate: required,
            budget,
        });
    }

    let mut pairs: Vec<(&str, &str)> = Vec::new();
    let mut pending_user: Option<&str> = None;
    for entry in &conversation.entries {
        match entry.role {
            Role::User => pending_user = Some(&entry.text),
            Role::Llm => {
                if let Some(u) = pending_user.take() {
                    pairs.push((u, &entry.text));
                }
            }
            _ => {}
        }
    }

    let cost = |(u, a): &(&str, &str)| estimate_tokens(u) + estimate_tokens(a);
    let mut total: u64 = pairs.iter().map(cost).sum();
    let mut first = 0;
    while required + total > budget {
        total -= cost(&pairs[first]);
        first += 1;
    }

    let mut messages = Vec::with_capacity(2 * (pairs.len() - first) + 2);
    messages.extend(system);
    for (u, a) in &pairs[first..] {
        messages.push(ChatMessage::user(*u));
        messages.push(ChatMessage::assistant(*a));
    }
    messages.push(ChatMessage::user(new_prompt));
    Ok(messages)
}
