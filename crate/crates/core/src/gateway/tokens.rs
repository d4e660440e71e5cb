//! Token estimation heuristic. Deliberately over-approximates; never used
//! for billing.

use super::ChatMessage;

/// Per-message overhead added to every estimate.
pub const MESSAGE_OVERHEAD_TOKENS: u64 = 4;

/// `ceil(bytes / 4) + 4`.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4) + MESSAGE_OVERHEAD_TOKENS
}

pub fn estimate_messages(messages: &[ChatMessage]) -> u64 {
    messages.iter().map(|m| estimate_tokens(&m.content)).sum()
}
