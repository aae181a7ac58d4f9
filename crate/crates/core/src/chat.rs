//! Chat-completion abstraction shared by labeling and generation.

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub max_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub content: String,
    pub finish_reason: String,
}

/// One request, one completion. Implementations handle transport retries;
/// content-level retries (empty or unparseable output) belong to callers.
pub trait ChatModel: Send + Sync {
    fn model(&self) -> &str;

    fn complete(&self, messages: &[ChatMessage], sampling: &Sampling) -> Result<Completion>;
}
