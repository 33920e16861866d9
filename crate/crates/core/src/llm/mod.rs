//! Provider-agnostic chat completion with tool calling, plus embeddings.

pub mod embed;
pub mod http;
pub mod scripted;

use futures::future::BoxFuture;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::toolkit::{ContentPart, ToolCall, ToolOutcome, ToolSpec};

pub use embed::{cosine, fnv1a64, Embedder, HashEmbedder};
pub use http::{HttpConfig, HttpProvider};
pub use scripted::{RecordingProvider, ScriptEntry, ScriptReply, ScriptedProvider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub parts: Vec<ContentPart>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
}

impl ChatMessage {
    fn plain(role: Role, text: &str) -> Self {
        Self {
            role,
            parts: vec![ContentPart::text(text)],
            tool_call_id: None,
            tool_calls: Vec::new(),
        }
    }

    pub fn system(text: &str) -> Self {
        Self::plain(Role::System, text)
    }

    pub fn user(text: &str) -> Self {
        Self::plain(Role::User, text)
    }

    pub fn user_parts(parts: Vec<ContentPart>) -> Self {
        Self {
            role: Role::User,
            parts,
            tool_call_id: None,
            tool_calls: Vec::new(),
        }
    }

    pub fn assistant(text: &str) -> Self {
        Self::plain(Role::Assistant, text)
    }

    pub fn assistant_calls(calls: Vec<ToolCall>) -> Self {
        Self {
            role: Role::Assistant,
            parts: Vec::new(),
            tool_call_id: None,
            tool_calls: calls,
        }
    }

    pub fn tool(outcome: &ToolOutcome) -> Self {
        Self {
            role: Role::Tool,
            parts: outcome.content.clone(),
            tool_call_id: Some(outcome.tool_call_id.clone()),
            tool_calls: Vec::new(),
        }
    }

    pub fn text(&self) -> String {
        self.parts
            .iter()
            .filter_map(ContentPart::as_text)
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn image_refs(&self) -> Vec<&str> {
        self.parts
            .iter()
            .filter_map(|p| match p {
                ContentPart::ImageRef(id) => Some(id.as_str()),
                ContentPart::Text(_) => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelReply {
    #[serde(rename = "text")]
    FinalText(String),
    #[serde(rename = "tool_calls")]
    ToolCalls(Vec<ToolCall>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub temperature: f64,
    pub max_output: u32,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_output: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    ProviderError {
        status: Option<u16>,
        attempts: u32,
        message: String,
    },
    #[error("malformed reply: {0}")]
    MalformedReply(String),
    #[error("script exhausted")]
    ScriptExhausted,
    #[error("fixture error: {0}")]
    Fixture(String),
}

pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;

    fn complete<'a>(
        &'a self,
        messages: &'a [ChatMessage],
        tools: &'a [ToolSpec],
        params: &'a CompletionParams,
    ) -> BoxFuture<'a, Result<ModelReply, LlmError>>;
}

/// Calls `provider` after checking the conversation shape and rejects replies
/// that are empty or name tools outside `tools`.
pub async fn complete(
    provider: &dyn ChatProvider,
    messages: &[ChatMessage],
    tools: &[ToolSpec],
    params: &CompletionParams,
) -> Result<ModelReply, LlmError> {
    match messages.first().map(|m| m.role) {
        None => return Err(LlmError::InvalidRequest("no messages".into())),
        Some(Role::System | Role::User) => {}
        Some(r) => {
            return Err(LlmError::InvalidRequest(format!(
                "first message must be SYSTEM or USER, got {r:?}"
            )))
        }
    }
    let reply = provider.complete(messages, tools, params).await?;
    if let ModelReply::ToolCalls(calls) = &reply {
        if calls.is_empty() {
            return Err(LlmError::MalformedReply("empty tool call list".into()));
        }
        for c in calls {
            if !tools.iter().any(|t| t.name == c.name) {
                return Err(LlmError::MalformedReply(format!(
                    "reply calls unknown tool {:?}",
                    c.name
                )));
            }
            if !c.arguments.is_object() {
                return Err(LlmError::MalformedReply(format!(
                    "arguments of {:?} are not an object",
                    c.name
                )));
            }
        }
    }
    Ok(reply)
}
