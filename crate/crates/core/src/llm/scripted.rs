//! Fixture-driven provider for offline runs, and a recorder that turns any
//! provider's replies into such a fixture.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;

use futures::future::BoxFuture;
use futures::FutureExt;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{ChatMessage, ChatProvider, CompletionParams, LlmError, ModelReply, Role};
use crate::toolkit::{ToolCall, ToolSpec};

/// Replaced in scripted final texts by the text of the latest TOOL message.
pub const LAST_TOOL_RESULT: &str = "{last_tool_result}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct When {
    pub contains: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptToolCall {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub name: String,
    #[serde(default = "empty_object")]
    pub arguments: Value,
}

fn empty_object() -> Value {
    Value::Object(Map::new())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub enum ScriptReply {
    #[serde(rename = "text")]
    Text(String),
    #[serde(rename = "tool_calls")]
    ToolCalls(Vec<ScriptToolCall>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when: Option<When>,
    pub reply: ScriptReply,
}

impl ScriptEntry {
    pub fn text(t: &str) -> Self {
        Self {
            when: None,
            reply: ScriptReply::Text(t.to_string()),
        }
    }

    pub fn call(name: &str, arguments: Value) -> Self {
        Self {
            when: None,
            reply: ScriptReply::ToolCalls(vec![ScriptToolCall {
                id: None,
                name: name.to_string(),
                arguments,
            }]),
        }
    }

    pub fn when(mut self, contains: &str) -> Self {
        self.when = Some(When {
            contains: contains.to_string(),
        });
        self
    }

    fn matches(&self, haystack: &str) -> bool {
        self.when
            .as_ref()
            .is_none_or(|w| haystack.contains(&w.contains))
    }
}

struct ScriptState {
    entries: VecDeque<ScriptEntry>,
    calls: u64,
    next_call_id: u64,
}

/// Replies come from an ordered list of entries. Each request fires the
/// first remaining entry whose predicate matches the latest message (text
/// parts and image ids); the entry is then consumed. Entries skipped over
/// stay in place for later requests.
pub struct ScriptedProvider {
    name: String,
    state: Mutex<ScriptState>,
}

impl ScriptedProvider {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self {
            name: "scripted".into(),
            state: Mutex::new(ScriptState {
                entries: entries.into(),
                calls: 0,
                next_call_id: 0,
            }),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        let entries: Vec<ScriptEntry> =
            serde_json::from_str(text).map_err(|e| LlmError::Fixture(e.to_string()))?;
        Ok(Self::new(entries))
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            LlmError::Fixture(m) => LlmError::Fixture(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn remaining(&self) -> usize {
        self.state.lock().entries.len()
    }

    /// Number of completion requests served, including failed ones.
    pub fn calls(&self) -> u64 {
        self.state.lock().calls
    }

    fn reply_for(&self, messages: &[ChatMessage]) -> Result<ModelReply, LlmError> {
        let mut st = self.state.lock();
        st.calls += 1;
        let haystack = messages
            .last()
            .map(|m| {
                let mut h = m.text();
                for id in m.image_refs() {
                    h.push('\n');
                    h.push_str(id);
                }
                h
            })
            .unwrap_or_default();
        let idx = st
            .entries
            .iter()
            .position(|e| e.matches(&haystack))
            .ok_or(LlmError::ScriptExhausted)?;
        let entry = st.entries.remove(idx).expect("index in range");
        Ok(match entry.reply {
            ScriptReply::Text(t) => {
                let t = if t.contains(LAST_TOOL_RESULT) {
                    let last = messages
                        .iter()
                        .rev()
                        .find(|m| m.role == Role::Tool)
                        .map(|m| m.text())
                        .unwrap_or_default();
                    t.replace(LAST_TOOL_RESULT, &last)
                } else {
                    t
                };
                ModelReply::FinalText(t)
            }
            ScriptReply::ToolCalls(calls) => ModelReply::ToolCalls(
                calls
                    .into_iter()
                    .map(|c| {
                        let id = c.id.unwrap_or_else(|| {
                            st.next_call_id += 1;
                            format!("call_{}", st.next_call_id)
                        });
                        ToolCall::new(id, c.name, c.arguments)
                    })
                    .collect(),
            ),
        })
    }
}

impl ChatProvider for ScriptedProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete<'a>(
        &'a self,
        messages: &'a [ChatMessage],
        _tools: &'a [ToolSpec],
        _params: &'a CompletionParams,
    ) -> BoxFuture<'a, Result<ModelReply, LlmError>> {
        let r = self.reply_for(messages);
        async move { r }.boxed()
    }
}

/// Passes requests through and keeps every reply, so a session against a
/// live model can be replayed later through [`ScriptedProvider`].
pub struct RecordingProvider {
    inner: Arc<dyn ChatProvider>,
    log: Mutex<Vec<ScriptEntry>>,
}

impl RecordingProvider {
    pub fn new(inner: Arc<dyn ChatProvider>) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn entries(&self) -> Vec<ScriptEntry> {
        self.log.lock().clone()
    }

    pub fn to_fixture_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries()).expect("entries serialize")
    }
}

impl ChatProvider for RecordingProvider {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete<'a>(
        &'a self,
        messages: &'a [ChatMessage],
        tools: &'a [ToolSpec],
        params: &'a CompletionParams,
    ) -> BoxFuture<'a, Result<ModelReply, LlmError>> {
        async move {
            let reply = self.inner.complete(messages, tools, params).await?;
            let entry = ScriptEntry {
                when: None,
                reply: match &reply {
                    ModelReply::FinalText(t) => ScriptReply::Text(t.clone()),
                    ModelReply::ToolCalls(calls) => ScriptReply::ToolCalls(
                        calls
                            .iter()
                            .map(|c| ScriptToolCall {
                                id: Some(c.id.clone()),
                                name: c.name.clone(),
                                arguments: c.arguments.clone(),
                            })
                            .collect(),
                    ),
                },
            };
            self.log.lock().push(entry);
            Ok(reply)
        }
        .boxed()
    }
}
