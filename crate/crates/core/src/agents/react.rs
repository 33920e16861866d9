//! Conversational ReAct loop: call the model, run the tool calls it asks for,
//! feed the outcomes back, repeat until it answers in plain text.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use futures::future::BoxFuture;
use futures::FutureExt;

use super::{Agent, AgentError, AgentHandle, Step};
use crate::llm::{complete, ChatMessage, ChatProvider, CompletionParams, ModelReply};
use crate::toolkit::{execute, ToolContext, ToolRegistry};

pub const STEP_LIMIT_TEXT: &str = "step limit reached";
pub const DEFAULT_MAX_STEPS: usize = 16;

#[derive(Clone)]
pub struct ReactConfig {
    pub system_prompt: String,
    pub tools: ToolRegistry,
    pub provider: Arc<dyn ChatProvider>,
    pub params: CompletionParams,
    pub max_steps: usize,
    /// Final text is published here as `{"text": …}` when set.
    pub outbox: Option<String>,
    /// A successful call to one of these ends the loop.
    pub terminal_tools: Vec<String>,
}

impl ReactConfig {
    pub fn new(provider: Arc<dyn ChatProvider>, tools: ToolRegistry) -> Self {
        Self {
            system_prompt: String::new(),
            tools,
            provider,
            params: CompletionParams::default(),
            max_steps: DEFAULT_MAX_STEPS,
            outbox: None,
            terminal_tools: Vec::new(),
        }
    }

    pub fn with_system_prompt(mut self, prompt: &str) -> Self {
        self.system_prompt = prompt.to_string();
        self
    }

    pub fn with_max_steps(mut self, n: usize) -> Self {
        self.max_steps = n;
        self
    }

    pub fn with_outbox(mut self, topic: &str) -> Self {
        self.outbox = Some(topic.to_string());
        self
    }

    pub fn with_terminal_tools(mut self, names: &[&str]) -> Self {
        self.terminal_tools = names.iter().map(|s| s.to_string()).collect();
        self
    }

    /// Checks `max_steps ≥ 1` and that the outbox differs from `inbox`.
    pub fn validate(&self, inbox: Option<&str>) -> Result<(), String> {
        if self.max_steps == 0 {
            return Err("max_steps must be at least 1".into());
        }
        if let (Some(i), Some(o)) = (inbox, self.outbox.as_deref()) {
            if i == o {
                return Err(format!("inbox and outbox are both {i}"));
            }
        }
        Ok(())
    }

    /// System message (when the prompt is non-empty) followed by `opening`.
    pub fn conversation(&self, opening: ChatMessage) -> Vec<ChatMessage> {
        let mut msgs = Vec::new();
        if !self.system_prompt.is_empty() {
            msgs.push(ChatMessage::system(&self.system_prompt));
        }
        msgs.push(opening);
        msgs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LoopStatus {
    Succeeded,
    Failed,
    Stopped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactResult {
    pub status: LoopStatus,
    pub final_text: String,
    pub messages: Vec<ChatMessage>,
    pub provider_calls: usize,
    pub error: Option<String>,
}

/// Runs the loop on `messages`, which must already hold the opening turn(s).
pub async fn react_loop(
    cfg: &ReactConfig,
    ctx: &ToolContext,
    mut messages: Vec<ChatMessage>,
    stop: Option<&AgentHandle>,
) -> ReactResult {
    let specs = cfg.tools.specs();
    let mut calls = 0;
    let finish = |status, text: String, messages, calls, error| {
        if status != LoopStatus::Stopped {
            if let Some(out) = &cfg.outbox {
                let _ = ctx.bus.publish(out, json!({ "text": text }));
            }
        }
        ctx.trace(
            "loop_end",
            &json!({"status": status, "text": text, "provider_calls": calls, "error": error}),
        );
        ReactResult {
            status,
            final_text: text,
            messages,
            provider_calls: calls,
            error,
        }
    };
    loop {
        if stop.is_some_and(AgentHandle::stop_requested) {
            return finish(LoopStatus::Stopped, String::new(), messages, calls, None);
        }
        if calls >= cfg.max_steps {
            return finish(
                LoopStatus::Failed,
                STEP_LIMIT_TEXT.to_string(),
                messages,
                calls,
                Some(STEP_LIMIT_TEXT.to_string()),
            );
        }
        calls += 1;
        let reply = match complete(cfg.provider.as_ref(), &messages, &specs, &cfg.params).await {
            Ok(r) => r,
            Err(e) => {
                ctx.trace("model_error", &json!({ "error": e.to_string() }));
                return finish(
                    LoopStatus::Failed,
                    String::new(),
                    messages,
                    calls,
                    Some(e.to_string()),
                );
            }
        };
        ctx.trace(
            "model_reply",
            &serde_json::to_value(&reply).expect("reply serializes"),
        );
        match reply {
            ModelReply::FinalText(text) => {
                messages.push(ChatMessage::assistant(&text));
                return finish(LoopStatus::Succeeded, text, messages, calls, None);
            }
            ModelReply::ToolCalls(tool_calls) => {
                messages.push(ChatMessage::assistant_calls(tool_calls.clone()));
                let mut terminal = None;
                for call in &tool_calls {
                    let outcome = execute(call, &cfg.tools, ctx).await;
                    ctx.trace(
                        "tool_result",
                        &json!({"name": call.name, "status": outcome.status, "text": outcome.text()}),
                    );
                    if outcome.is_ok() && cfg.terminal_tools.contains(&call.name) {
                        terminal = Some(outcome.text());
                    }
                    messages.push(ChatMessage::tool(&outcome));
                }
                if let Some(text) = terminal {
                    return finish(LoopStatus::Succeeded, text, messages, calls, None);
                }
            }
        }
    }
}

/// Runs one ReAct conversation for a fixed task, then finishes.
pub struct TaskAgent {
    cfg: ReactConfig,
    ctx: Arc<ToolContext>,
    task: String,
    pub result: Option<ReactResult>,
}

impl TaskAgent {
    pub fn new(cfg: ReactConfig, ctx: Arc<ToolContext>, task: &str) -> Self {
        Self {
            cfg,
            ctx,
            task: task.to_string(),
            result: None,
        }
    }
}

impl Agent for TaskAgent {
    fn step<'a>(&'a mut self, h: &'a AgentHandle) -> BoxFuture<'a, Result<Step, AgentError>> {
        async move {
            let msgs = self.cfg.conversation(ChatMessage::user(&self.task));
            let r = react_loop(&self.cfg, &self.ctx, msgs, Some(h)).await;
            let failed = r.status == LoopStatus::Failed;
            let err = r.error.clone().unwrap_or_default();
            self.result = Some(r);
            if failed {
                Err(AgentError::Failed(err))
            } else {
                Ok(Step::Done)
            }
        }
        .boxed()
    }
}
