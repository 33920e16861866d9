//! Client for OpenAI-compatible chat completion and embedding endpoints.

use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use futures::future::BoxFuture;
use futures::FutureExt;
use serde_json::{json, Value};

use super::{ChatMessage, ChatProvider, CompletionParams, LlmError, ModelReply, Role};
use crate::toolkit::{ContentPart, ToolCall, ToolSpec};

pub const ENV_BASE_URL: &str = "RAI_LLM_BASE_URL";
pub const ENV_API_KEY: &str = "RAI_LLM_API_KEY";

/// Resolves an image asset id to (mime type, bytes).
pub type ImageResolver = Arc<dyn Fn(&str) -> Option<(String, Vec<u8>)> + Send + Sync>;

#[derive(Clone)]
pub struct HttpConfig {
    /// Server root, with or without a trailing `/v1`.
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub embedding_model: String,
    pub max_retries: u32,
    pub backoff: Duration,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn new(base_url: &str, model: &str) -> Self {
        Self {
            base_url: base_url.to_string(),
            api_key: None,
            model: model.to_string(),
            embedding_model: "text-embedding-3-small".into(),
            max_retries: 2,
            backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }

    /// Endpoint and key from `RAI_LLM_BASE_URL` / `RAI_LLM_API_KEY`.
    pub fn from_env(model: &str) -> Result<Self, String> {
        let base = std::env::var(ENV_BASE_URL).map_err(|_| format!("{ENV_BASE_URL} is not set"))?;
        let mut cfg = Self::new(&base, model);
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        Ok(cfg)
    }

    fn url(&self, path: &str) -> String {
        let root = self.base_url.trim_end_matches('/');
        let root = root.strip_suffix("/v1").unwrap_or(root);
        format!("{root}/v1/{path}")
    }
}

pub struct HttpProvider {
    cfg: HttpConfig,
    client: reqwest::Client,
    images: Option<ImageResolver>,
}

impl HttpProvider {
    pub fn new(cfg: HttpConfig) -> Result<Self, LlmError> {
        let client = reqwest::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| LlmError::ProviderError {
                status: None,
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            cfg,
            client,
            images: None,
        })
    }

    pub fn with_images(mut self, resolver: ImageResolver) -> Self {
        self.images = Some(resolver);
        self
    }

    pub fn request_body(
        &self,
        messages: &[ChatMessage],
        tools: &[ToolSpec],
        params: &CompletionParams,
    ) -> Value {
        let mut body = json!({
            "model": self.cfg.model,
            "messages": messages.iter().map(|m| self.wire_message(m)).collect::<Vec<_>>(),
            "temperature": params.temperature,
            "max_tokens": params.max_output,
        });
        if !tools.is_empty() {
            body["tools"] = tools
                .iter()
                .map(|t| json!({"type": "function", "function": t.to_function_json()}))
                .collect();
            body["tool_choice"] = json!("auto");
        }
        body
    }

    fn image_url(&self, id: &str) -> Option<String> {
        let (mime, bytes) = self.images.as_ref()?(id)?;
        Some(format!(
            "data:{mime};base64,{}",
            base64::engine::general_purpose::STANDARD.encode(bytes)
        ))
    }

    fn wire_message(&self, m: &ChatMessage) -> Value {
        match m.role {
            Role::System => json!({"role": "system", "content": m.text()}),
            Role::User => {
                if m.image_refs().is_empty() {
                    return json!({"role": "user", "content": m.text()});
                }
                let parts: Vec<Value> = m
                    .parts
                    .iter()
                    .map(|p| match p {
                        ContentPart::Text(t) => json!({"type": "text", "text": t}),
                        ContentPart::ImageRef(id) => match self.image_url(id) {
                            Some(url) => json!({"type": "image_url", "image_url": {"url": url}}),
                            None => {
                                json!({"type": "text", "text": format!("[image {id} unavailable]")})
                            }
                        },
                    })
                    .collect();
                json!({"role": "user", "content": parts})
            }
            Role::Assistant => {
                let mut v = json!({"role": "assistant", "content": m.text()});
                if !m.tool_calls.is_empty() {
                    v["content"] = Value::Null;
                    v["tool_calls"] = m
                        .tool_calls
                        .iter()
                        .map(|c| {
                            json!({
                                "id": c.id,
                                "type": "function",
                                "function": {
                                    "name": c.name,
                                    "arguments": c.arguments.to_string(),
                                }
                            })
                        })
                        .collect();
                }
                v
            }
            Role::Tool => {
                let mut text = m.text();
                for id in m.image_refs() {
                    text.push_str(&format!("\n[image {id}]"));
                }
                json!({
                    "role": "tool",
                    "tool_call_id": m.tool_call_id.clone().unwrap_or_default(),
                    "content": text,
                })
            }
        }
    }

    async fn post(&self, path: &str, body: &Value) -> Result<Value, LlmError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let mut req = self.client.post(self.cfg.url(path)).json(body);
            if let Some(key) = &self.cfg.api_key {
                req = req.bearer_auth(key);
            }
            let resp = req.send().await.map_err(|e| LlmError::ProviderError {
                status: e.status().map(|s| s.as_u16()),
                attempts: attempt,
                message: e.to_string(),
            })?;
            let status = resp.status();
            if status.is_success() {
                return resp
                    .json::<Value>()
                    .await
                    .map_err(|e| LlmError::MalformedReply(e.to_string()));
            }
            let retryable = status.as_u16() == 429 || status.is_server_error();
            if retryable && attempt <= self.cfg.max_retries {
                tokio::time::sleep(self.cfg.backoff * 2u32.pow(attempt - 1)).await;
                continue;
            }
            let text = resp.text().await.unwrap_or_default();
            return Err(LlmError::ProviderError {
                status: Some(status.as_u16()),
                attempts: attempt,
                message: text,
            });
        }
    }

    pub fn parse_reply(v: &Value) -> Result<ModelReply, LlmError> {
        let msg = v
            .pointer("/choices/0/message")
            .ok_or_else(|| LlmError::MalformedReply("no choices[0].message".into()))?;
        if let Some(calls) = msg.get("tool_calls").and_then(Value::as_array) {
            if !calls.is_empty() {
                let mut out = Vec::new();
                for c in calls {
                    let id = c["id"].as_str().unwrap_or_default();
                    let name = c
                        .pointer("/function/name")
                        .and_then(Value::as_str)
                        .ok_or_else(|| LlmError::MalformedReply("tool call without name".into()))?;
                    let raw = c
                        .pointer("/function/arguments")
                        .and_then(Value::as_str)
                        .unwrap_or("{}");
                    let args: Value = if raw.trim().is_empty() {
                        json!({})
                    } else {
                        serde_json::from_str(raw).map_err(|e| {
                            LlmError::MalformedReply(format!("arguments of {name}: {e}"))
                        })?
                    };
                    out.push(ToolCall::new(id, name, args));
                }
                return Ok(ModelReply::ToolCalls(out));
            }
        }
        match msg.get("content").and_then(Value::as_str) {
            Some(t) => Ok(ModelReply::FinalText(t.to_string())),
            None => Err(LlmError::MalformedReply(
                "neither content nor tool_calls".into(),
            )),
        }
    }

    pub async fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, LlmError> {
        let v = self
            .post(
                "embeddings",
                &json!({"model": self.cfg.embedding_model, "input": texts}),
            )
            .await?;
        let data = v["data"]
            .as_array()
            .ok_or_else(|| LlmError::MalformedReply("no data array".into()))?;
        let mut rows: Vec<(u64, Vec<f64>)> = data
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let idx = d["index"].as_u64().unwrap_or(i as u64);
                let vec = d["embedding"]
                    .as_array()
                    .map(|a| a.iter().filter_map(Value::as_f64).collect())
                    .unwrap_or_default();
                (idx, vec)
            })
            .collect();
        rows.sort_by_key(|r| r.0);
        if rows.len() != texts.len() {
            return Err(LlmError::MalformedReply(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                rows.len()
            )));
        }
        Ok(rows.into_iter().map(|r| r.1).collect())
    }
}

impl ChatProvider for HttpProvider {
    fn name(&self) -> &str {
        &self.cfg.model
    }

    fn complete<'a>(
        &'a self,
        messages: &'a [ChatMessage],
        tools: &'a [ToolSpec],
        params: &'a CompletionParams,
    ) -> BoxFuture<'a, Result<ModelReply, LlmError>> {
        async move {
            let body = self.request_body(messages, tools, params);
            let v = self.post("chat/completions", &body).await?;
            Self::parse_reply(&v)
        }
        .boxed()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_joining() {
        assert_eq!(
            HttpConfig::new("http://h:1/", "m").url("chat/completions"),
            "http://h:1/v1/chat/completions"
        );
        assert_eq!(
            HttpConfig::new("http://h:1/v1", "m").url("embeddings"),
            "http://h:1/v1/embeddings"
        );
    }

    #[test]
    fn parse_both_reply_kinds() {
        let text = json!({"choices": [{"message": {"role": "assistant", "content": "hi"}}]});
        assert_eq!(
            HttpProvider::parse_reply(&text).unwrap(),
            ModelReply::FinalText("hi".into())
        );
        let calls = json!({"choices": [{"message": {"content": null, "tool_calls": [
            {"id": "c1", "type": "function", "function": {"name": "f", "arguments": "{\"a\":1}"}}
        ]}}]});
        assert_eq!(
            HttpProvider::parse_reply(&calls).unwrap(),
            ModelReply::ToolCalls(vec![ToolCall::new("c1", "f", json!({"a": 1}))])
        );
        let bad = json!({"choices": [{"message": {"tool_calls": [
            {"id": "c1", "function": {"name": "f", "arguments": "{oops"}}
        ]}}]});
        assert!(matches!(
            HttpProvider::parse_reply(&bad),
            Err(LlmError::MalformedReply(_))
        ));
        assert!(HttpProvider::parse_reply(&json!({})).is_err());
    }

    #[test]
    fn body_shape() {
        let p = HttpProvider::new(HttpConfig::new("http://x", "gpt-test"))
            .unwrap()
            .with_images(Arc::new(|id: &str| {
                (id == "self").then(|| ("image/png".to_string(), vec![1, 2, 3]))
            }));
        let spec = ToolSpec::new("f", "d").unwrap();
        let msgs = [
            ChatMessage::system("sys"),
            ChatMessage::user_parts(vec![
                ContentPart::text("look"),
                ContentPart::ImageRef("self".into()),
            ]),
            ChatMessage::assistant_calls(vec![ToolCall::new("c1", "f", json!({}))]),
        ];
        let b = p.request_body(&msgs, &[spec], &CompletionParams::default());
        assert_eq!(b["tool_choice"], "auto");
        assert_eq!(b["tools"][0]["type"], "function");
        assert_eq!(b["tools"][0]["function"]["name"], "f");
        assert_eq!(
            b["messages"][1]["content"][1]["image_url"]["url"],
            "data:image/png;base64,AQID"
        );
        assert_eq!(
            b["messages"][2]["tool_calls"][0]["function"]["arguments"],
            "{}"
        );
    }
}
