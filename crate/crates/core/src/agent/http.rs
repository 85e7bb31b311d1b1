//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agent::model::{ChatMessage, ChatModel, ChatRequest, ChatResponse, ModelError, Role, ToolCall, Usage};

pub const API_KEY_ENV: &str = "SANDBENCH_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpModelConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    /// Model name sent in the request body.
    pub model: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    pub timeout_secs: u64,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub max_tokens: Option<u32>,
}

impl HttpModelConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> HttpModelConfig {
        HttpModelConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            timeout_secs: 300,
            temperature: None,
            max_tokens: None,
        }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

pub struct HttpModel {
    config: HttpModelConfig,
    agent: ureq::Agent,
}

impl HttpModel {
    pub fn new(config: HttpModelConfig) -> HttpModel {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        HttpModel { config, agent }
    }

    pub fn body(&self, request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": request.messages,
        });
        if !request.tools.is_empty() {
            body["tools"] = json!(request.tools);
        }
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(m) = self.config.max_tokens {
            body["max_tokens"] = json!(m);
        }
        body
    }
}

impl ChatModel for HttpModel {
    fn complete(&mut self, request: &ChatRequest) -> Result<ChatResponse, ModelError> {
        let mut req = self.agent.post(self.config.endpoint()).header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(self.body(request)).map_err(|e| ModelError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(64 * 1024 * 1024)
            .read_to_string()
            .map_err(|e| ModelError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(ModelError::Status { status, body: text.chars().take(2000).collect() });
        }
        parse_response(&text)
    }
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<Value>,
    #[serde(default)]
    tool_calls: Option<Vec<ToolCall>>,
}

/// Parse a chat-completions response body.
pub fn parse_response(text: &str) -> Result<ChatResponse, ModelError> {
    let v: Value = serde_json::from_str(text).map_err(|e| ModelError::Protocol(format!("not JSON: {e}")))?;
    let msg = v
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .ok_or_else(|| ModelError::Protocol("missing choices[0].message".into()))?;
    let wire: WireMessage =
        serde_json::from_value(msg.clone()).map_err(|e| ModelError::Protocol(format!("bad message: {e}")))?;
    let content = match wire.content {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s),
        // Content-part arrays: concatenate the text parts.
        Some(Value::Array(parts)) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
        ),
        Some(other) => return Err(ModelError::Protocol(format!("unexpected content {other}"))),
    };
    let usage = v.get("usage");
    let tok = |keys: [&str; 2]| {
        keys.iter()
            .find_map(|k| usage.and_then(|u| u.get(*k)).and_then(Value::as_u64))
            .unwrap_or(0)
    };
    Ok(ChatResponse {
        message: ChatMessage {
            role: Role::Assistant,
            content,
            tool_calls: wire.tool_calls.unwrap_or_default(),
            tool_call_id: None,
        },
        usage: Usage {
            input_tokens: tok(["prompt_tokens", "input_tokens"]),
            output_tokens: tok(["completion_tokens", "output_tokens"]),
        },
    })
}
