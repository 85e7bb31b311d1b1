//! The tool loop: model call, tool dispatch, repeat until an answer.

use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::agent::model::{ChatMessage, ChatModel, ChatRequest, ModelError};
use crate::agent::tools::ToolRuntime;
use crate::item::ResolvedTestItem;
use crate::jail::Jail;

pub const DEFAULT_STEP_LIMIT: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndState {
    Answered,
    StepLimit,
    TransportError,
}

impl EndState {
    pub fn as_str(self) -> &'static str {
        match self {
            EndState::Answered => "answered",
            EndState::StepLimit => "step_limit",
            EndState::TransportError => "transport_error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts per model request, including the first.
    pub attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, base_delay: Duration::from_secs(2), max_delay: Duration::from_secs(60) }
    }
}

impl RetryPolicy {
    pub fn none() -> RetryPolicy {
        RetryPolicy { attempts: 1, base_delay: Duration::ZERO, max_delay: Duration::ZERO }
    }

    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    /// Maximum model calls in one conversation.
    pub max_steps: u32,
    pub retry: RetryPolicy,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_steps: DEFAULT_STEP_LIMIT, retry: RetryPolicy::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationRecord {
    pub question_id: u32,
    pub sample_index: u32,
    pub run_id: u32,
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Whole loop, model calls and tool execution included.
    pub wall_time: f64,
    /// Time spent waiting on the model only.
    pub request_latency: f64,
    /// Model calls made.
    pub steps: u32,
    pub tool_calls: u32,
    pub end_state: EndState,
    /// Text of the final assistant message; empty unless answered.
    pub final_message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn request_with_retry<M: ChatModel + ?Sized>(
    model: &mut M,
    request: &ChatRequest,
    retry: &RetryPolicy,
) -> Result<crate::agent::model::ChatResponse, ModelError> {
    let mut attempt = 1;
    loop {
        match model.complete(request) {
            Ok(r) => return Ok(r),
            Err(e) if e.is_retryable() && attempt < retry.attempts => {
                log::warn!("model request failed (attempt {attempt}): {e}");
                thread::sleep(retry.delay(attempt));
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Drive one conversation for `item` inside `jail`.
///
/// Requests are retried as-is: the message list is rebuilt client-side, so a
/// retry never repeats a tool call.
pub fn run_conversation<M: ChatModel + ?Sized>(
    item: &ResolvedTestItem,
    model_name: &str,
    model: &mut M,
    tools: &ToolRuntime,
    jail: &Jail,
    limits: &Limits,
) -> ConversationRecord {
    let start = Instant::now();
    let mut messages = vec![
        ChatMessage::system(tools.profile().system_prompt.trim_end()),
        ChatMessage::user(item.question.clone()),
    ];
    let schemas = tools.schemas();
    let mut rec = ConversationRecord {
        question_id: item.key.question_id,
        sample_index: item.key.sample_index,
        run_id: item.key.run_id,
        model: model_name.to_string(),
        messages: Vec::new(),
        input_tokens: 0,
        output_tokens: 0,
        wall_time: 0.0,
        request_latency: 0.0,
        steps: 0,
        tool_calls: 0,
        end_state: EndState::StepLimit,
        final_message: String::new(),
        error: None,
    };

    while rec.steps < limits.max_steps {
        let request = ChatRequest { messages: messages.clone(), tools: schemas.clone() };
        let t = Instant::now();
        let response = request_with_retry(model, &request, &limits.retry);
        rec.request_latency += t.elapsed().as_secs_f64();
        rec.steps += 1;
        let response = match response {
            Ok(r) => r,
            Err(e) => {
                rec.end_state = EndState::TransportError;
                rec.error = Some(e.to_string());
                break;
            }
        };
        rec.input_tokens += response.usage.input_tokens;
        rec.output_tokens += response.usage.output_tokens;
        let msg = response.message;
        if msg.tool_calls.is_empty() {
            rec.final_message = msg.text().to_string();
            rec.end_state = EndState::Answered;
            messages.push(msg);
            break;
        }
        let calls = msg.tool_calls.clone();
        messages.push(msg);
        for call in calls {
            rec.tool_calls += 1;
            let out = tools.dispatch(jail, &call.function.name, &call.function.arguments);
            messages.push(ChatMessage::tool(call.id, out));
        }
    }

    rec.messages = messages;
    rec.wall_time = start.elapsed().as_secs_f64();
    rec
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let r = RetryPolicy { attempts: 5, base_delay: Duration::from_secs(1), max_delay: Duration::from_secs(5) };
        assert_eq!(r.delay(1), Duration::from_secs(1));
        assert_eq!(r.delay(2), Duration::from_secs(2));
        assert_eq!(r.delay(3), Duration::from_secs(4));
        assert_eq!(r.delay(4), Duration::from_secs(5));
        assert_eq!(r.delay(40), Duration::from_secs(5));
    }
}
