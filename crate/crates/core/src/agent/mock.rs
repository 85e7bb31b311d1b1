//! Deterministic stand-in models for offline runs and tests.
//!
//! A mock is built per item from its resolved expectations. Answer-only
//! tasks get a single assistant turn; file tasks go through the real tool
//! registry (create_directory, write_file) before the final answer.

use std::path::Path;

use serde_json::json;

use crate::agent::model::{ChatMessage, ChatModel, ChatRequest, ChatResponse, ModelError, Role, ToolCall, Usage};
use crate::item::ResolvedTestItem;
use crate::suite::ScoringType;
use crate::template::{fnv1a64, splitmix64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MockPolicy {
    /// Always does the task correctly.
    Perfect,
    /// Answers immediately with a non-answer.
    Null,
    /// Perfect on a seeded fraction `p` of items, null on the rest.
    Noisy(f64),
    /// Calls a tool forever; exercises the step limit.
    Looping,
}

impl MockPolicy {
    /// `perfect`, `null`, `looping` or `noisy:<p>`.
    pub fn parse(s: &str) -> Option<MockPolicy> {
        match s {
            "perfect" => Some(MockPolicy::Perfect),
            "null" => Some(MockPolicy::Null),
            "looping" => Some(MockPolicy::Looping),
            _ => {
                let p: f64 = s.strip_prefix("noisy:")?.parse().ok()?;
                (0.0..=1.0).contains(&p).then_some(MockPolicy::Noisy(p))
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            MockPolicy::Perfect => "perfect".into(),
            MockPolicy::Null => "null".into(),
            MockPolicy::Looping => "looping".into(),
            MockPolicy::Noisy(p) => format!("noisy:{p}"),
        }
    }
}

pub const NULL_ANSWER: &str = "I cannot answer this.";

/// Uniform in [0, 1) from a seed and the item key.
fn unit(seed: u64, item: &ResolvedTestItem) -> f64 {
    let h = splitmix64(seed ^ fnv1a64(&item.qs_id) ^ splitmix64(item.key.run_id as u64));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

pub struct MockModel {
    script: Vec<ChatMessage>,
    looping: bool,
    next: usize,
}

impl MockModel {
    pub fn new(policy: MockPolicy, item: &ResolvedTestItem, seed: u64) -> MockModel {
        let behave = match policy {
            MockPolicy::Perfect => true,
            MockPolicy::Null | MockPolicy::Looping => false,
            MockPolicy::Noisy(p) => unit(seed, item) < p,
        };
        let script = if behave { perfect_script(item) } else { vec![ChatMessage::assistant(NULL_ANSWER)] };
        MockModel { script, looping: policy == MockPolicy::Looping, next: 0 }
    }
}

fn call(i: usize, name: &str, args: serde_json::Value) -> ChatMessage {
    ChatMessage::assistant_calls(None, vec![ToolCall::new(format!("call_{i}"), name, &args)])
}

fn perfect_script(item: &ResolvedTestItem) -> Vec<ChatMessage> {
    let mut calls: Vec<(&str, serde_json::Value)> = Vec::new();
    let mkfile = |calls: &mut Vec<(&str, serde_json::Value)>, path: &str, content: &str| {
        if let Some(parent) = Path::new(path).parent() {
            calls.push(("create_directory", json!({ "path": parent })));
        }
        calls.push(("write_file", json!({ "path": path, "content": content })));
    };
    let expected = item.expected.clone().unwrap_or_default();
    let answer = match item.scoring_type {
        ScoringType::Stringmatch | ScoringType::Jsonmatch => expected,
        ScoringType::ReadfileStringmatch | ScoringType::ReadfileJsonmatch => {
            if let Some(f) = &item.file_to_read {
                mkfile(&mut calls, f, &expected);
            }
            "Done.".into()
        }
        ScoringType::FilesExist => {
            for f in &item.files_to_check {
                mkfile(&mut calls, f, "");
            }
            "Done.".into()
        }
        ScoringType::DirectoryStructure => {
            for e in &item.expected_structure {
                match e.strip_suffix('/') {
                    Some(d) => calls.push(("create_directory", json!({ "path": d }))),
                    None => mkfile(&mut calls, e, ""),
                }
            }
            "Done.".into()
        }
    };
    let mut script: Vec<ChatMessage> = calls.into_iter().enumerate().map(|(i, (n, a))| call(i, n, a)).collect();
    script.push(ChatMessage::assistant(answer));
    script
}

impl ChatModel for MockModel {
    fn complete(&mut self, request: &ChatRequest) -> Result<ChatResponse, ModelError> {
        let message = if self.looping {
            call(self.next, "list_directory", json!({}))
        } else {
            self.script.get(self.next).cloned().unwrap_or_else(|| ChatMessage::assistant(NULL_ANSWER))
        };
        self.next += 1;
        // Rough token counts, deterministic in the transcript.
        let input: usize = request.messages.iter().map(|m| m.text().len()).sum();
        let output = message.text().len()
            + message.tool_calls.iter().map(|c| c.function.arguments.len()).sum::<usize>();
        debug_assert_eq!(message.role, Role::Assistant);
        Ok(ChatResponse {
            message,
            usage: Usage { input_tokens: (input / 4) as u64 + 1, output_tokens: (output / 4) as u64 + 1 },
        })
    }
}
