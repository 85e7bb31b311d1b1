//! Agent runtime: tool registry, jailed execution, model clients and the
//! conversation loop.

pub mod code;
pub mod conversation;
pub mod http;
pub mod mock;
pub mod model;
pub mod profile;
pub mod tools;

pub use conversation::{run_conversation, ConversationRecord, EndState, Limits, RetryPolicy, DEFAULT_STEP_LIMIT};
pub use mock::{MockModel, MockPolicy};
pub use model::{ChatMessage, ChatModel, ChatRequest, ChatResponse, ModelError, Usage};
pub use profile::ToolProfile;
pub use tools::ToolRuntime;
