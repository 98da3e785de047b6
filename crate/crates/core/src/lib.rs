//! Zero-shot dialogue state tracking through LLM function calling.
//!
//! Each task-oriented-dialogue domain is modeled as a callable function:
//! domain schemas are rendered as function specifications, a chat model is
//! prompted in two stages (function selection, then argument generation),
//! structured function calls are parsed out of the raw generation, and the
//! accumulated dialogue state is scored against gold annotations.
//!
//! Module map:
//! - [`schema`]: domain schemas and their JSON / natural-language renderings
//! - [`dialogue`]: dialogue state, function calls, conversation context
//! - [`prompt`]: system-prompt assembly and chat-template serialization
//! - [`backend`]: completion backends (HTTP, record/replay, scripted mock)
//! - [`parse`]: extraction and repair of calls from model output, value
//!   normalization
//! - [`tracker`]: the per-turn two-stage pipeline and dialogue runner
//! - [`eval`]: dataset ingestion, JGA / slot F1 / Success, report building
//! - [`export`]: fine-tuning data emission with loss-mask spans

pub mod backend;
pub mod dialogue;
pub mod eval;
pub mod export;
pub mod parse;
pub mod prompt;
pub mod schema;
pub mod tracker;
