//! Prompt assembly for the two pipeline stages.
//!
//! The system prompt stacks three blocks: the overall instruction, the
//! function specifications inside `<FUNCTIONS>` tags, and optional example
//! conversations inside `<EXAMPLES>` tags. The dialogue context is
//! serialized into chat messages whose assistant turns may embed
//! `<function_call>` spans, then flattened to raw text through a per-model
//! chat template.

use serde::{Deserialize, Serialize};

use crate::dialogue::{DialogueContext, FunctionCall};
use crate::schema::{
    render_brief_descriptions, render_spec_json, render_spec_text, FunctionSpec, SchemaCatalog,
};

/// The fixed overall instruction placed at the top of every system prompt.
pub const OVERALL_INSTRUCTION: &str = "You are a task-oriented assistant. You can use the given functions to fetch further data to help the users.";

const SELECTION_DIRECTIVE: &str = "Decide which function the user currently needs. Output only the name of the chosen function, surrounded by the special tokens <domain> and </domain>.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Where the system block lands when a template has no dedicated system
/// section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SystemPlacement {
    #[serde(rename = "standalone-message")]
    StandaloneMessage,
    #[serde(rename = "prefixed-to-first-user")]
    PrefixedToFirstUser,
}

/// Per-model chat format: matched begin/end markers per role plus the
/// generation cue appended at the end of the prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTemplate {
    pub name: String,
    pub system_begin: String,
    pub system_end: String,
    pub user_begin: String,
    pub user_end: String,
    pub assistant_begin: String,
    pub assistant_end: String,
    pub placement: SystemPlacement,
    pub generation_cue: String,
}

impl ChatTemplate {
    fn markers(&self) -> [&str; 6] {
        [
            &self.system_begin,
            &self.system_end,
            &self.user_begin,
            &self.user_end,
            &self.assistant_begin,
            &self.assistant_end,
        ]
    }
}

/// Named registry of chat templates, read-only after startup.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: Vec<ChatTemplate>,
}

/// Content escaping uses U+00B7 as the escape character: existing middle
/// dots are doubled, then a single middle dot is inserted after the first
/// character of any marker occurrence. Markers therefore never survive in
/// escaped content, which keeps template application injective. Templates
/// whose markers contain the escape character are rejected.
pub const ESCAPE_CHAR: char = '\u{00B7}';

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("instruction must not be empty")]
    EmptyInstruction,
    #[error("catalog has no functions")]
    EmptyCatalog,
    #[error("context has no pending user utterance")]
    NoPendingUtterance,
    #[error("example conversation for domain \"{example}\" does not belong to \"{expected}\"")]
    ExampleDomainMismatch { example: String, expected: String },
    #[error("{available} example conversations available but {requested} requested")]
    NotEnoughExamples { available: usize, requested: usize },
    #[error("messages contain more than one system message")]
    MultipleSystemMessages,
    #[error("unknown template \"{0}\"")]
    UnknownTemplate(String),
    #[error("template \"{name}\" is invalid: {reason}")]
    InvalidTemplate { name: String, reason: String },
    #[error("template registry parse error: {0}")]
    RegistryParse(String),
}

impl TemplateRegistry {
    /// The built-in templates. `plain` is the fixture/test default; the
    /// rest mirror widely used open-model chat formats.
    pub fn builtin() -> Self {
        let templates = vec![
            ChatTemplate {
                name: "plain".to_string(),
                system_begin: "<|system|>\n".to_string(),
                system_end: "<|end|>\n".to_string(),
                user_begin: "<|user|>\n".to_string(),
                user_end: "<|end|>\n".to_string(),
                assistant_begin: "<|assistant|>\n".to_string(),
                assistant_end: "<|end|>\n".to_string(),
                placement: SystemPlacement::StandaloneMessage,
                generation_cue: "<|assistant|>\n".to_string(),
            },
            ChatTemplate {
                name: "chatml".to_string(),
                system_begin: "<|im_start|>system\n".to_string(),
                system_end: "<|im_end|>\n".to_string(),
                user_begin: "<|im_start|>user\n".to_string(),
                user_end: "<|im_end|>\n".to_string(),
                assistant_begin: "<|im_start|>assistant\n".to_string(),
                assistant_end: "<|im_end|>\n".to_string(),
                placement: SystemPlacement::StandaloneMessage,
                generation_cue: "<|im_start|>assistant\n".to_string(),
            },
            ChatTemplate {
                name: "llama2".to_string(),
                system_begin: "<<SYS>>\n".to_string(),
                system_end: "\n<</SYS>>\n\n".to_string(),
                user_begin: "<s>[INST] ".to_string(),
                user_end: " [/INST]".to_string(),
                assistant_begin: " ".to_string(),
                assistant_end: " </s>".to_string(),
                placement: SystemPlacement::PrefixedToFirstUser,
                generation_cue: "".to_string(),
            },
            ChatTemplate {
                name: "vicuna".to_string(),
                system_begin: "".to_string(),
                system_end: "\n\n".to_string(),
                user_begin: "USER: ".to_string(),
                user_end: "\n".to_string(),
                assistant_begin: "ASSISTANT: ".to_string(),
                assistant_end: "</s>\n".to_string(),
                placement: SystemPlacement::StandaloneMessage,
                generation_cue: "ASSISTANT:".to_string(),
            },
            ChatTemplate {
                name: "zephyr".to_string(),
                system_begin: "<|system|>\n".to_string(),
                system_end: "</s>\n".to_string(),
                user_begin: "<|user|>\n".to_string(),
                user_end: "</s>\n".to_string(),
                assistant_begin: "<|assistant|>\n".to_string(),
                assistant_end: "</s>\n".to_string(),
                placement: SystemPlacement::StandaloneMessage,
                generation_cue: "<|assistant|>\n".to_string(),
            },
        ];
        TemplateRegistry { templates }
    }

    /// Parse a registry file (JSON array of template objects) and append it
    /// to the built-ins, replacing same-named entries.
    pub fn with_file(source: &str) -> Result<Self, PromptError> {
        let mut registry = Self::builtin();
        let extra: Vec<ChatTemplate> = serde_json::from_str(source)
            .map_err(|e| PromptError::RegistryParse(e.to_string()))?;
        for template in extra {
            Self::validate(&template)?;
            registry.templates.retain(|t| t.name != template.name);
            registry.templates.push(template);
        }
        Ok(registry)
    }

    fn validate(template: &ChatTemplate) -> Result<(), PromptError> {
        if template.name.is_empty() {
            return Err(PromptError::InvalidTemplate {
                name: template.name.clone(),
                reason: "empty name".to_string(),
            });
        }
        if template.markers().iter().any(|m| m.contains(ESCAPE_CHAR)) {
            return Err(PromptError::InvalidTemplate {
                name: template.name.clone(),
                reason: format!("markers must not contain the escape character {ESCAPE_CHAR:?}"),
            });
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&ChatTemplate, PromptError> {
        self.templates
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| PromptError::UnknownTemplate(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.iter().map(|t| t.name.as_str())
    }
}

/// Pipeline shape: two-stage selection + argument generation, or one
/// monolithic prompt carrying every function spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineMode {
    Decomposed,
    Monolithic,
}

/// Which rendering of the function specification goes into the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpecRendering {
    Json,
    Text,
}

/// Knobs for prompt construction, covering the ablation axes: pipeline
/// mode, spec rendering, in-context example count, previous-call inclusion,
/// and the oracle-domain bypass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub mode: PipelineMode,
    pub spec_rendering: SpecRendering,
    pub n_shot: usize,
    pub include_prev_calls: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_domain: Option<String>,
    /// Unit budget for the serialized conversation; whole earliest turns are
    /// dropped when exceeded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_context_units: Option<usize>,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            mode: PipelineMode::Decomposed,
            spec_rendering: SpecRendering::Json,
            n_shot: 0,
            include_prev_calls: true,
            oracle_domain: None,
            max_context_units: None,
        }
    }
}

/// A demonstration conversation for one domain; every assistant turn embeds
/// a call naming that domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleConversation {
    pub domain: String,
    pub turns: DialogueContext,
}

impl ExampleConversation {
    pub fn validate(&self) -> Result<(), PromptError> {
        for turn in &self.turns.turns {
            let owner = turn
                .assistant
                .as_ref()
                .and_then(|a| a.call.as_ref())
                .map(|c| c.function.as_str());
            if owner != Some(self.domain.as_str()) {
                return Err(PromptError::ExampleDomainMismatch {
                    example: owner.unwrap_or("<missing call>").to_string(),
                    expected: self.domain.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Canonical text form of an embedded call:
/// `<function_call> {json} </function_call>`.
pub fn render_function_call(call: &FunctionCall) -> String {
    let json = serde_json::json!({
        "function": call.function,
        "arguments": call.arguments,
    });
    format!("<function_call> {json} </function_call>")
}

fn assistant_content(call: Option<&FunctionCall>, response: &str, include_call: bool) -> String {
    match call {
        Some(call) if include_call => {
            if response.is_empty() {
                render_function_call(call)
            } else {
                format!("{} {}", render_function_call(call), response)
            }
        }
        _ => response.to_string(),
    }
}

/// Render an example conversation as plain `User:`/`Assistant:` lines with
/// the calls embedded.
pub fn render_example_conversation(example: &ExampleConversation) -> String {
    let mut lines = Vec::new();
    for turn in &example.turns.turns {
        lines.push(format!("User: {}", turn.user));
        if let Some(assistant) = &turn.assistant {
            lines.push(format!(
                "Assistant: {}",
                assistant_content(assistant.call.as_ref(), &assistant.response, true)
            ));
        }
    }
    lines.join("\n")
}

/// Stack instruction, `<FUNCTIONS>` block, and optional `<EXAMPLES>` block.
pub fn build_system_prompt(
    instruction: &str,
    spec_block: &str,
    examples: &[String],
) -> Result<String, PromptError> {
    if instruction.trim().is_empty() {
        return Err(PromptError::EmptyInstruction);
    }
    let mut out = format!("{instruction}\n\n<FUNCTIONS>\n{spec_block}\n</FUNCTIONS>");
    if !examples.is_empty() {
        out.push_str("\n\n<EXAMPLES>\n");
        out.push_str(&examples.join("\n\n"));
        out.push_str("\n</EXAMPLES>");
    }
    Ok(out)
}

/// Serialize the conversation: one user message per utterance, one assistant
/// message per output, calls embedded when `include_prev_calls` is set.
pub fn serialize_context(context: &DialogueContext, include_prev_calls: bool) -> Vec<ChatMessage> {
    let mut messages = Vec::new();
    for turn in &context.turns {
        messages.push(ChatMessage::user(&turn.user));
        if let Some(assistant) = &turn.assistant {
            messages.push(ChatMessage::assistant(assistant_content(
                assistant.call.as_ref(),
                &assistant.response,
                include_prev_calls,
            )));
        }
    }
    messages
}

/// Drop whole earliest turns until the serialized conversation fits the
/// unit budget. The last (pending) turn is always kept.
pub fn truncate_context(
    context: &DialogueContext,
    include_prev_calls: bool,
    max_units: usize,
) -> DialogueContext {
    let mut start = 0;
    while start + 1 < context.turns.len() {
        let window = DialogueContext {
            turns: context.turns[start..].to_vec(),
        };
        let units: usize = serialize_context(&window, include_prev_calls)
            .iter()
            .map(|m| count_prompt_units(&m.content))
            .sum();
        if units <= max_units {
            break;
        }
        start += 1;
    }
    DialogueContext {
        turns: context.turns[start..].to_vec(),
    }
}

fn context_messages(context: &DialogueContext, cfg: &PromptConfig) -> Vec<ChatMessage> {
    match cfg.max_context_units {
        Some(budget) => serialize_context(
            &truncate_context(context, cfg.include_prev_calls, budget),
            cfg.include_prev_calls,
        ),
        None => serialize_context(context, cfg.include_prev_calls),
    }
}

/// Stage-1 messages: brief function descriptions plus the instruction to
/// answer with a single `<domain>`-tagged name.
pub fn build_selection_messages(
    catalog: &SchemaCatalog,
    context: &DialogueContext,
    cfg: &PromptConfig,
) -> Result<Vec<ChatMessage>, PromptError> {
    if catalog.is_empty() {
        return Err(PromptError::EmptyCatalog);
    }
    if context.pending_user().is_none() {
        return Err(PromptError::NoPendingUtterance);
    }
    let instruction = format!("{OVERALL_INSTRUCTION}\n\n{SELECTION_DIRECTIVE}");
    let system = build_system_prompt(&instruction, &render_brief_descriptions(catalog), &[])?;
    let mut messages = vec![ChatMessage::system(system)];
    messages.extend(context_messages(context, cfg));
    Ok(messages)
}

/// Stage-2 messages: the full specification of exactly one function plus the
/// first `n_shot` example conversations for its domain.
pub fn build_argument_messages(
    spec: &FunctionSpec,
    context: &DialogueContext,
    examples: &[ExampleConversation],
    cfg: &PromptConfig,
) -> Result<Vec<ChatMessage>, PromptError> {
    if context.pending_user().is_none() {
        return Err(PromptError::NoPendingUtterance);
    }
    for example in examples {
        if example.domain != spec.name {
            return Err(PromptError::ExampleDomainMismatch {
                example: example.domain.clone(),
                expected: spec.name.clone(),
            });
        }
    }
    if examples.len() < cfg.n_shot {
        return Err(PromptError::NotEnoughExamples {
            available: examples.len(),
            requested: cfg.n_shot,
        });
    }
    let spec_block = match cfg.spec_rendering {
        SpecRendering::Json => render_spec_json(spec),
        SpecRendering::Text => render_spec_text(spec),
    };
    let rendered: Vec<String> = examples[..cfg.n_shot]
        .iter()
        .map(render_example_conversation)
        .collect();
    let system = build_system_prompt(OVERALL_INSTRUCTION, &spec_block, &rendered)?;
    let mut messages = vec![ChatMessage::system(system)];
    messages.extend(context_messages(context, cfg));
    Ok(messages)
}

/// Single-stage messages embedding the full specification of every function
/// in the catalog. No in-context examples: the monolithic mode mirrors the
/// zero-shot non-decomposed comparison.
pub fn build_monolithic_messages(
    catalog: &SchemaCatalog,
    context: &DialogueContext,
    cfg: &PromptConfig,
) -> Result<Vec<ChatMessage>, PromptError> {
    if catalog.is_empty() {
        return Err(PromptError::EmptyCatalog);
    }
    if context.pending_user().is_none() {
        return Err(PromptError::NoPendingUtterance);
    }
    let spec_block = catalog
        .functions()
        .map(|f| match cfg.spec_rendering {
            SpecRendering::Json => render_spec_json(f),
            SpecRendering::Text => render_spec_text(f),
        })
        .collect::<Vec<_>>()
        .join("\n\n");
    let system = build_system_prompt(OVERALL_INSTRUCTION, &spec_block, &[])?;
    let mut messages = vec![ChatMessage::system(system)];
    messages.extend(context_messages(context, cfg));
    Ok(messages)
}

fn escape_content(content: &str, template: &ChatTemplate) -> String {
    let mut out = content.replace(ESCAPE_CHAR, &format!("{ESCAPE_CHAR}{ESCAPE_CHAR}"));
    // Longest markers first so shorter markers cannot shadow a prefix.
    let mut markers: Vec<&str> = template.markers().into_iter().filter(|m| !m.is_empty()).collect();
    markers.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    markers.dedup();
    for marker in markers {
        if let Some(first) = marker.chars().next() {
            let rest = &marker[first.len_utf8()..];
            let replacement = format!("{first}{ESCAPE_CHAR}{rest}");
            out = out.replace(marker, &replacement);
        }
    }
    out
}

/// Flatten messages to the raw prompt string for one model format. The
/// generation cue for the assistant role is appended at the end.
pub fn apply_chat_template(
    messages: &[ChatMessage],
    template: &ChatTemplate,
) -> Result<String, PromptError> {
    let system_count = messages.iter().filter(|m| m.role == Role::System).count();
    if system_count > 1 {
        return Err(PromptError::MultipleSystemMessages);
    }
    if system_count == 1 && messages[0].role != Role::System {
        return Err(PromptError::MultipleSystemMessages);
    }

    let mut system_block: Option<String> = None;
    let mut out = String::new();
    for message in messages {
        let content = escape_content(&message.content, template);
        match message.role {
            Role::System => {
                let block = format!("{}{}{}", template.system_begin, content, template.system_end);
                match template.placement {
                    SystemPlacement::StandaloneMessage => out.push_str(&block),
                    SystemPlacement::PrefixedToFirstUser => system_block = Some(block),
                }
            }
            Role::User => {
                out.push_str(&template.user_begin);
                if let Some(block) = system_block.take() {
                    out.push_str(&block);
                }
                out.push_str(&content);
                out.push_str(&template.user_end);
            }
            Role::Assistant => {
                out.push_str(&template.assistant_begin);
                out.push_str(&content);
                out.push_str(&template.assistant_end);
            }
        }
    }
    // A prefix-placement system message with no user message to attach to
    // becomes a leading user block of its own.
    if let Some(block) = system_block {
        out.push_str(&template.user_begin);
        out.push_str(&block);
        out.push_str(&template.user_end);
    }
    out.push_str(&template.generation_cue);
    Ok(out)
}

/// Whitespace-delimited unit count: a deterministic, tokenizer-independent
/// length proxy. Monotone under concatenation.
pub fn count_prompt_units(text: &str) -> usize {
    text.split_whitespace().count()
}
