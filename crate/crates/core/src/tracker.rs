//! The per-turn pipeline: function selection, argument generation, state
//! update.
//!
//! Decomposed mode issues two completions per turn (one when an oracle
//! domain bypasses selection); monolithic mode issues a single completion
//! against a prompt embedding every function specification. Within one
//! dialogue turns run strictly sequentially; separate dialogues are
//! independent units of work.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{
    Backend, BackendError, CompletionRequest, GenerationParams, PromptInput,
};
use crate::dialogue::{
    update_state, AssistantOutput, DialogueContext, DialogueState, FunctionCall,
};
use crate::parse::{
    extract_domain, extract_function_call, snap_function_name, validate_call_with,
    ValidateOptions,
};
use crate::prompt::{
    apply_chat_template, build_argument_messages, build_monolithic_messages,
    build_selection_messages, count_prompt_units, ChatMessage, ChatTemplate,
    ExampleConversation, PipelineMode, PromptConfig, PromptError,
};
use crate::schema::SchemaCatalog;

/// What to do when the selection stage yields no usable function name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainFallback {
    /// Reuse the function of the most recent call in the context.
    #[default]
    ReusePrevious,
    /// Leave the turn without a call.
    None,
}

/// Everything the pipeline needs for one run.
#[derive(Clone)]
pub struct TrackerConfig {
    pub prompt: PromptConfig,
    pub backend: Arc<dyn Backend>,
    pub template: ChatTemplate,
    pub catalog: SchemaCatalog,
    /// Per-domain demonstration conversations, first-n selection order.
    pub examples: BTreeMap<String, Vec<ExampleConversation>>,
    pub fallback: DomainFallback,
    pub params: GenerationParams,
    pub model_id: String,
    /// Pre-template messages into raw text for completion-style endpoints.
    pub raw_endpoint: bool,
    pub validate: ValidateOptions,
}

impl TrackerConfig {
    pub fn new(
        backend: Arc<dyn Backend>,
        template: ChatTemplate,
        catalog: SchemaCatalog,
    ) -> Self {
        TrackerConfig {
            prompt: PromptConfig::default(),
            backend,
            template,
            catalog,
            examples: BTreeMap::new(),
            fallback: DomainFallback::default(),
            params: GenerationParams::default(),
            model_id: "unspecified".to_string(),
            raw_endpoint: false,
            validate: ValidateOptions::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrackerError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("oracle domain \"{0}\" is not in the catalog")]
    UnknownOracleDomain(String),
    #[error("dialogue has no turns")]
    EmptyDialogue,
}

/// Prompt unit counts captured per stage.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitCounts {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection_prompt: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub argument_prompt: Option<usize>,
    /// Units of the stage-2 system prompt alone; independent of catalog
    /// size in decomposed mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub argument_system: Option<usize>,
}

impl UnitCounts {
    pub fn total(&self) -> usize {
        self.selection_prompt.unwrap_or(0) + self.argument_prompt.unwrap_or(0)
    }
}

/// Outcome of one tracked turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnResult {
    pub selected_function: Option<String>,
    pub call: Option<FunctionCall>,
    pub state_after: DialogueState,
    pub response: String,
    pub warnings: Vec<String>,
    pub units: UnitCounts,
    /// Backend failure carried in the result; the state is unchanged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn messages_units(messages: &[ChatMessage]) -> usize {
    messages.iter().map(|m| count_prompt_units(&m.content)).sum()
}

fn system_units(messages: &[ChatMessage]) -> usize {
    messages
        .first()
        .filter(|m| m.role == crate::prompt::Role::System)
        .map(|m| count_prompt_units(&m.content))
        .unwrap_or(0)
}

fn complete(
    cfg: &TrackerConfig,
    messages: Vec<ChatMessage>,
    params: GenerationParams,
) -> Result<String, BackendError> {
    let input = if cfg.raw_endpoint {
        let text = apply_chat_template(&messages, &cfg.template)
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        PromptInput::Raw(text)
    } else {
        PromptInput::Chat(messages)
    };
    let request = CompletionRequest {
        input,
        params,
        model_id: cfg.model_id.clone(),
    };
    cfg.backend.complete(&request).map(|r| r.text)
}

fn selection_params(base: &GenerationParams) -> GenerationParams {
    let mut params = base.clone();
    params.max_tokens = params.max_tokens.min(16);
    if !params.stop_sequences.iter().any(|s| s == "</domain>") {
        params.stop_sequences.push("</domain>".to_string());
    }
    params
}

/// Run the pipeline for the pending utterance of `context`.
pub fn track_turn(
    context: &DialogueContext,
    state: &DialogueState,
    cfg: &TrackerConfig,
) -> Result<TurnResult, TrackerError> {
    if context.pending_user().is_none() {
        return Err(TrackerError::Prompt(PromptError::NoPendingUtterance));
    }
    if let Some(oracle) = &cfg.prompt.oracle_domain {
        if !cfg.catalog.contains(oracle) {
            return Err(TrackerError::UnknownOracleDomain(oracle.clone()));
        }
    }
    match cfg.prompt.mode {
        PipelineMode::Decomposed => track_decomposed(context, state, cfg),
        PipelineMode::Monolithic => track_monolithic(context, state, cfg),
    }
}

fn error_result(state: &DialogueState, units: UnitCounts, warnings: Vec<String>, err: BackendError) -> TurnResult {
    TurnResult {
        selected_function: None,
        call: None,
        state_after: state.clone(),
        response: String::new(),
        warnings,
        units,
        error: Some(err.to_string()),
    }
}

fn track_decomposed(
    context: &DialogueContext,
    state: &DialogueState,
    cfg: &TrackerConfig,
) -> Result<TurnResult, TrackerError> {
    let mut warnings = Vec::new();
    let mut units = UnitCounts::default();

    // Stage 1: function selection (bypassed entirely by the oracle domain).
    let selected = match &cfg.prompt.oracle_domain {
        Some(oracle) => Some(oracle.clone()),
        None => {
            let messages = build_selection_messages(&cfg.catalog, context, &cfg.prompt)?;
            units.selection_prompt = Some(messages_units(&messages));
            let text = match complete(cfg, messages, selection_params(&cfg.params)) {
                Ok(text) => text,
                Err(err) => return Ok(error_result(state, units, warnings, err)),
            };
            let (raw, domain_warnings) = extract_domain(&text);
            for w in domain_warnings {
                warnings.push(format!("selection: {w:?}"));
            }
            let snapped = raw.as_deref().and_then(|name| {
                let snapped = snap_function_name(name, &cfg.catalog);
                if snapped.is_none() {
                    warnings.push(format!("selection: \"{name}\" is not a known function"));
                }
                snapped
            });
            match snapped {
                Some(name) => Some(name),
                None => match cfg.fallback {
                    DomainFallback::ReusePrevious => {
                        let previous = context
                            .last_called_function()
                            .and_then(|f| snap_function_name(f, &cfg.catalog));
                        if let Some(prev) = &previous {
                            warnings.push(format!(
                                "selection: no usable function name, reusing previous \"{prev}\""
                            ));
                        }
                        previous
                    }
                    DomainFallback::None => None,
                },
            }
        }
    };

    let Some(selected) = selected else {
        // No selection and no fallback: the turn carries no call.
        warnings.push("selection: no function selected, state unchanged".to_string());
        return Ok(TurnResult {
            selected_function: None,
            call: None,
            state_after: state.clone(),
            response: String::new(),
            warnings,
            units,
            error: None,
        });
    };

    // Stage 2: argument generation for the selected function.
    let spec = cfg
        .catalog
        .get(&selected)
        .expect("selected name snapped to catalog");
    let available = cfg.examples.get(&selected).map(Vec::as_slice).unwrap_or(&[]);
    let mut prompt_cfg = cfg.prompt.clone();
    if available.len() < prompt_cfg.n_shot {
        warnings.push(format!(
            "examples: requested {} but only {} available for \"{selected}\"",
            prompt_cfg.n_shot,
            available.len()
        ));
        prompt_cfg.n_shot = available.len();
    }
    let messages = build_argument_messages(spec, context, available, &prompt_cfg)?;
    units.argument_prompt = Some(messages_units(&messages));
    units.argument_system = Some(system_units(&messages));
    let text = match complete(cfg, messages, cfg.params.clone()) {
        Ok(text) => text,
        Err(err) => {
            let mut result = error_result(state, units, warnings, err);
            result.selected_function = Some(selected);
            return Ok(result);
        }
    };

    let (call, response) = resolve_call(&text, Some(&selected), cfg, &mut warnings);
    let state_after = match &call {
        Some(call) => update_state(state, call),
        None => state.clone(),
    };
    Ok(TurnResult {
        selected_function: Some(selected),
        call,
        state_after,
        response,
        warnings,
        units,
        error: None,
    })
}

fn track_monolithic(
    context: &DialogueContext,
    state: &DialogueState,
    cfg: &TrackerConfig,
) -> Result<TurnResult, TrackerError> {
    let mut warnings = Vec::new();
    let mut units = UnitCounts::default();

    let messages = build_monolithic_messages(&cfg.catalog, context, &cfg.prompt)?;
    units.argument_prompt = Some(messages_units(&messages));
    units.argument_system = Some(system_units(&messages));
    let text = match complete(cfg, messages, cfg.params.clone()) {
        Ok(text) => text,
        Err(err) => return Ok(error_result(state, units, warnings, err)),
    };

    // The call's own function field supplies the domain.
    let (call, response) = resolve_call(&text, None, cfg, &mut warnings);
    let selected_function = call.as_ref().map(|c| c.function.clone());
    let state_after = match &call {
        Some(call) => update_state(state, call),
        None => state.clone(),
    };
    Ok(TurnResult {
        selected_function,
        call,
        state_after,
        response,
        warnings,
        units,
        error: None,
    })
}

/// Parse the generation, reconcile the call's function field with the
/// stage-1 selection, and validate arguments against the winning spec.
fn resolve_call(
    text: &str,
    selected: Option<&str>,
    cfg: &TrackerConfig,
    warnings: &mut Vec<String>,
) -> (Option<FunctionCall>, String) {
    let outcome = extract_function_call(text);
    for w in &outcome.warnings {
        warnings.push(format!("parse: {w:?}"));
    }
    let Some(mut call) = outcome.call else {
        return (None, outcome.response);
    };

    // The call's function field wins when it names a catalog function; an
    // unknown name is assumed to be a mangled spelling of the selection.
    let resolved = match snap_function_name(&call.function, &cfg.catalog) {
        Some(name) => {
            if let Some(selected) = selected {
                if name != selected {
                    warnings.push(format!(
                        "call names \"{name}\" but stage 1 selected \"{selected}\"; keeping the call's function"
                    ));
                }
            }
            Some(name)
        }
        None => match selected {
            Some(selected) => {
                warnings.push(format!(
                    "call names unknown function \"{}\"; coercing to selected \"{selected}\"",
                    call.function
                ));
                Some(selected.to_string())
            }
            None => {
                warnings.push(format!(
                    "call names unknown function \"{}\" and no selection exists; dropping call",
                    call.function
                ));
                None
            }
        },
    };
    let Some(function) = resolved else {
        return (None, outcome.response);
    };
    call.function = function;

    let spec = cfg.catalog.get(&call.function).expect("resolved to catalog");
    let (validated, validate_warnings) = validate_call_with(&call, spec, cfg.validate);
    for w in validate_warnings {
        warnings.push(format!("validate: {w:?}"));
    }
    (Some(validated), outcome.response)
}

/// One dialogue's worth of input: user utterances, each optionally paired
/// with the gold assistant response for DST-only evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueInput {
    pub dialogue_id: String,
    pub turns: Vec<TurnInput>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnInput {
    pub user: String,
    /// When present, the context carries this gold response (with the
    /// predicted call embedded); when absent, the model's own response is
    /// used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_response: Option<String>,
}

/// Iterate [`track_turn`] over a dialogue, threading state. Per-turn errors
/// are carried in the results; later turns still run.
pub fn run_dialogue(
    dialogue: &DialogueInput,
    cfg: &TrackerConfig,
) -> Result<Vec<TurnResult>, TrackerError> {
    if dialogue.turns.is_empty() {
        return Err(TrackerError::EmptyDialogue);
    }
    let mut context = DialogueContext::new();
    let mut state = DialogueState::new();
    let mut results = Vec::with_capacity(dialogue.turns.len());
    for turn in &dialogue.turns {
        context.push_pending(&turn.user);
        let result = track_turn(&context, &state, cfg)?;
        state = result.state_after.clone();
        let response = match &turn.gold_response {
            Some(gold) => gold.clone(),
            None => result.response.clone(),
        };
        context.complete_pending(AssistantOutput {
            call: result.call.clone(),
            response,
        });
        results.push(result);
    }
    Ok(results)
}

/// One line of the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub dialogue_id: String,
    pub turn: usize,
    pub selected: Option<String>,
    pub call: Option<FunctionCall>,
    pub state: DialogueState,
    pub response: String,
    pub warnings: Vec<String>,
    pub units: UnitCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ManifestRecord {
    pub fn from_result(dialogue_id: &str, turn: usize, result: &TurnResult) -> Self {
        ManifestRecord {
            dialogue_id: dialogue_id.to_string(),
            turn,
            selected: result.selected_function.clone(),
            call: result.call.clone(),
            state: result.state_after.clone(),
            response: result.response.clone(),
            warnings: result.warnings.clone(),
            units: result.units.clone(),
            error: result.error.clone(),
        }
    }
}
