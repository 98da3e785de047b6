//! Core conversation types: dialogue state, function calls, and context.
//!
//! State is a map from domain name to slot/value pairs. Applying a turn's
//! function call wholly replaces the entry for the called domain (the call
//! carries the full tracked slot set for its domain) and leaves every other
//! domain untouched.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Map from domain name to slot -> value. Serializes as a JSON object with
/// keys sorted lexicographically, which is the canonical form used in
/// fixtures and eval dumps.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DialogueState(pub BTreeMap<String, BTreeMap<String, String>>);

impl DialogueState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn domain(&self, name: &str) -> Option<&BTreeMap<String, String>> {
        self.0.get(name)
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Flatten to (domain, slot, value) triples in sorted order.
    pub fn triples(&self) -> Vec<(&str, &str, &str)> {
        self.0
            .iter()
            .flat_map(|(d, slots)| {
                slots
                    .iter()
                    .map(move |(s, v)| (d.as_str(), s.as_str(), v.as_str()))
            })
            .collect()
    }

    /// The state restricted to one domain.
    pub fn restricted_to(&self, domain: &str) -> DialogueState {
        let mut out = BTreeMap::new();
        if let Some(slots) = self.0.get(domain) {
            if !slots.is_empty() {
                out.insert(domain.to_string(), slots.clone());
            }
        }
        DialogueState(out)
    }
}

/// One predicted function call: the selected domain function and its
/// argument map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionCall {
    pub function: String,
    pub arguments: BTreeMap<String, String>,
}

impl FunctionCall {
    pub fn new(function: impl Into<String>) -> Self {
        FunctionCall {
            function: function.into(),
            arguments: BTreeMap::new(),
        }
    }

    pub fn with_arg(mut self, slot: impl Into<String>, value: impl Into<String>) -> Self {
        self.arguments.insert(slot.into(), value.into());
        self
    }
}

/// What the assistant produced on one turn: an optional embedded call plus
/// the surface response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssistantOutput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<FunctionCall>,
    pub response: String,
}

/// One completed exchange. The assistant side is `None` only while a turn is
/// pending (tracked mid-pipeline).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub user: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assistant: Option<AssistantOutput>,
}

/// Ordered turns of a conversation. The turn index is implicit by position.
/// Serializes as a bare array of turns.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DialogueContext {
    pub turns: Vec<Turn>,
}

impl DialogueContext {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a completed turn.
    pub fn push(&mut self, user: impl Into<String>, assistant: AssistantOutput) {
        self.turns.push(Turn {
            user: user.into(),
            assistant: Some(assistant),
        });
    }

    /// Append a user utterance awaiting an assistant output.
    pub fn push_pending(&mut self, user: impl Into<String>) {
        self.turns.push(Turn {
            user: user.into(),
            assistant: None,
        });
    }

    /// The pending user utterance, if the last turn has no assistant output.
    pub fn pending_user(&self) -> Option<&str> {
        match self.turns.last() {
            Some(Turn {
                user,
                assistant: None,
            }) => Some(user.as_str()),
            _ => None,
        }
    }

    /// Fill in the assistant output for the pending turn.
    pub fn complete_pending(&mut self, assistant: AssistantOutput) {
        if let Some(turn) = self.turns.last_mut() {
            if turn.assistant.is_none() {
                turn.assistant = Some(assistant);
            }
        }
    }

    /// The function named by the most recent call in the context, used as the
    /// reuse-previous selection fallback.
    pub fn last_called_function(&self) -> Option<&str> {
        self.turns
            .iter()
            .rev()
            .filter_map(|t| t.assistant.as_ref())
            .filter_map(|a| a.call.as_ref())
            .map(|c| c.function.as_str())
            .next()
    }
}

/// Values that stand for "this slot is not filled" and are dropped when a
/// call is applied to the state.
pub fn is_unfilled_value(value: &str) -> bool {
    let v = value.trim().to_lowercase();
    v.is_empty() || v == "none" || v == "not mentioned"
}

/// Apply a call: the entry for `call.function` is wholly replaced by the
/// call's arguments (minus unfilled values); other domains are untouched.
/// A domain whose replacement ends up empty is removed, since the state
/// stores only filled slots.
pub fn update_state(prev: &DialogueState, call: &FunctionCall) -> DialogueState {
    let mut next = prev.clone();
    let cleaned: BTreeMap<String, String> = call
        .arguments
        .iter()
        .filter(|(_, v)| !is_unfilled_value(v))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    if cleaned.is_empty() {
        next.0.remove(&call.function);
    } else {
        next.0.insert(call.function.clone(), cleaned);
    }
    next
}

/// Compare two states for equality of their normalized slot-value sets.
/// The normalizer receives (domain, slot, value) and returns the comparison
/// form of the value.
pub fn states_equal<F>(a: &DialogueState, b: &DialogueState, normalize: F) -> bool
where
    F: Fn(&str, &str, &str) -> String,
{
    normalized_triples(a, &normalize) == normalized_triples(b, &normalize)
}

fn normalized_triples<F>(state: &DialogueState, normalize: &F) -> Vec<(String, String, String)>
where
    F: Fn(&str, &str, &str) -> String,
{
    state
        .triples()
        .into_iter()
        .map(|(d, s, v)| (d.to_string(), s.to_string(), normalize(d, s, v)))
        .collect()
}
