//! Extraction of structured output from raw model text.
//!
//! Two tagged spans are recognized: `<domain>...</domain>` from the function
//! selection stage and `<function_call>...</function_call>` from the argument
//! generation stage. Both extractors are total: malformed input degrades to
//! an absent result plus warnings, never a panic.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dialogue::FunctionCall;
use crate::schema::{FunctionSpec, SchemaCatalog, SlotKind, SlotSpec};

pub const DOMAIN_OPEN: &str = "<domain>";
pub const DOMAIN_CLOSE: &str = "</domain>";
pub const CALL_OPEN: &str = "<function_call>";
pub const CALL_CLOSE: &str = "</function_call>";

/// Every deviation from a clean parse is recorded as one of these.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseWarning {
    /// An argument key not present in the function spec was dropped.
    UnknownSlot { slot: String },
    /// A categorical value outside the allowed set was kept but flagged.
    BadEnum { slot: String, value: String },
    /// The JSON body only parsed after trailing-comma/brace repair.
    RepairedJson,
    /// The closing tag was missing; content was recovered heuristically.
    MissingCloseTag,
    /// A call span was present but no usable call could be recovered.
    EmptyCall,
}

/// Result of scanning model output for a function call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub call: Option<FunctionCall>,
    /// Text remaining after the call span is removed. Equals the input when
    /// no call is present.
    pub response: String,
    #[serde(default)]
    pub warnings: Vec<ParseWarning>,
}

impl ParseOutcome {
    fn absent(input: &str, warnings: Vec<ParseWarning>) -> Self {
        ParseOutcome {
            call: None,
            response: input.to_string(),
            warnings,
        }
    }
}

/// Pull the selected domain out of the first `<domain>...</domain>` span.
///
/// Returns the trimmed span content, or `None` when no opening tag exists.
/// A missing closing tag degrades to taking the first whitespace-delimited
/// token after the opening tag, with a warning.
pub fn extract_domain(text: &str) -> (Option<String>, Vec<ParseWarning>) {
    let Some(open) = text.find(DOMAIN_OPEN) else {
        return (None, Vec::new());
    };
    let rest = &text[open + DOMAIN_OPEN.len()..];
    if let Some(close) = rest.find(DOMAIN_CLOSE) {
        let content = rest[..close].trim();
        if content.is_empty() {
            return (None, vec![ParseWarning::EmptyCall]);
        }
        return (Some(content.to_string()), Vec::new());
    }
    // No closing tag: take the first token, stopping at whitespace or a new
    // tag opener.
    let token: String = rest
        .trim_start()
        .chars()
        .take_while(|c| !c.is_whitespace() && *c != '<')
        .collect();
    if token.is_empty() {
        (None, vec![ParseWarning::MissingCloseTag])
    } else {
        (Some(token), vec![ParseWarning::MissingCloseTag])
    }
}

/// Locate and parse the first `<function_call>...</function_call>` span.
///
/// The JSON body may be either `{"function": name, "arguments": {...}}`
/// (with `name` accepted as an alias for `function`, and a JSON-encoded
/// string accepted for `arguments`) or the single-key form
/// `{name: {...args...}}`. Unparseable JSON goes through bounded repair
/// (trailing-comma removal, brace balancing) before degrading to
/// call-absent.
pub fn extract_function_call(text: &str) -> ParseOutcome {
    let Some(open) = text.find(CALL_OPEN) else {
        return ParseOutcome::absent(text, Vec::new());
    };
    let mut warnings = Vec::new();
    let body_start = open + CALL_OPEN.len();
    let (body, span_end) = match text[body_start..].find(CALL_CLOSE) {
        Some(rel) => {
            let close = body_start + rel;
            (&text[body_start..close], close + CALL_CLOSE.len())
        }
        None => {
            warnings.push(ParseWarning::MissingCloseTag);
            match balanced_json_span(&text[body_start..]) {
                Some((start, end)) => (&text[body_start + start..body_start + end], body_start + end),
                None => {
                    warnings.push(ParseWarning::EmptyCall);
                    return ParseOutcome::absent(text, warnings);
                }
            }
        }
    };

    let response = {
        let before = text[..open].trim();
        let after = text[span_end..].trim();
        match (before.is_empty(), after.is_empty()) {
            (true, true) => String::new(),
            (true, false) => after.to_string(),
            (false, true) => before.to_string(),
            (false, false) => format!("{before} {after}"),
        }
    };

    match parse_call_body(body, &mut warnings) {
        Some(call) => ParseOutcome {
            call: Some(call),
            response,
            warnings,
        },
        None => {
            warnings.push(ParseWarning::EmptyCall);
            ParseOutcome::absent(text, warnings)
        }
    }
}

fn parse_call_body(body: &str, warnings: &mut Vec<ParseWarning>) -> Option<FunctionCall> {
    let body = body.trim();
    if body.is_empty() {
        return None;
    }
    let value = match serde_json::from_str::<serde_json::Value>(body) {
        Ok(v) => v,
        Err(_) => {
            let repaired = repair_json(body);
            match serde_json::from_str::<serde_json::Value>(&repaired) {
                Ok(v) => {
                    warnings.push(ParseWarning::RepairedJson);
                    v
                }
                // The body may wrap the object in prose or a code fence;
                // fall back to the first balanced object inside it.
                Err(_) => {
                    let (start, end) = balanced_json_span(body)?;
                    let inner = repair_json(&body[start..end]);
                    let v = serde_json::from_str::<serde_json::Value>(&inner).ok()?;
                    warnings.push(ParseWarning::RepairedJson);
                    v
                }
            }
        }
    };
    call_from_value(value)
}

fn call_from_value(value: serde_json::Value) -> Option<FunctionCall> {
    let obj = value.as_object()?;
    // Explicit {"function"|"name": ..., "arguments": ...} shape.
    let named = obj
        .get("function")
        .or_else(|| obj.get("name"))
        .and_then(|v| v.as_str());
    if let Some(function) = named {
        if function.is_empty() {
            return None;
        }
        let arguments = match obj.get("arguments") {
            None => BTreeMap::new(),
            Some(serde_json::Value::Object(map)) => arguments_from_map(map),
            // Some APIs hand arguments back as a JSON-encoded string.
            Some(serde_json::Value::String(s)) => {
                match serde_json::from_str::<serde_json::Value>(s) {
                    Ok(serde_json::Value::Object(map)) => arguments_from_map(&map),
                    _ => BTreeMap::new(),
                }
            }
            Some(_) => BTreeMap::new(),
        };
        return Some(FunctionCall {
            function: function.to_string(),
            arguments,
        });
    }
    // Single-key form: {name: {...}}.
    if obj.len() == 1 {
        let (function, args) = obj.iter().next()?;
        if function.is_empty() {
            return None;
        }
        if let serde_json::Value::Object(map) = args {
            return Some(FunctionCall {
                function: function.clone(),
                arguments: arguments_from_map(map),
            });
        }
    }
    None
}

fn arguments_from_map(map: &serde_json::Map<String, serde_json::Value>) -> BTreeMap<String, String> {
    map.iter()
        .filter_map(|(k, v)| scalar_to_string(v).map(|s| (k.clone(), s)))
        .collect()
}

fn scalar_to_string(value: &serde_json::Value) -> Option<String> {
    match value {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        serde_json::Value::Null => None,
        // Nested structures are out of scope for flat slots; keep the raw
        // JSON so nothing is silently lost.
        other => Some(other.to_string()),
    }
}

/// Find the first brace-balanced JSON object in `text`, tolerant of string
/// escapes. Returns byte offsets (start, end).
fn balanced_json_span(text: &str) -> Option<(usize, usize)> {
    let start = text.find('{')?;
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escape = false;
    for (i, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            if escape {
                escape = false;
            } else if b == b'\\' {
                escape = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    return Some((start, start + i + 1));
                }
            }
            _ => {}
        }
    }
    None
}

/// Bounded JSON repair: strip trailing commas and append missing closing
/// braces/brackets. Anything deeper fails soft upstream.
fn repair_json(body: &str) -> String {
    static TRAILING_COMMA: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r",\s*([}\]])").expect("static regex"));
    let mut out = TRAILING_COMMA.replace_all(body, "$1").into_owned();

    // Balance braces and brackets outside of strings.
    let mut stack = Vec::new();
    let mut in_string = false;
    let mut escape = false;
    for c in out.chars() {
        if in_string {
            if escape {
                escape = false;
            } else if c == '\\' {
                escape = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => stack.push('}'),
            '[' => stack.push(']'),
            '}' | ']' => {
                if stack.last() == Some(&c) {
                    stack.pop();
                }
            }
            _ => {}
        }
    }
    if in_string {
        out.push('"');
    }
    while let Some(c) = stack.pop() {
        // A dangling trailing comma may have been exposed by truncation.
        while out.trim_end().ends_with(',') {
            out.truncate(out.trim_end().len() - 1);
        }
        out.push(c);
    }
    out
}

/// Options for schema validation of parsed calls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidateOptions {
    /// Snap off-list categorical values to an allowed option when within
    /// edit distance 2. Off by default to keep metrics conservative.
    pub snap_enums: bool,
}

/// Check a call against its function spec.
///
/// Unknown argument keys are dropped with warnings; off-list categorical
/// values are kept but flagged (metrics decide, not the parser); the
/// function name is coerced to the spec's when they differ only by case or
/// underscores.
pub fn validate_call(call: &FunctionCall, spec: &FunctionSpec) -> (FunctionCall, Vec<ParseWarning>) {
    validate_call_with(call, spec, ValidateOptions::default())
}

pub fn validate_call_with(
    call: &FunctionCall,
    spec: &FunctionSpec,
    opts: ValidateOptions,
) -> (FunctionCall, Vec<ParseWarning>) {
    let mut warnings = Vec::new();
    let function = if call.function == spec.name {
        call.function.clone()
    } else if names_match(&call.function, &spec.name) {
        spec.name.clone()
    } else {
        call.function.clone()
    };

    let mut arguments = BTreeMap::new();
    for (key, value) in &call.arguments {
        let Some(slot) = spec.slot(key) else {
            warnings.push(ParseWarning::UnknownSlot { slot: key.clone() });
            continue;
        };
        let mut value = value.clone();
        if let Some(allowed) = &slot.allowed_values {
            let normalized = normalize_value(slot, &value);
            let on_list = allowed.iter().any(|a| normalize_value(slot, a) == normalized);
            // "dontcare" is a universal filler, never an enum violation.
            if !on_list && normalized != "dontcare" {
                if opts.snap_enums {
                    if let Some(snapped) = nearest_option(&normalized, allowed, 2) {
                        value = snapped;
                    } else {
                        warnings.push(ParseWarning::BadEnum {
                            slot: key.clone(),
                            value: value.clone(),
                        });
                    }
                } else {
                    warnings.push(ParseWarning::BadEnum {
                        slot: key.clone(),
                        value: value.clone(),
                    });
                }
            }
        }
        arguments.insert(key.clone(), value);
    }
    (FunctionCall { function, arguments }, warnings)
}

/// Case- and underscore-insensitive name comparison.
pub fn names_match(a: &str, b: &str) -> bool {
    let fold = |s: &str| s.chars().filter(|c| *c != '_').collect::<String>().to_lowercase();
    fold(a) == fold(b)
}

/// Snap a name from model output to a catalog function, tolerating case and
/// underscore differences. Returns `None` for anything further away.
pub fn snap_function_name(name: &str, catalog: &SchemaCatalog) -> Option<String> {
    if catalog.contains(name) {
        return Some(name.to_string());
    }
    catalog
        .function_names()
        .find(|candidate| names_match(name, candidate))
        .map(str::to_string)
}

fn nearest_option(normalized: &str, allowed: &[String], max_distance: usize) -> Option<String> {
    allowed
        .iter()
        .map(|a| (edit_distance(normalized, &a.to_lowercase()), a))
        .filter(|(d, _)| *d <= max_distance)
        .min_by_key(|(d, _)| *d)
        .map(|(_, a)| a.clone())
}

fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

static TIME_HM: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(\d{1,2})[:.](\d{2})\s*(am|pm)?$").expect("static regex"));
static TIME_H: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(\d{1,2})\s*(am|pm)$").expect("static regex"));
static TIME_COMPACT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(\d{2})(\d{2})$").expect("static regex"));

fn coerce_time(value: &str) -> Option<String> {
    let (hour, minute, meridiem): (u32, u32, Option<&str>) =
        if let Some(c) = TIME_HM.captures(value) {
            (
                c[1].parse().ok()?,
                c[2].parse().ok()?,
                c.get(3).map(|m| m.as_str()),
            )
        } else if let Some(c) = TIME_H.captures(value) {
            (c[1].parse().ok()?, 0, Some(c.get(2)?.as_str()))
        } else if let Some(c) = TIME_COMPACT.captures(value) {
            (c[1].parse().ok()?, c[2].parse().ok()?, None)
        } else {
            return None;
        };
    let hour = match meridiem {
        Some("pm") if hour < 12 => hour + 12,
        Some("am") if hour == 12 => 0,
        _ => hour,
    };
    if hour > 23 || minute > 59 {
        return None;
    }
    Some(format!("{hour:02}:{minute:02}"))
}

const NUMBER_WORDS: [&str; 11] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
];

/// Normalize a raw slot value for comparison: lowercase, trim, collapse
/// whitespace, fold don't-care spellings, and apply kind-specific coercions
/// (24-hour times, small number words). Idempotent.
pub fn normalize_value(slot: &SlotSpec, raw: &str) -> String {
    let base = normalize_generic(raw);
    match slot.kind {
        SlotKind::Time => coerce_time(&base).unwrap_or(base),
        SlotKind::Integer => NUMBER_WORDS
            .iter()
            .position(|w| *w == base)
            .map(|n| n.to_string())
            .unwrap_or(base),
        _ => base,
    }
}

/// The kind-independent part of normalization, used when no spec is known
/// for a slot.
pub fn normalize_generic(raw: &str) -> String {
    let collapsed = raw
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    match collapsed.as_str() {
        "do nt care" | "don't care" | "dont care" | "do not care" => "dontcare".to_string(),
        _ => collapsed,
    }
}

/// Catalog-aware value normalizer shared by state comparison and metrics.
#[derive(Debug, Clone)]
pub struct Normalizer {
    catalog: SchemaCatalog,
}

impl Normalizer {
    pub fn new(catalog: SchemaCatalog) -> Self {
        Normalizer { catalog }
    }

    pub fn normalize(&self, domain: &str, slot: &str, value: &str) -> String {
        match self.catalog.get(domain).and_then(|f| f.slot(slot)) {
            Some(spec) => normalize_value(spec, value),
            None => normalize_generic(value),
        }
    }

    pub fn normalize_state(&self, state: &crate::dialogue::DialogueState) -> crate::dialogue::DialogueState {
        let mut out = std::collections::BTreeMap::new();
        for (domain, slots) in &state.0 {
            let normalized: std::collections::BTreeMap<String, String> = slots
                .iter()
                .map(|(s, v)| (s.clone(), self.normalize(domain, s, v)))
                .collect();
            if !normalized.is_empty() {
                out.insert(domain.clone(), normalized);
            }
        }
        crate::dialogue::DialogueState(out)
    }
}
