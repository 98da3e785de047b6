//! Fine-tuning data emission in the unified function-calling dialogue
//! format.
//!
//! Dialogues are sampled per domain from heterogeneous corpora, rendered as
//! full prompts (system prompt embedding the specs of every function the
//! conversation invokes, zero in-context examples), and written as JSON
//! lines whose mask spans cover exactly the `<function_call>` spans of the
//! assistant outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dialogue::{AssistantOutput, DialogueContext, FunctionCall};
use crate::parse::{extract_function_call, CALL_CLOSE, CALL_OPEN};
use crate::prompt::{
    apply_chat_template, build_system_prompt, serialize_context, ChatMessage, ChatTemplate,
    OVERALL_INSTRUCTION,
};
use crate::schema::{load_catalog, render_spec_json, SchemaCatalog, SchemaFormat};

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("corpus I/O error: {0}")]
    Io(String),
    #[error("corpus parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Schema(#[from] crate::schema::SchemaError),
    #[error(transparent)]
    Prompt(#[from] crate::prompt::PromptError),
    #[error("per_domain must be at least 1")]
    ZeroPerDomain,
    #[error("no corpora supplied")]
    NoCorpora,
}

/// One conversation of a training corpus; every assistant turn carries the
/// full tracked slot set of its active domain as a call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDialogue {
    pub dialogue_id: String,
    pub domains: Vec<String>,
    pub turns: DialogueContext,
}

/// A loaded corpus: its schema catalog plus dialogues.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub name: String,
    pub catalog: SchemaCatalog,
    pub dialogues: Vec<CorpusDialogue>,
}

/// Load a native-format corpus directory: `catalog.json` (native schema
/// document) and `dialogues.json` (array of [`CorpusDialogue`]).
pub fn load_corpus(dir: &Path) -> Result<Corpus, ExportError> {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let catalog_path = dir.join("catalog.json");
    let catalog_raw = std::fs::read_to_string(&catalog_path)
        .map_err(|e| ExportError::Io(format!("{}: {e}", catalog_path.display())))?;
    let catalog = load_catalog(&catalog_raw, SchemaFormat::Native)?;

    let dialogues_path = dir.join("dialogues.json");
    let dialogues_raw = std::fs::read_to_string(&dialogues_path)
        .map_err(|e| ExportError::Io(format!("{}: {e}", dialogues_path.display())))?;
    let dialogues: Vec<CorpusDialogue> = serde_json::from_str(&dialogues_raw)
        .map_err(|e| ExportError::Parse(format!("{}: {e}", dialogues_path.display())))?;
    Ok(Corpus {
        name,
        catalog,
        dialogues,
    })
}

// SGD-style wire types (schema.json + dialogues_*.json).
#[derive(Debug, Deserialize)]
struct SgdService {
    service_name: String,
    description: String,
    slots: Vec<SgdSlot>,
}

#[derive(Debug, Deserialize)]
struct SgdSlot {
    name: String,
    description: String,
    #[serde(default)]
    is_categorical: bool,
    #[serde(default)]
    possible_values: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct SgdDialogue {
    dialogue_id: String,
    services: Vec<String>,
    turns: Vec<SgdTurn>,
}

#[derive(Debug, Deserialize)]
struct SgdTurn {
    speaker: String,
    utterance: String,
    #[serde(default)]
    frames: Vec<SgdFrame>,
}

#[derive(Debug, Deserialize)]
struct SgdFrame {
    service: String,
    #[serde(default)]
    state: Option<SgdState>,
}

#[derive(Debug, Deserialize)]
struct SgdState {
    #[serde(default)]
    slot_values: BTreeMap<String, Vec<String>>,
}

fn sgd_function_name(service: &str) -> String {
    service.trim().to_lowercase()
}

fn sgd_slot_kind(slot: &SgdSlot) -> crate::schema::SlotKind {
    use crate::schema::SlotKind;
    if slot.is_categorical && !slot.possible_values.is_empty() {
        SlotKind::Categorical
    } else if slot.name.contains("time") {
        SlotKind::Time
    } else {
        SlotKind::FreeText
    }
}

/// Adapt an SGD-style corpus directory: `schema.json` plus any number of
/// `dialogues_*.json` files. Each user turn's active frame (the one whose
/// state changed) becomes the call on the following system turn.
pub fn load_sgd_corpus(dir: &Path) -> Result<Corpus, ExportError> {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let schema_path = dir.join("schema.json");
    let schema_raw = std::fs::read_to_string(&schema_path)
        .map_err(|e| ExportError::Io(format!("{}: {e}", schema_path.display())))?;
    let services: Vec<SgdService> = serde_json::from_str(&schema_raw)
        .map_err(|e| ExportError::Parse(format!("{}: {e}", schema_path.display())))?;

    let functions = services
        .iter()
        .map(|service| crate::schema::FunctionSpec {
            name: sgd_function_name(&service.service_name),
            description: service.description.clone(),
            slots: service
                .slots
                .iter()
                .map(|slot| {
                    let kind = sgd_slot_kind(slot);
                    crate::schema::SlotSpec {
                        name: slot.name.trim().to_lowercase().replace(' ', "_"),
                        description: slot.description.clone(),
                        kind,
                        allowed_values: if kind == crate::schema::SlotKind::Categorical {
                            Some(slot.possible_values.clone())
                        } else {
                            None
                        },
                        is_required: false,
                    }
                })
                .collect(),
        })
        .collect();
    let catalog = SchemaCatalog::new("sgd", functions)?;

    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| ExportError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(Result::ok)
        .map(|entry| entry.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("dialogues") && n.ends_with(".json"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();

    let mut dialogues = Vec::new();
    for path in paths {
        let raw = std::fs::read_to_string(&path)
            .map_err(|e| ExportError::Io(format!("{}: {e}", path.display())))?;
        let parsed: Vec<SgdDialogue> = serde_json::from_str(&raw)
            .map_err(|e| ExportError::Parse(format!("{}: {e}", path.display())))?;
        for dialogue in parsed {
            dialogues.push(convert_sgd_dialogue(dialogue));
        }
    }
    Ok(Corpus {
        name,
        catalog,
        dialogues,
    })
}

fn convert_sgd_dialogue(dialogue: SgdDialogue) -> CorpusDialogue {
    let mut turns = DialogueContext::new();
    let mut cumulative: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut i = 0;
    while i < dialogue.turns.len() {
        let turn = &dialogue.turns[i];
        if turn.speaker.to_uppercase() != "USER" {
            i += 1;
            continue;
        }
        // Pick the frame whose state changed this turn; fall back to the
        // first frame with any tracked values.
        let mut selected: Option<(String, BTreeMap<String, String>)> = None;
        let mut fallback: Option<(String, BTreeMap<String, String>)> = None;
        for frame in &turn.frames {
            let Some(state) = &frame.state else { continue };
            let function = sgd_function_name(&frame.service);
            let values: BTreeMap<String, String> = state
                .slot_values
                .iter()
                .filter_map(|(slot, values)| {
                    values.first().map(|v| {
                        (slot.trim().to_lowercase().replace(' ', "_"), v.clone())
                    })
                })
                .collect();
            if values.is_empty() {
                continue;
            }
            if fallback.is_none() {
                fallback = Some((function.clone(), values.clone()));
            }
            if cumulative.get(&function) != Some(&values) && selected.is_none() {
                selected = Some((function, values));
            }
        }
        let call = selected.or(fallback).map(|(function, values)| {
            cumulative.insert(function.clone(), values.clone());
            FunctionCall {
                function,
                arguments: values,
            }
        });
        let response = dialogue
            .turns
            .get(i + 1)
            .filter(|t| t.speaker.to_uppercase() == "SYSTEM")
            .map(|t| t.utterance.clone())
            .unwrap_or_default();
        turns.push(
            turn.utterance.clone(),
            AssistantOutput {
                call,
                response,
            },
        );
        i += 2;
    }
    CorpusDialogue {
        dialogue_id: dialogue.dialogue_id,
        domains: dialogue.services.iter().map(|s| sgd_function_name(s)).collect(),
        turns,
    }
}

/// One sampled dialogue tagged with its source corpus.
#[derive(Debug, Clone)]
pub struct SampledDialogue {
    pub corpus: String,
    pub dialogue: CorpusDialogue,
}

/// Sampling output plus the warnings for skipped domains.
#[derive(Debug)]
pub struct SampleOutcome {
    pub dialogues: Vec<SampledDialogue>,
    pub warnings: Vec<String>,
}

/// Draw up to `per_domain` dialogues per domain, without replacement, from
/// the seeded generator. Domains are visited in sorted order so a fixed
/// seed yields a fixed sample. A dialogue touching several domains counts
/// toward each quota; duplicates are removed afterward by (corpus, id).
pub fn sample_dialogues(
    corpora: &[Corpus],
    per_domain: usize,
    seed: u64,
    domain_list: Option<&[String]>,
) -> Result<SampleOutcome, ExportError> {
    if per_domain == 0 {
        return Err(ExportError::ZeroPerDomain);
    }
    if corpora.is_empty() {
        return Err(ExportError::NoCorpora);
    }
    let mut by_domain: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
    for (ci, corpus) in corpora.iter().enumerate() {
        for (di, dialogue) in corpus.dialogues.iter().enumerate() {
            for domain in &dialogue.domains {
                by_domain.entry(domain.clone()).or_default().push((ci, di));
            }
        }
    }
    let domains: Vec<String> = match domain_list {
        Some(list) => list.to_vec(),
        None => by_domain.keys().cloned().collect(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut warnings = Vec::new();
    let mut picked: Vec<(usize, usize)> = Vec::new();
    let mut seen: BTreeSet<(usize, usize)> = BTreeSet::new();
    for domain in &domains {
        let candidates = by_domain.get(domain).map(Vec::as_slice).unwrap_or(&[]);
        if candidates.is_empty() {
            warnings.push(format!("domain \"{domain}\" has no dialogues; skipped"));
            continue;
        }
        let take = per_domain.min(candidates.len());
        let chosen = rand::seq::index::sample(&mut rng, candidates.len(), take);
        for idx in chosen.iter() {
            let key = candidates[idx];
            if seen.insert(key) {
                picked.push(key);
            }
        }
    }

    let dialogues = picked
        .into_iter()
        .map(|(ci, di)| SampledDialogue {
            corpus: corpora[ci].name.clone(),
            dialogue: corpora[ci].dialogues[di].clone(),
        })
        .collect();
    Ok(SampleOutcome { dialogues, warnings })
}

/// Merge corpus catalogs into one; duplicate function names must agree.
pub fn merge_catalogs(corpora: &[Corpus]) -> Result<SchemaCatalog, ExportError> {
    if corpora.is_empty() {
        return Err(ExportError::NoCorpora);
    }
    let mut functions: Vec<crate::schema::FunctionSpec> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for corpus in corpora {
        for spec in corpus.catalog.functions() {
            if seen.insert(spec.name.clone()) {
                functions.push(spec.clone());
            }
        }
    }
    Ok(SchemaCatalog::new("merged", functions)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordSource {
    pub corpus: String,
    pub dialogue_id: String,
}

/// One fine-tuning example: the fully rendered prompt and the byte spans
/// (offset, length) covering its `<function_call>` regions, tags included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub prompt: String,
    pub mask_spans: Vec<(usize, usize)>,
    pub source: RecordSource,
}

impl TrainingRecord {
    /// The gold calls recovered from the mask spans, in order.
    pub fn calls_from_spans(&self) -> Vec<Option<FunctionCall>> {
        self.mask_spans
            .iter()
            .map(|(offset, length)| {
                let span = &self.prompt[*offset..*offset + *length];
                extract_function_call(span).call
            })
            .collect()
    }
}

#[derive(Debug)]
pub struct EmitOutcome {
    pub records: Vec<TrainingRecord>,
    pub warnings: Vec<String>,
}

/// Render sampled dialogues as training records.
///
/// The system prompt embeds the JSON specifications of every function the
/// conversation invokes and no in-context examples; mask spans are computed
/// against the final rendered bytes.
pub fn emit_training_examples(
    samples: &[SampledDialogue],
    catalog: &SchemaCatalog,
    template: &ChatTemplate,
) -> Result<EmitOutcome, ExportError> {
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    'dialogues: for sample in samples {
        let dialogue = &sample.dialogue;
        let mut invoked: Vec<String> = Vec::new();
        let mut calls: Vec<&FunctionCall> = Vec::new();
        for turn in &dialogue.turns.turns {
            if let Some(call) = turn.assistant.as_ref().and_then(|a| a.call.as_ref()) {
                calls.push(call);
                if !invoked.contains(&call.function) {
                    invoked.push(call.function.clone());
                }
            }
        }
        for function in &invoked {
            if !catalog.contains(function) {
                warnings.push(format!(
                    "{}/{}: unknown function \"{function}\"; dialogue skipped",
                    sample.corpus, dialogue.dialogue_id
                ));
                continue 'dialogues;
            }
        }

        let spec_block = invoked
            .iter()
            .map(|name| render_spec_json(catalog.get(name).expect("checked above")))
            .collect::<Vec<_>>()
            .join("\n\n");
        let system = build_system_prompt(OVERALL_INSTRUCTION, &spec_block, &[])?;
        let mut messages = vec![ChatMessage::system(system)];
        messages.extend(serialize_context(&dialogue.turns, true));
        let prompt = apply_chat_template(&messages, template)?;

        let spans = call_spans(&prompt);
        if spans.len() != calls.len() {
            warnings.push(format!(
                "{}/{}: expected {} call spans but found {}; dialogue skipped",
                sample.corpus,
                dialogue.dialogue_id,
                calls.len(),
                spans.len()
            ));
            continue;
        }
        records.push(TrainingRecord {
            prompt,
            mask_spans: spans,
            source: RecordSource {
                corpus: sample.corpus.clone(),
                dialogue_id: dialogue.dialogue_id.clone(),
            },
        });
    }
    Ok(EmitOutcome { records, warnings })
}

/// Byte spans of `<function_call>...</function_call>` regions, inclusive of
/// both tags, in appearance order.
fn call_spans(prompt: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut cursor = 0;
    while let Some(open_rel) = prompt[cursor..].find(CALL_OPEN) {
        let open = cursor + open_rel;
        let Some(close_rel) = prompt[open..].find(CALL_CLOSE) else {
            break;
        };
        let end = open + close_rel + CALL_CLOSE.len();
        spans.push((open, end - open));
        cursor = end;
    }
    spans
}

/// Serialize records as JSON lines.
pub fn write_training_records<W: std::io::Write>(
    records: &[TrainingRecord],
    mut writer: W,
) -> Result<(), ExportError> {
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| ExportError::Io(e.to_string()))?;
        writeln!(writer, "{line}").map_err(|e| ExportError::Io(e.to_string()))?;
    }
    Ok(())
}
