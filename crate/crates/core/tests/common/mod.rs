//! Shared helpers for integration tests: fixture paths, bundled catalog and
//! examples, and the golden-prompt case definitions.

use std::path::PathBuf;

use fnctod_core::dialogue::{AssistantOutput, DialogueContext, FunctionCall};
use fnctod_core::prompt::{
    ExampleConversation, PipelineMode, PromptConfig, SpecRendering,
};
use fnctod_core::schema::{load_catalog, SchemaCatalog, SchemaFormat};

/// One frozen malformed-output case: raw model text and the exact outcome
/// the parser must produce for it.
#[derive(serde::Serialize, serde::Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum CorpusCase {
    Call {
        name: String,
        input: String,
        expected: fnctod_core::parse::ParseOutcome,
    },
    Domain {
        name: String,
        input: String,
        expected: DomainOutcome,
    },
}

#[derive(serde::Serialize, serde::Deserialize)]
pub struct DomainOutcome {
    pub domain: Option<String>,
    pub warnings: Vec<fnctod_core::parse::ParseWarning>,
}

pub fn load_malformed_corpus() -> Vec<CorpusCase> {
    let path = fixtures_dir().join("parse/malformed_corpus.jsonl");
    let raw = std::fs::read_to_string(&path).expect("malformed corpus readable");
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("corpus line valid"))
        .collect()
}

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .canonicalize()
        .expect("fixtures directory exists")
}

pub fn load_fixture_catalog() -> SchemaCatalog {
    let path = fixtures_dir().join("catalogs/multiwoz.json");
    let raw = std::fs::read_to_string(&path).expect("catalog fixture readable");
    load_catalog(&raw, SchemaFormat::Native).expect("catalog fixture valid")
}

pub fn load_examples(domain: &str) -> Vec<ExampleConversation> {
    let path = fixtures_dir().join(format!("examples/{domain}.json"));
    let raw = std::fs::read_to_string(&path).expect("example fixture readable");
    serde_json::from_str(&raw).expect("example fixture valid")
}

fn call(function: &str, args: &[(&str, &str)]) -> FunctionCall {
    let mut call = FunctionCall::new(function);
    for (slot, value) in args {
        call = call.with_arg(*slot, *value);
    }
    call
}

fn hotel_context() -> DialogueContext {
    let mut ctx = DialogueContext::new();
    ctx.push(
        "i need a cheap place to stay in the north with free parking .",
        AssistantOutput {
            call: Some(call(
                "find_hotel",
                &[("area", "north"), ("parking", "yes"), ("pricerange", "cheap")],
            )),
            response: "the worth house is a cheap guesthouse in the north with parking . would you like to book ?".to_string(),
        },
    );
    ctx.push(
        "yes , please book it for 3 people , 2 nights starting monday .",
        AssistantOutput {
            call: Some(call(
                "find_hotel",
                &[
                    ("area", "north"),
                    ("parking", "yes"),
                    ("pricerange", "cheap"),
                    ("book_people", "3"),
                    ("book_stay", "2"),
                    ("book_day", "monday"),
                ],
            )),
            response: "booking was successful , reference number is xj4kclm2 .".to_string(),
        },
    );
    ctx.push_pending("great , can i also have the phone number ?");
    ctx
}

fn restaurant_context() -> DialogueContext {
    let mut ctx = DialogueContext::new();
    ctx.push(
        "are there any italian restaurants in the centre ?",
        AssistantOutput {
            call: Some(call(
                "find_restaurant",
                &[("food", "italian"), ("area", "centre")],
            )),
            response: "zizzi cambridge serves italian food in the centre . would you like a table ?".to_string(),
        },
    );
    ctx.push_pending("yes , book for 2 people at 18:00 on saturday .");
    ctx
}

fn train_context() -> DialogueContext {
    let mut ctx = DialogueContext::new();
    ctx.push(
        "i need a train from cambridge to london kings cross on friday .",
        AssistantOutput {
            call: Some(call(
                "find_train",
                &[
                    ("departure", "cambridge"),
                    ("destination", "london kings cross"),
                    ("day", "friday"),
                ],
            )),
            response: "there are ten trains on friday . when would you like to arrive ?".to_string(),
        },
    );
    ctx.push(
        "i have to arrive by 10:30 .",
        AssistantOutput {
            call: Some(call(
                "find_train",
                &[
                    ("departure", "cambridge"),
                    ("destination", "london kings cross"),
                    ("day", "friday"),
                    ("arriveby", "10:30"),
                ],
            )),
            response: "tr1502 arrives at 09:51 . would that work ?".to_string(),
        },
    );
    ctx.push_pending("perfect , book 2 tickets please .");
    ctx
}

fn attraction_context() -> DialogueContext {
    let mut ctx = DialogueContext::new();
    ctx.push_pending("what museums are there in the centre of town ?");
    ctx
}

/// What a golden case renders: the two decomposed stages for one domain, or
/// the single monolithic prompt.
pub enum GoldenKind {
    Decomposed { domain: &'static str },
    Monolithic,
}

pub struct GoldenCase {
    pub name: &'static str,
    pub kind: GoldenKind,
    pub context: DialogueContext,
    pub config: PromptConfig,
}

/// The five frozen (schema, context, config) triples. Together they cover
/// both spec renderings, both previous-call settings, n-shot 0 and 5, and
/// both pipeline modes.
pub fn golden_cases() -> Vec<GoldenCase> {
    vec![
        GoldenCase {
            name: "hotel_json_prev_0shot",
            kind: GoldenKind::Decomposed {
                domain: "find_hotel",
            },
            context: hotel_context(),
            config: PromptConfig {
                mode: PipelineMode::Decomposed,
                spec_rendering: SpecRendering::Json,
                n_shot: 0,
                include_prev_calls: true,
                oracle_domain: None,
                max_context_units: None,
            },
        },
        GoldenCase {
            name: "restaurant_json_prev_5shot",
            kind: GoldenKind::Decomposed {
                domain: "find_restaurant",
            },
            context: restaurant_context(),
            config: PromptConfig {
                mode: PipelineMode::Decomposed,
                spec_rendering: SpecRendering::Json,
                n_shot: 5,
                include_prev_calls: true,
                oracle_domain: None,
                max_context_units: None,
            },
        },
        GoldenCase {
            name: "train_text_noprev_0shot",
            kind: GoldenKind::Decomposed {
                domain: "find_train",
            },
            context: train_context(),
            config: PromptConfig {
                mode: PipelineMode::Decomposed,
                spec_rendering: SpecRendering::Text,
                n_shot: 0,
                include_prev_calls: false,
                oracle_domain: None,
                max_context_units: None,
            },
        },
        GoldenCase {
            name: "attraction_text_prev_5shot",
            kind: GoldenKind::Decomposed {
                domain: "find_attraction",
            },
            context: attraction_context(),
            config: PromptConfig {
                mode: PipelineMode::Decomposed,
                spec_rendering: SpecRendering::Text,
                n_shot: 5,
                include_prev_calls: true,
                oracle_domain: None,
                max_context_units: None,
            },
        },
        GoldenCase {
            name: "monolithic_json_prev",
            kind: GoldenKind::Monolithic,
            context: hotel_context(),
            config: PromptConfig {
                mode: PipelineMode::Monolithic,
                spec_rendering: SpecRendering::Json,
                n_shot: 0,
                include_prev_calls: true,
                oracle_domain: None,
                max_context_units: None,
            },
        },
    ]
}

pub const GOLDEN_TEMPLATES: [&str; 2] = ["plain", "llama2"];

/// Render every prompt a golden case freezes: (file stem, prompt text).
pub fn render_golden_case(
    case: &GoldenCase,
    template_name: &str,
    catalog: &SchemaCatalog,
) -> Vec<(String, String)> {
    use fnctod_core::prompt::{
        apply_chat_template, build_argument_messages, build_monolithic_messages,
        build_selection_messages, TemplateRegistry,
    };
    let registry = TemplateRegistry::builtin();
    let template = registry.get(template_name).expect("template exists");
    let mut out = Vec::new();
    match &case.kind {
        GoldenKind::Decomposed { domain } => {
            let selection = build_selection_messages(catalog, &case.context, &case.config)
                .expect("selection messages build");
            out.push((
                format!("{}__{}__selection.txt", case.name, template_name),
                apply_chat_template(&selection, template).expect("template applies"),
            ));
            let spec = catalog.get(domain).expect("domain in catalog");
            let examples = load_examples(domain);
            let argument =
                build_argument_messages(spec, &case.context, &examples, &case.config)
                    .expect("argument messages build");
            out.push((
                format!("{}__{}__argument.txt", case.name, template_name),
                apply_chat_template(&argument, template).expect("template applies"),
            ));
        }
        GoldenKind::Monolithic => {
            let messages = build_monolithic_messages(catalog, &case.context, &case.config)
                .expect("monolithic messages build");
            out.push((
                format!("{}__{}__monolithic.txt", case.name, template_name),
                apply_chat_template(&messages, template).expect("template applies"),
            ));
        }
    }
    out
}
