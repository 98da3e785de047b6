//! Domain schemas rendered as function specifications.
//!
//! A schema catalog holds one [`FunctionSpec`] per dialogue domain. Specs can
//! be rendered three ways: full JSON (the model-facing default), full natural
//! language text, and one-line brief descriptions used by the function
//! selection stage.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

/// How a slot value is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Categorical,
    FreeText,
    Time,
    Integer,
    Boolean,
}

impl SlotKind {
    /// JSON-schema style type string used in the JSON rendering.
    pub fn type_name(&self) -> &'static str {
        match self {
            SlotKind::Categorical | SlotKind::FreeText | SlotKind::Time => "string",
            SlotKind::Integer => "integer",
            SlotKind::Boolean => "boolean",
        }
    }
}

/// One argument of a domain function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    pub description: String,
    pub kind: SlotKind,
    /// Only present for categorical slots.
    pub allowed_values: Option<Vec<String>>,
    pub is_required: bool,
}

impl SlotSpec {
    /// Description with the 24-hour suffix appended for time slots, so the
    /// rendered spec anchors the normalization convention.
    pub fn rendered_description(&self) -> String {
        if self.kind == SlotKind::Time && !self.description.contains("24-hour") {
            format!("{} (24-hour format hh:mm)", self.description)
        } else {
            self.description.clone()
        }
    }

    fn validate(&self) -> Result<(), SchemaError> {
        if self.name.is_empty() {
            return Err(SchemaError::validation("slot name is empty"));
        }
        if self.name.chars().any(|c| c.is_whitespace()) {
            return Err(SchemaError::validation(format!(
                "slot name \"{}\" contains whitespace",
                self.name
            )));
        }
        if self.name.chars().any(|c| c.is_uppercase()) {
            return Err(SchemaError::validation(format!(
                "slot name \"{}\" is not lowercase",
                self.name
            )));
        }
        match (&self.kind, &self.allowed_values) {
            (SlotKind::Categorical, Some(values)) => {
                if values.is_empty() {
                    return Err(SchemaError::validation(format!(
                        "categorical slot \"{}\" has no allowed values",
                        self.name
                    )));
                }
                let mut seen = std::collections::BTreeSet::new();
                for v in values {
                    if !seen.insert(v) {
                        return Err(SchemaError::validation(format!(
                            "categorical slot \"{}\" repeats value \"{v}\"",
                            self.name
                        )));
                    }
                }
            }
            (SlotKind::Categorical, None) => {
                return Err(SchemaError::validation(format!(
                    "categorical slot \"{}\" is missing allowed values",
                    self.name
                )));
            }
            (_, Some(_)) => {
                return Err(SchemaError::validation(format!(
                    "non-categorical slot \"{}\" must not list allowed values",
                    self.name
                )));
            }
            (_, None) => {}
        }
        Ok(())
    }
}

/// A domain schema as a callable function: name, one-sentence description,
/// and the ordered argument slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub name: String,
    pub description: String,
    pub slots: Vec<SlotSpec>,
}

impl FunctionSpec {
    pub fn slot(&self, name: &str) -> Option<&SlotSpec> {
        self.slots.iter().find(|s| s.name == name)
    }

    fn validate(&self) -> Result<(), SchemaError> {
        if self.name.is_empty() {
            return Err(SchemaError::validation("function name is empty"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for slot in &self.slots {
            slot.validate()?;
            if !seen.insert(slot.name.as_str()) {
                return Err(SchemaError::validation(format!(
                    "function \"{}\" repeats slot \"{}\"",
                    self.name, slot.name
                )));
            }
        }
        Ok(())
    }
}

/// All supported functions, in source order, keyed by name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaCatalog {
    functions: IndexMap<String, FunctionSpec>,
    version: String,
}

impl SchemaCatalog {
    pub fn new(
        version: impl Into<String>,
        functions: Vec<FunctionSpec>,
    ) -> Result<Self, SchemaError> {
        if functions.is_empty() {
            return Err(SchemaError::validation("catalog lists no functions"));
        }
        let mut map = IndexMap::with_capacity(functions.len());
        for spec in functions {
            spec.validate()?;
            let name = spec.name.clone();
            if map.insert(name.clone(), spec).is_some() {
                return Err(SchemaError::validation(format!(
                    "duplicate function name \"{name}\""
                )));
            }
        }
        Ok(SchemaCatalog {
            functions: map,
            version: version.into(),
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn get(&self, name: &str) -> Option<&FunctionSpec> {
        self.functions.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.functions.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// Functions in source order.
    pub fn functions(&self) -> impl Iterator<Item = &FunctionSpec> {
        self.functions.values()
    }

    pub fn function_names(&self) -> impl Iterator<Item = &str> {
        self.functions.keys().map(String::as_str)
    }

    /// A catalog restricted to the given function names, preserving order.
    /// Unknown names are ignored; an empty selection is an error.
    pub fn subset(&self, names: &[&str]) -> Result<SchemaCatalog, SchemaError> {
        let functions = self
            .functions
            .values()
            .filter(|f| names.contains(&f.name.as_str()))
            .cloned()
            .collect();
        SchemaCatalog::new(self.version.clone(), functions)
    }
}

/// Errors from catalog loading and validation.
#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("schema parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema validation error: {0}")]
    Validation(String),
}

impl SchemaError {
    fn validation(msg: impl Into<String>) -> Self {
        SchemaError::Validation(msg.into())
    }

    fn from_json(err: serde_json::Error) -> Self {
        SchemaError::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

/// Supported schema document formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaFormat {
    /// The native `{version, functions: [...]}` JSON document.
    Native,
    /// The flat `"domain-slot": [values]` ontology map shipped with
    /// MultiWOZ 2.1.
    MultiwozOntology,
}

// Native document wire types. Unknown keys are rejected so typos in schema
// files fail loudly instead of silently dropping slots.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeDoc {
    version: String,
    functions: Vec<NativeFunction>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeFunction {
    name: String,
    description: String,
    slots: Vec<NativeSlot>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeSlot {
    name: String,
    description: String,
    kind: SlotKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    required: bool,
}

/// Parse a schema document into a catalog.
pub fn load_catalog(source: &str, format: SchemaFormat) -> Result<SchemaCatalog, SchemaError> {
    match format {
        SchemaFormat::Native => load_native(source),
        SchemaFormat::MultiwozOntology => load_multiwoz_ontology(source),
    }
}

fn load_native(source: &str) -> Result<SchemaCatalog, SchemaError> {
    let doc: NativeDoc = serde_json::from_str(source).map_err(SchemaError::from_json)?;
    let functions = doc
        .functions
        .into_iter()
        .map(|f| FunctionSpec {
            name: f.name,
            description: f.description,
            slots: f
                .slots
                .into_iter()
                .map(|s| SlotSpec {
                    name: s.name,
                    description: s.description,
                    kind: s.kind,
                    allowed_values: s.values,
                    is_required: s.required,
                })
                .collect(),
        })
        .collect();
    SchemaCatalog::new(doc.version, functions)
}

/// Serialize a catalog back to the native document text. Round-trips through
/// [`load_catalog`] field by field.
pub fn render_native_catalog(catalog: &SchemaCatalog) -> String {
    let doc = NativeDoc {
        version: catalog.version.clone(),
        functions: catalog
            .functions()
            .map(|f| NativeFunction {
                name: f.name.clone(),
                description: f.description.clone(),
                slots: f
                    .slots
                    .iter()
                    .map(|s| NativeSlot {
                        name: s.name.clone(),
                        description: s.description.clone(),
                        kind: s.kind,
                        values: s.allowed_values.clone(),
                        required: s.is_required,
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("native document serializes")
}

// Meta-values that appear in ontology value lists but are not real options.
fn is_meta_value(v: &str) -> bool {
    matches!(
        v.trim().to_lowercase().as_str(),
        "none" | "not mentioned" | "dontcare" | "dont care" | "do nt care" | "don't care"
    )
}

fn ontology_slot_kind(slot: &str, values: &[String]) -> SlotKind {
    if slot.contains("time") || slot.contains("leaveat") || slot.contains("arriveby") {
        return SlotKind::Time;
    }
    if matches!(slot, "internet" | "parking") {
        return SlotKind::Boolean;
    }
    if slot == "stars" || slot.contains("people") || slot.contains("stay") {
        return SlotKind::Integer;
    }
    if values.len() <= 15 {
        SlotKind::Categorical
    } else {
        SlotKind::FreeText
    }
}

fn load_multiwoz_ontology(source: &str) -> Result<SchemaCatalog, SchemaError> {
    let map: IndexMap<String, Vec<String>> =
        serde_json::from_str(source).map_err(SchemaError::from_json)?;
    if map.is_empty() {
        return Err(SchemaError::validation("ontology lists no slots"));
    }

    // Group by domain, preserving first-appearance order for both domains
    // and slots.
    let mut domains: IndexMap<String, Vec<(String, Vec<String>)>> = IndexMap::new();
    for (key, values) in map {
        let Some((domain, slot)) = key.split_once('-') else {
            return Err(SchemaError::validation(format!(
                "ontology key \"{key}\" is not of the form domain-slot"
            )));
        };
        let domain = domain.trim().to_lowercase();
        let slot = slot.trim().to_lowercase().replace(' ', "_");
        if domain.is_empty() || slot.is_empty() {
            return Err(SchemaError::validation(format!(
                "ontology key \"{key}\" has an empty domain or slot"
            )));
        }
        domains.entry(domain).or_default().push((slot, values));
    }

    let functions = domains
        .into_iter()
        .map(|(domain, slots)| {
            let slots = slots
                .into_iter()
                .map(|(slot, values)| {
                    let mut options: Vec<String> = Vec::new();
                    for v in &values {
                        let v = v.trim().to_lowercase();
                        if !is_meta_value(&v) && !options.contains(&v) {
                            options.push(v);
                        }
                    }
                    let kind = ontology_slot_kind(&slot, &options);
                    SlotSpec {
                        name: slot.clone(),
                        description: format!("the {} of the {domain}", slot.replace('_', " ")),
                        kind,
                        allowed_values: if kind == SlotKind::Categorical {
                            Some(options)
                        } else {
                            None
                        },
                        is_required: false,
                    }
                })
                .collect();
            FunctionSpec {
                name: format!("find_{domain}"),
                description: format!("Find a {domain} and provide or book related services."),
                slots,
            }
        })
        .collect();
    SchemaCatalog::new("multiwoz-ontology", functions)
}

/// Render one spec as the canonical JSON function specification.
///
/// The `parameters` object lists the slots in source order; re-rendering the
/// same spec is byte-identical.
pub fn render_spec_json(spec: &FunctionSpec) -> String {
    let mut parameters = serde_json::Map::new();
    for slot in &spec.slots {
        let mut entry = serde_json::Map::new();
        entry.insert(
            "description".to_string(),
            serde_json::Value::String(slot.rendered_description()),
        );
        entry.insert(
            "type".to_string(),
            serde_json::Value::String(slot.kind.type_name().to_string()),
        );
        if let Some(values) = &slot.allowed_values {
            entry.insert(
                "enum".to_string(),
                serde_json::Value::Array(
                    values
                        .iter()
                        .map(|v| serde_json::Value::String(v.clone()))
                        .collect(),
                ),
            );
        }
        if slot.is_required {
            entry.insert("required".to_string(), serde_json::Value::Bool(true));
        }
        parameters.insert(slot.name.clone(), serde_json::Value::Object(entry));
    }
    let mut root = serde_json::Map::new();
    root.insert(
        "name".to_string(),
        serde_json::Value::String(spec.name.clone()),
    );
    root.insert(
        "description".to_string(),
        serde_json::Value::String(spec.description.clone()),
    );
    root.insert(
        "parameters".to_string(),
        serde_json::Value::Object(parameters),
    );
    serde_json::to_string_pretty(&serde_json::Value::Object(root)).expect("spec serializes")
}

/// Render one spec as a natural-language description: one sentence for the
/// function, then one line per slot.
pub fn render_spec_text(spec: &FunctionSpec) -> String {
    let mut out = format!("The function \"{}\": {}", spec.name, spec.description);
    if !out.ends_with('.') {
        out.push('.');
    }
    if spec.slots.is_empty() {
        return out;
    }
    out.push_str("\nIt takes the following arguments:");
    for slot in &spec.slots {
        let mut line = format!("\n- \"{}\": {}", slot.name, slot.rendered_description());
        if !line.ends_with('.') {
            line.push('.');
        }
        if let Some(values) = &slot.allowed_values {
            let options = values
                .iter()
                .map(|v| format!("\"{v}\""))
                .collect::<Vec<_>>()
                .join(", ");
            line.push_str(&format!(" It must be one of {options}."));
        }
        if slot.is_required {
            line.push_str(" This argument is required.");
        }
        out.push_str(&line);
    }
    out
}

/// One line per function: name and one-sentence description, no slot detail.
/// This is the compact form placed in the function-selection prompt.
pub fn render_brief_descriptions(catalog: &SchemaCatalog) -> String {
    catalog
        .functions()
        .map(|f| format!("- {}: {}", f.name, f.description))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn restaurant_spec() -> FunctionSpec {
        FunctionSpec {
            name: "find_restaurant".to_string(),
            description: "Search for a restaurant to dine at.".to_string(),
            slots: vec![
                SlotSpec {
                    name: "food".to_string(),
                    description: "the cuisine served".to_string(),
                    kind: SlotKind::FreeText,
                    allowed_values: None,
                    is_required: false,
                },
                SlotSpec {
                    name: "area".to_string(),
                    description: "the part of town".to_string(),
                    kind: SlotKind::Categorical,
                    allowed_values: Some(vec![
                        "north".to_string(),
                        "south".to_string(),
                        "centre".to_string(),
                        "east".to_string(),
                        "west".to_string(),
                    ]),
                    is_required: false,
                },
                SlotSpec {
                    name: "pricerange".to_string(),
                    description: "the price bracket".to_string(),
                    kind: SlotKind::Categorical,
                    allowed_values: Some(vec![
                        "cheap".to_string(),
                        "moderate".to_string(),
                        "expensive".to_string(),
                    ]),
                    is_required: false,
                },
            ],
        }
    }

    fn restaurant_doc() -> String {
        render_native_catalog(
            &SchemaCatalog::new("test", vec![restaurant_spec()]).expect("valid catalog"),
        )
    }

    #[test]
    fn native_document_loads_with_slot_order_preserved() {
        let catalog = load_catalog(&restaurant_doc(), SchemaFormat::Native).unwrap();
        assert_eq!(catalog.len(), 1);
        let spec = catalog.get("find_restaurant").unwrap();
        let names: Vec<_> = spec.slots.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["food", "area", "pricerange"]);
    }

    #[test]
    fn empty_functions_list_is_a_validation_error() {
        let err = load_catalog(r#"{"version":"v","functions":[]}"#, SchemaFormat::Native)
            .expect_err("must reject");
        assert!(matches!(err, SchemaError::Validation(_)));
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let doc = r#"{"version":"v","functions":[{"name":"f","description":"d","slots":[],"extra":1}]}"#;
        let err = load_catalog(doc, SchemaFormat::Native).expect_err("must reject");
        match err {
            SchemaError::Parse { line, .. } => assert!(line >= 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_function_names_are_rejected() {
        let doc = r#"{"version":"v","functions":[
            {"name":"f","description":"d","slots":[]},
            {"name":"f","description":"d","slots":[]}]}"#;
        let err = load_catalog(doc, SchemaFormat::Native).expect_err("must reject");
        assert!(matches!(err, SchemaError::Validation(_)));
    }

    #[test]
    fn categorical_without_values_is_rejected() {
        let doc = r#"{"version":"v","functions":[{"name":"f","description":"d","slots":[
            {"name":"area","description":"d","kind":"categorical"}]}]}"#;
        assert!(load_catalog(doc, SchemaFormat::Native).is_err());
    }

    #[test]
    fn slot_name_with_whitespace_is_rejected() {
        let doc = r#"{"version":"v","functions":[{"name":"f","description":"d","slots":[
            {"name":"book stay","description":"d","kind":"integer"}]}]}"#;
        assert!(load_catalog(doc, SchemaFormat::Native).is_err());
    }

    #[test]
    fn multiwoz_ontology_maps_domains_to_functions() {
        let ontology = r#"{
            "attraction-area": ["centre", "east"],
            "hotel-parking": ["yes", "no"],
            "hotel-book stay": ["1", "2", "3"],
            "restaurant-food": ["italian", "thai"],
            "restaurant-book time": ["17:00", "18:00"],
            "taxi-leaveat": ["09:00"],
            "train-arriveby": ["10:00", "not mentioned"]
        }"#;
        let catalog = load_catalog(ontology, SchemaFormat::MultiwozOntology).unwrap();
        for name in [
            "find_attraction",
            "find_hotel",
            "find_restaurant",
            "find_taxi",
            "find_train",
        ] {
            assert!(catalog.contains(name), "missing {name}");
        }
        let hotel = catalog.get("find_hotel").unwrap();
        assert_eq!(hotel.slot("parking").unwrap().kind, SlotKind::Boolean);
        assert_eq!(hotel.slot("book_stay").unwrap().kind, SlotKind::Integer);
        let restaurant = catalog.get("find_restaurant").unwrap();
        assert_eq!(restaurant.slot("book_time").unwrap().kind, SlotKind::Time);
        // Meta values are dropped from option lists.
        let train = catalog.get("find_train").unwrap();
        assert_eq!(train.slot("arriveby").unwrap().kind, SlotKind::Time);
    }

    #[test]
    fn render_spec_json_is_deterministic_and_ordered() {
        let spec = restaurant_spec();
        let a = render_spec_json(&spec);
        let b = render_spec_json(&spec);
        assert_eq!(a, b);
        let value: serde_json::Value = serde_json::from_str(&a).unwrap();
        let params = value["parameters"].as_object().unwrap();
        let keys: Vec<_> = params.keys().cloned().collect();
        assert_eq!(keys, ["food", "area", "pricerange"]);
        assert_eq!(value["name"], "find_restaurant");
        assert!(params["area"]["enum"].as_array().unwrap().len() == 5);
    }

    #[test]
    fn render_spec_json_zero_slots_has_empty_parameters() {
        let spec = FunctionSpec {
            name: "noop".to_string(),
            description: "Does nothing.".to_string(),
            slots: vec![],
        };
        let value: serde_json::Value =
            serde_json::from_str(&render_spec_json(&spec)).unwrap();
        assert!(value["parameters"].as_object().unwrap().is_empty());
    }

    #[test]
    fn render_spec_text_mentions_each_slot_exactly_once() {
        let spec = restaurant_spec();
        let text = render_spec_text(&spec);
        for slot in &spec.slots {
            let needle = format!("\"{}\"", slot.name);
            assert_eq!(
                text.matches(&needle).count(),
                1,
                "slot {} should appear once",
                slot.name
            );
        }
    }

    #[test]
    fn render_spec_text_lists_categorical_options() {
        let spec = FunctionSpec {
            name: "f".to_string(),
            description: "d".to_string(),
            slots: vec![SlotSpec {
                name: "area".to_string(),
                description: "where".to_string(),
                kind: SlotKind::Categorical,
                allowed_values: Some(vec!["north".to_string(), "south".to_string()]),
                is_required: false,
            }],
        };
        let text = render_spec_text(&spec);
        assert!(text.contains("north"));
        assert!(text.contains("south"));
    }

    #[test]
    fn render_spec_text_zero_slots_is_description_only() {
        let spec = FunctionSpec {
            name: "noop".to_string(),
            description: "Does nothing.".to_string(),
            slots: vec![],
        };
        let text = render_spec_text(&spec);
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn brief_descriptions_one_line_per_function_without_slots() {
        let catalog = SchemaCatalog::new(
            "test",
            vec![
                restaurant_spec(),
                FunctionSpec {
                    name: "find_hotel".to_string(),
                    description: "Search for a place to stay.".to_string(),
                    slots: vec![SlotSpec {
                        name: "stars".to_string(),
                        description: "the star rating".to_string(),
                        kind: SlotKind::Integer,
                        allowed_values: None,
                        is_required: false,
                    }],
                },
            ],
        )
        .unwrap();
        let brief = render_brief_descriptions(&catalog);
        assert_eq!(brief.lines().count(), 2);
        assert!(!brief.contains("stars"));
        // Shorter than the concatenated full specs.
        let full: usize = catalog.functions().map(|f| render_spec_json(f).len()).sum();
        assert!(brief.len() < full);
    }

    #[test]
    fn native_round_trip_reproduces_the_catalog() {
        let catalog = load_catalog(&restaurant_doc(), SchemaFormat::Native).unwrap();
        let rendered = render_native_catalog(&catalog);
        let reloaded = load_catalog(&rendered, SchemaFormat::Native).unwrap();
        assert_eq!(catalog, reloaded);
    }

    #[test]
    fn time_slot_description_gets_24_hour_suffix() {
        let slot = SlotSpec {
            name: "leaveat".to_string(),
            description: "when to leave".to_string(),
            kind: SlotKind::Time,
            allowed_values: None,
            is_required: false,
        };
        assert!(slot.rendered_description().contains("24-hour format hh:mm"));
    }
}
