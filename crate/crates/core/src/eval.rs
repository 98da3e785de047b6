//! Dataset ingestion and metric computation.
//!
//! Gold dialogues come from the classic MultiWOZ `data.json` layout (goal
//! field plus alternating user/system log entries with full belief-state
//! metadata on system turns). Metrics: joint goal accuracy per domain and
//! overall, micro slot F1, and dialogue-level Success over delexicalized
//! responses.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dialogue::{is_unfilled_value, DialogueState};
use crate::parse::Normalizer;
use crate::tracker::ManifestRecord;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("dataset structure error: {0}")]
    Structure(String),
    #[error("prediction and gold lists are misaligned: {preds} vs {golds}")]
    Misaligned { preds: usize, golds: usize },
    #[error("no turns fall in scope {0}")]
    EmptyScope(String),
    #[error("success rate is undefined over zero dialogues")]
    NoDialogues,
    #[error("run manifest does not cover gold dialogues: {}", missing.join(", "))]
    Coverage { missing: Vec<String> },
}

/// One gold-annotated turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldTurn {
    pub dialogue_id: String,
    pub turn: usize,
    pub user: String,
    pub state: DialogueState,
    /// The system response for this turn, delexicalized when the source
    /// provides it.
    pub response: String,
    pub active_domains: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldDialogue {
    pub dialogue_id: String,
    pub turns: Vec<GoldTurn>,
}

/// Constraint and request slots for one goal domain.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainGoal {
    pub constraints: BTreeMap<String, String>,
    pub requested: BTreeSet<String>,
}

/// What the user set out to accomplish, per domain.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserGoal {
    pub domains: BTreeMap<String, DomainGoal>,
}

/// Loader output: dialogues in file order, goals keyed by dialogue id, and
/// a count of skipped malformed slot entries.
#[derive(Debug)]
pub struct LoadedDataset {
    pub dialogues: Vec<GoldDialogue>,
    pub goals: BTreeMap<String, UserGoal>,
    pub skipped_slots: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiwozVersion {
    V21,
    V22,
}

impl std::str::FromStr for MultiwozVersion {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "2.1" => Ok(MultiwozVersion::V21),
            "2.2" => Ok(MultiwozVersion::V22),
            other => Err(format!("unsupported dataset version \"{other}\"")),
        }
    }
}

fn canonical_slot(raw: &str) -> String {
    raw.trim().to_lowercase().replace(' ', "_")
}

fn domain_function(domain: &str) -> String {
    format!("find_{}", domain.trim().to_lowercase())
}

fn strip_suffix_id(id: &str) -> String {
    id.trim().trim_end_matches(".json").to_lowercase()
}

/// Load a MultiWOZ-style dataset. `path` may be the `data.json` file itself
/// or a directory containing `data.json` and an optional
/// `testListFile.txt`/`testListFile.json` filter. Both supported versions
/// share the classic layout; per-turn `delex` keys are preferred for
/// responses when present.
pub fn load_multiwoz(path: &Path, _version: MultiwozVersion) -> Result<LoadedDataset, EvalError> {
    let (data_path, list_path) = if path.is_dir() {
        let data = path.join("data.json");
        let list = ["testListFile.txt", "testListFile.json"]
            .iter()
            .map(|n| path.join(n))
            .find(|p| p.exists());
        (data, list)
    } else {
        (path.to_path_buf(), None)
    };

    let raw = std::fs::read_to_string(&data_path)
        .map_err(|e| EvalError::Structure(format!("{}: {e}", data_path.display())))?;
    let doc: serde_json::Value = serde_json::from_str(&raw)
        .map_err(|e| EvalError::Structure(format!("{}: {e}", data_path.display())))?;
    let doc = doc
        .as_object()
        .ok_or_else(|| EvalError::Structure("top level is not an object".to_string()))?;

    let filter: Option<BTreeSet<String>> = match list_path {
        Some(list) => {
            let raw = std::fs::read_to_string(&list)
                .map_err(|e| EvalError::Structure(format!("{}: {e}", list.display())))?;
            Some(raw.lines().map(strip_suffix_id).filter(|l| !l.is_empty()).collect())
        }
        None => None,
    };

    let mut dialogues = Vec::new();
    let mut goals = BTreeMap::new();
    let mut skipped_slots = 0usize;
    let mut warnings = Vec::new();

    for (dialogue_id, body) in doc {
        if let Some(filter) = &filter {
            if !filter.contains(&strip_suffix_id(dialogue_id)) {
                continue;
            }
        }
        let body = body.as_object().ok_or_else(|| {
            EvalError::Structure(format!("dialogue {dialogue_id} is not an object"))
        })?;
        let log = body
            .get("log")
            .and_then(|l| l.as_array())
            .ok_or_else(|| EvalError::Structure(format!("dialogue {dialogue_id} has no log")))?;
        if log.len() % 2 != 0 {
            return Err(EvalError::Structure(format!(
                "dialogue {dialogue_id} log has an odd number of entries"
            )));
        }

        let mut turns = Vec::new();
        let mut previous_state = DialogueState::new();
        for (turn, pair) in log.chunks(2).enumerate() {
            let user = pair[0]
                .get("text")
                .and_then(|t| t.as_str())
                .ok_or_else(|| {
                    EvalError::Structure(format!("dialogue {dialogue_id} turn {turn}: user text missing"))
                })?
                .to_string();
            let system = &pair[1];
            let response = system
                .get("delex")
                .or_else(|| system.get("delexicalized"))
                .or_else(|| system.get("text"))
                .and_then(|t| t.as_str())
                .ok_or_else(|| {
                    EvalError::Structure(format!(
                        "dialogue {dialogue_id} turn {turn}: system text missing"
                    ))
                })?
                .to_string();
            let metadata = system
                .get("metadata")
                .and_then(|m| m.as_object())
                .ok_or_else(|| {
                    EvalError::Structure(format!(
                        "dialogue {dialogue_id} turn {turn}: system metadata missing"
                    ))
                })?;

            let state = flatten_metadata(metadata, dialogue_id, &mut skipped_slots, &mut warnings);
            let active_domains = active_domains(&previous_state, &state);
            previous_state = state.clone();
            turns.push(GoldTurn {
                dialogue_id: dialogue_id.clone(),
                turn,
                user,
                state,
                response,
                active_domains,
            });
        }
        if let Some(goal) = body.get("goal").and_then(|g| g.as_object()) {
            let parsed = parse_goal(goal);
            if !parsed.domains.is_empty() {
                goals.insert(dialogue_id.clone(), parsed);
            }
        }
        dialogues.push(GoldDialogue {
            dialogue_id: dialogue_id.clone(),
            turns,
        });
    }

    Ok(LoadedDataset {
        dialogues,
        goals,
        skipped_slots,
        warnings,
    })
}

/// Flatten one system turn's metadata into state form: semi slots keep
/// their names, book slots get a `book_` prefix, unfilled values are
/// dropped, and domains map to their `find_` functions.
fn flatten_metadata(
    metadata: &serde_json::Map<String, serde_json::Value>,
    dialogue_id: &str,
    skipped: &mut usize,
    warnings: &mut Vec<String>,
) -> DialogueState {
    let mut state = BTreeMap::new();
    for (domain, sections) in metadata {
        let Some(sections) = sections.as_object() else {
            *skipped += 1;
            warnings.push(format!("{dialogue_id}: domain {domain} metadata is not an object"));
            continue;
        };
        let mut slots: BTreeMap<String, String> = BTreeMap::new();
        for (section, prefix) in [("semi", ""), ("book", "book_")] {
            let Some(map) = sections.get(section).and_then(|s| s.as_object()) else {
                continue;
            };
            for (slot, value) in map {
                if slot == "booked" {
                    continue;
                }
                let value = match value {
                    serde_json::Value::String(s) => s.clone(),
                    serde_json::Value::Array(items) => match items
                        .iter()
                        .filter_map(|v| v.as_str())
                        .find(|s| !is_unfilled_value(s))
                    {
                        Some(s) => s.to_string(),
                        None => continue,
                    },
                    _ => {
                        *skipped += 1;
                        warnings.push(format!(
                            "{dialogue_id}: slot {domain}-{slot} has a non-string value"
                        ));
                        continue;
                    }
                };
                if is_unfilled_value(&value) {
                    continue;
                }
                slots.insert(format!("{prefix}{}", canonical_slot(slot)), value);
            }
        }
        if !slots.is_empty() {
            state.insert(domain_function(domain), slots);
        }
    }
    DialogueState(state)
}

/// A domain is active at a turn when it is present in the gold state; a
/// changed domain is active even if the change emptied it.
fn active_domains(previous: &DialogueState, current: &DialogueState) -> BTreeSet<String> {
    let mut active: BTreeSet<String> = current.domains().map(str::to_string).collect();
    for domain in previous.domains() {
        if current.domain(domain) != previous.domain(domain) {
            active.insert(domain.to_string());
        }
    }
    active
}

fn parse_goal(goal: &serde_json::Map<String, serde_json::Value>) -> UserGoal {
    let mut domains = BTreeMap::new();
    for (domain, body) in goal {
        if matches!(domain.as_str(), "message" | "topic") {
            continue;
        }
        let Some(body) = body.as_object() else { continue };
        if body.is_empty() {
            continue;
        }
        let mut parsed = DomainGoal::default();
        for (section, prefix) in [("info", ""), ("book", "book_")] {
            if let Some(map) = body.get(section).and_then(|s| s.as_object()) {
                for (slot, value) in map {
                    if let Some(value) = value.as_str() {
                        if !is_unfilled_value(value) {
                            parsed
                                .constraints
                                .insert(format!("{prefix}{}", canonical_slot(slot)), value.to_string());
                        }
                    }
                }
            }
        }
        if let Some(reqt) = body.get("reqt").and_then(|r| r.as_array()) {
            for slot in reqt.iter().filter_map(|s| s.as_str()) {
                parsed.requested.insert(canonical_slot(slot));
            }
        }
        if !parsed.constraints.is_empty() || !parsed.requested.is_empty() {
            domains.insert(domain_function(domain), parsed);
        }
    }
    UserGoal { domains }
}

/// Metric scope: every domain at once, or one domain's restriction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetricScope {
    Overall,
    Domain(String),
}

impl std::fmt::Display for MetricScope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricScope::Overall => write!(f, "overall"),
            MetricScope::Domain(d) => write!(f, "domain {d}"),
        }
    }
}

/// Metric knobs. The per-domain turn-inclusion rule defaults to
/// active-domain turns only; the all-turns variant is available behind the
/// flag.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MetricOptions {
    pub per_domain_all_turns: bool,
}

fn scoped_states(
    pred: &DialogueState,
    gold: &GoldTurn,
    scope: &MetricScope,
    opts: MetricOptions,
) -> Option<(DialogueState, DialogueState)> {
    match scope {
        MetricScope::Overall => Some((pred.clone(), gold.state.clone())),
        MetricScope::Domain(domain) => {
            if !opts.per_domain_all_turns && !gold.active_domains.contains(domain) {
                return None;
            }
            Some((pred.restricted_to(domain), gold.state.restricted_to(domain)))
        }
    }
}

/// Fraction of in-scope turns whose normalized predicted state equals the
/// normalized gold state.
pub fn joint_goal_accuracy(
    preds: &[DialogueState],
    golds: &[GoldTurn],
    scope: &MetricScope,
    normalizer: &Normalizer,
    opts: MetricOptions,
) -> Result<f64, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::Misaligned {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    let mut total = 0usize;
    let mut correct = 0usize;
    for (pred, gold) in preds.iter().zip(golds) {
        let Some((pred, gold_state)) = scoped_states(pred, gold, scope, opts) else {
            continue;
        };
        total += 1;
        if normalizer.normalize_state(&pred) == normalizer.normalize_state(&gold_state) {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(EvalError::EmptyScope(scope.to_string()));
    }
    Ok(correct as f64 / total as f64)
}

fn triple_set(state: &DialogueState, normalizer: &Normalizer) -> BTreeSet<(String, String, String)> {
    normalizer
        .normalize_state(state)
        .triples()
        .into_iter()
        .map(|(d, s, v)| (d.to_string(), s.to_string(), v.to_string()))
        .collect()
}

/// Micro-averaged F1 over (domain, slot, normalized value) triples pooled
/// across the in-scope turns. Empty-pred/empty-gold pools score 1.0.
pub fn slot_f1(
    preds: &[DialogueState],
    golds: &[GoldTurn],
    scope: &MetricScope,
    normalizer: &Normalizer,
    opts: MetricOptions,
) -> Result<f64, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::Misaligned {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    let mut in_scope = 0usize;
    for (pred, gold) in preds.iter().zip(golds) {
        let Some((pred, gold_state)) = scoped_states(pred, gold, scope, opts) else {
            continue;
        };
        in_scope += 1;
        let pred_triples = triple_set(&pred, normalizer);
        let gold_triples = triple_set(&gold_state, normalizer);
        tp += pred_triples.intersection(&gold_triples).count();
        fp += pred_triples.difference(&gold_triples).count();
        fn_ += gold_triples.difference(&pred_triples).count();
    }
    if in_scope == 0 {
        return Err(EvalError::EmptyScope(scope.to_string()));
    }
    if tp + fp + fn_ == 0 {
        return Ok(1.0);
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Placeholder slot whose appearance counts as offering an entity for a
/// domain. `[value_name]` for entity-backed domains, the ride/service
/// identifier otherwise.
pub fn default_offer_slot(domain: &str) -> &'static str {
    match domain {
        "find_train" => "id",
        "find_taxi" => "car",
        _ => "name",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub rate: f64,
    pub n_success: usize,
    pub n_dialogues: usize,
    pub warnings: Vec<String>,
}

static PLACEHOLDER_SCAN: &[char] = &['['];

fn contains_placeholder(haystack_lower: &str, slot: &str) -> bool {
    // Responses are matched on literal, case-insensitive placeholders.
    let needle = format!("[value_{slot}]");
    haystack_lower.contains(&needle)
}

/// Dialogue-level Success over delexicalized responses: every goal domain
/// offers an entity placeholder and every requested slot's placeholder
/// appears at least once.
pub fn success_rate(
    responses: &BTreeMap<String, Vec<String>>,
    goals: &BTreeMap<String, UserGoal>,
) -> Result<SuccessReport, EvalError> {
    if goals.is_empty() {
        return Err(EvalError::NoDialogues);
    }
    let mut n_success = 0usize;
    let mut warnings = Vec::new();
    for (dialogue_id, goal) in goals {
        let text = responses
            .get(dialogue_id)
            .map(|r| r.join("\n"))
            .unwrap_or_default()
            .to_lowercase();
        let requests_info = goal.domains.values().any(|d| !d.requested.is_empty());
        if requests_info && !text.contains(PLACEHOLDER_SCAN) {
            warnings.push(format!(
                "{dialogue_id}: responses contain no placeholders but the goal requests information"
            ));
        }
        let succeeded = goal.domains.iter().all(|(domain, domain_goal)| {
            let offered = contains_placeholder(&text, default_offer_slot(domain));
            let informed = domain_goal
                .requested
                .iter()
                .all(|slot| contains_placeholder(&text, slot));
            offered && informed
        });
        if succeeded {
            n_success += 1;
        }
    }
    Ok(SuccessReport {
        rate: n_success as f64 / goals.len() as f64,
        n_success,
        n_dialogues: goals.len(),
        warnings,
    })
}

/// Per-domain metric pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    pub jga: f64,
    pub f1: f64,
}

/// The full evaluation report. All ratios are in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_domain: BTreeMap<String, DomainMetrics>,
    pub average_jga: f64,
    pub overall_jga: f64,
    pub success: Option<f64>,
    pub n_dialogues: usize,
    pub n_turns: usize,
}

/// Assemble metrics from a run manifest against gold dialogues and goals.
pub fn build_report(
    manifest: &[ManifestRecord],
    golds: &[GoldDialogue],
    goals: &BTreeMap<String, UserGoal>,
    normalizer: &Normalizer,
    opts: MetricOptions,
) -> Result<EvalReport, EvalError> {
    let mut by_key: BTreeMap<(String, usize), &ManifestRecord> = BTreeMap::new();
    for record in manifest {
        if by_key
            .insert((record.dialogue_id.clone(), record.turn), record)
            .is_some()
        {
            return Err(EvalError::Structure(format!(
                "manifest repeats dialogue {} turn {}",
                record.dialogue_id, record.turn
            )));
        }
    }

    let mut preds = Vec::new();
    let mut gold_turns = Vec::new();
    let mut missing = BTreeSet::new();
    let mut responses: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for dialogue in golds {
        for (i, turn) in dialogue.turns.iter().enumerate() {
            if turn.turn != i {
                return Err(EvalError::Structure(format!(
                    "dialogue {} turn indices are not contiguous",
                    dialogue.dialogue_id
                )));
            }
            match by_key.get(&(dialogue.dialogue_id.clone(), turn.turn)) {
                Some(record) => {
                    preds.push(record.state.clone());
                    gold_turns.push(turn.clone());
                    responses
                        .entry(dialogue.dialogue_id.clone())
                        .or_default()
                        .push(record.response.clone());
                }
                None => {
                    missing.insert(dialogue.dialogue_id.clone());
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(EvalError::Coverage {
            missing: missing.into_iter().collect(),
        });
    }
    if gold_turns.is_empty() {
        return Err(EvalError::EmptyScope("overall".to_string()));
    }

    let domains: BTreeSet<String> = gold_turns
        .iter()
        .flat_map(|t| t.active_domains.iter().cloned())
        .collect();

    let mut per_domain = BTreeMap::new();
    for domain in &domains {
        let scope = MetricScope::Domain(domain.clone());
        per_domain.insert(
            domain.clone(),
            DomainMetrics {
                jga: joint_goal_accuracy(&preds, &gold_turns, &scope, normalizer, opts)?,
                f1: slot_f1(&preds, &gold_turns, &scope, normalizer, opts)?,
            },
        );
    }
    let average_jga = if per_domain.is_empty() {
        // No domain is ever active: every turn is empty/empty, identical to
        // the overall comparison.
        joint_goal_accuracy(&preds, &gold_turns, &MetricScope::Overall, normalizer, opts)?
    } else {
        per_domain.values().map(|m| m.jga).sum::<f64>() / per_domain.len() as f64
    };
    let overall_jga =
        joint_goal_accuracy(&preds, &gold_turns, &MetricScope::Overall, normalizer, opts)?;

    let success = if goals.is_empty() {
        None
    } else {
        Some(success_rate(&responses, goals)?.rate)
    };

    Ok(EvalReport {
        per_domain,
        average_jga,
        overall_jga,
        success,
        n_dialogues: golds.len(),
        n_turns: gold_turns.len(),
    })
}

/// Fixed-width text table with one row per domain and the aggregate rows
/// underneath, values as percentages.
pub fn render_report_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let name_width = report
        .per_domain
        .keys()
        .map(|d| d.len())
        .chain(["Average JGA".len()])
        .max()
        .unwrap_or(12)
        .max(12);
    out.push_str(&format!("{:<name_width$}  {:>7}  {:>7}\n", "Domain", "JGA", "Slot F1"));
    for (domain, metrics) in &report.per_domain {
        out.push_str(&format!(
            "{:<name_width$}  {:>7.2}  {:>7.2}\n",
            domain,
            metrics.jga * 100.0,
            metrics.f1 * 100.0
        ));
    }
    out.push_str(&format!(
        "{:<name_width$}  {:>7.2}\n",
        "Average JGA",
        report.average_jga * 100.0
    ));
    out.push_str(&format!(
        "{:<name_width$}  {:>7.2}\n",
        "Overall JGA",
        report.overall_jga * 100.0
    ));
    if let Some(success) = report.success {
        out.push_str(&format!("{:<name_width$}  {:>7.2}\n", "Success", success * 100.0));
    }
    out.push_str(&format!(
        "{:<name_width$}  {:>7}  {:>7}\n",
        "Dialogues / Turns", report.n_dialogues, report.n_turns
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{FunctionSpec, SchemaCatalog, SlotKind, SlotSpec};

    fn normalizer() -> Normalizer {
        let catalog = SchemaCatalog::new(
            "t",
            vec![FunctionSpec {
                name: "find_restaurant".to_string(),
                description: "d".to_string(),
                slots: vec![
                    SlotSpec {
                        name: "food".to_string(),
                        description: "d".to_string(),
                        kind: SlotKind::FreeText,
                        allowed_values: None,
                        is_required: false,
                    },
                    SlotSpec {
                        name: "area".to_string(),
                        description: "d".to_string(),
                        kind: SlotKind::Categorical,
                        allowed_values: Some(vec!["centre".to_string(), "north".to_string()]),
                        is_required: false,
                    },
                ],
            }],
        )
        .unwrap();
        Normalizer::new(catalog)
    }

    fn state(pairs: &[(&str, &str, &str)]) -> DialogueState {
        let mut out = BTreeMap::new();
        for (domain, slot, value) in pairs {
            out.entry(domain.to_string())
                .or_insert_with(BTreeMap::new)
                .insert(slot.to_string(), value.to_string());
        }
        DialogueState(out)
    }

    fn gold(turn: usize, pairs: &[(&str, &str, &str)]) -> GoldTurn {
        let s = state(pairs);
        let active = s.domains().map(str::to_string).collect();
        GoldTurn {
            dialogue_id: "d".to_string(),
            turn,
            user: "u".to_string(),
            state: s,
            response: String::new(),
            active_domains: active,
        }
    }

    #[test]
    fn jga_counts_exact_matches() {
        let golds = vec![
            gold(0, &[("find_restaurant", "food", "italian")]),
            gold(1, &[("find_restaurant", "food", "italian"), ("find_restaurant", "area", "centre")]),
            gold(2, &[]),
            gold(3, &[("find_restaurant", "area", "north")]),
        ];
        let preds = vec![
            state(&[("find_restaurant", "food", "Italian ")]),
            state(&[("find_restaurant", "food", "italian")]),
            state(&[]),
            state(&[("find_restaurant", "area", "south")]),
        ];
        let jga = joint_goal_accuracy(
            &preds,
            &golds,
            &MetricScope::Overall,
            &normalizer(),
            MetricOptions::default(),
        )
        .unwrap();
        assert!((jga - 0.5).abs() < 1e-12);
    }

    #[test]
    fn per_domain_jga_skips_inactive_turns() {
        let golds = vec![
            gold(0, &[("find_restaurant", "food", "thai")]),
            gold(1, &[("find_hotel", "area", "west")]),
        ];
        let preds = vec![
            state(&[("find_restaurant", "food", "thai")]),
            state(&[("find_hotel", "area", "east")]),
        ];
        let scope = MetricScope::Domain("find_restaurant".to_string());
        let jga = joint_goal_accuracy(&preds, &golds, &scope, &normalizer(), MetricOptions::default())
            .unwrap();
        assert_eq!(jga, 1.0);
    }

    #[test]
    fn slot_f1_matches_the_worked_example() {
        let golds = vec![gold(
            0,
            &[
                ("find_restaurant", "food", "italian"),
                ("find_restaurant", "area", "centre"),
            ],
        )];
        let preds = vec![state(&[
            ("find_restaurant", "food", "italian"),
            ("find_restaurant", "pricerange", "cheap"),
        ])];
        let f1 = slot_f1(
            &preds,
            &golds,
            &MetricScope::Overall,
            &normalizer(),
            MetricOptions::default(),
        )
        .unwrap();
        assert!((f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn slot_f1_conventions() {
        let golds = vec![gold(0, &[]), gold(1, &[])];
        let preds = vec![state(&[]), state(&[])];
        let norm = normalizer();
        let f1 = slot_f1(&preds, &golds, &MetricScope::Overall, &norm, MetricOptions::default())
            .unwrap();
        assert_eq!(f1, 1.0);

        let golds = vec![gold(0, &[("find_restaurant", "food", "thai")])];
        let preds = vec![state(&[("find_restaurant", "food", "korean")])];
        let f1 = slot_f1(&preds, &golds, &MetricScope::Overall, &norm, MetricOptions::default())
            .unwrap();
        assert_eq!(f1, 0.0);
    }

    #[test]
    fn misaligned_lists_error() {
        let golds = vec![gold(0, &[])];
        let preds: Vec<DialogueState> = vec![];
        assert!(matches!(
            joint_goal_accuracy(
                &preds,
                &golds,
                &MetricScope::Overall,
                &normalizer(),
                MetricOptions::default()
            ),
            Err(EvalError::Misaligned { .. })
        ));
    }

    #[test]
    fn success_requires_offer_and_requested_placeholders() {
        let mut goals = BTreeMap::new();
        goals.insert(
            "d1".to_string(),
            UserGoal {
                domains: BTreeMap::from([(
                    "find_restaurant".to_string(),
                    DomainGoal {
                        constraints: BTreeMap::new(),
                        requested: BTreeSet::from(["phone".to_string()]),
                    },
                )]),
            },
        );
        let mut responses = BTreeMap::new();
        responses.insert(
            "d1".to_string(),
            vec!["[value_name] is great, phone [value_phone].".to_string()],
        );
        let report = success_rate(&responses, &goals).unwrap();
        assert_eq!(report.rate, 1.0);

        responses.insert(
            "d1".to_string(),
            vec!["[value_name] is great.".to_string()],
        );
        let report = success_rate(&responses, &goals).unwrap();
        assert_eq!(report.rate, 0.0);

        assert!(matches!(
            success_rate(&responses, &BTreeMap::new()),
            Err(EvalError::NoDialogues)
        ));
    }

    #[test]
    fn success_warns_on_lexical_responses() {
        let mut goals = BTreeMap::new();
        goals.insert(
            "d1".to_string(),
            UserGoal {
                domains: BTreeMap::from([(
                    "find_taxi".to_string(),
                    DomainGoal {
                        constraints: BTreeMap::new(),
                        requested: BTreeSet::from(["phone".to_string()]),
                    },
                )]),
            },
        );
        let mut responses = BTreeMap::new();
        responses.insert(
            "d1".to_string(),
            vec!["a black skoda will pick you up, call 07123456".to_string()],
        );
        let report = success_rate(&responses, &goals).unwrap();
        assert_eq!(report.n_success, 0);
        assert_eq!(report.warnings.len(), 1);
    }
}
