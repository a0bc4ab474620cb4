//! WebAssembly bindings for the demo page in `www/`.
//!
//! Every entry point takes and returns JSON text. The `*_json` functions hold
//! the logic and are plain Rust so they can be tested natively; the exported
//! wrappers only turn their errors into JS exceptions.

use rolelink::corpus::{read_jsonl, Span};
use rolelink::decoder::{decode, read_predictions, Decoding, RoleScores};
use rolelink::evaluation::{evaluate, ReportOptions};
use rolelink::linker::link_prob;
use rolelink::ontology::{EventKey, Ontology};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Probabilities {
    candidates: Vec<f64>,
    /// Probability that the role stays unfilled.
    epsilon: f64,
}

/// Scores may be a JSON array or numbers separated by commas or whitespace.
fn parse_scores(text: &str) -> Result<Vec<f64>, String> {
    let text = text.trim();
    if text.starts_with('[') {
        return serde_json::from_str(text).map_err(|e| format!("scores: {e}"));
    }
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("scores: `{t}` is not a number")))
        .collect()
}

pub fn link_probabilities_json(scores: &str) -> Result<String, String> {
    let scores = parse_scores(scores)?;
    let p = link_prob(&scores).map_err(|e| e.to_string())?;
    let out = Probabilities {
        candidates: p.candidates,
        epsilon: p.epsilon,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Deserialize)]
struct TypedEvent {
    #[serde(default = "default_doc")]
    doc_id: String,
    event_id: String,
    #[serde(rename = "type")]
    event_type: String,
}

#[derive(Deserialize)]
struct TableRow {
    #[serde(default = "default_doc")]
    doc_id: String,
    event_id: String,
    role: String,
    candidates: Vec<(Span, f64)>,
}

fn default_doc() -> String {
    "demo".into()
}

/// Decodes a score table. `doc_id` may be left out of table rows and event
/// types; it then defaults to `"demo"`.
pub fn decode_table_json(table: &str, strategy: &str, ontology_tsv: &str, types: &str) -> Result<String, String> {
    let rows: Vec<TableRow> = serde_json::from_str(table).map_err(|e| format!("table: {e}"))?;
    let table: Vec<RoleScores> = rows
        .into_iter()
        .map(|r| RoleScores {
            doc_id: r.doc_id,
            event_id: r.event_id,
            role: r.role,
            candidates: r.candidates,
        })
        .collect();
    let strategy: Decoding =
        serde_json::from_value(serde_json::Value::String(strategy.trim().to_lowercase()))
            .map_err(|_| format!("unknown decoding `{strategy}`; use argmax, greedy or tcd"))?;
    let ontology = Ontology::parse(ontology_tsv).map_err(|e| format!("ontology: {e}"))?;
    let types: Vec<TypedEvent> = if types.trim().is_empty() {
        Vec::new()
    } else {
        serde_json::from_str(types).map_err(|e| format!("types: {e}"))?
    };
    let types: BTreeMap<EventKey, String> = types
        .into_iter()
        .map(|t| (EventKey::new(&t.doc_id, &t.event_id), t.event_type))
        .collect();
    let preds = decode(&table, strategy, &ontology, &types).map_err(|e| e.to_string())?;
    serde_json::to_string(&preds).map_err(|e| e.to_string())
}

/// Scores predictions (JSONL) against gold documents (JSONL), with the
/// sentence-distance breakdown and role confusion summary.
pub fn score_predictions_json(predictions: &str, gold: &str) -> Result<String, String> {
    let preds = read_predictions(predictions.as_bytes()).map_err(|e| format!("predictions: {e}"))?;
    let docs = read_jsonl(gold.as_bytes(), None).map_err(|e| format!("gold: {e}"))?;
    let options = ReportOptions {
        distance: true,
        confusion: true,
        string_match: false,
    };
    let report = evaluate(&preds, &docs, options).map_err(|e| e.to_string())?;
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn link_probabilities(scores: &str) -> Result<String, JsError> {
    link_probabilities_json(scores).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn decode_table(table: &str, strategy: &str, ontology_tsv: &str, types: &str) -> Result<String, JsError> {
    decode_table_json(table, strategy, ontology_tsv, types).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn score_predictions(predictions: &str, gold: &str) -> Result<String, JsError> {
    score_predictions_json(predictions, gold).map_err(|e| JsError::new(&e))
}
