//! Turning link scores into (event, role, argument) predictions.
//!
//! The ε outcome has a fixed score of 0, so a candidate is only emitted when
//! its score is strictly positive. Absence of a triple encodes ε.

use crate::corpus::Span;
use crate::ontology::{EventKey, Ontology};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkPrediction {
    pub doc_id: String,
    pub event_id: String,
    pub role: String,
    pub span: Span,
    pub score: f64,
}

impl LinkPrediction {
    pub fn event_key(&self) -> EventKey {
        EventKey::new(&self.doc_id, &self.event_id)
    }
}

/// Link scores of every shortlisted candidate for one (event, role).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleScores {
    pub doc_id: String,
    pub event_id: String,
    pub role: String,
    pub candidates: Vec<(Span, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoding {
    Argmax,
    Greedy,
    Tcd,
}

impl std::str::FromStr for Decoding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "argmax" => Ok(Decoding::Argmax),
            "greedy" => Ok(Decoding::Greedy),
            "tcd" | "type-constrained" => Ok(Decoding::Tcd),
            other => Err(format!("unknown decoding strategy `{other}`")),
        }
    }
}

impl std::fmt::Display for Decoding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Decoding::Argmax => "argmax",
            Decoding::Greedy => "greedy",
            Decoding::Tcd => "tcd",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("type-constrained decoding needs a gold type for event `{}` in `{}`", .0.event_id, .0.doc_id)]
    MissingType(EventKey),
    #[error("event type `{0}` is not in the ontology")]
    UnknownType(String),
}

/// Descending score, then span position ascending.
fn by_score(a: &(Span, f64), b: &(Span, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(&b.0))
}

fn emit(rs: &RoleScores, span: Span, score: f64) -> LinkPrediction {
    LinkPrediction {
        doc_id: rs.doc_id.clone(),
        event_id: rs.event_id.clone(),
        role: rs.role.clone(),
        span,
        score,
    }
}

/// At most one argument per (event, role): the best candidate if it beats ε.
pub fn decode_argmax(table: &[RoleScores]) -> Vec<LinkPrediction> {
    table
        .iter()
        .filter_map(|rs| {
            rs.candidates
                .iter()
                .min_by(|a, b| by_score(a, b))
                .filter(|(_, s)| *s > 0.0)
                .map(|&(span, score)| emit(rs, span, score))
        })
        .collect()
}

/// Accepts positive candidates in score order, skipping any that overlap an
/// argument already accepted for the same (event, role).
pub fn decode_greedy(table: &[RoleScores]) -> Vec<LinkPrediction> {
    let mut out = Vec::new();
    for rs in table {
        let mut ranked = rs.candidates.clone();
        ranked.sort_by(by_score);
        let mut accepted: Vec<Span> = Vec::new();
        for (span, score) in ranked {
            if score <= 0.0 {
                break;
            }
            if accepted.iter().any(|a| a.overlaps(&span)) {
                continue;
            }
            accepted.push(span);
            out.push(emit(rs, span, score));
        }
    }
    out
}

/// Filters predictions with gold event types: drops roles the type does not
/// permit and keeps only the `m_r` best-scoring arguments per (event, role).
/// Relative order of the surviving predictions is preserved.
pub fn decode_type_constrained(
    predictions: &[LinkPrediction],
    ontology: &Ontology,
    gold_types: &BTreeMap<EventKey, String>,
) -> Result<Vec<LinkPrediction>, DecodeError> {
    let mut groups: BTreeMap<(EventKey, &str), Vec<usize>> = BTreeMap::new();
    for (i, p) in predictions.iter().enumerate() {
        let key = p.event_key();
        let type_name = gold_types
            .get(&key)
            .ok_or_else(|| DecodeError::MissingType(key.clone()))?;
        let event_type = ontology
            .event_type(type_name)
            .ok_or_else(|| DecodeError::UnknownType(type_name.clone()))?;
        if event_type.role(&p.role).is_some() {
            groups.entry((key, p.role.as_str())).or_default().push(i);
        }
    }
    let mut keep = vec![false; predictions.len()];
    for ((key, role), mut idx) in groups {
        let cap = ontology
            .event_type(&gold_types[&key])
            .and_then(|t| t.role(role))
            .map_or(0, |r| r.multiplicity);
        idx.sort_by(|&a, &b| {
            by_score(
                &(predictions[a].span, predictions[a].score),
                &(predictions[b].span, predictions[b].score),
            )
        });
        for &i in idx.iter().take(cap) {
            keep[i] = true;
        }
    }
    Ok(predictions
        .iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then(|| p.clone()))
        .collect())
}

pub fn decode(
    table: &[RoleScores],
    strategy: Decoding,
    ontology: &Ontology,
    gold_types: &BTreeMap<EventKey, String>,
) -> Result<Vec<LinkPrediction>, DecodeError> {
    match strategy {
        Decoding::Argmax => Ok(decode_argmax(table)),
        Decoding::Greedy => Ok(decode_greedy(table)),
        Decoding::Tcd => decode_type_constrained(&decode_greedy(table), ontology, gold_types),
    }
}

pub fn write_predictions<W: Write>(preds: &[LinkPrediction], mut out: W) -> std::io::Result<()> {
    for p in preds {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_predictions<R: BufRead>(reader: R) -> Result<Vec<LinkPrediction>, String> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}
