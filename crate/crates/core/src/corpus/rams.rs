//! Import of the public RAMS release (JSON Lines, one example per line).
//!
//! Each line carries `doc_key`, `sentences` (tokenized), `evt_triggers`
//! (`[start, end, [[type, score]]]`), `ent_spans` (`[start, end, [[label,
//! score]]]`) and `gold_evt_links` (`[[ts, te], [as, ae], label]`). Link labels
//! look like `evt089arg01victim`; the role is the suffix after `argNN`.

use super::{crop_to_window, Document, EventMention, GoldLink, Span};
use crate::ontology::Ontology;
use serde_json::Value;
use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum RamsError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed JSON: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: unexpected layout at key `{key}`")]
    Layout { line: usize, key: String },
    #[error("line {line}: role `{role}` is not in the ontology")]
    UnknownRole { line: usize, role: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
}

/// Strips the `evtNNNargNN` prefix from a RAMS link label.
pub fn role_from_label(label: &str) -> &str {
    let rest = label.strip_prefix("evt").unwrap_or(label);
    let rest = rest.trim_start_matches(|c: char| c.is_ascii_digit());
    let rest = rest.strip_prefix("arg").unwrap_or(rest);
    rest.trim_start_matches(|c: char| c.is_ascii_digit())
}

fn span_of(v: &Value) -> Option<Span> {
    let a = v.as_array()?;
    Some(Span::new(
        a.first()?.as_u64()? as usize,
        a.get(1)?.as_u64()? as usize,
    ))
}

/// Converts one release line into a canonical document cropped to the
/// trigger's context window.
pub fn parse_rams_line(
    text: &str,
    line: usize,
    ontology: &Ontology,
) -> Result<Document, RamsError> {
    let v: Value = serde_json::from_str(text).map_err(|source| RamsError::Json { line, source })?;
    let layout = |key: &str| RamsError::Layout {
        line,
        key: key.to_string(),
    };
    let doc_key = v
        .get("doc_key")
        .and_then(Value::as_str)
        .ok_or_else(|| layout("doc_key"))?;
    let sentences = v
        .get("sentences")
        .and_then(Value::as_array)
        .ok_or_else(|| layout("sentences"))?;
    let mut tokens = Vec::new();
    let mut sentence_starts = Vec::new();
    for s in sentences {
        let words = s.as_array().ok_or_else(|| layout("sentences"))?;
        if words.is_empty() {
            continue;
        }
        sentence_starts.push(tokens.len());
        for w in words {
            tokens.push(w.as_str().ok_or_else(|| layout("sentences"))?.to_string());
        }
    }

    let triggers = v
        .get("evt_triggers")
        .and_then(Value::as_array)
        .ok_or_else(|| layout("evt_triggers"))?;
    let mut events = Vec::new();
    let mut event_by_span = BTreeMap::new();
    for (i, t) in triggers.iter().enumerate() {
        let a = t.as_array().ok_or_else(|| layout("evt_triggers"))?;
        let span = Span::new(
            a.first().and_then(Value::as_u64).ok_or_else(|| layout("evt_triggers"))? as usize,
            a.get(1).and_then(Value::as_u64).ok_or_else(|| layout("evt_triggers"))? as usize,
        );
        let gold_type = a
            .get(2)
            .and_then(Value::as_array)
            .and_then(|labels| labels.first())
            .and_then(Value::as_array)
            .and_then(|l| l.first())
            .and_then(Value::as_str)
            .map(str::to_string);
        let event_id = format!("e{i}");
        event_by_span.insert(span, event_id.clone());
        events.push(EventMention {
            event_id,
            trigger: span,
            gold_type,
        });
    }

    let mut given = BTreeSet::new();
    if let Some(ents) = v.get("ent_spans") {
        for e in ents.as_array().ok_or_else(|| layout("ent_spans"))? {
            given.insert(span_of(e).ok_or_else(|| layout("ent_spans"))?);
        }
    }

    let links = v
        .get("gold_evt_links")
        .and_then(Value::as_array)
        .ok_or_else(|| layout("gold_evt_links"))?;
    let mut gold_links = Vec::new();
    for l in links {
        let a = l.as_array().ok_or_else(|| layout("gold_evt_links"))?;
        let trig = a.first().and_then(span_of).ok_or_else(|| layout("gold_evt_links"))?;
        let arg = a.get(1).and_then(span_of).ok_or_else(|| layout("gold_evt_links"))?;
        let label = a
            .get(2)
            .and_then(Value::as_str)
            .ok_or_else(|| layout("gold_evt_links"))?;
        let role = role_from_label(label);
        if ontology.role_index(role).is_none() {
            return Err(RamsError::UnknownRole {
                line,
                role: role.to_string(),
            });
        }
        let event_id = event_by_span.get(&trig).ok_or_else(|| RamsError::Invalid {
            line,
            message: format!("link trigger {trig} matches no event trigger"),
        })?;
        given.insert(arg);
        gold_links.push(GoldLink {
            event_id: event_id.clone(),
            role: role.to_string(),
            span: arg,
        });
    }

    let doc = Document {
        doc_id: doc_key.to_string(),
        tokens,
        sentence_starts,
        events,
        given_arguments: Some(given.into_iter().collect()),
        gold_links,
    };
    doc.validate(None)
        .map_err(|message| RamsError::Invalid { line, message })?;
    Ok(crop_to_window(&doc))
}

/// Imports a release split. Repeated `doc_key`s get a `#n` suffix so that
/// (document, event) keys stay unique.
pub fn import_rams(path: impl AsRef<Path>, ontology: &Ontology) -> Result<Vec<Document>, RamsError> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_text = line?;
        if line_text.trim().is_empty() {
            continue;
        }
        let mut doc = parse_rams_line(&line_text, i + 1, ontology)?;
        let n = seen.entry(doc.doc_id.clone()).or_insert(0);
        if *n > 0 {
            doc.doc_id = format!("{}#{}", doc.doc_id, n);
        }
        *n += 1;
        docs.push(doc);
    }
    Ok(docs)
}
